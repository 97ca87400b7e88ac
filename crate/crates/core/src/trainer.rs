//! Maximum-likelihood training over every eligible historical session, with
//! Adam, linear warm-up, early stopping on validation R@20 and grid search.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{DatasetSplit, EvalInstance, ItemId, SessionStore, UserId, Week};
use crate::masking::{assemble_batch, expand_session, MaskError, MaskedInstance, SessionGroup};
use crate::metrics::{evaluate, EvalConfig, EvalPrefixes, EvalResult};
use crate::model::{Ablations, Checkpoint, Model, ModelConfig, ModelError, SessionGradient};
use crate::neighbours::{build_sample, ItemUserIndex, NeighbourHistory, NeighbourSample, SamplingConfig};
use crate::numerics::{warmup_lr, AdamState, Tensor, TensorError};
use crate::seed::{derive_seed, rng_for};

const TAG_INIT: u64 = 1;
const TAG_SHUFFLE: u64 = 2;
const TAG_SAMPLE: u64 = 3;
const TAG_DROPOUT: u64 = 4;
const TAG_GRID: u64 = 5;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Mask(#[from] MaskError),
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("non-finite values in epoch {epoch}, batch {batch} at learning rate {lr}: {detail}")]
    NonFinite {
        epoch: usize,
        batch: usize,
        lr: f64,
        detail: String,
    },
}

/// Unit in which the warm-up length is counted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WarmupUnit {
    #[default]
    Steps,
    Epochs,
}

impl std::str::FromStr for WarmupUnit {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "steps" => Ok(Self::Steps),
            "epochs" => Ok(Self::Epochs),
            other => Err(format!("warmup_unit must be steps or epochs, got {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Peak learning rate reached after warm-up.
    pub learning_rate: f64,
    pub lmp_size: usize,
    pub friend_size: usize,
    pub layers: usize,
    pub warmup_steps: usize,
    pub warmup_unit: WarmupUnit,
    /// Epochs without a validation R@20 improvement before stopping.
    pub tolerance: usize,
    /// Rows (prefix, next item) per optimizer step.
    pub batch_size: usize,
    pub max_epochs: usize,
    pub seed: u64,
    pub eval_seed: u64,
    pub dim: usize,
    pub heads: usize,
    pub ff_mult: usize,
    pub max_len: usize,
    pub dropout: f64,
    pub init_std: f64,
    pub ablations: Ablations,
    pub neighbour_history: NeighbourHistory,
    pub volume_weighted: bool,
    pub eval_prefixes: EvalPrefixes,
    /// Global gradient-norm cap; off when `None`.
    pub grad_clip: Option<f64>,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.005,
            lmp_size: 15,
            friend_size: 25,
            layers: 1,
            warmup_steps: 10,
            warmup_unit: WarmupUnit::Steps,
            tolerance: 10,
            batch_size: 50,
            max_epochs: 200,
            seed: 42,
            eval_seed: 2024,
            dim: 128,
            heads: 8,
            ff_mult: 4,
            max_len: 50,
            dropout: 0.0,
            init_std: 0.1,
            ablations: Ablations::default(),
            neighbour_history: NeighbourHistory::Last,
            volume_weighted: false,
            eval_prefixes: EvalPrefixes::All,
            grad_clip: None,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_epsilon: 1e-8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let fail = |m: &str| Err(TrainError::Config(m.to_string()));
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return fail("learning_rate must be a non-negative number");
        }
        if self.warmup_steps == 0 || self.batch_size == 0 || self.max_epochs == 0 || self.tolerance == 0 {
            return fail("warmup_steps, batch_size, max_epochs and tolerance must be positive");
        }
        if self.lmp_size == 0 || self.friend_size == 0 {
            return fail("lmp_size and friend_size must be positive");
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0) {
                return fail("grad_clip must be positive");
            }
        }
        Ok(())
    }

    pub fn model_config(&self, num_users: usize, num_items: usize) -> ModelConfig {
        ModelConfig {
            num_users,
            num_items,
            dim: self.dim,
            heads: self.heads,
            layers: self.layers,
            ff_mult: self.ff_mult,
            max_len: self.max_len,
            dropout: self.dropout,
            init_std: self.init_std,
            ablations: self.ablations,
            ..ModelConfig::default()
        }
    }

    pub fn sampling(&self) -> SamplingConfig {
        SamplingConfig {
            lmp_size: self.lmp_size,
            friend_size: self.friend_size,
            use_lmp: !self.ablations.no_lmp,
            use_friends: !self.ablations.no_sf,
            volume_weighted: self.volume_weighted,
            history: self.neighbour_history,
        }
    }

    pub fn eval_config(&self) -> EvalConfig {
        EvalConfig {
            ks: vec![10, 20],
            prefixes: self.eval_prefixes,
            seed: self.eval_seed,
            sampling: self.sampling(),
        }
    }

    fn lr_at(&self, step: u64, epoch: usize) -> Result<f64, TensorError> {
        let t = match self.warmup_unit {
            WarmupUnit::Steps => step as usize,
            WarmupUnit::Epochs => epoch,
        };
        warmup_lr(t, self.warmup_steps, self.learning_rate)
    }
}

/// A session used as the current session of a training instance.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrainingInstance {
    pub user: UserId,
    pub session_index: usize,
    /// Neighbour history is read strictly before this week.
    pub week: Week,
    pub items: Vec<ItemId>,
}

impl From<&TrainingInstance> for EvalInstance {
    fn from(t: &TrainingInstance) -> Self {
        EvalInstance {
            user: t.user,
            session_index: t.session_index,
            week: t.week,
            items: t.items.clone(),
        }
    }
}

/// Every session with at least one earlier session of its owner and at
/// least two items, ordered by (user, session index).
pub fn training_instances(store: &SessionStore) -> Vec<TrainingInstance> {
    store
        .all_sessions()
        .filter(|s| s.index >= 2 && s.items.len() >= 2)
        .map(|s| TrainingInstance {
            user: s.owner,
            session_index: s.index,
            week: s.week,
            items: s.items.clone(),
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_loss: f64,
    /// Learning rate of the epoch's last step.
    pub lr: f64,
    pub steps: usize,
    pub rows: usize,
}

/// Optimizer loop over one training store.
pub struct Trainer<'a> {
    pub store: &'a SessionStore,
    pub index: ItemUserIndex,
    pub config: TrainConfig,
    pub model: Model,
    pub adam: AdamState,
    pub epochs_done: usize,
    pub global_step: u64,
    instances: Vec<TrainingInstance>,
    grad_buf: Vec<Vec<f64>>,
}

impl<'a> Trainer<'a> {
    /// Fresh model initialised from the configured seed.
    pub fn new(
        store: &'a SessionStore,
        config: TrainConfig,
        num_users: usize,
        num_items: usize,
    ) -> Result<Self, TrainError> {
        config.validate()?;
        let model = Model::new(
            config.model_config(num_users, num_items),
            derive_seed(config.seed, &[TAG_INIT]),
        )?;
        let adam = AdamState::with_hyper(
            model.params.sizes(),
            config.adam_beta1,
            config.adam_beta2,
            config.adam_epsilon,
        );
        Ok(Self::from_state(store, config, model, adam, 0))
    }

    /// Continues from saved parameters and optimizer state.
    pub fn from_state(
        store: &'a SessionStore,
        config: TrainConfig,
        model: Model,
        adam: AdamState,
        epochs_done: usize,
    ) -> Self {
        let grad_buf = model.params.sizes().into_iter().map(|n| vec![0.0; n]).collect();
        Self {
            index: ItemUserIndex::build(store),
            store,
            global_step: adam.step,
            config,
            model,
            adam,
            epochs_done,
            instances: training_instances(store),
            grad_buf,
        }
    }

    pub fn instances(&self) -> &[TrainingInstance] {
        &self.instances
    }

    pub fn rows_per_epoch(&self) -> usize {
        self.instances.iter().map(|i| i.items.len() - 1).sum()
    }

    pub fn steps_per_epoch(&self) -> usize {
        self.rows_per_epoch().div_ceil(self.config.batch_size)
    }

    /// Sampled neighbours of one training instance in a given epoch.
    pub fn sample_for(&self, epoch: usize, inst: &TrainingInstance) -> NeighbourSample {
        let mut rng = rng_for(
            self.config.seed,
            &[TAG_SAMPLE, epoch as u64, inst.user.0, inst.session_index as u64],
        );
        build_sample(
            self.store,
            &self.index,
            inst.user,
            inst.week,
            &inst.items,
            &self.config.sampling(),
            &mut rng,
        )
    }

    pub fn run_epoch(&mut self) -> Result<EpochStats, TrainError> {
        let epoch = self.epochs_done + 1;
        let mut order: Vec<usize> = (0..self.instances.len()).collect();
        order.shuffle(&mut rng_for(self.config.seed, &[TAG_SHUFFLE, epoch as u64]));
        let groups = order
            .par_iter()
            .map(|&i| {
                let inst = &self.instances[i];
                Ok(SessionGroup {
                    user: inst.user,
                    instances: expand_session(&inst.items)?,
                    sample: Arc::new(self.sample_for(epoch, inst)),
                })
            })
            .collect::<Result<Vec<_>, MaskError>>()?;
        let batches = assemble_batch(&groups, self.config.batch_size);
        let mut loss_total = 0.0;
        let mut rows_total = 0;
        let mut lr = 0.0;
        for (b, batch) in batches.iter().enumerate() {
            let chunks = session_chunks(batch);
            let step = self.global_step + 1;
            lr = self.config.lr_at(step, epoch)?;
            let non_finite = |detail: String| TrainError::NonFinite {
                epoch,
                batch: b + 1,
                lr,
                detail,
            };
            let model = &self.model;
            let seed = self.config.seed;
            let results: Vec<SessionGradient> = chunks
                .par_iter()
                .enumerate()
                .map(|(c, (user, insts, sample))| {
                    let drop_seed = derive_seed(seed, &[TAG_DROPOUT, epoch as u64, b as u64, c as u64]);
                    model.session_gradient(*user, insts, sample, drop_seed)
                })
                .collect::<Result<_, _>>()
                .map_err(|e| match e {
                    ModelError::NonFiniteLoss(_) | ModelError::Tensor(TensorError::NonFiniteNode { .. }) => {
                        non_finite(e.to_string())
                    }
                    other => TrainError::Model(other),
                })?;
            let rows: usize = results.iter().map(|r| r.rows).sum();
            self.grad_buf.iter_mut().for_each(|g| g.iter_mut().for_each(|v| *v = 0.0));
            for r in &results {
                loss_total += r.loss_sum;
                for (acc, g) in self.grad_buf.iter_mut().zip(&r.grads) {
                    if let Some(g) = g {
                        acc.iter_mut().zip(g.data()).for_each(|(a, v)| *a += v);
                    }
                }
            }
            rows_total += rows;
            let inv = 1.0 / rows as f64;
            let mut norm2 = 0.0;
            for g in &mut self.grad_buf {
                for v in g.iter_mut() {
                    *v *= inv;
                    norm2 += *v * *v;
                }
            }
            if !norm2.is_finite() {
                return Err(non_finite("gradient norm is not finite".into()));
            }
            if let Some(cap) = self.config.grad_clip {
                let norm = norm2.sqrt();
                if norm > cap {
                    let f = cap / norm;
                    self.grad_buf.iter_mut().flatten().for_each(|v| *v *= f);
                }
            }
            let grads: Vec<Tensor> = self
                .grad_buf
                .iter()
                .zip(&self.model.params.tensors)
                .map(|(g, p)| Tensor::new(p.shape().to_vec(), g.clone()))
                .collect::<Result<_, _>>()?;
            let grad_refs: Vec<&Tensor> = grads.iter().collect();
            let mut params: Vec<&mut Tensor> = self.model.params.tensors.iter_mut().map(Arc::make_mut).collect();
            self.adam.update(&mut params, &grad_refs, lr)?;
            self.global_step = step;
            if !self.model.params.all_finite() {
                return Err(non_finite("parameters diverged".into()));
            }
        }
        self.epochs_done = epoch;
        Ok(EpochStats {
            epoch,
            mean_loss: if rows_total == 0 {
                0.0
            } else {
                loss_total / rows_total as f64
            },
            lr,
            steps: batches.len(),
            rows: rows_total,
        })
    }

    /// Parameters, optimizer state and progress counters.
    pub fn checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new(self.model.clone());
        ck.adam = Some(self.adam.clone());
        ck.meta.insert("epochs_done".into(), self.epochs_done.to_string());
        ck.meta.insert("global_step".into(), self.global_step.to_string());
        ck
    }
}

type Chunk = (UserId, Vec<MaskedInstance>, Arc<NeighbourSample>);

/// Splits a batch into runs of consecutive rows from the same session.
fn session_chunks(batch: &crate::masking::MaskedBatch) -> Vec<Chunk> {
    let mut out: Vec<Chunk> = Vec::new();
    for r in 0..batch.len() {
        let inst = MaskedInstance {
            input: batch.prefix(r).to_vec(),
            len: batch.lengths[r],
            target: batch.targets[r],
        };
        match out.last_mut() {
            Some((u, list, s)) if *u == batch.users[r] && Arc::ptr_eq(s, &batch.samples[r]) => list.push(inst),
            _ => out.push((batch.users[r], vec![inst], Arc::clone(&batch.samples[r]))),
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    EarlyStop,
    MaxEpochs,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub valid_recall20: f64,
    pub valid_ndcg20: f64,
    pub lr: f64,
    pub global_step: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub config: TrainConfig,
    pub ablations: Vec<String>,
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_recall20: f64,
    pub best_ndcg20: f64,
    pub stop_reason: Option<StopReason>,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
enum ReportLine {
    Config { config: TrainConfig, ablations: Vec<String> },
    Epoch(EpochRecord),
    Summary {
        best_epoch: usize,
        best_recall20: f64,
        best_ndcg20: f64,
        stop_reason: Option<StopReason>,
    },
}

impl TrainReport {
    pub fn new(config: TrainConfig) -> Self {
        Self {
            ablations: config.ablations.enabled().into_iter().map(String::from).collect(),
            config,
            epochs: Vec::new(),
            best_epoch: 0,
            best_recall20: f64::NEG_INFINITY,
            best_ndcg20: 0.0,
            stop_reason: None,
        }
    }

    /// One JSON record per line: config, every epoch, then a summary.
    pub fn to_jsonl(&self) -> String {
        let mut lines = vec![ReportLine::Config {
            config: self.config.clone(),
            ablations: self.ablations.clone(),
        }];
        lines.extend(self.epochs.iter().cloned().map(ReportLine::Epoch));
        lines.push(ReportLine::Summary {
            best_epoch: self.best_epoch,
            best_recall20: self.best_recall20.max(0.0),
            best_ndcg20: self.best_ndcg20,
            stop_reason: self.stop_reason,
        });
        let mut out = String::new();
        for l in lines {
            out.push_str(&serde_json::to_string(&l).expect("report records serialize"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Self, String> {
        let mut report: Option<Self> = None;
        for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let rec: ReportLine = serde_json::from_str(line).map_err(|e| format!("report line {}: {e}", i + 1))?;
            match rec {
                ReportLine::Config { config, ablations } => {
                    let mut r = Self::new(config);
                    r.ablations = ablations;
                    report = Some(r);
                }
                ReportLine::Epoch(e) => report
                    .as_mut()
                    .ok_or("epoch record before config record")?
                    .epochs
                    .push(e),
                ReportLine::Summary {
                    best_epoch,
                    best_recall20,
                    best_ndcg20,
                    stop_reason,
                } => {
                    let r = report.as_mut().ok_or("summary record before config record")?;
                    r.best_epoch = best_epoch;
                    r.best_recall20 = if best_epoch == 0 { f64::NEG_INFINITY } else { best_recall20 };
                    r.best_ndcg20 = best_ndcg20;
                    r.stop_reason = stop_reason;
                }
            }
        }
        report.ok_or_else(|| "empty report".to_string())
    }
}

/// Training with per-epoch validation and early stopping.
pub struct Fit<'a> {
    pub trainer: Trainer<'a>,
    pub valid: &'a [EvalInstance],
    pub report: TrainReport,
    pub best_model: Model,
}

pub struct FitOutcome {
    /// Parameters of the best validation epoch.
    pub model: Model,
    pub report: TrainReport,
}

impl<'a> Fit<'a> {
    pub fn new(split: &'a DatasetSplit, config: TrainConfig, num_users: usize, num_items: usize) -> Result<Self, TrainError> {
        let trainer = Trainer::new(&split.train, config.clone(), num_users, num_items)?;
        Ok(Self {
            best_model: trainer.model.clone(),
            trainer,
            valid: &split.valid,
            report: TrainReport::new(config),
        })
    }

    /// Continues a run from the last epoch's checkpoint, the best model so far
    /// and the report written up to that epoch.
    pub fn resume(
        split: &'a DatasetSplit,
        config: TrainConfig,
        last: Checkpoint,
        best_model: Model,
        report: TrainReport,
    ) -> Result<Self, TrainError> {
        config.validate()?;
        let adam = last
            .adam
            .ok_or_else(|| TrainError::Config("checkpoint has no optimizer state to resume from".into()))?;
        let epochs_done = report.epochs.len();
        let mut report = report;
        report.config = config.clone();
        if report.stop_reason == Some(StopReason::MaxEpochs) && epochs_done < config.max_epochs {
            report.stop_reason = None;
        }
        let trainer = Trainer::from_state(&split.train, config, last.model, adam, epochs_done);
        Ok(Self {
            trainer,
            valid: &split.valid,
            report,
            best_model,
        })
    }

    pub fn validate_current(&self) -> Result<EvalResult, TrainError> {
        let t = &self.trainer;
        Ok(evaluate(&t.model, t.store, &t.index, self.valid, &t.config.eval_config())?.result)
    }

    /// Runs one epoch plus validation. Returns a stop reason once training
    /// should end.
    pub fn step(&mut self) -> Result<Option<StopReason>, TrainError> {
        let stats = self.trainer.run_epoch()?;
        let v = self.validate_current()?;
        let r20 = v.recall_at(20).unwrap_or(0.0);
        let n20 = v.ndcg_at(20).unwrap_or(0.0);
        self.report.epochs.push(EpochRecord {
            epoch: stats.epoch,
            train_loss: stats.mean_loss,
            valid_recall20: r20,
            valid_ndcg20: n20,
            lr: stats.lr,
            global_step: self.trainer.global_step,
        });
        if r20 > self.report.best_recall20 {
            self.report.best_recall20 = r20;
            self.report.best_ndcg20 = n20;
            self.report.best_epoch = stats.epoch;
            self.best_model = self.trainer.model.clone();
        }
        let stop = if stats.epoch - self.report.best_epoch >= self.trainer.config.tolerance {
            Some(StopReason::EarlyStop)
        } else if stats.epoch >= self.trainer.config.max_epochs {
            Some(StopReason::MaxEpochs)
        } else {
            None
        };
        self.report.stop_reason = stop;
        Ok(stop)
    }

    /// Steps until a stop reason, calling `after_epoch` after each epoch.
    pub fn run(&mut self, mut after_epoch: impl FnMut(&Fit<'a>) -> Result<(), TrainError>) -> Result<StopReason, TrainError> {
        if let Some(reason) = self.report.stop_reason {
            return Ok(reason);
        }
        loop {
            let stop = self.step()?;
            after_epoch(self)?;
            if let Some(reason) = stop {
                return Ok(reason);
            }
        }
    }

    pub fn finish(self) -> FitOutcome {
        FitOutcome {
            model: self.best_model,
            report: self.report,
        }
    }
}

pub fn fit(split: &DatasetSplit, config: TrainConfig, num_users: usize, num_items: usize) -> Result<FitOutcome, TrainError> {
    let mut f = Fit::new(split, config, num_users, num_items)?;
    f.run(|_| Ok(()))?;
    Ok(f.finish())
}

/// Value lists for each searchable hyperparameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub learning_rate: Vec<f64>,
    pub friend_size: Vec<usize>,
    pub lmp_size: Vec<usize>,
    pub layers: Vec<usize>,
    pub warmup_steps: Vec<usize>,
    pub tolerance: Vec<usize>,
}

impl GridSpec {
    /// Single cell holding the values of `base`.
    pub fn singleton(base: &TrainConfig) -> Self {
        Self {
            learning_rate: vec![base.learning_rate],
            friend_size: vec![base.friend_size],
            lmp_size: vec![base.lmp_size],
            layers: vec![base.layers],
            warmup_steps: vec![base.warmup_steps],
            tolerance: vec![base.tolerance],
        }
    }

    /// The full search space used for the reference experiments.
    pub fn standard() -> Self {
        Self {
            learning_rate: vec![0.01, 0.005, 0.0001, 0.00005],
            friend_size: vec![25, 50],
            lmp_size: vec![5, 15, 25],
            layers: vec![1, 3, 5],
            warmup_steps: vec![5, 10, 20],
            tolerance: vec![10, 20],
        }
    }

    /// Cartesian product in field order, each cell with a derived seed.
    pub fn cells(&self, base: &TrainConfig) -> Result<Vec<TrainConfig>, TrainError> {
        if self.learning_rate.is_empty()
            || self.friend_size.is_empty()
            || self.lmp_size.is_empty()
            || self.layers.is_empty()
            || self.warmup_steps.is_empty()
            || self.tolerance.is_empty()
        {
            return Err(TrainError::Config("every grid list needs at least one value".into()));
        }
        let mut out = Vec::new();
        for &lr in &self.learning_rate {
            for &fs in &self.friend_size {
                for &ls in &self.lmp_size {
                    for &layers in &self.layers {
                        for &w in &self.warmup_steps {
                            for &tol in &self.tolerance {
                                let seed = derive_seed(base.seed, &[TAG_GRID, out.len() as u64]);
                                let cell = TrainConfig {
                                    learning_rate: lr,
                                    friend_size: fs,
                                    lmp_size: ls,
                                    layers,
                                    warmup_steps: w,
                                    tolerance: tol,
                                    seed,
                                    ..base.clone()
                                };
                                cell.validate()?;
                                out.push(cell);
                            }
                        }
                    }
                }
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone)]
pub struct GridOutcome {
    pub reports: Vec<TrainReport>,
    /// Index of the selected cell.
    pub best: usize,
}

impl GridOutcome {
    pub fn best_config(&self) -> &TrainConfig {
        &self.reports[self.best].config
    }
}

/// Best cell by validation R@20, then N@20, then the smaller learning rate,
/// then the earlier cell.
pub fn select_best(reports: &[TrainReport]) -> Option<usize> {
    (0..reports.len()).reduce(|best, i| {
        let (a, b) = (&reports[best], &reports[i]);
        let better = b
            .best_recall20
            .total_cmp(&a.best_recall20)
            .then(b.best_ndcg20.total_cmp(&a.best_ndcg20))
            .then(a.config.learning_rate.total_cmp(&b.config.learning_rate));
        if better.is_gt() {
            i
        } else {
            best
        }
    })
}

/// Runs `run_cell` on every grid cell in order and selects the best.
pub fn grid_search(
    spec: &GridSpec,
    base: &TrainConfig,
    mut run_cell: impl FnMut(usize, &TrainConfig) -> Result<TrainReport, TrainError>,
) -> Result<GridOutcome, TrainError> {
    let reports = spec
        .cells(base)?
        .iter()
        .enumerate()
        .map(|(i, c)| run_cell(i, c))
        .collect::<Result<Vec<_>, _>>()?;
    let best = select_best(&reports).expect("grid has at least one cell");
    Ok(GridOutcome { reports, best })
}

/// Per-key summary of parameter values, for report echoes.
pub fn describe_config(config: &TrainConfig) -> BTreeMap<String, String> {
    let value = serde_json::to_value(config).expect("config serializes");
    value
        .as_object()
        .map(|m| m.iter().map(|(k, v)| (k.clone(), v.to_string())).collect())
        .unwrap_or_default()
}
