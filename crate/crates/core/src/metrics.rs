//! Recall@K and NDCG@K with a single relevant item, and split evaluation.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{EvalInstance, ItemId, SessionStore, UserId, Week};
use crate::model::{Model, ModelError, ScoredRanking};
use crate::neighbours::{build_sample, ItemUserIndex, NeighbourSample, SamplingConfig};
use crate::seed::rng_for;

/// 1 if `target` is among the first `k` entries of `ranking`, else 0.
pub fn recall_at_k(ranking: &[ItemId], target: ItemId, k: usize) -> f64 {
    if ranking.iter().take(k).any(|&i| i == target) {
        1.0
    } else {
        0.0
    }
}

/// `1 / log2(rank + 1)` for a 1-based rank within the first `k`, else 0.
pub fn ndcg_at_rank(rank: usize, k: usize) -> f64 {
    if rank == 0 || rank > k {
        0.0
    } else {
        1.0 / ((rank + 1) as f64).log2()
    }
}

pub fn ndcg_at_k(ranking: &[ItemId], target: ItemId, k: usize) -> f64 {
    match ranking.iter().take(k).position(|&i| i == target) {
        Some(p) => ndcg_at_rank(p + 1, k),
        None => 0.0,
    }
}

/// Which prefixes of an evaluation session are scored.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum EvalPrefixes {
    /// Every prefix, exactly as in training.
    #[default]
    All,
    /// Only the longest prefix.
    Last,
}

impl std::str::FromStr for EvalPrefixes {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "all" => Ok(Self::All),
            "last" => Ok(Self::Last),
            other => Err(format!("eval_prefixes must be all or last, got {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub ks: Vec<usize>,
    pub prefixes: EvalPrefixes,
    pub seed: u64,
    pub sampling: SamplingConfig,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            ks: vec![10, 20],
            prefixes: EvalPrefixes::All,
            seed: 0,
            sampling: SamplingConfig::default(),
        }
    }
}

/// Averages over every scored (instance, prefix) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub ks: Vec<usize>,
    pub recall: Vec<f64>,
    pub ndcg: Vec<f64>,
    pub count: usize,
}

impl EvalResult {
    pub fn recall_at(&self, k: usize) -> Option<f64> {
        self.ks.iter().position(|&x| x == k).map(|i| self.recall[i])
    }

    pub fn ndcg_at(&self, k: usize) -> Option<f64> {
        self.ks.iter().position(|&x| x == k).map(|i| self.ndcg[i])
    }

    /// Aggregates 1-based ranks in order.
    pub fn from_ranks(ks: &[usize], ranks: impl IntoIterator<Item = usize>) -> Self {
        let mut recall = vec![0.0; ks.len()];
        let mut ndcg = vec![0.0; ks.len()];
        let mut count = 0;
        for rank in ranks {
            count += 1;
            for (i, &k) in ks.iter().enumerate() {
                if rank <= k {
                    recall[i] += 1.0;
                }
                ndcg[i] += ndcg_at_rank(rank, k);
            }
        }
        if count > 0 {
            let n = count as f64;
            recall.iter_mut().chain(ndcg.iter_mut()).for_each(|v| *v /= n);
        }
        Self {
            ks: ks.to_vec(),
            recall,
            ndcg,
            count,
        }
    }

    pub fn tsv_header(&self) -> String {
        let mut out = String::from("label");
        for k in &self.ks {
            let _ = write!(out, "\tR@{k}");
        }
        for k in &self.ks {
            let _ = write!(out, "\tN@{k}");
        }
        out.push_str("\tcount");
        out
    }

    /// Metrics as percentages with two decimals.
    pub fn tsv_row(&self, label: &str) -> String {
        let mut out = label.to_string();
        for v in self.recall.iter().chain(&self.ndcg) {
            let _ = write!(out, "\t{:.2}", v * 100.0);
        }
        let _ = write!(out, "\t{}", self.count);
        out
    }

    pub fn summary(&self, label: &str) -> String {
        let mut out = format!("== {label} ({} predictions) ==\n", self.count);
        for (k, v) in self.ks.iter().zip(&self.recall) {
            let _ = writeln!(out, "R@{k}: {:.2}", v * 100.0);
        }
        for (k, v) in self.ks.iter().zip(&self.ndcg) {
            let _ = writeln!(out, "N@{k}: {:.2}", v * 100.0);
        }
        out
    }
}

/// Anything that can rank the catalogue for each prefix of a session.
pub trait InstanceScorer: Sync {
    fn score_session(
        &self,
        user: UserId,
        prefixes: &[&[ItemId]],
        sample: &NeighbourSample,
    ) -> Result<Vec<ScoredRanking>, ModelError>;

    /// Whether neighbour sampling is needed at all.
    fn uses_neighbours(&self) -> bool {
        true
    }
}

impl InstanceScorer for Model {
    fn score_session(
        &self,
        user: UserId,
        prefixes: &[&[ItemId]],
        sample: &NeighbourSample,
    ) -> Result<Vec<ScoredRanking>, ModelError> {
        self.score_prefixes(user, prefixes, sample)
    }
}

/// Ranks items by training-set interaction count.
#[derive(Debug, Clone, PartialEq)]
pub struct PopularityScorer {
    scores: Vec<f64>,
}

impl PopularityScorer {
    pub fn fit(store: &SessionStore, num_items: usize) -> Self {
        let mut scores = vec![0.0; num_items];
        for s in store.all_sessions() {
            for item in &s.items {
                if let Some(slot) = item.index().checked_sub(1).and_then(|i| scores.get_mut(i)) {
                    *slot += 1.0;
                }
            }
        }
        Self { scores }
    }
}

impl InstanceScorer for PopularityScorer {
    fn score_session(
        &self,
        _user: UserId,
        prefixes: &[&[ItemId]],
        _sample: &NeighbourSample,
    ) -> Result<Vec<ScoredRanking>, ModelError> {
        Ok(prefixes.iter().map(|_| ScoredRanking::new(self.scores.clone())).collect())
    }

    fn uses_neighbours(&self) -> bool {
        false
    }
}

/// Rank of one scored prefix.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankRecord {
    pub user: UserId,
    pub session_index: usize,
    pub prefix_len: usize,
    pub target: ItemId,
    pub rank: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalOutcome {
    pub result: EvalResult,
    pub ranks: Vec<RankRecord>,
}

impl EvalOutcome {
    /// `user␉session_index␉prefix_len␉target␉rank` per scored prefix.
    pub fn ranks_tsv(&self) -> String {
        let mut out = String::new();
        for r in &self.ranks {
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}",
                r.user, r.session_index, r.prefix_len, r.target, r.rank
            );
        }
        out
    }
}

/// Neighbour sample for a target user whose current session lies in `week`
/// and contains `context`. The stream depends only on the seed, the user and
/// the week, so any caller asking for the same instance sees the same sample.
pub fn eval_sample(
    store: &SessionStore,
    index: &ItemUserIndex,
    user: UserId,
    week: Week,
    context: &[ItemId],
    config: &EvalConfig,
) -> NeighbourSample {
    let mut rng = rng_for(config.seed, &[user.0, week as u64]);
    build_sample(store, index, user, week, context, &config.sampling, &mut rng)
}

/// Scores every instance against the training `store` and averages metrics
/// over all scored prefixes.
pub fn evaluate<S: InstanceScorer>(
    scorer: &S,
    store: &SessionStore,
    index: &ItemUserIndex,
    instances: &[EvalInstance],
    config: &EvalConfig,
) -> Result<EvalOutcome, ModelError> {
    let per_instance: Vec<Vec<RankRecord>> = instances
        .par_iter()
        .map(|inst| {
            let sample = if scorer.uses_neighbours() {
                eval_sample(store, index, inst.user, inst.week, &inst.items, config)
            } else {
                NeighbourSample::default()
            };
            let n = inst.items.len();
            let lens: Vec<usize> = match config.prefixes {
                EvalPrefixes::All => (1..n).collect(),
                EvalPrefixes::Last => vec![n - 1],
            };
            let prefixes: Vec<&[ItemId]> = lens.iter().map(|&k| &inst.items[..k]).collect();
            let rankings = scorer.score_session(inst.user, &prefixes, &sample)?;
            lens.iter()
                .zip(rankings)
                .map(|(&k, r)| {
                    let target = inst.items[k];
                    let rank = r.rank_of(target).ok_or_else(|| {
                        ModelError::Contract(format!("target {target} outside the scored catalogue"))
                    })?;
                    Ok(RankRecord {
                        user: inst.user,
                        session_index: inst.session_index,
                        prefix_len: k,
                        target,
                        rank,
                    })
                })
                .collect()
        })
        .collect::<Result<_, ModelError>>()?;
    let ranks: Vec<RankRecord> = per_instance.into_iter().flatten().collect();
    let result = EvalResult::from_ranks(&config.ks, ranks.iter().map(|r| r.rank));
    Ok(EvalOutcome { result, ranks })
}
