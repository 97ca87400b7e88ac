//! Command-line front end: prepare, train, grid, evaluate, recommend, synth.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::config::{ConfigError, RunConfig};
use crate::data::{parse_events, reindex, segment_weekly, split_holdout, DataError, EvalInstance, StoreStats};
use crate::metrics::{evaluate, EvalConfig};
use crate::model::{write_checkpoint, Checkpoint, CheckpointError, ModelError};
use crate::neighbours::ItemUserIndex;
use crate::recommend::{recommendations_tsv, RecommendError, Recommender};
use crate::synth::{generate, SynthError};
use crate::trainer::{grid_search, select_best, training_instances, Fit, TrainError, TrainReport};
use crate::workdir::{self, Prepared, WorkdirError};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USER: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "tegaarec", version, about = "Session-based social recommendation")]
pub struct Cli {
    /// Run configuration file (`key = value` lines).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Override one config key; repeatable, applied after the file.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub overrides: Vec<String>,
    /// Experiment directory.
    #[arg(long, global = true)]
    pub workdir: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Segment events into weekly sessions, reindex and write the split.
    Prepare {
        #[arg(long)]
        events: Option<PathBuf>,
        #[arg(long)]
        edges: Option<PathBuf>,
        #[arg(long)]
        holdout_weeks: Option<i64>,
    },
    /// Train one configuration with early stopping on the valid split.
    Train(TrainArgs),
    /// Train every grid cell and keep the best by valid R@20.
    Grid(TrainArgs),
    /// Score a split with the best checkpoint.
    Evaluate {
        #[arg(long, value_enum, default_value_t = SplitArg::Test)]
        split: SplitArg,
    },
    /// Top-K next items for one user and session.
    Recommend {
        /// Raw user id.
        #[arg(long)]
        user: u64,
        /// Current session as comma-separated raw item ids.
        #[arg(long, value_delimiter = ',', required = true)]
        items: Vec<u64>,
        /// Extra raw item ids used only for mining like-minded peers.
        #[arg(long, value_delimiter = ',')]
        context: Vec<u64>,
        /// Number of items to return.
        #[arg(long, short, default_value_t = 20)]
        k: usize,
        /// Session week; defaults to the first held-out week.
        #[arg(long)]
        week: Option<i64>,
    },
    /// Write a synthetic dataset (events.tsv, edges.tsv, clusters.tsv).
    Synth {
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Continue from last.ckpt and report.jsonl.
    #[arg(long)]
    pub resume: bool,
    #[arg(long)]
    pub max_epochs: Option<usize>,
    /// Ablation switch; repeatable.
    #[arg(long = "ablation", value_name = "NAME")]
    pub ablations: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Train,
    Valid,
    Test,
}

impl SplitArg {
    fn tag(self) -> &'static str {
        match self {
            SplitArg::Train => "train",
            SplitArg::Valid => "valid",
            SplitArg::Test => "test",
        }
    }
}

/// Failure with the process exit code it maps to.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    fn user(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_USER,
            message: message.into(),
        }
    }

    fn data(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_DATA,
            message: message.into(),
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        Self::user(e.to_string())
    }
}

impl From<SynthError> for CliError {
    fn from(e: SynthError) -> Self {
        Self::user(e.to_string())
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        match e {
            DataError::Config(_) => Self::user(e.to_string()),
            _ => Self::data(e.to_string()),
        }
    }
}

impl From<WorkdirError> for CliError {
    fn from(e: WorkdirError) -> Self {
        match e {
            WorkdirError::Missing { .. } => Self::user(e.to_string()),
            _ => Self::data(e.to_string()),
        }
    }
}

impl From<CheckpointError> for CliError {
    fn from(e: CheckpointError) -> Self {
        Self::data(e.to_string())
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::NonFiniteLoss(_) | ModelError::Tensor(_) => Self {
                code: EXIT_NUMERIC,
                message: e.to_string(),
            },
            ModelError::Config(_) => Self::user(e.to_string()),
            ModelError::Contract(_) => Self::data(e.to_string()),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Model(m) => m.into(),
            TrainError::Config(_) => Self::user(e.to_string()),
            TrainError::Mask(_) => Self::data(e.to_string()),
            TrainError::Tensor(_) | TrainError::NonFinite { .. } => Self {
                code: EXIT_NUMERIC,
                message: e.to_string(),
            },
        }
    }
}

impl From<RecommendError> for CliError {
    fn from(e: RecommendError) -> Self {
        match e {
            RecommendError::Workdir(w) => w.into(),
            RecommendError::Model(m) => m.into(),
            _ => Self::user(e.to_string()),
        }
    }
}

/// Output sink so tests can capture what a command prints.
pub trait Output {
    fn line(&mut self, text: &str);
}

impl Output for String {
    fn line(&mut self, text: &str) {
        self.push_str(text);
        if !text.ends_with('\n') {
            self.push('\n');
        }
    }
}

pub struct Stdout;

impl Output for Stdout {
    fn line(&mut self, text: &str) {
        if text.ends_with('\n') {
            print!("{text}");
        } else {
            println!("{text}");
        }
    }
}

fn resolve_config(cli: &Cli) -> Result<RunConfig, CliError> {
    let mut config = match &cli.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| CliError::user(format!("{}: {e}", path.display())))?;
            RunConfig::from_text(&text)?
        }
        None => RunConfig::default(),
    };
    for o in &cli.overrides {
        config.apply_override(o)?;
    }
    if let Some(w) = &cli.workdir {
        config.workdir = Some(w.clone());
    }
    Ok(config)
}

fn require_workdir(config: &RunConfig) -> Result<&Path, CliError> {
    config
        .workdir
        .as_deref()
        .ok_or_else(|| CliError::user("no workdir given (use --workdir or the workdir key)"))
}

fn read_input(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::user(format!("{}: {e}", path.display())))
}

pub fn run(cli: Cli, out: &mut dyn Output) -> Result<(), CliError> {
    let mut config = resolve_config(&cli)?;
    match cli.command {
        Command::Prepare {
            events,
            edges,
            holdout_weeks,
        } => {
            if let Some(p) = events {
                config.events = Some(p);
            }
            if let Some(p) = edges {
                config.edges = Some(p);
            }
            if let Some(s) = holdout_weeks {
                config.holdout_weeks = s;
            }
            cmd_prepare(&config, out)
        }
        Command::Train(args) => {
            apply_train_args(&mut config, &args)?;
            cmd_train(&config, args.resume, out)
        }
        Command::Grid(args) => {
            apply_train_args(&mut config, &args)?;
            cmd_grid(&config, out)
        }
        Command::Evaluate { split } => cmd_evaluate(&config, split, out),
        Command::Recommend {
            user,
            items,
            context,
            k,
            week,
        } => {
            let dir = require_workdir(&config)?;
            let rec = Recommender::open(dir, Some(config.train.eval_seed))?;
            let recs = rec.recommend(user, &items, &context, k, week)?;
            out.line(&recommendations_tsv(&recs));
            Ok(())
        }
        Command::Synth { out: dir } => {
            let data = generate(&config.synth)?;
            let w = |name: &str, text: String| workdir::write(&dir.join(name), &text);
            w("events.tsv", data.events_tsv())?;
            w("edges.tsv", data.edges_tsv())?;
            w("clusters.tsv", data.clusters_tsv())?;
            out.line(&format!(
                "wrote {} events, {} edges for {} users to {}",
                data.events.len(),
                data.edges.len(),
                data.clusters.len(),
                dir.display()
            ));
            Ok(())
        }
    }
}

fn apply_train_args(config: &mut RunConfig, args: &TrainArgs) -> Result<(), CliError> {
    if let Some(m) = args.max_epochs {
        config.train.max_epochs = m;
    }
    for name in &args.ablations {
        config
            .train
            .ablations
            .set(name, true)
            .map_err(|e| CliError::user(e.to_string()))?;
    }
    Ok(())
}

pub fn cmd_prepare(config: &RunConfig, out: &mut dyn Output) -> Result<(), CliError> {
    let dir = require_workdir(config)?;
    let events_path = config
        .events
        .as_deref()
        .ok_or_else(|| CliError::user("no events file given"))?;
    let events_text = read_input(events_path)?;
    let edges_text = match &config.edges {
        Some(p) => read_input(p)?,
        None => String::new(),
    };
    let (events, edges) = parse_events(&events_text, &edges_text)?;
    let store = segment_weekly(&events).with_edges(edges);
    let (store, maps) = reindex(&store);
    let split = split_holdout(&store, config.holdout_weeks, config.split_seed)?;
    let prepared = Prepared { store, maps, split };
    prepared.write_to(dir)?;
    let stats = StoreStats::compute(&prepared.store);
    let mut text = stats.to_string();
    let _ = writeln!(
        text,
        "Train sessions\t{}\nValid instances\t{}\nTest instances\t{}",
        prepared.split.train.num_sessions(),
        prepared.split.valid.len(),
        prepared.split.test.len()
    );
    workdir::write(&dir.join(workdir::STATS), &text)?;
    out.line(&text);
    Ok(())
}

fn best_checkpoint(fit: &Fit<'_>) -> Checkpoint {
    let mut ck = Checkpoint::new(fit.best_model.clone());
    ck.meta.insert("best_epoch".into(), fit.report.best_epoch.to_string());
    ck
}

fn persist(dir: &Path, fit: &Fit<'_>) -> Result<(), TrainError> {
    let io = |e: WorkdirError| TrainError::Config(e.to_string());
    workdir::write(&dir.join(workdir::LAST), &write_checkpoint(&fit.trainer.checkpoint())).map_err(io)?;
    workdir::write(&dir.join(workdir::MODEL), &write_checkpoint(&best_checkpoint(fit))).map_err(io)?;
    workdir::write(&dir.join(workdir::REPORT), &fit.report.to_jsonl()).map_err(io)
}

fn epoch_line(report: &TrainReport) -> String {
    let e = report.epochs.last().expect("called after an epoch");
    format!(
        "epoch {}\tloss {:.6}\tlr {:.6}\tvalid R@20 {:.2}\tN@20 {:.2}",
        e.epoch,
        e.train_loss,
        e.lr,
        e.valid_recall20 * 100.0,
        e.valid_ndcg20 * 100.0
    )
}

pub fn cmd_train(config: &RunConfig, resume: bool, out: &mut dyn Output) -> Result<(), CliError> {
    let dir = require_workdir(config)?;
    let prepared = Prepared::load(dir)?;
    let (nu, ni) = (prepared.maps.num_users(), prepared.maps.num_items());
    let mut fit = if resume {
        let report = workdir::load_report(&dir.join(workdir::REPORT))?;
        let last = workdir::load_checkpoint(&dir.join(workdir::LAST))?;
        let best = workdir::load_checkpoint(&dir.join(workdir::MODEL))?;
        // the interrupted run's settings win; only the epoch budget may change
        let mut train = report.config.clone();
        train.max_epochs = config.train.max_epochs;
        Fit::resume(&prepared.split, train, last, best.model, report)?
    } else {
        Fit::new(&prepared.split, config.train.clone(), nu, ni)?
    };
    out.line(&format!(
        "training {} rows per epoch, ablations: {}",
        fit.trainer.rows_per_epoch(),
        fit.report.ablations.join(",")
    ));
    let stop = fit.run(|f| {
        persist(dir, f)?;
        out.line(&epoch_line(&f.report));
        Ok(())
    })?;
    out.line(&format!(
        "stopped ({stop:?}) after {} epochs; best epoch {} with valid R@20 {:.2}",
        fit.report.epochs.len(),
        fit.report.best_epoch,
        fit.report.best_recall20.max(0.0) * 100.0
    ));
    Ok(())
}

pub fn cmd_grid(config: &RunConfig, out: &mut dyn Output) -> Result<(), CliError> {
    let dir = require_workdir(config)?;
    let prepared = Prepared::load(dir)?;
    let (nu, ni) = (prepared.maps.num_users(), prepared.maps.num_items());
    let mut best: Option<(TrainReport, crate::model::Model)> = None;
    let outcome = grid_search(&config.grid, &config.train, |i, cell| {
        let mut fit = Fit::new(&prepared.split, cell.clone(), nu, ni)?;
        fit.run(|_| Ok(()))?;
        let done = fit.finish();
        workdir::write(
            &dir.join(workdir::GRID_DIR).join(format!("cell-{i:03}.jsonl")),
            &done.report.to_jsonl(),
        )
        .map_err(|e| TrainError::Config(e.to_string()))?;
        let replace = match &best {
            None => true,
            Some((r, _)) => select_best(&[r.clone(), done.report.clone()]) == Some(1),
        };
        if replace {
            best = Some((done.report.clone(), done.model));
        }
        Ok(done.report)
    })?;
    let mut summary =
        String::from("cell\tfriend_size\tlayers\tlearning_rate\tlmp_size\ttolerance\twarmup_steps");
    summary.push_str("\tbest_epoch\tvalid_R@20\tvalid_N@20\n");
    for (i, r) in outcome.reports.iter().enumerate() {
        let c = &r.config;
        let _ = writeln!(
            summary,
            "{i:03}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{:.2}\t{:.2}",
            c.friend_size,
            c.layers,
            c.learning_rate,
            c.lmp_size,
            c.tolerance,
            c.warmup_steps,
            r.best_epoch,
            r.best_recall20.max(0.0) * 100.0,
            r.best_ndcg20 * 100.0
        );
    }
    workdir::write(&dir.join(workdir::GRID_DIR).join("summary.tsv"), &summary)?;
    let (report, model) = best.expect("grid has at least one cell");
    let mut ck = Checkpoint::new(model);
    ck.meta.insert("best_epoch".into(), report.best_epoch.to_string());
    ck.meta.insert("grid_cell".into(), outcome.best.to_string());
    workdir::write(&dir.join(workdir::MODEL), &write_checkpoint(&ck))?;
    workdir::write(&dir.join(workdir::REPORT), &report.to_jsonl())?;
    out.line(&summary);
    out.line(&format!("selected cell {:03}", outcome.best));
    Ok(())
}

/// Sampling settings come from the checkpoint's training report; the seed,
/// prefix mode and cutoffs come from the run config.
fn evaluation_config(dir: &Path, config: &RunConfig, ckpt: &Checkpoint) -> Result<EvalConfig, CliError> {
    let report_path = dir.join(workdir::REPORT);
    let mut train = match workdir::load_report(&report_path) {
        Ok(r) => r.config,
        Err(WorkdirError::Missing { .. }) => config.train.clone(),
        Err(e) => return Err(e.into()),
    };
    train.ablations = ckpt.model.config.ablations;
    train.eval_seed = config.train.eval_seed;
    train.eval_prefixes = config.train.eval_prefixes;
    let mut eval = train.eval_config();
    eval.ks = config.ks.clone();
    Ok(eval)
}

pub fn cmd_evaluate(config: &RunConfig, split: SplitArg, out: &mut dyn Output) -> Result<(), CliError> {
    let dir = require_workdir(config)?;
    let prepared = Prepared::load(dir)?;
    let ckpt = workdir::load_checkpoint(&dir.join(workdir::MODEL))?;
    let mc = &ckpt.model.config;
    if mc.num_users != prepared.maps.num_users() || mc.num_items != prepared.maps.num_items() {
        return Err(CliError::data(format!(
            "checkpoint is for {} users and {} items but the workdir has {} and {}",
            mc.num_users,
            mc.num_items,
            prepared.maps.num_users(),
            prepared.maps.num_items()
        )));
    }
    let eval = evaluation_config(dir, config, &ckpt)?;
    let train = &prepared.split.train;
    let instances: Vec<EvalInstance> = match split {
        SplitArg::Train => training_instances(train).iter().map(EvalInstance::from).collect(),
        SplitArg::Valid => prepared.split.valid.clone(),
        SplitArg::Test => prepared.split.test.clone(),
    };
    let index = ItemUserIndex::build(train);
    let outcome = evaluate(&ckpt.model, train, &index, &instances, &eval)?;
    let tag = split.tag();
    let r = &outcome.result;
    let tsv = format!("{}\n{}\n", r.tsv_header(), r.tsv_row(tag));
    workdir::write(&dir.join(format!("eval-{tag}.tsv")), &tsv)?;
    workdir::write(&dir.join(format!("eval-{tag}.txt")), &r.summary(tag))?;
    workdir::write(&dir.join(format!("ranks-{tag}.tsv")), &outcome.ranks_tsv())?;
    out.line(&tsv);
    out.line(&r.summary(tag));
    Ok(())
}

/// Parses `args` and runs the command, returning the process exit code.
pub fn main_with_args<I, T>(args: I, out: &mut dyn Output) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USER } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match run(cli, out) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.code
        }
    }
}
