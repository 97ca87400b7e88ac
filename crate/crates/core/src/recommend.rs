//! Top-K inference for one user and session against a trained workdir.

use std::fmt::Write as _;
use std::path::Path;

use thiserror::Error;

use crate::data::{ItemId, UserId, Week};
use crate::metrics::{eval_sample, EvalConfig};
use crate::model::{Model, ModelError};
use crate::neighbours::ItemUserIndex;
use crate::trainer::TrainConfig;
use crate::workdir::{self, Prepared, WorkdirError};

#[derive(Debug, Error)]
pub enum RecommendError {
    #[error("unknown user id {0}")]
    UnknownUser(u64),
    #[error("unknown item id {0}")]
    UnknownItem(u64),
    #[error("session must contain at least one item")]
    EmptySession,
    #[error("k must be positive")]
    ZeroK,
    #[error(transparent)]
    Workdir(#[from] WorkdirError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Recommendation {
    pub raw_user: u64,
    pub rank: usize,
    pub raw_item: u64,
    pub score: f64,
}

pub fn recommendations_tsv(recs: &[Recommendation]) -> String {
    let mut out = String::new();
    for r in recs {
        let _ = writeln!(out, "{}\t{}\t{}\t{}", r.raw_user, r.rank, r.raw_item, r.score);
    }
    out
}

/// A prepared workdir with its best checkpoint loaded.
pub struct Recommender {
    pub prepared: Prepared,
    pub model: Model,
    pub eval: EvalConfig,
    index: ItemUserIndex,
}

impl Recommender {
    pub fn new(prepared: Prepared, model: Model, eval: EvalConfig) -> Self {
        let index = ItemUserIndex::build(&prepared.split.train);
        Self {
            prepared,
            model,
            eval,
            index,
        }
    }

    /// Loads `model.ckpt` and rebuilds the sampling setup it was trained with.
    pub fn open(dir: &Path, eval_seed: Option<u64>) -> Result<Self, RecommendError> {
        let prepared = Prepared::load(dir)?;
        let ckpt = workdir::load_checkpoint(&dir.join(workdir::MODEL))?;
        let report = workdir::load_report(&dir.join(workdir::REPORT)).ok();
        let mut config = report.map(|r| r.config).unwrap_or_else(|| TrainConfig {
            ablations: ckpt.model.config.ablations,
            ..TrainConfig::default()
        });
        if let Some(seed) = eval_seed {
            config.eval_seed = seed;
        }
        Ok(Self::new(prepared, ckpt.model, config.eval_config()))
    }

    fn item(&self, raw: u64) -> Result<ItemId, RecommendError> {
        self.prepared.maps.item(raw).ok_or(RecommendError::UnknownItem(raw))
    }

    /// Ranks the catalogue for the next item after `items`.
    ///
    /// Neighbours are mined from the training window before `week` (default:
    /// the first held-out week) using `items` plus any `context` items, which
    /// only influence peer mining.
    pub fn recommend(
        &self,
        raw_user: u64,
        raw_items: &[u64],
        raw_context: &[u64],
        k: usize,
        week: Option<Week>,
    ) -> Result<Vec<Recommendation>, RecommendError> {
        if k == 0 {
            return Err(RecommendError::ZeroK);
        }
        let user: UserId = self
            .prepared
            .maps
            .user(raw_user)
            .ok_or(RecommendError::UnknownUser(raw_user))?;
        let items = raw_items.iter().map(|&r| self.item(r)).collect::<Result<Vec<_>, _>>()?;
        if items.is_empty() {
            return Err(RecommendError::EmptySession);
        }
        let mut mining = items.clone();
        for &r in raw_context {
            mining.push(self.item(r)?);
        }
        let week = week.unwrap_or(self.prepared.split.boundary_week);
        let sample = eval_sample(&self.prepared.split.train, &self.index, user, week, &mining, &self.eval);
        let ranking = self
            .model
            .score_prefixes(user, &[&items], &sample)?
            .pop()
            .expect("one ranking per prefix");
        Ok(ranking
            .top_k(k)
            .into_iter()
            .enumerate()
            .map(|(i, item)| Recommendation {
                raw_user,
                rank: i + 1,
                raw_item: self.prepared.maps.raw_item(item).expect("scored items are mapped"),
                score: ranking.score(item).expect("scored items have scores"),
            })
            .collect())
    }
}
