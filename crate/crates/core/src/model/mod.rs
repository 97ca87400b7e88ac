//! The recommendation network: interest encoding, social aggregation and
//! full-catalogue scoring.

mod checkpoint;
mod params;
mod social;
mod tegaa;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use checkpoint::{read_checkpoint, write_checkpoint, Checkpoint, CheckpointError};
pub use params::{FusionSlots, LayerSlots, MhgatSlots, ModelParams, ParamLayout};
pub use social::{score_items, ScoredRanking, SessionGradient};
pub use tegaa::{positional_encoding, Bound, EncodeRole, Forward};

use crate::numerics::TensorError;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("invalid model configuration: {0}")]
    Config(String),
    #[error("{0}")]
    Contract(String),
    #[error("loss became non-finite ({0})")]
    NonFiniteLoss(f64),
}

/// Variant switches. The sampling switches (`no_lmp`, `no_sf`) are honoured by
/// the trainer and evaluator; the rest change the network.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ablations {
    /// Drop like-minded peers from the neighbour set.
    pub no_lmp: bool,
    /// Drop social friends from the neighbour set.
    pub no_sf: bool,
    /// Replace the social attention layer with mean-pool + concat + linear.
    pub no_gal: bool,
    /// Add sinusoidal positional encoding before the encoder.
    pub with_pe: bool,
    /// Zero the target user's long-term embedding.
    pub no_uli: bool,
    /// Zero every user's long-term embedding.
    pub no_ali: bool,
}

impl Ablations {
    pub const NAMES: [&'static str; 6] = ["no_lmp", "no_sf", "no_gal", "with_pe", "no_uli", "no_ali"];

    pub fn set(&mut self, name: &str, on: bool) -> Result<(), ModelError> {
        match name {
            "no_lmp" => self.no_lmp = on,
            "no_sf" => self.no_sf = on,
            "no_gal" => self.no_gal = on,
            "with_pe" => self.with_pe = on,
            "no_uli" => self.no_uli = on,
            "no_ali" => self.no_ali = on,
            other => return Err(ModelError::Config(format!("unknown ablation {other:?}"))),
        }
        if self.no_ali {
            self.no_uli = true;
        }
        Ok(())
    }

    pub fn enabled(&self) -> Vec<&'static str> {
        let flags = [
            self.no_lmp,
            self.no_sf,
            self.no_gal,
            self.with_pe,
            self.no_uli,
            self.no_ali,
        ];
        Self::NAMES
            .iter()
            .zip(flags)
            .filter(|(_, on)| *on)
            .map(|(n, _)| *n)
            .collect()
    }

    /// Whether the target encode should use a zero long-term embedding.
    pub fn zero_target_embedding(&self) -> bool {
        self.no_uli || self.no_ali
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub num_users: usize,
    /// Real items; the embedding table has one extra padding row 0.
    pub num_items: usize,
    pub dim: usize,
    pub heads: usize,
    pub layers: usize,
    pub ff_mult: usize,
    /// Longest prefix fed to the encoder; older items are dropped.
    pub max_len: usize,
    pub layer_norm_eps: f64,
    pub dropout: f64,
    pub init_std: f64,
    pub ablations: Ablations,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            num_users: 1,
            num_items: 1,
            dim: 128,
            heads: 8,
            layers: 1,
            ff_mult: 4,
            max_len: 50,
            layer_norm_eps: 1e-5,
            dropout: 0.0,
            init_std: 0.1,
            ablations: Ablations::default(),
        }
    }
}

impl ModelConfig {
    pub fn head_dim(&self) -> usize {
        self.dim / self.heads
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let fail = |m: String| Err(ModelError::Config(m));
        if self.dim == 0 || self.heads == 0 || self.dim % self.heads != 0 {
            return fail(format!("dim {} must be a positive multiple of heads {}", self.dim, self.heads));
        }
        if self.num_users == 0 || self.num_items == 0 {
            return fail("model needs at least one user and one item".into());
        }
        if self.layers == 0 || self.ff_mult == 0 || self.max_len == 0 {
            return fail("layers, ff_mult and max_len must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if !(self.init_std > 0.0 && self.layer_norm_eps > 0.0) {
            return fail("init_std and layer_norm_eps must be positive".into());
        }
        Ok(())
    }
}

/// Configuration plus trained parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ModelParams,
}

impl Model {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let params = ModelParams::init(&config, seed);
        Ok(Self { config, params })
    }
}
