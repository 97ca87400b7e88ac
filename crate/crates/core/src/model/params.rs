use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::ModelConfig;
use crate::numerics::Tensor;

/// Slot indices of one multi-head graph attention block.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MhgatSlots {
    /// Query projections of all heads side by side, `[d × d]`.
    pub query: usize,
    /// Key projections of all heads side by side, `[d × d]`.
    pub key: usize,
    pub out: usize,
    pub out_bias: usize,
}

/// Slot indices of a `ReLU(concat · W + b)` style block.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FusionSlots {
    pub weight: usize,
    pub bias: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerSlots {
    pub wq: usize,
    pub bq: usize,
    pub wk: usize,
    pub bk: usize,
    pub wv: usize,
    pub bv: usize,
    pub wo: usize,
    pub bo: usize,
    pub ln1_gain: usize,
    pub ln1_bias: usize,
    pub ff1: usize,
    pub ff1_bias: usize,
    pub ff2: usize,
    pub ff2_bias: usize,
    pub ln2_gain: usize,
    pub ln2_bias: usize,
}

/// Where each named tensor lives in [`ModelParams::tensors`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamLayout {
    pub item_embedding: usize,
    pub user_embedding: usize,
    pub layers: Vec<LayerSlots>,
    /// Attention pooling inside the interest encoder.
    pub interest: MhgatSlots,
    pub fusion: FusionSlots,
    /// Attention over neighbour codes plus the self node.
    pub social: MhgatSlots,
    /// Linear map used instead of `social` when graph attention is ablated.
    pub concat: FusionSlots,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub layout: ParamLayout,
    pub names: Vec<String>,
    pub tensors: Vec<Arc<Tensor>>,
}

enum Init {
    Zeros,
    Ones,
    Normal(f64),
    Xavier,
}

struct Builder {
    rng: ChaCha8Rng,
    names: Vec<String>,
    tensors: Vec<Arc<Tensor>>,
}

impl Builder {
    fn add(&mut self, name: String, rows: usize, cols: usize, init: Init) -> usize {
        let data: Vec<f64> = match init {
            Init::Zeros => vec![0.0; rows * cols],
            Init::Ones => vec![1.0; rows * cols],
            Init::Normal(std) => {
                let dist = Normal::new(0.0, std).expect("positive std");
                (0..rows * cols).map(|_| dist.sample(&mut self.rng)).collect()
            }
            Init::Xavier => {
                let limit = (6.0 / (rows + cols) as f64).sqrt();
                (0..rows * cols)
                    .map(|_| self.rng.random_range(-limit..limit))
                    .collect()
            }
        };
        let shape = if rows == 1 { vec![cols] } else { vec![rows, cols] };
        self.names.push(name);
        self.tensors
            .push(Arc::new(Tensor::new(shape, data).expect("finite init")));
        self.tensors.len() - 1
    }

    fn mhgat(&mut self, prefix: &str, d: usize) -> MhgatSlots {
        MhgatSlots {
            query: self.add(format!("{prefix}.query"), d, d, Init::Xavier),
            key: self.add(format!("{prefix}.key"), d, d, Init::Xavier),
            out: self.add(format!("{prefix}.out"), d, d, Init::Xavier),
            out_bias: self.add(format!("{prefix}.out_bias"), 1, d, Init::Zeros),
        }
    }

    fn fusion(&mut self, prefix: &str, d: usize) -> FusionSlots {
        FusionSlots {
            weight: self.add(format!("{prefix}.weight"), 2 * d, d, Init::Xavier),
            bias: self.add(format!("{prefix}.bias"), 1, d, Init::Zeros),
        }
    }
}

impl ModelParams {
    /// Seeded initialisation: normal embeddings, Xavier-uniform weights, zero
    /// biases and unit layer-norm gains.
    pub fn init(config: &ModelConfig, seed: u64) -> Self {
        let d = config.dim;
        let hidden = d * config.ff_mult;
        let mut b = Builder {
            rng: ChaCha8Rng::seed_from_u64(seed),
            names: Vec::new(),
            tensors: Vec::new(),
        };
        let item_embedding = b.add(
            "item_embedding".into(),
            config.num_items + 1,
            d,
            Init::Normal(config.init_std),
        );
        let user_embedding = b.add(
            "user_embedding".into(),
            config.num_users,
            d,
            Init::Normal(config.init_std),
        );
        let layers = (0..config.layers)
            .map(|l| {
                let p = format!("encoder.{l}");
                LayerSlots {
                    wq: b.add(format!("{p}.wq"), d, d, Init::Xavier),
                    bq: b.add(format!("{p}.bq"), 1, d, Init::Zeros),
                    wk: b.add(format!("{p}.wk"), d, d, Init::Xavier),
                    bk: b.add(format!("{p}.bk"), 1, d, Init::Zeros),
                    wv: b.add(format!("{p}.wv"), d, d, Init::Xavier),
                    bv: b.add(format!("{p}.bv"), 1, d, Init::Zeros),
                    wo: b.add(format!("{p}.wo"), d, d, Init::Xavier),
                    bo: b.add(format!("{p}.bo"), 1, d, Init::Zeros),
                    ln1_gain: b.add(format!("{p}.ln1_gain"), 1, d, Init::Ones),
                    ln1_bias: b.add(format!("{p}.ln1_bias"), 1, d, Init::Zeros),
                    ff1: b.add(format!("{p}.ff1"), d, hidden, Init::Xavier),
                    ff1_bias: b.add(format!("{p}.ff1_bias"), 1, hidden, Init::Zeros),
                    ff2: b.add(format!("{p}.ff2"), hidden, d, Init::Xavier),
                    ff2_bias: b.add(format!("{p}.ff2_bias"), 1, d, Init::Zeros),
                    ln2_gain: b.add(format!("{p}.ln2_gain"), 1, d, Init::Ones),
                    ln2_bias: b.add(format!("{p}.ln2_bias"), 1, d, Init::Zeros),
                }
            })
            .collect();
        let interest = b.mhgat("interest", d);
        let fusion = b.fusion("fusion", d);
        let social = b.mhgat("social", d);
        let concat = b.fusion("concat", d);
        Self {
            layout: ParamLayout {
                item_embedding,
                user_embedding,
                layers,
                interest,
                fusion,
                social,
                concat,
            },
            names: b.names,
            tensors: b.tensors,
        }
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, slot: usize) -> &Tensor {
        &self.tensors[slot]
    }

    /// Mutable access; clones the storage if a tape still shares it.
    pub fn get_mut(&mut self, slot: usize) -> &mut Tensor {
        Arc::make_mut(&mut self.tensors[slot])
    }

    pub fn slot(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn num_values(&self) -> usize {
        self.tensors.iter().map(|t| t.len()).sum()
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.tensors.iter().map(|t| t.len()).collect()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(|t| t.all_finite())
    }
}
