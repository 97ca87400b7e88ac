//! Social aggregation over neighbour codes and full-catalogue scoring.

use super::{EncodeRole, Forward, Model, ModelError};
use crate::data::{ItemId, UserId};
use crate::masking::MaskedInstance;
use crate::neighbours::NeighbourSample;
use crate::numerics::{concat_rows, softmax_row, Tape, Tensor, Var};

impl<'m, 't> Forward<'m, 't> {
    /// Codes `[m × d]` of every neighbour with a usable session, in sample
    /// order, or `None` when there are none.
    pub fn neighbour_codes(&self, sample: &NeighbourSample) -> Result<Option<Var<'t>>, ModelError> {
        let codes = sample
            .all()
            .filter(|n| !n.items.is_empty())
            .map(|n| self.tegaa_encode(n.user, &n.items, EncodeRole::Neighbour))
            .collect::<Result<Vec<_>, _>>()?;
        if codes.is_empty() {
            return Ok(None);
        }
        Ok(Some(concat_rows(&codes)?))
    }

    /// Graph attention of the target code over `[neighbours; target]`, or the
    /// mean-pool + concat + linear map when graph attention is ablated.
    pub fn aggregate(&self, target: Var<'t>, neighbours: Option<Var<'t>>) -> Result<Var<'t>, ModelError> {
        if self.config.ablations.no_gal {
            let pooled = match neighbours {
                Some(n) => n.mean_rows(),
                None => self.tape.constant(Tensor::zeros(vec![1, self.config.dim])),
            };
            let c = &self.layout.concat;
            return Ok(target
                .concat_last(pooled)?
                .matmul(self.bound.get(c.weight))?
                .add_row(self.bound.get(c.bias))?);
        }
        let rows = match neighbours {
            Some(n) => concat_rows(&[n, target])?,
            None => target,
        };
        self.mhgat(&self.layout.social, target, rows)
    }

    /// Scores `[B × I]` of every real item; column `j` is item `j + 1`.
    pub fn item_logits(&self, h: Var<'t>) -> Result<Var<'t>, ModelError> {
        let table = self.bound.get(self.layout.item_embedding);
        Ok(h.matmul_nt(table.slice_rows(1, self.config.num_items + 1)?)?)
    }

    /// Logits for each prefix of one session, sharing one neighbour encoding.
    pub fn session_logits(
        &self,
        user: UserId,
        prefixes: &[&[ItemId]],
        sample: &NeighbourSample,
    ) -> Result<Var<'t>, ModelError> {
        if prefixes.is_empty() {
            return Err(ModelError::Contract("no prefixes to score".into()));
        }
        let neighbours = self.neighbour_codes(sample)?;
        let rows = prefixes
            .iter()
            .map(|p| {
                let code = self.tegaa_encode(user, p, EncodeRole::Target)?;
                self.aggregate(code, neighbours)
            })
            .collect::<Result<Vec<_>, _>>()?;
        self.item_logits(concat_rows(&rows)?)
    }
}

/// Scores over the real items of the catalogue.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredRanking {
    /// `scores[j]` belongs to item `j + 1`.
    pub scores: Vec<f64>,
}

impl ScoredRanking {
    pub fn new(scores: Vec<f64>) -> Self {
        Self { scores }
    }

    pub fn num_items(&self) -> usize {
        self.scores.len()
    }

    pub fn score(&self, item: ItemId) -> Option<f64> {
        self.scores.get(item.index().checked_sub(1)?).copied()
    }

    /// Highest scores first; equal scores keep the lower item id first.
    pub fn top_k(&self, k: usize) -> Vec<ItemId> {
        let mut order: Vec<usize> = (0..self.scores.len()).collect();
        order.sort_by(|&a, &b| self.scores[b].total_cmp(&self.scores[a]).then(a.cmp(&b)));
        order.truncate(k);
        order.into_iter().map(|j| ItemId(j as u64 + 1)).collect()
    }

    /// 1-based position of `item` in the order of [`ScoredRanking::top_k`].
    pub fn rank_of(&self, item: ItemId) -> Option<usize> {
        let t = item.index().checked_sub(1)?;
        let s = *self.scores.get(t)?;
        let ahead = self
            .scores
            .iter()
            .enumerate()
            .filter(|&(j, &v)| v > s || (v == s && j < t))
            .count();
        Some(ahead + 1)
    }

    pub fn probabilities(&self) -> Vec<f64> {
        softmax_row(&self.scores)
    }
}

/// Scores of a single code against an item table whose row 0 is padding.
pub fn score_items(h: &[f64], item_table: &Tensor) -> ScoredRanking {
    let d = item_table.cols();
    assert_eq!(h.len(), d, "code width must match the item table");
    let scores = (1..item_table.rows())
        .map(|j| {
            item_table
                .row(j)
                .iter()
                .zip(h)
                .fold(0.0, |acc, (a, b)| acc + a * b)
        })
        .collect();
    ScoredRanking::new(scores)
}

/// Loss and parameter gradients of one session's sub-instances.
#[derive(Debug, Clone)]
pub struct SessionGradient {
    /// Sum of per-row cross-entropy.
    pub loss_sum: f64,
    pub rows: usize,
    /// Indexed by parameter slot; `None` where no gradient reached.
    pub grads: Vec<Option<Tensor>>,
}

impl Model {
    /// Forward and backward pass over every sub-instance of one session.
    pub fn session_gradient(
        &self,
        user: UserId,
        instances: &[MaskedInstance],
        sample: &NeighbourSample,
        dropout_seed: u64,
    ) -> Result<SessionGradient, ModelError> {
        let tape = Tape::new();
        let f = Forward::train(self, &tape, dropout_seed);
        let prefixes: Vec<&[ItemId]> = instances.iter().map(MaskedInstance::prefix).collect();
        let targets = instances
            .iter()
            .map(|i| self.target_column(i.target))
            .collect::<Result<Vec<_>, _>>()?;
        let logits = f.session_logits(user, &prefixes, sample)?;
        let rows = targets.len();
        let loss = logits.cross_entropy(&targets)?.scale(rows as f64);
        let loss_sum = loss.value().data()[0];
        if !loss_sum.is_finite() {
            return Err(ModelError::NonFiniteLoss(loss_sum));
        }
        tape.backward(loss)?;
        let grads = f.bound.vars().iter().map(|&v| tape.grad(v)).collect();
        Ok(SessionGradient { loss_sum, rows, grads })
    }

    /// Rankings for each prefix of one session.
    pub fn score_prefixes(
        &self,
        user: UserId,
        prefixes: &[&[ItemId]],
        sample: &NeighbourSample,
    ) -> Result<Vec<ScoredRanking>, ModelError> {
        let tape = Tape::new();
        let f = Forward::eval(self, &tape);
        let logits = f.session_logits(user, prefixes, sample)?.value();
        Ok((0..logits.rows())
            .map(|r| ScoredRanking::new(logits.row(r).to_vec()))
            .collect())
    }

    fn target_column(&self, item: ItemId) -> Result<usize, ModelError> {
        match item.index() {
            0 => Err(ModelError::Contract("padding item used as a target".into())),
            i if i > self.config.num_items => Err(ModelError::Contract(format!("target item {item} out of range"))),
            i => Ok(i - 1),
        }
    }
}
