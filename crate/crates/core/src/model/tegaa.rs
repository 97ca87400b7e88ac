//! Interest encoder: transformer over session items, attention pooling keyed
//! by the user's long-term embedding, then fusion of both.

use std::cell::RefCell;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{LayerSlots, MhgatSlots, Model, ModelConfig, ModelError, ParamLayout, FusionSlots};
use crate::data::{ItemId, UserId};
use crate::numerics::{concat_cols, concat_rows, Tape, Tensor, Var};

/// Who is being encoded; decides which long-term ablations apply.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EncodeRole {
    Target,
    Neighbour,
}

/// Parameters recorded on one tape, indexed by slot.
pub struct Bound<'t> {
    vars: Vec<Var<'t>>,
}

impl<'t> Bound<'t> {
    /// Trainable leaves sharing storage with the model.
    pub fn trainable(tape: &'t Tape, model: &Model) -> Self {
        Self {
            vars: model.params.tensors.iter().map(|t| tape.param_shared(t)).collect(),
        }
    }

    /// Constant leaves; nothing is differentiated.
    pub fn frozen(tape: &'t Tape, model: &Model) -> Self {
        Self {
            vars: model.params.tensors.iter().map(|t| tape.constant_shared(t)).collect(),
        }
    }

    pub fn get(&self, slot: usize) -> Var<'t> {
        self.vars[slot]
    }

    pub fn vars(&self) -> &[Var<'t>] {
        &self.vars
    }
}

/// Sinusoidal position table `[len × dim]`.
pub fn positional_encoding(len: usize, dim: usize) -> Tensor {
    Tensor::from_fn(len, dim, |pos, j| {
        let rate = 10000f64.powf((2 * (j / 2)) as f64 / dim as f64);
        let angle = pos as f64 / rate;
        if j % 2 == 0 {
            angle.sin()
        } else {
            angle.cos()
        }
    })
}

/// One forward computation over a tape.
pub struct Forward<'m, 't> {
    pub config: &'m ModelConfig,
    pub layout: &'m ParamLayout,
    pub tape: &'t Tape,
    pub bound: Bound<'t>,
    dropout: Option<RefCell<ChaCha8Rng>>,
}

impl<'m, 't> Forward<'m, 't> {
    /// Evaluation forward: frozen parameters, no dropout.
    pub fn eval(model: &'m Model, tape: &'t Tape) -> Self {
        Self {
            config: &model.config,
            layout: &model.params.layout,
            tape,
            bound: Bound::frozen(tape, model),
            dropout: None,
        }
    }

    /// Training forward. Dropout masks are drawn from `seed` when the
    /// configured rate is positive.
    pub fn train(model: &'m Model, tape: &'t Tape, seed: u64) -> Self {
        let dropout = (model.config.dropout > 0.0).then(|| RefCell::new(ChaCha8Rng::seed_from_u64(seed)));
        Self {
            config: &model.config,
            layout: &model.params.layout,
            tape,
            bound: Bound::trainable(tape, model),
            dropout,
        }
    }

    fn p(&self, slot: usize) -> Var<'t> {
        self.bound.get(slot)
    }

    fn drop(&self, x: Var<'t>) -> Result<Var<'t>, ModelError> {
        let Some(rng) = &self.dropout else {
            return Ok(x);
        };
        let rate = self.config.dropout;
        let keep = 1.0 / (1.0 - rate);
        let mut rng = rng.borrow_mut();
        let n = x.rows() * x.cols();
        let mask = (0..n)
            .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
            .collect();
        Ok(x.mul_const(mask)?)
    }

    /// Long-term interest row `[1 × d]`, or zeros under the embedding ablations.
    pub fn user_embedding(&self, user: UserId, role: EncodeRole) -> Result<Var<'t>, ModelError> {
        let ab = self.config.ablations;
        let zero = match role {
            EncodeRole::Target => ab.zero_target_embedding(),
            EncodeRole::Neighbour => ab.no_ali,
        };
        if zero {
            return Ok(self.tape.constant(Tensor::zeros(vec![1, self.config.dim])));
        }
        if user.index() >= self.config.num_users {
            return Err(ModelError::Contract(format!("user {user} outside the embedding table")));
        }
        Ok(self.p(self.layout.user_embedding).embedding_lookup(&[user.index()])?)
    }

    /// Encodes the real tokens of a session into `[n × d]`. Only the last
    /// `max_len` items are kept.
    pub fn transformer_encoder(&self, items: &[ItemId]) -> Result<Var<'t>, ModelError> {
        if items.is_empty() {
            return Err(ModelError::Contract("cannot encode an empty item list".into()));
        }
        let items = &items[items.len().saturating_sub(self.config.max_len)..];
        let mut ids = Vec::with_capacity(items.len());
        for &item in items {
            if item.index() == 0 || item.index() > self.config.num_items {
                return Err(ModelError::Contract(format!("item {item} is not a real item id")));
            }
            ids.push(item.index());
        }
        let mut x = self.p(self.layout.item_embedding).embedding_lookup(&ids)?;
        if self.config.ablations.with_pe {
            let pe = self.tape.constant(positional_encoding(ids.len(), self.config.dim));
            x = x.add(pe)?;
        }
        for layer in &self.layout.layers {
            x = self.encoder_layer(layer, x)?;
        }
        Ok(x)
    }

    /// Encoder over a padded row: positions at or past `len` come back as zero
    /// rows and never reach the real positions.
    pub fn transformer_encoder_padded(&self, input: &[ItemId], len: usize) -> Result<Var<'t>, ModelError> {
        if len == 0 || len > input.len() {
            return Err(ModelError::Contract(format!(
                "true length {len} outside 1..={}",
                input.len()
            )));
        }
        let real = self.transformer_encoder(&input[..len])?;
        if len == input.len() {
            return Ok(real);
        }
        let pad = self.tape.constant(Tensor::zeros(vec![input.len() - len, self.config.dim]));
        Ok(concat_rows(&[real, pad])?)
    }

    fn encoder_layer(&self, l: &LayerSlots, x: Var<'t>) -> Result<Var<'t>, ModelError> {
        let dk = self.config.head_dim();
        let scale = 1.0 / (dk as f64).sqrt();
        let q = x.matmul(self.p(l.wq))?.add_row(self.p(l.bq))?;
        let k = x.matmul(self.p(l.wk))?.add_row(self.p(l.bk))?;
        let v = x.matmul(self.p(l.wv))?.add_row(self.p(l.bv))?;
        let mut heads = Vec::with_capacity(self.config.heads);
        for h in 0..self.config.heads {
            let (a, b) = (h * dk, (h + 1) * dk);
            let scores = q.slice_cols(a, b)?.matmul_nt(k.slice_cols(a, b)?)?.scale(scale);
            heads.push(scores.row_softmax().matmul(v.slice_cols(a, b)?)?);
        }
        let attn = concat_cols(&heads)?.matmul(self.p(l.wo))?.add_row(self.p(l.bo))?;
        let eps = self.config.layer_norm_eps;
        let x1 = x
            .add(self.drop(attn)?)?
            .layer_norm(self.p(l.ln1_gain), self.p(l.ln1_bias), eps)?;
        let ff = x1
            .matmul(self.p(l.ff1))?
            .add_row(self.p(l.ff1_bias))?
            .relu()
            .matmul(self.p(l.ff2))?
            .add_row(self.p(l.ff2_bias))?;
        Ok(x1
            .add(self.drop(ff)?)?
            .layer_norm(self.p(l.ln2_gain), self.p(l.ln2_bias), eps)?)
    }

    /// Multi-head graph attention of one centre vector `[1 × d]` over `rows`
    /// `[m × d]`. Keys are projected, values are the raw rows sliced per head.
    pub fn mhgat(&self, slots: &MhgatSlots, query: Var<'t>, rows: Var<'t>) -> Result<Var<'t>, ModelError> {
        Ok(self.mhgat_weights(slots, query, rows)?.0)
    }

    /// As [`Forward::mhgat`], also returning each head's attention weights.
    pub fn mhgat_weights(
        &self,
        slots: &MhgatSlots,
        query: Var<'t>,
        rows: Var<'t>,
    ) -> Result<(Var<'t>, Vec<Vec<f64>>), ModelError> {
        let dk = self.config.head_dim();
        let scale = 1.0 / (dk as f64).sqrt();
        let q = query.matmul(self.p(slots.query))?;
        let k = rows.matmul(self.p(slots.key))?;
        let mut heads = Vec::with_capacity(self.config.heads);
        let mut weights = Vec::with_capacity(self.config.heads);
        for h in 0..self.config.heads {
            let (a, b) = (h * dk, (h + 1) * dk);
            let attn = q.slice_cols(a, b)?.matmul_nt(k.slice_cols(a, b)?)?.scale(scale).row_softmax();
            weights.push(attn.value().data().to_vec());
            heads.push(attn.matmul(rows.slice_cols(a, b)?)?);
        }
        let out = concat_cols(&heads)?.matmul(self.p(slots.out))?.add_row(self.p(slots.out_bias))?;
        Ok((out, weights))
    }

    /// `ReLU([h_s ; emb] · W + b)`.
    pub fn tensor_fusion(&self, slots: &FusionSlots, h_s: Var<'t>, emb: Var<'t>) -> Result<Var<'t>, ModelError> {
        Ok(h_s
            .concat_last(emb)?
            .matmul(self.p(slots.weight))?
            .add_row(self.p(slots.bias))?
            .relu())
    }

    /// Fused long- and short-term interest code `[1 × d]` of `user` given
    /// `items`.
    pub fn tegaa_encode(&self, user: UserId, items: &[ItemId], role: EncodeRole) -> Result<Var<'t>, ModelError> {
        let emb = self.user_embedding(user, role)?;
        let tokens = self.transformer_encoder(items)?;
        let h_s = self.mhgat(&self.layout.interest, emb, tokens)?;
        self.tensor_fusion(&self.layout.fusion, h_s, emb)
    }
}
