use super::{Tensor, TensorError};

/// Adam moments for a fixed, ordered list of parameters.
///
/// Betas and epsilon default to 0.9, 0.999 and 1e-8.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub first: Vec<Vec<f64>>,
    pub second: Vec<Vec<f64>>,
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    pub fn new(sizes: impl IntoIterator<Item = usize>) -> Self {
        Self::with_hyper(sizes, 0.9, 0.999, 1e-8)
    }

    pub fn with_hyper(
        sizes: impl IntoIterator<Item = usize>,
        beta1: f64,
        beta2: f64,
        epsilon: f64,
    ) -> Self {
        let (first, second) = sizes
            .into_iter()
            .map(|n| (vec![0.0; n], vec![0.0; n]))
            .unzip();
        Self {
            first,
            second,
            step: 0,
            beta1,
            beta2,
            epsilon,
        }
    }

    /// One bias-corrected Adam update of every parameter.
    pub fn update(
        &mut self,
        params: &mut [&mut Tensor],
        grads: &[&Tensor],
        lr: f64,
    ) -> Result<(), TensorError> {
        if params.len() != grads.len() || params.len() != self.first.len() {
            return Err(TensorError::ShapeMismatch {
                op: "adam_step",
                left: vec![params.len()],
                right: vec![grads.len(), self.first.len()],
            });
        }
        for ((p, g), m) in params.iter().zip(grads).zip(&self.first) {
            if p.shape() != g.shape() || p.len() != m.len() {
                return Err(TensorError::ShapeMismatch {
                    op: "adam_step",
                    left: p.shape().to_vec(),
                    right: g.shape().to_vec(),
                });
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let (m, v) = (&mut self.first[i], &mut self.second[i]);
            for ((w, &gj), (mj, vj)) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.iter_mut().zip(v.iter_mut()))
            {
                *mj = self.beta1 * *mj + (1.0 - self.beta1) * gj;
                *vj = self.beta2 * *vj + (1.0 - self.beta2) * gj * gj;
                let mhat = *mj / c1;
                let vhat = *vj / c2;
                *w -= lr * mhat / (vhat.sqrt() + self.epsilon);
            }
        }
        Ok(())
    }
}

/// Short alias used by the trainer.
pub type Adam = AdamState;

/// Linear warm-up to `peak_lr` over `warmup_steps`, constant afterwards.
pub fn warmup_lr(step: usize, warmup_steps: usize, peak_lr: f64) -> Result<f64, TensorError> {
    if warmup_steps == 0 {
        return Err(TensorError::BadWarmup(warmup_steps));
    }
    let step = step.max(1);
    Ok(peak_lr * (step as f64 / warmup_steps as f64).min(1.0))
}
