use crate::error::Result;
use crate::prob::{Categorical, RandomSource};

use super::{check_weights, DifferentiableModel};

/// `Q(1 | x) = σ(w·x + b)` over three features; `x1` is the short context and
/// `(x2, x3)` the extended context. Parameters are laid out `[w1, w2, w3, b]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LogisticModel {
    params: [f64; 4],
}

#[inline]
pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl LogisticModel {
    pub fn zeros() -> Self {
        Self { params: [0.0; 4] }
    }

    pub fn from_params(params: [f64; 4]) -> Self {
        Self { params }
    }

    /// Parameters uniform in `[-0.1, 0.1]`.
    pub fn init(rng: &mut RandomSource) -> Self {
        let mut params = [0.0; 4];
        for p in &mut params {
            *p = rng.uniform(-0.1, 0.1);
        }
        Self { params }
    }

    #[inline]
    pub fn logit(&self, x1: f64, ext: &[f64; 2]) -> f64 {
        let w = &self.params;
        w[0] * x1 + w[1] * ext[0] + w[2] * ext[1] + w[3]
    }

    /// `Q(1 | x)` without allocating a distribution.
    #[inline]
    pub fn prob_one(&self, x1: f64, ext: &[f64; 2]) -> f64 {
        sigmoid(self.logit(x1, ext))
    }
}

impl DifferentiableModel for LogisticModel {
    type Short = f64;
    type Ext = [f64; 2];

    fn num_labels(&self) -> usize {
        2
    }

    fn params(&self) -> &[f64] {
        &self.params
    }

    fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn forward(&self, x1: &f64, ext: &[f64; 2]) -> Result<Categorical> {
        let p = self.prob_one(*x1, ext);
        Ok(Categorical::from_normalized_unchecked(vec![1.0 - p, p]))
    }

    fn backward_weighted(&self, x1: &f64, ext: &[f64; 2], weights: &[f64], grad: &mut [f64]) -> Result<()> {
        check_weights(weights, 2)?;
        let p = self.prob_one(*x1, ext);
        // d/dz of -(w0 ln(1-σ) + w1 ln σ)
        let dz = (weights[0] + weights[1]) * p - weights[1];
        grad[0] += dz * x1;
        grad[1] += dz * ext[0];
        grad[2] += dz * ext[1];
        grad[3] += dz;
        Ok(())
    }
}
