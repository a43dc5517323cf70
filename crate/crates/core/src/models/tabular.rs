use crate::error::{invalid, Result};
use crate::prob::{Categorical, RandomSource};

use super::{check_weights, DifferentiableModel};

/// One free logit per (short context, extended context, label).
#[derive(Debug, Clone, PartialEq)]
pub struct TabularSoftmax {
    n_short: usize,
    n_ext: usize,
    n_labels: usize,
    logits: Vec<f64>,
}

/// Grid policy: short context is the x coordinate, extended context the y
/// coordinate, labels are actions.
pub type TabularSoftmaxPolicy = TabularSoftmax;

impl TabularSoftmax {
    pub fn zeros(n_short: usize, n_ext: usize, n_labels: usize) -> Self {
        assert!(n_short > 0 && n_ext > 0 && n_labels > 0, "tabular model needs non-empty dimensions");
        Self { n_short, n_ext, n_labels, logits: vec![0.0; n_short * n_ext * n_labels] }
    }

    /// Logits uniform in `[-scale, scale]`.
    pub fn random(n_short: usize, n_ext: usize, n_labels: usize, scale: f64, rng: &mut RandomSource) -> Self {
        let mut m = Self::zeros(n_short, n_ext, n_labels);
        for l in &mut m.logits {
            *l = rng.uniform(-scale, scale);
        }
        m
    }

    pub fn from_logits(n_short: usize, n_ext: usize, n_labels: usize, logits: Vec<f64>) -> Result<Self> {
        if logits.len() != n_short * n_ext * n_labels {
            return Err(invalid(format!("{} logits for a {n_short}x{n_ext}x{n_labels} table", logits.len())));
        }
        Ok(Self { n_short, n_ext, n_labels, logits })
    }

    pub fn n_short(&self) -> usize {
        self.n_short
    }

    pub fn n_ext(&self) -> usize {
        self.n_ext
    }

    fn offset(&self, short: usize, ext: usize) -> Result<usize> {
        if short >= self.n_short || ext >= self.n_ext {
            return Err(invalid(format!("context ({short}, {ext}) outside {}x{} table", self.n_short, self.n_ext)));
        }
        Ok((short * self.n_ext + ext) * self.n_labels)
    }

    fn probs_at(&self, off: usize) -> Vec<f64> {
        let row = &self.logits[off..off + self.n_labels];
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut p: Vec<f64> = row.iter().map(|z| (z - max).exp()).collect();
        let s: f64 = p.iter().sum();
        p.iter_mut().for_each(|v| *v /= s);
        p
    }
}

impl DifferentiableModel for TabularSoftmax {
    type Short = usize;
    type Ext = usize;

    fn num_labels(&self) -> usize {
        self.n_labels
    }

    fn params(&self) -> &[f64] {
        &self.logits
    }

    fn params_mut(&mut self) -> &mut [f64] {
        &mut self.logits
    }

    fn forward(&self, short: &usize, ext: &usize) -> Result<Categorical> {
        let off = self.offset(*short, *ext)?;
        Ok(Categorical::from_normalized_unchecked(self.probs_at(off)))
    }

    fn backward_weighted(&self, short: &usize, ext: &usize, weights: &[f64], grad: &mut [f64]) -> Result<()> {
        check_weights(weights, self.n_labels)?;
        let off = self.offset(*short, *ext)?;
        let p = self.probs_at(off);
        let mass: f64 = weights.iter().sum();
        for y in 0..self.n_labels {
            grad[off + y] += mass * p[y] - weights[y];
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{backward_weighted, fd_check};

    #[test]
    fn uniform_logits_give_uniform_actions() {
        let m = TabularSoftmaxPolicy::zeros(11, 11, 4);
        assert_eq!(m.forward(&3, &9).unwrap().probs(), &[0.25; 4]);
    }

    #[test]
    fn out_of_range_context_is_an_error() {
        let m = TabularSoftmax::zeros(2, 3, 2);
        assert!(m.forward(&2, &0).is_err());
        assert!(m.forward(&0, &3).is_err());
        assert!(TabularSoftmax::from_logits(2, 2, 2, vec![0.0; 7]).is_err());
    }

    #[test]
    fn gradient_touches_only_its_cell() {
        let mut rng = RandomSource::new(5, 0);
        let m = TabularSoftmax::random(3, 4, 5, 1.0, &mut rng);
        let g = backward_weighted(&m, &1, &2, &[0.1, 0.2, 0.0, 0.5, 0.3]).unwrap();
        let off = (4 + 2) * 5;
        for (i, v) in g.iter().enumerate() {
            if !(off..off + 5).contains(&i) {
                assert_eq!(*v, 0.0);
            }
        }
    }

    #[test]
    fn finite_differences_agree() {
        let mut rng = RandomSource::new(31, 0);
        for _ in 0..100 {
            let m = TabularSoftmax::random(3, 3, 4, 3.0, &mut rng);
            let w: Vec<f64> = (0..4).map(|_| rng.uniform(0.0, 1.0)).collect();
            let (s, e) = (rng.index(3), rng.index(3));
            assert!(fd_check(&m, &s, &e, &w).unwrap() < 1e-4);
        }
    }
}
