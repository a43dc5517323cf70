//! Training objectives: cross-entropy, IMM-regularized, noising (reverse-KD)
//! and interpolation, plus count-level noising analysis and the tabular
//! consistency checks.

mod consistency;
mod counts;

pub use consistency::{
    counterexample_g, counterexample_instance, induced_table, verify_imm_consistency, ConsistencyReport, CounterexampleInstance,
    TabularJoint,
};
pub use counts::{expected_noised_counts, kn_noising_counts, simulate_noised_counts, CountTable, NoisingCase, NoisingSpec};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::induction::{accumulate_crosstalk_gradient, accumulate_serialized_gradient, ContextSupport, SerializedState};
use crate::models::DifferentiableModel;
use crate::prob::{floored, Categorical, Dataset, RandomSource};
use crate::restricted::RestrictedModel;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum ObjectiveMode {
    None,
    /// Induced model from the supplied [`ContextSupport`] (exact, sampled or kernel).
    Imm,
    /// Correction-factor gradient against a [`SerializedState`].
    ImmSerialized,
    Noising,
    /// Trains as plain cross-entropy; mixing happens at prediction time.
    Interpolation {
        beta: f64,
    },
}

/// How the two terms are weighted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Combination {
    /// `primary + λ·secondary`
    Additive,
    /// `primary/(1+λ) + λ/(1+λ)·secondary`
    Convex,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveConfig {
    pub lambda: f64,
    pub mode: ObjectiveMode,
    pub clip_primary: Option<f64>,
    pub clip_secondary: Option<f64>,
    pub combination: Combination,
}

impl ObjectiveConfig {
    pub fn new(mode: ObjectiveMode, lambda: f64) -> Self {
        Self { lambda, mode, clip_primary: None, clip_secondary: None, combination: Combination::Additive }
    }

    pub fn baseline() -> Self {
        Self::new(ObjectiveMode::None, 0.0)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(invalid(format!("lambda must be finite and non-negative, got {}", self.lambda)));
        }
        for c in [self.clip_primary, self.clip_secondary].into_iter().flatten() {
            if !(c >= 0.0) {
                return Err(invalid(format!("clip norm must be non-negative, got {c}")));
            }
        }
        if let ObjectiveMode::Interpolation { beta } = self.mode {
            if !(0.0..=1.0).contains(&beta) {
                return Err(invalid(format!("interpolation beta must lie in [0, 1], got {beta}")));
            }
        }
        Ok(())
    }

    fn has_secondary(&self) -> bool {
        self.lambda > 0.0 && matches!(self.mode, ObjectiveMode::Imm | ObjectiveMode::ImmSerialized | ObjectiveMode::Noising)
    }

    /// Weights applied to (primary, secondary).
    pub fn term_weights(&self) -> (f64, f64) {
        if !self.has_secondary() {
            return (1.0, 0.0);
        }
        match self.combination {
            Combination::Additive => (1.0, self.lambda),
            Combination::Convex => (1.0 / (1.0 + self.lambda), self.lambda / (1.0 + self.lambda)),
        }
    }
}

/// What the secondary term needs besides the model and data.
pub struct SecondarySource<'a, M: DifferentiableModel> {
    pub support: Option<&'a dyn ContextSupport<M>>,
    pub serialized: Option<&'a SerializedState<M>>,
}

impl<M: DifferentiableModel> Default for SecondarySource<'_, M> {
    fn default() -> Self {
        Self { support: None, serialized: None }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossAndGrad {
    pub loss: f64,
    pub primary: f64,
    pub secondary: f64,
    pub grad: Vec<f64>,
}

/// Rescales `g` in place to norm at most `bound`.
pub fn clip_norm(g: &mut [f64], bound: f64) {
    let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > bound {
        let s = if norm > 0.0 { bound / norm } else { 0.0 };
        g.iter_mut().for_each(|v| *v *= s);
    }
}

/// Mean cross-entropy over the batch and the configured secondary term, each
/// clipped on its own, then combined.
#[allow(clippy::too_many_arguments)]
pub fn total_loss_and_grad<M, T>(
    model: &M,
    dataset: &Dataset<M::Short, M::Ext>,
    batch: &[usize],
    target: &T,
    config: &ObjectiveConfig,
    source: &SecondarySource<'_, M>,
    rng: &mut RandomSource,
) -> Result<LossAndGrad>
where
    M: DifferentiableModel,
    T: RestrictedModel<M::Short> + ?Sized,
{
    if batch.is_empty() {
        return Err(invalid("batch must be non-empty"));
    }
    config.validate()?;
    let scale = 1.0 / batch.len() as f64;
    let labels = model.num_labels();

    let mut gp = model.zero_grad();
    let mut primary = 0.0;
    let mut onehot = vec![0.0; labels];
    for &t in batch {
        let r = dataset.record(t);
        let q = model.forward(&r.short_ctx, &r.ext_ctx)?;
        primary -= scale * floored(q.prob(r.label)).ln();
        onehot[r.label] = scale;
        model.backward_weighted(&r.short_ctx, &r.ext_ctx, &onehot, &mut gp)?;
        onehot[r.label] = 0.0;
    }

    let (wp, ws) = config.term_weights();
    let mut secondary = 0.0;
    let mut gs = model.zero_grad();
    if config.has_secondary() {
        for &t in batch {
            let r = dataset.record(t);
            let tgt = target.predict(&r.short_ctx)?;
            secondary += scale
                * match config.mode {
                    ObjectiveMode::Imm => {
                        let support = source.support.ok_or_else(|| invalid("IMM mode needs a context support"))?;
                        let (recs, mix) = support.support(dataset, t, rng)?;
                        let exts: Vec<&M::Ext> = recs.iter().map(|&i| &dataset.record(i).ext_ctx).collect();
                        accumulate_crosstalk_gradient(model, &r.short_ctx, &exts, &mix, &tgt, scale, &mut gs, None)?
                    }
                    ObjectiveMode::ImmSerialized => {
                        let st = source.serialized.ok_or_else(|| invalid("serialized IMM mode needs a refreshed state"))?;
                        accumulate_serialized_gradient(model, st, t, &r.short_ctx, &r.ext_ctx, &tgt, scale, &mut gs)?
                    }
                    ObjectiveMode::Noising => {
                        let q = model.forward(&r.short_ctx, &r.ext_ctx)?;
                        let w: Vec<f64> = tgt.probs().iter().map(|p| p * scale).collect();
                        model.backward_weighted(&r.short_ctx, &r.ext_ctx, &w, &mut gs)?;
                        tgt.cross_entropy(&q)
                    }
                    ObjectiveMode::None | ObjectiveMode::Interpolation { .. } => unreachable!(),
                };
        }
    }

    if let Some(c) = config.clip_primary {
        clip_norm(&mut gp, c);
    }
    if let Some(c) = config.clip_secondary {
        clip_norm(&mut gs, c);
    }
    for (a, b) in gp.iter_mut().zip(&gs) {
        *a = wp * *a + ws * b;
    }
    Ok(LossAndGrad { loss: wp * primary + ws * secondary, primary, secondary, grad: gp })
}

/// Cross-entropy plus `λ·(-Σ_y P̂(y|x̄) ln Q(y|x))`, additive.
pub fn noising_loss_and_grad<M, T>(
    model: &M,
    dataset: &Dataset<M::Short, M::Ext>,
    batch: &[usize],
    target: &T,
    lambda: f64,
) -> Result<LossAndGrad>
where
    M: DifferentiableModel,
    T: RestrictedModel<M::Short> + ?Sized,
{
    let config = ObjectiveConfig::new(ObjectiveMode::Noising, lambda);
    // noising draws nothing, the stream is never touched
    let mut rng = RandomSource::new(0, 0);
    total_loss_and_grad(model, dataset, batch, target, &config, &SecondarySource::default(), &mut rng)
}

/// `(1-β)·Q(·|x) + β·P̂(·|x̄)`.
pub fn interpolation_predict<M, T>(model: &M, target: &T, beta: f64, short: &M::Short, ext: &M::Ext) -> Result<Categorical>
where
    M: DifferentiableModel,
    T: RestrictedModel<M::Short> + ?Sized,
{
    if !(0.0..=1.0).contains(&beta) {
        return Err(invalid(format!("interpolation beta must lie in [0, 1], got {beta}")));
    }
    model.forward(short, ext)?.mix(&target.predict(short)?, beta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::induction::{imm_component, induce_exact, DiscreteSupport};
    use crate::models::{relative_error, TabularSoftmax};
    use crate::prob::{build_index, SampleRecord};
    use crate::restricted::TabularRestricted;

    fn setup() -> (TabularSoftmax, Dataset<usize, usize>, TabularRestricted) {
        let mut rng = RandomSource::new(17, 0);
        let m = TabularSoftmax::random(3, 3, 3, 1.5, &mut rng);
        let recs = (0..12).map(|i| SampleRecord::new(i % 3, (i * 7 / 3) % 3, (i * 5) % 3)).collect();
        let target = TabularRestricted::new(vec![
            Categorical::new(vec![0.2, 0.5, 0.3]).unwrap(),
            Categorical::new(vec![0.6, 0.2, 0.2]).unwrap(),
            Categorical::new(vec![0.1, 0.1, 0.8]).unwrap(),
        ])
        .unwrap();
        (m, Dataset::new(recs).unwrap(), target)
    }

    #[test]
    fn lambda_zero_is_plain_cross_entropy() {
        let (m, d, target) = setup();
        let idx = build_index(&d);
        let support = DiscreteSupport { index: &idx, k: Some(3) };
        let batch: Vec<usize> = (0..d.n()).collect();
        let src = SecondarySource { support: Some(&support), serialized: None };
        let base = total_loss_and_grad(&m, &d, &batch, &target, &ObjectiveConfig::baseline(), &src, &mut RandomSource::new(1, 0)).unwrap();
        let off = total_loss_and_grad(
            &m,
            &d,
            &batch,
            &target,
            &ObjectiveConfig::new(ObjectiveMode::Imm, 0.0),
            &src,
            &mut RandomSource::new(1, 0),
        )
        .unwrap();
        assert_eq!(base, off);
    }

    #[test]
    fn full_bucket_loss_is_ce_plus_exact_imm() {
        let (m, d, target) = setup();
        let idx = build_index(&d);
        let support = DiscreteSupport { index: &idx, k: None };
        let batch: Vec<usize> = (0..d.n()).collect();
        let src = SecondarySource { support: Some(&support), serialized: None };
        let lambda = 0.7;
        let got = total_loss_and_grad(
            &m,
            &d,
            &batch,
            &target,
            &ObjectiveConfig::new(ObjectiveMode::Imm, lambda),
            &src,
            &mut RandomSource::new(1, 0),
        )
        .unwrap();
        let mut ce = 0.0;
        let mut imm = 0.0;
        for r in d.records() {
            ce -= m.forward(&r.short_ctx, &r.ext_ctx).unwrap().prob(r.label).ln();
            let ind = induce_exact(&m, &idx, &d, &r.short_ctx).unwrap();
            imm += imm_component(&target.predict(&r.short_ctx).unwrap(), &ind);
        }
        let n = d.n() as f64;
        assert!((got.loss - (ce / n + lambda * imm / n)).abs() < 1e-12);
    }

    #[test]
    fn separate_clipping_contract() {
        let (m, d, target) = setup();
        let batch: Vec<usize> = (0..d.n()).collect();
        let mut cfg = ObjectiveConfig::new(ObjectiveMode::Noising, 0.8);
        let src = SecondarySource::default();
        let mut rng = RandomSource::new(0, 0);
        let full = total_loss_and_grad(&m, &d, &batch, &target, &cfg, &src, &mut rng).unwrap();
        let plain = total_loss_and_grad(&m, &d, &batch, &target, &ObjectiveConfig::baseline(), &src, &mut rng).unwrap();

        cfg.clip_primary = Some(f64::INFINITY);
        cfg.clip_secondary = Some(0.0);
        let only_primary = total_loss_and_grad(&m, &d, &batch, &target, &cfg, &src, &mut rng).unwrap();
        assert!(relative_error(&only_primary.grad, &plain.grad) < 1e-15);

        cfg.clip_primary = Some(0.0);
        cfg.clip_secondary = Some(f64::INFINITY);
        let only_secondary = total_loss_and_grad(&m, &d, &batch, &target, &cfg, &src, &mut rng).unwrap();
        let expect: Vec<f64> = full.grad.iter().zip(&plain.grad).map(|(f, p)| f - p).collect();
        assert!(relative_error(&only_secondary.grad, &expect) < 1e-12);

        cfg.clip_primary = Some(0.0);
        cfg.clip_secondary = Some(0.0);
        let none = total_loss_and_grad(&m, &d, &batch, &target, &cfg, &src, &mut rng).unwrap();
        assert!(none.grad.iter().all(|g| *g == 0.0));
    }

    #[test]
    fn noising_equals_imm_when_extended_context_is_ignored() {
        let logits = vec![0.4, -0.2, 0.1, 0.4, -0.2, 0.1, 0.4, -0.2, 0.1, -1.0, 0.0, 1.0, -1.0, 0.0, 1.0, -1.0, 0.0, 1.0];
        let m = TabularSoftmax::from_logits(2, 3, 3, logits).unwrap();
        let d = Dataset::new((0..6).map(|i| SampleRecord::new(i % 2, i % 3, 0)).collect()).unwrap();
        let target =
            TabularRestricted::new(vec![Categorical::new(vec![0.2, 0.5, 0.3]).unwrap(), Categorical::new(vec![0.6, 0.2, 0.2]).unwrap()])
                .unwrap();
        let idx = build_index(&d);
        let support = DiscreteSupport { index: &idx, k: None };
        let batch: Vec<usize> = (0..6).collect();
        let noise = noising_loss_and_grad(&m, &d, &batch, &target, 1.0).unwrap();
        let imm = total_loss_and_grad(
            &m,
            &d,
            &batch,
            &target,
            &ObjectiveConfig::new(ObjectiveMode::Imm, 1.0),
            &SecondarySource { support: Some(&support), serialized: None },
            &mut RandomSource::new(0, 0),
        )
        .unwrap();
        assert!((noise.secondary - imm.secondary).abs() < 1e-14);
    }

    #[test]
    fn interpolation_arithmetic() {
        let m = TabularSoftmax::from_logits(1, 1, 2, vec![(0.8f64).ln(), (0.2f64).ln()]).unwrap();
        let t = TabularRestricted::new(vec![Categorical::new(vec![0.4, 0.6]).unwrap()]).unwrap();
        let p = interpolation_predict(&m, &t, 0.5, &0, &0).unwrap();
        assert!((p.prob(0) - 0.6).abs() < 1e-12);
        assert!((interpolation_predict(&m, &t, 0.0, &0, &0).unwrap().prob(0) - 0.8).abs() < 1e-12);
        assert!((interpolation_predict(&m, &t, 1.0, &0, &0).unwrap().prob(0) - 0.4).abs() < 1e-12);
        assert!(interpolation_predict(&m, &t, 1.5, &0, &0).is_err());
    }

    #[test]
    fn convex_weights() {
        let mut c = ObjectiveConfig::new(ObjectiveMode::Imm, 1.5);
        c.combination = Combination::Convex;
        let (a, b) = c.term_weights();
        assert!((a - 0.4).abs() < 1e-15 && (b - 0.6).abs() < 1e-15);
        assert_eq!(ObjectiveConfig::new(ObjectiveMode::None, 3.0).term_weights(), (1.0, 0.0));
    }
}
