//! Differentiable full models with hand-written gradients.
//!
//! Every model exposes one backward primitive: the gradient of the weighted
//! log-loss `-Σ_y w(y) ln Q(y | x̄, x̃)` for arbitrary non-negative weights.
//! Cross-entropy, noising, crosstalk-weighted IMM passes and the serialized
//! correction all reduce to it.

mod lm;
mod logistic;
mod tabular;

pub use lm::{TinyNeuralLM, MAX_VOCAB};
pub use logistic::LogisticModel;
pub use tabular::{TabularSoftmax, TabularSoftmaxPolicy};

use crate::error::{invalid, ImmError, Result};
use crate::prob::{floored, Categorical};

pub trait DifferentiableModel: Clone + Send + Sync {
    type Short: Sync;
    type Ext: Sync;

    fn num_labels(&self) -> usize;
    fn params(&self) -> &[f64];
    fn params_mut(&mut self) -> &mut [f64];

    fn forward(&self, short: &Self::Short, ext: &Self::Ext) -> Result<Categorical>;

    /// Adds the gradient of `-Σ_y weights[y] ln Q(y | short, ext)` into `grad`.
    fn backward_weighted(&self, short: &Self::Short, ext: &Self::Ext, weights: &[f64], grad: &mut [f64]) -> Result<()>;

    fn num_params(&self) -> usize {
        self.params().len()
    }

    fn zero_grad(&self) -> Vec<f64> {
        vec![0.0; self.num_params()]
    }
}

/// `-Σ_y w(y) ln Q(y)` with the floor applied.
pub fn weighted_log_loss(q: &Categorical, weights: &[f64]) -> f64 {
    q.probs().iter().zip(weights).filter(|(_, &w)| w != 0.0).map(|(&p, &w)| -w * floored(p).ln()).sum()
}

/// Gradient of the weighted log-loss as a fresh vector.
pub fn backward_weighted<M: DifferentiableModel>(model: &M, short: &M::Short, ext: &M::Ext, weights: &[f64]) -> Result<Vec<f64>> {
    let mut g = model.zero_grad();
    model.backward_weighted(short, ext, weights, &mut g)?;
    Ok(g)
}

pub(crate) fn check_weights(weights: &[f64], labels: usize) -> Result<()> {
    if weights.len() != labels {
        return Err(invalid(format!("{} weights for {labels} labels", weights.len())));
    }
    if weights.iter().any(|w| !w.is_finite()) {
        return Err(ImmError::NonFinite("loss weights"));
    }
    Ok(())
}

/// `θ ← θ − lr·g`. Rejects non-finite gradients without touching the model.
pub fn sgd_step<M: DifferentiableModel>(model: &mut M, grad: &[f64], lr: f64) -> Result<()> {
    if grad.len() != model.num_params() {
        return Err(invalid(format!("gradient has {} entries, model has {}", grad.len(), model.num_params())));
    }
    if grad.iter().any(|g| !g.is_finite()) {
        return Err(ImmError::NonFinite("gradient"));
    }
    for (p, g) in model.params_mut().iter_mut().zip(grad) {
        *p -= lr * g;
    }
    Ok(())
}

/// Central finite differences (step `1e-5`) of the weighted log-loss, compared
/// against `backward_weighted`. Returns `‖g − g_fd‖₂ / max(‖g‖₂, ‖g_fd‖₂)`.
pub fn fd_check<M: DifferentiableModel>(model: &M, short: &M::Short, ext: &M::Ext, weights: &[f64]) -> Result<f64> {
    let analytic = backward_weighted(model, short, ext, weights)?;
    let numeric = finite_difference_grad(model, 1e-5, |m| Ok(weighted_log_loss(&m.forward(short, ext)?, weights)))?;
    Ok(relative_error(&analytic, &numeric))
}

/// Central-difference gradient of an arbitrary scalar function of the parameters.
pub fn finite_difference_grad<M: DifferentiableModel>(model: &M, step: f64, f: impl Fn(&M) -> Result<f64>) -> Result<Vec<f64>> {
    let mut probe = model.clone();
    let mut out = Vec::with_capacity(model.num_params());
    for i in 0..model.num_params() {
        let orig = probe.params()[i];
        probe.params_mut()[i] = orig + step;
        let up = f(&probe)?;
        probe.params_mut()[i] = orig - step;
        let down = f(&probe)?;
        probe.params_mut()[i] = orig;
        out.push((up - down) / (2.0 * step));
    }
    Ok(out)
}

pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    let scale = na.max(nb);
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

const SNAPSHOT_MAGIC: &[u8; 4] = b"IMMP";
const SNAPSHOT_VERSION: u32 = 1;

/// Flat little-endian parameter dump: magic, version, count, then `f64`s.
pub fn encode_params(params: &[f64]) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + 8 * params.len());
    out.extend_from_slice(SNAPSHOT_MAGIC);
    out.extend_from_slice(&SNAPSHOT_VERSION.to_le_bytes());
    out.extend_from_slice(&(params.len() as u64).to_le_bytes());
    for p in params {
        out.extend_from_slice(&p.to_le_bytes());
    }
    out
}

pub fn decode_params(bytes: &[u8]) -> Result<Vec<f64>> {
    if bytes.len() < 16 || &bytes[..4] != SNAPSHOT_MAGIC {
        return Err(invalid("not a parameter snapshot"));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != SNAPSHOT_VERSION {
        return Err(invalid(format!("unsupported snapshot version {version}")));
    }
    let n = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let body = &bytes[16..];
    if body.len() != n * 8 {
        return Err(invalid(format!("snapshot declares {n} parameters but holds {} bytes", body.len())));
    }
    Ok(body.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
}

/// Loads a snapshot into a model of matching size.
pub fn load_params<M: DifferentiableModel>(model: &mut M, bytes: &[u8]) -> Result<()> {
    let params = decode_params(bytes)?;
    if params.len() != model.num_params() {
        return Err(invalid(format!("snapshot has {} parameters, model has {}", params.len(), model.num_params())));
    }
    model.params_mut().copy_from_slice(&params);
    Ok(())
}
