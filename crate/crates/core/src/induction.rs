//! The learned induced model: the full model averaged over extended contexts
//! that share a short context, by exact enumeration, sampling, or a Laplace
//! kernel on a continuous short context. Also the IMM gradient paths.
//!
//! Gradients of `-Σ_y P̂(y) ln Σ_i m_i Q(y | x̄, x̃_i)` are computed as a sum of
//! per-sample weighted log-loss passes with constant crosstalk weights
//! `C_i(y) = m_i Q_i(y) / Σ_j m_j Q_j(y)`. Only one backward instance and one
//! gradient accumulator are live at a time.

use std::collections::HashMap;
use std::fmt::{Debug, Write as _};
use std::hash::Hash;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, ImmError, Result};
use crate::models::DifferentiableModel;
use crate::prob::{floored, sample_bucket, Categorical, Dataset, RandomSource, ShortContextIndex, PROB_FLOOR};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InductionMethod {
    Exact,
    Sampled { k: usize },
    Kernel { alpha: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct InducedDistribution {
    pub dist: Categorical,
    pub method: InductionMethod,
    pub support_size: usize,
}

/// Mixture of `Q(· | short, ext_t)` over the given records.
fn average_over<M: DifferentiableModel>(
    model: &M,
    dataset: &Dataset<M::Short, M::Ext>,
    short: &M::Short,
    support: &[usize],
    mix: Option<&[f64]>,
) -> Result<Categorical> {
    let mut acc = vec![0.0; model.num_labels()];
    let uniform = 1.0 / support.len() as f64;
    for (i, &t) in support.iter().enumerate() {
        let m = mix.map_or(uniform, |w| w[i]);
        let q = model.forward(short, &dataset.record(t).ext_ctx)?;
        for (a, p) in acc.iter_mut().zip(q.probs()) {
            *a += m * p;
        }
    }
    Categorical::from_weights(acc)
}

fn bucket_of<'a, S: Hash + Eq + Clone + Debug>(index: &'a ShortContextIndex<S>, short: &S) -> Result<&'a [usize]> {
    match index.bucket(short) {
        Some(b) if !b.is_empty() => Ok(b),
        _ => Err(ImmError::UnseenContext(format!("{short:?}"))),
    }
}

/// Uniform average over every record in the short context's bucket.
pub fn induce_exact<M>(
    model: &M,
    index: &ShortContextIndex<M::Short>,
    dataset: &Dataset<M::Short, M::Ext>,
    short: &M::Short,
) -> Result<InducedDistribution>
where
    M: DifferentiableModel,
    M::Short: Hash + Eq + Clone + Debug,
{
    let bucket = bucket_of(index, short)?;
    Ok(InducedDistribution {
        dist: average_over(model, dataset, short, bucket, None)?,
        method: InductionMethod::Exact,
        support_size: bucket.len(),
    })
}

/// Average over `k` with-replacement draws from the bucket.
pub fn induce_sampled<M>(
    model: &M,
    index: &ShortContextIndex<M::Short>,
    dataset: &Dataset<M::Short, M::Ext>,
    short: &M::Short,
    k: usize,
    rng: &mut RandomSource,
) -> Result<InducedDistribution>
where
    M: DifferentiableModel,
    M::Short: Hash + Eq + Clone + Debug,
{
    let draws = sample_bucket(index, short, k, rng)?;
    induce_from_records(model, dataset, short, &draws, InductionMethod::Sampled { k })
}

/// Uniform average over an explicit list of records (repeats allowed).
pub fn induce_from_records<M: DifferentiableModel>(
    model: &M,
    dataset: &Dataset<M::Short, M::Ext>,
    short: &M::Short,
    records: &[usize],
    method: InductionMethod,
) -> Result<InducedDistribution> {
    if records.is_empty() {
        return Err(invalid("induction needs at least one extended context"));
    }
    Ok(InducedDistribution { dist: average_over(model, dataset, short, records, None)?, method, support_size: records.len() })
}

/// Soft nearest-neighbour weights `exp(-α |x1_t - x1|)` on a scalar short context.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LaplaceKernelInducer {
    pub alpha: f64,
}

impl Default for LaplaceKernelInducer {
    fn default() -> Self {
        Self { alpha: 1.0 }
    }
}

impl LaplaceKernelInducer {
    pub fn new(alpha: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(invalid(format!("kernel alpha must be positive, got {alpha}")));
        }
        Ok(Self { alpha })
    }

    /// Normalized weights over all records for query `x1`.
    pub fn weights<E>(&self, dataset: &Dataset<f64, E>, x1: f64) -> Vec<f64> {
        let mut w: Vec<f64> = dataset.records().iter().map(|r| (-self.alpha * (r.short_ctx - x1).abs()).exp()).collect();
        let s: f64 = w.iter().sum();
        w.iter_mut().for_each(|v| *v /= s);
        w
    }
}

/// Kernel-weighted average of `Q(· | x1, x̃_t)` over every record.
pub fn induce_kernel<M>(model: &M, dataset: &Dataset<f64, M::Ext>, x1: f64, inducer: &LaplaceKernelInducer) -> Result<InducedDistribution>
where
    M: DifferentiableModel<Short = f64>,
{
    let w = inducer.weights(dataset, x1);
    let all: Vec<usize> = (0..dataset.n()).collect();
    Ok(InducedDistribution {
        dist: average_over(model, dataset, &x1, &all, Some(&w))?,
        method: InductionMethod::Kernel { alpha: inducer.alpha },
        support_size: dataset.n(),
    })
}

/// Where the extended contexts for record `t`'s induced model come from.
pub trait ContextSupport<M: DifferentiableModel>: Sync {
    /// Record indices and mixture weights (summing to 1) for record `t`.
    fn support(&self, dataset: &Dataset<M::Short, M::Ext>, t: usize, rng: &mut RandomSource) -> Result<(Vec<usize>, Vec<f64>)>;
}

/// Bucket of the record's short context, enumerated (`k = None`) or sampled.
pub struct DiscreteSupport<'a, S: Hash + Eq> {
    pub index: &'a ShortContextIndex<S>,
    pub k: Option<usize>,
}

impl<M> ContextSupport<M> for DiscreteSupport<'_, M::Short>
where
    M: DifferentiableModel,
    M::Short: Hash + Eq + Clone + Debug,
{
    fn support(&self, dataset: &Dataset<M::Short, M::Ext>, t: usize, rng: &mut RandomSource) -> Result<(Vec<usize>, Vec<f64>)> {
        let short = &dataset.record(t).short_ctx;
        let recs = match self.k {
            None => bucket_of(self.index, short)?.to_vec(),
            Some(k) => sample_bucket(self.index, short, k, rng)?,
        };
        let m = 1.0 / recs.len() as f64;
        let n = recs.len();
        Ok((recs, vec![m; n]))
    }
}

/// All records, Laplace-weighted around the record's own scalar short context.
pub struct KernelSupport {
    pub inducer: LaplaceKernelInducer,
}

impl<M: DifferentiableModel<Short = f64>> ContextSupport<M> for KernelSupport {
    fn support(&self, dataset: &Dataset<f64, M::Ext>, t: usize, _rng: &mut RandomSource) -> Result<(Vec<usize>, Vec<f64>)> {
        let w = self.inducer.weights(dataset, dataset.record(t).short_ctx);
        Ok(((0..dataset.n()).collect(), w))
    }
}

/// `C_i(y) = m_i Q_i(y) / Σ_j m_j Q_j(y)`, a `k × labels` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct CrosstalkWeights {
    k: usize,
    labels: usize,
    weights: Vec<f64>,
}

impl CrosstalkWeights {
    pub fn from_predictions(rows: &[Categorical], mix: &[f64]) -> Result<Self> {
        if rows.is_empty() || rows.len() != mix.len() {
            return Err(invalid(format!("{} predictions with {} mixture weights", rows.len(), mix.len())));
        }
        let labels = rows[0].len();
        let k = rows.len();
        let mut weights = vec![0.0; k * labels];
        for y in 0..labels {
            let denom: f64 = rows.iter().zip(mix).map(|(q, m)| m * floored(q.prob(y))).sum();
            for i in 0..k {
                weights[i * labels + y] = mix[i] * floored(rows[i].prob(y)) / denom;
            }
        }
        Ok(Self { k, labels, weights })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn get(&self, i: usize, y: usize) -> f64 {
        self.weights[i * self.labels + y]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.weights[i * self.labels..(i + 1) * self.labels]
    }

    /// Adds `delta` to one entry. Exists so verification can be shown to fail.
    pub fn perturb(&mut self, i: usize, y: usize, delta: f64) {
        self.weights[i * self.labels + y] += delta;
    }
}

/// Adds `scale ·` the gradient of `-Σ_y target(y) ln Σ_i mix_i Q(y | short, ext_i)`
/// into `grad`, returning the unscaled loss.
///
/// Phase one runs every forward pass and forms the crosstalk weights; phase two
/// runs one weighted backward pass per sample into the shared accumulator.
#[allow(clippy::too_many_arguments)]
pub fn accumulate_crosstalk_gradient<M: DifferentiableModel>(
    model: &M,
    short: &M::Short,
    exts: &[&M::Ext],
    mix: &[f64],
    target: &Categorical,
    scale: f64,
    grad: &mut [f64],
    tamper: Option<&dyn Fn(&mut CrosstalkWeights)>,
) -> Result<f64> {
    let rows = exts.iter().map(|e| model.forward(short, e)).collect::<Result<Vec<_>>>()?;
    let mut cross = CrosstalkWeights::from_predictions(&rows, mix)?;
    if let Some(f) = tamper {
        f(&mut cross);
    }
    let labels = model.num_labels();
    let mut induced = vec![0.0; labels];
    for (q, m) in rows.iter().zip(mix) {
        for (a, p) in induced.iter_mut().zip(q.probs()) {
            *a += m * p;
        }
    }
    let loss: f64 = target.probs().iter().zip(&induced).map(|(t, q)| if *t == 0.0 { 0.0 } else { -t * floored(*q).ln() }).sum();
    drop(rows);
    let mut w = vec![0.0; labels];
    for (i, ext) in exts.iter().enumerate() {
        for y in 0..labels {
            w[y] = scale * target.prob(y) * cross.get(i, y);
        }
        model.backward_weighted(short, ext, &w, grad)?;
    }
    Ok(loss)
}

/// Gradient of the mixture IMM component as a fresh vector, with its loss.
pub fn imm_grad_mixture<M: DifferentiableModel>(
    model: &M,
    target: &Categorical,
    short: &M::Short,
    exts: &[&M::Ext],
    mix: &[f64],
) -> Result<(f64, Vec<f64>)> {
    let mut g = model.zero_grad();
    let loss = accumulate_crosstalk_gradient(model, short, exts, mix, target, 1.0, &mut g, None)?;
    Ok((loss, g))
}

/// Gradient of `-Σ_y P̂(y) ln (1/k) Σ_i Q(y | x̄, x̃_i)`.
pub fn imm_grad_sampled<M: DifferentiableModel>(model: &M, target: &Categorical, short: &M::Short, exts: &[&M::Ext]) -> Result<Vec<f64>> {
    if exts.is_empty() {
        return Err(invalid("sampled IMM needs k >= 1 extended contexts"));
    }
    let mix = vec![1.0 / exts.len() as f64; exts.len()];
    Ok(imm_grad_mixture(model, target, short, exts, &mix)?.1)
}

/// `-Σ_y P̂(y) ln Q̂(y)`.
pub fn imm_component(target: &Categorical, induced: &InducedDistribution) -> f64 {
    target.cross_entropy(&induced.dist)
}

/// `-Σ_y P̂(y) ln Q(y | x̄, x̃)`: the full model pitted against the target.
pub fn noising_component<M: DifferentiableModel>(model: &M, target: &Categorical, short: &M::Short, ext: &M::Ext) -> Result<f64> {
    Ok(target.cross_entropy(&model.forward(short, ext)?))
}

/// Frozen snapshot `Q†` and its induced table `Q̂†`, cached per record.
#[derive(Debug, Clone)]
pub struct SerializedState<M> {
    frozen: Option<M>,
    frozen_rows: Vec<Categorical>,
    induced_rows: Vec<Categorical>,
    keys: Vec<String>,
    age: usize,
    period: usize,
}

impl<M: DifferentiableModel> SerializedState<M> {
    pub fn new(period: usize) -> Result<Self> {
        if period == 0 {
            return Err(invalid("refresh period must be at least 1"));
        }
        Ok(Self { frozen: None, frozen_rows: Vec::new(), induced_rows: Vec::new(), keys: Vec::new(), age: 0, period })
    }

    pub fn period(&self) -> usize {
        self.period
    }

    pub fn age(&self) -> usize {
        self.age
    }

    pub fn frozen(&self) -> Option<&M> {
        self.frozen.as_ref()
    }

    pub fn is_fresh(&self) -> bool {
        self.frozen.is_some()
    }

    pub fn needs_refresh(&self) -> bool {
        self.frozen.is_none() || self.age >= self.period
    }

    /// Counts one optimisation step against the refresh period.
    pub fn tick(&mut self) {
        self.age += 1;
    }

    /// `Q†(· | x_t)` and `Q̂†(· | x̄_t)` for record `t`.
    pub fn rows(&self, t: usize) -> Result<(&Categorical, &Categorical)> {
        match (self.frozen_rows.get(t), self.induced_rows.get(t)) {
            (Some(a), Some(b)) => Ok((a, b)),
            _ => Err(ImmError::MissingCacheRow(t)),
        }
    }

    fn snapshot(&mut self, model: &M, dataset: &Dataset<M::Short, M::Ext>) -> Result<()> {
        self.frozen_rows = dataset.records().iter().map(|r| model.forward(&r.short_ctx, &r.ext_ctx)).collect::<Result<_>>()?;
        self.frozen = Some(model.clone());
        self.age = 0;
        Ok(())
    }

    /// Snapshots the model and recomputes `Q̂†` by exact bucket averaging, then
    /// asserts the correction has bucket mean 1 for every label.
    pub fn refresh_exact(&mut self, model: &M, index: &ShortContextIndex<M::Short>, dataset: &Dataset<M::Short, M::Ext>) -> Result<()>
    where
        M::Short: Hash + Eq + Clone + Debug,
    {
        self.snapshot(model, dataset)?;
        let labels = model.num_labels();
        let mut per_context: HashMap<&M::Short, Categorical> = HashMap::with_capacity(index.num_contexts());
        for (short, bucket) in index.iter() {
            let mut acc = vec![0.0; labels];
            for &t in bucket {
                for (a, p) in acc.iter_mut().zip(self.frozen_rows[t].probs()) {
                    *a += p;
                }
            }
            let row = Categorical::from_weights(acc)?;
            for y in 0..labels {
                let qhat = row.prob(y);
                if qhat <= PROB_FLOOR {
                    continue;
                }
                let mean: f64 = bucket.iter().map(|&t| self.frozen_rows[t].prob(y) / qhat).sum::<f64>() / bucket.len() as f64;
                if (mean - 1.0).abs() > 1e-9 {
                    return Err(ImmError::ConstraintViolation(format!("correction mean {mean} for label {y} in context {short:?}")));
                }
            }
            per_context.insert(short, row);
        }
        self.induced_rows = dataset.records().iter().map(|r| per_context[&r.short_ctx].clone()).collect();
        self.keys = dataset.records().iter().map(|r| format!("{:?}", r.short_ctx)).collect();
        Ok(())
    }

    /// Snapshot plus kernel-induced `Q̂†` at each record's own scalar short
    /// context. The bucket-mean identity has no kernel analogue, so no check.
    pub fn refresh_kernel(&mut self, model: &M, dataset: &Dataset<f64, M::Ext>, inducer: &LaplaceKernelInducer) -> Result<()>
    where
        M: DifferentiableModel<Short = f64>,
    {
        self.snapshot(model, dataset)?;
        self.induced_rows =
            dataset.records().iter().map(|r| induce_kernel(model, dataset, r.short_ctx, inducer).map(|d| d.dist)).collect::<Result<_>>()?;
        self.keys = dataset.records().iter().map(|r| format!("{}", r.short_ctx)).collect();
        Ok(())
    }

    /// Cache as CSV: record, short context, then `Q̂†` probabilities.
    pub fn dump_csv(&self) -> String {
        let mut out = String::from("record,short_ctx");
        let labels = self.induced_rows.first().map_or(0, Categorical::len);
        for y in 0..labels {
            let _ = write!(out, ",p{y}");
        }
        out.push('\n');
        for (t, (k, row)) in self.keys.iter().zip(&self.induced_rows).enumerate() {
            let _ = write!(out, "{t},\"{}\"", k.replace('"', "\"\""));
            for p in row.probs() {
                let _ = write!(out, ",{p}");
            }
            out.push('\n');
        }
        out
    }
}

/// Adds `scale ·` the gradient of `-Σ_y P̂(y) [Q†(y|x_t) / Q̂†(y|x̄_t)] ln Q(y|x_t)`
/// with the bracket held constant. Returns the corrected loss.
#[allow(clippy::too_many_arguments)]
pub fn accumulate_serialized_gradient<M: DifferentiableModel>(
    model: &M,
    state: &SerializedState<M>,
    t: usize,
    short: &M::Short,
    ext: &M::Ext,
    target: &Categorical,
    scale: f64,
    grad: &mut [f64],
) -> Result<f64> {
    if !state.is_fresh() {
        return Err(ImmError::MissingCacheRow(t));
    }
    let (frozen, induced) = state.rows(t)?;
    let w: Vec<f64> = (0..model.num_labels())
        .map(|y| {
            let p = target.prob(y);
            if p == 0.0 {
                0.0
            } else {
                p * frozen.prob(y) / floored(induced.prob(y))
            }
        })
        .collect();
    let q = model.forward(short, ext)?;
    let loss = crate::models::weighted_log_loss(&q, &w);
    let scaled: Vec<f64> = w.iter().map(|v| v * scale).collect();
    model.backward_weighted(short, ext, &scaled, grad)?;
    Ok(loss)
}

/// Serialized IMM gradient for record `t` of the dataset the state was refreshed on.
pub fn imm_grad_serialized<M: DifferentiableModel>(
    model: &M,
    state: &SerializedState<M>,
    dataset: &Dataset<M::Short, M::Ext>,
    t: usize,
    target: &Categorical,
) -> Result<Vec<f64>> {
    if t >= dataset.n() {
        return Err(ImmError::MissingCacheRow(t));
    }
    let r = dataset.record(t);
    let mut g = model.zero_grad();
    accumulate_serialized_gradient(model, state, t, &r.short_ctx, &r.ext_ctx, target, 1.0, &mut g)?;
    Ok(g)
}
