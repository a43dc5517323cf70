//! Three-feature logistic regression against a linear-discriminant ground
//! truth, with the restricted Bayes predictor on `x1` as the target.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::stats::Summary;
use crate::error::{invalid, Result};
use crate::induction::{imm_component, induce_kernel, LaplaceKernelInducer};
use crate::models::{DifferentiableModel, LogisticModel};
use crate::prob::{floored, Dataset, RandomSource, SampleRecord};
use crate::restricted::{AnalyticRestrictedLogistic, RestrictedModel};

/// Stream ids at or above this offset drive training-time sampling.
const TRAIN_STREAM: u64 = 1 << 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LogRegMethod {
    Baseline,
    /// Kernel-induced IMM over all records.
    Imm,
    /// `k` records drawn from the kernel weights per record and step.
    ImmSampled,
    Noising,
    Interpolation,
    /// Correction-factor IMM with a periodically refreshed snapshot.
    Serialized,
}

impl LogRegMethod {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Baseline => "baseline",
            Self::Imm => "imm",
            Self::ImmSampled => "imm_sampled",
            Self::Noising => "noising",
            Self::Interpolation => "interpolation",
            Self::Serialized => "serialized",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Truth {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
    pub lo: f64,
    pub hi: f64,
}

impl Default for Truth {
    fn default() -> Self {
        Self { a: 1.0, b: 1.0, c: 1.0, d: 0.0, lo: -1.0, hi: 1.0 }
    }
}

impl Truth {
    pub fn model(&self) -> Result<AnalyticRestrictedLogistic> {
        AnalyticRestrictedLogistic::new(self.a, self.b, self.c, self.d, self.lo, self.hi)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LogRegConfig {
    pub n: usize,
    pub lr: f64,
    pub epochs: usize,
    /// Fixed λ; absent means the size-dependent schedule.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    pub alpha: f64,
    pub runs: usize,
    pub method: LogRegMethod,
    /// Mixing weight of the uniform distribution into the target.
    pub quality: f64,
    pub k: usize,
    /// Steps between snapshot refreshes; absent means `n`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub refresh_period: Option<usize>,
    pub test_size: usize,
    pub truth: Truth,
    pub seed: u64,
}

impl Default for LogRegConfig {
    fn default() -> Self {
        Self {
            n: 10,
            lr: 1.0,
            epochs: 300,
            lambda: None,
            alpha: 1.0,
            runs: 300,
            method: LogRegMethod::Imm,
            quality: 0.0,
            k: 10,
            refresh_period: None,
            test_size: 10_000,
            truth: Truth::default(),
            seed: 0,
        }
    }
}

/// A grid of sizes and methods sharing every other setting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LogRegSweep {
    pub sizes: Vec<usize>,
    pub methods: Vec<LogRegMethod>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    pub runs: usize,
    pub epochs: usize,
    pub lr: f64,
    pub alpha: f64,
    pub quality: f64,
    pub k: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub refresh_period: Option<usize>,
    pub test_size: usize,
    pub truth: Truth,
    pub seed: u64,
}

impl Default for LogRegSweep {
    fn default() -> Self {
        let base = LogRegConfig::default();
        Self {
            sizes: vec![2, 5, 10, 20, 50],
            methods: vec![LogRegMethod::Baseline, LogRegMethod::Imm, LogRegMethod::Noising, LogRegMethod::Interpolation],
            lambda: base.lambda,
            runs: base.runs,
            epochs: base.epochs,
            lr: base.lr,
            alpha: base.alpha,
            quality: base.quality,
            k: base.k,
            refresh_period: base.refresh_period,
            test_size: base.test_size,
            truth: base.truth,
            seed: base.seed,
        }
    }
}

impl LogRegSweep {
    pub fn config(&self, n: usize, method: LogRegMethod) -> LogRegConfig {
        LogRegConfig {
            n,
            lr: self.lr,
            epochs: self.epochs,
            lambda: self.lambda,
            alpha: self.alpha,
            runs: self.runs,
            method,
            quality: self.quality,
            k: self.k,
            refresh_period: self.refresh_period,
            test_size: self.test_size,
            truth: self.truth,
            seed: self.seed,
        }
    }

    /// Settings shared by every cell, at the first size.
    pub fn base(&self) -> LogRegConfig {
        self.config(self.sizes.first().copied().unwrap_or(10), LogRegMethod::Imm)
    }

    pub fn validate(&self) -> Result<()> {
        if self.sizes.is_empty() || self.methods.is_empty() {
            return Err(invalid("sizes and methods must be non-empty"));
        }
        for &n in &self.sizes {
            self.config(n, self.methods[0]).validate()?;
        }
        Ok(())
    }
}

/// `λ/(1+λ) = -0.0111·n + 0.818`, clamped to `[0, 0.9]`.
pub fn scheduled_ratio(n: usize) -> f64 {
    (-0.0111 * n as f64 + 0.818).clamp(0.0, 0.9)
}

pub fn ratio_to_lambda(r: f64) -> f64 {
    r / (1.0 - r)
}

impl LogRegConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(invalid(format!("logistic harness needs n >= 2, got {}", self.n)));
        }
        if self.runs == 0 || self.epochs == 0 || self.test_size == 0 {
            return Err(invalid("runs, epochs and test_size must be positive"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(invalid(format!("learning rate must be positive, got {}", self.lr)));
        }
        if let Some(l) = self.lambda {
            if !(l >= 0.0 && l.is_finite()) {
                return Err(invalid(format!("lambda must be finite and non-negative, got {l}")));
            }
        }
        if !(0.0..=1.0).contains(&self.quality) {
            return Err(invalid(format!("quality must lie in [0, 1], got {}", self.quality)));
        }
        if self.k == 0 || self.refresh_period == Some(0) {
            return Err(invalid("k and refresh_period must be positive"));
        }
        LaplaceKernelInducer::new(self.alpha)?;
        self.truth.model()?;
        Ok(())
    }

    /// Weight of the secondary term in the convex combination.
    pub fn ratio(&self) -> f64 {
        match self.lambda {
            Some(l) => l / (1.0 + l),
            None => scheduled_ratio(self.n),
        }
    }
}

/// Target `(1-ε)·P̄(1|x1) + ε/2`.
#[derive(Debug, Clone, Copy)]
pub struct LogRegTarget {
    pub truth: AnalyticRestrictedLogistic,
    pub epsilon: f64,
}

impl RestrictedModel<f64> for LogRegTarget {
    fn num_labels(&self) -> usize {
        2
    }

    fn predict(&self, x1: &f64) -> Result<crate::prob::Categorical> {
        let p = (1.0 - self.epsilon) * self.truth.positive_fraction(*x1)? + 0.5 * self.epsilon;
        Ok(crate::prob::Categorical::from_normalized_unchecked(vec![1.0 - p, p]))
    }
}

pub fn sample_points(truth: &AnalyticRestrictedLogistic, n: usize, rng: &mut RandomSource) -> Vec<([f64; 3], usize)> {
    (0..n)
        .map(|_| {
            let x = [rng.uniform(truth.lo, truth.hi), rng.uniform(truth.lo, truth.hi), rng.uniform(truth.lo, truth.hi)];
            (x, truth.label(&x))
        })
        .collect()
}

pub fn to_dataset(points: &[([f64; 3], usize)]) -> Result<Dataset<f64, [f64; 2]>> {
    Dataset::new(points.iter().map(|(x, y)| SampleRecord::new(x[0], [x[1], x[2]], *y)).collect())
}

/// Precomputed per-dataset quantities for fast full-batch steps.
pub struct LogRegProblem {
    xs: Vec<[f64; 3]>,
    labels: Vec<f64>,
    target: Vec<f64>,
    kernel: Vec<f64>,
    cum_kernel: Vec<f64>,
}

/// Frozen snapshot rows `Q†(1|x_t)` and kernel-induced `Q̂†(1|x1_t)`.
#[derive(Debug, Clone, Default)]
pub struct FastSerialized {
    pub frozen: Vec<f64>,
    pub induced: Vec<f64>,
    pub age: usize,
    pub period: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Secondary {
    None,
    Imm,
    ImmSampled { k: usize },
    Noising,
    Serialized,
}

impl LogRegProblem {
    pub fn new<T: RestrictedModel<f64>>(dataset: &Dataset<f64, [f64; 2]>, target: &T, inducer: &LaplaceKernelInducer) -> Result<Self> {
        let n = dataset.n();
        let xs: Vec<[f64; 3]> = dataset.records().iter().map(|r| [r.short_ctx, r.ext_ctx[0], r.ext_ctx[1]]).collect();
        let labels = dataset.records().iter().map(|r| r.label as f64).collect();
        let target = dataset.records().iter().map(|r| target.predict(&r.short_ctx).map(|c| c.prob(1))).collect::<Result<_>>()?;
        let mut kernel = Vec::with_capacity(n * n);
        for r in dataset.records() {
            kernel.extend(inducer.weights(dataset, r.short_ctx));
        }
        let mut cum_kernel = kernel.clone();
        for row in cum_kernel.chunks_mut(n) {
            let mut acc = 0.0;
            for v in row.iter_mut() {
                acc += *v;
                *v = acc;
            }
        }
        Ok(Self { xs, labels, target, kernel, cum_kernel })
    }

    pub fn n(&self) -> usize {
        self.xs.len()
    }

    fn kernel_row(&self, t: usize) -> &[f64] {
        &self.kernel[t * self.n()..(t + 1) * self.n()]
    }

    fn draw(&self, t: usize, rng: &mut RandomSource) -> usize {
        let n = self.n();
        let row = &self.cum_kernel[t * n..(t + 1) * n];
        let u = rng.uniform(0.0, row[n - 1]);
        row.partition_point(|c| *c <= u).min(n - 1)
    }

    pub fn refresh(&self, model: &LogisticModel, state: &mut FastSerialized) {
        let n = self.n();
        state.frozen = self.xs.iter().map(|x| model.prob_one(x[0], &[x[1], x[2]])).collect();
        state.induced = (0..n)
            .map(|t| {
                let x1 = self.xs[t][0];
                self.kernel_row(t).iter().zip(&self.xs).map(|(k, x)| k * model.prob_one(x1, &[x[1], x[2]])).sum()
            })
            .collect();
        state.age = 0;
    }

    /// Mean cross-entropy and secondary term with gradients `(primary, secondary)`.
    pub fn terms(
        &self,
        model: &LogisticModel,
        secondary: Secondary,
        state: Option<&FastSerialized>,
        rng: &mut RandomSource,
    ) -> (f64, [f64; 4], f64, [f64; 4]) {
        let n = self.n();
        let scale = 1.0 / n as f64;
        let mut gp = [0.0; 4];
        let mut gs = [0.0; 4];
        let mut lp = 0.0;
        let mut ls = 0.0;
        let add = |g: &mut [f64; 4], dz: f64, x: [f64; 3]| {
            g[0] += dz * x[0];
            g[1] += dz * x[1];
            g[2] += dz * x[2];
            g[3] += dz;
        };
        let mut q = vec![0.0; n];
        let mut idx = Vec::new();
        for t in 0..n {
            let x = self.xs[t];
            let p = model.prob_one(x[0], &[x[1], x[2]]);
            let y = self.labels[t];
            lp -= scale * floored(if y == 1.0 { p } else { 1.0 - p }).ln();
            add(&mut gp, scale * (p - y), x);
            let p1 = self.target[t];
            match secondary {
                Secondary::None => {}
                Secondary::Noising => {
                    ls -= scale * (p1 * floored(p).ln() + (1.0 - p1) * floored(1.0 - p).ln());
                    add(&mut gs, scale * (p - p1), x);
                }
                Secondary::Serialized => {
                    let st = state.expect("serialized step needs a refreshed state");
                    let w1 = p1 * st.frozen[t] / floored(st.induced[t]);
                    let w0 = (1.0 - p1) * (1.0 - st.frozen[t]) / floored(1.0 - st.induced[t]);
                    ls -= scale * (w1 * floored(p).ln() + w0 * floored(1.0 - p).ln());
                    add(&mut gs, scale * ((w0 + w1) * p - w1), x);
                }
                Secondary::Imm | Secondary::ImmSampled { .. } => {
                    let (support, mix): (&[usize], Option<&[f64]>) = match secondary {
                        Secondary::ImmSampled { k } => {
                            idx.clear();
                            idx.extend((0..k).map(|_| self.draw(t, rng)));
                            (&idx, None)
                        }
                        _ => (&[], Some(self.kernel_row(t))),
                    };
                    let m_of = |j: usize| mix.map_or(1.0 / support.len() as f64, |w| w[j]);
                    let count = if mix.is_some() { n } else { support.len() };
                    let rec = |j: usize| if mix.is_some() { j } else { support[j] };
                    let (mut qbar, mut d1, mut d0) = (0.0, 0.0, 0.0);
                    for j in 0..count {
                        let e = self.xs[rec(j)];
                        q[j] = model.prob_one(x[0], &[e[1], e[2]]);
                        let m = m_of(j);
                        qbar += m * q[j];
                        d1 += m * floored(q[j]);
                        d0 += m * floored(1.0 - q[j]);
                    }
                    let qbar0: f64 = (0..count).map(|j| m_of(j) * (1.0 - q[j])).sum();
                    ls -= scale * (p1 * floored(qbar).ln() + (1.0 - p1) * floored(qbar0).ln());
                    for j in 0..count {
                        let e = self.xs[rec(j)];
                        let m = m_of(j);
                        let w1 = scale * p1 * m * floored(q[j]) / d1;
                        let w0 = scale * (1.0 - p1) * m * floored(1.0 - q[j]) / d0;
                        add(&mut gs, (w0 + w1) * q[j] - w1, [x[0], e[1], e[2]]);
                    }
                }
            }
        }
        (lp, gp, ls, gs)
    }
}

/// Result of one Monte-Carlo run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogRegRun {
    pub accuracy: f64,
    pub restricted_risk: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRegOutcome {
    pub runs: Vec<LogRegRun>,
    pub accuracy: Summary,
}

impl LogRegOutcome {
    pub fn accuracies(&self) -> Vec<f64> {
        self.runs.iter().map(|r| r.accuracy).collect()
    }
}

/// A trained model with its training set, test points and target.
pub type TrainedRun = (LogisticModel, Dataset<f64, [f64; 2]>, Vec<([f64; 3], usize)>, LogRegTarget);

/// Trains one run and returns the model along with its data.
pub fn train_run(config: &LogRegConfig, run: usize) -> Result<TrainedRun> {
    let truth = config.truth.model()?;
    let mut rng = RandomSource::new(config.seed, run as u64);
    let points = sample_points(&truth, config.n, &mut rng);
    let mut model = LogisticModel::init(&mut rng);
    let test = sample_points(&truth, config.test_size, &mut rng);
    let mut train_rng = RandomSource::new(config.seed, TRAIN_STREAM + run as u64);

    let dataset = to_dataset(&points)?;
    let target = LogRegTarget { truth, epsilon: config.quality };
    let inducer = LaplaceKernelInducer::new(config.alpha)?;
    let problem = LogRegProblem::new(&dataset, &target, &inducer)?;
    let ratio = config.ratio();
    let secondary = match config.method {
        _ if ratio == 0.0 => Secondary::None,
        LogRegMethod::Baseline | LogRegMethod::Interpolation => Secondary::None,
        LogRegMethod::Imm => Secondary::Imm,
        LogRegMethod::ImmSampled => Secondary::ImmSampled { k: config.k },
        LogRegMethod::Noising => Secondary::Noising,
        LogRegMethod::Serialized => Secondary::Serialized,
    };
    let (wp, ws) = if secondary == Secondary::None { (1.0, 0.0) } else { (1.0 - ratio, ratio) };
    let mut state = FastSerialized { period: config.refresh_period.unwrap_or(config.n), ..Default::default() };
    for _ in 0..config.epochs {
        if secondary == Secondary::Serialized && (state.frozen.is_empty() || state.age >= state.period) {
            problem.refresh(&model, &mut state);
        }
        let (_, gp, _, gs) = problem.terms(&model, secondary, Some(&state), &mut train_rng);
        let g: Vec<f64> = gp.iter().zip(&gs).map(|(a, b)| wp * a + ws * b).collect();
        crate::models::sgd_step(&mut model, &g, config.lr)?;
        state.age += 1;
    }
    Ok((model, dataset, test, target))
}

/// Accuracy in percent; interpolation mixes the target in at prediction time.
pub fn test_accuracy(model: &LogisticModel, test: &[([f64; 3], usize)], target: &LogRegTarget, interpolate: Option<f64>) -> Result<f64> {
    let mut correct = 0usize;
    for (x, y) in test {
        let mut p = model.prob_one(x[0], &[x[1], x[2]]);
        if let Some(beta) = interpolate {
            p = (1.0 - beta) * p + beta * target.predict(&x[0])?.prob(1);
        }
        if usize::from(p > 0.5) == *y {
            correct += 1;
        }
    }
    Ok(100.0 * correct as f64 / test.len() as f64)
}

/// Mean over records of `-Σ_y P̂(y|x1_t) ln Q̂(y|x1_t)` with kernel induction.
pub fn restricted_task_risk<M, T>(model: &M, dataset: &Dataset<f64, M::Ext>, target: &T, inducer: &LaplaceKernelInducer) -> Result<f64>
where
    M: DifferentiableModel<Short = f64>,
    T: RestrictedModel<f64> + ?Sized,
{
    let mut total = 0.0;
    for r in dataset.records() {
        let induced = induce_kernel(model, dataset, r.short_ctx, inducer)?;
        total += imm_component(&target.predict(&r.short_ctx)?, &induced);
    }
    Ok(total / dataset.n() as f64)
}

pub fn run_one(config: &LogRegConfig, run: usize) -> Result<LogRegRun> {
    let (model, dataset, test, target) = train_run(config, run)?;
    let interpolate = (config.method == LogRegMethod::Interpolation).then(|| config.ratio());
    let inducer = LaplaceKernelInducer::new(config.alpha)?;
    Ok(LogRegRun {
        accuracy: test_accuracy(&model, &test, &target, interpolate)?,
        restricted_risk: restricted_task_risk(&model, &dataset, &target, &inducer)?,
    })
}

/// All Monte-Carlo runs, reduced in run order.
pub fn run_logreg(config: &LogRegConfig) -> Result<LogRegOutcome> {
    run_logreg_runs(config, 0, config.runs)
}

/// `runs` seeded runs starting at run index `first_run`.
pub fn run_logreg_runs(config: &LogRegConfig, first_run: usize, runs: usize) -> Result<LogRegOutcome> {
    config.validate()?;
    let runs = (first_run..first_run + runs).into_par_iter().map(|r| run_one(config, r)).collect::<Result<Vec<_>>>()?;
    let acc: Vec<f64> = runs.iter().map(|r| r.accuracy).collect();
    Ok(LogRegOutcome { accuracy: Summary::of(&acc), runs })
}
