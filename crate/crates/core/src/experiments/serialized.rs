//! Sampled vs serialized vs noising on the logistic problem at a fixed λ,
//! plus a per-step timing harness.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::experiments::logreg::{
    run_logreg_runs, sample_points, to_dataset, FastSerialized, LogRegConfig, LogRegMethod, LogRegProblem, LogRegTarget, Secondary,
};
use crate::experiments::stats::{median, Summary};
use crate::induction::LaplaceKernelInducer;
use crate::models::LogisticModel;
use crate::prob::RandomSource;

pub const COMPARED: [LogRegMethod; 3] = [LogRegMethod::ImmSampled, LogRegMethod::Serialized, LogRegMethod::Noising];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SerializedConfig {
    pub sizes: Vec<usize>,
    pub lambda: f64,
    pub runs: usize,
    pub timing_n: usize,
    pub timing_steps: usize,
    pub timing_repeats: usize,
    pub ks: Vec<usize>,
    pub seed: u64,
}

impl Default for SerializedConfig {
    fn default() -> Self {
        Self {
            sizes: vec![2, 5, 10, 20, 50],
            lambda: 0.7,
            runs: 300,
            timing_n: 50,
            timing_steps: 2000,
            timing_repeats: 5,
            ks: vec![1, 2, 4, 8, 16],
            seed: 0,
        }
    }
}

impl SerializedConfig {
    pub fn validate(&self) -> Result<()> {
        if self.sizes.is_empty() || self.sizes.iter().any(|n| *n < 2) {
            return Err(invalid("sizes must be non-empty and at least 2"));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(invalid("lambda must be finite and non-negative"));
        }
        if self.runs == 0 || self.timing_steps == 0 || self.timing_repeats == 0 || self.timing_n < 2 {
            return Err(invalid("runs, timing_steps and timing_repeats must be positive, timing_n at least 2"));
        }
        if self.ks.len() < 2 || self.ks.contains(&0) {
            return Err(invalid("need at least two positive sample counts"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonCell {
    pub n: usize,
    pub method: LogRegMethod,
    pub accuracy: Summary,
    pub runs: Vec<f64>,
}

/// Sampled IMM draws `k = n` kernel-weighted contexts per record; serialized
/// refreshes once per pass over the data.
pub fn run_serialized_comparison(config: &SerializedConfig, base: &LogRegConfig) -> Result<Vec<ComparisonCell>> {
    config.validate()?;
    let mut out = Vec::new();
    for &n in &config.sizes {
        for method in COMPARED {
            let cfg =
                LogRegConfig { n, method, lambda: Some(config.lambda), k: n, refresh_period: None, seed: config.seed, ..base.clone() };
            let outcome = run_logreg_runs(&cfg, 0, config.runs)?;
            out.push(ComparisonCell { n, method, accuracy: outcome.accuracy, runs: outcome.accuracies() });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingReport {
    pub baseline: f64,
    pub serialized: f64,
    /// `(k, seconds per step)`.
    pub sampled: Vec<(usize, f64)>,
    /// Coefficient of determination of the least-squares line through `sampled`.
    pub linear_r2: f64,
    pub slope: f64,
}

impl TimingReport {
    pub fn serialized_ratio(&self) -> f64 {
        self.serialized / self.baseline
    }
}

fn time_steps(problem: &LogRegProblem, secondary: Secondary, config: &SerializedConfig, rng: &mut RandomSource) -> f64 {
    let n = problem.n();
    let mut samples = Vec::with_capacity(config.timing_repeats);
    for _ in 0..config.timing_repeats {
        let mut model = LogisticModel::init(rng);
        let mut state = FastSerialized { period: n, ..Default::default() };
        let start = Instant::now();
        for _ in 0..config.timing_steps {
            if secondary == Secondary::Serialized && (state.frozen.is_empty() || state.age >= state.period) {
                problem.refresh(&model, &mut state);
            }
            let (_, gp, _, gs) = problem.terms(&model, secondary, Some(&state), rng);
            let g: Vec<f64> = gp.iter().zip(&gs).map(|(a, b)| 0.5 * (a + b)).collect();
            for (p, d) in crate::models::DifferentiableModel::params_mut(&mut model).iter_mut().zip(&g) {
                *p -= 0.1 * d;
            }
            state.age += 1;
        }
        samples.push(start.elapsed().as_secs_f64() / config.timing_steps as f64);
    }
    median(&samples)
}

pub fn least_squares(points: &[(f64, f64)]) -> (f64, f64, f64) {
    let m = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / m;
    let my = points.iter().map(|p| p.1).sum::<f64>() / m;
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let syy: f64 = points.iter().map(|p| (p.1 - my).powi(2)).sum();
    let slope = sxy / sxx;
    let r2 = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    (slope, my - slope * mx, r2)
}

pub fn time_objectives(config: &SerializedConfig, base: &LogRegConfig) -> Result<TimingReport> {
    config.validate()?;
    let truth = base.truth.model()?;
    let mut rng = RandomSource::new(config.seed, 0);
    let points = sample_points(&truth, config.timing_n, &mut rng);
    let dataset = to_dataset(&points)?;
    let target = LogRegTarget { truth, epsilon: 0.0 };
    let problem = LogRegProblem::new(&dataset, &target, &LaplaceKernelInducer::new(base.alpha)?)?;
    let baseline = time_steps(&problem, Secondary::None, config, &mut rng);
    let serialized = time_steps(&problem, Secondary::Serialized, config, &mut rng);
    let sampled: Vec<(usize, f64)> =
        config.ks.iter().map(|&k| (k, time_steps(&problem, Secondary::ImmSampled { k }, config, &mut rng))).collect();
    let pts: Vec<(f64, f64)> = sampled.iter().map(|(k, t)| (*k as f64, *t)).collect();
    let (slope, _, linear_r2) = least_squares(&pts);
    Ok(TimingReport { baseline, serialized, sampled, linear_r2, slope })
}
