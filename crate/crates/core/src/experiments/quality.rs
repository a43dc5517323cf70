//! Target-quality sweeps. The restricted target is degraded (label noise for
//! the logistic problem, softmax temperature for the grid teacher) and λ is
//! re-tuned per level on held-out runs before the reported runs are drawn.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::experiments::logreg::{ratio_to_lambda, run_logreg_runs, LogRegConfig, LogRegMethod};
use crate::experiments::rl::{run_rl_runs, RlConfig, RlMethod};
use crate::experiments::stats::Summary;

/// Held-out runs start here so they never overlap reported runs.
pub const HELD_OUT_OFFSET: usize = 1_000_000;

pub fn ratio_grid() -> Vec<f64> {
    (1..=9).map(|i| i as f64 / 10.0).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QualityConfig {
    pub logreg_levels: Vec<f64>,
    pub logreg_sizes: Vec<usize>,
    pub logreg_runs: usize,
    pub rl_temperatures: Vec<f64>,
    pub rl_runs: usize,
    /// Held-out runs per grid point when tuning λ.
    pub tune_runs: usize,
    pub ratios: Vec<f64>,
    pub seed: u64,
}

impl Default for QualityConfig {
    fn default() -> Self {
        Self {
            logreg_levels: vec![0.2, 0.5],
            logreg_sizes: vec![2, 5, 10, 20, 50],
            logreg_runs: 300,
            rl_temperatures: vec![0.1, 1.0, 10.0],
            rl_runs: 30,
            tune_runs: 100,
            ratios: ratio_grid(),
            seed: 0,
        }
    }
}

impl QualityConfig {
    pub fn validate(&self) -> Result<()> {
        if self.ratios.is_empty() || self.ratios.iter().any(|r| !(*r > 0.0 && *r < 1.0)) {
            return Err(invalid("tuning ratios must lie in (0, 1)"));
        }
        if self.logreg_levels.iter().any(|e| !(0.0..=1.0).contains(e)) {
            return Err(invalid("corruption levels must lie in [0, 1]"));
        }
        if self.rl_temperatures.iter().any(|t| !(*t > 0.0)) {
            return Err(invalid("temperatures must be positive"));
        }
        if self.logreg_runs == 0 || self.rl_runs == 0 || self.tune_runs == 0 {
            return Err(invalid("run counts must be positive"));
        }
        Ok(())
    }
}

/// One (level, x) cell: baseline against IMM at the tuned ratio.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualityCell {
    pub domain: String,
    pub level: f64,
    pub x: usize,
    pub tuned_ratio: f64,
    pub baseline: Summary,
    pub imm: Summary,
    pub baseline_runs: Vec<f64>,
    pub imm_runs: Vec<f64>,
}

impl QualityCell {
    pub fn imm_not_worse(&self) -> bool {
        self.imm.mean >= self.baseline.mean
    }
}

fn argmax(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, s) in scores.iter().enumerate() {
        if *s > scores[best] {
            best = i;
        }
    }
    best
}

pub fn logreg_quality(config: &QualityConfig, base: &LogRegConfig) -> Result<Vec<QualityCell>> {
    config.validate()?;
    let mut cells = Vec::new();
    for &eps in &config.logreg_levels {
        for &n in &config.logreg_sizes {
            let cfg = LogRegConfig { n, quality: eps, seed: config.seed, ..base.clone() };
            let scores = config
                .ratios
                .iter()
                .map(|&r| {
                    let c = LogRegConfig { method: LogRegMethod::Imm, lambda: Some(ratio_to_lambda(r)), ..cfg.clone() };
                    Ok(run_logreg_runs(&c, HELD_OUT_OFFSET, config.tune_runs)?.accuracy.mean)
                })
                .collect::<Result<Vec<_>>>()?;
            let tuned = config.ratios[argmax(&scores)];
            let baseline = run_logreg_runs(&LogRegConfig { method: LogRegMethod::Baseline, ..cfg.clone() }, 0, config.logreg_runs)?;
            let imm = run_logreg_runs(
                &LogRegConfig { method: LogRegMethod::Imm, lambda: Some(ratio_to_lambda(tuned)), ..cfg.clone() },
                0,
                config.logreg_runs,
            )?;
            cells.push(QualityCell {
                domain: "logreg".into(),
                level: eps,
                x: n,
                tuned_ratio: tuned,
                baseline: baseline.accuracy,
                imm: imm.accuracy,
                baseline_runs: baseline.accuracies(),
                imm_runs: imm.accuracies(),
            });
        }
    }
    Ok(cells)
}

/// λ is tuned separately at every epoch checkpoint, since one training run
/// yields all checkpoints.
pub fn rl_quality(config: &QualityConfig, base: &RlConfig) -> Result<Vec<QualityCell>> {
    config.validate()?;
    let mut cells = Vec::new();
    for &tau in &config.rl_temperatures {
        let cfg = RlConfig { temperature: tau, seed: config.seed, ..base.clone() };
        let held = config
            .ratios
            .iter()
            .map(|&r| run_rl_runs(&cfg, RlMethod::ReinforceImm, ratio_to_lambda(r), HELD_OUT_OFFSET, config.tune_runs))
            .collect::<Result<Vec<_>>>()?;
        let baseline = run_rl_runs(&cfg, RlMethod::Reinforce, 0.0, 0, config.rl_runs)?;
        let mut tuned_cache: Vec<(f64, crate::experiments::rl::RlOutcome)> = Vec::new();
        for (c, &epochs) in baseline.epochs.iter().enumerate() {
            let scores: Vec<f64> = held.iter().map(|h| Summary::of(&h.at(c)).mean).collect();
            let tuned = config.ratios[argmax(&scores)];
            let imm = match tuned_cache.iter().find(|(r, _)| *r == tuned) {
                Some((_, o)) => o.clone(),
                None => {
                    let o = run_rl_runs(&cfg, RlMethod::ReinforceImm, ratio_to_lambda(tuned), 0, config.rl_runs)?;
                    tuned_cache.push((tuned, o.clone()));
                    o
                }
            };
            cells.push(QualityCell {
                domain: "rl".into(),
                level: tau,
                x: epochs,
                tuned_ratio: tuned,
                baseline: Summary::of(&baseline.at(c)),
                imm: Summary::of(&imm.at(c)),
                baseline_runs: baseline.at(c),
                imm_runs: imm.at(c),
            });
        }
    }
    Ok(cells)
}
