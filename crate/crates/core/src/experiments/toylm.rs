//! Synthetic language modelling with a known order-2 Markov source, so the
//! full conditional, the context distribution and the true induced bigram
//! are all available in closed form.

use rand_distr::{Distribution, Gamma};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::induction::DiscreteSupport;
use crate::models::{sgd_step, DifferentiableModel, TinyNeuralLM, MAX_VOCAB};
use crate::objectives::{total_loss_and_grad, ObjectiveConfig, ObjectiveMode, SecondarySource};
use crate::prob::{build_index, Categorical, Dataset, RandomSource, SampleRecord};
use crate::restricted::{distinct_tokens, kn_fit, TabularRestricted, DEFAULT_DISCOUNT};

const SHUFFLE_STREAM: u64 = 1 << 32;
const SAMPLE_STREAM: u64 = 2 << 32;

/// `T[(a·V + b)·V + c] = P(x_t = c | x_{t-2} = a, x_{t-1} = b)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MarkovChain2 {
    vocab: usize,
    trans: Vec<f64>,
}

impl MarkovChain2 {
    /// Rows drawn from a symmetric Dirichlet with the given concentration.
    pub fn random(vocab: usize, concentration: f64, rng: &mut RandomSource) -> Result<Self> {
        let gamma = Gamma::new(concentration, 1.0).map_err(|e| invalid(format!("bad concentration: {e}")))?;
        let mut trans = Vec::with_capacity(vocab * vocab * vocab);
        for _ in 0..vocab * vocab {
            let row: Vec<f64> = (0..vocab).map(|_| gamma.sample(rng).max(1e-300)).collect();
            let s: f64 = row.iter().sum();
            trans.extend(row.iter().map(|v| v / s));
        }
        Ok(Self { vocab, trans })
    }

    pub fn from_transitions(vocab: usize, trans: Vec<f64>) -> Result<Self> {
        if trans.len() != vocab * vocab * vocab {
            return Err(invalid("transition tensor must be V x V x V"));
        }
        for row in trans.chunks(vocab) {
            Categorical::new(row.to_vec())?;
        }
        Ok(Self { vocab, trans })
    }

    pub fn vocab(&self) -> usize {
        self.vocab
    }

    #[inline]
    pub fn row(&self, a: usize, b: usize) -> &[f64] {
        let off = (a * self.vocab + b) * self.vocab;
        &self.trans[off..off + self.vocab]
    }

    /// Stationary distribution over pairs `(x_{t-2}, x_{t-1})` by power iteration.
    pub fn stationary_pairs(&self, tol: f64, max_iters: usize) -> Result<Vec<f64>> {
        let v = self.vocab;
        let mut pi = vec![1.0 / (v * v) as f64; v * v];
        let mut next = vec![0.0; v * v];
        for _ in 0..max_iters {
            next.iter_mut().for_each(|x| *x = 0.0);
            for a in 0..v {
                for b in 0..v {
                    let m = pi[a * v + b];
                    for (c, p) in self.row(a, b).iter().enumerate() {
                        next[b * v + c] += m * p;
                    }
                }
            }
            // lazy step guards against periodic chains
            let mut diff = 0.0;
            for (p, n) in pi.iter_mut().zip(&next) {
                let upd = 0.5 * *p + 0.5 * n;
                diff += (upd - *p).abs();
                *p = upd;
            }
            if diff < tol {
                return Ok(pi);
            }
        }
        Err(crate::error::ImmError::NotConverged { iters: max_iters, residual: f64::NAN })
    }

    /// `P̄(y | b) = Σ_a π(a, b) T(y | a, b) / Σ_a π(a, b)`, as rows over `b`.
    pub fn true_bigram(&self, pairs: &[f64]) -> Vec<Categorical> {
        let v = self.vocab;
        (0..v)
            .map(|b| {
                let mut acc = vec![0.0; v];
                for a in 0..v {
                    let w = pairs[a * v + b];
                    for (y, p) in self.row(a, b).iter().enumerate() {
                        acc[y] += w * p;
                    }
                }
                Categorical::from_weights(acc).unwrap_or_else(|_| Categorical::uniform(v))
            })
            .collect()
    }

    /// Token sequence started from the stationary pair distribution.
    pub fn generate(&self, len: usize, pairs: &[f64], rng: &mut RandomSource) -> Vec<u32> {
        let v = self.vocab;
        let start = rng.categorical(pairs);
        let mut out = vec![(start / v) as u32, (start % v) as u32];
        while out.len() < len {
            let n = out.len();
            let c = rng.categorical(self.row(out[n - 2] as usize, out[n - 1] as usize));
            out.push(c as u32);
        }
        out.truncate(len);
        out
    }
}

/// Records `(x_{t-1}; [x_{t-2}, x_{t-3}]) -> x_t`.
pub fn corpus_to_dataset(corpus: &[u32]) -> Result<Dataset<u32, [u32; 2]>> {
    Dataset::new((3..corpus.len()).map(|t| SampleRecord::new(corpus[t - 1], [corpus[t - 2], corpus[t - 3]], corpus[t] as usize)).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LmMethod {
    Baseline,
    Imm,
    Noising,
}

impl LmMethod {
    pub const ALL: [LmMethod; 3] = [LmMethod::Baseline, LmMethod::Imm, LmMethod::Noising];

    pub fn name(&self) -> &'static str {
        match self {
            Self::Baseline => "baseline",
            Self::Imm => "imm",
            Self::Noising => "noising",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LmConfig {
    pub vocab_size: usize,
    pub corpus_len: usize,
    /// The restricted model is fit on `restricted_factor · corpus_len` fresh tokens.
    pub restricted_factor: usize,
    pub concentration: f64,
    pub discount: f64,
    pub k: usize,
    pub j: usize,
    pub lambda: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub clip_primary: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub clip_secondary: Option<f64>,
    pub runs: usize,
    pub seed: u64,
}

impl Default for LmConfig {
    fn default() -> Self {
        Self {
            vocab_size: 32,
            corpus_len: 5000,
            restricted_factor: 10,
            concentration: 0.5,
            discount: DEFAULT_DISCOUNT,
            k: 10,
            j: 5,
            lambda: 0.2,
            epochs: 8,
            batch_size: 32,
            lr: 0.5,
            clip_primary: Some(5.0),
            clip_secondary: Some(5.0),
            runs: 30,
            seed: 0,
        }
    }
}

impl LmConfig {
    pub fn validate(&self) -> Result<()> {
        if !(2..=MAX_VOCAB).contains(&self.vocab_size) {
            return Err(invalid(format!("vocab_size must lie in 2..={MAX_VOCAB}")));
        }
        if self.corpus_len < 4 || self.restricted_factor == 0 {
            return Err(invalid("corpus_len must be at least 4 and restricted_factor positive"));
        }
        if self.k == 0 || self.j == 0 || self.epochs == 0 || self.batch_size == 0 || self.runs == 0 {
            return Err(invalid("k, j, epochs, batch_size and runs must be positive"));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) || !(self.lr > 0.0) || !(self.concentration > 0.0) {
            return Err(invalid("lambda must be non-negative, lr and concentration positive"));
        }
        if !(self.discount > 0.0 && self.discount < 1.0) {
            return Err(invalid("discount must lie in (0, 1)"));
        }
        Ok(())
    }
}

/// Everything a run shares across methods.
pub struct LmTask {
    pub chain: MarkovChain2,
    pub pairs: Vec<f64>,
    pub true_bigram: Vec<Categorical>,
    pub dataset: Dataset<u32, [u32; 2]>,
    pub target: TabularRestricted,
    pub init: TinyNeuralLM,
}

impl LmTask {
    pub fn build(config: &LmConfig, run: usize) -> Result<Self> {
        config.validate()?;
        let v = config.vocab_size;
        let mut rng = RandomSource::new(config.seed, run as u64);
        let chain = MarkovChain2::random(v, config.concentration, &mut rng)?;
        let pairs = chain.stationary_pairs(1e-13, 100_000)?;
        let corpus = chain.generate(config.corpus_len, &pairs, &mut rng);
        if distinct_tokens(&corpus) < v {
            return Err(invalid(format!(
                "corpus of {} tokens covers {} of {v} vocabulary entries",
                corpus.len(),
                distinct_tokens(&corpus)
            )));
        }
        let restricted = chain.generate(config.corpus_len * config.restricted_factor, &pairs, &mut rng);
        let kn = kn_fit(&restricted, v, config.discount)?;
        let target = TabularRestricted::new((0..v as u32).map(|b| kn.row(b)).collect())?;
        let init = TinyNeuralLM::new(v, &mut rng);
        Ok(Self { true_bigram: chain.true_bigram(&pairs), chain, pairs, dataset: corpus_to_dataset(&corpus)?, target, init })
    }

    /// `(full KL, induced-bigram cross-entropy)` under the exact stationary law.
    pub fn evaluate(&self, model: &TinyNeuralLM) -> Result<(f64, f64)> {
        let v = self.chain.vocab();
        let mut kl = 0.0;
        let mut induced = vec![0.0; v * v];
        let mut mass_b = vec![0.0; v];
        for c in 0..v {
            for a in 0..v {
                let w_ca = self.pairs[c * v + a];
                if w_ca == 0.0 {
                    continue;
                }
                let prev = self.chain.row(c, a);
                for b in 0..v {
                    // context (x_{t-3}, x_{t-2}, x_{t-1}) = (c, a, b)
                    let w = w_ca * prev[b];
                    if w == 0.0 {
                        continue;
                    }
                    let q = model.forward(&(b as u32), &[a as u32, c as u32])?;
                    let p = self.chain.row(a, b);
                    kl += w * p.iter().zip(q.probs()).filter(|(x, _)| **x > 0.0).map(|(x, y)| x * (x / y.max(1e-300)).ln()).sum::<f64>();
                    mass_b[b] += w;
                    for (acc, qy) in induced[b * v..(b + 1) * v].iter_mut().zip(q.probs()) {
                        *acc += w * qy;
                    }
                }
            }
        }
        let mut ce = 0.0;
        for b in 0..v {
            if mass_b[b] == 0.0 {
                continue;
            }
            for y in 0..v {
                let pbar = self.true_bigram[b].prob(y);
                if pbar > 0.0 {
                    ce -= mass_b[b] * pbar * crate::prob::floored(induced[b * v + y] / mass_b[b]).ln();
                }
            }
        }
        Ok((kl, ce))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LmRun {
    pub full_kl: f64,
    pub induced_ce: f64,
}

/// Trains one method on a built task. Batch order is shared across methods.
pub fn train_lm(task: &LmTask, config: &LmConfig, method: LmMethod, run: usize) -> Result<TinyNeuralLM> {
    let mut model = task.init.clone();
    let index = build_index(&task.dataset);
    let full = DiscreteSupport { index: &index, k: Some(config.k) };
    let single = DiscreteSupport { index: &index, k: Some(1) };
    let mut shuffle = RandomSource::new(config.seed, SHUFFLE_STREAM + run as u64);
    let mut sampler = RandomSource::new(config.seed, SAMPLE_STREAM + run as u64);
    let mode = match method {
        LmMethod::Baseline => ObjectiveMode::None,
        LmMethod::Imm => ObjectiveMode::Imm,
        LmMethod::Noising => ObjectiveMode::Noising,
    };
    let mut objective = ObjectiveConfig::new(mode, config.lambda);
    objective.clip_primary = config.clip_primary;
    objective.clip_secondary = config.clip_secondary;
    let mut order: Vec<usize> = (0..task.dataset.n()).collect();
    let mut step = 0usize;
    for _ in 0..config.epochs {
        for i in (1..order.len()).rev() {
            order.swap(i, shuffle.index(i + 1));
        }
        for batch in order.chunks(config.batch_size) {
            let support = if step.is_multiple_of(config.j) { &full } else { &single };
            let src = SecondarySource { support: Some(support), serialized: None };
            let out = total_loss_and_grad(&model, &task.dataset, batch, &task.target, &objective, &src, &mut sampler)?;
            sgd_step(&mut model, &out.grad, config.lr)?;
            step += 1;
        }
    }
    Ok(model)
}

pub fn run_toy_lm(config: &LmConfig, method: LmMethod, run: usize) -> Result<LmRun> {
    let task = LmTask::build(config, run)?;
    let model = train_lm(&task, config, method, run)?;
    let (full_kl, induced_ce) = task.evaluate(&model)?;
    Ok(LmRun { full_kl, induced_ce })
}

/// Every run, every method, paired by run index: `result[run][method]`.
pub fn run_lm_comparison(config: &LmConfig, methods: &[LmMethod]) -> Result<Vec<Vec<LmRun>>> {
    config.validate()?;
    (0..config.runs)
        .into_par_iter()
        .map(|run| {
            let task = LmTask::build(config, run)?;
            methods
                .iter()
                .map(|&m| {
                    let model = train_lm(&task, config, m, run)?;
                    let (full_kl, induced_ce) = task.evaluate(&model)?;
                    Ok(LmRun { full_kl, induced_ce })
                })
                .collect()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stationary_is_fixed_point() {
        let mut rng = RandomSource::new(1, 0);
        let chain = MarkovChain2::random(5, 0.5, &mut rng).unwrap();
        let pi = chain.stationary_pairs(1e-14, 100_000).unwrap();
        let v = 5;
        let mut next = vec![0.0; v * v];
        for a in 0..v {
            for b in 0..v {
                for c in 0..v {
                    next[b * v + c] += pi[a * v + b] * chain.row(a, b)[c];
                }
            }
        }
        for (x, y) in pi.iter().zip(&next) {
            assert!((x - y).abs() < 1e-10);
        }
        assert!((pi.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn true_bigram_matches_long_run_counts() {
        let mut rng = RandomSource::new(2, 0);
        let chain = MarkovChain2::random(4, 1.0, &mut rng).unwrap();
        let pi = chain.stationary_pairs(1e-14, 100_000).unwrap();
        let bigram = chain.true_bigram(&pi);
        let seq = chain.generate(400_000, &pi, &mut rng);
        let mut counts = [[0.0f64; 4]; 4];
        for w in seq.windows(2) {
            counts[w[0] as usize][w[1] as usize] += 1.0;
        }
        for b in 0..4 {
            let tot: f64 = counts[b].iter().sum();
            for y in 0..4 {
                assert!((counts[b][y] / tot - bigram[b].prob(y)).abs() < 0.01);
            }
        }
    }

    #[test]
    fn dataset_layout() {
        let d = corpus_to_dataset(&[1, 2, 3, 4, 5]).unwrap();
        assert_eq!(d.n(), 2);
        assert_eq!(d.record(0), &SampleRecord::new(3, [2, 1], 4));
    }

    #[test]
    fn short_corpus_is_rejected() {
        let cfg = LmConfig { corpus_len: 10, ..Default::default() };
        assert!(LmTask::build(&cfg, 0).is_err());
    }
}
