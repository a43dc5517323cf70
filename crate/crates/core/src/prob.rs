//! Probability vectors, datasets of split-context records, the short-context
//! multiset index, and the seeded random source every stochastic routine takes.

use std::collections::HashMap;
use std::fmt::Debug;
use std::hash::Hash;

use indexmap::IndexMap;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, ImmError, Result};

/// Lower clamp applied to probabilities before any logarithm or ratio.
pub const PROB_FLOOR: f64 = 1e-12;

/// Tolerance on the total mass of a [`Categorical`].
pub const SUM_TOL: f64 = 1e-9;

#[inline]
pub fn floored(p: f64) -> f64 {
    p.max(PROB_FLOOR)
}

/// A normalized probability vector over label ids `0..len`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Categorical {
    probs: Vec<f64>,
}

impl Categorical {
    /// Validates an already-normalized vector.
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(ImmError::InvalidDistribution("empty support".into()));
        }
        let mut sum = 0.0;
        for &p in &probs {
            if !p.is_finite() || p < 0.0 {
                return Err(ImmError::InvalidDistribution(format!("entry {p} is not a probability")));
            }
            sum += p;
        }
        if (sum - 1.0).abs() > SUM_TOL {
            return Err(ImmError::InvalidDistribution(format!("entries sum to {sum}")));
        }
        Ok(Self { probs })
    }

    /// Normalizes non-negative weights.
    pub fn from_weights(weights: Vec<f64>) -> Result<Self> {
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(ImmError::InvalidDistribution("weights must be finite and non-negative".into()));
        }
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return Err(ImmError::InvalidDistribution("weights have zero mass".into()));
        }
        Ok(Self { probs: weights.into_iter().map(|w| w / total).collect() })
    }

    /// Softmax of arbitrary real scores.
    pub fn softmax(scores: &[f64]) -> Result<Self> {
        if scores.is_empty() || scores.iter().any(|s| !s.is_finite()) {
            return Err(ImmError::NonFinite("softmax scores"));
        }
        let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        Self::from_weights(scores.iter().map(|s| (s - max).exp()).collect())
    }

    pub fn uniform(n: usize) -> Self {
        assert!(n > 0, "uniform over an empty label set");
        Self { probs: vec![1.0 / n as f64; n] }
    }

    pub fn point_mass(n: usize, label: usize) -> Self {
        assert!(label < n, "label {label} out of range for {n} labels");
        let mut probs = vec![0.0; n];
        probs[label] = 1.0;
        Self { probs }
    }

    /// Builds from a vector produced by internal arithmetic that is normalized
    /// up to rounding; renormalizes instead of failing.
    pub(crate) fn from_normalized_unchecked(mut probs: Vec<f64>) -> Self {
        let total: f64 = probs.iter().sum();
        debug_assert!(total > 0.0 && (total - 1.0).abs() < 1e-6, "mass {total}");
        for p in &mut probs {
            *p /= total;
        }
        Self { probs }
    }

    #[inline]
    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    #[inline]
    pub fn prob(&self, label: usize) -> f64 {
        self.probs[label]
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.probs
    }

    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &p) in self.probs.iter().enumerate() {
            if p > self.probs[best] {
                best = i;
            }
        }
        best
    }

    /// `(1 - beta) * self + beta * other`.
    pub fn mix(&self, other: &Categorical, beta: f64) -> Result<Self> {
        if self.len() != other.len() {
            return Err(invalid("mixing distributions of different sizes"));
        }
        if !(0.0..=1.0).contains(&beta) {
            return Err(invalid(format!("mixture weight {beta} outside [0, 1]")));
        }
        Ok(Self::from_normalized_unchecked(self.probs.iter().zip(&other.probs).map(|(a, b)| (1.0 - beta) * a + beta * b).collect()))
    }

    /// Shannon entropy in nats.
    pub fn entropy(&self) -> f64 {
        self.probs.iter().filter(|&&p| p > 0.0).map(|&p| -p * p.ln()).sum()
    }

    /// `-Σ_y self(y) ln model(y)` with the model floored at [`PROB_FLOOR`].
    pub fn cross_entropy(&self, model: &Categorical) -> f64 {
        self.probs.iter().zip(&model.probs).filter(|(&p, _)| p > 0.0).map(|(&p, &q)| -p * floored(q).ln()).sum()
    }

    pub fn kl(&self, model: &Categorical) -> f64 {
        self.cross_entropy(model) - self.entropy()
    }
}

/// One observation split into short context, extended context and label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord<S, E> {
    pub short_ctx: S,
    pub ext_ctx: E,
    pub label: usize,
}

impl<S, E> SampleRecord<S, E> {
    pub fn new(short_ctx: S, ext_ctx: E, label: usize) -> Self {
        Self { short_ctx, ext_ctx, label }
    }
}

/// A non-empty, ordered collection of records; each carries weight `1/n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset<S, E> {
    records: Vec<SampleRecord<S, E>>,
}

impl<S, E> Dataset<S, E> {
    pub fn new(records: Vec<SampleRecord<S, E>>) -> Result<Self> {
        if records.is_empty() {
            return Err(invalid("dataset must contain at least one record"));
        }
        Ok(Self { records })
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.records.len()
    }

    #[inline]
    pub fn records(&self) -> &[SampleRecord<S, E>] {
        &self.records
    }

    #[inline]
    pub fn record(&self, t: usize) -> &SampleRecord<S, E> {
        &self.records[t]
    }
}

/// Multiset of extended contexts per short context, stored as record indices.
#[derive(Debug, Clone)]
pub struct ShortContextIndex<S: Hash + Eq> {
    buckets: IndexMap<S, Vec<usize>>,
}

impl<S: Hash + Eq + Clone> ShortContextIndex<S> {
    pub fn bucket(&self, short_ctx: &S) -> Option<&[usize]> {
        self.buckets.get(short_ctx).map(Vec::as_slice)
    }

    pub fn num_contexts(&self) -> usize {
        self.buckets.len()
    }

    /// Buckets in order of first appearance in the dataset.
    pub fn iter(&self) -> impl Iterator<Item = (&S, &[usize])> {
        self.buckets.iter().map(|(k, v)| (k, v.as_slice()))
    }

    pub fn total_size(&self) -> usize {
        self.buckets.values().map(Vec::len).sum()
    }
}

pub fn build_index<S: Hash + Eq + Clone, E>(dataset: &Dataset<S, E>) -> ShortContextIndex<S> {
    let mut buckets: IndexMap<S, Vec<usize>> = IndexMap::new();
    for (t, r) in dataset.records().iter().enumerate() {
        buckets.entry(r.short_ctx.clone()).or_default().push(t);
    }
    ShortContextIndex { buckets }
}

/// Count-based conditional over labels for one short context.
pub fn empirical_conditional<S: PartialEq + Debug, E>(dataset: &Dataset<S, E>, short_ctx: &S, num_labels: usize) -> Result<Categorical> {
    let mut counts = vec![0.0; num_labels];
    for r in dataset.records().iter().filter(|r| &r.short_ctx == short_ctx) {
        if r.label >= num_labels {
            return Err(invalid(format!("label {} outside 0..{num_labels}", r.label)));
        }
        counts[r.label] += 1.0;
    }
    if counts.iter().all(|&c| c == 0.0) {
        return Err(ImmError::UnseenContext(format!("{short_ctx:?}")));
    }
    Categorical::from_weights(counts)
}

/// Draws `k` record indices uniformly, with replacement, from the bucket of `short_ctx`.
pub fn sample_bucket<S: Hash + Eq + Clone + Debug>(
    index: &ShortContextIndex<S>,
    short_ctx: &S,
    k: usize,
    rng: &mut RandomSource,
) -> Result<Vec<usize>> {
    if k == 0 {
        return Err(invalid("sample size k must be at least 1"));
    }
    let bucket = match index.bucket(short_ctx) {
        Some(b) if !b.is_empty() => b,
        _ => return Err(ImmError::UnseenContext(format!("{short_ctx:?}"))),
    };
    Ok((0..k).map(|_| bucket[rng.random_range(0..bucket.len())]).collect())
}

/// Seeded ChaCha stream. `(seed, stream)` fully determines the draw sequence.
#[derive(Debug, Clone)]
pub struct RandomSource {
    seed: u64,
    stream: u64,
    rng: ChaCha8Rng,
}

impl RandomSource {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Self { seed, stream, rng }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    /// A fresh source on the same seed with a different stream id.
    pub fn fork(&self, stream: u64) -> Self {
        Self::new(self.seed, stream)
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.rng.random::<f64>()
    }

    /// Uniform index in `0..n`.
    pub fn index(&mut self, n: usize) -> usize {
        self.rng.random_range(0..n)
    }

    /// Draws a label from a probability vector by inversion.
    pub fn categorical(&mut self, probs: &[f64]) -> usize {
        let u: f64 = self.rng.random();
        let mut acc = 0.0;
        for (i, &p) in probs.iter().enumerate() {
            acc += p;
            if u < acc {
                return i;
            }
        }
        // rounding left u above the cumulative sum; return the last supported label
        probs.iter().rposition(|&p| p > 0.0).unwrap_or(probs.len() - 1)
    }
}

impl RngCore for RandomSource {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.rng.fill_bytes(dst)
    }
}

/// Interned token table shared by text datasets and corpora.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Vocab {
    tokens: Vec<String>,
    #[serde(skip)]
    ids: HashMap<String, u32>,
}

impl Vocab {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        let mut v = Self::new();
        for t in tokens {
            if v.ids.contains_key(&t) {
                return Err(invalid(format!("duplicate vocabulary token {t:?}")));
            }
            v.intern(&t);
        }
        Ok(v)
    }

    pub fn intern(&mut self, token: &str) -> u32 {
        if let Some(&id) = self.ids.get(token) {
            return id;
        }
        let id = self.tokens.len() as u32;
        self.tokens.push(token.to_string());
        self.ids.insert(token.to_string(), id);
        id
    }

    pub fn id(&self, token: &str) -> Result<u32> {
        self.ids.get(token).copied().ok_or_else(|| ImmError::UnknownToken(token.to_string()))
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }
}

/// A discrete dataset parsed from the tab-separated text format.
#[derive(Debug, Clone)]
pub struct TextDataset {
    pub vocab: Vocab,
    pub dataset: Dataset<u32, Vec<u32>>,
}

/// Parses `short_ctx<TAB>ext_ctx_tokens<TAB>label` lines. Blank lines and lines
/// starting with `#` are skipped. All fields share one vocabulary.
pub fn parse_text_dataset(text: &str) -> Result<TextDataset> {
    let mut vocab = Vocab::new();
    let mut records = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() || line.trim_start().starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        let err = |msg: &str| ImmError::Parse { line: i + 1, msg: msg.to_string() };
        if fields.len() != 3 {
            return Err(err("expected three tab-separated fields"));
        }
        let short = fields[0].trim();
        let ext: Vec<&str> = fields[1].split_whitespace().collect();
        let label = fields[2].trim();
        if short.is_empty() || short.contains(char::is_whitespace) {
            return Err(err("short context must be a single token"));
        }
        if ext.is_empty() {
            return Err(err("extended context is empty"));
        }
        if label.is_empty() || label.contains(char::is_whitespace) {
            return Err(err("label must be a single token"));
        }
        let short = vocab.intern(short);
        let ext = ext.iter().map(|t| vocab.intern(t)).collect();
        let label = vocab.intern(label) as usize;
        records.push(SampleRecord::new(short, ext, label));
    }
    Ok(TextDataset { vocab, dataset: Dataset::new(records)? })
}

pub fn format_text_dataset(data: &TextDataset) -> String {
    let tok = |id: u32| data.vocab.token(id).unwrap_or("<?>");
    let mut out = String::new();
    for r in data.dataset.records() {
        let ext: Vec<&str> = r.ext_ctx.iter().map(|&t| tok(t)).collect();
        out.push_str(&format!("{}\t{}\t{}\n", tok(r.short_ctx), ext.join(" "), tok(r.label as u32)));
    }
    out
}
