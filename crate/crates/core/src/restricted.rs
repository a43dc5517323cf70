//! Target restricted models: the short-context predictors that induced models
//! are matched against.

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, ImmError, Result};
use crate::prob::{Categorical, Vocab};

pub const DEFAULT_DISCOUNT: f64 = 0.75;
pub const SENTENCE_BOUNDARY: &str = "</s>";

/// A predictor that only sees the short context.
pub trait RestrictedModel<S: ?Sized>: Sync {
    fn num_labels(&self) -> usize;
    fn predict(&self, short_ctx: &S) -> Result<Categorical>;
}

impl<S: ?Sized, R: RestrictedModel<S> + ?Sized> RestrictedModel<S> for &R {
    fn num_labels(&self) -> usize {
        (**self).num_labels()
    }
    fn predict(&self, short_ctx: &S) -> Result<Categorical> {
        (**self).predict(short_ctx)
    }
}

/// Restricted model given by an explicit table of rows, one per short-context id.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularRestricted {
    rows: Vec<Categorical>,
}

impl TabularRestricted {
    pub fn new(rows: Vec<Categorical>) -> Result<Self> {
        let Some(first) = rows.first() else { return Err(invalid("empty restricted table")) };
        if rows.iter().any(|r| r.len() != first.len()) {
            return Err(invalid("restricted table rows differ in size"));
        }
        Ok(Self { rows })
    }

    pub fn rows(&self) -> &[Categorical] {
        &self.rows
    }
}

impl RestrictedModel<usize> for TabularRestricted {
    fn num_labels(&self) -> usize {
        self.rows[0].len()
    }
    fn predict(&self, short_ctx: &usize) -> Result<Categorical> {
        self.rows.get(*short_ctx).cloned().ok_or_else(|| ImmError::UnseenContext(short_ctx.to_string()))
    }
}

impl RestrictedModel<u32> for TabularRestricted {
    fn num_labels(&self) -> usize {
        self.rows[0].len()
    }
    fn predict(&self, short_ctx: &u32) -> Result<Categorical> {
        self.predict(&(*short_ctx as usize))
    }
}

/// Interpolated Kneser–Ney bigram with a single absolute discount:
///
/// `P(y|x) = max(c(x,y) - D, 0) / c(x) + ν(x) b(y)`, `ν(x) = D N1+(x,·) / c(x)`,
/// `b(y) ∝ N1+(·,y)`. Unseen contexts back off to `b` alone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KneserNeyBigram {
    vocab_size: usize,
    discount: f64,
    /// context -> (continuation -> count)
    bigrams: BTreeMap<u32, BTreeMap<u32, f64>>,
    context_counts: BTreeMap<u32, f64>,
    unigram_counts: Vec<f64>,
    missing_mass: BTreeMap<u32, f64>,
    backoff: Categorical,
}

impl KneserNeyBigram {
    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn discount(&self) -> f64 {
        self.discount
    }

    pub fn backoff(&self) -> &Categorical {
        &self.backoff
    }

    pub fn unigram_count(&self, token: u32) -> f64 {
        self.unigram_counts.get(token as usize).copied().unwrap_or(0.0)
    }

    pub fn bigram_count(&self, ctx: u32, y: u32) -> f64 {
        self.bigrams.get(&ctx).and_then(|m| m.get(&y)).copied().unwrap_or(0.0)
    }

    pub fn context_count(&self, ctx: u32) -> f64 {
        self.context_counts.get(&ctx).copied().unwrap_or(0.0)
    }

    /// ν(x̄); zero for contexts never seen.
    pub fn missing_mass(&self, ctx: u32) -> f64 {
        self.missing_mass.get(&ctx).copied().unwrap_or(0.0)
    }

    pub fn seen_contexts(&self) -> impl Iterator<Item = u32> + '_ {
        self.context_counts.keys().copied()
    }

    /// Rebuilds derived quantities from pair counts. Used by both fitting and loading.
    fn from_pair_counts(vocab_size: usize, discount: f64, bigrams: BTreeMap<u32, BTreeMap<u32, f64>>) -> Result<Self> {
        if !(discount > 0.0 && discount < 1.0) {
            return Err(invalid(format!("discount {discount} outside (0, 1)")));
        }
        let mut context_counts = BTreeMap::new();
        let mut missing_mass = BTreeMap::new();
        let mut continuation = vec![0.0; vocab_size];
        let mut unigram_counts = vec![0.0; vocab_size];
        for (&x, row) in &bigrams {
            let c: f64 = row.values().sum();
            if c <= 0.0 {
                continue;
            }
            context_counts.insert(x, c);
            missing_mass.insert(x, discount * row.len() as f64 / c);
            for (&y, &cnt) in row {
                if y as usize >= vocab_size {
                    return Err(invalid(format!("token id {y} outside vocabulary of {vocab_size}")));
                }
                continuation[y as usize] += 1.0;
                unigram_counts[y as usize] += cnt;
            }
        }
        if context_counts.is_empty() {
            return Err(invalid("no bigrams to fit"));
        }
        let backoff = Categorical::from_weights(continuation)?;
        Ok(Self { vocab_size, discount, bigrams, context_counts, unigram_counts, missing_mass, backoff })
    }

    /// Full conditional row for one context.
    pub fn row(&self, ctx: u32) -> Categorical {
        let b = self.backoff.probs();
        match (self.bigrams.get(&ctx), self.context_counts.get(&ctx)) {
            (Some(row), Some(&c)) => {
                let nu = self.missing_mass(ctx);
                let mut p: Vec<f64> = b.iter().map(|&by| nu * by).collect();
                for (&y, &cnt) in row {
                    p[y as usize] += (cnt - self.discount).max(0.0) / c;
                }
                Categorical::from_normalized_unchecked(p)
            }
            _ => self.backoff.clone(),
        }
    }

    /// Serializes to a versioned plain-text table.
    pub fn to_text(&self, vocab: &Vocab) -> String {
        let mut out = String::from("# imm kneser-ney bigram\nversion 1\n");
        out.push_str(&format!("discount {}\nvocab {}\n", self.discount, self.vocab_size));
        for (i, t) in vocab.tokens().iter().enumerate() {
            out.push_str(&format!("token {i} {t}\n"));
        }
        for (x, row) in &self.bigrams {
            for (y, c) in row {
                out.push_str(&format!("bigram {x} {y} {c}\n"));
            }
        }
        out
    }

    pub fn from_text(text: &str) -> Result<(Self, Vocab)> {
        let mut version = None;
        let mut discount = None;
        let mut vocab_size = None;
        let mut tokens: Vec<(usize, String)> = Vec::new();
        let mut bigrams: BTreeMap<u32, BTreeMap<u32, f64>> = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |msg: String| ImmError::Parse { line: i + 1, msg };
            let mut parts = line.split_whitespace();
            let key = parts.next().unwrap_or_default();
            let rest: Vec<&str> = parts.collect();
            let num = |s: &str| s.parse::<f64>().map_err(|e| err(format!("{s:?}: {e}")));
            let id = |s: &str| s.parse::<u32>().map_err(|e| err(format!("{s:?}: {e}")));
            match (key, rest.as_slice()) {
                ("version", [v]) => version = Some(id(v)?),
                ("discount", [d]) => discount = Some(num(d)?),
                ("vocab", [v]) => vocab_size = Some(id(v)? as usize),
                ("token", [i, t]) => tokens.push((id(i)? as usize, t.to_string())),
                ("bigram", [x, y, c]) => {
                    bigrams.entry(id(x)?).or_default().insert(id(y)?, num(c)?);
                }
                _ => return Err(err(format!("unrecognized entry {line:?}"))),
            }
        }
        if version != Some(1) {
            return Err(invalid(format!("unsupported model version {version:?}")));
        }
        let vocab_size = vocab_size.ok_or_else(|| invalid("missing vocab size"))?;
        tokens.sort_by_key(|(i, _)| *i);
        if tokens.iter().enumerate().any(|(k, (i, _))| k != *i) || tokens.len() != vocab_size {
            return Err(invalid("token table does not cover 0..vocab"));
        }
        let vocab = Vocab::from_tokens(tokens.into_iter().map(|(_, t)| t).collect())?;
        let discount = discount.ok_or_else(|| invalid("missing discount"))?;
        Ok((Self::from_pair_counts(vocab_size, discount, bigrams)?, vocab))
    }
}

impl RestrictedModel<u32> for KneserNeyBigram {
    fn num_labels(&self) -> usize {
        self.vocab_size
    }
    fn predict(&self, short_ctx: &u32) -> Result<Categorical> {
        Ok(self.row(*short_ctx))
    }
}

/// Fits the bigram on a token-id sequence over a closed vocabulary of `vocab_size`.
pub fn kn_fit(corpus: &[u32], vocab_size: usize, discount: f64) -> Result<KneserNeyBigram> {
    if corpus.len() < 2 {
        return Err(invalid("corpus needs at least two tokens"));
    }
    if let Some(&bad) = corpus.iter().find(|&&t| t as usize >= vocab_size) {
        return Err(invalid(format!("token id {bad} outside vocabulary of {vocab_size}")));
    }
    let mut bigrams: BTreeMap<u32, BTreeMap<u32, f64>> = BTreeMap::new();
    for w in corpus.windows(2) {
        *bigrams.entry(w[0]).or_default().entry(w[1]).or_insert(0.0) += 1.0;
    }
    KneserNeyBigram::from_pair_counts(vocab_size, discount, bigrams)
}

pub fn kn_prob(model: &KneserNeyBigram, y: u32, short_ctx: u32) -> Result<f64> {
    if y as usize >= model.vocab_size {
        return Err(ImmError::UnknownToken(y.to_string()));
    }
    Ok(model.row(short_ctx).prob(y as usize))
}

/// Reads a whitespace-tokenized corpus, one sentence per line, inserting the
/// sentence-boundary token after every line.
pub fn read_corpus(text: &str, vocab: &mut Vocab) -> Vec<u32> {
    let boundary = vocab.intern(SENTENCE_BOUNDARY);
    let mut out = Vec::new();
    for line in text.lines() {
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.is_empty() {
            continue;
        }
        out.extend(toks.iter().map(|t| vocab.intern(t)));
        out.push(boundary);
    }
    out
}

/// Restricted Bayes predictor for labels `1{a x1 + b x2 + c x3 + d > 0}` with
/// features uniform on the cube `[lo, hi]^3`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnalyticRestrictedLogistic {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
    pub lo: f64,
    pub hi: f64,
}

impl Default for AnalyticRestrictedLogistic {
    fn default() -> Self {
        Self { a: 1.0, b: 1.0, c: 1.0, d: 0.0, lo: -1.0, hi: 1.0 }
    }
}

impl AnalyticRestrictedLogistic {
    pub fn new(a: f64, b: f64, c: f64, d: f64, lo: f64, hi: f64) -> Result<Self> {
        if !(lo < hi) || ![a, b, c, d, lo, hi].iter().all(|v| v.is_finite()) {
            return Err(invalid("discriminant coefficients must be finite and lo < hi"));
        }
        Ok(Self { a, b, c, d, lo, hi })
    }

    pub fn discriminant(&self, x: &[f64; 3]) -> f64 {
        self.a * x[0] + self.b * x[1] + self.c * x[2] + self.d
    }

    pub fn label(&self, x: &[f64; 3]) -> usize {
        usize::from(self.discriminant(x) > 0.0)
    }

    /// Fraction of the `(x2, x3)` square where the discriminant is positive.
    pub fn positive_fraction(&self, x1: f64) -> Result<f64> {
        if !(self.lo..=self.hi).contains(&x1) {
            return Err(invalid(format!("x1 = {x1} outside [{}, {}]", self.lo, self.hi)));
        }
        let offset = self.a * x1 + self.d;
        let (lo, hi) = (self.lo, self.hi);
        let square = [(lo, lo), (hi, lo), (hi, hi), (lo, hi)];
        let clipped = clip_halfplane(&square, |(u, v)| self.b * u + self.c * v + offset);
        Ok((polygon_area(&clipped) / (hi - lo).powi(2)).clamp(0.0, 1.0))
    }
}

impl RestrictedModel<f64> for AnalyticRestrictedLogistic {
    fn num_labels(&self) -> usize {
        2
    }
    fn predict(&self, x1: &f64) -> Result<Categorical> {
        let p = self.positive_fraction(*x1)?;
        Ok(Categorical::from_normalized_unchecked(vec![1.0 - p, p]))
    }
}

/// Public alias matching the operation name used in docs and the CLI.
pub fn restricted_logistic_prob(model: &AnalyticRestrictedLogistic, x1: f64) -> Result<Categorical> {
    model.predict(&x1)
}

/// Keeps the part of a convex polygon where `f > 0` (Sutherland–Hodgman, one edge).
fn clip_halfplane(poly: &[(f64, f64)], f: impl Fn((f64, f64)) -> f64) -> Vec<(f64, f64)> {
    let mut out = Vec::with_capacity(poly.len() + 1);
    for i in 0..poly.len() {
        let p = poly[i];
        let q = poly[(i + 1) % poly.len()];
        let (fp, fq) = (f(p), f(q));
        if fp > 0.0 {
            out.push(p);
        }
        if (fp > 0.0) != (fq > 0.0) {
            let s = fp / (fp - fq);
            out.push((p.0 + s * (q.0 - p.0), p.1 + s * (q.1 - p.1)));
        }
    }
    out
}

fn polygon_area(poly: &[(f64, f64)]) -> f64 {
    if poly.len() < 3 {
        return 0.0;
    }
    let mut twice = 0.0;
    for i in 0..poly.len() {
        let (x0, y0) = poly[i];
        let (x1, y1) = poly[(i + 1) % poly.len()];
        twice += x0 * y1 - x1 * y0;
    }
    twice.abs() / 2.0
}

/// `(1 - ε) base + ε uniform`.
#[derive(Debug, Clone)]
pub struct CorruptedRestrictedModel<B> {
    base: B,
    epsilon: f64,
}

impl<B> CorruptedRestrictedModel<B> {
    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }
    pub fn base(&self) -> &B {
        &self.base
    }
}

pub fn corrupt<B>(base: B, epsilon: f64) -> Result<CorruptedRestrictedModel<B>> {
    if !(0.0..=1.0).contains(&epsilon) {
        return Err(invalid(format!("corruption level {epsilon} outside [0, 1]")));
    }
    Ok(CorruptedRestrictedModel { base, epsilon })
}

impl<S: ?Sized, B: RestrictedModel<S>> RestrictedModel<S> for CorruptedRestrictedModel<B> {
    fn num_labels(&self) -> usize {
        self.base.num_labels()
    }
    fn predict(&self, short_ctx: &S) -> Result<Categorical> {
        let base = self.base.predict(short_ctx)?;
        base.mix(&Categorical::uniform(base.len()), self.epsilon)
    }
}

/// Distinct-token count of a corpus; used to size closed vocabularies.
pub fn distinct_tokens(corpus: &[u32]) -> usize {
    corpus.iter().collect::<HashSet<_>>().len()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn kn_hand_computed_abab() {
        // a=0, b=1: pairs (a,b), (b,a), (a,b)
        let m = kn_fit(&[0, 1, 0, 1], 2, 0.75).unwrap();
        // continuation counts: N1+(.,a) = 1, N1+(.,b) = 1
        assert_eq!(m.backoff().probs(), &[0.5, 0.5]);
        assert!((m.missing_mass(0) - 0.375).abs() < 1e-15);
        let expected_b_given_a = (2.0 - 0.75) / 2.0 + (0.75 * 1.0 / 2.0) * 0.5;
        assert!((kn_prob(&m, 1, 0).unwrap() - expected_b_given_a).abs() < 1e-15);
        assert!((kn_prob(&m, 0, 0).unwrap() - 0.1875).abs() < 1e-15);
        // context b seen once with continuation a: (1-.75)/1 + .75 * .5
        assert!((kn_prob(&m, 0, 1).unwrap() - 0.625).abs() < 1e-15);
    }

    #[test]
    fn kn_unseen_context_backs_off() {
        let m = kn_fit(&[0, 1, 0, 1], 3, 0.75).unwrap();
        assert_eq!(m.row(2), *m.backoff());
        assert!(matches!(kn_prob(&m, 3, 0), Err(ImmError::UnknownToken(_))));
    }

    #[test]
    fn kn_small_discount_approaches_empirical() {
        let corpus = [0, 1, 0, 1, 0, 2, 1, 0];
        let m = kn_fit(&corpus, 3, 1e-9).unwrap();
        // after 0: 1, 1, 2
        assert!((kn_prob(&m, 1, 0).unwrap() - 2.0 / 3.0).abs() < 1e-8);
        assert!((kn_prob(&m, 2, 0).unwrap() - 1.0 / 3.0).abs() < 1e-8);
    }

    #[test]
    fn kn_rejects_bad_input() {
        assert!(kn_fit(&[], 2, 0.5).is_err());
        assert!(kn_fit(&[0], 2, 0.5).is_err());
        assert!(kn_fit(&[0, 1], 2, 0.0).is_err());
        assert!(kn_fit(&[0, 1], 2, 1.0).is_err());
    }

    #[test]
    fn kn_text_round_trip() {
        let mut vocab = Vocab::new();
        let corpus = read_corpus("the cat sat\nthe dog sat\n", &mut vocab);
        assert_eq!(vocab.token(*corpus.last().unwrap()), Some(SENTENCE_BOUNDARY));
        let m = kn_fit(&corpus, vocab.len(), 0.75).unwrap();
        let (back, v2) = KneserNeyBigram::from_text(&m.to_text(&vocab)).unwrap();
        assert_eq!(back, m);
        assert_eq!(v2.tokens(), vocab.tokens());
        assert!(KneserNeyBigram::from_text("version 2\n").is_err());
    }

    proptest! {
        #[test]
        fn kn_rows_normalized(corpus in prop::collection::vec(0u32..6, 2..60), d in 0.05f64..0.95) {
            let m = kn_fit(&corpus, 6, d).unwrap();
            for ctx in 0..6u32 {
                let s: f64 = (0..6).map(|y| kn_prob(&m, y, ctx).unwrap()).sum();
                prop_assert!((s - 1.0).abs() < 1e-9);
            }
            for ctx in m.seen_contexts().collect::<Vec<_>>() {
                let nu = m.missing_mass(ctx);
                prop_assert!(nu > 0.0 && nu < 1.0);
                let c = m.context_count(ctx);
                let discounted: f64 = (0..6).map(|y| (m.bigram_count(ctx, y) - d).max(0.0) / c).sum();
                prop_assert!((discounted - (1.0 - nu)).abs() < 1e-12);
            }
        }

        #[test]
        fn corruption_is_affine(p in 0.0f64..1.0, eps in 0.0f64..1.0) {
            let base = TabularRestricted::new(vec![Categorical::new(vec![1.0 - p, p]).unwrap()]).unwrap();
            let c = corrupt(&base, eps).unwrap();
            let out = RestrictedModel::<usize>::predict(&c, &0).unwrap();
            prop_assert!((out.prob(1) - ((1.0 - eps) * p + eps * 0.5)).abs() < 1e-12);
            prop_assert!((out.probs().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn corrupt_endpoints_and_arithmetic() {
        let base = TabularRestricted::new(vec![Categorical::new(vec![0.9, 0.1]).unwrap()]).unwrap();
        let id = corrupt(&base, 0.0).unwrap();
        assert_eq!(RestrictedModel::<usize>::predict(&id, &0).unwrap().probs(), &[0.9, 0.1]);
        let full = corrupt(&base, 1.0).unwrap();
        assert_eq!(RestrictedModel::<usize>::predict(&full, &0).unwrap().probs(), &[0.5, 0.5]);
        let half = corrupt(&base, 0.5).unwrap();
        let p = RestrictedModel::<usize>::predict(&half, &0).unwrap();
        assert!((p.prob(0) - 0.7).abs() < 1e-15 && (p.prob(1) - 0.3).abs() < 1e-15);
        assert!(corrupt(&base, 1.5).is_err());
        assert!(corrupt(&base, -0.1).is_err());
    }

    #[test]
    fn analytic_logistic_symmetry_and_saturation() {
        let m = AnalyticRestrictedLogistic::default();
        assert!((m.positive_fraction(0.0).unwrap() - 0.5).abs() < 1e-15);
        // x2 + x3 > -1 misses one corner triangle of area 1/2 out of 4
        assert!((m.positive_fraction(1.0).unwrap() - 0.875).abs() < 1e-15);
        let steep = AnalyticRestrictedLogistic::new(3.0, 1.0, 1.0, 0.0, -1.0, 1.0).unwrap();
        assert_eq!(steep.positive_fraction(1.0).unwrap(), 1.0);
        assert_eq!(steep.positive_fraction(-1.0).unwrap(), 0.0);
        assert!(m.positive_fraction(1.5).is_err());
    }

    #[test]
    fn analytic_logistic_matches_grid_integration() {
        // midpoint rule on a 2000x2000 grid of the (x2, x3) square
        let m = AnalyticRestrictedLogistic::default();
        let grid = 2000;
        let h = 2.0 / grid as f64;
        let mut inside = 0usize;
        for i in 0..grid {
            let u = -1.0 + (i as f64 + 0.5) * h;
            for j in 0..grid {
                let v = -1.0 + (j as f64 + 0.5) * h;
                if 1.0 + u + v > 0.0 {
                    inside += 1;
                }
            }
        }
        let grid_value = inside as f64 / (grid * grid) as f64;
        assert!((m.positive_fraction(1.0).unwrap() - grid_value).abs() < 2e-3);
    }

    #[test]
    fn analytic_logistic_monotone() {
        let m = AnalyticRestrictedLogistic::new(1.3, 0.4, 2.0, 0.2, -1.0, 1.0).unwrap();
        let mut prev = -1.0;
        for i in 0..=200 {
            let p = m.positive_fraction(-1.0 + i as f64 / 100.0).unwrap();
            assert!(p >= prev - 1e-15 && (0.0..=1.0).contains(&p));
            prev = p;
        }
    }
}
