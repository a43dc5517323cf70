//! Expected counts seen by a learner trained on noised bigram data.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::prob::{Categorical, RandomSource};

/// Non-negative counts `c(x, y)` over a square context × label table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountTable {
    size: usize,
    cells: Vec<f64>,
}

impl CountTable {
    pub fn zeros(size: usize) -> Self {
        Self { size, cells: vec![0.0; size * size] }
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let size = rows.len();
        if size == 0 || rows.iter().any(|r| r.len() != size) {
            return Err(invalid("count table must be square and non-empty"));
        }
        let cells: Vec<f64> = rows.into_iter().flatten().collect();
        if cells.iter().any(|c| !(*c >= 0.0 && c.is_finite())) {
            return Err(invalid("counts must be finite and non-negative"));
        }
        Ok(Self { size, cells })
    }

    /// Bigram counts of a token sequence.
    pub fn from_corpus(corpus: &[u32], vocab: usize) -> Result<Self> {
        let mut t = Self::zeros(vocab);
        for w in corpus.windows(2) {
            let (x, y) = (w[0] as usize, w[1] as usize);
            if x >= vocab || y >= vocab {
                return Err(invalid(format!("token outside vocabulary of {vocab}")));
            }
            t.cells[x * vocab + y] += 1.0;
        }
        Ok(t)
    }

    pub fn size(&self) -> usize {
        self.size
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.cells[x * self.size + y]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f64) {
        self.cells[x * self.size + y] = v;
    }

    /// `c(x) = Σ_y c(x, y)`
    pub fn context_total(&self, x: usize) -> f64 {
        self.cells[x * self.size..(x + 1) * self.size].iter().sum()
    }

    pub fn label_total(&self, y: usize) -> f64 {
        (0..self.size).map(|x| self.get(x, y)).sum()
    }

    pub fn total(&self) -> f64 {
        self.cells.iter().sum()
    }

    pub fn cells(&self) -> &[f64] {
        &self.cells
    }
}

/// Per-context noising probability `γ(x) = gamma0 · gamma[x]` and proposal `q`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoisingSpec {
    pub gamma: Vec<f64>,
    pub q: Categorical,
    pub gamma0: f64,
}

impl NoisingSpec {
    pub fn new(gamma: Vec<f64>, q: Categorical, gamma0: f64) -> Result<Self> {
        let s = Self { gamma, q, gamma0 };
        if s.gamma.len() != s.q.len() {
            return Err(invalid("gamma and proposal must cover the same vocabulary"));
        }
        if (0..s.gamma.len()).any(|x| !(0.0..=1.0).contains(&s.gamma_at(x))) {
            return Err(invalid("noising probabilities must lie in [0, 1]"));
        }
        Ok(s)
    }

    pub fn constant(size: usize, gamma: f64, q: Categorical) -> Result<Self> {
        Self::new(vec![gamma; size], q, 1.0)
    }

    #[inline]
    pub fn gamma_at(&self, x: usize) -> f64 {
        self.gamma0 * self.gamma[x]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoisingCase {
    ContextOnly,
    PredictionOnly,
    Both,
}

impl NoisingCase {
    pub const ALL: [NoisingCase; 3] = [NoisingCase::ContextOnly, NoisingCase::PredictionOnly, NoisingCase::Both];
}

fn check(counts: &CountTable, spec: &NoisingSpec) -> Result<()> {
    if spec.gamma.len() != counts.size() {
        return Err(invalid(format!("spec covers {} tokens, table {}", spec.gamma.len(), counts.size())));
    }
    Ok(())
}

/// Closed-form `E[c̃(x, y)]` when each pair is noised with probability `γ(x)`.
pub fn expected_noised_counts(counts: &CountTable, spec: &NoisingSpec, case: NoisingCase) -> Result<CountTable> {
    check(counts, spec)?;
    let n = counts.size();
    let q = spec.q.probs();
    let mut out = CountTable::zeros(n);
    let noised_by_label: Vec<f64> = (0..n).map(|y| (0..n).map(|x| spec.gamma_at(x) * counts.get(x, y)).sum()).collect();
    let noised_total: f64 = noised_by_label.iter().sum();
    for x in 0..n {
        let g = spec.gamma_at(x);
        let cx = counts.context_total(x);
        for y in 0..n {
            let kept = (1.0 - g) * counts.get(x, y);
            let moved = match case {
                NoisingCase::ContextOnly => q[x] * noised_by_label[y],
                NoisingCase::PredictionOnly => q[y] * g * cx,
                NoisingCase::Both => q[y] * q[x] * noised_total,
            };
            out.set(x, y, kept + moved);
        }
    }
    Ok(out)
}

/// `(1-λ0)·c + λ0·[(1-ν(x))·c + ν(x)·q(y)·c(x)]`.
pub fn kn_noising_counts(counts: &CountTable, missing_mass: &[f64], q: &Categorical, lambda0: f64) -> Result<CountTable> {
    let n = counts.size();
    if missing_mass.len() != n || q.len() != n {
        return Err(invalid("missing mass and proposal must cover the table's vocabulary"));
    }
    if !(0.0..=1.0).contains(&lambda0) {
        return Err(invalid(format!("lambda0 must lie in [0, 1], got {lambda0}")));
    }
    if missing_mass.iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(invalid("missing mass must lie in [0, 1]"));
    }
    let mut out = CountTable::zeros(n);
    for x in 0..n {
        let nu = missing_mass[x];
        let cx = counts.context_total(x);
        for y in 0..n {
            let c = counts.get(x, y);
            out.set(x, y, (1.0 - lambda0) * c + lambda0 * ((1.0 - nu) * c + nu * q.prob(y) * cx));
        }
    }
    Ok(out)
}

/// Literal noising of `tokens` resampled pairs (whole passes over the counts,
/// which must be integers). Returns the per-pass mean table and the standard
/// error of each cell's mean.
pub fn simulate_noised_counts(
    counts: &CountTable,
    spec: &NoisingSpec,
    case: NoisingCase,
    tokens: usize,
    rng: &mut RandomSource,
) -> Result<(CountTable, CountTable)> {
    check(counts, spec)?;
    if counts.cells().iter().any(|c| c.fract() != 0.0) {
        return Err(invalid("simulation needs integer counts"));
    }
    let n = counts.size();
    let total = counts.total();
    if total == 0.0 {
        return Err(invalid("simulation needs at least one pair"));
    }
    let passes = ((tokens as f64 / total).ceil() as usize).max(2);
    let q = spec.q.probs();
    let mut sum = vec![0.0; n * n];
    let mut sum_sq = vec![0.0; n * n];
    let mut pass_counts = vec![0.0; n * n];
    for _ in 0..passes {
        pass_counts.iter_mut().for_each(|v| *v = 0.0);
        for x in 0..n {
            let g = spec.gamma_at(x);
            for y in 0..n {
                for _ in 0..counts.get(x, y) as usize {
                    let (mut xx, mut yy) = (x, y);
                    if rng.uniform(0.0, 1.0) < g {
                        match case {
                            NoisingCase::ContextOnly => xx = rng.categorical(q),
                            NoisingCase::PredictionOnly => yy = rng.categorical(q),
                            NoisingCase::Both => {
                                xx = rng.categorical(q);
                                yy = rng.categorical(q);
                            }
                        }
                    }
                    pass_counts[xx * n + yy] += 1.0;
                }
            }
        }
        for (i, v) in pass_counts.iter().enumerate() {
            sum[i] += v;
            sum_sq[i] += v * v;
        }
    }
    let p = passes as f64;
    let mean: Vec<f64> = sum.iter().map(|s| s / p).collect();
    let se: Vec<f64> = sum_sq.iter().zip(&mean).map(|(sq, m)| ((sq / p - m * m).max(0.0) * p / (p - 1.0) / p).sqrt()).collect();
    Ok((CountTable { size: n, cells: mean }, CountTable { size: n, cells: se }))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table() -> CountTable {
        CountTable::from_rows(vec![vec![5.0, 1.0, 0.0], vec![2.0, 7.0, 3.0], vec![0.0, 4.0, 6.0]]).unwrap()
    }

    fn q() -> Categorical {
        Categorical::new(vec![0.5, 0.3, 0.2]).unwrap()
    }

    #[test]
    fn no_noise_is_identity() {
        let c = table();
        let spec = NoisingSpec::constant(3, 0.0, q()).unwrap();
        for case in NoisingCase::ALL {
            assert_eq!(expected_noised_counts(&c, &spec, case).unwrap(), c);
        }
    }

    #[test]
    fn full_prediction_noise_collapses() {
        let c = table();
        let spec = NoisingSpec::constant(3, 1.0, q()).unwrap();
        let out = expected_noised_counts(&c, &spec, NoisingCase::PredictionOnly).unwrap();
        for x in 0..3 {
            for y in 0..3 {
                assert!((out.get(x, y) - q().prob(y) * c.context_total(x)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn mass_is_preserved() {
        let c = table();
        let spec = NoisingSpec::new(vec![0.1, 0.6, 0.3], q(), 0.9).unwrap();
        for case in NoisingCase::ALL {
            let out = expected_noised_counts(&c, &spec, case).unwrap();
            assert!((out.total() - c.total()).abs() < 1e-12);
        }
    }

    #[test]
    fn kn_endpoints_and_identity() {
        let c = table();
        let nu = [0.3, 0.45, 0.2];
        assert_eq!(kn_noising_counts(&c, &nu, &q(), 0.0).unwrap(), c);
        let lam = 0.4;
        let kn = kn_noising_counts(&c, &nu, &q(), lam).unwrap();
        let spec = NoisingSpec::new(nu.to_vec(), q(), lam).unwrap();
        let b = expected_noised_counts(&c, &spec, NoisingCase::PredictionOnly).unwrap();
        for (a, b) in kn.cells().iter().zip(b.cells()) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(kn_noising_counts(&c, &nu, &q(), 1.1).is_err());
    }

    #[test]
    fn rejects_bad_tables() {
        assert!(CountTable::from_rows(vec![vec![1.0, 2.0]]).is_err());
        assert!(CountTable::from_rows(vec![vec![-1.0]]).is_err());
        assert!(NoisingSpec::constant(3, 1.5, q()).is_err());
    }
}
