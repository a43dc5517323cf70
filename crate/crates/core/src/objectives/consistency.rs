//! Idealized (infinite-data) objectives on small tabular problems, and the
//! trigram instance on which noising has a minimizer other than the truth.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::prob::{floored, RandomSource, SUM_TOL};

/// Joint context distribution `π(x̄, x̃)` and conditional `P(y | x̄, x̃)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularJoint {
    pub n_short: usize,
    pub n_ext: usize,
    pub n_labels: usize,
    /// `π[s·n_ext + e]`
    pub pi: Vec<f64>,
    /// `P[(s·n_ext + e)·n_labels + y]`
    pub cond: Vec<f64>,
}

impl TabularJoint {
    pub fn new(n_short: usize, n_ext: usize, n_labels: usize, pi: Vec<f64>, cond: Vec<f64>) -> Result<Self> {
        let j = Self { n_short, n_ext, n_labels, pi, cond };
        if j.pi.len() != n_short * n_ext || j.cond.len() != n_short * n_ext * n_labels {
            return Err(invalid("tabular joint has inconsistent dimensions"));
        }
        if j.pi.iter().any(|p| *p < 0.0) || (j.pi.iter().sum::<f64>() - 1.0).abs() > SUM_TOL {
            return Err(invalid("context distribution must be non-negative and sum to 1"));
        }
        j.check_cond(&j.cond)?;
        Ok(j)
    }

    /// Dirichlet-free random instance: uniform weights, normalized.
    pub fn random(n_short: usize, n_ext: usize, n_labels: usize, rng: &mut RandomSource) -> Self {
        let mut pi: Vec<f64> = (0..n_short * n_ext).map(|_| rng.uniform(0.05, 1.0)).collect();
        let s: f64 = pi.iter().sum();
        pi.iter_mut().for_each(|p| *p /= s);
        let cond = random_conditional(n_short * n_ext, n_labels, rng);
        Self { n_short, n_ext, n_labels, pi, cond }
    }

    fn check_cond(&self, q: &[f64]) -> Result<()> {
        if q.len() != self.cond.len() {
            return Err(invalid("conditional table has the wrong size"));
        }
        for row in q.chunks(self.n_labels) {
            if row.iter().any(|p| *p < 0.0) || (row.iter().sum::<f64>() - 1.0).abs() > SUM_TOL {
                return Err(invalid("conditional rows must be distributions"));
            }
        }
        Ok(())
    }

    fn short_mass(&self, s: usize) -> f64 {
        self.pi[s * self.n_ext..(s + 1) * self.n_ext].iter().sum()
    }

    /// `Σ_x̃ π(x̃ | x̄) Q(y | x̄, x̃)`, as `[s·n_labels + y]`.
    pub fn induce(&self, q: &[f64]) -> Vec<f64> {
        let l = self.n_labels;
        let mut out = vec![0.0; self.n_short * l];
        for s in 0..self.n_short {
            let m = self.short_mass(s);
            for e in 0..self.n_ext {
                let w = self.pi[s * self.n_ext + e] / m;
                for y in 0..l {
                    out[s * l + y] += w * q[(s * self.n_ext + e) * l + y];
                }
            }
        }
        out
    }

    /// `Σ_x π(x) KL(P(·|x) ‖ Q(·|x))`
    pub fn full_kl(&self, q: &[f64]) -> f64 {
        let l = self.n_labels;
        (0..self.pi.len()).map(|c| self.pi[c] * kl(&self.cond[c * l..(c + 1) * l], &q[c * l..(c + 1) * l])).sum()
    }

    /// `Σ_x̄ π(x̄) KL(P̄(·|x̄) ‖ Q̄(·|x̄))`
    pub fn induced_kl(&self, q: &[f64]) -> f64 {
        let l = self.n_labels;
        let pbar = self.induce(&self.cond);
        let qbar = self.induce(q);
        (0..self.n_short).map(|s| self.short_mass(s) * kl(&pbar[s * l..(s + 1) * l], &qbar[s * l..(s + 1) * l])).sum()
    }

    /// Cross-entropy plus `λ·IMM`, both shifted by constants to KL form.
    pub fn imm_objective(&self, q: &[f64], lambda: f64) -> f64 {
        self.full_kl(q) + lambda * self.induced_kl(q)
    }

    /// `g(Q) = Σ_x π(x) Σ_y P̄(y|x̄) ln(P(y|x) / Q(y|x))`
    pub fn noising_g(&self, q: &[f64]) -> f64 {
        let l = self.n_labels;
        let pbar = self.induce(&self.cond);
        let mut g = 0.0;
        for s in 0..self.n_short {
            for e in 0..self.n_ext {
                let c = s * self.n_ext + e;
                for y in 0..l {
                    g += self.pi[c] * pbar[s * l + y] * (floored(self.cond[c * l + y]) / floored(q[c * l + y])).ln();
                }
            }
        }
        g
    }

    pub fn noising_objective(&self, q: &[f64], lambda: f64) -> f64 {
        self.full_kl(q) + lambda * self.noising_g(q)
    }
}

fn kl(p: &[f64], q: &[f64]) -> f64 {
    p.iter().zip(q).filter(|(a, _)| **a > 0.0).map(|(a, b)| a * (a / floored(*b)).ln()).sum()
}

fn random_conditional(rows: usize, labels: usize, rng: &mut RandomSource) -> Vec<f64> {
    let mut out = Vec::with_capacity(rows * labels);
    for _ in 0..rows {
        let row: Vec<f64> = (0..labels).map(|_| rng.uniform(0.02, 1.0)).collect();
        let s: f64 = row.iter().sum();
        out.extend(row.iter().map(|v| v / s));
    }
    out
}

/// Random `Q ≠ P`: the log of `P` jittered by a random amount, or a fresh table.
fn perturb(joint: &TabularJoint, rng: &mut RandomSource) -> Vec<f64> {
    let l = joint.n_labels;
    if rng.uniform(0.0, 1.0) < 0.2 {
        return random_conditional(joint.pi.len(), l, rng);
    }
    let sigma = 10f64.powf(rng.uniform(-2.0, 0.5));
    let mut q = Vec::with_capacity(joint.cond.len());
    for row in joint.cond.chunks(l) {
        let z: Vec<f64> = row.iter().map(|p| floored(*p).ln() + sigma * rng.uniform(-1.0, 1.0)).collect();
        let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
        let s: f64 = e.iter().sum();
        q.extend(e.iter().map(|v| v / s));
    }
    q
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyReport {
    pub lambdas: Vec<f64>,
    /// Smallest `objective(Q) - objective(P)` seen for each λ.
    pub min_gap: Vec<f64>,
    pub objective_at_truth: Vec<f64>,
    pub perturbations: usize,
    pub violations: usize,
    pub line_scans: usize,
    pub non_monotone_scans: usize,
}

impl ConsistencyReport {
    pub fn passed(&self) -> bool {
        self.violations == 0 && self.non_monotone_scans == 0
    }
}

/// Checks that `Q = P` beats every random perturbation for each λ, and that
/// the objective rises monotonically along a few lines leaving `P`.
pub fn verify_imm_consistency(joint: &TabularJoint, lambdas: &[f64], perturbations: usize, rng: &mut RandomSource) -> ConsistencyReport {
    let mut min_gap = vec![f64::INFINITY; lambdas.len()];
    let objective_at_truth: Vec<f64> = lambdas.iter().map(|&l| joint.imm_objective(&joint.cond, l)).collect();
    let mut violations = 0;
    let mut non_monotone = 0;
    let line_scans = 10.min(perturbations);
    for i in 0..perturbations {
        let q = perturb(joint, rng);
        for (j, &lam) in lambdas.iter().enumerate() {
            let gap = joint.imm_objective(&q, lam) - objective_at_truth[j];
            min_gap[j] = min_gap[j].min(gap);
            if gap <= 0.0 {
                violations += 1;
            }
            if i < line_scans {
                let mut prev = objective_at_truth[j];
                for step in 1..=20 {
                    let s = step as f64 / 20.0;
                    let mid: Vec<f64> = joint.cond.iter().zip(&q).map(|(p, qq)| (1.0 - s) * p + s * qq).collect();
                    let v = joint.imm_objective(&mid, lam);
                    if v <= prev {
                        non_monotone += 1;
                        break;
                    }
                    prev = v;
                }
            }
        }
    }
    ConsistencyReport {
        lambdas: lambdas.to_vec(),
        min_gap,
        objective_at_truth,
        perturbations,
        violations,
        line_scans,
        non_monotone_scans: non_monotone,
    }
}

/// Two-token trigram instance. Conditionals are indexed `[y][x₋₁][x₋₂]`,
/// induced tables `[y][x₋₁]`, context weights `[x₋₁][x₋₂]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CounterexampleInstance {
    pub pi: [[f64; 2]; 2],
    pub p: [[[f64; 2]; 2]; 2],
    pub pbar: [[f64; 2]; 2],
    pub q_dagger: [[[f64; 2]; 2]; 2],
}

pub fn counterexample_instance() -> CounterexampleInstance {
    CounterexampleInstance {
        pi: [[0.4, 0.3], [0.2, 0.1]],
        p: [[[0.99, 0.01], [0.5, 0.5]], [[0.01, 0.99], [0.5, 0.5]]],
        pbar: [[0.57, 0.5], [0.43, 0.5]],
        q_dagger: [[[0.5; 2]; 2]; 2],
    }
}

/// `P̄(y | x₋₁) = Σ_{x₋₂} π(x₋₁, x₋₂) P(y | x₋₁, x₋₂) / π(x₋₁)`.
pub fn induced_table(pi: &[[f64; 2]; 2], p: &[[[f64; 2]; 2]; 2]) -> [[f64; 2]; 2] {
    let mut out = [[0.0; 2]; 2];
    for (y, row) in out.iter_mut().enumerate() {
        for (a, v) in row.iter_mut().enumerate() {
            *v = (0..2).map(|b| pi[a][b] * p[y][a][b]).sum::<f64>() / (pi[a][0] + pi[a][1]);
        }
    }
    out
}

/// `g(Q) = Σ_{x₋₁,x₋₂} π Σ_y P̄(y|x₋₁) ln[P(y|x₋₁,x₋₂) / Q(y|x₋₁,x₋₂)]`.
pub fn counterexample_g(pi: &[[f64; 2]; 2], p: &[[[f64; 2]; 2]; 2], pbar: &[[f64; 2]; 2], q: &[[[f64; 2]; 2]; 2]) -> f64 {
    let mut g = 0.0;
    for a in 0..2 {
        for b in 0..2 {
            for y in 0..2 {
                g += pi[a][b] * pbar[y][a] * (floored(p[y][a][b]) / floored(q[y][a][b])).ln();
            }
        }
    }
    g
}

impl CounterexampleInstance {
    pub fn joint(&self) -> TabularJoint {
        let pi = vec![self.pi[0][0], self.pi[0][1], self.pi[1][0], self.pi[1][1]];
        let mut cond = Vec::with_capacity(8);
        for a in 0..2 {
            for b in 0..2 {
                cond.push(self.p[0][a][b]);
                cond.push(self.p[1][a][b]);
            }
        }
        TabularJoint { n_short: 2, n_ext: 2, n_labels: 2, pi, cond }
    }

    pub fn flat_q_dagger(&self) -> Vec<f64> {
        let mut q = Vec::with_capacity(8);
        for a in 0..2 {
            for b in 0..2 {
                q.push(self.q_dagger[0][a][b]);
                q.push(self.q_dagger[1][a][b]);
            }
        }
        q
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn g_vanishes_at_truth() {
        let c = counterexample_instance();
        assert!(counterexample_g(&c.pi, &c.p, &c.pbar, &c.p).abs() < 1e-15);
    }

    #[test]
    fn g_by_hand() {
        // only the (0,0) and (0,1) cells differ from 1/2
        let c = counterexample_instance();
        let hand = 0.4 * (0.57 * (0.99f64 / 0.5).ln() + 0.43 * (0.01f64 / 0.5).ln())
            + 0.3 * (0.57 * (0.01f64 / 0.5).ln() + 0.43 * (0.99f64 / 0.5).ln());
        assert!((counterexample_g(&c.pi, &c.p, &c.pbar, &c.q_dagger) - hand).abs() < 1e-14);
    }

    #[test]
    fn joint_matches_array_form() {
        let c = counterexample_instance();
        let j = c.joint();
        let pbar = induced_table(&c.pi, &c.p);
        let flat = j.induce(&j.cond);
        for a in 0..2 {
            for y in 0..2 {
                assert!((flat[a * 2 + y] - pbar[y][a]).abs() < 1e-15);
            }
        }
        let g_arr = counterexample_g(&c.pi, &c.p, &pbar, &c.q_dagger);
        assert!((j.noising_g(&c.flat_q_dagger()) - g_arr).abs() < 1e-14);
    }

    #[test]
    fn truth_has_zero_objective() {
        let mut rng = RandomSource::new(2, 0);
        let j = TabularJoint::random(2, 3, 3, &mut rng);
        assert!(j.imm_objective(&j.cond, 2.0).abs() < 1e-15);
        assert!(TabularJoint::new(1, 1, 2, vec![0.5], vec![0.5, 0.5]).is_err());
    }
}
