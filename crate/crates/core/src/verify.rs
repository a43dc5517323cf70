//! Fast self-checks backing `imm verify`. Each check is independent and
//! reports one line.

use crate::error::Result;
use crate::induction::{
    accumulate_crosstalk_gradient, imm_grad_mixture, imm_grad_serialized, induce_exact, induce_from_records, CrosstalkWeights,
    InductionMethod, SerializedState,
};
use crate::models::{finite_difference_grad, relative_error, DifferentiableModel, LogisticModel, TabularSoftmax, TinyNeuralLM};
use crate::objectives::{
    counterexample_g, counterexample_instance, expected_noised_counts, induced_table, kn_noising_counts, simulate_noised_counts,
    verify_imm_consistency, CountTable, NoisingCase, NoisingSpec, TabularJoint,
};
use crate::prob::{build_index, floored, Categorical, Dataset, RandomSource, SampleRecord};

pub const COUNTEREXAMPLE_G: f64 = -1.1;
pub const COUNTEREXAMPLE_TOL: f64 = 0.02;
pub const CROSSTALK_TOL: f64 = 1e-4;
pub const CROSSTALK_INSTANCES: usize = 100;

#[derive(Debug, Clone, Default)]
pub struct VerifyOptions {
    pub seed: u64,
    /// Perturbs one crosstalk weight before accumulation; the crosstalk check must then fail.
    pub tamper_crosstalk: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl CheckResult {
    pub fn line(&self) -> String {
        format!("{} {}: {}", if self.passed { "PASS" } else { "FAIL" }, self.name, self.detail)
    }
}

pub fn run_all(opts: &VerifyOptions) -> Result<Vec<CheckResult>> {
    Ok(vec![
        check_counterexample(),
        check_crosstalk(opts)?,
        check_exactness(opts.seed)?,
        check_jensen(opts.seed)?,
        check_consistency(opts.seed)?,
        check_counts(opts.seed)?,
    ])
}

pub fn check_counterexample() -> CheckResult {
    let inst = counterexample_instance();
    let g = counterexample_g(&inst.pi, &inst.p, &inst.pbar, &inst.q_dagger);
    let pbar = induced_table(&inst.pi, &inst.p);
    let table_err = (0..2).flat_map(|y| (0..2).map(move |a| (y, a))).map(|(y, a)| (pbar[y][a] - inst.pbar[y][a]).abs()).fold(0.0, f64::max);
    let dev = (g - COUNTEREXAMPLE_G).abs();
    CheckResult {
        name: "counterexample",
        passed: dev <= COUNTEREXAMPLE_TOL && table_err <= 1e-9,
        detail: format!("g = {g:.6}, |g - (-1.1)| = {dev:.4}, induced table error {table_err:.1e}"),
    }
}

/// `-Σ_y P̂(y) ln Σ_i m_i Q(y | x̄, x̃_i)` evaluated directly.
pub fn mixture_imm_loss<M: DifferentiableModel>(
    model: &M,
    short: &M::Short,
    exts: &[&M::Ext],
    mix: &[f64],
    target: &Categorical,
) -> Result<f64> {
    let mut q = vec![0.0; model.num_labels()];
    for (e, m) in exts.iter().zip(mix) {
        for (acc, p) in q.iter_mut().zip(model.forward(short, e)?.probs()) {
            *acc += m * p;
        }
    }
    Ok(target.probs().iter().zip(&q).filter(|(p, _)| **p > 0.0).map(|(p, qq)| -p * floored(*qq).ln()).sum())
}

fn crosstalk_error<M: DifferentiableModel>(
    model: &M,
    short: &M::Short,
    exts: &[M::Ext],
    target: &Categorical,
    tamper: bool,
) -> Result<f64> {
    let refs: Vec<&M::Ext> = exts.iter().collect();
    let mix = vec![1.0 / exts.len() as f64; exts.len()];
    let mut grad = model.zero_grad();
    let hook = |w: &mut CrosstalkWeights| w.perturb(0, 0, 0.25);
    let tamper_hook: Option<&dyn Fn(&mut CrosstalkWeights)> = if tamper { Some(&hook) } else { None };
    accumulate_crosstalk_gradient(model, short, &refs, &mix, target, 1.0, &mut grad, tamper_hook)?;
    let numeric = finite_difference_grad(model, 1e-5, |m| mixture_imm_loss(m, short, &refs, &mix, target))?;
    Ok(relative_error(&grad, &numeric))
}

fn random_target(labels: usize, rng: &mut RandomSource) -> Categorical {
    Categorical::from_weights((0..labels).map(|_| rng.uniform(0.05, 1.0)).collect()).expect("positive weights")
}

/// Instances cycle through logistic, tabular and neural models with k in 1..=6.
pub fn check_crosstalk(opts: &VerifyOptions) -> Result<CheckResult> {
    let mut rng = RandomSource::new(opts.seed, 11);
    let mut worst: f64 = 0.0;
    for i in 0..CROSSTALK_INSTANCES {
        let k = 1 + i % 6;
        let err = match i % 3 {
            0 => {
                let model = LogisticModel::from_params([
                    rng.uniform(-2.0, 2.0),
                    rng.uniform(-2.0, 2.0),
                    rng.uniform(-2.0, 2.0),
                    rng.uniform(-1.0, 1.0),
                ]);
                let exts: Vec<[f64; 2]> = (0..k).map(|_| [rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0)]).collect();
                let target = random_target(2, &mut rng);
                crosstalk_error(&model, &rng.uniform(-1.0, 1.0), &exts, &target, opts.tamper_crosstalk)?
            }
            1 => {
                let model = TabularSoftmax::random(3, 5, 4, 2.0, &mut rng);
                let exts: Vec<usize> = (0..k).map(|_| rng.index(5)).collect();
                let target = random_target(4, &mut rng);
                crosstalk_error(&model, &rng.index(3), &exts, &target, opts.tamper_crosstalk)?
            }
            _ => {
                let vocab = 6;
                let model = TinyNeuralLM::new(vocab, &mut rng);
                let exts: Vec<[u32; 2]> = (0..k).map(|_| [rng.index(vocab) as u32, rng.index(vocab) as u32]).collect();
                let target = random_target(vocab, &mut rng);
                crosstalk_error(&model, &(rng.index(vocab) as u32), &exts, &target, opts.tamper_crosstalk)?
            }
        };
        worst = worst.max(err);
    }
    Ok(CheckResult {
        name: "crosstalk",
        passed: worst < CROSSTALK_TOL,
        detail: format!("{CROSSTALK_INSTANCES} instances, worst relative error {worst:.2e} (bound {CROSSTALK_TOL:.0e})"),
    })
}

/// Ten records over three short contexts with a random tabular model.
pub fn small_tabular_case(rng: &mut RandomSource) -> (TabularSoftmax, Dataset<usize, usize>, Vec<Categorical>) {
    let model = TabularSoftmax::random(3, 4, 3, 1.5, rng);
    let records: Vec<SampleRecord<usize, usize>> = (0..10).map(|t| SampleRecord::new(t % 3, rng.index(4), rng.index(3))).collect();
    let targets = (0..3).map(|_| random_target(3, rng)).collect();
    (model, Dataset::new(records).expect("non-empty"), targets)
}

pub fn check_exactness(seed: u64) -> Result<CheckResult> {
    let mut rng = RandomSource::new(seed, 12);
    let (model, data, targets) = small_tabular_case(&mut rng);
    let index = build_index(&data);
    let mut induce_err: f64 = 0.0;
    for (short, bucket) in index.iter() {
        let exact = induce_exact(&model, &index, &data, short)?;
        let sampled = induce_from_records(&model, &data, short, bucket, InductionMethod::Sampled { k: bucket.len() })?;
        for (a, b) in exact.dist.probs().iter().zip(sampled.dist.probs()) {
            induce_err = induce_err.max((a - b).abs());
        }
    }

    let target_of = |s: usize| targets[s].clone();
    let mut state = SerializedState::new(data.n())?;
    state.refresh_exact(&model, &index, &data)?;
    let mut serialized = model.zero_grad();
    let mut exact = model.zero_grad();
    for t in 0..data.n() {
        let r = data.record(t);
        let target = target_of(r.short_ctx);
        let g = imm_grad_serialized(&model, &state, &data, t, &target)?;
        serialized.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
        let bucket = index.bucket(&r.short_ctx).expect("record's own bucket");
        let exts: Vec<&usize> = bucket.iter().map(|&i| &data.record(i).ext_ctx).collect();
        let mix = vec![1.0 / exts.len() as f64; exts.len()];
        let (_, g) = imm_grad_mixture(&model, &target, &r.short_ctx, &exts, &mix)?;
        exact.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
    }
    let serial_err = relative_error(&serialized, &exact);
    Ok(CheckResult {
        name: "exactness",
        passed: induce_err <= 1e-12 && serial_err <= 1e-6,
        detail: format!("full-bucket sampled vs exact {induce_err:.1e}; serialized vs exact gradient {serial_err:.1e}"),
    })
}

/// Mean noising loss over a multiset against the IMM loss of its mixture.
pub fn jensen_gap(model: &TabularSoftmax, short: usize, exts: &[usize], target: &Categorical) -> Result<f64> {
    let noising: f64 =
        exts.iter().map(|e| model.forward(&short, e).map(|q| target.cross_entropy(&q))).sum::<Result<f64>>()? / exts.len() as f64;
    let refs: Vec<&usize> = exts.iter().collect();
    let mix = vec![1.0 / exts.len() as f64; exts.len()];
    Ok(noising - mixture_imm_loss(model, &short, &refs, &mix, target)?)
}

pub fn check_jensen(seed: u64) -> Result<CheckResult> {
    let mut rng = RandomSource::new(seed, 13);
    let mut min_gap = f64::INFINITY;
    for i in 0..1000 {
        let model = TabularSoftmax::random(2, 6, 2 + i % 4, 3.0, &mut rng);
        let k = 1 + rng.index(8);
        let exts: Vec<usize> = (0..k).map(|_| rng.index(6)).collect();
        let target = random_target(2 + i % 4, &mut rng);
        min_gap = min_gap.min(jensen_gap(&model, rng.index(2), &exts, &target)?);
    }
    Ok(CheckResult {
        name: "jensen",
        passed: min_gap >= -1e-12,
        detail: format!("1000 instances, smallest noising - IMM gap {min_gap:.3e}"),
    })
}

pub fn check_consistency(seed: u64) -> Result<CheckResult> {
    let mut rng = RandomSource::new(seed, 14);
    let mut joints = vec![counterexample_instance().joint()];
    for i in 0..19 {
        joints.push(TabularJoint::random(2 + i % 3, 2 + (i / 3) % 3, 2 + i % 2, &mut rng));
    }
    let mut violations = 0;
    let mut min_gap = f64::INFINITY;
    for joint in &joints {
        let report = verify_imm_consistency(joint, &[0.5, 1.0, 2.0], 1000, &mut rng);
        violations += report.violations + report.non_monotone_scans;
        min_gap = report.min_gap.iter().cloned().fold(min_gap, f64::min);
    }
    Ok(CheckResult {
        name: "consistency",
        passed: violations == 0 && min_gap > 0.0,
        detail: format!("{} instances x 1000 perturbations x 3 lambdas, {violations} violations, smallest gap {min_gap:.3e}", joints.len()),
    })
}

/// Small integer bigram table shared by the count checks.
pub fn count_fixture() -> CountTable {
    CountTable::from_rows(vec![vec![5.0, 2.0, 0.0], vec![1.0, 3.0, 4.0], vec![0.0, 6.0, 2.0]]).expect("square table")
}

pub fn check_counts(seed: u64) -> Result<CheckResult> {
    let counts = count_fixture();
    let q = Categorical::new(vec![0.5, 0.3, 0.2])?;
    let spec = NoisingSpec::new(vec![0.2, 0.5, 0.35], q.clone(), 1.0)?;
    let mut rng = RandomSource::new(seed, 15);
    let mut worst_z: f64 = 0.0;
    for case in NoisingCase::ALL {
        let expected = expected_noised_counts(&counts, &spec, case)?;
        let (mean, se) = simulate_noised_counts(&counts, &spec, case, 1_000_000, &mut rng)?;
        for ((e, m), s) in expected.cells().iter().zip(mean.cells()).zip(se.cells()) {
            let diff = (e - m).abs();
            let z = if *s > 0.0 {
                diff / s
            } else if diff < 1e-12 {
                0.0
            } else {
                f64::INFINITY
            };
            worst_z = worst_z.max(z);
        }
    }
    let nu = [0.3, 0.6, 0.45];
    let lambda0 = 0.4;
    let kn = kn_noising_counts(&counts, &nu, &q, lambda0)?;
    let as_b = expected_noised_counts(&counts, &NoisingSpec::new(nu.to_vec(), q, lambda0)?, NoisingCase::PredictionOnly)?;
    let ident = kn.cells().iter().zip(as_b.cells()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    Ok(CheckResult {
        name: "counts",
        passed: worst_z <= 3.0 && ident <= 1e-12,
        detail: format!("worst Monte-Carlo deviation {worst_z:.2} SE over 3 cases; KN identity error {ident:.1e}"),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_checks_pass() {
        for c in run_all(&VerifyOptions::default()).unwrap() {
            assert!(c.passed, "{}", c.line());
        }
    }

    #[test]
    fn tamper_breaks_crosstalk() {
        let c = check_crosstalk(&VerifyOptions { seed: 0, tamper_crosstalk: true }).unwrap();
        assert!(!c.passed, "{}", c.line());
    }
}
