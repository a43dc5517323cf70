//! POMDP-to-MDP transfer on a toroidal grid. The POMDP agent sees only the
//! x coordinate; its FIB solution is the restricted teacher for a tabular
//! REINFORCE policy over both coordinates.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, ImmError, Result};
use crate::experiments::stats::Summary;
use crate::induction::accumulate_crosstalk_gradient;
use crate::models::{sgd_step, DifferentiableModel, TabularSoftmaxPolicy};
use crate::prob::{Categorical, RandomSource};

pub const NUM_ACTIONS: usize = 4;
pub const EPOCH_GRID: [usize; 5] = [10, 25, 50, 100, 200];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Action {
    Up,
    Down,
    Left,
    Right,
}

impl Action {
    pub const ALL: [Action; NUM_ACTIONS] = [Action::Up, Action::Down, Action::Left, Action::Right];

    pub fn delta(&self) -> (isize, isize) {
        match self {
            Self::Up => (0, 1),
            Self::Down => (0, -1),
            Self::Left => (-1, 0),
            Self::Right => (1, 0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridWorld {
    pub size: usize,
    pub gamma: f64,
    pub horizon: usize,
    /// Width of the Gaussian reward bump around the centre.
    pub sigma: f64,
}

impl Default for GridWorld {
    fn default() -> Self {
        Self { size: 11, gamma: 0.95, horizon: 50, sigma: 2.0 }
    }
}

impl GridWorld {
    pub fn validate(&self) -> Result<()> {
        if self.size < 2 || self.size.is_multiple_of(2) {
            return Err(invalid("grid size must be odd and at least 3"));
        }
        if !(0.0..1.0).contains(&self.gamma) || self.horizon == 0 || !(self.sigma > 0.0) {
            return Err(invalid("gamma must lie in [0, 1), horizon and sigma must be positive"));
        }
        Ok(())
    }

    pub fn num_states(&self) -> usize {
        self.size * self.size
    }

    pub fn center(&self) -> usize {
        self.size / 2
    }

    #[inline]
    pub fn state(&self, x: usize, y: usize) -> usize {
        x * self.size + y
    }

    #[inline]
    pub fn coords(&self, s: usize) -> (usize, usize) {
        (s / self.size, s % self.size)
    }

    pub fn step(&self, s: usize, a: Action) -> usize {
        let (x, y) = self.coords(s);
        let (dx, dy) = a.delta();
        let n = self.size as isize;
        let nx = (x as isize + dx).rem_euclid(n) as usize;
        let ny = (y as isize + dy).rem_euclid(n) as usize;
        self.state(nx, ny)
    }

    fn torus_dist(&self, a: usize, b: usize) -> f64 {
        let d = a.abs_diff(b);
        d.min(self.size - d) as f64
    }

    pub fn reward(&self, s: usize) -> f64 {
        let (x, y) = self.coords(s);
        let c = self.center();
        let d2 = self.torus_dist(x, c).powi(2) + self.torus_dist(y, c).powi(2);
        (-d2 / (2.0 * self.sigma * self.sigma)).exp()
    }
}

/// One alpha vector per action over all grid states.
#[derive(Debug, Clone, PartialEq)]
pub struct AlphaVectorPolicy {
    pub size: usize,
    pub alphas: Vec<Vec<f64>>,
}

impl AlphaVectorPolicy {
    /// Belief-weighted alpha values with x known and y uniform.
    pub fn action_values(&self, x: usize) -> [f64; NUM_ACTIONS] {
        let mut out = [0.0; NUM_ACTIONS];
        for (a, alpha) in self.alphas.iter().enumerate() {
            out[a] = (0..self.size).map(|y| alpha[x * self.size + y]).sum::<f64>() / self.size as f64;
        }
        out
    }

    pub fn greedy(&self, x: usize) -> Action {
        let v = self.action_values(x);
        let mut best = 0;
        for a in 1..NUM_ACTIONS {
            if v[a] > v[best] {
                best = a;
            }
        }
        Action::ALL[best]
    }

    /// Softmax of belief-weighted values at temperature `tau`.
    pub fn teacher(&self, x: usize, tau: f64) -> Result<Categorical> {
        if !(tau > 0.0) {
            return Err(invalid("teacher temperature must be positive"));
        }
        let v = self.action_values(x);
        Categorical::softmax(&v.map(|z| z / tau))
    }
}

/// FIB value iteration. Observations are the x coordinate of the next state,
/// so for deterministic moves each (s, a) has a single successor and the
/// observation sum collapses to it.
pub fn fib_solve(world: &GridWorld, tol: f64, max_iters: usize) -> Result<AlphaVectorPolicy> {
    world.validate()?;
    let ns = world.num_states();
    let reward: Vec<f64> = (0..ns).map(|s| world.reward(s)).collect();
    let next: Vec<[usize; NUM_ACTIONS]> = (0..ns).map(|s| Action::ALL.map(|a| world.step(s, a))).collect();
    let mut alphas = vec![reward.clone(); NUM_ACTIONS];
    let mut residual = f64::INFINITY;
    for _ in 0..max_iters {
        let mut fresh = vec![vec![0.0; ns]; NUM_ACTIONS];
        residual = 0.0;
        for s in 0..ns {
            for a in 0..NUM_ACTIONS {
                let sp = next[s][a];
                // Σ_o max_a' Σ_s' O(o|s') T(s'|s,a) α_a'(s'), with one s' and one o
                let best = (0..NUM_ACTIONS).map(|b| alphas[b][sp]).fold(f64::NEG_INFINITY, f64::max);
                let v = reward[s] + world.gamma * best;
                residual = f64::max(residual, (v - alphas[a][s]).abs());
                fresh[a][s] = v;
            }
        }
        alphas = fresh;
        if residual < tol {
            return Ok(AlphaVectorPolicy { size: world.size, alphas });
        }
    }
    Err(ImmError::NotConverged { iters: max_iters, residual })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RlMethod {
    Reinforce,
    ReinforceImm,
}

impl RlMethod {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Reinforce => "reinforce",
            Self::ReinforceImm => "reinforce_imm",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RlConfig {
    pub world: GridWorld,
    /// Rollout steps gathered per epoch.
    pub obs_per_epoch: usize,
    pub epochs: Vec<usize>,
    pub lambda: f64,
    pub lr: f64,
    pub temperature: f64,
    pub runs: usize,
    pub seed: u64,
}

impl Default for RlConfig {
    fn default() -> Self {
        Self {
            world: GridWorld::default(),
            obs_per_epoch: 50,
            epochs: EPOCH_GRID.to_vec(),
            lambda: 0.25,
            lr: 100.0,
            temperature: 0.1,
            runs: 30,
            seed: 0,
        }
    }
}

impl RlConfig {
    pub fn validate(&self) -> Result<()> {
        self.world.validate()?;
        if self.obs_per_epoch == 0 || self.runs == 0 || self.epochs.is_empty() || self.epochs.contains(&0) {
            return Err(invalid("obs_per_epoch, runs and every epoch count must be positive"));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) || !(self.lr > 0.0) || !(self.temperature > 0.0) {
            return Err(invalid("lambda must be non-negative, lr and temperature positive"));
        }
        Ok(())
    }
}

/// Expected per-step reward over the horizon from a uniform start, by exact
/// propagation of the state distribution under the policy.
pub fn evaluate_policy(world: &GridWorld, policy: &TabularSoftmaxPolicy) -> Result<f64> {
    let ns = world.num_states();
    let mut dist = vec![1.0 / ns as f64; ns];
    let reward: Vec<f64> = (0..ns).map(|s| world.reward(s)).collect();
    let rows: Vec<Categorical> = (0..ns)
        .map(|s| {
            let (x, y) = world.coords(s);
            policy.forward(&x, &y)
        })
        .collect::<Result<_>>()?;
    let mut total = 0.0;
    for _ in 0..world.horizon {
        total += dist.iter().zip(&reward).map(|(d, r)| d * r).sum::<f64>();
        let mut next = vec![0.0; ns];
        for s in 0..ns {
            if dist[s] == 0.0 {
                continue;
            }
            for (a, act) in Action::ALL.iter().enumerate() {
                next[world.step(s, *act)] += dist[s] * rows[s].prob(a);
            }
        }
        dist = next;
    }
    Ok(total / world.horizon as f64)
}

struct Step {
    x: usize,
    y: usize,
    action: usize,
    ret: f64,
}

fn rollout(world: &GridWorld, policy: &TabularSoftmaxPolicy, len: usize, rng: &mut RandomSource) -> Result<Vec<Step>> {
    let ns = world.num_states();
    let mut s = rng.index(ns);
    let mut steps = Vec::with_capacity(len);
    let mut rewards = Vec::with_capacity(len);
    for _ in 0..len {
        let (x, y) = world.coords(s);
        let probs = policy.forward(&x, &y)?;
        let a = rng.categorical(probs.probs());
        rewards.push(world.reward(s));
        steps.push(Step { x, y, action: a, ret: 0.0 });
        s = world.step(s, Action::ALL[a]);
    }
    let mut g = 0.0;
    for (step, r) in steps.iter_mut().zip(&rewards).rev() {
        g = r + world.gamma * g;
        step.ret = g;
    }
    Ok(steps)
}

/// Trains one policy and returns its evaluated reward after each requested
/// epoch count (ascending).
pub fn train_rl(config: &RlConfig, method: RlMethod, lambda: f64, run: usize) -> Result<Vec<f64>> {
    config.validate()?;
    let world = &config.world;
    let teacher_policy = fib_solve(world, 1e-10, 100_000)?;
    let teachers: Vec<Categorical> = (0..world.size).map(|x| teacher_policy.teacher(x, config.temperature)).collect::<Result<_>>()?;
    let mut checkpoints = config.epochs.clone();
    checkpoints.sort_unstable();
    checkpoints.dedup();
    let last = *checkpoints.last().expect("validated non-empty");

    let mut policy = TabularSoftmaxPolicy::zeros(world.size, world.size, NUM_ACTIONS);
    let mut rng = RandomSource::new(config.seed, run as u64);
    let ys: Vec<usize> = (0..world.size).collect();
    let y_refs: Vec<&usize> = ys.iter().collect();
    let mix = vec![1.0 / world.size as f64; world.size];
    let mut out = Vec::with_capacity(checkpoints.len());
    let mut next_ck = 0;
    for epoch in 1..=last {
        let steps = rollout(world, &policy, config.obs_per_epoch, &mut rng)?;
        let scale = 1.0 / steps.len() as f64;
        // returns are normalized by their largest attainable value 1/(1-γ)
        let ret_scale = 1.0 - world.gamma;
        let mut grad = vec![0.0; policy.num_params()];
        for st in &steps {
            let mut w = [0.0; NUM_ACTIONS];
            w[st.action] = st.ret * ret_scale * scale;
            policy.backward_weighted(&st.x, &st.y, &w, &mut grad)?;
        }
        if method == RlMethod::ReinforceImm && lambda > 0.0 {
            for st in &steps {
                accumulate_crosstalk_gradient(&policy, &st.x, &y_refs, &mix, &teachers[st.x], lambda * scale, &mut grad, None)?;
            }
        }
        sgd_step(&mut policy, &grad, config.lr)?;
        if epoch == checkpoints[next_ck] {
            out.push(evaluate_policy(world, &policy)?);
            next_ck += 1;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RlOutcome {
    pub epochs: Vec<usize>,
    /// `rewards[run][checkpoint]`.
    pub rewards: Vec<Vec<f64>>,
}

impl RlOutcome {
    pub fn at(&self, checkpoint: usize) -> Vec<f64> {
        self.rewards.iter().map(|r| r[checkpoint]).collect()
    }

    pub fn summaries(&self) -> Vec<Summary> {
        (0..self.epochs.len()).map(|c| Summary::of(&self.at(c))).collect()
    }
}

/// Runs `runs` seeded trainings starting at run index `first_run`.
pub fn run_rl_runs(config: &RlConfig, method: RlMethod, lambda: f64, first_run: usize, runs: usize) -> Result<RlOutcome> {
    config.validate()?;
    let mut epochs = config.epochs.clone();
    epochs.sort_unstable();
    epochs.dedup();
    let rewards =
        (first_run..first_run + runs).into_par_iter().map(|run| train_rl(config, method, lambda, run)).collect::<Result<Vec<_>>>()?;
    Ok(RlOutcome { epochs, rewards })
}

pub fn run_rl(config: &RlConfig, method: RlMethod) -> Result<RlOutcome> {
    run_rl_runs(config, method, config.lambda, 0, config.runs)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn myopic_alphas_equal_reward() {
        let world = GridWorld { gamma: 0.0, ..Default::default() };
        let p = fib_solve(&world, 1e-12, 10).unwrap();
        for alpha in &p.alphas {
            for (s, v) in alpha.iter().enumerate() {
                assert_eq!(*v, world.reward(s));
            }
        }
    }

    #[test]
    fn alphas_reflect_about_centre() {
        let world = GridWorld::default();
        let p = fib_solve(&world, 1e-12, 100_000).unwrap();
        let n = world.size;
        let (left, right) = (2, 3);
        for x in 0..n {
            for y in 0..n {
                let s = world.state(x, y);
                let r = world.state(n - 1 - x, y);
                assert!((p.alphas[0][s] - p.alphas[0][r]).abs() < 1e-9);
                assert!((p.alphas[left][s] - p.alphas[right][r]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn reward_peak_is_unique() {
        let world = GridWorld::default();
        let peak = world.state(5, 5);
        for s in 0..world.num_states() {
            if s != peak {
                assert!(world.reward(s) < world.reward(peak));
            }
        }
    }

    #[test]
    fn wraparound() {
        let world = GridWorld::default();
        assert_eq!(world.step(world.state(10, 3), Action::Right), world.state(0, 3));
        assert_eq!(world.step(world.state(4, 0), Action::Down), world.state(4, 10));
    }

    #[test]
    fn uniform_policy_reward_is_grid_mean() {
        let world = GridWorld::default();
        let policy = TabularSoftmaxPolicy::zeros(11, 11, NUM_ACTIONS);
        let mean: f64 = (0..world.num_states()).map(|s| world.reward(s)).sum::<f64>() / world.num_states() as f64;
        assert!((evaluate_policy(&world, &policy).unwrap() - mean).abs() < 1e-12);
    }

    #[test]
    fn zero_lambda_matches_reinforce() {
        let cfg = RlConfig { epochs: vec![5, 10], ..Default::default() };
        let a = train_rl(&cfg, RlMethod::Reinforce, 0.0, 3).unwrap();
        let b = train_rl(&cfg, RlMethod::ReinforceImm, 0.0, 3).unwrap();
        assert_eq!(a, b);
    }
}
