//! Self-checks run by the `oracle-check` and `gradcheck` commands: brute-force
//! path enumeration against the dynamic-programming solver, the tabular
//! moment-matching fixed point, and finite differences through the network
//! and the whole training objective.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::arch::{self, ArchitectureId};
use crate::error::{Error, Result};
use crate::grid::{Action, Cell, FeatureMap, GridShape, Trajectory, N_ACTIONS};
use crate::mdp::{
    cap_reward, demo_nll, empirical_visitation, propagate_policy, sample_trajectory, soft_value_iteration, Mdp,
    SolverSettings, DEFAULT_REWARD_CAP,
};
use crate::nn::gradcheck::{self, rel_error, CheckResult, FaultInjection, NETWORK_TOL};
use crate::nn::{Mode, Network, Optimizer, OptimizerKind, Tensor};
use crate::train::{sample_outcome, MdpSettings};

/// Tolerance of the enumeration comparisons.
pub const ORACLE_TOL: f64 = 1e-6;
/// Tolerance of the whole-objective finite-difference check.
pub const PIPELINE_TOL: f64 = 1e-3;

/// Path-enumeration oracle for one grid: values and policy of the `k`-sweep
/// solver are sums over all paths of at most `k` steps ending at the goal.
struct Enumeration {
    shape: GridShape,
    goal: usize,
    reward: Vec<f64>,
}

impl Enumeration {
    fn successors(&self, s: usize) -> Vec<(usize, usize)> {
        let c = self.shape.cell(s);
        Action::ALL
            .iter()
            .filter_map(|&a| self.shape.step(c, a).map(|t| (a.id(), self.shape.index(t))))
            .collect()
    }

    /// Sum of `exp(Σ r)` over paths from `s` that reach the goal within
    /// `budget` steps, split by first action.
    fn path_sums(&self, s: usize, budget: usize) -> [f64; N_ACTIONS] {
        let mut out = [0.0; N_ACTIONS];
        for (a, t) in self.successors(s) {
            out[a] = self.r(s).exp() * self.paths_from(t, budget - 1);
        }
        out
    }

    fn r(&self, s: usize) -> f64 {
        self.reward[s]
    }

    fn paths_from(&self, s: usize, budget: usize) -> f64 {
        if s == self.goal {
            return 1.0;
        }
        if budget == 0 {
            return 0.0;
        }
        let mut total = 0.0;
        for (_, t) in self.successors(s) {
            total += self.paths_from(t, budget - 1);
        }
        self.r(s).exp() * total
    }

    /// Visits per state over steps `0..=horizon` under `policy`, enumerating
    /// every action sequence; also returns the unabsorbed mass.
    fn visitation(&self, policy: &[[f64; N_ACTIONS]], start: usize, horizon: usize) -> (Vec<f64>, f64) {
        let mut mu = vec![0.0; self.shape.n_cells()];
        let mut residual = 0.0;
        self.walk(policy, start, 1.0, horizon, &mut mu, &mut residual);
        (mu, residual)
    }

    fn walk(&self, policy: &[[f64; N_ACTIONS]], s: usize, p: f64, left: usize, mu: &mut [f64], residual: &mut f64) {
        mu[s] += p;
        if s == self.goal {
            return;
        }
        if left == 0 {
            *residual += p;
            return;
        }
        for (a, t) in self.successors(s) {
            let q = p * policy[s][a];
            if q > 0.0 {
                self.walk(policy, t, q, left - 1, mu, residual);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleCase {
    pub shape: GridShape,
    pub seed: u64,
    pub sweeps: usize,
    pub value_error: f64,
    pub policy_error: f64,
    pub visitation_error: f64,
    pub nll_error: f64,
}

impl OracleCase {
    pub fn max_error(&self) -> f64 {
        self.value_error
            .max(self.policy_error)
            .max(self.visitation_error)
            .max(self.nll_error)
    }
}

/// Sweep count for a grid: as long as enumeration stays cheap.
pub fn oracle_sweeps(shape: GridShape) -> usize {
    match shape.n_cells() {
        0..=6 => 10,
        7..=9 => 8,
        10..=12 => 7,
        _ => 6,
    }
}

fn abs_or_log_error(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).abs()
    }
}

/// Compares solver, propagation and NLL with enumeration on one random
/// `rows × cols` problem with rewards in `[−3, 0)`.
pub fn enumeration_case(rows: usize, cols: usize, seed: u64) -> Result<OracleCase> {
    let shape = GridShape::new(rows, cols)?;
    let n = shape.n_cells();
    if n < 2 {
        return Err(Error::InvalidArgument("enumeration needs at least two cells".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let reward: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..0.0)).collect();
    let goal = rng.random_range(0..n);
    let start = (goal + rng.random_range(1..n)) % n;
    let k = oracle_sweeps(shape);
    let mdp = Mdp::new(shape, shape.cell(goal), 1.0)?;
    let sol = soft_value_iteration(&reward, &mdp, SolverSettings::fixed(k))?;
    let en = Enumeration { shape, goal, reward };

    let mut value_error = 0.0f64;
    let mut policy_error = 0.0f64;
    let mut policy = vec![[0.0; N_ACTIONS]; n];
    for s in 0..n {
        if s == goal {
            value_error = value_error.max(sol.values[s].abs());
            continue;
        }
        let sums = en.path_sums(s, k);
        let total: f64 = sums.iter().sum();
        let v = total.ln();
        value_error = value_error.max(abs_or_log_error(v, sol.values[s]));
        for a in Action::ALL {
            let expected = if total > 0.0 {
                sums[a.id()] / total
            } else {
                let valid = en.successors(s).len() as f64;
                if shape.step(shape.cell(s), a).is_some() {
                    1.0 / valid
                } else {
                    0.0
                }
            };
            policy[s][a.id()] = expected;
            policy_error = policy_error.max((expected - sol.policy.prob(s, a)).abs());
        }
    }

    let horizon = k;
    let prop = propagate_policy(&sol.policy, &mdp, shape.cell(start), horizon)?;
    let (mu, residual) = en.visitation(&policy, start, horizon);
    let visitation_error = mu
        .iter()
        .zip(&prop.expected_mu)
        .map(|(a, b)| (a - b).abs())
        .fold((residual - prop.residual_mass).abs(), f64::max);

    // A random walk from the start, stopped at the goal, as the demonstration.
    let mut states = vec![shape.cell(start)];
    let mut s = start;
    for _ in 0..k {
        if s == goal {
            break;
        }
        let succ = en.successors(s);
        s = succ[rng.random_range(0..succ.len())].1;
        states.push(shape.cell(s));
    }
    let demo = Trajectory::from_states(shape, states)?;
    let expected_nll: f64 = demo
        .transitions()
        .map(|(c, a)| -policy[shape.index(c)][a.id()].ln())
        .sum();
    let nll = demo_nll(&sol.policy, &demo)?;
    let nll_error = if expected_nll.is_infinite() && nll.is_infinite() {
        0.0
    } else {
        (expected_nll - nll).abs()
    };
    Ok(OracleCase {
        shape,
        seed,
        sweeps: k,
        value_error,
        policy_error,
        visitation_error,
        nll_error,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleReport {
    pub cases: Vec<OracleCase>,
    pub seconds: f64,
}

impl OracleReport {
    pub fn max_error(&self) -> f64 {
        self.cases.iter().map(OracleCase::max_error).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        !self.cases.is_empty() && self.max_error() < ORACLE_TOL
    }
}

/// Every grid from 1×2 up to 4×4 with `n_seeds` random problems each.
pub fn oracle_suite(n_seeds: u64) -> Result<OracleReport> {
    let started = Instant::now();
    let mut cases = Vec::new();
    for rows in 1..=4 {
        for cols in 1..=4 {
            if rows * cols < 2 {
                continue;
            }
            for seed in 0..n_seeds {
                cases.push(enumeration_case(rows, cols, seed * 1000 + (rows * 10 + cols) as u64)?);
            }
        }
    }
    Ok(OracleReport {
        cases,
        seconds: started.elapsed().as_secs_f64(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct FixedPointReport {
    pub steps: usize,
    /// Final `max_s |μ̄_D(s) − E[μ](s)|`.
    pub max_gap: f64,
    pub n_demos: usize,
    /// Fewest demonstration visits of any cell.
    pub min_visits: f64,
    pub reward_error: f64,
}

/// Tabular MaxEnt on a `side × side` grid: demonstrations are sampled from
/// the soft-optimal policy of a random reward in `[−3.2, −2.5]`, and a
/// per-cell reward is fitted by plain gradient ascent on the mean
/// log-likelihood until the visitation gap drops below `tol`.
pub fn tabular_fixed_point(
    side: usize,
    seed: u64,
    n_demos: usize,
    lr: f64,
    max_steps: usize,
    tol: f64,
) -> Result<FixedPointReport> {
    let shape = GridShape::new(side, side)?;
    let n = shape.n_cells();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let truth: Vec<f64> = (0..n).map(|_| rng.random_range(-3.2..-2.5)).collect();
    let start = Cell::new(0, 0);
    let goal = Cell::new(side - 1, side - 1);
    let mdp = Mdp::new(shape, goal, 1.0)?;
    let exact = SolverSettings {
        max_iters: 100_000,
        tol: 1e-14,
    };
    let horizon = 4000;
    let sol = soft_value_iteration(&truth, &mdp, exact)?;
    let mut demos = Vec::with_capacity(n_demos);
    let mut k = 0u64;
    while demos.len() < n_demos {
        let roll = sample_trajectory(&sol.policy, &mdp, start, 10_000, seed.wrapping_add(k))?;
        k += 1;
        if !roll.truncated {
            demos.push(roll.trajectory);
        }
    }
    let stats = empirical_visitation(&demos, shape)?;
    let mu_d = stats.mu_d;
    let min_visits = mu_d.iter().copied().fold(f64::INFINITY, f64::min) * n_demos as f64;

    let mut theta = vec![-3.0; n];
    let mut opt = Optimizer::new(OptimizerKind::Sgd, lr, &[n])?;
    let mut steps = 0;
    let mut max_gap;
    loop {
        let (capped, active) = cap_reward(&theta, mdp.goal(), DEFAULT_REWARD_CAP);
        let sol = soft_value_iteration(&capped, &mdp, exact)?;
        let prop = propagate_policy(&sol.policy, &mdp, start, horizon)?;
        let mut grad = vec![0.0; n];
        max_gap = 0.0f64;
        for s in 0..n {
            let gap = mu_d[s] - prop.expected_mu[s];
            max_gap = max_gap.max(gap.abs());
            if s != mdp.goal() && active[s] {
                grad[s] = -gap;
            }
        }
        if max_gap < tol || steps == max_steps {
            break;
        }
        opt.step(&mut [theta.as_mut_slice()], &[grad])?;
        steps += 1;
    }
    let reward_error = theta
        .iter()
        .zip(&truth)
        .enumerate()
        .filter(|&(s, _)| s != mdp.goal())
        .map(|(_, (a, b))| (a - b).abs())
        .fold(0.0, f64::max);
    Ok(FixedPointReport {
        steps,
        max_gap,
        n_demos,
        min_visits,
        reward_error,
    })
}

/// A random, fully visible 6 × 6 problem with a fixed demonstration.
struct FrozenProblem {
    input: Tensor,
    demo: Trajectory,
    goal: Cell,
    shape: GridShape,
}

fn frozen_problem(seed: u64) -> Result<FrozenProblem> {
    let side = 6;
    let shape = GridShape::new(side, side)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.n_cells();
    let mut data = Vec::with_capacity(3 * n);
    data.extend((0..n).map(|_| rng.random_range(0.0..0.5)));
    data.extend((0..n).map(|_| rng.random_range(0.0..0.05)));
    data.extend((0..n).map(|_| if rng.random_bool(0.9) { 1.0 } else { 0.0 }));
    let input = Tensor::from_vec([1, FeatureMap::N_CHANNELS, side, side], data)?;
    let c = Cell::new;
    let demo = Trajectory::from_states(
        shape,
        vec![c(0, 0), c(1, 1), c(2, 1), c(3, 2), c(3, 3), c(4, 4), c(5, 4), c(5, 5)],
    )?;
    Ok(FrozenProblem {
        input,
        goal: demo.end(),
        demo,
        shape,
    })
}

fn pipeline_settings() -> MdpSettings {
    MdpSettings {
        gamma: 1.0,
        solver: Some(SolverSettings {
            max_iters: 100_000,
            tol: 1e-14,
        }),
        horizon: 5000,
        reward_cap: DEFAULT_REWARD_CAP,
    }
}

/// `dL_D/dθ` by back-propagating `μ_D − E[μ]` against central differences
/// of the demonstration log-likelihood, for one architecture in eval mode.
/// At most `per_tensor` coordinates are probed per parameter tensor.
pub fn pipeline_check(id: ArchitectureId, seed: u64, per_tensor: usize) -> Result<CheckResult> {
    let problem = frozen_problem(seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let mut net = arch::build(id, FeatureMap::N_CHANNELS)?;
    net.initialize(&mut rng, 0.3, -4.0)?;
    for (mean, var) in net.buffers_mut() {
        mean.iter_mut().for_each(|m| *m = rng.random_range(-0.3..0.3));
        var.iter_mut().for_each(|v| *v = rng.random_range(0.5..1.5));
    }
    net.set_mode(Mode::Eval);
    let settings = pipeline_settings();

    let log_lik = |net: &Network| -> Result<f64> {
        let out = net.clone().predict(&problem.input)?;
        let o = sample_outcome(out.plane(0, 0), problem.shape, &problem.demo, problem.goal, &settings)?;
        Ok(-o.nll)
    };

    let out = net.clone().predict(&problem.input)?;
    let max_reward = out.plane(0, 0).iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max_reward > DEFAULT_REWARD_CAP - 0.1 {
        return Err(Error::Numerical(format!(
            "frozen problem reward {max_reward} is too close to the cap for finite differences"
        )));
    }
    let cache = net.clone().forward(&problem.input)?;
    let o = sample_outcome(out.plane(0, 0), problem.shape, &problem.demo, problem.goal, &settings)?;
    let grad_out = Tensor::from_vec(out.shape(), o.reward_grad.clone())?;
    let grads = net.backward(&cache, &grad_out)?;

    let h = 1e-5;
    let mut worst = 0.0f64;
    let mut checked = 0;
    for t in 0..grads.params.len() {
        let len = grads.params[t].len();
        let idx: Vec<usize> = if len <= per_tensor {
            (0..len).collect()
        } else {
            rand::seq::index::sample(&mut rng, len, per_tensor).into_vec()
        };
        let mut probe = net.clone();
        for &i in &idx {
            let orig = probe.params()[t][i];
            probe.params_mut()[t][i] = orig + h;
            let up = log_lik(&probe)?;
            probe.params_mut()[t][i] = orig - h;
            let down = log_lik(&probe)?;
            probe.params_mut()[t][i] = orig;
            worst = worst.max(rel_error(grads.params[t][i], (up - down) / (2.0 * h)));
            checked += 1;
        }
    }
    Ok(CheckResult {
        name: format!("pipeline {id}"),
        max_rel_error: worst,
        tolerance: PIPELINE_TOL,
        checked,
    })
}

/// Every finite-difference suite: layers, whole networks in both batch-norm
/// modes, and the whole objective.
pub fn gradcheck_suite(seed: u64, faults: FaultInjection) -> Result<Vec<CheckResult>> {
    let mut out = gradcheck::layer_suites(seed, faults)?;
    for id in ArchitectureId::ALL {
        let mut net = arch::build(id, FeatureMap::N_CHANNELS)?;
        net.initialize(&mut ChaCha8Rng::seed_from_u64(seed), 1.0, 0.0)?;
        for mode in [Mode::Train, Mode::Eval] {
            let name = format!("network {id} ({})", if mode == Mode::Train { "train" } else { "eval" });
            let r = gradcheck::check_network(&name, &net, mode, 2, 8, 8, seed, faults)?;
            debug_assert_eq!(r.tolerance, NETWORK_TOL);
            out.push(r);
        }
    }
    for id in ArchitectureId::ALL {
        out.push(pipeline_check(id, seed, 4)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn enumeration_agrees_on_small_grids() {
        for (r, c) in [(1, 2), (2, 2), (2, 3), (3, 3)] {
            let case = enumeration_case(r, c, 5).unwrap();
            assert!(case.max_error() < ORACLE_TOL, "{case:?}");
        }
    }

    #[test]
    fn enumeration_path_count_on_corridor() {
        // 1×3 corridor, goal at the right end, zero reward. From the left end
        // the goal is reached by 0-1-2 and, with four steps, 0-1-0-1-2.
        let en = Enumeration {
            shape: GridShape::new(1, 3).unwrap(),
            goal: 2,
            reward: vec![0.0; 3],
        };
        assert_eq!(en.paths_from(0, 2), 1.0);
        assert_eq!(en.paths_from(0, 3), 1.0);
        assert_eq!(en.paths_from(0, 4), 2.0);
    }
}
