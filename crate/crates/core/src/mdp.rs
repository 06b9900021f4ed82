//! Deterministic 8-connected grid MDP with an absorbing goal, solved with soft
//! (log-sum-exp) value iteration.
//!
//! Reward is attached to the state being departed: `Q(s, a) = r(s) + γ V(s')`.
//! Value iteration starts from `V = 0` at the goal and `-inf` elsewhere, so
//! after `k` sweeps `V(s)` is the soft value over all paths reaching the goal in
//! at most `k` steps. Moves off the grid or into blocked cells are invalid and
//! excluded from the softmax.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::grid::{Action, Cell, GridShape, Trajectory, N_ACTIONS};

const NONE: u32 = u32::MAX;

/// Default upper bound applied to off-goal rewards before solving:
/// `−(ln 8 + 0.25)`. With every reward below `−ln 8` the sum over paths is
/// dominated by a geometric series in `8·e^r`, so the undiscounted soft value
/// iteration converges for any reward map.
pub const DEFAULT_REWARD_CAP: f64 = -2.329_441_541_679_835_7;

#[derive(Debug, Clone)]
pub struct Mdp {
    shape: GridShape,
    gamma: f64,
    goal: usize,
    succ: Vec<u32>,
}

impl Mdp {
    pub fn new(shape: GridShape, goal: Cell, gamma: f64) -> Result<Self> {
        Self::build(shape, goal, gamma, None)
    }

    /// Like [`Mdp::new`] but moves into `blocked` cells are invalid.
    pub fn with_blocked(shape: GridShape, goal: Cell, gamma: f64, blocked: &[bool]) -> Result<Self> {
        if blocked.len() != shape.n_cells() {
            return Err(Error::Shape(format!(
                "blocked mask has {} cells, grid has {}",
                blocked.len(),
                shape.n_cells()
            )));
        }
        if blocked[shape.index(goal)] {
            return Err(Error::InvalidArgument("goal cell is blocked".into()));
        }
        Self::build(shape, goal, gamma, Some(blocked))
    }

    fn build(shape: GridShape, goal: Cell, gamma: f64, blocked: Option<&[bool]>) -> Result<Self> {
        if !(gamma > 0.0 && gamma <= 1.0) {
            return Err(Error::InvalidArgument(format!("gamma must lie in (0, 1], got {gamma}")));
        }
        if goal.row >= shape.rows || goal.col >= shape.cols {
            return Err(Error::OutOfGrid {
                row: goal.row as i64,
                col: goal.col as i64,
            });
        }
        let n = shape.n_cells();
        let mut succ = vec![NONE; n * N_ACTIONS];
        for s in 0..n {
            let cell = shape.cell(s);
            for a in Action::ALL {
                if let Some(next) = shape.step(cell, a) {
                    let t = shape.index(next);
                    if blocked.is_none_or(|b| !b[t]) {
                        succ[s * N_ACTIONS + a.id()] = t as u32;
                    }
                }
            }
        }
        Ok(Self {
            shape,
            gamma,
            goal: shape.index(goal),
            succ,
        })
    }

    pub fn shape(&self) -> GridShape {
        self.shape
    }

    pub fn n_states(&self) -> usize {
        self.shape.n_cells()
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn goal(&self) -> usize {
        self.goal
    }

    pub fn goal_cell(&self) -> Cell {
        self.shape.cell(self.goal)
    }

    #[inline]
    pub fn successor(&self, state: usize, action: Action) -> Option<usize> {
        let t = self.succ[state * N_ACTIONS + action.id()];
        (t != NONE).then_some(t as usize)
    }

    pub fn n_valid(&self, state: usize) -> usize {
        self.succ[state * N_ACTIONS..(state + 1) * N_ACTIONS]
            .iter()
            .filter(|&&t| t != NONE)
            .count()
    }

    #[inline]
    fn succ_row(&self, state: usize) -> &[u32] {
        &self.succ[state * N_ACTIONS..(state + 1) * N_ACTIONS]
    }
}

/// Caps off-goal rewards at `cap`. The returned mask marks cells whose reward
/// was left untouched, i.e. where the derivative of the capped reward is one.
pub fn cap_reward(reward: &[f64], goal: usize, cap: f64) -> (Vec<f64>, Vec<bool>) {
    let mut active = vec![true; reward.len()];
    let capped = reward
        .iter()
        .enumerate()
        .map(|(i, &r)| {
            if i != goal && r > cap {
                active[i] = false;
                cap
            } else {
                r
            }
        })
        .collect();
    (capped, active)
}

/// Stochastic policy `π(a | s)`, stored as a dense `S × 8` table.
#[derive(Debug, Clone, PartialEq)]
pub struct Policy {
    shape: GridShape,
    goal: usize,
    probs: Vec<f64>,
    valid: Vec<bool>,
}

impl Policy {
    #[inline]
    pub fn prob(&self, state: usize, action: Action) -> f64 {
        self.probs[state * N_ACTIONS + action.id()]
    }

    pub fn row(&self, state: usize) -> &[f64] {
        &self.probs[state * N_ACTIONS..(state + 1) * N_ACTIONS]
    }

    pub fn is_valid(&self, state: usize, action: Action) -> bool {
        self.valid[state * N_ACTIONS + action.id()]
    }

    pub fn shape(&self) -> GridShape {
        self.shape
    }

    pub fn goal(&self) -> usize {
        self.goal
    }

    /// Builds a policy from explicit per-state rows; rows must be normalised
    /// over valid actions (the goal row is ignored).
    pub fn from_rows(mdp: &Mdp, rows: Vec<[f64; N_ACTIONS]>) -> Result<Self> {
        if rows.len() != mdp.n_states() {
            return Err(Error::Shape(format!(
                "{} policy rows for {} states",
                rows.len(),
                mdp.n_states()
            )));
        }
        let valid = valid_mask(mdp);
        let mut probs = Vec::with_capacity(rows.len() * N_ACTIONS);
        for (s, row) in rows.iter().enumerate() {
            let mut total = 0.0;
            for a in 0..N_ACTIONS {
                let p = row[a];
                if p < 0.0 || (!valid[s * N_ACTIONS + a] && p != 0.0) {
                    return Err(Error::InvalidArgument(format!(
                        "state {s}: probability {p} on action {a}"
                    )));
                }
                total += p;
            }
            if s != mdp.goal() && (total - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidArgument(format!("state {s}: row sums to {total}")));
            }
            probs.extend_from_slice(row);
        }
        Ok(Self {
            shape: mdp.shape(),
            goal: mdp.goal(),
            probs,
            valid,
        })
    }
}

fn valid_mask(mdp: &Mdp) -> Vec<bool> {
    mdp.succ.iter().map(|&t| t != NONE).collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverSettings {
    pub max_iters: usize,
    /// Max-norm change below which iteration stops; zero runs all `max_iters`.
    pub tol: f64,
}

impl SolverSettings {
    /// `4 (H + W)` sweeps, tolerance `1e-6`.
    pub fn for_shape(shape: GridShape) -> Self {
        Self {
            max_iters: 4 * (shape.rows + shape.cols),
            tol: 1e-6,
        }
    }

    /// Exactly `sweeps` iterations, never stopping early.
    pub fn fixed(sweeps: usize) -> Self {
        Self {
            max_iters: sweeps,
            tol: 0.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SoftValueSolution {
    /// `V(s)`; `-inf` where the goal is not reachable within the sweeps run.
    pub values: Vec<f64>,
    /// `Q(s, a)`, `S × 8`; `-inf` for invalid actions.
    pub q: Vec<f64>,
    pub policy: Policy,
    pub iterations: usize,
    pub converged: bool,
    /// States whose value stayed `-inf`; their policy rows are uniform.
    pub unreachable_states: usize,
}

impl SoftValueSolution {
    pub fn value(&self, cell: Cell) -> f64 {
        self.values[self.policy.shape.index(cell)]
    }
}

/// Soft value iteration. Non-convergence within `max_iters` is reported
/// through [`SoftValueSolution::converged`], not as an error.
pub fn soft_value_iteration(
    reward: &[f64],
    mdp: &Mdp,
    settings: SolverSettings,
) -> Result<SoftValueSolution> {
    let n = mdp.n_states();
    if reward.len() != n {
        return Err(Error::Shape(format!("reward has {} cells, MDP has {n}", reward.len())));
    }
    if let Some(i) = reward.iter().position(|r| !r.is_finite()) {
        return Err(Error::Numerical(format!("non-finite reward {} at cell {i}", reward[i])));
    }
    if settings.max_iters == 0 {
        return Err(Error::InvalidArgument("value iteration needs at least one sweep".into()));
    }
    let gamma = mdp.gamma;
    let goal = mdp.goal;
    let mut prev = vec![f64::NEG_INFINITY; n];
    prev[goal] = 0.0;
    let mut next = prev.clone();
    let mut iterations = 0;
    let mut converged = false;

    while iterations < settings.max_iters {
        iterations += 1;
        let mut delta = 0.0f64;
        for s in 0..n {
            if s == goal {
                continue;
            }
            let row = mdp.succ_row(s);
            let mut qs = [f64::NEG_INFINITY; N_ACTIONS];
            let mut m = f64::NEG_INFINITY;
            for a in 0..N_ACTIONS {
                let t = row[a];
                if t != NONE {
                    let vt = prev[t as usize];
                    if vt > f64::NEG_INFINITY {
                        let q = reward[s] + gamma * vt;
                        qs[a] = q;
                        m = m.max(q);
                    }
                }
            }
            let v = if m == f64::NEG_INFINITY {
                f64::NEG_INFINITY
            } else {
                let z: f64 = qs.iter().map(|&q| (q - m).exp()).sum();
                m + z.ln()
            };
            let old = prev[s];
            if v.is_finite() != old.is_finite() {
                delta = f64::INFINITY;
            } else if v.is_finite() {
                delta = delta.max((v - old).abs());
            }
            next[s] = v;
        }
        std::mem::swap(&mut prev, &mut next);
        // `prev` now holds the newest sweep and `next` the one before it.
        if delta < settings.tol {
            converged = true;
            break;
        }
    }
    let (values, before) = (prev, next);

    let mut q = vec![f64::NEG_INFINITY; n * N_ACTIONS];
    let mut probs = vec![0.0; n * N_ACTIONS];
    let mut unreachable_states = 0;
    for s in 0..n {
        if s == goal {
            continue;
        }
        let row = mdp.succ_row(s);
        if values[s] == f64::NEG_INFINITY {
            unreachable_states += 1;
            let k = row.iter().filter(|&&t| t != NONE).count();
            for a in 0..N_ACTIONS {
                if row[a] != NONE {
                    probs[s * N_ACTIONS + a] = 1.0 / k as f64;
                }
            }
            continue;
        }
        for a in 0..N_ACTIONS {
            let t = row[a];
            if t != NONE {
                let vt = before[t as usize];
                if vt > f64::NEG_INFINITY {
                    let qa = reward[s] + gamma * vt;
                    q[s * N_ACTIONS + a] = qa;
                    probs[s * N_ACTIONS + a] = (qa - values[s]).exp();
                }
            }
        }
    }
    let policy = Policy {
        shape: mdp.shape,
        goal,
        probs,
        valid: valid_mask(mdp),
    };
    Ok(SoftValueSolution {
        values,
        q,
        policy,
        iterations,
        converged,
        unreachable_states,
    })
}

#[derive(Debug, Clone)]
pub struct Propagation {
    /// Expected visits per state over time steps `0..=horizon`.
    pub expected_mu: Vec<f64>,
    /// Probability mass not yet absorbed by the goal after `horizon` steps.
    pub residual_mass: f64,
}

/// Forward propagation of a unit start mass through `policy`. Mass entering
/// the goal is counted once and leaves the system.
pub fn propagate_policy(policy: &Policy, mdp: &Mdp, start: Cell, horizon: usize) -> Result<Propagation> {
    if policy.shape != mdp.shape {
        return Err(Error::Shape("policy and MDP grids differ".into()));
    }
    let shape = mdp.shape;
    if start.row >= shape.rows || start.col >= shape.cols {
        return Err(Error::OutOfGrid {
            row: start.row as i64,
            col: start.col as i64,
        });
    }
    let n = shape.n_cells();
    let goal = mdp.goal;
    let mut mu = vec![0.0; n];
    let mut cur = vec![0.0; n];
    let mut nxt = vec![0.0; n];
    cur[shape.index(start)] = 1.0;
    for t in 0..=horizon {
        let mut live = false;
        for s in 0..n {
            mu[s] += cur[s];
        }
        if t == horizon {
            break;
        }
        nxt.iter_mut().for_each(|x| *x = 0.0);
        for s in 0..n {
            let d = cur[s];
            if d == 0.0 || s == goal {
                continue;
            }
            live = true;
            let row = mdp.succ_row(s);
            let p = &policy.probs[s * N_ACTIONS..(s + 1) * N_ACTIONS];
            for a in 0..N_ACTIONS {
                if row[a] != NONE {
                    nxt[row[a] as usize] += d * p[a];
                }
            }
        }
        std::mem::swap(&mut cur, &mut nxt);
        if !live {
            cur.iter_mut().for_each(|x| *x = 0.0);
            break;
        }
    }
    let residual_mass = cur
        .iter()
        .enumerate()
        .filter(|&(s, _)| s != goal)
        .map(|(_, &d)| d)
        .sum();
    Ok(Propagation {
        expected_mu: mu,
        residual_mass,
    })
}

/// Expert and learner visitation statistics for one MDP.
#[derive(Debug, Clone, PartialEq)]
pub struct VisitationStats {
    /// State visits per demonstration, including each demonstration's last state.
    pub mu_d: Vec<f64>,
    /// State-action visits per demonstration, `S × 8`.
    pub mu_d_sa: Vec<f64>,
    /// Visits to each demonstration's final state (which has no action);
    /// `mu_d = Σ_a mu_d_sa + mu_d_terminal`.
    pub mu_d_terminal: Vec<f64>,
    pub expected_mu: Option<Vec<f64>>,
}

/// Averages state and state-action counts over the demonstrations.
pub fn empirical_visitation(demos: &[Trajectory], shape: GridShape) -> Result<VisitationStats> {
    let n = shape.n_cells();
    let mut mu_d = vec![0.0; n];
    let mut mu_d_sa = vec![0.0; n * N_ACTIONS];
    let mut mu_d_terminal = vec![0.0; n];
    if demos.is_empty() {
        return Ok(VisitationStats {
            mu_d,
            mu_d_sa,
            mu_d_terminal,
            expected_mu: None,
        });
    }
    let w = 1.0 / demos.len() as f64;
    for demo in demos {
        for c in demo.states() {
            if c.row >= shape.rows || c.col >= shape.cols {
                return Err(Error::OutOfGrid {
                    row: c.row as i64,
                    col: c.col as i64,
                });
            }
            mu_d[shape.index(*c)] += w;
        }
        for (c, a) in demo.transitions() {
            mu_d_sa[shape.index(c) * N_ACTIONS + a.id()] += w;
        }
        mu_d_terminal[shape.index(demo.end())] += w;
    }
    Ok(VisitationStats {
        mu_d,
        mu_d_sa,
        mu_d_terminal,
        expected_mu: None,
    })
}

/// `∂L_D / ∂r = μ_D − E[μ]`, the ascent direction of the data log-likelihood.
pub fn maxent_gradient(stats: &VisitationStats) -> Result<Vec<f64>> {
    let expected = stats
        .expected_mu
        .as_ref()
        .ok_or_else(|| Error::InvalidArgument("expected visitation missing".into()))?;
    if expected.len() != stats.mu_d.len() {
        return Err(Error::Shape(format!(
            "mu_d has {} cells, expected_mu has {}",
            stats.mu_d.len(),
            expected.len()
        )));
    }
    Ok(stats.mu_d.iter().zip(expected).map(|(a, b)| a - b).collect())
}

/// Negative log-likelihood of a demonstration's actions, in nats.
/// Returns `+inf` when some demonstrated action has zero probability.
pub fn demo_nll(policy: &Policy, demo: &Trajectory) -> Result<f64> {
    let shape = policy.shape;
    let mut nll = 0.0;
    for (c, a) in demo.transitions() {
        if c.row >= shape.rows || c.col >= shape.cols {
            return Err(Error::OutOfGrid {
                row: c.row as i64,
                col: c.col as i64,
            });
        }
        let s = shape.index(c);
        if !policy.is_valid(s, a) {
            return Err(Error::InvalidArgument(format!(
                "demonstrated action {a:?} is invalid in cell ({}, {})",
                c.row, c.col
            )));
        }
        let p = policy.prob(s, a);
        if p <= 0.0 {
            return Ok(f64::INFINITY);
        }
        nll -= p.ln();
    }
    Ok(nll)
}

#[derive(Debug, Clone)]
pub struct Rollout {
    pub trajectory: Trajectory,
    /// The goal was not reached within the step budget.
    pub truncated: bool,
}

/// Samples a path from `start` until the goal is reached or `max_steps`
/// actions have been taken. Deterministic per seed.
pub fn sample_trajectory(
    policy: &Policy,
    mdp: &Mdp,
    start: Cell,
    max_steps: usize,
    seed: u64,
) -> Result<Rollout> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sample_trajectory_with(policy, mdp, start, max_steps, &mut rng)
}

pub fn sample_trajectory_with<R: Rng + ?Sized>(
    policy: &Policy,
    mdp: &Mdp,
    start: Cell,
    max_steps: usize,
    rng: &mut R,
) -> Result<Rollout> {
    let shape = mdp.shape;
    if start.row >= shape.rows || start.col >= shape.cols {
        return Err(Error::OutOfGrid {
            row: start.row as i64,
            col: start.col as i64,
        });
    }
    let mut s = shape.index(start);
    let mut states = vec![start];
    while s != mdp.goal && states.len() <= max_steps {
        let u: f64 = rng.random();
        let row = &policy.probs[s * N_ACTIONS..(s + 1) * N_ACTIONS];
        let mut acc = 0.0;
        let mut chosen = None;
        for a in 0..N_ACTIONS {
            if row[a] > 0.0 {
                acc += row[a];
                chosen = Some(a);
                if u < acc {
                    break;
                }
            }
        }
        let a = chosen.ok_or_else(|| Error::Numerical(format!("policy row {s} has no mass")))?;
        let t = mdp.succ_row(s)[a];
        if t == NONE {
            return Err(Error::Numerical(format!("policy selected invalid action in state {s}")));
        }
        s = t as usize;
        states.push(shape.cell(s));
    }
    let truncated = s != mdp.goal;
    Ok(Rollout {
        trajectory: Trajectory::from_states(shape, states)?,
        truncated,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn corridor(cols: usize) -> Mdp {
        let shape = GridShape::new(1, cols).unwrap();
        Mdp::new(shape, Cell::new(0, cols - 1), 1.0).unwrap()
    }

    #[test]
    fn single_path_corridor() {
        let mdp = corridor(2);
        let sol = soft_value_iteration(&[-1.0, -1.0], &mdp, SolverSettings::for_shape(mdp.shape())).unwrap();
        assert!(sol.converged);
        assert!((sol.values[0] + 1.0).abs() < 1e-12);
        assert_eq!(sol.policy.prob(0, Action::East), 1.0);
        assert_eq!(mdp.n_valid(0), 1);
    }

    #[test]
    fn corner_cells_have_three_actions() {
        let shape = GridShape::new(4, 5).unwrap();
        let mdp = Mdp::new(shape, Cell::new(2, 2), 1.0).unwrap();
        for s in 0..shape.n_cells() {
            assert!(mdp.n_valid(s) >= 3);
        }
        assert_eq!(mdp.n_valid(0), 3);
        assert_eq!(mdp.n_valid(shape.index(Cell::new(1, 1))), 8);
    }

    #[test]
    fn symmetric_grid_gives_mirrored_policy() {
        // goal on the middle row; the grid is symmetric under row reflection
        let shape = GridShape::new(5, 6).unwrap();
        let mdp = Mdp::new(shape, Cell::new(2, 5), 1.0).unwrap();
        let reward = vec![-3.0; shape.n_cells()];
        let sol = soft_value_iteration(&reward, &mdp, SolverSettings::for_shape(shape)).unwrap();
        let mirror = |a: Action| {
            let (dr, dc) = a.delta();
            Action::from_delta(-dr, dc).unwrap()
        };
        for r in 0..5 {
            for c in 0..6 {
                let s = shape.index(Cell::new(r, c));
                let m = shape.index(Cell::new(4 - r, c));
                for a in Action::ALL {
                    let diff = sol.policy.prob(s, a) - sol.policy.prob(m, mirror(a));
                    assert!(diff.abs() < 1e-12, "({r},{c}) {a:?}");
                }
            }
        }
    }

    #[test]
    fn policy_rows_normalised() {
        let shape = GridShape::new(6, 7).unwrap();
        let mdp = Mdp::new(shape, Cell::new(4, 1), 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let reward: Vec<f64> = (0..shape.n_cells()).map(|_| rng.random_range(-6.0..-2.5)).collect();
        let sol = soft_value_iteration(&reward, &mdp, SolverSettings::for_shape(shape)).unwrap();
        for s in 0..shape.n_cells() {
            if s == mdp.goal() {
                continue;
            }
            let total: f64 = sol.policy.row(s).iter().sum();
            assert!((total - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn non_convergence_is_flagged() {
        // rewards near zero make the path sum diverge on an open grid
        let shape = GridShape::new(6, 6).unwrap();
        let mdp = Mdp::new(shape, Cell::new(0, 0), 1.0).unwrap();
        let sol = soft_value_iteration(&vec![-0.01; 36], &mdp, SolverSettings::for_shape(shape)).unwrap();
        assert!(!sol.converged);
        assert_eq!(sol.iterations, 48);
    }

    #[test]
    fn rejects_non_finite_reward() {
        let mdp = corridor(3);
        let err = soft_value_iteration(&[-1.0, f64::NAN, -1.0], &mdp, SolverSettings::fixed(3));
        assert!(matches!(err, Err(Error::Numerical(_))));
    }

    #[test]
    fn propagate_start_at_goal() {
        let mdp = corridor(3);
        let sol = soft_value_iteration(&[-1.0; 3], &mdp, SolverSettings::fixed(5)).unwrap();
        let p = propagate_policy(&sol.policy, &mdp, Cell::new(0, 2), 10).unwrap();
        assert_eq!(p.expected_mu, vec![0.0, 0.0, 1.0]);
        assert_eq!(p.residual_mass, 0.0);
    }

    #[test]
    fn propagate_deterministic_chain() {
        let mdp = corridor(3);
        let mut rows = vec![[0.0; 8]; 3];
        rows[0][Action::East.id()] = 1.0;
        rows[1][Action::East.id()] = 1.0;
        let policy = Policy::from_rows(&mdp, rows).unwrap();
        let p = propagate_policy(&policy, &mdp, Cell::new(0, 0), 4).unwrap();
        assert_eq!(p.expected_mu, vec![1.0, 1.0, 1.0]);
    }

    #[test]
    fn propagate_mass_bounds() {
        let shape = GridShape::new(5, 5).unwrap();
        let mdp = Mdp::new(shape, Cell::new(4, 4), 1.0).unwrap();
        let sol = soft_value_iteration(&vec![-1.0; 25], &mdp, SolverSettings::fixed(12)).unwrap();
        for horizon in [0, 1, 5, 30] {
            let p = propagate_policy(&sol.policy, &mdp, Cell::new(0, 0), horizon).unwrap();
            let total: f64 = p.expected_mu.iter().sum();
            assert!(total >= 1.0 - 1e-12 && total <= horizon as f64 + 1.0 + 1e-12);
        }
    }

    #[test]
    fn empirical_examples() {
        let shape = GridShape::new(1, 4).unwrap();
        let demo = Trajectory::from_states(shape, (0..3).map(|c| Cell::new(0, c)).collect()).unwrap();
        let one = empirical_visitation(std::slice::from_ref(&demo), shape).unwrap();
        assert_eq!(one.mu_d, vec![1.0, 1.0, 1.0, 0.0]);
        let two = empirical_visitation(&[demo.clone(), demo], shape).unwrap();
        assert_eq!(one.mu_d, two.mu_d);
        for s in 0..4 {
            let sa: f64 = one.mu_d_sa[s * 8..(s + 1) * 8].iter().sum();
            assert_eq!(one.mu_d[s], sa + one.mu_d_terminal[s]);
        }
    }

    #[test]
    fn gradient_examples() {
        let mut stats = VisitationStats {
            mu_d: vec![1.0, 0.0],
            mu_d_sa: vec![0.0; 16],
            mu_d_terminal: vec![0.0; 2],
            expected_mu: Some(vec![0.5, 0.5]),
        };
        assert_eq!(maxent_gradient(&stats).unwrap(), vec![0.5, -0.5]);
        stats.expected_mu = Some(stats.mu_d.clone());
        assert_eq!(maxent_gradient(&stats).unwrap(), vec![0.0, 0.0]);
        stats.expected_mu = Some(vec![0.0; 3]);
        assert!(matches!(maxent_gradient(&stats), Err(Error::Shape(_))));
    }

    #[test]
    fn nll_examples() {
        let shape = GridShape::new(1, 3).unwrap();
        let mdp = Mdp::new(shape, Cell::new(0, 2), 1.0).unwrap();
        let mut rows = vec![[0.0; 8]; 3];
        rows[0][Action::East.id()] = 1.0;
        rows[1][Action::East.id()] = 1.0;
        let policy = Policy::from_rows(&mdp, rows).unwrap();
        let demo = Trajectory::from_states(shape, (0..3).map(|c| Cell::new(0, c)).collect()).unwrap();
        assert_eq!(demo_nll(&policy, &demo).unwrap(), 0.0);

        // uniform over 8 actions on an interior cycle of 60 steps
        let shape = GridShape::new(5, 5).unwrap();
        let mdp = Mdp::new(shape, Cell::new(0, 0), 1.0).unwrap();
        let mut rows = vec![[0.0; 8]; 25];
        for s in 0..25 {
            for a in Action::ALL {
                if mdp.successor(s, a).is_some() {
                    rows[s][a.id()] = 1.0 / mdp.n_valid(s) as f64;
                }
            }
        }
        let policy = Policy::from_rows(&mdp, rows).unwrap();
        let ring = [Cell::new(2, 2), Cell::new(2, 3), Cell::new(3, 3), Cell::new(3, 2)];
        let states: Vec<Cell> = (0..61).map(|i| ring[i % 4]).collect();
        let demo = Trajectory::from_states(shape, states).unwrap();
        let nll = demo_nll(&policy, &demo).unwrap();
        assert!((nll - 60.0 * 8f64.ln()).abs() < 1e-9);
        assert!((nll - 124.766).abs() < 1e-3);
    }

    #[test]
    fn nll_infinite_on_zero_probability() {
        let shape = GridShape::new(1, 3).unwrap();
        let mdp = Mdp::new(shape, Cell::new(0, 2), 1.0).unwrap();
        let mut rows = vec![[0.0; 8]; 3];
        rows[0][Action::East.id()] = 1.0;
        rows[1][Action::West.id()] = 1.0;
        let policy = Policy::from_rows(&mdp, rows).unwrap();
        let demo = Trajectory::from_states(shape, (0..3).map(|c| Cell::new(0, c)).collect()).unwrap();
        assert_eq!(demo_nll(&policy, &demo).unwrap(), f64::INFINITY);
    }

    #[test]
    fn sampling_edge_cases() {
        let mdp = corridor(5);
        let sol = soft_value_iteration(&[-2.0; 5], &mdp, SolverSettings::for_shape(mdp.shape())).unwrap();
        let r = sample_trajectory(&sol.policy, &mdp, Cell::new(0, 4), 10, 1).unwrap();
        assert_eq!(r.trajectory.len(), 1);
        assert!(!r.truncated);
        let r = sample_trajectory(&sol.policy, &mdp, Cell::new(0, 0), 10, 1).unwrap();
        let expect: Vec<Cell> = (0..5).map(|c| Cell::new(0, c)).collect();
        let mut rows = vec![[0.0; 8]; 5];
        for row in rows.iter_mut().take(4) {
            row[Action::East.id()] = 1.0;
        }
        let det = Policy::from_rows(&mdp, rows).unwrap();
        let r2 = sample_trajectory(&det, &mdp, Cell::new(0, 0), 10, 7).unwrap();
        assert_eq!(r2.trajectory.states(), expect.as_slice());
        assert_eq!(r.trajectory.end(), Cell::new(0, 4));
        let short = sample_trajectory(&det, &mdp, Cell::new(0, 0), 2, 7).unwrap();
        assert!(short.truncated);
        assert_eq!(short.trajectory.len(), 3);
    }

    #[test]
    fn blocked_cells_get_no_mass() {
        let shape = GridShape::new(3, 5).unwrap();
        let mut blocked = vec![false; 15];
        blocked[shape.index(Cell::new(1, 2))] = true;
        blocked[shape.index(Cell::new(0, 2))] = true;
        let mdp = Mdp::with_blocked(shape, Cell::new(1, 4), 1.0, &blocked).unwrap();
        let sol = soft_value_iteration(&vec![-2.0; 15], &mdp, SolverSettings::for_shape(shape)).unwrap();
        let p = propagate_policy(&sol.policy, &mdp, Cell::new(1, 0), 40).unwrap();
        assert_eq!(p.expected_mu[shape.index(Cell::new(1, 2))], 0.0);
        assert_eq!(p.expected_mu[shape.index(Cell::new(0, 2))], 0.0);
        assert!(p.residual_mass < 1e-6);
    }

    #[test]
    fn cap_reward_masks_capped_cells() {
        let (r, active) = cap_reward(&[-3.0, 0.5, 3.0], 2, DEFAULT_REWARD_CAP);
        assert_eq!(r, vec![-3.0, DEFAULT_REWARD_CAP, 3.0]);
        assert_eq!(active, vec![true, false, true]);
    }

    #[test]
    fn default_cap_sits_below_log_branching() {
        assert!((DEFAULT_REWARD_CAP + 8f64.ln() + 0.25).abs() < 1e-15);
    }

    #[test]
    fn rewards_at_the_cap_converge_on_an_open_grid() {
        let shape = GridShape::new(30, 30).unwrap();
        let mdp = Mdp::new(shape, Cell::new(15, 15), 1.0).unwrap();
        let r = vec![DEFAULT_REWARD_CAP; shape.n_cells()];
        let sol = soft_value_iteration(&r, &mdp, SolverSettings::for_shape(shape)).unwrap();
        assert!(sol.converged);
        let p = propagate_policy(&sol.policy, &mdp, Cell::new(0, 0), 2 * 60).unwrap();
        assert!(p.residual_mass < 1e-6, "{}", p.residual_mass);
    }
}
