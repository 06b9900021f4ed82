//! Deep MaxEnt IRL training: network forward, per-sample soft value
//! iteration and visitation propagation, the reward-map gradient
//! `μ_D − E[μ]`, back-propagation and a parameter update.
//!
//! Sign convention: the optimizer minimises `−(1/B) Σ L_D + λ1‖w‖₁ + λ2‖w‖²`
//! over conv weights `w`, i.e. parameters move to increase the data
//! log-likelihood.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::arch::{self, ArchitectureId, Footprint};
use crate::error::{Error, Result};
use crate::grid::{Cell, CostMap, FeatureMap, GridShape, GridSpec, Trajectory};
use crate::mdp::{
    cap_reward, demo_nll, empirical_visitation, propagate_policy, soft_value_iteration, Mdp, SolverSettings,
    DEFAULT_REWARD_CAP,
};
use crate::nn::{elastic_net_grad, elastic_net_penalty, Mode, Network, Optimizer, OptimizerKind, ParamKind, Tensor};
use crate::rng::{rng_for, stream};
use crate::synth::{Dataset, DatasetSample};

/// Anything that maps a batch of feature tensors to a batch of reward maps
/// and can back-propagate a reward-map gradient to its parameters.
pub trait RewardModel {
    type Cache;

    fn forward(&mut self, input: &Tensor) -> Result<(Tensor, Self::Cache)>;
    fn backward(&self, cache: &Self::Cache, grad_output: &Tensor) -> Result<Vec<Vec<f64>>>;
    fn params(&self) -> Vec<&[f64]>;
    fn params_mut(&mut self) -> Vec<&mut [f64]>;
    /// Which parameter tensors the elastic-net penalty applies to.
    fn regularized(&self) -> Vec<bool>;
}

impl RewardModel for Network {
    type Cache = crate::nn::ForwardCache;

    fn forward(&mut self, input: &Tensor) -> Result<(Tensor, Self::Cache)> {
        let cache = Network::forward(self, input)?;
        Ok((cache.output().clone(), cache))
    }

    fn backward(&self, cache: &Self::Cache, grad_output: &Tensor) -> Result<Vec<Vec<f64>>> {
        Ok(Network::backward(self, cache, grad_output)?.params)
    }

    fn params(&self) -> Vec<&[f64]> {
        Network::params(self)
    }

    fn params_mut(&mut self) -> Vec<&mut [f64]> {
        Network::params_mut(self)
    }

    fn regularized(&self) -> Vec<bool> {
        self.param_kinds().into_iter().map(|k| k == ParamKind::ConvWeight).collect()
    }
}

/// One free reward per cell, shared by every sample; ignores the features.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularReward {
    pub shape: GridShape,
    pub values: Vec<f64>,
}

impl TabularReward {
    pub fn new(shape: GridShape, init: f64) -> Self {
        Self {
            shape,
            values: vec![init; shape.n_cells()],
        }
    }
}

impl RewardModel for TabularReward {
    type Cache = usize;

    fn forward(&mut self, input: &Tensor) -> Result<(Tensor, usize)> {
        if input.height() != self.shape.rows || input.width() != self.shape.cols {
            return Err(Error::Shape("tabular reward grid differs from the input".into()));
        }
        let n = input.batch();
        let mut data = Vec::with_capacity(n * self.values.len());
        for _ in 0..n {
            data.extend_from_slice(&self.values);
        }
        Ok((Tensor::from_vec([n, 1, self.shape.rows, self.shape.cols], data)?, n))
    }

    fn backward(&self, batch: &usize, grad_output: &Tensor) -> Result<Vec<Vec<f64>>> {
        let mut g = vec![0.0; self.values.len()];
        for b in 0..*batch {
            for (a, v) in g.iter_mut().zip(grad_output.plane(b, 0)) {
                *a += v;
            }
        }
        Ok(vec![g])
    }

    fn params(&self) -> Vec<&[f64]> {
        vec![&self.values]
    }

    fn params_mut(&mut self) -> Vec<&mut [f64]> {
        vec![&mut self.values]
    }

    fn regularized(&self) -> Vec<bool> {
        vec![false]
    }
}

/// Stacks feature maps into an `N × 3 × H × W` tensor.
pub fn features_to_tensor(maps: &[&FeatureMap]) -> Result<Tensor> {
    let first = maps
        .first()
        .ok_or_else(|| Error::InvalidArgument("empty batch".into()))?;
    let spec = first.spec;
    let mut data = Vec::with_capacity(maps.len() * 3 * spec.n_cells());
    for m in maps {
        if m.spec.shape() != spec.shape() {
            return Err(Error::Shape("feature maps in one batch differ in size".into()));
        }
        data.extend(m.to_planes());
    }
    Tensor::from_vec([maps.len(), 3, spec.height_cells, spec.width_cells], data)
}

/// Solver and propagation settings shared by training and evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MdpSettings {
    pub gamma: f64,
    /// `None` uses `4 (H + W)` sweeps at tolerance 1e-6.
    pub solver: Option<SolverSettings>,
    /// Propagation horizon; 0 means `2 (H + W)`.
    pub horizon: usize,
    pub reward_cap: f64,
}

impl Default for MdpSettings {
    fn default() -> Self {
        Self {
            gamma: 1.0,
            solver: None,
            horizon: 0,
            reward_cap: DEFAULT_REWARD_CAP,
        }
    }
}

impl MdpSettings {
    pub fn solver_for(&self, shape: GridShape) -> SolverSettings {
        self.solver.unwrap_or_else(|| SolverSettings::for_shape(shape))
    }

    pub fn horizon_for(&self, shape: GridShape) -> usize {
        if self.horizon == 0 {
            2 * (shape.rows + shape.cols)
        } else {
            self.horizon
        }
    }
}

/// Result of the MDP part of one sample.
#[derive(Debug, Clone)]
pub struct SampleOutcome {
    pub nll: f64,
    /// `∂L_D/∂r` for this sample: `μ_D − E[μ]`, zero at the goal and at
    /// cells held at the reward cap.
    pub reward_grad: Vec<f64>,
    pub residual_mass: f64,
    pub converged: bool,
}

/// Soft value iteration, propagation, NLL and reward gradient for one
/// demonstration under `reward`.
pub fn sample_outcome(reward: &[f64], shape: GridShape, demo: &Trajectory, goal: Cell, settings: &MdpSettings) -> Result<SampleOutcome> {
    let mdp = Mdp::new(shape, goal, settings.gamma)?;
    let (capped, active) = cap_reward(reward, mdp.goal(), settings.reward_cap);
    let sol = soft_value_iteration(&capped, &mdp, settings.solver_for(shape))?;
    let prop = propagate_policy(&sol.policy, &mdp, demo.start(), settings.horizon_for(shape))?;
    let nll = demo_nll(&sol.policy, demo)?;
    let mut stats = empirical_visitation(std::slice::from_ref(demo), shape)?;
    stats.expected_mu = Some(prop.expected_mu);
    let mut reward_grad = crate::mdp::maxent_gradient(&stats)?;
    reward_grad[mdp.goal()] = 0.0;
    for (g, a) in reward_grad.iter_mut().zip(&active) {
        if !a {
            *g = 0.0;
        }
    }
    Ok(SampleOutcome {
        nll,
        reward_grad,
        residual_mass: prop.residual_mass,
        converged: sol.converged,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepSettings {
    pub mdp: MdpSettings,
    pub l1: f64,
    pub l2: f64,
    /// Largest tolerated unabsorbed propagation mass.
    pub residual_tol: f64,
}

impl Default for StepSettings {
    fn default() -> Self {
        Self {
            mdp: MdpSettings::default(),
            l1: 0.0,
            l2: 0.0,
            residual_tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    /// Mean demonstration NLL over the batch, nats.
    pub nll: f64,
    /// Elastic-net penalty before the update.
    pub reg: f64,
    /// Norm of the full parameter gradient that was applied.
    pub grad_norm: f64,
    /// Largest per-cell `|μ_D − E[μ]|` over the batch.
    pub max_moment_gap: f64,
    pub max_residual_mass: f64,
    pub nonconverged: usize,
}

/// Diagnostic text written when training aborts on a numerical problem.
fn dump(what: &str, nll: &[f64], outputs: &Tensor) -> String {
    let mut s = format!("{what}\nper-sample nll: {nll:?}\n");
    for b in 0..outputs.batch() {
        let p = outputs.plane(b, 0);
        let bad = p.iter().filter(|v| !v.is_finite()).count();
        let (lo, hi) = p
            .iter()
            .filter(|v| v.is_finite())
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
        let _ = writeln!(s, "sample {b}: reward range [{lo}, {hi}], non-finite cells {bad}");
    }
    s
}

/// One update on `batch`. Fails with [`Error::Numerical`] (carrying a
/// diagnostic dump) on non-finite losses, and when the propagated mass has
/// not been absorbed within the horizon.
pub fn train_step<M: RewardModel>(
    model: &mut M,
    optimizer: &mut Optimizer,
    batch: &[&DatasetSample],
    settings: &StepSettings,
) -> Result<StepRecord> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    let maps: Vec<&FeatureMap> = batch.iter().map(|s| &s.features).collect();
    let input = features_to_tensor(&maps)?;
    let shape = batch[0].features.spec.shape();
    let (output, cache) = model.forward(&input)?;
    if !output.all_finite() {
        return Err(Error::Numerical(dump("non-finite reward map", &[], &output)));
    }
    let outcomes: Vec<SampleOutcome> = batch
        .par_iter()
        .enumerate()
        .map(|(b, s)| sample_outcome(output.plane(b, 0), shape, &s.demo, s.goal, &settings.mdp))
        .collect::<Result<_>>()?;
    let nlls: Vec<f64> = outcomes.iter().map(|o| o.nll).collect();
    if nlls.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical(dump("non-finite demonstration NLL", &nlls, &output)));
    }
    let max_residual_mass = outcomes.iter().map(|o| o.residual_mass).fold(0.0, f64::max);
    if max_residual_mass > settings.residual_tol {
        return Err(Error::Numerical(dump(
            &format!(
                "propagation left {max_residual_mass:e} unabsorbed mass (tolerance {:e})",
                settings.residual_tol
            ),
            &nlls,
            &output,
        )));
    }

    let bsz = batch.len() as f64;
    let mut grad_out = Tensor::zeros(output.shape());
    let mut max_moment_gap = 0.0f64;
    for (b, o) in outcomes.iter().enumerate() {
        for (d, g) in grad_out.plane_mut(b, 0).iter_mut().zip(&o.reward_grad) {
            *d = -g / bsz;
            max_moment_gap = max_moment_gap.max(g.abs());
        }
    }
    let mut grads = model.backward(&cache, &grad_out)?;
    let mut reg = 0.0;
    for ((g, p), r) in grads.iter_mut().zip(model.params()).zip(model.regularized()) {
        if r && (settings.l1 > 0.0 || settings.l2 > 0.0) {
            reg += elastic_net_penalty(p, settings.l1, settings.l2)?;
            for (a, e) in g.iter_mut().zip(elastic_net_grad(p, settings.l1, settings.l2)?) {
                *a += e;
            }
        }
    }
    let grad_norm = grads.iter().flatten().map(|v| v * v).sum::<f64>().sqrt();
    if !grad_norm.is_finite() {
        return Err(Error::Numerical(dump("non-finite parameter gradient", &nlls, &output)));
    }
    optimizer.step(&mut model.params_mut(), &grads)?;
    Ok(StepRecord {
        nll: nlls.iter().sum::<f64>() / bsz,
        reg,
        grad_norm,
        max_moment_gap,
        max_residual_mass,
        nonconverged: outcomes.iter().filter(|o| !o.converged).count(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Dataset directory, used by the CLI when `--data` is not given.
    pub dataset: Option<PathBuf>,
    pub architecture: ArchitectureId,
    pub optimizer: OptimizerKind,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub n_steps: usize,
    pub l1: f64,
    pub l2: f64,
    pub gamma: f64,
    pub seed: u64,
    /// Write a checkpoint every this many steps; 0 disables.
    pub checkpoint_interval: usize,
    /// Scale of the output conv's initial weights.
    pub output_gain: f64,
    /// Initial output bias, i.e. the starting reward level.
    pub output_bias: f64,
    /// Propagation horizon; 0 means `2 (H + W)`.
    pub horizon: usize,
    pub residual_tol: f64,
    pub reward_cap: f64,
    pub footprint: Footprint,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            dataset: None,
            architecture: ArchitectureId::StandardFcn,
            optimizer: OptimizerKind::Adam,
            learning_rate: 1e-3,
            batch_size: 8,
            n_steps: 2000,
            l1: 0.0,
            l2: 1e-5,
            gamma: 1.0,
            seed: 0,
            checkpoint_interval: 0,
            output_gain: 0.1,
            output_bias: -(1.0 + 8f64.ln()),
            horizon: 0,
            residual_tol: 1e-6,
            reward_cap: DEFAULT_REWARD_CAP,
            footprint: Footprint::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(format!("training configuration: {m}")));
        if !(self.learning_rate > 0.0) {
            return bad("learning_rate must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if !(self.l1 >= 0.0 && self.l2 >= 0.0) {
            return bad("l1 and l2 must be non-negative");
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad("gamma must lie in (0, 1]");
        }
        if !(self.residual_tol >= 0.0) {
            return bad("residual_tol must be non-negative");
        }
        Ok(())
    }

    pub fn step_settings(&self) -> StepSettings {
        StepSettings {
            mdp: MdpSettings {
                gamma: self.gamma,
                solver: None,
                horizon: self.horizon,
                reward_cap: self.reward_cap,
            },
            l1: self.l1,
            l2: self.l2,
            residual_tol: self.residual_tol,
        }
    }
}

/// A trained (or freshly initialised) network with its provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub architecture: ArchitectureId,
    /// Grid the network was trained on.
    pub spec: GridSpec,
    pub network: Network,
    pub seed: u64,
    pub step: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HistoryRecord {
    pub step: usize,
    pub nll: f64,
    pub reg: f64,
    pub grad_norm: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainHistory {
    pub records: Vec<HistoryRecord>,
}

impl TrainHistory {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("step,nll,reg,grad_norm,seconds\n");
        for r in &self.records {
            let _ = writeln!(s, "{},{},{},{},{:.6}", r.step, r.nll, r.reg, r.grad_norm, r.seconds);
        }
        s
    }

    /// The CSV without the wall-clock column, which is the only
    /// non-reproducible field.
    pub fn to_csv_without_time(&self) -> String {
        let mut s = String::from("step,nll,reg,grad_norm\n");
        for r in &self.records {
            let _ = writeln!(s, "{},{},{},{}", r.step, r.nll, r.reg, r.grad_norm);
        }
        s
    }
}

/// Network for `config`, initialised from its seed.
pub fn initial_network(config: &TrainConfig, resolution_m: f64) -> Result<Network> {
    let mut net = arch::build_checked(config.architecture, FeatureMap::N_CHANNELS, resolution_m, config.footprint)?;
    let mut rng = rng_for(config.seed, stream::INIT, 0);
    net.initialize(&mut rng, config.output_gain, config.output_bias)?;
    Ok(net)
}

/// Called after every step with the step number (1-based), the model and the
/// step's record. Returning an error aborts training.
pub type StepHook<'a> = dyn FnMut(usize, &Checkpoint, &StepRecord) -> Result<()> + 'a;

/// Runs `config.n_steps` updates over seeded shuffled minibatches of the
/// training split. The returned network is in eval mode.
pub fn train(config: &TrainConfig, dataset: &Dataset, mut hook: Option<&mut StepHook<'_>>) -> Result<(Checkpoint, TrainHistory)> {
    config.validate()?;
    let spec = dataset.config.spec;
    let mut net = initial_network(config, spec.resolution_m)?;
    let shapes: Vec<usize> = net.params().iter().map(|p| p.len()).collect();
    let mut opt = Optimizer::new(config.optimizer, config.learning_rate, &shapes)?;
    let settings = config.step_settings();
    let train_idx = &dataset.train;
    if train_idx.is_empty() && config.n_steps > 0 {
        return Err(Error::InvalidArgument("dataset has no training samples".into()));
    }
    let mut order: Vec<usize> = Vec::new();
    let mut cursor = 0;
    let mut epoch = 0u64;
    let mut history = TrainHistory::default();
    let started = Instant::now();
    let mut ckpt = Checkpoint {
        architecture: config.architecture,
        spec,
        network: net.clone(),
        seed: config.seed,
        step: 0,
    };
    for step in 1..=config.n_steps {
        let mut batch = Vec::with_capacity(config.batch_size);
        while batch.len() < config.batch_size.min(train_idx.len()) {
            if cursor == order.len() {
                order = train_idx.clone();
                let mut rng = rng_for(config.seed, stream::SHUFFLE, epoch);
                for i in (1..order.len()).rev() {
                    order.swap(i, rng.random_range(0..=i));
                }
                epoch += 1;
                cursor = 0;
            }
            batch.push(&dataset.samples[order[cursor]]);
            cursor += 1;
        }
        net.set_mode(Mode::Train);
        let rec = train_step(&mut net, &mut opt, &batch, &settings)?;
        history.records.push(HistoryRecord {
            step,
            nll: rec.nll,
            reg: rec.reg,
            grad_norm: rec.grad_norm,
            seconds: started.elapsed().as_secs_f64(),
        });
        if let Some(h) = hook.as_deref_mut() {
            ckpt.network = net.clone();
            ckpt.network.set_mode(Mode::Eval);
            ckpt.step = step as u64;
            h(step, &ckpt, &rec)?;
        }
    }
    net.set_mode(Mode::Eval);
    ckpt.network = net;
    ckpt.step = config.n_steps as u64;
    Ok((ckpt, history))
}

/// Cost map of `features` under the checkpoint (eval-mode batch norm). The
/// grid may differ in size from the training grid but not in resolution.
pub fn infer_costmap(checkpoint: &Checkpoint, features: &FeatureMap) -> Result<CostMap> {
    if features.spec.resolution_m != checkpoint.spec.resolution_m {
        return Err(Error::InvalidSpec(format!(
            "checkpoint was trained at {} m per cell, features are at {}",
            checkpoint.spec.resolution_m, features.spec.resolution_m
        )));
    }
    let mut net = checkpoint.network.clone();
    net.set_mode(Mode::Eval);
    let input = features_to_tensor(&[features])?;
    let out = net.predict(&input)?;
    CostMap::from_reward(features.spec, out.plane(0, 0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Trajectory;
    use crate::mdp::Policy;
    use crate::nn::OptimizerKind;

    fn corridor_sample(spec: GridSpec, states: Vec<Cell>) -> DatasetSample {
        let demo = Trajectory::from_states(spec.shape(), states).unwrap();
        let mut features = FeatureMap::zeros(spec);
        features.visibility.fill(1.0);
        DatasetSample {
            start: demo.start(),
            goal: demo.end(),
            demo,
            features,
            world: 0,
        }
    }

    fn exact_settings() -> StepSettings {
        StepSettings {
            mdp: MdpSettings {
                solver: Some(SolverSettings {
                    max_iters: 5000,
                    tol: 1e-13,
                }),
                horizon: 3000,
                ..Default::default()
            },
            residual_tol: 1e-9,
            ..Default::default()
        }
    }

    /// Classic tabular MaxEnt update written out directly against the solver.
    fn reference_update(theta: &[f64], sample: &DatasetSample, lr: f64, settings: &StepSettings) -> Vec<f64> {
        let shape = sample.features.spec.shape();
        let mdp = Mdp::new(shape, sample.goal, 1.0).unwrap();
        let sol = soft_value_iteration(theta, &mdp, settings.mdp.solver.unwrap()).unwrap();
        let policy: &Policy = &sol.policy;
        let prop = propagate_policy(policy, &mdp, sample.start, settings.mdp.horizon).unwrap();
        let mut visits = vec![0.0; shape.n_cells()];
        for c in sample.demo.states() {
            visits[shape.index(*c)] += 1.0;
        }
        theta
            .iter()
            .enumerate()
            .map(|(s, &t)| {
                if s == mdp.goal() {
                    t
                } else {
                    t + lr * (visits[s] - prop.expected_mu[s])
                }
            })
            .collect()
    }

    #[test]
    fn tabular_step_matches_reference_update() {
        let spec = GridSpec::new(5, 4, 1.0, [0.0, 0.0]).unwrap();
        let shape = spec.shape();
        let sample = corridor_sample(
            spec,
            vec![Cell::new(0, 0), Cell::new(1, 1), Cell::new(2, 1), Cell::new(3, 2), Cell::new(3, 3)],
        );
        let mut model = TabularReward::new(shape, -3.0);
        for (i, v) in model.values.iter_mut().enumerate() {
            *v -= 0.05 * (i % 7) as f64;
        }
        let theta0 = model.values.clone();
        let settings = exact_settings();
        let mut opt = Optimizer::new(OptimizerKind::Sgd, 0.1, &[shape.n_cells()]).unwrap();
        train_step(&mut model, &mut opt, &[&sample], &settings).unwrap();
        let expected = reference_update(&theta0, &sample, 0.1, &settings);
        for (a, b) in model.values.iter().zip(&expected) {
            assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
    }

    #[test]
    fn zero_gradient_map_leaves_adam_still() {
        // A 1-wide corridor forces E[μ] = μ_D exactly.
        let spec = GridSpec::new(4, 3, 1.0, [0.0, 0.0]).unwrap();
        let sample = corridor_sample(spec, vec![Cell::new(0, 0), Cell::new(0, 1)]);
        let mut model = TabularReward::new(spec.shape(), -3.0);
        // Make the goal neighbour overwhelmingly likely by penalising the rest.
        for (i, v) in model.values.iter_mut().enumerate() {
            if i != 0 && i != 1 {
                *v = -1e6;
            }
        }
        let before = model.values.clone();
        let mut opt = Optimizer::new(OptimizerKind::Adam, 0.1, &[12]).unwrap();
        let rec = train_step(&mut model, &mut opt, &[&sample], &exact_settings()).unwrap();
        assert!(rec.max_moment_gap < 1e-12, "{}", rec.max_moment_gap);
        for (a, b) in model.values.iter().zip(&before) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn features_stack_in_channel_order() {
        let spec = GridSpec::new(3, 3, 1.0, [0.0, 0.0]).unwrap();
        let mut f = FeatureMap::zeros(spec);
        f.mean_height[4] = 2.0;
        f.height_variance[4] = 3.0;
        f.visibility[4] = 1.0;
        let t = features_to_tensor(&[&f, &f]).unwrap();
        assert_eq!(t.shape(), [2, 3, 3, 3]);
        assert_eq!((t.plane(1, 0)[4], t.plane(1, 1)[4], t.plane(1, 2)[4]), (2.0, 3.0, 1.0));
    }

    #[test]
    fn history_csv_header() {
        let h = TrainHistory {
            records: vec![HistoryRecord {
                step: 1,
                nll: 2.5,
                reg: 0.0,
                grad_norm: 1.0,
                seconds: 0.25,
            }],
        };
        assert!(h.to_csv().starts_with("step,nll,reg,grad_norm,seconds\n1,2.5,0,1,0.250000\n"));
    }
}
