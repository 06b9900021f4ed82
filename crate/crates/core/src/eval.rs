//! Prediction metrics (NLL, MHD), collision trajectories, zero-FPR threshold
//! calibration and the miscalibration study.

use std::fmt::Write as _;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baseline::{handcrafted_cost, BaselineParams};
use crate::error::{Error, Result};
use crate::grid::{Cell, CostMap, GridShape, GridSpec, Trajectory};
use crate::mdp::{cap_reward, demo_nll, sample_trajectory_with, soft_value_iteration, Mdp, SolverSettings};
use crate::rng::{rng_for, stream};
use crate::synth::{Dataset, DatasetSample, GroundTruthWorld, SensorSettings};
use crate::train::{infer_costmap, Checkpoint, MdpSettings};

/// Modified Hausdorff distance: the larger of the two mean directed
/// nearest-neighbour distances.
pub fn mhd(a: &[[f64; 2]], b: &[[f64; 2]]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::InvalidArgument("MHD needs two non-empty point sets".into()));
    }
    Ok(directed_mean(a, b).max(directed_mean(b, a)))
}

fn directed_mean(from: &[[f64; 2]], to: &[[f64; 2]]) -> f64 {
    let total: f64 = from
        .iter()
        .map(|p| {
            to.iter()
                .map(|q| (p[0] - q[0]).hypot(p[1] - q[1]))
                .fold(f64::INFINITY, f64::min)
        })
        .sum();
    total / from.len() as f64
}

/// Source of cost maps under evaluation.
pub trait CostProvider: Sync {
    fn cost_map(&self, sample: &DatasetSample, world: &GroundTruthWorld) -> Result<CostMap>;
}

impl CostProvider for Checkpoint {
    fn cost_map(&self, sample: &DatasetSample, _: &GroundTruthWorld) -> Result<CostMap> {
        infer_costmap(self, &sample.features)
    }
}

impl CostProvider for BaselineParams {
    fn cost_map(&self, sample: &DatasetSample, _: &GroundTruthWorld) -> Result<CostMap> {
        handcrafted_cost(&sample.features, self)
    }
}

/// The generating world's own cost; a reference point, not a predictor.
#[derive(Debug, Clone, Copy)]
pub struct TrueCost;

impl CostProvider for TrueCost {
    fn cost_map(&self, _: &DatasetSample, world: &GroundTruthWorld) -> Result<CostMap> {
        CostMap::from_reward(world.spec, &world.true_reward)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ConstantCost(pub f64);

impl CostProvider for ConstantCost {
    fn cost_map(&self, sample: &DatasetSample, _: &GroundTruthWorld) -> Result<CostMap> {
        let spec = sample.features.spec;
        CostMap::new(spec, vec![self.0; spec.n_cells()])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalSettings {
    pub gamma: f64,
    /// Policy rollouts per test sample for MHD.
    pub n_samples: usize,
    /// Rollout step budget; 0 means `4 (H + W)`.
    pub max_rollout_steps: usize,
    pub collisions_per_sample: usize,
    pub seed: u64,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self {
            gamma: 1.0,
            n_samples: 10,
            max_rollout_steps: 0,
            collisions_per_sample: 2,
            seed: 0,
        }
    }
}

impl EvalSettings {
    fn mdp(&self) -> MdpSettings {
        MdpSettings {
            gamma: self.gamma,
            ..Default::default()
        }
    }

    fn rollout_budget(&self, shape: GridShape) -> usize {
        if self.max_rollout_steps == 0 {
            4 * (shape.rows + shape.cols)
        } else {
            self.max_rollout_steps
        }
    }
}

/// NLL and MHD of one test sample, or `None` when the goal is unreachable
/// under the predicted cost.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplePrediction {
    pub nll: f64,
    pub mhd: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictionSummary {
    pub mean_nll: f64,
    pub mean_mhd: f64,
    pub n_unreachable: usize,
    pub per_sample: Vec<Option<SamplePrediction>>,
}

/// Scores one cost map against the sample's demonstration. `stream_index`
/// selects the rollout random stream.
pub fn predict_sample(
    cost: &CostMap,
    sample: &DatasetSample,
    settings: &EvalSettings,
    stream_index: u64,
) -> Result<Option<SamplePrediction>> {
    let spec = cost.spec;
    let shape = spec.shape();
    let mdp_settings = settings.mdp();
    let mdp = Mdp::new(shape, sample.goal, settings.gamma)?;
    let (reward, _) = cap_reward(&cost.reward(), mdp.goal(), mdp_settings.reward_cap);
    let sol = soft_value_iteration(&reward, &mdp, SolverSettings::for_shape(shape))?;
    if !sol.value(sample.start).is_finite() {
        return Ok(None);
    }
    let nll = demo_nll(&sol.policy, &sample.demo)?;
    if !nll.is_finite() {
        return Ok(None);
    }
    let demo_pts = sample.demo.to_world(&spec);
    let mut rng = rng_for(settings.seed, stream::EVAL, stream_index);
    let mut total = 0.0;
    for _ in 0..settings.n_samples {
        let roll = sample_trajectory_with(&sol.policy, &mdp, sample.start, settings.rollout_budget(shape), &mut rng)?;
        total += mhd(&roll.trajectory.to_world(&spec), &demo_pts)?;
    }
    let mhd = if settings.n_samples == 0 {
        f64::NAN
    } else {
        total / settings.n_samples as f64
    };
    Ok(Some(SamplePrediction { nll, mhd }))
}

fn check_indices(dataset: &Dataset, indices: &[usize]) -> Result<()> {
    if indices.is_empty() {
        return Err(Error::InvalidArgument("no test samples".into()));
    }
    if let Some(&i) = indices.iter().find(|&&i| i >= dataset.samples.len()) {
        return Err(Error::InvalidArgument(format!("sample index {i} out of range")));
    }
    Ok(())
}

fn cost_maps<P: CostProvider + ?Sized>(provider: &P, dataset: &Dataset, indices: &[usize]) -> Result<Vec<CostMap>> {
    indices
        .par_iter()
        .map(|&i| {
            let s = &dataset.samples[i];
            provider.cost_map(s, &dataset.worlds[s.world])
        })
        .collect()
}

fn summarize(per_sample: Vec<Option<SamplePrediction>>) -> PredictionSummary {
    let ok: Vec<&SamplePrediction> = per_sample.iter().flatten().collect();
    let n = ok.len() as f64;
    let (mean_nll, mean_mhd) = if ok.is_empty() {
        (f64::NAN, f64::NAN)
    } else {
        (
            ok.iter().map(|p| p.nll).sum::<f64>() / n,
            ok.iter().map(|p| p.mhd).sum::<f64>() / n,
        )
    };
    PredictionSummary {
        mean_nll,
        mean_mhd,
        n_unreachable: per_sample.len() - ok.len(),
        per_sample,
    }
}

/// Mean NLL and MHD of `provider` over the samples `indices` of `dataset`.
/// Unreachable samples are excluded from the means and counted.
pub fn evaluate_prediction<P: CostProvider + ?Sized>(
    provider: &P,
    dataset: &Dataset,
    indices: &[usize],
    settings: &EvalSettings,
) -> Result<PredictionSummary> {
    check_indices(dataset, indices)?;
    let maps = cost_maps(provider, dataset, indices)?;
    let per_sample = indices
        .par_iter()
        .zip(&maps)
        .map(|(&i, c)| predict_sample(c, &dataset.samples[i], settings, i as u64))
        .collect::<Result<Vec<_>>>()?;
    Ok(summarize(per_sample))
}

/// Cells of the king-move shortest path from `a` to `b`, diagonal first,
/// excluding `a`.
fn king_line(a: Cell, b: Cell) -> Vec<Cell> {
    let (mut r, mut c) = (a.row as i64, a.col as i64);
    let mut out = Vec::new();
    while (r, c) != (b.row as i64, b.col as i64) {
        r += (b.row as i64 - r).signum();
        c += (b.col as i64 - c).signum();
        out.push(Cell::new(r as usize, c as usize));
    }
    out
}

/// Removes loops so that no cell repeats; keeps the sequence 8-adjacent.
fn erase_loops(states: Vec<Cell>) -> Vec<Cell> {
    let mut out: Vec<Cell> = Vec::with_capacity(states.len());
    for s in states {
        if let Some(p) = out.iter().position(|&q| q == s) {
            out.truncate(p);
        }
        out.push(s);
    }
    out
}

/// Leg length range of a collision path, meters from the obstacle cell.
const COLLISION_LEG_M: (f64, f64) = (6.0, 9.0);
const COLLISION_MIN_SPAN_M: f64 = 12.0;
const COLLISION_ATTEMPTS: usize = 200;

/// Up to `n` paths of roughly 12 to 18 m, each the obstacle-ignoring
/// shortest path from a start through a sampled obstacle cell to a goal.
/// Fewer are returned when the world has no obstacles or no fitting
/// endpoints are found.
pub fn generate_collision_trajectories(world: &GroundTruthWorld, n: usize, seed: u64) -> Result<Vec<Trajectory>> {
    let spec = world.spec;
    let shape = spec.shape();
    let obstacles: Vec<usize> = (0..shape.n_cells()).filter(|&i| world.obstacle_mask[i]).collect();
    if obstacles.is_empty() {
        return Ok(Vec::new());
    }
    let dist_m = |a: Cell, b: Cell| {
        let (p, q) = (spec.cell_center(a), spec.cell_center(b));
        (p[0] - q[0]).hypot(p[1] - q[1])
    };
    let mut rng = rng_for(seed, stream::COLLISION, 0);
    let random_cell = |rng: &mut rand_chacha::ChaCha8Rng| shape.cell(rng.random_range(0..shape.n_cells()));
    let mut out = Vec::with_capacity(n);
    let mut attempts = 0;
    while out.len() < n && attempts < n * COLLISION_ATTEMPTS {
        attempts += 1;
        let o = shape.cell(obstacles[rng.random_range(0..obstacles.len())]);
        let start = random_cell(&mut rng);
        let goal = random_cell(&mut rng);
        let (ds, dg) = (dist_m(start, o), dist_m(goal, o));
        let leg = COLLISION_LEG_M.0..=COLLISION_LEG_M.1;
        if !leg.contains(&ds) || !leg.contains(&dg) || dist_m(start, goal) < COLLISION_MIN_SPAN_M {
            continue;
        }
        let mut states = vec![start];
        states.extend(king_line(start, o));
        states.extend(king_line(o, goal));
        let states = erase_loops(states);
        if !states.iter().any(|&c| world.obstacle_mask[shape.index(c)]) {
            continue;
        }
        out.push(Trajectory::from_states(shape, states)?);
    }
    Ok(out)
}

/// Largest cell cost along the path.
pub fn trajectory_cost_statistic(cost: &CostMap, traj: &Trajectory) -> f64 {
    traj.states().iter().map(|&c| cost.at(c)).fold(f64::NEG_INFINITY, f64::max)
}

/// Smallest threshold that classifies every free statistic as traversable,
/// i.e. the next representable value above the largest free statistic.
pub fn calibrate_threshold(free_stats: &[f64], _collision_stats: &[f64]) -> Result<f64> {
    if free_stats.is_empty() {
        return Err(Error::InvalidArgument("threshold calibration needs free trajectories".into()));
    }
    if free_stats.iter().any(|v| v.is_nan()) {
        return Err(Error::Numerical("NaN trajectory statistic".into()));
    }
    let max = free_stats.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(max.next_up())
}

/// Collision is the positive class: a path is flagged when its statistic is
/// at least the threshold. A rate is `None` when its class is empty.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassificationRates {
    pub fnr: Option<f64>,
    pub fpr: Option<f64>,
}

pub fn classification_report(free_stats: &[f64], collision_stats: &[f64], threshold: f64) -> ClassificationRates {
    let rate = |v: &[f64], hit: &dyn Fn(f64) -> bool| {
        (!v.is_empty()).then(|| v.iter().filter(|&&x| hit(x)).count() as f64 / v.len() as f64)
    };
    ClassificationRates {
        fnr: rate(collision_stats, &|x| x < threshold),
        fpr: rate(free_stats, &|x| x >= threshold),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub label: String,
    pub mean_nll: f64,
    /// Meters.
    pub mean_mhd: f64,
    pub fnr: Option<f64>,
    /// On the free paths held out from calibration.
    pub fpr: Option<f64>,
    /// On the calibration paths; zero by construction.
    pub fpr_calibration: Option<f64>,
    pub threshold: f64,
    pub n_test: usize,
    pub n_samples_per_test: usize,
    pub n_unreachable: usize,
    pub n_collisions: usize,
}

fn fmt_rate(r: Option<f64>) -> String {
    r.map_or_else(|| "undefined".to_string(), |v| v.to_string())
}

impl EvalReport {
    pub const CSV_HEADER: &'static str =
        "label,mean_nll,mean_mhd,fnr,fpr,fpr_calibration,threshold,n_test,n_samples_per_test,n_unreachable,n_collisions";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{}",
            self.label,
            self.mean_nll,
            self.mean_mhd,
            fmt_rate(self.fnr),
            fmt_rate(self.fpr),
            fmt_rate(self.fpr_calibration),
            self.threshold,
            self.n_test,
            self.n_samples_per_test,
            self.n_unreachable,
            self.n_collisions
        )
    }

    pub fn to_csv(&self) -> String {
        format!("{}\n{}\n", Self::CSV_HEADER, self.csv_row())
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{}", self.label);
        let _ = writeln!(s, "  test samples        {} ({} unreachable)", self.n_test, self.n_unreachable);
        let _ = writeln!(s, "  mean NLL            {:.4} nats", self.mean_nll);
        let _ = writeln!(
            s,
            "  mean MHD            {:.4} m ({} rollouts per sample)",
            self.mean_mhd, self.n_samples_per_test
        );
        let _ = writeln!(s, "  threshold           {}", self.threshold);
        let _ = writeln!(s, "  FNR                 {} ({} collision paths)", fmt_rate(self.fnr), self.n_collisions);
        let _ = writeln!(s, "  FPR held-out        {}", fmt_rate(self.fpr));
        let _ = writeln!(s, "  FPR calibration     {}", fmt_rate(self.fpr_calibration));
        s
    }
}

/// Full evaluation of `provider` on `indices`: prediction metrics, then
/// collision classification. Samples at even positions of `indices` calibrate
/// the threshold on their demonstrations; odd positions give the held-out
/// FPR. Collision paths come from the worlds of all listed samples and are
/// scored on the sample's own cost map.
pub fn evaluate<P: CostProvider + ?Sized>(
    label: &str,
    provider: &P,
    dataset: &Dataset,
    indices: &[usize],
    settings: &EvalSettings,
) -> Result<EvalReport> {
    check_indices(dataset, indices)?;
    let maps = cost_maps(provider, dataset, indices)?;
    let scored = indices
        .par_iter()
        .zip(&maps)
        .map(|(&i, cost)| {
            let s = &dataset.samples[i];
            let pred = predict_sample(cost, s, settings, i as u64)?;
            let free = trajectory_cost_statistic(cost, &s.demo);
            let collisions: Vec<f64> = generate_collision_trajectories(
                &dataset.worlds[s.world],
                settings.collisions_per_sample,
                crate::rng::derive_seed(settings.seed, stream::COLLISION, i as u64),
            )?
            .iter()
            .map(|t| trajectory_cost_statistic(cost, t))
            .collect();
            Ok((pred, free, collisions))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut per_sample = Vec::with_capacity(scored.len());
    let (mut calib, mut held_out, mut collisions) = (Vec::new(), Vec::new(), Vec::new());
    for (k, (pred, free, coll)) in scored.into_iter().enumerate() {
        per_sample.push(pred);
        if k % 2 == 0 {
            calib.push(free);
        } else {
            held_out.push(free);
        }
        collisions.extend(coll);
    }
    let threshold = calibrate_threshold(&calib, &collisions)?;
    let rates = classification_report(&held_out, &collisions, threshold);
    let calib_rates = classification_report(&calib, &collisions, threshold);
    let summary = summarize(per_sample);
    Ok(EvalReport {
        label: label.to_string(),
        mean_nll: summary.mean_nll,
        mean_mhd: summary.mean_mhd,
        fnr: rates.fnr,
        fpr: rates.fpr,
        fpr_calibration: calib_rates.fpr,
        threshold,
        n_test: indices.len(),
        n_samples_per_test: settings.n_samples,
        n_unreachable: summary.n_unreachable,
        n_collisions: collisions.len(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RobustnessReport {
    pub pitch_error_deg: f64,
    pub learned: EvalReport,
    pub baseline: EvalReport,
}

impl RobustnessReport {
    pub fn to_csv(&self) -> String {
        format!(
            "pitch_error_deg,{}\n{},{}\n{},{}\n",
            EvalReport::CSV_HEADER,
            self.pitch_error_deg,
            self.learned.csv_row(),
            self.pitch_error_deg,
            self.baseline.csv_row()
        )
    }

    pub fn to_text(&self) -> String {
        format!(
            "pitch error {} deg on the right sensor\n\n{}\n{}",
            self.pitch_error_deg,
            self.learned.to_text(),
            self.baseline.to_text()
        )
    }
}

/// Rescans `dataset` with `pitch_error_deg` on the right sensor and evaluates
/// the learned model and the baseline on identical worlds and trajectories.
pub fn robustness_experiment(
    learned: &Checkpoint,
    baseline: &BaselineParams,
    dataset: &Dataset,
    indices: &[usize],
    pitch_error_deg: f64,
    settings: &EvalSettings,
) -> Result<RobustnessReport> {
    if !spec_matches(&learned.spec, &dataset.config.spec) {
        return Err(Error::InvalidSpec(format!(
            "checkpoint grid {:?} does not match the dataset grid {:?}",
            learned.spec, dataset.config.spec
        )));
    }
    let sensor = SensorSettings {
        pitch_error_deg,
        ..dataset.config.sensor
    };
    let perturbed = dataset.rescanned(&sensor)?;
    Ok(RobustnessReport {
        pitch_error_deg,
        learned: evaluate(&format!("{} (learned)", learned.architecture), learned, &perturbed, indices, settings)?,
        baseline: evaluate("baseline", baseline, &perturbed, indices, settings)?,
    })
}

fn spec_matches(a: &GridSpec, b: &GridSpec) -> bool {
    a.width_cells == b.width_cells && a.height_cells == b.height_cells && a.resolution_m == b.resolution_m
}
