//! Synthetic worlds, a two-sensor LIDAR simulator and soft-optimal expert
//! demonstrations.

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baseline::minkowski_inflate;
use crate::error::{Error, Result};
use crate::grid::{rasterize_points, Cell, FeatureMap, GridShape, GridSpec, Trajectory};
use crate::mdp::{sample_trajectory_with, soft_value_iteration, Mdp, SolverSettings};
use crate::rng::{derive_seed, rng_for, stream};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WorldParams {
    /// Target fraction of obstacle cells, in `[0, 0.5]`.
    pub density: f64,
    /// Relative frequencies of walls, bollards, trees and low blocks.
    pub kind_weights: [f64; 4],
    pub wall_length_m: [f64; 2],
    pub wall_height_m: [f64; 2],
    pub bollard_height_m: [f64; 2],
    pub tree_radius_m: [f64; 2],
    pub tree_height_m: [f64; 2],
    pub block_side_m: [f64; 2],
    pub block_height_m: [f64; 2],
    /// No obstacles within this distance of the grid centre (the sensor rig).
    pub clearance_radius_m: f64,
    /// Obstacles inflated by this radius are off limits to the expert.
    pub vehicle_radius_m: f64,
    pub free_reward: f64,
    /// Extra cost of free cells within `near_obstacle_m` of an obstacle.
    pub near_obstacle_penalty: f64,
    pub near_obstacle_m: f64,
    pub obstacle_reward: f64,
    /// Smallest acceptable share of cells in the expert's traversable region.
    pub min_traversable_fraction: f64,
    pub max_retries: usize,
}

impl Default for WorldParams {
    fn default() -> Self {
        Self {
            density: 0.05,
            kind_weights: [1.0, 1.0, 1.0, 1.5],
            wall_length_m: [3.0, 8.0],
            wall_height_m: [1.2, 2.0],
            bollard_height_m: [0.8, 1.0],
            tree_radius_m: [0.75, 1.5],
            tree_height_m: [2.0, 4.0],
            block_side_m: [1.0, 2.5],
            block_height_m: [0.10, 0.18],
            clearance_radius_m: 2.5,
            vehicle_radius_m: 1.0,
            free_reward: -3.0,
            near_obstacle_penalty: 1.0,
            near_obstacle_m: 2.0,
            obstacle_reward: -50.0,
            min_traversable_fraction: 0.3,
            max_retries: 200,
        }
    }
}

impl WorldParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(format!("world parameters: {m}")));
        if !(0.0..=0.5).contains(&self.density) {
            return bad("density must lie in [0, 0.5]");
        }
        if self.kind_weights.iter().any(|w| !(*w >= 0.0)) || self.kind_weights.iter().sum::<f64>() <= 0.0 {
            return bad("kind weights must be non-negative and not all zero");
        }
        for r in [
            self.wall_length_m,
            self.wall_height_m,
            self.bollard_height_m,
            self.tree_radius_m,
            self.tree_height_m,
            self.block_side_m,
            self.block_height_m,
        ] {
            if !(r[0] > 0.0 && r[0] <= r[1]) {
                return bad("size and height ranges must be positive and ordered");
            }
        }
        if !(self.free_reward < 0.0 && self.near_obstacle_penalty >= 0.0) {
            return bad("free reward must be negative and the proximity penalty non-negative");
        }
        if !(self.obstacle_reward < self.free_reward - self.near_obstacle_penalty) {
            return bad("obstacle reward must be strictly below every free-cell reward");
        }
        if self.max_retries == 0 {
            return bad("max_retries must be positive");
        }
        Ok(())
    }
}

/// Hidden ground truth of one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthWorld {
    pub spec: GridSpec,
    pub obstacle_mask: Vec<bool>,
    /// Top surface height; 0 on open ground.
    pub terrain_height: Vec<f64>,
    pub true_reward: Vec<f64>,
    /// Cells the expert may use: the largest connected region of cells
    /// farther than the vehicle radius from every obstacle.
    pub traversable: Vec<bool>,
}

impl GroundTruthWorld {
    pub fn n_obstacles(&self) -> usize {
        self.obstacle_mask.iter().filter(|&&o| o).count()
    }

    pub fn is_free(&self, cell: Cell) -> bool {
        !self.obstacle_mask[self.spec.shape().index(cell)]
    }
}

/// 8-connected component labels of the set cells; `u32::MAX` elsewhere.
/// Returns the labels and the size of each component.
pub fn connected_components(mask: &[bool], shape: GridShape) -> (Vec<u32>, Vec<usize>) {
    let mut label = vec![u32::MAX; mask.len()];
    let mut sizes = Vec::new();
    let mut queue = VecDeque::new();
    for seed in 0..mask.len() {
        if !mask[seed] || label[seed] != u32::MAX {
            continue;
        }
        let id = sizes.len() as u32;
        let mut size = 0;
        label[seed] = id;
        queue.push_back(seed);
        while let Some(i) = queue.pop_front() {
            size += 1;
            let c = shape.cell(i);
            for a in crate::grid::Action::ALL {
                if let Some(n) = shape.step(c, a) {
                    let j = shape.index(n);
                    if mask[j] && label[j] == u32::MAX {
                        label[j] = id;
                        queue.push_back(j);
                    }
                }
            }
        }
        sizes.push(size);
    }
    (label, sizes)
}

fn range<R: Rng + ?Sized>(rng: &mut R, r: [f64; 2]) -> f64 {
    if r[0] == r[1] {
        r[0]
    } else {
        rng.random_range(r[0]..r[1])
    }
}

fn place_obstacle<R: Rng + ?Sized>(
    rng: &mut R,
    params: &WorldParams,
    spec: &GridSpec,
    height: &mut [f64],
    mask: &mut [bool],
    keep_clear: &[bool],
) {
    let shape = spec.shape();
    let res = spec.resolution_m;
    let total: f64 = params.kind_weights.iter().sum();
    let mut u = rng.random_range(0.0..total);
    let mut kind = 0;
    while kind < 3 && u >= params.kind_weights[kind] {
        u -= params.kind_weights[kind];
        kind += 1;
    }
    let r0 = rng.random_range(0..shape.rows) as i64;
    let c0 = rng.random_range(0..shape.cols) as i64;
    let cells_of = |m: f64| ((m / res).round() as i64).max(1);
    let mut cells: Vec<(i64, i64)> = Vec::new();
    let h;
    match kind {
        0 => {
            let len = cells_of(range(rng, params.wall_length_m));
            let thick = cells_of(0.25).min(2);
            let horizontal = rng.random_bool(0.5);
            for t in 0..len {
                for w in 0..thick {
                    cells.push(if horizontal { (r0 + w, c0 + t) } else { (r0 + t, c0 + w) });
                }
            }
            h = range(rng, params.wall_height_m);
        }
        1 => {
            let side = cells_of(0.3);
            for dr in 0..side {
                for dc in 0..side {
                    cells.push((r0 + dr, c0 + dc));
                }
            }
            h = range(rng, params.bollard_height_m);
        }
        2 => {
            let rad = range(rng, params.tree_radius_m) / res;
            let k = rad.ceil() as i64;
            for dr in -k..=k {
                for dc in -k..=k {
                    if ((dr * dr + dc * dc) as f64) <= rad * rad {
                        cells.push((r0 + dr, c0 + dc));
                    }
                }
            }
            h = range(rng, params.tree_height_m);
        }
        _ => {
            let a = cells_of(range(rng, params.block_side_m));
            let b = cells_of(range(rng, params.block_side_m));
            for dr in 0..a {
                for dc in 0..b {
                    cells.push((r0 + dr, c0 + dc));
                }
            }
            h = range(rng, params.block_height_m);
        }
    }
    for (r, c) in cells {
        if shape.contains(r, c) {
            let i = r as usize * shape.cols + c as usize;
            if !keep_clear[i] {
                mask[i] = true;
                height[i] = height[i].max(h);
            }
        }
    }
}

/// Deterministic world for `seed`. Obstacles are placed until the requested
/// density is reached; layouts whose free cells are not one 8-connected
/// region, or whose traversable region is too small, are redrawn.
pub fn generate_world(seed: u64, params: &WorldParams, spec: &GridSpec) -> Result<GroundTruthWorld> {
    params.validate()?;
    spec.validate()?;
    let shape = spec.shape();
    let n = shape.n_cells();
    let centre = spec.center_m();
    let keep_clear: Vec<bool> = (0..n)
        .map(|i| {
            let p = spec.cell_center(shape.cell(i));
            (p[0] - centre[0]).hypot(p[1] - centre[1]) <= params.clearance_radius_m
        })
        .collect();
    let target = (params.density * n as f64).ceil() as usize;
    for attempt in 0..params.max_retries {
        let mut rng = rng_for(seed, stream::WORLD, attempt as u64);
        let mut mask = vec![false; n];
        let mut height = vec![0.0; n];
        let mut placed = 0;
        let mut tries = 0;
        while placed < target && tries < 100 * n {
            place_obstacle(&mut rng, params, spec, &mut height, &mut mask, &keep_clear);
            placed = mask.iter().filter(|&&m| m).count();
            tries += 1;
        }
        let free: Vec<bool> = mask.iter().map(|&m| !m).collect();
        let (_, sizes) = connected_components(&free, shape);
        if sizes.len() != 1 {
            continue;
        }
        let cspace = minkowski_inflate(&mask, shape, params.vehicle_radius_m / spec.resolution_m)?;
        let cfree: Vec<bool> = cspace.iter().map(|&c| !c).collect();
        let (labels, sizes) = connected_components(&cfree, shape);
        let Some((best, &best_size)) = sizes.iter().enumerate().max_by_key(|&(i, s)| (*s, usize::MAX - i)) else {
            continue;
        };
        if (best_size as f64) < params.min_traversable_fraction * n as f64 {
            continue;
        }
        let traversable: Vec<bool> = labels.iter().map(|&l| l == best as u32).collect();
        let near = minkowski_inflate(&mask, shape, params.near_obstacle_m / spec.resolution_m)?;
        let true_reward = (0..n)
            .map(|i| {
                if mask[i] {
                    params.obstacle_reward
                } else if near[i] {
                    params.free_reward - params.near_obstacle_penalty
                } else {
                    params.free_reward
                }
            })
            .collect();
        return Ok(GroundTruthWorld {
            spec: *spec,
            obstacle_mask: mask,
            terrain_height: height,
            true_reward,
            traversable,
        });
    }
    Err(Error::Generation(format!(
        "no connected layout after {} attempts (seed {seed}, density {})",
        params.max_retries, params.density
    )))
}

/// Simulated LIDAR rig, positions in the world frame.
#[derive(Debug, Clone, PartialEq)]
pub struct SensorConfig {
    pub sensor_positions: Vec<[f64; 3]>,
    pub points_per_scan: usize,
    /// Pitch error per sensor, degrees.
    pub pitch_error_deg: Vec<f64>,
    /// Per-metre detection probability factor in `(0, 1]`.
    pub visibility_falloff: f64,
    pub noise_sigma_z: f64,
}

impl SensorConfig {
    pub fn validate(&self, spec: &GridSpec) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(format!("sensor configuration: {m}")));
        if self.sensor_positions.is_empty() {
            return bad("at least one sensor is required".into());
        }
        if self.pitch_error_deg.len() != self.sensor_positions.len() {
            return bad("one pitch error per sensor is required".into());
        }
        if self.points_per_scan == 0 {
            return bad("points_per_scan must be positive".into());
        }
        if !(self.noise_sigma_z >= 0.0) {
            return bad("noise_sigma_z must be non-negative".into());
        }
        if !(self.visibility_falloff > 0.0 && self.visibility_falloff <= 1.0) {
            return bad("visibility_falloff must lie in (0, 1]".into());
        }
        for p in &self.sensor_positions {
            if spec.world_to_cell(p[0], p[1]).is_none() {
                return bad(format!("sensor at ({}, {}) lies outside the grid", p[0], p[1]));
            }
        }
        Ok(())
    }
}

/// Rig settings independent of the grid, as stored in config files.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SensorSettings {
    /// Points sampled per grid cell on average (before detection losses).
    pub points_per_cell: f64,
    pub visibility_falloff: f64,
    pub noise_sigma_z: f64,
    /// Sensors sit this far left and right of the grid centre.
    pub lateral_offset_m: f64,
    pub mount_height_m: f64,
    /// Pitch error of the right-hand sensor, degrees.
    pub pitch_error_deg: f64,
}

impl Default for SensorSettings {
    fn default() -> Self {
        Self {
            points_per_cell: 40.0,
            visibility_falloff: 0.98,
            noise_sigma_z: 0.02,
            lateral_offset_m: 0.6,
            mount_height_m: 1.8,
            pitch_error_deg: 0.0,
        }
    }
}

impl SensorSettings {
    /// Left sensor first, right sensor (the one with the pitch error) second.
    pub fn rig(&self, spec: &GridSpec) -> SensorConfig {
        let [cx, cy] = spec.center_m();
        SensorConfig {
            sensor_positions: vec![
                [cx, cy + self.lateral_offset_m, self.mount_height_m],
                [cx, cy - self.lateral_offset_m, self.mount_height_m],
            ],
            points_per_scan: ((self.points_per_cell * spec.n_cells() as f64).round() as usize).max(1),
            pitch_error_deg: vec![0.0, self.pitch_error_deg],
            visibility_falloff: self.visibility_falloff,
            noise_sigma_z: self.noise_sigma_z,
        }
    }
}

/// Height error of a return at planar distance `d` from a sensor pitched by
/// `deg` degrees.
pub fn pitch_offset(d: f64, deg: f64) -> f64 {
    d * deg.to_radians().tan()
}

/// Samples surface points uniformly over the grid and keeps each with
/// probability `falloff^d` for the sensor that observed it. Obstacle returns
/// come from anywhere on the obstacle's vertical extent.
pub fn simulate_scan(world: &GroundTruthWorld, cfg: &SensorConfig, seed: u64) -> Result<Vec<[f64; 3]>> {
    let spec = world.spec;
    cfg.validate(&spec)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let [w, h] = spec.extent_m();
    let [ox, oy] = spec.origin_xy_m;
    let shape = spec.shape();
    let tans: Vec<f64> = cfg.pitch_error_deg.iter().map(|d| d.to_radians().tan()).collect();
    let mut points = Vec::with_capacity(cfg.points_per_scan);
    for _ in 0..cfg.points_per_scan {
        let x = ox + rng.random_range(0.0..w);
        let y = oy + rng.random_range(0.0..h);
        let k = rng.random_range(0..cfg.sensor_positions.len());
        let s = cfg.sensor_positions[k];
        let d = (x - s[0]).hypot(y - s[1]);
        let u: f64 = rng.random();
        let t: f64 = rng.random();
        let noise: f64 = StandardNormal.sample(&mut rng);
        if u >= cfg.visibility_falloff.powf(d) {
            continue;
        }
        let Some(cell) = spec.world_to_cell(x, y) else {
            continue;
        };
        let i = shape.index(cell);
        let z_true = if world.obstacle_mask[i] {
            t * world.terrain_height[i]
        } else {
            world.terrain_height[i]
        };
        points.push([x, y, z_true + d * tans[k] + cfg.noise_sigma_z * noise]);
    }
    Ok(points)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DemoParams {
    pub gamma: f64,
    pub min_dist_m: f64,
    pub max_dist_m: f64,
    /// Step budget of one rollout; 0 means `4 (H + W)`.
    pub max_steps: usize,
    pub max_attempts: usize,
}

impl Default for DemoParams {
    fn default() -> Self {
        Self {
            gamma: 1.0,
            min_dist_m: 12.0,
            max_dist_m: 18.0,
            max_steps: 0,
            max_attempts: 200,
        }
    }
}

impl DemoParams {
    pub fn step_budget(&self, shape: GridShape) -> usize {
        if self.max_steps == 0 {
            4 * (shape.rows + shape.cols)
        } else {
            self.max_steps
        }
    }
}

/// Start and goal among traversable cells, `[min_dist_m, max_dist_m]` apart.
pub fn sample_endpoints<R: Rng + ?Sized>(world: &GroundTruthWorld, params: &DemoParams, rng: &mut R) -> Result<(Cell, Cell)> {
    let cells: Vec<usize> = (0..world.traversable.len()).filter(|&i| world.traversable[i]).collect();
    if cells.len() < 2 {
        return Err(Error::Generation("fewer than two traversable cells".into()));
    }
    let shape = world.spec.shape();
    for _ in 0..params.max_attempts.max(1) * 50 {
        let a = shape.cell(cells[rng.random_range(0..cells.len())]);
        let b = shape.cell(cells[rng.random_range(0..cells.len())]);
        let pa = world.spec.cell_center(a);
        let pb = world.spec.cell_center(b);
        let d = (pa[0] - pb[0]).hypot(pa[1] - pb[1]);
        if d >= params.min_dist_m && d <= params.max_dist_m {
            return Ok((a, b));
        }
    }
    Err(Error::Generation(format!(
        "no start/goal pair {}-{} m apart",
        params.min_dist_m, params.max_dist_m
    )))
}

/// Rolls out the soft-optimal policy for `reward` restricted to cells not in
/// `blocked`. Truncated rollouts are redrawn up to `max_attempts` times.
pub fn expert_rollout<R: Rng + ?Sized>(
    reward: &[f64],
    blocked: &[bool],
    shape: GridShape,
    start: Cell,
    goal: Cell,
    params: &DemoParams,
    rng: &mut R,
) -> Result<Trajectory> {
    let mdp = Mdp::with_blocked(shape, goal, params.gamma, blocked)?;
    let sol = soft_value_iteration(reward, &mdp, SolverSettings::for_shape(shape))?;
    if sol.value(start) == f64::NEG_INFINITY {
        return Err(Error::Unreachable(format!(
            "goal ({}, {}) not reachable from ({}, {})",
            goal.row, goal.col, start.row, start.col
        )));
    }
    let budget = params.step_budget(shape);
    for _ in 0..params.max_attempts.max(1) {
        let roll = sample_trajectory_with(&sol.policy, &mdp, start, budget, rng)?;
        if !roll.truncated {
            return Ok(roll.trajectory);
        }
    }
    Err(Error::Unreachable(format!(
        "expert did not reach the goal within {budget} steps"
    )))
}

/// One expert demonstration in `world`.
pub fn generate_demonstration<R: Rng + ?Sized>(
    world: &GroundTruthWorld,
    params: &DemoParams,
    rng: &mut R,
) -> Result<Trajectory> {
    let (start, goal) = sample_endpoints(world, params, rng)?;
    let blocked: Vec<bool> = world.traversable.iter().map(|&t| !t).collect();
    expert_rollout(&world.true_reward, &blocked, world.spec.shape(), start, goal, params, rng)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSample {
    pub features: FeatureMap,
    pub demo: Trajectory,
    pub start: Cell,
    pub goal: Cell,
    /// Index into [`Dataset::worlds`].
    pub world: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetParams {
    pub n_samples: usize,
    pub samples_per_world: usize,
    pub test_fraction: f64,
}

impl Default for DatasetParams {
    fn default() -> Self {
        Self {
            n_samples: 500,
            samples_per_world: 1,
            test_fraction: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub spec: GridSpec,
    pub world: WorldParams,
    pub sensor: SensorSettings,
    pub demo: DemoParams,
    pub data: DatasetParams,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub config: DatasetConfig,
    pub worlds: Vec<GroundTruthWorld>,
    pub samples: Vec<DatasetSample>,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Seeded split: `floor((1 − test_fraction)·n)` training samples, the rest
/// held out. Both lists are sorted.
pub fn split_indices(n: usize, test_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(0.0..1.0).contains(&test_fraction) {
        return Err(Error::InvalidArgument(format!("test fraction must lie in [0, 1), got {test_fraction}")));
    }
    let n_train = ((n as f64) * (1.0 - test_fraction) + 1e-9).floor() as usize;
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = rng_for(seed, stream::SPLIT, 0);
    for i in (1..n).rev() {
        idx.swap(i, rng.random_range(0..=i));
    }
    let mut train = idx[..n_train].to_vec();
    let mut test = idx[n_train..].to_vec();
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

/// Feature map of a fresh scan of `world`, rounded to storage precision.
pub fn scan_features(world: &GroundTruthWorld, sensor: &SensorSettings, seed: u64) -> Result<FeatureMap> {
    let cfg = sensor.rig(&world.spec);
    let points = simulate_scan(world, &cfg, seed)?;
    Ok(rasterize_points(&points, &world.spec).quantized())
}

pub fn generate_dataset(config: &DatasetConfig) -> Result<Dataset> {
    let DatasetConfig {
        spec,
        world: wp,
        sensor,
        demo,
        data,
        seed,
    } = config;
    if data.samples_per_world == 0 {
        return Err(Error::InvalidArgument("samples_per_world must be positive".into()));
    }
    let n_worlds = data.n_samples.div_ceil(data.samples_per_world);
    let worlds: Vec<GroundTruthWorld> = (0..n_worlds)
        .into_par_iter()
        .map(|w| generate_world(derive_seed(*seed, stream::WORLD, w as u64), wp, spec))
        .collect::<Result<_>>()?;
    let samples: Vec<DatasetSample> = (0..data.n_samples)
        .into_par_iter()
        .map(|i| {
            let w = i / data.samples_per_world;
            let world = &worlds[w];
            let mut rng = rng_for(*seed, stream::DEMO, i as u64);
            let traj = generate_demonstration(world, demo, &mut rng)?;
            let features = scan_features(world, sensor, derive_seed(*seed, stream::SCAN, i as u64))?;
            Ok(DatasetSample {
                features,
                start: traj.start(),
                goal: traj.end(),
                demo: traj,
                world: w,
            })
        })
        .collect::<Result<_>>()?;
    let (train, test) = split_indices(data.n_samples, data.test_fraction, *seed)?;
    Ok(Dataset {
        config: config.clone(),
        worlds,
        samples,
        train,
        test,
    })
}

impl Dataset {
    /// Same worlds and demonstrations, rescanned with `sensor` using the
    /// original scan seeds.
    pub fn rescanned(&self, sensor: &SensorSettings) -> Result<Dataset> {
        let seed = self.config.seed;
        let samples = self
            .samples
            .par_iter()
            .enumerate()
            .map(|(i, s)| {
                let features = scan_features(&self.worlds[s.world], sensor, derive_seed(seed, stream::SCAN, i as u64))?;
                Ok(DatasetSample { features, ..s.clone() })
            })
            .collect::<Result<_>>()?;
        let mut config = self.config.clone();
        config.sensor = *sensor;
        Ok(Dataset {
            config,
            worlds: self.worlds.clone(),
            samples,
            train: self.train.clone(),
            test: self.test.clone(),
        })
    }

    pub fn train_samples(&self) -> Vec<&DatasetSample> {
        self.train.iter().map(|&i| &self.samples[i]).collect()
    }

    pub fn test_samples(&self) -> Vec<&DatasetSample> {
        self.test.iter().map(|&i| &self.samples[i]).collect()
    }

    /// Checks every sample invariant; returns the first violation.
    pub fn audit(&self) -> Result<()> {
        let fail = |i: usize, m: &str| Err(Error::Generation(format!("sample {i}: {m}")));
        let spec = self.config.spec;
        let mut seen = vec![false; self.samples.len()];
        for &i in self.train.iter().chain(&self.test) {
            if i >= seen.len() || seen[i] {
                return Err(Error::Generation("train/test split is not a partition".into()));
            }
            seen[i] = true;
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::Generation("train/test split misses samples".into()));
        }
        for (i, s) in self.samples.iter().enumerate() {
            if s.world >= self.worlds.len() {
                return fail(i, "world index out of range");
            }
            let world = &self.worlds[s.world];
            if s.features.spec != spec || world.spec != spec {
                return fail(i, "grid spec mismatch");
            }
            if s.demo.start() != s.start || s.demo.end() != s.goal {
                return fail(i, "start/goal do not match the demonstration");
            }
            if s.demo.states().iter().any(|&c| !world.is_free(c)) {
                return fail(i, "demonstration enters an obstacle");
            }
            let f = &s.features;
            for c in 0..spec.n_cells() {
                if !(f.height_variance[c] >= 0.0) {
                    return fail(i, "negative height variance");
                }
                if f.visibility[c] == 0.0 && (f.mean_height[c] != 0.0 || f.height_variance[c] != 0.0) {
                    return fail(i, "unobserved cell with non-zero statistics");
                }
            }
        }
        Ok(())
    }
}
