//! Grid geometry, point-cloud rasterisation and trajectory discretisation.
//!
//! Grids are row-major with the row index following world `y` and the column
//! index following world `x`. Cell `(0, 0)` has its lower-left corner at the
//! grid origin.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row/column extent of a grid, without any metric information.
///
/// The MDP solver works on bare shapes so that tiny corridors (1×2, 1×3) can be
/// used in tests; [`GridSpec`] adds the metric frame and its stricter limits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GridShape {
    pub rows: usize,
    pub cols: usize,
}

impl GridShape {
    pub fn new(rows: usize, cols: usize) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::InvalidSpec(format!("empty grid {rows}x{cols}")));
        }
        Ok(Self { rows, cols })
    }

    #[inline]
    pub fn n_cells(&self) -> usize {
        self.rows * self.cols
    }

    #[inline]
    pub fn index(&self, cell: Cell) -> usize {
        cell.row * self.cols + cell.col
    }

    #[inline]
    pub fn cell(&self, index: usize) -> Cell {
        Cell {
            row: index / self.cols,
            col: index % self.cols,
        }
    }

    #[inline]
    pub fn contains(&self, row: i64, col: i64) -> bool {
        row >= 0 && col >= 0 && (row as usize) < self.rows && (col as usize) < self.cols
    }

    /// Cell reached from `cell` by `action`, or `None` when the move leaves the grid.
    #[inline]
    pub fn step(&self, cell: Cell, action: Action) -> Option<Cell> {
        let (dr, dc) = action.delta();
        let r = cell.row as i64 + dr;
        let c = cell.col as i64 + dc;
        self.contains(r, c).then(|| Cell {
            row: r as usize,
            col: c as usize,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Cell {
    pub row: usize,
    pub col: usize,
}

impl Cell {
    pub const fn new(row: usize, col: usize) -> Self {
        Self { row, col }
    }

    /// Chebyshev distance, i.e. the number of king moves between two cells.
    pub fn king_distance(&self, other: Cell) -> usize {
        self.row.abs_diff(other.row).max(self.col.abs_diff(other.col))
    }
}

/// The eight king moves. There is no stay action.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[repr(u8)]
pub enum Action {
    East = 0,
    NorthEast = 1,
    North = 2,
    NorthWest = 3,
    West = 4,
    SouthWest = 5,
    South = 6,
    SouthEast = 7,
}

pub const N_ACTIONS: usize = 8;

impl Action {
    pub const ALL: [Action; N_ACTIONS] = [
        Action::East,
        Action::NorthEast,
        Action::North,
        Action::NorthWest,
        Action::West,
        Action::SouthWest,
        Action::South,
        Action::SouthEast,
    ];

    /// `(d_row, d_col)`; north is `+row` because rows follow world `y`.
    #[inline]
    pub const fn delta(self) -> (i64, i64) {
        match self {
            Action::East => (0, 1),
            Action::NorthEast => (1, 1),
            Action::North => (1, 0),
            Action::NorthWest => (1, -1),
            Action::West => (0, -1),
            Action::SouthWest => (-1, -1),
            Action::South => (-1, 0),
            Action::SouthEast => (-1, 1),
        }
    }

    #[inline]
    pub const fn id(self) -> usize {
        self as usize
    }

    pub fn from_id(id: usize) -> Option<Action> {
        Action::ALL.get(id).copied()
    }

    pub fn from_delta(d_row: i64, d_col: i64) -> Option<Action> {
        Action::ALL.into_iter().find(|a| a.delta() == (d_row, d_col))
    }

    /// Step length in cells: 1 for axis moves, sqrt(2) for diagonals.
    pub fn length(self) -> f64 {
        let (dr, dc) = self.delta();
        if dr != 0 && dc != 0 {
            std::f64::consts::SQRT_2
        } else {
            1.0
        }
    }
}

/// Metric grid frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub width_cells: usize,
    pub height_cells: usize,
    pub resolution_m: f64,
    pub origin_xy_m: [f64; 2],
}

impl Default for GridSpec {
    /// 100×100 cells at 0.25 m, i.e. 25 m × 25 m.
    fn default() -> Self {
        Self {
            width_cells: 100,
            height_cells: 100,
            resolution_m: 0.25,
            origin_xy_m: [0.0, 0.0],
        }
    }
}

impl GridSpec {
    pub fn new(
        width_cells: usize,
        height_cells: usize,
        resolution_m: f64,
        origin_xy_m: [f64; 2],
    ) -> Result<Self> {
        let spec = Self {
            width_cells,
            height_cells,
            resolution_m,
            origin_xy_m,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.width_cells < 3 || self.height_cells < 3 {
            return Err(Error::InvalidSpec(format!(
                "grid must be at least 3x3, got {}x{}",
                self.width_cells, self.height_cells
            )));
        }
        if !(self.resolution_m > 0.0 && self.resolution_m.is_finite()) {
            return Err(Error::InvalidSpec(format!(
                "resolution must be positive, got {}",
                self.resolution_m
            )));
        }
        if !self.origin_xy_m.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidSpec("origin must be finite".into()));
        }
        Ok(())
    }

    pub fn shape(&self) -> GridShape {
        GridShape {
            rows: self.height_cells,
            cols: self.width_cells,
        }
    }

    pub fn n_cells(&self) -> usize {
        self.width_cells * self.height_cells
    }

    pub fn extent_m(&self) -> [f64; 2] {
        [
            self.width_cells as f64 * self.resolution_m,
            self.height_cells as f64 * self.resolution_m,
        ]
    }

    pub fn center_m(&self) -> [f64; 2] {
        let [w, h] = self.extent_m();
        [self.origin_xy_m[0] + 0.5 * w, self.origin_xy_m[1] + 0.5 * h]
    }

    /// World coordinates of a cell centre.
    pub fn cell_center(&self, cell: Cell) -> [f64; 2] {
        [
            self.origin_xy_m[0] + (cell.col as f64 + 0.5) * self.resolution_m,
            self.origin_xy_m[1] + (cell.row as f64 + 0.5) * self.resolution_m,
        ]
    }

    /// Cell containing a world point; `None` is the out-of-bounds marker.
    pub fn world_to_cell(&self, x_m: f64, y_m: f64) -> Option<Cell> {
        let col = ((x_m - self.origin_xy_m[0]) / self.resolution_m).floor();
        let row = ((y_m - self.origin_xy_m[1]) / self.resolution_m).floor();
        if !(col.is_finite() && row.is_finite()) {
            return None;
        }
        if col < 0.0 || row < 0.0 {
            return None;
        }
        let (row, col) = (row as usize, col as usize);
        (row < self.height_cells && col < self.width_cells).then_some(Cell { row, col })
    }
}

/// Per-cell sensor statistics: the network input.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub spec: GridSpec,
    pub mean_height: Vec<f64>,
    pub height_variance: Vec<f64>,
    pub visibility: Vec<f64>,
}

impl FeatureMap {
    pub const N_CHANNELS: usize = 3;
    pub const CHANNEL_NAMES: [&'static str; 3] = ["mean_height", "height_variance", "visibility"];

    pub fn zeros(spec: GridSpec) -> Self {
        let n = spec.n_cells();
        Self {
            spec,
            mean_height: vec![0.0; n],
            height_variance: vec![0.0; n],
            visibility: vec![0.0; n],
        }
    }

    pub fn channel(&self, index: usize) -> &[f64] {
        match index {
            0 => &self.mean_height,
            1 => &self.height_variance,
            2 => &self.visibility,
            _ => panic!("feature channel {index} out of range"),
        }
    }

    pub fn channel_by_name(&self, name: &str) -> Option<&[f64]> {
        Self::CHANNEL_NAMES
            .iter()
            .position(|n| *n == name)
            .map(|i| self.channel(i))
    }

    /// Round every value to single precision, the on-disk storage precision.
    pub fn quantized(mut self) -> Self {
        for ch in [
            &mut self.mean_height,
            &mut self.height_variance,
            &mut self.visibility,
        ] {
            for v in ch.iter_mut() {
                *v = *v as f32 as f64;
            }
        }
        self
    }

    /// Channel-major, row-major copy of all channels.
    pub fn to_planes(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(3 * self.spec.n_cells());
        out.extend_from_slice(&self.mean_height);
        out.extend_from_slice(&self.height_variance);
        out.extend_from_slice(&self.visibility);
        out
    }
}

/// Per-cell traversal cost; the negated reward.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMap {
    pub spec: GridSpec,
    pub values: Vec<f64>,
}

impl CostMap {
    pub fn new(spec: GridSpec, values: Vec<f64>) -> Result<Self> {
        if values.len() != spec.n_cells() {
            return Err(Error::Shape(format!(
                "cost map has {} values, grid has {} cells",
                values.len(),
                spec.n_cells()
            )));
        }
        Ok(Self { spec, values })
    }

    pub fn from_reward(spec: GridSpec, reward: &[f64]) -> Result<Self> {
        Self::new(spec, reward.iter().map(|r| -r).collect())
    }

    pub fn reward(&self) -> Vec<f64> {
        self.values.iter().map(|c| -c).collect()
    }

    pub fn at(&self, cell: Cell) -> f64 {
        self.values[self.spec.shape().index(cell)]
    }
}

/// Grid statistics of a point cloud given in the world frame.
///
/// Cells with at least one point are visible and get the mean and population
/// variance of the point heights; cells without points stay all zero. Points
/// outside the grid are dropped.
pub fn rasterize_points(points: &[[f64; 3]], spec: &GridSpec) -> FeatureMap {
    let n = spec.n_cells();
    let shape = spec.shape();
    let mut count = vec![0usize; n];
    let mut sum = vec![0.0f64; n];
    let mut owner = Vec::with_capacity(points.len());
    for p in points {
        let idx = spec.world_to_cell(p[0], p[1]).map(|c| shape.index(c));
        if let Some(i) = idx {
            count[i] += 1;
            sum[i] += p[2];
        }
        owner.push(idx);
    }
    let mut fm = FeatureMap::zeros(*spec);
    for i in 0..n {
        if count[i] > 0 {
            fm.mean_height[i] = sum[i] / count[i] as f64;
            fm.visibility[i] = 1.0;
        }
    }
    // second pass on deviations keeps the variance non-negative and accurate
    let mut sq = vec![0.0f64; n];
    for (p, idx) in points.iter().zip(&owner) {
        if let Some(i) = *idx {
            let d = p[2] - fm.mean_height[i];
            sq[i] += d * d;
        }
    }
    for i in 0..n {
        if count[i] > 0 {
            fm.height_variance[i] = sq[i] / count[i] as f64;
        }
    }
    fm
}

/// A demonstration: consecutive, distinct, 8-adjacent cells and the actions
/// linking them.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Trajectory {
    states: Vec<Cell>,
    actions: Vec<Action>,
}

impl Trajectory {
    /// Builds a trajectory from a cell sequence, inferring the actions.
    pub fn from_states(shape: GridShape, states: Vec<Cell>) -> Result<Self> {
        if states.is_empty() {
            return Err(Error::InvalidArgument("trajectory needs at least one state".into()));
        }
        for s in &states {
            if s.row >= shape.rows || s.col >= shape.cols {
                return Err(Error::OutOfGrid {
                    row: s.row as i64,
                    col: s.col as i64,
                });
            }
        }
        let mut actions = Vec::with_capacity(states.len() - 1);
        for w in states.windows(2) {
            let dr = w[1].row as i64 - w[0].row as i64;
            let dc = w[1].col as i64 - w[0].col as i64;
            let action = Action::from_delta(dr, dc).ok_or(Error::NotAdjacent {
                from: (w[0].row, w[0].col),
                to: (w[1].row, w[1].col),
            })?;
            actions.push(action);
        }
        Ok(Self { states, actions })
    }

    pub fn states(&self) -> &[Cell] {
        &self.states
    }

    pub fn actions(&self) -> &[Action] {
        &self.actions
    }

    pub fn start(&self) -> Cell {
        self.states[0]
    }

    pub fn end(&self) -> Cell {
        *self.states.last().expect("trajectory is never empty")
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// `(state, action)` pairs, one per transition.
    pub fn transitions(&self) -> impl Iterator<Item = (Cell, Action)> + '_ {
        self.states.iter().copied().zip(self.actions.iter().copied())
    }

    /// Cell centres in world coordinates.
    pub fn to_world(&self, spec: &GridSpec) -> Vec<[f64; 2]> {
        self.states.iter().map(|&c| spec.cell_center(c)).collect()
    }
}

/// Maps world poses to cells, drops consecutive duplicates and infers the
/// king move between consecutive cells.
pub fn discretize_path(poses: &[[f64; 2]], spec: &GridSpec) -> Result<Trajectory> {
    let mut states: Vec<Cell> = Vec::with_capacity(poses.len());
    for p in poses {
        let cell = spec.world_to_cell(p[0], p[1]).ok_or_else(|| Error::OutOfGrid {
            row: ((p[1] - spec.origin_xy_m[1]) / spec.resolution_m).floor() as i64,
            col: ((p[0] - spec.origin_xy_m[0]) / spec.resolution_m).floor() as i64,
        })?;
        if states.last() != Some(&cell) {
            states.push(cell);
        }
    }
    Trajectory::from_states(spec.shape(), states)
}

/// Inserts evenly spaced intermediate poses so that no two consecutive poses
/// are more than `max_step_m` apart.
pub fn densify(poses: &[[f64; 2]], max_step_m: f64) -> Vec<[f64; 2]> {
    assert!(max_step_m > 0.0, "densify step must be positive");
    let mut out = Vec::new();
    for w in poses.windows(2) {
        let (a, b) = (w[0], w[1]);
        let d = ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2)).sqrt();
        let n = (d / max_step_m).ceil().max(1.0) as usize;
        for k in 0..n {
            let t = k as f64 / n as f64;
            out.push([a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])]);
        }
    }
    if let Some(last) = poses.last() {
        out.push(*last);
    }
    out
}
