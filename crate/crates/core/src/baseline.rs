//! Handcrafted comparison cost: variance thresholding, unknown-cell blocking
//! and Minkowski inflation by the vehicle radius.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{CostMap, FeatureMap, GridShape};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BaselineParams {
    /// Cells with height variance above this (m²) are obstacles.
    pub variance_threshold: f64,
    pub vehicle_radius_m: f64,
    pub obstacle_cost: f64,
    pub free_cost: f64,
    pub unknown_is_obstacle: bool,
}

impl Default for BaselineParams {
    /// Thresholds calibrated on the synthetic worlds: clean flat ground at
    /// the default sensor noise stays well below 0.006 m² while every
    /// obstacle taller than about 0.27 m exceeds it.
    fn default() -> Self {
        Self {
            variance_threshold: 0.006,
            vehicle_radius_m: 1.0,
            obstacle_cost: 100.0,
            free_cost: 3.0,
            unknown_is_obstacle: true,
        }
    }
}

impl BaselineParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.free_cost > 0.0 && self.obstacle_cost > self.free_cost) {
            return Err(Error::InvalidArgument(format!(
                "baseline costs must satisfy obstacle_cost > free_cost > 0, got {} and {}",
                self.obstacle_cost, self.free_cost
            )));
        }
        if !(self.vehicle_radius_m >= 0.0) {
            return Err(Error::InvalidArgument("vehicle radius must be non-negative".into()));
        }
        if !(self.variance_threshold >= 0.0) {
            return Err(Error::InvalidArgument("variance threshold must be non-negative".into()));
        }
        Ok(())
    }
}

/// Offsets `(dr, dc)` whose centre distance is at most `radius_cells`.
pub fn disc_offsets(radius_cells: f64) -> Vec<(i64, i64)> {
    let r = radius_cells.max(0.0);
    let k = r.floor() as i64;
    let r2 = r * r;
    let mut out = Vec::new();
    for dr in -k..=k {
        for dc in -k..=k {
            if ((dr * dr + dc * dc) as f64) <= r2 {
                out.push((dr, dc));
            }
        }
    }
    out
}

/// Marks every cell whose centre lies within `radius_cells` of a set cell.
pub fn minkowski_inflate(mask: &[bool], shape: GridShape, radius_cells: f64) -> Result<Vec<bool>> {
    if mask.len() != shape.n_cells() {
        return Err(Error::Shape(format!(
            "mask has {} cells, grid has {}",
            mask.len(),
            shape.n_cells()
        )));
    }
    if !(radius_cells >= 0.0) {
        return Err(Error::InvalidArgument(format!("radius must be non-negative, got {radius_cells}")));
    }
    let offsets = disc_offsets(radius_cells);
    let mut out = vec![false; mask.len()];
    for (i, _) in mask.iter().enumerate().filter(|(_, &m)| m) {
        let c = shape.cell(i);
        for &(dr, dc) in &offsets {
            let (r, cc) = (c.row as i64 + dr, c.col as i64 + dc);
            if shape.contains(r, cc) {
                out[r as usize * shape.cols + cc as usize] = true;
            }
        }
    }
    Ok(out)
}

/// Obstacle mask before inflation.
pub fn detect_obstacles(features: &FeatureMap, params: &BaselineParams) -> Vec<bool> {
    features
        .height_variance
        .iter()
        .zip(&features.visibility)
        .map(|(&v, &vis)| v > params.variance_threshold || (vis == 0.0 && params.unknown_is_obstacle))
        .collect()
}

/// Two-level cost map: `obstacle_cost` on inflated obstacles, `free_cost`
/// elsewhere.
pub fn handcrafted_cost(features: &FeatureMap, params: &BaselineParams) -> Result<CostMap> {
    params.validate()?;
    let spec = features.spec;
    let raw = detect_obstacles(features, params);
    let inflated = minkowski_inflate(&raw, spec.shape(), params.vehicle_radius_m / spec.resolution_m)?;
    let values = inflated
        .iter()
        .map(|&o| if o { params.obstacle_cost } else { params.free_cost })
        .collect();
    CostMap::new(spec, values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridSpec;

    fn spec(n: usize, res: f64) -> GridSpec {
        GridSpec::new(n, n, res, [0.0, 0.0]).unwrap()
    }

    fn visible_flat(spec: GridSpec) -> FeatureMap {
        let mut f = FeatureMap::zeros(spec);
        f.visibility.fill(1.0);
        f
    }

    #[test]
    fn flat_world_is_uniform_free() {
        let f = visible_flat(spec(10, 0.25));
        let c = handcrafted_cost(&f, &BaselineParams::default()).unwrap();
        assert!(c.values.iter().all(|&v| v == 3.0));
    }

    #[test]
    fn single_cell_radius_zero() {
        let mut f = visible_flat(spec(9, 0.25));
        f.height_variance[40] = 1.0;
        let p = BaselineParams {
            vehicle_radius_m: 0.0,
            ..Default::default()
        };
        let c = handcrafted_cost(&f, &p).unwrap();
        assert_eq!(c.values.iter().filter(|&&v| v == p.obstacle_cost).count(), 1);
        assert_eq!(c.values[40], p.obstacle_cost);
    }

    #[test]
    fn single_cell_one_metre_disc() {
        let mut f = visible_flat(spec(21, 0.25));
        f.height_variance[10 * 21 + 10] = 1.0;
        let c = handcrafted_cost(&f, &BaselineParams::default()).unwrap();
        let n = c.values.iter().filter(|&&v| v == 100.0).count();
        // brute-force count of integer offsets in the 9x9 neighbourhood within radius 4
        let mut expected = 0;
        for dr in -4i64..=4 {
            for dc in -4i64..=4 {
                if dr * dr + dc * dc <= 16 {
                    expected += 1;
                }
            }
        }
        assert_eq!(expected, 49);
        assert_eq!(n, expected);
    }

    #[test]
    fn unknown_cells_follow_flag() {
        let mut f = visible_flat(spec(5, 1.0));
        f.visibility[0] = 0.0;
        let p = BaselineParams {
            vehicle_radius_m: 0.0,
            ..Default::default()
        };
        assert_eq!(handcrafted_cost(&f, &p).unwrap().values[0], 100.0);
        let p = BaselineParams {
            unknown_is_obstacle: false,
            ..p
        };
        assert_eq!(handcrafted_cost(&f, &p).unwrap().values[0], 3.0);
    }

    #[test]
    fn inflate_trivial_cases() {
        let shape = GridShape::new(4, 5).unwrap();
        let mut m = vec![false; 20];
        assert_eq!(minkowski_inflate(&m, shape, 3.0).unwrap(), m);
        m[7] = true;
        m[12] = true;
        assert_eq!(minkowski_inflate(&m, shape, 0.0).unwrap(), m);
        assert!(minkowski_inflate(&m, shape, -1.0).is_err());
    }

    #[test]
    fn invalid_params_rejected() {
        let f = visible_flat(spec(4, 1.0));
        let p = BaselineParams {
            free_cost: 200.0,
            ..Default::default()
        };
        assert!(handcrafted_cost(&f, &p).is_err());
    }
}
