//! Randomised invariants checked against direct restatements.

use deepcost_core::baseline::minkowski_inflate;
use deepcost_core::eval::{calibrate_threshold, classification_report, mhd, trajectory_cost_statistic};
use deepcost_core::export::encode;
use deepcost_core::mdp::{propagate_policy, soft_value_iteration, Mdp, SolverSettings};
use deepcost_core::{Action, Cell, CostMap, GridShape, GridSpec, Trajectory};
use proptest::prelude::*;

fn points(max: usize) -> impl Strategy<Value = Vec<[f64; 2]>> {
    prop::collection::vec((-20.0..20.0f64, -20.0..20.0f64).prop_map(|(x, y)| [x, y]), 1..max)
}

/// Directed mean nearest distance, written as plain loops.
fn directed(a: &[[f64; 2]], b: &[[f64; 2]]) -> f64 {
    let mut total = 0.0;
    for p in a {
        let mut best = f64::INFINITY;
        for q in b {
            let d = ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt();
            if d < best {
                best = d;
            }
        }
        total += best;
    }
    total / a.len() as f64
}

/// King walk on a `rows × cols` grid from a start cell, with loops allowed.
fn walk(rows: usize, cols: usize) -> impl Strategy<Value = Vec<Cell>> {
    (0..rows, 0..cols, prop::collection::vec(0..8usize, 0..30)).prop_map(move |(r, c, moves)| {
        let shape = GridShape::new(rows, cols).unwrap();
        let mut cur = Cell::new(r, c);
        let mut out = vec![cur];
        for m in moves {
            if let Some(next) = shape.step(cur, Action::from_id(m).unwrap()) {
                cur = next;
                out.push(cur);
            }
        }
        out
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn mhd_matches_restatement_and_is_symmetric(a in points(25), b in points(25)) {
        let d = mhd(&a, &b).unwrap();
        let expected = directed(&a, &b).max(directed(&b, &a));
        prop_assert!((d - expected).abs() <= 1e-12 * (1.0 + expected));
        prop_assert_eq!(d, mhd(&b, &a).unwrap());
        prop_assert!(d >= 0.0);
        prop_assert_eq!(mhd(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn mhd_is_positive_for_disjoint_sets(a in points(10), shift in 0.5..5.0f64) {
        // Shifting every point past the bounding box makes the sets disjoint.
        let b: Vec<[f64; 2]> = a.iter().map(|p| [p[0] + 50.0 + shift, p[1]]).collect();
        prop_assert!(mhd(&a, &b).unwrap() > 0.0);
    }

    #[test]
    fn inflation_matches_brute_force(
        rows in 3usize..12,
        cols in 3usize..12,
        radius in 0.0..3.5f64,
        seed in any::<u64>(),
    ) {
        let shape = GridShape::new(rows, cols).unwrap();
        let mask: Vec<bool> = (0..rows * cols)
            .map(|i| (seed.rotate_left(i as u32 % 64) ^ (i as u64 * 0x9e37_79b9)) % 7 == 0)
            .collect();
        let got = minkowski_inflate(&mask, shape, radius).unwrap();
        for i in 0..rows * cols {
            let c = shape.cell(i);
            let near = (0..rows * cols).any(|j| {
                let o = shape.cell(j);
                let dr = c.row as f64 - o.row as f64;
                let dc = c.col as f64 - o.col as f64;
                mask[j] && (dr * dr + dc * dc).sqrt() <= radius
            });
            prop_assert_eq!(got[i], near, "cell {:?}", c);
        }
    }

    #[test]
    fn calibrated_threshold_is_the_smallest_with_zero_fpr(
        free in prop::collection::vec(-10.0..10.0f64, 1..30),
        coll in prop::collection::vec(-10.0..10.0f64, 0..30),
    ) {
        let thr = calibrate_threshold(&free, &coll).unwrap();
        prop_assert_eq!(classification_report(&free, &coll, thr).fpr, Some(0.0));
        // Every candidate threshold at or below a free statistic flags that path.
        let mut candidates: Vec<f64> = free.iter().chain(&coll).copied().filter(|&t| t < thr).collect();
        candidates.push(thr.next_down());
        for t in candidates {
            prop_assert!(classification_report(&free, &coll, t).fpr.unwrap() > 0.0);
        }
    }

    #[test]
    fn cost_statistic_is_the_path_maximum(states in walk(6, 7), seed in any::<u32>()) {
        let spec = GridSpec::new(7, 6, 0.5, [0.0, 0.0]).unwrap();
        let values: Vec<f64> = (0..42).map(|i| ((seed as u64 * 31 + i * 17) % 101) as f64 / 7.0).collect();
        let cost = CostMap::new(spec, values.clone()).unwrap();
        let traj = Trajectory::from_states(spec.shape(), states.clone()).unwrap();
        let mut brute = f64::NEG_INFINITY;
        for c in &states {
            brute = brute.max(values[c.row * 7 + c.col]);
        }
        prop_assert_eq!(trajectory_cost_statistic(&cost, &traj), brute);
    }

    #[test]
    fn walks_round_trip_through_trajectories(states in walk(5, 9)) {
        let shape = GridShape::new(5, 9).unwrap();
        let t = Trajectory::from_states(shape, states.clone()).unwrap();
        prop_assert_eq!(t.actions().len(), states.len() - 1);
        let mut cur = t.start();
        for &a in t.actions() {
            cur = shape.step(cur, a).unwrap();
        }
        prop_assert_eq!(cur, t.end());
    }

    #[test]
    fn soft_policy_is_a_distribution_over_valid_moves(
        rows in 2usize..7,
        cols in 2usize..7,
        rewards in prop::collection::vec(-6.0..-2.5f64, 36),
        g in any::<prop::sample::Index>(),
    ) {
        let shape = GridShape::new(rows, cols).unwrap();
        let n = rows * cols;
        let goal = shape.cell(g.index(n));
        let mdp = Mdp::new(shape, goal, 1.0).unwrap();
        let sol = soft_value_iteration(&rewards[..n], &mdp, SolverSettings::for_shape(shape)).unwrap();
        prop_assert!(sol.converged);
        for s in 0..n {
            let row = sol.policy.row(s);
            let total: f64 = row.iter().sum();
            if s == mdp.goal() {
                // The goal absorbs; it has no outgoing moves.
                prop_assert_eq!(total, 0.0);
                continue;
            }
            prop_assert!((total - 1.0).abs() < 1e-9, "state {} sums to {}", s, total);
            for a in 0..8 {
                let action = Action::from_id(a).unwrap();
                if mdp.successor(s, action).is_none() {
                    prop_assert_eq!(row[a], 0.0);
                }
            }
        }
        prop_assert!(sol.values.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn propagation_conserves_mass(
        rows in 2usize..6,
        cols in 2usize..6,
        rewards in prop::collection::vec(-5.0..-2.5f64, 25),
        g in any::<prop::sample::Index>(),
        s in any::<prop::sample::Index>(),
        horizon in 0usize..30,
    ) {
        let shape = GridShape::new(rows, cols).unwrap();
        let n = rows * cols;
        let (goal, start) = (shape.cell(g.index(n)), shape.cell(s.index(n)));
        let mdp = Mdp::new(shape, goal, 1.0).unwrap();
        let sol = soft_value_iteration(&rewards[..n], &mdp, SolverSettings::for_shape(shape)).unwrap();
        let prop = propagate_policy(&sol.policy, &mdp, start, horizon).unwrap();
        prop_assert!(prop.expected_mu.iter().all(|&m| m >= 0.0));
        prop_assert!(prop.expected_mu[shape.index(start)] >= 1.0 - 1e-12);
        // The goal is entered at most once, so its visits are the absorbed mass.
        let absorbed = prop.expected_mu[shape.index(goal)];
        prop_assert!(absorbed <= 1.0 + 1e-9);
        if goal != start {
            prop_assert!((absorbed + prop.residual_mass - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn pgm_levels_decode_within_one_level(values in prop::collection::vec(-50.0..50.0f64, 1..64)) {
        let (levels, min, max) = encode(&values).unwrap();
        let side = deepcost_core::export::Sidecar { width: values.len(), height: 1, min, max };
        for (v, g) in values.iter().zip(&levels) {
            prop_assert!((side.decode(*g) - v).abs() <= (max - min) / 255.0 + 1e-12);
        }
    }
}
