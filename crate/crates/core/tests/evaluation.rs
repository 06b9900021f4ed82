use deepcost_core::baseline::BaselineParams;
use deepcost_core::config::default_grid;
use deepcost_core::eval::{
    evaluate, evaluate_prediction, generate_collision_trajectories, predict_sample, robustness_experiment, ConstantCost,
    EvalSettings, TrueCost,
};
use deepcost_core::grid::N_ACTIONS;
use deepcost_core::mdp::{demo_nll, Mdp, Policy, DEFAULT_REWARD_CAP};
use deepcost_core::synth::{generate_dataset, generate_world, DatasetConfig, DatasetParams, DatasetSample, WorldParams};
use deepcost_core::train::{initial_network, Checkpoint, TrainConfig};
use deepcost_core::{Action, Cell, CostMap, FeatureMap, GridSpec, Trajectory};

fn dataset_config(seed: u64, n_samples: usize) -> DatasetConfig {
    DatasetConfig {
        spec: default_grid(),
        world: Default::default(),
        sensor: Default::default(),
        demo: Default::default(),
        data: DatasetParams {
            n_samples,
            samples_per_world: 1,
            test_fraction: 0.5,
        },
        seed,
    }
}

/// A 60-step path through the middle of a 100 × 100 grid, mixing straight
/// and diagonal moves according to `pattern`.
fn sixty_step_sample(spec: GridSpec, pattern: &[(i64, i64)]) -> DatasetSample {
    let mut cur = (20i64, 20i64);
    let mut states = vec![Cell::new(20, 20)];
    for k in 0..60 {
        let (dr, dc) = pattern[k % pattern.len()];
        cur = (cur.0 + dr, cur.1 + dc);
        states.push(Cell::new(cur.0 as usize, cur.1 as usize));
    }
    let demo = Trajectory::from_states(spec.shape(), states).unwrap();
    DatasetSample {
        features: FeatureMap::zeros(spec),
        start: demo.start(),
        goal: demo.end(),
        demo,
        world: 0,
    }
}

fn uniform_policy(mdp: &Mdp) -> Policy {
    let rows = (0..mdp.n_states())
        .map(|s| {
            let mut row = [0.0; N_ACTIONS];
            for a in 0..N_ACTIONS {
                if s != mdp.goal() && mdp.successor(s, Action::from_id(a).unwrap()).is_some() {
                    row[a] = 1.0 / mdp.n_valid(s) as f64;
                }
            }
            row
        })
        .collect();
    Policy::from_rows(mdp, rows).unwrap()
}

#[test]
fn uniform_policy_costs_log8_per_step_and_bounds_uniform_cost_maps() {
    let spec = GridSpec::new(100, 100, 0.25, [0.0, 0.0]).unwrap();
    let settings = EvalSettings {
        n_samples: 2,
        ..Default::default()
    };
    let patterns: [&[(i64, i64)]; 4] = [&[(0, 1)], &[(1, 1)], &[(1, 1), (0, 1)], &[(1, 0), (1, 1), (0, 1)]];
    let samples: Vec<DatasetSample> = patterns.iter().map(|p| sixty_step_sample(spec, p)).collect();
    let bound = 60.0 * 8f64.ln();
    let mut uniform = 0.0;
    for s in &samples {
        let mdp = Mdp::new(spec.shape(), s.goal, 1.0).unwrap();
        uniform += demo_nll(&uniform_policy(&mdp), &s.demo).unwrap();
    }
    uniform /= samples.len() as f64;
    assert!((uniform - bound).abs() <= 0.05 * bound, "uniform policy NLL {uniform} vs {bound}");

    // Soft value iteration under any uniform cost pulls the policy towards the
    // goal, so the demonstrations score below the uniform-policy bound, and
    // more so as the cost per step rises.
    let mut last = bound;
    for c in [-DEFAULT_REWARD_CAP, 3.0, 5.0] {
        let cost = CostMap::new(spec, vec![c; spec.n_cells()]).unwrap();
        let mean = samples
            .iter()
            .enumerate()
            .map(|(i, s)| predict_sample(&cost, s, &settings, i as u64).unwrap().unwrap().nll)
            .sum::<f64>()
            / samples.len() as f64;
        assert!(mean > 0.0 && mean < last, "cost {c}: mean NLL {mean}, previous {last}");
        last = mean;
    }
}

#[test]
fn true_cost_beats_constant_costs() {
    let data = generate_dataset(&dataset_config(41, 200)).unwrap();
    let idx: Vec<usize> = (0..data.samples.len()).collect();
    let settings = EvalSettings {
        n_samples: 1,
        seed: 3,
        ..Default::default()
    };
    let truth = evaluate_prediction(&TrueCost, &data, &idx, &settings).unwrap();
    assert_eq!(truth.n_unreachable, 0);
    for c in [-DEFAULT_REWARD_CAP, 3.0, 4.0, 6.0] {
        let flat = evaluate_prediction(&ConstantCost(c), &data, &idx, &settings).unwrap();
        assert!(truth.mean_nll <= flat.mean_nll, "true {} vs constant {c}: {}", truth.mean_nll, flat.mean_nll);
    }
}

#[test]
fn evaluation_is_deterministic_per_seed() {
    let data = generate_dataset(&dataset_config(43, 12)).unwrap();
    let settings = EvalSettings {
        n_samples: 3,
        seed: 8,
        ..Default::default()
    };
    let a = evaluate("baseline", &BaselineParams::default(), &data, &data.test, &settings).unwrap();
    let b = evaluate("baseline", &BaselineParams::default(), &data, &data.test, &settings).unwrap();
    assert_eq!(a, b);
}

#[test]
fn zero_pitch_error_reproduces_the_clean_evaluation() {
    let data = generate_dataset(&dataset_config(47, 12)).unwrap();
    let cfg = TrainConfig::default();
    let mut network = initial_network(&cfg, data.config.spec.resolution_m).unwrap();
    network.set_mode(deepcost_core::nn::Mode::Eval);
    let ck = Checkpoint {
        architecture: cfg.architecture,
        spec: data.config.spec,
        network,
        seed: 0,
        step: 0,
    };
    let settings = EvalSettings {
        n_samples: 2,
        seed: 4,
        ..Default::default()
    };
    let baseline = BaselineParams::default();
    let r = robustness_experiment(&ck, &baseline, &data, &data.test, 0.0, &settings).unwrap();
    let clean_learned = evaluate(&r.learned.label, &ck, &data, &data.test, &settings).unwrap();
    let clean_baseline = evaluate(&r.baseline.label, &baseline, &data, &data.test, &settings).unwrap();
    assert_eq!(r.learned, clean_learned);
    assert_eq!(r.baseline, clean_baseline);
}

#[test]
fn robustness_rejects_a_foreign_grid() {
    let data = generate_dataset(&dataset_config(53, 4)).unwrap();
    let cfg = TrainConfig::default();
    let ck = Checkpoint {
        architecture: cfg.architecture,
        spec: GridSpec::new(50, 50, 0.25, [0.0, 0.0]).unwrap(),
        network: initial_network(&cfg, 0.25).unwrap(),
        seed: 0,
        step: 0,
    };
    let err = robustness_experiment(&ck, &BaselineParams::default(), &data, &data.test, 1.0, &Default::default());
    assert!(matches!(err, Err(deepcost_core::Error::InvalidSpec(_))));
}

#[test]
fn collision_paths_cross_obstacles_and_never_repeat() {
    let spec = default_grid();
    for seed in 0..5 {
        let world = generate_world(seed, &WorldParams::default(), &spec).unwrap();
        let paths = generate_collision_trajectories(&world, 6, seed).unwrap();
        assert!(!paths.is_empty());
        for t in &paths {
            assert!(t.states().iter().any(|&c| !world.is_free(c)));
            let mut seen = std::collections::HashSet::new();
            assert!(t.states().iter().all(|c| seen.insert(*c)));
            Trajectory::from_states(spec.shape(), t.states().to_vec()).unwrap();
        }
    }
}

#[test]
fn obstacle_free_world_has_no_collision_paths() {
    let params = WorldParams {
        density: 0.0,
        ..Default::default()
    };
    let world = generate_world(2, &params, &default_grid()).unwrap();
    assert_eq!(world.n_obstacles(), 0);
    assert!(generate_collision_trajectories(&world, 5, 1).unwrap().is_empty());
}
