use deepcost_core::arch::ArchitectureId;
use deepcost_core::config::default_grid;
use deepcost_core::nn::Mode;
use deepcost_core::synth::{generate_dataset, Dataset, DatasetConfig, DatasetParams, DatasetSample};
use deepcost_core::train::{infer_costmap, initial_network, train, TrainConfig};
use deepcost_core::{Cell, FeatureMap, GridSpec, Trajectory};

fn small_dataset(seed: u64) -> Dataset {
    generate_dataset(&DatasetConfig {
        spec: default_grid(),
        world: Default::default(),
        sensor: Default::default(),
        demo: Default::default(),
        data: DatasetParams {
            n_samples: 10,
            samples_per_world: 1,
            test_fraction: 0.2,
        },
        seed,
    })
    .unwrap()
}

/// One demonstration on an 8 × 8 grid that detours around a raised block.
fn detour_dataset() -> Dataset {
    let spec = GridSpec::new(8, 8, 0.5, [0.0, 0.0]).unwrap();
    let mut features = FeatureMap::zeros(spec);
    for r in 2..6 {
        for c in 2..6 {
            let i = r * 8 + c;
            features.mean_height[i] = 0.8;
            features.height_variance[i] = 0.05;
        }
    }
    features.visibility.iter_mut().for_each(|v| *v = 1.0);
    let mut states: Vec<Cell> = (1..7).map(|c| Cell::new(1, c)).collect();
    states.extend((2..7).map(|r| Cell::new(r, 6)));
    let demo = Trajectory::from_states(spec.shape(), states).unwrap();
    let sample = DatasetSample {
        features,
        start: demo.start(),
        goal: demo.end(),
        demo,
        world: 0,
    };
    Dataset {
        config: DatasetConfig {
            spec,
            world: Default::default(),
            sensor: Default::default(),
            demo: Default::default(),
            data: DatasetParams {
                n_samples: 1,
                samples_per_world: 1,
                test_fraction: 0.0,
            },
            seed: 0,
        },
        worlds: Vec::new(),
        samples: vec![sample],
        train: vec![0],
        test: Vec::new(),
    }
}

#[test]
fn zero_steps_return_the_initial_network() {
    let data = small_dataset(5);
    for arch in ArchitectureId::ALL {
        let cfg = TrainConfig {
            architecture: arch,
            n_steps: 0,
            seed: 9,
            ..Default::default()
        };
        let (ck, history) = train(&cfg, &data, None).unwrap();
        let mut init = initial_network(&cfg, data.config.spec.resolution_m).unwrap();
        init.set_mode(Mode::Eval);
        assert_eq!(ck.network, init);
        assert_eq!(ck.step, 0);
        assert!(history.records.is_empty());
    }
}

#[test]
fn training_is_deterministic_per_seed() {
    let data = small_dataset(6);
    let cfg = TrainConfig {
        architecture: ArchitectureId::MsFcn,
        n_steps: 3,
        batch_size: 3,
        seed: 2,
        ..Default::default()
    };
    let (a, ha) = train(&cfg, &data, None).unwrap();
    let (b, hb) = train(&cfg, &data, None).unwrap();
    assert_eq!(a, b);
    assert_eq!(ha.to_csv_without_time(), hb.to_csv_without_time());
    let other = TrainConfig { seed: 3, ..cfg };
    let (c, _) = train(&other, &data, None).unwrap();
    assert_ne!(a.network, c.network);
}

#[test]
fn hook_sees_every_step() {
    let data = small_dataset(7);
    let cfg = TrainConfig {
        n_steps: 4,
        batch_size: 2,
        ..Default::default()
    };
    let mut steps = Vec::new();
    let mut hook = |step: usize, ck: &deepcost_core::train::Checkpoint, _: &deepcost_core::train::StepRecord| {
        assert_eq!(ck.step, step as u64);
        steps.push(step);
        Ok(())
    };
    train(&cfg, &data, Some(&mut hook)).unwrap();
    assert_eq!(steps, vec![1, 2, 3, 4]);
}

#[test]
fn single_sample_nll_falls_over_fifty_steps() {
    let data = detour_dataset();
    let mut drops: Vec<f64> = (0..5)
        .map(|seed| {
            let cfg = TrainConfig {
                n_steps: 50,
                batch_size: 1,
                learning_rate: 5e-3,
                seed,
                ..Default::default()
            };
            let (_, h) = train(&cfg, &data, None).unwrap();
            let first = h.records.first().unwrap().nll;
            let last = h.records.last().unwrap().nll;
            first - last
        })
        .collect();
    drops.sort_by(f64::total_cmp);
    assert!(drops[2] > 0.0, "NLL drops per seed: {drops:?}");
}

#[test]
fn inference_rejects_a_different_resolution() {
    let data = small_dataset(8);
    let cfg = TrainConfig {
        n_steps: 0,
        ..Default::default()
    };
    let (ck, _) = train(&cfg, &data, None).unwrap();
    let other = FeatureMap::zeros(GridSpec::new(20, 20, 0.25, [0.0, 0.0]).unwrap());
    assert!(infer_costmap(&ck, &other).is_err());
    let larger = FeatureMap::zeros(GridSpec::new(64, 40, 0.5, [0.0, 0.0]).unwrap());
    let map = infer_costmap(&ck, &larger).unwrap();
    assert_eq!(map.values.len(), 64 * 40);
}
