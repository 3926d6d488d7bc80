use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use ris_chanest::channel::{noiseless_rx, sample_channel, synthesize_rx};
use ris_chanest::estimators::{ls_baseline, nmse, run_algorithm1, Method, Target};
use ris_chanest::harness::{self, run_power_sweep, SweepSpec};
use ris_chanest::neural::{train_neural_estimator, NeuralEstimator, NeuralTrainingConfig, TrainConfig};
use ris_chanest::{channel, Scenario, ScenarioConfig};

fn noiseless() -> ScenarioConfig {
    ScenarioConfig {
        noise_dbm: f64::NEG_INFINITY,
        ..Default::default()
    }
}

#[test]
fn f32_pipeline_recovers_noiseless_channels() {
    let sc = channel::Scenario::<f32>::new(noiseless()).unwrap();
    for seed in 0..10 {
        let (real, truth) = sample_channel(&sc, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let y = noiseless_rx(&sc, &real, &truth).unwrap();
        let est = run_algorithm1(&y, &sc.dictionary, &sc.codebook, &sc.config).unwrap();
        assert!(est.support_matches(&real));
        assert!(nmse(&est.h_d_hat, &truth.h_d).unwrap() < 1e-6);
        assert!(nmse(&est.phi_hat, &truth.phi).unwrap() < 1e-6);
    }
}

#[test]
fn structured_estimate_beats_ls_on_a_noisy_trial() {
    let sc = Scenario::new(ScenarioConfig {
        tx_power_dbm: 0.0,
        noise_dbm: -100.0,
        ..Default::default()
    })
    .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (mut alg1, mut ls) = (0.0, 0.0);
    for _ in 0..50 {
        let (real, truth) = sample_channel(&sc, &mut rng).unwrap();
        let y = synthesize_rx(&sc, &real, &truth, &mut rng).unwrap();
        let est = run_algorithm1(&y, &sc.dictionary, &sc.codebook, &sc.config).unwrap();
        let (h_ls, _) = ls_baseline(&y, &sc.codebook, &sc.config).unwrap();
        alg1 += nmse(&est.h_d_hat, &truth.h_d).unwrap();
        ls += nmse(&h_ls, &truth.h_d).unwrap();
    }
    assert!(alg1 < ls, "alg1 {alg1} ls {ls}");
}

#[test]
fn direct_nmse_falls_with_power() {
    let spec = SweepSpec {
        methods: vec![Method::Alg1],
        targets: vec![Target::Direct],
        ..Default::default()
    };
    let result = run_power_sweep(&spec).unwrap();
    let curve = result.curve(Method::Alg1, Target::Direct);
    assert_eq!(curve.len(), spec.power_grid_dbm.len());
    for pair in curve.windows(2) {
        assert!(pair[0].power_dbm < pair[1].power_dbm);
        assert!(
            pair[1].mean_nmse <= pair[0].mean_nmse * 1.05,
            "{} dBm: {} -> {}",
            pair[1].power_dbm,
            pair[0].mean_nmse,
            pair[1].mean_nmse
        );
    }
}

#[test]
fn config_file_drives_the_sweep() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.cfg");
    std::fs::write(
        &path,
        "# small run\nM = 8\nK = 16\nS = 2\nseed = 5\npower_grid_dbm = 0, 20\ntrials_per_point = 4\nmethods = alg1, ls\n",
    )
    .unwrap();
    let spec = harness::load_config(&path).unwrap();
    assert_eq!(spec.scenario.num_antennas, 8);
    assert_eq!(spec.scenario.grid_points, 16);
    let result = run_power_sweep(&spec).unwrap();
    assert_eq!(result.rows.len(), 2 * 2 * 2);
    assert!(result.rows.iter().all(|r| r.n_trials == 4 && r.mean_nmse.is_finite()));

    let csv = dir.path().join("sweep.csv");
    harness::emit_csv(&result, &csv).unwrap();
    assert_eq!(harness::read_csv(&csv).unwrap().rows, result.rows);
}

#[test]
fn trained_models_load_into_a_sweep() {
    let scenario = ScenarioConfig {
        off_grid: true,
        seed: 3,
        ..Default::default()
    };
    let sc = Scenario::new(scenario.clone()).unwrap();
    let quick = TrainConfig {
        epochs: 2,
        ..Default::default()
    };
    let cfg = NeuralTrainingConfig {
        occupancy_hidden: vec![32],
        residual_hidden: vec![8],
        occupancy_samples: 200,
        residual_samples: 64,
        occupancy_train: quick.clone(),
        residual_train: quick,
        ..Default::default()
    };
    let est = train_neural_estimator(&sc, &cfg, 3).unwrap();
    let dir = tempfile::tempdir().unwrap();
    est.save(dir.path()).unwrap();
    let loaded = NeuralEstimator::load(dir.path(), sc.config.grid_points).unwrap();
    assert_eq!(loaded.occupancy.layer_sizes(), est.occupancy.layer_sizes());
    assert_eq!(loaded.residuals.heads.len(), sc.config.grid_points);

    let spec = SweepSpec {
        scenario,
        power_grid_dbm: vec![10.0, 20.0],
        trials_per_point: 3,
        methods: vec![Method::Nn, Method::Alg1],
        model_dir: Some(dir.path().to_path_buf()),
        ..Default::default()
    };
    let result = run_power_sweep(&spec).unwrap();
    for p in [10.0, 20.0] {
        for t in Target::ALL {
            let row = result.row(p, Method::Nn, t).unwrap();
            assert_eq!(row.n_trials, 3);
            assert!(row.mean_nmse.is_finite());
        }
    }
}

#[test]
fn missing_model_directory_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    assert!(NeuralEstimator::load(&dir.path().join("absent"), 32).is_err());
    let spec = SweepSpec {
        methods: vec![Method::Nn],
        model_dir: Some(dir.path().join("absent")),
        ..Default::default()
    };
    assert!(run_power_sweep(&spec).is_err());
}
