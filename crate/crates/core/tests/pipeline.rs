use sparse_kan::checkpoint;
use sparse_kan::data::{gen_ikeda, gen_symbolic, DynamicalSpec, SymbolicId};
use sparse_kan::eval::{multistep_rmse, r_squared, Predictor};
use sparse_kan::trainer::{evaluate_condition, Condition, GridUpdateSchedule, TrainConfig};
use sparse_kan::Kan;

fn short_cfg(epochs: usize, seed: u64) -> TrainConfig {
    let mut cfg = TrainConfig::new(epochs, 64, seed);
    cfg.warmup_epochs = 5;
    cfg.fc_warmup_epochs = 5;
    cfg.grid_updates = GridUpdateSchedule { count: 2, within_epochs: 4 };
    cfg
}

#[test]
fn trained_network_survives_a_checkpoint() {
    let problem = gen_symbolic(SymbolicId::F6, 256, 64, 1).unwrap();
    let spec = Condition::Full.spec(0.1, -1.0);
    let ev = evaluate_condition::<f64>(&problem, &[1, 3, 1], &spec, &short_cfg(20, 1), None).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("net.json");
    checkpoint::save(&ev.net, &path).unwrap();
    let back: Kan = checkpoint::load(&path).unwrap();
    assert_eq!(back, ev.net);
    let a = ev.net.predict_batch(problem.test_x.view()).unwrap();
    let b = back.predict_batch(problem.test_x.view()).unwrap();
    assert_eq!(a, b);
    let r2 = r_squared(a.view(), problem.test_y.view()).unwrap();
    assert_eq!(Some(r2), ev.row.r2);
}

#[test]
fn short_training_improves_the_fit() {
    let problem = gen_symbolic(SymbolicId::F1, 512, 128, 2).unwrap();
    let spec = Condition::Baseline.spec(0.0, 20.0);
    let before = evaluate_condition::<f64>(&problem, &[1, 3, 1], &spec, &short_cfg(10, 0), None).unwrap();
    let after = evaluate_condition::<f64>(&problem, &[1, 3, 1], &spec, &short_cfg(200, 0), None).unwrap();
    assert!(after.row.rmse_1step.unwrap() < before.row.rmse_1step.unwrap());
    let first = after.history.records.first().unwrap().data_loss;
    let last = after.history.records.last().unwrap().data_loss;
    assert!(last < first);
}

#[test]
fn dynamical_cell_reports_multistep_error() {
    let mut spec = DynamicalSpec::ikeda_default();
    spec.n_train = 400;
    spec.n_test = 120;
    let problem = gen_ikeda(&spec).unwrap();
    let cond = Condition::GatesOnly.spec(0.01, -2.0);
    let mut cfg = short_cfg(15, 4);
    cfg.grid_updates = GridUpdateSchedule::none();
    cfg.early_stop.enabled = false;
    let ev = evaluate_condition::<f64>(&problem, &[2, 4, 2], &cond, &cfg, Some(100)).unwrap();
    let ms = ev.row.rmse_multistep.expect("multi-step value");
    let traj = problem.test_trajectory().unwrap();
    let direct = multistep_rmse(&ev.net, traj.view(), 100).unwrap();
    assert_eq!(direct.rmse, Some(ms));
    assert_eq!(ev.row.fc_active, None);
    assert_eq!(ev.row.total_edges, 16);
    assert!(ev.row.sparsity_pct <= 100.0);
}
