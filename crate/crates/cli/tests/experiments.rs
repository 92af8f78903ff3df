use distgp_cli::config::ExperimentConfig;
use distgp_cli::experiments::run_experiment;
use distgp_cli::report::ExperimentReport;

fn config(seed: u64) -> ExperimentConfig {
    ExperimentConfig {
        seed,
        ..ExperimentConfig::default()
    }
}

#[test]
fn consistency_on_the_whole_population_has_no_error() {
    let mut c = config(5);
    c.consistency.population = 40;
    c.consistency.sizes = vec![10, 40];
    c.consistency.replicates = 2;
    let r = run_experiment("consistency", &c).unwrap();
    let errors = &r.series["consistency_errors"];
    assert!(errors[1] <= 1e-6, "n = population gave {}", errors[1]);
}

#[test]
fn constant_response_is_reproduced() {
    let mut c = config(6);
    c.regression.constant_response = Some(0.7);
    let r = run_experiment("gaussian-regression", &c).unwrap();
    // Zero prior mean with the amplitude at its lower bound shrinks the
    // constant slightly towards zero.
    assert!(r.summary["gp_mle_rmse"] < 1e-3 * 0.7);
    assert!(r.summary["gp_cv_rmse"] < 1e-3 * 0.7);
    assert!(r.flags.iter().any(|f| f.contains("constant responses")));
    assert!(r.summary["smoothing_rmse"] < 1e-12);
    let table = r.table("regression").unwrap();
    assert_eq!(table.get("Gaussian Process (MLE)", "q2"), Some("NA"));
    assert_eq!(table.get("Kernel Smoothing", "cic"), Some("NA"));
}

#[test]
fn duplicated_disk_configuration_is_interpolated() {
    let mut c = config(7);
    c.disks.n_train = 12;
    c.disks.n_test = 4;
    c.disks.grid_size = 20;
    c.disks.duplicate_first = true;
    let r = run_experiment("disks", &c).unwrap();
    let pred = r.series["gp_mle_predictions"][0];
    let truth = r.series["truths"][0];
    assert!((pred - truth).abs() < 1e-6, "{pred} vs {truth}");
}

#[test]
fn grid_path_regression_runs() {
    let mut c = config(8);
    c.regression.n_inputs = 16;
    c.regression.n_train = 8;
    c.regression.grid_size = 12;
    c.regression.grid_path = true;
    let r = run_experiment("gaussian-regression", &c).unwrap();
    assert!(r.summary["gp_mle_rmse"].is_finite());
}

#[test]
fn reports_are_reproducible_and_round_trip() {
    let mut c = config(9);
    c.psd.n_points = 30;
    let a = run_experiment("psd", &c).unwrap();
    let b = run_experiment("psd", &c).unwrap();
    assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());

    let dir = tempfile::tempdir().unwrap();
    a.write_dir(dir.path()).unwrap();
    let back = ExperimentReport::read_dir(dir.path()).unwrap();
    assert_eq!(back.to_json().unwrap(), a.to_json().unwrap());
    let (tables, series) = back.read_csv_artifacts(dir.path()).unwrap();
    assert_eq!(tables, a.tables);
    assert_eq!(series, a.series);
}

#[test]
fn unknown_experiment_is_a_validation_error() {
    let e = run_experiment("nope", &config(1)).unwrap_err();
    assert_eq!(e.exit_code(), distgp_cli::EXIT_VALIDATION);
}
