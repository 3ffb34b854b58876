use ris_lab::channel::ScenarioConfig;
use ris_lab::codebook::{build_codebook, codebook_to_json, load_codebook, random_codebook, save_codebook, AoSettings};
use ris_lab::experiments::{
    csv_string, desk_scenario, mean_and_stderr, preset, run_experiment, run_experiment_detailed, ExperimentSpec,
    SchemeKind, SweepAxis,
};
use ris_lab::channel::build_statistical_csi;

fn in_pool<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> T {
    rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap().install(f)
}

fn small_spec() -> ExperimentSpec {
    let cfg = desk_scenario(3.0, 8).with_ris_elements(16).unwrap();
    let mut spec = ExperimentSpec::new(cfg, SweepAxis::Q, vec![1.0, 4.0, 8.0], SchemeKind::ALL.to_vec());
    spec.trials = 60;
    spec.seed = 99;
    spec
}

#[test]
fn results_do_not_depend_on_thread_count() {
    let spec = small_spec();
    let one = in_pool(1, || csv_string(&run_experiment(&spec).unwrap()).unwrap());
    let eight = in_pool(8, || csv_string(&run_experiment(&spec).unwrap()).unwrap());
    assert_eq!(one, eight);

    let cfg = spec.scenario.clone();
    let csi = build_statistical_csi(&cfg);
    let a = in_pool(1, || codebook_to_json(&build_codebook(&csi, &cfg, 5, &AoSettings::default()).unwrap()));
    let b = in_pool(8, || codebook_to_json(&build_codebook(&csi, &cfg, 5, &AoSettings::default()).unwrap()));
    assert_eq!(a, b);
}

#[test]
fn saved_codebooks_drive_the_same_experiment() {
    let spec = small_spec();
    let cfg = spec.scenario.clone();
    let dir = tempfile::tempdir().unwrap();
    let env_path = dir.path().join("env.json");
    let rnd_path = dir.path().join("rnd.json");
    save_codebook(
        &build_codebook(&build_statistical_csi(&cfg), &cfg, 7, &AoSettings::default()).unwrap(),
        &env_path,
    )
    .unwrap();
    save_codebook(&random_codebook(&cfg, 7).unwrap(), &rnd_path).unwrap();

    let mut with_files = spec.clone();
    with_files.schemes = vec![SchemeKind::EnvironmentAware, SchemeKind::RandomCodebook];
    with_files.codebooks = vec![
        load_codebook(&env_path, Some(&cfg)).unwrap(),
        load_codebook(&rnd_path, Some(&cfg)).unwrap(),
    ];
    let rows = run_experiment(&with_files).unwrap();
    assert_eq!(rows.len(), 6);
    assert!(rows.iter().all(|r| r.mean_rate.is_finite() && r.mean_rate > 0.0));
    assert_eq!(rows, run_experiment(&with_files).unwrap());
}

#[test]
fn scheme_ordering_holds_on_paired_noiseless_trials() {
    let mut spec = preset("ordering", 1000, 2024).unwrap();
    spec.noise_on = false;
    let res = run_experiment_detailed(&spec).unwrap();
    // Columns follow SchemeKind::ALL; compare adjacent links of the chain
    // optimal ≥ environment-aware ≥ random-codebook ≥ random-config.
    for (hi, lo) in [(3, 0), (0, 1), (1, 2)] {
        let d: Vec<f64> = res.rates_for(0, hi).iter().zip(res.rates_for(0, lo)).map(|(a, b)| a - b).collect();
        let (mean, se) = mean_and_stderr(&d);
        assert!(mean - 1.645 * se > 0.0, "{hi} vs {lo}: {mean} ± {se}");
    }
}

#[test]
fn reference_scale_config_runs() {
    let mut cfg = ScenarioConfig::reference();
    cfg.training_overhead = 4;
    let mut spec = ExperimentSpec::new(cfg, SweepAxis::Pd, vec![30.0, 40.0], vec![SchemeKind::EnvironmentAware]);
    spec.trials = 10;
    spec.seed = 1;
    let rows = run_experiment(&spec).unwrap();
    assert!(rows[1].mean_rate > rows[0].mean_rate);
}
