//! End-to-end experiment-driver checks: what run_experiment writes, how the
//! combined pipeline carries pretraining cost into its curve, and that every
//! run is a pure function of its seed (modulo wall-clock timing).

use std::fs;
use std::path::Path;

use evoseed::dqn::DqnConfig;
use evoseed::envs::{EnvConfig, LineWorldConfig};
use evoseed::es::EsConfig;
use evoseed::harness::{
    compare_report, load_runs, run_experiment, write_report, Algo, ExperimentConfig,
    HarnessError, PolicyConfig, RunMeta,
};
use evoseed::nn::{checkpoint::load_checkpoint, Activation};
use evoseed::transfer::TransferMode;

fn base_config(algo: Algo, out: &Path) -> ExperimentConfig {
    ExperimentConfig {
        algo,
        seeds: vec![11],
        eval_every: 2,
        eval_episodes: 3,
        smoothing_window: 2,
        workers: 1,
        transfer_mode: TransferMode::HiddenOnly,
        output_dir: out.to_path_buf(),
        env: EnvConfig::LineWorld(LineWorldConfig::default()),
        policy: PolicyConfig {
            hidden_dims: vec![8],
            activation: Activation::Tanh,
        },
        es: EsConfig {
            population_size: 8,
            max_generations: 3,
            episodes_per_eval: 1,
            sigma: 0.2,
            learning_rate: 0.1,
            ..EsConfig::default()
        },
        dqn: DqnConfig {
            total_timesteps: 64,
            learning_starts: 16,
            buffer_capacity: 128,
            batch_size: 8,
            target_sync_every: 16,
            learning_rate: 1e-3,
            ..DqnConfig::default()
        },
    }
}

/// Drop the wall-clock column (index 2 in every schema this crate writes) so
/// outputs of two timed runs can be compared exactly.
fn strip_wall_clock(csv: &str) -> String {
    csv.lines()
        .map(|line| {
            let fields: Vec<&str> = line.split(',').collect();
            fields
                .iter()
                .enumerate()
                .filter(|(i, _)| *i != 2)
                .map(|(_, f)| *f)
                .collect::<Vec<_>>()
                .join(",")
        })
        .collect::<Vec<_>>()
        .join("\n")
}

fn read_meta(dir: &Path) -> RunMeta {
    serde_json::from_str(&fs::read_to_string(dir.join("meta.json")).unwrap()).unwrap()
}

#[test]
fn zero_generations_yield_a_single_initial_evaluation_row() {
    let tmp = tempfile::tempdir().unwrap();
    let mut config = base_config(Algo::Es, tmp.path());
    config.es.max_generations = 0;
    let summaries = run_experiment(&config).unwrap();
    assert_eq!(summaries.len(), 1);
    let curve = &summaries[0].curve;
    assert_eq!(curve.len(), 1, "only the initial policy's evaluation");
    let row = curve.rows()[0];
    assert_eq!(row.iteration, 0);
    assert_eq!(row.env_steps_cum, 0);
    assert_eq!(row.wall_clock_s, 0.0);
}

#[test]
fn runs_write_the_full_file_set_and_checkpoints_load() {
    let tmp = tempfile::tempdir().unwrap();
    let config = base_config(Algo::EsThenDqn, tmp.path());
    let summaries = run_experiment(&config).unwrap();
    let dir = &summaries[0].dir;
    assert_eq!(dir, &tmp.path().join("es_then_dqn_seed11"));
    for file in [
        "curve.csv",
        "detail_es.csv",
        "detail_dqn.csv",
        "es_phase.evsd",
        "policy.evsd",
        "meta.json",
    ] {
        assert!(dir.join(file).is_file(), "missing {file}");
    }
    let final_policy = load_checkpoint(&dir.join("policy.evsd")).unwrap();
    let es_policy = load_checkpoint(&dir.join("es_phase.evsd")).unwrap();
    assert_eq!(final_policy.spec(), es_policy.spec());

    let meta = read_meta(dir);
    assert_eq!(meta.algo, Algo::EsThenDqn);
    assert_eq!(meta.seed, 11);
    assert_eq!(meta.env, config.env);
}

#[test]
fn pretraining_cost_is_carried_into_the_dqn_curve() {
    let tmp = tempfile::tempdir().unwrap();
    let config = base_config(Algo::EsThenDqn, tmp.path());
    let summaries = run_experiment(&config).unwrap();
    let dir = &summaries[0].dir;
    let meta = read_meta(dir);
    let es_steps = meta.es_phase_env_steps.expect("combined run records the phase");
    let es_clock = meta.es_phase_wall_clock_s.unwrap();
    assert!(es_steps > 0);

    // The evolutionary phase wrote rows at generations 0, 2, 3.
    let rows = summaries[0].curve.rows();
    assert_eq!(rows[0].iteration, 0);
    assert_eq!(rows[1].iteration, 2);
    assert_eq!(rows[2].iteration, 3);
    assert_eq!(rows[2].env_steps_cum, es_steps);

    // First value-learner row: zero of its own steps, but the pretraining
    // cost is already on both cumulative axes.
    let first_dqn = rows[3];
    assert_eq!(first_dqn.iteration, 0);
    assert_eq!(first_dqn.env_steps_cum, es_steps);
    assert!(first_dqn.wall_clock_s >= es_clock);

    // Exact total accounting: pretraining steps + every value-learner step.
    let last = rows.last().unwrap();
    assert_eq!(last.env_steps_cum, es_steps + config.dqn.total_timesteps);
    assert_eq!(meta.final_env_steps, last.env_steps_cum);

    // The detail logs agree with the curve on both boundaries.
    let detail_es = fs::read_to_string(dir.join("detail_es.csv")).unwrap();
    let last_es_line = detail_es.lines().last().unwrap();
    let es_detail_steps: u64 = last_es_line.split(',').nth(1).unwrap().parse().unwrap();
    assert_eq!(es_detail_steps, es_steps);
    let detail_dqn = fs::read_to_string(dir.join("detail_dqn.csv")).unwrap();
    let first_dqn_line = detail_dqn.lines().nth(1).unwrap();
    let dqn_first_steps: u64 = first_dqn_line.split(',').nth(1).unwrap().parse().unwrap();
    assert_eq!(dqn_first_steps, es_steps);
}

#[test]
fn identical_config_and_seed_reproduce_every_csv_modulo_wall_clock() {
    let tmp_a = tempfile::tempdir().unwrap();
    let tmp_b = tempfile::tempdir().unwrap();
    let config_a = base_config(Algo::EsThenDqn, tmp_a.path());
    let config_b = base_config(Algo::EsThenDqn, tmp_b.path());
    let run_a = &run_experiment(&config_a).unwrap()[0];
    let run_b = &run_experiment(&config_b).unwrap()[0];

    for file in ["curve.csv", "detail_es.csv", "detail_dqn.csv"] {
        let a = fs::read_to_string(run_a.dir.join(file)).unwrap();
        let b = fs::read_to_string(run_b.dir.join(file)).unwrap();
        assert_eq!(
            strip_wall_clock(&a),
            strip_wall_clock(&b),
            "{file} differs between identical runs"
        );
    }
    // Checkpoints carry no timing at all: byte-identical.
    for file in ["policy.evsd", "es_phase.evsd"] {
        let a = fs::read(run_a.dir.join(file)).unwrap();
        let b = fs::read(run_b.dir.join(file)).unwrap();
        assert_eq!(a, b, "{file} differs between identical runs");
    }
}

#[test]
fn different_seeds_produce_different_trajectories() {
    let tmp = tempfile::tempdir().unwrap();
    let mut config = base_config(Algo::Es, tmp.path());
    config.seeds = vec![1, 2];
    let summaries = run_experiment(&config).unwrap();
    let a = fs::read(summaries[0].dir.join("policy.evsd")).unwrap();
    let b = fs::read(summaries[1].dir.join("policy.evsd")).unwrap();
    assert_ne!(a, b, "distinct seeds must explore distinct populations");
}

#[test]
fn worker_count_does_not_change_the_training_trajectory() {
    let tmp_a = tempfile::tempdir().unwrap();
    let tmp_b = tempfile::tempdir().unwrap();
    let config_a = base_config(Algo::Es, tmp_a.path());
    let mut config_b = base_config(Algo::Es, tmp_b.path());
    config_b.workers = 3;
    let run_a = &run_experiment(&config_a).unwrap()[0];
    let run_b = &run_experiment(&config_b).unwrap()[0];
    let a = fs::read_to_string(run_a.dir.join("curve.csv")).unwrap();
    let b = fs::read_to_string(run_b.dir.join("curve.csv")).unwrap();
    assert_eq!(strip_wall_clock(&a), strip_wall_clock(&b));
    let a = fs::read(run_a.dir.join("policy.evsd")).unwrap();
    let b = fs::read(run_b.dir.join("policy.evsd")).unwrap();
    assert_eq!(a, b);
}

#[test]
fn invalid_configs_are_rejected_before_anything_is_written() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("should_not_exist");
    let mut config = base_config(Algo::Es, &out);
    config.seeds.clear();
    config.es.sigma = 0.0;
    match run_experiment(&config) {
        Err(HarnessError::InvalidConfig(problems)) => {
            assert!(problems.iter().any(|p| p.starts_with("seeds:")));
            assert!(problems.iter().any(|p| p.starts_with("es:")));
        }
        other => panic!("expected field diagnostics, got {other:?}"),
    }
    assert!(!out.exists(), "no output may be created for a bad config");
}

#[test]
fn report_round_trips_through_the_run_directories() {
    let tmp = tempfile::tempdir().unwrap();
    let mut config = base_config(Algo::Es, tmp.path());
    config.seeds = vec![1, 2];
    run_experiment(&config).unwrap();
    config.algo = Algo::Dqn;
    run_experiment(&config).unwrap();

    let runs = load_runs(tmp.path()).unwrap();
    assert_eq!(runs.len(), 4);
    let report = compare_report(&runs, config.smoothing_window).unwrap();
    assert_eq!(report.rows.len(), 4);
    assert!(report.reference_reward.is_finite());

    let report_dir = tmp.path().join("report");
    write_report(&report_dir, &report).unwrap();
    assert!(report_dir.join("report.csv").is_file());
    let svg = fs::read_to_string(report_dir.join("report.svg")).unwrap();
    assert!(svg.starts_with("<svg"));

    // Runs from different environments cannot be compared.
    let mut foreign = base_config(Algo::Es, tmp.path());
    foreign.seeds = vec![3];
    foreign.env = EnvConfig::LineWorld(LineWorldConfig {
        length: 6,
        ..LineWorldConfig::default()
    });
    run_experiment(&foreign).unwrap();
    let mixed = load_runs(tmp.path()).unwrap();
    let err = compare_report(&mixed, 1).unwrap_err();
    assert!(err.to_string().contains("mismatched"), "{err}");
}

#[test]
fn config_files_round_trip_through_disk() {
    let tmp = tempfile::tempdir().unwrap();
    let config = base_config(Algo::EsThenDqn, tmp.path());
    let path = tmp.path().join("experiment.toml");
    config.save(&path).unwrap();
    let loaded = ExperimentConfig::load(&path).unwrap();
    assert_eq!(config, loaded);

    let err = ExperimentConfig::load(&tmp.path().join("missing.toml")).unwrap_err();
    assert!(matches!(err, HarnessError::ConfigFile { .. }));
}
