//! End-to-end checks across modules and through files on disk.

use std::fs;

use beta_irt::fit::{fit, FitConfig, ModelKind};
use beta_irt::harness::{
    run_recovery_experiment, write_experiment, ExperimentConfig, Metric, RecoveryReport,
};
use beta_irt::io::{param_rows, read_matrix, read_params, write_matrix, write_params, ParamKind};
use beta_irt::recovery::sign_flips;
use beta_irt::synth::{simulate, GenConfig};

fn small_experiment() -> ExperimentConfig {
    ExperimentConfig::from_toml_str(
        r#"
n_replications = 3
base_seed = 41
bootstrap_resamples = 500

[[datasets]]
items = 12
respondents = 15

[[datasets]]
items = 8
respondents = 30

[[models]]
model = "beta3"
n_epochs = 400
n_inits = 50

[[models]]
model = "beta4"
n_epochs = 400
n_inits = 50
"#,
        "inline.toml".as_ref(),
    )
    .unwrap()
}

#[test]
fn generated_data_survive_disk_and_refit_identically() {
    let dir = tempfile::tempdir().unwrap();
    let gen = GenConfig {
        respondents: 25,
        items: 9,
        seed: 3,
        ..GenConfig::default()
    };
    let (truth, p) = simulate(&gen).unwrap();
    let path = dir.path().join("responses.csv");
    write_matrix(&path, &p).unwrap();
    let back = read_matrix(&path).unwrap();
    assert_eq!(back, p);

    let config = FitConfig {
        n_epochs: 300,
        n_inits: 50,
        ..FitConfig::default()
    };
    let from_memory = fit(&p, &config).unwrap();
    let from_disk = fit(&back, &config).unwrap();
    assert_eq!(from_memory, from_disk);

    let params = dir.path().join("params.csv");
    let rows = param_rows(
        Some((&truth.theta, &truth.delta, &truth.a)),
        Some((
            &from_disk.theta,
            &from_disk.delta,
            &from_disk.discrimination,
        )),
    );
    write_params(&params, &rows).unwrap();
    let reread = read_params(&params).unwrap();
    assert_eq!(reread, rows);
    let est_a: Vec<f64> = reread
        .iter()
        .filter(|r| r.kind == ParamKind::A)
        .map(|r| r.estimated.unwrap())
        .collect();
    assert_eq!(est_a, from_disk.discrimination);
}

#[test]
fn loss_trend_is_downward_after_the_frozen_phase() {
    let gen = GenConfig {
        respondents: 40,
        items: 15,
        seed: 9,
        ..GenConfig::default()
    };
    let (_, p) = simulate(&gen).unwrap();
    for model in ModelKind::ALL {
        let config = FitConfig {
            n_epochs: 1500,
            n_inits: 200,
            tol: 0.0,
            ..FitConfig::for_model(model)
        };
        let result = fit(&p, &config).unwrap();
        let losses: Vec<f64> = result.loss_trace.iter().map(|&(_, l)| l).collect();
        for start in (config.n_inits..losses.len() - 100).step_by(50) {
            assert!(
                losses[start + 100] <= losses[start],
                "{model}: loss rose over epochs {start}..{}",
                start + 100
            );
        }
        assert!(losses[config.n_inits + 500] < losses[config.n_inits]);
    }
}

#[test]
fn experiment_artifacts_are_complete_and_consistent() {
    let cfg = small_experiment();
    let out = run_recovery_experiment(&cfg, 2, None).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_experiment(dir.path(), &out).unwrap();

    let report_path = dir.path().join("report.json");
    let report =
        RecoveryReport::from_json(&fs::read_to_string(&report_path).unwrap(), &report_path)
            .unwrap();
    assert_eq!(report, out.report);

    let expected_rows = cfg.datasets.len() * cfg.models.len() * cfg.n_replications;
    let replications = fs::read_to_string(dir.path().join("replications.csv")).unwrap();
    let ok_rows = replications
        .lines()
        .skip(1)
        .filter(|l| l.split(',').nth(6) == Some("ok"))
        .count();
    assert_eq!(ok_rows, expected_rows - report.metadata.failed_fits);
    assert_eq!(replications.lines().count() - 1, expected_rows);

    for s in &report.summaries {
        assert_eq!(s.n_values + s.n_excluded, cfg.n_replications);
    }
    assert_eq!(
        report.summaries.len(),
        cfg.datasets.len() * cfg.models.len() * Metric::ALL.len()
    );

    // Recount flips per (dataset, model, replication) from the scatter file.
    let scatter = fs::read_to_string(dir.path().join("scatter.csv")).unwrap();
    for rec in &report.replications {
        let key = format!("{},{},{},a,", rec.dataset, rec.model, rec.replication);
        let (truth, est): (Vec<f64>, Vec<f64>) = scatter
            .lines()
            .filter(|l| l.starts_with(&key))
            .map(|l| {
                let f: Vec<&str> = l.split(',').collect();
                (f[5].parse::<f64>().unwrap(), f[6].parse::<f64>().unwrap())
            })
            .unzip();
        let stats = rec.stats.as_ref().unwrap();
        assert_eq!(
            sign_flips(&truth, &est).unwrap(),
            (stats.flipped, stats.compared)
        );
        let flagged = scatter
            .lines()
            .filter(|l| l.starts_with(&key) && l.ends_with(",1"))
            .count();
        assert_eq!(flagged, stats.flipped);
    }
}

#[test]
fn replication_seeds_follow_the_documented_rule() {
    let cfg = small_experiment();
    let out = run_recovery_experiment(&cfg, 1, None).unwrap();
    assert_eq!(out.report.metadata.replication_seeds, vec![41, 42, 43]);
    for rec in &out.report.replications {
        assert_eq!(rec.seed, cfg.base_seed + rec.replication as u64);
    }
}
