use std::fs;
use std::path::Path;
use std::process::{Command, Output};
use std::time::Instant;

use rand::Rng;
use unlearn_cli::aggregate::{summarize, to_csv};
use unlearn_cli::config::MethodKind;
use unlearn_cli::{Experiment, ExperimentConfig};
use unlearn_core::evaluation::{Gaps, UnlearnReport};
use unlearn_core::rng;

fn unlearn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_unlearn"))
        .args(args)
        .env_remove("UNLEARN_OUT_DIR")
        .output()
        .expect("spawn unlearn")
}

fn write_config(dir: &Path, body: &str) -> String {
    let path = dir.join("config.json");
    fs::write(&path, body).unwrap();
    path.to_str().unwrap().to_string()
}

const MINIMAL: &str = r#"{"schema_version": 1, "seed": 3}"#;

#[test]
fn full_pipeline_runs_quickly() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        r#"{"schema_version": 1, "seed": 3, "method": {"kind": "forget_vector"}, "compose": {"mode": "one_hot", "class": 0}}"#,
    );
    let out = dir.path().join("out");
    let out = out.to_str().unwrap();
    let start = Instant::now();
    for cmd in ["train", "unlearn", "compose"] {
        let o = unlearn(&[cmd, "--config", &cfg, "--out", out]);
        assert!(
            o.status.success(),
            "{cmd}: {}",
            String::from_utf8_lossy(&o.stderr)
        );
    }
    let o = unlearn(&["report", "--out", out]);
    assert!(o.status.success());
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(text.contains("forget_vector"));
    assert!(start.elapsed().as_secs() < 60);
}

#[test]
fn unlearn_without_checkpoint_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), MINIMAL);
    let out = dir.path().join("out");
    let o = unlearn(&["unlearn", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn bad_config_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), r#"{"schema_version": 99}"#);
    let o = unlearn(&[
        "train",
        "--config",
        &cfg,
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));

    let cfg = write_config(
        dir.path(),
        r#"{"schema_version": 1, "split": {"kind": "class_wise", "class": 9}}"#,
    );
    let o = unlearn(&[
        "train",
        "--config",
        &cfg,
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn corrupted_checkpoint_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), MINIMAL);
    let out = dir.path().join("out");
    let out_s = out.to_str().unwrap();
    assert!(unlearn(&["train", "--config", &cfg, "--out", out_s])
        .status
        .success());
    let ckpt = out.join("model-s3.bin");
    let mut bytes = fs::read(&ckpt).unwrap();
    let last = bytes.len() - 1;
    bytes[last] ^= 0x40;
    fs::write(&ckpt, bytes).unwrap();
    let o = unlearn(&["unlearn", "--config", &cfg, "--out", out_s]);
    assert_eq!(
        o.status.code(),
        Some(3),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
}

#[test]
fn differing_artifact_is_not_replaced() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), MINIMAL);
    let out = dir.path().join("out");
    let out_s = out.to_str().unwrap();
    assert!(unlearn(&["train", "--config", &cfg, "--out", out_s])
        .status
        .success());
    assert!(unlearn(&["unlearn", "--config", &cfg, "--out", out_s])
        .status
        .success());
    let report = out.join("report-forget_vector-s3.json");
    fs::write(&report, "{}").unwrap();
    let o = unlearn(&["unlearn", "--config", &cfg, "--out", out_s]);
    assert_eq!(o.status.code(), Some(3));
    assert_eq!(fs::read_to_string(&report).unwrap(), "{}");
}

#[test]
fn seed_flag_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), MINIMAL);
    let out = dir.path().join("out");
    let o = unlearn(&[
        "train",
        "--config",
        &cfg,
        "--out",
        out.to_str().unwrap(),
        "--seed",
        "11",
    ]);
    assert!(o.status.success());
    assert!(out.join("model-s11.bin").exists());
    assert!(!out.join("model-s3.bin").exists());
}

#[test]
fn retrain_report_has_zero_gaps() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ExperimentConfig {
        seed: 1,
        ..ExperimentConfig::default()
    };
    cfg.method.kind = Some(MethodKind::Retrain);
    let exp = Experiment::new(cfg, dir.path().to_path_buf()).unwrap();
    exp.train().unwrap();
    let r = exp.unlearn().unwrap().report;
    let g = r.gaps.unwrap();
    assert_eq!((g.ua, g.mia_efficacy, g.ra, g.ta), (0.0, 0.0, 0.0, 0.0));
    assert_eq!(r.avg_gap, Some(0.0));
}

#[test]
fn forget_vector_trains_d_values() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ExperimentConfig::default();
    cfg.method.kind = Some(MethodKind::ForgetVector);
    let exp = Experiment::new(cfg, dir.path().to_path_buf()).unwrap();
    exp.train().unwrap();
    let r = exp.unlearn().unwrap().report;
    assert_eq!(r.param_count, exp.train.dim());
}

fn spreadsheet_mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[test]
fn aggregation_matches_recomputation() {
    let mut r = rng::rng_for(5, "aggregate-test");
    let mut pct = || (r.random_range(0.0..100.0f64) * 100.0).round() / 100.0;
    let reports: Vec<UnlearnReport> = (0..10)
        .map(|i| {
            let gaps = Gaps {
                ua: pct(),
                mia_efficacy: pct(),
                ra: pct(),
                ta: pct(),
            };
            UnlearnReport {
                method: if i % 2 == 0 { "a" } else { "b" }.into(),
                seed: i,
                ua: pct(),
                mia_efficacy: pct(),
                ra: pct(),
                ta: pct(),
                avg_gap: Some((gaps.ua + gaps.mia_efficacy + gaps.ra + gaps.ta) / 4.0),
                gaps: Some(gaps),
                runtime_s: None,
                param_count: 16,
            }
        })
        .collect();
    let summary = summarize(&reports);
    assert_eq!(summary.len(), 2);
    for s in &summary {
        let group: Vec<&UnlearnReport> = reports.iter().filter(|r| r.method == s.method).collect();
        assert_eq!(s.trials, 5);
        for (metric, pick) in [
            (
                "ua",
                (|r: &UnlearnReport| r.ua) as fn(&UnlearnReport) -> f64,
            ),
            ("mia_efficacy", |r| r.mia_efficacy),
            ("ra", |r| r.ra),
            ("ta", |r| r.ta),
            ("gap_ra", |r| r.gaps.unwrap().ra),
            ("avg_gap", |r| r.avg_gap.unwrap()),
        ] {
            let values: Vec<f64> = group.iter().map(|r| pick(r)).collect();
            let (mean, std) = spreadsheet_mean_std(&values);
            let got = s.get(metric).unwrap();
            assert!((got.mean - mean).abs() < 1e-9, "{metric} mean");
            assert!((got.std - std).abs() < 1e-9, "{metric} std");
        }
    }
    let csv = to_csv(&summary);
    assert!(csv.starts_with("method,trials,metric,mean,std\n"));
    assert_eq!(csv.lines().count(), 1 + 2 * 9);
}
