//! Report contents, determinism and crash isolation of experiments.

use confgame_harness::config::ExperimentConfig;
use confgame_harness::report::{report_rows, sha256_hex};
use confgame_harness::run_experiment;

#[test]
fn smoke_config_emits_one_row_per_metric() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig::new("smoke", "t1", vec![100]);
    let (cells, paths) = run_experiment(&cfg, Some(dir.path())).unwrap();
    assert_eq!(cells.len(), 1);
    let text = std::fs::read_to_string(&paths.report).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "experiment,n,seed,metric,target,value,status");
    let metrics: Vec<&str> = lines[1..].iter().map(|l| l.split(',').nth(3).unwrap()).collect();
    assert_eq!(metrics, ["rmse_theta", "coverage", "j_error", "gap", "pess_value"]);
}

#[test]
fn identical_configs_give_identical_bytes() {
    let mut cfg = ExperimentConfig::new("det", "t2", vec![300, 600]);
    cfg.replications = 3;
    cfg.policies = vec!["always-1".into(), "copy".into()];
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let (_, pa) = run_experiment(&cfg, Some(a.path())).unwrap();
    let (_, pb) = run_experiment(&cfg, Some(b.path())).unwrap();
    for (x, y) in [(&pa.report, &pb.report), (&pa.summary, &pb.summary), (&pa.manifest, &pb.manifest)] {
        assert_eq!(std::fs::read(x).unwrap(), std::fs::read(y).unwrap());
    }
    let manifest: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&pa.manifest).unwrap()).unwrap();
    assert_eq!(manifest["config_sha256"], sha256_hex(cfg.canonical_json().as_bytes()));
    assert_eq!(manifest["files"]["report.csv"], sha256_hex(&std::fs::read(&pa.report).unwrap()));
}

#[test]
fn a_failed_cell_leaves_other_cells_intact() {
    let mut cfg = ExperimentConfig::new("iso", "t2", vec![2, 400]);
    cfg.seeds = vec![5, 6];
    let dir = tempfile::tempdir().unwrap();
    let (cells, _) = run_experiment(&cfg, Some(dir.path())).unwrap();
    assert!(cells.iter().filter(|c| c.n == 2).all(|c| c.error.is_some()));
    assert!(cells.iter().filter(|c| c.n == 400).all(|c| c.error.is_none()));
    let mut alone = cfg.clone();
    alone.n_grid = vec![400];
    let d2 = tempfile::tempdir().unwrap();
    let (solo, _) = run_experiment(&alone, Some(d2.path())).unwrap();
    let rows_all = report_rows(&cfg, &cells);
    let rows_solo = report_rows(&alone, &solo);
    let kept: Vec<_> = rows_all.into_iter().filter(|r| r.n == 400).collect();
    assert_eq!(kept, rows_solo);
}
