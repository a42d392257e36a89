use std::path::Path;
use std::process::{Command, Output};

use portsel::dataset::ScenarioKey;
use portsel::forest::HyperParams;
use portsel::pipeline::RunConfig;
use portsel::synth::{ClusterSpec, SynthSpec};

fn portsel(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_portsel"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn tiny_config(out: &Path) -> RunConfig {
    let spec = SynthSpec {
        n_problems: 3,
        k_instances: 3,
        m_runs: 3,
        n_algorithms: 6,
        p_features: 3,
        clusters: [[1e-5, 1e-1, 1e-2], [1e-1, 1e-5, 1e-2]]
            .iter()
            .map(|p| ClusterSpec {
                size: 3,
                profile: p.to_vec(),
            })
            .collect(),
        misleading: Default::default(),
        dimensions: vec![2],
        budgets: vec![100],
        ..SynthSpec::default()
    };
    RunConfig {
        synth: Some(spec),
        scenarios: vec![ScenarioKey::new(2, 100).unwrap()],
        thresholds: vec![0.9],
        selector_seeds: vec![1],
        grid: vec![HyperParams {
            n_trees: 3,
            max_depth: 3,
            min_samples_leaf: 1,
            feature_fraction: 1.0,
            bootstrap_seed: 0,
        }],
        greedy_top: 2,
        greedy_per_problem: 1,
        personalized_per_problem: 1,
        output_dir: out.to_path_buf(),
        ..RunConfig::default()
    }
}

fn write_config(dir: &Path) -> String {
    let path = dir.join("config.json");
    let json = serde_json::to_string_pretty(&tiny_config(&dir.join("out"))).unwrap();
    std::fs::write(&path, json).unwrap();
    path.to_str().unwrap().to_owned()
}

#[test]
fn pipeline_from_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path());
    let out = portsel(&["--config", &config, "--jobs", "2", "pipeline"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let summary: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(summary["graphs"], 2);
    assert!(dir.path().join("out/reports/heatmap.csv").exists());

    // a second run reuses every model
    let out = portsel(&["--config", &config, "train"]);
    assert_eq!(out.status.code(), Some(0));
    let train: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(train["trained"], 0);
    assert_eq!(train["reused"], 6);

    let out = portsel(&["--config", &config, "report", "--kind", "sizes"]);
    assert_eq!(out.status.code(), Some(0));
}

#[test]
fn missing_artifacts_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path());
    assert_eq!(portsel(&["--config", &config, "evaluate"]).status.code(), Some(3));
    let absent = dir.path().join("absent.json");
    assert_eq!(
        portsel(&["--config", absent.to_str().unwrap(), "validate"]).status.code(),
        Some(3)
    );
}

#[test]
fn invalid_input_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"thresholds": [1.5], "unknown_field": 1}"#).unwrap();
    assert_eq!(portsel(&["--config", bad.to_str().unwrap(), "validate"]).status.code(), Some(2));

    let config = write_config(dir.path());
    assert_eq!(portsel(&["--config", &config, "--thresholds", "0,2", "graph"]).status.code(), Some(2));
    assert_eq!(portsel(&["--config", &config, "report", "--kind", "pie"]).status.code(), Some(2));

    let perf = dir.path().join("perf.csv");
    std::fs::write(&perf, "not,a,performance,file\n1,2,3,4\n").unwrap();
    let feats = dir.path().join("feats.csv");
    std::fs::write(&feats, "dimension,problem,instance,x\n2,f01,1,0.5\n").unwrap();
    let out = portsel(&[
        "--performance",
        perf.to_str().unwrap(),
        "--features",
        feats.to_str().unwrap(),
        "validate",
    ]);
    assert_eq!(out.status.code(), Some(2));
}
