use std::path::Path;
use std::process::{Command, Output};

use strictfair::experiment::ExperimentConfig;

fn strictfair(args: &[&str], env_out: Option<&Path>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_strictfair"));
    cmd.args(args).env_remove("STRICTFAIR_OUT");
    if let Some(out) = env_out {
        cmd.env("STRICTFAIR_OUT", out);
    }
    cmd.output().unwrap()
}

fn write_config(dir: &Path, name: &str, cfg: &ExperimentConfig) -> String {
    let path = dir.join(name);
    std::fs::write(&path, cfg.to_toml_string()).unwrap();
    path.to_str().unwrap().to_string()
}

fn quick(seed: u64) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::toy(seed);
    cfg.train.epochs = 1;
    cfg.search.population = 4;
    cfg.search.generations = 2;
    cfg.search.select_k = 2;
    cfg
}

#[test]
fn output_root_comes_from_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let out = strictfair(&["lemma-curve", "--m", "2", "--n-max", "10"], Some(dir.path()));
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(dir.path().join("lemma-curve/lemma_curve.csv")).unwrap();
    assert!(csv.starts_with("m,n,f_exact,f_log,f_stirling\n2,2,0.5,0.5,"), "{csv}");
    assert_eq!(csv.lines().count(), 6);
    assert!(dir.path().join("lemma-curve/manifest.json").exists());
}

#[test]
fn search_rejects_a_checkpoint_from_another_space() {
    let dir = tempfile::tempdir().unwrap();
    let a = write_config(dir.path(), "a.toml", &quick(0));
    let mut other = quick(0);
    other.space.widths = vec![5; 7];
    let b = write_config(dir.path(), "b.toml", &other);
    let out_dir = dir.path().join("runs");
    let out = out_dir.to_str().unwrap();

    let trained = strictfair(&["train-supernet", "--config", &a, "--out", out], None);
    assert!(trained.status.success(), "{}", String::from_utf8_lossy(&trained.stderr));
    let ckpt = out_dir.join("train-supernet/supernet");
    let ckpt = ckpt.to_str().unwrap();

    let ok = strictfair(&["search", "--config", &a, "--checkpoint", ckpt, "--out", out], None);
    assert!(ok.status.success(), "{}", String::from_utf8_lossy(&ok.stderr));
    for file in ["generations.jsonl", "pareto.json", "pareto.csv", "selected.json", "evaluations.csv"] {
        assert!(out_dir.join("search").join(file).exists(), "{file}");
    }

    let bad = strictfair(&["search", "--config", &b, "--checkpoint", ckpt, "--out", out], None);
    assert!(!bad.status.success());
    assert!(String::from_utf8_lossy(&bad.stderr).contains("different search space"));
}

#[test]
fn config_without_seed_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let text: String = quick(0)
        .to_toml_string()
        .lines()
        .filter(|l| !l.starts_with("seed"))
        .map(|l| format!("{l}\n"))
        .collect();
    let path = dir.path().join("c.toml");
    std::fs::write(&path, text).unwrap();
    let out = strictfair(&["profile", "--config", path.to_str().unwrap(), "--out", dir.path().to_str().unwrap()], None);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("seed"));
}

#[test]
fn pairs_mode_prints_tau() {
    let dir = tempfile::tempdir().unwrap();
    let pairs = dir.path().join("pairs.csv");
    let mut text = String::from("oneshot,standalone\n");
    for i in 0..13 {
        let j = match i {
            0 => 1,
            1 => 0,
            5 => 6,
            6 => 5,
            k => k,
        };
        text.push_str(&format!("{i},{j}\n"));
    }
    std::fs::write(&pairs, text).unwrap();
    let out = strictfair(
        &["rank", "--pairs", pairs.to_str().unwrap(), "--out", dir.path().to_str().unwrap()],
        None,
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("tau 0.9487"));
}

#[test]
fn fairness_sim_modes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let strict = strictfair(&["fairness-sim", "--mode", "strict", "--bps", "6000", "--out", out], None);
    assert!(strict.status.success());
    let report: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("fairness-sim/fairness_sim.json")).unwrap()).unwrap();
    assert_eq!(report["max_variance"], 0.0);
    let uniform = strictfair(&["fairness-sim", "--mode", "uniform", "--out", out], None);
    assert!(uniform.status.success());
    let report: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("fairness-sim/fairness_sim.json")).unwrap()).unwrap();
    assert!(report["relative_error"].as_f64().unwrap() < 0.2);
}

#[test]
fn documented_config_parses() {
    let guide = include_str!("../../../book/src/cli.md");
    let start = guide.find("```toml\n").unwrap() + "```toml\n".len();
    let text = &guide[start..start + guide[start..].find("```").unwrap()];
    let cfg = ExperimentConfig::from_toml_str(text).unwrap();
    assert_eq!(cfg.seed, 7);
    assert_eq!(cfg.search_space().unwrap().choices(), 4);
    assert_eq!(cfg.analysis.modes.len(), 3);
}

#[test]
fn lemma_curve_exact_column_decreases() {
    let dir = tempfile::tempdir().unwrap();
    let out = strictfair(&["lemma-curve", "--m", "2", "--n-max", "100"], Some(dir.path()));
    assert!(out.status.success());
    let mut reader = csv::Reader::from_path(dir.path().join("lemma-curve/lemma_curve.csv")).unwrap();
    let exact: Vec<f64> = reader
        .records()
        .map(|r| r.unwrap()[2].parse().unwrap())
        .collect();
    assert_eq!(exact.len(), 50);
    assert!(exact.windows(2).all(|w| w[1] < w[0]));
}

#[test]
fn unknown_mode_names_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let out = strictfair(
        &["train-supernet", "--mode", "greedy", "--out", dir.path().to_str().unwrap()],
        None,
    );
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("greedy"), "{stderr}");

    let text = quick(0).to_toml_string().replace("mode = \"strict_fair\"", "mode = \"greedy\"");
    let path = dir.path().join("c.toml");
    std::fs::write(&path, text).unwrap();
    let out = strictfair(&["profile", "--config", path.to_str().unwrap(), "--out", dir.path().to_str().unwrap()], None);
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("mode") && stderr.contains("greedy"), "{stderr}");
}
