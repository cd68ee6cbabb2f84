use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

fn crn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_crn"))
        .args(args)
        .env_remove("CRN_OUT")
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn text(out: &Output) -> String {
    format!("{}{}", String::from_utf8_lossy(&out.stdout), String::from_utf8_lossy(&out.stderr))
}

#[test]
fn help_lists_every_stage() {
    let out = crn(&["--help"]);
    assert_eq!(out.status.code(), Some(0));
    let help = text(&out);
    for cmd in ["ingest", "indicators", "select-features", "train-dbn", "train-agent", "backtest", "report"] {
        assert!(help.contains(cmd), "{cmd} missing from:\n{help}");
    }
    let out = crn(&["report", "--help"]);
    assert_eq!(out.status.code(), Some(0));
    assert!(text(&out).contains("--config"));
}

#[test]
fn unknown_subcommand_is_a_usage_error() {
    assert_eq!(crn(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(crn(&[]).status.code(), Some(2));
}

#[test]
fn config_errors_exit_1_with_location() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "coins = [\"ETH\"]\n\n[env]\nfee_rate = \"high\"\n").unwrap();
    let out = crn(&["ingest", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    let msg = text(&out);
    assert!(msg.contains("bad.toml") && msg.contains("line 4"), "{msg}");

    let missing = crn(&["ingest", "--config", dir.path().join("nope.toml").to_str().unwrap()]);
    assert_eq!(missing.status.code(), Some(1));
}

#[test]
fn stages_require_their_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = fixtures().join("fixture.toml");
    let out = crn(&["train-dbn", "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(text(&out).contains("run the earlier stages"), "{}", text(&out));
}

#[test]
fn fixture_pipeline_runs_stage_by_stage() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = fixtures().join("fixture.toml");
    let base = ["--config", cfg.to_str().unwrap(), "--seed", "1"];
    for stage in ["ingest", "indicators", "select-features", "train-dbn", "train-agent", "backtest", "report"] {
        let out = Command::new(env!("CARGO_BIN_EXE_crn"))
            .arg(stage)
            .args(base)
            .env("CRN_OUT", dir.path())
            .env("RUST_LOG", "warn")
            .output()
            .unwrap();
        assert_eq!(out.status.code(), Some(0), "{stage}: {}", text(&out));
        if stage == "select-features" {
            assert!(text(&out).contains("REGIME\tselected"), "{}", text(&out));
        }
        if stage == "report" {
            assert!(text(&out).contains("Average"), "{}", text(&out));
        }
    }
    let report = dir.path().join("report");
    for f in ["report.json", "roi_table.csv", "roi_table.txt", "decisions_table.csv", "decisions_table.txt"] {
        assert!(report.join(f).is_file(), "{f}");
    }
    assert!(dir.path().join("backtest/REGIME/CRN_PPO_seed1_trades.csv").is_file());
    assert!(!dir.path().join("backtest/REGIME/CRN_PPO_seed2_trades.csv").exists());
    assert!(dir.path().join("metadata.json").is_file());
}
