use std::fs;
use std::path::Path;
use std::process::Command;

use invscape::commands;
use invscape::config::{ExperimentConfig, Overrides};

fn tiny(out: &Path) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::parse(
        r#"
        master_seed = 3
        seeds = [1, 2, 3]

        [env]
        products = 1
        stores = 2
        horizon = 4
        k_episodes = 5

        [scenario]
        kind = "increasing"

        [agent]
        steps = 300
        hidden = [8]
        batch_size = 16
        start_steps = 50
        update_after = 50
        eval_interval = 0
        eval_episodes = 1

        [compare]
        episodes = 2

        [landscape]
        resolution = 3
        batch = 20
        episodes = 4
        "#,
    )
    .unwrap();
    cfg.out_dir = out.to_path_buf();
    cfg
}

#[test]
fn train_writes_one_checkpoint_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(dir.path());
    let trained = commands::train(&cfg).unwrap();
    assert_eq!(trained.len(), 3);
    for s in [1, 2, 3] {
        assert!(commands::checkpoint_path(&cfg, s).is_file());
        assert!(dir.path().join("logs").join(format!("seed-{s}.csv")).is_file());
    }
}

#[test]
fn landscape_grid_has_r_squared_rows_and_center_matches() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(dir.path());
    commands::train(&cfg).unwrap();
    let report = commands::landscape(&cfg).unwrap();
    let text = fs::read_to_string(&report.path).unwrap();
    let headers: Vec<_> = text.lines().filter(|l| l.starts_with('#')).collect();
    assert!(headers[0].starts_with("# seed 3"));
    assert!(headers[1].starts_with("# batch 20 states"));
    assert!(headers[2].starts_with("# loss-def sac-actor alpha=0.2"));
    let rows: Vec<Vec<&str>> = text
        .lines()
        .filter(|l| !l.starts_with('#') && !l.starts_with("alpha"))
        .map(|l| l.split(',').collect())
        .collect();
    assert_eq!(rows.len(), 9);
    let center = rows.iter().find(|r| r[0] == "0" && r[1] == "0").unwrap();
    assert_eq!(
        center[2].parse::<f64>().unwrap().to_bits(),
        report.center_loss.to_bits()
    );
}

#[test]
fn compare_puts_the_baseline_first_and_needs_a_rival() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny(dir.path());
    cfg.compare.policies = vec!["mean".into(), "order-up-to".into()];
    let (names, costs) = commands::compare_costs(&cfg).unwrap();
    assert_eq!(names, ["mean", "order-up-to"]);
    assert_eq!(costs.len(), 3);

    cfg.compare.policies = vec!["mean".into()];
    assert!(commands::compare_costs(&cfg).is_err());
}

#[test]
fn compare_without_checkpoints_names_the_missing_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(dir.path());
    let err = format!("{:#}", commands::compare(&cfg).unwrap_err());
    assert!(err.contains("missing checkpoint"), "{err}");
}

#[test]
fn oracle_rejects_multi_store_instances() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(dir.path());
    let err = format!("{:#}", commands::oracle(&cfg).unwrap_err());
    assert!(err.contains("size error") && err.contains("1x2x1"), "{err}");
}

#[test]
fn scenario_export_writes_every_period() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(dir.path());
    let path = commands::scenario_export(&cfg).unwrap();
    let text = fs::read_to_string(path).unwrap();
    let data = text.lines().filter(|l| !l.starts_with('#')).count();
    assert!(data > 4, "{text}");
}

#[test]
fn unknown_scenario_fails_before_any_output() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("bad.toml");
    fs::write(&config, "[scenario]\nkind = \"bimodal\"\n").unwrap();
    let out = dir.path().join("out");
    let status = Command::new(env!("CARGO_BIN_EXE_invscape"))
        .args([
            "--config",
            config.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
            "train",
        ])
        .output()
        .unwrap();
    assert!(!status.status.success());
    assert!(String::from_utf8_lossy(&status.stderr).contains("bimodal"));
    assert!(!out.exists());
}

#[test]
fn cli_flags_override_the_config() {
    let cfg = ExperimentConfig::load(
        None,
        &Overrides {
            seed: Some(99),
            out: Some("elsewhere".into()),
            algo: Some("td3-nosmooth".into()),
            resolution: Some(7),
        },
    )
    .unwrap();
    assert_eq!(cfg.master_seed, 99);
    assert_eq!(cfg.out_dir, Path::new("elsewhere"));
    assert_eq!(cfg.agent.algorithm, "td3-nosmooth");
    assert_eq!(cfg.landscape.resolution, 7);
    assert!(ExperimentConfig::load(
        None,
        &Overrides {
            resolution: Some(4),
            ..Default::default()
        }
    )
    .is_err());
    assert!(ExperimentConfig::load(
        None,
        &Overrides {
            algo: Some("ppo".into()),
            ..Default::default()
        }
    )
    .is_err());
}
