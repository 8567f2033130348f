use std::path::Path;
use std::process::Command;

use dadrl::config::Config;
use dadrl::harness::{self, check_ablation, expected_state_dim};
use dadrl::metrics::{validate_ablation_csv, validate_run_dir};
use dadrl::rollout::{derive_seed, eval_seeds};
use dadrl::{Agent64, Variant};
use traffic_sim::trajectory::Record;
use traffic_sim::TrajectoryLog;

/// Tiny learner on the straight road: a few hundred steps run in seconds.
/// Replaces the command issued at `step` with a very different target speed.
fn perturb(log: &mut TrajectoryLog, step: usize) {
    for r in &mut log.records {
        if let Record::Command { step: s, target_speed, .. } = r {
            if *s == step {
                *target_speed = if *target_speed > 3.0 { 0.0 } else { 13.0 };
            }
        }
    }
}

fn tiny(scenario: &str, steps: usize) -> Config {
    let text = format!(
        r#"{{
          "encoder": {{"d": 8, "d_a": 8, "d_z": 12, "d_c": 6, "map_size": 16, "resolution": 2.0}},
          "rl": {{"batch_size": 8, "warmup_steps": 100, "hidden": [16, 16], "buffer_capacity": 1000}},
          "run": {{"scenario": "{scenario}", "total_steps": {steps}, "eval_episodes": 3, "eval_batch": 2,
                   "verbose": false}}
        }}"#
    );
    Config::from_json(&text).unwrap()
}

#[test]
fn derived_seeds_separate_streams_and_indices() {
    let a = derive_seed(0, "train", 0);
    assert_eq!(a, derive_seed(0, "train", 0));
    assert_ne!(a, derive_seed(0, "eval", 0));
    assert_ne!(a, derive_seed(0, "train", 1));
    assert_ne!(a, derive_seed(1, "train", 0));
    let seeds = eval_seeds(7, 50);
    let mut unique = seeds.clone();
    unique.sort_unstable();
    unique.dedup();
    assert_eq!(unique.len(), 50);
    assert_eq!(eval_seeds(7, 10), seeds[..10]);
}

#[test]
fn training_is_reproducible_with_one_worker() {
    let cfg = tiny("straight", 300);
    let a = harness::train(&cfg, None, None).unwrap();
    let b = harness::train(&cfg, None, None).unwrap();
    assert_eq!(a.env_steps, 300);
    assert!(a.agent.updates > 0);
    assert_eq!(a.log, b.log);
    assert_eq!(a.agent.log_alpha(), b.agent.log_alpha());
}

#[test]
fn warmup_steps_make_no_updates() {
    let cfg = tiny("straight", 99);
    let r = harness::train(&cfg, None, None).unwrap();
    assert_eq!(r.agent.updates, 0);
}

#[test]
fn evaluation_is_deterministic_and_keeps_seed_order() {
    let cfg = tiny("left_turn_t", 0);
    let agent = Agent64::new(&cfg.encoder, &cfg.rl, 3).unwrap();
    let a = harness::evaluate_agent(&cfg, &agent).unwrap();
    let b = harness::evaluate_agent(&cfg, &agent).unwrap();
    assert_eq!(a.len(), 3);
    assert_eq!(a.iter().map(|r| r.row.clone()).collect::<Vec<_>>(), b.iter().map(|r| r.row.clone()).collect::<Vec<_>>());
    let seeds: Vec<u64> = a.iter().map(|r| r.row.seed).collect();
    assert_eq!(seeds, eval_seeds(cfg.run.seed, 3));

    // Batch size does not change the episodes.
    let mut serial = cfg.clone();
    serial.run.eval_batch = 1;
    let c = harness::evaluate_agent(&serial, &agent).unwrap();
    assert_eq!(a.iter().map(|r| r.row.clone()).collect::<Vec<_>>(), c.iter().map(|r| r.row.clone()).collect::<Vec<_>>());
}

#[test]
fn checkpoint_written_by_training_evaluates_identically() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny("straight", 150);
    let r = harness::train(&cfg, None, Some(dir.path())).unwrap();
    let loaded = Agent64::load(&dir.path().join(harness::CHECKPOINT_FILE), &cfg.encoder).unwrap();
    let a = harness::evaluate_agent(&cfg, &r.agent).unwrap();
    let b = harness::evaluate_agent(&cfg, &loaded).unwrap();
    assert_eq!(a.iter().map(|r| r.row.clone()).collect::<Vec<_>>(), b.iter().map(|r| r.row.clone()).collect::<Vec<_>>());
    assert!(dir.path().join(harness::TRAIN_LOG_FILE).exists());
}

#[test]
fn recorded_episodes_replay_and_perturbations_are_caught() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny("left_turn_t", 0);
    let (path, report) = harness::replay(&cfg, None, None, dir.path()).unwrap();
    assert!(report.divergence.is_none());
    assert!(report.steps > 0);

    let mut log = TrajectoryLog::load(&path).unwrap();
    let k = report.steps / 2;
    perturb(&mut log, k);
    let bad = dir.path().join("perturbed.jsonl");
    log.save(&bad).unwrap();
    let (_, report) = harness::replay(&cfg, Some(&bad), None, dir.path()).unwrap();
    assert_eq!(report.divergence.unwrap().step, k + 1);
}

#[test]
fn ablation_variants_match_their_definitions() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny("straight", 120);
    let results = harness::ablate(&cfg, dir.path()).unwrap();
    assert_eq!(results.iter().map(|r| r.variant).collect::<Vec<_>>(), Variant::ALL.to_vec());
    for r in &results {
        let mut e = cfg.encoder.clone();
        e.variant = r.variant;
        assert_eq!(r.state_dim, expected_state_dim(&e));
    }
    assert!(check_ablation(&cfg.encoder, &results).is_empty());
    assert_eq!(validate_run_dir(dir.path()).unwrap().len(), 3);
    let rows = validate_ablation_csv(&std::fs::read_to_string(dir.path().join("ablation_summary.csv")).unwrap()).unwrap();
    assert_eq!(rows.len(), 3);

    let mut broken = results;
    broken[1].state_dim += 1;
    broken[2].attention_calls = 4;
    assert_eq!(check_ablation(&cfg.encoder, &broken).len(), 2);
}

fn dadrl(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_dadrl")).args(args).output().unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_string_lossy().into_owned()
}

#[test]
fn configuration_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let cases = [
        ("missing.json", None),
        ("syntax.json", Some("{ not json")),
        ("unknown.json", Some(r#"{"rl": {"learning_rate": 0.1}}"#)),
        ("invalid.json", Some(r#"{"rl": {"gamma": 1.5}}"#)),
        ("scenario.json", Some(r#"{"run": {"scenario": "nowhere.json"}}"#)),
    ];
    for (name, text) in cases {
        let path = match text {
            Some(t) => write(dir.path(), name, t),
            None => dir.path().join(name).to_string_lossy().into_owned(),
        };
        let out = dadrl(&["train", "--config", &path, "--out", dir.path().to_str().unwrap()]);
        assert_eq!(out.status.code(), Some(2), "{name}: {}", String::from_utf8_lossy(&out.stderr));
    }
}

#[test]
fn replay_divergence_exits_with_three() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.json", r#"{"run": {"scenario": "straight"}}"#);
    let out_dir = dir.path().to_str().unwrap();
    let ok = dadrl(&["replay", "--config", &cfg, "--out", out_dir]);
    assert_eq!(ok.status.code(), Some(0), "{}", String::from_utf8_lossy(&ok.stderr));

    let path = dir.path().join("trajectory.jsonl");
    let mut log = TrajectoryLog::load(&path).unwrap();
    perturb(&mut log, 3);
    log.save(&path).unwrap();
    let bad = dadrl(&["replay", "--config", &cfg, "--out", out_dir, "--log", path.to_str().unwrap()]);
    assert_eq!(bad.status.code(), Some(3));
}
