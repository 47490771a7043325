use altruist_cli::error::{EXIT_ARTIFACT, EXIT_CONFIG, EXIT_OK};
use altruist_cli::{run, Cli, RunConfig};
use altruist_marl::MetricsReport;
use altruist_nn::load_checkpoint;
use clap::Parser;
use std::path::Path;
use std::process::Command;

fn cli(args: &[&str]) -> i32 {
    let argv = std::iter::once("altruist").chain(args.iter().copied());
    run(Cli::try_parse_from(argv).expect("arguments parse"))
}

fn read(p: &Path) -> String {
    std::fs::read_to_string(p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

fn digest_line(text: &str) -> &str {
    text.lines().next().unwrap().strip_prefix("# config_sha256=").expect("digest comment first")
}

fn snapshot_digest(dir: &Path) -> String {
    let text = read(&dir.join("config.toml"));
    let first = text.lines().next().unwrap();
    first.trim_start_matches("# config_sha256 = ").trim_matches('"').to_string()
}

/// Trains a tiny desk run into `dir` and returns the path of its final checkpoint.
fn train_small(dir: &Path, episodes: usize, extra: &[&str]) -> std::path::PathBuf {
    let out = dir.to_str().unwrap();
    let n = format!("training.episodes={episodes}");
    let mut args = vec!["train", "--preset", "desk", "--out", out, "--override", &n, "--override", "output.log_every=0"];
    for e in extra {
        args.extend(["--override", e]);
    }
    assert_eq!(cli(&args), EXIT_OK);
    dir.join("final.ckpt")
}

#[test]
fn train_writes_curves_checkpoints_and_snapshot() {
    let tmp = tempfile::tempdir().unwrap();
    let ckpt = train_small(tmp.path(), 10, &["output.checkpoint_every=4"]);
    let curves = read(&tmp.path().join("curves.csv"));
    let digest = snapshot_digest(tmp.path());
    assert_eq!(digest_line(&curves), digest);
    // comment, header, one row per episode
    assert_eq!(curves.lines().count(), 12);
    assert!(curves.lines().nth(1).unwrap().starts_with("episode,seed,learner"));
    assert!(tmp.path().join("checkpoints/episode_4.ckpt").is_file());
    assert!(tmp.path().join("checkpoints/episode_8.ckpt").is_file());

    let cfg = RunConfig::resolve(None, Some(&tmp.path().join("config.toml")), &[]).unwrap();
    assert_eq!(cfg.digest(), digest, "snapshot must reproduce its own digest");
    let (label, _) = load_checkpoint::<f32>(&ckpt, &cfg.network).unwrap();
    assert_eq!(label, format!("desk; config_sha256={digest}"));
}

#[test]
fn overrides_are_reflected_in_the_snapshot() {
    let tmp = tempfile::tempdir().unwrap();
    train_small(tmp.path(), 1, &["training.gamma=0.9", "reward.phi=0.5"]);
    let cfg = RunConfig::resolve(None, Some(&tmp.path().join("config.toml")), &[]).unwrap();
    assert_eq!(cfg.training.gamma, 0.9);
    assert_ne!(snapshot_digest(tmp.path()), RunConfig::preset(altruist_cli::Preset::Desk).digest());
}

#[test]
fn out_of_range_phi_exits_with_config_code() {
    let tmp = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_altruist"))
        .args(["train", "--out", tmp.path().to_str().unwrap(), "--override", "reward.phi=6.283185307179586"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(EXIT_CONFIG));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("phi"), "{stderr}");
    assert!(!tmp.path().join("curves.csv").exists());
}

#[test]
fn evaluate_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("ev");
    let out = out.to_str().unwrap();
    assert_eq!(cli(&["evaluate", "--out", out, "--checkpoint", "/nonexistent/x.ckpt"]), EXIT_ARTIFACT);
    assert_eq!(cli(&["evaluate", "--out", out, "--policy", "idle", "--episodes", "0"]), EXIT_CONFIG);

    let ckpt = train_small(&tmp.path().join("tr"), 1, &[]);
    let mut bytes = std::fs::read(&ckpt).unwrap();
    let last = bytes.len() - 1;
    bytes[last] ^= 0x55;
    let bad = tmp.path().join("bad.ckpt");
    std::fs::write(&bad, bytes).unwrap();
    assert_eq!(cli(&["evaluate", "--out", out, "--checkpoint", bad.to_str().unwrap(), "--episodes", "1"]), EXIT_ARTIFACT);
    // a checkpoint of the other preset has a different shape
    assert_eq!(
        cli(&["evaluate", "--preset", "paper", "--out", out, "--checkpoint", ckpt.to_str().unwrap(), "--episodes", "1"]),
        EXIT_ARTIFACT
    );
}

#[test]
fn metrics_json_and_table_agree() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().to_str().unwrap();
    assert_eq!(cli(&["evaluate", "--out", out, "--policy", "random", "--episodes", "6", "--seed", "5"]), EXIT_OK);
    let json: serde_json::Value = serde_json::from_str(&read(&tmp.path().join("metrics.json"))).unwrap();
    let report: MetricsReport = serde_json::from_value(json["metrics"].clone()).unwrap();
    assert_eq!(report.episodes, 6);
    assert_eq!(json["seed"], 5);
    let table = read(&tmp.path().join("metrics.txt"));
    assert_eq!(digest_line(&table), json["config_sha256"].as_str().unwrap());
    let body: String = table.lines().filter(|l| !l.starts_with('#')).map(|l| format!("{l}\n")).collect();
    assert_eq!(body, report.to_table());
}

#[test]
fn rollout_is_deterministic_and_complete() {
    let tmp = tempfile::tempdir().unwrap();
    let ckpt = train_small(&tmp.path().join("tr"), 1, &[]);
    let run_to = |name: &str| {
        let dir = tmp.path().join(name);
        let code = cli(&[
            "rollout",
            "--out",
            dir.to_str().unwrap(),
            "--checkpoint",
            ckpt.to_str().unwrap(),
            "--seed",
            "9",
            "--frames",
        ]);
        assert_eq!(code, EXIT_OK);
        dir
    };
    let a = run_to("a");
    let b = run_to("b");
    for f in ["trace.jsonl", "speeds.csv"] {
        assert_eq!(read(&a.join(f)), read(&b.join(f)), "{f}");
    }
    let trace = read(&a.join("trace.jsonl"));
    let header: serde_json::Value = serde_json::from_str(trace.lines().next().unwrap()).unwrap();
    assert_eq!(header["seed"], 9);
    let records: Vec<serde_json::Value> = trace.lines().skip(1).map(|l| serde_json::from_str(l).unwrap()).collect();
    let vehicles = records[0]["vehicles"].as_array().unwrap().len();
    let cfg = RunConfig::preset(altruist_cli::Preset::Desk);
    assert_eq!(vehicles, cfg.scenario.n_av + cfg.scenario.n_hv + 1);
    let speeds = read(&a.join("speeds.csv"));
    assert_eq!(digest_line(&speeds), header["config_sha256"].as_str().unwrap());
    assert_eq!(speeds.lines().count(), 2 + records.len() * vehicles);
    assert_eq!(records[0]["step"], 0);
    assert!(std::fs::read_dir(a.join("frames")).unwrap().count() >= 4);
}

#[test]
fn compare_identical_checkpoints_gives_zero_deltas() {
    let tmp = tempfile::tempdir().unwrap();
    let ckpt = train_small(&tmp.path().join("tr"), 1, &[]);
    let c = ckpt.to_str().unwrap();
    let out = tmp.path().join("cmp");
    let o = out.to_str().unwrap();
    assert_eq!(cli(&["compare", "--out", o, "--egoistic", c, "--altruistic", c, "--episodes", "3"]), EXIT_OK);
    let json: serde_json::Value = serde_json::from_str(&read(&out.join("compare.json"))).unwrap();
    for (k, v) in json["deltas"].as_object().unwrap() {
        assert_eq!(v.as_f64(), Some(0.0), "{k}");
    }
    assert_eq!(json["egoistic"], json["altruistic"]);
    assert_eq!(
        cli(&["compare", "--out", o, "--egoistic", c, "--altruistic", c, "--egoistic-seed", "1", "--altruistic-seed", "2"]),
        EXIT_CONFIG
    );
    assert_eq!(
        cli(&["compare", "--out", o, "--egoistic", c, "--altruistic", c, "--egoistic-seed", "4", "--altruistic-seed", "4", "--episodes", "1"]),
        EXIT_OK
    );
}

/// AVs that never yield leave the merger without a gap in the desk stream.
#[test]
fn desk_idle_baseline_leaves_many_mergers_stuck() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().to_str().unwrap();
    assert_eq!(cli(&["evaluate", "--out", out, "--policy", "idle", "--episodes", "200"]), EXIT_OK);
    let json: serde_json::Value = serde_json::from_str(&read(&tmp.path().join("metrics.json"))).unwrap();
    let m = &json["metrics"];
    assert!(m["stuck_pct"].as_f64().unwrap() > 35.0, "{m}");
    assert!(m["merge_success_pct"].as_f64().unwrap() < 65.0, "{m}");
}
