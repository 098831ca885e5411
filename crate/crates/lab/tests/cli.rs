use std::path::Path;
use std::process::{Command, Output};

use una_core::instances::{prefer_token_three, separable_four};
use una_core::Beta;
use una_lab::config::RunConfig;
use una_lab::run::{RunManifest, METRICS_HEADER};
use una_lab::{checkpoint, dataset, tables};

fn una_lab(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_una-lab")).args(args).current_dir(dir).env("UNA_LAB_THREADS", "2").output().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

/// Temp dir with `pairs.jsonl` (separable-4) and a dpo config.
fn workspace(config: &str) -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    dataset::write_jsonl(&dir.path().join("pairs.jsonl"), &separable_four(3).unwrap().records).unwrap();
    std::fs::write(dir.path().join("run.cfg"), config).unwrap();
    dir
}

const DPO: &str = "loss_kind = dpo\nbeta = 0.1\nstep_size = 1\nsteps = 120\nbatch_size = 6\neval_every = 10\n";

fn train(dir: &Path, out: &str) -> Output {
    una_lab(dir, &["train", "--config", "run.cfg", "--data", "pairs.jsonl", "--out", out])
}

#[test]
fn print_defaults_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let o = una_lab(dir.path(), &["train", "--print-defaults"]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(RunConfig::parse(&stdout(&o)).unwrap(), RunConfig::parse("").unwrap());
}

#[test]
fn pairwise_run_writes_artifacts() {
    let ws = workspace(DPO);
    let o = train(ws.path(), "run");
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let run = ws.path().join("run");
    let csv = std::fs::read_to_string(run.join("metrics.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some(METRICS_HEADER));
    assert_eq!(lines.count(), 120 / 10 + 1);
    let m = RunManifest::read(&run).unwrap();
    assert_eq!(m.status, "complete");
    assert_eq!(m.seed, 0);
    assert_eq!(m.dataset_hash, format!("{:016x}", dataset::content_hash(&separable_four(3).unwrap().records)));
    assert!(m.finished_unix_ms.unwrap() >= m.started_unix_ms);
    for file in m.artifacts.values() {
        assert!(run.join(file).is_file(), "{file}");
    }
    let p = checkpoint::load(&run.join("policy.unap")).unwrap();
    assert_eq!(p.num_prompts(), 4);
    assert_eq!(p.vocab().size(), 4);
}

#[test]
fn seed_flag_overrides_config() {
    let ws = workspace(DPO);
    let o = una_lab(ws.path(), &["train", "--config", "run.cfg", "--data", "pairs.jsonl", "--out", "run", "--seed", "9"]);
    assert_eq!(o.status.code(), Some(0));
    let m = RunManifest::read(&ws.path().join("run")).unwrap();
    assert_eq!(m.seed, 9);
    assert_eq!(m.config["seed"], "9");
}

#[test]
fn kind_mismatch_is_a_validation_error() {
    let ws = workspace(&DPO.replace("dpo", "una_score"));
    let o = train(ws.path(), "run");
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(stderr(&o).lines().count(), 1);
    assert!(stderr(&o).contains("kind mismatch"));
}

#[test]
fn reruns_are_byte_identical() {
    let ws = workspace(DPO);
    assert!(train(ws.path(), "a").status.success());
    assert!(train(ws.path(), "b").status.success());
    let read = |run: &str, f: &str| std::fs::read(ws.path().join(run).join(f)).unwrap();
    for f in ["metrics.csv", "aux.csv", "policy.unap", "policy.json"] {
        assert_eq!(read("a", f), read("b", f), "{f}");
    }
    let before = read("a", "metrics.csv");
    std::fs::remove_dir_all(ws.path().join("a")).unwrap();
    assert!(train(ws.path(), "a").status.success());
    assert_eq!(read("a", "metrics.csv"), before);
}

#[test]
fn validation_errors_exit_two() {
    let ws = workspace("bogus = 1\n");
    let o = train(ws.path(), "run");
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("unknown key"));
    let ws = workspace(DPO);
    let o = una_lab(ws.path(), &["train", "--config", "run.cfg", "--data", "missing.jsonl", "--out", "run"]);
    assert_eq!(o.status.code(), Some(2));
    let o = una_lab(ws.path(), &["train", "--config", "run.cfg", "--out", "run"]);
    assert_eq!(o.status.code(), Some(2));
    let o = una_lab(ws.path(), &["verify", "--suite", "everything"]);
    assert_eq!(o.status.code(), Some(2));
    let o = una_lab(ws.path(), &["frobnicate"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn unwritable_output_is_a_runtime_error() {
    let ws = workspace(DPO);
    std::fs::write(ws.path().join("blocker"), "").unwrap();
    let o = train(ws.path(), "blocker/run");
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
}

#[test]
fn corrupt_reference_checkpoint_is_rejected() {
    let ws = workspace(&format!("{DPO}reference = ref.unap\n"));
    std::fs::write(ws.path().join("ref.unap"), b"not a checkpoint").unwrap();
    let o = train(ws.path(), "run");
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("ref.unap"));
}

#[test]
fn reference_checkpoint_is_used() {
    let ws = workspace(DPO);
    assert!(train(ws.path(), "first").status.success());
    std::fs::write(ws.path().join("second.cfg"), format!("{DPO}reference = first/policy.unap\n")).unwrap();
    let o = una_lab(ws.path(), &["train", "--config", "second.cfg", "--data", "pairs.jsonl", "--out", "second"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let csv = std::fs::read_to_string(ws.path().join("second/metrics.csv")).unwrap();
    // the run starts at its reference
    assert!(csv.lines().nth(1).unwrap().starts_with("0,0.6931471805599453,0,"));
}

#[test]
fn verify_suites() {
    let dir = tempfile::tempdir().unwrap();
    let o = una_lab(dir.path(), &["verify", "--suite", "proofs", "--seed", "17"]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    assert!(stdout(&o).contains("log_sum_inequality_min_slack"));
    let o = una_lab(dir.path(), &["verify", "--suite", "equivalence"]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(stdout(&o).lines().filter(|l| l.starts_with("equivalence") && l.ends_with("PASS")).count(), 2);
    let o = una_lab(dir.path(), &["verify", "--suite", "gradients"]);
    assert_eq!(o.status.code(), Some(0));
    let table = stdout(&o);
    for kind in ["tabular", "parametric"] {
        for loss in ["dpo", "una_pair_shaped", "una_binary_mse", "una_binary_bce", "una_score"] {
            assert!(table.lines().any(|l| l.contains(&format!("{loss}/{kind}")) && l.ends_with("PASS")), "{loss}/{kind}");
        }
    }
    assert!(!dir.path().join("verify-replays").exists());
}

#[test]
fn failing_property_exits_one_with_replay() {
    let dir = tempfile::tempdir().unwrap();
    let o = una_lab(dir.path(), &["verify", "--suite", "gradients", "--tolerance-scale", "0", "--out", "replays"]);
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    let first = err.lines().next().unwrap();
    assert!(first.starts_with("FAIL gradients/"));
    let path = first.rsplit(' ').next().unwrap();
    let replay: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join(path)).unwrap()).unwrap();
    assert_eq!(replay["suite"], "gradients");
    assert_eq!(replay["seed"], 17);
    assert!(replay["worst_case"]["seed"].is_u64());
}

#[test]
fn verify_output_is_independent_of_thread_count() {
    let dir = tempfile::tempdir().unwrap();
    let run = |threads: &str| {
        Command::new(env!("CARGO_BIN_EXE_una-lab")).args(["verify", "--suite", "gradients"]).current_dir(dir.path()).env("UNA_LAB_THREADS", threads).output().unwrap().stdout
    };
    assert_eq!(run("1"), run("3"));
}

#[test]
fn report_summarizes_and_compares() {
    let ws = workspace(DPO);
    assert!(train(ws.path(), "b01").status.success());
    std::fs::write(ws.path().join("b05.cfg"), DPO.replace("beta = 0.1", "beta = 0.05")).unwrap();
    let o = una_lab(ws.path(), &["train", "--config", "b05.cfg", "--data", "pairs.jsonl", "--out", "b05"]);
    assert!(o.status.success());

    let o = una_lab(ws.path(), &["report", "b01"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let summary: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(ws.path().join("b01/summary.json")).unwrap()).unwrap();
    let manifest: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(ws.path().join("b01/manifest.json")).unwrap()).unwrap();
    for (k, v) in manifest.as_object().unwrap() {
        assert_eq!(&summary[k], v, "{k}");
    }
    for k in ["final_loss", "final_kl", "final_mean_explicit_reward", "margin_start", "margin_end"] {
        assert!(summary.get(k).is_some(), "{k}");
    }
    assert_eq!(summary["margin_start"], 0.0);
    assert!(summary["margin_end"].as_f64().unwrap() > 0.0);
    let long = std::fs::read_to_string(ws.path().join("b01/long.csv")).unwrap();
    assert_eq!(long.lines().next(), Some("step,metric,value"));
    assert!(long.lines().any(|l| l.starts_with("120,kl,")));

    let o = una_lab(ws.path(), &["report", "b01", "b05", "--out", "cmp.csv"]);
    assert_eq!(o.status.code(), Some(0));
    let cmp = std::fs::read_to_string(ws.path().join("cmp.csv")).unwrap();
    let rows: Vec<&str> = cmp.lines().collect();
    assert_eq!(rows.len(), 3);
    assert!(rows[0].starts_with("beta,run,"));
    assert!(rows[1].starts_with("0.05,b05,dpo,"));
    assert!(rows[2].starts_with("0.1,b01,dpo,"));
}

#[test]
fn report_on_empty_dir_is_missing_artifact() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::create_dir(dir.path().join("empty")).unwrap();
    let o = una_lab(dir.path(), &["report", "empty"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("missing artifact"));
}

#[test]
fn online_runs_share_the_metrics_schema() {
    let dir = tempfile::tempdir().unwrap();
    let inst = prefer_token_three(Beta::new(0.3).unwrap()).unwrap();
    tables::save_reward_table(&dir.path().join("rewards.json"), inst.rewards()).unwrap();
    let mut csvs = Vec::new();
    for kind in ["una_online_reward", "pg_baseline"] {
        let cfg = format!("loss_kind = {kind}\nbeta = 0.3\nstep_size = 2\nsteps = 50\nbatch_size = 16\neval_every = 10\nreference = random\nreference_seed = 33\nvariance_probe = 2\n");
        std::fs::write(dir.path().join(format!("{kind}.cfg")), cfg).unwrap();
        let o = una_lab(dir.path(), &["train", "--config", &format!("{kind}.cfg"), "--data", "rewards.json", "--out", kind]);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        csvs.push(std::fs::read_to_string(dir.path().join(kind).join("metrics.csv")).unwrap());
    }
    let steps = |csv: &str| csv.lines().map(|l| l.split(',').next().unwrap().to_string()).collect::<Vec<_>>();
    assert_eq!(steps(&csvs[0]), steps(&csvs[1]));
    assert_eq!(csvs[0].lines().count(), 50 / 10 + 2);
    let m = RunManifest::read(&dir.path().join("una_online_reward")).unwrap();
    assert_eq!(m.config["compare_as"], "reward_mse");
}

#[test]
fn online_run_with_partial_table_fails_validation() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("rewards.json"), r#"{"entries":[{"prompt":0,"tokens":[],"reward":1.0},{"prompt":0,"tokens":[1],"reward":0.0}]}"#).unwrap();
    std::fs::write(dir.path().join("run.cfg"), "loss_kind = una_online_score\nvocab_size = 3\nsteps = 5\n").unwrap();
    let o = una_lab(dir.path(), &["train", "--config", "run.cfg", "--data", "rewards.json", "--out", "run"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("no reward entry"));
}

#[test]
fn reward_model_run() {
    let ws = workspace("loss_kind = rm_bt\nstep_size = 0.5\nsteps = 200\nbatch_size = 8\neval_every = 50\n");
    let o = train(ws.path(), "rm");
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let m = RunManifest::read(&ws.path().join("rm")).unwrap();
    assert!(m.artifacts.contains_key("reward_model"));
    assert!(!m.artifacts.contains_key("checkpoint"));
    let model: tables::BtModelJson = serde_json::from_str(&std::fs::read_to_string(ws.path().join("rm/reward_model.json")).unwrap()).unwrap();
    assert_eq!((model.num_prompts, model.vocab_size), (4, 4));
    let aux = std::fs::read_to_string(ws.path().join("rm/aux.csv")).unwrap();
    let final_acc: f64 = aux.lines().last().unwrap().split(',').nth(1).unwrap().parse().unwrap();
    assert!(final_acc > 0.9);
}

#[test]
fn ingest_command() {
    let ws = workspace(DPO);
    let o = una_lab(ws.path(), &["ingest", "--data", "pairs.jsonl", "--out", "canonical.jsonl"]);
    assert_eq!(o.status.code(), Some(0));
    let s: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(s["pairwise"], 24);
    let again = una_lab(ws.path(), &["ingest", "--data", "canonical.jsonl"]);
    let t: serde_json::Value = serde_json::from_str(&stdout(&again)).unwrap();
    assert_eq!(s["content_hash"], t["content_hash"]);

    std::fs::write(ws.path().join("bad.jsonl"), "{\"kind\":\"scalar\",\"prompt\":0,\"response\":[1],\"raw_score\":3}\n{\"kind\":\"scalar\",\"prompt\":0,\"response\":[1],\"raw_score\":6}\n").unwrap();
    let o = una_lab(ws.path(), &["ingest", "--data", "bad.jsonl"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("line 2"));
    std::fs::write(ws.path().join("empty.jsonl"), "\n").unwrap();
    let o = una_lab(ws.path(), &["ingest", "--data", "empty.jsonl"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("empty file"));
}
