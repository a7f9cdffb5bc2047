use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use dreamflow::eval::read_logs;
use dreamflow::pipeline::{FsStore, Store};
use dreamflow::{FrameStack, PromptPool};

fn dreamflow(args: &[&str]) -> Output {
    let out = Command::new(env!("CARGO_BIN_EXE_dreamflow")).args(args).output().expect("binary runs");
    assert!(
        out.status.success(),
        "dreamflow {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn render_writes_previews_and_rasters() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("r");
    dreamflow(&["render", "--terrain", "hurdles", "--width", "40", "--height", "24", "--x", "0.5", "-o", s(&out)]);
    for f in ["depth.png", "depth.bin", "labels.png", "labels.bin", "disparity.png"] {
        assert!(out.join(f).is_file(), "{f}");
    }
    let (depth, header) = dreamflow::raster::read_depth(&mut fs::File::open(out.join("depth.bin")).unwrap()).unwrap();
    assert_eq!((depth.width, depth.height), (40, 24));
    assert_eq!(header.intrinsics.width, 40);
    assert!(fs::read_dir(&out).unwrap().any(|e| e.unwrap().file_name().to_string_lossy().starts_with("mask_")));
}

#[test]
fn stack_round_trips_through_its_directory() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("s");
    dreamflow(&["stack", "--terrain", "stairs", "--width", "48", "--height", "27", "--speed", "0.8", "--fill", "mark", "-o", s(&out)]);
    let stack = FrameStack::read_dir(&out).unwrap();
    assert_eq!(stack.len(), 7);
    assert_eq!(stack.timestamps_ms, vec![0, 20, 40, 60, 80, 100, 120]);
    assert_eq!(stack.provenance.scene_id, "stairs");
}

#[test]
fn prompt_pool_commands_share_one_directory() {
    let dir = tempfile::tempdir().unwrap();
    let pool = dir.path().join("pool");
    dreamflow(&["prompts", "init", "--pool", s(&pool)]);
    dreamflow(&["prompts", "generate", "--pool", s(&pool), "--site", "hurdles"]);
    let sampled = stdout(&dreamflow(&["prompts", "sample", "--pool", s(&pool), "-n", "5"]));
    assert_eq!(sampled.lines().count(), 5);
    let loaded = PromptPool::load(&pool).unwrap();
    assert!(loaded.len() >= 23);
    assert_eq!(loaded.usage_counts().values().sum::<u64>(), 5);
    let meta = stdout(&dreamflow(&["prompts", "meta", "--site", "stairs"]));
    assert!(meta.contains("stairs"));
}

#[test]
fn eval_reads_back_the_logs_it_wrote() {
    let dir = tempfile::tempdir().unwrap();
    let logs = dir.path().join("runs.jsonl");
    let synth = stdout(&dreamflow(&["eval", "--synthetic", "30", "--seed", "4", "--write-synthetic", s(&logs), "--json"]));
    let from_file = stdout(&dreamflow(&["eval", s(&logs), "--json"]));
    let a: serde_json::Value = serde_json::from_str(&synth).unwrap();
    let b: serde_json::Value = serde_json::from_str(&from_file).unwrap();
    assert_eq!(a["rows"][0]["fgr"], b["rows"][0]["fgr"]);
    assert_eq!(a["rows"][0]["x_displacement"], b["rows"][0]["x_displacement"]);
    assert_eq!(read_logs(std::io::BufReader::new(fs::File::open(&logs).unwrap())).unwrap().len(), 30);
}

#[test]
fn eval_without_input_is_an_error() {
    let out = Command::new(env!("CARGO_BIN_EXE_dreamflow")).arg("eval").output().unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("nothing to evaluate"));
}

#[test]
fn bench_json_has_both_speedups() {
    let out = stdout(&dreamflow(&["bench", "--width", "32", "--height", "18", "--delay-ms", "10", "--json"]));
    let v: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert!(v["measured_speedup"].as_f64().unwrap() > 0.0);
    assert!(v["model_speedup"].as_f64().unwrap() > 0.0);
    assert_eq!(v["config"]["delay_ms"], 10.0);
}

fn small_config(dir: &Path) -> std::path::PathBuf {
    let path = dir.join("c.toml");
    fs::write(
        &path,
        format!(
            "[task]\ntask = \"hurdles\"\nterrain = {{ kind = \"hurdles\", count = 3 }}\n\
             camera = {{ width = 40, height = 24 }}\ntrajectories = {{ count = 3, steps = 16 }}\n\
             [paths]\nstore = \"{}\"\n",
            s(&dir.join("store"))
        ),
    )
    .unwrap();
    path
}

#[test]
fn offline_pipeline_fills_the_store_from_a_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let report = dir.path().join("report.json");
    dreamflow(&["-c", s(&cfg), "pipeline", "offline", "--report", s(&report)]);
    let r: serde_json::Value = serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(r["task"], "hurdles");
    assert_eq!(r["trajectories"], 3);
    // 16 frames per trajectory make 3 segments
    assert_eq!(r["stacks"], 9);
    let store = FsStore::open(dir.path().join("store")).unwrap();
    assert!(!store.keys().unwrap().is_empty());
}

#[test]
fn onpolicy_flags_override_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let other = dir.path().join("other");
    let report = dir.path().join("report.json");
    dreamflow(&["-c", s(&cfg), "pipeline", "onpolicy", "--store", s(&other), "--trajectories", "2", "--report", s(&report)]);
    let r: serde_json::Value = serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(r["trajectories"], 2);
    assert_eq!(r["rpc_calls"], 6);
    assert!(other.is_dir());
    assert!(!dir.path().join("store").exists());
}

#[test]
fn external_broker_and_weavers_serve_an_offline_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let mut broker = Command::new(env!("CARGO_BIN_EXE_dreamflow"))
        .args(["pipeline", "broker", "--listen", "127.0.0.1:0"])
        .stdout(std::process::Stdio::piped())
        .spawn()
        .unwrap();
    let mut line = String::new();
    std::io::BufRead::read_line(&mut std::io::BufReader::new(broker.stdout.take().unwrap()), &mut line).unwrap();
    let addr = line.trim().rsplit(' ').next().unwrap().to_string();
    let mut weaver = Command::new(env!("CARGO_BIN_EXE_dreamflow"))
        .args(["-c", s(&cfg), "pipeline", "weaver", "--broker", &addr, "--weavers", "2"])
        .spawn()
        .unwrap();
    let result = Command::new(env!("CARGO_BIN_EXE_dreamflow"))
        .args(["-c", s(&cfg), "pipeline", "offline", "--broker", &addr])
        .output()
        .unwrap();
    weaver.kill().ok();
    broker.kill().ok();
    weaver.wait().ok();
    broker.wait().ok();
    assert!(result.status.success(), "{}", String::from_utf8_lossy(&result.stderr));
    assert!(String::from_utf8_lossy(&result.stdout).contains("9 stacks"));
}

#[test]
fn unknown_config_keys_fail_loudly() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    fs::write(&path, "[task]\ncamera = { widht = 3 }\n").unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_dreamflow")).args(["-c", s(&path), "config"]).output().unwrap();
    assert!(!out.status.success());
}
