use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = "\
scenario.segments = 2
scenario.steps_per_segment = 200
scenario.window = 10
scenario.stride = 30
sim.substeps = 20
decoder.hidden = 16
";

fn relinfer(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_relinfer"))
        .args(args)
        .env_remove("RELINFER_OUT_DIR")
        .output()
        .expect("binary runs")
}

fn small_config(dir: &Path) -> String {
    let path = dir.join("small.conf");
    std::fs::write(&path, SMALL).unwrap();
    path.to_str().unwrap().to_string()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

#[test]
fn desk_run_writes_every_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let conf = small_config(dir.path());
    let out_dir = dir.path().join("run");
    let out = relinfer(&["run", "--desk-scale", "--config", &conf, "--out", out_dir.to_str().unwrap()]);
    assert!(out.status.success(), "{}", stderr(&out));
    for file in ["config.txt", "metrics.csv", "summary.json", "checkpoint.json"] {
        assert!(out_dir.join(file).is_file(), "missing {file}");
    }
    for k in 0..2 {
        assert!(out_dir.join(format!("adjacency/segment_{k:03}_end.json")).is_file());
    }
    let csv = std::fs::read_to_string(out_dir.join("metrics.csv")).unwrap();
    // 200 steps, window 10, stride 30: (200 - 20) / 30 + 1 = 7 samples per segment
    assert_eq!(csv.lines().count(), 1 + 14);
    assert!(csv.starts_with("iteration,segment,accuracy"));
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["iterations"], 14);
    assert_eq!(summary["segments"].as_array().unwrap().len(), 2);
}

#[test]
fn same_seed_gives_identical_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let conf = small_config(dir.path());
    let run = |name: &str, seed: &str| {
        let out_dir = dir.path().join(name);
        let out = relinfer(&["run", "--desk-scale", "--config", &conf, "--seed", seed, "--out", out_dir.to_str().unwrap()]);
        assert!(out.status.success(), "{}", stderr(&out));
        std::fs::read(out_dir.join("metrics.csv")).unwrap()
    };
    let a = run("a", "7");
    let b = run("b", "7");
    let c = run("c", "8");
    assert_eq!(a, b);
    assert_ne!(a, c);
}

#[test]
fn misspelled_key_is_reported_with_suggestion() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.conf");
    std::fs::write(&path, "decoder.hiden = 8\n").unwrap();
    let out = relinfer(&["run", "--config", path.to_str().unwrap(), "--dump-config"]);
    assert_eq!(out.status.code(), Some(1));
    let err = stderr(&out);
    assert!(err.contains("line 1") && err.contains("decoder.hidden"), "{err}");
}

#[test]
fn gen_data_matches_manifest_and_ingests_back() {
    let dir = tempfile::tempdir().unwrap();
    let conf = small_config(dir.path());
    let data = dir.path().join("data");
    let gen = |out: &Path| relinfer(&["gen-data", "--desk-scale", "--config", &conf, "--out", out.to_str().unwrap()]);
    let out = gen(&data);
    assert!(out.status.success(), "{}", stderr(&out));
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(data.join("manifest.json")).unwrap()).unwrap();
    let segments = manifest["segments"].as_array().unwrap();
    assert_eq!(segments.len(), 2);
    for seg in segments {
        let file = data.join(seg["file"].as_str().unwrap());
        let text = std::fs::read_to_string(&file).unwrap();
        assert_eq!(text.lines().count(), 1 + 200);
        let header: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
        assert_eq!(header["edges"], seg["edges"]);
        assert_eq!(header["system_tag"], seg["system"]);
    }

    let again = dir.path().join("again");
    assert!(gen(&again).status.success());
    for seg in segments {
        let f = seg["file"].as_str().unwrap();
        assert_eq!(std::fs::read(data.join(f)).unwrap(), std::fs::read(again.join(f)).unwrap());
    }

    // ingesting the dumped files reproduces the simulated run
    let sim_run = dir.path().join("sim");
    let ingest_run = dir.path().join("ingest");
    let a = relinfer(&["run", "--desk-scale", "--config", &conf, "--out", sim_run.to_str().unwrap()]);
    assert!(a.status.success(), "{}", stderr(&a));
    let seg0 = data.join("segment_000.jsonl");
    let seg1 = data.join("segment_001.jsonl");
    let b = relinfer(&[
        "run",
        "--desk-scale",
        "--config",
        &conf,
        "--out",
        ingest_run.to_str().unwrap(),
        "--ingest",
        seg0.to_str().unwrap(),
        "--ingest",
        seg1.to_str().unwrap(),
    ]);
    assert!(b.status.success(), "{}", stderr(&b));
    assert_eq!(
        std::fs::read(sim_run.join("metrics.csv")).unwrap(),
        std::fs::read(ingest_run.join("metrics.csv")).unwrap()
    );
}

#[test]
fn malformed_ingest_line_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let conf = small_config(dir.path());
    let data = dir.path().join("data");
    assert!(relinfer(&["gen-data", "--desk-scale", "--config", &conf, "--out", data.to_str().unwrap()])
        .status
        .success());
    let file = data.join("segment_000.jsonl");
    let text = std::fs::read_to_string(&file).unwrap();
    let mut lines: Vec<&str> = text.lines().collect();
    lines[4] = "{\"t\": 3, \"agents\": [[1, 2]]}";
    std::fs::write(&file, lines.join("\n")).unwrap();
    let out = relinfer(&[
        "run",
        "--desk-scale",
        "--config",
        &conf,
        "--out",
        dir.path().join("run").to_str().unwrap(),
        "--ingest",
        file.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));
    let err = stderr(&out);
    assert!(err.contains("line 5"), "{err}");
}

#[test]
fn dump_config_round_trips_through_the_parser() {
    let dir = tempfile::tempdir().unwrap();
    let first = relinfer(&["run", "--preset", "charged-evolving-relation", "--seed", "3", "--dump-config"]);
    assert!(first.status.success(), "{}", stderr(&first));
    let path = dir.path().join("dumped.conf");
    std::fs::write(&path, &first.stdout).unwrap();
    let second = relinfer(&["run", "--config", path.to_str().unwrap(), "--dump-config"]);
    assert!(second.status.success(), "{}", stderr(&second));
    assert_eq!(first.stdout, second.stdout);
}
