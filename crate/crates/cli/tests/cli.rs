use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const HEADER: &str = "iteration,simulated_time_s,per_node_storage_bytes,global_loss,committed_blocks,rejected_blocks,evictions";

fn pirate(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pirate")).args(args).output().expect("binary runs")
}

fn write(dir: &Path, name: &str, body: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, body).unwrap();
    p.display().to_string()
}

fn storage_column(csv: &str) -> Vec<u64> {
    csv.lines().skip(1).map(|l| l.split(',').nth(2).unwrap().parse().unwrap()).collect()
}

#[test]
fn pirate_run_has_flat_storage() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "p.json", r#"{"framework":"pirate","seed":1,"n":50,"c":50,"iterations":10}"#);
    let out = dir.path().join("out");
    let o = pirate(&["run", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(out.join("pirate-n50-seed1.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), HEADER);
    let s = storage_column(&csv);
    assert_eq!(s.len(), 10);
    assert!(s.windows(2).all(|w| w[0] == w[1]));
    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("pirate-n50-seed1.manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 1);
    assert!(manifest["version"].is_string());
}

#[test]
fn learningchain_run_grows_linearly() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "l.json", r#"{"framework":"learningchain","seed":1,"n":50,"iterations":10}"#);
    let out = dir.path().join("out");
    let o = pirate(&["run", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    let s = storage_column(&fs::read_to_string(out.join("learningchain-n50-seed1.csv")).unwrap());
    let d: Vec<u64> = s.windows(2).map(|w| w[1] - w[0]).collect();
    assert!(d.iter().all(|&x| x == d[0] && x > 0));
}

#[test]
fn config_errors_exit_two_with_a_field_path() {
    let dir = tempfile::tempdir().unwrap();
    let missing_seed = write(dir.path(), "a.json", r#"{"framework":"pirate","n":8,"iterations":2}"#);
    let o = pirate(&["run", "--config", &missing_seed]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("seed"));
    let bad_field = write(dir.path(), "b.json", r#"{"framework":"pirate","seed":1,"n":8,"iterations":2,"network":{"latency_ms":"x"}}"#);
    let o = pirate(&["run", "--config", &bad_field]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("network.latency_ms"));
    let o = pirate(&["run", "--config", dir.path().join("absent.json").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn seed_flag_overrides_the_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "p.json", r#"{"framework":"pirate","seed":1,"n":8,"c":4,"iterations":2,"payload_bytes":1000}"#);
    let out = dir.path().join("o");
    let o = pirate(&["run", "--config", &cfg, "--out", out.to_str().unwrap(), "--seed", "42"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(out.join("pirate-n8-seed42.csv").exists());
}

#[test]
fn liveness_failure_exits_three_with_partial_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "p.json",
        r#"{"framework":"pirate","seed":1,"n":8,"c":4,"iterations":50,"payload_bytes":1000,"max_simulated_time_s":1.0}"#,
    );
    let out = dir.path().join("o");
    let o = pirate(&["run", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));
    let csv = fs::read_to_string(out.join("pirate-n8-seed1.csv")).unwrap();
    let rows = csv.lines().count() - 1;
    assert!(rows > 0 && rows < 50, "{rows} rows");
}

#[test]
fn manifest_replays_identically() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "p.json", r#"{"framework":"pirate","seed":3,"n":8,"c":4,"iterations":3,"payload_bytes":1000}"#);
    let a = dir.path().join("a");
    assert_eq!(pirate(&["run", "--config", &cfg, "--out", a.to_str().unwrap()]).status.code(), Some(0));
    let m = a.join("pirate-n8-seed3.manifest.json");
    let b = dir.path().join("b");
    let o = pirate(&["run", "--config", m.to_str().unwrap(), "--out", b.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&o.stdout).contains("replay identical"));
    assert_eq!(
        fs::read(a.join("pirate-n8-seed3.csv")).unwrap(),
        fs::read(b.join("pirate-n8-seed3.csv")).unwrap()
    );
}

#[test]
fn sweep_writes_points_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write(
        dir.path(),
        "s.json",
        r#"{"base":{"framework":"learningchain","seed":1,"n":4,"iterations":2,"payload_bytes":1000},
            "vary":[{"field":"payload_bytes","values":[1000,2000]}]}"#,
    );
    let out = dir.path().join("s");
    let o = pirate(&["sweep", "--config", &spec, "--out", out.to_str().unwrap(), "--plots"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let summary = fs::read_to_string(out.join("summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 3);
    assert!(out.join("point-001.csv").exists());
    assert!(out.join("storage.svg").exists());
    let empty = write(
        dir.path(),
        "e.json",
        r#"{"base":{"framework":"learningchain","seed":1,"n":4,"iterations":2},"vary":[{"field":"n","values":[]}]}"#,
    );
    assert_eq!(pirate(&["sweep", "--config", &empty]).status.code(), Some(2));
}

#[test]
fn report_prints_a_table_and_skips_bad_files() {
    let dir = tempfile::tempdir().unwrap();
    let good = write(dir.path(), "g.csv", &format!("{HEADER}\n1,1.0,100,0.5,1,0,0\n2,2.0,200,0.4,2,0,0\n"));
    let empty = write(dir.path(), "e.csv", &format!("{HEADER}\n"));
    let junk = write(dir.path(), "j.csv", "not,a,metrics,file\n");
    let o = pirate(&["report", &good, &empty, &junk, "--plots", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("final storage MB"));
    let stderr = String::from_utf8_lossy(&o.stderr);
    assert!(stderr.contains("e.csv") && stderr.contains("j.csv"));
    assert!(dir.path().join("iteration_time.svg").exists());
    assert_eq!(pirate(&["report", &junk]).status.code(), Some(2));
}
