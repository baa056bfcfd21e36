use std::path::Path;
use std::process::Command;

fn fitslam() -> Command {
    Command::new(env!("CARGO_BIN_EXE_fitslam"))
}

fn write_world(dir: &Path, obstacles: &str) -> std::path::PathBuf {
    let path = dir.join("world.json");
    let json = format!(
        r#"{{"seed": 5, "size_m": {}, "resolution": 0.1, "obstacles": {obstacles},
            "landmarks": {{"count": 10}}, "robot": {{"start_xy_theta": [5.0, 5.0, 0.0]}}}}"#,
        if obstacles == "[]" { 10 } else { 24 }
    );
    std::fs::write(&path, json).unwrap();
    path
}

#[test]
fn run_writes_csvs_and_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_world(dir.path(), "[]");
    let out = dir.path().join("out");
    let o = fitslam()
        .args(["run", "--strategies", "greedy,random", "--seeds", "1,2", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["metrics_greedy_1.csv", "metrics_random_2.csv", "summary.csv", "trace_cov.svg", "pct_unexplored.svg"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let csv = std::fs::read_to_string(out.join("metrics_greedy_1.csv")).unwrap();
    assert!(csv.starts_with("t,trace_cov,pct_unexplored,n_loop_closures,distance\n"));
}

#[test]
fn boxed_in_start_stalls_with_code_two() {
    let dir = tempfile::tempdir().unwrap();
    let curb = r#"[{"x0": 3.0, "y0": 3.0, "x1": 7.0, "y1": 3.3, "height": 0.25},
                   {"x0": 3.0, "y0": 6.7, "x1": 7.0, "y1": 7.0, "height": 0.25},
                   {"x0": 3.0, "y0": 3.0, "x1": 3.3, "y1": 7.0, "height": 0.25},
                   {"x0": 6.7, "y0": 3.0, "x1": 7.0, "y1": 7.0, "height": 0.25}]"#;
    let cfg = write_world(dir.path(), curb);
    let o = fitslam()
        .args(["run", "--strategies", "greedy", "--seeds", "1", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(dir.path().join("out"))
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stdout));
    assert!(String::from_utf8_lossy(&o.stdout).contains("stalled"));
}

#[test]
fn errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_world(dir.path(), "[]");
    let o = fitslam().args(["run", "--strategies", "wander", "--config"]).arg(&cfg).output().unwrap();
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("wander"));
    let o = fitslam().args(["run", "--config", "/nonexistent/world.json"]).output().unwrap();
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn preview_writes_rasters() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/worlds/obstacle_ring.json");
    let out = dir.path().join("preview");
    let o = fitslam()
        .args(["world", "preview", "--seed", "1", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let nav = std::fs::read_to_string(out.join("navigable.txt")).unwrap();
    assert!(nav.contains('#') && nav.contains('.'));
    for f in ["elevation.txt", "occupancy.txt", "traversability.txt"] {
        assert!(out.join(f).exists());
    }
}
