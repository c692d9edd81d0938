use std::path::PathBuf;
use std::process::{Command, Output};

fn snapkit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_snapkit")).args(args).output().expect("spawn snapkit")
}

fn stdout_json(out: &Output) -> serde_json::Value {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).expect("json output")
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("snapkit-cli-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir.join(name)
}

#[test]
fn validate_reports_overbraced_quad() {
    let v = stdout_json(&snapkit(&["validate", "quad"]));
    assert_eq!(v["bars"], 6);
    assert_eq!(v["overbraced"], true);
    assert_eq!(v["isostatic"], false);
}

#[test]
fn validate_reports_isostatic_dipyramid() {
    let v = stdout_json(&snapkit(&["validate", "sd_bar"]));
    assert_eq!(v["isostatic"], true);
    assert_eq!(v["overbraced"], false);
    for dev in v["realizations"].as_object().unwrap().values() {
        assert!(dev.as_f64().unwrap() < 1e-9);
    }
}

#[test]
fn negative_length_is_a_validation_error() {
    let text = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/../core/fixtures/quad.json")).unwrap();
    let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
    v["lengths"]["A-B"] = serde_json::json!(-1);
    let path = scratch("negative.json");
    std::fs::write(&path, v.to_string()).unwrap();
    let out = snapkit(&["validate", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.starts_with("error:"), "{err}");
    assert!(err.contains("A-B"), "{err}");
}

#[test]
fn malformed_json_names_the_position() {
    let path = scratch("broken.json");
    std::fs::write(&path, "{\n  \"name\": \"x\",\n  oops\n}").unwrap();
    let out = snapkit(&["validate", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 3"));
}

#[test]
fn unknown_input_is_a_validation_error() {
    let out = snapkit(&["validate", "no_such_framework"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn forced_homotopy_over_budget_exits_3() {
    let out = snapkit(&["critical-points", "quad", "--engine", "homotopy", "--budget", "10"]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn out_of_range_poisson_ratio_is_rejected() {
    let out = snapkit(&["validate", "loop4r_panel", "--nu", "0.7"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn energy_vanishes_at_undeformed_lengths() {
    let v = stdout_json(&snapkit(&["energy", "quad"]));
    for row in v.as_array().unwrap() {
        assert!(row["density"].as_f64().unwrap().abs() < 1e-12);
    }
    let v = stdout_json(&snapkit(&["energy", "quad", "--lengths", "6,4.2,2.3,2.3,4.2,2"]));
    let last = v.as_array().unwrap().last().unwrap().clone();
    assert_eq!(last["name"], "lengths");
    assert!(last["density"].as_f64().unwrap() > 0.0);
}

#[test]
fn quad_snappability_is_byte_stable_and_writes_dot() {
    let dot = scratch("quad.dot");
    let args = ["snappability", "quad", "--dot", dot.to_str().unwrap()];
    let a = snapkit(&args);
    let b = snapkit(&args);
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
    let v = stdout_json(&a);
    assert_eq!(v["minima"], 4);
    let s = v["snappability"].as_f64().unwrap();
    assert!(s > 0.0 && s < 0.01, "{s}");
    assert_eq!(v["lower_bound"], v["snappability"]);
    let graph = std::fs::read_to_string(&dot).unwrap();
    assert!(graph.starts_with("digraph"));
    assert!(graph.contains("->"));
}

#[test]
fn csv_output_has_a_header_row() {
    let out = snapkit(&["critical-points", "quad", "--out", "csv"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let mut lines = text.lines();
    assert!(lines.next().unwrap().contains("name"));
    assert_eq!(lines.count(), 14);
}

#[test]
fn critical_points_json_lists_every_point() {
    let v = stdout_json(&snapkit(&["critical-points", "quad"]));
    let points = v["points"].as_array().unwrap();
    assert!(points.len() <= v["real_solutions"].as_u64().unwrap() as usize);
    assert_eq!(v["exhaustive"], true);
    let names: Vec<&str> = points.iter().map(|p| p["name"].as_str().unwrap()).collect();
    assert!(names.contains(&"V1") && names.contains(&"V2"));
}

#[test]
fn stewart_gough_reports_poses_and_both_metrics() {
    let v = stdout_json(&snapkit(&["sg", "sg"]));
    let poses = v["poses"].as_array().unwrap();
    assert_eq!(poses.len(), 4);
    assert_eq!(poses.iter().filter(|p| p["below_base"] == true).count(), 2);
    let metrics: Vec<&str> = v["distances"].as_array().unwrap().iter().map(|d| d["metric"].as_str().unwrap()).collect();
    assert!(metrics.contains(&"relative") && metrics.contains(&"absolute"));
}
