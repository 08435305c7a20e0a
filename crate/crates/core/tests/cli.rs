use std::fs;
use std::path::{Path, PathBuf};

use contact_retarget::cli::main_with_args;
use contact_retarget::pipeline::{audit, RunReport, TaskSpec, TrajectoryRecord};
use contact_retarget::retarget::Demo;
use contact_retarget::sim::read_jsonl;
use tempfile::TempDir;

fn fixture(name: &str) -> String {
    format!("{}/fixtures/{name}", env!("CARGO_MANIFEST_DIR"))
}

fn cli(args: &[&str]) -> (i32, String, String) {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let argv = std::iter::once("contact-retarget").chain(args.iter().copied());
    let code = main_with_args(argv, &mut out, &mut err);
    (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
}

fn out_dir(tmp: &TempDir) -> String {
    tmp.path().to_str().unwrap().to_owned()
}

fn run_grasping(dir: &Path) -> PathBuf {
    let (code, _, err) = cli(&["--out", dir.to_str().unwrap(), "run", "--task", &fixture("task_grasping.json")]);
    assert_eq!(code, 0, "{err}");
    dir.join("trajectory.jsonl")
}

#[test]
fn validate_bundled_demo_exits_zero() {
    let (code, out, _) = cli(&["--json", "validate", &fixture("demo_push_pivot_grasp.json")]);
    assert_eq!(code, 0);
    let v: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert_eq!(v["passed"], true);
}

#[test]
fn validate_truncated_file_is_input_error() {
    let tmp = TempDir::new().unwrap();
    let text = fs::read_to_string(fixture("demo_push_pivot_grasp.json")).unwrap();
    let p = tmp.path().join("demo.json");
    fs::write(&p, &text[..text.len() / 2]).unwrap();
    let (code, out, _) = cli(&["--json", "validate", p.to_str().unwrap()]);
    assert_eq!(code, 2);
    let v: serde_json::Value = serde_json::from_str(out.trim()).unwrap();
    assert_eq!(v["exit_code"], 2);
    assert_eq!(v["error"], "input");
}

#[test]
fn validate_switch_off_wall_exits_one_with_residual() {
    let tmp = TempDir::new().unwrap();
    let mut demo = Demo::from_json(&fs::read_to_string(fixture("demo_push_pivot_grasp.json")).unwrap()).unwrap();
    let k = demo.switch_indices[0];
    demo.keyframes[k].pose.position.x -= 0.03;
    let p = tmp.path().join("demo.json");
    fs::write(&p, demo.to_json()).unwrap();
    let (code, out, _) = cli(&["validate", p.to_str().unwrap()]);
    assert_eq!(code, 1);
    assert!(out.contains("residual=0.030000"), "{out}");
    assert!(out.contains("violated=wall"), "{out}");
}

#[test]
fn run_grasping_fixture_succeeds() {
    let tmp = TempDir::new().unwrap();
    let traj = run_grasping(tmp.path());
    let report: RunReport = serde_json::from_str(&fs::read_to_string(tmp.path().join("report.json")).unwrap()).unwrap();
    assert!(report.success);
    let records: Vec<TrajectoryRecord> = read_jsonl(std::io::BufReader::new(fs::File::open(traj).unwrap())).unwrap();
    assert_eq!(audit(&records), Ok(true));
}

#[test]
fn run_from_separate_inputs() {
    let tmp = TempDir::new().unwrap();
    let (code, out, err) = cli(&[
        "--out",
        &out_dir(&tmp),
        "run",
        "--demo",
        &fixture("demo_push_pivot_grasp.json"),
        "--scene",
        &fixture("scene_wall_80.json"),
        "--object",
        "cracker",
        "--x0",
        "0.45,0,0",
    ]);
    assert_eq!(code, 0, "{out}{err}");
}

#[test]
fn ablated_run_on_offset_wall_exits_one() {
    let tmp = TempDir::new().unwrap();
    let (code, out, _) = cli(&[
        "--json",
        "--out",
        &out_dir(&tmp),
        "run",
        "--ablate-retarget-x",
        "--task",
        &fixture("task_grasping_offset_wall.json"),
    ]);
    assert_eq!(code, 1);
    let report: RunReport = serde_json::from_str(&out).unwrap();
    assert_eq!(report.failure_reason.as_deref(), Some("precondition: wall"));
}

#[test]
fn run_with_unsupported_start_is_infeasible() {
    let tmp = TempDir::new().unwrap();
    let (code, out, err) = cli(&["--json", "--out", &out_dir(&tmp), "run", "--task", &fixture("task_not_freestanding.json")]);
    assert_eq!(code, 3);
    let v: serde_json::Value = serde_json::from_str(out.trim()).unwrap();
    assert_eq!(v["error"], "infeasible");
    assert!(!err.is_empty());
}

#[test]
fn eval_single_template_prints_one_summary_line() {
    let tmp = TempDir::new().unwrap();
    let (code, out, err) = cli(&["--out", &out_dir(&tmp), "eval", &fixture("eval_single.json")]);
    assert_eq!(code, 0, "{err}");
    assert_eq!(out.trim().lines().count(), 1, "{out}");
    let csv = fs::read_to_string(tmp.path().join("eval.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
}

#[test]
fn eval_seed_changes_scenes_not_schema() {
    let a = TempDir::new().unwrap();
    let b = TempDir::new().unwrap();
    assert_eq!(cli(&["--out", &out_dir(&a), "eval", &fixture("eval_single.json")]).0, 0);
    assert_eq!(cli(&["--seed", "7", "--out", &out_dir(&b), "eval", &fixture("eval_single.json")]).0, 0);
    let ca = fs::read_to_string(a.path().join("eval.csv")).unwrap();
    let cb = fs::read_to_string(b.path().join("eval.csv")).unwrap();
    assert_eq!(ca.lines().next(), cb.lines().next());
    assert_ne!(ca, cb);
    let (_, ta, _) = cli(&["template", "grasping"]);
    let (_, tb, _) = cli(&["--seed", "7", "template", "grasping"]);
    let (ta, tb) = (TaskSpec::from_json(&ta).unwrap(), TaskSpec::from_json(&tb).unwrap());
    assert_ne!(ta.scene.wall, tb.scene.wall);
}

#[test]
fn eval_with_no_variants_writes_empty_table() {
    let tmp = TempDir::new().unwrap();
    let cfg = tmp.path().join("eval.json");
    let mut v: serde_json::Value = serde_json::from_str(&fs::read_to_string(fixture("eval_single.json")).unwrap()).unwrap();
    v["variants"] = serde_json::json!([]);
    fs::write(&cfg, v.to_string()).unwrap();
    let (code, out, _) = cli(&["--out", &out_dir(&tmp), "eval", cfg.to_str().unwrap()]);
    assert_eq!(code, 0);
    assert!(out.trim().is_empty());
    let csv = fs::read_to_string(tmp.path().join("eval.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1);
}

#[test]
fn eval_bad_config_is_input_error() {
    let tmp = TempDir::new().unwrap();
    let cfg = tmp.path().join("eval.json");
    fs::write(&cfg, r#"{"templates": 3}"#).unwrap();
    assert_eq!(cli(&["--out", &out_dir(&tmp), "eval", cfg.to_str().unwrap()]).0, 2);
}

#[test]
fn plot_grasping_trajectory() {
    let tmp = TempDir::new().unwrap();
    let traj = run_grasping(tmp.path());
    let plots = tmp.path().join("plots");
    fs::create_dir(&plots).unwrap();
    let (code, _, err) = cli(&["--out", plots.to_str().unwrap(), "plot", traj.to_str().unwrap()]);
    assert_eq!(code, 0, "{err}");
    let mut first = Vec::new();
    for name in ["top.svg", "side.svg"] {
        let svg = fs::read_to_string(plots.join(name)).unwrap();
        assert!(svg.matches(r#"class="footprint""#).count() >= 4, "{name}");
        assert!(svg.contains(r#"class="wall""#));
        assert!(svg.contains(r#"class="goal""#));
        first.push(svg);
    }
    assert_eq!(cli(&["--out", plots.to_str().unwrap(), "plot", traj.to_str().unwrap()]).0, 0);
    for (name, before) in ["top.svg", "side.svg"].iter().zip(first) {
        assert_eq!(fs::read_to_string(plots.join(name)).unwrap(), before, "{name} not byte-identical");
    }
}

#[test]
fn plot_empty_and_missing_trajectories() {
    let tmp = TempDir::new().unwrap();
    let empty = tmp.path().join("empty.jsonl");
    fs::write(&empty, "").unwrap();
    assert_eq!(cli(&["--out", &out_dir(&tmp), "plot", empty.to_str().unwrap()]).0, 0);
    let svg = fs::read_to_string(tmp.path().join("top.svg")).unwrap();
    assert!(svg.starts_with("<svg"));
    assert!(!svg.contains("footprint"));
    let missing = tmp.path().join("nope.jsonl");
    assert_eq!(cli(&["--out", &out_dir(&tmp), "plot", missing.to_str().unwrap()]).0, 2);
}

#[test]
fn unknown_template_and_bad_arguments_are_input_errors() {
    assert_eq!(cli(&["template", "juggling"]).0, 2);
    assert_eq!(cli(&["template", "grasping", "--object", "anvil"]).0, 2);
    assert_eq!(cli(&["run", "--demo", "a.json"]).0, 2);
    assert_eq!(cli(&["run", "--task", "/nonexistent/task.json"]).0, 2);
}
