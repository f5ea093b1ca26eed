//! End-to-end runs of the `pixreason` binary.

use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

use pixreason::synth::{Cue, Media};
use pixreason::visual::save_png;
use pixreason::{ImageBuffer, SeedExample};

fn pixreason(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pixreason"))
        .args(args)
        .env_remove("PIXEL_POLICY_BASE_URL")
        .env_remove("PIXEL_POLICY_MODEL")
        .env_remove("PIXEL_POLICY_API_KEY")
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    assert!(out.status.success(), "failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn json_lines(text: &str) -> Vec<Value> {
    text.lines().map(|l| serde_json::from_str(l).unwrap()).collect()
}

fn write(dir: &Path, name: &str, body: &str) -> String {
    let path = dir.join(name);
    std::fs::write(&path, body).unwrap();
    path.to_string_lossy().into_owned()
}

fn fixture(name: &str) -> String {
    format!("{}/../core/tests/fixtures/{name}", env!("CARGO_MANIFEST_DIR"))
}

#[test]
fn usage_error_exits_one() {
    assert_eq!(pixreason(&["simulate", "--steps", "many"]).status.code(), Some(1));
    assert_eq!(pixreason(&["no-such-command"]).status.code(), Some(1));
    assert_eq!(pixreason(&["--help"]).status.code(), Some(0));
}

#[test]
fn simulate_without_curiosity_collapses() {
    let csv = stdout(&pixreason(&["simulate", "--no-curiosity", "--seed", "7"]));
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("step,rapr,op_error,return_text,return_pixel,bonus_mean,pr_accuracy"));
    let last: Vec<&str> = lines.last().unwrap().split(',').collect();
    let rapr: f64 = last[1].parse().unwrap();
    assert!(rapr < 0.05, "final rapr {rapr}");
}

#[test]
fn simulate_with_curiosity_keeps_pixel_reasoning() {
    let csv = stdout(&pixreason(&["simulate", "--seed", "7"]));
    let last: Vec<&str> = csv.lines().last().unwrap().split(',').collect();
    assert!(last[1].parse::<f64>().unwrap() > 0.9);
}

#[test]
fn reward_pays_the_lone_pixel_reasoner() {
    let dir = tempfile::tempdir().unwrap();
    let rows: String = (0..8)
        .map(|i| {
            format!(
                "{{\"query_id\": \"q\", \"trajectory_id\": \"t{i}\", \"correct\": 1, \"is_pr\": {}, \"n_vo\": {}}}\n",
                i == 0,
                u32::from(i == 0)
            )
        })
        .collect();
    let input = write(dir.path(), "records.jsonl", &rows);
    let out = json_lines(&stdout(&pixreason(&["reward", &input, "--format", "jsonl"])));
    assert_eq!(out.len(), 8);
    assert!((out[0]["bonus"].as_f64().unwrap() - 0.0875).abs() < 1e-12);
    assert!((out[0]["reward"].as_f64().unwrap() - 1.0875).abs() < 1e-12);
    assert!(out[1..].iter().all(|r| r["bonus"].as_f64() == Some(0.0) && r["reward"].as_f64() == Some(1.0)));

    let csv = stdout(&pixreason(&["reward", &input]));
    assert!(csv.starts_with("query_id,trajectory_id,correct,is_pr,n_vo,rapr,bonus,penalty,reward\n"));
}

#[test]
fn reward_rejects_bad_records() {
    let dir = tempfile::tempdir().unwrap();
    let input = write(dir.path(), "bad.jsonl", "{\"query_id\": \"q\"}\n");
    assert_eq!(pixreason(&["reward", &input]).status.code(), Some(1));
}

#[test]
fn parse_finds_the_failed_operation() {
    let out = json_lines(&stdout(&pixreason(&["parse", &fixture("failure_1.txt")])));
    assert_eq!(out.len(), 1);
    let errors = out[0]["steps"]
        .as_array()
        .unwrap()
        .iter()
        .filter(|s| s["kind"] == "execution_outcome" && s["is_error"] == true)
        .count();
    assert_eq!(errors, 1);
    assert_eq!(out[0]["is_pixel_space"], true);
}

#[test]
fn strict_parse_rejects_orphan_outcomes() {
    assert_eq!(pixreason(&["parse", "--strict", &fixture("failure_1.txt")]).status.code(), Some(1));
}

#[test]
fn exec_op_crops_and_reports_errors() {
    let dir = tempfile::tempdir().unwrap();
    let image = dir.path().join("in.png");
    save_png(&ImageBuffer::filled(120, 80, [10, 20, 30]), &image).unwrap();
    let image = image.to_string_lossy().into_owned();
    let out_dir = dir.path().join("out");

    let call = r#"{"name": "crop_image", "arguments": {"bbox_2d": [10, 10, 50, 40], "target_image": 1}}"#;
    let out = stdout(&pixreason(&["exec-op", "--image", &image, "--call", call, "--out-dir", out_dir.to_str().unwrap()]));
    let v: Value = serde_json::from_str(out.trim()).unwrap();
    assert_eq!(v["ok"], true);
    assert_eq!(v["files"].as_array().unwrap().len(), 1);
    assert!(out_dir.join("image_2.png").exists());

    let bad = r#"{"name": "crop_image", "arguments": {"bbox_2d": [10, 10, 50, 40], "target_image": 7}}"#;
    let res = pixreason(&["exec-op", "--image", &image, "--call", bad]);
    assert_eq!(res.status.code(), Some(1));
    let v: Value = serde_json::from_str(String::from_utf8_lossy(&res.stdout).trim()).unwrap();
    assert_eq!(v["ok"], false);
    assert!(v["outcome"].as_str().unwrap().starts_with("Execution error:"));
}

#[test]
fn advantages_are_zero_sum_per_group() {
    let dir = tempfile::tempdir().unwrap();
    let mut rows = String::new();
    for q in 0..4 {
        for t in 0..8 {
            let reward = if q == 3 { 1.0 } else { f64::from((t + q) % 3) };
            rows.push_str(&format!("{{\"query_id\": \"q{q}\", \"trajectory_id\": \"q{q}-{t}\", \"reward\": {reward}}}\n"));
        }
    }
    let input = write(dir.path(), "rewards.jsonl", &rows);
    let args = ["advantages", &input, "--group-size", "8", "--train-batch", "32", "--queries-per-episode", "8"];
    let batches = json_lines(&stdout(&pixreason(&args)));
    assert_eq!(batches.len(), 1);
    let b = &batches[0];
    assert_eq!(b["uniformity"].as_f64(), Some(0.25));
    assert_eq!(b["fresh"].as_u64(), Some(24));
    let total: f64 = b["entries"].as_array().unwrap().iter().map(|e| e["advantage"].as_f64().unwrap()).sum();
    assert!(total.abs() < 1e-9);

    let again = json_lines(&stdout(&pixreason(&args)));
    assert_eq!(batches, again);
}

#[test]
fn advantages_reject_split_groups() {
    let dir = tempfile::tempdir().unwrap();
    let rows = "{\"query_id\": \"a\", \"trajectory_id\": \"1\", \"reward\": 1}\n\
                {\"query_id\": \"b\", \"trajectory_id\": \"2\", \"reward\": 0}\n\
                {\"query_id\": \"a\", \"trajectory_id\": \"3\", \"reward\": 0}\n";
    let input = write(dir.path(), "split.jsonl", rows);
    assert_eq!(pixreason(&["advantages", &input]).status.code(), Some(1));
}

fn seeds_file(dir: &Path) -> String {
    let seeds = [
        SeedExample {
            id: "img".into(),
            question: "What is the price?".into(),
            gold: "B".into(),
            media: Media::Image { width: 800, height: 600 },
            cue: Cue::Bbox([100.0, 100.0, 200.0, 180.0]),
            focus: Some("the price tag".into()),
            media_path: None,
        },
        SeedExample {
            id: "vid".into(),
            question: "What was put down?".into(),
            gold: "C".into(),
            media: Media::Video { frames: 16, width: 64, height: 48 },
            cue: Cue::Frames(vec![4, 5]),
            focus: None,
            media_path: None,
        },
    ];
    let body: String = seeds.iter().map(|s| serde_json::to_string(s).unwrap() + "\n").collect();
    write(dir, "seeds.jsonl", &body)
}

#[test]
fn synth_is_deterministic_and_masks_errors() {
    let dir = tempfile::tempdir().unwrap();
    let seeds = seeds_file(dir.path());
    let text_only = write(
        dir.path(),
        "text.jsonl",
        "{\"id\": \"t1\", \"question\": \"2+2?\", \"reasoning\": \"Adding gives 4.\", \"gold\": \"4\"}\n",
    );
    let args = ["synth", "--seeds", &seeds, "--count", "40", "--seed", "3", "--text-only", &text_only];
    let first = stdout(&pixreason(&args));
    assert_eq!(first, stdout(&pixreason(&args)));

    let records = json_lines(&first);
    assert_eq!(records.len(), 41);
    assert_eq!(records[0]["id"], "img-00000");
    assert_eq!(records[1]["id"], "vid-00001");
    for r in &records[..40] {
        // Execution outcomes are always masked; error kinds add the bad call.
        let spans = r["mask_spans"].as_array().unwrap().len();
        assert_eq!(spans == 1, r["kind"] == "single_pass", "{}", r["id"]);
    }
    assert_eq!(records[40]["id"], "t1");

    let video_only = json_lines(&stdout(&pixreason(&[
        "synth", "--seeds", &seeds, "--category", "video", "--count", "5", "--proportions", "0,1",
    ])));
    assert!(video_only.iter().all(|r| r["kind"] == "reselect"));
}

#[test]
fn synth_rejects_bad_proportions() {
    let dir = tempfile::tempdir().unwrap();
    let seeds = seeds_file(dir.path());
    assert_eq!(pixreason(&["synth", "--seeds", &seeds, "--proportions", "1,2,3"]).status.code(), Some(1));
}

#[test]
fn rollout_against_unreachable_backend_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    save_png(&ImageBuffer::filled(32, 32, [0, 0, 0]), &dir.path().join("q.png")).unwrap();
    let queries = write(
        dir.path(),
        "queries.jsonl",
        "{\"id\": \"q1\", \"question\": \"What colour?\", \"gold\": \"black\", \"image\": \"q.png\"}\n",
    );
    let out = pixreason(&[
        "rollout",
        "--queries",
        &queries,
        "-g",
        "2",
        "--base-url",
        "http://127.0.0.1:9/v1",
        "--model",
        "m",
        "--retries",
        "0",
        "--timeout",
        "2",
    ]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
    let runs = json_lines(&String::from_utf8(out.stdout).unwrap());
    assert_eq!(runs.len(), 1);
    assert!(runs[0]["rollouts"].as_array().unwrap().iter().all(|r| r["error"].is_string()));
}

#[test]
fn rollout_with_missing_media_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let queries = write(
        dir.path(),
        "queries.jsonl",
        "{\"id\": \"q1\", \"question\": \"?\", \"gold\": \"A\", \"image\": \"missing.png\"}\n",
    );
    let out = pixreason(&["rollout", "--queries", &queries, "--base-url", "http://127.0.0.1:9/v1", "--model", "m"]);
    assert_eq!(out.status.code(), Some(1));
}
