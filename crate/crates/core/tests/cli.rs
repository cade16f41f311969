use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn manifest_dir() -> &'static Path {
    Path::new(env!("CARGO_MANIFEST_DIR"))
}

fn fixture(rel: &str) -> PathBuf {
    manifest_dir().join("fixtures").join(rel)
}

fn coview(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_coview"))
        .args(args)
        .env_remove("YC_PROVIDER_TOKEN")
        .output()
        .unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn censor_args(out: &Path) -> Vec<String> {
    [
        "censor",
        "--frames",
        s(&fixture("bundle/frames")),
        "--subs",
        s(&fixture("bundle/subs.srt")),
        "--panel",
        s(&fixture("bundle/co_panel.json")),
        "--lexicon",
        s(&fixture("bundle/lexicon.json")),
        "--video-id",
        "fixture-1",
        "--out",
        s(out),
    ]
    .into_iter()
    .map(String::from)
    .collect()
}

#[test]
fn censor_matches_golden_byte_for_byte() {
    let golden = std::fs::read(fixture("golden/censor_mock.json")).unwrap();
    let dir = tempfile::tempdir().unwrap();
    for i in 0..3 {
        let out = dir.path().join(format!("run{i}.json"));
        let args = censor_args(&out);
        let o = coview(&args.iter().map(String::as_str).collect::<Vec<_>>());
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        assert_eq!(std::fs::read(&out).unwrap(), golden, "run {i}");
    }
    let doc: Value = serde_json::from_slice(&golden).unwrap();
    assert_eq!(doc["result"]["age_band"], "12-15");
}

#[test]
fn censor_missing_subtitles_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = censor_args(&dir.path().join("x.json"));
    args[4] = s(&dir.path().join("absent.srt")).to_string();
    let o = coview(&args.iter().map(String::as_str).collect::<Vec<_>>());
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("subtitles: not found"));
    assert!(!dir.path().join("x.json").exists());
}

#[test]
fn censor_rejects_non_co_panel() {
    let dir = tempfile::tempdir().unwrap();
    let panel = dir.path().join("p.json");
    std::fs::write(&panel, r#"{"role": "parent", "entries": {"games": 1}}"#).unwrap();
    let mut args = censor_args(&dir.path().join("x.json"));
    args[6] = s(&panel).to_string();
    let o = coview(&args.iter().map(String::as_str).collect::<Vec<_>>());
    assert_eq!(
        o.status.code(),
        Some(1),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
}

#[test]
fn censor_live_unreachable_exits_2() {
    let port = std::net::TcpListener::bind("127.0.0.1:0")
        .unwrap()
        .local_addr()
        .unwrap()
        .port();
    let dir = tempfile::tempdir().unwrap();
    let mut args = censor_args(&dir.path().join("x.json"));
    let endpoint = format!("http://127.0.0.1:{port}/v1/chat");
    args.extend(
        [
            "--provider",
            "live",
            "--endpoint",
            &endpoint,
            "--model",
            "m",
        ]
        .map(String::from),
    );
    let o = coview(&args.iter().map(String::as_str).collect::<Vec<_>>());
    assert_eq!(
        o.status.code(),
        Some(2),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
}

#[test]
fn report_over_fixture_week() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("trend.csv");
    let o = coview(&[
        "report",
        "--events",
        s(&fixture("events/games_week.jsonl")),
        "--from",
        "2026-01-01T00:00:00Z",
        "--to",
        "2026-01-08T00:00:00Z",
        "--csv",
        s(&csv),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(report["video_count"], 10);
    let games = &report["per_keyword"]["games"];
    assert_eq!(games["mean_score"], 2.0);
    assert_eq!(games["display_label"], "very high");
    assert_eq!(games["classification"], "misaligned");
    assert_eq!(report["risk_frequency"]["violence"], 4);

    let text = std::fs::read_to_string(&csv).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("category,bucket_start,count"));
    let total: u64 = lines
        .filter(|l| l.starts_with("violence,"))
        .map(|l| l.rsplit(',').next().unwrap().parse::<u64>().unwrap())
        .sum();
    assert_eq!(total, 4);
}

#[test]
fn report_names_malformed_line() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("bad.jsonl");
    let mut text = std::fs::read_to_string(fixture("events/games_week.jsonl")).unwrap();
    text.push_str("{not json\n");
    std::fs::write(&log, text).unwrap();
    let o = coview(&["report", "--events", s(&log)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 21"));
}

#[test]
fn consensus_sim_is_deterministic_per_seed() {
    let a = coview(&["consensus-sim", "--sessions", "50", "--seed", "3"]);
    let b = coview(&["consensus-sim", "--sessions", "50", "--seed", "3"]);
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
    let text = String::from_utf8(a.stdout).unwrap();
    assert!(text.contains("consensus_rate: "));

    let full = coview(&[
        "consensus-sim",
        "--accept-prob",
        "0",
        "--compromise-prob",
        "1",
        "--json",
    ]);
    let stats: Value = serde_json::from_slice(&full.stdout).unwrap();
    assert_eq!(stats["consensus_rate"], 1.0);
    assert_eq!(stats["sessions"], 200);

    let bad = coview(&["consensus-sim", "--accept-prob", "1.5"]);
    assert_eq!(bad.status.code(), Some(1));
}

#[test]
fn ingest_prints_chunks() {
    let o = coview(&[
        "ingest",
        "--frames",
        s(&fixture("bundle/frames")),
        "--subs",
        s(&fixture("bundle/subs.srt")),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["keyframes"].as_array().unwrap().len(), 3);
}

#[test]
fn help_and_unknown_flags() {
    assert_eq!(coview(&["--help"]).status.code(), Some(0));
    assert_eq!(coview(&["censor", "--bogus"]).status.code(), Some(1));
}
