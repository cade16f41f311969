//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero when any criterion fails.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::{Arc, Mutex};
use std::time::Instant;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use http_body_util::BodyExt;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};
use tower::ServiceExt;

use coview_core::consensus::{
    effective, replay, simulate, start_session, AgentPolicy, ConsensusConfig, ConsensusSession,
    Decision, Modification, Outcome, PanelGenerator, Position, Stage,
};
use coview_core::feedback::{
    aggregate, classify, Alignment, AlignmentEntry, CommonFeedback, InTimeFeedback, Period,
};
use coview_core::guidelines::{
    load_common, AgeBand, AppropriatenessCategory, CommonGuidelineSet, GuidelineError, RiskCategory,
};
use coview_core::ingest::{
    align, chunk, extract_keyframes, parse_subtitles, AlignedSegment, FrameRef, GrayImage,
    IngestConfig, KeyFrame, SubtitleCue, SubtitleFormat,
};
use coview_core::preference::{Keyword, PreferencePanel, Role, Weight};
use coview_core::provider::{combine_chunks, MockProvider, Presence, RiskFinding, VideoFeatures};
use coview_core::service::{
    router, Engine, EventStore, FileStore, MemoryStore, ServiceConfig, ServiceError,
};
use coview_core::time::{ManualClock, Timestamp};

type Verdict = Result<String, String>;
type Criterion = (&'static str, fn() -> Verdict);

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        let ok: bool = $cond;
        if !ok {
            return Err(format!($($msg)+));
        }
    };
}

const VOCAB: [&str; 8] = [
    "games", "music", "science", "sports", "anime", "cooking", "travel", "violence",
];

fn kw(s: &str) -> Keyword {
    Keyword::new(s).unwrap()
}

fn w(v: i64) -> Weight {
    Weight::new(v).unwrap()
}

fn random_panel(rng: &mut ChaCha8Rng, role: Role, max: usize) -> PreferencePanel {
    let n = rng.random_range(0..=max);
    let picks = rand::seq::index::sample(rng, VOCAB.len(), n);
    let entries: Vec<(Keyword, Weight)> = picks
        .iter()
        .map(|i| (kw(VOCAB[i]), w(rng.random_range(-2..=2))))
        .collect();
    PreferencePanel::from_entries(role, entries).unwrap()
}

fn random_position(rng: &mut ChaCha8Rng) -> Position {
    match rng.random_range(0..4) {
        0 => Position::Keep,
        1 => Position::Drop,
        _ => Position::Change {
            weight: w(rng.random_range(-2..=2)),
        },
    }
}

fn random_actor(rng: &mut ChaCha8Rng) -> Role {
    [
        Role::Parent,
        Role::Youth,
        Role::Parent,
        Role::Youth,
        Role::Co,
    ][rng.random_range(0..5)]
}

fn random_decision(rng: &mut ChaCha8Rng) -> Decision {
    if rng.random_bool(0.2) {
        Decision::Accept
    } else {
        let n = rng.random_range(0..=3);
        Decision::Modify {
            changes: (0..n)
                .map(|_| Modification {
                    keyword: kw(VOCAB[rng.random_range(0..VOCAB.len())]),
                    position: random_position(rng),
                })
                .collect(),
        }
    }
}

// ---------------------------------------------------------------- consensus

fn check_step(s: &ConsensusSession) -> Result<(), String> {
    ensure!(
        s.iteration <= s.config.max_iterations,
        "iteration {} above cap {}",
        s.iteration,
        s.config.max_iterations
    );
    ensure!(
        s.outcome.is_some() == (s.stage == Stage::Finalized),
        "outcome/stage mismatch: {:?} {:?}",
        s.outcome,
        s.stage
    );
    Ok(())
}

fn fuzz_one(run: u64) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(run);
    let initiator = if rng.random_bool(0.5) {
        Role::Parent
    } else {
        Role::Youth
    };
    let panel = random_panel(&mut rng, initiator, 5);
    let cfg = ConsensusConfig {
        max_iterations: rng.random_range(1..=4),
        session_timeout_ms: if rng.random_bool(0.1) {
            20_000
        } else {
            600_000
        },
    };
    let mut now = Timestamp(1_000);
    let mut s = start_session(format!("cs-{run}"), initiator, &panel, &cfg, now)
        .map_err(|e| e.to_string())?;
    let mut accepted = false;
    let mut draft_before_last = s.draft_panel.clone();

    let random_ops = rng.random_range(0..60);
    for _ in 0..random_ops {
        if s.is_finalized() {
            break;
        }
        now = now.plus_millis(rng.random_range(0..1_500));
        let conflict_kw = |rng: &mut ChaCha8Rng, s: &ConsensusSession| {
            if !s.conflicts.is_empty() && rng.random_bool(0.8) {
                s.conflicts[rng.random_range(0..s.conflicts.len())]
                    .keyword
                    .clone()
            } else {
                kw(VOCAB[rng.random_range(0..VOCAB.len())])
            }
        };
        let next = match rng.random_range(0..4) {
            0 => {
                let d = random_decision(&mut rng);
                let is_accept = d == Decision::Accept;
                let r = s.reviewer_respond(random_actor(&mut rng), d, now);
                if r.is_ok() && is_accept {
                    accepted = true;
                }
                r
            }
            1 => {
                let k = conflict_kw(&mut rng, &s);
                let text = if rng.random_bool(0.2) {
                    String::new()
                } else {
                    format!("reason {}", rng.random::<u32>())
                };
                s.submit_reason(random_actor(&mut rng), &k, &text, now)
            }
            2 => {
                let k = conflict_kw(&mut rng, &s);
                s.submit_position(random_actor(&mut rng), &k, random_position(&mut rng), now)
            }
            _ => s.advance(now),
        };
        if let Ok(n) = next {
            draft_before_last = s.draft_panel.clone();
            s = n;
            check_step(&s)?;
        }
    }

    // Drive to completion with only the moves that are always legal.
    // Rejected responses leave the session untouched, so only successful
    // transitions count against the bound.
    let bound = 4 * (cfg.max_iterations as usize + 1) + 4;
    let mut steps = 0;
    let mut rejected = 0;
    let mut trace = Vec::new();
    while !s.is_finalized() {
        ensure!(
            steps < bound,
            "run {run}: not finalized after {bound} transitions: {trace:?}"
        );
        now = now.plus_millis(10);
        let next = if s.stage == Stage::InitialProposal {
            let d = random_decision(&mut rng);
            let is_accept = d == Decision::Accept;
            match s.reviewer_respond(s.reviewer(), d, now) {
                Ok(n) => {
                    accepted |= is_accept;
                    n
                }
                Err(_) => {
                    rejected += 1;
                    ensure!(rejected < 10_000, "run {run}: no valid response found");
                    continue;
                }
            }
        } else {
            s.advance(now)
                .map_err(|e| format!("run {run}: advance in {:?}: {e}", s.stage))?
        };
        steps += 1;
        trace.push((s.stage, s.iteration));
        draft_before_last = s.draft_panel.clone();
        s = next;
        check_step(&s)?;
    }

    let (co, outcome) = s.finalize().map_err(|e| e.to_string())?;
    ensure!(
        co.role == Role::Co,
        "run {run}: finalized panel role {:?}",
        co.role
    );
    if accepted {
        ensure!(
            outcome == Outcome::ConsensusReached && co.entries() == panel.entries(),
            "run {run}: accept-path fidelity"
        );
    }
    match outcome {
        Outcome::ConsensusReached => {
            let mut expected = s.initiator_panel.entries().clone();
            for c in &s.conflicts {
                let cur = s.initiator_panel.get(&c.keyword);
                let a = effective(c.initiator_position, cur);
                let b = effective(c.reviewer_position, cur);
                ensure!(
                    c.resolved && a == b,
                    "run {run}: reached with open conflict {}",
                    c.keyword
                );
                match a {
                    Some(v) => expected.insert(c.keyword.clone(), v),
                    None => expected.remove(&c.keyword),
                };
            }
            ensure!(co.entries() == &expected, "run {run}: resolution soundness");
        }
        Outcome::ConsensusFailed => {
            ensure!(
                co.entries() == draft_before_last.entries() && co.entries() == panel.entries(),
                "run {run}: failure-path stability"
            );
        }
    }

    let rebuilt = replay(&s.events).map_err(|e| format!("run {run}: replay: {e}"))?;
    ensure!(rebuilt == s, "run {run}: replay differs");
    let a = serde_json::to_string(&rebuilt).unwrap();
    let b = serde_json::to_string(&s).unwrap();
    ensure!(a == b, "run {run}: replay serializes differently");
    // the log itself survives a JSON round trip
    let log: Vec<_> = serde_json::from_str(&serde_json::to_string(&s.events).unwrap()).unwrap();
    ensure!(
        replay(&log).map_err(|e| e.to_string())? == s,
        "run {run}: replay from JSON log differs"
    );
    Ok(())
}

fn consensus_suite() -> Verdict {
    let t = Instant::now();
    let mut reached = 0;
    for run in 0..10_000u64 {
        fuzz_one(run)?;
        reached += 1;
    }
    let secs = t.elapsed().as_secs_f64();
    ensure!(secs < 30.0, "took {secs:.1}s");
    Ok(format!(
        "{reached} sequences finalized, invariants held, replay exact ({secs:.1}s)"
    ))
}

// --------------------------------------------------------------- simulation

fn sim_cli(args: &[&str]) -> Result<Vec<u8>, String> {
    let o = Command::new(env!("CARGO_BIN_EXE_coview"))
        .arg("consensus-sim")
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    ensure!(
        o.status.success(),
        "consensus-sim failed: {}",
        String::from_utf8_lossy(&o.stderr)
    );
    Ok(o.stdout)
}

fn simulation_harness() -> Verdict {
    let a = sim_cli(&["--sessions", "200", "--seed", "7"])?;
    let b = sim_cli(&["--sessions", "200", "--seed", "7"])?;
    ensure!(a == b, "consensus-sim output differs between runs");
    let text = String::from_utf8(a).unwrap();
    for field in [
        "consensus_rate:",
        "mean_one_party_turns:",
        "mean_cross_party_exchanges:",
    ] {
        ensure!(text.contains(field), "missing {field}");
    }

    let cfg = ConsensusConfig::default();
    let policy = |accept: f64, compromise: f64| AgentPolicy {
        accept_probability: accept,
        compromise_probability: compromise,
        panel: PanelGenerator::default(),
    };
    let full = simulate(&policy(0.5, 1.0), &policy(0.5, 1.0), 200, 7, &cfg);
    ensure!(
        full.consensus_rate == 1.0,
        "compromise 1 gave rate {}",
        full.consensus_rate
    );
    let none = simulate(&policy(0.0, 0.0), &policy(0.0, 0.0), 200, 7, &cfg);
    ensure!(
        none.consensus_rate == 0.0,
        "stubborn agents gave rate {}",
        none.consensus_rate
    );
    ensure!(
        none.mean_iterations == cfg.max_iterations as f64,
        "stubborn sessions ended at mean iteration {}",
        none.mean_iterations
    );
    let cli_full = sim_cli(&["--sessions", "200", "--seed", "7", "--compromise-prob", "1"])?;
    ensure!(
        String::from_utf8_lossy(&cli_full).contains("consensus_rate: 1.000"),
        "CLI rate for compromise 1"
    );
    let cli_none = sim_cli(&[
        "--sessions",
        "200",
        "--seed",
        "7",
        "--compromise-prob",
        "0",
        "--accept-prob",
        "0",
    ])?;
    ensure!(
        String::from_utf8_lossy(&cli_none).contains("consensus_rate: 0.000"),
        "CLI rate for stubborn agents"
    );
    let line = text
        .lines()
        .filter(|l| l.starts_with("mean_"))
        .collect::<Vec<_>>()
        .join(", ");
    Ok(format!("reproducible; rates 1.000/0.000; seed 7: {line}"))
}

// ------------------------------------------------------------------- ingest

fn ingest_oracles() -> Verdict {
    let t = Instant::now();
    let cfg = IngestConfig::default();

    // planted cuts: each scene is a flat gray level in its own histogram bin
    let cuts = [13u64, 29, 47, 66, 88];
    let frames: Vec<FrameRef> = (0..100u64)
        .map(|i| {
            let scene = cuts.iter().filter(|&&c| i >= c).count() as u8;
            FrameRef {
                index: i,
                timestamp_ms: i * 40,
                image: GrayImage::filled(16, 12, scene * 40 + 5),
                labels: vec![],
            }
        })
        .collect();
    let keys = extract_keyframes(&frames, &cfg).map_err(|e| e.to_string())?;
    let got: Vec<u64> = keys.iter().map(|k| k.frame_index).collect();
    let mut want = vec![0u64];
    want.extend(cuts);
    ensure!(got == want, "keyframes {got:?}, want {want:?}");

    let mut rng = ChaCha8Rng::seed_from_u64(0xA11);
    for track in 0..50 {
        // random contiguous windows over [0, duration]
        let n_keys = rng.random_range(1..8);
        let mut starts: Vec<u64> = (0..n_keys).map(|_| rng.random_range(1..100_000)).collect();
        starts.sort_unstable();
        starts.dedup();
        starts.insert(0, 0);
        let duration = 100_000 + rng.random_range(1..5_000);
        let keyframes: Vec<KeyFrame> = starts
            .iter()
            .enumerate()
            .map(|(i, &s)| KeyFrame {
                frame_index: i as u64,
                timestamp_ms: s,
                window_start: s,
                window_end: starts.get(i + 1).copied().unwrap_or(duration),
                labels: vec![],
            })
            .collect();
        let n_cues = rng.random_range(0..40);
        let mut cues: Vec<SubtitleCue> = (0..n_cues)
            .map(|_| {
                let start = rng.random_range(0..duration - 1);
                let end = rng.random_range(start + 1..=duration.min(start + 8_000));
                let words = rng.random_range(1..6);
                let text = (0..words)
                    .map(|_| VOCAB[rng.random_range(0..VOCAB.len())])
                    .collect::<Vec<_>>()
                    .join(" ");
                SubtitleCue {
                    start_ms: start,
                    end_ms: end,
                    text,
                }
            })
            .collect();
        cues.sort_by_key(|c| c.start_ms);

        // through SRT text and back
        let mut srt = String::new();
        for (i, c) in cues.iter().enumerate() {
            srt.push_str(&format!(
                "{}\n{} --> {}\n{}\n\n",
                i + 1,
                srt_time(c.start_ms),
                srt_time(c.end_ms),
                c.text
            ));
        }
        let parsed = parse_subtitles(&srt, SubtitleFormat::Srt)
            .map_err(|e| format!("track {track}: {e}"))?;
        ensure!(
            multiset(&parsed) == multiset(&cues),
            "track {track}: SRT round trip lost cues"
        );

        let segments = align(&keyframes, &parsed).map_err(|e| format!("track {track}: {e}"))?;
        let flat: Vec<SubtitleCue> = segments.iter().flat_map(|s| s.cues.clone()).collect();
        ensure!(
            multiset(&flat) == multiset(&cues),
            "track {track}: align lost or duplicated cues"
        );
        for seg in &segments {
            for c in &seg.cues {
                let mid2 = c.start_ms + c.end_ms;
                let k = &seg.keyframe;
                ensure!(
                    mid2 >= 2 * k.window_start && mid2 <= 2 * k.window_end,
                    "track {track}: cue midpoint outside its window"
                );
            }
        }
    }

    for case in 0..100 {
        let n = rng.random_range(0..30);
        let budget = rng.random_range(256..1_200);
        let segments: Vec<AlignedSegment> = (0..n)
            .map(|i| {
                let n_cues = rng.random_range(0..4);
                let mut left = rng.random_range(0..=budget);
                let cues = (0..n_cues)
                    .map(|j| {
                        let len = if j + 1 == n_cues {
                            left
                        } else {
                            rng.random_range(0..=left)
                        };
                        left -= len;
                        SubtitleCue {
                            start_ms: i * 1000 + j as u64,
                            end_ms: i * 1000 + j as u64 + 1,
                            text: "x".repeat(len),
                        }
                    })
                    .collect();
                AlignedSegment {
                    keyframe: KeyFrame {
                        frame_index: i,
                        timestamp_ms: i * 1000,
                        window_start: i * 1000,
                        window_end: i * 1000 + 1000,
                        labels: vec![],
                    },
                    cues,
                }
            })
            .collect();
        let chunks = chunk(&segments, budget).map_err(|e| format!("chunk case {case}: {e}"))?;
        let flat: Vec<AlignedSegment> = chunks.iter().flat_map(|c| c.segments.clone()).collect();
        ensure!(flat == segments, "chunk case {case}: flattening differs");
        ensure!(
            chunks
                .iter()
                .all(|c| c.transcript_len() <= budget && !c.segments.is_empty()),
            "chunk case {case}: budget exceeded"
        );
    }
    let secs = t.elapsed().as_secs_f64();
    ensure!(secs < 10.0, "took {secs:.1}s");
    Ok(format!(
        "6 keyframes at {want:?}; 50 tracks lossless; 100 chunkings exact ({secs:.2}s)"
    ))
}

fn srt_time(ms: u64) -> String {
    format!(
        "{:02}:{:02}:{:02},{:03}",
        ms / 3_600_000,
        ms / 60_000 % 60,
        ms / 1000 % 60,
        ms % 1000
    )
}

fn multiset(cues: &[SubtitleCue]) -> Vec<(u64, u64, String)> {
    let mut v: Vec<_> = cues
        .iter()
        .map(|c| (c.start_ms, c.end_ms, c.text.clone()))
        .collect();
    v.sort();
    v
}

// ----------------------------------------------------------------- feedback

fn sign_oracle(weight: i64, score: i64) -> Alignment {
    if weight == 0 && score == 0 {
        Alignment::Aligned
    } else if weight == 0 || score == 0 {
        Alignment::Informational
    } else if (weight > 0) == (score > 0) {
        Alignment::Aligned
    } else {
        Alignment::Misaligned
    }
}

fn feedback_math() -> Verdict {
    let t = Instant::now();
    for weight in -2..=2 {
        for score in -2..=2 {
            let got = classify(w(weight), Presence::new(score).unwrap());
            ensure!(
                got == sign_oracle(weight, score),
                "classify({weight}, {score}) = {got:?}"
            );
        }
    }
    ensure!(
        classify(w(1), Presence::new(1).unwrap()) == Alignment::Aligned,
        "music case"
    );
    ensure!(
        classify(w(-2), Presence::new(2).unwrap()) == Alignment::Misaligned,
        "games case"
    );

    let categories = ["violence", "crime", "pornography", "negative themes"];
    let mut rng = ChaCha8Rng::seed_from_u64(0xFEED);
    for set in 0..1_000 {
        let from = rng.random_range(0..1_000_000i64);
        let bucket = rng.random_range(1..50_000i64);
        let to = from + rng.random_range(1..400_000i64);
        let period = Period {
            from: Timestamp(from),
            to: Timestamp(to),
            bucket_ms: bucket,
        };
        let n = rng.random_range(0..25);
        let records: Vec<InTimeFeedback> = (0..n)
            .map(|i| {
                let k_count = rng.random_range(0..=4);
                let entries = rand::seq::index::sample(&mut rng, VOCAB.len(), k_count)
                    .into_iter()
                    .map(|k| {
                        let pref = w(rng.random_range(-2..=2));
                        let score = Presence::new(rng.random_range(-2..=2)).unwrap();
                        AlignmentEntry {
                            keyword: kw(VOCAB[k]),
                            pref_weight: pref,
                            video_score: score,
                            classification: classify(pref, score),
                        }
                    })
                    .collect::<Vec<_>>();
                let mut entries = entries;
                entries.sort_by(|a, b| a.keyword.cmp(&b.keyword));
                let present: Vec<&str> = categories
                    .iter()
                    .copied()
                    .filter(|_| rng.random_bool(0.6))
                    .collect();
                let risks = present
                    .into_iter()
                    .map(|c| {
                        let severity = rng.random_range(0..4);
                        RiskFinding {
                            category: c.to_string(),
                            level: ["none", "low", "medium", "high"][severity].into(),
                            severity,
                            rationale: String::new(),
                        }
                    })
                    .collect();
                InTimeFeedback {
                    video_id: format!("v-{i}"),
                    entries,
                    common: CommonFeedback {
                        age_band: "12-15".into(),
                        risks,
                        appropriateness: vec![],
                        summary: String::new(),
                    },
                    produced_at: Timestamp(from + rng.random_range(-50_000..450_000i64)),
                }
            })
            .collect();
        let report = aggregate(&records, &period).map_err(|e| format!("set {set}: {e}"))?;

        let inside: Vec<&InTimeFeedback> = records
            .iter()
            .filter(|r| r.produced_at.0 >= from && r.produced_at.0 < to)
            .collect();
        ensure!(report.video_count == inside.len(), "set {set}: video_count");
        let mut sums: BTreeMap<String, (f64, usize)> = BTreeMap::new();
        for r in &inside {
            for e in &r.entries {
                let s = sums.entry(e.keyword.as_str().to_string()).or_default();
                s.0 += e.video_score.value() as f64;
                s.1 += 1;
            }
        }
        ensure!(
            report.per_keyword.len() == sums.len(),
            "set {set}: keyword set"
        );
        for (k, (sum, count)) in &sums {
            let got = &report.per_keyword[&kw(k)];
            let mean = sum / *count as f64;
            ensure!(
                (got.mean_score - mean).abs() <= 1e-9,
                "set {set}: mean of {k} {} vs {mean}",
                got.mean_score
            );
            ensure!(got.samples == *count, "set {set}: samples of {k}");
        }
        let buckets = ((to - from + bucket - 1) / bucket) as usize;
        let mut freq: BTreeMap<String, usize> = BTreeMap::new();
        let mut per_bucket: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        for r in &inside {
            for risk in &r.common.risks {
                // assessed categories are listed even when never flagged
                let n = freq.entry(risk.category.clone()).or_default();
                let series = per_bucket
                    .entry(risk.category.clone())
                    .or_insert_with(|| vec![0; buckets]);
                if risk.severity > 0 {
                    *n += 1;
                    series[((r.produced_at.0 - from) / bucket) as usize] += 1;
                }
            }
        }
        ensure!(
            report.risk_frequency == freq,
            "set {set}: risk frequency {:?} vs {freq:?}",
            report.risk_frequency
        );
        for (cat, series) in &report.risk_trend {
            let total: usize = series.iter().map(|p| p.count).sum();
            ensure!(
                Some(&total) == freq.get(cat),
                "set {set}: trend sum for {cat}"
            );
            let counts: Vec<usize> = series.iter().map(|p| p.count).collect();
            ensure!(
                Some(&counts) == per_bucket.get(cat),
                "set {set}: trend buckets for {cat}"
            );
        }
        ensure!(
            report.risk_trend.len() == freq.len(),
            "set {set}: trend categories"
        );
    }
    let secs = t.elapsed().as_secs_f64();
    ensure!(secs < 5.0, "took {secs:.1}s");
    Ok(format!(
        "25/25 classify pairs; 1000 random sets match recomputation ({secs:.2}s)"
    ))
}

// -------------------------------------------------------------- end to end

fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

fn end_to_end() -> Verdict {
    let golden =
        std::fs::read(fixtures().join("golden/censor_mock.json")).map_err(|e| e.to_string())?;
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let b = fixtures().join("bundle");
    let arg = |p: &Path| p.to_str().unwrap().to_string();
    for i in 0..3 {
        let out = dir.path().join(format!("{i}.json"));
        let o = Command::new(env!("CARGO_BIN_EXE_coview"))
            .args([
                "censor",
                "--frames",
                &arg(&b.join("frames")),
                "--subs",
                &arg(&b.join("subs.srt")),
            ])
            .args([
                "--panel",
                &arg(&b.join("co_panel.json")),
                "--lexicon",
                &arg(&b.join("lexicon.json")),
            ])
            .args(["--video-id", "fixture-1", "--out", &arg(&out)])
            .output()
            .map_err(|e| e.to_string())?;
        ensure!(
            o.status.success(),
            "run {i}: {}",
            String::from_utf8_lossy(&o.stderr)
        );
        let bytes = std::fs::read(&out).map_err(|e| e.to_string())?;
        ensure!(bytes == golden, "run {i} differs from golden");
    }
    Ok(format!(
        "3 runs byte-identical to golden ({} bytes)",
        golden.len()
    ))
}

// ----------------------------------------------------------- combine_chunks

fn combine() -> Verdict {
    let features = |pairs: &[(&str, i64)]| VideoFeatures {
        scores: pairs
            .iter()
            .map(|(k, v)| (kw(k), Presence::new(*v).unwrap()))
            .collect(),
        coverage_ms: 0,
    };
    let one = combine_chunks(&[
        (features(&[("music", 2)]), 1000),
        (features(&[("music", 0)]), 1000),
    ])
    .map_err(|e| e.to_string())?;
    ensure!(
        one.scores[&kw("music")].value() == 1,
        "equal-duration example"
    );
    let two = combine_chunks(&[
        (features(&[("games", 2)]), 3000),
        (features(&[("games", -2)]), 1000),
    ])
    .map_err(|e| e.to_string())?;
    ensure!(two.scores[&kw("games")].value() == 1, "3:1 example");

    let mut rng = ChaCha8Rng::seed_from_u64(0xC0B);
    for case in 0..500 {
        let n = rng.random_range(1..7);
        let mut partials: Vec<(VideoFeatures, u64)> = (0..n)
            .map(|_| {
                let k_count = rng.random_range(0..=5);
                let picks = rand::seq::index::sample(&mut rng, VOCAB.len(), k_count);
                let scores = picks
                    .into_iter()
                    .map(|i| {
                        (
                            kw(VOCAB[i]),
                            Presence::new(rng.random_range(-2..=2)).unwrap(),
                        )
                    })
                    .collect();
                (
                    VideoFeatures {
                        scores,
                        coverage_ms: rng.random_range(0..10_000),
                    },
                    rng.random_range(1..20_000),
                )
            })
            .collect();
        let base = combine_chunks(&partials).map_err(|e| e.to_string())?;
        if n == 1 {
            ensure!(base == partials[0].0, "case {case}: single-chunk identity");
        }
        let total: u64 = partials.iter().map(|(_, d)| d).sum();
        for (k, got) in &base.scores {
            let weighted: i64 = partials
                .iter()
                .map(|(f, d)| *d as i64 * f.scores.get(k).map_or(-2, |p| p.value() as i64))
                .sum();
            let want = (weighted as f64 / total as f64).round() as i64;
            ensure!(
                got.value() as i64 == want,
                "case {case}: {k} = {}, oracle {want}",
                got.value()
            );
        }
        for _ in 0..3 {
            partials.shuffle(&mut rng);
            ensure!(
                combine_chunks(&partials).map_err(|e| e.to_string())? == base,
                "case {case}: order matters"
            );
        }
    }
    Ok("both worked examples exact; 500 sets permutation-invariant and match the weighted-mean oracle".into())
}

// ------------------------------------------------------------------ service

struct Api {
    app: axum::Router,
    rt: tokio::runtime::Runtime,
}

impl Api {
    fn new(store: Box<dyn EventStore>) -> Self {
        let clock = Arc::new(ManualClock::new(Timestamp(5_000_000)));
        let engine = Engine::open(
            ServiceConfig {
                seed: Some(3),
                ..ServiceConfig::default()
            },
            CommonGuidelineSet::default_set(),
            Arc::new(MockProvider::with_default_lexicon()),
            clock,
            store,
        )
        .unwrap();
        Self {
            app: router(Arc::new(Mutex::new(engine))),
            rt: tokio::runtime::Builder::new_current_thread()
                .enable_all()
                .build()
                .unwrap(),
        }
    }

    fn call(
        &self,
        method: &str,
        uri: &str,
        token: Option<&str>,
        body: Option<Value>,
    ) -> (StatusCode, Value) {
        self.rt.block_on(async {
            let mut req = Request::builder().method(method).uri(uri);
            if let Some(t) = token {
                req = req.header("authorization", format!("Bearer {t}"));
            }
            let body = body.map_or_else(Body::empty, |b| Body::from(b.to_string()));
            let resp = self
                .app
                .clone()
                .oneshot(
                    req.header("content-type", "application/json")
                        .body(body)
                        .unwrap(),
                )
                .await
                .unwrap();
            let status = resp.status();
            let bytes = resp.into_body().collect().await.unwrap().to_bytes();
            (
                status,
                serde_json::from_slice(&bytes).unwrap_or(Value::Null),
            )
        })
    }

    fn pair(&self) -> (String, String, String) {
        let (_, c) = self.call("POST", "/pairs", None, None);
        let code = c["code"].as_str().unwrap().to_string();
        let (_, p) = self.call(
            "POST",
            &format!("/pairs/{code}/join"),
            None,
            Some(json!({"role": "parent", "account": "p"})),
        );
        let (_, y) = self.call(
            "POST",
            &format!("/pairs/{code}/join"),
            None,
            Some(json!({"role": "youth", "account": "y"})),
        );
        (
            c["pair_id"].as_str().unwrap().into(),
            p["token"].as_str().unwrap().into(),
            y["token"].as_str().unwrap().into(),
        )
    }
}

fn ttl_trials() -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x77);
    for trial in 0..100 {
        let clock = Arc::new(ManualClock::new(Timestamp(
            rng.random_range(0..1_000_000_000),
        )));
        let ttl = rng.random_range(1..200_000_000i64);
        let cfg = ServiceConfig {
            code_ttl_ms: ttl,
            seed: Some(trial),
            ..ServiceConfig::default()
        };
        let mut engine = Engine::open(
            cfg,
            CommonGuidelineSet::default_set(),
            Arc::new(MockProvider::with_default_lexicon()),
            clock.clone(),
            Box::new(MemoryStore::default()),
        )
        .map_err(|e| e.to_string())?;
        let fresh = engine.create_pair().map_err(|e| e.to_string())?;
        let stale = engine.create_pair().map_err(|e| e.to_string())?;
        clock.advance(ttl - 1);
        engine
            .join_pair(&fresh.code, Role::Parent, "a")
            .map_err(|e| format!("trial {trial}: {e}"))?;
        clock.advance(1 + rng.random_range(0..ttl));
        match engine.join_pair(&stale.code, Role::Youth, "b") {
            Err(ServiceError::CodeExpired) => {}
            other => return Err(format!("trial {trial}: join after expiry gave {other:?}")),
        }
        match engine.join_pair(&fresh.code, Role::Youth, "b") {
            Err(ServiceError::CodeExpired) => {}
            other => {
                return Err(format!(
                    "trial {trial}: half-used code after expiry gave {other:?}"
                ))
            }
        }
    }
    Ok(())
}

fn service_contracts() -> Verdict {
    ttl_trials()?;

    // single use
    let api = Api::new(Box::new(MemoryStore::default()));
    let (_, c) = api.call("POST", "/pairs", None, None);
    let code = c["code"].as_str().unwrap();
    for role in ["parent", "youth"] {
        api.call(
            "POST",
            &format!("/pairs/{code}/join"),
            None,
            Some(json!({"role": role, "account": role})),
        );
    }
    let (s, e) = api.call(
        "POST",
        &format!("/pairs/{code}/join"),
        None,
        Some(json!({"role": "youth", "account": "z"})),
    );
    ensure!(
        s == StatusCode::CONFLICT && e["error"] == "CodeUsed",
        "reuse gave {s} {e}"
    );

    // stage violations
    let (pair, parent, youth) = api.pair();
    let (_, snap) = api.call(
        "POST",
        &format!("/pairs/{pair}/consensus"),
        Some(&parent),
        Some(json!({"panel": {"games": -2, "music": 1}})),
    );
    let sid = snap["session_id"].as_str().unwrap().to_string();
    let path = |op: &str| format!("/consensus/{sid}/{op}");
    let pos = json!({"keyword": "games", "position": {"kind": "keep"}});
    let violations = [
        ("advance", &youth, None),
        ("positions", &youth, Some(pos.clone())),
        (
            "reasons",
            &youth,
            Some(json!({"keyword": "games", "reason": "x"})),
        ),
    ];
    for (op, tok, body) in &violations {
        let (s, _) = api.call("POST", &path(op), Some(tok.as_str()), body.clone());
        ensure!(
            s == StatusCode::CONFLICT,
            "{op} in initial proposal gave {s}"
        );
    }
    let modify = json!({"decision": "modify", "changes": [{"keyword": "games", "position": {"kind": "change", "weight": 1}}]});
    let (s, _) = api.call("POST", &path("respond"), Some(&youth), Some(modify.clone()));
    ensure!(s == StatusCode::OK, "respond gave {s}");
    let (s, _) = api.call("POST", &path("respond"), Some(&youth), Some(modify));
    ensure!(s == StatusCode::CONFLICT, "second respond gave {s}");
    let (s, _) = api.call("POST", &path("positions"), Some(&youth), Some(pos));
    ensure!(
        s == StatusCode::CONFLICT,
        "position in self-evaluation gave {s}"
    );

    // restart and replay
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let api = Api::new(Box::new(
        FileStore::open(dir.path()).map_err(|e| e.to_string())?,
    ));
    let (pair, parent, youth) = api.pair();
    let (_, snap) = api.call(
        "POST",
        &format!("/pairs/{pair}/consensus"),
        Some(&youth),
        Some(json!({"panel": {"anime": 2}})),
    );
    let sid = snap["session_id"].as_str().unwrap().to_string();
    api.call(
        "POST",
        &format!("/consensus/{sid}/respond"),
        Some(&parent),
        Some(json!({"decision": "modify", "changes": [{"keyword": "anime", "position": {"kind": "change", "weight": 0}}]})),
    );
    api.call(
        "POST",
        &format!("/consensus/{sid}/reasons"),
        Some(&youth),
        Some(json!({"keyword": "anime", "reason": "fun"})),
    );
    let probes = [
        format!("/consensus/{sid}"),
        format!("/pairs/{pair}"),
        format!("/pairs/{pair}/events"),
    ];
    let snapshot = |api: &Api| -> Vec<(StatusCode, Value)> {
        probes
            .iter()
            .flat_map(|u| [&parent, &youth].map(|t| api.call("GET", u, Some(t), None)))
            .collect()
    };
    let before = snapshot(&api);
    drop(api);
    let api = Api::new(Box::new(
        FileStore::open(dir.path()).map_err(|e| e.to_string())?,
    ));
    ensure!(snapshot(&api) == before, "responses differ after restart");

    // privacy fuzz
    let api = Api::new(Box::new(MemoryStore::default()));
    let mut rng = ChaCha8Rng::seed_from_u64(0x5EC);
    let mut secrets = 0;
    for round in 0..40 {
        let (pair, parent, youth) = api.pair();
        let initiator = if rng.random_bool(0.5) {
            &parent
        } else {
            &youth
        };
        let reviewer = if initiator == &parent {
            &youth
        } else {
            &parent
        };
        let mut panel: BTreeMap<&str, i64> = BTreeMap::new();
        for k in VOCAB {
            if rng.random_bool(0.5) {
                panel.insert(k, rng.random_range(-2..=2));
            }
        }
        let (_, snap) = api.call(
            "POST",
            &format!("/pairs/{pair}/consensus"),
            Some(initiator),
            Some(json!({"panel": panel})),
        );
        let sid = snap["session_id"].as_str().unwrap().to_string();
        let kws: Vec<&str> = VOCAB
            .iter()
            .copied()
            .filter(|_| rng.random_bool(0.5))
            .collect();
        let changes: Vec<Value> = kws
            .iter()
            .map(|k| json!({"keyword": k, "position": {"kind": "change", "weight": rng.random_range(-2..=2)}}))
            .collect();
        api.call(
            "POST",
            &format!("/consensus/{sid}/respond"),
            Some(reviewer),
            Some(json!({"decision": "modify", "changes": changes})),
        );
        let mut youth_reasons = Vec::new();
        for _ in 0..rng.random_range(1..20) {
            let k = VOCAB[rng.random_range(0..VOCAB.len())];
            let by_youth = rng.random_bool(0.6);
            let text = format!("secret-{round}-{:016x}", rng.random::<u64>());
            let tok = if by_youth { &youth } else { &parent };
            let (s, _) = match rng.random_range(0..4) {
                0 => api.call("POST", &format!("/consensus/{sid}/advance"), Some(tok), None),
                1 => api.call(
                    "POST",
                    &format!("/consensus/{sid}/positions"),
                    Some(tok),
                    Some(json!({"keyword": k, "position": {"kind": "change", "weight": rng.random_range(-2..=2)}})),
                ),
                _ => api.call("POST", &format!("/consensus/{sid}/reasons"), Some(tok), Some(json!({"keyword": k, "reason": text}))),
            };
            if s == StatusCode::OK && by_youth {
                youth_reasons.push(text);
            }
        }
        for tok in [&parent, &youth] {
            let (_, events) = api.call("GET", &format!("/pairs/{pair}/events"), Some(tok), None);
            let body = events.to_string();
            for r in &youth_reasons {
                ensure!(
                    !body.contains(r.as_str()),
                    "round {round}: youth reason exposed by events endpoint"
                );
            }
        }
        secrets += youth_reasons.len();
    }
    Ok(format!("100/100 expired joins rejected; 409 on stage violations; restart identical; {secrets} youth reasons never exposed"))
}

// --------------------------------------------------------------- guidelines

fn random_guidelines(rng: &mut ChaCha8Rng) -> CommonGuidelineSet {
    let n_bands = rng.random_range(1..7);
    let mut min = 0u32;
    let mut age_bands = Vec::new();
    for i in 0..n_bands {
        let last = i + 1 == n_bands;
        let max = if last {
            None
        } else {
            Some(min + rng.random_range(0..6))
        };
        age_bands.push(AgeBand {
            name: format!("band-{i}-{}", rng.random::<u16>()),
            min_age: min,
            max_age: max,
        });
        if let Some(m) = max {
            min = m + 1;
        }
    }
    let risks = (0..rng.random_range(1..6))
        .map(|i| RiskCategory {
            name: format!("risk {i}"),
            levels: (0..rng.random_range(1..6))
                .map(|l| format!("level-{l}"))
                .collect(),
            description: if rng.random_bool(0.5) {
                format!("desc \"{}\"", rng.random::<u32>())
            } else {
                String::new()
            },
        })
        .collect();
    let appropriateness = (0..rng.random_range(1..4))
        .map(|i| AppropriatenessCategory {
            name: format!("value {i}"),
            scale: (0..rng.random_range(2..=4))
                .map(|l| format!("s{l}"))
                .collect(),
        })
        .collect();
    CommonGuidelineSet {
        age_bands,
        risks,
        appropriateness,
        source_notes: format!("notes ünïcode {}", rng.random::<u32>()),
    }
}

fn guideline_roundtrip() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(0x6D);
    for doc in 0..100 {
        let set = random_guidelines(&mut rng);
        let loaded = load_common(&set.to_json()).map_err(|e| format!("doc {doc}: {e}"))?;
        ensure!(loaded == set, "doc {doc}: load(serialize(x)) != x");
        ensure!(
            load_common(&loaded.to_json()).ok() == Some(loaded.clone()),
            "doc {doc}: second round trip"
        );
    }
    let mut overlaps = 0;
    while overlaps < 100 {
        let mut set = random_guidelines(&mut rng);
        let n = set.age_bands.len();
        if n < 2 {
            continue;
        }
        let i = rng.random_range(1..n);
        let prev_max = set.age_bands[i - 1].max_age.unwrap();
        if rng.random_bool(0.5) {
            set.age_bands[i].min_age = rng.random_range(set.age_bands[i - 1].min_age..=prev_max);
        } else {
            let next_min = set.age_bands[i].min_age;
            set.age_bands[i - 1].max_age = Some(next_min + rng.random_range(0..3));
            if let Some(m) = set.age_bands[i].max_age {
                set.age_bands[i - 1].max_age = Some(set.age_bands[i - 1].max_age.unwrap().min(m));
            }
        }
        set.age_bands.shuffle(&mut rng);
        match load_common(&set.to_json()) {
            Err(GuidelineError::Overlap { .. }) => overlaps += 1,
            other => return Err(format!("overlap {overlaps} not rejected: {other:?}")),
        }
    }
    let doc = json!({
        "age_bands": [{"name": "a", "min_age": 0, "max_age": 7}, {"name": "b", "min_age": 6, "max_age": null}],
        "risks": [{"name": "violence"}],
        "appropriateness": [{"name": "fun"}]
    });
    ensure!(
        matches!(
            load_common(&doc.to_string()),
            Err(GuidelineError::Overlap { .. })
        ),
        "0-7 / 6+ not rejected"
    );
    Ok("100 random documents round-trip; 100/100 overlapping band sets rejected".into())
}

// --------------------------------------------------------------------- main

fn main() {
    let criteria: [Criterion; 8] = [
        ("consensus state machine", consensus_suite),
        ("simulation harness", simulation_harness),
        ("ingest oracles", ingest_oracles),
        ("feedback math", feedback_math),
        ("end-to-end determinism", end_to_end),
        ("combine_chunks", combine),
        ("service contracts", service_contracts),
        ("guideline round-trip", guideline_roundtrip),
    ];
    let mut failed = 0;
    for (name, f) in criteria {
        let result = std::panic::catch_unwind(f).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        match result {
            Ok(detail) => println!("PASS  {name}: {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL  {name}: {why}");
            }
        }
    }
    println!(
        "acceptance: {} passed, {failed} failed",
        criteria.len() - failed
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
