use std::path::PathBuf;
use std::sync::{Arc, Mutex};

use axum::body::Body;
use axum::http::{Request, StatusCode};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

use coview_core::guidelines::CommonGuidelineSet;
use coview_core::provider::MockProvider;
use coview_core::service::{router, Engine, EventStore, FileStore, MemoryStore, ServiceConfig};
use coview_core::time::{ManualClock, Timestamp};

fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

struct Harness {
    app: axum::Router,
    clock: Arc<ManualClock>,
}

fn engine(store: Box<dyn EventStore>, clock: Arc<ManualClock>) -> Engine {
    let cfg = ServiceConfig {
        seed: Some(11),
        ..ServiceConfig::default()
    };
    Engine::open(
        cfg,
        CommonGuidelineSet::default_set(),
        Arc::new(MockProvider::with_default_lexicon()),
        clock,
        store,
    )
    .unwrap()
}

impl Harness {
    fn new() -> Self {
        Self::with_store(Box::new(MemoryStore::default()))
    }

    fn with_store(store: Box<dyn EventStore>) -> Self {
        let clock = Arc::new(ManualClock::new(Timestamp(1_000_000)));
        let app = router(Arc::new(Mutex::new(engine(store, clock.clone()))));
        Self { app, clock }
    }

    async fn call(
        &self,
        method: &str,
        uri: &str,
        token: Option<&str>,
        body: Option<Value>,
    ) -> (StatusCode, Value) {
        let mut req = Request::builder().method(method).uri(uri);
        if let Some(t) = token {
            req = req.header("authorization", format!("Bearer {t}"));
        }
        let body = match body {
            Some(v) => {
                req = req.header("content-type", "application/json");
                Body::from(v.to_string())
            }
            None => Body::empty(),
        };
        let resp = self
            .app
            .clone()
            .oneshot(req.body(body).unwrap())
            .await
            .unwrap();
        let status = resp.status();
        let bytes = resp.into_body().collect().await.unwrap().to_bytes();
        let value = if bytes.is_empty() {
            Value::Null
        } else {
            serde_json::from_slice(&bytes).unwrap()
        };
        (status, value)
    }

    /// Creates a pair and joins both parties. Returns (pair_id, parent token, youth token).
    async fn paired(&self) -> (String, String, String) {
        let (s, created) = self.call("POST", "/pairs", None, None).await;
        assert_eq!(s, StatusCode::CREATED);
        let code = created["code"].as_str().unwrap().to_string();
        let (s, p) = self
            .call(
                "POST",
                &format!("/pairs/{code}/join"),
                None,
                Some(json!({"role": "parent", "account": "mum"})),
            )
            .await;
        assert_eq!(s, StatusCode::OK, "{p}");
        let (s, y) = self
            .call(
                "POST",
                &format!("/pairs/{code}/join"),
                None,
                Some(json!({"role": "youth", "account": "kid"})),
            )
            .await;
        assert_eq!(s, StatusCode::OK);
        assert_eq!(y["complete"], true);
        (
            created["pair_id"].as_str().unwrap().to_string(),
            p["token"].as_str().unwrap().to_string(),
            y["token"].as_str().unwrap().to_string(),
        )
    }
}

#[tokio::test]
async fn pairing_flow_and_code_rules() {
    let h = Harness::new();
    let (_, a) = h.call("POST", "/pairs", None, None).await;
    let (_, b) = h.call("POST", "/pairs", None, None).await;
    let code = a["code"].as_str().unwrap();
    assert_eq!(code.len(), 6);
    assert!(code
        .chars()
        .all(|c| c.is_ascii_uppercase() || c.is_ascii_digit()));
    assert_ne!(a["code"], b["code"]);
    assert_eq!(a["used"], false);

    let join = |role: &str| json!({"role": role, "account": format!("{role}-acct")});
    let (s, _) = h
        .call(
            "POST",
            &format!("/pairs/{code}/join"),
            None,
            Some(join("parent")),
        )
        .await;
    assert_eq!(s, StatusCode::OK);
    let (s, e) = h
        .call(
            "POST",
            &format!("/pairs/{code}/join"),
            None,
            Some(join("parent")),
        )
        .await;
    assert_eq!(s, StatusCode::CONFLICT);
    assert_eq!(e["error"], "RoleTaken");
    let (s, _) = h
        .call(
            "POST",
            &format!("/pairs/{code}/join"),
            None,
            Some(join("youth")),
        )
        .await;
    assert_eq!(s, StatusCode::OK);
    let (s, e) = h
        .call(
            "POST",
            &format!("/pairs/{code}/join"),
            None,
            Some(join("youth")),
        )
        .await;
    assert_eq!(
        (s, e["error"].as_str()),
        (StatusCode::CONFLICT, Some("CodeUsed"))
    );

    let (s, e) = h
        .call("POST", "/pairs/ZZZZZZ/join", None, Some(join("youth")))
        .await;
    assert_eq!(
        (s, e["error"].as_str()),
        (StatusCode::NOT_FOUND, Some("UnknownCode"))
    );

    let other = b["code"].as_str().unwrap();
    h.clock.advance(86_400_000);
    let (s, e) = h
        .call(
            "POST",
            &format!("/pairs/{other}/join"),
            None,
            Some(join("youth")),
        )
        .await;
    assert_eq!(
        (s, e["error"].as_str()),
        (StatusCode::CONFLICT, Some("CodeExpired"))
    );

    let (s, e) = h
        .call(
            "POST",
            "/pairs/ZZZZZZ/join",
            None,
            Some(json!({"role": "co", "account": "x"})),
        )
        .await;
    assert_eq!(s, StatusCode::NOT_FOUND, "{e}");
}

#[tokio::test]
async fn welcome_event_logged_when_complete() {
    let h = Harness::new();
    let (pair, parent, _) = h.paired().await;
    let (s, events) = h
        .call("GET", &format!("/pairs/{pair}/events"), Some(&parent), None)
        .await;
    assert_eq!(s, StatusCode::OK);
    let kinds: Vec<&str> = events
        .as_array()
        .unwrap()
        .iter()
        .map(|e| e["kind"].as_str().unwrap())
        .collect();
    assert_eq!(
        kinds,
        ["pair.created", "pair.joined", "pair.joined", "pair.welcome"]
    );
    assert!(!events.to_string().contains(&parent), "token leaked");
}

#[tokio::test]
async fn auth_and_role_checks() {
    let h = Harness::new();
    let (pair, parent, youth) = h.paired().await;
    let (s, _) = h.call("GET", &format!("/pairs/{pair}"), None, None).await;
    assert_eq!(s, StatusCode::UNAUTHORIZED);
    let (s, _) = h
        .call("GET", &format!("/pairs/{pair}"), Some("nope"), None)
        .await;
    assert_eq!(s, StatusCode::UNAUTHORIZED);
    let (s, _) = h
        .call(
            "PUT",
            &format!("/pairs/{pair}/panels/youth"),
            Some(&parent),
            Some(json!({"set": {"anime": 1}})),
        )
        .await;
    assert_eq!(s, StatusCode::FORBIDDEN);
    let (s, _) = h
        .call(
            "PUT",
            &format!("/pairs/{pair}/panels/co"),
            Some(&youth),
            Some(json!({"set": {"anime": 1}})),
        )
        .await;
    assert_eq!(s, StatusCode::FORBIDDEN);
    let (s, _) = h
        .call(
            "PUT",
            &format!("/pairs/{pair}/panels/youth"),
            Some(&youth),
            Some(json!({"set": {"anime": 7}})),
        )
        .await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    let (s, _) = h.call("GET", "/pairs/pair-99", Some(&youth), None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn consensus_over_http() {
    let h = Harness::new();
    let (pair, parent, youth) = h.paired().await;
    let (s, panel) = h
        .call(
            "PUT",
            &format!("/pairs/{pair}/panels/youth"),
            Some(&youth),
            Some(json!({"set": {"Anime": 2, "music": 1}})),
        )
        .await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(panel["entries"]["anime"], 2);

    let (s, snap) = h
        .call(
            "POST",
            &format!("/pairs/{pair}/consensus"),
            Some(&youth),
            None,
        )
        .await;
    assert_eq!(s, StatusCode::CREATED, "{snap}");
    let sid = snap["session_id"].as_str().unwrap().to_string();
    assert_eq!(snap["stage"], "initial_proposal");

    let (_, parent_view) = h
        .call("GET", &format!("/consensus/{sid}"), Some(&parent), None)
        .await;
    assert_eq!(
        parent_view["pending"][0]["template_id"],
        "initial.present_panel"
    );

    let modify = json!({"decision": "modify", "changes": [{"keyword": "anime", "position": {"kind": "change", "weight": 0}}]});
    let (s, _) = h
        .call(
            "POST",
            &format!("/consensus/{sid}/respond"),
            Some(&youth),
            Some(modify.clone()),
        )
        .await;
    assert_eq!(s, StatusCode::FORBIDDEN);
    let (s, snap) = h
        .call(
            "POST",
            &format!("/consensus/{sid}/respond"),
            Some(&parent),
            Some(modify.clone()),
        )
        .await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(snap["stage"], "self_evaluation");
    let (s, _) = h
        .call(
            "POST",
            &format!("/consensus/{sid}/respond"),
            Some(&parent),
            Some(modify),
        )
        .await;
    assert_eq!(s, StatusCode::CONFLICT);

    let secret = "it is my favourite thing after school";
    for (tok, text) in [(&youth, secret), (&parent, "too much screen time")] {
        let (s, _) = h
            .call(
                "POST",
                &format!("/consensus/{sid}/reasons"),
                Some(tok),
                Some(json!({"keyword": "anime", "reason": text})),
            )
            .await;
        assert_eq!(s, StatusCode::OK);
    }
    let (_, parent_view) = h
        .call("GET", &format!("/consensus/{sid}"), Some(&parent), None)
        .await;
    assert!(
        parent_view.to_string().contains(secret),
        "reason relayed through the transcript"
    );

    let (s, _) = h
        .call(
            "POST",
            &format!("/consensus/{sid}/positions"),
            Some(&youth),
            Some(json!({"keyword": "anime", "position": {"kind": "change", "weight": 1}})),
        )
        .await;
    assert_eq!(s, StatusCode::OK);
    let (s, _) = h
        .call(
            "POST",
            &format!("/consensus/{sid}/positions"),
            Some(&parent),
            Some(json!({"keyword": "anime", "position": {"kind": "change", "weight": 1}})),
        )
        .await;
    assert_eq!(s, StatusCode::OK);
    let (_, snap) = h
        .call(
            "POST",
            &format!("/consensus/{sid}/advance"),
            Some(&parent),
            None,
        )
        .await;
    assert_eq!(snap["stage"], "final_proposal");
    let (_, snap) = h
        .call(
            "POST",
            &format!("/consensus/{sid}/advance"),
            Some(&parent),
            None,
        )
        .await;
    assert_eq!(snap["stage"], "finalized");
    assert_eq!(snap["outcome"], "consensus_reached");
    let (s, _) = h
        .call(
            "POST",
            &format!("/consensus/{sid}/advance"),
            Some(&parent),
            None,
        )
        .await;
    assert_eq!(s, StatusCode::CONFLICT);

    let (_, pair_view) = h
        .call("GET", &format!("/pairs/{pair}"), Some(&parent), None)
        .await;
    assert_eq!(pair_view["co_panel"]["role"], "co");
    assert_eq!(
        pair_view["co_panel"]["entries"],
        json!({"anime": 1, "music": 1})
    );

    let (_, events) = h
        .call("GET", &format!("/pairs/{pair}/events"), Some(&parent), None)
        .await;
    assert!(!events.to_string().contains(secret));
    assert!(events
        .as_array()
        .unwrap()
        .iter()
        .any(|e| e["kind"] == "consensus.finalized"));
}

#[tokio::test]
async fn censor_feedback_and_reports() {
    let h = Harness::new();
    let (pair, parent, youth) = h.paired().await;
    let bundle = fixtures().join("bundle");
    let (s, video) = h
        .call(
            "POST",
            &format!("/pairs/{pair}/videos"),
            Some(&youth),
            Some(json!({"bundle": {"frames_dir": bundle.join("frames"), "subtitles": bundle.join("subs.srt")}})),
        )
        .await;
    assert_eq!(s, StatusCode::CREATED);
    let vid = video["video_id"].as_str().unwrap().to_string();

    let (s, _) = h
        .call(
            "GET",
            &format!("/videos/{vid}/feedback"),
            Some(&parent),
            None,
        )
        .await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    let (s, result) = h
        .call("POST", &format!("/videos/{vid}/censor"), Some(&youth), None)
        .await;
    assert_eq!(s, StatusCode::OK, "{result}");
    assert_eq!(result["age_band"], "12-15");
    let (s, fb) = h
        .call(
            "GET",
            &format!("/videos/{vid}/feedback"),
            Some(&parent),
            None,
        )
        .await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(fb["entries"], json!([]), "no co-panel yet");

    let (s, report) = h
        .call(
            "GET",
            &format!("/pairs/{pair}/reports"),
            Some(&parent),
            None,
        )
        .await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(report["video_count"], 1);
    assert_eq!(report["risk_frequency"]["violence"], 1);
    assert!(
        !report.to_string().contains("punch"),
        "no transcript text in reports"
    );

    let (s, report) = h
        .call(
            "GET",
            &format!("/pairs/{pair}/reports?from=0&to=10"),
            Some(&youth),
            None,
        )
        .await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(report["video_count"], 0);
    let (s, _) = h
        .call(
            "GET",
            &format!("/pairs/{pair}/reports?from=10&to=0"),
            Some(&youth),
            None,
        )
        .await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);

    let (s, panel) = h
        .call(
            "POST",
            &format!("/pairs/{pair}/panels/youth/from-videos"),
            Some(&youth),
            Some(json!({"videos": [{"video_id": vid, "label": "suitable"}]})),
        )
        .await;
    assert_eq!(s, StatusCode::OK, "{panel}");
    assert_eq!(panel["entries"]["games"], 2);

    let (s, missing) = h
        .call(
            "POST",
            &format!("/pairs/{pair}/videos"),
            Some(&youth),
            Some(
                json!({"bundle": {"frames_dir": "/nonexistent", "subtitles": "/nonexistent.srt"}}),
            ),
        )
        .await;
    assert_eq!(s, StatusCode::CREATED);
    let (s, _) = h
        .call(
            "POST",
            &format!("/videos/{}/censor", missing["video_id"].as_str().unwrap()),
            Some(&youth),
            None,
        )
        .await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
}

#[tokio::test]
async fn restart_from_file_log_gives_identical_responses() {
    let dir = tempfile::tempdir().unwrap();
    let h = Harness::with_store(Box::new(FileStore::open(dir.path()).unwrap()));
    let (pair, parent, youth) = h.paired().await;
    let (_, snap) = h
        .call(
            "POST",
            &format!("/pairs/{pair}/consensus"),
            Some(&parent),
            Some(json!({"panel": {"games": -2}})),
        )
        .await;
    let sid = snap["session_id"].as_str().unwrap().to_string();
    h.call(
        "POST",
        &format!("/consensus/{sid}/respond"),
        Some(&youth),
        Some(json!({"decision": "modify", "changes": [{"keyword": "games", "position": {"kind": "drop"}}]})),
    )
    .await;

    let urls = [
        format!("/pairs/{pair}"),
        format!("/consensus/{sid}"),
        format!("/pairs/{pair}/events"),
        format!("/pairs/{pair}/panels/parent"),
        format!("/pairs/{pair}/reports?from=0&to=2000000"),
    ];
    let mut before = Vec::new();
    for u in &urls {
        for t in [&parent, &youth] {
            before.push(h.call("GET", u, Some(t), None).await);
        }
    }
    drop(h);

    let h2 = Harness::with_store(Box::new(FileStore::open(dir.path()).unwrap()));
    let mut after = Vec::new();
    for u in &urls {
        for t in [&parent, &youth] {
            after.push(h2.call("GET", u, Some(t), None).await);
        }
    }
    assert_eq!(before, after);

    // new writes continue the sequence
    let (s, _) = h2.call("POST", "/pairs", None, None).await;
    assert_eq!(s, StatusCode::CREATED);
    let (_, events) = h2
        .call("GET", &format!("/pairs/{pair}/events"), Some(&parent), None)
        .await;
    let seqs: Vec<u64> = events
        .as_array()
        .unwrap()
        .iter()
        .map(|e| e["seq"].as_u64().unwrap())
        .collect();
    assert!(seqs.windows(2).all(|w| w[0] < w[1]));
}
