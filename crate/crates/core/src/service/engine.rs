//! Service state, derived entirely by folding the event log.
//!
//! Every state change goes through [`Engine::commit`]: the record is first
//! written to the store and then applied to the in-memory [`State`] with the
//! same [`State::apply`] used at startup, so a restarted engine ends up with
//! an identical state.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::consensus::{
    replay, start_session, ConsensusError, ConsensusSession, Decision, MediatorMessage, Outcome,
    Position, SessionEvent, Stage,
};
use crate::feedback::{aggregate, InTimeFeedback, Period, SummaryReport};
use crate::guidelines::CommonGuidelineSet;
use crate::pipeline::{censor_bundle, features_for, BundleRef, PipelineError};
use crate::preference::{Keyword, LabeledVideoRef, PreferenceError, PreferencePanel, Role, Weight};
use crate::provider::{AnalysisProvider, CensorshipResult, ProviderError, VideoFeatures};
use crate::time::{Clock, Timestamp};

use super::config::ServiceConfig;
use super::store::{Actor, EventRecord, EventStore};

const CODE_ALPHABET: &[u8] = b"ABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789";
pub const CODE_LEN: usize = 6;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ServiceError {
    #[error("unknown pairing code")]
    UnknownCode,
    #[error("pairing code expired")]
    CodeExpired,
    #[error("pairing code already used")]
    CodeUsed,
    #[error("the {0} slot of this pair is already taken")]
    RoleTaken(Role),
    #[error("{0} not found")]
    NotFound(String),
    #[error("missing or unknown bearer token")]
    Unauthorized,
    #[error("forbidden: {0}")]
    Forbidden(String),
    #[error("conflict: {0}")]
    Conflict(String),
    #[error("invalid request: {0}")]
    Validation(String),
    #[error("analysis provider failed: {0}")]
    Provider(String),
    #[error("storage failure: {0}")]
    Storage(String),
}

impl From<ConsensusError> for ServiceError {
    fn from(e: ConsensusError) -> Self {
        match e {
            ConsensusError::WrongStage(_) | ConsensusError::NotFinalized => {
                ServiceError::Conflict(e.to_string())
            }
            ConsensusError::WrongActor(_) | ConsensusError::InvalidRole(_) => {
                ServiceError::Forbidden(e.to_string())
            }
            _ => ServiceError::Validation(e.to_string()),
        }
    }
}

impl From<PreferenceError> for ServiceError {
    fn from(e: PreferenceError) -> Self {
        ServiceError::Validation(e.to_string())
    }
}

impl From<PipelineError> for ServiceError {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Provider(ProviderError::NoChunks | ProviderError::ZeroDuration) => {
                ServiceError::Validation(e.to_string())
            }
            PipelineError::Provider(p) => ServiceError::Provider(p.to_string()),
            other => ServiceError::Validation(other.to_string()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairingCode {
    pub code: String,
    pub pair_id: String,
    pub created_at: Timestamp,
    pub ttl_ms: i64,
    pub used: bool,
}

impl PairingCode {
    pub fn expires_at(&self) -> Timestamp {
        self.created_at.plus_millis(self.ttl_ms)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Pair {
    pub pair_id: String,
    pub created_at: Timestamp,
    pub parent_account: Option<String>,
    pub youth_account: Option<String>,
    pub co_panel: Option<PreferencePanel>,
    pub panels: BTreeMap<Role, PreferencePanel>,
}

impl Pair {
    pub fn is_complete(&self) -> bool {
        self.parent_account.is_some() && self.youth_account.is_some()
    }

    fn slot(&mut self, role: Role) -> &mut Option<String> {
        match role {
            Role::Parent => &mut self.parent_account,
            _ => &mut self.youth_account,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoRecord {
    pub video_id: String,
    pub pair_id: String,
    pub bundle: BundleRef,
    pub submitted_by: Role,
    pub latest_result: Option<CensorshipResult>,
    pub feedback: Option<InTimeFeedback>,
}

#[derive(Debug, Clone, PartialEq)]
struct SessionEntry {
    pair_id: String,
    session: ConsensusSession,
}

/// An authenticated party.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Caller {
    pub pair_id: String,
    pub role: Role,
}

// ---- event payloads ----

#[derive(Serialize, Deserialize)]
struct PairCreated {
    code: String,
    ttl_ms: i64,
}

#[derive(Serialize, Deserialize)]
struct PairJoined {
    code: String,
    role: Role,
    account: String,
    token: String,
}

#[derive(Serialize, Deserialize)]
struct PanelSet {
    role: Role,
    panel: PreferencePanel,
}

#[derive(Serialize, Deserialize)]
struct ConsensusStep {
    session_id: String,
    event: SessionEvent,
}

#[derive(Serialize, Deserialize)]
struct ConsensusFinalized {
    session_id: String,
    outcome: Outcome,
    co_panel: PreferencePanel,
}

#[derive(Serialize, Deserialize)]
struct VideoRegistered {
    video_id: String,
    bundle: BundleRef,
    submitted_by: Role,
}

#[derive(Serialize, Deserialize)]
struct VideoCensored {
    video_id: String,
    result: CensorshipResult,
    feedback: InTimeFeedback,
}

fn payload<T: Serialize>(value: &T) -> Value {
    serde_json::to_value(value).expect("payload types serialize")
}

fn decode<T: for<'de> Deserialize<'de>>(rec: &EventRecord) -> Result<T, String> {
    serde_json::from_value(rec.payload.clone())
        .map_err(|e| format!("event {} ({}): {e}", rec.seq, rec.kind))
}

/// Everything derived from the log.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct State {
    next_seq: u64,
    codes: BTreeMap<String, PairingCode>,
    pairs: BTreeMap<String, Pair>,
    tokens: BTreeMap<String, Caller>,
    sessions: BTreeMap<String, SessionEntry>,
    videos: BTreeMap<String, VideoRecord>,
    log: Vec<EventRecord>,
}

impl State {
    pub fn apply(&mut self, rec: &EventRecord) -> Result<(), String> {
        if rec.seq != self.next_seq + 1 {
            return Err(format!(
                "expected seq {}, found {}",
                self.next_seq + 1,
                rec.seq
            ));
        }
        let missing_pair = || format!("event {}: unknown pair {}", rec.seq, rec.pair_id);
        match rec.kind.as_str() {
            "pair.created" => {
                let p: PairCreated = decode(rec)?;
                self.codes.insert(
                    p.code.clone(),
                    PairingCode {
                        code: p.code,
                        pair_id: rec.pair_id.clone(),
                        created_at: rec.at,
                        ttl_ms: p.ttl_ms,
                        used: false,
                    },
                );
                self.pairs.insert(
                    rec.pair_id.clone(),
                    Pair {
                        pair_id: rec.pair_id.clone(),
                        created_at: rec.at,
                        parent_account: None,
                        youth_account: None,
                        co_panel: None,
                        panels: BTreeMap::new(),
                    },
                );
            }
            "pair.joined" => {
                let p: PairJoined = decode(rec)?;
                let pair = self.pairs.get_mut(&rec.pair_id).ok_or_else(missing_pair)?;
                *pair.slot(p.role) = Some(p.account);
                let complete = pair.is_complete();
                if complete {
                    if let Some(code) = self.codes.get_mut(&p.code) {
                        code.used = true;
                    }
                }
                self.tokens.insert(
                    p.token,
                    Caller {
                        pair_id: rec.pair_id.clone(),
                        role: p.role,
                    },
                );
            }
            "pair.welcome" => {}
            "panel.set" => {
                let p: PanelSet = decode(rec)?;
                let pair = self.pairs.get_mut(&rec.pair_id).ok_or_else(missing_pair)?;
                pair.panels.insert(p.role, p.panel);
            }
            "consensus.started" => {
                let p: ConsensusStep = decode(rec)?;
                let session = replay(std::slice::from_ref(&p.event)).map_err(|e| e.to_string())?;
                self.sessions.insert(
                    p.session_id,
                    SessionEntry {
                        pair_id: rec.pair_id.clone(),
                        session,
                    },
                );
            }
            "consensus.responded"
            | "consensus.reason"
            | "consensus.position"
            | "consensus.advanced" => {
                let p: ConsensusStep = decode(rec)?;
                let entry = self.sessions.get_mut(&p.session_id).ok_or_else(|| {
                    format!("event {}: unknown session {}", rec.seq, p.session_id)
                })?;
                entry.session = entry.session.apply(&p.event).map_err(|e| e.to_string())?;
            }
            "consensus.finalized" => {
                let p: ConsensusFinalized = decode(rec)?;
                let pair = self.pairs.get_mut(&rec.pair_id).ok_or_else(missing_pair)?;
                pair.co_panel = Some(p.co_panel);
            }
            "video.registered" => {
                let p: VideoRegistered = decode(rec)?;
                self.videos.insert(
                    p.video_id.clone(),
                    VideoRecord {
                        video_id: p.video_id,
                        pair_id: rec.pair_id.clone(),
                        bundle: p.bundle,
                        submitted_by: p.submitted_by,
                        latest_result: None,
                        feedback: None,
                    },
                );
            }
            "video.censored" => {
                let p: VideoCensored = decode(rec)?;
                let video = self
                    .videos
                    .get_mut(&p.video_id)
                    .ok_or_else(|| format!("event {}: unknown video {}", rec.seq, p.video_id))?;
                video.latest_result = Some(p.result);
                video.feedback = Some(p.feedback);
            }
            other => return Err(format!("event {}: unknown kind '{other}'", rec.seq)),
        }
        self.next_seq = rec.seq;
        self.log.push(rec.clone());
        Ok(())
    }
}

// ---- responses ----

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JoinResponse {
    pub pair_id: String,
    pub role: Role,
    pub token: String,
    pub complete: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairView {
    pub pair_id: String,
    pub created_at: Timestamp,
    pub parent_joined: bool,
    pub youth_joined: bool,
    pub complete: bool,
    pub co_panel: Option<PreferencePanel>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConflictView {
    pub keyword: Keyword,
    pub initiator_position: Position,
    pub reviewer_position: Position,
    pub resolved: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionSnapshot {
    pub session_id: String,
    pub pair_id: String,
    pub initiator: Role,
    pub reviewer: Role,
    pub stage: Stage,
    pub iteration: u32,
    pub max_iterations: u32,
    pub outcome: Option<Outcome>,
    pub draft_panel: PreferencePanel,
    pub conflicts: Vec<ConflictView>,
    pub deadline: Timestamp,
    /// Messages for the caller emitted since the caller last acted.
    pub pending: Vec<MediatorMessage>,
}

/// A log entry as shown to either party: no tokens and no reason text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PublicEvent {
    pub seq: u64,
    pub kind: String,
    pub actor: Actor,
    pub at: Timestamp,
    pub detail: Value,
}

fn public_detail(rec: &EventRecord) -> Value {
    let p = &rec.payload;
    let pick = |keys: &[&str]| -> Value {
        let mut out = serde_json::Map::new();
        for k in keys {
            if let Some(v) = p.get(*k) {
                out.insert(k.to_string(), v.clone());
            }
        }
        Value::Object(out)
    };
    match rec.kind.as_str() {
        "pair.joined" => pick(&["role"]),
        "panel.set" => json!({
            "role": p["role"],
            "revision": p["panel"]["revision"],
            "keywords": p["panel"]["entries"].as_object().map_or(0, |m| m.len()),
        }),
        "consensus.started" => json!({
            "session_id": p["session_id"],
            "initiator": p["event"]["input"]["initiator"],
        }),
        "consensus.responded" => json!({
            "session_id": p["session_id"],
            "decision": p["event"]["input"]["decision"]["decision"],
        }),
        "consensus.reason" | "consensus.position" => json!({
            "session_id": p["session_id"],
            "keyword": p["event"]["input"]["keyword"],
        }),
        "consensus.advanced" => pick(&["session_id"]),
        "consensus.finalized" => pick(&["session_id", "outcome"]),
        "video.registered" => pick(&["video_id"]),
        "video.censored" => json!({
            "video_id": p["video_id"],
            "age_band": p["result"]["age_band"],
        }),
        _ => json!({}),
    }
}

/// Work for one censorship run, captured under the lock and executed outside it.
pub struct CensorJob {
    pub caller: Caller,
    pub video_id: String,
    bundle: BundleRef,
    co_panel: PreferencePanel,
    guidelines: CommonGuidelineSet,
    cfg: ServiceConfig,
    provider: Arc<dyn AnalysisProvider>,
    at: Timestamp,
}

impl CensorJob {
    pub fn run(&self) -> Result<(CensorshipResult, InTimeFeedback), ServiceError> {
        Ok(censor_bundle(
            &self.video_id,
            &self.bundle,
            &self.co_panel,
            &self.guidelines,
            &self.cfg.ingest,
            self.cfg.provider.context_budget,
            self.provider.as_ref(),
            self.at,
        )?)
    }
}

/// Feature extraction for indirect configuration, run outside the lock.
pub struct InferJob {
    pub caller: Caller,
    pub role: Role,
    known: LabeledFeatures,
    pending: Vec<(LabeledVideoRef, BundleRef)>,
    cfg: ServiceConfig,
    provider: Arc<dyn AnalysisProvider>,
}

/// Videos with their extracted features, ready for panel inference.
pub type LabeledFeatures = Vec<(LabeledVideoRef, VideoFeatures)>;

impl InferJob {
    pub fn run(self) -> Result<(Caller, Role, LabeledFeatures), ServiceError> {
        let mut all = self.known;
        for (video, bundle) in self.pending {
            let features = features_for(
                &bundle,
                &self.cfg.ingest,
                self.cfg.provider.context_budget,
                self.provider.as_ref(),
            )?;
            all.push((video, features));
        }
        Ok((self.caller, self.role, all))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct PanelUpdate {
    /// Replaces every entry when present.
    pub entries: Option<BTreeMap<String, i64>>,
    pub set: BTreeMap<String, i64>,
    pub remove: Vec<String>,
}

pub struct Engine {
    cfg: ServiceConfig,
    guidelines: CommonGuidelineSet,
    provider: Arc<dyn AnalysisProvider>,
    clock: Arc<dyn Clock>,
    rng: ChaCha8Rng,
    store: Box<dyn EventStore>,
    state: State,
}

impl Engine {
    /// Builds the engine and replays whatever the store already holds.
    pub fn open(
        cfg: ServiceConfig,
        guidelines: CommonGuidelineSet,
        provider: Arc<dyn AnalysisProvider>,
        clock: Arc<dyn Clock>,
        mut store: Box<dyn EventStore>,
    ) -> Result<Self, ServiceError> {
        let records = store
            .load()
            .map_err(|e| ServiceError::Storage(e.to_string()))?;
        let mut state = State::default();
        for rec in &records {
            state.apply(rec).map_err(ServiceError::Storage)?;
        }
        let seed = cfg.seed.unwrap_or_else(|| rand::rng().random());
        Ok(Self {
            cfg,
            guidelines,
            provider,
            clock,
            rng: ChaCha8Rng::seed_from_u64(seed),
            store,
            state,
        })
    }

    pub fn state(&self) -> &State {
        &self.state
    }

    pub fn config(&self) -> &ServiceConfig {
        &self.cfg
    }

    pub fn now(&self) -> Timestamp {
        self.clock.now()
    }

    fn commit(
        &mut self,
        pair_id: &str,
        actor: Actor,
        kind: &str,
        payload: Value,
    ) -> Result<EventRecord, ServiceError> {
        let rec = EventRecord {
            seq: self.state.next_seq + 1,
            pair_id: pair_id.to_string(),
            actor,
            kind: kind.to_string(),
            payload,
            at: self.clock.now(),
        };
        self.store
            .append(&rec)
            .map_err(|e| ServiceError::Storage(e.to_string()))?;
        self.state
            .apply(&rec)
            .unwrap_or_else(|e| panic!("validated event failed to apply: {e}"));
        Ok(rec)
    }

    fn random_string(&mut self, alphabet: &[u8], len: usize) -> String {
        (0..len)
            .map(|_| alphabet[self.rng.random_range(0..alphabet.len())] as char)
            .collect()
    }

    // ---- pairing ----

    pub fn create_pair(&mut self) -> Result<PairingCode, ServiceError> {
        let code = loop {
            let c = self.random_string(CODE_ALPHABET, CODE_LEN);
            if !self.state.codes.contains_key(&c) {
                break c;
            }
        };
        let pair_id = format!("pair-{}", self.state.pairs.len() + 1);
        let ttl_ms = self.cfg.code_ttl_ms;
        self.commit(
            &pair_id,
            Actor::System,
            "pair.created",
            payload(&PairCreated {
                code: code.clone(),
                ttl_ms,
            }),
        )?;
        Ok(self.state.codes[&code].clone())
    }

    pub fn join_pair(
        &mut self,
        code: &str,
        role: Role,
        account: &str,
    ) -> Result<JoinResponse, ServiceError> {
        let entry = self
            .state
            .codes
            .get(code)
            .ok_or(ServiceError::UnknownCode)?;
        if entry.used {
            return Err(ServiceError::CodeUsed);
        }
        if self.clock.now() >= entry.expires_at() {
            return Err(ServiceError::CodeExpired);
        }
        if role == Role::Co {
            return Err(ServiceError::Validation("join as parent or youth".into()));
        }
        let account = account.trim();
        if account.is_empty() {
            return Err(ServiceError::Validation("account must not be empty".into()));
        }
        let pair_id = entry.pair_id.clone();
        let mut pair = self.state.pairs[&pair_id].clone();
        if pair.slot(role).is_some() {
            return Err(ServiceError::RoleTaken(role));
        }
        let token = loop {
            let t = self.random_string(b"0123456789abcdef", 32);
            if !self.state.tokens.contains_key(&t) {
                break t;
            }
        };
        self.commit(
            &pair_id,
            role.into(),
            "pair.joined",
            payload(&PairJoined {
                code: code.to_string(),
                role,
                account: account.to_string(),
                token: token.clone(),
            }),
        )?;
        *pair.slot(role) = Some(account.to_string());
        let complete = pair.is_complete();
        if complete {
            self.commit(&pair_id, Actor::System, "pair.welcome", json!({}))?;
        }
        Ok(JoinResponse {
            pair_id,
            role,
            token,
            complete,
        })
    }

    pub fn authenticate(&self, token: Option<&str>) -> Result<Caller, ServiceError> {
        token
            .and_then(|t| self.state.tokens.get(t))
            .cloned()
            .ok_or(ServiceError::Unauthorized)
    }

    fn pair_for(&self, caller: &Caller, pair_id: &str) -> Result<&Pair, ServiceError> {
        let pair = self
            .state
            .pairs
            .get(pair_id)
            .ok_or_else(|| ServiceError::NotFound(format!("pair {pair_id}")))?;
        if caller.pair_id != pair_id {
            return Err(ServiceError::Forbidden(
                "token belongs to another pair".into(),
            ));
        }
        Ok(pair)
    }

    pub fn pair_view(&self, caller: &Caller, pair_id: &str) -> Result<PairView, ServiceError> {
        let pair = self.pair_for(caller, pair_id)?;
        Ok(PairView {
            pair_id: pair.pair_id.clone(),
            created_at: pair.created_at,
            parent_joined: pair.parent_account.is_some(),
            youth_joined: pair.youth_account.is_some(),
            complete: pair.is_complete(),
            co_panel: pair.co_panel.clone(),
        })
    }

    // ---- panels ----

    fn own_role(caller: &Caller, role: Role) -> Result<(), ServiceError> {
        if role == Role::Co {
            return Err(ServiceError::Forbidden(
                "the co-preference panel is set by consensus".into(),
            ));
        }
        if caller.role != role {
            return Err(ServiceError::Forbidden(format!(
                "a {} token cannot edit the {role} panel",
                caller.role
            )));
        }
        Ok(())
    }

    pub fn get_panel(
        &self,
        caller: &Caller,
        pair_id: &str,
        role: Role,
    ) -> Result<PreferencePanel, ServiceError> {
        let pair = self.pair_for(caller, pair_id)?;
        Ok(match role {
            Role::Co => pair
                .co_panel
                .clone()
                .unwrap_or_else(|| PreferencePanel::new(Role::Co)),
            r => pair
                .panels
                .get(&r)
                .cloned()
                .unwrap_or_else(|| PreferencePanel::new(r)),
        })
    }

    pub fn update_panel(
        &mut self,
        caller: &Caller,
        pair_id: &str,
        role: Role,
        update: &PanelUpdate,
    ) -> Result<PreferencePanel, ServiceError> {
        Self::own_role(caller, role)?;
        let now = self.clock.now();
        let mut panel = self.get_panel(caller, pair_id, role)?;
        if let Some(entries) = &update.entries {
            let doc = json!({ "role": role, "entries": entries });
            let parsed: PreferencePanel =
                serde_json::from_value(doc).map_err(|e| ServiceError::Validation(e.to_string()))?;
            panel = panel.replace_entries(parsed.entries().clone(), now)?;
        }
        for (k, w) in &update.set {
            let kw = crate::preference::normalize_keyword(k)?;
            panel = panel.set_preference(kw, Weight::new(*w)?, now)?;
        }
        for k in &update.remove {
            panel = panel.remove_preference(&crate::preference::normalize_keyword(k)?, now);
        }
        self.commit(
            pair_id,
            role.into(),
            "panel.set",
            payload(&PanelSet {
                role,
                panel: panel.clone(),
            }),
        )?;
        Ok(panel)
    }

    pub fn prepare_infer(
        &self,
        caller: &Caller,
        pair_id: &str,
        role: Role,
        videos: &[LabeledVideoRef],
    ) -> Result<InferJob, ServiceError> {
        Self::own_role(caller, role)?;
        self.pair_for(caller, pair_id)?;
        if videos.is_empty() {
            return Err(PreferenceError::NoVideos.into());
        }
        let mut known = Vec::new();
        let mut pending = Vec::new();
        for v in videos {
            let rec = self.video_for(caller, &v.video_id)?;
            match &rec.latest_result {
                Some(r) => known.push((v.clone(), r.features.clone())),
                None => pending.push((v.clone(), rec.bundle.clone())),
            }
        }
        Ok(InferJob {
            caller: caller.clone(),
            role,
            known,
            pending,
            cfg: self.cfg.clone(),
            provider: self.provider.clone(),
        })
    }

    pub fn finish_infer(
        &mut self,
        caller: &Caller,
        role: Role,
        labeled: &[(LabeledVideoRef, VideoFeatures)],
    ) -> Result<PreferencePanel, ServiceError> {
        let now = self.clock.now();
        let pair_id = caller.pair_id.clone();
        let panel = self
            .get_panel(caller, &pair_id, role)?
            .infer_from_videos(labeled, now)?;
        self.commit(
            &pair_id,
            role.into(),
            "panel.set",
            payload(&PanelSet {
                role,
                panel: panel.clone(),
            }),
        )?;
        Ok(panel)
    }

    // ---- consensus ----

    fn session_for(&self, caller: &Caller, sid: &str) -> Result<&ConsensusSession, ServiceError> {
        let entry = self
            .state
            .sessions
            .get(sid)
            .ok_or_else(|| ServiceError::NotFound(format!("session {sid}")))?;
        if entry.pair_id != caller.pair_id {
            return Err(ServiceError::Forbidden(
                "session belongs to another pair".into(),
            ));
        }
        Ok(&entry.session)
    }

    pub fn snapshot(&self, caller: &Caller, sid: &str) -> Result<SessionSnapshot, ServiceError> {
        let s = self.session_for(caller, sid)?;
        Ok(SessionSnapshot {
            session_id: s.session_id.clone(),
            pair_id: caller.pair_id.clone(),
            initiator: s.initiator,
            reviewer: s.reviewer(),
            stage: s.stage,
            iteration: s.iteration,
            max_iterations: s.config.max_iterations,
            outcome: s.outcome,
            draft_panel: s.draft_panel.clone(),
            conflicts: s
                .conflicts
                .iter()
                .map(|c| ConflictView {
                    keyword: c.keyword.clone(),
                    initiator_position: c.initiator_position,
                    reviewer_position: c.reviewer_position,
                    resolved: c.resolved,
                })
                .collect(),
            deadline: s.deadline,
            pending: s.pending_for(caller.role).into_iter().cloned().collect(),
        })
    }

    pub fn start_consensus(
        &mut self,
        caller: &Caller,
        pair_id: &str,
        panel: Option<BTreeMap<String, i64>>,
    ) -> Result<SessionSnapshot, ServiceError> {
        let pair = self.pair_for(caller, pair_id)?;
        if !pair.is_complete() {
            return Err(ServiceError::Conflict(
                "both parties must join before consensus".into(),
            ));
        }
        let panel = match panel {
            Some(entries) => {
                serde_json::from_value(json!({ "role": caller.role, "entries": entries }))
                    .map_err(|e| ServiceError::Validation(e.to_string()))?
            }
            None => self.get_panel(caller, pair_id, caller.role)?,
        };
        let sid = format!("cs-{}", self.state.sessions.len() + 1);
        let session = start_session(
            sid.clone(),
            caller.role,
            &panel,
            &self.cfg.consensus,
            self.clock.now(),
        )?;
        let event = session.events.last().expect("start event").clone();
        self.commit(
            pair_id,
            caller.role.into(),
            "consensus.started",
            payload(&ConsensusStep {
                session_id: sid.clone(),
                event,
            }),
        )?;
        self.snapshot(caller, &sid)
    }

    fn step(
        &mut self,
        caller: &Caller,
        sid: &str,
        actor: Actor,
        kind: &str,
        op: impl FnOnce(&ConsensusSession, Timestamp) -> Result<ConsensusSession, ConsensusError>,
    ) -> Result<SessionSnapshot, ServiceError> {
        let now = self.clock.now();
        let next = op(self.session_for(caller, sid)?, now)?;
        let event = next.events.last().expect("operation logged").clone();
        let pair_id = caller.pair_id.clone();
        self.commit(
            &pair_id,
            actor,
            kind,
            payload(&ConsensusStep {
                session_id: sid.to_string(),
                event,
            }),
        )?;
        if let Ok((co_panel, outcome)) = next.finalize() {
            self.commit(
                &pair_id,
                Actor::System,
                "consensus.finalized",
                payload(&ConsensusFinalized {
                    session_id: sid.to_string(),
                    outcome,
                    co_panel,
                }),
            )?;
        }
        self.snapshot(caller, sid)
    }

    pub fn respond(
        &mut self,
        caller: &Caller,
        sid: &str,
        decision: Decision,
    ) -> Result<SessionSnapshot, ServiceError> {
        let role = caller.role;
        self.step(caller, sid, role.into(), "consensus.responded", |s, now| {
            s.reviewer_respond(role, decision, now)
        })
    }

    pub fn reason(
        &mut self,
        caller: &Caller,
        sid: &str,
        keyword: &str,
        reason: &str,
    ) -> Result<SessionSnapshot, ServiceError> {
        let role = caller.role;
        let kw = crate::preference::normalize_keyword(keyword)?;
        self.step(caller, sid, role.into(), "consensus.reason", |s, now| {
            s.submit_reason(role, &kw, reason, now)
        })
    }

    pub fn position(
        &mut self,
        caller: &Caller,
        sid: &str,
        keyword: &str,
        position: Position,
    ) -> Result<SessionSnapshot, ServiceError> {
        let role = caller.role;
        let kw = crate::preference::normalize_keyword(keyword)?;
        self.step(caller, sid, role.into(), "consensus.position", |s, now| {
            s.submit_position(role, &kw, position, now)
        })
    }

    pub fn advance(&mut self, caller: &Caller, sid: &str) -> Result<SessionSnapshot, ServiceError> {
        self.step(
            caller,
            sid,
            Actor::System,
            "consensus.advanced",
            |s, now| s.advance(now),
        )
    }

    // ---- videos ----

    fn video_for(&self, caller: &Caller, vid: &str) -> Result<&VideoRecord, ServiceError> {
        let video = self
            .state
            .videos
            .get(vid)
            .ok_or_else(|| ServiceError::NotFound(format!("video {vid}")))?;
        if video.pair_id != caller.pair_id {
            return Err(ServiceError::Forbidden(
                "video belongs to another pair".into(),
            ));
        }
        Ok(video)
    }

    pub fn register_video(
        &mut self,
        caller: &Caller,
        pair_id: &str,
        video_id: Option<&str>,
        bundle: BundleRef,
    ) -> Result<VideoRecord, ServiceError> {
        self.pair_for(caller, pair_id)?;
        let video_id = match video_id.map(str::trim) {
            Some("") => {
                return Err(ServiceError::Validation(
                    "video_id must not be empty".into(),
                ))
            }
            Some(v) => v.to_string(),
            None => format!("v-{}", self.state.videos.len() + 1),
        };
        if self.state.videos.contains_key(&video_id) {
            return Err(ServiceError::Conflict(format!(
                "video {video_id} already registered"
            )));
        }
        self.commit(
            pair_id,
            caller.role.into(),
            "video.registered",
            payload(&VideoRegistered {
                video_id: video_id.clone(),
                bundle,
                submitted_by: caller.role,
            }),
        )?;
        Ok(self.state.videos[&video_id].clone())
    }

    pub fn prepare_censor(&self, caller: &Caller, vid: &str) -> Result<CensorJob, ServiceError> {
        let video = self.video_for(caller, vid)?;
        let pair = &self.state.pairs[&video.pair_id];
        Ok(CensorJob {
            caller: caller.clone(),
            video_id: vid.to_string(),
            bundle: video.bundle.clone(),
            co_panel: pair
                .co_panel
                .clone()
                .unwrap_or_else(|| PreferencePanel::new(Role::Co)),
            guidelines: self.guidelines.clone(),
            cfg: self.cfg.clone(),
            provider: self.provider.clone(),
            at: self.clock.now(),
        })
    }

    pub fn finish_censor(
        &mut self,
        job: &CensorJob,
        result: CensorshipResult,
        feedback: InTimeFeedback,
    ) -> Result<CensorshipResult, ServiceError> {
        self.commit(
            &job.caller.pair_id,
            job.caller.role.into(),
            "video.censored",
            payload(&VideoCensored {
                video_id: job.video_id.clone(),
                result: result.clone(),
                feedback,
            }),
        )?;
        Ok(result)
    }

    /// Runs a censorship job synchronously. The HTTP layer instead splits
    /// the three steps so the pipeline runs without holding the engine.
    pub fn censor_now(
        &mut self,
        caller: &Caller,
        vid: &str,
    ) -> Result<CensorshipResult, ServiceError> {
        let job = self.prepare_censor(caller, vid)?;
        let (result, feedback) = job.run()?;
        self.finish_censor(&job, result, feedback)
    }

    pub fn feedback(&self, caller: &Caller, vid: &str) -> Result<InTimeFeedback, ServiceError> {
        self.video_for(caller, vid)?
            .feedback
            .clone()
            .ok_or_else(|| ServiceError::NotFound(format!("feedback for video {vid}")))
    }

    pub fn report(
        &self,
        caller: &Caller,
        pair_id: &str,
        period: &Period,
    ) -> Result<SummaryReport, ServiceError> {
        self.pair_for(caller, pair_id)?;
        let records: Vec<InTimeFeedback> = self
            .state
            .videos
            .values()
            .filter(|v| v.pair_id == pair_id)
            .filter_map(|v| v.feedback.clone())
            .collect();
        aggregate(&records, period).map_err(|e| ServiceError::Validation(e.to_string()))
    }

    pub fn events(&self, caller: &Caller, pair_id: &str) -> Result<Vec<PublicEvent>, ServiceError> {
        self.pair_for(caller, pair_id)?;
        Ok(self
            .state
            .log
            .iter()
            .filter(|r| r.pair_id == pair_id)
            .map(|r| PublicEvent {
                seq: r.seq,
                kind: r.kind.clone(),
                actor: r.actor,
                at: r.at,
                detail: public_detail(r),
            })
            .collect())
    }
}

pub fn parse_role(text: &str) -> Result<Role, ServiceError> {
    text.parse::<Role>()
        .map_err(|_| ServiceError::Validation(format!("unknown role '{text}'")))
}
