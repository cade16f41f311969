use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::preference::{Keyword, PreferencePanel, Role, Weight, MAX_PANEL_ENTRIES};
use crate::time::Timestamp;

use super::templates;

/// Recorded in place of an empty justification.
pub const NO_REASON: &str = "(no reason given)";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConsensusError {
    #[error("initiator must be parent or youth, got '{0}'")]
    InvalidRole(Role),
    #[error("operation not allowed in stage {0:?}")]
    WrongStage(Stage),
    #[error("'{0}' may not act here")]
    WrongActor(Role),
    #[error("modification list is empty")]
    EmptyModification,
    #[error("modification for '{0}' does not change the panel")]
    NoEffectiveChange(Keyword),
    #[error("keyword '{0}' listed more than once")]
    DuplicateKeyword(Keyword),
    #[error("modifications would exceed the panel cap")]
    PanelFull,
    #[error("no open conflict on '{0}'")]
    NoSuchConflict(Keyword),
    #[error("session is not finalized")]
    NotFinalized,
    #[error("invalid consensus config: {0}")]
    InvalidConfig(String),
    #[error("replay failed at event {seq}: {message}")]
    Replay { seq: u64, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    AwaitingInitialPanel,
    InitialProposal,
    SelfEvaluation,
    PerspectiveTaking,
    FinalProposal,
    Finalized,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    ConsensusReached,
    ConsensusFailed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Position {
    Keep,
    Change { weight: Weight },
    Drop,
}

/// The entry a position asks for, given the keyword's current draft weight.
/// `Keep` on an absent keyword is the same as `Drop`.
pub fn effective(position: Position, current: Option<Weight>) -> Option<Weight> {
    match position {
        Position::Keep => current,
        Position::Change { weight } => Some(weight),
        Position::Drop => None,
    }
}

fn describe(target: Option<Weight>) -> String {
    match target {
        Some(w) => format!("{} ({})", w.value(), w.label()),
        None => "the keyword removed".to_string(),
    }
}

fn describe_panel(panel: &PreferencePanel) -> String {
    if panel.is_empty() {
        return "(empty)".to_string();
    }
    panel
        .entries()
        .iter()
        .map(|(k, w)| format!("{k}: {}", w.value()))
        .collect::<Vec<_>>()
        .join(", ")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Conflict {
    pub keyword: Keyword,
    pub initiator_position: Position,
    pub reviewer_position: Position,
    pub initiator_reason: Option<String>,
    pub reviewer_reason: Option<String>,
    pub resolved: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Modification {
    pub keyword: Keyword,
    pub position: Position,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "decision", rename_all = "lowercase")]
pub enum Decision {
    Accept,
    Modify { changes: Vec<Modification> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ConsensusConfig {
    pub max_iterations: u32,
    pub session_timeout_ms: i64,
}

impl Default for ConsensusConfig {
    fn default() -> Self {
        Self {
            max_iterations: 3,
            session_timeout_ms: 600_000,
        }
    }
}

impl ConsensusConfig {
    pub fn validate(&self) -> Result<(), ConsensusError> {
        if self.max_iterations == 0 {
            return Err(ConsensusError::InvalidConfig(
                "max_iterations must be >= 1".into(),
            ));
        }
        if self.session_timeout_ms <= 0 {
            return Err(ConsensusError::InvalidConfig(
                "session_timeout_ms must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MediatorMessage {
    pub seq: u64,
    /// The event whose processing emitted this message.
    pub event_seq: u64,
    pub stage: Stage,
    pub addressee: Role,
    pub template_id: String,
    pub payload: BTreeMap<String, String>,
    pub text: String,
}

/// A state-changing call, as recorded in the session event log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum SessionInput {
    Start {
        session_id: String,
        initiator: Role,
        panel: PreferencePanel,
        config: ConsensusConfig,
    },
    Respond {
        decision: Decision,
    },
    Reason {
        keyword: Keyword,
        reason: String,
    },
    Position {
        keyword: Keyword,
        position: Position,
    },
    Advance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionEvent {
    pub seq: u64,
    pub at: Timestamp,
    /// `None` for mediator-driven calls (`advance`).
    pub actor: Option<Role>,
    /// Stage the session was in when the call arrived.
    pub stage: Stage,
    pub input: SessionInput,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsensusSession {
    pub session_id: String,
    pub initiator: Role,
    pub initiator_panel: PreferencePanel,
    pub draft_panel: PreferencePanel,
    pub stage: Stage,
    pub conflicts: Vec<Conflict>,
    pub iteration: u32,
    pub outcome: Option<Outcome>,
    pub transcript: Vec<MediatorMessage>,
    pub started_at: Timestamp,
    pub deadline: Timestamp,
    pub config: ConsensusConfig,
    /// Whether any effective position changed in the current perspective-taking round.
    pub round_changed: bool,
    pub events: Vec<SessionEvent>,
}

pub fn start_session(
    session_id: impl Into<String>,
    initiator: Role,
    panel: &PreferencePanel,
    cfg: &ConsensusConfig,
    now: Timestamp,
) -> Result<ConsensusSession, ConsensusError> {
    let reviewer = initiator
        .counterpart()
        .ok_or(ConsensusError::InvalidRole(initiator))?;
    cfg.validate()?;
    let session_id = session_id.into();
    let draft = panel.with_role(initiator);
    let mut s = ConsensusSession {
        session_id: session_id.clone(),
        initiator,
        initiator_panel: draft.clone(),
        draft_panel: draft,
        stage: Stage::InitialProposal,
        conflicts: Vec::new(),
        iteration: 0,
        outcome: None,
        transcript: Vec::new(),
        started_at: now,
        deadline: now.plus_millis(cfg.session_timeout_ms),
        config: cfg.clone(),
        round_changed: false,
        events: Vec::new(),
    };
    s.record(
        Some(initiator),
        now,
        SessionInput::Start {
            session_id,
            initiator,
            panel: panel.clone(),
            config: cfg.clone(),
        },
    );
    let panel_text = describe_panel(&s.draft_panel);
    s.say(
        reviewer,
        "initial.present_panel",
        [
            ("initiator", initiator.as_str().to_string()),
            ("panel", panel_text),
        ],
    );
    s.say(
        initiator,
        "initial.await_review",
        [("reviewer", reviewer.as_str().to_string())],
    );
    Ok(s)
}

impl ConsensusSession {
    pub fn reviewer(&self) -> Role {
        self.initiator
            .counterpart()
            .expect("initiator is parent or youth")
    }

    pub fn is_finalized(&self) -> bool {
        self.stage == Stage::Finalized
    }

    pub fn open_conflicts(&self) -> impl Iterator<Item = &Conflict> {
        self.conflicts.iter().filter(|c| !c.resolved)
    }

    /// Messages for `role` emitted since that role last acted.
    pub fn pending_for(&self, role: Role) -> Vec<&MediatorMessage> {
        let since = self
            .events
            .iter()
            .rev()
            .find(|e| e.actor == Some(role))
            .map_or(0, |e| e.seq);
        self.transcript
            .iter()
            .filter(|m| m.addressee == role && m.event_seq >= since)
            .collect()
    }

    fn record(&mut self, actor: Option<Role>, at: Timestamp, input: SessionInput) {
        let stage = self.stage;
        self.events.push(SessionEvent {
            seq: self.events.len() as u64,
            at,
            actor,
            stage,
            input,
        });
    }

    fn say<'a>(
        &mut self,
        to: Role,
        template_id: &str,
        payload: impl IntoIterator<Item = (&'a str, String)>,
    ) {
        let payload: BTreeMap<String, String> = payload
            .into_iter()
            .map(|(k, v)| (k.to_string(), v))
            .collect();
        let text = templates::render(template_id, &payload);
        self.transcript.push(MediatorMessage {
            seq: self.transcript.len() as u64,
            event_seq: self.events.len().saturating_sub(1) as u64,
            stage: self.stage,
            addressee: to,
            template_id: template_id.to_string(),
            payload,
            text,
        });
    }

    fn both(&self) -> [Role; 2] {
        [self.initiator, self.reviewer()]
    }

    fn check_party(&self, actor: Role) -> Result<(), ConsensusError> {
        if actor == self.initiator || actor == self.reviewer() {
            Ok(())
        } else {
            Err(ConsensusError::WrongActor(actor))
        }
    }

    fn open_conflict_index(&self, kw: &Keyword) -> Result<usize, ConsensusError> {
        self.conflicts
            .iter()
            .position(|c| &c.keyword == kw && !c.resolved)
            .ok_or_else(|| ConsensusError::NoSuchConflict(kw.clone()))
    }

    fn target(&self, c: &Conflict, role: Role) -> Option<Weight> {
        let current = self.draft_panel.get(&c.keyword);
        if role == self.initiator {
            effective(c.initiator_position, current)
        } else {
            effective(c.reviewer_position, current)
        }
    }

    fn positions_match(&self, c: &Conflict) -> bool {
        self.target(c, self.initiator) == self.target(c, self.reviewer())
    }

    fn relay_reasons(&mut self, template_id: &str) {
        let open: Vec<Conflict> = self.open_conflicts().cloned().collect();
        let round = (self.iteration + 1).to_string();
        for c in open {
            for viewer in self.both() {
                let other = viewer.counterpart().expect("party role");
                let other_reason = if other == self.initiator {
                    c.initiator_reason.clone()
                } else {
                    c.reviewer_reason.clone()
                };
                let mut payload = vec![
                    ("keyword", c.keyword.to_string()),
                    ("counterpart", other.as_str().to_string()),
                    (
                        "counterpart_reason",
                        other_reason.unwrap_or_else(|| NO_REASON.to_string()),
                    ),
                    ("counterpart_position", describe(self.target(&c, other))),
                    ("own_position", describe(self.target(&c, viewer))),
                ];
                if template_id == "perspective.represent" {
                    payload.push(("round", round.clone()));
                }
                self.say(viewer, template_id, payload);
            }
        }
    }

    fn enter_perspective_taking(&mut self) {
        for c in self.conflicts.iter_mut().filter(|c| !c.resolved) {
            c.initiator_reason
                .get_or_insert_with(|| NO_REASON.to_string());
            c.reviewer_reason
                .get_or_insert_with(|| NO_REASON.to_string());
        }
        self.stage = Stage::PerspectiveTaking;
        self.round_changed = false;
        self.relay_reasons("perspective.present_reason");
    }

    fn finish(&mut self, outcome: Outcome, reason: &str) {
        self.stage = Stage::Finalized;
        self.outcome = Some(outcome);
        let panel = describe_panel(&self.draft_panel);
        for role in self.both() {
            match outcome {
                Outcome::ConsensusReached => {
                    self.say(role, "final.reached", [("panel", panel.clone())])
                }
                Outcome::ConsensusFailed => self.say(
                    role,
                    "final.failed",
                    [("reason", reason.to_string()), ("panel", panel.clone())],
                ),
            }
        }
    }

    /// Counts a fruitless round; fails the session once the cap is reached.
    fn spend_iteration(&mut self) -> bool {
        self.iteration += 1;
        if self.iteration >= self.config.max_iterations {
            let reason = format!("iteration limit of {} reached", self.config.max_iterations);
            self.finish(Outcome::ConsensusFailed, &reason);
            true
        } else {
            false
        }
    }

    pub fn reviewer_respond(
        &self,
        actor: Role,
        decision: Decision,
        now: Timestamp,
    ) -> Result<Self, ConsensusError> {
        if self.stage != Stage::InitialProposal {
            return Err(ConsensusError::WrongStage(self.stage));
        }
        if actor != self.reviewer() {
            return Err(ConsensusError::WrongActor(actor));
        }
        let mut s = self.clone();
        match &decision {
            Decision::Accept => {
                s.record(
                    Some(actor),
                    now,
                    SessionInput::Respond {
                        decision: decision.clone(),
                    },
                );
                let panel = describe_panel(&s.draft_panel);
                s.say(
                    s.initiator,
                    "initial.accepted",
                    [("reviewer", actor.as_str().to_string()), ("panel", panel)],
                );
                s.finish(Outcome::ConsensusReached, "");
            }
            Decision::Modify { changes } => {
                if changes.is_empty() {
                    return Err(ConsensusError::EmptyModification);
                }
                let mut seen = BTreeSet::new();
                let mut conflicts = Vec::with_capacity(changes.len());
                for m in changes {
                    if !seen.insert(&m.keyword) {
                        return Err(ConsensusError::DuplicateKeyword(m.keyword.clone()));
                    }
                    let current = s.draft_panel.get(&m.keyword);
                    if effective(m.position, current) == current {
                        return Err(ConsensusError::NoEffectiveChange(m.keyword.clone()));
                    }
                    conflicts.push(Conflict {
                        keyword: m.keyword.clone(),
                        initiator_position: Position::Keep,
                        reviewer_position: m.position,
                        initiator_reason: None,
                        reviewer_reason: None,
                        resolved: false,
                    });
                }
                let added = conflicts
                    .iter()
                    .filter(|c| s.draft_panel.get(&c.keyword).is_none())
                    .count();
                if s.draft_panel.len() + added > MAX_PANEL_ENTRIES {
                    return Err(ConsensusError::PanelFull);
                }
                s.record(
                    Some(actor),
                    now,
                    SessionInput::Respond {
                        decision: decision.clone(),
                    },
                );
                s.conflicts = conflicts;
                s.stage = Stage::SelfEvaluation;
                let listed: Vec<Conflict> = s.conflicts.clone();
                for c in listed {
                    for role in s.both() {
                        let payload = [
                            ("keyword", c.keyword.to_string()),
                            ("initiator", s.initiator.as_str().to_string()),
                            ("reviewer", s.reviewer().as_str().to_string()),
                            ("initiator_position", describe(s.target(&c, s.initiator))),
                            ("reviewer_position", describe(s.target(&c, s.reviewer()))),
                        ];
                        s.say(role, "self_eval.conflict", payload);
                    }
                }
            }
        }
        Ok(s)
    }

    pub fn submit_reason(
        &self,
        actor: Role,
        keyword: &Keyword,
        reason: &str,
        now: Timestamp,
    ) -> Result<Self, ConsensusError> {
        if !matches!(self.stage, Stage::SelfEvaluation | Stage::PerspectiveTaking) {
            return Err(ConsensusError::WrongStage(self.stage));
        }
        self.check_party(actor)?;
        let idx = self.open_conflict_index(keyword)?;
        let text = match reason.trim() {
            "" => NO_REASON.to_string(),
            t => t.to_string(),
        };
        let mut s = self.clone();
        s.record(
            Some(actor),
            now,
            SessionInput::Reason {
                keyword: keyword.clone(),
                reason: reason.to_string(),
            },
        );
        let conflict = &mut s.conflicts[idx];
        if actor == s.initiator {
            conflict.initiator_reason = Some(text.clone());
        } else {
            conflict.reviewer_reason = Some(text.clone());
        }

        match s.stage {
            Stage::SelfEvaluation => {
                let complete = s
                    .open_conflicts()
                    .all(|c| c.initiator_reason.is_some() && c.reviewer_reason.is_some());
                if complete {
                    s.enter_perspective_taking();
                }
            }
            _ => {
                let other = actor.counterpart().expect("party role");
                s.say(
                    other,
                    "perspective.reason_update",
                    [
                        ("counterpart", actor.as_str().to_string()),
                        ("keyword", keyword.to_string()),
                        ("counterpart_reason", text),
                    ],
                );
            }
        }
        Ok(s)
    }

    pub fn submit_position(
        &self,
        actor: Role,
        keyword: &Keyword,
        position: Position,
        now: Timestamp,
    ) -> Result<Self, ConsensusError> {
        if self.stage != Stage::PerspectiveTaking {
            return Err(ConsensusError::WrongStage(self.stage));
        }
        self.check_party(actor)?;
        let idx = self.open_conflict_index(keyword)?;
        let mut s = self.clone();
        s.record(
            Some(actor),
            now,
            SessionInput::Position {
                keyword: keyword.clone(),
                position,
            },
        );
        let before = s.target(&s.conflicts[idx], actor);
        if actor == s.initiator {
            s.conflicts[idx].initiator_position = position;
        } else {
            s.conflicts[idx].reviewer_position = position;
        }
        let after = s.target(&s.conflicts[idx], actor);
        if before != after {
            s.round_changed = true;
        }
        let other = actor.counterpart().expect("party role");
        s.say(
            other,
            "perspective.position_update",
            [
                ("counterpart", actor.as_str().to_string()),
                ("counterpart_position", describe(after)),
                ("keyword", keyword.to_string()),
            ],
        );
        if s.positions_match(&s.conflicts[idx]) {
            s.conflicts[idx].resolved = true;
            for role in s.both() {
                s.say(
                    role,
                    "perspective.resolved",
                    [
                        ("keyword", keyword.to_string()),
                        ("position", describe(after)),
                    ],
                );
            }
        }
        Ok(s)
    }

    pub fn advance(&self, now: Timestamp) -> Result<Self, ConsensusError> {
        if matches!(self.stage, Stage::Finalized | Stage::AwaitingInitialPanel) {
            return Err(ConsensusError::WrongStage(self.stage));
        }
        let timed_out = now > self.deadline;
        if self.stage == Stage::InitialProposal && !timed_out {
            // waiting on the reviewer's answer
            return Err(ConsensusError::WrongStage(self.stage));
        }
        let mut s = self.clone();
        s.record(None, now, SessionInput::Advance);
        if timed_out {
            s.finish(Outcome::ConsensusFailed, "time limit exceeded");
            return Ok(s);
        }
        match s.stage {
            Stage::SelfEvaluation => s.enter_perspective_taking(),
            Stage::PerspectiveTaking => {
                if s.round_changed {
                    s.round_changed = false;
                    s.stage = Stage::FinalProposal;
                    let open = s.open_conflicts().count().to_string();
                    for role in s.both() {
                        s.say(role, "final.comparing", [("open", open.clone())]);
                    }
                } else if !s.spend_iteration() {
                    s.relay_reasons("perspective.represent");
                }
            }
            Stage::FinalProposal => {
                if s.conflicts.iter().all(|c| c.resolved) {
                    let mut entries = s.draft_panel.entries().clone();
                    for c in &s.conflicts {
                        let current = s.draft_panel.get(&c.keyword);
                        match effective(c.initiator_position, current) {
                            Some(w) => entries.insert(c.keyword.clone(), w),
                            None => entries.remove(&c.keyword),
                        };
                    }
                    s.draft_panel = s
                        .draft_panel
                        .replace_entries(entries, now)
                        .map_err(|_| ConsensusError::PanelFull)?;
                    s.finish(Outcome::ConsensusReached, "");
                } else if !s.spend_iteration() {
                    s.stage = Stage::PerspectiveTaking;
                    s.round_changed = false;
                    let open: Vec<Keyword> =
                        s.open_conflicts().map(|c| c.keyword.clone()).collect();
                    let (round, limit) = (
                        (s.iteration + 1).to_string(),
                        s.config.max_iterations.to_string(),
                    );
                    for kw in open {
                        for role in s.both() {
                            s.say(
                                role,
                                "final.still_differs",
                                [
                                    ("keyword", kw.to_string()),
                                    ("round", round.clone()),
                                    ("limit", limit.clone()),
                                ],
                            );
                        }
                    }
                    s.relay_reasons("perspective.present_reason");
                }
            }
            Stage::InitialProposal | Stage::Finalized | Stage::AwaitingInitialPanel => {
                unreachable!()
            }
        }
        Ok(s)
    }

    /// The co-preference panel and outcome of a finished session.
    pub fn finalize(&self) -> Result<(PreferencePanel, Outcome), ConsensusError> {
        match (self.stage, self.outcome) {
            (Stage::Finalized, Some(outcome)) => {
                Ok((self.draft_panel.with_role(Role::Co), outcome))
            }
            _ => Err(ConsensusError::NotFinalized),
        }
    }

    /// Applies one logged input. Used by [`replay`] and the service log.
    pub fn apply(&self, event: &SessionEvent) -> Result<Self, ConsensusError> {
        let actor = || {
            event.actor.ok_or_else(|| ConsensusError::Replay {
                seq: event.seq,
                message: "event has no actor".into(),
            })
        };
        match &event.input {
            SessionInput::Start { .. } => Err(ConsensusError::Replay {
                seq: event.seq,
                message: "start event inside a running session".into(),
            }),
            SessionInput::Respond { decision } => {
                self.reviewer_respond(actor()?, decision.clone(), event.at)
            }
            SessionInput::Reason { keyword, reason } => {
                self.submit_reason(actor()?, keyword, reason, event.at)
            }
            SessionInput::Position { keyword, position } => {
                self.submit_position(actor()?, keyword, *position, event.at)
            }
            SessionInput::Advance => self.advance(event.at),
        }
    }
}

/// Rebuilds a session from its event log.
pub fn replay(events: &[SessionEvent]) -> Result<ConsensusSession, ConsensusError> {
    let (first, rest) = events.split_first().ok_or(ConsensusError::Replay {
        seq: 0,
        message: "empty event log".into(),
    })?;
    let SessionInput::Start {
        session_id,
        initiator,
        panel,
        config,
    } = &first.input
    else {
        return Err(ConsensusError::Replay {
            seq: first.seq,
            message: "log must begin with a start event".into(),
        });
    };
    let mut session = start_session(session_id.clone(), *initiator, panel, config, first.at)?;
    for event in rest {
        session = session.apply(event)?;
    }
    Ok(session)
}
