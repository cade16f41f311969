//! Scripted two-agent sessions for measuring consensus statistics.

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::preference::{Keyword, PreferencePanel, Role, Weight};
use crate::time::Timestamp;

use super::session::{
    start_session, ConsensusConfig, ConsensusSession, Decision, Modification, Outcome, Position,
    SessionInput, Stage,
};

const VOCABULARY: [&str; 12] = [
    "anime", "games", "music", "science", "sports", "cooking", "history", "pranks", "horror",
    "fashion", "travel", "dance",
];

const STEP_MS: i64 = 100;

const RELAY_TEMPLATES: [&str; 4] = [
    "perspective.present_reason",
    "perspective.represent",
    "perspective.reason_update",
    "perspective.position_update",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PanelGenerator {
    pub min_keywords: usize,
    pub max_keywords: usize,
}

impl Default for PanelGenerator {
    fn default() -> Self {
        Self {
            min_keywords: 1,
            max_keywords: 6,
        }
    }
}

impl PanelGenerator {
    fn generate(&self, role: Role, rng: &mut ChaCha8Rng) -> PreferencePanel {
        let max = self.max_keywords.min(VOCABULARY.len());
        let min = self.min_keywords.min(max);
        let n = rng.random_range(min..=max);
        let picks = index::sample(rng, VOCABULARY.len(), n).into_vec();
        let entries = picks
            .into_iter()
            .map(|i| (Keyword::new(VOCABULARY[i]).unwrap(), random_weight(rng)))
            .collect::<Vec<_>>();
        PreferencePanel::from_entries(role, entries).expect("vocabulary is below the panel cap")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AgentPolicy {
    /// Chance the reviewer accepts the initial panel as is.
    pub accept_probability: f64,
    /// Chance, per open conflict and round, of adopting the other side's position.
    pub compromise_probability: f64,
    pub panel: PanelGenerator,
}

impl Default for AgentPolicy {
    fn default() -> Self {
        Self {
            accept_probability: 0.5,
            compromise_probability: 0.5,
            panel: PanelGenerator::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationStats {
    pub sessions: usize,
    pub consensus_reached: usize,
    pub consensus_rate: f64,
    /// Inputs from either party (respond, reason, position) per session.
    pub mean_one_party_turns: f64,
    /// Mediator messages relaying one party's reason or position to the other.
    pub mean_cross_party_exchanges: f64,
    pub mean_iterations: f64,
}

fn random_weight(rng: &mut ChaCha8Rng) -> Weight {
    Weight::ALL[rng.random_range(0..Weight::ALL.len())]
}

fn chance(rng: &mut ChaCha8Rng, p: f64) -> bool {
    rng.random::<f64>() < p
}

/// Picks 1 to 3 changes that each alter the draft.
fn reviewer_changes(draft: &PreferencePanel, rng: &mut ChaCha8Rng) -> Vec<Modification> {
    let n = rng.random_range(1..=3);
    let picks = index::sample(rng, VOCABULARY.len(), n).into_vec();
    picks
        .into_iter()
        .map(|i| {
            let keyword = Keyword::new(VOCABULARY[i]).unwrap();
            let current = draft.get(&keyword);
            let position = match current {
                Some(_) if rng.random_range(0..4) == 0 => Position::Drop,
                Some(w) => {
                    let others: Vec<Weight> = Weight::ALL.into_iter().filter(|x| *x != w).collect();
                    Position::Change {
                        weight: others[rng.random_range(0..others.len())],
                    }
                }
                None => Position::Change {
                    weight: random_weight(rng),
                },
            };
            Modification { keyword, position }
        })
        .collect()
}

fn run_session(
    idx: usize,
    initiator: Role,
    init_policy: &AgentPolicy,
    rev_policy: &AgentPolicy,
    cfg: &ConsensusConfig,
    rng: &mut ChaCha8Rng,
) -> ConsensusSession {
    let mut now = Timestamp::EPOCH;
    let mut tick = || {
        now = now.plus_millis(STEP_MS);
        now
    };
    let reviewer = initiator.counterpart().expect("party role");
    let panel = init_policy.panel.generate(initiator, rng);
    let mut s =
        start_session(format!("sim-{idx}"), initiator, &panel, cfg, tick()).expect("valid start");

    let decision = if chance(rng, rev_policy.accept_probability) {
        Decision::Accept
    } else {
        Decision::Modify {
            changes: reviewer_changes(&s.draft_panel, rng),
        }
    };
    s = s
        .reviewer_respond(reviewer, decision, tick())
        .expect("valid response");

    if s.stage == Stage::SelfEvaluation {
        let keywords: Vec<Keyword> = s.conflicts.iter().map(|c| c.keyword.clone()).collect();
        for kw in &keywords {
            for role in [initiator, reviewer] {
                let reason = format!("{role} reason about {kw}");
                s = s
                    .submit_reason(role, kw, &reason, tick())
                    .expect("open conflict");
            }
        }
    }

    while s.stage == Stage::PerspectiveTaking {
        let open: Vec<(Keyword, Position, Position)> = s
            .open_conflicts()
            .map(|c| (c.keyword.clone(), c.initiator_position, c.reviewer_position))
            .collect();
        for (kw, init_pos, rev_pos) in open {
            if chance(rng, init_policy.compromise_probability) {
                s = s
                    .submit_position(initiator, &kw, rev_pos, tick())
                    .expect("open conflict");
            } else if chance(rng, rev_policy.compromise_probability) {
                s = s
                    .submit_position(reviewer, &kw, init_pos, tick())
                    .expect("open conflict");
            }
        }
        s = s.advance(tick()).expect("live session");
        if s.stage == Stage::FinalProposal {
            s = s.advance(tick()).expect("live session");
        }
    }
    debug_assert_eq!(s.stage, Stage::Finalized);
    s
}

pub fn one_party_turns(s: &ConsensusSession) -> usize {
    s.events
        .iter()
        .filter(|e| {
            matches!(
                e.input,
                SessionInput::Respond { .. }
                    | SessionInput::Reason { .. }
                    | SessionInput::Position { .. }
            )
        })
        .count()
}

pub fn cross_party_exchanges(s: &ConsensusSession) -> usize {
    s.transcript
        .iter()
        .filter(|m| RELAY_TEMPLATES.contains(&m.template_id.as_str()))
        .count()
}

/// Runs `n` sessions. Initiator roles alternate starting with the parent;
/// `policy_a` always drives the initiator and `policy_b` the reviewer.
pub fn simulate(
    policy_a: &AgentPolicy,
    policy_b: &AgentPolicy,
    n: usize,
    seed: u64,
    cfg: &ConsensusConfig,
) -> SimulationStats {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut reached, mut turns, mut exchanges, mut iterations) = (0usize, 0usize, 0usize, 0u64);
    for i in 0..n {
        let initiator = if i % 2 == 0 {
            Role::Parent
        } else {
            Role::Youth
        };
        let s = run_session(i, initiator, policy_a, policy_b, cfg, &mut rng);
        if s.outcome == Some(Outcome::ConsensusReached) {
            reached += 1;
        }
        turns += one_party_turns(&s);
        exchanges += cross_party_exchanges(&s);
        iterations += u64::from(s.iteration);
    }
    let denom = n.max(1) as f64;
    SimulationStats {
        sessions: n,
        consensus_reached: reached,
        consensus_rate: reached as f64 / denom,
        mean_one_party_turns: turns as f64 / denom,
        mean_cross_party_exchanges: exchanges as f64 / denom,
        mean_iterations: iterations as f64 / denom,
    }
}
