//! Mediated four-stage negotiation producing a co-preference panel.
//!
//! ```text
//! InitialProposal --accept--------------------------------------> Finalized (reached)
//!        | modify
//!        v
//! SelfEvaluation --all reasons in / advance--> PerspectiveTaking
//!                                                 |   ^      | no change this round:
//!                                      changed    |   |      | iteration += 1, re-present
//!                                                 v   |      | (cap -> Finalized, failed)
//!                                          FinalProposal
//!                               all resolved -> Finalized (reached)
//!                               otherwise    -> iteration += 1, back to PerspectiveTaking
//! ```
//!
//! Every operation returns a new session value and appends one
//! [`SessionEvent`]; replaying the event list on a fresh session reproduces
//! the same value.

mod session;
pub mod sim;
pub mod templates;

pub use session::{
    effective, replay, start_session, Conflict, ConsensusConfig, ConsensusError, ConsensusSession,
    Decision, MediatorMessage, Modification, Outcome, Position, SessionEvent, SessionInput, Stage,
    NO_REASON,
};
pub use sim::{simulate, AgentPolicy, PanelGenerator, SimulationStats};
