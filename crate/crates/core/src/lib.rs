//! Collaborative video screening for a parent and a teenager.
//!
//! The crate is organised around the workflow the two parties go through:
//!
//! - [`preference`]: keyword/weight panels, edited directly or inferred from
//!   labeled videos.
//! - [`consensus`]: the mediated four-stage negotiation that merges two
//!   parties' panels into a co-preference panel.
//! - [`ingest`]: frames + subtitles reduced to keyframe-anchored segments and
//!   provider-sized chunks.
//! - [`guidelines`]: common rating/risk taxonomy plus personalized directives.
//! - [`provider`]: the analysis provider abstraction (deterministic mock and a
//!   generic chat-completion adapter).
//! - [`feedback`]: per-video alignment feedback and period summaries.
//! - [`service`]: the HTTP API with its append-only event log.
//! - [`cli`]: batch entry points used by the `coview` binary.

pub mod cli;
pub mod consensus;
pub mod feedback;
pub mod guidelines;
pub mod ingest;
pub mod pipeline;
pub mod preference;
pub mod provider;
pub mod rounding;
pub mod service;
pub mod time;

pub use consensus::{ConsensusConfig, ConsensusSession, Outcome, Position, Stage};
pub use feedback::{Alignment, InTimeFeedback, SummaryReport};
pub use guidelines::{CommonGuidelineSet, PersonalizedGuideline};
pub use preference::{Keyword, PreferencePanel, Role, Weight};
pub use provider::{CensorshipResult, Presence, VideoFeatures};
pub use time::Timestamp;
