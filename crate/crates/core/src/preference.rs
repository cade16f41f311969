//! Keyword/weight preference panels and the operations that edit them.
//!
//! Panels are immutable values: every mutator returns a new panel with a
//! bumped revision, so a panel can be shared freely between threads.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::provider::VideoFeatures;
use crate::rounding::div_round_half_away;
use crate::time::Timestamp;

pub const MAX_KEYWORD_CHARS: usize = 64;
pub const MAX_PANEL_ENTRIES: usize = 256;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PreferenceError {
    #[error("keyword is empty after normalization")]
    EmptyKeyword,
    #[error("keyword '{0}' exceeds {MAX_KEYWORD_CHARS} characters")]
    TooLong(String),
    #[error("weight {0} is outside -2..=2")]
    InvalidWeight(i64),
    #[error("panel is full ({MAX_PANEL_ENTRIES} entries)")]
    PanelFull,
    #[error("keyword '{0}' appears more than once after normalization")]
    DuplicateKeyword(String),
    #[error("no labeled videos supplied")]
    NoVideos,
    #[error("unknown role '{0}'")]
    UnknownRole(String),
}

/// A normalized keyword: lowercased, trimmed, inner whitespace collapsed.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Keyword(String);

impl Keyword {
    pub fn new(raw: &str) -> Result<Self, PreferenceError> {
        normalize_keyword(raw)
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

pub fn normalize_keyword(raw: &str) -> Result<Keyword, PreferenceError> {
    let normalized = raw
        .split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ");
    if normalized.is_empty() {
        return Err(PreferenceError::EmptyKeyword);
    }
    if normalized.chars().count() > MAX_KEYWORD_CHARS {
        return Err(PreferenceError::TooLong(normalized));
    }
    Ok(Keyword(normalized))
}

impl TryFrom<String> for Keyword {
    type Error = PreferenceError;

    fn try_from(value: String) -> Result<Self, Self::Error> {
        normalize_keyword(&value)
    }
}

impl From<Keyword> for String {
    fn from(k: Keyword) -> Self {
        k.0
    }
}

impl fmt::Display for Keyword {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::borrow::Borrow<str> for Keyword {
    fn borrow(&self) -> &str {
        &self.0
    }
}

/// Preference weight on the five-point like/dislike scale.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "i64", into = "i64")]
pub struct Weight(i8);

impl Weight {
    pub const ALL: [Weight; 5] = [Weight(-2), Weight(-1), Weight(0), Weight(1), Weight(2)];
    pub const LABELS: [&'static str; 5] = [
        "strongly dislike",
        "dislike",
        "neutral",
        "like",
        "strongly like",
    ];

    pub fn new(value: i64) -> Result<Self, PreferenceError> {
        if (-2..=2).contains(&value) {
            Ok(Weight(value as i8))
        } else {
            Err(PreferenceError::InvalidWeight(value))
        }
    }

    pub fn value(self) -> i8 {
        self.0
    }

    pub fn label(self) -> &'static str {
        Self::LABELS[(self.0 + 2) as usize]
    }
}

impl TryFrom<i64> for Weight {
    type Error = PreferenceError;

    fn try_from(value: i64) -> Result<Self, Self::Error> {
        Weight::new(value)
    }
}

impl From<Weight> for i64 {
    fn from(w: Weight) -> Self {
        w.0 as i64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Parent,
    Youth,
    Co,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::Parent => "parent",
            Role::Youth => "youth",
            Role::Co => "co",
        }
    }

    /// The other negotiating party. `Co` has no counterpart.
    pub fn counterpart(self) -> Option<Role> {
        match self {
            Role::Parent => Some(Role::Youth),
            Role::Youth => Some(Role::Parent),
            Role::Co => None,
        }
    }
}

impl std::str::FromStr for Role {
    type Err = PreferenceError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "parent" => Ok(Role::Parent),
            "youth" => Ok(Role::Youth),
            "co" => Ok(Role::Co),
            other => Err(PreferenceError::UnknownRole(other.to_string())),
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VideoLabel {
    Suitable,
    Unsuitable,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledVideoRef {
    pub video_id: String,
    pub label: VideoLabel,
}

/// A role-attributed keyword → weight map.
///
/// The JSON form is `{ "role", "revision", "entries": { keyword: weight } }`
/// with an optional `updated_at`. Keys are normalized on load, so two spellings
/// of one keyword in a document are rejected as duplicates.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "PanelDocument")]
pub struct PreferencePanel {
    pub role: Role,
    pub revision: u64,
    entries: BTreeMap<Keyword, Weight>,
    #[serde(default)]
    pub updated_at: Timestamp,
}

#[derive(Deserialize)]
struct PanelDocument {
    role: Role,
    #[serde(default)]
    revision: u64,
    #[serde(default)]
    entries: BTreeMap<String, i64>,
    #[serde(default)]
    updated_at: Timestamp,
}

impl TryFrom<PanelDocument> for PreferencePanel {
    type Error = PreferenceError;

    fn try_from(doc: PanelDocument) -> Result<Self, Self::Error> {
        if doc.entries.len() > MAX_PANEL_ENTRIES {
            return Err(PreferenceError::PanelFull);
        }
        let mut entries = BTreeMap::new();
        for (raw, w) in doc.entries {
            let kw = normalize_keyword(&raw)?;
            if entries.insert(kw.clone(), Weight::new(w)?).is_some() {
                return Err(PreferenceError::DuplicateKeyword(kw.0));
            }
        }
        Ok(PreferencePanel {
            role: doc.role,
            revision: doc.revision,
            entries,
            updated_at: doc.updated_at,
        })
    }
}

impl PreferencePanel {
    pub fn new(role: Role) -> Self {
        Self {
            role,
            revision: 0,
            entries: BTreeMap::new(),
            updated_at: Timestamp::EPOCH,
        }
    }

    /// Builds a panel from already-typed entries. Fails on the entry cap.
    pub fn from_entries(
        role: Role,
        entries: impl IntoIterator<Item = (Keyword, Weight)>,
    ) -> Result<Self, PreferenceError> {
        let entries: BTreeMap<_, _> = entries.into_iter().collect();
        if entries.len() > MAX_PANEL_ENTRIES {
            return Err(PreferenceError::PanelFull);
        }
        Ok(Self {
            role,
            revision: 0,
            entries,
            updated_at: Timestamp::EPOCH,
        })
    }

    pub fn entries(&self) -> &BTreeMap<Keyword, Weight> {
        &self.entries
    }

    pub fn get(&self, kw: &Keyword) -> Option<Weight> {
        self.entries.get(kw).copied()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn with_role(&self, role: Role) -> Self {
        Self {
            role,
            ..self.clone()
        }
    }

    fn bumped(&self, entries: BTreeMap<Keyword, Weight>, now: Timestamp) -> Self {
        Self {
            role: self.role,
            revision: self.revision + 1,
            entries,
            updated_at: now,
        }
    }

    pub fn set_preference(
        &self,
        kw: Keyword,
        w: Weight,
        now: Timestamp,
    ) -> Result<Self, PreferenceError> {
        if !self.entries.contains_key(&kw) && self.entries.len() >= MAX_PANEL_ENTRIES {
            return Err(PreferenceError::PanelFull);
        }
        let mut entries = self.entries.clone();
        entries.insert(kw, w);
        Ok(self.bumped(entries, now))
    }

    /// Removing an absent keyword is a no-op apart from the revision bump.
    pub fn remove_preference(&self, kw: &Keyword, now: Timestamp) -> Self {
        let mut entries = self.entries.clone();
        entries.remove(kw);
        self.bumped(entries, now)
    }

    /// Replaces every entry at once (one revision bump).
    pub fn replace_entries(
        &self,
        entries: BTreeMap<Keyword, Weight>,
        now: Timestamp,
    ) -> Result<Self, PreferenceError> {
        if entries.len() > MAX_PANEL_ENTRIES {
            return Err(PreferenceError::PanelFull);
        }
        Ok(self.bumped(entries, now))
    }

    /// Merges keyword candidates learned from labeled videos into the panel.
    ///
    /// A video contributes to a keyword when its presence for that keyword is
    /// at least 1. The candidate weight is the mean of `sign(label) * presence`
    /// over contributing videos, rounded half away from zero and clamped to
    /// the weight range. Candidates overwrite existing entries.
    pub fn infer_from_videos(
        &self,
        labeled: &[(LabeledVideoRef, VideoFeatures)],
        now: Timestamp,
    ) -> Result<Self, PreferenceError> {
        if labeled.is_empty() {
            return Err(PreferenceError::NoVideos);
        }
        let mut sums: BTreeMap<&Keyword, (i128, i128)> = BTreeMap::new();
        for (video, features) in labeled {
            let sign = match video.label {
                VideoLabel::Suitable => 1,
                VideoLabel::Unsuitable => -1,
            };
            for (kw, presence) in &features.scores {
                let p = presence.value() as i128;
                if p >= 1 {
                    let slot = sums.entry(kw).or_insert((0, 0));
                    slot.0 += sign * p;
                    slot.1 += 1;
                }
            }
        }
        let mut entries = self.entries.clone();
        for (kw, (sum, count)) in sums {
            let w = div_round_half_away(sum, count).clamp(-2, 2) as i64;
            entries.insert(kw.clone(), Weight::new(w)?);
        }
        if entries.len() > MAX_PANEL_ENTRIES {
            return Err(PreferenceError::PanelFull);
        }
        Ok(self.bumped(entries, now))
    }
}

/// One keyword on which two panels disagree. `None` means absent from that panel.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PanelConflict {
    pub keyword: Keyword,
    pub left: Option<Weight>,
    pub right: Option<Weight>,
}

pub type ConflictSet = Vec<PanelConflict>;

/// Keywords present in only one panel or weighted differently, in keyword order.
pub fn diff_panels(a: &PreferencePanel, b: &PreferencePanel) -> ConflictSet {
    let keys: std::collections::BTreeSet<&Keyword> =
        a.entries.keys().chain(b.entries.keys()).collect();
    keys.into_iter()
        .filter_map(|kw| {
            let left = a.get(kw);
            let right = b.get(kw);
            (left != right).then(|| PanelConflict {
                keyword: kw.clone(),
                left,
                right,
            })
        })
        .collect()
}
