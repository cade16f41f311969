//! Analysis providers: chunks + guideline context → features and verdicts.
//!
//! A provider answers one chunk at a time with a [`ProviderOutput`], the
//! structured document a live model is asked to produce. Outputs are
//! validated against the active guideline set and then combined locally
//! across chunks (duration-weighted mean for presence scores, maximum for
//! risk levels).

mod live;
mod mock;

use std::collections::BTreeMap;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::guidelines::CommonGuidelineSet;
use crate::ingest::Chunk;
use crate::preference::{normalize_keyword, Keyword, PreferenceError};
use crate::rounding::div_round_half_away;
use crate::time::Timestamp;

pub use live::{LiveProvider, EXTRACTION_SYSTEM_PROMPT, TOKEN_ENV};
pub use mock::{Lexicon, MockProvider};

#[derive(Debug, Error)]
pub enum ProviderError {
    #[error("no chunks to analyze")]
    NoChunks,
    #[error("chunk duration must be positive")]
    ZeroDuration,
    #[error("provider unavailable: {0}")]
    ProviderUnavailable(String),
    #[error("malformed provider output after {attempts} attempts: {message}")]
    MalformedProviderOutput { attempts: u32, message: String },
    #[error("provider output violates the active guidelines: {0}")]
    GuidelineViolation(String),
    #[error("invalid provider config: {0}")]
    InvalidConfig(String),
    #[error("lexicon: {0}")]
    Lexicon(String),
}

/// Presence of a keyword's content in a video, on the very low … very high scale.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "i64", into = "i64")]
pub struct Presence(i8);

impl Presence {
    pub const FLOOR: Presence = Presence(-2);
    pub const LABELS: [&'static str; 5] = ["very low", "low", "medium", "high", "very high"];

    pub fn new(value: i64) -> Result<Self, PreferenceError> {
        if (-2..=2).contains(&value) {
            Ok(Presence(value as i8))
        } else {
            Err(PreferenceError::InvalidWeight(value))
        }
    }

    pub fn clamped(value: i64) -> Self {
        Presence(value.clamp(-2, 2) as i8)
    }

    pub fn value(self) -> i8 {
        self.0
    }

    pub fn label(self) -> &'static str {
        Self::LABELS[(self.0 + 2) as usize]
    }
}

impl TryFrom<i64> for Presence {
    type Error = PreferenceError;

    fn try_from(value: i64) -> Result<Self, Self::Error> {
        Presence::new(value)
    }
}

impl From<Presence> for i64 {
    fn from(p: Presence) -> Self {
        p.0 as i64
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct VideoFeatures {
    pub scores: BTreeMap<Keyword, Presence>,
    pub coverage_ms: u64,
}

impl VideoFeatures {
    /// Score for `kw`, with absence treated as the very-low floor.
    pub fn score_or_floor(&self, kw: &Keyword) -> Presence {
        self.scores.get(kw).copied().unwrap_or(Presence::FLOOR)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RiskFinding {
    pub category: String,
    pub level: String,
    /// Position of `level` in the category's level list (0 = lowest).
    pub severity: usize,
    pub rationale: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AppropriatenessFinding {
    pub category: String,
    pub value: u8,
    pub rationale: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CensorshipResult {
    pub video_id: String,
    pub age_band: String,
    pub risks: Vec<RiskFinding>,
    pub appropriateness: Vec<AppropriatenessFinding>,
    pub features: VideoFeatures,
    pub summary: String,
    pub produced_at: Timestamp,
    pub provider_id: String,
}

// ---------------------------------------------------------------------------
// Raw provider output (the structured contract a live model must satisfy)

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KeywordScore {
    pub name: String,
    pub score: i64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawRisk {
    pub category: String,
    pub level: String,
    #[serde(default)]
    pub rationale: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawAppropriateness {
    pub category: String,
    pub value: i64,
    #[serde(default)]
    pub rationale: String,
}

/// `{ keywords: [{name, score}], risks: [...], age_band, appropriateness: [...], summary }`
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProviderOutput {
    pub keywords: Vec<KeywordScore>,
    pub risks: Vec<RawRisk>,
    pub age_band: String,
    pub appropriateness: Vec<RawAppropriateness>,
    pub summary: String,
}

impl ProviderOutput {
    /// Parses a model reply, tolerating a surrounding markdown code fence.
    pub fn parse(text: &str) -> Result<Self, String> {
        let trimmed = text.trim();
        let body = trimmed
            .strip_prefix("```json")
            .or_else(|| trimmed.strip_prefix("```"))
            .and_then(|rest| rest.trim_end().strip_suffix("```"))
            .unwrap_or(trimmed);
        serde_json::from_str(body.trim()).map_err(|e| e.to_string())
    }
}

/// What a chunk request asks for.
#[derive(Debug, Clone, Copy)]
pub enum Task<'a> {
    /// Keyword presence only.
    Extract,
    /// Full verdict under the rendered guideline context.
    Censor {
        context: &'a str,
        guidelines: &'a CommonGuidelineSet,
    },
}

pub trait AnalysisProvider: Send + Sync {
    fn id(&self) -> String;

    fn analyze_chunk(&self, chunk: &Chunk, task: Task<'_>)
        -> Result<ProviderOutput, ProviderError>;
}

/// A validated per-chunk (or combined) verdict.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChunkAnalysis {
    pub features: VideoFeatures,
    pub risks: Vec<RiskFinding>,
    pub appropriateness: Vec<AppropriatenessFinding>,
    pub age_band: String,
    pub summary: String,
}

fn features_from(
    output: &ProviderOutput,
    coverage_ms: u64,
) -> Result<VideoFeatures, ProviderError> {
    let mut scores = BTreeMap::new();
    for k in &output.keywords {
        let kw =
            normalize_keyword(&k.name).map_err(|e| ProviderError::MalformedProviderOutput {
                attempts: 1,
                message: format!("keyword '{}': {e}", k.name),
            })?;
        // duplicates keep the highest reported presence
        let p = Presence::clamped(k.score);
        scores
            .entry(kw)
            .and_modify(|old: &mut Presence| *old = (*old).max(p))
            .or_insert(p);
    }
    Ok(VideoFeatures {
        scores,
        coverage_ms,
    })
}

/// Checks a raw verdict against the guideline set and converts it.
pub fn validate_output(
    output: &ProviderOutput,
    guidelines: &CommonGuidelineSet,
    coverage_ms: u64,
) -> Result<ChunkAnalysis, ProviderError> {
    let features = features_from(output, coverage_ms)?;
    if guidelines.band_index(&output.age_band).is_none() {
        return Err(ProviderError::GuidelineViolation(format!(
            "unknown age band '{}'",
            output.age_band
        )));
    }
    let mut risks: Vec<RiskFinding> = Vec::new();
    for raw in &output.risks {
        let cat = guidelines.risk(&raw.category).ok_or_else(|| {
            ProviderError::GuidelineViolation(format!("unknown risk category '{}'", raw.category))
        })?;
        let severity = cat.level_index(&raw.level).ok_or_else(|| {
            ProviderError::GuidelineViolation(format!(
                "level '{}' is not defined for risk '{}'",
                raw.level, raw.category
            ))
        })?;
        if risks.iter().any(|r| r.category == raw.category) {
            return Err(ProviderError::GuidelineViolation(format!(
                "risk category '{}' reported twice",
                raw.category
            )));
        }
        risks.push(RiskFinding {
            category: raw.category.clone(),
            level: raw.level.clone(),
            severity,
            rationale: raw.rationale.clone(),
        });
    }
    let mut appropriateness: Vec<AppropriatenessFinding> = Vec::new();
    for raw in &output.appropriateness {
        let cat = guidelines
            .appropriateness_category(&raw.category)
            .ok_or_else(|| {
                ProviderError::GuidelineViolation(format!(
                    "unknown appropriateness category '{}'",
                    raw.category
                ))
            })?;
        if raw.value < 0 || raw.value > cat.max_value() as i64 {
            return Err(ProviderError::GuidelineViolation(format!(
                "value {} outside the scale of '{}'",
                raw.value, raw.category
            )));
        }
        if appropriateness.iter().any(|a| a.category == raw.category) {
            return Err(ProviderError::GuidelineViolation(format!(
                "appropriateness category '{}' reported twice",
                raw.category
            )));
        }
        appropriateness.push(AppropriatenessFinding {
            category: raw.category.clone(),
            value: raw.value as u8,
            rationale: raw.rationale.clone(),
        });
    }
    Ok(ChunkAnalysis {
        features,
        risks,
        appropriateness,
        age_band: output.age_band.clone(),
        summary: output.summary.clone(),
    })
}

/// Duration-weighted mean per keyword, absence counted as the floor (-2),
/// rounded half away from zero.
pub fn combine_chunks(partials: &[(VideoFeatures, u64)]) -> Result<VideoFeatures, ProviderError> {
    if partials.is_empty() {
        return Err(ProviderError::NoChunks);
    }
    if partials.iter().any(|(_, d)| *d == 0) {
        return Err(ProviderError::ZeroDuration);
    }
    let total: i128 = partials.iter().map(|(_, d)| *d as i128).sum();
    let keywords: std::collections::BTreeSet<&Keyword> =
        partials.iter().flat_map(|(f, _)| f.scores.keys()).collect();
    let scores = keywords
        .into_iter()
        .map(|kw| {
            let weighted: i128 = partials
                .iter()
                .map(|(f, d)| *d as i128 * f.score_or_floor(kw).value() as i128)
                .sum();
            (
                kw.clone(),
                Presence::clamped(div_round_half_away(weighted, total) as i64),
            )
        })
        .collect();
    Ok(VideoFeatures {
        scores,
        coverage_ms: partials.iter().map(|(f, _)| f.coverage_ms).sum(),
    })
}

/// Combines per-chunk verdicts: features via [`combine_chunks`], risks by
/// maximum level, appropriateness by duration-weighted mean over the chunks
/// that report the category, age band by the most restrictive band.
pub fn combine_analyses(
    parts: &[(ChunkAnalysis, u64)],
    guidelines: &CommonGuidelineSet,
) -> Result<ChunkAnalysis, ProviderError> {
    if parts.is_empty() {
        return Err(ProviderError::NoChunks);
    }
    if parts.len() == 1 {
        return Ok(parts[0].0.clone());
    }
    let features = combine_chunks(
        &parts
            .iter()
            .map(|(a, d)| (a.features.clone(), *d))
            .collect::<Vec<_>>(),
    )?;

    let mut risks = Vec::new();
    for cat in &guidelines.risks {
        let worst = parts
            .iter()
            .filter_map(|(a, _)| a.risks.iter().find(|r| r.category == cat.name))
            .fold(None::<&RiskFinding>, |best, r| match best {
                Some(b) if b.severity >= r.severity => Some(b),
                _ => Some(r),
            });
        if let Some(r) = worst {
            risks.push(r.clone());
        }
    }

    let mut appropriateness = Vec::new();
    for cat in &guidelines.appropriateness {
        let reported: Vec<(&AppropriatenessFinding, u64)> = parts
            .iter()
            .filter_map(|(a, d)| {
                a.appropriateness
                    .iter()
                    .find(|f| f.category == cat.name)
                    .map(|f| (f, *d))
            })
            .collect();
        if reported.is_empty() {
            continue;
        }
        let num: i128 = reported
            .iter()
            .map(|(f, d)| f.value as i128 * *d as i128)
            .sum();
        let den: i128 = reported.iter().map(|(_, d)| *d as i128).sum();
        let value = div_round_half_away(num, den).clamp(0, cat.max_value() as i128) as u8;
        let rationale = reported
            .iter()
            .map(|(f, _)| f.rationale.as_str())
            .filter(|r| !r.is_empty())
            .collect::<Vec<_>>()
            .join(" ");
        appropriateness.push(AppropriatenessFinding {
            category: cat.name.clone(),
            value,
            rationale,
        });
    }

    let age_band = parts
        .iter()
        .filter_map(|(a, _)| guidelines.band_index(&a.age_band))
        .max()
        .map(|i| guidelines.age_bands[i].name.clone())
        .unwrap_or_else(|| guidelines.youngest_band().name.clone());

    let summary = parts
        .iter()
        .enumerate()
        .map(|(i, (a, _))| format!("[part {}] {}", i + 1, a.summary))
        .collect::<Vec<_>>()
        .join("\n");

    Ok(ChunkAnalysis {
        features,
        risks,
        appropriateness,
        age_band,
        summary,
    })
}

fn chunk_weight(chunk: &Chunk) -> u64 {
    chunk.duration_ms().max(1)
}

/// Runs `f` over every chunk, in parallel when there is more than one, and
/// returns results in chunk order.
fn per_chunk<T: Send>(
    chunks: &[Chunk],
    f: impl Fn(&Chunk) -> Result<T, ProviderError> + Sync,
) -> Result<Vec<T>, ProviderError> {
    if chunks.len() == 1 {
        return Ok(vec![f(&chunks[0])?]);
    }
    std::thread::scope(|scope| {
        let handles: Vec<_> = chunks.iter().map(|c| scope.spawn(|| f(c))).collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("chunk worker panicked"))
            .collect()
    })
}

pub fn extract_features(
    chunks: &[Chunk],
    provider: &dyn AnalysisProvider,
) -> Result<VideoFeatures, ProviderError> {
    if chunks.is_empty() {
        return Err(ProviderError::NoChunks);
    }
    let partials = per_chunk(chunks, |chunk| {
        let out = provider.analyze_chunk(chunk, Task::Extract)?;
        Ok((
            features_from(&out, chunk.duration_ms())?,
            chunk_weight(chunk),
        ))
    })?;
    combine_chunks(&partials)
}

pub fn censor(
    video_id: &str,
    chunks: &[Chunk],
    context: &str,
    guidelines: &CommonGuidelineSet,
    provider: &dyn AnalysisProvider,
    produced_at: Timestamp,
) -> Result<CensorshipResult, ProviderError> {
    if chunks.is_empty() {
        return Err(ProviderError::NoChunks);
    }
    let parts = per_chunk(chunks, |chunk| {
        let out = provider.analyze_chunk(
            chunk,
            Task::Censor {
                context,
                guidelines,
            },
        )?;
        Ok((
            validate_output(&out, guidelines, chunk.duration_ms())?,
            chunk_weight(chunk),
        ))
    })?;
    let combined = combine_analyses(&parts, guidelines)?;
    Ok(CensorshipResult {
        video_id: video_id.to_string(),
        age_band: combined.age_band,
        risks: combined.risks,
        appropriateness: combined.appropriateness,
        features: combined.features,
        summary: combined.summary,
        produced_at,
        provider_id: provider.id(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ProviderKind {
    #[default]
    Mock,
    Live,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProviderConfig {
    pub kind: ProviderKind,
    pub endpoint: Option<String>,
    pub model_name: Option<String>,
    /// Maximum transcript characters per chunk sent to the provider.
    pub context_budget: usize,
    pub request_timeout_ms: u64,
    pub lexicon_path: Option<PathBuf>,
    pub max_in_flight: usize,
}

impl Default for ProviderConfig {
    fn default() -> Self {
        Self {
            kind: ProviderKind::Mock,
            endpoint: None,
            model_name: None,
            context_budget: 8000,
            request_timeout_ms: 60_000,
            lexicon_path: None,
            max_in_flight: 4,
        }
    }
}

impl ProviderConfig {
    pub fn validate(&self) -> Result<(), ProviderError> {
        match self.kind {
            ProviderKind::Live => {
                if self.endpoint.as_deref().is_none_or(str::is_empty) {
                    return Err(ProviderError::InvalidConfig(
                        "live provider requires endpoint".into(),
                    ));
                }
                if self.model_name.as_deref().is_none_or(str::is_empty) {
                    return Err(ProviderError::InvalidConfig(
                        "live provider requires model_name".into(),
                    ));
                }
            }
            ProviderKind::Mock => {
                if self.lexicon_path.is_none() {
                    return Err(ProviderError::InvalidConfig(
                        "mock provider requires lexicon_path".into(),
                    ));
                }
            }
        }
        if self.max_in_flight == 0 {
            return Err(ProviderError::InvalidConfig(
                "max_in_flight must be positive".into(),
            ));
        }
        if self.request_timeout_ms == 0 {
            return Err(ProviderError::InvalidConfig(
                "request_timeout_ms must be positive".into(),
            ));
        }
        Ok(())
    }
}

pub fn build_provider(cfg: &ProviderConfig) -> Result<Box<dyn AnalysisProvider>, ProviderError> {
    cfg.validate()?;
    Ok(match cfg.kind {
        ProviderKind::Mock => Box::new(MockProvider::from_path(
            cfg.lexicon_path.as_deref().expect("validated"),
        )?),
        ProviderKind::Live => Box::new(LiveProvider::new(cfg)?),
    })
}
