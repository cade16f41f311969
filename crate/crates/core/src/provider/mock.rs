//! Deterministic lexicon-frequency provider.
//!
//! Presence of a keyword is derived from the fraction `r` of transcript
//! tokens (plus keyframe labels) matched by that keyword's lexicon terms:
//!
//! | r            | presence |
//! |--------------|----------|
//! | 0            | -2       |
//! | (0, 1%)      | -1       |
//! | [1%, 3%)     | 0        |
//! | [3%, 8%)     | 1        |
//! | >= 8%        | 2        |

use std::collections::BTreeMap;
use std::path::Path;

use crate::guidelines::CommonGuidelineSet;
use crate::ingest::Chunk;
use crate::preference::{normalize_keyword, Keyword};

use super::{
    AnalysisProvider, KeywordScore, ProviderError, ProviderOutput, RawAppropriateness, RawRisk,
    Task,
};

pub const DEFAULT_LEXICON_JSON: &str = include_str!("../../assets/lexicon.json");

/// keyword → terms; each term is a token sequence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Lexicon {
    terms: BTreeMap<Keyword, Vec<Vec<String>>>,
}

impl Lexicon {
    pub fn from_json(text: &str) -> Result<Self, ProviderError> {
        let raw: BTreeMap<String, Vec<String>> =
            serde_json::from_str(text).map_err(|e| ProviderError::Lexicon(e.to_string()))?;
        let mut terms = BTreeMap::new();
        for (kw, list) in raw {
            let kw = normalize_keyword(&kw)
                .map_err(|e| ProviderError::Lexicon(format!("'{kw}': {e}")))?;
            let seqs: Vec<Vec<String>> = list
                .iter()
                .map(|t| tokenize(t))
                .filter(|t| !t.is_empty())
                .collect();
            if terms.insert(kw.clone(), seqs).is_some() {
                return Err(ProviderError::Lexicon(format!("duplicate keyword '{kw}'")));
            }
        }
        Ok(Self { terms })
    }

    pub fn keywords(&self) -> impl Iterator<Item = &Keyword> {
        self.terms.keys()
    }

    /// Number of tokens covered by occurrences of `kw`'s terms.
    fn hits(&self, kw: &Keyword, tokens: &[String]) -> usize {
        let Some(seqs) = self.terms.get(kw) else {
            return 0;
        };
        let mut covered = vec![false; tokens.len()];
        for seq in seqs {
            if seq.len() > tokens.len() {
                continue;
            }
            for start in 0..=tokens.len() - seq.len() {
                if tokens[start..start + seq.len()] == seq[..] {
                    covered[start..start + seq.len()]
                        .iter_mut()
                        .for_each(|c| *c = true);
                }
            }
        }
        covered.into_iter().filter(|c| *c).count()
    }
}

pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Threshold table applied with exact integer comparisons.
pub fn presence_from_fraction(hits: usize, total: usize) -> i64 {
    if hits == 0 || total == 0 {
        return -2;
    }
    let (h, t) = (hits as u128 * 100, total as u128);
    if h < t {
        -1
    } else if h < 3 * t {
        0
    } else if h < 8 * t {
        1
    } else {
        2
    }
}

#[derive(Debug, Clone)]
pub struct MockProvider {
    lexicon: Lexicon,
}

impl MockProvider {
    pub fn new(lexicon: Lexicon) -> Self {
        Self { lexicon }
    }

    pub fn with_default_lexicon() -> Self {
        Self::new(Lexicon::from_json(DEFAULT_LEXICON_JSON).expect("shipped lexicon is valid"))
    }

    pub fn from_path(path: &Path) -> Result<Self, ProviderError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ProviderError::Lexicon(format!("{}: {e}", path.display())))?;
        Ok(Self::new(Lexicon::from_json(&text)?))
    }

    fn chunk_tokens(chunk: &Chunk) -> Vec<String> {
        let mut tokens = Vec::new();
        for seg in &chunk.segments {
            for label in &seg.keyframe.labels {
                tokens.extend(tokenize(label));
            }
            for cue in &seg.cues {
                tokens.extend(tokenize(&cue.text));
            }
        }
        tokens
    }

    fn presences(&self, chunk: &Chunk) -> BTreeMap<Keyword, i64> {
        let tokens = Self::chunk_tokens(chunk);
        self.lexicon
            .keywords()
            .map(|kw| {
                (
                    kw.clone(),
                    presence_from_fraction(self.lexicon.hits(kw, &tokens), tokens.len()),
                )
            })
            .collect()
    }
}

fn presence_for(presences: &BTreeMap<Keyword, i64>, name: &str) -> i64 {
    normalize_keyword(name)
        .ok()
        .and_then(|kw| presences.get(&kw).copied())
        .unwrap_or(-2)
}

/// Risk level index for a presence value: 2 → top level, 1 → the one below, else lowest.
fn risk_level_index(presence: i64, levels: usize) -> usize {
    match presence {
        2 => levels - 1,
        1 => levels.saturating_sub(2).max(levels.min(2) - 1),
        _ => 0,
    }
}

/// Maps the worst normalized severity onto the ordered age bands.
fn band_for(severity_fraction: (usize, usize), guidelines: &CommonGuidelineSet) -> usize {
    let bands = guidelines.age_bands.len();
    let (num, den) = severity_fraction;
    if den == 0 || bands == 1 {
        return 0;
    }
    // round(num / den * (bands - 1)), half up
    (2 * num * (bands - 1) + den) / (2 * den)
}

impl AnalysisProvider for MockProvider {
    fn id(&self) -> String {
        "mock-lexicon".to_string()
    }

    fn analyze_chunk(
        &self,
        chunk: &Chunk,
        task: Task<'_>,
    ) -> Result<ProviderOutput, ProviderError> {
        let presences = self.presences(chunk);
        let keywords = presences
            .iter()
            .map(|(kw, p)| KeywordScore {
                name: kw.to_string(),
                score: *p,
            })
            .collect();

        let Task::Censor { guidelines, .. } = task else {
            return Ok(ProviderOutput {
                keywords,
                risks: Vec::new(),
                age_band: String::new(),
                appropriateness: Vec::new(),
                summary: String::new(),
            });
        };

        let mut risks = Vec::new();
        let mut worst = (0usize, 1usize);
        let mut worst_name: Option<(String, String)> = None;
        for cat in &guidelines.risks {
            let p = presence_for(&presences, &cat.name);
            let idx = risk_level_index(p, cat.levels.len());
            let den = cat.levels.len().saturating_sub(1).max(1);
            if idx * worst.1 > worst.0 * den {
                worst = (idx, den);
                worst_name = Some((cat.name.clone(), cat.levels[idx].clone()));
            }
            let rationale = if idx == 0 {
                format!("No notable '{}' content detected (presence {p}).", cat.name)
            } else {
                format!(
                    "Lexicon presence {p} for '{}' maps to level '{}'.",
                    cat.name, cat.levels[idx]
                )
            };
            risks.push(RawRisk {
                category: cat.name.clone(),
                level: cat.levels[idx].clone(),
                rationale,
            });
        }

        let appropriateness = guidelines
            .appropriateness
            .iter()
            .map(|cat| {
                let p = presence_for(&presences, &cat.name);
                let value = (p + 1).clamp(0, cat.max_value() as i64);
                RawAppropriateness {
                    category: cat.name.clone(),
                    value,
                    rationale: format!(
                        "Lexicon presence {p} for '{}' rated '{}'.",
                        cat.name, cat.scale[value as usize]
                    ),
                }
            })
            .collect();

        let band = &guidelines.age_bands[band_for(worst, guidelines)].name;
        let cues: usize = chunk.segments.iter().map(|s| s.cues.len()).sum();
        let highest = match &worst_name {
            Some((cat, level)) => format!("highest risk '{cat}' at '{level}'"),
            None => "no risk content detected".to_string(),
        };
        let summary = format!(
            "Analyzed {} keyframe segment(s) with {cues} subtitle cue(s); {highest}; suggested age band '{band}'.",
            chunk.segments.len()
        );

        Ok(ProviderOutput {
            keywords,
            risks,
            age_band: band.clone(),
            appropriateness,
            summary,
        })
    }
}
