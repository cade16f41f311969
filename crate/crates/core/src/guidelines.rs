//! Common guidelines (age bands, risk and appropriateness taxonomies loaded
//! from an editable document) and personalized guidelines derived from a
//! co-preference panel.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::preference::{Keyword, PreferencePanel, Role};

/// The document shipped with the crate (`guidelines/default.json`).
pub const DEFAULT_GUIDELINES_JSON: &str = include_str!("../guidelines/default.json");

pub const DEFAULT_RISK_LEVELS: [&str; 4] = ["none", "low", "medium", "high"];
pub const DEFAULT_APPROPRIATENESS_SCALE: [&str; 4] = ["none", "low", "medium", "high"];

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GuidelineError {
    #[error("schema error at '{field}': {message}")]
    Schema { field: String, message: String },
    #[error("age bands '{first}' and '{second}' overlap")]
    Overlap { first: String, second: String },
    #[error("personalized guidelines need a co-preference panel, got role '{0}'")]
    WrongRole(Role),
}

fn schema(field: impl Into<String>, message: impl Into<String>) -> GuidelineError {
    GuidelineError::Schema {
        field: field.into(),
        message: message.into(),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgeBand {
    pub name: String,
    pub min_age: u32,
    /// Inclusive upper bound; `None` for the open-ended last band.
    pub max_age: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RiskCategory {
    pub name: String,
    #[serde(default = "default_levels")]
    pub levels: Vec<String>,
    #[serde(default)]
    pub description: String,
}

fn default_levels() -> Vec<String> {
    DEFAULT_RISK_LEVELS.iter().map(|s| s.to_string()).collect()
}

impl RiskCategory {
    pub fn level_index(&self, level: &str) -> Option<usize> {
        self.levels.iter().position(|l| l == level)
    }

    pub fn lowest(&self) -> &str {
        &self.levels[0]
    }

    pub fn highest(&self) -> &str {
        &self.levels[self.levels.len() - 1]
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AppropriatenessCategory {
    pub name: String,
    /// Labels for the integer values `0..scale.len()`.
    #[serde(default = "default_scale")]
    pub scale: Vec<String>,
}

fn default_scale() -> Vec<String> {
    DEFAULT_APPROPRIATENESS_SCALE
        .iter()
        .map(|s| s.to_string())
        .collect()
}

impl AppropriatenessCategory {
    pub fn max_value(&self) -> u8 {
        (self.scale.len() - 1) as u8
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommonGuidelineSet {
    pub age_bands: Vec<AgeBand>,
    pub risks: Vec<RiskCategory>,
    pub appropriateness: Vec<AppropriatenessCategory>,
    #[serde(default)]
    pub source_notes: String,
}

impl CommonGuidelineSet {
    pub fn default_set() -> Self {
        load_common(DEFAULT_GUIDELINES_JSON).expect("shipped guideline document is valid")
    }

    pub fn risk(&self, name: &str) -> Option<&RiskCategory> {
        self.risks.iter().find(|r| r.name == name)
    }

    pub fn appropriateness_category(&self, name: &str) -> Option<&AppropriatenessCategory> {
        self.appropriateness.iter().find(|a| a.name == name)
    }

    pub fn band_index(&self, name: &str) -> Option<usize> {
        self.age_bands.iter().position(|b| b.name == name)
    }

    pub fn youngest_band(&self) -> &AgeBand {
        &self.age_bands[0]
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("guideline sets always serialize")
    }

    /// Checks every structural invariant. Bands must already be sorted.
    pub fn validate(&self) -> Result<(), GuidelineError> {
        if self.age_bands.is_empty() {
            return Err(schema("age_bands", "at least one band required"));
        }
        if self.risks.is_empty() {
            return Err(schema("risks", "at least one risk category required"));
        }
        if self.appropriateness.is_empty() {
            return Err(schema("appropriateness", "at least one category required"));
        }

        let mut names = BTreeSet::new();
        for (i, band) in self.age_bands.iter().enumerate() {
            let field = format!("age_bands[{i}]");
            if band.name.trim().is_empty() {
                return Err(schema(format!("{field}.name"), "empty name"));
            }
            if !names.insert(band.name.as_str()) {
                return Err(schema(
                    format!("{field}.name"),
                    format!("duplicate band '{}'", band.name),
                ));
            }
            if let Some(max) = band.max_age {
                if max < band.min_age {
                    return Err(schema(format!("{field}.max_age"), "max_age below min_age"));
                }
            }
        }
        for pair in self.age_bands.windows(2) {
            let (a, b) = (&pair[0], &pair[1]);
            match a.max_age {
                Some(max) if b.min_age > max + 1 => {
                    return Err(schema(
                        "age_bands",
                        format!("gap between '{}' and '{}'", a.name, b.name),
                    ))
                }
                Some(max) if b.min_age > max => {}
                _ => {
                    return Err(GuidelineError::Overlap {
                        first: a.name.clone(),
                        second: b.name.clone(),
                    })
                }
            }
        }
        if self.age_bands[0].min_age != 0 {
            return Err(schema("age_bands[0].min_age", "bands must start at age 0"));
        }
        if self.age_bands[self.age_bands.len() - 1].max_age.is_some() {
            return Err(schema(
                "age_bands",
                "last band must be open-ended (max_age null)",
            ));
        }

        let mut names = BTreeSet::new();
        for (i, risk) in self.risks.iter().enumerate() {
            let field = format!("risks[{i}]");
            if risk.name.trim().is_empty() {
                return Err(schema(format!("{field}.name"), "empty name"));
            }
            if !names.insert(risk.name.as_str()) {
                return Err(schema(
                    format!("{field}.name"),
                    format!("duplicate category '{}'", risk.name),
                ));
            }
            if risk.levels.is_empty() {
                return Err(schema(format!("{field}.levels"), "level list is empty"));
            }
            let unique: BTreeSet<_> = risk.levels.iter().collect();
            if unique.len() != risk.levels.len() {
                return Err(schema(format!("{field}.levels"), "levels must be distinct"));
            }
        }

        let mut names = BTreeSet::new();
        for (i, cat) in self.appropriateness.iter().enumerate() {
            let field = format!("appropriateness[{i}]");
            if cat.name.trim().is_empty() {
                return Err(schema(format!("{field}.name"), "empty name"));
            }
            if !names.insert(cat.name.as_str()) {
                return Err(schema(
                    format!("{field}.name"),
                    format!("duplicate category '{}'", cat.name),
                ));
            }
            if !(2..=4).contains(&cat.scale.len()) {
                return Err(schema(
                    format!("{field}.scale"),
                    "scale must label between 2 and 4 values (0..=3)",
                ));
            }
            let unique: BTreeSet<_> = cat.scale.iter().collect();
            if unique.len() != cat.scale.len() {
                return Err(schema(
                    format!("{field}.scale"),
                    "scale labels must be distinct",
                ));
            }
        }
        Ok(())
    }
}

/// Parses and validates a guideline document. Age bands are sorted by
/// `min_age` before validation so overlaps are caught in any input order.
pub fn load_common(document: &str) -> Result<CommonGuidelineSet, GuidelineError> {
    let mut set: CommonGuidelineSet = serde_json::from_str(document).map_err(|e| {
        let message = e.to_string();
        // serde names the missing/offending field in its message
        let field = message.split('`').nth(1).unwrap_or("document").to_string();
        schema(field, message)
    })?;
    set.age_bands.sort_by_key(|b| b.min_age);
    set.validate()?;
    Ok(set)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Directive {
    Seek,
    Avoid,
    Note,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Emphasis {
    pub keyword: Keyword,
    pub directive: Directive,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PersonalizedGuideline {
    pub co_pref: PreferencePanel,
    pub emphasis: Vec<Emphasis>,
}

impl PersonalizedGuideline {
    pub fn keywords(&self, directive: Directive) -> impl Iterator<Item = &Keyword> {
        self.emphasis
            .iter()
            .filter(move |e| e.directive == directive)
            .map(|e| &e.keyword)
    }
}

pub fn derive_personalized(
    co_pref: &PreferencePanel,
) -> Result<PersonalizedGuideline, GuidelineError> {
    if co_pref.role != Role::Co {
        return Err(GuidelineError::WrongRole(co_pref.role));
    }
    let emphasis = co_pref
        .entries()
        .iter()
        .map(|(kw, w)| Emphasis {
            keyword: kw.clone(),
            directive: match w.value() {
                v if v < 0 => Directive::Avoid,
                v if v > 0 => Directive::Seek,
                _ => Directive::Note,
            },
        })
        .collect();
    Ok(PersonalizedGuideline {
        co_pref: co_pref.clone(),
        emphasis,
    })
}

pub const PERSONALIZED_HEADER: &str = "## Personalized Guidelines";

/// Renders both guideline kinds into the text block handed to a provider.
pub fn render_prompt_context(
    common: &CommonGuidelineSet,
    personal: &PersonalizedGuideline,
) -> String {
    let mut out = String::new();
    out.push_str("## Common Guidelines\n\n### Age bands\n");
    for band in &common.age_bands {
        match band.max_age {
            Some(max) => writeln!(out, "- {}: ages {}-{}", band.name, band.min_age, max),
            None => writeln!(out, "- {}: ages {} and up", band.name, band.min_age),
        }
        .unwrap();
    }
    out.push_str("\n### Risk categories\n");
    for risk in &common.risks {
        writeln!(out, "- {} (levels: {})", risk.name, risk.levels.join(" < ")).unwrap();
        if !risk.description.is_empty() {
            writeln!(out, "  {}", risk.description).unwrap();
        }
    }
    out.push_str("\n### Appropriateness categories\n");
    for cat in &common.appropriateness {
        let scale = cat
            .scale
            .iter()
            .enumerate()
            .map(|(i, l)| format!("{i}={l}"))
            .collect::<Vec<_>>()
            .join(", ");
        writeln!(out, "- {} (scale: {})", cat.name, scale).unwrap();
    }
    if !common.source_notes.is_empty() {
        writeln!(out, "\nSource notes: {}", common.source_notes).unwrap();
    }

    writeln!(out, "\n{PERSONALIZED_HEADER}").unwrap();
    if personal.emphasis.is_empty() {
        out.push_str("none configured\n");
        return out;
    }
    for (title, directive) in [
        ("Seek", Directive::Seek),
        ("Avoid", Directive::Avoid),
        ("Note", Directive::Note),
    ] {
        let words: Vec<&str> = personal.keywords(directive).map(Keyword::as_str).collect();
        let listed = if words.is_empty() {
            "(none)".to_string()
        } else {
            words.join(", ")
        };
        writeln!(out, "- {title}: {listed}").unwrap();
    }
    out
}
