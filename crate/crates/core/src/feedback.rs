//! Per-video alignment against the co-preference panel and period summaries.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::preference::{Keyword, PreferencePanel, Role, Weight};
use crate::provider::{AppropriatenessFinding, CensorshipResult, Presence, RiskFinding};
use crate::rounding::div_round_half_away;
use crate::time::Timestamp;

pub const DAY_MS: i64 = 86_400_000;

/// Guard against absurd bucket counts when a period is huge and the bucket tiny.
pub const MAX_BUCKETS: i64 = 100_000;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FeedbackError {
    #[error("co-preference panel expected, got a '{0}' panel")]
    WrongRole(Role),
    #[error("invalid period: {0}")]
    InvalidPeriod(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Alignment {
    Aligned,
    Misaligned,
    Informational,
}

pub fn classify(pref: Weight, score: Presence) -> Alignment {
    let (w, s) = (pref.value() as i32, score.value() as i32);
    match (w * s).signum() {
        1 => Alignment::Aligned,
        -1 => Alignment::Misaligned,
        _ if w == 0 && s == 0 => Alignment::Aligned,
        _ => Alignment::Informational,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scale {
    Preference,
    Presence,
}

/// Display label of a value on either five-point scale. Out-of-range values clamp.
pub fn label_of(value: i64, scale: Scale) -> &'static str {
    let idx = (value.clamp(-2, 2) + 2) as usize;
    match scale {
        Scale::Preference => Weight::LABELS[idx],
        Scale::Presence => Presence::LABELS[idx],
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlignmentEntry {
    pub keyword: Keyword,
    pub pref_weight: Weight,
    pub video_score: Presence,
    pub classification: Alignment,
}

/// The guideline-facing part of a result, copied verbatim.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommonFeedback {
    pub age_band: String,
    pub risks: Vec<RiskFinding>,
    pub appropriateness: Vec<AppropriatenessFinding>,
    pub summary: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InTimeFeedback {
    pub video_id: String,
    pub entries: Vec<AlignmentEntry>,
    pub common: CommonFeedback,
    pub produced_at: Timestamp,
}

/// One entry per co-preference keyword, in keyword order. Keywords the
/// video lacks score at the absence floor.
pub fn build_in_time(
    co_pref: &PreferencePanel,
    result: &CensorshipResult,
) -> Result<InTimeFeedback, FeedbackError> {
    if co_pref.role != Role::Co {
        return Err(FeedbackError::WrongRole(co_pref.role));
    }
    let entries = co_pref
        .entries()
        .iter()
        .map(|(kw, &w)| {
            let score = result.features.score_or_floor(kw);
            AlignmentEntry {
                keyword: kw.clone(),
                pref_weight: w,
                video_score: score,
                classification: classify(w, score),
            }
        })
        .collect();
    Ok(InTimeFeedback {
        video_id: result.video_id.clone(),
        entries,
        common: CommonFeedback {
            age_band: result.age_band.clone(),
            risks: result.risks.clone(),
            appropriateness: result.appropriateness.clone(),
            summary: result.summary.clone(),
        },
        produced_at: result.produced_at,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Period {
    pub from: Timestamp,
    pub to: Timestamp,
    #[serde(default = "default_bucket")]
    pub bucket_ms: i64,
}

fn default_bucket() -> i64 {
    DAY_MS
}

impl Period {
    pub fn new(from: Timestamp, to: Timestamp) -> Self {
        Self {
            from,
            to,
            bucket_ms: DAY_MS,
        }
    }

    pub fn validate(&self) -> Result<(), FeedbackError> {
        if self.from >= self.to {
            return Err(FeedbackError::InvalidPeriod(
                "from must be before to".into(),
            ));
        }
        if self.bucket_ms <= 0 {
            return Err(FeedbackError::InvalidPeriod(
                "bucket must be positive".into(),
            ));
        }
        if self.bucket_count() > MAX_BUCKETS {
            return Err(FeedbackError::InvalidPeriod(format!(
                "more than {MAX_BUCKETS} buckets; use a larger bucket"
            )));
        }
        Ok(())
    }

    pub fn contains(&self, t: Timestamp) -> bool {
        self.from <= t && t < self.to
    }

    pub fn bucket_count(&self) -> i64 {
        let span = (self.to.millis() as i128) - (self.from.millis() as i128);
        let b = self.bucket_ms as i128;
        ((span + b - 1) / b).clamp(0, i64::MAX as i128) as i64
    }

    fn bucket_of(&self, t: Timestamp) -> usize {
        ((t.millis() - self.from.millis()) / self.bucket_ms) as usize
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeywordSummary {
    pub mean_score: f64,
    pub pref_weight: Weight,
    pub display_label: String,
    pub classification: Alignment,
    pub samples: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrendPoint {
    pub bucket_start: Timestamp,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryReport {
    pub period: Period,
    pub video_count: usize,
    pub per_keyword: BTreeMap<Keyword, KeywordSummary>,
    pub risk_frequency: BTreeMap<String, usize>,
    pub risk_trend: BTreeMap<String, Vec<TrendPoint>>,
}

impl SummaryReport {
    /// Trend series as CSV rows `category,bucket_start,count`.
    pub fn trend_csv(&self) -> Result<String, csv::Error> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["category", "bucket_start", "count"])?;
        for (category, series) in &self.risk_trend {
            for p in series {
                w.write_record([
                    category.clone(),
                    p.bucket_start.millis().to_string(),
                    p.count.to_string(),
                ])?;
            }
        }
        let bytes = w.into_inner().map_err(|e| e.into_error())?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

/// Aggregates the records produced inside `period`. Every risk category
/// assessed in the period is listed, with a zero count if never flagged.
pub fn aggregate(
    records: &[InTimeFeedback],
    period: &Period,
) -> Result<SummaryReport, FeedbackError> {
    period.validate()?;
    let mut included: Vec<&InTimeFeedback> = records
        .iter()
        .filter(|r| period.contains(r.produced_at))
        .collect();
    // Fixed order so the "latest preference" choice does not depend on input order.
    included.sort_by_cached_key(|r| {
        let entries: Vec<(Keyword, i8, i8)> = r
            .entries
            .iter()
            .map(|e| {
                (
                    e.keyword.clone(),
                    e.pref_weight.value(),
                    e.video_score.value(),
                )
            })
            .collect();
        (r.produced_at, r.video_id.clone(), entries)
    });

    struct Acc {
        sum: i128,
        count: i128,
        pref: Weight,
    }
    let mut keywords: BTreeMap<&Keyword, Acc> = BTreeMap::new();
    let mut risk_frequency: BTreeMap<String, usize> = BTreeMap::new();
    let mut flagged: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    let buckets = if included.is_empty() {
        0
    } else {
        period.bucket_count() as usize
    };

    for rec in &included {
        for e in &rec.entries {
            let acc = keywords.entry(&e.keyword).or_insert(Acc {
                sum: 0,
                count: 0,
                pref: e.pref_weight,
            });
            acc.sum += e.video_score.value() as i128;
            acc.count += 1;
            acc.pref = e.pref_weight;
        }
        let mut seen_here = std::collections::BTreeSet::new();
        for r in &rec.common.risks {
            let count = risk_frequency.entry(r.category.clone()).or_insert(0);
            let series = flagged
                .entry(r.category.clone())
                .or_insert_with(|| vec![0; buckets]);
            // a category listed twice in one result still counts once
            if r.severity > 0 && seen_here.insert(r.category.as_str()) {
                *count += 1;
                series[period.bucket_of(rec.produced_at)] += 1;
            }
        }
    }

    let per_keyword = keywords
        .into_iter()
        .map(|(kw, acc)| {
            let rounded = div_round_half_away(acc.sum, acc.count) as i64;
            let rounded_presence = Presence::clamped(rounded);
            let summary = KeywordSummary {
                mean_score: acc.sum as f64 / acc.count as f64,
                pref_weight: acc.pref,
                display_label: label_of(rounded, Scale::Presence).to_string(),
                classification: classify(acc.pref, rounded_presence),
                samples: acc.count as usize,
            };
            (kw.clone(), summary)
        })
        .collect();

    let risk_trend = flagged
        .into_iter()
        .map(|(cat, counts)| {
            let series = counts
                .into_iter()
                .enumerate()
                .map(|(i, count)| TrendPoint {
                    bucket_start: period.from.plus_millis(i as i64 * period.bucket_ms),
                    count,
                })
                .collect();
            (cat, series)
        })
        .collect();

    Ok(SummaryReport {
        period: *period,
        video_count: included.len(),
        per_keyword,
        risk_frequency,
        risk_trend,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::provider::VideoFeatures;
    use proptest::prelude::*;

    fn w(v: i64) -> Weight {
        Weight::new(v).unwrap()
    }
    fn p(v: i64) -> Presence {
        Presence::new(v).unwrap()
    }
    fn kw(s: &str) -> Keyword {
        Keyword::new(s).unwrap()
    }

    fn co(entries: &[(&str, i64)]) -> PreferencePanel {
        PreferencePanel::from_entries(Role::Co, entries.iter().map(|(k, v)| (kw(k), w(*v))))
            .unwrap()
    }

    fn result(features: &[(&str, i64)], risks: &[(&str, usize)], at: i64) -> CensorshipResult {
        CensorshipResult {
            video_id: format!("v{at}"),
            age_band: "8-11".into(),
            risks: risks
                .iter()
                .map(|(c, sev)| RiskFinding {
                    category: c.to_string(),
                    level: ["none", "low", "medium", "high"][*sev].into(),
                    severity: *sev,
                    rationale: String::new(),
                })
                .collect(),
            appropriateness: vec![],
            features: VideoFeatures {
                scores: features.iter().map(|(k, v)| (kw(k), p(*v))).collect(),
                coverage_ms: 1000,
            },
            summary: "s".into(),
            produced_at: Timestamp(at),
            provider_id: "t".into(),
        }
    }

    #[test]
    fn classify_examples() {
        assert_eq!(classify(w(1), p(1)), Alignment::Aligned);
        assert_eq!(classify(w(-2), p(2)), Alignment::Misaligned);
        assert_eq!(classify(w(0), p(2)), Alignment::Informational);
        assert_eq!(classify(w(0), p(0)), Alignment::Aligned);
    }

    #[test]
    fn labels() {
        assert_eq!(label_of(2, Scale::Presence), "very high");
        assert_eq!(label_of(-2, Scale::Preference), "strongly dislike");
        assert_eq!(label_of(0, Scale::Presence), "medium");
    }

    #[test]
    fn in_time_examples() {
        let fb = build_in_time(&co(&[("music", 1)]), &result(&[("music", 1)], &[], 0)).unwrap();
        assert_eq!(fb.entries[0].classification, Alignment::Aligned);

        let fb = build_in_time(&co(&[("games", -2)]), &result(&[], &[], 0)).unwrap();
        assert_eq!(fb.entries[0].video_score, p(-2));
        assert_eq!(fb.entries[0].classification, Alignment::Aligned);

        let r = result(&[("anime", 2)], &[("violence", 1)], 0);
        let fb = build_in_time(&co(&[]), &r).unwrap();
        assert!(fb.entries.is_empty());
        assert_eq!(fb.common.risks, r.risks);

        let youth = PreferencePanel::new(Role::Youth);
        assert_eq!(
            build_in_time(&youth, &r).unwrap_err(),
            FeedbackError::WrongRole(Role::Youth)
        );
    }

    #[test]
    fn games_week() {
        let panel = co(&[("games", -2)]);
        let records: Vec<_> = (0..10)
            .map(|i| build_in_time(&panel, &result(&[("games", 2)], &[], i * 3_600_000)).unwrap())
            .collect();
        let report =
            aggregate(&records, &Period::new(Timestamp(0), Timestamp(7 * DAY_MS))).unwrap();
        let games = &report.per_keyword[&kw("games")];
        assert_eq!(games.mean_score, 2.0);
        assert_eq!(games.display_label, "very high");
        assert_eq!(games.classification, Alignment::Misaligned);
        assert_eq!(report.video_count, 10);
    }

    #[test]
    fn mean_by_hand_and_empty() {
        let panel = co(&[("music", 1)]);
        let records: Vec<_> = [2, 1, 0]
            .iter()
            .enumerate()
            .map(|(i, s)| build_in_time(&panel, &result(&[("music", *s)], &[], i as i64)).unwrap())
            .collect();
        let period = Period::new(Timestamp(0), Timestamp(DAY_MS));
        assert_eq!(
            aggregate(&records, &period).unwrap().per_keyword[&kw("music")].mean_score,
            1.0
        );

        let empty = aggregate(&[], &period).unwrap();
        assert_eq!(empty.video_count, 0);
        assert!(
            empty.per_keyword.is_empty()
                && empty.risk_frequency.is_empty()
                && empty.risk_trend.is_empty()
        );
    }

    #[test]
    fn period_bounds_half_open() {
        let panel = co(&[("music", 1)]);
        let records = vec![
            build_in_time(&panel, &result(&[("music", 1)], &[], 0)).unwrap(),
            build_in_time(&panel, &result(&[("music", 1)], &[], 10)).unwrap(),
        ];
        let report = aggregate(&records, &Period::new(Timestamp(0), Timestamp(10))).unwrap();
        assert_eq!(report.video_count, 1);
        assert!(Period::new(Timestamp(5), Timestamp(5)).validate().is_err());
        let tiny = Period {
            from: Timestamp(0),
            to: Timestamp(1_000_000_000),
            bucket_ms: 1,
        };
        assert!(tiny.validate().is_err());
    }

    #[test]
    fn risk_frequency_and_trend() {
        let panel = co(&[]);
        let records = vec![
            build_in_time(&panel, &result(&[], &[("violence", 2), ("crime", 0)], 0)).unwrap(),
            build_in_time(&panel, &result(&[], &[("violence", 1)], DAY_MS + 5)).unwrap(),
            build_in_time(&panel, &result(&[], &[("violence", 0)], DAY_MS + 6)).unwrap(),
        ];
        let report =
            aggregate(&records, &Period::new(Timestamp(0), Timestamp(3 * DAY_MS))).unwrap();
        assert_eq!(report.risk_frequency["violence"], 2);
        assert_eq!(report.risk_frequency["crime"], 0);
        let counts: Vec<usize> = report.risk_trend["violence"]
            .iter()
            .map(|p| p.count)
            .collect();
        assert_eq!(counts, vec![1, 1, 0]);
        let csv = report.trend_csv().unwrap();
        assert!(csv.starts_with("category,bucket_start,count\n"));
        assert!(csv.contains("violence,86400000,1"));
    }

    fn arb_record() -> impl Strategy<Value = InTimeFeedback> {
        (
            proptest::collection::btree_map("[a-d]", (-2i64..=2, -2i64..=2), 0..4),
            proptest::collection::vec((0usize..3, 0usize..4), 0..3),
            0i64..(3 * DAY_MS),
        )
            .prop_map(|(kws, risks, at)| {
                let panel = co(&kws
                    .iter()
                    .map(|(k, (w, _))| (k.as_str(), *w))
                    .collect::<Vec<_>>());
                let feats: Vec<(&str, i64)> =
                    kws.iter().map(|(k, (_, s))| (k.as_str(), *s)).collect();
                let cats = ["violence", "crime", "pornography"];
                let risks: Vec<(&str, usize)> = risks.iter().map(|(c, s)| (cats[*c], *s)).collect();
                build_in_time(&panel, &result(&feats, &risks, at)).unwrap()
            })
    }

    proptest! {
        #[test]
        fn classify_sign_symmetric(a in -2i64..=2, b in -2i64..=2) {
            prop_assert_eq!(classify(w(a), p(b)), classify(w(-a), p(-b)));
            prop_assert_eq!(classify(w(a), p(b)) == Alignment::Misaligned, a * b < 0);
        }

        #[test]
        fn aggregate_permutation_invariant(mut recs in proptest::collection::vec(arb_record(), 0..12), seed in any::<u64>()) {
            let period = Period::new(Timestamp(0), Timestamp(3 * DAY_MS));
            let a = aggregate(&recs, &period).unwrap();
            let n = recs.len().max(1);
            recs.rotate_left((seed as usize) % n);
            recs.reverse();
            let b = aggregate(&recs, &period).unwrap();
            prop_assert_eq!(&a, &b);
            for (cat, series) in &a.risk_trend {
                prop_assert_eq!(series.iter().map(|p| p.count).sum::<usize>(), a.risk_frequency[cat]);
            }
            for s in a.per_keyword.values() {
                prop_assert!(s.mean_score.abs() <= 2.0);
                prop_assert!(Presence::LABELS.contains(&s.display_label.as_str()));
            }
        }

        #[test]
        fn single_record_roundtrip(rec in arb_record()) {
            let period = Period::new(Timestamp(0), Timestamp(3 * DAY_MS));
            let report = aggregate(std::slice::from_ref(&rec), &period).unwrap();
            for e in &rec.entries {
                let s = &report.per_keyword[&e.keyword];
                prop_assert_eq!(s.mean_score, e.video_score.value() as f64);
                prop_assert_eq!(s.classification, e.classification);
            }
        }
    }
}
