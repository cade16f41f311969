//! Frames + subtitles → keyframe-anchored segments → provider-sized chunks.
//!
//! Keyframes are picked by a sequential scan comparing each frame's luminance
//! histogram against the most recent keyframe. Each keyframe owns a time
//! window; subtitle cues are assigned to the window containing their
//! midpoint, and whole segments are packed greedily into chunks.

mod manifest;
mod subtitles;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use manifest::{load_bundle, load_frames, FrameManifestEntry};
pub use subtitles::{parse_subtitles, SubtitleFormat};

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("frame dimensions differ: {left:?} vs {right:?}")]
    DimensionMismatch { left: (u32, u32), right: (u32, u32) },
    #[error("no frames supplied")]
    EmptyInput,
    #[error("frames out of order at index {0}")]
    UnorderedFrames(u64),
    #[error("cue [{start_ms}, {end_ms}] has its midpoint outside every keyframe window")]
    CueOutOfRange { start_ms: u64, end_ms: u64 },
    #[error("segment with {len} transcript characters exceeds chunk budget {budget}")]
    SegmentTooLarge { len: usize, budget: usize },
    #[error("invalid ingest config: {0}")]
    InvalidConfig(String),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubtitleCue {
    pub start_ms: u64,
    pub end_ms: u64,
    pub text: String,
}

impl SubtitleCue {
    /// Twice the midpoint, which keeps the midpoint rule in integers.
    fn midpoint_x2(&self) -> u64 {
        self.start_ms + self.end_ms
    }
}

/// 8-bit luminance raster, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    pub width: u32,
    pub height: u32,
    pub pixels: Vec<u8>,
}

impl GrayImage {
    pub fn filled(width: u32, height: u32, value: u8) -> Self {
        Self {
            width,
            height,
            pixels: vec![value; (width * height) as usize],
        }
    }

    fn histogram(&self, bins: usize) -> Vec<f64> {
        let mut counts = vec![0u64; bins];
        for &p in &self.pixels {
            counts[p as usize * bins / 256] += 1;
        }
        let total = self.pixels.len().max(1) as f64;
        counts.into_iter().map(|c| c as f64 / total).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrameRef {
    pub index: u64,
    pub timestamp_ms: u64,
    pub image: GrayImage,
    /// Optional descriptive labels attached by the frame manifest; the mock
    /// provider reads them alongside the transcript.
    pub labels: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeyFrame {
    pub frame_index: u64,
    pub timestamp_ms: u64,
    pub window_start: u64,
    pub window_end: u64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub labels: Vec<String>,
}

impl KeyFrame {
    pub fn duration_ms(&self) -> u64 {
        self.window_end - self.window_start
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlignedSegment {
    pub keyframe: KeyFrame,
    pub cues: Vec<SubtitleCue>,
}

impl AlignedSegment {
    /// Transcript size in characters (the unit of the chunk budget).
    pub fn transcript_len(&self) -> usize {
        self.cues.iter().map(|c| c.text.chars().count()).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Chunk {
    pub segments: Vec<AlignedSegment>,
}

impl Chunk {
    pub fn transcript_len(&self) -> usize {
        self.segments
            .iter()
            .map(AlignedSegment::transcript_len)
            .sum()
    }

    pub fn duration_ms(&self) -> u64 {
        self.segments.iter().map(|s| s.keyframe.duration_ms()).sum()
    }

    /// Transcript as plain text, one cue per line.
    pub fn transcript(&self) -> String {
        self.segments
            .iter()
            .flat_map(|s| s.cues.iter().map(|c| c.text.as_str()))
            .collect::<Vec<_>>()
            .join("\n")
    }

    /// Transcript annotated with keyframe windows, as sent to a live provider.
    pub fn annotated_transcript(&self) -> String {
        let mut out = String::new();
        for seg in &self.segments {
            let kf = &seg.keyframe;
            out.push_str(&format!(
                "[keyframe {} | {}-{} ms]",
                kf.frame_index, kf.window_start, kf.window_end
            ));
            if !kf.labels.is_empty() {
                out.push_str(&format!(" labels: {}", kf.labels.join(", ")));
            }
            out.push('\n');
            for cue in &seg.cues {
                out.push_str(&format!("{}-{}: {}\n", cue.start_ms, cue.end_ms, cue.text));
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IngestConfig {
    pub similarity_threshold: f64,
    pub histogram_bins: usize,
    pub chunk_budget: usize,
    /// Length given to the final keyframe window past the last frame. When
    /// unset, the mean spacing of the input frames is used (1000 ms for a
    /// single frame).
    pub frame_interval_ms: Option<u64>,
}

impl Default for IngestConfig {
    fn default() -> Self {
        Self {
            similarity_threshold: 0.85,
            histogram_bins: 64,
            chunk_budget: 8000,
            frame_interval_ms: None,
        }
    }
}

impl IngestConfig {
    pub fn validate(&self) -> Result<(), IngestError> {
        if !(self.similarity_threshold > 0.0 && self.similarity_threshold <= 1.0) {
            return Err(IngestError::InvalidConfig(format!(
                "similarity_threshold {} not in (0, 1]",
                self.similarity_threshold
            )));
        }
        if !(2..=256).contains(&self.histogram_bins) {
            return Err(IngestError::InvalidConfig(format!(
                "histogram_bins {} not in 2..=256",
                self.histogram_bins
            )));
        }
        if self.chunk_budget < 256 {
            return Err(IngestError::InvalidConfig(format!(
                "chunk_budget {} below 256",
                self.chunk_budget
            )));
        }
        if self.frame_interval_ms == Some(0) {
            return Err(IngestError::InvalidConfig(
                "frame_interval_ms must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Histogram intersection of the two frames' normalized luminance histograms.
pub fn frame_similarity(a: &FrameRef, b: &FrameRef, bins: usize) -> Result<f64, IngestError> {
    let (ia, ib) = (&a.image, &b.image);
    if (ia.width, ia.height) != (ib.width, ib.height) {
        return Err(IngestError::DimensionMismatch {
            left: (ia.width, ia.height),
            right: (ib.width, ib.height),
        });
    }
    let bins = bins.clamp(1, 256);
    let ha = ia.histogram(bins);
    let hb = ib.histogram(bins);
    let s: f64 = ha.iter().zip(&hb).map(|(x, y)| x.min(*y)).sum();
    Ok(s.clamp(0.0, 1.0))
}

pub fn extract_keyframes(
    frames: &[FrameRef],
    cfg: &IngestConfig,
) -> Result<Vec<KeyFrame>, IngestError> {
    cfg.validate()?;
    let first = frames.first().ok_or(IngestError::EmptyInput)?;
    for pair in frames.windows(2) {
        if pair[1].index <= pair[0].index || pair[1].timestamp_ms < pair[0].timestamp_ms {
            return Err(IngestError::UnorderedFrames(pair[1].index));
        }
    }

    let mut picked = vec![first];
    for frame in &frames[1..] {
        let anchor = picked[picked.len() - 1];
        if frame_similarity(anchor, frame, cfg.histogram_bins)? < cfg.similarity_threshold {
            picked.push(frame);
        }
    }

    let last_ts = frames[frames.len() - 1].timestamp_ms;
    let interval = cfg.frame_interval_ms.unwrap_or_else(|| {
        if frames.len() >= 2 {
            ((last_ts - first.timestamp_ms) / (frames.len() as u64 - 1)).max(1)
        } else {
            1000
        }
    });
    let end = last_ts + interval;

    Ok(picked
        .iter()
        .enumerate()
        .map(|(i, f)| KeyFrame {
            frame_index: f.index,
            timestamp_ms: f.timestamp_ms,
            window_start: if i == 0 { 0 } else { f.timestamp_ms },
            window_end: picked.get(i + 1).map_or(end, |next| next.timestamp_ms),
            labels: f.labels.clone(),
        })
        .collect())
}

/// Assigns each cue to the window containing its midpoint. Windows are
/// half-open except the last, which includes its end.
pub fn align(
    keyframes: &[KeyFrame],
    cues: &[SubtitleCue],
) -> Result<Vec<AlignedSegment>, IngestError> {
    let mut segments: Vec<AlignedSegment> = keyframes
        .iter()
        .map(|k| AlignedSegment {
            keyframe: k.clone(),
            cues: Vec::new(),
        })
        .collect();
    let last = keyframes.len().checked_sub(1);
    for cue in cues {
        let mid2 = cue.midpoint_x2();
        let slot = keyframes
            .iter()
            .position(|k| mid2 >= 2 * k.window_start && mid2 < 2 * k.window_end);
        let slot = slot.or_else(|| last.filter(|&i| mid2 == 2 * keyframes[i].window_end));
        match slot {
            Some(i) => segments[i].cues.push(cue.clone()),
            None => {
                return Err(IngestError::CueOutOfRange {
                    start_ms: cue.start_ms,
                    end_ms: cue.end_ms,
                })
            }
        }
    }
    Ok(segments)
}

/// Greedy left-to-right packing of whole segments under a character budget.
pub fn chunk(segments: &[AlignedSegment], budget: usize) -> Result<Vec<Chunk>, IngestError> {
    let mut chunks = Vec::new();
    let mut current: Vec<AlignedSegment> = Vec::new();
    let mut used = 0usize;
    for seg in segments {
        let len = seg.transcript_len();
        if len > budget {
            return Err(IngestError::SegmentTooLarge { len, budget });
        }
        if !current.is_empty() && used + len > budget {
            chunks.push(Chunk {
                segments: std::mem::take(&mut current),
            });
            used = 0;
        }
        used += len;
        current.push(seg.clone());
    }
    if !current.is_empty() {
        chunks.push(Chunk { segments: current });
    }
    Ok(chunks)
}

/// The whole ingest path for in-memory inputs.
pub fn prepare(
    frames: &[FrameRef],
    cues: &[SubtitleCue],
    cfg: &IngestConfig,
) -> Result<Vec<Chunk>, IngestError> {
    let keyframes = extract_keyframes(frames, cfg)?;
    let segments = align(&keyframes, cues)?;
    chunk(&segments, cfg.chunk_budget)
}
