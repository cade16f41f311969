//! Ingest → provider → feedback, as used by the CLI, the service and the FFI.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::feedback::{build_in_time, FeedbackError, InTimeFeedback};
use crate::guidelines::{
    derive_personalized, render_prompt_context, CommonGuidelineSet, GuidelineError,
};
use crate::ingest::{load_bundle, prepare, Chunk, IngestConfig, IngestError, SubtitleFormat};
use crate::preference::PreferencePanel;
use crate::provider::{
    censor, extract_features, AnalysisProvider, CensorshipResult, ProviderError, VideoFeatures,
};
use crate::time::Timestamp;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error(transparent)]
    Guideline(#[from] GuidelineError),
    #[error(transparent)]
    Feedback(#[from] FeedbackError),
}

/// Where a video's frames and subtitles live on disk.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BundleRef {
    /// Directory holding `manifest.json` and the frame images.
    pub frames_dir: PathBuf,
    pub subtitles: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subtitle_format: Option<SubtitleFormat>,
}

/// Loads a bundle and cuts it into chunks no larger than `budget` characters.
pub fn chunks_for(
    bundle: &BundleRef,
    ingest: &IngestConfig,
    budget: usize,
) -> Result<Vec<Chunk>, PipelineError> {
    let (frames, cues) = load_bundle(
        &bundle.frames_dir,
        &bundle.subtitles,
        bundle.subtitle_format,
    )?;
    let cfg = IngestConfig {
        chunk_budget: ingest.chunk_budget.min(budget),
        ..ingest.clone()
    };
    Ok(prepare(&frames, &cues, &cfg)?)
}

/// Keyword features only, for indirect panel configuration.
pub fn features_for(
    bundle: &BundleRef,
    ingest: &IngestConfig,
    budget: usize,
    provider: &dyn AnalysisProvider,
) -> Result<VideoFeatures, PipelineError> {
    let chunks = chunks_for(bundle, ingest, budget)?;
    Ok(extract_features(&chunks, provider)?)
}

/// Runs the full censorship pass and builds the in-time feedback against `co_pref`.
#[allow(clippy::too_many_arguments)]
pub fn censor_bundle(
    video_id: &str,
    bundle: &BundleRef,
    co_pref: &PreferencePanel,
    guidelines: &CommonGuidelineSet,
    ingest: &IngestConfig,
    budget: usize,
    provider: &dyn AnalysisProvider,
    produced_at: Timestamp,
) -> Result<(CensorshipResult, InTimeFeedback), PipelineError> {
    let personal = derive_personalized(co_pref)?;
    let context = render_prompt_context(guidelines, &personal);
    let chunks = chunks_for(bundle, ingest, budget)?;
    let result = censor(
        video_id,
        &chunks,
        &context,
        guidelines,
        provider,
        produced_at,
    )?;
    let feedback = build_in_time(co_pref, &result)?;
    Ok((result, feedback))
}
