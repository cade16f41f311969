use std::path::{Path, PathBuf};

use image::DynamicImage;
use serde::{Deserialize, Serialize};

use super::{parse_subtitles, FrameRef, GrayImage, IngestError, SubtitleCue, SubtitleFormat};

/// One entry of `manifest.json` in a frame directory.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameManifestEntry {
    pub index: u64,
    pub timestamp_ms: u64,
    pub file: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub labels: Vec<String>,
}

pub const MANIFEST_FILE: &str = "manifest.json";

fn io_err(path: &Path, message: impl std::fmt::Display) -> IngestError {
    IngestError::Io {
        path: path.display().to_string(),
        message: message.to_string(),
    }
}

/// Converts a decoded image to luminance. 8-bit gray passes through; anything
/// else goes through RGB with 0.299R + 0.587G + 0.114B rounded to nearest.
fn to_luma(img: DynamicImage) -> GrayImage {
    let (width, height) = (img.width(), img.height());
    let pixels = match img {
        DynamicImage::ImageLuma8(gray) => gray.into_raw(),
        other => other
            .to_rgb8()
            .pixels()
            .map(|p| {
                let [r, g, b] = p.0;
                // integer form of the weighted sum, rounded half up
                let y = 299 * r as u32 + 587 * g as u32 + 114 * b as u32;
                ((y + 500) / 1000) as u8
            })
            .collect(),
    };
    GrayImage {
        width,
        height,
        pixels,
    }
}

/// Reads `manifest.json` from `dir` and decodes every listed image.
pub fn load_frames(dir: &Path) -> Result<Vec<FrameRef>, IngestError> {
    let manifest_path = dir.join(MANIFEST_FILE);
    let text = std::fs::read_to_string(&manifest_path).map_err(|e| io_err(&manifest_path, e))?;
    let mut entries: Vec<FrameManifestEntry> =
        serde_json::from_str(&text).map_err(|e| IngestError::Parse {
            line: e.line(),
            message: format!("{}: {e}", manifest_path.display()),
        })?;
    entries.sort_by_key(|e| e.index);
    entries
        .into_iter()
        .map(|entry| {
            let path: PathBuf = dir.join(&entry.file);
            let img = image::open(&path).map_err(|e| io_err(&path, e))?;
            Ok(FrameRef {
                index: entry.index,
                timestamp_ms: entry.timestamp_ms,
                image: to_luma(img),
                labels: entry.labels,
            })
        })
        .collect()
}

/// Loads a frame directory plus subtitle document. The subtitle format is
/// taken from `format` or guessed from the file extension.
pub fn load_bundle(
    frames_dir: &Path,
    subtitles: &Path,
    format: Option<SubtitleFormat>,
) -> Result<(Vec<FrameRef>, Vec<SubtitleCue>), IngestError> {
    let frames = load_frames(frames_dir)?;
    let text = std::fs::read_to_string(subtitles).map_err(|e| io_err(subtitles, e))?;
    let format = format.unwrap_or_else(|| SubtitleFormat::from_path(subtitles));
    let cues = parse_subtitles(&text, format)?;
    Ok((frames, cues))
}
