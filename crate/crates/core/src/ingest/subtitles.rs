//! SRT and WebVTT readers producing [`SubtitleCue`]s.

use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{IngestError, SubtitleCue};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SubtitleFormat {
    Srt,
    #[serde(alias = "vtt")]
    WebVtt,
}

impl SubtitleFormat {
    /// Guesses the format from a file extension; defaults to SRT.
    pub fn from_path(path: &std::path::Path) -> Self {
        match path
            .extension()
            .and_then(|e| e.to_str())
            .map(str::to_ascii_lowercase)
            .as_deref()
        {
            Some("vtt") | Some("webvtt") => SubtitleFormat::WebVtt,
            _ => SubtitleFormat::Srt,
        }
    }
}

impl FromStr for SubtitleFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "srt" => Ok(SubtitleFormat::Srt),
            "vtt" | "webvtt" => Ok(SubtitleFormat::WebVtt),
            other => Err(format!("unknown subtitle format '{other}'")),
        }
    }
}

pub fn parse_subtitles(
    text: &str,
    format: SubtitleFormat,
) -> Result<Vec<SubtitleCue>, IngestError> {
    let text = text.strip_prefix('\u{feff}').unwrap_or(text);
    if text.trim().is_empty() {
        return Ok(Vec::new());
    }
    let mut cues = match format {
        SubtitleFormat::Srt => parse_srt(text)?,
        SubtitleFormat::WebVtt => parse_vtt(text)?,
    };
    cues.sort_by_key(|c| c.start_ms);
    Ok(cues)
}

fn parse_error(line: usize, message: impl Into<String>) -> IngestError {
    IngestError::Parse {
        line,
        message: message.into(),
    }
}

/// Splits into blank-line separated blocks, keeping 1-based line numbers.
fn blocks(text: &str) -> Vec<Vec<(usize, &str)>> {
    let mut out = Vec::new();
    let mut current = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            if !current.is_empty() {
                out.push(std::mem::take(&mut current));
            }
        } else {
            current.push((i + 1, line));
        }
    }
    if !current.is_empty() {
        out.push(current);
    }
    out
}

/// `HH:MM:SS,mmm`, `HH:MM:SS.mmm` or (WebVTT) `MM:SS.mmm`.
fn parse_timestamp(raw: &str, line: usize) -> Result<u64, IngestError> {
    let raw = raw.trim();
    let bad = || parse_error(line, format!("malformed timestamp '{raw}'"));
    let (clock, millis) = raw.rsplit_once([',', '.']).ok_or_else(bad)?;
    if millis.len() != 3 || !millis.bytes().all(|b| b.is_ascii_digit()) {
        return Err(bad());
    }
    let parts: Vec<&str> = clock.split(':').collect();
    let (h, m, s) = match parts.as_slice() {
        [h, m, s] => (*h, *m, *s),
        [m, s] => ("0", *m, *s),
        _ => return Err(bad()),
    };
    let num = |v: &str| -> Result<u64, IngestError> {
        if v.is_empty() || !v.bytes().all(|b| b.is_ascii_digit()) {
            return Err(bad());
        }
        v.parse::<u64>().map_err(|_| bad())
    };
    let (h, m, s, ms) = (num(h)?, num(m)?, num(s)?, num(millis)?);
    if m >= 60 || s >= 60 {
        return Err(bad());
    }
    Ok(((h * 60 + m) * 60 + s) * 1000 + ms)
}

fn parse_timing(line: &str, line_no: usize) -> Result<(u64, u64), IngestError> {
    let (start, rest) = line
        .split_once("-->")
        .ok_or_else(|| parse_error(line_no, "expected '-->' timing line"))?;
    // WebVTT allows cue settings after the end timestamp.
    let end = rest.split_whitespace().next().unwrap_or("");
    let start = parse_timestamp(start, line_no)?;
    let end = parse_timestamp(end, line_no)?;
    if end <= start {
        return Err(parse_error(
            line_no,
            format!("cue end {end} ms is not after start {start} ms"),
        ));
    }
    Ok((start, end))
}

fn finish_cue(
    start: u64,
    end: u64,
    lines: &[(usize, &str)],
    timing_line: usize,
    strip_tags: bool,
) -> Result<SubtitleCue, IngestError> {
    let text = lines
        .iter()
        .map(|(_, l)| {
            if strip_tags {
                strip_markup(l)
            } else {
                l.trim().to_string()
            }
        })
        .filter(|l| !l.is_empty())
        .collect::<Vec<_>>()
        .join("\n");
    if text.is_empty() {
        return Err(parse_error(timing_line, "cue has no text"));
    }
    Ok(SubtitleCue {
        start_ms: start,
        end_ms: end,
        text,
    })
}

fn parse_srt(text: &str) -> Result<Vec<SubtitleCue>, IngestError> {
    let mut cues = Vec::new();
    for block in blocks(text) {
        let mut lines = block.as_slice();
        // Optional numeric counter.
        if let Some((_, first)) = lines.first() {
            if !first.contains("-->") {
                if first.trim().bytes().all(|b| b.is_ascii_digit()) {
                    lines = &lines[1..];
                } else {
                    return Err(parse_error(
                        block[0].0,
                        format!("unexpected line '{first}'"),
                    ));
                }
            }
        }
        let Some(&(timing_no, timing)) = lines.first() else {
            return Err(parse_error(block[0].0, "cue number without timing line"));
        };
        let (start, end) = parse_timing(timing, timing_no)?;
        cues.push(finish_cue(start, end, &lines[1..], timing_no, false)?);
    }
    Ok(cues)
}

fn parse_vtt(text: &str) -> Result<Vec<SubtitleCue>, IngestError> {
    let all = blocks(text);
    let Some(header) = all.first() else {
        return Ok(Vec::new());
    };
    let (header_no, header_line) = header[0];
    if !(header_line == "WEBVTT"
        || header_line.starts_with("WEBVTT ")
        || header_line.starts_with("WEBVTT\t"))
    {
        return Err(parse_error(header_no, "missing WEBVTT header"));
    }
    let mut cues = Vec::new();
    for block in &all[1..] {
        let first = block[0].1;
        if first.starts_with("NOTE") || first == "STYLE" || first == "REGION" {
            continue;
        }
        // Optional cue identifier line.
        let lines = if first.contains("-->") {
            block.as_slice()
        } else {
            &block[1..]
        };
        let Some(&(timing_no, timing)) = lines.first() else {
            return Err(parse_error(
                block[0].0,
                "cue identifier without timing line",
            ));
        };
        let (start, end) = parse_timing(timing, timing_no)?;
        cues.push(finish_cue(start, end, &lines[1..], timing_no, true)?);
    }
    Ok(cues)
}

/// Drops `<...>` tags (voice spans, styling) and decodes the basic entities.
fn strip_markup(line: &str) -> String {
    let mut out = String::with_capacity(line.len());
    let mut in_tag = false;
    for c in line.chars() {
        match c {
            '<' => in_tag = true,
            '>' if in_tag => in_tag = false,
            _ if !in_tag => out.push(c),
            _ => {}
        }
    }
    out.replace("&lt;", "<")
        .replace("&gt;", ">")
        .replace("&nbsp;", " ")
        .replace("&amp;", "&")
        .trim()
        .to_string()
}
