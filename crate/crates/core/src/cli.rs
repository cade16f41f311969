//! `coview` command line.
//!
//! Exit codes: 0 success, 1 invalid input or flags, 2 runtime failure
//! (provider unreachable, I/O while serving).

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::consensus::{simulate, AgentPolicy, ConsensusConfig, PanelGenerator};
use crate::feedback::{aggregate, InTimeFeedback, Period, DAY_MS};
use crate::guidelines::{load_common, CommonGuidelineSet};
use crate::ingest::{align, chunk, extract_keyframes, load_bundle, SubtitleFormat};
use crate::pipeline::{censor_bundle, BundleRef, PipelineError};
use crate::preference::{PreferencePanel, Role};
use crate::provider::{MockProvider, ProviderConfig, ProviderError, ProviderKind};
use crate::service::{self, provider_from_config, EventRecord, ServiceConfig};
use crate::time::Timestamp;

#[derive(Debug, Parser)]
#[command(
    name = "coview",
    version,
    about = "Collaborative parent/teen video screening"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Reduce a frame directory and subtitle file to keyframes, segments and chunks.
    Ingest(IngestArgs),
    /// Run the censorship pipeline on one bundle and write result + feedback JSON.
    Censor(CensorArgs),
    /// Simulate scripted consensus sessions and print summary statistics.
    ConsensusSim(SimArgs),
    /// Aggregate a feedback/event log into a summary report.
    Report(ReportArgs),
    /// Run the HTTP API.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    /// Directory containing manifest.json and the frame images.
    #[arg(long)]
    pub frames: PathBuf,
    /// Subtitle file (.srt or .vtt).
    #[arg(long)]
    pub subs: PathBuf,
    /// Subtitle format; guessed from the extension when omitted.
    #[arg(long, value_enum)]
    pub format: Option<FormatArg>,
    /// Service config file supplying ingest settings.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output file; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum FormatArg {
    Srt,
    Vtt,
}

impl From<FormatArg> for SubtitleFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Srt => SubtitleFormat::Srt,
            FormatArg::Vtt => SubtitleFormat::WebVtt,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ProviderArg {
    Mock,
    Live,
}

#[derive(Debug, Args)]
pub struct CensorArgs {
    /// Directory containing manifest.json and the frame images.
    #[arg(long)]
    pub frames: PathBuf,
    /// Subtitle file (.srt or .vtt).
    #[arg(long)]
    pub subs: PathBuf,
    /// Co-preference panel JSON (role "co").
    #[arg(long)]
    pub panel: PathBuf,
    /// Common guideline document; the built-in set when omitted.
    #[arg(long)]
    pub guidelines: Option<PathBuf>,
    /// Analysis provider.
    #[arg(long, value_enum, default_value = "mock")]
    pub provider: ProviderArg,
    /// Lexicon file for the mock provider; the built-in lexicon when omitted.
    #[arg(long)]
    pub lexicon: Option<PathBuf>,
    /// Chat-completion endpoint URL for the live provider.
    #[arg(long)]
    pub endpoint: Option<String>,
    /// Model name sent to the live provider.
    #[arg(long)]
    pub model: Option<String>,
    /// Identifier recorded in the result; the frame directory name when omitted.
    #[arg(long)]
    pub video_id: Option<String>,
    /// Timestamp recorded as produced_at (ms or RFC 3339). Fixed so output is reproducible.
    #[arg(long, default_value = "0")]
    pub at: String,
    /// Service config file supplying provider and ingest settings.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output file; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SimArgs {
    /// Number of sessions.
    #[arg(long, default_value_t = 200)]
    pub sessions: usize,
    /// RNG seed.
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    /// Probability that the reviewer accepts the initial panel.
    #[arg(long, default_value_t = 0.5)]
    pub accept_prob: f64,
    /// Probability, per open conflict and round, that an agent adopts the other's position.
    #[arg(long, default_value_t = 0.5)]
    pub compromise_prob: f64,
    /// Iteration cap per session.
    #[arg(long, default_value_t = 3)]
    pub max_iter: u32,
    /// Smallest generated panel.
    #[arg(long, default_value_t = 1)]
    pub min_keywords: usize,
    /// Largest generated panel.
    #[arg(long, default_value_t = 6)]
    pub max_keywords: usize,
    /// Print JSON instead of text.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// JSON-lines file of service event records or bare feedback documents.
    #[arg(long)]
    pub events: PathBuf,
    /// Period start (ms or RFC 3339); defaults to 0.
    #[arg(long)]
    pub from: Option<String>,
    /// Period end, exclusive; defaults to just after the latest record.
    #[arg(long)]
    pub to: Option<String>,
    /// Trend bucket width in milliseconds.
    #[arg(long, default_value_t = DAY_MS)]
    pub bucket_ms: i64,
    /// Write the per-category trend series as CSV here.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// Service config file (TOML).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Listen address, overriding the config.
    #[arg(long)]
    pub listen: Option<String>,
    /// Data directory for the event log, overriding the config.
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
}

#[derive(Debug)]
pub enum CliError {
    /// Bad input: exit code 1.
    Invalid(String),
    /// Failure while doing the work: exit code 2.
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Invalid(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Invalid(m) | CliError::Runtime(m) => m,
        }
    }
}

fn invalid(m: impl Into<String>) -> CliError {
    CliError::Invalid(m.into())
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Provider(
                p @ (ProviderError::ProviderUnavailable(_)
                | ProviderError::MalformedProviderOutput { .. }
                | ProviderError::GuidelineViolation(_)),
            ) => CliError::Runtime(format!("provider: {p}")),
            PipelineError::Ingest(i) => invalid(format!("ingest: {i}")),
            other => invalid(other.to_string()),
        }
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let text = e.render().to_string();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(out, "{text}");
                    0
                }
                _ => {
                    let _ = write!(err, "{text}");
                    1
                }
            };
        }
    };
    match execute(cli.command, out) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {}", e.message());
            e.exit_code()
        }
    }
}

pub fn execute(command: Command, out: &mut dyn Write) -> Result<(), CliError> {
    match command {
        Command::Ingest(a) => ingest_cmd(&a, out),
        Command::Censor(a) => censor_cmd(&a, out),
        Command::ConsensusSim(a) => sim_cmd(&a, out),
        Command::Report(a) => report_cmd(&a, out),
        Command::Serve(a) => serve_cmd(a),
    }
}

fn read_file(path: &Path, what: &str) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => invalid(format!("{what}: not found ({})", path.display())),
        _ => invalid(format!("{what}: {} ({})", e, path.display())),
    })
}

fn require_exists(path: &Path, what: &str) -> Result<(), CliError> {
    if path.exists() {
        Ok(())
    } else {
        Err(invalid(format!("{what}: not found ({})", path.display())))
    }
}

fn load_config(path: Option<&Path>) -> Result<ServiceConfig, CliError> {
    let cfg = match path {
        Some(p) => ServiceConfig::load(p).map_err(|e| invalid(format!("config: {e}")))?,
        None => ServiceConfig::default(),
    };
    cfg.validate()
        .map_err(|e| invalid(format!("config: {e}")))?;
    Ok(cfg)
}

fn emit(out: &mut dyn Write, target: Option<&Path>, text: &str) -> Result<(), CliError> {
    match target {
        Some(path) => std::fs::write(path, text)
            .map_err(|e| CliError::Runtime(format!("{}: {e}", path.display()))),
        None => out
            .write_all(text.as_bytes())
            .map_err(|e| CliError::Runtime(format!("stdout: {e}"))),
    }
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut text = serde_json::to_string_pretty(value).expect("output types serialize");
    text.push('\n');
    text
}

fn ingest_cmd(a: &IngestArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let cfg = load_config(a.config.as_deref())?;
    require_exists(&a.frames, "frames")?;
    require_exists(&a.subs, "subtitles")?;
    let (frames, cues) = load_bundle(&a.frames, &a.subs, a.format.map(Into::into))
        .map_err(|e| invalid(format!("ingest: {e}")))?;
    let budget = cfg.ingest.chunk_budget.min(cfg.provider.context_budget);
    let keyframes =
        extract_keyframes(&frames, &cfg.ingest).map_err(|e| invalid(format!("ingest: {e}")))?;
    let segments = align(&keyframes, &cues).map_err(|e| invalid(format!("ingest: {e}")))?;
    let chunks = chunk(&segments, budget).map_err(|e| invalid(format!("ingest: {e}")))?;
    let doc = serde_json::json!({
        "frames": frames.len(),
        "cues": cues.len(),
        "keyframes": keyframes,
        "chunks": chunks,
    });
    emit(out, a.out.as_deref(), &to_json(&doc))
}

fn censor_cmd(a: &CensorArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let cfg = load_config(a.config.as_deref())?;
    require_exists(&a.frames, "frames")?;
    require_exists(&a.subs, "subtitles")?;

    let panel_text = read_file(&a.panel, "panel")?;
    let panel: PreferencePanel =
        serde_json::from_str(&panel_text).map_err(|e| invalid(format!("panel: {e}")))?;
    if panel.role != Role::Co {
        return Err(invalid(format!(
            "panel: expected role \"co\", found \"{}\"",
            panel.role
        )));
    }
    let guidelines: CommonGuidelineSet =
        match a.guidelines.as_deref().or(cfg.guidelines_path.as_deref()) {
            Some(p) => load_common(&read_file(p, "guidelines")?)
                .map_err(|e| invalid(format!("guidelines: {e}")))?,
            None => CommonGuidelineSet::default_set(),
        };
    let at = Timestamp::parse(&a.at)
        .ok_or_else(|| invalid("--at: expected milliseconds or RFC 3339"))?;

    let mut provider_cfg: ProviderConfig = cfg.provider.clone();
    provider_cfg.kind = match a.provider {
        ProviderArg::Mock => ProviderKind::Mock,
        ProviderArg::Live => ProviderKind::Live,
    };
    if let Some(l) = &a.lexicon {
        provider_cfg.lexicon_path = Some(l.clone());
    }
    if let Some(e) = &a.endpoint {
        provider_cfg.endpoint = Some(e.clone());
    }
    if let Some(m) = &a.model {
        provider_cfg.model_name = Some(m.clone());
    }
    let provider = match (provider_cfg.kind, &provider_cfg.lexicon_path) {
        (ProviderKind::Mock, Some(path)) => {
            let p = MockProvider::from_path(path).map_err(|e| invalid(format!("lexicon: {e}")))?;
            std::sync::Arc::new(p) as std::sync::Arc<dyn crate::provider::AnalysisProvider>
        }
        _ => provider_from_config(&provider_cfg).map_err(|e| invalid(format!("provider: {e}")))?,
    };

    let video_id = a.video_id.clone().unwrap_or_else(|| {
        a.frames
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| "video".into())
    });
    let bundle = BundleRef {
        frames_dir: a.frames.clone(),
        subtitles: a.subs.clone(),
        subtitle_format: None,
    };
    let (result, feedback) = censor_bundle(
        &video_id,
        &bundle,
        &panel,
        &guidelines,
        &cfg.ingest,
        provider_cfg.context_budget,
        provider.as_ref(),
        at,
    )?;
    let doc = serde_json::json!({ "result": result, "feedback": feedback });
    emit(out, a.out.as_deref(), &to_json(&doc))
}

fn sim_cmd(a: &SimArgs, out: &mut dyn Write) -> Result<(), CliError> {
    for (name, p) in [
        ("--accept-prob", a.accept_prob),
        ("--compromise-prob", a.compromise_prob),
    ] {
        if !(0.0..=1.0).contains(&p) {
            return Err(invalid(format!("{name} must be within [0, 1], got {p}")));
        }
    }
    if a.sessions == 0 {
        return Err(invalid("--sessions must be at least 1"));
    }
    if a.max_iter == 0 {
        return Err(invalid("--max-iter must be at least 1"));
    }
    if a.min_keywords > a.max_keywords {
        return Err(invalid("--min-keywords exceeds --max-keywords"));
    }
    let policy = AgentPolicy {
        accept_probability: a.accept_prob,
        compromise_probability: a.compromise_prob,
        panel: PanelGenerator {
            min_keywords: a.min_keywords,
            max_keywords: a.max_keywords,
        },
    };
    let cfg = ConsensusConfig {
        max_iterations: a.max_iter,
        ..ConsensusConfig::default()
    };
    let stats = simulate(&policy, &policy, a.sessions, a.seed, &cfg);
    let text = if a.json {
        to_json(&stats)
    } else {
        format!(
            "sessions: {}\nconsensus_reached: {}\nconsensus_rate: {:.3}\nmean_one_party_turns: {:.3}\nmean_cross_party_exchanges: {:.3}\nmean_iterations: {:.3}\n",
            stats.sessions,
            stats.consensus_reached,
            stats.consensus_rate,
            stats.mean_one_party_turns,
            stats.mean_cross_party_exchanges,
            stats.mean_iterations,
        )
    };
    emit(out, None, &text)
}

/// Reads feedback documents from a JSON-lines log. Lines holding service
/// event records contribute their `video.censored` feedback; other event
/// kinds are skipped.
pub fn read_feedback_log(text: &str) -> Result<Vec<InTimeFeedback>, CliError> {
    let mut records = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let bad = |e: &dyn std::fmt::Display| invalid(format!("events: line {}: {e}", i + 1));
        let value: serde_json::Value = serde_json::from_str(line).map_err(|e| bad(&e))?;
        if value.get("kind").is_some() {
            let rec: EventRecord = serde_json::from_value(value).map_err(|e| bad(&e))?;
            if rec.kind == "video.censored" {
                let fb = rec
                    .payload
                    .get("feedback")
                    .cloned()
                    .ok_or_else(|| bad(&"video.censored event without feedback"))?;
                records.push(serde_json::from_value(fb).map_err(|e| bad(&e))?);
            }
        } else {
            records.push(serde_json::from_value(value).map_err(|e| bad(&e))?);
        }
    }
    Ok(records)
}

fn report_cmd(a: &ReportArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let text = read_file(&a.events, "events")?;
    let records = read_feedback_log(&text)?;
    let parse = |v: &str, name: &str| {
        Timestamp::parse(v)
            .ok_or_else(|| invalid(format!("{name}: expected milliseconds or RFC 3339")))
    };
    let from = a
        .from
        .as_deref()
        .map(|v| parse(v, "--from"))
        .transpose()?
        .unwrap_or(Timestamp::EPOCH);
    let to = match a.to.as_deref() {
        Some(v) => parse(v, "--to")?,
        None => records
            .iter()
            .map(|r| r.produced_at)
            .max()
            .unwrap_or(from)
            .max(from)
            .plus_millis(1),
    };
    let period = Period {
        from,
        to,
        bucket_ms: a.bucket_ms,
    };
    let report = aggregate(&records, &period).map_err(|e| invalid(e.to_string()))?;
    if let Some(path) = &a.csv {
        let csv = report
            .trend_csv()
            .map_err(|e| CliError::Runtime(e.to_string()))?;
        std::fs::write(path, csv)
            .map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
    }
    emit(out, None, &to_json(&report))
}

fn serve_cmd(a: ServeArgs) -> Result<(), CliError> {
    let mut cfg = load_config(a.config.as_deref())?;
    if let Some(l) = a.listen {
        cfg.listen = l;
    }
    if let Some(d) = a.data_dir {
        cfg.data_dir = Some(d);
    }
    let _ = tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .try_init();
    let rt = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    rt.block_on(service::serve(cfg)).map_err(|e| match e {
        service::ServeError::Config(c) => invalid(format!("config: {c}")),
        service::ServeError::Provider(p) => invalid(format!("provider: {p}")),
        other => CliError::Runtime(other.to_string()),
    })
}
