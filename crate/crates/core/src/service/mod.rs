//! HTTP API over pairing, panels, consensus sessions, videos and reports.
//!
//! All state lives in an append-only event log (`events.jsonl` under the
//! configured data directory, or memory). The in-memory view is a fold over
//! that log, so restarting the service rebuilds identical state.
//!
//! Callers authenticate with the bearer token returned when they join a pair;
//! the token fixes both the pair and the role.

pub mod config;
mod engine;
mod http;
pub mod store;

use std::sync::{Arc, Mutex};

pub use config::{ConfigError, ServiceConfig};
pub use engine::{
    parse_role, Caller, CensorJob, ConflictView, Engine, InferJob, JoinResponse, Pair, PairView,
    PairingCode, PanelUpdate, PublicEvent, ServiceError, SessionSnapshot, State, VideoRecord,
    CODE_LEN,
};
pub use http::{router, SharedEngine};
pub use store::{Actor, EventRecord, EventStore, FileStore, MemoryStore};

use crate::provider::{
    build_provider, AnalysisProvider, MockProvider, ProviderConfig, ProviderError, ProviderKind,
};
use crate::time::SystemClock;

/// Mock configs without a lexicon file use the built-in lexicon.
pub fn provider_from_config(
    cfg: &ProviderConfig,
) -> Result<Arc<dyn AnalysisProvider>, ProviderError> {
    if cfg.kind == ProviderKind::Mock && cfg.lexicon_path.is_none() {
        return Ok(Arc::new(MockProvider::with_default_lexicon()));
    }
    Ok(Arc::from(build_provider(cfg)?))
}

#[derive(Debug, thiserror::Error)]
pub enum ServeError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error(transparent)]
    Service(#[from] ServiceError),
    #[error("{0}")]
    Io(#[from] std::io::Error),
}

/// Opens the engine described by `cfg` with the system clock.
pub fn open_engine(cfg: &ServiceConfig) -> Result<Engine, ServeError> {
    cfg.validate()?;
    let guidelines = cfg.guidelines()?;
    let provider = provider_from_config(&cfg.provider)?;
    let store: Box<dyn EventStore> = match &cfg.data_dir {
        Some(dir) => Box::new(FileStore::open(dir)?),
        None => Box::new(MemoryStore::default()),
    };
    Ok(Engine::open(
        cfg.clone(),
        guidelines,
        provider,
        Arc::new(SystemClock),
        store,
    )?)
}

/// Binds `cfg.listen` and serves until ctrl-c.
pub async fn serve(cfg: ServiceConfig) -> Result<(), ServeError> {
    let engine = open_engine(&cfg)?;
    let app = router(Arc::new(Mutex::new(engine)));
    let listener = tokio::net::TcpListener::bind(&cfg.listen).await?;
    tracing::info!(addr = %listener.local_addr()?, "listening");
    axum::serve(listener, app)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
