//! HTTP service for running a ShieldUp trial: enrollment, gameplay for the
//! game arm, placeholder activities for the comparison arms, discernment
//! tests, and researcher exports.
//!
//! All mutations go through one mutex-guarded [`Trial`], whose event log is
//! the only source of truth. The gameplay fold and the on-disk log are both
//! derived from it.

pub mod api;
pub mod config;
pub mod error;
pub mod gameplay;
pub mod store;

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::Path;
use std::sync::{Arc, Mutex, MutexGuard};

use anyhow::{bail, Context};
use chrono::{DateTime, Utc};
use rand::RngCore;
use sha2::{Digest, Sha256};

use shieldup_core::content::Corpus;
use shieldup_core::sdat::{assemble_form, parse_item_bank, Form, SdatForm};
use shieldup_core::trial::{Trial, TrialConfig};

pub use config::{ServeOptions, ServiceConfig};
pub use error::ApiError;
use gameplay::Gameplay;
use store::Store;

pub type Clock = Arc<dyn Fn() -> DateTime<Utc> + Send + Sync>;

pub fn system_clock() -> Clock {
    Arc::new(Utc::now)
}

/// Hex SHA-256 of a bearer token; only hashes are stored or logged.
pub fn token_sha256(token: &str) -> String {
    hex::encode(Sha256::digest(token.as_bytes()))
}

pub fn new_token() -> String {
    let mut bytes = [0u8; 32];
    rand::rng().fill_bytes(&mut bytes);
    hex::encode(bytes)
}

pub(crate) struct Inner {
    pub trial: Trial,
    pub game: Gameplay,
    pub store: Option<Store>,
}

pub(crate) struct Shared {
    pub corpus: Corpus,
    pub forms: BTreeMap<Form, SdatForm>,
    pub researcher_sha256: String,
    pub allowed_origins: Vec<String>,
    pub clock: Clock,
    pub inner: Mutex<Inner>,
}

impl Shared {
    pub fn lock(&self) -> MutexGuard<'_, Inner> {
        self.inner.lock().unwrap_or_else(|e| e.into_inner())
    }

    /// Runs a mutation under the lock and then writes whatever it appended
    /// to the log as one batch.
    pub fn mutate<T>(&self, f: impl FnOnce(&mut Inner, DateTime<Utc>) -> Result<T, ApiError>) -> Result<T, ApiError> {
        let mut inner = self.lock();
        let now = (self.clock)();
        let out = f(&mut inner, now);
        let Inner { trial, store, .. } = &mut *inner;
        if let Some(s) = store {
            s.sync_log(trial.log())?;
        }
        out
    }
}

/// Everything needed to build a service.
pub struct ServiceParts {
    pub corpus: Corpus,
    pub forms: (SdatForm, SdatForm),
    pub trial: TrialConfig,
    pub researcher_token: String,
    pub allowed_origins: Vec<String>,
    pub data_dir: Option<std::path::PathBuf>,
    pub clock: Clock,
}

#[derive(Clone)]
pub struct Service {
    shared: Arc<Shared>,
}

impl Service {
    pub fn new(parts: ServiceParts) -> anyhow::Result<Self> {
        parts.trial.validate()?;
        let (trial, store) = match &parts.data_dir {
            Some(dir) => {
                let (store, rec) = Store::open(dir, &parts.trial)?;
                if rec.truncated_tail {
                    tracing::warn!(dir = %dir.display(), "dropped a partially written event");
                }
                (rec.trial, Some(store))
            }
            None => (Trial::new(parts.trial.clone())?, None),
        };
        let game = Gameplay::fold(trial.log().events(), &parts.corpus)
            .map_err(|(seq, e)| anyhow::anyhow!("replaying event {seq}: {e}"))?;
        let (a, b) = parts.forms;
        let shared = Shared {
            corpus: parts.corpus,
            forms: [(a.form, a), (b.form, b)].into_iter().collect(),
            researcher_sha256: token_sha256(&parts.researcher_token),
            allowed_origins: parts.allowed_origins,
            clock: parts.clock,
            inner: Mutex::new(Inner { trial, game, store }),
        };
        Ok(Self { shared: Arc::new(shared) })
    }

    /// Loads the corpus and item bank named by `opts`. Returns the service and
    /// the researcher token when one had to be generated.
    pub fn from_options(opts: &ServeOptions, clock: Clock) -> anyhow::Result<(Self, Option<String>)> {
        let corpus = load_corpus(&opts.corpus_dir)?;
        let forms = load_forms(&opts.corpus_dir)?;
        let configured = opts
            .config
            .researcher_token
            .clone()
            .or_else(|| std::env::var(config::RESEARCHER_TOKEN_ENV).ok())
            .filter(|t| !t.trim().is_empty());
        let generated = configured.is_none().then(new_token);
        let researcher_token = configured.or_else(|| generated.clone()).expect("one of the two is set");
        let service = Self::new(ServiceParts {
            corpus,
            forms,
            trial: opts.config.trial.clone(),
            researcher_token,
            allowed_origins: opts.config.allowed_origins.clone(),
            data_dir: opts.data_dir.clone(),
            clock,
        })?;
        Ok((service, generated))
    }

    pub fn router(&self) -> axum::Router {
        api::router(self.shared.clone())
    }

    /// Writes the folded trial state next to the log.
    pub fn flush_snapshot(&self) -> anyhow::Result<()> {
        let inner = self.shared.lock();
        if let Some(store) = &inner.store {
            store.write_snapshot(inner.trial.state())?;
        }
        Ok(())
    }

    pub fn trial_state(&self) -> shieldup_core::trial::TrialState {
        self.shared.lock().trial.state().clone()
    }
}

pub fn load_corpus(dir: &Path) -> anyhow::Result<Corpus> {
    if !dir.is_dir() {
        bail!("corpus directory {} not found", dir.display());
    }
    let load = Corpus::load_dir(dir).with_context(|| format!("reading {}", dir.display()))?;
    if let Some(f) = load.failures.first() {
        bail!("{} invalid corpus file(s); first: {}: {}", load.failures.len(), f.path.display(), f.message);
    }
    if load.corpus.is_empty() {
        bail!("corpus directory {} has no scenarios", dir.display());
    }
    Ok(load.corpus)
}

/// Forms A and B from `sdat/items.json` under the corpus directory, or the
/// bundled bank when the corpus has none.
pub fn load_forms(dir: &Path) -> anyhow::Result<(SdatForm, SdatForm)> {
    let path = dir.join("sdat").join("items.json");
    if !path.exists() {
        tracing::info!("no {} found, using the bundled item bank", path.display());
        return Ok(shieldup_core::demo::sdat_forms());
    }
    let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    let items = parse_item_bank(&text).with_context(|| path.display().to_string())?;
    Ok((assemble_form(&items, Form::A)?, assemble_form(&items, Form::B)?))
}

/// Serves until ctrl-c or SIGTERM, then writes a snapshot.
pub async fn run(service: Service, port: u16) -> anyhow::Result<()> {
    let listener = tokio::net::TcpListener::bind(SocketAddr::from(([0, 0, 0, 0], port)))
        .await
        .with_context(|| format!("binding port {port}"))?;
    let addr = listener.local_addr()?;
    println!("listening on {addr}");
    tracing::info!(%addr, "serving");
    axum::serve(listener, service.router()).with_graceful_shutdown(shutdown_signal()).await?;
    service.flush_snapshot()?;
    tracing::info!("snapshot written, exiting");
    Ok(())
}

async fn shutdown_signal() {
    let ctrl_c = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    let term = async {
        match tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            Ok(mut s) => {
                s.recv().await;
            }
            Err(_) => std::future::pending::<()>().await,
        }
    };
    #[cfg(not(unix))]
    let term = std::future::pending::<()>();
    tokio::select! {
        _ = ctrl_c => {},
        _ = term => {},
    }
}
