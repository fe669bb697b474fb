//! On-disk layout of a data directory:
//!
//! * `trial.json`: the trial configuration the log was written under
//! * `events.jsonl`: the append-only event log
//! * `snapshot.json`: folded trial state, written on shutdown

use std::fs::{self, File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use thiserror::Error;

use shieldup_core::trial::{event_line, parse_jsonl, EventLog, Trial, TrialConfig, TrialError, TrialState};

pub const CONFIG_FILE: &str = "trial.json";
pub const EVENTS_FILE: &str = "events.jsonl";
pub const SNAPSHOT_FILE: &str = "snapshot.json";

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}: {message}")]
    Corrupt { path: PathBuf, message: String },
    #[error("{0}: trial configuration differs from the one the data directory was created with")]
    ConfigMismatch(PathBuf),
    #[error(transparent)]
    Trial(#[from] TrialError),
}

fn io_at(path: &Path) -> impl FnOnce(io::Error) -> StoreError + '_ {
    move |source| StoreError::Io { path: path.to_path_buf(), source }
}

/// Writer for a data directory. Lines are appended in event-group batches.
#[derive(Debug)]
pub struct Store {
    dir: PathBuf,
    events: File,
    written: usize,
}

/// What was recovered when a data directory was opened.
#[derive(Debug)]
pub struct Recovered {
    pub trial: Trial,
    /// A partially written last line was found and cut off.
    pub truncated_tail: bool,
    pub from_snapshot: bool,
}

impl Store {
    /// Opens (or initializes) `dir` and rebuilds the trial it holds.
    pub fn open(dir: &Path, config: &TrialConfig) -> Result<(Store, Recovered), StoreError> {
        fs::create_dir_all(dir).map_err(io_at(dir))?;

        let config_path = dir.join(CONFIG_FILE);
        if config_path.exists() {
            let text = fs::read_to_string(&config_path).map_err(io_at(&config_path))?;
            let stored: TrialConfig = serde_json::from_str(&text)
                .map_err(|e| StoreError::Corrupt { path: config_path.clone(), message: e.to_string() })?;
            if &stored != config {
                return Err(StoreError::ConfigMismatch(config_path));
            }
        } else {
            let text = serde_json::to_string_pretty(config).expect("config serializes") + "\n";
            write_atomic(&config_path, &text)?;
        }

        let events_path = dir.join(EVENTS_FILE);
        let text = match fs::read_to_string(&events_path) {
            Ok(t) => t,
            Err(e) if e.kind() == io::ErrorKind::NotFound => String::new(),
            Err(e) => return Err(StoreError::Io { path: events_path, source: e }),
        };
        let parsed = parse_jsonl(&text)
            .map_err(|e| StoreError::Corrupt { path: events_path.clone(), message: e.to_string() })?;
        if parsed.torn_tail {
            let keep = text.rfind('\n').map_or(0, |i| i + 1);
            let f = OpenOptions::new().write(true).open(&events_path).map_err(io_at(&events_path))?;
            f.set_len(keep as u64).map_err(io_at(&events_path))?;
            f.sync_all().map_err(io_at(&events_path))?;
        }

        let snapshot_path = dir.join(SNAPSHOT_FILE);
        let snapshot = read_snapshot(&snapshot_path, config, &parsed.log)?;
        let from_snapshot = snapshot.is_some();
        let trial = match snapshot {
            Some(s) => Trial::resume(s, parsed.log)?,
            None => Trial::replay(config.clone(), parsed.log)?,
        };

        let events = OpenOptions::new().create(true).append(true).open(&events_path).map_err(io_at(&events_path))?;
        let store = Store { dir: dir.to_path_buf(), events, written: trial.log().len() };
        Ok((store, Recovered { trial, truncated_tail: parsed.torn_tail, from_snapshot }))
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    /// Writes every event of `log` not yet on disk as one batch and syncs.
    pub fn sync_log(&mut self, log: &EventLog) -> io::Result<()> {
        let fresh = &log.events()[self.written..];
        if fresh.is_empty() {
            return Ok(());
        }
        let mut batch = String::new();
        for e in fresh {
            batch.push_str(&event_line(e));
            batch.push('\n');
        }
        self.events.write_all(batch.as_bytes())?;
        self.events.sync_data()?;
        self.written = log.len();
        Ok(())
    }

    pub fn write_snapshot(&self, state: &TrialState) -> Result<(), StoreError> {
        write_atomic(&self.dir.join(SNAPSHOT_FILE), &state.to_snapshot_json())
    }
}

/// A snapshot is used only when it was taken under the same configuration and
/// its last event is still in the log; otherwise the full log is replayed.
fn read_snapshot(path: &Path, config: &TrialConfig, log: &EventLog) -> Result<Option<TrialState>, StoreError> {
    let text = match fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(None),
        Err(e) => return Err(StoreError::Io { path: path.to_path_buf(), source: e }),
    };
    let Ok(state) = TrialState::from_snapshot_json(&text) else {
        tracing::warn!(path = %path.display(), "ignoring unreadable snapshot");
        return Ok(None);
    };
    let covered = state.last_seq == 0 || log.events().iter().any(|e| e.seq == state.last_seq);
    if &state.config != config || !covered {
        tracing::warn!(path = %path.display(), "ignoring stale snapshot");
        return Ok(None);
    }
    Ok(Some(state))
}

fn write_atomic(path: &Path, text: &str) -> Result<(), StoreError> {
    let tmp = path.with_extension("tmp");
    let write = || -> io::Result<()> {
        let mut f = File::create(&tmp)?;
        f.write_all(text.as_bytes())?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    };
    write().map_err(io_at(path))
}
