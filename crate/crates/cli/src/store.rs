//! Append-only trial logs, one JSON line per event.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};
use std::time::{SystemTime, UNIX_EPOCH};

use dosebo::trial::{EventKind, Trial, TrialConfig};
use serde::{Deserialize, Serialize};

/// One line of a trial log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialEvent {
    pub trial_id: String,
    /// Gapless, starting at 1.
    pub sequence: u64,
    /// Unix milliseconds at write time.
    pub timestamp: u64,
    #[serde(flatten)]
    pub event: EventKind,
}

#[derive(Debug)]
pub enum StoreError {
    NotFound(String),
    ReadOnly(String),
    Engine(dosebo::Error),
    Io(String),
}

impl From<dosebo::Error> for StoreError {
    fn from(e: dosebo::Error) -> Self {
        StoreError::Engine(e)
    }
}

impl std::fmt::Display for StoreError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            StoreError::NotFound(id) => write!(f, "no trial {id}"),
            StoreError::ReadOnly(why) => write!(f, "trial is read-only: {why}"),
            StoreError::Engine(e) => write!(f, "{e}"),
            StoreError::Io(e) => write!(f, "storage: {e}"),
        }
    }
}

impl std::error::Error for StoreError {}

/// A hosted trial. `trial` is `None` only when the log could not be
/// replayed, in which case `read_only` says why.
#[derive(Debug)]
pub struct Entry {
    pub id: String,
    pub trial: Option<Trial>,
    pub log: Vec<TrialEvent>,
    pub read_only: Option<String>,
    path: PathBuf,
}

impl Entry {
    pub fn trial(&self) -> Result<&Trial, StoreError> {
        self.trial
            .as_ref()
            .ok_or_else(|| StoreError::ReadOnly(self.read_only.clone().unwrap_or_default()))
    }

    /// Runs `op` against the trial and persists whatever events it adds.
    /// The trial is unchanged when `op` fails.
    pub fn apply<T>(&mut self, op: impl FnOnce(&mut Trial) -> dosebo::Result<T>) -> Result<(T, Vec<TrialEvent>), StoreError> {
        if let Some(why) = &self.read_only {
            return Err(StoreError::ReadOnly(why.clone()));
        }
        let trial = self.trial.as_mut().expect("writable entries hold a trial");
        let mut staged = trial.clone();
        let out = op(&mut staged)?;
        let fresh = stamp(&self.id, self.log.len(), &staged.events()[self.log.len()..]);
        if let Err(e) = append(&self.path, &fresh) {
            // the file may now hold a partial write; stop accepting changes
            self.read_only = Some(format!("append failed: {e}"));
            return Err(StoreError::Io(e.to_string()));
        }
        *trial = staged;
        self.log.extend(fresh.iter().cloned());
        Ok((out, fresh))
    }

    pub fn events_since(&self, since: u64, limit: usize) -> &[TrialEvent] {
        let start = (since as usize).min(self.log.len());
        let end = start.saturating_add(limit).min(self.log.len());
        &self.log[start..end]
    }
}

fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

fn stamp(id: &str, offset: usize, events: &[EventKind]) -> Vec<TrialEvent> {
    let timestamp = now_ms();
    events
        .iter()
        .enumerate()
        .map(|(i, e)| TrialEvent {
            trial_id: id.to_string(),
            sequence: (offset + i + 1) as u64,
            timestamp,
            event: e.clone(),
        })
        .collect()
}

fn append(path: &Path, events: &[TrialEvent]) -> io::Result<()> {
    let mut buf = Vec::new();
    for e in events {
        serde_json::to_writer(&mut buf, e).map_err(io::Error::other)?;
        buf.push(b'\n');
    }
    let mut f = OpenOptions::new().create(true).append(true).open(path)?;
    f.write_all(&buf)?;
    f.sync_data()
}

/// Reads a log file and rebuilds its trial. Any defect marks the entry
/// read-only instead of failing.
fn load(id: &str, path: &Path) -> Entry {
    let mut entry = Entry {
        id: id.to_string(),
        trial: None,
        log: Vec::new(),
        read_only: None,
        path: path.to_path_buf(),
    };
    let lines = match File::open(path) {
        Ok(f) => BufReader::new(f).lines().collect::<io::Result<Vec<_>>>(),
        Err(e) => Err(e),
    };
    let lines = match lines {
        Ok(l) => l,
        Err(e) => {
            entry.read_only = Some(format!("cannot read log: {e}"));
            return entry;
        }
    };
    for (i, line) in lines.iter().enumerate() {
        let parsed: TrialEvent = match serde_json::from_str(line) {
            Ok(e) => e,
            Err(e) => {
                entry.read_only = Some(format!("line {}: {e}", i + 1));
                return entry;
            }
        };
        if parsed.trial_id != id || parsed.sequence != (i + 1) as u64 {
            entry.read_only = Some(format!(
                "line {}: expected sequence {} of trial {id}, found {} of {}",
                i + 1,
                i + 1,
                parsed.sequence,
                parsed.trial_id
            ));
            return entry;
        }
        entry.log.push(parsed);
    }
    let events: Vec<EventKind> = entry.log.iter().map(|e| e.event.clone()).collect();
    match Trial::replay(&events) {
        Ok(t) => entry.trial = Some(t),
        Err(e) => entry.read_only = Some(format!("replay failed: {e}")),
    }
    entry
}

/// All trials hosted from one state directory.
#[derive(Debug)]
pub struct Store {
    dir: PathBuf,
    trials: RwLock<BTreeMap<String, Arc<Mutex<Entry>>>>,
}

impl Store {
    /// Opens `dir`, creating it if needed, and replays every log in it.
    pub fn open(dir: impl Into<PathBuf>) -> io::Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        let mut trials = BTreeMap::new();
        for item in fs::read_dir(&dir)? {
            let path = item?.path();
            if path.extension().and_then(|e| e.to_str()) != Some("jsonl") {
                continue;
            }
            let Some(id) = path.file_stem().and_then(|s| s.to_str()).map(str::to_string) else {
                continue;
            };
            let entry = load(&id, &path);
            trials.insert(id, Arc::new(Mutex::new(entry)));
        }
        Ok(Store {
            dir,
            trials: RwLock::new(trials),
        })
    }

    pub fn ids(&self) -> Vec<String> {
        self.trials.read().expect("store lock").keys().cloned().collect()
    }

    pub fn get(&self, id: &str) -> Result<Arc<Mutex<Entry>>, StoreError> {
        self.trials
            .read()
            .expect("store lock")
            .get(id)
            .cloned()
            .ok_or_else(|| StoreError::NotFound(id.to_string()))
    }

    /// Starts a trial and writes its first events.
    pub fn create(&self, config: TrialConfig) -> Result<Arc<Mutex<Entry>>, StoreError> {
        let trial = Trial::start(config)?;
        let id = uuid::Uuid::new_v4().simple().to_string();
        let path = self.dir.join(format!("{id}.jsonl"));
        let log = stamp(&id, 0, trial.events());
        append(&path, &log).map_err(|e| StoreError::Io(e.to_string()))?;
        let entry = Arc::new(Mutex::new(Entry {
            id: id.clone(),
            trial: Some(trial),
            log,
            read_only: None,
            path,
        }));
        self.trials.write().expect("store lock").insert(id, entry.clone());
        Ok(entry)
    }
}
