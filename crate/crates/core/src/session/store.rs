use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, MutexGuard, RwLock};

use serde_json::Value;

use super::{Session, SessionError, SessionEvent};

fn storage(e: impl std::fmt::Display) -> SessionError {
    SessionError::Storage(e.to_string())
}

/// Writes a complete event log, one JSON event per line.
pub fn write_event_log(path: &Path, events: &[SessionEvent]) -> Result<(), SessionError> {
    let mut out = String::new();
    for event in events {
        out.push_str(&serde_json::to_string(event).map_err(storage)?);
        out.push('\n');
    }
    fs::write(path, out).map_err(storage)
}

/// Reads an event log. A line that does not parse is reported with the seq it
/// should have carried.
pub fn read_event_log(path: &Path) -> Result<Vec<SessionEvent>, SessionError> {
    let file = File::open(path).map_err(storage)?;
    let mut events = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(storage)?;
        if line.trim().is_empty() {
            continue;
        }
        let event: SessionEvent =
            serde_json::from_str(&line).map_err(|e| SessionError::CorruptLog {
                seq: events.len() as u64,
                reason: e.to_string(),
            })?;
        events.push(event);
    }
    Ok(events)
}

/// A session plus the replies already sent for client request ids, so a
/// retried request gets the original answer instead of running twice.
#[derive(Debug)]
pub struct SessionSlot {
    pub session: Session,
    pub replies: HashMap<String, (u16, Value)>,
    persisted: usize,
}

impl SessionSlot {
    fn new(session: Session, persisted: usize) -> Self {
        Self {
            session,
            replies: HashMap::new(),
            persisted,
        }
    }
}

/// One live session. Writers serialize on the slot mutex; readers take the
/// published snapshot, so a slow agent call never blocks a read.
#[derive(Debug)]
pub struct SessionHandle {
    slot: Mutex<SessionSlot>,
    snapshot: RwLock<Session>,
}

impl SessionHandle {
    fn new(slot: SessionSlot) -> Self {
        Self {
            snapshot: RwLock::new(slot.session.clone()),
            slot: Mutex::new(slot),
        }
    }

    pub fn lock(&self) -> MutexGuard<'_, SessionSlot> {
        self.slot.lock().unwrap_or_else(|p| p.into_inner())
    }

    /// The state as of the last commit.
    pub fn snapshot(&self) -> Session {
        self.snapshot.read().unwrap_or_else(|p| p.into_inner()).clone()
    }
}

/// Holds live sessions. Distinct sessions are independent and proceed in
/// parallel.
#[derive(Debug, Default)]
pub struct SessionRepository {
    dir: Option<PathBuf>,
    slots: Mutex<HashMap<String, Arc<SessionHandle>>>,
}

impl SessionRepository {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Opens a directory of `<session_id>.jsonl` logs, replaying each one.
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self, SessionError> {
        let dir = dir.into();
        fs::create_dir_all(&dir).map_err(storage)?;
        let mut slots = HashMap::new();
        for entry in fs::read_dir(&dir).map_err(storage)? {
            let path = entry.map_err(storage)?.path();
            if path.extension().and_then(|e| e.to_str()) != Some("jsonl") {
                continue;
            }
            let events = read_event_log(&path)?;
            let session = Session::replay(&events)?;
            let n = session.events.len();
            slots.insert(
                session.session_id.clone(),
                Arc::new(SessionHandle::new(SessionSlot::new(session, n))),
            );
        }
        Ok(Self {
            dir: Some(dir),
            slots: Mutex::new(slots),
        })
    }

    pub fn log_path(&self, session_id: &str) -> Option<PathBuf> {
        self.dir.as_ref().map(|d| d.join(format!("{session_id}.jsonl")))
    }

    pub fn insert(&self, session: Session) -> Result<Arc<SessionHandle>, SessionError> {
        let id = session.session_id.clone();
        let mut slot = SessionSlot::new(session, 0);
        self.persist(&mut slot)?;
        let slot = Arc::new(SessionHandle::new(slot));
        self.slots
            .lock()
            .expect("session map poisoned")
            .insert(id, slot.clone());
        Ok(slot)
    }

    pub fn get(&self, session_id: &str) -> Result<Arc<SessionHandle>, SessionError> {
        self.slots
            .lock()
            .expect("session map poisoned")
            .get(session_id)
            .cloned()
            .ok_or_else(|| SessionError::UnknownSession(session_id.to_string()))
    }

    pub fn ids(&self) -> Vec<String> {
        let mut ids: Vec<String> = self
            .slots
            .lock()
            .expect("session map poisoned")
            .keys()
            .cloned()
            .collect();
        ids.sort();
        ids
    }

    /// Persists new events and publishes the slot's session as the snapshot.
    /// The snapshot is published even when the disk write fails, since the
    /// in-memory state has already moved on.
    pub fn commit(&self, handle: &SessionHandle, slot: &mut SessionSlot) -> Result<(), SessionError> {
        let persisted = self.persist(slot);
        *handle.snapshot.write().unwrap_or_else(|p| p.into_inner()) = slot.session.clone();
        persisted
    }

    /// Appends events not yet on disk. In-memory repositories only advance
    /// the counter.
    pub fn persist(&self, slot: &mut SessionSlot) -> Result<(), SessionError> {
        let events = &slot.session.events;
        if slot.persisted >= events.len() {
            return Ok(());
        }
        if let Some(path) = self.log_path(&slot.session.session_id) {
            let mut file = OpenOptions::new()
                .create(true)
                .append(true)
                .open(&path)
                .map_err(storage)?;
            let mut buf = String::new();
            for event in &events[slot.persisted..] {
                buf.push_str(&serde_json::to_string(event).map_err(storage)?);
                buf.push('\n');
            }
            file.write_all(buf.as_bytes()).map_err(storage)?;
            file.sync_data().map_err(storage)?;
        }
        slot.persisted = events.len();
        Ok(())
    }
}
