//! Sessions in memory, each backed by an append-only JSON-lines log.

use std::collections::HashMap;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use missa_core::session::{Session, SessionEvent};
use tokio::fs;
use tokio::io::AsyncWriteExt;
use tokio::sync::{Mutex, RwLock};

pub type SessionHandle = Arc<Mutex<Session>>;

#[derive(Debug)]
pub struct SessionStore {
    dir: PathBuf,
    sessions: RwLock<HashMap<String, SessionHandle>>,
}

impl SessionStore {
    /// Opens `dir`, replaying every `*.jsonl` log found there.
    pub async fn open(dir: impl Into<PathBuf>) -> io::Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir).await?;
        let mut sessions = HashMap::new();
        let mut entries = fs::read_dir(&dir).await?;
        while let Some(entry) = entries.next_entry().await? {
            let path = entry.path();
            if path.extension().is_none_or(|e| e != "jsonl") {
                continue;
            }
            let session = load(&path).await?;
            sessions.insert(session.id.clone(), Arc::new(Mutex::new(session)));
        }
        tracing::info!(dir = %dir.display(), sessions = sessions.len(), "session store opened");
        Ok(Self {
            dir,
            sessions: RwLock::new(sessions),
        })
    }

    fn log_path(&self, id: &str) -> PathBuf {
        self.dir.join(format!("{id}.jsonl"))
    }

    pub async fn get(&self, id: &str) -> Option<SessionHandle> {
        self.sessions.read().await.get(id).cloned()
    }

    pub async fn all(&self) -> Vec<SessionHandle> {
        self.sessions.read().await.values().cloned().collect()
    }

    pub async fn insert(&self, session: Session, created: &SessionEvent) -> io::Result<SessionHandle> {
        let mut map = self.sessions.write().await;
        if map.contains_key(&session.id) {
            return Err(io::Error::new(io::ErrorKind::AlreadyExists, format!("session {} exists", session.id)));
        }
        append(&self.log_path(&session.id), created).await?;
        let id = session.id.clone();
        let handle = Arc::new(Mutex::new(session));
        map.insert(id, handle.clone());
        Ok(handle)
    }

    /// Persists `event`, then applies it. The caller holds the session lock.
    pub async fn record(&self, session: &mut Session, event: &SessionEvent) -> io::Result<()> {
        append(&self.log_path(&session.id), event).await?;
        session
            .apply(event)
            .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e.to_string()))
    }
}

async fn append(path: &Path, event: &SessionEvent) -> io::Result<()> {
    let mut line = serde_json::to_vec(event).map_err(io::Error::other)?;
    line.push(b'\n');
    let mut file = fs::OpenOptions::new().create(true).append(true).open(path).await?;
    file.write_all(&line).await?;
    file.sync_data().await
}

async fn load(path: &Path) -> io::Result<Session> {
    let raw = fs::read_to_string(path).await?;
    let events = raw
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(serde_json::from_str)
        .collect::<Result<Vec<SessionEvent>, _>>()
        .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, format!("{}: {e}", path.display())))?;
    Session::replay(&events).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, format!("{}: {e}", path.display())))
}
