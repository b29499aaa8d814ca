use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock};

use tokio::sync::{Mutex, MutexGuard};
use vinnpruner_core::persistence::{load_session, save_session};
use vinnpruner_core::Session;

use crate::error::{ApiError, ApiResult};

#[derive(Debug, Clone)]
pub struct ServerConfig {
    pub models_dir: PathBuf,
    pub datasets_dir: PathBuf,
    /// Where sessions are written through on every mutation; `None` keeps them in memory.
    pub sessions_dir: Option<PathBuf>,
    /// Built UI to serve under `/`.
    pub static_dir: Option<PathBuf>,
}

impl ServerConfig {
    pub fn new(models_dir: impl Into<PathBuf>, datasets_dir: impl Into<PathBuf>) -> Self {
        Self {
            models_dir: models_dir.into(),
            datasets_dir: datasets_dir.into(),
            sessions_dir: None,
            static_dir: None,
        }
    }
}

/// One live session. Readers take the `RwLock` briefly; a mutation holds
/// `writer` for its whole duration, works on a copy and swaps it in at the end.
pub struct SessionEntry {
    pub id: String,
    pub model: String,
    pub dataset: String,
    state: RwLock<Session>,
    writer: Mutex<()>,
}

impl SessionEntry {
    pub fn new(id: String, model: String, dataset: String, session: Session) -> Self {
        Self {
            id,
            model,
            dataset,
            state: RwLock::new(session),
            writer: Mutex::new(()),
        }
    }

    pub fn read<R>(&self, f: impl FnOnce(&Session) -> R) -> R {
        let guard = self.state.read().unwrap_or_else(|e| e.into_inner());
        f(&guard)
    }

    /// Claims the single writer slot, or `None` while another mutation runs.
    pub fn try_lock_writer(&self) -> Option<MutexGuard<'_, ()>> {
        self.writer.try_lock().ok()
    }

    pub fn persist(&self, session: &Session, dir: Option<&Path>) -> ApiResult<()> {
        if let Some(root) = dir {
            save_session(session, &self.id, &self.model, &self.dataset, &root.join(&self.id))?;
        }
        Ok(())
    }

    /// Runs `f` on a copy of the session off the async runtime, writes the copy
    /// through to disk, then publishes it. Any failure leaves the session as it was.
    pub async fn mutate<R, F>(self: &Arc<Self>, sessions_dir: Option<PathBuf>, f: F) -> ApiResult<R>
    where
        R: Send + 'static,
        F: FnOnce(&mut Session) -> ApiResult<R> + Send + 'static,
    {
        let _writer = self
            .try_lock_writer()
            .ok_or_else(|| ApiError::Conflict(self.id.clone()))?;
        let mut draft = self.read(Session::clone);
        let entry = Arc::clone(self);
        let (draft, out) = tokio::task::spawn_blocking(move || -> ApiResult<(Session, R)> {
            let out = f(&mut draft)?;
            entry.persist(&draft, sessions_dir.as_deref())?;
            Ok((draft, out))
        })
        .await
        .map_err(|e| ApiError::Internal(format!("mutation task failed: {e}")))??;
        *self.state.write().unwrap_or_else(|e| e.into_inner()) = draft;
        Ok(out)
    }
}

pub struct AppState {
    pub config: ServerConfig,
    sessions: RwLock<BTreeMap<String, Arc<SessionEntry>>>,
}

impl AppState {
    pub fn new(config: ServerConfig) -> Self {
        Self {
            config,
            sessions: RwLock::new(BTreeMap::new()),
        }
    }

    /// Loads every readable archive under the sessions directory. Returns the
    /// ids that could not be restored, with the reason.
    pub fn restore_sessions(&self) -> Vec<(String, String)> {
        let Some(root) = &self.config.sessions_dir else {
            return Vec::new();
        };
        let Ok(entries) = std::fs::read_dir(root) else {
            return Vec::new();
        };
        let mut failed = Vec::new();
        let mut dirs: Vec<PathBuf> = entries.filter_map(|e| e.ok()).map(|e| e.path()).filter(|p| p.is_dir()).collect();
        dirs.sort();
        for dir in dirs {
            let id = dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
            match load_session(&dir, &self.config.models_dir, &self.config.datasets_dir) {
                Ok((archive, session)) => {
                    self.insert(SessionEntry::new(archive.session_id, archive.model, archive.dataset, session));
                }
                Err(e) => failed.push((id, e.to_string())),
            }
        }
        failed
    }

    pub fn insert(&self, entry: SessionEntry) -> Arc<SessionEntry> {
        let entry = Arc::new(entry);
        self.sessions
            .write()
            .unwrap_or_else(|e| e.into_inner())
            .insert(entry.id.clone(), Arc::clone(&entry));
        entry
    }

    pub fn session(&self, id: &str) -> ApiResult<Arc<SessionEntry>> {
        self.sessions
            .read()
            .unwrap_or_else(|e| e.into_inner())
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::NotFound(format!("unknown session '{id}'")))
    }

    pub fn sessions(&self) -> Vec<Arc<SessionEntry>> {
        self.sessions.read().unwrap_or_else(|e| e.into_inner()).values().cloned().collect()
    }
}
