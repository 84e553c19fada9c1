//! Directory-backed session storage.
//!
//! Each session is one `<id>.json` document and, once training finishes,
//! one `<id>.report.json`. Writes go to a hidden temporary file that is
//! synced and renamed over the target, so a crash leaves either the old or
//! the new document, never a torn one.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock};

use thiserror::Error;
use tokio::sync::Mutex;

use crate::session::{CreateSession, JobState, Session, SessionError};

#[derive(Debug, Error)]
pub enum StoreError {
    #[error(transparent)]
    Session(#[from] SessionError),
    #[error("idempotency key {0:?} was already used for a different request")]
    KeyConflict(String),
    #[error("cannot load {path}: {reason}")]
    Corrupt { path: PathBuf, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type SessionHandle = Arc<Mutex<Session>>;

#[derive(Debug)]
pub struct Store {
    dir: PathBuf,
    sessions: RwLock<HashMap<String, SessionHandle>>,
    // held across create so a key maps to exactly one session
    keys: Mutex<HashMap<String, String>>,
}

const REPORT_SUFFIX: &str = ".report.json";

impl Store {
    /// Opens `dir`, creating it if needed, and replays every stored session.
    pub fn open(dir: impl Into<PathBuf>) -> Result<Store, StoreError> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        let mut sessions = HashMap::new();
        let mut keys = HashMap::new();
        let mut paths: Vec<PathBuf> =
            fs::read_dir(&dir)?.filter_map(|e| e.ok().map(|e| e.path())).filter(|p| is_session_file(p)).collect();
        paths.sort();
        for path in paths {
            let corrupt = |reason: String| StoreError::Corrupt { path: path.clone(), reason };
            let text = fs::read_to_string(&path)?;
            let session: Session = serde_json::from_str(&text).map_err(|e| corrupt(e.to_string()))?;
            let session = session.replay().map_err(|e| corrupt(e.to_string()))?;
            if let Some(key) = &session.idempotency_key {
                keys.insert(key.clone(), session.id.clone());
            }
            sessions.insert(session.id.clone(), Arc::new(Mutex::new(session)));
        }
        tracing::info!(dir = %dir.display(), sessions = sessions.len(), "session store opened");
        Ok(Store { dir, sessions: RwLock::new(sessions), keys: Mutex::new(keys) })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn get(&self, id: &str) -> Option<SessionHandle> {
        self.sessions.read().expect("session map lock").get(id).cloned()
    }

    pub fn ids(&self) -> Vec<String> {
        let mut ids: Vec<String> = self.sessions.read().expect("session map lock").keys().cloned().collect();
        ids.sort();
        ids
    }

    /// Sessions whose training job was still running when they were stored.
    pub async fn interrupted_jobs(&self) -> Vec<SessionHandle> {
        let handles: Vec<SessionHandle> = self.sessions.read().expect("session map lock").values().cloned().collect();
        let mut out = Vec::new();
        for h in handles {
            if matches!(h.lock().await.job.as_ref().map(|j| &j.state), Some(JobState::Running)) {
                out.push(h);
            }
        }
        out
    }

    /// Creates and persists a session. With an idempotency key that was seen
    /// before, returns the original session (`false` in the second slot) if
    /// the request matches and a conflict otherwise.
    pub async fn create(
        &self,
        request: CreateSession,
        key: Option<String>,
    ) -> Result<(SessionHandle, bool), StoreError> {
        let mut keys = self.keys.lock().await;
        if let Some(k) = &key {
            if let Some(id) = keys.get(k) {
                let handle = self.get(id).expect("keys point at stored sessions");
                if handle.lock().await.request != request {
                    return Err(StoreError::KeyConflict(k.clone()));
                }
                return Ok((handle, false));
            }
        }
        let session = Session::create(uuid::Uuid::new_v4().simple().to_string(), request, key.clone())?;
        self.save(&session)?;
        let id = session.id.clone();
        let handle = Arc::new(Mutex::new(session));
        self.sessions.write().expect("session map lock").insert(id.clone(), handle.clone());
        if let Some(k) = key {
            keys.insert(k, id);
        }
        Ok((handle, true))
    }

    pub fn save(&self, session: &Session) -> Result<(), StoreError> {
        let text = serde_json::to_string_pretty(session).expect("sessions always serialize");
        write_atomic(&self.session_path(&session.id), text.as_bytes())?;
        Ok(())
    }

    pub fn save_report(&self, id: &str, json: &str) -> Result<(), StoreError> {
        write_atomic(&self.dir.join(format!("{id}{REPORT_SUFFIX}")), json.as_bytes())?;
        Ok(())
    }

    pub fn load_report(&self, id: &str) -> Result<Option<String>, StoreError> {
        match fs::read_to_string(self.dir.join(format!("{id}{REPORT_SUFFIX}"))) {
            Ok(text) => Ok(Some(text)),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(e.into()),
        }
    }

    fn session_path(&self, id: &str) -> PathBuf {
        self.dir.join(format!("{id}.json"))
    }
}

fn is_session_file(p: &Path) -> bool {
    let Some(name) = p.file_name().and_then(|n| n.to_str()) else {
        return false;
    };
    !name.starts_with('.') && name.ends_with(".json") && !name.ends_with(REPORT_SUFFIX)
}

fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("doc");
    let tmp = path.with_file_name(format!(".{name}.tmp"));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use acv_core::{Choice, GroundingParams};

    fn request(k: usize, seed: u64) -> CreateSession {
        CreateSession { world_name: None, world_config: None, k, seed, grounding_params: GroundingParams::default() }
    }

    #[tokio::test]
    async fn sessions_survive_reopen() {
        let dir = tempfile::tempdir().unwrap();
        let store = Store::open(dir.path()).unwrap();
        let (h, _) = store.create(request(8, 3), None).await.unwrap();
        let (id, before) = {
            let mut s = h.lock().await;
            for _ in 0..4 {
                let pair = s.query().pair.unwrap();
                s.submit(&pair.left.id, &pair.right.id, Choice::Right).unwrap();
            }
            store.save(&s).unwrap();
            (s.id.clone(), s.tournament().clone())
        };
        let reopened = Store::open(dir.path()).unwrap();
        let after = reopened.get(&id).unwrap();
        assert_eq!(after.lock().await.tournament(), &before);
        assert_eq!(reopened.ids(), vec![id]);
    }

    #[tokio::test]
    async fn idempotency_keys() {
        let dir = tempfile::tempdir().unwrap();
        let store = Store::open(dir.path()).unwrap();
        let (a, fresh) = store.create(request(4, 1), Some("k1".into())).await.unwrap();
        assert!(fresh);
        let (b, fresh) = store.create(request(4, 1), Some("k1".into())).await.unwrap();
        assert!(!fresh);
        assert!(Arc::ptr_eq(&a, &b));
        assert!(matches!(store.create(request(4, 2), Some("k1".into())).await, Err(StoreError::KeyConflict(_))));

        let reopened = Store::open(dir.path()).unwrap();
        let (c, fresh) = reopened.create(request(4, 1), Some("k1".into())).await.unwrap();
        assert!(!fresh);
        let original = a.lock().await.id.clone();
        assert_eq!(c.lock().await.id, original);
    }

    #[test]
    fn corrupt_documents_are_reported() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("x.json"), "{").unwrap();
        fs::write(dir.path().join(".x.json.tmp"), "ignored").unwrap();
        assert!(matches!(Store::open(dir.path()), Err(StoreError::Corrupt { .. })));
    }
}
