//! In-memory sessions keyed by an opaque token, with idle expiry and
//! optional on-disk copies of uploads and pools.

use scenario_core::criticality::PoolEntry;
use scenario_core::schema::ScenarioQuery;
use scenario_core::store::TrajectoryStore;
use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant, SystemTime};

#[derive(Debug, Clone)]
pub struct StoredScenario {
    pub recording_id: String,
    pub entry: PoolEntry,
}

#[derive(Debug)]
pub struct Session {
    pub id: String,
    pub created: SystemTime,
    last_seen: Instant,
    pub recordings: HashMap<String, Arc<TrajectoryStore>>,
    pub queries: Vec<ScenarioQuery>,
    pub scenarios: HashMap<String, StoredScenario>,
    pub searches: usize,
}

impl Session {
    fn new(id: String) -> Self {
        Self {
            id,
            created: SystemTime::now(),
            last_seen: Instant::now(),
            recordings: HashMap::new(),
            queries: Vec::new(),
            scenarios: HashMap::new(),
            searches: 0,
        }
    }
}

#[derive(Debug)]
pub struct SessionStore {
    idle: Duration,
    data_dir: Option<PathBuf>,
    sessions: HashMap<String, Session>,
}

impl SessionStore {
    pub fn new(idle: Duration, data_dir: Option<PathBuf>) -> Self {
        Self {
            idle,
            data_dir,
            sessions: HashMap::new(),
        }
    }

    fn purge(&mut self) {
        let idle = self.idle;
        self.sessions.retain(|id, s| {
            let keep = s.last_seen.elapsed() <= idle;
            if !keep {
                log::info!("session {id} expired");
            }
            keep
        });
    }

    /// The session named by `token`, or a fresh one when `token` is `None`.
    /// Unknown or expired tokens give `None`.
    pub fn open(&mut self, token: Option<&str>) -> Option<&mut Session> {
        self.purge();
        let id = match token {
            Some(t) => t.to_string(),
            None => {
                let id = uuid::Uuid::new_v4().simple().to_string();
                self.sessions.insert(id.clone(), Session::new(id.clone()));
                id
            }
        };
        let s = self.sessions.get_mut(&id)?;
        s.last_seen = Instant::now();
        Some(s)
    }

    pub fn len(&self) -> usize {
        self.sessions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sessions.is_empty()
    }

    /// Directory for a session's persisted files, created on demand.
    pub fn session_dir(&self, id: &str) -> Option<PathBuf> {
        let dir = self.data_dir.as_deref()?.join(id);
        match std::fs::create_dir_all(&dir) {
            Ok(()) => Some(dir),
            Err(e) => {
                log::warn!("cannot create {}: {e}", dir.display());
                None
            }
        }
    }
}

/// Best-effort write; persistence failures are logged, never fatal.
pub fn persist(dir: Option<&Path>, name: &str, bytes: &[u8]) {
    if let Some(dir) = dir {
        let path = dir.join(name);
        if let Err(e) = std::fs::write(&path, bytes) {
            log::warn!("cannot write {}: {e}", path.display());
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn idle_sessions_expire() {
        let mut s = SessionStore::new(Duration::from_millis(30), None);
        let id = s.open(None).unwrap().id.clone();
        assert!(s.open(Some(&id)).is_some());
        std::thread::sleep(Duration::from_millis(60));
        assert!(s.open(Some(&id)).is_none());
        assert!(s.is_empty());
    }

    #[test]
    fn ids_are_unique() {
        let mut s = SessionStore::new(Duration::from_secs(60), None);
        let a = s.open(None).unwrap().id.clone();
        let b = s.open(None).unwrap().id.clone();
        assert_ne!(a, b);
        assert_eq!(s.len(), 2);
        assert!(s.open(Some("nope")).is_none());
    }
}
