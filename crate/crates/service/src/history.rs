use std::collections::{HashMap, VecDeque};
use std::sync::atomic::{AtomicU64, Ordering};

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub id: u64,
    pub prompt: String,
    pub seed: u64,
    pub image_key: String,
    pub image_url: String,
}

/// Per-session generation history, newest last, oldest evicted past `cap`.
#[derive(Debug)]
pub struct History {
    cap: usize,
    next_id: AtomicU64,
    sessions: Mutex<HashMap<String, VecDeque<HistoryEntry>>>,
}

impl History {
    pub fn new(cap: usize) -> Self {
        Self {
            cap: cap.max(1),
            next_id: AtomicU64::new(1),
            sessions: Mutex::new(HashMap::new()),
        }
    }

    pub fn push(&self, session: &str, prompt: String, seed: u64, image_key: String) -> HistoryEntry {
        let entry = HistoryEntry {
            id: self.next_id.fetch_add(1, Ordering::Relaxed),
            image_url: format!("/api/image/{image_key}"),
            prompt,
            seed,
            image_key,
        };
        let mut sessions = self.sessions.lock();
        let list = sessions.entry(session.to_owned()).or_default();
        list.push_back(entry.clone());
        while list.len() > self.cap {
            list.pop_front();
        }
        entry
    }

    pub fn list(&self, session: &str) -> Vec<HistoryEntry> {
        self.sessions
            .lock()
            .get(session)
            .map(|l| l.iter().cloned().collect())
            .unwrap_or_default()
    }

    pub fn remove(&self, session: &str, id: u64) -> bool {
        let mut sessions = self.sessions.lock();
        let Some(list) = sessions.get_mut(session) else {
            return false;
        };
        let before = list.len();
        list.retain(|e| e.id != id);
        before != list.len()
    }
}
