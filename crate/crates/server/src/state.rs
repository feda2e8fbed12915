use std::collections::HashMap;
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use marge_core::adventure::{Catalog, Feedback, Game, GameEvent, Session, Stage, UserProfile};
use marge_core::store::{path, user_path, DocumentPath, DocumentStore, StoreError};
use marge_core::RegionState;
use parking_lot::Mutex;
use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tokio::sync::{broadcast, watch};

use crate::error::ApiError;

pub const TOKEN_TTL_MS: u64 = 24 * 60 * 60 * 1000;
/// Messages buffered per subscriber before it is dropped as too slow.
pub const STREAM_BACKLOG: usize = 256;
pub const LEADERBOARD_STREAM_SIZE: usize = 10;

pub fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

/// One server-push message. `event` names the SSE event, `seq` is its id.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StreamMessage {
    pub seq: u64,
    pub event: String,
    pub data: Value,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TokenRecord {
    user_id: String,
    expires_at: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct IssuedToken {
    pub user_id: String,
    pub token: String,
    pub expires_at: u64,
}

struct Channel {
    tx: broadcast::Sender<StreamMessage>,
    seq: u64,
}

impl Channel {
    fn new() -> Self {
        Self {
            tx: broadcast::channel(STREAM_BACKLOG).0,
            seq: 0,
        }
    }

    fn send(&mut self, data: Value) {
        self.seq += 1;
        let event = data.get("type").and_then(Value::as_str).unwrap_or("message").to_string();
        // No receivers is fine: nobody is listening yet.
        let _ = self.tx.send(StreamMessage {
            seq: self.seq,
            event,
            data,
        });
    }
}

/// Everything mutable, behind one lock so per-session operations are
/// serialized and stream messages leave in commit order.
pub struct Engine {
    pub game: Game,
    pub regions: HashMap<String, RegionState>,
    gate_seen: HashMap<String, bool>,
    sessions_tx: HashMap<String, Channel>,
    leaderboard_tx: Channel,
}

pub struct AppState {
    engine: Mutex<Engine>,
    store: DocumentStore,
    shutdown: watch::Sender<bool>,
}

impl AppState {
    /// Builds the state, restoring users, sessions, regions and feedback
    /// from `store`.
    pub fn new(catalog: Arc<Catalog>, store: DocumentStore) -> Result<Self, StoreError> {
        let snap = store.snapshot();
        let mut users = Vec::new();
        if let Some(map) = snap.get("users").and_then(Value::as_object) {
            for (uid, doc) in map {
                let profile = doc
                    .get("profile")
                    .and_then(|p| serde_json::from_value::<UserProfile>(p.clone()).ok())
                    .unwrap_or_else(|| {
                        let lang = doc
                            .get("lang")
                            .and_then(Value::as_str)
                            .filter(|l| catalog.has_language(l))
                            .map_or_else(|| catalog.languages()[0].clone(), str::to_string);
                        UserProfile::new(uid.clone(), lang)
                    });
                users.push(profile);
            }
        }
        let sessions: Vec<Session> = values_of(&snap, "sessions")
            .filter_map(|v| serde_json::from_value(v.clone()).ok())
            .collect();
        let mut regions = HashMap::new();
        if let Some(map) = snap.get("regions").and_then(Value::as_object) {
            for (sid, v) in map {
                if let Ok(r) = serde_json::from_value::<RegionState>(v.clone()) {
                    regions.insert(sid.clone(), r);
                }
            }
        }
        let feedback: Vec<Feedback> = values_of(&snap, "feedback")
            .filter_map(Value::as_object)
            .flat_map(|m| m.values())
            .filter_map(|v| serde_json::from_value(v.clone()).ok())
            .collect();
        let game = Game::restore(catalog, users, sessions, feedback);
        Ok(Self {
            engine: Mutex::new(Engine {
                game,
                regions,
                gate_seen: HashMap::new(),
                sessions_tx: HashMap::new(),
                leaderboard_tx: Channel::new(),
            }),
            store,
            shutdown: watch::channel(false).0,
        })
    }

    pub fn store(&self) -> &DocumentStore {
        &self.store
    }

    pub fn catalog(&self) -> Arc<Catalog> {
        Arc::clone(self.engine.lock().game.catalog())
    }

    /// Runs `f` with the engine locked.
    pub fn with_engine<R>(&self, f: impl FnOnce(&mut Engine, &DocumentStore) -> Result<R, ApiError>) -> Result<R, ApiError> {
        let mut g = self.engine.lock();
        f(&mut g, &self.store)
    }

    pub fn subscribe_session(&self, session_id: &str) -> broadcast::Receiver<StreamMessage> {
        let mut g = self.engine.lock();
        g.sessions_tx
            .entry(session_id.to_string())
            .or_insert_with(Channel::new)
            .tx
            .subscribe()
    }

    pub fn subscribe_leaderboard(&self) -> broadcast::Receiver<StreamMessage> {
        self.engine.lock().leaderboard_tx.tx.subscribe()
    }

    pub fn shutdown_signal(&self) -> watch::Receiver<bool> {
        self.shutdown.subscribe()
    }

    /// Ends open event streams so graceful shutdown can complete.
    pub fn begin_shutdown(&self) {
        self.shutdown.send_replace(true);
    }

    pub fn issue_token(&self, user_id: &str) -> Result<IssuedToken, ApiError> {
        let bytes: [u8; 32] = rand::rng().random();
        let token: String = bytes.iter().map(|b| format!("{b:02x}")).collect();
        let expires_at = now_ms() + TOKEN_TTL_MS;
        self.store.put_json(
            &path("auth/tokens").child(token.clone())?,
            &TokenRecord {
                user_id: user_id.to_string(),
                expires_at,
            },
        )?;
        Ok(IssuedToken {
            user_id: user_id.to_string(),
            token,
            expires_at,
        })
    }

    /// The user a bearer token belongs to, if it exists and has not expired.
    pub fn token_user(&self, token: &str) -> Option<String> {
        let p = path("auth/tokens").child(token).ok()?;
        let rec: TokenRecord = self.store.get_json(&p).ok()?;
        if rec.expires_at <= now_ms() {
            let _ = self.store.delete(&p);
            return None;
        }
        Some(rec.user_id)
    }
}

fn values_of<'a>(snap: &'a Value, key: &str) -> impl Iterator<Item = &'a Value> {
    snap.get(key).and_then(Value::as_object).into_iter().flat_map(|m| m.values())
}

fn session_path(session_id: &str) -> Result<DocumentPath, StoreError> {
    DocumentPath::new(["sessions", session_id])
}

impl Engine {
    pub fn persist_user(&self, store: &DocumentStore, user_id: &str) -> Result<(), ApiError> {
        let u = self.game.user(user_id)?;
        store.put_json(&user_path(user_id, "profile")?, u)?;
        store.put(&user_path(user_id, "lang")?, json!(u.language))?;
        Ok(())
    }

    pub fn persist_session(&self, store: &DocumentStore, session_id: &str) -> Result<(), ApiError> {
        let s = self.game.session(session_id)?;
        store.put_json(&session_path(session_id)?, s)?;
        if let Some(r) = self.regions.get(session_id) {
            store.put_json(&DocumentPath::new(["regions", session_id])?, r)?;
        }
        Ok(())
    }

    pub fn persist_feedback(&self, store: &DocumentStore, f: &Feedback, index: usize) -> Result<(), ApiError> {
        store.put_json(&DocumentPath::new(["feedback", &f.user_id, &format!("{index:08}")])?, f)?;
        Ok(())
    }

    pub fn region_mut(&mut self, session_id: &str) -> &mut RegionState {
        let config = self.game.catalog().proximity_config();
        self.regions
            .entry(session_id.to_string())
            .or_insert_with(|| RegionState::new(config))
    }

    /// Scan-stream clock for a session: the last ingested timestamp.
    pub fn stream_now(&self, session_id: &str) -> u64 {
        self.regions.get(session_id).and_then(|r| r.last_t_ms()).unwrap_or(0)
    }

    /// Gate state of the session's current stage, if it is a gate.
    pub fn gate_status(&self, session_id: &str, now_ms: u64) -> Option<bool> {
        let s = self.game.session(session_id).ok()?;
        if !s.is_active() {
            return None;
        }
        let adv = self.game.catalog().adventure(&s.adventure_id)?;
        match adv.stages.get(s.stage_index)? {
            Stage::BeaconGate { beacon, min_rssi, .. } => Some(
                self.regions
                    .get(session_id)
                    .is_some_and(|r| r.gate_unlocked(beacon, now_ms, *min_rssi)),
            ),
            _ => None,
        }
    }

    pub fn publish(&mut self, session_id: &str, data: Value) {
        self.sessions_tx
            .entry(session_id.to_string())
            .or_insert_with(Channel::new)
            .send(data);
    }

    /// Pushes engine events to the session stream, and a leaderboard
    /// snapshot when points moved.
    pub fn publish_events(&mut self, session_id: Option<&str>, events: &[GameEvent]) {
        if let Some(sid) = session_id {
            for e in events {
                let data = serde_json::to_value(e).expect("events serialize");
                self.publish(sid, data);
            }
        }
        if events.iter().any(|e| matches!(e, GameEvent::PointsAwarded { .. })) {
            if let Ok(top) = self.game.leaderboard_top(LEADERBOARD_STREAM_SIZE) {
                self.leaderboard_tx.send(json!({"type": "leaderboard", "entries": top}));
            }
        }
    }

    /// Emits `gate_status` when the current gate's lock state differs from
    /// what was last pushed.
    pub fn refresh_gate(&mut self, session_id: &str, now_ms: u64) -> Option<bool> {
        let status = self.gate_status(session_id, now_ms);
        match status {
            Some(unlocked) => {
                if self.gate_seen.get(session_id) != Some(&unlocked) {
                    self.gate_seen.insert(session_id.to_string(), unlocked);
                    let stage_index = self.game.session(session_id).map(|s| s.stage_index).unwrap_or(0);
                    self.publish(
                        session_id,
                        json!({"type": "gate_status", "session_id": session_id, "stage_index": stage_index, "unlocked": unlocked}),
                    );
                }
            }
            None => {
                self.gate_seen.remove(session_id);
            }
        }
        status
    }
}
