//! Hierarchical JSON document store.
//!
//! Values live in one JSON tree addressed by slash-separated paths.
//! Writing `null` deletes a path (and prunes parents left empty). All
//! commits are serialized under a single lock and numbered; subscribers
//! of a path receive one [`Change`] per commit at or under it, in commit
//! order.
//!
//! When opened on a directory, each commit is appended to
//! `journal.jsonl` before it is acknowledged; [`DocumentStore::compact`]
//! folds the journal into `snapshot.json`. On open, the snapshot is
//! loaded and journal entries newer than it are replayed. A torn final
//! journal line (crash mid-append) is ignored.

use std::fmt;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::mpsc::{self, Receiver, Sender};
use std::sync::Arc;
use std::time::Duration;

use parking_lot::Mutex;
use rand::RngCore;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};
use thiserror::Error;
use uuid::Uuid;

pub const JOURNAL_FILE: &str = "journal.jsonl";
pub const SNAPSHOT_FILE: &str = "snapshot.json";
pub const DATA_DIR_ENV: &str = "MARGE_DATA_DIR";

/// Journal entries after which a write triggers compaction.
const AUTO_COMPACT_ENTRIES: usize = 50_000;
const HASH_ROUNDS: u32 = 4096;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("invalid path {0:?}: {1}")]
    InvalidPath(String, &'static str),
    #[error("no document at {0}")]
    NotFound(DocumentPath),
    #[error("transform failed: {0}")]
    TransformFailed(String),
    #[error("login {0:?} is already registered")]
    DuplicateLogin(String),
    #[error("login id and secret must be non-empty")]
    EmptyCredential,
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("corrupt {file}: {message}")]
    Corrupt { file: String, message: String },
}

/// Non-empty sequence of non-empty segments without `/`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct DocumentPath(Vec<String>);

impl DocumentPath {
    pub fn new<I, S>(segments: I) -> Result<Self, StoreError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let segs: Vec<String> = segments.into_iter().map(Into::into).collect();
        let shown = || segs.join("/");
        if segs.is_empty() {
            return Err(StoreError::InvalidPath(shown(), "path has no segments"));
        }
        if segs.iter().any(|s| s.is_empty()) {
            return Err(StoreError::InvalidPath(shown(), "empty segment"));
        }
        if segs.iter().any(|s| s.contains('/')) {
            return Err(StoreError::InvalidPath(shown(), "segment contains '/'"));
        }
        Ok(Self(segs))
    }

    pub fn segments(&self) -> &[String] {
        &self.0
    }

    pub fn child(&self, segment: impl Into<String>) -> Result<Self, StoreError> {
        let mut segs = self.0.clone();
        segs.push(segment.into());
        Self::new(segs)
    }

    /// True if `self` equals `other` or lies below it.
    pub fn is_within(&self, other: &DocumentPath) -> bool {
        self.0.len() >= other.0.len() && self.0[..other.0.len()] == other.0[..]
    }
}

impl FromStr for DocumentPath {
    type Err = StoreError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.is_empty() {
            return Err(StoreError::InvalidPath(String::new(), "path has no segments"));
        }
        Self::new(s.split('/'))
    }
}

impl TryFrom<String> for DocumentPath {
    type Error = StoreError;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<DocumentPath> for String {
    fn from(p: DocumentPath) -> Self {
        p.to_string()
    }
}

impl fmt::Display for DocumentPath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0.join("/"))
    }
}

/// Shorthand for building a path from a literal; panics on invalid input.
pub fn path(p: &str) -> DocumentPath {
    p.parse().expect("valid document path")
}

/// A committed write. `value` is `None` for deletions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Change {
    pub commit_index: u64,
    pub path: DocumentPath,
    pub value: Option<Value>,
}

#[derive(Debug, Serialize, Deserialize)]
struct JournalEntry {
    commit_index: u64,
    path: DocumentPath,
    value: Value,
}

#[derive(Debug, Serialize, Deserialize)]
struct Snapshot {
    commit_index: u64,
    root: Value,
}

struct Subscriber {
    id: u64,
    path: DocumentPath,
    tx: Sender<Change>,
}

struct Inner {
    root: Value,
    commit_index: u64,
    subscribers: Vec<Subscriber>,
    next_subscriber: u64,
    dir: Option<PathBuf>,
    journal: Option<File>,
    journal_entries: usize,
}

/// Thread-safe handle; clones share the same store.
#[derive(Clone)]
pub struct DocumentStore {
    inner: Arc<Mutex<Inner>>,
}

impl fmt::Debug for DocumentStore {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let g = self.inner.lock();
        f.debug_struct("DocumentStore")
            .field("dir", &g.dir)
            .field("commit_index", &g.commit_index)
            .finish()
    }
}

fn get_at<'a>(root: &'a Value, segs: &[String]) -> Option<&'a Value> {
    segs.iter().try_fold(root, |v, s| v.as_object()?.get(s))
}

fn set_at(root: &mut Value, segs: &[String], value: Value) {
    let (last, parents) = segs.split_last().expect("non-empty path");
    let mut cur = root;
    for s in parents {
        if !cur.is_object() {
            *cur = Value::Object(Map::new());
        }
        cur = cur
            .as_object_mut()
            .expect("object")
            .entry(s.clone())
            .or_insert_with(|| Value::Object(Map::new()));
    }
    if !cur.is_object() {
        *cur = Value::Object(Map::new());
    }
    cur.as_object_mut().expect("object").insert(last.clone(), value);
}

/// Removes the value at `segs`, then any ancestors left empty.
fn delete_at(root: &mut Value, segs: &[String]) -> bool {
    let Some(map) = root.as_object_mut() else { return false };
    match segs {
        [] => false,
        [last] => map.remove(last).is_some(),
        [first, rest @ ..] => {
            let Some(child) = map.get_mut(first) else { return false };
            let removed = delete_at(child, rest);
            if removed && child.as_object().is_some_and(Map::is_empty) {
                map.remove(first);
            }
            removed
        }
    }
}

impl Inner {
    fn commit(&mut self, path: &DocumentPath, value: Value) -> Result<u64, StoreError> {
        let index = self.commit_index + 1;
        if let Some(j) = self.journal.as_mut() {
            let entry = JournalEntry {
                commit_index: index,
                path: path.clone(),
                value: value.clone(),
            };
            let mut line = serde_json::to_vec(&entry).expect("JSON values serialize");
            line.push(b'\n');
            j.write_all(&line)?;
            self.journal_entries += 1;
        }
        self.commit_index = index;
        let stored = if value.is_null() {
            delete_at(&mut self.root, path.segments());
            None
        } else {
            set_at(&mut self.root, path.segments(), value);
            Some(get_at(&self.root, path.segments()).cloned().expect("just written"))
        };
        let change = Change {
            commit_index: index,
            path: path.clone(),
            value: stored,
        };
        self.subscribers.retain(|s| !path.is_within(&s.path) || s.tx.send(change.clone()).is_ok());
        Ok(index)
    }

    fn write_snapshot(&mut self) -> Result<(), StoreError> {
        let Some(dir) = self.dir.clone() else { return Ok(()) };
        let snap = Snapshot {
            commit_index: self.commit_index,
            root: self.root.clone(),
        };
        let tmp = dir.join(format!("{SNAPSHOT_FILE}.tmp"));
        {
            let mut f = File::create(&tmp)?;
            serde_json::to_writer(&mut f, &snap).map_err(std::io::Error::other)?;
            f.sync_all()?;
        }
        fs::rename(&tmp, dir.join(SNAPSHOT_FILE))?;
        let journal = OpenOptions::new()
            .create(true)
            .write(true)
            .truncate(true)
            .open(dir.join(JOURNAL_FILE))?;
        journal.sync_all()?;
        self.journal = Some(OpenOptions::new().append(true).open(dir.join(JOURNAL_FILE))?);
        self.journal_entries = 0;
        Ok(())
    }
}

impl Default for DocumentStore {
    fn default() -> Self {
        Self::in_memory()
    }
}

impl DocumentStore {
    pub fn in_memory() -> Self {
        Self::from_inner(Value::Object(Map::new()), 0, None, None, 0)
    }

    fn from_inner(root: Value, commit_index: u64, dir: Option<PathBuf>, journal: Option<File>, entries: usize) -> Self {
        Self {
            inner: Arc::new(Mutex::new(Inner {
                root,
                commit_index,
                subscribers: Vec::new(),
                next_subscriber: 0,
                dir,
                journal,
                journal_entries: entries,
            })),
        }
    }

    /// Opens (creating if needed) a file-backed store in `dir`.
    pub fn open(dir: impl AsRef<Path>) -> Result<Self, StoreError> {
        let dir = dir.as_ref().to_path_buf();
        fs::create_dir_all(&dir)?;
        let (mut root, mut commit_index) = match fs::read(dir.join(SNAPSHOT_FILE)) {
            Ok(bytes) => {
                let snap: Snapshot = serde_json::from_slice(&bytes).map_err(|e| StoreError::Corrupt {
                    file: SNAPSHOT_FILE.into(),
                    message: e.to_string(),
                })?;
                (snap.root, snap.commit_index)
            }
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => (Value::Object(Map::new()), 0),
            Err(e) => return Err(e.into()),
        };
        let journal_path = dir.join(JOURNAL_FILE);
        let mut entries = 0;
        let mut valid_len: u64 = 0;
        if journal_path.exists() {
            let reader = BufReader::new(File::open(&journal_path)?);
            let mut lines = reader.split(b'\n').peekable();
            let mut offset: u64 = 0;
            while let Some(line) = lines.next() {
                let line = line?;
                let is_last = lines.peek().is_none();
                let len = line.len() as u64 + 1;
                match serde_json::from_slice::<JournalEntry>(&line) {
                    Ok(entry) => {
                        if entry.commit_index > commit_index {
                            if entry.value.is_null() {
                                delete_at(&mut root, entry.path.segments());
                            } else {
                                set_at(&mut root, entry.path.segments(), entry.value);
                            }
                            commit_index = entry.commit_index;
                        }
                        entries += 1;
                        offset += len;
                        valid_len = offset;
                    }
                    Err(_) if is_last => break,
                    Err(e) => {
                        return Err(StoreError::Corrupt {
                            file: JOURNAL_FILE.into(),
                            message: format!("entry at byte {offset}: {e}"),
                        })
                    }
                }
            }
        }
        let journal = OpenOptions::new().create(true).append(true).open(&journal_path)?;
        // Drop a torn tail so later appends start on a fresh line.
        if journal.metadata()?.len() > valid_len {
            journal.set_len(valid_len)?;
        }
        Ok(Self::from_inner(root, commit_index, Some(dir), Some(journal), entries))
    }

    /// Opens the store named by `MARGE_DATA_DIR`, or an in-memory store.
    pub fn from_env() -> Result<Self, StoreError> {
        match std::env::var_os(DATA_DIR_ENV) {
            Some(d) => Self::open(d),
            None => Ok(Self::in_memory()),
        }
    }

    pub fn commit_index(&self) -> u64 {
        self.inner.lock().commit_index
    }

    /// Writes `value` at `path`, returning the previous value.
    pub fn put(&self, path: &DocumentPath, value: Value) -> Result<Option<Value>, StoreError> {
        let mut g = self.inner.lock();
        let prev = get_at(&g.root, path.segments()).cloned();
        g.commit(path, value)?;
        let auto = g.journal_entries >= AUTO_COMPACT_ENTRIES;
        if auto {
            g.write_snapshot()?;
        }
        Ok(prev)
    }

    pub fn put_json<T: Serialize>(&self, path: &DocumentPath, value: &T) -> Result<Option<Value>, StoreError> {
        self.put(path, serde_json::to_value(value).map_err(std::io::Error::other)?)
    }

    pub fn delete(&self, path: &DocumentPath) -> Result<Option<Value>, StoreError> {
        self.put(path, Value::Null)
    }

    pub fn get(&self, path: &DocumentPath) -> Result<Value, StoreError> {
        get_at(&self.inner.lock().root, path.segments())
            .cloned()
            .ok_or_else(|| StoreError::NotFound(path.clone()))
    }

    pub fn get_json<T: for<'de> Deserialize<'de>>(&self, path: &DocumentPath) -> Result<T, StoreError> {
        let v = self.get(path)?;
        serde_json::from_value(v).map_err(|e| StoreError::Corrupt {
            file: path.to_string(),
            message: e.to_string(),
        })
    }

    /// The whole tree.
    pub fn snapshot(&self) -> Value {
        self.inner.lock().root.clone()
    }

    /// Applies `transform` to the current value (if any) and commits the
    /// result under the store lock. A failing transform leaves the store
    /// untouched.
    pub fn update<F, E>(&self, path: &DocumentPath, transform: F) -> Result<Value, StoreError>
    where
        F: FnOnce(Option<&Value>) -> Result<Value, E>,
        E: fmt::Display,
    {
        let mut g = self.inner.lock();
        let current = get_at(&g.root, path.segments());
        let next = transform(current).map_err(|e| StoreError::TransformFailed(e.to_string()))?;
        g.commit(path, next.clone())?;
        Ok(next)
    }

    pub fn subscribe(&self, path: &DocumentPath) -> Subscription {
        let (tx, rx) = mpsc::channel();
        let mut g = self.inner.lock();
        let id = g.next_subscriber;
        g.next_subscriber += 1;
        g.subscribers.push(Subscriber {
            id,
            path: path.clone(),
            tx,
        });
        Subscription {
            id,
            rx,
            store: Arc::downgrade(&self.inner),
        }
    }

    pub fn subscriber_count(&self) -> usize {
        self.inner.lock().subscribers.len()
    }

    /// Folds the journal into a fresh snapshot.
    pub fn compact(&self) -> Result<(), StoreError> {
        self.inner.lock().write_snapshot()
    }

    /// Forces journal contents to stable storage.
    pub fn sync(&self) -> Result<(), StoreError> {
        if let Some(j) = self.inner.lock().journal.as_ref() {
            j.sync_data()?;
        }
        Ok(())
    }

    /// Creates a login with a salted hash of `secret` and an empty profile.
    pub fn register_user(&self, login_id: &str, secret: &str) -> Result<String, StoreError> {
        if login_id.is_empty() || secret.is_empty() {
            return Err(StoreError::EmptyCredential);
        }
        let user_id = Uuid::new_v4().simple().to_string();
        let mut salt = [0u8; 16];
        rand::rng().fill_bytes(&mut salt);
        let record = CredentialRecord {
            user_id: user_id.clone(),
            salt: hex::encode(salt),
            secret_hash: hex::encode(hash_secret(&salt, secret)),
        };
        let record = serde_json::to_value(&record).expect("plain struct");
        self.update(&login_path(login_id), |cur| match cur {
            Some(_) => Err("exists"),
            None => Ok(record),
        })
        .map_err(|e| match e {
            StoreError::TransformFailed(_) => StoreError::DuplicateLogin(login_id.to_string()),
            other => other,
        })?;
        self.put(
            &user_path(&user_id, "profile")?,
            serde_json::json!({ "user_id": user_id }),
        )?;
        Ok(user_id)
    }

    /// Returns the user id when `secret` matches the stored hash.
    pub fn verify(&self, login_id: &str, secret: &str) -> Option<String> {
        let rec: CredentialRecord = self.get_json(&login_path(login_id)).ok()?;
        let salt = hex::decode(&rec.salt).ok()?;
        let expected = hex::decode(&rec.secret_hash).ok()?;
        let actual = hash_secret(&salt, secret);
        // Constant-time comparison.
        let diff = expected
            .iter()
            .zip(actual.iter())
            .fold(expected.len() ^ actual.len(), |acc, (a, b)| acc | usize::from(a ^ b));
        (diff == 0).then_some(rec.user_id)
    }
}

#[derive(Serialize, Deserialize)]
struct CredentialRecord {
    user_id: String,
    salt: String,
    secret_hash: String,
}

fn hash_secret(salt: &[u8], secret: &str) -> [u8; 32] {
    let mut h: [u8; 32] = Sha256::new().chain_update(salt).chain_update(secret.as_bytes()).finalize().into();
    for _ in 1..HASH_ROUNDS {
        h = Sha256::new().chain_update(h).chain_update(salt).finalize().into();
    }
    h
}

fn login_path(login_id: &str) -> DocumentPath {
    DocumentPath::new(["auth", "logins", &hex::encode(login_id.as_bytes())]).expect("hex segment")
}

/// `users/<user_id>/<leaf>`.
pub fn user_path(user_id: &str, leaf: &str) -> Result<DocumentPath, StoreError> {
    DocumentPath::new(["users", user_id, leaf])
}

/// Receiving end of a subscription; dropping it unsubscribes.
pub struct Subscription {
    id: u64,
    rx: Receiver<Change>,
    store: std::sync::Weak<Mutex<Inner>>,
}

impl Subscription {
    pub fn try_recv(&self) -> Option<Change> {
        self.rx.try_recv().ok()
    }

    pub fn recv_timeout(&self, timeout: Duration) -> Option<Change> {
        self.rx.recv_timeout(timeout).ok()
    }

    /// Drains everything delivered so far.
    pub fn drain(&self) -> Vec<Change> {
        std::iter::from_fn(|| self.try_recv()).collect()
    }

    pub fn unsubscribe(self) {}
}

impl Drop for Subscription {
    fn drop(&mut self) {
        if let Some(inner) = self.store.upgrade() {
            inner.lock().subscribers.retain(|s| s.id != self.id);
        }
    }
}
