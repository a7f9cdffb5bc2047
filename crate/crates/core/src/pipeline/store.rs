//! Content-addressed artifact store.
//!
//! An entry is a small set of named files under a namespace. Its key is the
//! namespace plus the SHA-256 of the files, so a key can never be rebound
//! to different bytes. On disk:
//!
//! ```text
//! <root>/<task>/<scene>/<trajectory>/<stack>/<artifact>/<digest>/<file>...
//! ```
//!
//! where `<stack>` is `stack-0003` (or `_` for per-trajectory artifacts).
//! Entries are written to `<root>/.tmp/` and renamed into place.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::RwLock;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

/// Store root for the CLI and workers.
pub const ENV_STORE_ROOT: &str = "DREAMFLOW_STORE";

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("io: {0}")]
    Io(#[from] io::Error),
    #[error("invalid namespace component `{0}`")]
    InvalidComponent(String),
    #[error("entry {0} exists with different content")]
    Conflict(String),
    #[error("invalid file name `{0}`")]
    InvalidFileName(String),
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Namespace {
    pub task: String,
    pub scene: String,
    pub trajectory: String,
    pub stack_index: Option<u32>,
    pub artifact: String,
}

impl Namespace {
    pub fn new(task: &str, scene: &str, trajectory: &str, stack_index: Option<u32>, artifact: &str) -> Self {
        Self {
            task: task.into(),
            scene: scene.into(),
            trajectory: trajectory.into(),
            stack_index,
            artifact: artifact.into(),
        }
    }

    pub fn components(&self) -> [String; 5] {
        [
            self.task.clone(),
            self.scene.clone(),
            self.trajectory.clone(),
            self.stack_index.map_or_else(|| "_".to_string(), |i| format!("stack-{i:04}")),
            self.artifact.clone(),
        ]
    }

    pub fn validate(&self) -> Result<(), StoreError> {
        for c in [&self.task, &self.scene, &self.trajectory, &self.artifact] {
            if !valid_component(c) {
                return Err(StoreError::InvalidComponent(c.clone()));
            }
        }
        Ok(())
    }

    pub fn relative_path(&self) -> PathBuf {
        self.components().iter().collect()
    }

    fn parse(parts: &[&str]) -> Option<Self> {
        let [task, scene, trajectory, stack, artifact] = parts else { return None };
        let stack_index = match *stack {
            "_" => None,
            s => Some(s.strip_prefix("stack-")?.parse().ok()?),
        };
        Some(Self::new(task, scene, trajectory, stack_index, artifact))
    }
}

impl std::fmt::Display for Namespace {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.components().join("/"))
    }
}

fn valid_component(c: &str) -> bool {
    !c.is_empty()
        && c != "."
        && c != ".."
        && !c.starts_with('.')
        && c.chars().all(|ch| ch.is_ascii_alphanumeric() || matches!(ch, '-' | '_' | '.'))
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct StoreKey {
    pub namespace: Namespace,
    pub digest: String,
}

impl std::fmt::Display for StoreKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}/{}", self.namespace, self.digest)
    }
}

/// Files of one entry, sorted by name.
pub type Files = BTreeMap<String, Vec<u8>>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PutOutcome {
    Created,
    /// Identical content was already stored under the same key.
    AlreadyPresent,
}

/// SHA-256 over (name, length, bytes) of each file in name order.
pub fn files_digest(files: &Files) -> String {
    let mut h = Sha256::new();
    for (name, bytes) in files {
        h.update((name.len() as u64).to_le_bytes());
        h.update(name.as_bytes());
        h.update((bytes.len() as u64).to_le_bytes());
        h.update(bytes);
    }
    hex::encode(h.finalize())
}

pub trait Store: Send + Sync {
    fn put(&self, namespace: &Namespace, files: Files) -> Result<(StoreKey, PutOutcome), StoreError>;

    fn get(&self, key: &StoreKey) -> Result<Option<Files>, StoreError>;

    /// Keys under `namespace`, sorted.
    fn list(&self, namespace: &Namespace) -> Result<Vec<StoreKey>, StoreError>;

    /// Every key in the store, sorted.
    fn keys(&self) -> Result<Vec<StoreKey>, StoreError>;

    /// The single entry under `namespace`, if there is exactly one.
    fn get_one(&self, namespace: &Namespace) -> Result<Option<(StoreKey, Files)>, StoreError> {
        let keys = self.list(namespace)?;
        match keys.as_slice() {
            [k] => Ok(self.get(k)?.map(|f| (k.clone(), f))),
            _ => Ok(None),
        }
    }

    /// Digest of the whole store: SHA-256 over sorted (key, entry digest)
    /// lines. Equal stores have equal digests regardless of write order.
    fn content_digest(&self) -> Result<String, StoreError> {
        let mut h = Sha256::new();
        for k in self.keys()? {
            h.update(k.to_string().as_bytes());
            h.update(b"\n");
        }
        Ok(hex::encode(h.finalize()))
    }
}

fn check_files(files: &Files) -> Result<(), StoreError> {
    for name in files.keys() {
        if !valid_component(name) {
            return Err(StoreError::InvalidFileName(name.clone()));
        }
    }
    Ok(())
}

#[derive(Debug)]
pub struct FsStore {
    root: PathBuf,
}

impl FsStore {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let root = root.into();
        fs::create_dir_all(root.join(".tmp"))?;
        Ok(Self { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn entry_path(&self, key: &StoreKey) -> PathBuf {
        self.root.join(key.namespace.relative_path()).join(&key.digest)
    }

    fn read_dir_files(dir: &Path) -> Result<Files, StoreError> {
        let mut files = Files::new();
        for e in fs::read_dir(dir)? {
            let e = e?;
            if e.file_type()?.is_file() {
                files.insert(e.file_name().to_string_lossy().into_owned(), fs::read(e.path())?);
            }
        }
        Ok(files)
    }

    fn verify_existing(&self, key: &StoreKey, files: &Files) -> Result<PutOutcome, StoreError> {
        if &Self::read_dir_files(&self.entry_path(key))? == files {
            Ok(PutOutcome::AlreadyPresent)
        } else {
            Err(StoreError::Conflict(key.to_string()))
        }
    }
}

impl Store for FsStore {
    fn put(&self, namespace: &Namespace, files: Files) -> Result<(StoreKey, PutOutcome), StoreError> {
        namespace.validate()?;
        check_files(&files)?;
        let key = StoreKey { namespace: namespace.clone(), digest: files_digest(&files) };
        let dest = self.entry_path(&key);
        if dest.exists() {
            return Ok((key.clone(), self.verify_existing(&key, &files)?));
        }
        let tmp = self.root.join(".tmp").join(uuid::Uuid::new_v4().to_string());
        fs::create_dir_all(&tmp)?;
        for (name, bytes) in &files {
            fs::write(tmp.join(name), bytes)?;
        }
        fs::create_dir_all(dest.parent().expect("entry path has a parent"))?;
        match fs::rename(&tmp, &dest) {
            Ok(()) => Ok((key, PutOutcome::Created)),
            Err(_) if dest.exists() => {
                // a concurrent writer got there first
                let _ = fs::remove_dir_all(&tmp);
                Ok((key.clone(), self.verify_existing(&key, &files)?))
            }
            Err(e) => {
                let _ = fs::remove_dir_all(&tmp);
                Err(e.into())
            }
        }
    }

    fn get(&self, key: &StoreKey) -> Result<Option<Files>, StoreError> {
        let p = self.entry_path(key);
        if !p.is_dir() {
            return Ok(None);
        }
        Self::read_dir_files(&p).map(Some)
    }

    fn list(&self, namespace: &Namespace) -> Result<Vec<StoreKey>, StoreError> {
        let dir = self.root.join(namespace.relative_path());
        if !dir.is_dir() {
            return Ok(Vec::new());
        }
        let mut keys = Vec::new();
        for e in fs::read_dir(dir)? {
            let e = e?;
            if e.file_type()?.is_dir() {
                keys.push(StoreKey { namespace: namespace.clone(), digest: e.file_name().to_string_lossy().into_owned() });
            }
        }
        keys.sort();
        Ok(keys)
    }

    fn keys(&self) -> Result<Vec<StoreKey>, StoreError> {
        fn walk(dir: &Path, depth: usize, parts: &mut Vec<String>, out: &mut Vec<StoreKey>) -> io::Result<()> {
            for e in fs::read_dir(dir)? {
                let e = e?;
                let name = e.file_name().to_string_lossy().into_owned();
                if !e.file_type()?.is_dir() || name.starts_with('.') {
                    continue;
                }
                if depth == 5 {
                    let refs: Vec<&str> = parts.iter().map(String::as_str).collect();
                    if let Some(namespace) = Namespace::parse(&refs) {
                        out.push(StoreKey { namespace, digest: name });
                    }
                } else {
                    parts.push(name);
                    walk(&e.path(), depth + 1, parts, out)?;
                    parts.pop();
                }
            }
            Ok(())
        }
        let mut out = Vec::new();
        walk(&self.root, 0, &mut Vec::new(), &mut out)?;
        out.sort();
        Ok(out)
    }
}

#[derive(Debug, Default)]
pub struct MemStore {
    entries: RwLock<BTreeMap<StoreKey, Files>>,
}

impl MemStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.read().expect("store lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl Store for MemStore {
    fn put(&self, namespace: &Namespace, files: Files) -> Result<(StoreKey, PutOutcome), StoreError> {
        namespace.validate()?;
        check_files(&files)?;
        let key = StoreKey { namespace: namespace.clone(), digest: files_digest(&files) };
        let mut m = self.entries.write().expect("store lock");
        if m.contains_key(&key) {
            return Ok((key, PutOutcome::AlreadyPresent));
        }
        m.insert(key.clone(), files);
        Ok((key, PutOutcome::Created))
    }

    fn get(&self, key: &StoreKey) -> Result<Option<Files>, StoreError> {
        Ok(self.entries.read().expect("store lock").get(key).cloned())
    }

    fn list(&self, namespace: &Namespace) -> Result<Vec<StoreKey>, StoreError> {
        Ok(self.entries.read().expect("store lock").keys().filter(|k| &k.namespace == namespace).cloned().collect())
    }

    fn keys(&self) -> Result<Vec<StoreKey>, StoreError> {
        Ok(self.entries.read().expect("store lock").keys().cloned().collect())
    }
}

impl<S: Store + ?Sized> Store for std::sync::Arc<S> {
    fn put(&self, namespace: &Namespace, files: Files) -> Result<(StoreKey, PutOutcome), StoreError> {
        (**self).put(namespace, files)
    }

    fn get(&self, key: &StoreKey) -> Result<Option<Files>, StoreError> {
        (**self).get(key)
    }

    fn list(&self, namespace: &Namespace) -> Result<Vec<StoreKey>, StoreError> {
        (**self).list(namespace)
    }

    fn keys(&self) -> Result<Vec<StoreKey>, StoreError> {
        (**self).keys()
    }
}

/// Shrinks PNG files wider than `max_width` before they reach `inner`.
pub struct Downsizing<S> {
    pub inner: S,
    pub max_width: u32,
}

impl<S: Store> Store for Downsizing<S> {
    fn put(&self, namespace: &Namespace, mut files: Files) -> Result<(StoreKey, PutOutcome), StoreError> {
        for (name, bytes) in files.iter_mut() {
            if !name.ends_with(".png") {
                continue;
            }
            let Ok(img) = image::load_from_memory(bytes) else { continue };
            if img.width() <= self.max_width {
                continue;
            }
            let h = ((img.height() as u64 * self.max_width as u64) / img.width() as u64).max(1) as u32;
            let small = img.resize_exact(self.max_width, h, image::imageops::FilterType::Triangle);
            let mut out = io::Cursor::new(Vec::new());
            small.write_to(&mut out, image::ImageFormat::Png).map_err(|e| io::Error::other(e.to_string()))?;
            *bytes = out.into_inner();
        }
        self.inner.put(namespace, files)
    }

    fn get(&self, key: &StoreKey) -> Result<Option<Files>, StoreError> {
        self.inner.get(key)
    }

    fn list(&self, namespace: &Namespace) -> Result<Vec<StoreKey>, StoreError> {
        self.inner.list(namespace)
    }

    fn keys(&self) -> Result<Vec<StoreKey>, StoreError> {
        self.inner.keys()
    }
}
