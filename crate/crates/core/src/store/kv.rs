use std::collections::HashMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use parking_lot::RwLock;
use sha2::{Digest, Sha256};

use super::write_atomic;
use crate::error::{Error, Result};

/// Byte blobs addressed by string keys. `get` returns `None` for absent keys,
/// which stays distinguishable from a stored empty value.
pub trait KvStore: Send + Sync {
    fn put(&self, key: &str, value: &[u8]) -> Result<()>;
    fn get(&self, key: &str) -> Result<Option<Vec<u8>>>;

    fn contains(&self, key: &str) -> Result<bool> {
        Ok(self.get(key)?.is_some())
    }
}

fn check_key(key: &str) -> Result<()> {
    if key.is_empty() {
        return Err(Error::Invalid("kv key must be non-empty".into()));
    }
    Ok(())
}

/// Key for a preview image: SHA-256 over (prompt, image backend id, seed).
pub fn content_key(prompt: &str, backend_id: &str, seed: u64) -> String {
    let mut h = Sha256::new();
    for part in [prompt.as_bytes(), backend_id.as_bytes()] {
        h.update((part.len() as u64).to_le_bytes());
        h.update(part);
    }
    h.update(seed.to_le_bytes());
    hex::encode(h.finalize())
}

#[derive(Debug, Default)]
pub struct MemKv {
    map: RwLock<HashMap<String, Vec<u8>>>,
}

impl MemKv {
    pub fn new() -> Self {
        Self::default()
    }
}

impl KvStore for MemKv {
    fn put(&self, key: &str, value: &[u8]) -> Result<()> {
        check_key(key)?;
        self.map.write().insert(key.to_owned(), value.to_vec());
        Ok(())
    }

    fn get(&self, key: &str) -> Result<Option<Vec<u8>>> {
        check_key(key)?;
        Ok(self.map.read().get(key).cloned())
    }
}

/// One file per key under a directory; file names are the hex-encoded key.
/// Writes go through a temp file and rename, and a process-local lock admits
/// one writer at a time alongside any number of readers.
#[derive(Debug)]
pub struct FileKv {
    root: PathBuf,
    lock: RwLock<()>,
}

impl FileKv {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        std::fs::create_dir_all(&root).map_err(|e| Error::io(&root, e))?;
        Ok(Self {
            root,
            lock: RwLock::new(()),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn path_for(&self, key: &str) -> PathBuf {
        self.root.join(hex::encode(key.as_bytes()))
    }
}

impl KvStore for FileKv {
    fn put(&self, key: &str, value: &[u8]) -> Result<()> {
        check_key(key)?;
        let _guard = self.lock.write();
        write_atomic(&self.path_for(key), |w| w.write_all(value))?;
        Ok(())
    }

    fn get(&self, key: &str) -> Result<Option<Vec<u8>>> {
        check_key(key)?;
        let _guard = self.lock.read();
        let path = self.path_for(key);
        match std::fs::read(&path) {
            Ok(bytes) => Ok(Some(bytes)),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(Error::io(path, e)),
        }
    }
}
