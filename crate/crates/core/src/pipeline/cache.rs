//! Content-addressed stage cache. Each stage owns a directory keyed by the
//! hash of its configuration and transitive inputs; a `done` marker makes a
//! directory a valid hit.

use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};

pub struct StageCache {
    root: PathBuf,
}

impl StageCache {
    pub fn new(out_dir: &Path) -> std::io::Result<StageCache> {
        let root = out_dir.join("cache");
        std::fs::create_dir_all(&root)?;
        Ok(StageCache { root })
    }

    pub fn dir(&self, stage: &str, key: &str) -> PathBuf {
        self.root.join(stage).join(key)
    }

    /// Some(dir) when the stage already ran for this key.
    pub fn lookup(&self, stage: &str, key: &str) -> Option<PathBuf> {
        let dir = self.dir(stage, key);
        dir.join("done").exists().then_some(dir)
    }

    /// Creates (or clears) the working directory for a fresh run.
    pub fn begin(&self, stage: &str, key: &str) -> std::io::Result<PathBuf> {
        let dir = self.dir(stage, key);
        if dir.exists() {
            std::fs::remove_dir_all(&dir)?;
        }
        std::fs::create_dir_all(&dir)?;
        Ok(dir)
    }

    pub fn commit(&self, stage: &str, key: &str) -> std::io::Result<()> {
        std::fs::write(self.dir(stage, key).join("done"), b"ok")
    }
}

/// Hex digest over an ordered list of labeled byte chunks. Labels keep
/// concatenation unambiguous.
pub fn hash_parts(parts: &[(&str, &[u8])]) -> String {
    let mut hasher = Sha256::new();
    for (label, bytes) in parts {
        hasher.update((label.len() as u64).to_le_bytes());
        hasher.update(label.as_bytes());
        hasher.update((bytes.len() as u64).to_le_bytes());
        hasher.update(bytes);
    }
    hex_string(&hasher.finalize())
}


fn hex_string(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Short form used in directory names and run ids.
pub fn short_key(full: &str) -> String {
    full.chars().take(12).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lookup_requires_commit() {
        let dir = tempfile::tempdir().unwrap();
        let cache = StageCache::new(dir.path()).unwrap();
        assert!(cache.lookup("seg", "abc").is_none());
        cache.begin("seg", "abc").unwrap();
        assert!(cache.lookup("seg", "abc").is_none());
        cache.commit("seg", "abc").unwrap();
        assert!(cache.lookup("seg", "abc").is_some());
    }

    #[test]
    fn hash_is_label_sensitive() {
        let a = hash_parts(&[("x", b"ab"), ("y", b"c")]);
        let b = hash_parts(&[("x", b"a"), ("y", b"bc")]);
        assert_ne!(a, b, "labeled framing prevents concatenation collisions");
        let c = hash_parts(&[("x", b"ab"), ("y", b"c")]);
        assert_eq!(a, c);
    }
}
