use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};

use smearscan_core::hash::{content_hash, is_content_hash};

static TMP_COUNTER: AtomicU64 = AtomicU64::new(0);

/// Blobs stored as `<root>/<first two hex digits>/<sha256>`.
#[derive(Debug, Clone)]
pub struct BlobStore {
    root: PathBuf,
}

impl BlobStore {
    pub fn open(root: impl Into<PathBuf>) -> io::Result<Self> {
        let root = root.into();
        fs::create_dir_all(&root)?;
        Ok(BlobStore { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path_for(&self, hash: &str) -> PathBuf {
        self.root.join(&hash[..2]).join(hash)
    }

    pub fn contains(&self, hash: &str) -> bool {
        is_content_hash(hash) && self.path_for(hash).is_file()
    }

    /// Store `bytes`, returning their hash. Existing blobs are left untouched.
    pub fn put(&self, bytes: &[u8]) -> io::Result<String> {
        let hash = content_hash(bytes);
        let path = self.path_for(&hash);
        if path.is_file() {
            return Ok(hash);
        }
        let dir = path.parent().expect("blob path has a parent");
        fs::create_dir_all(dir)?;
        write_atomic(&path, bytes)?;
        Ok(hash)
    }

    pub fn get(&self, hash: &str) -> io::Result<Vec<u8>> {
        if !is_content_hash(hash) {
            return Err(io::Error::new(io::ErrorKind::InvalidInput, format!("not a content hash: {hash:?}")));
        }
        fs::read(self.path_for(hash))
    }

    /// Re-hash a stored blob and compare with its key.
    pub fn verify(&self, hash: &str) -> io::Result<bool> {
        Ok(content_hash(&self.get(hash)?) == hash)
    }
}

/// Write via a temporary sibling, fsync, then rename into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let dir = path.parent().unwrap_or(Path::new("."));
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("blob");
    let tmp = dir.join(format!(
        ".{name}.{}.{}.tmp",
        std::process::id(),
        TMP_COUNTER.fetch_add(1, Ordering::Relaxed)
    ));
    let result = (|| {
        let mut f = File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)?;
        if let Ok(d) = File::open(dir) {
            let _ = d.sync_all();
        }
        Ok(())
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    result
}

/// `relative path -> sha256` for every regular file under `dir`.
pub fn snapshot_dir(dir: &Path) -> io::Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d)? {
            let entry = entry?;
            let p = entry.path();
            if entry.file_type()?.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).expect("walked below dir").to_string_lossy().replace('\\', "/");
                out.insert(rel, content_hash(&fs::read(&p)?));
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn put_get_and_dedup() {
        let dir = tempfile::tempdir().unwrap();
        let store = BlobStore::open(dir.path()).unwrap();
        let h = store.put(b"").unwrap();
        assert_eq!(h, "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
        assert!(store.path_for(&h).ends_with("e3/e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"));
        assert_eq!(store.put(b"").unwrap(), h);
        assert_eq!(store.get(&h).unwrap(), b"");
        assert!(store.verify(&h).unwrap());
        assert_eq!(snapshot_dir(dir.path()).unwrap().len(), 1);
        assert!(store.get("../../etc/passwd").is_err());
    }
}
