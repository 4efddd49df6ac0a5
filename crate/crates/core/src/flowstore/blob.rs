//! SHA-1 addressed blob directory with two-level hex fan-out.
//!
//! `blobs/ab/cd/abcd...` holds the raw bytes of each distinct body exactly once.
//! Writes go to a temporary file first and are renamed into place.

use std::collections::HashSet;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};

use sha1::{Digest, Sha1};

use super::StoreError;

pub fn sha1_hex(data: &[u8]) -> String {
    hex::encode(Sha1::digest(data))
}

pub fn is_sha1_hex(s: &str) -> bool {
    s.len() == 40 && s.bytes().all(|b| matches!(b, b'0'..=b'9' | b'a'..=b'f'))
}

static TMP_COUNTER: AtomicU64 = AtomicU64::new(0);

#[derive(Debug)]
pub struct BlobStore {
    root: PathBuf,
    known: HashSet<String>,
}

impl BlobStore {
    pub fn open(root: &Path) -> Result<Self, StoreError> {
        fs::create_dir_all(root.join("tmp"))?;
        let mut known = HashSet::new();
        for a in fs::read_dir(root)? {
            let a = a?;
            if !a.file_type()?.is_dir() || a.file_name() == "tmp" {
                continue;
            }
            for b in fs::read_dir(a.path())? {
                let b = b?;
                if !b.file_type()?.is_dir() {
                    continue;
                }
                for f in fs::read_dir(b.path())? {
                    let name = f?.file_name().to_string_lossy().into_owned();
                    if is_sha1_hex(&name) {
                        known.insert(name);
                    }
                }
            }
        }
        Ok(BlobStore { root: root.to_path_buf(), known })
    }

    pub fn path_for(&self, sha1: &str) -> PathBuf {
        self.root.join(&sha1[0..2]).join(&sha1[2..4]).join(sha1)
    }

    pub fn contains(&self, sha1: &str) -> bool {
        self.known.contains(sha1)
    }

    pub fn len(&self) -> usize {
        self.known.len()
    }

    pub fn is_empty(&self) -> bool {
        self.known.is_empty()
    }

    pub fn digests(&self) -> impl Iterator<Item = &String> {
        self.known.iter()
    }

    /// Stores `data` unless an identical blob exists; returns its digest.
    pub fn put(&mut self, data: &[u8]) -> Result<String, StoreError> {
        let digest = sha1_hex(data);
        if self.known.contains(&digest) {
            return Ok(digest);
        }
        let dest = self.path_for(&digest);
        fs::create_dir_all(dest.parent().expect("sharded path has parent"))?;
        let tmp = self.root.join("tmp").join(format!(
            "{}-{}-{}",
            std::process::id(),
            TMP_COUNTER.fetch_add(1, Ordering::Relaxed),
            &digest[..8]
        ));
        {
            let mut f = fs::File::create(&tmp)?;
            f.write_all(data)?;
            f.sync_data()?;
        }
        fs::rename(&tmp, &dest)?;
        self.known.insert(digest.clone());
        Ok(digest)
    }

    /// Reads a blob and verifies its digest.
    pub fn get(&self, sha1: &str) -> Result<Vec<u8>, StoreError> {
        if !is_sha1_hex(sha1) {
            return Err(StoreError::MissingBlob(sha1.to_string()));
        }
        let data = match fs::read(self.path_for(sha1)) {
            Ok(d) => d,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Err(StoreError::MissingBlob(sha1.to_string())),
            Err(e) => return Err(e.into()),
        };
        let actual = sha1_hex(&data);
        if actual != sha1 {
            return Err(StoreError::CorruptBlob { expected: sha1.to_string(), actual });
        }
        Ok(data)
    }
}
