//! Embedded flow store.
//!
//! Layout under the store root:
//!
//! ```text
//! records.log          append-only JSON Lines; the last line for an id wins
//! index/records.idx    "<id> <offset> <len>" per appended line
//! blobs/ab/cd/<sha1>   deduplicated bodies
//! ```
//!
//! One writer owns a [`Store`]; read-only handles may be opened alongside it.

pub mod blob;
pub mod query;

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{self, BufRead, BufReader, BufWriter, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::augment::AugmentInfo;
use crate::features::FeatureVector;
use crate::labels::LabelSet;
use crate::wire::ExchangeHead;

pub use blob::{is_sha1_hex, sha1_hex, BlobStore};
pub use query::{FieldPath, Filter, Predicate};

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("store I/O: {0}")]
    Io(#[from] io::Error),
    #[error("record {0} references unknown blob {1}")]
    DanglingBlob(u64, String),
    #[error("blob {0} not found")]
    MissingBlob(String),
    #[error("blob {expected} is corrupt (content hashes to {actual})")]
    CorruptBlob { expected: String, actual: String },
    #[error("unknown record id {0}")]
    UnknownRecord(u64),
    #[error("record id {0} already exists")]
    DuplicateRecord(u64),
    #[error("extra key {0:?} is not namespaced (expected source:name)")]
    BadExtraKey(String),
    #[error("malformed field path or filter {0:?}")]
    BadFieldPath(String),
    #[error("store opened read-only")]
    ReadOnly,
    #[error("corrupt record log at byte {offset}: {detail}")]
    CorruptLog { offset: u64, detail: String },
    #[error("record JSON: {0}")]
    Json(#[from] serde_json::Error),
}

/// One captured exchange with everything derived from it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowRecord {
    pub record_id: u64,
    pub exchange: ExchangeHead,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub body_sha1: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decoded_sha1: Option<String>,
    #[serde(default)]
    pub labels: LabelSet,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub augment: Option<AugmentInfo>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub features: Option<FeatureVector>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub extra: BTreeMap<String, Value>,
}

impl FlowRecord {
    /// A record awaiting an id from [`Store::put_record`].
    pub fn new(exchange: ExchangeHead) -> Self {
        FlowRecord {
            record_id: 0,
            exchange,
            body_sha1: None,
            decoded_sha1: None,
            labels: LabelSet::default(),
            augment: None,
            features: None,
            extra: BTreeMap::new(),
        }
    }

    pub fn flags(&self) -> Vec<&str> {
        match self.extra.get(FLAGS_KEY) {
            Some(Value::Array(a)) => a.iter().filter_map(Value::as_str).collect(),
            _ => Vec::new(),
        }
    }

    pub fn has_flag(&self, flag: &str) -> bool {
        self.flags().contains(&flag)
    }

    pub fn to_json(&self) -> Value {
        serde_json::to_value(self).expect("record serializes")
    }
}

/// Extra key under which capture flags are recorded.
pub const FLAGS_KEY: &str = "wire:flags";

/// Extra keys must look like `source:name`.
pub fn is_namespaced_key(key: &str) -> bool {
    match key.split_once(':') {
        Some((ns, name)) => {
            !ns.is_empty()
                && !name.is_empty()
                && ns.chars().all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == '_')
                && name.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.'))
        }
        None => false,
    }
}

#[derive(Debug, Clone, Copy)]
struct Slot {
    offset: u64,
    len: u64,
}

pub struct Store {
    root: PathBuf,
    read_only: bool,
    blobs: BlobStore,
    records: BTreeMap<u64, FlowRecord>,
    slots: BTreeMap<u64, Slot>,
    log: Option<BufWriter<File>>,
    index: Option<BufWriter<File>>,
    log_len: u64,
    next_id: u64,
}

impl Store {
    /// Opens (creating if needed) a writable store.
    pub fn open(root: &Path) -> Result<Self, StoreError> {
        Self::open_inner(root, false)
    }

    /// Opens an existing store for reading only.
    pub fn open_read_only(root: &Path) -> Result<Self, StoreError> {
        Self::open_inner(root, true)
    }

    fn open_inner(root: &Path, read_only: bool) -> Result<Self, StoreError> {
        if !read_only {
            fs::create_dir_all(root.join("index"))?;
            fs::create_dir_all(root.join("blobs"))?;
        }
        let log_path = root.join("records.log");
        let blobs = if read_only && !root.join("blobs").exists() {
            BlobStore::open(&std::env::temp_dir().join("flowlab-empty-blobs"))?
        } else {
            BlobStore::open(&root.join("blobs"))?
        };

        let (records, slots, valid_len) = load_log(&log_path)?;
        let next_id = records.keys().next_back().map_or(1, |id| id + 1);
        let mut store = Store {
            root: root.to_path_buf(),
            read_only,
            blobs,
            records,
            slots,
            log: None,
            index: None,
            log_len: valid_len,
            next_id,
        };
        if !read_only {
            let file = OpenOptions::new().create(true).read(true).write(true).open(&log_path)?;
            // drop a torn trailing line left by a crash
            if file.metadata()?.len() != valid_len {
                file.set_len(valid_len)?;
            }
            let mut file = file;
            file.seek(SeekFrom::End(0))?;
            store.log = Some(BufWriter::new(file));
            store.rewrite_index()?;
        }
        Ok(store)
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn rewrite_index(&mut self) -> Result<(), StoreError> {
        let path = self.root.join("index").join("records.idx");
        let tmp = self.root.join("index").join("records.idx.tmp");
        {
            let mut w = BufWriter::new(File::create(&tmp)?);
            for (id, slot) in &self.slots {
                writeln!(w, "{id} {} {}", slot.offset, slot.len)?;
            }
            w.flush()?;
        }
        fs::rename(&tmp, &path)?;
        self.index = Some(BufWriter::new(OpenOptions::new().append(true).open(&path)?));
        Ok(())
    }

    pub fn blobs(&self) -> &BlobStore {
        &self.blobs
    }

    pub fn blob_count(&self) -> usize {
        self.blobs.len()
    }

    pub fn put_blob(&mut self, data: &[u8]) -> Result<String, StoreError> {
        if self.read_only {
            return Err(StoreError::ReadOnly);
        }
        self.blobs.put(data)
    }

    pub fn get_blob(&self, sha1: &str) -> Result<Vec<u8>, StoreError> {
        self.blobs.get(sha1)
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, id: u64) -> Option<&FlowRecord> {
        self.records.get(&id)
    }

    /// All records in id order.
    pub fn records(&self) -> impl Iterator<Item = &FlowRecord> {
        self.records.values()
    }

    fn validate(&self, rec: &FlowRecord) -> Result<(), StoreError> {
        for digest in [&rec.body_sha1, &rec.decoded_sha1].into_iter().flatten() {
            if !self.blobs.contains(digest) {
                return Err(StoreError::DanglingBlob(rec.record_id, digest.clone()));
            }
        }
        if let Some(k) = rec.extra.keys().find(|k| !is_namespaced_key(k)) {
            return Err(StoreError::BadExtraKey(k.clone()));
        }
        Ok(())
    }

    /// Stores a new record and returns its assigned id.
    pub fn put_record(&mut self, mut rec: FlowRecord) -> Result<u64, StoreError> {
        if self.read_only {
            return Err(StoreError::ReadOnly);
        }
        rec.record_id = self.next_id;
        self.validate(&rec)?;
        self.append(&rec)?;
        self.next_id += 1;
        let id = rec.record_id;
        self.records.insert(id, rec);
        Ok(id)
    }

    /// Writes a new version of an existing record.
    pub fn update_record(&mut self, rec: FlowRecord) -> Result<(), StoreError> {
        if self.read_only {
            return Err(StoreError::ReadOnly);
        }
        if !self.records.contains_key(&rec.record_id) {
            return Err(StoreError::UnknownRecord(rec.record_id));
        }
        self.validate(&rec)?;
        self.append(&rec)?;
        self.records.insert(rec.record_id, rec);
        Ok(())
    }

    /// Inserts a record under its own id (e.g. from an export).
    pub fn import_record(&mut self, rec: FlowRecord) -> Result<u64, StoreError> {
        if self.read_only {
            return Err(StoreError::ReadOnly);
        }
        if rec.record_id == 0 {
            return self.put_record(rec);
        }
        if self.records.contains_key(&rec.record_id) {
            return Err(StoreError::DuplicateRecord(rec.record_id));
        }
        self.validate(&rec)?;
        self.append(&rec)?;
        self.next_id = self.next_id.max(rec.record_id + 1);
        let id = rec.record_id;
        self.records.insert(id, rec);
        Ok(id)
    }

    fn append(&mut self, rec: &FlowRecord) -> Result<(), StoreError> {
        let mut line = serde_json::to_vec(rec)?;
        line.push(b'\n');
        let log = self.log.as_mut().ok_or(StoreError::ReadOnly)?;
        log.write_all(&line)?;
        log.flush()?;
        let slot = Slot { offset: self.log_len, len: line.len() as u64 };
        self.log_len += slot.len;
        if let Some(idx) = self.index.as_mut() {
            writeln!(idx, "{} {} {}", rec.record_id, slot.offset, slot.len)?;
            idx.flush()?;
        }
        self.slots.insert(rec.record_id, slot);
        Ok(())
    }

    /// Re-reads one record straight from the log via the index.
    pub fn read_from_disk(&self, id: u64) -> Result<FlowRecord, StoreError> {
        let slot = self.slots.get(&id).ok_or(StoreError::UnknownRecord(id))?;
        let mut f = File::open(self.root.join("records.log"))?;
        f.seek(SeekFrom::Start(slot.offset))?;
        let mut buf = vec![0u8; slot.len as usize];
        f.read_exact(&mut buf)?;
        Ok(serde_json::from_slice(&buf)?)
    }

    pub fn query(&self, filter: &Filter) -> Vec<&FlowRecord> {
        self.records.values().filter(|r| filter.matches(&r.to_json())).collect()
    }

    /// Writes matching records as JSON Lines; returns the number written.
    pub fn export_jsonl(&self, filter: &Filter, path: &Path) -> Result<usize, StoreError> {
        let mut w = BufWriter::new(File::create(path)?);
        let mut n = 0;
        for rec in self.query(filter) {
            serde_json::to_writer(&mut w, rec)?;
            w.write_all(b"\n")?;
            n += 1;
        }
        w.flush()?;
        Ok(n)
    }

    pub fn flush(&mut self) -> Result<(), StoreError> {
        if let Some(l) = self.log.as_mut() {
            l.flush()?;
            l.get_ref().sync_data()?;
        }
        if let Some(i) = self.index.as_mut() {
            i.flush()?;
        }
        Ok(())
    }
}

type Loaded = (BTreeMap<u64, FlowRecord>, BTreeMap<u64, Slot>, u64);

fn load_log(path: &Path) -> Result<Loaded, StoreError> {
    let mut records = BTreeMap::new();
    let mut slots = BTreeMap::new();
    let file = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok((records, slots, 0)),
        Err(e) => return Err(e.into()),
    };
    let mut reader = BufReader::new(file);
    let mut offset = 0u64;
    let mut line = Vec::new();
    loop {
        line.clear();
        let n = reader.read_until(b'\n', &mut line)?;
        if n == 0 {
            break;
        }
        if line.last() != Some(&b'\n') {
            log::warn!("ignoring torn record at byte {offset} of {}", path.display());
            break;
        }
        let rec: FlowRecord = serde_json::from_slice(&line)
            .map_err(|e| StoreError::CorruptLog { offset, detail: e.to_string() })?;
        slots.insert(rec.record_id, Slot { offset, len: n as u64 });
        records.insert(rec.record_id, rec);
        offset += n as u64;
    }
    Ok((records, slots, offset))
}

/// Reads back a JSON Lines export.
pub fn read_jsonl(path: &Path) -> Result<Vec<FlowRecord>, StoreError> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::wire::{RequestHead, ResponseHead, SeedFocus};

    pub(crate) fn head(url: &str, ms: i64, tag: SeedFocus) -> ExchangeHead {
        ExchangeHead {
            request: RequestHead::new("GET", url),
            response: ResponseHead::new(200),
            started_at: chrono::DateTime::from_timestamp_millis(ms).unwrap(),
            agent_id: "agent-1".into(),
            seeder_tag: tag,
        }
    }

    #[test]
    fn ids_start_at_one_and_are_ordered() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = Store::open(dir.path()).unwrap();
        assert_eq!(s.put_record(FlowRecord::new(head("http://a/", 0, SeedFocus::Benign))).unwrap(), 1);
        for i in 0..999 {
            s.put_record(FlowRecord::new(head(&format!("http://a/{i}"), i, SeedFocus::Benign))).unwrap();
        }
        let ids: Vec<u64> = s.records().map(|r| r.record_id).collect();
        assert_eq!(ids, (1..=1000).collect::<Vec<_>>());
    }

    #[test]
    fn dangling_blob_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = Store::open(dir.path()).unwrap();
        let mut r = FlowRecord::new(head("http://a/", 0, SeedFocus::Benign));
        r.body_sha1 = Some(sha1_hex(b"never stored"));
        assert!(matches!(s.put_record(r), Err(StoreError::DanglingBlob(..))));
        assert!(s.is_empty());
    }

    #[test]
    fn extra_keys_must_be_namespaced() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = Store::open(dir.path()).unwrap();
        let mut r = FlowRecord::new(head("http://a/", 0, SeedFocus::Benign));
        r.extra.insert("flags".into(), Value::Null);
        assert!(matches!(s.put_record(r.clone()), Err(StoreError::BadExtraKey(_))));
        r.extra.clear();
        r.extra.insert("agent:viewport".into(), "1366x768".into());
        assert!(s.put_record(r).is_ok());
    }

    #[test]
    fn reopen_sees_latest_version_and_drops_torn_tail() {
        let dir = tempfile::tempdir().unwrap();
        {
            let mut s = Store::open(dir.path()).unwrap();
            let id = s.put_record(FlowRecord::new(head("http://a/", 0, SeedFocus::Benign))).unwrap();
            let mut r = s.get(id).unwrap().clone();
            r.extra.insert("test:v".into(), 2.into());
            s.update_record(r).unwrap();
            s.put_record(FlowRecord::new(head("http://b/", 1, SeedFocus::Benign))).unwrap();
        }
        let log = dir.path().join("records.log");
        let mut f = OpenOptions::new().append(true).open(&log).unwrap();
        f.write_all(b"{\"record_id\": 3, \"exch").unwrap();
        drop(f);
        let mut s = Store::open(dir.path()).unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s.get(1).unwrap().extra["test:v"], Value::from(2));
        assert_eq!(s.read_from_disk(1).unwrap(), *s.get(1).unwrap());
        assert_eq!(s.put_record(FlowRecord::new(head("http://c/", 2, SeedFocus::Benign))).unwrap(), 3);
        let ro = Store::open_read_only(dir.path()).unwrap();
        assert_eq!(ro.len(), 3);
    }

    #[test]
    fn read_only_rejects_writes() {
        let dir = tempfile::tempdir().unwrap();
        Store::open(dir.path()).unwrap();
        let mut ro = Store::open_read_only(dir.path()).unwrap();
        assert!(matches!(ro.put_blob(b"x"), Err(StoreError::ReadOnly)));
    }
}
