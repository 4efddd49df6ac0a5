//! Offline multi-engine scan backend.
//!
//! Verdicts come from a fixture mapping a body's SHA-1 to the engines that
//! flag it; every other engine reports the body clean. Reports become
//! available after a configurable number of polls, and uploads are rate
//! limited per worker cycle by the caller.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use thiserror::Error;

use super::ticket::{ScanReport, DETECTED, UNDETECTED};

pub const ENGINE_COUNT: usize = 55;

/// Per-submission upload limit, in bytes.
pub const DEFAULT_MAX_UPLOAD: usize = 32 * 1024 * 1024;

/// Uploads accepted per submit cycle.
pub const DEFAULT_SUBMIT_CAPACITY: usize = 4;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ScanError {
    #[error("request exceeds the upload size limit ({size} > {limit} bytes)")]
    TooLarge { size: usize, limit: usize },
    #[error("unknown scan id {0}")]
    UnknownScan(String),
    #[error("backend failure: {0}")]
    Backend(String),
    #[error("engine fixture: {0}")]
    Fixture(String),
}

/// Asynchronous scan service as seen by the label workers.
pub trait ScanBackend: Send {
    /// Uploads a body; returns the scan id.
    fn submit(&mut self, sha1: &str, body: &[u8]) -> Result<String, ScanError>;
    /// `Ok(None)` while the scan is still running.
    fn poll(&mut self, scan_id: &str) -> Result<Option<ScanReport>, ScanError>;
}

/// The fixed roster of simulated engines.
pub fn engine_names() -> Vec<String> {
    (1..=ENGINE_COUNT).map(|i| format!("engine-{i:02}")).collect()
}

/// Digest-keyed detections for the simulated engines.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct EngineFixture {
    pub detections: BTreeMap<String, Vec<String>>,
}

impl EngineFixture {
    /// Parses the JSON map `sha1 -> [engine names]`.
    pub fn parse(json: &str) -> Result<Self, ScanError> {
        let detections: BTreeMap<String, Vec<String>> =
            serde_json::from_str(json).map_err(|e| ScanError::Fixture(e.to_string()))?;
        let known = engine_names();
        for (digest, engines) in &detections {
            if digest.len() != 40 || !digest.bytes().all(|b| b.is_ascii_hexdigit()) {
                return Err(ScanError::Fixture(format!("bad digest {digest:?}")));
            }
            if let Some(e) = engines.iter().find(|e| !known.contains(e)) {
                return Err(ScanError::Fixture(format!("unknown engine {e:?}")));
            }
        }
        Ok(EngineFixture { detections })
    }

    pub fn load(path: &Path) -> Result<Self, ScanError> {
        Self::parse(&fs::read_to_string(path).map_err(|e| ScanError::Fixture(e.to_string()))?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.detections).expect("string map serializes")
    }

    /// Marks `digest` as detected by the first `count` engines.
    pub fn set_detections(&mut self, digest: &str, count: usize) {
        let names = engine_names();
        self.detections.insert(digest.to_ascii_lowercase(), names.into_iter().take(count.min(ENGINE_COUNT)).collect());
    }

    pub fn report_for(&self, digest: &str) -> ScanReport {
        let flagged = self.detections.get(digest);
        let verdicts = engine_names()
            .into_iter()
            .map(|e| {
                let hit = flagged.is_some_and(|f| f.contains(&e));
                (e, if hit { DETECTED } else { UNDETECTED }.to_string())
            })
            .collect();
        ScanReport { engines_total: ENGINE_COUNT as u32, verdicts }
    }
}

struct Pending {
    digest: String,
    polls_left: u32,
}

/// In-process stand-in for the remote multi-engine service.
pub struct SimulatedScanService {
    fixture: EngineFixture,
    max_upload: usize,
    latency_polls: u32,
    pending: HashMap<String, Pending>,
    next_id: u64,
    /// Digests whose report retrieval fails, for exercising the error path.
    pub failing: Vec<String>,
}

impl SimulatedScanService {
    pub fn new(fixture: EngineFixture) -> Self {
        SimulatedScanService {
            fixture,
            max_upload: DEFAULT_MAX_UPLOAD,
            latency_polls: 1,
            pending: HashMap::new(),
            next_id: 1,
            failing: Vec::new(),
        }
    }

    pub fn with_max_upload(mut self, bytes: usize) -> Self {
        self.max_upload = bytes;
        self
    }

    /// Number of polls that return "not ready" before the report appears.
    pub fn with_latency(mut self, polls: u32) -> Self {
        self.latency_polls = polls;
        self
    }

    pub fn in_flight(&self) -> usize {
        self.pending.len()
    }
}

impl ScanBackend for SimulatedScanService {
    fn submit(&mut self, sha1: &str, body: &[u8]) -> Result<String, ScanError> {
        if body.len() > self.max_upload {
            return Err(ScanError::TooLarge { size: body.len(), limit: self.max_upload });
        }
        let id = format!("scan-{}-{}", &sha1[..sha1.len().min(12)], self.next_id);
        self.next_id += 1;
        self.pending.insert(id.clone(), Pending { digest: sha1.to_ascii_lowercase(), polls_left: self.latency_polls });
        Ok(id)
    }

    fn poll(&mut self, scan_id: &str) -> Result<Option<ScanReport>, ScanError> {
        let p = self.pending.get_mut(scan_id).ok_or_else(|| ScanError::UnknownScan(scan_id.to_string()))?;
        if p.polls_left > 0 {
            p.polls_left -= 1;
            return Ok(None);
        }
        let p = self.pending.remove(scan_id).expect("present");
        if self.failing.contains(&p.digest) {
            return Err(ScanError::Backend(format!("report for {} unavailable", p.digest)));
        }
        Ok(Some(self.fixture.report_for(&p.digest)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const D: &str = "0123456789abcdef0123456789abcdef01234567";

    #[test]
    fn roster_has_55_engines() {
        let n = engine_names();
        assert_eq!(n.len(), 55);
        assert_eq!(n[0], "engine-01");
    }

    #[test]
    fn report_counts_fixture_detections() {
        let mut f = EngineFixture::default();
        f.set_detections(D, 12);
        let r = f.report_for(D);
        assert_eq!(r.engines_total, 55);
        assert_eq!(r.detections(), 12);
        assert_eq!(f.report_for(&"f".repeat(40)).detections(), 0);
    }

    #[test]
    fn fixture_json_round_trip_and_validation() {
        let mut f = EngineFixture::default();
        f.set_detections(D, 3);
        assert_eq!(EngineFixture::parse(&f.to_json()).unwrap(), f);
        assert!(EngineFixture::parse(r#"{"abc": []}"#).is_err());
        assert!(EngineFixture::parse(&format!(r#"{{"{D}": ["nope"]}}"#)).is_err());
    }

    #[test]
    fn latency_and_size_limit() {
        let mut s = SimulatedScanService::new(EngineFixture::default()).with_latency(2).with_max_upload(4);
        assert!(matches!(s.submit(D, b"too long"), Err(ScanError::TooLarge { .. })));
        let id = s.submit(D, b"ok").unwrap();
        assert_eq!(s.poll(&id).unwrap(), None);
        assert_eq!(s.poll(&id).unwrap(), None);
        assert!(s.poll(&id).unwrap().is_some());
        assert!(matches!(s.poll(&id), Err(ScanError::UnknownScan(_))));
    }
}
