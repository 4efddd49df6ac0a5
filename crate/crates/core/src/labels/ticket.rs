//! Lifecycle of an asynchronous multi-engine scan.
//!
//! ```text
//! unscanned ──submit──▶ scan_in_progress ──finish──▶ scan_finished
//!     │                        │
//!     └──────fail──────▶ error ◀──────fail────────┘
//! ```

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Detection count at or above which a finished scan marks a sample malicious.
pub const GROUND_TRUTH_MIN_DETECTIONS: u32 = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScanStatus {
    Unscanned,
    ScanInProgress,
    ScanFinished,
    Error,
}

impl ScanStatus {
    pub const ALL: [ScanStatus; 4] =
        [ScanStatus::Unscanned, ScanStatus::ScanInProgress, ScanStatus::ScanFinished, ScanStatus::Error];

    pub fn as_str(self) -> &'static str {
        match self {
            ScanStatus::Unscanned => "unscanned",
            ScanStatus::ScanInProgress => "scan_in_progress",
            ScanStatus::ScanFinished => "scan_finished",
            ScanStatus::Error => "error",
        }
    }

    /// Whether `self -> to` is an edge of the lifecycle graph.
    pub fn can_transition(self, to: ScanStatus) -> bool {
        use ScanStatus::*;
        matches!(
            (self, to),
            (Unscanned, ScanInProgress)
                | (Unscanned, Error)
                | (ScanInProgress, ScanFinished)
                | (ScanInProgress, Error)
        )
    }
}

impl fmt::Display for ScanStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("illegal scan transition {from} -> {to}")]
pub struct IllegalTransition {
    pub from: ScanStatus,
    pub to: ScanStatus,
}

/// A finished report, as returned by the scan backend.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ScanReport {
    pub engines_total: u32,
    /// Engine name to verdict label; detecting engines carry `"malicious"`.
    pub verdicts: BTreeMap<String, String>,
}

impl ScanReport {
    pub fn detections(&self) -> u32 {
        self.verdicts.values().filter(|v| v.as_str() == DETECTED).count() as u32
    }
}

pub const DETECTED: &str = "malicious";
pub const UNDETECTED: &str = "clean";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScanTicket {
    pub status: ScanStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scan_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detections: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub engines_total: Option<u32>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub report: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl Default for ScanTicket {
    fn default() -> Self {
        ScanTicket::new()
    }
}

impl ScanTicket {
    pub fn new() -> Self {
        ScanTicket {
            status: ScanStatus::Unscanned,
            scan_id: None,
            detections: None,
            engines_total: None,
            report: BTreeMap::new(),
            error: None,
        }
    }

    fn check(&self, to: ScanStatus) -> Result<(), IllegalTransition> {
        if self.status.can_transition(to) {
            Ok(())
        } else {
            Err(IllegalTransition { from: self.status, to })
        }
    }

    /// Upload accepted by the backend.
    pub fn submit(&mut self, scan_id: impl Into<String>) -> Result<(), IllegalTransition> {
        self.check(ScanStatus::ScanInProgress)?;
        self.status = ScanStatus::ScanInProgress;
        self.scan_id = Some(scan_id.into());
        Ok(())
    }

    /// Report retrieved.
    pub fn finish(&mut self, report: ScanReport) -> Result<(), IllegalTransition> {
        self.check(ScanStatus::ScanFinished)?;
        let detections = report.detections().min(report.engines_total);
        self.status = ScanStatus::ScanFinished;
        self.detections = Some(detections);
        self.engines_total = Some(report.engines_total);
        self.report = report.verdicts;
        Ok(())
    }

    pub fn fail(&mut self, reason: impl Into<String>) -> Result<(), IllegalTransition> {
        self.check(ScanStatus::Error)?;
        self.status = ScanStatus::Error;
        self.error = Some(reason.into());
        Ok(())
    }
}

/// Ground-truth maliciousness of a sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroundTruth {
    Malicious,
    Benign,
    #[default]
    Undetermined,
}

/// Finished scans with at least ten detections are malicious, fewer are benign.
pub fn ground_truth(ticket: &ScanTicket) -> GroundTruth {
    match (ticket.status, ticket.detections) {
        (ScanStatus::ScanFinished, Some(d)) if d >= GROUND_TRUTH_MIN_DETECTIONS => GroundTruth::Malicious,
        (ScanStatus::ScanFinished, _) => GroundTruth::Benign,
        _ => GroundTruth::Undetermined,
    }
}
