//! Label sources and ground truth.
//!
//! Fast sources (the hash-prefix blacklist and the signature scanner) run
//! inline on the capture path. Anything they flag as malware gets a
//! [`ScanTicket`] for the slower multi-engine backend, whose detection count
//! decides the ground truth.

pub mod blacklist;
pub mod engines;
pub mod signatures;
pub mod ticket;
pub mod url;
pub mod workers;

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::contentprep::{decode_body, DecodeLimits};
use crate::wire::{HttpExchange, Verdict, VerdictSource};

pub use blacklist::{blacklist_lookup, BlacklistDb};
pub use engines::{EngineFixture, ScanBackend, ScanError, SimulatedScanService};
pub use signatures::{signature_scan, SignatureDb};
pub use ticket::{ground_truth, GroundTruth, ScanReport, ScanStatus, ScanTicket, GROUND_TRUTH_MIN_DETECTIONS};
pub use url::{canonicalize_url, CanonicalUrl, UrlError};
pub use workers::{fetch_worker_step, submit_worker_step, StepReport};

/// Blacklist categories.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize, Default)]
pub enum ThreatType {
    #[serde(rename = "MALWARE")]
    Malware,
    #[serde(rename = "SOCIAL_ENGINEERING")]
    SocialEngineering,
    #[serde(rename = "UNWANTED_SOFTWARE")]
    UnwantedSoftware,
    #[serde(rename = "POTENTIALLY_HARMFUL_APPLICATIONS")]
    PotentiallyHarmfulApplications,
    #[serde(rename = "THREATTYPE_UNSPECIFIED")]
    Unspecified,
    #[default]
    #[serde(rename = "NONE")]
    None,
}

impl ThreatType {
    pub const LISTED: [ThreatType; 5] = [
        ThreatType::Malware,
        ThreatType::SocialEngineering,
        ThreatType::UnwantedSoftware,
        ThreatType::PotentiallyHarmfulApplications,
        ThreatType::Unspecified,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ThreatType::Malware => "MALWARE",
            ThreatType::SocialEngineering => "SOCIAL_ENGINEERING",
            ThreatType::UnwantedSoftware => "UNWANTED_SOFTWARE",
            ThreatType::PotentiallyHarmfulApplications => "POTENTIALLY_HARMFUL_APPLICATIONS",
            ThreatType::Unspecified => "THREATTYPE_UNSPECIFIED",
            ThreatType::None => "NONE",
        }
    }

    /// Lower wins when a URL is listed under several categories.
    pub fn priority(self) -> u8 {
        match self {
            ThreatType::Malware => 0,
            ThreatType::UnwantedSoftware => 1,
            ThreatType::SocialEngineering => 2,
            ThreatType::PotentiallyHarmfulApplications => 3,
            ThreatType::Unspecified => 4,
            ThreatType::None => 5,
        }
    }
}

impl fmt::Display for ThreatType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for ThreatType {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim().to_ascii_uppercase();
        ThreatType::LISTED
            .into_iter()
            .chain([ThreatType::None])
            .find(|t| t.as_str() == s)
            .or(match s.as_str() {
                "PHA" => Some(ThreatType::PotentiallyHarmfulApplications),
                "UNSPECIFIED" => Some(ThreatType::Unspecified),
                _ => None,
            })
            .ok_or_else(|| format!("unknown threat type `{s}`"))
    }
}

/// Every verdict attached to a flow record.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct LabelSet {
    #[serde(default)]
    pub blacklist: ThreatType,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub signature_hits: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scan_ticket: Option<ScanTicket>,
    #[serde(default)]
    pub ground_truth: GroundTruth,
}

impl LabelSet {
    pub fn from_verdict(v: &Verdict) -> Self {
        LabelSet { blacklist: v.blacklist, signature_hits: v.signature_hits.clone(), ..Default::default() }
    }

    /// True when a fast source flagged the flow as malware.
    pub fn fast_malware(&self) -> bool {
        self.blacklist == ThreatType::Malware || !self.signature_hits.is_empty()
    }

    /// True when no source raised any alert.
    pub fn is_clean(&self) -> bool {
        self.blacklist == ThreatType::None
            && self.signature_hits.is_empty()
            && self.scan_ticket.as_ref().is_none_or(|t| t.detections.unwrap_or(0) == 0)
    }

    /// Recomputes `ground_truth` from the ticket.
    pub fn refresh_ground_truth(&mut self) {
        self.ground_truth = self.scan_ticket.as_ref().map(ground_truth).unwrap_or(GroundTruth::Undetermined);
    }
}

/// Creates a ticket only for flows a fast source called malware.
///
/// Social engineering listings alone do not qualify.
pub fn schedule_multiengine(labels: &LabelSet) -> Option<ScanTicket> {
    labels.fast_malware().then(ScanTicket::new)
}

/// Synchronous blacklist + signature verdicts used by the gateway.
pub struct FastLabeler {
    pub blacklist: Arc<BlacklistDb>,
    pub signatures: Arc<SignatureDb>,
    pub limits: DecodeLimits,
}

impl FastLabeler {
    pub fn new(blacklist: BlacklistDb, signatures: SignatureDb) -> Self {
        FastLabeler { blacklist: Arc::new(blacklist), signatures: Arc::new(signatures), limits: DecodeLimits::default() }
    }

    pub fn label(&self, url: &str, decoded: &[u8]) -> Verdict {
        Verdict { blacklist: self.blacklist.lookup(url), signature_hits: self.signatures.scan(decoded) }
    }
}

impl VerdictSource for FastLabeler {
    fn verdict(&self, exchange: &HttpExchange) -> Result<Verdict, String> {
        // scan the decoded body; fall back to raw bytes if decoding fails
        let decoded = decode_body(&exchange.body, &exchange.head.response.headers, &self.limits)
            .map(|d| d.bytes)
            .unwrap_or_else(|_| exchange.body.clone());
        Ok(self.label(exchange.url(), &decoded))
    }
}
