//! Server location and domain registration lookups over local fixtures.
//!
//! GeoIP fixture: CSV `start_ip,end_ip,country,city` with inclusive IPv4
//! bounds. WhoIs fixture: CSV `domain,registered_on,expires_on` with ISO
//! dates. Hosts are reduced to their registrable domain with a small bundled
//! suffix list before the WhoIs lookup.

use std::collections::{BTreeMap, HashSet};
use std::io::Read;
use std::net::{IpAddr, Ipv4Addr};
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum AugmentError {
    #[error("malformed IP address {0:?}")]
    BadIp(String),
    #[error("{file} line {line}: {detail}")]
    Fixture { file: String, line: u64, detail: String },
    #[error("I/O: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct AugmentInfo {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub country: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub city: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub registered_on: Option<NaiveDate>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expires_on: Option<NaiveDate>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub registration_days: Option<i64>,
}

impl AugmentInfo {
    pub fn is_empty(&self) -> bool {
        *self == AugmentInfo::default()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GeoRange {
    pub start: u32,
    pub end: u32,
    pub country: String,
    pub city: String,
}

/// Sorted, non-overlapping IPv4 ranges.
#[derive(Debug, Clone, Default)]
pub struct GeoIpDb {
    ranges: Vec<GeoRange>,
}

#[derive(Deserialize)]
struct GeoRow {
    start_ip: String,
    end_ip: String,
    country: String,
    #[serde(default)]
    city: String,
}

fn fixture_err(file: &str, line: u64, detail: impl ToString) -> AugmentError {
    AugmentError::Fixture { file: file.to_string(), line, detail: detail.to_string() }
}

fn csv_line(e: &csv::Error) -> u64 {
    e.position().map_or(0, |p| p.line())
}

impl GeoIpDb {
    pub fn from_ranges(mut ranges: Vec<GeoRange>) -> Result<Self, String> {
        ranges.sort_by_key(|r| r.start);
        for r in &ranges {
            if r.start > r.end {
                return Err(format!("range {}-{} is inverted", Ipv4Addr::from(r.start), Ipv4Addr::from(r.end)));
            }
        }
        for w in ranges.windows(2) {
            if w[1].start <= w[0].end {
                return Err(format!("ranges starting {} and {} overlap", Ipv4Addr::from(w[0].start), Ipv4Addr::from(w[1].start)));
            }
        }
        Ok(GeoIpDb { ranges })
    }

    pub fn parse<R: Read>(reader: R) -> Result<Self, AugmentError> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let mut ranges = Vec::new();
        for (i, row) in rdr.deserialize::<GeoRow>().enumerate() {
            let row = row.map_err(|e| fixture_err("geoip", csv_line(&e), &e))?;
            let line = i as u64 + 2;
            let ip = |s: &str| s.parse::<Ipv4Addr>().map(u32::from).map_err(|_| fixture_err("geoip", line, format!("bad address {s:?}")));
            ranges.push(GeoRange { start: ip(&row.start_ip)?, end: ip(&row.end_ip)?, country: row.country, city: row.city });
        }
        Self::from_ranges(ranges).map_err(|e| fixture_err("geoip", 0, e))
    }

    pub fn load(path: &Path) -> Result<Self, AugmentError> {
        Self::parse(std::fs::File::open(path)?)
    }

    pub fn ranges(&self) -> &[GeoRange] {
        &self.ranges
    }

    pub fn lookup_v4(&self, ip: Ipv4Addr) -> Option<&GeoRange> {
        let ip = u32::from(ip);
        // last range starting at or before ip
        let idx = self.ranges.partition_point(|r| r.start <= ip);
        let r = self.ranges.get(idx.checked_sub(1)?)?;
        (ip <= r.end).then_some(r)
    }
}

/// `(country, city)` for an address; IPv6 is never located.
pub fn geoip_lookup(ip: &str, db: &GeoIpDb) -> Result<Option<(String, String)>, AugmentError> {
    match ip.trim().parse::<IpAddr>().map_err(|_| AugmentError::BadIp(ip.to_string()))? {
        IpAddr::V4(v4) => Ok(db.lookup_v4(v4).map(|r| (r.country.clone(), r.city.clone()))),
        IpAddr::V6(_) => Ok(None),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RegistrationWindow {
    pub registered_on: NaiveDate,
    pub expires_on: NaiveDate,
}

impl RegistrationWindow {
    pub fn days(&self) -> i64 {
        (self.expires_on - self.registered_on).num_days()
    }
}

/// Suffixes under which one more label forms a registrable domain.
pub const BUNDLED_SUFFIXES: &[&str] = &[
    "com", "net", "org", "info", "biz", "io", "ru", "cn", "de", "fr", "nl", "uk", "co.uk", "org.uk", "ac.uk",
    "jp", "co.jp", "br", "com.br", "au", "com.au", "in", "co.in", "us", "eu", "pl", "it", "es", "tk", "xyz",
    "top", "test", "example", "invalid", "localhost",
];

#[derive(Debug, Clone)]
pub struct WhoisDb {
    entries: BTreeMap<String, RegistrationWindow>,
    suffixes: HashSet<String>,
}

impl Default for WhoisDb {
    fn default() -> Self {
        WhoisDb { entries: BTreeMap::new(), suffixes: BUNDLED_SUFFIXES.iter().map(|s| s.to_string()).collect() }
    }
}

#[derive(Deserialize)]
struct WhoisRow {
    domain: String,
    registered_on: NaiveDate,
    expires_on: NaiveDate,
}

impl WhoisDb {
    pub fn insert(&mut self, domain: &str, window: RegistrationWindow) {
        self.entries.insert(domain.trim_end_matches('.').to_ascii_lowercase(), window);
    }

    pub fn with_suffixes<I: IntoIterator<Item = S>, S: Into<String>>(mut self, suffixes: I) -> Self {
        self.suffixes = suffixes.into_iter().map(Into::into).collect();
        self
    }

    pub fn parse<R: Read>(reader: R) -> Result<Self, AugmentError> {
        let mut db = WhoisDb::default();
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        for (i, row) in rdr.deserialize::<WhoisRow>().enumerate() {
            let row = row.map_err(|e| fixture_err("whois", csv_line(&e), &e))?;
            if row.expires_on < row.registered_on {
                return Err(fixture_err("whois", i as u64 + 2, format!("{} expires before registration", row.domain)));
            }
            db.insert(&row.domain, RegistrationWindow { registered_on: row.registered_on, expires_on: row.expires_on });
        }
        Ok(db)
    }

    pub fn load(path: &Path) -> Result<Self, AugmentError> {
        Self::parse(std::fs::File::open(path)?)
    }

    /// Longest known suffix plus one label; the host itself if nothing matches.
    pub fn registrable_domain(&self, host: &str) -> String {
        let host = host.trim_end_matches('.').to_ascii_lowercase();
        let labels: Vec<&str> = host.split('.').collect();
        for i in 1..labels.len() {
            if self.suffixes.contains(&labels[i..].join(".")) {
                return labels[i - 1..].join(".");
            }
        }
        host
    }

    pub fn lookup(&self, host: &str) -> Option<RegistrationWindow> {
        self.entries.get(&self.registrable_domain(host)).copied()
    }
}

pub fn whois_lookup(domain: &str, db: &WhoisDb) -> Option<RegistrationWindow> {
    db.lookup(domain)
}

/// Both fixtures; either may be empty.
#[derive(Debug, Clone, Default)]
pub struct Augmenter {
    pub geoip: GeoIpDb,
    pub whois: WhoisDb,
}

impl Augmenter {
    /// `None` when neither lookup produced anything.
    pub fn augment(&self, server_ip: Option<&str>, host: Option<&str>) -> Option<AugmentInfo> {
        let mut info = AugmentInfo::default();
        if let Some(Ok(Some((country, city)))) = server_ip.map(|ip| geoip_lookup(ip, &self.geoip)) {
            info.country = Some(country).filter(|c| !c.is_empty());
            info.city = Some(city).filter(|c| !c.is_empty());
        }
        if let Some(w) = host.and_then(|h| self.whois.lookup(h)) {
            info.registered_on = Some(w.registered_on);
            info.expires_on = Some(w.expires_on);
            info.registration_days = Some(w.days());
        }
        (!info.is_empty()).then_some(info)
    }
}
