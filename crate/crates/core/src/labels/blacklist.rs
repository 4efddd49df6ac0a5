//! Hash-prefix URL blacklist.
//!
//! Each listed URL expression is stored as its full SHA-256 digest; the
//! 4-byte prefixes are derived at load time. A lookup first probes the prefix
//! set and only reports a category once the full digest confirms it.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::io;
use std::path::Path;

use sha2::{Digest, Sha256};
use thiserror::Error;

use super::url::canonicalize_url;
use super::ThreatType;

pub const PREFIX_LEN: usize = 4;

pub type FullHash = [u8; 32];
pub type HashPrefix = [u8; PREFIX_LEN];

#[derive(Debug, Error)]
pub enum BlacklistError {
    #[error("blacklist line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Default, Clone)]
struct CategoryList {
    prefixes: HashSet<HashPrefix>,
    full: HashSet<FullHash>,
}

/// Per-category prefix and full-hash sets.
#[derive(Debug, Default, Clone)]
pub struct BlacklistDb {
    lists: BTreeMap<ThreatType, CategoryList>,
}

/// Diagnostics from a single lookup.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LookupTrace {
    pub expressions: Vec<String>,
    pub prefix_hits: usize,
    pub confirmed: Vec<ThreatType>,
}

pub fn expression_hash(expr: &str) -> FullHash {
    Sha256::digest(expr.as_bytes()).into()
}

impl BlacklistDb {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a full hash; its prefix is derived.
    pub fn insert_hash(&mut self, category: ThreatType, hash: FullHash) {
        let list = self.lists.entry(category).or_default();
        list.prefixes.insert(prefix_of(&hash));
        list.full.insert(hash);
    }

    /// Lists a single expression (`host/path`), e.g. `evil.test/`.
    pub fn insert_expression(&mut self, category: ThreatType, expr: &str) {
        self.insert_hash(category, expression_hash(expr));
    }

    /// Lists the exact canonical host+path(+query) of `url`.
    pub fn insert_url(&mut self, category: ThreatType, url: &str) -> Result<(), super::url::UrlError> {
        let c = canonicalize_url(url)?;
        let expr = c.expressions().into_iter().next().expect("at least one expression");
        self.insert_expression(category, &expr);
        Ok(())
    }

    /// Adds a bare prefix with no backing full hash. Only useful for tests.
    pub fn insert_prefix_only(&mut self, category: ThreatType, prefix: HashPrefix) {
        self.lists.entry(category).or_default().prefixes.insert(prefix);
    }

    pub fn len(&self) -> usize {
        self.lists.values().map(|l| l.full.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn contains_full(&self, category: ThreatType, hash: &FullHash) -> bool {
        self.lists.get(&category).is_some_and(|l| l.full.contains(hash))
    }

    /// Iterates `(category, full hash)` pairs in a stable order.
    pub fn entries(&self) -> Vec<(ThreatType, FullHash)> {
        let mut out: Vec<_> =
            self.lists.iter().flat_map(|(c, l)| l.full.iter().map(move |h| (*c, *h))).collect();
        out.sort();
        out
    }

    /// Parses `category<TAB>sha256-hex` lines; `#` comments and blank lines are skipped.
    pub fn parse(text: &str) -> Result<Self, BlacklistError> {
        let mut db = BlacklistDb::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |reason: &str| BlacklistError::Parse { line: i + 1, reason: reason.to_string() };
            let (cat, hex_hash) = line.split_once('\t').ok_or_else(|| err("expected category<TAB>hash"))?;
            let category: ThreatType = cat.trim().parse().map_err(|e: String| err(&e))?;
            let bytes = hex::decode(hex_hash.trim()).map_err(|_| err("hash is not hex"))?;
            let hash: FullHash = bytes.try_into().map_err(|_| err("hash must be 32 bytes"))?;
            db.insert_hash(category, hash);
        }
        Ok(db)
    }

    pub fn load(path: &Path) -> Result<Self, BlacklistError> {
        Self::parse(&fs::read_to_string(path)?)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (c, h) in self.entries() {
            out.push_str(&format!("{}\t{}\n", c.as_str(), hex::encode(h)));
        }
        out
    }

    pub fn save(&self, path: &Path) -> io::Result<()> {
        fs::write(path, self.to_text())
    }

    pub fn lookup(&self, url: &str) -> ThreatType {
        self.lookup_traced(url).confirmed.first().copied().unwrap_or(ThreatType::None)
    }

    /// Lookup that also reports prefix hits; `confirmed` is sorted by priority.
    pub fn lookup_traced(&self, url: &str) -> LookupTrace {
        let mut trace = LookupTrace::default();
        let Ok(canonical) = canonicalize_url(url) else {
            return trace;
        };
        trace.expressions = canonical.expressions();
        for expr in &trace.expressions {
            let hash = expression_hash(expr);
            let prefix = prefix_of(&hash);
            for (category, list) in &self.lists {
                if list.prefixes.contains(&prefix) {
                    trace.prefix_hits += 1;
                    if list.full.contains(&hash) && !trace.confirmed.contains(category) {
                        trace.confirmed.push(*category);
                    }
                }
            }
        }
        trace.confirmed.sort_by_key(|c| c.priority());
        trace
    }
}

pub fn prefix_of(hash: &FullHash) -> HashPrefix {
    let mut p = [0u8; PREFIX_LEN];
    p.copy_from_slice(&hash[..PREFIX_LEN]);
    p
}

/// Convenience wrapper matching the free-function form of the lookup.
pub fn blacklist_lookup(url: &str, db: &BlacklistDb) -> ThreatType {
    db.lookup(url)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn listed_url_is_found() {
        let mut db = BlacklistDb::new();
        db.insert_url(ThreatType::Malware, "http://evil.test/drop/x.js").unwrap();
        assert_eq!(db.lookup("HTTP://EVIL.test:80/drop/./x.js#frag"), ThreatType::Malware);
        assert_eq!(db.lookup("http://good.test/"), ThreatType::None);
    }

    #[test]
    fn host_listing_covers_paths_and_subdomains() {
        let mut db = BlacklistDb::new();
        db.insert_expression(ThreatType::SocialEngineering, "phish.test/");
        assert_eq!(db.lookup("http://login.phish.test/account/verify"), ThreatType::SocialEngineering);
    }

    #[test]
    fn priority_orders_overlapping_categories() {
        let mut db = BlacklistDb::new();
        db.insert_expression(ThreatType::SocialEngineering, "x.test/");
        db.insert_expression(ThreatType::Malware, "x.test/a");
        db.insert_expression(ThreatType::UnwantedSoftware, "x.test/");
        assert_eq!(db.lookup("http://x.test/a"), ThreatType::Malware);
        assert_eq!(db.lookup("http://x.test/b"), ThreatType::UnwantedSoftware);
    }

    #[test]
    fn prefix_collision_without_full_hash_is_not_a_hit() {
        // found by birthday search over "c<n>.test/": both hash to 94ef7bea...
        let mut db = BlacklistDb::new();
        db.insert_expression(ThreatType::Malware, "c19592.test/");
        assert_eq!(prefix_of(&expression_hash("c85438.test/")), [0x94, 0xef, 0x7b, 0xea]);
        let trace = db.lookup_traced("http://c85438.test/");
        assert_eq!(trace.prefix_hits, 1);
        assert!(trace.confirmed.is_empty());
        assert_eq!(db.lookup("http://c85438.test/"), ThreatType::None);
        assert_eq!(db.lookup("http://c19592.test/"), ThreatType::Malware);
    }

    #[test]
    fn file_format_round_trips() {
        let mut db = BlacklistDb::new();
        db.insert_expression(ThreatType::Malware, "a.test/");
        db.insert_expression(ThreatType::PotentiallyHarmfulApplications, "b.test/");
        let text = db.to_text();
        assert!(text.starts_with("MALWARE\t"));
        let back = BlacklistDb::parse(&text).unwrap();
        assert_eq!(back.entries(), db.entries());
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let err = BlacklistDb::parse("# c\nMALWARE\tzz\n").unwrap_err();
        assert!(matches!(err, BlacklistError::Parse { line: 2, .. }));
        assert!(BlacklistDb::parse("BOGUS\t00\n").is_err());
    }
}
