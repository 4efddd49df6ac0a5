//! Byte-pattern signature scanning with single-byte `??` wildcards.

use std::fs;
use std::path::Path;

use memchr::memmem;
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SignatureError {
    #[error("signature line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("cannot read signature file: {0}")]
    Io(String),
}

/// One compiled signature. `None` bytes match anything.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Signature {
    pub name: String,
    pub pattern: Vec<Option<u8>>,
    anchor_offset: usize,
    anchor: Vec<u8>,
}

impl Signature {
    /// Compiles a hex pattern such as `4141????4242`.
    pub fn new(name: &str, hex_pattern: &str) -> Result<Self, String> {
        if name.is_empty() {
            return Err("empty signature name".into());
        }
        let p = hex_pattern.trim();
        if p.is_empty() || !p.len().is_multiple_of(2) {
            return Err(format!("pattern must be a non-empty even-length hex string: {p:?}"));
        }
        let mut pattern = Vec::with_capacity(p.len() / 2);
        for pair in p.as_bytes().chunks(2) {
            if pair == b"??" {
                pattern.push(None);
            } else {
                let s = std::str::from_utf8(pair).map_err(|_| "non-ascii pattern".to_string())?;
                if !s.bytes().all(|b| b.is_ascii_hexdigit()) {
                    return Err(format!("bad hex byte {s:?}"));
                }
                pattern.push(Some(u8::from_str_radix(s, 16).expect("checked hex")));
            }
        }
        // longest literal run is the search anchor
        let (mut best_start, mut best_len) = (0, 0);
        let mut i = 0;
        while i < pattern.len() {
            if pattern[i].is_some() {
                let start = i;
                while i < pattern.len() && pattern[i].is_some() {
                    i += 1;
                }
                if i - start > best_len {
                    best_start = start;
                    best_len = i - start;
                }
            } else {
                i += 1;
            }
        }
        if best_len == 0 {
            return Err("pattern has no literal bytes".into());
        }
        let anchor = pattern[best_start..best_start + best_len].iter().map(|b| b.unwrap()).collect();
        Ok(Signature { name: name.to_string(), pattern, anchor_offset: best_start, anchor })
    }

    fn matches_at(&self, data: &[u8], start: usize) -> bool {
        data.len() >= start + self.pattern.len()
            && self.pattern.iter().zip(&data[start..]).all(|(p, b)| p.is_none_or(|p| p == *b))
    }

    pub fn is_match(&self, data: &[u8]) -> bool {
        // find_iter skips overlapping hits, so restart one byte past each
        let finder = memmem::Finder::new(&self.anchor);
        let mut from = 0;
        while let Some(rel) = finder.find(&data[from..]) {
            let pos = from + rel;
            if pos >= self.anchor_offset && self.matches_at(data, pos - self.anchor_offset) {
                return true;
            }
            from = pos + 1;
        }
        false
    }
}

/// An ordered collection of signatures.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SignatureDb {
    pub signatures: Vec<Signature>,
}

impl SignatureDb {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: &str, hex_pattern: &str) -> Result<(), String> {
        self.signatures.push(Signature::new(name, hex_pattern)?);
        Ok(())
    }

    /// Adds a signature matching `literal` exactly.
    pub fn add_literal(&mut self, name: &str, literal: &[u8]) {
        self.add(name, &hex::encode(literal)).expect("literal pattern is valid");
    }

    /// Parses `name:hexpattern` lines; `#` comments and blank lines are skipped.
    pub fn parse(text: &str) -> Result<Self, SignatureError> {
        let mut db = SignatureDb::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (name, pattern) = line
                .rsplit_once(':')
                .ok_or_else(|| SignatureError::Malformed { line: i + 1, reason: "expected name:hexpattern".into() })?;
            db.add(name.trim(), pattern)
                .map_err(|reason| SignatureError::Malformed { line: i + 1, reason })?;
        }
        Ok(db)
    }

    pub fn load(path: &Path) -> Result<Self, SignatureError> {
        let text = fs::read_to_string(path).map_err(|e| SignatureError::Io(e.to_string()))?;
        Self::parse(&text)
    }

    pub fn to_text(&self) -> String {
        self.signatures
            .iter()
            .map(|s| {
                let hex: String = s
                    .pattern
                    .iter()
                    .map(|b| b.map_or_else(|| "??".to_string(), |b| format!("{b:02x}")))
                    .collect();
                format!("{}:{}\n", s.name, hex)
            })
            .collect()
    }

    pub fn len(&self) -> usize {
        self.signatures.len()
    }

    pub fn is_empty(&self) -> bool {
        self.signatures.is_empty()
    }

    /// Names of all matching signatures in database order, each reported once.
    pub fn scan(&self, data: &[u8]) -> Vec<String> {
        let mut hits: Vec<String> = Vec::new();
        for sig in &self.signatures {
            if !hits.contains(&sig.name) && sig.is_match(data) {
                hits.push(sig.name.clone());
            }
        }
        hits
    }
}

/// Scans a decoded body.
pub fn signature_scan(decoded: &crate::contentprep::DecodedBody, db: &SignatureDb) -> Vec<String> {
    db.scan(&decoded.bytes)
}
