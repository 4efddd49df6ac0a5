//! Conjunctive field filters over the JSON form of a record.

use std::cmp::Ordering;
use std::fmt;

use serde_json::Value;

use super::StoreError;

/// A dotted path such as `labels.signature_hits` or `extra.wire:flags`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FieldPath(Vec<String>);

impl FieldPath {
    pub fn parse(path: &str) -> Result<Self, StoreError> {
        let bad = || StoreError::BadFieldPath(path.to_string());
        if path.is_empty() {
            return Err(bad());
        }
        let segments: Vec<String> = path.split('.').map(str::to_string).collect();
        for s in &segments {
            if s.is_empty() || !s.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | ':')) {
                return Err(bad());
            }
        }
        Ok(FieldPath(segments))
    }

    pub fn resolve<'a>(&self, value: &'a Value) -> Option<&'a Value> {
        let mut cur = value;
        for seg in &self.0 {
            cur = match cur {
                Value::Object(m) => m.get(seg)?,
                Value::Array(a) => a.get(seg.parse::<usize>().ok()?)?,
                _ => return None,
            };
        }
        Some(cur)
    }
}

impl fmt::Display for FieldPath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0.join("."))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Predicate {
    /// Field equals the value; array fields match when they contain it.
    Equals(Value),
    /// Field present, non-null and not an empty array/object.
    Exists,
    /// `min <= field < max`, numbers against numbers and strings against strings.
    Range { min: Option<Value>, max: Option<Value> },
    /// String field starting with the prefix.
    Prefix(String),
}

impl Predicate {
    pub fn matches(&self, field: Option<&Value>) -> bool {
        let Some(v) = field else {
            return false;
        };
        match self {
            Predicate::Exists => match v {
                Value::Null => false,
                Value::Array(a) => !a.is_empty(),
                Value::Object(o) => !o.is_empty(),
                _ => true,
            },
            Predicate::Equals(want) => v == want || matches!(v, Value::Array(a) if a.contains(want)),
            Predicate::Prefix(p) => v.as_str().is_some_and(|s| s.starts_with(p.as_str())),
            Predicate::Range { min, max } => {
                let lo_ok = min.as_ref().is_none_or(|m| compare(v, m).is_some_and(|o| o != Ordering::Less));
                let hi_ok = max.as_ref().is_none_or(|m| compare(v, m) == Some(Ordering::Less));
                lo_ok && hi_ok
            }
        }
    }
}

fn compare(a: &Value, b: &Value) -> Option<Ordering> {
    match (a, b) {
        (Value::Number(x), Value::Number(y)) => x.as_f64()?.partial_cmp(&y.as_f64()?),
        (Value::String(x), Value::String(y)) => Some(x.cmp(y)),
        _ => None,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Clause {
    pub path: FieldPath,
    pub predicate: Predicate,
}

/// Conjunction of clauses; the empty filter matches everything.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Filter {
    pub clauses: Vec<Clause>,
}

impl Filter {
    pub fn all() -> Self {
        Filter::default()
    }

    fn with(mut self, path: &str, predicate: Predicate) -> Result<Self, StoreError> {
        self.clauses.push(Clause { path: FieldPath::parse(path)?, predicate });
        Ok(self)
    }

    pub fn equals(self, path: &str, value: impl Into<Value>) -> Result<Self, StoreError> {
        self.with(path, Predicate::Equals(value.into()))
    }

    pub fn exists(self, path: &str) -> Result<Self, StoreError> {
        self.with(path, Predicate::Exists)
    }

    pub fn range(self, path: &str, min: Option<Value>, max: Option<Value>) -> Result<Self, StoreError> {
        self.with(path, Predicate::Range { min, max })
    }

    pub fn prefix(self, path: &str, prefix: &str) -> Result<Self, StoreError> {
        self.with(path, Predicate::Prefix(prefix.to_string()))
    }

    pub fn matches(&self, record: &Value) -> bool {
        self.clauses.iter().all(|c| c.predicate.matches(c.path.resolve(record)))
    }

    /// Parses one textual clause:
    ///
    /// * `path?` – exists
    /// * `path=value` – equals (value parsed as JSON, else taken as a string)
    /// * `path^=prefix` – prefix
    /// * `path~lo..hi` – range, either bound may be empty
    pub fn parse_clause(self, text: &str) -> Result<Self, StoreError> {
        let text = text.trim();
        if let Some(path) = text.strip_suffix('?') {
            return self.exists(path);
        }
        if let Some((path, prefix)) = text.split_once("^=") {
            return self.prefix(path, prefix);
        }
        if let Some((path, bounds)) = text.split_once('~') {
            let (lo, hi) = bounds.split_once("..").ok_or_else(|| StoreError::BadFieldPath(text.to_string()))?;
            let bound = |s: &str| (!s.is_empty()).then(|| loose_value(s));
            return self.range(path, bound(lo), bound(hi));
        }
        if let Some((path, value)) = text.split_once('=') {
            return self.equals(path, loose_value(value));
        }
        Err(StoreError::BadFieldPath(text.to_string()))
    }
}

fn loose_value(s: &str) -> Value {
    serde_json::from_str(s).unwrap_or_else(|_| Value::String(s.to_string()))
}
