//! The 58-column feature vector and its fixed column order.

use std::fmt;
use std::sync::OnceLock;

use serde::de::{self, MapAccess, Visitor};
use serde::ser::SerializeMap;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};

/// Bumped whenever a feature definition in `docs/features.md` changes.
pub const LEDGER_VERSION: &str = "features-v1";

pub const FEATURE_COUNT: usize = 58;

/// Column order of every serialized vector.
pub const FEATURE_NAMES: [&str; FEATURE_COUNT] = [
    "NumclearAttributes",
    "Filesize",
    "crypt",
    "NumWords",
    "ishtml",
    "NumLongStrings",
    "TotalEntropy",
    "NumReassignmentOfSpecialObject",
    "onerror",
    "isjs",
    "NumActiveXObject",
    "MaxStringEntropy",
    "NumKeywords",
    "NumfireEvent",
    "NumreplaceNode",
    "NumBracketLookups",
    "ShellcodeProbability",
    "AvgStringLength",
    "EntropyDensity",
    "NumattachEvent",
    "containsjstags",
    "TotalStringEntropy",
    "onunload",
    "script",
    "NumHTMLNodes",
    "MaxStrLen",
    "IP_address",
    "NumBracketCalls",
    "NuminsertAdjacentElement",
    "NumNodes",
    "ishtmlwithjse4x",
    "NumStrings",
    "evil",
    "NumiframeString",
    "NumaddEventListener",
    "NumsetInterval",
    "scriptTagDataURLCount",
    "htmlEventCount",
    "AvgLinesize",
    "shell",
    "NumPackerFunctions",
    "parsingerror",
    "ishtmlwithjs",
    "onload",
    "NumsetTimeout",
    "TotalStringLength",
    "embed",
    "Numeval",
    "object",
    "frame",
    "spray",
    "NumLongVarOrFunNames",
    "iframe",
    "isjse4x",
    "NumdispatchEvent",
    "form",
    "NumFunctionCalls",
    "onbeforeload",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureKind {
    Count,
    Flag,
    Real,
}

/// Columns holding non-integral values.
const REAL: &[&str] = &[
    "TotalEntropy",
    "MaxStringEntropy",
    "ShellcodeProbability",
    "AvgStringLength",
    "EntropyDensity",
    "TotalStringEntropy",
    "AvgLinesize",
];

const FLAGS: &[&str] = &["ishtml", "isjs", "ishtmlwithjse4x", "parsingerror", "ishtmlwithjs", "isjse4x"];

pub fn feature_kind(name: &str) -> FeatureKind {
    if REAL.contains(&name) {
        FeatureKind::Real
    } else if FLAGS.contains(&name) {
        FeatureKind::Flag
    } else {
        FeatureKind::Count
    }
}

pub fn feature_index(name: &str) -> Option<usize> {
    FEATURE_NAMES.iter().position(|n| *n == name)
}

/// SHA-256 over the ledger version and the column names, one per line.
pub fn ledger_hash() -> &'static str {
    static HASH: OnceLock<String> = OnceLock::new();
    HASH.get_or_init(|| {
        let mut h = Sha256::new();
        h.update(LEDGER_VERSION.as_bytes());
        for n in FEATURE_NAMES {
            h.update(b"\n");
            h.update(n.as_bytes());
        }
        hex::encode(h.finalize())
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureVector(pub [f64; FEATURE_COUNT]);

impl Default for FeatureVector {
    fn default() -> Self {
        FeatureVector([0.0; FEATURE_COUNT])
    }
}

impl FeatureVector {
    pub fn get(&self, name: &str) -> f64 {
        self.0[feature_index(name).unwrap_or_else(|| panic!("unknown feature {name}"))]
    }

    pub fn set(&mut self, name: &str, value: f64) {
        let i = feature_index(name).unwrap_or_else(|| panic!("unknown feature {name}"));
        self.0[i] = value;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn from_slice(values: &[f64]) -> Option<Self> {
        Some(FeatureVector(values.try_into().ok()?))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&'static str, f64)> + '_ {
        FEATURE_NAMES.iter().copied().zip(self.0.iter().copied())
    }

    /// Checks the per-kind bounds every extracted vector satisfies.
    pub fn check_bounds(&self) -> Result<(), String> {
        for (name, v) in self.iter() {
            if !v.is_finite() || v < 0.0 {
                return Err(format!("{name} = {v}"));
            }
            match feature_kind(name) {
                FeatureKind::Flag if v != 0.0 && v != 1.0 => return Err(format!("{name} = {v} is not a flag")),
                FeatureKind::Count if v.fract() != 0.0 => return Err(format!("{name} = {v} is not a count")),
                _ => {}
            }
        }
        for name in ["TotalEntropy", "MaxStringEntropy", "TotalStringEntropy"] {
            if self.get(name) > 8.0 {
                return Err(format!("{name} above 8 bits"));
            }
        }
        if self.get("ShellcodeProbability") > 1.0 {
            return Err("ShellcodeProbability above 1".into());
        }
        if self.get("EntropyDensity") != self.get("TotalEntropy") / 8.0 {
            return Err("EntropyDensity differs from TotalEntropy / 8".into());
        }
        Ok(())
    }

    /// CSV header row in ledger order.
    pub fn csv_header() -> String {
        FEATURE_NAMES.join(",")
    }

    pub fn csv_row(&self) -> String {
        self.iter().map(|(n, v)| format_value(n, v)).collect::<Vec<_>>().join(",")
    }
}

fn format_value(name: &str, v: f64) -> String {
    if feature_kind(name) != FeatureKind::Real && v.fract() == 0.0 {
        format!("{}", v as u64)
    } else {
        format!("{v}")
    }
}

impl Serialize for FeatureVector {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let mut m = s.serialize_map(Some(FEATURE_COUNT))?;
        for (name, v) in self.iter() {
            if feature_kind(name) != FeatureKind::Real && v.fract() == 0.0 && v >= 0.0 {
                m.serialize_entry(name, &(v as u64))?;
            } else {
                m.serialize_entry(name, &v)?;
            }
        }
        m.end()
    }
}

impl<'de> Deserialize<'de> for FeatureVector {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        struct V;
        impl<'de> Visitor<'de> for V {
            type Value = FeatureVector;

            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                write!(f, "a map of the {FEATURE_COUNT} named features")
            }

            fn visit_map<A: MapAccess<'de>>(self, mut map: A) -> Result<FeatureVector, A::Error> {
                let mut out = [f64::NAN; FEATURE_COUNT];
                while let Some((k, v)) = map.next_entry::<String, f64>()? {
                    let i = feature_index(&k).ok_or_else(|| de::Error::unknown_field(&k, &FEATURE_NAMES))?;
                    out[i] = v;
                }
                if let Some(i) = out.iter().position(|v| v.is_nan()) {
                    return Err(de::Error::missing_field(FEATURE_NAMES[i]));
                }
                Ok(FeatureVector(out))
            }
        }
        d.deserialize_map(V)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_unique_and_counted() {
        let mut n = FEATURE_NAMES.to_vec();
        n.sort_unstable();
        n.dedup();
        assert_eq!(n.len(), 58);
        assert_eq!(REAL.len() + FLAGS.len() + 45, 58);
        for r in REAL.iter().chain(FLAGS) {
            assert!(feature_index(r).is_some(), "{r}");
        }
    }

    #[test]
    fn serde_keeps_order_and_round_trips() {
        let mut v = FeatureVector::default();
        v.set("Filesize", 12.0);
        v.set("TotalEntropy", 2.5);
        v.set("EntropyDensity", 2.5 / 8.0);
        let json = serde_json::to_string(&v).unwrap();
        assert!(json.starts_with("{\"NumclearAttributes\":0,\"Filesize\":12,"));
        let back: FeatureVector = serde_json::from_str(&json).unwrap();
        assert_eq!(back, v);
        assert!(serde_json::from_str::<FeatureVector>("{\"Filesize\":1}").is_err());
    }

    #[test]
    fn ledger_hash_is_stable() {
        assert_eq!(ledger_hash().len(), 64);
        assert_eq!(ledger_hash(), ledger_hash());
    }
}
