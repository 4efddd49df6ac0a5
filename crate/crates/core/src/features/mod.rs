//! Static HTML/JavaScript features.
//!
//! [`extract_features`] turns a decoded body into the 58-column
//! [`FeatureVector`]. Column semantics are documented in `docs/features.md`;
//! [`ledger_hash`] identifies that column set inside model files.

pub mod entropy;
pub mod extract;
pub mod html;
pub mod js;
pub mod vector;

pub use entropy::{shannon_entropy, shellcode_probability, ShellcodeParams};
pub use extract::{doc_kind, extract_batch, extract_features, extract_with, strings_to_script_ratio, DocKind, ExtractConfig};
pub use html::{parse_html, Element, HtmlDoc, ScriptBlock, ScriptSource};
pub use js::{parse_js, JsAst};
pub use vector::{feature_index, feature_kind, ledger_hash, FeatureKind, FeatureVector, FEATURE_COUNT, FEATURE_NAMES};
