//! Web traffic capture and malware labeling toolkit.
//!
//! The crate is organised by pipeline stage:
//!
//! * [`wire`] – ICAP gateway and the HTTP forward proxy that feeds it.
//! * [`contentprep`] – transfer/content decoding of captured bodies.
//! * [`flowstore`] – append-only flow records plus a SHA-1 addressed blob store.
//! * [`features`] – tolerant HTML/JS parsing and the 58-column static feature vector.
//! * [`labels`] – blacklist, signature scanning and the asynchronous multi-engine scan lifecycle.
//! * [`augment`] – GeoIP and registration-window lookups over local fixtures.
//! * [`agents`] – deterministic headless user agents and their supervisor.
//! * [`forest`] – decision trees, random forests and evaluation metrics.
//! * [`pipeline`] – orchestration, configuration, reports and the synthetic web server.

pub mod agents;
pub mod augment;
pub mod contentprep;
pub mod exec;
pub mod features;
pub mod flowstore;
pub mod forest;
pub mod labels;
pub mod pipeline;
pub mod wire;

pub use exec::Exec;
