//! Capture path: the ICAP gateway and the HTTP forward proxy that feeds it.
//!
//! The proxy sends a REQMOD for every client request and a RESPMOD for every
//! upstream response. The gateway records each RESPMOD as a [`FlowEmission`]
//! and, in enforce mode, swaps malicious responses for a warning page.

pub mod gateway;
pub mod http;
pub mod icap;
pub mod proxy;
pub mod server;

pub use gateway::{FlowEmission, FlowSink, Gateway, GatewayConfig, GatewayMode, SinkError, Verdict, VerdictSource};
pub use http::{ExchangeHead, Headers, HttpExchange, RequestHead, ResponseHead, SeedFocus};
pub use icap::{encapsulate, parse_icap, IcapMessage, IcapMethod, IcapParseError, IcapResponse};
pub use proxy::{FailPolicy, HostTarget, Proxy, ProxyConfig};
pub use server::ServerHandle;

/// Default ICAP listen port.
pub const DEFAULT_ICAP_PORT: u16 = 1344;
/// Default forward proxy listen port.
pub const DEFAULT_PROXY_PORT: u16 = 3128;
/// Largest response body kept by the proxy; longer bodies are truncated and flagged.
pub const DEFAULT_MAX_BODY: usize = 64 * 1024 * 1024;

/// Record flags set on the capture path.
pub mod flags {
    pub const FETCH_ERROR: &str = "fetch_error";
    pub const ICAP_UNAVAILABLE: &str = "icap_unavailable";
    pub const PIPELINE_ERROR: &str = "pipeline_error";
    pub const BODY_TRUNCATED: &str = "body_truncated";
}
