//! The ICAP service: records every response and optionally enforces verdicts.

use std::collections::HashMap;
use std::io::{BufReader, Write};
use std::net::TcpStream;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{mpsc, Arc, Mutex};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::flags;
use super::http::{Headers, HttpExchange, ResponseHead};
use super::icap::{self, IcapMessage, IcapMethod, IcapResponse};
use super::server::{self, ServerHandle};
use crate::labels::ThreatType;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GatewayMode {
    #[default]
    Collect,
    Enforce,
}

impl std::str::FromStr for GatewayMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "collect" => Ok(GatewayMode::Collect),
            "enforce" => Ok(GatewayMode::Enforce),
            other => Err(format!("unknown gateway mode `{other}`")),
        }
    }
}

/// Result of the synchronous (fast) label sources for one exchange.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Verdict {
    pub blacklist: ThreatType,
    pub signature_hits: Vec<String>,
}

impl Verdict {
    pub fn clean() -> Self {
        Verdict::default()
    }

    /// Malware according to the fast sources: a MALWARE listing or any signature hit.
    pub fn is_malware(&self) -> bool {
        self.blacklist == ThreatType::Malware || !self.signature_hits.is_empty()
    }
}

/// Fast label sources consulted while the client waits.
pub trait VerdictSource: Send + Sync {
    fn verdict(&self, exchange: &HttpExchange) -> Result<Verdict, String>;
}

impl<F> VerdictSource for F
where
    F: Fn(&HttpExchange) -> Result<Verdict, String> + Send + Sync,
{
    fn verdict(&self, exchange: &HttpExchange) -> Result<Verdict, String> {
        self(exchange)
    }
}

/// One captured exchange on its way to the store.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowEmission {
    pub exchange: HttpExchange,
    /// Upload body, kept only when the request declared a non-zero length.
    pub request_body: Option<Vec<u8>>,
    pub flags: Vec<String>,
    pub verdict: Option<Verdict>,
    pub server_ip: Option<String>,
}

impl FlowEmission {
    pub fn new(exchange: HttpExchange) -> Self {
        FlowEmission { exchange, request_body: None, flags: Vec::new(), verdict: None, server_ip: None }
    }

    pub fn has_flag(&self, flag: &str) -> bool {
        self.flags.iter().any(|f| f == flag)
    }
}

#[derive(Debug, Error)]
#[error("flow sink refused emission: {0}")]
pub struct SinkError(pub String);

/// Destination for captured flows; must accept concurrent producers.
pub trait FlowSink: Send + Sync {
    fn emit(&self, emission: FlowEmission) -> Result<(), SinkError>;
}

impl FlowSink for mpsc::Sender<FlowEmission> {
    fn emit(&self, emission: FlowEmission) -> Result<(), SinkError> {
        self.send(emission).map_err(|_| SinkError("pipeline channel closed".into()))
    }
}

impl FlowSink for mpsc::SyncSender<FlowEmission> {
    fn emit(&self, emission: FlowEmission) -> Result<(), SinkError> {
        self.send(emission).map_err(|_| SinkError("pipeline channel closed".into()))
    }
}

/// Collects emissions in memory; handy for tests.
#[derive(Default)]
pub struct MemorySink(pub Mutex<Vec<FlowEmission>>);

impl MemorySink {
    pub fn take(&self) -> Vec<FlowEmission> {
        std::mem::take(&mut *self.0.lock().unwrap())
    }

    pub fn len(&self) -> usize {
        self.0.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl FlowSink for MemorySink {
    fn emit(&self, emission: FlowEmission) -> Result<(), SinkError> {
        self.0.lock().unwrap().push(emission);
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct GatewayConfig {
    pub mode: GatewayMode,
    pub service_name: String,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        GatewayConfig { mode: GatewayMode::Collect, service_name: "flowlab".into() }
    }
}

pub const WARNING_PAGE: &str = "<!DOCTYPE html>\n<html><head><title>Blocked</title></head>\
<body><h1>Warning: malicious content blocked</h1>\
<p>The requested page was classified as malicious and has not been delivered.</p></body></html>\n";

/// The ICAP service. Immutable after construction apart from the upload stash.
pub struct Gateway {
    mode: GatewayMode,
    service_name: String,
    istag: String,
    verdicts: Arc<dyn VerdictSource>,
    sink: Arc<dyn FlowSink>,
    uploads: Mutex<HashMap<String, Vec<u8>>>,
}

static ISTAG_COUNTER: AtomicU64 = AtomicU64::new(0);

impl Gateway {
    pub fn new(config: GatewayConfig, verdicts: Arc<dyn VerdictSource>, sink: Arc<dyn FlowSink>) -> Self {
        let nonce = ISTAG_COUNTER.fetch_add(1, Ordering::Relaxed);
        let istag = format!("\"fl-{:x}-{nonce}\"", std::process::id());
        Gateway {
            mode: config.mode,
            service_name: config.service_name,
            istag,
            verdicts,
            sink,
            uploads: Mutex::new(HashMap::new()),
        }
    }

    pub fn mode(&self) -> GatewayMode {
        self.mode
    }

    pub fn istag(&self) -> &str {
        &self.istag
    }

    fn response(&self, status: u16) -> IcapResponse {
        let mut r = IcapResponse::new(status);
        r.headers.push("ISTag", self.istag.clone());
        r.headers.push("Service", self.service_name.clone());
        r
    }

    /// Handles one parsed ICAP request.
    pub fn serve(&self, msg: &IcapMessage) -> IcapResponse {
        match &msg.method {
            IcapMethod::Options => self.options(),
            IcapMethod::Reqmod => self.reqmod(msg),
            IcapMethod::Respmod => self.respmod(msg),
            IcapMethod::Other(m) => {
                log::debug!("rejecting ICAP method {m}");
                let mut r = self.response(405);
                r.encapsulated = vec![(icap::SectionToken::NullBody, 0)];
                r
            }
        }
    }

    fn options(&self) -> IcapResponse {
        let mut r = self.response(200);
        r.headers.push("Methods", "RESPMOD, REQMOD");
        r.headers.push("Preview", "0");
        r.headers.push("Allow", "204");
        r.headers.push("Options-TTL", "3600");
        r.encapsulated = vec![(icap::SectionToken::NullBody, 0)];
        r
    }

    fn reqmod(&self, msg: &IcapMessage) -> IcapResponse {
        let body = msg.body();
        if !body.is_empty() {
            if let Some(id) = msg.headers.get(icap::HDR_FLOW_ID) {
                self.uploads.lock().unwrap().insert(id.to_string(), body.to_vec());
            }
        }
        self.response(204)
    }

    fn respmod(&self, msg: &IcapMessage) -> IcapResponse {
        let exchange = match icap::exchange_from_message(msg) {
            Ok(x) => x,
            Err(e) => {
                log::warn!("undecodable RESPMOD: {e}");
                return self.response(400);
            }
        };
        let mut emission = FlowEmission::new(exchange);
        emission.flags = msg.headers.tokens(icap::HDR_FLAGS);
        emission.server_ip = msg.headers.get(icap::HDR_SERVER_IP).map(str::to_string);
        if let Some(id) = msg.headers.get(icap::HDR_FLOW_ID) {
            emission.request_body = self.uploads.lock().unwrap().remove(id);
        }

        let verdict = self.verdicts.verdict(&emission.exchange);
        let enforce = match &verdict {
            Ok(v) => self.mode == GatewayMode::Enforce && v.is_malware(),
            Err(_) => false,
        };
        let failed = verdict.is_err();
        match verdict {
            Ok(v) => emission.verdict = Some(v),
            Err(e) => {
                log::error!("verdict failed for {}: {e}", emission.exchange.url());
                emission.flags.push(flags::PIPELINE_ERROR.to_string());
            }
        }
        if let Err(e) = self.sink.emit(emission) {
            log::error!("{e}");
            return self.response(500);
        }
        if failed {
            return self.response(500);
        }
        if enforce {
            let mut head = ResponseHead::new(200);
            head.headers.push("Content-Type", "text/html; charset=utf-8");
            head.headers.push("Content-Length", WARNING_PAGE.len().to_string());
            head.headers.push("Connection", "close");
            let mut r = IcapResponse::with_http_response(200, &head, WARNING_PAGE.as_bytes());
            r.headers.push("ISTag", self.istag.clone());
            r.headers.push("Service", self.service_name.clone());
            return r;
        }
        self.response(204)
    }

    /// Serves ICAP on `addr` until the returned handle is dropped.
    pub fn listen(self: Arc<Self>, addr: &str) -> std::io::Result<ServerHandle> {
        server::spawn(addr, "icap", move |stream| self.handle_connection(stream))
    }

    fn handle_connection(&self, stream: TcpStream) {
        let mut writer = match stream.try_clone() {
            Ok(w) => w,
            Err(_) => return,
        };
        let mut reader = BufReader::new(stream);
        loop {
            let raw = match icap::read_icap_message(&mut reader) {
                Ok(Some(raw)) => raw,
                Ok(None) => return,
                Err(e) => {
                    log::debug!("ICAP read error: {e}");
                    let _ = writer.write_all(&self.response(400).to_bytes());
                    return;
                }
            };
            let response = match icap::parse_icap(&raw) {
                Ok(msg) => self.serve(&msg),
                Err(e) => {
                    log::debug!("ICAP parse error: {e}");
                    self.response(400)
                }
            };
            if writer.write_all(&response.to_bytes()).and_then(|_| writer.flush()).is_err() {
                return;
            }
        }
    }
}

/// Headers the proxy attaches to its RESPMOD beyond the flow metadata.
pub fn respmod_extras(flow_id: &str, flags: &[String], server_ip: Option<&str>) -> Headers {
    let mut h = Headers::new();
    h.push(icap::HDR_FLOW_ID, flow_id);
    if !flags.is_empty() {
        h.push(icap::HDR_FLAGS, flags.join(", "));
    }
    if let Some(ip) = server_ip {
        h.push(icap::HDR_SERVER_IP, ip);
    }
    h
}
