//! HTTP/1.1 forward proxy that consults the ICAP gateway for every exchange.
//!
//! Only plain `http://` absolute-URI requests are handled; `CONNECT` is refused.
//! Each client connection carries one request and is closed afterwards.

use std::collections::HashMap;
use std::io::{self, BufReader, Write};
use std::net::{Ipv4Addr, SocketAddr, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::flags;
use super::gateway::{respmod_extras, FlowEmission, FlowSink};
use super::http::{self, ExchangeHead, Headers, HttpExchange, RequestHead, ResponseHead, SeedFocus};
use super::icap::{self, IcapResponse};
use super::server::{self, ServerHandle};

/// What to do when the ICAP gateway cannot be reached.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FailPolicy {
    /// Forward uninspected and flag the record.
    Open,
    /// Answer 502.
    #[default]
    Closed,
}

impl std::str::FromStr for FailPolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "open" | "fail-open" => Ok(FailPolicy::Open),
            "closed" | "fail-closed" => Ok(FailPolicy::Closed),
            other => Err(format!("unknown fail policy `{other}`")),
        }
    }
}

/// Static upstream override for a host name.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HostTarget {
    pub connect: SocketAddr,
    /// Address reported as the server IP; defaults to the connect address.
    pub reported_ip: Option<Ipv4Addr>,
}

/// Request headers through which agents identify themselves.
pub const AGENT_HEADER: &str = "X-Agent-Id";
pub const SEEDER_HEADER: &str = "X-Seeder-Tag";

#[derive(Debug, Clone)]
pub struct ProxyConfig {
    pub icap_addr: SocketAddr,
    pub fail_policy: FailPolicy,
    pub max_body: usize,
    pub upstream_timeout: Duration,
    pub icap_timeout: Duration,
    pub hosts: HashMap<String, HostTarget>,
    /// Resolve hosts missing from `hosts` through the system resolver.
    pub allow_dns: bool,
}

impl ProxyConfig {
    pub fn new(icap_addr: SocketAddr) -> Self {
        ProxyConfig {
            icap_addr,
            fail_policy: FailPolicy::Closed,
            max_body: super::DEFAULT_MAX_BODY,
            upstream_timeout: Duration::from_secs(10),
            icap_timeout: Duration::from_secs(10),
            hosts: HashMap::new(),
            allow_dns: false,
        }
    }
}

struct Upstream {
    head: ResponseHead,
    body: Vec<u8>,
    truncated: bool,
    server_ip: Option<String>,
}

pub struct Proxy {
    config: ProxyConfig,
    /// Receives records the gateway could not, i.e. when ICAP is down.
    fallback: Arc<dyn FlowSink>,
    next_flow: AtomicU64,
}

impl Proxy {
    pub fn new(config: ProxyConfig, fallback: Arc<dyn FlowSink>) -> Self {
        Proxy { config, fallback, next_flow: AtomicU64::new(1) }
    }

    pub fn listen(self: Arc<Self>, addr: &str) -> io::Result<ServerHandle> {
        server::spawn(addr, "proxy", move |stream| {
            if let Err(e) = self.handle_connection(stream) {
                log::debug!("proxy connection ended with error: {e}");
            }
        })
    }

    fn icap_uri(&self, service: &str) -> String {
        format!("icap://{}/{service}", self.config.icap_addr)
    }

    pub fn handle_connection(&self, stream: TcpStream) -> io::Result<()> {
        let mut client = stream.try_clone()?;
        let mut reader = BufReader::new(stream);
        let Some(raw_head) = http::read_head(&mut reader)? else {
            return Ok(());
        };
        let mut request = match http::parse_request_head(&raw_head) {
            Ok(r) => r,
            Err(e) => return http::write_simple_response(&mut client, 400, "text/plain", e.as_bytes()),
        };
        if request.method.eq_ignore_ascii_case("CONNECT") {
            return http::write_simple_response(&mut client, 405, "text/plain", b"CONNECT not supported");
        }
        let Some((host, port, _)) = http::split_http_url(&request.url) else {
            return http::write_simple_response(&mut client, 400, "text/plain", b"absolute http:// URI required");
        };
        let (upload, _) = http::read_body(&mut reader, http::request_framing(&request), self.config.max_body)?;
        request.headers.remove("Proxy-Connection");

        let (head, body) = self.forward(request, &host, port, upload);
        client.write_all(&head.to_bytes())?;
        client.write_all(&body)?;
        client.flush()
    }

    /// Runs one exchange through REQMOD, upstream and RESPMOD.
    ///
    /// Returns the head and body delivered to the client.
    fn forward(&self, request: RequestHead, host: &str, port: u16, upload: Vec<u8>) -> (ResponseHead, Vec<u8>) {
        let flow_id = self.next_flow.fetch_add(1, Ordering::Relaxed).to_string();
        let started_at = http::to_millis(chrono::Utc::now());
        let agent_id = request.headers.get(AGENT_HEADER).unwrap_or_default().to_string();
        let seeder_tag = request
            .headers
            .get(SEEDER_HEADER)
            .and_then(|s| s.parse::<SeedFocus>().ok())
            .unwrap_or_default();
        let mut record_flags: Vec<String> = Vec::new();

        let reqmod_extra: Headers = [(icap::HDR_FLOW_ID, flow_id.as_str())].into_iter().collect();
        let reqmod = icap::encapsulate_request(&self.icap_uri("reqmod"), &request, &upload, &reqmod_extra);
        let mut icap_up = match self.icap_round_trip(&reqmod) {
            Ok(r) if r.status == 204 || r.status == 200 => true,
            Ok(r) => {
                log::warn!("gateway answered REQMOD with {}", r.status);
                false
            }
            Err(e) => {
                log::warn!("gateway unreachable: {e}");
                false
            }
        };

        let upstream = if !icap_up && self.config.fail_policy == FailPolicy::Closed {
            None
        } else {
            match self.fetch_upstream(&request, host, port, &upload) {
                Ok(u) => Some(u),
                Err(e) => {
                    log::info!("upstream fetch for {} failed: {e}", request.url);
                    record_flags.push(flags::FETCH_ERROR.to_string());
                    None
                }
            }
        };

        let (head, body, server_ip) = match upstream {
            Some(u) => {
                let mut head = u.head;
                if u.truncated {
                    record_flags.push(flags::BODY_TRUNCATED.to_string());
                    head.headers.remove("Transfer-Encoding");
                    head.headers.set("Content-Length", u.body.len().to_string());
                }
                (head, u.body, u.server_ip)
            }
            None => bad_gateway(),
        };

        let exchange = HttpExchange {
            head: ExchangeHead { request, response: head, started_at, agent_id, seeder_tag },
            body,
        };

        if icap_up {
            let extra = respmod_extras(&flow_id, &record_flags, server_ip.as_deref());
            let respmod = icap::encapsulate_with(&exchange, &self.icap_uri("respmod"), &extra);
            match self.icap_round_trip(&respmod) {
                Ok(r) if r.status == 204 => {
                    return (exchange.head.response, exchange.body);
                }
                Ok(r) if r.status == 200 => {
                    if let Some((head, body)) = r.http_response() {
                        return (head, body);
                    }
                    return (exchange.head.response, exchange.body);
                }
                Ok(r) => {
                    // the gateway has already logged the exchange with an error marker
                    log::warn!("gateway answered RESPMOD with {}", r.status);
                    return bad_gateway_parts();
                }
                Err(e) => {
                    log::warn!("gateway lost during RESPMOD: {e}");
                    icap_up = false;
                }
            }
        }

        debug_assert!(!icap_up);
        record_flags.push(flags::ICAP_UNAVAILABLE.to_string());
        let mut emission = FlowEmission::new(exchange.clone());
        emission.flags = record_flags;
        emission.server_ip = server_ip;
        if !upload.is_empty() {
            emission.request_body = Some(upload);
        }
        if let Err(e) = self.fallback.emit(emission) {
            log::error!("{e}");
        }
        match self.config.fail_policy {
            FailPolicy::Open => (exchange.head.response, exchange.body),
            FailPolicy::Closed => bad_gateway_parts(),
        }
    }

    fn icap_round_trip(&self, message: &[u8]) -> io::Result<IcapResponse> {
        let stream = TcpStream::connect_timeout(&self.config.icap_addr, self.config.icap_timeout)?;
        stream.set_read_timeout(Some(self.config.icap_timeout))?;
        stream.set_write_timeout(Some(self.config.icap_timeout))?;
        let mut writer = stream.try_clone()?;
        writer.write_all(message)?;
        writer.flush()?;
        let raw = icap::read_icap_message(&mut BufReader::new(stream))?
            .ok_or_else(|| io::Error::new(io::ErrorKind::UnexpectedEof, "gateway closed connection"))?;
        icap::parse_icap_response(&raw).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e.to_string()))
    }

    fn resolve(&self, host: &str, port: u16) -> io::Result<(SocketAddr, Option<Ipv4Addr>)> {
        if let Some(t) = self.config.hosts.get(host) {
            return Ok((t.connect, t.reported_ip));
        }
        if let Ok(ip) = host.parse::<Ipv4Addr>() {
            return Ok((SocketAddr::from((ip, port)), None));
        }
        if !self.config.allow_dns {
            return Err(io::Error::new(io::ErrorKind::NotFound, format!("no route to host {host}")));
        }
        let addr = (host, port)
            .to_socket_addrs()?
            .next()
            .ok_or_else(|| io::Error::new(io::ErrorKind::NotFound, format!("cannot resolve {host}")))?;
        Ok((addr, None))
    }

    fn fetch_upstream(&self, request: &RequestHead, host: &str, port: u16, upload: &[u8]) -> io::Result<Upstream> {
        let (addr, reported) = self.resolve(host, port)?;
        let stream = TcpStream::connect_timeout(&addr, self.config.upstream_timeout)?;
        stream.set_read_timeout(Some(self.config.upstream_timeout))?;
        stream.set_write_timeout(Some(self.config.upstream_timeout))?;
        let mut outgoing = request.clone();
        if !outgoing.headers.contains("Host") {
            let host_value = if port == 80 { host.to_string() } else { format!("{host}:{port}") };
            outgoing.headers.push("Host", host_value);
        }
        outgoing.headers.set("Connection", "close");
        let mut writer = stream.try_clone()?;
        writer.write_all(&outgoing.to_origin_bytes())?;
        writer.write_all(upload)?;
        writer.flush()?;

        let mut reader = BufReader::new(stream);
        let raw = http::read_head(&mut reader)?
            .ok_or_else(|| io::Error::new(io::ErrorKind::UnexpectedEof, "upstream closed without response"))?;
        let head = http::parse_response_head(&raw).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))?;
        let framing = http::response_framing(&request.method, &head);
        let (body, truncated) = http::read_body(&mut reader, framing, self.config.max_body)?;
        let server_ip = reported.map(|ip| ip.to_string()).or_else(|| Some(addr.ip().to_string()));
        Ok(Upstream { head, body, truncated, server_ip })
    }
}

const BAD_GATEWAY_BODY: &[u8] = b"502 Bad Gateway\n";

fn bad_gateway_parts() -> (ResponseHead, Vec<u8>) {
    let mut head = ResponseHead::new(502);
    head.headers.push("Content-Type", "text/plain");
    head.headers.push("Content-Length", BAD_GATEWAY_BODY.len().to_string());
    head.headers.push("Connection", "close");
    (head, BAD_GATEWAY_BODY.to_vec())
}

fn bad_gateway() -> (ResponseHead, Vec<u8>, Option<String>) {
    let (h, b) = bad_gateway_parts();
    (h, b, None)
}
