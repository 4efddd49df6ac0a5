//! ICAP (RFC 3507) message framing: parsing, encapsulation and responses.
//!
//! An ICAP message carries an ICAP head followed by encapsulated HTTP
//! sections. The `Encapsulated` header lists each section with its byte
//! offset relative to the end of the ICAP head; the final section is the
//! chunked body (or `null-body`).

use std::fmt;
use std::io::{self, BufRead, Read};

use thiserror::Error;

use super::http::{
    self, iso_millis, parse_chunk_size, ExchangeHead, Headers, HttpExchange, RequestHead, ResponseHead, SeedFocus,
};

pub const ICAP_VERSION: &str = "ICAP/1.0";

/// ICAP request header names that carry flow metadata alongside the HTTP sections.
pub const HDR_STARTED: &str = "X-Flow-Started";
pub const HDR_AGENT: &str = "X-Flow-Agent";
pub const HDR_SEEDER: &str = "X-Flow-Seeder";
pub const HDR_FLAGS: &str = "X-Flow-Flags";
pub const HDR_FLOW_ID: &str = "X-Flow-Id";
pub const HDR_SERVER_IP: &str = "X-Server-IP";

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum IcapMethod {
    Options,
    Reqmod,
    Respmod,
    /// Any other token; the gateway answers these with 405.
    Other(String),
}

impl IcapMethod {
    pub fn parse(token: &str) -> Self {
        match token {
            "OPTIONS" => IcapMethod::Options,
            "REQMOD" => IcapMethod::Reqmod,
            "RESPMOD" => IcapMethod::Respmod,
            other => IcapMethod::Other(other.to_string()),
        }
    }

    pub fn as_str(&self) -> &str {
        match self {
            IcapMethod::Options => "OPTIONS",
            IcapMethod::Reqmod => "REQMOD",
            IcapMethod::Respmod => "RESPMOD",
            IcapMethod::Other(s) => s,
        }
    }
}

impl fmt::Display for IcapMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Section names allowed in the `Encapsulated` header.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SectionToken {
    ReqHdr,
    ResHdr,
    ReqBody,
    ResBody,
    OptBody,
    NullBody,
}

impl SectionToken {
    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "req-hdr" => SectionToken::ReqHdr,
            "res-hdr" => SectionToken::ResHdr,
            "req-body" => SectionToken::ReqBody,
            "res-body" => SectionToken::ResBody,
            "opt-body" => SectionToken::OptBody,
            "null-body" => SectionToken::NullBody,
            _ => return None,
        })
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SectionToken::ReqHdr => "req-hdr",
            SectionToken::ResHdr => "res-hdr",
            SectionToken::ReqBody => "req-body",
            SectionToken::ResBody => "res-body",
            SectionToken::OptBody => "opt-body",
            SectionToken::NullBody => "null-body",
        }
    }

    pub fn is_body(self) -> bool {
        matches!(self, SectionToken::ReqBody | SectionToken::ResBody | SectionToken::OptBody | SectionToken::NullBody)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IcapErrorKind {
    Truncated,
    MalformedRequestLine,
    MalformedStatusLine,
    BadHeader,
    MissingEncapsulated,
    MalformedEncapsulated,
    NonMonotonicOffsets,
    BodyNotLast,
    TruncatedChunk,
    BadChunkSize,
}

/// Parse failure with the byte position in the input where it was detected.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{kind:?} at byte {position}: {detail}")]
pub struct IcapParseError {
    pub kind: IcapErrorKind,
    pub position: usize,
    pub detail: String,
}

impl IcapParseError {
    fn new(kind: IcapErrorKind, position: usize, detail: impl Into<String>) -> Self {
        IcapParseError { kind, position, detail: detail.into() }
    }
}

/// A parsed ICAP request.
///
/// `payload` holds the encapsulated header sections verbatim followed by the
/// de-chunked body, so every `encapsulated` offset indexes into it directly.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IcapMessage {
    pub method: IcapMethod,
    pub uri: String,
    pub headers: Headers,
    pub encapsulated: Vec<(SectionToken, usize)>,
    pub payload: Vec<u8>,
}

impl IcapMessage {
    /// Every encapsulated section with its bytes, in wire order.
    pub fn sections(&self) -> Vec<(SectionToken, &[u8])> {
        split_sections(&self.encapsulated, &self.payload)
    }

    pub fn section(&self, token: SectionToken) -> Option<&[u8]> {
        self.sections().into_iter().find(|(t, _)| *t == token).map(|(_, b)| b)
    }

    pub fn body(&self) -> &[u8] {
        self.sections()
            .into_iter()
            .find(|(t, _)| t.is_body())
            .map(|(_, b)| b)
            .unwrap_or(&[])
    }

    /// Re-serialises the message with a chunked body.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = format!("{} {} {}\r\n", self.method, self.uri, ICAP_VERSION).into_bytes();
        write_icap_tail(&mut out, &self.headers, &self.encapsulated, &self.payload);
        out
    }
}

fn split_sections<'a>(encapsulated: &[(SectionToken, usize)], payload: &'a [u8]) -> Vec<(SectionToken, &'a [u8])> {
    let mut out = Vec::with_capacity(encapsulated.len());
    for (i, &(token, off)) in encapsulated.iter().enumerate() {
        let end = if token == SectionToken::NullBody {
            off
        } else {
            encapsulated.get(i + 1).map(|&(_, o)| o).unwrap_or(payload.len())
        };
        let start = off.min(payload.len());
        out.push((token, &payload[start..end.min(payload.len())]));
    }
    out
}

fn write_icap_tail(out: &mut Vec<u8>, headers: &Headers, encapsulated: &[(SectionToken, usize)], payload: &[u8]) {
    for (k, v) in headers.iter() {
        if k.eq_ignore_ascii_case("encapsulated") {
            continue;
        }
        out.extend_from_slice(format!("{k}: {v}\r\n").as_bytes());
    }
    if !encapsulated.is_empty() {
        out.extend_from_slice(format!("Encapsulated: {}\r\n", format_encapsulated(encapsulated)).as_bytes());
    }
    out.extend_from_slice(b"\r\n");
    let body_off = encapsulated.last().map(|&(_, o)| o).unwrap_or(0);
    out.extend_from_slice(&payload[..body_off.min(payload.len())]);
    if let Some(&(token, _)) = encapsulated.last() {
        if token != SectionToken::NullBody {
            out.extend_from_slice(&http::chunk_encode(&payload[body_off.min(payload.len())..]));
        }
    }
}

pub fn format_encapsulated(encapsulated: &[(SectionToken, usize)]) -> String {
    encapsulated
        .iter()
        .map(|(t, o)| format!("{}={}", t.as_str(), o))
        .collect::<Vec<_>>()
        .join(", ")
}

/// Parses an `Encapsulated` header value and checks its ordering invariants.
///
/// `position` is the byte offset of the header within the message, used for errors.
pub fn parse_encapsulated(value: &str, position: usize) -> Result<Vec<(SectionToken, usize)>, IcapParseError> {
    let mut out = Vec::new();
    for part in value.split(',') {
        let part = part.trim();
        let (name, off) = part
            .split_once('=')
            .ok_or_else(|| IcapParseError::new(IcapErrorKind::MalformedEncapsulated, position, part))?;
        let token = SectionToken::parse(name.trim())
            .ok_or_else(|| IcapParseError::new(IcapErrorKind::MalformedEncapsulated, position, name))?;
        let off: usize = off
            .trim()
            .parse()
            .map_err(|_| IcapParseError::new(IcapErrorKind::MalformedEncapsulated, position, part))?;
        out.push((token, off));
    }
    if out.is_empty() {
        return Err(IcapParseError::new(IcapErrorKind::MalformedEncapsulated, position, "empty"));
    }
    if out[0].1 != 0 {
        return Err(IcapParseError::new(IcapErrorKind::NonMonotonicOffsets, position, "first offset must be 0"));
    }
    for w in out.windows(2) {
        if w[1].1 <= w[0].1 {
            return Err(IcapParseError::new(
                IcapErrorKind::NonMonotonicOffsets,
                position,
                format!("{}={} after {}={}", w[1].0.as_str(), w[1].1, w[0].0.as_str(), w[0].1),
            ));
        }
    }
    let bodies = out.iter().filter(|(t, _)| t.is_body()).count();
    if bodies != 1 || !out.last().map(|(t, _)| t.is_body()).unwrap_or(false) {
        return Err(IcapParseError::new(IcapErrorKind::BodyNotLast, position, "exactly one trailing body token required"));
    }
    Ok(out)
}

struct Frame {
    start_line: String,
    headers: Headers,
    encapsulated: Vec<(SectionToken, usize)>,
    payload: Vec<u8>,
}

fn find_head_end(input: &[u8]) -> Option<usize> {
    memchr::memmem::find(input, b"\r\n\r\n").map(|i| i + 4)
}

fn parse_frame(input: &[u8], require_encapsulated: impl Fn(&str) -> bool) -> Result<Frame, IcapParseError> {
    use IcapErrorKind::*;
    if input.is_empty() {
        return Err(IcapParseError::new(Truncated, 0, "empty input"));
    }
    let head_end = find_head_end(input).ok_or_else(|| IcapParseError::new(Truncated, input.len(), "head not terminated"))?;
    let head = &input[..head_end];

    let mut pos = 0usize;
    let mut start_line = String::new();
    let mut headers = Headers::new();
    let mut encapsulated_at = None;
    for (i, raw) in head[..head_end - 2].split(|&b| b == b'\n').enumerate() {
        let line_pos = pos;
        pos += raw.len() + 1;
        let raw = raw.strip_suffix(b"\r").unwrap_or(raw);
        let line = String::from_utf8_lossy(raw);
        if i == 0 {
            start_line = line.into_owned();
            continue;
        }
        if raw.is_empty() {
            break;
        }
        let (k, v) = line
            .split_once(':')
            .ok_or_else(|| IcapParseError::new(BadHeader, line_pos, line.to_string()))?;
        if k.is_empty() || k.contains(char::is_whitespace) {
            return Err(IcapParseError::new(BadHeader, line_pos, line.to_string()));
        }
        if k.eq_ignore_ascii_case("encapsulated") {
            encapsulated_at = Some(line_pos);
        }
        headers.push(k, v.trim());
    }

    let encapsulated = match (headers.get("encapsulated"), encapsulated_at) {
        (Some(v), Some(at)) => parse_encapsulated(v, at)?,
        _ if require_encapsulated(&start_line) => {
            return Err(IcapParseError::new(MissingEncapsulated, head_end, "Encapsulated header required"));
        }
        _ => Vec::new(),
    };

    let mut payload = Vec::new();
    if let Some(&(body_token, body_off)) = encapsulated.last() {
        let body_start = head_end + body_off;
        if input.len() < body_start {
            return Err(IcapParseError::new(Truncated, input.len(), "encapsulated headers shorter than declared"));
        }
        payload.extend_from_slice(&input[head_end..body_start]);
        if body_token != SectionToken::NullBody {
            dechunk(input, body_start, &mut payload)?;
        }
    }
    Ok(Frame { start_line, headers, encapsulated, payload })
}

/// Appends the de-chunked body starting at `pos` to `out`.
fn dechunk(input: &[u8], mut pos: usize, out: &mut Vec<u8>) -> Result<(), IcapParseError> {
    use IcapErrorKind::*;
    loop {
        let rel = memchr::memchr(b'\n', &input[pos.min(input.len())..])
            .ok_or_else(|| IcapParseError::new(TruncatedChunk, input.len(), "missing chunk-size line"))?;
        let line = &input[pos..pos + rel + 1];
        // "0; ieof" and similar extensions are accepted by parse_chunk_size
        let size = parse_chunk_size(line).ok_or_else(|| IcapParseError::new(BadChunkSize, pos, String::from_utf8_lossy(line)))?;
        pos += rel + 1;
        if size == 0 {
            // optional trailers, then the final CRLF; tolerate a missing final CRLF
            while pos < input.len() {
                let rel = match memchr::memchr(b'\n', &input[pos..]) {
                    Some(r) => r,
                    None => break,
                };
                let blank = rel == 0 || (rel == 1 && input[pos] == b'\r');
                pos += rel + 1;
                if blank {
                    break;
                }
            }
            return Ok(());
        }
        let end = pos + size;
        if end > input.len() {
            return Err(IcapParseError::new(TruncatedChunk, input.len(), format!("chunk of {size} bytes cut short")));
        }
        out.extend_from_slice(&input[pos..end]);
        pos = end;
        match input.get(pos..pos + 2) {
            Some(b"\r\n") => pos += 2,
            Some([b'\n', _]) => pos += 1,
            None if input.len() - pos < 2 => {
                return Err(IcapParseError::new(TruncatedChunk, input.len(), "missing chunk terminator"))
            }
            _ => return Err(IcapParseError::new(BadChunkSize, pos, "chunk data longer than declared")),
        }
    }
}

/// Parses one complete ICAP request.
pub fn parse_icap(input: &[u8]) -> Result<IcapMessage, IcapParseError> {
    // the request line is checked before the headers so that a bad first
    // line is reported as such
    if let Some(end) = input.windows(2).position(|w| w == b"\r\n") {
        check_request_line(&String::from_utf8_lossy(&input[..end]))?;
    }
    let frame = parse_frame(input, |line| {
        let m = line.split(' ').next().unwrap_or_default();
        m == "REQMOD" || m == "RESPMOD"
    })?;
    let (method, uri) = check_request_line(&frame.start_line)?;
    Ok(IcapMessage {
        method: IcapMethod::parse(&method),
        uri,
        headers: frame.headers,
        encapsulated: frame.encapsulated,
        payload: frame.payload,
    })
}

fn check_request_line(line: &str) -> Result<(String, String), IcapParseError> {
    let bad = || IcapParseError::new(IcapErrorKind::MalformedRequestLine, 0, line.to_string());
    let mut parts = line.split(' ').filter(|p| !p.is_empty());
    let (Some(method), Some(uri), Some(version), None) = (parts.next(), parts.next(), parts.next(), parts.next()) else {
        return Err(bad());
    };
    if !version.starts_with("ICAP/") || !method.bytes().all(|b| b.is_ascii_uppercase()) {
        return Err(bad());
    }
    Ok((method.to_string(), uri.to_string()))
}

/// An ICAP response as produced by the gateway.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IcapResponse {
    pub status: u16,
    pub headers: Headers,
    pub encapsulated: Vec<(SectionToken, usize)>,
    pub payload: Vec<u8>,
}

impl IcapResponse {
    pub fn new(status: u16) -> Self {
        IcapResponse { status, headers: Headers::new(), encapsulated: Vec::new(), payload: Vec::new() }
    }

    /// A 200 response carrying a replacement HTTP response.
    pub fn with_http_response(status: u16, head: &ResponseHead, body: &[u8]) -> Self {
        let mut r = IcapResponse::new(status);
        let hdr = head.to_bytes();
        let body_token = if body.is_empty() { SectionToken::NullBody } else { SectionToken::ResBody };
        r.encapsulated = vec![(SectionToken::ResHdr, 0), (body_token, hdr.len())];
        r.payload = hdr;
        r.payload.extend_from_slice(body);
        r
    }

    pub fn sections(&self) -> Vec<(SectionToken, &[u8])> {
        split_sections(&self.encapsulated, &self.payload)
    }

    /// The replacement HTTP response, when the gateway modified the message.
    pub fn http_response(&self) -> Option<(ResponseHead, Vec<u8>)> {
        let sections = self.sections();
        let hdr = sections.iter().find(|(t, _)| *t == SectionToken::ResHdr)?.1;
        let head = http::parse_response_head(hdr).ok()?;
        let body = sections.iter().find(|(t, _)| t.is_body()).map(|(_, b)| b.to_vec()).unwrap_or_default();
        Some((head, body))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = format!("{} {} {}\r\n", ICAP_VERSION, self.status, icap_reason(self.status)).into_bytes();
        write_icap_tail(&mut out, &self.headers, &self.encapsulated, &self.payload);
        out
    }
}

pub fn icap_reason(status: u16) -> &'static str {
    match status {
        100 => "Continue",
        200 => "OK",
        204 => "No Modifications Needed",
        400 => "Bad Request",
        404 => "ICAP Service Not Found",
        405 => "Method Not Allowed",
        500 => "Server Error",
        _ => "Unknown",
    }
}

pub fn parse_icap_response(input: &[u8]) -> Result<IcapResponse, IcapParseError> {
    let frame = parse_frame(input, |_| false)?;
    let mut parts = frame.start_line.splitn(3, ' ');
    let version = parts.next().unwrap_or_default();
    let status = parts.next().and_then(|s| s.parse().ok());
    match status {
        Some(status) if version.starts_with("ICAP/") => Ok(IcapResponse {
            status,
            headers: frame.headers,
            encapsulated: frame.encapsulated,
            payload: frame.payload,
        }),
        _ => Err(IcapParseError::new(IcapErrorKind::MalformedStatusLine, 0, frame.start_line)),
    }
}

/// Reads exactly one ICAP message (request or response) from a stream.
///
/// Returns `Ok(None)` on EOF before the first byte.
pub fn read_icap_message<R: BufRead>(reader: &mut R) -> io::Result<Option<Vec<u8>>> {
    let Some(mut raw) = http::read_head(reader)? else {
        return Ok(None);
    };
    let (_, headers) = http::parse_head_lines(&raw).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))?;
    let Some(value) = headers.get("encapsulated") else {
        return Ok(Some(raw));
    };
    let encapsulated =
        parse_encapsulated(value, 0).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e.to_string()))?;
    let &(body_token, body_off) = encapsulated.last().expect("non-empty");
    let start = raw.len();
    raw.resize(start + body_off, 0);
    reader.read_exact(&mut raw[start..])?;
    if body_token == SectionToken::NullBody {
        return Ok(Some(raw));
    }
    loop {
        let mut line = Vec::new();
        if reader.read_until(b'\n', &mut line)? == 0 {
            return Err(io::Error::new(io::ErrorKind::UnexpectedEof, "truncated ICAP body"));
        }
        let size = parse_chunk_size(&line).ok_or_else(|| io::Error::new(io::ErrorKind::InvalidData, "bad chunk size"))?;
        raw.extend_from_slice(&line);
        if size == 0 {
            let mut end = Vec::new();
            reader.read_until(b'\n', &mut end)?;
            raw.extend_from_slice(&end);
            return Ok(Some(raw));
        }
        let s = raw.len();
        raw.resize(s + size + 2, 0);
        reader.read_exact(&mut raw[s..])?;
    }
}

/// ICAP request headers attached by [`encapsulate_with`] besides the flow metadata.
pub fn respmod_request(service_uri: &str, exchange: &HttpExchange, extra: &Headers) -> IcapMessage {
    let req_hdr = exchange.head.request.to_bytes();
    let res_hdr = exchange.head.response.to_bytes();
    let mut headers = Headers::new();
    headers.push("Host", icap_host(service_uri));
    headers.push("Allow", "204");
    headers.push(HDR_STARTED, iso_millis::format(&exchange.head.started_at));
    headers.push(HDR_AGENT, exchange.head.agent_id.clone());
    headers.push(HDR_SEEDER, exchange.head.seeder_tag.as_str());
    for (k, v) in extra.iter() {
        headers.push(k, v);
    }
    let body_token = if exchange.body.is_empty() { SectionToken::NullBody } else { SectionToken::ResBody };
    let encapsulated =
        vec![(SectionToken::ReqHdr, 0), (SectionToken::ResHdr, req_hdr.len()), (body_token, req_hdr.len() + res_hdr.len())];
    let mut payload = req_hdr;
    payload.extend_from_slice(&res_hdr);
    payload.extend_from_slice(&exchange.body);
    IcapMessage { method: IcapMethod::Respmod, uri: service_uri.to_string(), headers, encapsulated, payload }
}

/// RESPMOD framing for an exchange, addressed to the default service URI.
pub fn encapsulate(exchange: &HttpExchange) -> Vec<u8> {
    encapsulate_with(exchange, "icap://localhost/respmod", &Headers::new())
}

pub fn encapsulate_with(exchange: &HttpExchange, service_uri: &str, extra: &Headers) -> Vec<u8> {
    respmod_request(service_uri, exchange, extra).to_bytes()
}

/// REQMOD framing for an outgoing request and optional upload body.
pub fn encapsulate_request(service_uri: &str, request: &RequestHead, body: &[u8], extra: &Headers) -> Vec<u8> {
    let req_hdr = request.to_bytes();
    let mut headers = Headers::new();
    headers.push("Host", icap_host(service_uri));
    headers.push("Allow", "204");
    for (k, v) in extra.iter() {
        headers.push(k, v);
    }
    let body_token = if body.is_empty() { SectionToken::NullBody } else { SectionToken::ReqBody };
    let encapsulated = vec![(SectionToken::ReqHdr, 0), (body_token, req_hdr.len())];
    let mut payload = req_hdr;
    payload.extend_from_slice(body);
    IcapMessage { method: IcapMethod::Reqmod, uri: service_uri.to_string(), headers, encapsulated, payload }.to_bytes()
}

fn icap_host(uri: &str) -> &str {
    uri.strip_prefix("icap://").and_then(|r| r.split('/').next()).unwrap_or("localhost")
}

#[derive(Debug, Error)]
pub enum ExchangeDecodeError {
    #[error("missing {0} section")]
    MissingSection(&'static str),
    #[error("bad encapsulated HTTP head: {0}")]
    BadHead(String),
    #[error("bad flow metadata header {0}")]
    BadMetadata(&'static str),
}

/// Rebuilds the [`HttpExchange`] carried by a RESPMOD message.
pub fn exchange_from_message(msg: &IcapMessage) -> Result<HttpExchange, ExchangeDecodeError> {
    let req = msg.section(SectionToken::ReqHdr).ok_or(ExchangeDecodeError::MissingSection("req-hdr"))?;
    let res = msg.section(SectionToken::ResHdr).ok_or(ExchangeDecodeError::MissingSection("res-hdr"))?;
    let request = http::parse_request_head(req).map_err(ExchangeDecodeError::BadHead)?;
    let response = http::parse_response_head(res).map_err(ExchangeDecodeError::BadHead)?;
    let started_at = match msg.headers.get(HDR_STARTED) {
        Some(v) => iso_millis::parse(v).map_err(|_| ExchangeDecodeError::BadMetadata(HDR_STARTED))?,
        None => http::to_millis(chrono::Utc::now()),
    };
    let seeder_tag = match msg.headers.get(HDR_SEEDER) {
        Some(v) => v.parse::<SeedFocus>().map_err(|_| ExchangeDecodeError::BadMetadata(HDR_SEEDER))?,
        None => SeedFocus::Benign,
    };
    let agent_id = msg.headers.get(HDR_AGENT).unwrap_or_default().to_string();
    Ok(HttpExchange {
        head: ExchangeHead { request, response, started_at, agent_id, seeder_tag },
        body: msg.body().to_vec(),
    })
}

/// Reads a whole message from any reader; convenience for tests and tools.
pub fn read_all_icap<R: Read>(r: R) -> io::Result<Option<Vec<u8>>> {
    read_icap_message(&mut io::BufReader::new(r))
}
