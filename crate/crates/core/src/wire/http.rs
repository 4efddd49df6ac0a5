//! Minimal HTTP/1.1 message model and blocking stream I/O.
//!
//! Header names keep their original casing; lookups are case-insensitive.

use std::fmt;
use std::io::{self, BufRead, Read, Write};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

/// Largest accepted header block for HTTP and ICAP heads.
pub const MAX_HEAD_BYTES: usize = 64 * 1024;

/// Ordered header list with case-insensitive lookup.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Headers(pub Vec<(String, String)>);

impl Headers {
    pub fn new() -> Self {
        Headers(Vec::new())
    }

    pub fn get(&self, name: &str) -> Option<&str> {
        self.0
            .iter()
            .find(|(k, _)| k.eq_ignore_ascii_case(name))
            .map(|(_, v)| v.as_str())
    }

    pub fn get_all<'a>(&'a self, name: &'a str) -> impl Iterator<Item = &'a str> + 'a {
        self.0
            .iter()
            .filter(move |(k, _)| k.eq_ignore_ascii_case(name))
            .map(|(_, v)| v.as_str())
    }

    pub fn contains(&self, name: &str) -> bool {
        self.get(name).is_some()
    }

    pub fn push(&mut self, name: impl Into<String>, value: impl Into<String>) {
        self.0.push((name.into(), value.into()));
    }

    /// Replaces every header called `name` with a single value.
    pub fn set(&mut self, name: &str, value: impl Into<String>) {
        self.remove(name);
        self.0.push((name.to_string(), value.into()));
    }

    pub fn remove(&mut self, name: &str) {
        self.0.retain(|(k, _)| !k.eq_ignore_ascii_case(name));
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.0.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Comma-separated tokens across every header called `name`, lowercased.
    pub fn tokens(&self, name: &str) -> Vec<String> {
        self.get_all(name)
            .flat_map(|v| v.split(','))
            .map(|t| t.trim().to_ascii_lowercase())
            .filter(|t| !t.is_empty())
            .collect()
    }

    pub fn content_length(&self) -> Option<u64> {
        self.get("content-length").and_then(|v| v.trim().parse().ok())
    }

    pub fn is_chunked(&self) -> bool {
        self.tokens("transfer-encoding").last().map(String::as_str) == Some("chunked")
    }

    fn write_to(&self, out: &mut Vec<u8>) {
        for (k, v) in &self.0 {
            out.extend_from_slice(k.as_bytes());
            out.extend_from_slice(b": ");
            out.extend_from_slice(v.as_bytes());
            out.extend_from_slice(b"\r\n");
        }
    }
}

impl<K: Into<String>, V: Into<String>> FromIterator<(K, V)> for Headers {
    fn from_iter<I: IntoIterator<Item = (K, V)>>(iter: I) -> Self {
        Headers(iter.into_iter().map(|(k, v)| (k.into(), v.into())).collect())
    }
}

/// Which seeder a flow's agent draws from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum SeedFocus {
    #[default]
    Benign,
    Malware,
    Phishing,
}

impl SeedFocus {
    pub fn as_str(self) -> &'static str {
        match self {
            SeedFocus::Benign => "benign",
            SeedFocus::Malware => "malware",
            SeedFocus::Phishing => "phishing",
        }
    }
}

impl fmt::Display for SeedFocus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for SeedFocus {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "benign" => Ok(SeedFocus::Benign),
            "malware" => Ok(SeedFocus::Malware),
            "phishing" => Ok(SeedFocus::Phishing),
            other => Err(format!("unknown seeder focus `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RequestHead {
    pub method: String,
    /// Absolute URL (proxy form).
    pub url: String,
    pub headers: Headers,
}

impl RequestHead {
    pub fn new(method: &str, url: &str) -> Self {
        RequestHead { method: method.to_string(), url: url.to_string(), headers: Headers::new() }
    }

    /// Request line and headers, terminated by the blank line.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = format!("{} {} HTTP/1.1\r\n", self.method, self.url).into_bytes();
        self.headers.write_to(&mut out);
        out.extend_from_slice(b"\r\n");
        out
    }

    /// Same as [`to_bytes`](Self::to_bytes) but with an origin-form target.
    pub fn to_origin_bytes(&self) -> Vec<u8> {
        let target = origin_form(&self.url);
        let mut out = format!("{} {} HTTP/1.1\r\n", self.method, target).into_bytes();
        self.headers.write_to(&mut out);
        out.extend_from_slice(b"\r\n");
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResponseHead {
    pub status: u16,
    pub headers: Headers,
}

impl ResponseHead {
    pub fn new(status: u16) -> Self {
        ResponseHead { status, headers: Headers::new() }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = format!("HTTP/1.1 {} {}\r\n", self.status, reason_phrase(self.status)).into_bytes();
        self.headers.write_to(&mut out);
        out.extend_from_slice(b"\r\n");
        out
    }

    pub fn content_type(&self) -> Option<&str> {
        self.headers.get("content-type")
    }
}

/// Everything about a request/response pair except the body bytes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExchangeHead {
    pub request: RequestHead,
    pub response: ResponseHead,
    #[serde(with = "iso_millis")]
    pub started_at: DateTime<Utc>,
    pub agent_id: String,
    pub seeder_tag: SeedFocus,
}

/// A captured request/response pair with the response body as delivered.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HttpExchange {
    pub head: ExchangeHead,
    pub body: Vec<u8>,
}

impl HttpExchange {
    pub fn url(&self) -> &str {
        &self.head.request.url
    }
}

/// ISO-8601 UTC with millisecond precision, e.g. `2017-03-01T12:00:00.000Z`.
pub mod iso_millis {
    use chrono::{DateTime, NaiveDateTime, Utc};
    use serde::{Deserialize, Deserializer, Serializer};

    pub const FORMAT: &str = "%Y-%m-%dT%H:%M:%S%.3fZ";

    pub fn format(ts: &DateTime<Utc>) -> String {
        ts.format(FORMAT).to_string()
    }

    pub fn parse(s: &str) -> Result<DateTime<Utc>, chrono::ParseError> {
        NaiveDateTime::parse_from_str(s, FORMAT).map(|n| n.and_utc())
    }

    pub fn serialize<S: Serializer>(ts: &DateTime<Utc>, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&format(ts))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DateTime<Utc>, D::Error> {
        let raw = String::deserialize(d)?;
        parse(&raw).map_err(serde::de::Error::custom)
    }
}

/// Truncates a timestamp to whole milliseconds, matching the stored precision.
pub fn to_millis(ts: DateTime<Utc>) -> DateTime<Utc> {
    DateTime::from_timestamp_millis(ts.timestamp_millis()).unwrap_or(ts)
}

pub fn reason_phrase(status: u16) -> &'static str {
    match status {
        100 => "Continue",
        200 => "OK",
        201 => "Created",
        204 => "No Content",
        301 => "Moved Permanently",
        302 => "Found",
        304 => "Not Modified",
        400 => "Bad Request",
        403 => "Forbidden",
        404 => "Not Found",
        405 => "Method Not Allowed",
        413 => "Payload Too Large",
        500 => "Internal Server Error",
        502 => "Bad Gateway",
        503 => "Service Unavailable",
        504 => "Gateway Timeout",
        _ => "Unknown",
    }
}

/// Splits an absolute `http://host[:port]/path?q` URL into host, port and origin-form target.
pub fn split_http_url(url: &str) -> Option<(String, u16, String)> {
    let rest = strip_prefix_ci(url, "http://")?;
    let (authority, path) = match rest.find(['/', '?', '#']) {
        Some(i) => (&rest[..i], &rest[i..]),
        None => (rest, "/"),
    };
    let authority = authority.rsplit('@').next().unwrap_or(authority);
    if authority.is_empty() {
        return None;
    }
    let (host, port) = match authority.rfind(':') {
        Some(i) if !authority.ends_with(']') => {
            let port = authority[i + 1..].parse().ok()?;
            (&authority[..i], port)
        }
        _ => (authority, 80),
    };
    let mut path = path.split('#').next().unwrap_or("/").to_string();
    if path.starts_with('?') {
        path.insert(0, '/');
    }
    Some((host.to_ascii_lowercase(), port, path))
}

fn origin_form(url: &str) -> String {
    split_http_url(url).map(|(_, _, p)| p).unwrap_or_else(|| url.to_string())
}

fn strip_prefix_ci<'a>(s: &'a str, prefix: &str) -> Option<&'a str> {
    if s.len() >= prefix.len() && s[..prefix.len()].eq_ignore_ascii_case(prefix) {
        Some(&s[prefix.len()..])
    } else {
        None
    }
}

/// Reads bytes up to and including the first blank line (`\r\n\r\n`).
///
/// Returns `Ok(None)` on a clean EOF before any byte was read.
pub fn read_head<R: BufRead>(reader: &mut R) -> io::Result<Option<Vec<u8>>> {
    let mut head = Vec::new();
    loop {
        let before = head.len();
        let n = reader.read_until(b'\n', &mut head)?;
        if n == 0 {
            if head.is_empty() {
                return Ok(None);
            }
            return Err(io::Error::new(io::ErrorKind::UnexpectedEof, "truncated message head"));
        }
        if head.len() > MAX_HEAD_BYTES {
            return Err(io::Error::new(io::ErrorKind::InvalidData, "message head too large"));
        }
        let line = &head[before..];
        if line == b"\r\n" || line == b"\n" {
            if before == 0 {
                // tolerate stray CRLF between messages
                head.clear();
                continue;
            }
            return Ok(Some(head));
        }
    }
}

/// Parses `Name: value` lines; the first line of `head` is returned separately.
pub fn parse_head_lines(head: &[u8]) -> Result<(String, Headers), String> {
    let text = String::from_utf8_lossy(head);
    let mut lines = text.split('\n').map(|l| l.strip_suffix('\r').unwrap_or(l));
    let start = lines.next().unwrap_or_default().to_string();
    let mut headers = Headers::new();
    for line in lines {
        if line.is_empty() {
            break;
        }
        if line.starts_with([' ', '\t']) {
            // obsolete line folding
            if let Some(last) = headers.0.last_mut() {
                last.1.push(' ');
                last.1.push_str(line.trim());
                continue;
            }
        }
        let (k, v) = line.split_once(':').ok_or_else(|| format!("header line without colon: {line:?}"))?;
        if k.is_empty() || k.contains(' ') {
            return Err(format!("invalid header name: {k:?}"));
        }
        headers.push(k, v.trim());
    }
    Ok((start, headers))
}

pub fn parse_request_head(head: &[u8]) -> Result<RequestHead, String> {
    let (line, headers) = parse_head_lines(head)?;
    let mut parts = line.split_whitespace();
    let (Some(method), Some(target), Some(version)) = (parts.next(), parts.next(), parts.next()) else {
        return Err(format!("malformed request line: {line:?}"));
    };
    if !version.starts_with("HTTP/") {
        return Err(format!("malformed request line: {line:?}"));
    }
    Ok(RequestHead { method: method.to_string(), url: target.to_string(), headers })
}

pub fn parse_response_head(head: &[u8]) -> Result<ResponseHead, String> {
    let (line, headers) = parse_head_lines(head)?;
    let mut parts = line.splitn(3, ' ');
    let version = parts.next().unwrap_or_default();
    let status = parts.next().and_then(|s| s.trim().parse().ok());
    match status {
        Some(status) if version.starts_with("HTTP/") => Ok(ResponseHead { status, headers }),
        _ => Err(format!("malformed status line: {line:?}")),
    }
}

/// How the body following a head is delimited on the wire.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BodyFraming {
    None,
    Length(u64),
    Chunked,
    UntilClose,
}

pub fn request_framing(head: &RequestHead) -> BodyFraming {
    if head.headers.is_chunked() {
        BodyFraming::Chunked
    } else {
        match head.headers.content_length() {
            Some(0) | None => BodyFraming::None,
            Some(n) => BodyFraming::Length(n),
        }
    }
}

pub fn response_framing(request_method: &str, head: &ResponseHead) -> BodyFraming {
    if request_method.eq_ignore_ascii_case("HEAD")
        || head.status / 100 == 1
        || head.status == 204
        || head.status == 304
    {
        return BodyFraming::None;
    }
    if head.headers.is_chunked() {
        BodyFraming::Chunked
    } else if let Some(n) = head.headers.content_length() {
        if n == 0 {
            BodyFraming::None
        } else {
            BodyFraming::Length(n)
        }
    } else {
        BodyFraming::UntilClose
    }
}

/// Reads a body according to `framing`, keeping at most `max` bytes.
///
/// Chunked bodies are returned with their chunk framing intact, i.e. exactly
/// as they crossed the wire. The flag reports whether `max` cut the body short.
pub fn read_body<R: BufRead>(reader: &mut R, framing: BodyFraming, max: usize) -> io::Result<(Vec<u8>, bool)> {
    match framing {
        BodyFraming::None => Ok((Vec::new(), false)),
        BodyFraming::Length(n) => {
            let keep = (n as usize).min(max);
            let mut buf = vec![0u8; keep];
            reader.read_exact(&mut buf)?;
            Ok((buf, (n as usize) > max))
        }
        BodyFraming::UntilClose => {
            let mut buf = Vec::new();
            reader.take(max as u64 + 1).read_to_end(&mut buf)?;
            let truncated = buf.len() > max;
            buf.truncate(max);
            Ok((buf, truncated))
        }
        BodyFraming::Chunked => read_raw_chunked(reader, max),
    }
}

fn read_raw_chunked<R: BufRead>(reader: &mut R, max: usize) -> io::Result<(Vec<u8>, bool)> {
    let mut out = Vec::new();
    loop {
        let mut line = Vec::new();
        if reader.read_until(b'\n', &mut line)? == 0 {
            return Err(io::Error::new(io::ErrorKind::UnexpectedEof, "truncated chunked body"));
        }
        let size = parse_chunk_size(&line)
            .ok_or_else(|| io::Error::new(io::ErrorKind::InvalidData, "bad chunk size line"))?;
        out.extend_from_slice(&line);
        if size == 0 {
            // trailers until blank line
            loop {
                let mut t = Vec::new();
                if reader.read_until(b'\n', &mut t)? == 0 {
                    return Ok((out, false));
                }
                out.extend_from_slice(&t);
                if t == b"\r\n" || t == b"\n" {
                    break;
                }
            }
            break;
        }
        let start = out.len();
        out.resize(start + size + 2, 0);
        reader.read_exact(&mut out[start..])?;
        if out.len() > max {
            out.truncate(max);
            return Ok((out, true));
        }
    }
    Ok((out, false))
}

/// Parses the hex size of a chunk-size line, ignoring extensions.
pub fn parse_chunk_size(line: &[u8]) -> Option<usize> {
    let text = std::str::from_utf8(line).ok()?;
    let text = text.trim_end_matches(['\r', '\n']);
    let size = text.split(';').next()?.trim();
    if size.is_empty() {
        return None;
    }
    usize::from_str_radix(size, 16).ok()
}

/// Encodes `data` as a single chunk followed by the terminating zero chunk.
pub fn chunk_encode(data: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(data.len() + 16);
    if !data.is_empty() {
        out.extend_from_slice(format!("{:x}\r\n", data.len()).as_bytes());
        out.extend_from_slice(data);
        out.extend_from_slice(b"\r\n");
    }
    out.extend_from_slice(b"0\r\n\r\n");
    out
}

/// Writes a complete response with a `Content-Length` body.
pub fn write_simple_response<W: Write>(w: &mut W, status: u16, content_type: &str, body: &[u8]) -> io::Result<()> {
    let mut head = ResponseHead::new(status);
    head.headers.push("Content-Type", content_type);
    head.headers.push("Content-Length", body.len().to_string());
    head.headers.push("Connection", "close");
    w.write_all(&head.to_bytes())?;
    w.write_all(body)?;
    w.flush()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::BufReader;

    #[test]
    fn headers_are_case_insensitive_but_preserve_case() {
        let mut h = Headers::new();
        h.push("Content-Type", "text/html");
        assert_eq!(h.get("content-type"), Some("text/html"));
        assert_eq!(h.0[0].0, "Content-Type");
    }

    #[test]
    fn split_url_variants() {
        assert_eq!(split_http_url("http://Synth.Local/a"), Some(("synth.local".into(), 80, "/a".into())));
        assert_eq!(split_http_url("http://h:8080"), Some(("h".into(), 8080, "/".into())));
        assert_eq!(split_http_url("http://h?x=1#f"), Some(("h".into(), 80, "/?x=1".into())));
        assert_eq!(split_http_url("https://h/"), None);
    }

    #[test]
    fn raw_chunked_body_is_kept_verbatim() {
        let wire = b"5\r\nhello\r\n0\r\n\r\nNEXT";
        let mut r = BufReader::new(&wire[..]);
        let (body, truncated) = read_body(&mut r, BodyFraming::Chunked, 1 << 20).unwrap();
        assert_eq!(body, b"5\r\nhello\r\n0\r\n\r\n");
        assert!(!truncated);
    }

    #[test]
    fn length_body_truncates_at_cap() {
        let mut r = BufReader::new(&b"abcdef"[..]);
        let (body, truncated) = read_body(&mut r, BodyFraming::Length(6), 4).unwrap();
        assert_eq!(body, b"abcd");
        assert!(truncated);
    }

    #[test]
    fn request_head_round_trip() {
        let mut req = RequestHead::new("GET", "http://synth.local/a?b=1");
        req.headers.push("Host", "synth.local");
        let parsed = parse_request_head(&req.to_bytes()).unwrap();
        assert_eq!(parsed, req);
        assert!(req.to_origin_bytes().starts_with(b"GET /a?b=1 HTTP/1.1\r\n"));
    }
}
