//! URL canonicalization and lookup-expression generation for hash-prefix blacklists.
//!
//! Canonical form: lowercase scheme and host, default port dropped, host and
//! path percent-decoded until stable and re-escaped, dot segments resolved,
//! repeated slashes collapsed, fragment removed. The query is kept verbatim.

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum UrlError {
    #[error("not an absolute URL: {0:?}")]
    NotAbsolute(String),
    #[error("URL has an empty host: {0:?}")]
    EmptyHost(String),
    #[error("invalid port in {0:?}")]
    BadPort(String),
}

/// A canonicalized URL split into its lookup-relevant parts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CanonicalUrl {
    pub scheme: String,
    pub host: String,
    pub port: Option<u16>,
    /// Path, always starting with `/`, escaped.
    pub path: String,
    pub query: Option<String>,
}

impl CanonicalUrl {
    pub fn as_string(&self) -> String {
        let mut s = format!("{}://{}", self.scheme, self.host);
        if let Some(p) = self.port {
            s.push_str(&format!(":{p}"));
        }
        s.push_str(&self.path);
        if let Some(q) = &self.query {
            s.push('?');
            s.push_str(q);
        }
        s
    }

    /// Host/path combinations checked against the blacklist, most specific first.
    ///
    /// Hosts: the exact host plus up to four suffixes built from the last five
    /// labels (never the bare top-level label); IP literals only exactly.
    /// Paths: path with query, path without query, then up to four prefixes
    /// from the root, each ending in `/`.
    pub fn expressions(&self) -> Vec<String> {
        let mut out = Vec::new();
        for host in host_suffixes(&self.host) {
            for path in path_prefixes(&self.path, self.query.as_deref()) {
                let e = format!("{host}{path}");
                if !out.contains(&e) {
                    out.push(e);
                }
            }
        }
        out
    }
}

fn host_suffixes(host: &str) -> Vec<String> {
    let mut out = vec![host.to_string()];
    if host.parse::<std::net::Ipv4Addr>().is_ok() {
        return out;
    }
    let labels: Vec<&str> = host.split('.').collect();
    let n = labels.len();
    let start = n.saturating_sub(5);
    for i in start..n.saturating_sub(1) {
        if i == 0 {
            continue;
        }
        let s = labels[i..].join(".");
        if !out.contains(&s) && out.len() < 5 {
            out.push(s);
        }
    }
    out
}

fn path_prefixes(path: &str, query: Option<&str>) -> Vec<String> {
    let mut out = Vec::new();
    if let Some(q) = query {
        out.push(format!("{path}?{q}"));
    }
    out.push(path.to_string());
    let comps: Vec<&str> = path.split('/').filter(|c| !c.is_empty()).collect();
    let mut prefix = String::from("/");
    let mut added = 0;
    if !out.contains(&prefix) {
        out.push(prefix.clone());
    }
    added += 1;
    for c in comps.iter() {
        if added >= 4 {
            break;
        }
        prefix.push_str(c);
        prefix.push('/');
        if !out.contains(&prefix) {
            out.push(prefix.clone());
        }
        added += 1;
    }
    out
}

fn default_port(scheme: &str) -> Option<u16> {
    match scheme {
        "http" => Some(80),
        "https" => Some(443),
        "ftp" => Some(21),
        _ => None,
    }
}

/// Canonicalizes an absolute URL.
pub fn canonicalize_url(url: &str) -> Result<CanonicalUrl, UrlError> {
    let cleaned: String = url.trim().chars().filter(|c| !matches!(c, '\t' | '\r' | '\n')).collect();
    let (scheme, rest) = cleaned
        .split_once("://")
        .filter(|(s, _)| !s.is_empty() && s.chars().all(|c| c.is_ascii_alphanumeric() || "+-.".contains(c)))
        .filter(|(s, _)| s.starts_with(|c: char| c.is_ascii_alphabetic()))
        .ok_or_else(|| UrlError::NotAbsolute(url.to_string()))?;
    let scheme = scheme.to_ascii_lowercase();
    let rest = rest.split('#').next().unwrap_or_default();
    let (authority, path_and_query) = match rest.find(['/', '?']) {
        Some(i) => (&rest[..i], &rest[i..]),
        None => (rest, ""),
    };
    let authority = authority.rsplit('@').next().unwrap_or_default();
    let (host_raw, port) = match authority.rfind(':') {
        Some(i) if !authority[i + 1..].contains(']') => {
            let p = &authority[i + 1..];
            let port = if p.is_empty() {
                None
            } else {
                Some(p.parse::<u16>().map_err(|_| UrlError::BadPort(url.to_string()))?)
            };
            (&authority[..i], port)
        }
        _ => (authority, None),
    };
    let port = port.filter(|p| Some(*p) != default_port(&scheme));

    let host_bytes = percent_decode_fully(host_raw.as_bytes());
    let host = String::from_utf8_lossy(&host_bytes).to_ascii_lowercase();
    let host: Vec<&str> = host.split('.').filter(|l| !l.is_empty()).collect();
    let host = escape(&host.join("."));
    if host.is_empty() {
        return Err(UrlError::EmptyHost(url.to_string()));
    }

    let (raw_path, query) = match path_and_query.split_once('?') {
        Some((p, q)) => (p, Some(q.to_string())),
        None => (path_and_query, None),
    };
    let decoded = percent_decode_fully(raw_path.as_bytes());
    let decoded = String::from_utf8_lossy(&decoded).into_owned();
    let mut path = remove_dot_segments(&decoded);
    while path.contains("//") {
        path = path.replace("//", "/");
    }
    if !path.starts_with('/') {
        path.insert(0, '/');
    }
    Ok(CanonicalUrl { scheme, host, port, path: escape(&path), query })
}

fn percent_decode_once(input: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(input.len());
    let mut i = 0;
    while i < input.len() {
        if input[i] == b'%' && i + 2 < input.len() {
            if let (Some(h), Some(l)) = (hex_val(input[i + 1]), hex_val(input[i + 2])) {
                out.push(h << 4 | l);
                i += 3;
                continue;
            }
        }
        out.push(input[i]);
        i += 1;
    }
    out
}

fn hex_val(b: u8) -> Option<u8> {
    (b as char).to_digit(16).map(|d| d as u8)
}

fn percent_decode_fully(input: &[u8]) -> Vec<u8> {
    let mut cur = input.to_vec();
    // bounded: each pass shrinks the input or leaves it unchanged
    loop {
        let next = percent_decode_once(&cur);
        if next == cur {
            return cur;
        }
        cur = next;
    }
}

fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for &b in s.as_bytes() {
        if b <= 0x20 || b >= 0x7f || b == b'#' || b == b'%' {
            out.push_str(&format!("%{b:02X}"));
        } else {
            out.push(b as char);
        }
    }
    out
}

/// RFC 3986 section 5.2.4 dot-segment removal.
fn remove_dot_segments(path: &str) -> String {
    let mut input = path.to_string();
    let mut output: Vec<String> = Vec::new();
    let mut out = String::new();
    while !input.is_empty() {
        if let Some(r) = input.strip_prefix("../") {
            input = r.to_string();
        } else if let Some(r) = input.strip_prefix("./") {
            input = r.to_string();
        } else if input.starts_with("/./") {
            input = input[2..].to_string();
        } else if input == "/." {
            input = "/".to_string();
        } else if input.starts_with("/../") {
            input = input[3..].to_string();
            output.pop();
        } else if input == "/.." {
            input = "/".to_string();
            output.pop();
        } else if input == "." || input == ".." {
            input.clear();
        } else {
            let start = usize::from(input.starts_with('/'));
            let end = input[start..].find('/').map(|i| i + start).unwrap_or(input.len());
            output.push(input[..end].to_string());
            input = input[end..].to_string();
        }
    }
    for seg in output {
        out.push_str(&seg);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn canon(u: &str) -> String {
        canonicalize_url(u).unwrap().as_string()
    }

    #[test]
    fn spec_example() {
        assert_eq!(canon("HTTP://Ex.COM:80/a/../b#f"), "http://ex.com/b");
    }

    #[test]
    fn idempotent_on_canonical() {
        for u in ["http://ex.com/b", "http://a.b.c/x/y?q=1", "https://h:8443/%25/"] {
            let once = canon(u);
            assert_eq!(canon(&once), once);
        }
    }

    #[test]
    fn rejects_non_urls() {
        assert!(matches!(canonicalize_url("notaurl"), Err(UrlError::NotAbsolute(_))));
        assert!(matches!(canonicalize_url("http:///path"), Err(UrlError::EmptyHost(_))));
        assert!(matches!(canonicalize_url("http://h:99999/"), Err(UrlError::BadPort(_))));
    }

    #[test]
    fn percent_and_slashes() {
        // repeated unescaping: %2562 -> %62 -> b
        assert_eq!(canon("http://h/%61%2562//c/./d/"), "http://h/ab/c/d/");
        assert_eq!(canon("http://h/%25zz"), "http://h/%25zz");
        assert_eq!(canon("http://H..EXAMPLE.com."), "http://h.example.com/");
        assert_eq!(canon("http://h:8080/a b"), "http://h:8080/a%20b");
    }

    #[test]
    fn dot_segments() {
        assert_eq!(remove_dot_segments("/a/b/c/./../../g"), "/a/g");
        assert_eq!(remove_dot_segments("mid/content=5/../6"), "mid/6");
    }

    #[test]
    fn expression_set() {
        let c = canonicalize_url("http://a.b.c/1/2.html?param=1").unwrap();
        let e = c.expressions();
        for want in ["a.b.c/1/2.html?param=1", "a.b.c/1/2.html", "a.b.c/", "a.b.c/1/", "b.c/1/2.html?param=1", "b.c/"] {
            assert!(e.contains(&want.to_string()), "missing {want}: {e:?}");
        }
        assert!(!e.iter().any(|x| x.starts_with("c/")));
        let ip = canonicalize_url("http://1.2.3.4/1/").unwrap();
        assert_eq!(ip.expressions(), vec!["1.2.3.4/1/", "1.2.3.4/"]);
    }
}
