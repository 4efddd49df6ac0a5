//! A deterministic synthetic web for end-to-end runs.
//!
//! A site spec lists pages by host and path. Pages either carry a literal
//! body or are rendered from a template. The server answers every virtual
//! host on one socket and logs each request it receives.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::{self, BufReader, Write};
use std::net::{Ipv4Addr, SocketAddr, TcpStream};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use flate2::write::GzEncoder;
use flate2::Compression;
use serde::{Deserialize, Serialize};

use crate::flowstore::sha1_hex;
use crate::forest::XorShift64;
use crate::labels::{BlacklistDb, EngineFixture, SignatureDb, ThreatType};
use crate::wire::http;
use crate::wire::server::{self, ServerHandle};
use crate::wire::{HostTarget, SeedFocus};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Template {
    #[default]
    Benign,
    Malicious,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PageSpec {
    pub host: String,
    pub path: String,
    #[serde(default = "default_status")]
    pub status: u16,
    #[serde(default = "default_type")]
    pub content_type: String,
    /// Literal body; when absent the page is rendered from `template`.
    pub body: Option<String>,
    #[serde(default)]
    pub template: Template,
    #[serde(default)]
    pub variant: u64,
    #[serde(default)]
    pub title: String,
    #[serde(default)]
    pub links: Vec<String>,
    #[serde(default)]
    pub login_form: bool,
    #[serde(default)]
    pub search_form: bool,
    #[serde(default)]
    pub gzip: bool,
    /// Detections the simulated engines report for this page's body.
    #[serde(default)]
    pub detections: Option<usize>,
}

fn default_status() -> u16 {
    200
}

fn default_type() -> String {
    "text/html; charset=utf-8".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HostSpec {
    pub name: String,
    pub focus: SeedFocus,
    /// Address reported as the server IP for this host.
    pub ip: Option<Ipv4Addr>,
    #[serde(default)]
    pub country: String,
    #[serde(default)]
    pub city: String,
    pub registered_on: Option<chrono::NaiveDate>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SiteSpec {
    #[serde(default, rename = "host")]
    pub hosts: Vec<HostSpec>,
    #[serde(default, rename = "page")]
    pub pages: Vec<PageSpec>,
}

#[derive(Debug, thiserror::Error)]
pub enum SynthError {
    #[error("site spec: {0}")]
    Spec(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl SiteSpec {
    pub fn parse(text: &str) -> Result<Self, SynthError> {
        let s: SiteSpec = toml::from_str(text).map_err(|e| SynthError::Spec(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self, SynthError> {
        Self::parse(&fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("site spec serializes")
    }

    fn validate(&self) -> Result<(), SynthError> {
        let mut seen = BTreeSet::new();
        for p in &self.pages {
            if p.host.is_empty() || !p.path.starts_with('/') {
                return Err(SynthError::Spec(format!("page {}{} needs a host and an absolute path", p.host, p.path)));
            }
            if !seen.insert((p.host.as_str(), p.path.as_str())) {
                return Err(SynthError::Spec(format!("duplicate page {}{}", p.host, p.path)));
            }
        }
        Ok(())
    }

    pub fn page(&self, host: &str, path: &str) -> Option<&PageSpec> {
        self.pages.iter().find(|p| p.host == host && p.path == path)
    }

    /// Every host named by a page or a host entry.
    pub fn host_names(&self) -> BTreeSet<String> {
        self.pages.iter().map(|p| p.host.clone()).chain(self.hosts.iter().map(|h| h.name.clone())).collect()
    }

    pub fn host(&self, name: &str) -> Option<&HostSpec> {
        self.hosts.iter().find(|h| h.name == name)
    }

    pub fn url(p: &PageSpec) -> String {
        format!("http://{}{}", p.host, p.path)
    }
}

const WORDS: &[&str] = &[
    "market", "report", "weather", "garden", "travel", "recipe", "office", "review", "update", "season", "museum",
    "library", "science", "history", "music", "local", "sports", "events", "photo", "summer", "winter", "coffee",
];

fn sentence(r: &mut XorShift64, n: usize) -> String {
    (0..n).map(|_| WORDS[r.below(WORDS.len())]).collect::<Vec<_>>().join(" ")
}

/// Characters used for the high-entropy payload strings.
const PAYLOAD_ALPHABET: &[u8] = b"ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";

fn payload(r: &mut XorShift64, len: usize) -> String {
    (0..len).map(|_| PAYLOAD_ALPHABET[r.below(PAYLOAD_ALPHABET.len())] as char).collect()
}

/// Marker every malicious page carries; the emitted signature file matches it.
pub const MALICIOUS_MARKER: &str = "fl0w-dropper-v2";

fn render_forms(p: &PageSpec, out: &mut String) {
    if p.login_form {
        out.push_str(
            "<form action=\"/login\" method=\"post\"><input type=\"text\" name=\"user\">\
             <input type=\"password\" name=\"pass\"><input type=\"hidden\" name=\"csrf\" value=\"k3y\">\
             <input type=\"submit\" value=\"Sign in\"></form>\n",
        );
    }
    if p.search_form {
        out.push_str("<form action=\"/search\"><input type=\"text\" name=\"q\"><button>Search</button></form>\n");
    }
}

/// Renders a page from its template.
pub fn render(p: &PageSpec) -> String {
    if let Some(b) = &p.body {
        return b.clone();
    }
    let mut r = XorShift64::new(p.variant ^ 0x5eed);
    let title = if p.title.is_empty() { sentence(&mut r, 2) } else { p.title.clone() };
    let mut out = format!("<!DOCTYPE html>\n<html><head><title>{title}</title></head>\n<body>\n<h1>{title}</h1>\n");
    for _ in 0..1 + r.below(3) {
        let n = 8 + r.below(12);
        out.push_str(&format!("<p>{}.</p>\n", sentence(&mut r, n)));
    }
    match p.template {
        Template::Benign => {
            if r.below(2) == 0 {
                out.push_str(&format!(
                    "<script>\nvar el = document.getElementById('note');\nif (el) {{ el.innerHTML = '{}'; }}\n</script>\n",
                    sentence(&mut r, 2)
                ));
            }
        }
        Template::Malicious => {
            let long_name = format!("v{}", payload(&mut r, 30).replace(['+', '/'], "_"));
            let chain = 2 + r.below(4);
            let n = 80 + r.below(300);
            let mut js = format!("var {long_name} = \"{}\";\n", payload(&mut r, n));
            js.push_str(&format!("var tag = \"{MALICIOUS_MARKER}\";\n"));
            js.push_str("var s = unescape(\"%u0c0c%u0c0c%u9090%u9090\");\n");
            for i in 0..chain {
                js.push_str(&format!("var c{i} = window[\"ev\" + \"al\"];\neval(\"c{i}(\" + {long_name}.length + \")\");\n"));
            }
            if r.below(2) == 0 {
                js.push_str("eval(function(p,a,c,k,e,d){return p}('0',1,1,'x'.split('|'),0,{}));\n");
            }
            js.push_str("setTimeout(function(){ document.write(\"<iframe src='/gate' width=0 height=0></iframe>\"); }, 10);\n");
            out.push_str(&format!("<script>\n{js}</script>\n"));
            out.push_str("<iframe src=\"/gate\" width=\"0\" height=\"0\" style=\"visibility:hidden\"></iframe>\n");
        }
    }
    for l in &p.links {
        out.push_str(&format!("<a href=\"{l}\">{}</a>\n", sentence(&mut r, 2)));
    }
    render_forms(p, &mut out);
    out.push_str("</body></html>\n");
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynthRequest {
    pub method: String,
    pub host: String,
    /// Origin-form target including any query.
    pub target: String,
    pub body: String,
    pub agent: Option<String>,
    pub viewport: Option<String>,
    pub peer: String,
}

/// The running server with its request ledger.
pub struct SynthWeb {
    handle: ServerHandle,
    pub ledger: Arc<Mutex<Vec<SynthRequest>>>,
    pub spec: Arc<SiteSpec>,
}

impl SynthWeb {
    pub fn start(spec: SiteSpec, addr: &str) -> io::Result<SynthWeb> {
        let spec = Arc::new(spec);
        let ledger = Arc::new(Mutex::new(Vec::new()));
        let (s, l) = (spec.clone(), ledger.clone());
        let handle = server::spawn(addr, "synthweb", move |stream| {
            if let Err(e) = serve_one(&s, &l, stream) {
                log::debug!("synthweb connection: {e}");
            }
        })?;
        Ok(SynthWeb { handle, ledger, spec })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.handle.local_addr()
    }

    pub fn requests(&self) -> Vec<SynthRequest> {
        self.ledger.lock().unwrap().clone()
    }

    /// Proxy routes sending every spec host to this server.
    pub fn host_targets(&self) -> BTreeMap<String, HostTarget> {
        self.spec
            .host_names()
            .into_iter()
            .map(|h| {
                let reported_ip = self.spec.host(&h).and_then(|x| x.ip);
                (h, HostTarget { connect: self.local_addr(), reported_ip })
            })
            .collect()
    }

    pub fn shutdown(self) {
        self.handle.shutdown();
    }
}

fn serve_one(spec: &SiteSpec, ledger: &Mutex<Vec<SynthRequest>>, stream: TcpStream) -> io::Result<()> {
    let peer = stream.peer_addr().map(|a| a.to_string()).unwrap_or_default();
    let mut w = stream.try_clone()?;
    let mut reader = BufReader::new(stream);
    let Some(raw) = http::read_head(&mut reader)? else { return Ok(()) };
    let req = http::parse_request_head(&raw).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))?;
    let (body, _) = http::read_body(&mut reader, http::request_framing(&req), 1 << 20)?;
    let host = req.headers.get("host").unwrap_or_default().split(':').next().unwrap_or_default().to_ascii_lowercase();
    let target = match http::split_http_url(&req.url) {
        Some((_, _, t)) => t,
        None => req.url.clone(),
    };
    ledger.lock().unwrap().push(SynthRequest {
        method: req.method.clone(),
        host: host.clone(),
        target: target.clone(),
        body: String::from_utf8_lossy(&body).into_owned(),
        agent: req.headers.get(crate::wire::proxy::AGENT_HEADER).map(str::to_string),
        viewport: req.headers.get(crate::agents::VIEWPORT_HEADER).map(str::to_string),
        peer,
    });
    let path = target.split('?').next().unwrap_or("/");
    let (status, ctype, content, gzip) = match spec.page(&host, path) {
        Some(p) => (p.status, p.content_type.clone(), render(p), p.gzip),
        None if path == "/login" && req.method == "POST" => {
            (200, default_type(), format!("<html><body><p>Welcome back on {host}.</p><a href=\"/\">home</a></body></html>\n"), false)
        }
        None if path == "/search" => (200, default_type(), "<html><body><p>No results.</p></body></html>\n".to_string(), false),
        None => (404, "text/plain".to_string(), "not found\n".to_string(), false),
    };
    let mut head = http::ResponseHead::new(status);
    head.headers.push("Content-Type", ctype);
    let bytes = if gzip {
        head.headers.push("Content-Encoding", "gzip");
        let mut enc = GzEncoder::new(Vec::new(), Compression::default());
        enc.write_all(content.as_bytes())?;
        enc.finish()?
    } else {
        content.into_bytes()
    };
    head.headers.push("Content-Length", bytes.len().to_string());
    head.headers.push("Connection", "close");
    w.write_all(&head.to_bytes())?;
    w.write_all(&bytes)?;
    w.flush()
}

/// Builds a spec with `n_benign` + `n_malicious` pages spread over hosts of
/// `per_host` pages each: a root page linking to the others.
pub fn generate(seed: u64, n_benign: usize, n_malicious: usize, per_host: usize) -> SiteSpec {
    let per_host = per_host.max(1);
    let mut r = XorShift64::new(seed);
    let mut spec = SiteSpec::default();
    const COUNTRIES: &[(&str, &str)] =
        &[("US", "Ashburn"), ("DE", "Frankfurt"), ("NL", "Amsterdam"), ("RU", "Moscow"), ("CN", "Beijing"), ("FR", "Paris")];
    let mut host_no = 0u32;
    for (template, total) in [(Template::Benign, n_benign), (Template::Malicious, n_malicious)] {
        let mut left = total;
        while left > 0 {
            host_no += 1;
            let n = left.min(per_host);
            left -= n;
            let (prefix, focus) = match template {
                Template::Benign => ("www", SeedFocus::Benign),
                Template::Malicious => ("cdn", SeedFocus::Malware),
            };
            let name = format!("{prefix}{host_no:03}.test");
            let (country, city) = COUNTRIES[r.below(COUNTRIES.len())];
            spec.hosts.push(HostSpec {
                name: name.clone(),
                focus,
                ip: Some(Ipv4Addr::new(198, 18, (host_no / 250) as u8, (host_no % 250) as u8 + 1)),
                country: country.into(),
                city: city.into(),
                registered_on: chrono::NaiveDate::from_ymd_opt(2000 + r.below(17) as i32, 1 + r.below(12) as u32, 1),
            });
            let subpaths: Vec<String> = (1..n).map(|i| format!("/page{i}.html")).collect();
            for i in 0..n {
                let path = if i == 0 { "/".to_string() } else { subpaths[i - 1].clone() };
                let mut links = Vec::new();
                if i == 0 {
                    links = subpaths.clone();
                    links.push("http://elsewhere.test/".into());
                }
                spec.pages.push(PageSpec {
                    host: name.clone(),
                    path,
                    status: 200,
                    content_type: default_type(),
                    body: None,
                    template,
                    variant: r.next_u64() >> 11,
                    title: String::new(),
                    links,
                    login_form: i == 0 && template == Template::Benign && host_no.is_multiple_of(3),
                    search_form: i == 0 && template == Template::Benign && host_no % 4 == 1,
                    gzip: r.below(3) == 0,
                    detections: (template == Template::Malicious).then(|| 10 + r.below(31)),
                });
            }
        }
    }
    spec
}

/// Files written by [`write_fixtures`].
#[derive(Debug, Clone)]
pub struct FixturePaths {
    pub spec: PathBuf,
    pub blacklist: PathBuf,
    pub signatures: PathBuf,
    pub engines: PathBuf,
    pub geoip: PathBuf,
    pub whois: PathBuf,
    pub credentials: PathBuf,
    pub seeds: BTreeMap<SeedFocus, PathBuf>,
    pub config: PathBuf,
}

/// Writes the spec and everything a pipeline run over it needs.
///
/// Malicious pages are listed as MALWARE in the blacklist, carry the
/// signature marker, and get their `detections` in the engine fixture, keyed
/// by the digest of the rendered (uncompressed) body.
pub fn write_fixtures(spec: &SiteSpec, dir: &Path) -> Result<FixturePaths, SynthError> {
    fs::create_dir_all(dir)?;
    let p = |n: &str| dir.join(n);
    let paths = FixturePaths {
        spec: p("site.toml"),
        blacklist: p("blacklist.tsv"),
        signatures: p("signatures.txt"),
        engines: p("engines.json"),
        geoip: p("geoip.csv"),
        whois: p("whois.csv"),
        credentials: p("credentials.csv"),
        seeds: [SeedFocus::Benign, SeedFocus::Malware, SeedFocus::Phishing]
            .into_iter()
            .map(|f| (f, p(&format!("seeds-{f}.txt"))))
            .collect(),
        config: p("pipeline.toml"),
    };
    fs::write(&paths.spec, spec.to_toml())?;

    let mut bl = BlacklistDb::new();
    let mut engines = EngineFixture::default();
    for page in &spec.pages {
        if page.template == Template::Malicious && page.body.is_none() {
            bl.insert_url(ThreatType::Malware, &SiteSpec::url(page)).map_err(|e| SynthError::Spec(e.to_string()))?;
        }
        if let Some(d) = page.detections {
            engines.set_detections(&sha1_hex(render(page).as_bytes()), d);
        }
    }
    fs::write(&paths.blacklist, bl.to_text())?;
    let mut sigs = SignatureDb::new();
    sigs.add_literal("Synth.Dropper.A", MALICIOUS_MARKER.as_bytes());
    fs::write(&paths.signatures, sigs.to_text())?;
    fs::write(&paths.engines, engines.to_json())?;

    let mut geo = String::from("start_ip,end_ip,country,city\n");
    let mut hosts: Vec<&HostSpec> = spec.hosts.iter().filter(|h| h.ip.is_some()).collect();
    hosts.sort_by_key(|h| h.ip);
    hosts.dedup_by_key(|h| h.ip);
    for h in &hosts {
        let ip = h.ip.expect("filtered");
        geo.push_str(&format!("{ip},{ip},{},{}\n", h.country, h.city));
    }
    fs::write(&paths.geoip, geo)?;
    let mut whois = String::from("domain,registered_on,expires_on\n");
    for h in &spec.hosts {
        if let Some(d) = h.registered_on {
            let exp = d.with_year(d.year() + 20).unwrap_or(d);
            whois.push_str(&format!("{},{d},{exp}\n", h.name));
        }
    }
    fs::write(&paths.whois, whois)?;
    let mut creds = String::from("host,user,password\n");
    for h in spec.hosts.iter().filter(|h| spec.pages.iter().any(|p| p.host == h.name && p.login_form)).take(2) {
        creds.push_str(&format!("{},demo-{},pw-{}\n", h.name, h.name.split('.').next().unwrap_or(""), h.name.len()));
    }
    fs::write(&paths.credentials, creds)?;
    for (focus, path) in &paths.seeds {
        let roots: Vec<String> = spec
            .hosts
            .iter()
            .filter(|h| h.focus == *focus)
            .filter(|h| spec.page(&h.name, "/").is_some())
            .map(|h| format!("http://{}/\n", h.name))
            .collect();
        fs::write(path, roots.concat())?;
    }
    let seeders: String = paths
        .seeds
        .iter()
        .filter(|(_, p)| fs::metadata(p).map(|m| m.len() > 0).unwrap_or(false))
        .map(|(f, p)| format!("\n[[agents.seeders]]\nfocus = \"{f}\"\nfile = \"{}\"\n", file_name(p)))
        .collect();
    let config = format!(
        "[store]\nroot = \"store\"\n\n[labels]\nblacklist = \"{}\"\nsignatures = \"{}\"\nengine_fixture = \"{}\"\n\n\
         [augment]\ngeoip = \"{}\"\nwhois = \"{}\"\n\n[synthweb]\nspec = \"{}\"\n\n\
         [agents]\ncount = 2\nbudget = 10\ncredentials = \"{}\"\n{seeders}",
        file_name(&paths.blacklist),
        file_name(&paths.signatures),
        file_name(&paths.engines),
        file_name(&paths.geoip),
        file_name(&paths.whois),
        file_name(&paths.spec),
        file_name(&paths.credentials),
    );
    fs::write(&paths.config, config)?;
    Ok(paths)
}

use chrono::Datelike;

fn file_name(p: &Path) -> String {
    p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::contentprep::DecodedBody;
    use crate::features::extract_features;

    fn decoded(s: &str) -> DecodedBody {
        DecodedBody::plain(s.as_bytes().to_vec(), "text/html")
    }

    #[test]
    fn malicious_template_guarantees() {
        let spec = generate(7, 0, 30, 5);
        for p in &spec.pages {
            let fv = extract_features(&decoded(&render(p)));
            assert!(fv.get("Numeval") >= 1.0, "{}", render(p));
            assert!(fv.get("NumLongStrings") >= 1.0);
            assert_eq!(fv.get("ishtmlwithjs"), 1.0);
        }
    }

    #[test]
    fn rendering_is_deterministic_and_links_show() {
        let spec = generate(3, 10, 0, 5);
        let root = spec.page("www001.test", "/").unwrap();
        let a = render(root);
        assert_eq!(a, render(root));
        assert!(a.contains("href=\"/page1.html\""));
        assert_eq!(spec.pages.len(), 10);
        assert_eq!(SiteSpec::parse(&spec.to_toml()).unwrap(), spec);
    }

    #[test]
    fn spec_errors() {
        assert!(SiteSpec::parse("[[page]]\nhost = \"a\"\npath = \"x\"\n").is_err());
        assert!(SiteSpec::parse("[[page]]\nhost = \"a\"\npath = \"/\"\n[[page]]\nhost = \"a\"\npath = \"/\"\n").is_err());
        assert!(SiteSpec::parse("[[page]]\nhost = \"a\"\n").is_err());
    }

    #[test]
    fn served_pages_and_ledger() {
        let mut spec = generate(1, 2, 0, 2);
        spec.pages[1].gzip = true;
        let web = SynthWeb::start(spec.clone(), "127.0.0.1:0").unwrap();
        let get = |host: &str, path: &str| {
            let mut s = TcpStream::connect(web.local_addr()).unwrap();
            write!(s, "GET {path} HTTP/1.1\r\nHost: {host}\r\nConnection: close\r\n\r\n").unwrap();
            let mut r = BufReader::new(s);
            let head = http::parse_response_head(&http::read_head(&mut r).unwrap().unwrap()).unwrap();
            let (body, _) = http::read_body(&mut r, http::response_framing("GET", &head), 1 << 20).unwrap();
            (head, body)
        };
        let (h, b) = get("www001.test", "/");
        assert_eq!(h.status, 200);
        assert!(String::from_utf8_lossy(&b).contains("href=\"/page1.html\""));
        let (h, _) = get("www001.test", "/page1.html");
        assert_eq!(h.headers.get("content-encoding"), Some("gzip"));
        assert_eq!(get("www001.test", "/missing").0.status, 404);
        assert_eq!(web.requests().len(), 3);
    }

    #[test]
    fn fixtures_are_loadable() {
        let dir = tempfile::tempdir().unwrap();
        let spec = generate(5, 10, 10, 5);
        let f = write_fixtures(&spec, dir.path()).unwrap();
        let bl = BlacklistDb::load(&f.blacklist).unwrap();
        assert_eq!(bl.len(), 10);
        assert_eq!(EngineFixture::load(&f.engines).unwrap().detections.len(), 10);
        assert!(crate::augment::GeoIpDb::load(&f.geoip).is_ok());
        assert!(crate::augment::WhoisDb::load(&f.whois).is_ok());
        assert!(crate::agents::Credentials::load(&f.credentials).is_ok());
        let cfg = super::super::config::Config::load(&f.config).unwrap();
        assert_eq!(cfg.agents.seeders.len(), 2);
        assert_eq!(SiteSpec::load(&f.spec).unwrap(), spec);
    }
}
