//! The agent loop: fetch a seed through the proxy, plan, replay.

use std::io::{self, BufReader, Write};
use std::net::{SocketAddr, TcpStream};
use std::time::Duration;

use serde::Serialize;

use super::plan::{plan_interaction, Action, ActionPlan, StopReason};
use super::{AgentConfig, Credentials, SeedEntry, Seeder, VIEWPORT_HEADER};
use crate::contentprep::{decode_body, DecodeLimits};
use crate::features::extract::{doc_kind, DocKind};
use crate::features::parse_html;
use crate::wire::http::{self, split_http_url};
use crate::wire::proxy::{AGENT_HEADER, SEEDER_HEADER};
use crate::wire::{Headers, RequestHead};

#[derive(Debug, Clone)]
pub struct FetchedPage {
    pub status: u16,
    pub headers: Headers,
    /// Body after content decoding.
    pub body: Vec<u8>,
    pub declared_type: String,
}

const CLIENT_TIMEOUT: Duration = Duration::from_secs(30);

/// Sends one request through the forward proxy at `proxy`.
pub fn fetch_via_proxy(
    proxy: SocketAddr,
    cfg: &AgentConfig,
    method: &str,
    url: &str,
    form_body: Option<&str>,
) -> io::Result<FetchedPage> {
    let (host, port, _) =
        split_http_url(url).ok_or_else(|| io::Error::new(io::ErrorKind::InvalidInput, format!("not an http URL: {url}")))?;
    let mut req = RequestHead::new(method, url);
    req.headers.push("Host", if port == 80 { host } else { format!("{host}:{port}") });
    req.headers.push("User-Agent", cfg.user_agent.as_str());
    req.headers.push("Accept", "text/html,application/xhtml+xml,*/*;q=0.8");
    req.headers.push("Accept-Encoding", "gzip, deflate");
    req.headers.push(AGENT_HEADER, cfg.agent_id.as_str());
    req.headers.push(SEEDER_HEADER, cfg.focus.as_str());
    req.headers.push(VIEWPORT_HEADER, format!("{}x{}", cfg.viewport.0, cfg.viewport.1));
    req.headers.push("Connection", "close");
    if let Some(b) = form_body {
        req.headers.push("Content-Type", "application/x-www-form-urlencoded");
        req.headers.push("Content-Length", b.len().to_string());
    }

    let mut stream = TcpStream::connect_timeout(&proxy, CLIENT_TIMEOUT)?;
    stream.set_read_timeout(Some(CLIENT_TIMEOUT))?;
    stream.write_all(&req.to_bytes())?;
    if let Some(b) = form_body {
        stream.write_all(b.as_bytes())?;
    }
    stream.flush()?;
    let mut reader = BufReader::new(stream);
    let raw = http::read_head(&mut reader)?.ok_or_else(|| io::Error::new(io::ErrorKind::UnexpectedEof, "no response"))?;
    let head = http::parse_response_head(&raw).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))?;
    let (body, _) = http::read_body(&mut reader, http::response_framing(method, &head), crate::wire::DEFAULT_MAX_BODY)?;
    let decoded = decode_body(&body, &head.headers, &DecodeLimits::default())
        .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e.to_string()))?;
    Ok(FetchedPage { status: head.status, headers: head.headers, body: decoded.bytes, declared_type: decoded.declared_type })
}

#[derive(Debug, Clone, Serialize)]
pub struct VisitSummary {
    pub seed: SeedEntry,
    pub seed_status: Option<u16>,
    /// Requests sent for this site, the seed fetch included.
    pub requests: usize,
    pub actions: Vec<Action>,
    pub stop_reason: StopReason,
    pub failed_actions: usize,
}

fn plan_for(page: &FetchedPage, url: &str, cfg: &AgentConfig, creds: &Credentials) -> ActionPlan {
    let empty = ActionPlan { actions: Vec::new(), stop_reason: StopReason::Depleted };
    if !(200..300).contains(&page.status) {
        return empty;
    }
    let text = String::from_utf8_lossy(&page.body);
    if doc_kind(&page.declared_type, &page.body, &text) != DocKind::Html {
        return empty;
    }
    plan_interaction(&parse_html(&text), url, cfg, creds)
}

fn execute(proxy: SocketAddr, cfg: &AgentConfig, action: &Action) -> io::Result<FetchedPage> {
    match action {
        Action::Follow { url } | Action::Click { url } => fetch_via_proxy(proxy, cfg, "GET", url, None),
        Action::Login { form, .. } | Action::Submit { form } => {
            let encoded = form.encoded_fields();
            if form.method == "POST" {
                fetch_via_proxy(proxy, cfg, "POST", &form.action, Some(&encoded))
            } else {
                let mut u = form.action.clone();
                if !encoded.is_empty() {
                    u.push(if u.contains('?') { '&' } else { '?' });
                    u.push_str(&encoded);
                }
                fetch_via_proxy(proxy, cfg, "GET", &u, None)
            }
        }
    }
}

/// Fetches one seed and replays its planned interactions.
///
/// Fetch failures are logged and counted; they never end the run.
pub fn visit_seed(cfg: &AgentConfig, seed: SeedEntry, proxy: SocketAddr, creds: &Credentials) -> VisitSummary {
    let mut summary = VisitSummary {
        seed: seed.clone(),
        seed_status: None,
        requests: 1,
        actions: Vec::new(),
        stop_reason: StopReason::Depleted,
        failed_actions: 0,
    };
    match fetch_via_proxy(proxy, cfg, "GET", &seed.url, None) {
        Ok(page) => {
            summary.seed_status = Some(page.status);
            let plan = plan_for(&page, &seed.url, cfg, creds);
            summary.stop_reason = plan.stop_reason;
            for a in &plan.actions {
                summary.requests += 1;
                if let Err(e) = execute(proxy, cfg, a) {
                    log::info!("agent {}: action on {} failed: {e}", cfg.agent_id, seed.url);
                    summary.failed_actions += 1;
                }
            }
            summary.actions = plan.actions;
        }
        Err(e) => log::info!("agent {}: seed {} failed: {e}", cfg.agent_id, seed.url),
    }
    summary
}

/// Visits `seed_cap` seeds, one after another.
pub fn run_agent(
    cfg: &AgentConfig,
    seeder: &mut Seeder,
    proxy: SocketAddr,
    creds: &Credentials,
    seed_cap: usize,
) -> Vec<VisitSummary> {
    let mut out = Vec::new();
    for _ in 0..seed_cap {
        let Ok(seed) = seeder.next_seed() else { break };
        out.push(visit_seed(cfg, seed, proxy, creds));
    }
    out
}
