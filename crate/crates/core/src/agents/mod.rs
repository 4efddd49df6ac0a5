//! Headless agents that browse seed sites through the capture proxy.
//!
//! An agent takes seeds from one seeder, fetches each seed page, plans its
//! interactions from the static DOM and replays them as further proxied
//! requests. No script on the page is executed.

pub mod plan;
pub mod run;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Duration, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::wire::SeedFocus;

pub use plan::{plan_interaction, Action, ActionPlan, FormTarget, StopReason};
pub use run::{fetch_via_proxy, run_agent, visit_seed, FetchedPage, VisitSummary};

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("seed list {0} is empty")]
    EmptySeeds(String),
    #[error("credentials line {line}: {reason}")]
    Credentials { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedEntry {
    pub url: String,
    pub focus: SeedFocus,
}

/// Round-robin over one seed list.
///
/// With a state file the position survives restarts; it holds the index of
/// the next entry as decimal text.
#[derive(Debug, Clone)]
pub struct Seeder {
    pub focus: SeedFocus,
    urls: Vec<String>,
    position: usize,
    state: Option<PathBuf>,
}

impl Seeder {
    pub fn from_list(focus: SeedFocus, urls: Vec<String>) -> Result<Self, AgentError> {
        if urls.is_empty() {
            return Err(AgentError::EmptySeeds(focus.to_string()));
        }
        Ok(Seeder { focus, urls, position: 0, state: None })
    }

    /// Parses a seed file: one URL per line, blank lines and `#` comments skipped.
    pub fn parse(focus: SeedFocus, text: &str) -> Result<Self, AgentError> {
        let urls = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .map(normalize_seed)
            .collect();
        Self::from_list(focus, urls)
    }

    /// Loads a seed file and resumes from `state` when it exists.
    pub fn load(focus: SeedFocus, path: &Path, state: Option<&Path>) -> Result<Self, AgentError> {
        let mut s = Self::parse(focus, &fs::read_to_string(path)?)
            .map_err(|_| AgentError::EmptySeeds(path.display().to_string()))?;
        if let Some(st) = state {
            if let Ok(text) = fs::read_to_string(st) {
                s.position = text.trim().parse::<usize>().unwrap_or(0) % s.urls.len();
            }
            s.state = Some(st.to_path_buf());
        }
        Ok(s)
    }

    pub fn len(&self) -> usize {
        self.urls.len()
    }

    pub fn is_empty(&self) -> bool {
        self.urls.is_empty()
    }

    pub fn position(&self) -> usize {
        self.position
    }

    pub fn next_seed(&mut self) -> Result<SeedEntry, AgentError> {
        let url = self.urls[self.position].clone();
        self.position = (self.position + 1) % self.urls.len();
        if let Some(st) = &self.state {
            let tmp = st.with_extension("tmp");
            fs::write(&tmp, self.position.to_string())?;
            fs::rename(&tmp, st)?;
        }
        Ok(SeedEntry { url, focus: self.focus })
    }
}

/// Bare domains and IPs in seed lists become `http://` URLs.
fn normalize_seed(line: &str) -> String {
    if line.contains("://") {
        line.to_string()
    } else {
        format!("http://{line}/")
    }
}

pub const FALLBACK_USER: &str = "flowlab.agent@example.org";
pub const FALLBACK_PASSWORD: &str = "Fl0wlab-agent";

/// Per-host login credentials, falling back to fixed values.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Credentials {
    by_host: BTreeMap<String, (String, String)>,
}

impl Credentials {
    /// Parses `host,user,password` CSV; a header row is optional.
    pub fn parse(text: &str) -> Result<Self, AgentError> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(false).flexible(true).from_reader(text.as_bytes());
        let mut by_host = BTreeMap::new();
        for (i, rec) in rdr.records().enumerate() {
            let line = i + 1;
            let rec = rec.map_err(|e| AgentError::Credentials { line, reason: e.to_string() })?;
            if rec.len() == 1 && rec[0].trim().is_empty() {
                continue;
            }
            if rec.len() != 3 {
                return Err(AgentError::Credentials { line, reason: format!("expected 3 fields, got {}", rec.len()) });
            }
            let host = rec[0].trim().to_ascii_lowercase();
            if line == 1 && host == "host" {
                continue;
            }
            by_host.insert(host, (rec[1].to_string(), rec[2].to_string()));
        }
        Ok(Credentials { by_host })
    }

    pub fn load(path: &Path) -> Result<Self, AgentError> {
        Self::parse(&fs::read_to_string(path)?)
    }

    pub fn insert(&mut self, host: &str, user: &str, password: &str) {
        self.by_host.insert(host.to_ascii_lowercase(), (user.into(), password.into()));
    }

    /// User and password for `host`, or the fallback pair.
    pub fn for_host(&self, host: &str) -> (String, String) {
        self.by_host
            .get(&host.to_ascii_lowercase())
            .cloned()
            .unwrap_or_else(|| (FALLBACK_USER.into(), FALLBACK_PASSWORD.into()))
    }
}

pub const DEFAULT_VIEWPORT: (u32, u32) = (1366, 768);
pub const DEFAULT_USER_AGENT: &str = "Mozilla/5.0 (X11; Linux x86_64; rv:52.0) Gecko/20100101 Firefox/52.0";
pub const VIEWPORT_HEADER: &str = "X-Viewport";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentConfig {
    pub agent_id: String,
    pub focus: SeedFocus,
    /// Interactions per site after the seed fetch.
    pub interaction_budget: usize,
    pub viewport: (u32, u32),
    pub user_agent: String,
    pub credentials: Option<PathBuf>,
}

impl AgentConfig {
    pub fn new(agent_id: &str) -> Self {
        AgentConfig {
            agent_id: agent_id.into(),
            focus: SeedFocus::Benign,
            interaction_budget: 10,
            viewport: DEFAULT_VIEWPORT,
            user_agent: DEFAULT_USER_AGENT.into(),
            credentials: None,
        }
    }
}

/// Liveness input for the supervisor.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Heartbeat {
    pub agent_id: String,
    pub started_at: DateTime<Utc>,
    /// Timestamp of the agent's newest stored record.
    pub last_record: Option<DateTime<Utc>>,
}

pub const DEFAULT_STALL_THRESHOLD_SECS: i64 = 600;

/// Agents whose newest record (or start, if they have none) is strictly
/// older than `threshold`.
pub fn supervise(heartbeats: &[Heartbeat], now: DateTime<Utc>, threshold: Duration) -> Vec<String> {
    heartbeats
        .iter()
        .filter(|h| now - h.last_record.unwrap_or(h.started_at) > threshold)
        .map(|h| h.agent_id.clone())
        .collect()
}

/// Builds heartbeats from the store's records.
pub fn heartbeats_from_store(
    store: &crate::flowstore::Store,
    agents: &[(String, DateTime<Utc>)],
) -> Vec<Heartbeat> {
    let mut latest: BTreeMap<&str, DateTime<Utc>> = BTreeMap::new();
    for r in store.records() {
        let e = latest.entry(r.exchange.agent_id.as_str()).or_insert(r.exchange.started_at);
        *e = (*e).max(r.exchange.started_at);
    }
    agents
        .iter()
        .map(|(id, start)| Heartbeat { agent_id: id.clone(), started_at: *start, last_record: latest.get(id.as_str()).copied() })
        .collect()
}
