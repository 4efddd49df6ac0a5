//! TOML run configuration.
//!
//! Relative paths are resolved against the directory holding the config file.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::wire::{FailPolicy, GatewayMode, SeedFocus};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError {
    pub file: String,
    pub line: Option<usize>,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(l) => write!(f, "{}:{}: {}", self.file, l, self.message),
            None => write!(f, "{}: {}", self.file, self.message),
        }
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, Clone, Default, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct Config {
    #[serde(default)]
    pub store: StoreSection,
    #[serde(default)]
    pub gateway: GatewaySection,
    #[serde(default)]
    pub proxy: ProxySection,
    #[serde(default)]
    pub labels: LabelsSection,
    #[serde(default)]
    pub augment: AugmentSection,
    #[serde(default)]
    pub agents: AgentsSection,
    #[serde(default)]
    pub forest: ForestSection,
    pub synthweb: Option<SynthwebSection>,
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct StoreSection {
    #[serde(default = "default_store")]
    pub root: PathBuf,
}

fn default_store() -> PathBuf {
    PathBuf::from("flowstore")
}

impl Default for StoreSection {
    fn default() -> Self {
        StoreSection { root: default_store() }
    }
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct GatewaySection {
    #[serde(default = "default_icap_listen")]
    pub listen: String,
    #[serde(default)]
    pub mode: GatewayMode,
}

fn default_icap_listen() -> String {
    "127.0.0.1:0".into()
}

impl Default for GatewaySection {
    fn default() -> Self {
        GatewaySection { listen: default_icap_listen(), mode: GatewayMode::default() }
    }
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ProxySection {
    #[serde(default = "default_icap_listen")]
    pub listen: String,
    #[serde(default)]
    pub fail_policy: FailPolicy,
    #[serde(default)]
    pub allow_dns: bool,
    /// Host name to `ip:port` overrides.
    #[serde(default)]
    pub hosts: BTreeMap<String, String>,
}

impl Default for ProxySection {
    fn default() -> Self {
        ProxySection { listen: default_icap_listen(), fail_policy: FailPolicy::default(), allow_dns: false, hosts: BTreeMap::new() }
    }
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct LabelsSection {
    pub blacklist: Option<PathBuf>,
    pub signatures: Option<PathBuf>,
    pub engine_fixture: Option<PathBuf>,
    #[serde(default = "default_max_upload")]
    pub max_upload: usize,
    #[serde(default = "default_capacity")]
    pub scan_capacity: usize,
    #[serde(default = "default_latency")]
    pub latency_polls: u32,
}

fn default_max_upload() -> usize {
    crate::labels::engines::DEFAULT_MAX_UPLOAD
}

fn default_capacity() -> usize {
    16
}

fn default_latency() -> u32 {
    1
}

impl Default for LabelsSection {
    fn default() -> Self {
        LabelsSection {
            blacklist: None,
            signatures: None,
            engine_fixture: None,
            max_upload: default_max_upload(),
            scan_capacity: default_capacity(),
            latency_polls: default_latency(),
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct AugmentSection {
    pub geoip: Option<PathBuf>,
    pub whois: Option<PathBuf>,
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SeederSection {
    pub focus: SeedFocus,
    pub file: PathBuf,
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct AgentsSection {
    #[serde(default = "default_agents")]
    pub count: usize,
    #[serde(default = "default_budget")]
    pub budget: usize,
    /// Seeds visited per seeder; 0 means one pass over the list.
    #[serde(default)]
    pub seed_cap: usize,
    pub credentials: Option<PathBuf>,
    #[serde(default)]
    pub seeders: Vec<SeederSection>,
}

fn default_agents() -> usize {
    1
}

fn default_budget() -> usize {
    10
}

impl Default for AgentsSection {
    fn default() -> Self {
        AgentsSection { count: default_agents(), budget: default_budget(), seed_cap: 0, credentials: None, seeders: Vec::new() }
    }
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ForestSection {
    #[serde(default = "default_trees")]
    pub n_trees: usize,
    #[serde(default = "default_benign_weight")]
    pub benign_weight: f64,
    #[serde(default = "default_malicious_weight")]
    pub malicious_weight: f64,
    #[serde(default = "default_split")]
    pub split: String,
}

fn default_trees() -> usize {
    10
}

fn default_benign_weight() -> f64 {
    1.0
}

fn default_malicious_weight() -> f64 {
    10.0
}

fn default_split() -> String {
    "scaled".into()
}

impl Default for ForestSection {
    fn default() -> Self {
        ForestSection {
            n_trees: default_trees(),
            benign_weight: default_benign_weight(),
            malicious_weight: default_malicious_weight(),
            split: default_split(),
        }
    }
}

/// In-process synthetic web started alongside the pipeline.
#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SynthwebSection {
    pub spec: PathBuf,
    #[serde(default = "default_icap_listen")]
    pub listen: String,
}

impl Config {
    pub fn parse(text: &str, file: &str) -> Result<Self, ConfigError> {
        toml::from_str::<Config>(text).map_err(|e| ConfigError {
            file: file.into(),
            line: e.span().map(|s| line_of(text, s.start)),
            message: e.message().trim().to_string(),
        })
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let file = path.display().to_string();
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError { file: file.clone(), line: None, message: e.to_string() })?;
        let mut c = Self::parse(&text, &file)?;
        c.resolve_paths(path.parent().unwrap_or(Path::new(".")));
        Ok(c)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.store.root);
        for p in [&mut self.labels.blacklist, &mut self.labels.signatures, &mut self.labels.engine_fixture]
            .into_iter()
            .chain([&mut self.augment.geoip, &mut self.augment.whois, &mut self.agents.credentials])
            .flatten()
        {
            fix(p);
        }
        for s in &mut self.agents.seeders {
            fix(&mut s.file);
        }
        if let Some(s) = &mut self.synthweb {
            fix(&mut s.spec);
        }
    }
}

fn line_of(text: &str, offset: usize) -> usize {
    text.as_bytes()[..offset.min(text.len())].iter().filter(|&&b| b == b'\n').count() + 1
}
