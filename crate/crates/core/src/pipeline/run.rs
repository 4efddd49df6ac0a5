//! Running gateway, proxy, agents, committer and scan workers together.

use std::collections::{BTreeMap, HashMap};
use std::net::SocketAddr;
use std::path::Path;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{mpsc, Arc, Mutex};
use std::thread;
use std::time::Duration;

use serde::Serialize;

use super::commit::Committer;
use super::config::Config;
use super::synthweb::{SiteSpec, SynthWeb};
use super::PipelineError;
use crate::agents::{visit_seed, AgentConfig, Credentials, Seeder, VisitSummary};
use crate::augment::{Augmenter, GeoIpDb, WhoisDb};
use crate::flowstore::Store;
use crate::labels::{
    fetch_worker_step, submit_worker_step, BlacklistDb, EngineFixture, FastLabeler, ScanStatus, SignatureDb,
    SimulatedScanService,
};
use crate::wire::{
    FlowEmission, FlowSink, Gateway, GatewayConfig, HostTarget, Proxy, ProxyConfig, SeedFocus, ServerHandle,
};

/// Command-line overrides applied on top of the config file.
#[derive(Debug, Clone, Default)]
pub struct RunOverrides {
    pub agents: Option<usize>,
    pub budget: Option<usize>,
    pub seed_cap: Option<usize>,
    /// Only run seeders with this focus.
    pub focus: Option<SeedFocus>,
}

#[derive(Debug, Clone, Default, Serialize, PartialEq, Eq)]
pub struct RunSummary {
    pub records: usize,
    pub blobs: usize,
    pub tickets: BTreeMap<String, usize>,
    pub ground_truth: BTreeMap<String, usize>,
    pub visits: usize,
    /// Requests the agents sent, seed fetches included.
    pub agent_requests: usize,
    /// Requests logged by the in-process synthetic web, when one ran.
    pub synth_requests: Option<usize>,
}

/// Loads the label, augmentation and credential fixtures named in `cfg`.
pub struct Fixtures {
    pub blacklist: BlacklistDb,
    pub signatures: SignatureDb,
    pub engines: EngineFixture,
    pub augmenter: Augmenter,
    pub credentials: Credentials,
}

impl Fixtures {
    pub fn load(cfg: &Config) -> Result<Self, PipelineError> {
        let blacklist = match &cfg.labels.blacklist {
            Some(p) => BlacklistDb::load(p).map_err(|e| PipelineError::fixture(p, e))?,
            None => BlacklistDb::new(),
        };
        let signatures = match &cfg.labels.signatures {
            Some(p) => SignatureDb::load(p).map_err(|e| PipelineError::fixture(p, e))?,
            None => SignatureDb::new(),
        };
        let engines = match &cfg.labels.engine_fixture {
            Some(p) => EngineFixture::load(p).map_err(|e| PipelineError::fixture(p, e))?,
            None => EngineFixture::default(),
        };
        let geoip = match &cfg.augment.geoip {
            Some(p) => GeoIpDb::load(p).map_err(|e| PipelineError::fixture(p, e))?,
            None => GeoIpDb::default(),
        };
        let whois = match &cfg.augment.whois {
            Some(p) => WhoisDb::load(p).map_err(|e| PipelineError::fixture(p, e))?,
            None => WhoisDb::default(),
        };
        let credentials = match &cfg.agents.credentials {
            Some(p) => Credentials::load(p).map_err(|e| PipelineError::fixture(p, e))?,
            None => Credentials::default(),
        };
        Ok(Fixtures { blacklist, signatures, engines, augmenter: Augmenter { geoip, whois }, credentials })
    }

    pub fn scan_service(&self, cfg: &Config) -> SimulatedScanService {
        SimulatedScanService::new(self.engines.clone())
            .with_max_upload(cfg.labels.max_upload)
            .with_latency(cfg.labels.latency_polls)
    }
}

/// A seeder shared by every agent with its focus, and the visits left.
struct SharedSeeder {
    seeder: Seeder,
    left: usize,
}

fn load_seeders(cfg: &Config, ov: &RunOverrides, store_root: &Path) -> Result<Vec<Arc<Mutex<SharedSeeder>>>, PipelineError> {
    let state_dir = store_root.join("agents");
    std::fs::create_dir_all(&state_dir)?;
    let mut out = Vec::new();
    for s in &cfg.agents.seeders {
        if ov.focus.is_some_and(|f| f != s.focus) {
            continue;
        }
        let state = state_dir.join(format!("{}.pos", s.focus));
        match Seeder::load(s.focus, &s.file, Some(&state)) {
            Ok(seeder) => {
                let cap = ov.seed_cap.unwrap_or(cfg.agents.seed_cap);
                let left = if cap == 0 { seeder.len() } else { cap };
                out.push(Arc::new(Mutex::new(SharedSeeder { seeder, left })));
            }
            Err(crate::agents::AgentError::EmptySeeds(p)) => log::warn!("seed list {p} is empty; skipping"),
            Err(e) => return Err(e.into()),
        }
    }
    Ok(out)
}

fn parse_hosts(cfg: &Config) -> Result<HashMap<String, HostTarget>, PipelineError> {
    cfg.proxy
        .hosts
        .iter()
        .map(|(h, a)| {
            let connect: SocketAddr =
                a.parse().map_err(|_| PipelineError::Invalid(format!("proxy.hosts.{h}: `{a}` is not ip:port")))?;
            Ok((h.to_ascii_lowercase(), HostTarget { connect, reported_ip: None }))
        })
        .collect()
}

/// Gateway, proxy, optional synthetic web and the committer thread.
pub struct Capture {
    gateway: ServerHandle,
    proxy: ServerHandle,
    synth: Option<SynthWeb>,
    done: Arc<AtomicBool>,
    committer: thread::JoinHandle<Result<Store, PipelineError>>,
}

impl Capture {
    /// Opens the store and starts every listener named in `cfg`.
    pub fn start(cfg: &Config, fixtures: &Fixtures) -> Result<Capture, PipelineError> {
        let mut store = Store::open(&cfg.store.root)?;
        let synth = match &cfg.synthweb {
            Some(s) => Some(SynthWeb::start(SiteSpec::load(&s.spec)?, &s.listen)?),
            None => None,
        };
        let mut hosts: HashMap<String, HostTarget> = synth.iter().flat_map(|w| w.host_targets()).collect();
        hosts.extend(parse_hosts(cfg)?);

        let (tx, rx) = mpsc::channel::<FlowEmission>();
        let sink: Arc<dyn FlowSink> = Arc::new(tx);
        let labeler = Arc::new(FastLabeler::new(fixtures.blacklist.clone(), fixtures.signatures.clone()));
        let gateway = Arc::new(Gateway::new(
            GatewayConfig { mode: cfg.gateway.mode, service_name: "flowlab".into() },
            labeler,
            sink.clone(),
        ));
        let gw_handle = gateway.listen(&cfg.gateway.listen)?;
        let mut pcfg = ProxyConfig::new(gw_handle.local_addr());
        pcfg.fail_policy = cfg.proxy.fail_policy;
        pcfg.allow_dns = cfg.proxy.allow_dns;
        pcfg.hosts = hosts;
        let proxy_handle = Arc::new(Proxy::new(pcfg, sink)).listen(&cfg.proxy.listen)?;
        log::info!("gateway on {}, proxy on {}", gw_handle.local_addr(), proxy_handle.local_addr());

        let done = Arc::new(AtomicBool::new(false));
        let committer = {
            let done = done.clone();
            let c = Committer::new(fixtures.augmenter.clone());
            thread::spawn(move || -> Result<Store, PipelineError> {
                loop {
                    match rx.recv_timeout(Duration::from_millis(50)) {
                        Ok(em) => {
                            c.commit(&mut store, em)?;
                        }
                        Err(mpsc::RecvTimeoutError::Timeout) if done.load(Ordering::SeqCst) => break,
                        Err(mpsc::RecvTimeoutError::Timeout) => {}
                        Err(mpsc::RecvTimeoutError::Disconnected) => break,
                    }
                }
                while let Ok(em) = rx.try_recv() {
                    c.commit(&mut store, em)?;
                }
                store.flush()?;
                Ok(store)
            })
        };
        Ok(Capture { gateway: gw_handle, proxy: proxy_handle, synth, done, committer })
    }

    pub fn proxy_addr(&self) -> SocketAddr {
        self.proxy.local_addr()
    }

    pub fn gateway_addr(&self) -> SocketAddr {
        self.gateway.local_addr()
    }

    pub fn synth_addr(&self) -> Option<SocketAddr> {
        self.synth.as_ref().map(SynthWeb::local_addr)
    }

    /// Stops the listeners, drains the channel and hands back the store
    /// together with the synthetic web's request count.
    pub fn finish(self) -> Result<(Store, Option<usize>), PipelineError> {
        self.proxy.shutdown();
        self.gateway.shutdown();
        self.done.store(true, Ordering::SeqCst);
        let store = self.committer.join().expect("committer thread")?;
        let synth_requests = self.synth.map(|w| {
            let n = w.requests().len();
            w.shutdown();
            n
        });
        Ok((store, synth_requests))
    }
}

/// Runs agents over the configured seeders against `proxy` until every
/// seeder's visit allowance is spent.
pub fn run_agents(cfg: &Config, ov: &RunOverrides, creds: &Credentials, proxy: SocketAddr) -> Result<Vec<VisitSummary>, PipelineError> {
    let seeders = load_seeders(cfg, ov, &cfg.store.root)?;
    if seeders.is_empty() {
        return Ok(Vec::new());
    }
    let n_agents = ov.agents.unwrap_or(cfg.agents.count).max(1);
    let budget = ov.budget.unwrap_or(cfg.agents.budget);
    let creds = Arc::new(creds.clone());
    let mut workers = Vec::new();
    for i in 0..n_agents {
        let shared = seeders[i % seeders.len()].clone();
        let creds = creds.clone();
        let mut acfg = AgentConfig::new(&format!("agent-{:02}", i + 1));
        acfg.interaction_budget = budget;
        acfg.focus = shared.lock().unwrap().seeder.focus;
        acfg.credentials = cfg.agents.credentials.clone();
        workers.push(thread::spawn(move || {
            let mut visits: Vec<VisitSummary> = Vec::new();
            loop {
                let seed = {
                    let mut s = shared.lock().unwrap();
                    if s.left == 0 {
                        break;
                    }
                    s.left -= 1;
                    match s.seeder.next_seed() {
                        Ok(seed) => seed,
                        Err(e) => {
                            log::warn!("{}: seeder state: {e}", acfg.agent_id);
                            break;
                        }
                    }
                };
                visits.push(visit_seed(&acfg, seed, proxy, &creds));
            }
            visits
        }));
    }
    Ok(workers.into_iter().flat_map(|w| w.join().expect("agent thread")).collect())
}

/// Runs every stage until the seed budgets are spent and all scan tickets
/// have settled.
pub fn cmd_pipeline(cfg: &Config, ov: &RunOverrides) -> Result<RunSummary, PipelineError> {
    let fixtures = Fixtures::load(cfg)?;
    let capture = Capture::start(cfg, &fixtures)?;
    let visits = run_agents(cfg, ov, &fixtures.credentials, capture.proxy_addr());
    let (mut store, synth_requests) = capture.finish()?;
    let visits = visits?;

    let mut backend = fixtures.scan_service(cfg);
    settle_tickets(&mut store, &mut backend, cfg.labels.scan_capacity)?;
    store.flush()?;

    let mut summary = summarize(&store);
    summary.visits = visits.len();
    summary.agent_requests = visits.iter().map(|v| v.requests).sum();
    summary.synth_requests = synth_requests;
    Ok(summary)
}

/// Alternates submit and fetch steps until no ticket is unscanned or in progress.
pub fn settle_tickets(
    store: &mut Store,
    backend: &mut SimulatedScanService,
    capacity: usize,
) -> Result<(), PipelineError> {
    const MAX_ROUNDS: usize = 100_000;
    for _ in 0..MAX_ROUNDS {
        let open = store.records().any(|r| {
            r.labels
                .scan_ticket
                .as_ref()
                .is_some_and(|t| matches!(t.status, ScanStatus::Unscanned | ScanStatus::ScanInProgress))
        });
        if !open {
            return Ok(());
        }
        submit_worker_step(store, backend, capacity.max(1))?;
        fetch_worker_step(store, backend)?;
    }
    Err(PipelineError::Invalid("scan tickets did not settle".into()))
}

pub fn summarize(store: &Store) -> RunSummary {
    let mut s = RunSummary { records: store.len(), blobs: store.blob_count(), ..Default::default() };
    for st in ScanStatus::ALL {
        s.tickets.insert(st.as_str().into(), 0);
    }
    for r in store.records() {
        if let Some(t) = &r.labels.scan_ticket {
            *s.tickets.entry(t.status.as_str().into()).or_default() += 1;
        }
        let gt = serde_json::to_value(r.labels.ground_truth).ok().and_then(|v| v.as_str().map(String::from));
        *s.ground_truth.entry(gt.unwrap_or_default()).or_default() += 1;
    }
    s
}
