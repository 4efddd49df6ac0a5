use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use flowlab_core::agents::Credentials;
use flowlab_core::contentprep::DecodedBody;
use flowlab_core::features::{extract_features, FeatureVector};
use flowlab_core::flowstore::Store;
use flowlab_core::forest::{format_metric, load_model, save_model, SplitPolicy};
use flowlab_core::pipeline::{self, synthweb, Capture, Config, Fixtures, RunOverrides};
use flowlab_core::wire::SeedFocus;
use flowlab_core::Exec;

#[derive(Parser)]
#[command(name = "flowlab", version, about = "Capture, label and classify web traffic")]
struct Cli {
    /// Run configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Store directory; overrides the config.
    #[arg(long, global = true)]
    store: Option<PathBuf>,
    /// Seed for data splits, bootstrap draws and generated sites.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Run batch work on the calling thread only.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Clone, Default)]
struct AgentFlags {
    /// Number of agents.
    #[arg(long)]
    agents: Option<usize>,
    /// Only use seeders with this focus.
    #[arg(long)]
    focus: Option<SeedFocus>,
    /// Interactions per site.
    #[arg(long)]
    budget: Option<usize>,
    /// Seeds visited per seeder (0 = one pass).
    #[arg(long)]
    seed_cap: Option<usize>,
}

impl AgentFlags {
    fn overrides(&self) -> RunOverrides {
        RunOverrides { agents: self.agents, budget: self.budget, seed_cap: self.seed_cap, focus: self.focus }
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Run the gateway and proxy, recording every exchange.
    Serve {
        /// Stop after this many seconds; run until killed otherwise.
        #[arg(long)]
        duration: Option<u64>,
    },
    /// Drive agents through an already running proxy.
    Crawl {
        #[arg(long)]
        proxy: std::net::SocketAddr,
        #[command(flatten)]
        agent: AgentFlags,
    },
    /// Print feature vectors for files, or recompute them for the store.
    Extract {
        /// Files to extract; without any, the store is re-extracted.
        files: Vec<PathBuf>,
        /// Declared media type for the files.
        #[arg(long, default_value = "")]
        content_type: String,
    },
    /// Run the scan workers until every ticket settles.
    Label,
    /// Train a forest on the store and evaluate it on the held-out part.
    Train {
        /// Where to write the model.
        #[arg(long)]
        model: PathBuf,
        /// `scaled` or `paper2017`; defaults to the config.
        #[arg(long)]
        split: Option<SplitPolicy>,
        #[arg(long)]
        trees: Option<usize>,
    },
    /// Score stored records, or files, with a saved model.
    Classify {
        #[arg(long)]
        model: PathBuf,
        files: Vec<PathBuf>,
        /// Write CSV here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write report CSVs for the store.
    Report {
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate or serve a synthetic web.
    Synthweb {
        #[command(subcommand)]
        cmd: SynthCmd,
    },
    /// Capture, crawl and label in one run.
    Pipeline {
        #[command(flatten)]
        agent: AgentFlags,
    },
}

#[derive(Subcommand)]
enum SynthCmd {
    /// Write a site spec and the fixtures and config for a pipeline run over it.
    Generate {
        #[arg(long)]
        dir: PathBuf,
        #[arg(long, default_value_t = 60)]
        benign: usize,
        #[arg(long, default_value_t = 40)]
        malicious: usize,
        #[arg(long, default_value_t = 5)]
        per_host: usize,
    },
    /// Serve a site spec.
    Serve {
        spec: PathBuf,
        #[arg(long, default_value = "127.0.0.1:8080")]
        listen: String,
        #[arg(long)]
        duration: Option<u64>,
    },
}

fn load_config(cli: &Cli) -> Result<Config> {
    let mut cfg = match &cli.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    if let Some(s) = &cli.store {
        cfg.store.root = s.clone();
    }
    Ok(cfg)
}

fn wait(duration: Option<u64>) {
    match duration {
        Some(s) => std::thread::sleep(Duration::from_secs(s)),
        None => loop {
            std::thread::park();
        },
    }
}

fn print_json<T: serde::Serialize>(v: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

fn file_vector(path: &Path, content_type: &str) -> Result<FeatureVector> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(extract_features(&DecodedBody::plain(bytes, content_type)))
}

fn run(cli: Cli) -> Result<()> {
    let exec = if cli.sequential { Exec::Sequential } else { Exec::Parallel };
    let cfg = load_config(&cli)?;
    match &cli.cmd {
        Cmd::Serve { duration } => {
            let fixtures = Fixtures::load(&cfg)?;
            let capture = Capture::start(&cfg, &fixtures)?;
            println!("gateway icap://{}/ proxy http://{}", capture.gateway_addr(), capture.proxy_addr());
            if let Some(a) = capture.synth_addr() {
                println!("synthweb http://{a}");
            }
            std::io::stdout().flush()?;
            wait(*duration);
            let (store, _) = capture.finish()?;
            print_json(&pipeline::summarize(&store))?;
        }
        Cmd::Crawl { proxy, agent } => {
            let creds = match &cfg.agents.credentials {
                Some(p) => Credentials::load(p)?,
                None => Credentials::default(),
            };
            std::fs::create_dir_all(&cfg.store.root)?;
            let visits = pipeline::run_agents(&cfg, &agent.overrides(), &creds, *proxy)?;
            print_json(&visits)?;
        }
        Cmd::Extract { files, content_type } if !files.is_empty() => {
            println!("file,{}", FeatureVector::csv_header());
            for f in files {
                println!("{},{}", f.display(), file_vector(f, content_type)?.csv_row());
            }
        }
        Cmd::Extract { .. } => {
            let mut store = Store::open(&cfg.store.root)?;
            let n = pipeline::reextract(&mut store, &Default::default())?;
            store.flush()?;
            println!("{n} of {} records updated", store.len());
        }
        Cmd::Label => {
            let fixtures = Fixtures::load(&cfg)?;
            let mut store = Store::open(&cfg.store.root)?;
            let mut backend = fixtures.scan_service(&cfg);
            pipeline::settle_tickets(&mut store, &mut backend, cfg.labels.scan_capacity)?;
            store.flush()?;
            print_json(&pipeline::summarize(&store))?;
        }
        Cmd::Train { model, split, trees } => {
            let store = Store::open_read_only(&cfg.store.root)?;
            let policy = match split {
                Some(p) => *p,
                None => cfg.forest.split.parse().map_err(anyhow::Error::msg)?,
            };
            let mut section = cfg.forest.clone();
            if let Some(t) = trees {
                section.n_trees = *t;
            }
            let (m, report) = pipeline::cmd_train(&store, &section, policy, cli.seed, exec)?;
            save_model(&m, model)?;
            print_json(&report)?;
            let mm = report.metrics;
            eprintln!(
                "malware precision {} recall {} accuracy {}",
                format_metric(mm.malware.precision),
                format_metric(mm.malware.recall),
                format_metric(mm.malware.accuracy)
            );
        }
        Cmd::Classify { model, files, out } => {
            let m = load_model(model)?;
            let mut csv = String::from("id,category,score\n");
            if files.is_empty() {
                let store = Store::open_read_only(&cfg.store.root)?;
                for (id, p) in pipeline::cmd_classify(&store, &m, exec)? {
                    csv.push_str(&format!("{id},{},{:.6}\n", p.category.as_str(), p.score));
                }
            } else {
                for f in files {
                    let p = m.predict(&file_vector(f, "")?)?;
                    csv.push_str(&format!("{},{},{:.6}\n", f.display(), p.category.as_str(), p.score));
                }
            }
            match out {
                Some(o) => std::fs::write(o, csv)?,
                None => print!("{csv}"),
            }
        }
        Cmd::Report { out } => {
            let store = Store::open_read_only(&cfg.store.root)?;
            let b = pipeline::cmd_report(&store, out)?;
            println!(
                "{} malicious records, {} unique bodies; CSVs in {}",
                b.malicious_records,
                b.unique_malicious,
                out.display()
            );
        }
        Cmd::Synthweb { cmd: SynthCmd::Generate { dir, benign, malicious, per_host } } => {
            let spec = synthweb::generate(cli.seed, *benign, *malicious, *per_host);
            let f = synthweb::write_fixtures(&spec, dir)?;
            println!("{} pages on {} hosts; config {}", spec.pages.len(), spec.hosts.len(), f.config.display());
        }
        Cmd::Synthweb { cmd: SynthCmd::Serve { spec, listen, duration } } => {
            let web = synthweb::SynthWeb::start(synthweb::SiteSpec::load(spec)?, listen)?;
            println!("synthweb http://{}", web.local_addr());
            std::io::stdout().flush()?;
            wait(*duration);
            let n = web.requests().len();
            web.shutdown();
            println!("{n} requests served");
        }
        Cmd::Pipeline { agent } => {
            if cli.config.is_none() {
                bail!("pipeline needs --config");
            }
            print_json(&pipeline::cmd_pipeline(&cfg, &agent.overrides())?)?;
        }
    }
    Ok(())
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
