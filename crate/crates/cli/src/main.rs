use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use hltm_core::corpus::{GuardianClient, GuardianConfig, HttpResponse, PreprocessConfig, Transport};
use hltm_core::sim::experiment::{
    kruskal_tables, read_records, run_experiment, summarize, write_outputs, write_report, ExperimentConfig, Metric,
    Workbench,
};
use hltm_core::sim::ModelPool;
use hltm_service::{AppState, ServiceConfig};

#[derive(Parser)]
#[command(name = "hltm", version, about = "Human-in-the-loop topic modeling workbench")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print the default experiment config as TOML.
    DefaultConfig,
    /// Train the pre-refinement model pool and save it as JSON.
    TrainPool {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the simulated-user experiment and write records, summary and test tables.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        /// Reuse a pool from `train-pool` instead of training one.
        #[arg(long)]
        pool: Option<PathBuf>,
        /// Output directory; overrides `output_dir` in the config.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Rebuild summary.csv and kw.csv from a records.csv and print the summary.
    Report {
        #[arg(long)]
        records: PathBuf,
        /// Defaults to the directory holding the records file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print Kruskal-Wallis tests across backends for each refinement.
    KwTest {
        #[arg(long)]
        records: PathBuf,
        #[arg(long, value_enum)]
        metric: Option<MetricArg>,
    },
    /// Serve the refinement HTTP API.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: SocketAddr,
        #[arg(long, env = "HLTM_WORKSPACE", default_value = "hltm-workspace")]
        workspace: PathBuf,
        /// Static files served under /ui.
        #[arg(long)]
        ui: Option<PathBuf>,
    },
    /// Download Guardian articles into a JSONL cache and report the ingested corpus.
    FetchGuardian {
        #[arg(long, env = "GUARDIAN_API_KEY", hide_env_values = true)]
        api_key: String,
        /// Comma-separated section ids.
        #[arg(long, value_delimiter = ',', required = true)]
        categories: Vec<String>,
        #[arg(long, default_value_t = 100)]
        per_category: usize,
        #[arg(long)]
        cache_dir: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum MetricArg {
    Control,
    Coherence,
}

struct ReqwestTransport(reqwest::blocking::Client);

impl Transport for ReqwestTransport {
    fn get(&self, url: &str) -> hltm_core::Result<HttpResponse> {
        let resp = self.0.get(url).send().map_err(|e| hltm_core::Error::Http { status: 0, message: e.to_string() })?;
        let status = resp.status().as_u16();
        let body = resp.text().map_err(|e| hltm_core::Error::Http { status, message: e.to_string() })?;
        Ok(HttpResponse { status, body })
    }
}

fn config_base(path: &Path) -> &Path {
    path.parent().unwrap_or(Path::new("."))
}

fn load_config(path: &Path) -> Result<ExperimentConfig> {
    ExperimentConfig::from_file(path).with_context(|| format!("reading config {}", path.display()))
}

fn simulate(config_path: &Path, pool: Option<&Path>, out: Option<&Path>) -> Result<()> {
    let config = load_config(config_path)?;
    let out = out
        .map(Path::to_path_buf)
        .or_else(|| config.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("results"));
    let bench = match pool {
        Some(p) => {
            let corpus = config.corpus.load(config_base(config_path))?;
            let pool = ModelPool::load(p).with_context(|| format!("reading pool {}", p.display()))?;
            Workbench::new(corpus, pool, &config)?
        }
        None => {
            tracing::info!("training model pool");
            Workbench::prepare(&config, config_base(config_path))?
        }
    };
    tracing::info!(docs = bench.corpus.num_docs(), vocab = bench.corpus.vocab_size(), "running experiment");
    let output = run_experiment(&bench, &config);
    write_outputs(&out, &output)?;
    tracing::info!(
        records = output.records.len(),
        failures = output.failures.len(),
        dir = %out.display(),
        "wrote results"
    );
    Ok(())
}

fn main() -> Result<()> {
    let filter = tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into());
    tracing_subscriber::fmt().with_env_filter(filter).with_writer(std::io::stderr).init();
    match Cli::parse().command {
        Command::DefaultConfig => print!("{}", ExperimentConfig::default().to_toml()?),
        Command::TrainPool { config, out } => {
            let cfg = load_config(&config)?;
            let corpus = cfg.corpus.load(config_base(&config))?;
            let pool = ModelPool::train(&corpus, &cfg.pool, &cfg.train, &cfg.backends)?;
            pool.save(&out)?;
            tracing::info!(path = %out.display(), "saved pool");
        }
        Command::Simulate { config, pool, out } => simulate(&config, pool.as_deref(), out.as_deref())?,
        Command::Report { records, out } => {
            let rs = read_records(&records)?;
            let dir = out.unwrap_or_else(|| config_base(&records).to_path_buf());
            std::fs::create_dir_all(&dir)?;
            write_report(&dir, &rs)?;
            println!("refinement\tbackend\tuser\tn\tcontrol\tcoherence_delta");
            for s in summarize(&rs) {
                println!(
                    "{}\t{}\t{}\t{}\t{:.2} ({:.2})\t{:.2e} ({:.2e})",
                    s.refinement, s.backend, s.user, s.control.n, s.control.mean, s.control.sd, s.coherence.mean, s.coherence.sd
                );
            }
        }
        Command::KwTest { records, metric } => {
            let rows = kruskal_tables(&read_records(&records)?)?;
            println!("user\tmetric\trefinement\tchi2\tdf\tp");
            for r in rows {
                let name = match r.metric {
                    Metric::Control => "control",
                    Metric::Coherence => "coherence",
                };
                match (metric, r.metric) {
                    (Some(MetricArg::Control), Metric::Coherence) | (Some(MetricArg::Coherence), Metric::Control) => continue,
                    _ => {}
                }
                println!("{}\t{}\t{}\t{:.3}\t{}\t{:.4}", r.user, name, r.refinement, r.chi2, r.df, r.p);
            }
        }
        Command::Serve { addr, workspace, ui } => {
            let mut cfg = ServiceConfig::new(workspace);
            cfg.ui_dir = ui;
            let state = AppState::open(cfg)?;
            tokio::runtime::Runtime::new()?.block_on(hltm_service::serve(state, addr))?;
        }
        Command::FetchGuardian { api_key, categories, per_category, cache_dir } => {
            if per_category == 0 {
                bail!("--per-category must be at least 1");
            }
            let mut cfg = GuardianConfig::default();
            if let Some(dir) = cache_dir {
                cfg.cache_dir = dir;
            }
            let client = GuardianClient::new(ReqwestTransport(reqwest::blocking::Client::new()), cfg);
            let corpus = client.fetch(&api_key, &categories, per_category, &PreprocessConfig::default())?;
            println!("{} documents, {} words", corpus.num_docs(), corpus.vocab_size());
        }
    }
    Ok(())
}
