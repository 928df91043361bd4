mod client;
mod daemon;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use gridmon::config::Config;
use gridmon::model::{MetricName, ResourcePath};
use tracing_subscriber::EnvFilter;

const DEFAULT_DIRECTORY: &str = "127.0.0.1:9811";

/// Fabric monitoring: sensor agents, archive importer, directory, prober,
/// HTTP surface and a simulated fabric.
#[derive(Debug, Parser)]
#[command(name = "gridmon", version)]
struct Cli {
    /// Shared configuration file with per-role sections.
    #[arg(short, long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Sensor agent daemon ([agent] section).
    Agent {
        #[command(subcommand)]
        action: RunOnly,
    },
    /// Archive importer daemon ([importer] section).
    Importer {
        #[command(subcommand)]
        action: RunOnly,
    },
    /// Directory daemon ([directory] section).
    Directory {
        #[command(subcommand)]
        action: RunOnly,
    },
    /// Site prober ([probe] section).
    Probe {
        #[command(subcommand)]
        action: ProbeAction,
    },
    /// HTTP surface ([surface] section).
    Serve(RunArgs),
    /// Text status table from the latest snapshot.
    Status(StatusArgs),
    /// Ask a directory for telemetry.
    Query {
        #[command(subcommand)]
        action: QueryAction,
    },
    /// Inspect a directory's registrations.
    Registry {
        #[command(subcommand)]
        action: RegistryAction,
    },
    /// Simulated fabric ([sim] section).
    Sim {
        #[command(subcommand)]
        action: SimAction,
    },
}

#[derive(Debug, Args, Clone, Copy)]
struct RunArgs {
    /// Stop after this many seconds instead of running until killed.
    #[arg(long)]
    duration_s: Option<u64>,
}

#[derive(Debug, Subcommand)]
enum RunOnly {
    /// Run in the foreground.
    Run(RunArgs),
}

#[derive(Debug, Subcommand)]
enum ProbeAction {
    /// Probe every configured site each period and publish snapshots.
    Run {
        /// Run one cycle, publish it and exit.
        #[arg(long)]
        once: bool,
        #[command(flatten)]
        run: RunArgs,
    },
}

#[derive(Debug, Args)]
struct DirectoryArg {
    /// Directory endpoint (host:port); defaults to the [surface] directory.
    #[arg(short, long)]
    directory: Option<String>,
}

#[derive(Debug, Args)]
struct StatusArgs {
    /// Fetch the snapshot from a running surface, e.g. http://127.0.0.1:9800.
    #[arg(long, conflicts_with = "snapshot")]
    url: Option<String>,
    /// Read a snapshot file (or a directory holding snapshot.json).
    #[arg(long)]
    snapshot: Option<PathBuf>,
    /// Fill LOAD, UPTIME, IDLE and AGE with current values from the directory.
    #[arg(long)]
    live: bool,
    #[command(flatten)]
    dir: DirectoryArg,
}

#[derive(Debug, Subcommand)]
enum QueryAction {
    /// Most recent sample, or `absent`.
    Latest {
        path: ResourcePath,
        metric: MetricName,
        #[command(flatten)]
        dir: DirectoryArg,
    },
    /// Samples with from <= t < to (unix ms), one wire record per line.
    Range {
        path: ResourcePath,
        metric: MetricName,
        #[arg(long, default_value_t = 0)]
        from: u64,
        /// Defaults to now.
        #[arg(long)]
        to: Option<u64>,
        #[command(flatten)]
        dir: DirectoryArg,
    },
}

#[derive(Debug, Subcommand)]
enum RegistryAction {
    /// List live registrations.
    Ls {
        /// Print JSON instead of a table.
        #[arg(long)]
        json: bool,
        #[command(flatten)]
        dir: DirectoryArg,
    },
}

#[derive(Debug, Subcommand)]
enum SimAction {
    /// Run a simulation and write its report.
    Run {
        /// Override the configured seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Report file.
        #[arg(long, default_value = "sim-report.json")]
        out: PathBuf,
    },
}

fn load_config(path: Option<&PathBuf>) -> anyhow::Result<Config> {
    match path {
        Some(p) => Ok(Config::load(p)?),
        None => Ok(Config::default()),
    }
}

fn need_config(path: Option<&PathBuf>) -> anyhow::Result<Config> {
    match path {
        Some(p) => Ok(Config::load(p)?),
        None => anyhow::bail!("--config <FILE> is required"),
    }
}

fn directory_of(arg: &DirectoryArg, config: &Config) -> String {
    arg.directory
        .clone()
        .or_else(|| config.surface.as_ref().map(|s| s.directory.clone()))
        .unwrap_or_else(|| DEFAULT_DIRECTORY.to_string())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let cfg = cli.config.as_ref();
    match cli.command {
        Command::Agent { action: RunOnly::Run(r) } => daemon::agent(need_config(cfg)?.agent()?, r.duration_s),
        Command::Importer { action: RunOnly::Run(r) } => {
            daemon::importer(need_config(cfg)?.importer()?, r.duration_s)
        }
        Command::Directory { action: RunOnly::Run(r) } => {
            daemon::directory(&load_config(cfg)?.directory()?, r.duration_s)
        }
        Command::Probe {
            action: ProbeAction::Run { once, run },
        } => daemon::probe(need_config(cfg)?.probe()?, once, run.duration_s),
        Command::Serve(r) => daemon::serve(need_config(cfg)?.surface()?, r.duration_s),
        Command::Status(a) => {
            let config = load_config(cfg)?;
            let directory = directory_of(&a.dir, &config);
            let source = match (a.url, a.snapshot) {
                (Some(url), _) => client::SnapshotSource::Url(url),
                (None, Some(path)) => client::SnapshotSource::File(path),
                (None, None) => match &config.surface {
                    Some(s) => client::SnapshotSource::File(s.snapshot_dir.clone()),
                    None => anyhow::bail!("give --url or --snapshot, or a [surface] section"),
                },
            };
            client::status(&source, a.live.then_some(directory.as_str()))
        }
        Command::Query { action } => {
            let config = load_config(cfg)?;
            match action {
                QueryAction::Latest { path, metric, dir } => {
                    client::query_latest(&directory_of(&dir, &config), path, metric)
                }
                QueryAction::Range {
                    path,
                    metric,
                    from,
                    to,
                    dir,
                } => client::query_range(&directory_of(&dir, &config), path, metric, from, to),
            }
        }
        Command::Registry {
            action: RegistryAction::Ls { json, dir },
        } => client::registry_ls(&directory_of(&dir, &load_config(cfg)?), json),
        Command::Sim {
            action: SimAction::Run { seed, out },
        } => client::sim(need_config(cfg)?.sim()?.clone(), seed, &out),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("info")))
        .with_writer(std::io::stderr)
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
