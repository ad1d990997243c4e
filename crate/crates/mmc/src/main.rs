use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use mmc::checkpoint::{Checkpoint, TrainMethod};
use mmc::config::{ConfigError, ExperimentConfig, SEED_ENV};
use mmc::run::{self, RunError};
use mmc_core::eval::{render_report, ReportFormat};
use mmc_core::pipelines::MethodId;
use mmc_core::problems::ModalMixtureSpec;

#[derive(Parser)]
#[command(name = "mmc", version, about = "Meta-meta classification for one-vs-all one-shot learning")]
struct Cli {
    /// Worker threads (results do not depend on this).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Markdown,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write a checkpoint plus a JSONL training log.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum)]
        method: TrainMethod,
        /// Checkpoint to start end-to-end training from.
        #[arg(long)]
        warm_start: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Training log path (default: <out>.log.jsonl).
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Evaluate methods from a checkpoint on meta-test problems.
    Eval {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Comma-separated method names, e.g. meta_meta,nearest_cluster.
        #[arg(long, value_delimiter = ',', value_parser = parse_method, required = true)]
        methods: Vec<MethodId>,
        #[arg(long)]
        n_problems: Option<usize>,
        #[arg(long)]
        out: PathBuf,
        /// Evaluate 5-way classification built from one-vs-all problems.
        #[arg(long)]
        fiveway: bool,
        /// Report format (default: markdown for .md outputs, csv otherwise).
        #[arg(long, value_enum)]
        format: Option<Format>,
    },
    /// Write a modal-mixture bank as MMFB files plus its mode map.
    MakeData {
        #[arg(long)]
        spec: PathBuf,
        /// Output prefix; writes PREFIX.train.mmfb, PREFIX.test.mmfb and PREFIX.modes.json.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn parse_method(s: &str) -> Result<MethodId, String> {
    s.trim().parse().map_err(|e: mmc_core::Error| e.to_string())
}

fn load_config(path: &Path) -> anyhow::Result<ExperimentConfig> {
    Ok(ExperimentConfig::load(path)?)
}

fn load_checkpoint(path: &Path) -> anyhow::Result<Checkpoint> {
    Checkpoint::load(path).map_err(|e| RunError::from(e).into())
}

fn exec(cli: Cli) -> anyhow::Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global()
            .map_err(|e| anyhow::anyhow!("configuring the thread pool: {}", e))?;
    }
    match cli.command {
        Command::Train { config, method, warm_start, out, log } => {
            let cfg = load_config(&config)?;
            let warm = warm_start.as_deref().map(load_checkpoint).transpose()?;
            let (ckpt, records) = run::train(&cfg, method, warm.as_ref())?;
            ckpt.save(&out).map_err(RunError::from)?;
            let log_path = log.unwrap_or_else(|| {
                let mut s = out.as_os_str().to_owned();
                s.push(".log.jsonl");
                PathBuf::from(s)
            });
            run::write_log(&records, &log_path)?;
            eprintln!("wrote {} and {}", out.display(), log_path.display());
        }
        Command::Eval { config, checkpoint, methods, n_problems, out, fiveway, format } => {
            let cfg = load_config(&config)?;
            let ckpt = load_checkpoint(&checkpoint)?;
            let reports = run::evaluate_checkpoint(&cfg, &ckpt, &methods, n_problems, fiveway)?;
            let markdown = out.extension().is_some_and(|e| e == "md");
            let format = match format {
                Some(Format::Markdown) => ReportFormat::Markdown,
                Some(Format::Csv) => ReportFormat::Csv,
                None if markdown => ReportFormat::Markdown,
                None => ReportFormat::Csv,
            };
            let text = render_report(&reports, format)?;
            std::fs::write(&out, &text).map_err(|source| RunError::Io { path: out.clone(), source })?;
            print!("{}", text);
        }
        Command::MakeData { spec, out, seed } => {
            let bytes = std::fs::read(&spec).map_err(|source| ConfigError::Read { path: spec.clone(), source })?;
            let spec_value: ModalMixtureSpec =
                serde_json::from_slice(&bytes).map_err(|source| ConfigError::Parse { path: spec.clone(), source })?;
            let seed = match std::env::var(SEED_ENV) {
                Ok(v) => v.trim().parse().map_err(|_| ConfigError::SeedEnv(v))?,
                Err(_) => seed,
            };
            run::make_data(&spec_value, seed, &out)?;
        }
    }
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<ConfigError>().is_some() {
        return 2;
    }
    match err.downcast_ref::<RunError>() {
        Some(e) => e.exit_code() as u8,
        None => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match exec(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {}", err);
            ExitCode::from(exit_code(&err))
        }
    }
}
