//! Command-line driver for the grounding and probing experiments.

use anyhow::Context;
use clap::{Parser, Subcommand, ValueEnum};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use uiground::encoder::ModelKind;
use uiground::pipeline::{self, PipelineError, RunConfig};
use uiground::probing::AuxTask;

#[derive(Parser)]
#[command(name = "uiground", version, about = "Ground UI commands and probe what the encoders learned")]
struct Cli {
    /// JSON run configuration. Fields left out take their defaults.
    #[arg(long, global = true, env = "UIGROUND_CONFIG")]
    config: Option<PathBuf>,
    /// Root directory for corpus/, models/ and reports/ (overrides the config paths).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for evaluation and probe sweeps. 1 is bitwise reproducible.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Text,
    Layout,
}

impl From<Kind> for ModelKind {
    fn from(k: Kind) -> Self {
        match k {
            Kind::Text => ModelKind::TextOnly,
            Kind::Layout => ModelKind::LayoutAware,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic corpus and print its summary.
    Gen {
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        screens: Option<usize>,
    },
    /// Train one scorer on the train split.
    Train {
        #[arg(long, value_enum)]
        kind: Kind,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
    },
    /// Grounding accuracy of both models by reasoning type.
    Eval,
    /// Probe sweeps on exported or imported representations.
    Probe {
        /// Restrict to these tasks (repeatable). Default: all four.
        #[arg(long = "task", value_parser = parse_task)]
        tasks: Vec<AuxTask>,
        /// Representation CSV to probe instead of the trained models.
        #[arg(long)]
        import: Option<PathBuf>,
    },
    /// Print the accuracy table and render probe curves.
    Report,
    /// Remove commands a text-only model already solves with high certainty.
    Filter {
        #[arg(long)]
        tau: Option<f64>,
    },
    /// Run every stage on a small corpus.
    Demo,
    /// Print the effective configuration as JSON.
    Config,
}

fn parse_task(s: &str) -> Result<AuxTask, String> {
    s.parse()
}

struct Failure {
    code: u8,
    error: anyhow::Error,
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        Failure {
            code: e.exit_code() as u8,
            error: e.into(),
        }
    }
}

fn usage(error: anyhow::Error) -> Failure {
    Failure { code: 2, error }
}

fn with_root(mut cfg: RunConfig, root: &Path) -> RunConfig {
    cfg.corpus_dir = root.join("corpus");
    cfg.models_dir = root.join("models");
    cfg.reports_dir = root.join("reports");
    cfg
}

fn load_config(cli: &Cli) -> Result<RunConfig, Failure> {
    let mut cfg = match (&cli.config, &cli.command) {
        (Some(path), _) => {
            if !path.exists() {
                return Err(usage(anyhow::anyhow!("config file {} does not exist", path.display())));
            }
            RunConfig::load(path)
                .with_context(|| format!("reading {}", path.display()))
                .map_err(usage)?
        }
        (None, Command::Demo) => RunConfig::demo(Path::new("demo")),
        (None, _) => RunConfig::default(),
    };
    if let Some(root) = &cli.out {
        cfg = with_root(cfg, root);
    }
    if let Some(j) = cli.jobs {
        cfg.jobs = j;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), Failure> {
    let mut cfg = load_config(&cli)?;
    match cli.command {
        Command::Gen { seed, screens } => {
            if let Some(s) = seed {
                cfg.gen.seed = s;
            }
            if let Some(n) = screens {
                cfg.gen.screens = n;
            }
            print!("{}", pipeline::cmd_gen(&cfg)?);
        }
        Command::Train { kind, epochs, lr } => {
            let kind = ModelKind::from(kind);
            let tc = match kind {
                ModelKind::TextOnly => &mut cfg.train_text,
                ModelKind::LayoutAware => &mut cfg.train_layout,
            };
            if let Some(e) = epochs {
                tc.epochs = e;
            }
            if let Some(l) = lr {
                tc.learning_rate = l;
            }
            let curve = pipeline::cmd_train(&cfg, kind)?;
            println!(
                "{} model: {} epochs, final loss {:.5} -> {}",
                kind.name(),
                curve.len(),
                curve.last().copied().unwrap_or(f64::NAN),
                cfg.checkpoint_path(kind).display()
            );
        }
        Command::Eval => print!("{}", pipeline::cmd_eval(&cfg)?),
        Command::Probe { tasks, import } => {
            for (label, runs) in pipeline::cmd_probe(&cfg, &tasks, import.as_deref())? {
                let failed = runs.iter().filter(|r| r.failed).count();
                println!(
                    "{label}: {} probe runs ({failed} failed) -> {}",
                    runs.len(),
                    cfg.sweep_path(&label).display()
                );
            }
        }
        Command::Report => print!("{}", pipeline::cmd_report(&cfg)?),
        Command::Filter { tau } => {
            let tau = tau.unwrap_or(cfg.tau);
            let s = pipeline::cmd_filter(&cfg, tau)?;
            println!(
                "kept {} of {} commands; spatial share {:.3} -> {:.3}",
                s.after, s.before, s.spatial_before, s.spatial_after
            );
        }
        Command::Demo => {
            let cfg = RunConfig { jobs: cfg.jobs, ..cfg };
            print!("{}", pipeline::run_all(&cfg)?);
        }
        Command::Config => {
            let text = serde_json::to_string_pretty(&cfg).map_err(|e| usage(e.into()))?;
            println!("{text}");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}
