use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use smerf_cli::config::{Overrides, RunConfig};
use smerf_cli::{exit_code, stages};

#[derive(Parser)]
#[command(name = "smerf", version, about = "Score saliency methods against synthetic ground truth")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    flags: Flags,
}

#[derive(Subcommand)]
enum Command {
    /// Render the training, validation and evaluation images.
    Generate,
    /// Train and verify a model on the generated dataset.
    Train,
    /// Compute attribution maps for the evaluation images.
    Attribute,
    /// Score the attribution maps against the ground-truth regions.
    Evaluate,
    /// Draw figures and cross-reasoning matrices from evaluated runs.
    Report,
    /// Every stage in order.
    All,
    /// Print the effective configuration as TOML.
    Config,
}

#[derive(Args)]
struct Flags {
    /// TOML configuration file; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Comma-separated reasoning types, or `all`.
    #[arg(long, global = true)]
    reasoning: Option<String>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Shrink factor applied to the default per-bucket counts.
    #[arg(long, global = true)]
    scale: Option<f64>,
    /// Comma-separated method names, or `all`.
    #[arg(long, global = true)]
    methods: Option<String>,
    #[arg(long, global = true, env = "SMERF_OUT")]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    eval_per_bucket: Option<usize>,
    #[arg(long, global = true)]
    max_epochs: Option<usize>,
    #[arg(long, global = true)]
    batch_size: Option<usize>,
    #[arg(long, global = true)]
    max_restarts: Option<usize>,
    #[arg(long, global = true)]
    learning_rate: Option<f64>,
    /// Jitter background and foreground colors.
    #[arg(long, global = true)]
    jitter: bool,
}

fn load(flags: Flags) -> anyhow::Result<RunConfig> {
    let mut cfg = match &flags.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    cfg.apply(&Overrides {
        reasoning: flags.reasoning,
        seed: flags.seed,
        scale: flags.scale,
        methods: flags.methods,
        out: flags.out,
        eval_per_bucket: flags.eval_per_bucket,
        max_epochs: flags.max_epochs,
        batch_size: flags.batch_size,
        max_restarts: flags.max_restarts,
        learning_rate: flags.learning_rate,
        color_jitter: flags.jitter.then_some(true),
    })?;
    Ok(cfg)
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let cfg = load(cli.flags)?;
    match cli.command {
        Command::Generate => cfg.reasoning.iter().try_for_each(|&r| stages::generate(&cfg, r).map(drop)),
        Command::Train => cfg.reasoning.iter().try_for_each(|&r| stages::train(&cfg, r).map(drop)),
        Command::Attribute => cfg.reasoning.iter().try_for_each(|&r| stages::attribute_stage(&cfg, r).map(drop)),
        Command::Evaluate => cfg.reasoning.iter().try_for_each(|&r| stages::evaluate(&cfg, r).map(drop)),
        Command::Report => {
            for p in stages::report(&cfg)? {
                log::info!("wrote {}", p.display());
            }
            Ok(())
        }
        Command::All => stages::run_all(&cfg),
        Command::Config => {
            print!("{}", cfg.to_toml());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
