use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::Parser;
use rml_cli::{exit_code, parse_config, run, Command};

/// Ricci-DeTurck flow experiments on periodic tori.
#[derive(Debug, Parser)]
#[command(name = "rml", version)]
struct Cli {
    #[arg(value_enum)]
    command: Command,
    /// Experiment configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; defaults to the config's `output`, then `./out`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; `RML_THREADS` is used when absent.
    #[arg(long)]
    threads: Option<usize>,
    /// Continue an interrupted `evolve` run from its last verified snapshot.
    #[arg(long)]
    resume: bool,
}

fn threads(flag: Option<usize>) -> anyhow::Result<Option<usize>> {
    if flag.is_some() {
        return Ok(flag);
    }
    match std::env::var("RML_THREADS") {
        Ok(v) => Ok(Some(
            v.trim()
                .parse()
                .with_context(|| format!("RML_THREADS = {v:?}"))?,
        )),
        Err(_) => Ok(None),
    }
}

fn main_inner(cli: Cli) -> anyhow::Result<()> {
    #[cfg(feature = "parallel")]
    if let Some(k) = threads(cli.threads)? {
        rayon::ThreadPoolBuilder::new()
            .num_threads(k)
            .build_global()
            .context("configuring the thread pool")?;
    }
    #[cfg(not(feature = "parallel"))]
    let _ = threads(cli.threads)?;

    let text = std::fs::read_to_string(&cli.config)
        .with_context(|| format!("reading {}", cli.config.display()))?;
    let mut cfg = parse_config(&text)?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    let out = cli
        .out
        .or_else(|| cfg.output.clone())
        .unwrap_or_else(|| PathBuf::from("out"));
    run(cli.command, &cfg, &out, cli.resume)?;
    println!("{} ok: {}", cli.command.name(), out.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match main_inner(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
