//! Command-line front end: prepare data, train models, decode with any
//! strategy, evaluate, and an interactive single-turn chat loop.

mod commands;
mod config;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

use commands::CmdResult;
use config::RunConfig;

#[derive(Parser)]
#[command(
    name = "convoseq",
    about = "Conversation seq2seq toolkit: glimpse training and stochastic segment-reranked decoding",
    version
)]
struct Cli {
    /// Config file of key=value lines.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Root random seed (overrides the config).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; nothing is written outside it.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Decoding strategy: beam, beam_lennorm, segment, or backoff
    /// (overrides the config).
    #[arg(long, global = true)]
    strategy: Option<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a pair corpus and vocabulary from a reply-tree file or an
    /// oracle definition.
    Prep {
        /// JSON-lines thread file: {"id","parent_id","text"}.
        #[arg(long)]
        threads: Option<PathBuf>,
        /// Oracle definition JSON; samples a synthetic corpus.
        #[arg(long)]
        oracle: Option<PathBuf>,
        /// key=value config overrides.
        overrides: Vec<String>,
    },
    /// Train a model; writes checkpoint.glmp, optstate.glmp, train_log.csv.
    Train { overrides: Vec<String> },
    /// Decode a prompts file; writes responses.jsonl and trace.jsonl.
    Decode {
        /// UTF-8 prompts, one per line.
        #[arg(long)]
        prompts: PathBuf,
        overrides: Vec<String>,
    },
    /// Evaluate: mode is nchoosek, ppl, or lengths.
    Eval {
        #[arg(long)]
        mode: String,
        overrides: Vec<String>,
    },
    /// Interactive single-turn chat.
    Chat { overrides: Vec<String> },
}

fn build_config(cli: &Cli, overrides: &[String]) -> anyhow::Result<RunConfig> {
    let mut cfg = RunConfig::from_sources(cli.config.as_deref(), overrides)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(strategy) = &cli.strategy {
        cfg.strategy = strategy.clone();
        match cfg.strategy.as_str() {
            "beam" | "beam_lennorm" | "segment" | "backoff" => {}
            other => anyhow::bail!("unknown strategy {other:?}"),
        }
    }
    Ok(cfg)
}

fn run(cli: &Cli) -> CmdResult<()> {
    match &cli.command {
        Command::Prep {
            threads,
            oracle,
            overrides,
        } => {
            let cfg = build_config(cli, overrides)?;
            commands::cmd_prep(&cfg, threads.as_deref(), oracle.as_deref(), &cli.out)
        }
        Command::Train { overrides } => {
            let cfg = build_config(cli, overrides)?;
            commands::cmd_train(&cfg, &cli.out)
        }
        Command::Decode { prompts, overrides } => {
            let cfg = build_config(cli, overrides)?;
            commands::cmd_decode(&cfg, prompts, &cli.out)
        }
        Command::Eval { mode, overrides } => {
            let cfg = build_config(cli, overrides)?;
            commands::cmd_eval(&cfg, mode, &cli.out)
        }
        Command::Chat { overrides } => {
            let cfg = build_config(cli, overrides)?;
            commands::cmd_chat(&cfg)
        }
    }
}

fn main() {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => {}
        Err(e) => {
            eprintln!("error: {:#}", e.error);
            std::process::exit(e.code);
        }
    }
}
