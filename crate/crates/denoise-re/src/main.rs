//! Thin command-line front end over the library pipeline.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};

use denoise_re::commands::{self, Command};
use denoise_re::config::{load_config, CliOverrides};
use denoise_re::encoders::Arch;

#[derive(Parser)]
#[command(
    name = "denoise-re",
    version,
    about = "Adversarial instance-level denoising for distantly supervised relation extraction"
)]
struct Cli {
    /// TOML config file; flags and DENOISE_* env vars override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed for every random substream.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory shared by all stages.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Sentence encoder architecture.
    #[arg(long, global = true, value_parser = ["cnn", "pcnn", "rnn", "birnn"])]
    arch: Option<String>,
    /// Overwrite existing generated data.
    #[arg(long, global = true)]
    force: bool,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic noisy corpus.
    GenData,
    /// Pretrain the relation classifier.
    Pretrain,
    /// Run adversarial training from the pretrained checkpoint.
    Train,
    /// Held-out ranking metrics and noise detection.
    Eval,
    /// Show the most/least confusing instances of a relation.
    Inspect,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let overrides = CliOverrides {
        config: cli.config,
        seed: cli.seed,
        out: cli.out,
        arch: cli.arch.map(|a| a.parse::<Arch>().expect("validated by clap")),
    };
    let cmd = match cli.cmd {
        Cmd::GenData => Command::GenData,
        Cmd::Pretrain => Command::Pretrain,
        Cmd::Train => Command::Train,
        Cmd::Eval => Command::Eval,
        Cmd::Inspect => Command::Inspect,
    };
    let result = load_config(&overrides, std::env::vars())
        .and_then(|cfg| commands::run(&cmd, &cfg, cli.force));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
