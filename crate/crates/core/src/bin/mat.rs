use std::io;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use mat::cli::{self, CmdResult, Failure, RunConfig};
use mat::tape::OpKind;

#[derive(Parser)]
#[command(name = "mat", version, about = "Multi-branch attentive Transformer toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct ConfigArgs {
    /// Flat `key = value` config file
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one setting; repeatable
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Train on a generated toy task
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Run directory
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on a `src<TAB>tgt` data file (drop-branch off)
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
    },
    /// Warm-start an N_a-branch checkpoint from an N_a=1 checkpoint
    ProximalInit {
        #[arg(long)]
        base: PathBuf,
        #[arg(long)]
        na: usize,
        /// Output checkpoint path
        #[arg(long)]
        out: PathBuf,
    },
    /// Finite-difference check of every layer op (d <= 16)
    GradCheck {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Corrupt one backward rule (harness self-test)
        #[arg(long, hide = true)]
        fault: Option<String>,
    },
    /// Parameter count per component
    Params {
        #[command(flatten)]
        cfg: ConfigArgs,
    },
}

fn load(args: &ConfigArgs) -> Result<RunConfig, Failure> {
    let seed = std::env::var("MAT_SEED").ok();
    Ok(RunConfig::load(args.config.as_deref(), &args.overrides, seed.as_deref())?)
}

fn run(cli: Cli) -> CmdResult {
    let mut stdout = io::stdout().lock();
    match cli.command {
        Command::Train { cfg, out } => {
            let mut run = load(&cfg)?;
            if out.is_some() {
                run.out = out;
            }
            cli::cmd_train(&run, &mut stdout)
        }
        Command::Eval { checkpoint, data } => cli::cmd_eval(&checkpoint, &data, &mut stdout),
        Command::ProximalInit { base, na, out } => cli::cmd_proximal_init(&base, na, &out, &mut stdout),
        Command::GradCheck { cfg, fault } => {
            let dims = if cfg.config.is_none() && cfg.overrides.is_empty() {
                mat::gradcheck::CheckDims::default()
            } else {
                cli::check_dims(&load(&cfg)?)
            };
            let fault = fault.map(|f| f.parse::<OpKind>()).transpose()?;
            cli::cmd_grad_check(&dims, 1, fault, &mut stdout)
        }
        Command::Params { cfg } => cli::cmd_params(&load(&cfg)?, &mut stdout),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
