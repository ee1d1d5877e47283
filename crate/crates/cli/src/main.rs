use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use weight_surgery::detect::Verdict;
use weight_surgery::harness::{AttackKind, AttackSpec};
use ws_cli::{exit, CliError};

#[derive(Parser)]
#[command(name = "wsurgery", version, about = "Install, hide and detect last-layer weight-surgery backdoors")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum Kind {
    Sc,
    Mc,
    McProjectionOnly,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic model and labeled embeddings.
    Gen {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the world seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Install a backdoor into a weight matrix.
    Attack {
        #[arg(long)]
        weights: PathBuf,
        #[arg(long)]
        embeddings: PathBuf,
        #[arg(long, value_enum)]
        kind: Kind,
        /// Target class ids: one for sc, two for mc.
        #[arg(long = "class", required = true)]
        classes: Vec<u32>,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Restore the full rank of a backdoored matrix.
    Hide {
        #[arg(long)]
        weights: PathBuf,
        #[arg(long)]
        plan: PathBuf,
        /// WSM1 matrix or JSON spectrum to imitate.
        #[arg(long)]
        reference: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Scan a weight matrix; exits 2 when it is rank deficient.
    Detect {
        #[arg(long)]
        weights: PathBuf,
        #[arg(long)]
        reference: Option<PathBuf>,
    },
    /// Run the verification protocol and write a report.
    Eval {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the master seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Convert a matrix between CSV and WSM1.
    Convert {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> Result<i32, CliError> {
    match cli.command {
        Command::Gen { config, seed, out } => {
            let dir = ws_cli::cmd_gen(&config, seed, out.as_deref())?;
            println!("{}", dir.display());
        }
        Command::Attack { weights, embeddings, kind, classes, out } => {
            let kind = match kind {
                Kind::Sc => AttackKind::Sc,
                Kind::Mc => AttackKind::Mc,
                Kind::McProjectionOnly => AttackKind::McProjectionOnly,
            };
            let plan = ws_cli::cmd_attack(&weights, &embeddings, &AttackSpec { kind, class_ids: classes }, &out)?;
            println!("{}", plan.id());
        }
        Command::Hide { weights, plan, reference, seed, out } => {
            ws_cli::cmd_hide(&weights, &plan, reference.as_deref(), seed, &out)?;
        }
        Command::Detect { weights, reference } => {
            let report = ws_cli::cmd_detect(&weights, reference.as_deref())?;
            println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
            if report.verdict == Verdict::SuspectedSurgery {
                return Ok(exit::SURGERY_DETECTED);
            }
        }
        Command::Eval { config, seed, out } => {
            let report = ws_cli::cmd_eval(&config, seed, out.as_deref())?;
            println!("clean_ba {} backdoored_ba {}", report.clean_ba, report.backdoored_ba);
            for b in &report.per_backdoor_asr {
                println!("asr {} {}", b.plan_id, b.asr);
            }
        }
        Command::Convert { input, out } => ws_cli::cmd_convert(&input, &out)?,
    }
    Ok(exit::OK)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("WS_LOG_LEVEL", "error")).init();
    // clap's own usage-error status is 2, which would read as "surgery detected"
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { exit::ERROR as u8 } else { exit::OK as u8 });
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit::ERROR as u8)
        }
    }
}
