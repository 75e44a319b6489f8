use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use smile_cli::{audit_cmd, bench_cmd, exit_code, gen_data, train_cmd, AuditArgs, ExperimentConfig, TrainFlags};

#[derive(Parser)]
#[command(name = "smile", version, about = "Self-motivated imitation learning via policy-wise diffusion")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the mixed-quality demonstration file.
    GenData {
        #[arg(long)]
        config: PathBuf,
        /// Output file (default: <output_dir>/<run_id>/demos.jsonl).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train on a demonstration file.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        demos: PathBuf,
        /// Never filter: every batch comes from the full store.
        #[arg(long)]
        no_filter: bool,
        /// Train only the behavior-cloning baseline.
        #[arg(long, conflicts_with = "no_filter")]
        bc_baseline: bool,
    },
    /// Predict diffusion steps for every demonstration and bin them by return.
    Audit {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        denoiser: PathBuf,
        #[arg(long)]
        policy: PathBuf,
        #[arg(long)]
        demos: PathBuf,
        #[arg(long, default_value_t = 100.0)]
        bin_width: f64,
        /// Per-trajectory report (default: audit.jsonl next to the denoiser).
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Time the one-step generator against the multi-step reverse process.
    Bench {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        denoiser: PathBuf,
        #[arg(long)]
        policy: PathBuf,
        #[arg(long, default_value_t = 1000)]
        decisions: usize,
    },
}

fn run(cli: Cli) -> smile_core::Result<()> {
    let mut out = std::io::stdout().lock();
    match cli.command {
        Command::GenData { config, out: dest } => {
            let cfg = ExperimentConfig::load(&config)?;
            let path = gen_data(&cfg, dest.as_deref(), &mut out)?;
            eprintln!("wrote {}", path.display());
        }
        Command::Train {
            config,
            demos,
            no_filter,
            bc_baseline,
        } => {
            let cfg = ExperimentConfig::load(&config)?;
            let dir = train_cmd(&cfg, &demos, TrainFlags { no_filter, bc_baseline }, &mut out)?;
            eprintln!("wrote {}", dir.display());
        }
        Command::Audit {
            config,
            denoiser,
            policy,
            demos,
            bin_width,
            report,
        } => {
            let cfg = ExperimentConfig::load(&config)?;
            let report = report.unwrap_or_else(|| denoiser.with_file_name("audit.jsonl"));
            let args = AuditArgs {
                denoiser: &denoiser,
                policy: &policy,
                demos: &demos,
                bin_width,
                report: &report,
            };
            audit_cmd(&cfg, &args, &mut out)?;
        }
        Command::Bench {
            config,
            denoiser,
            policy,
            decisions,
        } => {
            let cfg = ExperimentConfig::load(&config)?;
            bench_cmd(&cfg, &denoiser, &policy, decisions, &mut out)?;
        }
    }
    let _ = out.flush();
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
