use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use dcsi_rzf::optimizer::AlphaMode;
use dcsi_rzf_cli::{
    run_detequiv, run_joint, run_montecarlo, run_optimize_alpha, run_optimize_power, run_sweep,
    AlphaOptMode, AlphaSelect, RunConfig, SweepSpec, SweepVar,
};

/// Distributed-CSIT RZF precoding: deterministic equivalents, Monte-Carlo
/// simulation, and robust regularization / power optimization.
#[derive(Parser)]
#[command(name = "dcsi-rzf", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Scenario file (TOML).
    scenario: PathBuf,
    /// Write CSV here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override the scenario RNG seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Disable the isotropic closed-form fast path.
    #[arg(long)]
    force_general_path: bool,
    /// Rescale every Monte-Carlo draw to total power exactly P.
    #[arg(long)]
    renormalize_per_draw: bool,
}

impl Common {
    fn config(&self) -> RunConfig {
        RunConfig {
            scenario_path: self.scenario.clone(),
            seed: self.seed,
            force_general_path: self.force_general_path,
            renormalize_per_draw: self.renormalize_per_draw,
            out: self.out.clone(),
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Common,
    PerTx,
    Naive,
}

#[derive(Clone, Copy, ValueEnum)]
enum JointModeArg {
    Common,
    PerTx,
}

#[derive(Clone, Copy, ValueEnum)]
enum VarArg {
    Rho,
    PowerDb,
    KUsers,
}

#[derive(Subcommand)]
enum Command {
    /// Deterministic per-user SINR equivalents at fixed parameters.
    Detequiv {
        #[command(flatten)]
        common: Common,
        /// 'inv-beta-p', 'naive', a single value, or a per-TX list.
        #[arg(long, default_value = "inv-beta-p")]
        alpha: String,
    },
    /// Monte-Carlo ergodic sum rate at fixed parameters.
    Montecarlo {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "inv-beta-p")]
        alpha: String,
        #[arg(long, default_value_t = 1000)]
        trials: usize,
    },
    /// Robust regularization optimization (common, per-TX, or naive).
    OptimizeAlpha {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        mode: ModeArg,
    },
    /// Power-scaling optimization at fixed regularization.
    OptimizePower {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "inv-beta-p")]
        alpha: String,
    },
    /// Alternating regularization and power optimization.
    Joint {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        mode: JointModeArg,
    },
    /// Parameter sweeps over rho, total power (dB), or user count.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        var: VarArg,
        #[arg(long)]
        from: f64,
        #[arg(long)]
        to: f64,
        #[arg(long)]
        steps: usize,
        /// Monte-Carlo trials per sweep point (0 = deterministic only; the
        /// k_users study defaults to 1000).
        #[arg(long, default_value_t = 0)]
        trials: usize,
    },
}

fn main() -> anyhow::Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Detequiv { common, alpha } => {
            let cfg = common.config();
            let csv = run_detequiv(&cfg, &AlphaSelect::parse(&alpha)?)?;
            cfg.deliver(&csv)?;
        }
        Command::Montecarlo {
            common,
            alpha,
            trials,
        } => {
            let cfg = common.config();
            let csv = run_montecarlo(&cfg, &AlphaSelect::parse(&alpha)?, trials)?;
            cfg.deliver(&csv)?;
        }
        Command::OptimizeAlpha { common, mode } => {
            let cfg = common.config();
            let mode = match mode {
                ModeArg::Common => AlphaOptMode::Common,
                ModeArg::PerTx => AlphaOptMode::PerTx,
                ModeArg::Naive => AlphaOptMode::Naive,
            };
            let csv = run_optimize_alpha(&cfg, mode)?;
            cfg.deliver(&csv)?;
        }
        Command::OptimizePower { common, alpha } => {
            let cfg = common.config();
            let csv = run_optimize_power(&cfg, &AlphaSelect::parse(&alpha)?)?;
            cfg.deliver(&csv)?;
        }
        Command::Joint { common, mode } => {
            let cfg = common.config();
            let mode = match mode {
                JointModeArg::Common => AlphaMode::Common,
                JointModeArg::PerTx => AlphaMode::PerTx,
            };
            let csv = run_joint(&cfg, mode)?;
            cfg.deliver(&csv)?;
        }
        Command::Sweep {
            common,
            var,
            from,
            to,
            steps,
            trials,
        } => {
            let cfg = common.config();
            let spec = SweepSpec {
                var: match var {
                    VarArg::Rho => SweepVar::Rho,
                    VarArg::PowerDb => SweepVar::PowerDb,
                    VarArg::KUsers => SweepVar::KUsers,
                },
                from,
                to,
                steps,
                trials,
            };
            let csv = run_sweep(&cfg, &spec)?;
            cfg.deliver(&csv)?;
        }
    }
    Ok(())
}
