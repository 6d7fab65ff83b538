//! `alqr`: simulate adaptive linear-quadratic regulators, verify the
//! library's algebraic invariants, and inspect the closed-loop geometry of a
//! plant.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use adaptive_lqr::experiment::config::ExperimentConfig;
use adaptive_lqr::experiment::run::{
    effective_output_dir, read_gains_csv, run_experiment, write_outputs,
};
use adaptive_lqr::experiment::verify::{verify_suite, FaultInjection, VerifyLevel};
use adaptive_lqr::geometry::geometry_report;
use adaptive_lqr::regret::{decompose, ReferenceSolution};
use adaptive_lqr::system::Trajectory;

#[derive(Parser)]
#[command(
    name = "alqr",
    about = "Adaptive LQR simulation and verification harness",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum LevelArg {
    Fast,
    Full,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum InjectArg {
    /// Negate the T term of the regret decomposition (the identity check
    /// must then fail, demonstrating sensitivity).
    NegateT,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment described by a TOML config and write CSV outputs.
    Run {
        /// Path to the experiment config.
        config: PathBuf,
    },
    /// Execute the invariant battery and print one line per check.
    Verify {
        #[arg(long, value_enum, default_value = "fast")]
        level: LevelArg,
        /// Deliberately inject a fault to demonstrate detection.
        #[arg(long, value_enum)]
        inject: Option<InjectArg>,
    },
    /// Emit a JSON report of the identifiability geometry of a plant.
    Geometry {
        /// Experiment config supplying the plant ([system] table is used).
        #[arg(long, conflicts_with = "preset")]
        system: Option<PathBuf>,
        /// Bundled preset name ("paper" or "sparse-diagonal").
        #[arg(long, default_value = "paper")]
        preset: String,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Output file; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Decompose a recorded trajectory into the exact regret components.
    Decompose {
        /// Trajectory CSV (t,x_1..x_p,u_1..u_r,cost).
        #[arg(long)]
        trajectory: PathBuf,
        /// Per-step gain CSV; without it the decomposition is undefined.
        #[arg(long)]
        gains: Option<PathBuf>,
        /// Experiment config supplying the plant.
        #[arg(long, conflicts_with = "preset")]
        system: Option<PathBuf>,
        #[arg(long, default_value = "paper")]
        preset: String,
        /// Horizon to decompose at (defaults to the full record).
        #[arg(long)]
        n: Option<usize>,
    },
}

fn system_from_args(
    system: &Option<PathBuf>,
    preset: &str,
) -> Result<(adaptive_lqr::system::DynamicsParameter, adaptive_lqr::system::CostSpec), String> {
    let text = match system {
        Some(path) => std::fs::read_to_string(path).map_err(|e| e.to_string())?,
        None => format!(
            "[system]\npreset = \"{preset}\"\n\n[policy]\nkind = \"optimal\"\n\n\
             [run]\ngamma = 2.0\nhorizon = 1\nreplicates = 1\nbase_seed = 0\noutput_dir = \"unused\"\n"
        ),
    };
    let config = ExperimentConfig::from_toml_str(&text).map_err(|e| e.to_string())?;
    config.build_system().map_err(|e| e.to_string())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode, String> {
    match cli.command {
        Command::Run { config } => {
            let config = ExperimentConfig::load(&config).map_err(|e| e.to_string())?;
            let record = run_experiment(&config).map_err(|e| e.to_string())?;
            let dir = effective_output_dir(&config);
            write_outputs(&record, &dir).map_err(|e| e.to_string())?;
            let failed: Vec<_> =
                record.outcomes.iter().filter(|o| o.error.is_some()).collect();
            println!(
                "wrote {} replicates to {} (config hash {})",
                record.outcomes.len(),
                dir.display(),
                record.config_hash
            );
            for o in &failed {
                println!(
                    "  replicate {} failed: {}",
                    o.index,
                    o.error.as_deref().unwrap_or("unknown")
                );
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Verify { level, inject } => {
            let level = match level {
                LevelArg::Fast => VerifyLevel::Fast,
                LevelArg::Full => VerifyLevel::Full,
            };
            let fault = match inject {
                None => FaultInjection::None,
                Some(InjectArg::NegateT) => FaultInjection::NegateDecompositionT,
            };
            let report = verify_suite(level, fault);
            print!("{}", report.render());
            Ok(if report.all_passed() { ExitCode::SUCCESS } else { ExitCode::FAILURE })
        }
        Command::Geometry { system, preset, seed, out } => {
            let (theta0, cost) = system_from_args(&system, &preset)?;
            let report = geometry_report(&theta0, &cost, seed).map_err(|e| e.to_string())?;
            let json = serde_json::to_string_pretty(&report).map_err(|e| e.to_string())?;
            match out {
                Some(path) => {
                    std::fs::write(&path, json).map_err(|e| e.to_string())?;
                    println!("wrote {}", path.display());
                }
                None => println!("{json}"),
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Decompose { trajectory, gains, system, preset, n } => {
            let (theta0, cost) = system_from_args(&system, &preset)?;
            let file = std::fs::File::open(&trajectory).map_err(|e| e.to_string())?;
            let mut traj = Trajectory::read_csv(std::io::BufReader::new(file), &theta0)
                .map_err(|e| e.to_string())?;
            if let Some(gains_path) = gains {
                let file = std::fs::File::open(&gains_path).map_err(|e| e.to_string())?;
                let parsed = read_gains_csv(
                    std::io::BufReader::new(file),
                    theta0.input_dim(),
                    theta0.state_dim(),
                )?;
                if parsed.len() < traj.horizon() {
                    return Err(format!(
                        "gain record covers {} steps, trajectory has {}",
                        parsed.len(),
                        traj.horizon()
                    ));
                }
                traj.gains = Some(parsed[..traj.horizon()].to_vec());
            }
            if let Some(n) = n {
                traj = traj.truncated(n);
            }
            let reference = ReferenceSolution::new(&theta0, &cost).map_err(|e| e.to_string())?;
            let terms = decompose(&traj, &reference).map_err(|e| e.to_string())?;
            println!("horizon: {}", traj.horizon());
            println!("Z_n: {}", terms.z_n);
            println!("S_n: {}", terms.s_n);
            println!("T_n: {}", terms.t_n);
            println!("Z_n + S_n + T_n: {}", terms.total());
            Ok(ExitCode::SUCCESS)
        }
    }
}
