use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use lcp_pqn::instances::LowFiScheme;
use lcp_pqn_cli::{
    cmd_bench, cmd_cofa, cmd_generate, cmd_solve, threads_from_env, BenchConfig, GenerateConfig, ModelChoice,
    SolverFlags, SolverName,
};

const EXIT_INPUT: u8 = 1;
const EXIT_NONCONVERGED: u8 = 2;

#[derive(Parser)]
#[command(name = "lcp-pqn", version, about = "Matrix-free LCP solvers and benchmark harness")]
struct Cli {
    /// Worker threads (overrides LCP_PQN_THREADS).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a suite of contact LCP instances.
    Generate {
        /// Lattice side; each instance has m³ spheres.
        #[arg(long)]
        m: usize,
        #[arg(long, default_value_t = 1)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value_t = ModelChoice::Drag)]
        model: ModelChoice,
        #[arg(long, default_value_t = lcp_pqn::instances::mobility::DEFAULT_RPY_CUTOFF)]
        rpy_cutoff: f64,
        /// Low-fidelity scheme: perturb:δ, perturb-c:f, precision32, sparsify:c.
        #[arg(long)]
        lowfi: Option<String>,
        #[arg(long, default_value_t = lcp_pqn::instances::DEFAULT_COST_RATIO)]
        cost_ratio: f64,
        #[arg(long, default_value_t = 1.0)]
        dt: f64,
        #[arg(long, default_value_t = 1.0)]
        velocity_scale: f64,
        #[arg(long, default_value_t = lcp_pqn::operators::DEFAULT_DENSE_CAP)]
        dense_cap: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Solve one instance and print a JSON report.
    Solve {
        #[arg(long)]
        instance: PathBuf,
        #[arg(long, value_enum)]
        solver: SolverName,
        #[command(flatten)]
        flags: SolverFlags,
    },
    /// Run several solvers over a suite.
    Bench {
        #[arg(long)]
        suite: PathBuf,
        #[arg(long, value_enum, value_delimiter = ',', default_value = "mono_pqn,bi_pqn,bb_pgd")]
        solvers: Vec<SolverName>,
        #[arg(long, value_enum, default_value_t = SolverName::BbPgd)]
        baseline: SolverName,
        /// Per-run records.
        #[arg(long)]
        csv: PathBuf,
        /// Summary statistics.
        #[arg(long)]
        json: PathBuf,
        /// Replace declared cost ratios with measured wall-clock ratios.
        #[arg(long)]
        measure_ratio: bool,
        #[command(flatten)]
        flags: SolverFlags,
    },
    /// Estimate c(A) and check the stored low-fidelity matrix against it.
    Cofa {
        #[arg(long)]
        instance: PathBuf,
        #[arg(long)]
        delta: Option<f64>,
    },
}

fn print_json<T: serde::Serialize>(v: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

fn run(cli: Cli) -> Result<bool> {
    let threads = match cli.threads {
        Some(t) => Some(t),
        None => threads_from_env()?,
    };
    if let Some(t) = threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .context("configuring worker threads")?;
    }
    match cli.command {
        Command::Generate {
            m,
            count,
            seed,
            model,
            rpy_cutoff,
            lowfi,
            cost_ratio,
            dt,
            velocity_scale,
            dense_cap,
            out,
        } => {
            let lowfi = lowfi.map(|s| s.parse::<LowFiScheme>()).transpose()?;
            let cfg = GenerateConfig {
                model,
                rpy_cutoff,
                lowfi,
                cost_ratio,
                dt,
                velocity_scale,
                dense_cap,
                ..GenerateConfig::new(m, count, seed)
            };
            for p in cmd_generate(&cfg, &out)? {
                println!("{}", p.display());
            }
            Ok(true)
        }
        Command::Solve { instance, solver, flags } => {
            let out = cmd_solve(&instance, solver, &flags)?;
            print_json(&out)?;
            Ok(out.converged)
        }
        Command::Bench {
            suite,
            solvers,
            baseline,
            csv,
            json,
            measure_ratio,
            flags,
        } => {
            let cfg = BenchConfig {
                solvers,
                baseline,
                flags,
                measure_ratio,
            };
            let summary = cmd_bench(&suite, &cfg, &csv, &json)?;
            print_json(&summary)?;
            Ok(summary.solvers.iter().all(|s| s.converged == s.runs))
        }
        Command::Cofa { instance, delta } => {
            print_json(&cmd_cofa(&instance, delta)?)?;
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_INPUT) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(EXIT_NONCONVERGED),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_INPUT)
        }
    }
}
