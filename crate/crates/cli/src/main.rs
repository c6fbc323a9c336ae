//! `nfisac` — command-line front end for the near-field ISAC hybrid
//! beamforming library: generate seeded scenario files, solve them with the
//! baseline design schemes, drive Monte-Carlo sweeps, and re-check saved
//! solutions through the covariance merge/reduction pipeline.
//!
//! Powers cross this boundary in dBm; everything behind it is linear mW.
//! All file formats are documented in the library's `io` module: JSON
//! documents carry a `schema` tag, CSVs carry a header row.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Parser, Subcommand, ValueEnum};

use nfisac::config::{mw_to_dbm, SystemConfig};
use nfisac::experiments::{gen_scenario, run_baseline, run_sweep, Scheme};
use nfisac::io;
use nfisac::rates::ReceiveFilters;
use nfisac::reconstruct::{verify_no_sensing_beams, CovarianceSolution};
use nfisac::{C64, CMat, Error, Result};

#[derive(Parser)]
#[command(
    name = "nfisac",
    version,
    about = "Near-field ISAC hybrid beamforming: scenarios, solves, sweeps, verification"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Built-in system profiles. `desk` (16 antennas, 3 users, 2 targets) runs a
/// solve in seconds; `paper` (64 antennas, 6 users, 4 targets) is the
/// full-scale configuration and takes far longer per solve.
#[derive(Debug, Clone, Copy, ValueEnum)]
enum Profile {
    Desk,
    Paper,
}

#[derive(Subcommand)]
enum Command {
    /// Generate seeded scenario files (config + geometry + channels).
    Gen(GenArgs),
    /// Solve one scenario file with a baseline scheme.
    Solve(SolveArgs),
    /// Run a Monte-Carlo sweep described by a request file.
    Sweep(SweepArgs),
    /// Re-check a saved solution via covariance merge and rank reduction.
    Verify(VerifyArgs),
}

#[derive(clap::Args)]
struct GenArgs {
    /// System profile used when no --config file is given.
    #[arg(long, value_enum, default_value_t = Profile::Desk)]
    profile: Profile,
    /// JSON file holding a full system configuration (overrides --profile).
    /// Its shape equals the `config` block of a scenario file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Seed of the first scenario.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Number of scenarios to generate (seeds `seed`, `seed+1`, ...).
    #[arg(long, default_value_t = 1)]
    trials: usize,
    /// Output directory.
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(clap::Args)]
struct SolveArgs {
    /// Scenario file produced by `gen`.
    scenario: PathBuf,
    /// Baseline scheme: rsma_hybrid_nf, rsma_fulldigital_nf, sdma_hybrid_nf,
    /// rsma_commonly_nf, or rsma_hybrid_ff.
    #[arg(long, default_value = "rsma_hybrid_nf", value_parser = Scheme::from_str)]
    scheme: Scheme,
    /// Seed for the optimizer's analog-stage initialization.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory for the solution JSON and CSVs.
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(clap::Args)]
struct SweepArgs {
    /// Sweep request file (schema `nfisac.sweepspec/1`).
    spec: PathBuf,
    /// System profile used when no --config file is given.
    #[arg(long, value_enum, default_value_t = Profile::Desk)]
    profile: Profile,
    /// JSON file holding the base system configuration (overrides --profile).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override the request file's base seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the request file's trials-per-cell count.
    #[arg(long)]
    trials: Option<usize>,
    /// Output directory for the sweep CSVs and summary JSON.
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(clap::Args)]
struct VerifyArgs {
    /// Solution file produced by `solve`.
    solution: PathBuf,
    /// Scenario file the solution was solved on.
    scenario: PathBuf,
    /// Output directory for the verification report JSON.
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Gen(args) => cmd_gen(&args),
        Command::Solve(args) => cmd_solve(&args),
        Command::Sweep(args) => cmd_sweep(&args),
        Command::Verify(args) => cmd_verify(&args),
    }
}

fn load_config(config: Option<&Path>, profile: Profile) -> Result<SystemConfig> {
    let cfg = match config {
        Some(path) => io::read_json::<SystemConfig>(path)?,
        None => match profile {
            Profile::Desk => SystemConfig::desk(),
            Profile::Paper => SystemConfig::paper(),
        },
    };
    cfg.validate()?;
    Ok(cfg)
}

fn fmt_rates(xs: &[f64]) -> String {
    let parts: Vec<String> = xs.iter().map(|x| format!("{x:.4}")).collect();
    format!("[{}]", parts.join(", "))
}

fn cmd_gen(args: &GenArgs) -> Result<()> {
    if args.trials == 0 {
        return Err(Error::Argument("--trials must be at least 1".into()));
    }
    let cfg = load_config(args.config.as_deref(), args.profile)?;
    std::fs::create_dir_all(&args.out)?;
    for seed in args.seed..args.seed + args.trials as u64 {
        let scenario = gen_scenario(&cfg, seed)?;
        let path = args.out.join(format!("scenario_seed{seed}.json"));
        // Channels are inlined so the file pins the instance even if the
        // gain model changes; loaders prefer inlined channels to geometry.
        io::save_scenario(&path, &scenario, &cfg, true)?;
        println!("wrote {}", path.display());
    }
    println!(
        "{} scenario(s): {} tx antennas, {} users, {} targets, {:.2} dBm budget",
        args.trials,
        cfg.n_tx,
        cfg.n_users,
        cfg.n_targets,
        mw_to_dbm(cfg.power_max_mw)
    );
    Ok(())
}

fn cmd_solve(args: &SolveArgs) -> Result<()> {
    let (scenario, cfg) = io::load_scenario(&args.scenario)?;
    let sol = run_baseline(args.scheme, &scenario, &cfg, args.seed)?;

    std::fs::create_dir_all(&args.out)?;
    let base = format!("{}_seed{}", args.scheme, args.seed);
    let sol_path = args.out.join(format!("solution_{base}.json"));
    let trace_path = args.out.join(format!("trace_{base}.csv"));
    let report_path = args.out.join(format!("report_{base}.csv"));
    io::save_solution(&sol_path, &sol)?;
    io::write_trace_csv(&trace_path, &sol.diagnostics.trace)?;
    io::write_rate_report_csv(&report_path, &sol.report)?;

    println!("wrote {}", sol_path.display());
    println!("wrote {}", trace_path.display());
    println!("wrote {}", report_path.display());
    println!("scheme {} on {}", args.scheme, args.scenario.display());
    println!("worst-user rate: {:.4} bit/s/Hz", sol.report.min_total);
    println!("per-user totals: {}", fmt_rates(&sol.report.totals));
    println!("common rate: {:.4}, shares {}", sol.report.common_rate, fmt_rates(&sol.report.common_shares));
    println!(
        "sensing rates: {} (floor {:.2})",
        fmt_rates(&sol.report.sensing_rates),
        cfg.sense_rate_min_bps
    );
    println!(
        "transmit power: {:.2} dBm of {:.2} dBm budget",
        mw_to_dbm(sol.precoder.total_power()),
        mw_to_dbm(cfg.power_max_mw)
    );
    println!(
        "iterations: {} outer / {} inner, residual {:.2e}, converged: {}",
        sol.diagnostics.outer_iterations,
        sol.diagnostics.inner_iterations_total,
        sol.diagnostics.final_residual_inf,
        sol.diagnostics.converged
    );
    Ok(())
}

fn cmd_sweep(args: &SweepArgs) -> Result<()> {
    let cfg = load_config(args.config.as_deref(), args.profile)?;
    let mut spec = io::load_sweep_spec(&args.spec)?;
    if let Some(seed) = args.seed {
        spec.seed = seed;
    }
    if let Some(trials) = args.trials {
        spec.trials = trials;
    }
    let result = run_sweep(&spec, &cfg, &args.out)?;

    let axis = spec.axis.name();
    println!("wrote {}", args.out.join(format!("rate_vs_{axis}.csv")).display());
    println!("wrote {}", args.out.join(format!("infeasible_vs_{axis}.csv")).display());
    println!("wrote {}", args.out.join("sweep_summary.json").display());
    for row in &result.rows {
        let rate = match (row.mean_min_rate, row.std_error) {
            (Some(m), Some(s)) => format!("{m:.4} +/- {s:.4}"),
            (Some(m), None) => format!("{m:.4}"),
            _ => "-".to_string(),
        };
        println!(
            "{} {axis}={}: mean min-rate {rate} (solved {}/{}, infeasible {}, failed {})",
            row.scheme, row.value, row.solved, row.trials, row.infeasible, row.failed
        );
    }
    println!("sweep wall time: {:.1} s", result.wall_time_s);
    Ok(())
}

/// Rebuilds the covariance form of a saved solution: one rank-one block per
/// stream from the digital columns, a zero sensing covariance, the analog
/// stage from its phases. Fully digital solutions get an identity analog
/// stage, so `cfg.n_rf` is widened to the antenna count for them.
fn covariance_form(
    doc: &io::SolutionDoc,
    cfg: &mut SystemConfig,
) -> Result<CovarianceSolution> {
    let (analog, digital) = match (&doc.analog_phases_rad, &doc.digital) {
        (Some(phases), Some(d)) => {
            if phases.len() != cfg.n_tx || phases.iter().any(|row| row.len() != cfg.n_rf) {
                return Err(Error::Dimension(format!(
                    "analog phase table is {}x{}, expected {}x{}",
                    phases.len(),
                    phases.first().map_or(0, Vec::len),
                    cfg.n_tx,
                    cfg.n_rf
                )));
            }
            let analog = CMat::from_fn(cfg.n_tx, cfg.n_rf, |i, j| C64::from_polar(1.0, phases[i][j]));
            (analog, d.to_matrix()?)
        }
        _ => {
            cfg.n_rf = cfg.n_tx;
            (CMat::identity(cfg.n_tx, cfg.n_tx), doc.precoder.to_matrix()?)
        }
    };
    let comm_covs: Vec<CMat> = (0..digital.ncols())
        .map(|k| {
            let w = digital.column(k);
            &w * &w.adjoint()
        })
        .collect();
    let filters = ReceiveFilters {
        filters: doc
            .receive_filters
            .iter()
            .map(io::MatrixDoc::to_vector)
            .collect::<Result<Vec<_>>>()?,
    };
    Ok(CovarianceSolution {
        comm_covs,
        sense_cov: CMat::zeros(cfg.n_rf, cfg.n_rf),
        analog,
        filters,
    })
}

fn cmd_verify(args: &VerifyArgs) -> Result<()> {
    let doc = io::load_solution(&args.solution)?;
    let (scenario, mut cfg) = io::load_scenario(&args.scenario)?;
    let sol = covariance_form(&doc, &mut cfg)?;
    let report = verify_no_sensing_beams(&sol, &scenario, &cfg)?;

    std::fs::create_dir_all(&args.out)?;
    let stem = args.solution.file_stem().map_or_else(
        || "solution".to_string(),
        |s| s.to_string_lossy().into_owned(),
    );
    let report_path = args.out.join(format!("verify_{stem}.json"));
    io::write_json(&report_path, &report)?;
    println!("wrote {}", report_path.display());

    println!(
        "sensing covariance: {}",
        if report.identical { "zero (nothing to merge)" } else { "merged into stream blocks" }
    );
    println!(
        "transmit covariance preserved exactly: {} (drift {:.2e})",
        report.covariance_preserved_exactly, report.merge_covariance_drift
    );
    println!(
        "objective: {:.6} -> {:.6} (non-decreased: {})",
        report.objective_before, report.objective_after, report.objective_non_decreased
    );
    println!("stream SINRs non-decreased: {}", report.stream_sinrs_non_decreased);
    println!("block ranks after reduction: {:?}", report.reduced_ranks);
    println!(
        "functional drift: abs {:.2e}, rel {:.2e}",
        report.max_functional_drift_abs, report.max_functional_drift_rel
    );
    println!(
        "sensing rates: {} -> {} (floors hold: {})",
        fmt_rates(&report.sensing_rates_before),
        fmt_rates(&report.sensing_rates_after),
        report.sensing_constraints_hold
    );
    println!(
        "transmit power: {:.2} dBm -> {:.2} dBm",
        mw_to_dbm(report.power_before_mw),
        mw_to_dbm(report.power_after_mw)
    );

    let mut failures = Vec::new();
    if !report.objective_non_decreased {
        failures.push("objective decreased");
    }
    if !report.stream_sinrs_non_decreased {
        failures.push("a stream SINR decreased");
    }
    if !report.sensing_constraints_hold {
        failures.push("a sensing-rate floor is violated");
    }
    if report.reduced_ranks.iter().any(|&r| r > 1) {
        failures.push("a block stayed above rank one");
    }
    if report.max_functional_drift_rel > 1e-8 {
        failures.push("functional drift above 1e-8");
    }
    if failures.is_empty() {
        println!("PASS");
        Ok(())
    } else {
        println!("FAIL");
        Err(Error::Precondition(format!("verification failed: {}", failures.join("; "))))
    }
}
