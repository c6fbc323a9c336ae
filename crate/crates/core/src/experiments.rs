//! Seeded scenario generation, baseline schemes, and Monte-Carlo sweeps.
//!
//! The five baseline schemes share one optimizer and differ only in flags
//! and starting points. Schemes form warm-start chains so that the textbook
//! dominance relations (bigger feasible set ⇒ better max-min rate) hold on
//! *every* seed instead of merely on average: a chained run starts from the
//! dominated scheme's delivered design, keeps it as an incumbent floor, and
//! can therefore never report less.
//!
//! * `sdma_hybrid_nf` — cold start, common stream pinned to zero.
//! * `rsma_hybrid_nf` — warm-started from the converged SDMA design.
//! * `rsma_fulldigital_nf` — precoder-only run warm-started from the hybrid
//!   RSMA design (drops the analog/digital factorization).
//! * `rsma_commonly_nf` — hybrid RSMA with the sensing floor removed,
//!   warm-started from the sensing-constrained design.
//! * `rsma_hybrid_ff` — the SDMA→RSMA chain on planar-wavefront channels
//!   for the same geometry (near-field vs. far-field comparisons).
//!
//! Sweeps fan trials out across a thread pool; every trial derives its
//! scenario and optimizer seed from `spec.seed ^ trial`, and results are
//! reduced in canonical (scheme, value, trial) order, so identical inputs
//! produce byte-identical CSVs regardless of scheduling. Wall-clock times
//! appear only in the JSON summary, never in the CSVs.

use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{rayleigh_distance, PolarCoord, ScatterPath, Scenario, Wavefront};
use crate::config::{dbm_to_mw, mw_to_dbm, SystemConfig};
use crate::io;
use crate::optimizer::{optimize, PddOptions, Solution, TraceRow, WarmStart};
use crate::{Error, Result};

/// Angular sector for generated users, scatterers, and targets, degrees.
const ANGLE_MAX_DEG: f64 = 60.0;
/// Closest generated user/target range, meters.
const RANGE_MIN_M: f64 = 5.0;
/// Scatterer range band, meters.
const SCATTER_RANGE_M: (f64, f64) = (20.0, 30.0);

// ---------------------------------------------------------------------------
// Scenario generation
// ---------------------------------------------------------------------------

/// Draws a random scenario: users and targets uniform in range
/// (5 m, Rayleigh distance) and angle (−60°, 60°), scatterers uniform in
/// (20 m, 30 m) with their user link ranges taken from the drawn geometry.
/// Deterministic per (config, seed); draw order is users, then each user's
/// scatterers, then targets.
pub fn gen_scenario(cfg: &SystemConfig, seed: u64) -> Result<Scenario> {
    cfg.validate()?;
    let range_max = rayleigh_distance(cfg.aperture_tx(), cfg.wavelength_m)?;
    if range_max <= RANGE_MIN_M {
        return Err(Error::Config(format!(
            "Rayleigh distance {range_max} m leaves no room beyond the {RANGE_MIN_M} m minimum"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let draw = |rng: &mut ChaCha8Rng, lo: f64, hi: f64| -> Result<PolarCoord> {
        let range = rng.random_range(lo..hi);
        let angle = rng.random_range(-ANGLE_MAX_DEG..ANGLE_MAX_DEG);
        PolarCoord::from_degrees(range, angle)
    };
    let mut users = Vec::with_capacity(cfg.n_users);
    let mut scatterers = Vec::with_capacity(cfg.n_users);
    for _ in 0..cfg.n_users {
        let user = draw(&mut rng, RANGE_MIN_M, range_max)?;
        let paths = (0..cfg.n_scatterers)
            .map(|_| {
                let coord = draw(&mut rng, SCATTER_RANGE_M.0, SCATTER_RANGE_M.1)?;
                Ok(ScatterPath { link_range_m: coord.distance_to(&user), coord })
            })
            .collect::<Result<Vec<_>>>()?;
        users.push(user);
        scatterers.push(paths);
    }
    let targets = (0..cfg.n_targets)
        .map(|_| draw(&mut rng, RANGE_MIN_M, range_max))
        .collect::<Result<Vec<_>>>()?;
    Scenario::synthesize(cfg, users, scatterers, targets)
}

// ---------------------------------------------------------------------------
// Baseline schemes
// ---------------------------------------------------------------------------

/// Baseline design schemes. The string forms (`rsma_hybrid_nf`, …) are used
/// in CLI flags, sweep specs, and CSV rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    RsmaHybridNf,
    RsmaFulldigitalNf,
    SdmaHybridNf,
    RsmaCommonlyNf,
    RsmaHybridFf,
}

impl Scheme {
    pub const ALL: [Scheme; 5] = [
        Scheme::RsmaHybridNf,
        Scheme::RsmaFulldigitalNf,
        Scheme::SdmaHybridNf,
        Scheme::RsmaCommonlyNf,
        Scheme::RsmaHybridFf,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Scheme::RsmaHybridNf => "rsma_hybrid_nf",
            Scheme::RsmaFulldigitalNf => "rsma_fulldigital_nf",
            Scheme::SdmaHybridNf => "sdma_hybrid_nf",
            Scheme::RsmaCommonlyNf => "rsma_commonly_nf",
            Scheme::RsmaHybridFf => "rsma_hybrid_ff",
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Scheme::ALL
            .into_iter()
            .find(|sch| sch.name() == s)
            .ok_or_else(|| {
                let names: Vec<_> = Scheme::ALL.iter().map(|s| s.name()).collect();
                Error::Argument(format!(
                    "unknown scheme `{s}`; expected one of {}",
                    names.join(", ")
                ))
            })
    }
}

fn base_opts(seed: u64) -> PddOptions {
    PddOptions { seed, ..PddOptions::default() }
}

fn solve_sdma(scenario: &Scenario, cfg: &SystemConfig, seed: u64) -> Result<Solution> {
    let opts = PddOptions { common_stream: false, ..base_opts(seed) };
    optimize(scenario, cfg, &opts)
}

fn solve_rsma(scenario: &Scenario, cfg: &SystemConfig, seed: u64) -> Result<Solution> {
    let sdma = solve_sdma(scenario, cfg, seed)?;
    let opts =
        PddOptions { warm_start: Some(WarmStart::from_solution(&sdma)), ..base_opts(seed) };
    optimize(scenario, cfg, &opts)
}

/// Runs one baseline scheme on a scenario. `seed` drives the analog-stage
/// initialization of the cold run at the root of the scheme's warm-start
/// chain (see the module docs for the chains).
pub fn run_baseline(
    scheme: Scheme,
    scenario: &Scenario,
    cfg: &SystemConfig,
    seed: u64,
) -> Result<Solution> {
    match scheme {
        Scheme::SdmaHybridNf => solve_sdma(scenario, cfg, seed),
        Scheme::RsmaHybridNf => solve_rsma(scenario, cfg, seed),
        Scheme::RsmaFulldigitalNf => {
            let hybrid = solve_rsma(scenario, cfg, seed)?;
            let opts = PddOptions {
                fully_digital: true,
                warm_start: Some(WarmStart::from_solution(&hybrid).digital_only()),
                ..base_opts(seed)
            };
            optimize(scenario, cfg, &opts)
        }
        Scheme::RsmaCommonlyNf => {
            let isac = solve_rsma(scenario, cfg, seed)?;
            // A zero sensing-rate floor is vacuous (rates are non-negative),
            // so the exact communication-only problem drops the sensing
            // constraints and their auxiliary updates entirely.
            let mut relaxed = cfg.clone();
            relaxed.sense_rate_min_bps = 0.0;
            let opts = PddOptions {
                sensing: false,
                warm_start: Some(WarmStart::from_solution(&isac)),
                ..base_opts(seed)
            };
            optimize(scenario, &relaxed, &opts)
        }
        Scheme::RsmaHybridFf => {
            let planar = scenario.resynthesize(Wavefront::Planar, cfg)?;
            solve_rsma(&planar, cfg, seed)
        }
    }
}

// ---------------------------------------------------------------------------
// Sweeps
// ---------------------------------------------------------------------------

/// Swept system parameter. Integer axes take integral `values`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    PowerDbm,
    NRf,
    NUsers,
    NTargets,
    SenseRateMin,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::PowerDbm => "power_dbm",
            SweepAxis::NRf => "n_rf",
            SweepAxis::NUsers => "n_users",
            SweepAxis::NTargets => "n_targets",
            SweepAxis::SenseRateMin => "sense_rate_min",
        }
    }
}

/// One Monte-Carlo sweep: a parameter axis, the values to visit, the trial
/// count per (scheme, value) cell, and the schemes to compare.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepSpec {
    pub axis: SweepAxis,
    /// Axis values, strictly increasing.
    pub values: Vec<f64>,
    /// Monte-Carlo trials per cell, ≥ 1.
    pub trials: usize,
    /// Base seed; trial `t` uses `seed ^ t`.
    pub seed: u64,
    pub schemes: Vec<Scheme>,
    /// Trial indices whose convergence traces are written as CSVs.
    #[serde(default)]
    pub traced_trials: Vec<usize>,
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::Config("sweep needs at least one trial".into()));
        }
        if self.values.is_empty() {
            return Err(Error::Config("sweep needs at least one axis value".into()));
        }
        if self.values.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::Config(format!(
                "axis values must be strictly increasing, got {:?}",
                self.values
            )));
        }
        if !self.values.iter().all(|v| v.is_finite()) {
            return Err(Error::Config(format!("axis values must be finite, got {:?}", self.values)));
        }
        if self.schemes.is_empty() {
            return Err(Error::Config("sweep needs at least one scheme".into()));
        }
        if let Some(&t) = self.traced_trials.iter().find(|&&t| t >= self.trials) {
            return Err(Error::Config(format!(
                "traced trial {t} out of range for {} trials",
                self.trials
            )));
        }
        Ok(())
    }
}

fn as_count(value: f64, what: &str) -> Result<usize> {
    if value.fract() == 0.0 && value >= 1.0 && value <= usize::MAX as f64 {
        Ok(value as usize)
    } else {
        Err(Error::Config(format!("{what} must be a positive integer, got {value}")))
    }
}

/// Applies one axis value to a base configuration.
pub fn apply_axis(cfg: &SystemConfig, axis: SweepAxis, value: f64) -> Result<SystemConfig> {
    let mut out = cfg.clone();
    match axis {
        SweepAxis::PowerDbm => out.power_max_mw = dbm_to_mw(value),
        SweepAxis::NRf => out.n_rf = as_count(value, "n_rf")?,
        SweepAxis::NUsers => out.n_users = as_count(value, "n_users")?,
        SweepAxis::NTargets => {
            out.n_targets = as_count(value, "n_targets")?;
            out.reflect_coeffs = vec![1.0; out.n_targets];
        }
        SweepAxis::SenseRateMin => {
            if value < 0.0 {
                return Err(Error::Config(format!(
                    "sense_rate_min must be non-negative, got {value}"
                )));
            }
            out.sense_rate_min_bps = value;
        }
    }
    out.validate()?;
    Ok(out)
}

/// Aggregate of one (scheme, axis value) cell. Means exclude infeasible and
/// failed trials; those are counted instead.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepRow {
    pub scheme: String,
    pub axis: String,
    pub value: f64,
    /// Power budget of this cell, both scales (the budget is the axis value
    /// itself on power sweeps and the base config's budget otherwise).
    pub power_dbm: f64,
    pub power_mw: f64,
    pub trials: usize,
    /// Trials that produced a design.
    pub solved: usize,
    /// Trials whose sensing floors were unsatisfiable.
    pub infeasible: usize,
    /// Trials that errored (solver failure, bad geometry, …).
    pub failed: usize,
    /// Mean delivered max-min rate over solved trials.
    pub mean_min_rate: Option<f64>,
    /// Standard error of the mean (needs ≥ 2 solved trials).
    pub std_error: Option<f64>,
    pub mean_outer_iterations: Option<f64>,
    /// Total solve time of the cell, seconds. JSON only — kept out of the
    /// CSVs so identical inputs give byte-identical files.
    pub wall_time_s: f64,
}

/// Full sweep outcome in canonical (scheme, value) order.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepResult {
    pub spec: SweepSpec,
    pub rows: Vec<SweepRow>,
    pub wall_time_s: f64,
}

struct TrialOutcome {
    min_rate: Option<f64>,
    outer_iterations: Option<usize>,
    infeasible: bool,
    failed: bool,
    wall_s: f64,
    trace: Option<Vec<TraceRow>>,
}

fn run_trial(
    scheme: Scheme,
    cfg: &SystemConfig,
    seed: u64,
    want_trace: bool,
) -> TrialOutcome {
    let started = Instant::now();
    let result = gen_scenario(cfg, seed).and_then(|sc| run_baseline(scheme, &sc, cfg, seed));
    let wall_s = started.elapsed().as_secs_f64();
    match result {
        Ok(sol) => TrialOutcome {
            min_rate: Some(sol.report.min_total),
            outer_iterations: Some(sol.diagnostics.outer_iterations),
            infeasible: false,
            failed: false,
            wall_s,
            trace: want_trace.then(|| sol.diagnostics.trace.clone()),
        },
        Err(Error::Infeasible) => TrialOutcome {
            min_rate: None,
            outer_iterations: None,
            infeasible: true,
            failed: false,
            wall_s,
            trace: None,
        },
        Err(e) => {
            eprintln!("trial failed ({} seed {seed}): {e}", scheme.name());
            TrialOutcome {
                min_rate: None,
                outer_iterations: None,
                infeasible: false,
                failed: true,
                wall_s,
                trace: None,
            }
        }
    }
}

/// Runs a full sweep and writes its CSVs (rates, infeasibility counts, and
/// requested convergence traces) plus a JSON summary into `out_dir`.
///
/// Trials run in parallel; per-trial errors are logged and counted, never
/// fatal. Infeasible trials (sensing floor unsatisfiable) are counted
/// separately from failures and excluded from the means.
pub fn run_sweep(spec: &SweepSpec, cfg: &SystemConfig, out_dir: &Path) -> Result<SweepResult> {
    spec.validate()?;
    cfg.validate()?;
    let configs: Vec<SystemConfig> = spec
        .values
        .iter()
        .map(|&v| apply_axis(cfg, spec.axis, v))
        .collect::<Result<Vec<_>>>()?;
    std::fs::create_dir_all(out_dir)?;

    let started = Instant::now();
    let jobs: Vec<(usize, usize, usize)> = (0..spec.schemes.len())
        .flat_map(|si| {
            (0..spec.values.len()).flat_map(move |vi| (0..spec.trials).map(move |ti| (si, vi, ti)))
        })
        .collect();
    let mut outcomes: Vec<((usize, usize, usize), TrialOutcome)> = jobs
        .into_par_iter()
        .map(|(si, vi, ti)| {
            let seed = spec.seed ^ ti as u64;
            let want_trace = spec.traced_trials.contains(&ti);
            ((si, vi, ti), run_trial(spec.schemes[si], &configs[vi], seed, want_trace))
        })
        .collect();
    outcomes.sort_by_key(|(key, _)| *key);

    let mut rows = Vec::with_capacity(spec.schemes.len() * spec.values.len());
    for (si, &scheme) in spec.schemes.iter().enumerate() {
        for (vi, &value) in spec.values.iter().enumerate() {
            let cell: Vec<&TrialOutcome> = outcomes
                .iter()
                .filter(|((s, v, _), _)| *s == si && *v == vi)
                .map(|(_, o)| o)
                .collect();
            let rates: Vec<f64> = cell.iter().filter_map(|o| o.min_rate).collect();
            let outers: Vec<f64> =
                cell.iter().filter_map(|o| o.outer_iterations.map(|n| n as f64)).collect();
            let mean = |xs: &[f64]| xs.iter().sum::<f64>() / xs.len() as f64;
            let mean_min_rate = (!rates.is_empty()).then(|| mean(&rates));
            let std_error = (rates.len() >= 2).then(|| {
                let m = mean(&rates);
                let var =
                    rates.iter().map(|r| (r - m) * (r - m)).sum::<f64>() / (rates.len() - 1) as f64;
                (var / rates.len() as f64).sqrt()
            });
            for ((_, _, ti), outcome) in
                outcomes.iter().filter(|((s, v, _), _)| *s == si && *v == vi)
            {
                if let Some(trace) = &outcome.trace {
                    let name =
                        format!("trace_{}_{}_v{vi}_t{ti}.csv", scheme.name(), spec.axis.name());
                    io::write_trace_csv(&out_dir.join(name), trace)?;
                }
            }
            rows.push(SweepRow {
                scheme: scheme.name().to_string(),
                axis: spec.axis.name().to_string(),
                value,
                power_dbm: mw_to_dbm(configs[vi].power_max_mw),
                power_mw: configs[vi].power_max_mw,
                trials: spec.trials,
                solved: rates.len(),
                infeasible: cell.iter().filter(|o| o.infeasible).count(),
                failed: cell.iter().filter(|o| o.failed).count(),
                mean_min_rate,
                std_error,
                mean_outer_iterations: (!outers.is_empty()).then(|| mean(&outers)),
                wall_time_s: cell.iter().map(|o| o.wall_s).sum(),
            });
        }
    }

    let result = SweepResult { spec: spec.clone(), rows, wall_time_s: started.elapsed().as_secs_f64() };
    io::write_sweep_outputs(&result, out_dir)?;
    Ok(result)
}
