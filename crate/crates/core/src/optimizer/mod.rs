//! Max-min rate beamforming under per-target sensing-rate floors.
//!
//! The design problem couples a unit-modulus analog stage `F` with a digital
//! stage `W` through the transmit precoder `P = F W`. A penalty dual
//! decomposition handles the coupling: the inner loop block-optimizes the
//! augmented objective
//!
//! ```text
//! AL(P, F, W) = R_s(P) - Re tr(D^H (P - FW)) - ||P - FW||^2 / (2 rho)
//! ```
//!
//! over receive filters, MMSE equalizers, rate weights, fractional-transform
//! auxiliaries, the precoder (a second-order cone program), the digital
//! stage (least squares), and the analog stage (per-entry phase alignment).
//! The outer loop tightens the dual `D` or shrinks `rho` until `P` and `FW`
//! agree. Every block update keeps the augmented objective non-decreasing;
//! the per-block trace records each value so that property is auditable.
//!
//! One optimizer run is single-threaded and deterministic given
//! `(scenario, options)`; concurrent runs share nothing.

mod subproblem;

pub use subproblem::{solve_inner_convex, ConvexStep, PenaltyTerm};

use std::f64::consts::LN_2;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::channel::Scenario;
use crate::config::SystemConfig;
use crate::linalg::{hermitian_part, inf_norm, top_generalized_eigvec};
use crate::rates::{
    optimal_common_split, power_terms, rate_report, CommonRateAlloc, Precoder, RateReport,
    ReceiveFilters,
};
use crate::socp::{ClarabelSolver, ConicSolver};
use crate::{C64, CMat, CVec, Error, Result};

/// Incumbent replacement margin: a candidate must beat the held design by
/// this much in max-min rate. Keeps float-level noise from displacing an
/// exactly-known warm-start floor.
const INCUMBENT_MARGIN: f64 = 1e-9;

/// Rate offset `1/ln2 + log2(ln2)` tying the weighted-MSE objective to the
/// achievable rate: at the optimal equalizer and weight,
/// `eta * mse - log2(eta) = offset - rate`.
pub fn wmmse_rate_offset() -> f64 {
    1.0 / LN_2 + LN_2.log2()
}

/// Cascade of analog phase shifters and a digital precoder.
#[derive(Debug, Clone, PartialEq)]
pub struct HybridBeamformer {
    /// N_t x N_f, every entry unit modulus.
    pub analog: CMat,
    /// N_f x (K+1) digital stage.
    pub digital: CMat,
}

impl HybridBeamformer {
    /// Transmit precoder `F W`.
    pub fn product(&self) -> CMat {
        &self.analog * &self.digital
    }

    /// Enforces the unit-modulus contract within 1e-12.
    pub fn validate(&self) -> Result<()> {
        for e in self.analog.iter() {
            if (e.norm() - 1.0).abs() > 1e-12 {
                return Err(Error::Precondition(format!(
                    "analog entry has modulus {}, expected 1",
                    e.norm()
                )));
            }
        }
        Ok(())
    }
}

/// Per-iteration auxiliaries: MMSE equalizers, rate weights, and the
/// fractional-transform vectors for the sensing constraints.
#[derive(Debug, Clone)]
pub struct AuxVars {
    /// Common-stream equalizers, one per user.
    pub eq_common: Vec<C64>,
    /// Private-stream equalizers.
    pub eq_private: Vec<C64>,
    /// Common-stream weights (strictly positive).
    pub wt_common: Vec<f64>,
    /// Private-stream weights (strictly positive).
    pub wt_private: Vec<f64>,
    /// Fractional-transform vectors, one length-(K+1) vector per target;
    /// empty when sensing constraints are inactive.
    pub qt_vectors: Vec<CVec>,
}

impl AuxVars {
    /// Neutral starting point: zero equalizers (surrogate rates
    /// `offset - 1`), unit weights, no transform vectors.
    pub fn neutral(n_users: usize) -> Self {
        AuxVars {
            eq_common: vec![C64::new(0.0, 0.0); n_users],
            eq_private: vec![C64::new(0.0, 0.0); n_users],
            wt_common: vec![1.0; n_users],
            wt_private: vec![1.0; n_users],
            qt_vectors: Vec::new(),
        }
    }
}

/// Dual/penalty bookkeeping for the outer loop.
#[derive(Debug, Clone)]
pub struct PddState {
    /// Dual matrix D, same shape as P.
    pub dual: CMat,
    /// Penalty weight rho > 0 (only ever shrinks, by `shrink`).
    pub penalty: f64,
    /// Residual gate deciding dual step vs penalty shrink.
    pub residual_gate: f64,
    /// Multiplicative penalty shrink factor in (0, 1).
    pub shrink: f64,
    /// 1-based outer iteration counter.
    pub outer_iter: usize,
}

/// Knobs for one optimizer run. Defaults implement the full algorithm; the
/// flags carve out the baseline variants.
#[derive(Debug, Clone)]
pub struct PddOptions {
    /// Seed for the analog-stage initialization.
    pub seed: u64,
    /// When false, the common stream is pinned to zero (classic per-user
    /// precoding without rate splitting).
    pub common_stream: bool,
    /// When false, sensing constraints (and filter/transform updates) are
    /// skipped — communication-only design.
    pub sensing: bool,
    /// When true, optimize the precoder directly with no analog/digital
    /// split and no penalty terms.
    pub fully_digital: bool,
    /// Starting design carried over from another run; replaces the random
    /// initialization and is kept as the incumbent floor.
    pub warm_start: Option<WarmStart>,
    pub max_outer: usize,
    pub max_inner: usize,
    /// Inner-loop stop: augmented-objective change below this.
    pub inner_tol: f64,
    /// Outer-loop stop: coupling residual `||P - FW||_inf` below this ...
    pub residual_tol: f64,
    /// ... and max-min rate change below this.
    pub objective_tol: f64,
    /// Initial penalty weight.
    pub rho0: f64,
    /// Penalty shrink factor.
    pub mu: f64,
}

impl Default for PddOptions {
    fn default() -> Self {
        PddOptions {
            seed: 0,
            common_stream: true,
            sensing: true,
            fully_digital: false,
            warm_start: None,
            max_outer: 60,
            max_inner: 100,
            inner_tol: 1e-3,
            residual_tol: 1e-4,
            objective_tol: 1e-3,
            rho0: 1.0,
            mu: 0.8,
        }
    }
}

/// A previously delivered design used as both the starting iterate and the
/// incumbent floor: the run can only return something at least as good.
#[derive(Debug, Clone)]
pub struct WarmStart {
    /// Delivered precoder of the source run (exact bits — the floor value
    /// is recomputed from this matrix, so ties are exact).
    pub precoder: CMat,
    /// Analog/digital pair realizing `precoder`; required for hybrid runs,
    /// must be absent for fully digital runs.
    pub hybrid: Option<HybridBeamformer>,
}

impl WarmStart {
    /// Carries a solution forward, architecture included.
    pub fn from_solution(sol: &Solution) -> Self {
        WarmStart { precoder: sol.precoder.matrix.clone(), hybrid: sol.hybrid.clone() }
    }

    /// Drops the hybrid realization so a fully digital run can start from
    /// the same transmit matrix.
    pub fn digital_only(mut self) -> Self {
        self.hybrid = None;
        self
    }
}

/// Augmented-objective value after each block update of one inner
/// iteration, in update order. Filter and transform updates never change
/// the objective (they act on constraints), so those entries repeat their
/// predecessor by construction.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct BlockObjectives {
    pub filters: f64,
    pub equalizers: f64,
    pub weights: f64,
    pub transform: f64,
    pub precoder: f64,
    pub digital: f64,
    pub analog: f64,
}

impl BlockObjectives {
    pub fn as_array(&self) -> [f64; 7] {
        [
            self.filters,
            self.equalizers,
            self.weights,
            self.transform,
            self.precoder,
            self.digital,
            self.analog,
        ]
    }
}

/// One inner-iteration record of the convergence trace.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TraceRow {
    pub outer_iter: usize,
    pub inner_iter: usize,
    /// Augmented objective at the end of the iteration.
    pub al_objective: f64,
    /// Per-block augmented objectives within this iteration.
    pub blocks: BlockObjectives,
    /// Coupling residual `||P - FW||_inf` (0 for fully digital runs).
    pub residual_inf: f64,
    /// True max-min rate of the current P (optimal share split).
    pub min_rate: f64,
    /// Smallest per-target sensing rate of the current P; infinity when the
    /// scenario has no targets.
    pub min_sensing_rate: f64,
    /// Penalty weight in force (0 for fully digital runs).
    pub rho: f64,
}

/// Run health and convergence data.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Diagnostics {
    pub outer_iterations: usize,
    pub inner_iterations_total: usize,
    /// `||P - FW||_inf` of the final iterates (0 for fully digital runs).
    pub final_residual_inf: f64,
    /// Whether the outer stopping rule (residual and objective both
    /// settled) fired before the iteration cap.
    pub converged: bool,
    pub rho_final: f64,
    pub trace: Vec<TraceRow>,
}

/// Delivered design plus everything needed to audit it.
#[derive(Debug, Clone)]
pub struct Solution {
    /// Implementable transmit precoder: `F W` for hybrid runs (digital
    /// stage re-fit against the final P at zero dual), the converged P
    /// itself for fully digital runs.
    pub precoder: Precoder,
    /// The consensus variable P the run ended on. Constraint checks
    /// (sensing floors, power) refer to this matrix; it agrees with
    /// `precoder` up to the coupling residual.
    pub aux_precoder: Precoder,
    pub hybrid: Option<HybridBeamformer>,
    /// Common-rate shares of the delivered precoder.
    pub alloc: CommonRateAlloc,
    /// Receive filters optimal for the delivered precoder.
    pub filters: ReceiveFilters,
    /// Rates of the delivered precoder.
    pub report: RateReport,
    /// Rates of `aux_precoder` under its own optimal share split.
    pub report_aux: RateReport,
    pub diagnostics: Diagnostics,
}

// ---------------------------------------------------------------------------
// Block updates
// ---------------------------------------------------------------------------

/// Optimal radar receive filters for transmit covariance `r_cov`: the
/// unit-norm principal generalized eigenvector of the target's echo form
/// against its interference-plus-noise form.
pub fn update_receive_filters_cov(
    r_cov: &CMat,
    scenario: &Scenario,
    cfg: &SystemConfig,
) -> Result<ReceiveFilters> {
    let m_targets = scenario.sense_channels.len();
    let echo_form = |j: usize| -> CMat {
        let g = &scenario.sense_channels[j];
        hermitian_part(&(g * r_cov * g.adjoint())) * C64::new(cfg.reflect_coeffs[j], 0.0)
    };
    let mut filters = Vec::with_capacity(m_targets);
    for m in 0..m_targets {
        let mut q = CMat::identity(cfg.n_rx, cfg.n_rx) * C64::new(cfg.noise_sense_mw, 0.0);
        for j in 0..m_targets {
            if j != m {
                q += echo_form(j);
            }
        }
        let (_, u) = top_generalized_eigvec(&echo_form(m), &q)?;
        filters.push(u);
    }
    Ok(ReceiveFilters { filters })
}

/// Filter update for a precoder (covariance `P P^H`).
pub fn update_receive_filters(
    p: &Precoder,
    scenario: &Scenario,
    cfg: &SystemConfig,
) -> Result<ReceiveFilters> {
    update_receive_filters_cov(&p.covariance(), scenario, cfg)
}

/// MMSE equalizers for both stream types. Returns
/// `(eq_common, eq_private, mmse_common, mmse_private)`; the minimum MSEs
/// equal `I_c/T_c` and `I_p/T_p`.
pub fn update_equalizers(
    p: &Precoder,
    scenario: &Scenario,
    cfg: &SystemConfig,
) -> Result<(Vec<C64>, Vec<C64>, Vec<f64>, Vec<f64>)> {
    let mut eq_c = Vec::new();
    let mut eq_p = Vec::new();
    let mut mmse_c = Vec::new();
    let mut mmse_p = Vec::new();
    for (k, h) in scenario.comm_channels.iter().enumerate() {
        let pt = power_terms(p, h, k, cfg.noise_comm_mw, cfg.sic_residual)?;
        // omega = p^H h / T — the scalar Wiener solution.
        let num_c = p.common().dotc(h);
        let num_p = p.private(k).dotc(h);
        eq_c.push(num_c / C64::new(pt.t_c, 0.0));
        eq_p.push(num_p / C64::new(pt.t_p, 0.0));
        mmse_c.push(pt.i_c / pt.t_c);
        mmse_p.push(pt.i_p / pt.t_p);
    }
    Ok((eq_c, eq_p, mmse_c, mmse_p))
}

/// Optimal rate weights `eta = 1/(mse * ln 2)` for both stream types.
pub fn update_weights(mmse_common: &[f64], mmse_private: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    let lift = |mses: &[f64]| -> Result<Vec<f64>> {
        mses.iter()
            .map(|&d| {
                if d <= 0.0 || !d.is_finite() {
                    Err(Error::Argument(format!("MSE must be positive and finite, got {d}")))
                } else {
                    Ok(1.0 / (d * LN_2))
                }
            })
            .collect()
    };
    Ok((lift(mmse_common)?, lift(mmse_private)?))
}

/// Echo directions `g_{m,j} = G_j^H u_m` seen by filter `m` from every
/// target channel `j`; target m's sensing SINR is a ratio of quadratics in
/// `P` through these vectors.
pub(crate) fn filter_channels(filters: &ReceiveFilters, scenario: &Scenario) -> Vec<Vec<CVec>> {
    filters
        .filters
        .iter()
        .map(|u| scenario.sense_channels.iter().map(|g| g.adjoint() * u).collect())
        .collect()
}

/// Post-filter interference-plus-noise power at target `m`:
/// `sum_{j != m} alpha_j ||P^H g_{m,j}||^2 + sigma_0^2` (unit-norm filters).
fn sensing_interference(p: &Precoder, g_m: &[CVec], m: usize, cfg: &SystemConfig) -> f64 {
    let mut acc = cfg.noise_sense_mw;
    for (j, g) in g_m.iter().enumerate() {
        if j != m {
            acc += cfg.reflect_coeffs[j] * (p.matrix.adjoint() * g).norm_squared();
        }
    }
    acc
}

/// Fractional-transform auxiliaries `x_m = s_m(P) / I_m(P)` with
/// `s_m = sqrt(alpha_m) P^H G_m^H u_m`. At the returned point the concave
/// surrogate `2 Re(x^H s_m(P)) - I_m(P) ||x||^2` equals the sensing SINR.
pub fn update_qt_aux(
    p: &Precoder,
    filters: &ReceiveFilters,
    scenario: &Scenario,
    cfg: &SystemConfig,
) -> Vec<CVec> {
    let chans = filter_channels(filters, scenario);
    (0..filters.filters.len())
        .map(|m| {
            let s: CVec =
                p.matrix.adjoint() * &chans[m][m] * C64::new(cfg.reflect_coeffs[m].sqrt(), 0.0);
            let i_m = sensing_interference(p, &chans[m], m, cfg);
            s / C64::new(i_m, 0.0)
        })
        .collect()
}

/// The sensing surrogate `f_m(x, P) = 2 Re(x^H s_m(P)) - I_m(P) ||x||^2`;
/// a lower bound on the sensing SINR for any `x`, tight at the transform
/// point returned by [`update_qt_aux`].
pub fn sensing_surrogate(
    x: &CVec,
    p: &Precoder,
    filters: &ReceiveFilters,
    scenario: &Scenario,
    cfg: &SystemConfig,
    m: usize,
) -> f64 {
    let chans = filter_channels(filters, scenario);
    let s: CVec = p.matrix.adjoint() * &chans[m][m] * C64::new(cfg.reflect_coeffs[m].sqrt(), 0.0);
    let i_m = sensing_interference(p, &chans[m], m, cfg);
    2.0 * s.dotc(x).re - i_m * x.norm_squared()
}

/// Digital stage refit: least-squares solution of `F W ~ P + rho D`, i.e.
/// `W = (F^H F)^{-1} F^H (P + rho D)`. A tiny ridge guards near-singular
/// phase matrices.
pub fn update_digital(analog: &CMat, p: &CMat, dual: &CMat, rho: f64) -> Result<CMat> {
    let gram = hermitian_part(&(analog.adjoint() * analog));
    let rhs = analog.adjoint() * (p + dual * C64::new(rho, 0.0));
    if let Some(chol) = gram.clone().cholesky() {
        return Ok(chol.solve(&rhs));
    }
    let n_f = gram.nrows();
    let ridge = 1e-10 * gram.trace().re / n_f as f64;
    let guarded = gram + CMat::identity(n_f, n_f) * C64::new(ridge, 0.0);
    guarded
        .cholesky()
        .map(|c| c.solve(&rhs))
        .ok_or_else(|| Error::Solver("analog gram matrix is singular beyond ridge repair".into()))
}

/// One row-major sweep of per-entry phase alignment on the analog stage,
/// minimizing `||A - F W||^2` with `A = P + rho D` under unit modulus.
///
/// Entry (i, j)'s terms read `const - 2 Re(conj(F_ij) chi_ij)` with
/// `chi = Z_ij - X_ij + F_ij Y_jj` (`Y = W W^H`, `Z = A W^H`, `X = F Y`),
/// so the minimizer is `F_ij = chi / |chi|`; `X`'s row is updated
/// incrementally after each entry. A zero coefficient keeps the previous
/// phase (any phase is optimal there).
pub fn update_analog(analog: &CMat, digital: &CMat, p: &CMat, dual: &CMat, rho: f64) -> CMat {
    let a = p + dual * C64::new(rho, 0.0);
    let y = digital * digital.adjoint();
    let z = a * digital.adjoint();
    let n_f = analog.ncols();
    let mut f = analog.clone();
    for i in 0..analog.nrows() {
        // x_row = (F Y) row i, maintained as entries of row i change.
        let mut x_row: Vec<C64> = (0..n_f)
            .map(|l| (0..n_f).map(|j| f[(i, j)] * y[(j, l)]).sum())
            .collect();
        for j in 0..n_f {
            let chi = z[(i, j)] - x_row[j] + f[(i, j)] * C64::new(y[(j, j)].re, 0.0);
            if chi.norm() > 0.0 {
                let new = chi / C64::new(chi.norm(), 0.0);
                let delta = new - f[(i, j)];
                for (l, xv) in x_row.iter_mut().enumerate() {
                    *xv += delta * y[(j, l)];
                }
                f[(i, j)] = new;
            }
        }
    }
    f
}

// ---------------------------------------------------------------------------
// Augmented objective
// ---------------------------------------------------------------------------

/// Surrogate rates `offset + log2(eta) - eta * e_k(P)` for both stream
/// types; lower bounds on the true rates for any equalizers and positive
/// weights, tight when both are optimal for `P`.
fn surrogate_rates(
    p: &Precoder,
    aux: &AuxVars,
    scenario: &Scenario,
    cfg: &SystemConfig,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let tau = wmmse_rate_offset();
    let mut common = Vec::with_capacity(scenario.comm_channels.len());
    let mut private = Vec::with_capacity(scenario.comm_channels.len());
    for (k, h) in scenario.comm_channels.iter().enumerate() {
        let pt = power_terms(p, h, k, cfg.noise_comm_mw, cfg.sic_residual)?;
        let (w_c, w_p) = (aux.eq_common[k], aux.eq_private[k]);
        // e = |w|^2 T - 2 Re(w h^H p) + 1.
        let cross_c = (w_c * h.dotc(&p.common())).re;
        let cross_p = (w_p * h.dotc(&p.private(k))).re;
        let e_c = w_c.norm_sqr() * pt.t_c - 2.0 * cross_c + 1.0;
        let e_p = w_p.norm_sqr() * pt.t_p - 2.0 * cross_p + 1.0;
        common.push(tau + aux.wt_common[k].log2() - aux.wt_common[k] * e_c);
        private.push(tau + aux.wt_private[k].log2() - aux.wt_private[k] * e_p);
    }
    Ok((common, private))
}

/// Augmented objective under the current auxiliaries: best share split of
/// the surrogate rates, minus dual and penalty terms. `coupling = None`
/// (fully digital) drops the dual/penalty part. With the common stream
/// disabled the objective is the worst private surrogate rate.
fn augmented_objective(
    p: &Precoder,
    coupling: Option<(&CMat, &CMat, &PddState)>,
    aux: &AuxVars,
    common_stream: bool,
    scenario: &Scenario,
    cfg: &SystemConfig,
) -> Result<f64> {
    let (common, private) = surrogate_rates(p, aux, scenario, cfg)?;
    let rate = if common_stream {
        let capacity = common.iter().copied().fold(f64::INFINITY, f64::min);
        optimal_common_split(capacity, &private).1
    } else {
        private.iter().copied().fold(f64::INFINITY, f64::min)
    };
    let mut value = rate;
    if let Some((f, w, st)) = coupling {
        let e = &p.matrix - f * w;
        let dual_term: f64 = st.dual.iter().zip(e.iter()).map(|(d, r)| (d.conj() * r).re).sum();
        value -= dual_term + e.norm_squared() / (2.0 * st.penalty);
    }
    Ok(value)
}

/// True max-min rate of a precoder and the share split achieving it. With
/// the common stream disabled this is the worst private rate with zero
/// shares.
pub fn maxmin_rate(
    p: &Precoder,
    common_stream: bool,
    scenario: &Scenario,
    cfg: &SystemConfig,
) -> Result<(f64, CommonRateAlloc)> {
    let mut common_cap = f64::INFINITY;
    let mut private = Vec::with_capacity(scenario.comm_channels.len());
    for (k, h) in scenario.comm_channels.iter().enumerate() {
        let pt = power_terms(p, h, k, cfg.noise_comm_mw, cfg.sic_residual)?;
        common_cap = common_cap.min((1.0 + pt.s_c / pt.i_c).log2());
        private.push((1.0 + pt.s_p / pt.i_p).log2());
    }
    if !common_stream {
        let worst = private.iter().copied().fold(f64::INFINITY, f64::min);
        return Ok((worst, CommonRateAlloc::zeros(private.len())));
    }
    let (shares, level) = optimal_common_split(common_cap, &private);
    Ok((level, CommonRateAlloc { shares }))
}

// ---------------------------------------------------------------------------
// Loops
// ---------------------------------------------------------------------------

struct Iterates {
    p: Precoder,
    analog: Option<CMat>,
    digital: Option<CMat>,
    aux: AuxVars,
    filters: Option<ReceiveFilters>,
}

impl Iterates {
    fn residual_inf(&self) -> f64 {
        match (&self.analog, &self.digital) {
            (Some(f), Some(w)) => inf_norm(&(&self.p.matrix - f * w)),
            _ => 0.0,
        }
    }

    fn al(
        &self,
        state: Option<&PddState>,
        common_stream: bool,
        scenario: &Scenario,
        cfg: &SystemConfig,
    ) -> Result<f64> {
        let coupling = match (&self.analog, &self.digital, state) {
            (Some(f), Some(w), Some(st)) => Some((f, w, st)),
            _ => None,
        };
        augmented_objective(&self.p, coupling, &self.aux, common_stream, scenario, cfg)
    }
}

/// Smallest per-target sensing rate of a precoder under the given (or
/// freshly optimized) filters; infinity when there are no targets.
fn min_sensing_rate(
    p: &Precoder,
    filters: Option<&ReceiveFilters>,
    scenario: &Scenario,
    cfg: &SystemConfig,
) -> Result<f64> {
    if scenario.sense_channels.is_empty() {
        return Ok(f64::INFINITY);
    }
    let fresh;
    let u = match filters {
        Some(u) => u,
        None => {
            fresh = update_receive_filters(p, scenario, cfg)?;
            &fresh
        }
    };
    let sinrs = crate::rates::sensing_sinr(p, u, scenario, cfg)?;
    Ok(sinrs.iter().map(|g| (1.0 + g).log2()).fold(f64::INFINITY, f64::min))
}

#[allow(clippy::too_many_arguments)]
fn inner_loop(
    iterates: &mut Iterates,
    state: Option<&PddState>,
    opts: &PddOptions,
    scenario: &Scenario,
    cfg: &SystemConfig,
    solver: &dyn ConicSolver,
    outer_iter: usize,
    trace: &mut Vec<TraceRow>,
) -> Result<()> {
    let sensing_active = opts.sensing && !scenario.sense_channels.is_empty();
    let mut prev_al: Option<f64> = None;
    for inner in 1..=opts.max_inner {
        // Receive filters: act on the sensing constraints only, so the
        // objective is unchanged; its value here carries the stale
        // auxiliaries of the previous iteration.
        if sensing_active {
            iterates.filters = Some(update_receive_filters(&iterates.p, scenario, cfg)?);
        }
        let al_filters = iterates.al(state, opts.common_stream, scenario, cfg)?;

        // Equalizers: minimize each stream's MSE at fixed weights.
        let (eq_c, eq_p, mmse_c, mmse_p) = update_equalizers(&iterates.p, scenario, cfg)?;
        iterates.aux.eq_common = eq_c;
        iterates.aux.eq_private = eq_p;
        let al_equalizers = iterates.al(state, opts.common_stream, scenario, cfg)?;

        // Weights: maximize each surrogate rate at the fresh MSEs.
        let (wt_c, wt_p) = update_weights(&mmse_c, &mmse_p)?;
        iterates.aux.wt_common = wt_c;
        iterates.aux.wt_private = wt_p;
        let al_weights = iterates.al(state, opts.common_stream, scenario, cfg)?;

        // Fractional-transform points: tighten the sensing surrogates
        // (constraints only — objective unchanged).
        iterates.aux.qt_vectors = if sensing_active {
            update_qt_aux(&iterates.p, iterates.filters.as_ref().unwrap(), scenario, cfg)
        } else {
            Vec::new()
        };
        let al_transform = al_weights;

        // Convex step over (P, shares, rate floor).
        let penalty = match (state, &iterates.analog, &iterates.digital) {
            (Some(st), Some(f), Some(w)) => Some(PenaltyTerm {
                target: f * w - &st.dual * C64::new(st.penalty, 0.0),
                rho: st.penalty,
            }),
            _ => None,
        };
        let step = solve_inner_convex(
            &iterates.aux,
            penalty,
            iterates.filters.as_ref(),
            scenario,
            cfg,
            opts.common_stream,
            solver,
        );
        let al_precoder = match step {
            Ok(s) => {
                let p_prev = std::mem::replace(&mut iterates.p, Precoder::new(s.p));
                // Project solver slack back onto the power ball so the power
                // invariant holds at every accepted iterate.
                let pw = iterates.p.total_power();
                if pw > cfg.power_max_mw {
                    iterates.p.matrix *= C64::new((cfg.power_max_mw / pw).sqrt(), 0.0);
                }
                // Null-step safeguard: the previous iterate is feasible for
                // the step's subproblem, so an exact solve can never lose
                // objective; a reduced-accuracy solve occasionally does, and
                // then keeping the previous precoder preserves the ascent.
                let mut al = iterates.al(state, opts.common_stream, scenario, cfg)?;
                if al < al_transform {
                    iterates.p = p_prev;
                    al = al_transform;
                }
                al
            }
            // The current iterate is feasible for its own subproblem (the
            // sensing surrogates are tight at the expansion point, and
            // infeasible floors were already rejected at initialization), so
            // a failure or infeasibility verdict here is a numerical stall
            // of the conic solver, not a property of the instance. Take a
            // null step: keep the precoder, let the auxiliary blocks move,
            // and let the next outer update re-pose the subproblem.
            Err(Error::Infeasible) | Err(Error::Solver(_)) => al_transform,
            Err(e) => return Err(e),
        };

        // Digital and analog stages (hybrid runs only): both minimize
        // ||P + rho D - F W||^2, which is the penalty+dual part of the
        // objective up to a constant in (F, W).
        let (al_digital, al_analog) = if let Some(st) = state {
            let f_cur = iterates.analog.clone().unwrap();
            let w = update_digital(&f_cur, &iterates.p.matrix, &st.dual, st.penalty)?;
            iterates.digital = Some(w.clone());
            let al_d = iterates.al(state, opts.common_stream, scenario, cfg)?;
            let f_new = update_analog(&f_cur, &w, &iterates.p.matrix, &st.dual, st.penalty);
            iterates.analog = Some(f_new);
            let al_a = iterates.al(state, opts.common_stream, scenario, cfg)?;
            (al_d, al_a)
        } else {
            (al_precoder, al_precoder)
        };

        let (min_rate, _) = maxmin_rate(&iterates.p, opts.common_stream, scenario, cfg)?;
        trace.push(TraceRow {
            outer_iter,
            inner_iter: inner,
            al_objective: al_analog,
            blocks: BlockObjectives {
                filters: al_filters,
                equalizers: al_equalizers,
                weights: al_weights,
                transform: al_transform,
                precoder: al_precoder,
                digital: al_digital,
                analog: al_analog,
            },
            residual_inf: iterates.residual_inf(),
            min_rate,
            min_sensing_rate: min_sensing_rate(
                &iterates.p,
                iterates.filters.as_ref(),
                scenario,
                cfg,
            )?,
            rho: state.map_or(0.0, |s| s.penalty),
        });

        if let Some(prev) = prev_al {
            if (al_analog - prev).abs() <= opts.inner_tol {
                return Ok(());
            }
        }
        prev_al = Some(al_analog);
    }
    Ok(())
}

/// Cold starts only: when the matched-filter start violates the sensing
/// floor, ascend the worst-target surrogate SINR in the digital stage
/// (analog stage fixed, same 0.9 P_th budget as the start) until the floor
/// holds, so the first convex step of the main loop contains its own
/// starting point and the objective chain stays monotone. The surrogate is
/// tight at each expansion point, so the true worst-target SINR never
/// decreases along the ascent; a stalled ascent therefore certifies the
/// floor unreachable from this analog stage.
fn restore_sensing_floor(
    iterates: &mut Iterates,
    opts: &PddOptions,
    scenario: &Scenario,
    cfg: &SystemConfig,
    solver: &dyn ConicSolver,
) -> Result<()> {
    let floor = cfg.sense_rate_min_bps;
    if min_sensing_rate(&iterates.p, None, scenario, cfg)? >= floor {
        return Ok(());
    }
    let analog =
        iterates.analog.clone().unwrap_or_else(|| CMat::identity(cfg.n_tx, cfg.n_tx));
    let budget = 0.9 * cfg.power_max_mw;
    let stall_tol = 1e-9 * cfg.sense_sinr_min().max(1.0);
    let mut best_level = f64::NEG_INFINITY;
    for _ in 0..100 {
        let filters = update_receive_filters(&iterates.p, scenario, cfg)?;
        let qt = update_qt_aux(&iterates.p, &filters, scenario, cfg);
        let (w, level) = subproblem::sensing_ascent_step(
            &analog,
            &qt,
            &filters,
            scenario,
            cfg,
            budget,
            opts.common_stream,
            solver,
        )?;
        iterates.p = Precoder::new(&analog * &w);
        if iterates.analog.is_some() {
            iterates.digital = Some(w);
        }
        if min_sensing_rate(&iterates.p, None, scenario, cfg)? >= floor {
            return Ok(());
        }
        if level <= best_level + stall_tol {
            return Err(Error::Infeasible);
        }
        best_level = level;
    }
    Err(Error::Infeasible)
}

fn initialize(scenario: &Scenario, cfg: &SystemConfig, opts: &PddOptions) -> Result<Iterates> {
    let k = cfg.n_users;
    let streams = k + 1;
    let (p, analog, digital) = match &opts.warm_start {
        Some(ws) => match (&ws.hybrid, opts.fully_digital) {
            (Some(hb), false) => {
                hb.validate()?;
                (ws.precoder.clone(), Some(hb.analog.clone()), Some(hb.digital.clone()))
            }
            (None, true) => (ws.precoder.clone(), None, None),
            (None, false) => {
                return Err(Error::Argument(
                    "hybrid runs need a warm start carrying the analog/digital pair".into(),
                ))
            }
            (Some(_), true) => {
                return Err(Error::Argument(
                    "fully digital runs take a bare precoder warm start; call digital_only".into(),
                ))
            }
        },
        None => {
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
            let analog = if opts.fully_digital {
                CMat::identity(cfg.n_tx, cfg.n_tx)
            } else {
                CMat::from_fn(cfg.n_tx, cfg.n_rf, |_, _| {
                    C64::from_polar(
                        1.0,
                        rng.random_range(-std::f64::consts::PI..std::f64::consts::PI),
                    )
                })
            };
            // Matched-filter digital columns: common column toward the
            // channel average, private columns toward each user.
            let n_cols = analog.ncols();
            let mut w0 = CMat::zeros(n_cols, streams);
            let mut avg = CVec::zeros(cfg.n_tx);
            for h in &scenario.comm_channels {
                avg += h;
            }
            avg /= C64::new(k as f64, 0.0);
            w0.set_column(0, &(analog.adjoint() * avg));
            for (j, h) in scenario.comm_channels.iter().enumerate() {
                w0.set_column(j + 1, &(analog.adjoint() * h));
            }
            if !opts.common_stream {
                w0.set_column(0, &CVec::zeros(n_cols));
            }
            let product = &analog * &w0;
            let scale = (0.9 * cfg.power_max_mw / product.norm_squared()).sqrt();
            let w_scaled = w0 * C64::new(scale, 0.0);
            let p = &analog * &w_scaled;
            if opts.fully_digital {
                (p, None, None)
            } else {
                (p, Some(analog), Some(w_scaled))
            }
        }
    };
    Ok(Iterates {
        p: Precoder::new(p),
        analog,
        digital,
        aux: AuxVars::neutral(k),
        filters: None,
    })
}

/// Implementable design built from the current iterates: for hybrid runs
/// the digital stage is re-fit against P at zero dual and the product is
/// projected onto the power ball.
fn deliverable(
    iterates: &Iterates,
    cfg: &SystemConfig,
) -> Result<(Precoder, Option<HybridBeamformer>)> {
    match &iterates.analog {
        Some(f) => {
            let zero_dual = CMat::zeros(iterates.p.matrix.nrows(), iterates.p.matrix.ncols());
            let mut w = update_digital(f, &iterates.p.matrix, &zero_dual, 1.0)?;
            let mut delivered = f * &w;
            let pw = delivered.norm_squared();
            if pw > cfg.power_max_mw {
                let s = C64::new((cfg.power_max_mw / pw).sqrt(), 0.0);
                delivered *= s;
                w *= s;
            }
            Ok((
                Precoder::new(delivered),
                Some(HybridBeamformer { analog: f.clone(), digital: w }),
            ))
        }
        None => Ok((iterates.p.clone(), None)),
    }
}

struct Incumbent {
    precoder: Precoder,
    hybrid: Option<HybridBeamformer>,
    alloc: CommonRateAlloc,
    min_rate: f64,
}

/// Replaces the incumbent when the current iterates are within the coupling
/// tolerance, their P meets the sensing floors, and the implementable
/// design improves the max-min rate by more than the replacement margin.
fn consider_incumbent(
    incumbent: &mut Option<Incumbent>,
    iterates: &Iterates,
    scenario: &Scenario,
    cfg: &SystemConfig,
    opts: &PddOptions,
) -> Result<()> {
    if iterates.residual_inf() > opts.residual_tol {
        return Ok(());
    }
    if opts.sensing && !scenario.sense_channels.is_empty() {
        let floor = min_sensing_rate(&iterates.p, None, scenario, cfg)?;
        if floor < cfg.sense_rate_min_bps - 1e-6 {
            return Ok(());
        }
    }
    let (precoder, hybrid) = deliverable(iterates, cfg)?;
    let (min_rate, alloc) = maxmin_rate(&precoder, opts.common_stream, scenario, cfg)?;
    let better = match incumbent.as_ref() {
        Some(inc) => min_rate > inc.min_rate + INCUMBENT_MARGIN,
        None => true,
    };
    if better {
        *incumbent = Some(Incumbent { precoder, hybrid, alloc, min_rate });
    }
    Ok(())
}

/// Runs the full double-loop design. Returns [`Error::Infeasible`] only
/// when a cold-started run — deterministic in the scenario — cannot reach
/// the sensing floors at this power budget, i.e. when the initial
/// feasibility ascent stalls below the floor.
pub fn optimize(scenario: &Scenario, cfg: &SystemConfig, opts: &PddOptions) -> Result<Solution> {
    cfg.validate()?;
    if scenario.comm_channels.len() != cfg.n_users {
        return Err(Error::Dimension(format!(
            "scenario has {} user channels, config expects {}",
            scenario.comm_channels.len(),
            cfg.n_users
        )));
    }
    let solver = ClarabelSolver;
    let mut iterates = initialize(scenario, cfg, opts)?;
    if opts.warm_start.is_none()
        && opts.sensing
        && !scenario.sense_channels.is_empty()
        && cfg.sense_rate_min_bps > 0.0
    {
        restore_sensing_floor(&mut iterates, opts, scenario, cfg, &solver)?;
    }
    let mut trace = Vec::new();
    let mut converged = false;
    let mut outer_done = 0;

    // A warm start is a previously delivered design: hold it as the
    // incumbent floor so the run never returns anything worse.
    let mut incumbent: Option<Incumbent> = match &opts.warm_start {
        Some(ws) => {
            let precoder = Precoder::new(ws.precoder.clone());
            let (min_rate, alloc) = maxmin_rate(&precoder, opts.common_stream, scenario, cfg)?;
            Some(Incumbent { precoder, hybrid: ws.hybrid.clone(), alloc, min_rate })
        }
        None => None,
    };

    if opts.fully_digital {
        inner_loop(&mut iterates, None, opts, scenario, cfg, &solver, 1, &mut trace)?;
        outer_done = 1;
        converged = true;
        consider_incumbent(&mut incumbent, &iterates, scenario, cfg, opts)?;
    } else {
        let mut state = PddState {
            dual: CMat::zeros(cfg.n_tx, cfg.n_users + 1),
            penalty: opts.rho0,
            residual_gate: iterates.residual_inf() + 1.0,
            shrink: opts.mu,
            outer_iter: 0,
        };
        let mut prev_objective: Option<f64> = None;
        for outer in 1..=opts.max_outer {
            state.outer_iter = outer;
            inner_loop(
                &mut iterates,
                Some(&state),
                opts,
                scenario,
                cfg,
                &solver,
                outer,
                &mut trace,
            )?;
            outer_done = outer;
            let residual = iterates.residual_inf();
            let e = &iterates.p.matrix
                - iterates.analog.as_ref().unwrap() * iterates.digital.as_ref().unwrap();
            if residual <= state.residual_gate {
                state.dual += e / C64::new(state.penalty, 0.0);
            } else {
                state.penalty *= state.shrink;
            }
            state.residual_gate = 0.9 * residual;

            consider_incumbent(&mut incumbent, &iterates, scenario, cfg, opts)?;

            let (objective, _) = maxmin_rate(&iterates.p, opts.common_stream, scenario, cfg)?;
            let obj_settled =
                prev_objective.is_some_and(|prev| (objective - prev).abs() <= opts.objective_tol);
            prev_objective = Some(objective);
            if residual <= opts.residual_tol && obj_settled {
                converged = true;
                break;
            }
        }
    }

    // Deliver the best qualifying design seen; fall back to the final
    // iterates when none qualified.
    let (precoder, hybrid, alloc) = match incumbent {
        Some(inc) => (inc.precoder, inc.hybrid, inc.alloc),
        None => {
            let (p, hb) = deliverable(&iterates, cfg)?;
            let (_, alloc) = maxmin_rate(&p, opts.common_stream, scenario, cfg)?;
            (p, hb, alloc)
        }
    };

    let empty = ReceiveFilters { filters: Vec::new() };
    let filters = if scenario.sense_channels.is_empty() {
        empty.clone()
    } else {
        update_receive_filters(&precoder, scenario, cfg)?
    };
    let report = rate_report(&precoder, &alloc, &filters, scenario, cfg)?;
    let (_, alloc_aux) = maxmin_rate(&iterates.p, opts.common_stream, scenario, cfg)?;
    let aux_filters = if scenario.sense_channels.is_empty() {
        empty
    } else {
        update_receive_filters(&iterates.p, scenario, cfg)?
    };
    let report_aux = rate_report(&iterates.p, &alloc_aux, &aux_filters, scenario, cfg)?;

    let final_residual = iterates.residual_inf();
    Ok(Solution {
        precoder,
        aux_precoder: iterates.p.clone(),
        hybrid,
        alloc,
        filters,
        report,
        report_aux,
        diagnostics: Diagnostics {
            outer_iterations: outer_done,
            inner_iterations_total: trace.len(),
            final_residual_inf: final_residual,
            converged,
            rho_final: trace.last().map_or(opts.rho0, |r| r.rho),
            trace,
        },
    })
}
