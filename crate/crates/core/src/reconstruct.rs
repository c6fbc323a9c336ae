//! Covariance-form solution surgery: folding a dedicated sensing covariance
//! into the communication beams and reducing high-rank covariance blocks to
//! rank one while preserving a family of trace functionals.
//!
//! The covariance formulation replaces beam vectors `w_k` by PSD blocks
//! `W_k = w_k w_k^H` plus one sensing covariance `V`. Two facts make
//! dedicated sensing beams unnecessary:
//!
//! 1. **Merging** (`merge_sensing`): redistributing `V` onto the blocks,
//!    `W_k <- W_k + delta_k V` with `sum delta_k = 1`, keeps the transmit
//!    covariance (and therefore every sensing SINR) unchanged and can only
//!    raise each user's stream SINRs — the moved energy leaves the
//!    interference term and joins a signal term.
//! 2. **Rank reduction** (`rank_reduce`): a high-rank block can be driven
//!    down to rank one while exactly preserving every supplied quadratic
//!    functional `Tr(B_i W)`, by stepping along Hermitian null directions of
//!    the projected functional system.
//!
//! Stream SINRs here use the ideal-cancellation model (no residual
//! common-stream leakage): the merge inequality relies on the common stream
//! being fully removed before private decoding, so verification evaluates
//! both sides in that model regardless of the configured residual.
//!
//! All evaluation helpers are pure; nothing here mutates shared state.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::channel::Scenario;
use crate::config::SystemConfig;
use crate::linalg::{
    eigen_hermitian_desc, hermitian_part, inf_norm, null_space, orthogonal_complement_vector,
    rank_from_eigenvalues,
};
use crate::rates::{optimal_common_split, sensing_sinr_from_cov, ReceiveFilters};
use crate::{C64, CMat, CVec, Error, RMat, Result};

/// Eigenvalue threshold (relative to the largest) below which a direction
/// does not count toward a block's rank.
const RANK_REL_TOL: f64 = 1e-9;
/// Singular-value threshold for the homogeneous functional system.
const NULL_REL_TOL: f64 = 1e-10;

/// Covariance-form transmit design: one PSD block per stream, a sensing
/// covariance, the analog stage, and the radar receive filters that the
/// solution was designed against (the filters are part of the solution
/// tuple — the preserved sensing functionals are defined through them).
#[derive(Debug, Clone)]
pub struct CovarianceSolution {
    /// K+1 PSD blocks of size N_f x N_f; index 0 is the common stream.
    pub comm_covs: Vec<CMat>,
    /// Dedicated sensing covariance, N_f x N_f PSD.
    pub sense_cov: CMat,
    /// Analog stage F, N_t x N_f.
    pub analog: CMat,
    /// Frozen radar receive filters, one unit vector per target.
    pub filters: ReceiveFilters,
}

impl CovarianceSolution {
    /// Digital-side covariance total. The accumulation order (sensing
    /// covariance first, then blocks in index order) is part of the
    /// contract: it makes the merged total compare equal entry-for-entry.
    pub fn total_covariance(&self) -> CMat {
        let mut total = self.sense_cov.clone();
        for w in &self.comm_covs {
            total += w;
        }
        total
    }

    /// Transmit covariance `R = F (sum W_k + V) F^H`.
    pub fn transmit_covariance(&self) -> CMat {
        &self.analog * self.total_covariance() * self.analog.adjoint()
    }

    /// Radiated power `Re Tr(F^H F (sum W_k + V))` in milliwatts.
    pub fn transmit_power_mw(&self) -> f64 {
        let gram = self.analog.adjoint() * &self.analog;
        (gram * self.total_covariance()).trace().re
    }

    /// Checks dimensions, Hermitian-PSD structure (min eigenvalue >= -1e-9),
    /// unit filters, and the power budget.
    pub fn validate(&self, cfg: &SystemConfig) -> Result<()> {
        let n_f = cfg.n_rf;
        if self.comm_covs.len() != cfg.n_users + 1 {
            return Err(Error::Dimension(format!(
                "{} covariance blocks for {} streams",
                self.comm_covs.len(),
                cfg.n_users + 1
            )));
        }
        if self.analog.nrows() != cfg.n_tx || self.analog.ncols() != n_f {
            return Err(Error::Dimension(format!(
                "analog stage is {}x{}, expected {}x{}",
                self.analog.nrows(),
                self.analog.ncols(),
                cfg.n_tx,
                n_f
            )));
        }
        if self.filters.filters.len() != cfg.n_targets {
            return Err(Error::Dimension(format!(
                "{} receive filters for {} targets",
                self.filters.filters.len(),
                cfg.n_targets
            )));
        }
        self.filters.validate()?;
        for (label, m) in self
            .comm_covs
            .iter()
            .enumerate()
            .map(|(k, m)| (format!("block {k}"), m))
            .chain(std::iter::once(("sensing covariance".to_string(), &self.sense_cov)))
        {
            if m.nrows() != n_f || m.ncols() != n_f {
                return Err(Error::Dimension(format!(
                    "{label} is {}x{}, expected {n_f}x{n_f}",
                    m.nrows(),
                    m.ncols()
                )));
            }
            let skew = inf_norm(&(m - m.adjoint()));
            if skew > 1e-8 * (1.0 + inf_norm(m)) {
                return Err(Error::Precondition(format!("{label} is not Hermitian")));
            }
            let (eigs, _) = eigen_hermitian_desc(m);
            let min = eigs.iter().copied().fold(f64::INFINITY, f64::min);
            if min < -1e-9 {
                return Err(Error::Precondition(format!(
                    "{label} is not PSD: min eigenvalue {min}"
                )));
            }
        }
        let power = self.transmit_power_mw();
        if power > cfg.power_max_mw * (1.0 + 1e-9) {
            return Err(Error::Precondition(format!(
                "power {power} mW exceeds budget {} mW",
                cfg.power_max_mw
            )));
        }
        Ok(())
    }
}

/// Equal redistribution weights `1/n`.
pub fn uniform_weights(n: usize) -> Vec<f64> {
    vec![1.0 / n as f64; n]
}

/// All sensing energy onto the common stream: `(1, 0, ..., 0)`. These
/// weights are exactly representable, so the covariance total is preserved
/// bit-for-bit through the merge.
pub fn indicator_weights(n: usize) -> Vec<f64> {
    let mut w = vec![0.0; n];
    if n > 0 {
        w[0] = 1.0;
    }
    w
}

/// Folds the sensing covariance into the stream blocks:
/// `W_k <- W_k + delta_k V`, `V <- 0`.
///
/// Requires `delta_k >= 0` and `sum delta_k = 1` within 1e-12. The block sum
/// (hence transmit covariance, power, and every sensing SINR) is preserved,
/// and no stream SINR can decrease.
pub fn merge_sensing(sol: &CovarianceSolution, weights: &[f64]) -> Result<CovarianceSolution> {
    if weights.len() != sol.comm_covs.len() {
        return Err(Error::Dimension(format!(
            "{} weights for {} blocks",
            weights.len(),
            sol.comm_covs.len()
        )));
    }
    if let Some(&bad) = weights.iter().find(|&&d| !(d >= 0.0)) {
        return Err(Error::Argument(format!(
            "redistribution weights must be non-negative, got {bad}"
        )));
    }
    let sum: f64 = weights.iter().sum();
    if (sum - 1.0).abs() > 1e-12 {
        return Err(Error::Argument(format!(
            "redistribution weights must sum to 1, got {sum}"
        )));
    }
    let comm_covs = sol
        .comm_covs
        .iter()
        .zip(weights)
        .map(|(w, &d)| {
            if d == 0.0 {
                w.clone()
            } else {
                w + &sol.sense_cov * C64::new(d, 0.0)
            }
        })
        .collect();
    Ok(CovarianceSolution {
        comm_covs,
        sense_cov: CMat::zeros(sol.sense_cov.nrows(), sol.sense_cov.ncols()),
        analog: sol.analog.clone(),
        filters: sol.filters.clone(),
    })
}

/// The M^2 sensing quadratic-form functionals `(F^H G_a^H u_b)(...)^H`,
/// enumerated with `a` (target channel) outer and `b` (filter) inner.
pub fn sensing_quadratic_forms(
    analog: &CMat,
    filters: &ReceiveFilters,
    scenario: &Scenario,
) -> Vec<CMat> {
    let mut forms = Vec::new();
    for g in &scenario.sense_channels {
        for u in &filters.filters {
            let v: CVec = analog.adjoint() * (g.adjoint() * u);
            forms.push(&v * v.adjoint());
        }
    }
    forms
}

/// The K user-channel functionals `(F^H h_k)(F^H h_k)^H`.
pub fn user_channel_forms(analog: &CMat, scenario: &Scenario) -> Vec<CMat> {
    scenario
        .comm_channels
        .iter()
        .map(|h| {
            let ht: CVec = analog.adjoint() * h;
            &ht * ht.adjoint()
        })
        .collect()
}

/// The transmit-power functional `F^H F`: including it in the preserved
/// family makes rank reduction power-neutral by construction.
pub fn power_form(analog: &CMat) -> CMat {
    analog.adjoint() * analog
}

// Hermitian r x r matrices as real vectors of length r^2:
// [diagonal; then for each a < b: Re X_ab, Im X_ab].
fn functional_row(m: &CMat) -> Vec<f64> {
    let r = m.nrows();
    let mut row = Vec::with_capacity(r * r);
    for a in 0..r {
        row.push(m[(a, a)].re);
    }
    for a in 0..r {
        for b in a + 1..r {
            row.push(2.0 * m[(a, b)].re);
            row.push(2.0 * m[(a, b)].im);
        }
    }
    row
}

fn hermitian_from_vec(x: &[f64], r: usize) -> CMat {
    let mut m = CMat::zeros(r, r);
    for a in 0..r {
        m[(a, a)] = C64::new(x[a], 0.0);
    }
    let mut idx = r;
    for a in 0..r {
        for b in a + 1..r {
            let v = C64::new(x[idx], x[idx + 1]);
            m[(a, b)] = v;
            m[(b, a)] = v.conj();
            idx += 2;
        }
    }
    m
}

/// One rank-reduction step. Returns `Ok(None)` when the block already has
/// rank <= 1, the reduced block otherwise, or `Error::Irreducible` when the
/// projected functional system admits no Hermitian null direction.
///
/// Step: factor `W = P P^H` from the eigensystem, project the functionals to
/// `M_i = P^H B_i P`, solve `Tr(M_i X) = 0` over Hermitian `X` (a real
/// homogeneous system in r^2 unknowns), and damp along `X`:
/// `W <- P (I - X/delta) P^H` with `delta` the largest eigenvalue of `X`
/// (sign-flipped if needed). `I - X/delta` is PSD with a zero eigenvalue, so
/// the rank drops while every `Tr(B_i W)` stays fixed.
pub fn rank_reduce_step(w: &CMat, functionals: &[CMat]) -> Result<Option<CMat>> {
    let (eigs, vecs) = eigen_hermitian_desc(w);
    let rank = rank_from_eigenvalues(&eigs, RANK_REL_TOL);
    if rank <= 1 {
        return Ok(None);
    }
    let mut p = CMat::zeros(w.nrows(), rank);
    for j in 0..rank {
        p.set_column(j, &(vecs.column(j) * C64::new(eigs[j].max(0.0).sqrt(), 0.0)));
    }
    let mut rows = Vec::with_capacity(functionals.len());
    for b in functionals {
        let m = p.adjoint() * b * &p;
        rows.push(functional_row(&m));
    }
    let system = RMat::from_fn(rows.len(), rank * rank, |i, j| rows[i][j]);
    let basis = match null_space(&system, NULL_REL_TOL) {
        Some(b) => b,
        None => return Err(Error::Irreducible { rank }),
    };
    let xv = basis.column(basis.ncols() - 1).into_owned();
    let mut x = hermitian_from_vec(xv.as_slice(), rank);
    let (xe, _) = eigen_hermitian_desc(&x);
    let (lam_max, lam_min) = (xe[0], xe[rank - 1]);
    let delta = if -lam_min > lam_max {
        x = -x;
        -lam_min
    } else {
        lam_max
    };
    if delta <= 0.0 {
        return Err(Error::Irreducible { rank });
    }
    let shrink = CMat::identity(rank, rank) - x / C64::new(delta, 0.0);
    Ok(Some(hermitian_part(&(&p * shrink * p.adjoint()))))
}

/// Drives a PSD block to rank one, preserving `Tr(B_i W)` for every supplied
/// Hermitian functional. Errors with `Irreducible` (carrying the stuck rank)
/// when no null direction exists at some iterate.
pub fn rank_reduce(w: &CMat, functionals: &[CMat]) -> Result<CMat> {
    let mut current = w.clone();
    for _ in 0..w.nrows() + 1 {
        match rank_reduce_step(&current, functionals)? {
            Some(next) => current = next,
            None => return Ok(current),
        }
    }
    Err(Error::Solver("rank reduction did not terminate".into()))
}

/// Stream SINRs of a covariance-form design under ideal cancellation.
/// Returns `(common, private)`, one entry per user.
pub fn covariance_stream_sinrs(
    comm_covs: &[CMat],
    sense_cov: &CMat,
    analog: &CMat,
    scenario: &Scenario,
    cfg: &SystemConfig,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if comm_covs.len() != cfg.n_users + 1 {
        return Err(Error::Dimension(format!(
            "{} blocks for {} streams",
            comm_covs.len(),
            cfg.n_users + 1
        )));
    }
    let mut common = Vec::with_capacity(cfg.n_users);
    let mut private = Vec::with_capacity(cfg.n_users);
    for (k, h) in scenario.comm_channels.iter().enumerate() {
        let ht: CVec = analog.adjoint() * h;
        let q = |m: &CMat| -> f64 { (ht.adjoint() * m * &ht)[(0, 0)].re.max(0.0) };
        let sig: Vec<f64> = comm_covs.iter().map(&q).collect();
        let v_leak = q(sense_cov);
        let private_sum: f64 = sig[1..].iter().sum();
        let cross: f64 = sig[1..]
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != k)
            .map(|(_, s)| s)
            .sum();
        common.push(sig[0] / (private_sum + v_leak + cfg.noise_comm_mw));
        private.push(sig[k + 1] / (cross + v_leak + cfg.noise_comm_mw));
    }
    Ok((common, private))
}

fn maxmin_objective(common_sinrs: &[f64], private_sinrs: &[f64]) -> f64 {
    let capacity = common_sinrs
        .iter()
        .map(|g| (1.0 + g).log2())
        .fold(f64::INFINITY, f64::min);
    let private_rates: Vec<f64> = private_sinrs.iter().map(|g| (1.0 + g).log2()).collect();
    optimal_common_split(capacity, &private_rates).1
}

/// Outcome of the no-dedicated-sensing-beams verification pipeline.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VerificationReport {
    /// True when the sensing covariance was zero — nothing to merge.
    pub identical: bool,
    /// Transmit covariance after the merge compares equal entry-for-entry.
    pub covariance_preserved_exactly: bool,
    /// Largest entry deviation of the merged transmit covariance.
    pub merge_covariance_drift: f64,
    /// Sensing SINRs after the merge compare equal value-for-value.
    pub sensing_sinrs_preserved_exactly: bool,
    pub power_before_mw: f64,
    pub power_after_mw: f64,
    pub objective_before: f64,
    pub objective_after: f64,
    pub common_sinrs_before: Vec<f64>,
    pub common_sinrs_after: Vec<f64>,
    pub private_sinrs_before: Vec<f64>,
    pub private_sinrs_after: Vec<f64>,
    pub sensing_rates_before: Vec<f64>,
    pub sensing_rates_after: Vec<f64>,
    /// Rank of each stream block after reduction (expected all 1).
    pub reduced_ranks: Vec<usize>,
    /// Largest absolute / relative drift over all preserved functionals.
    pub max_functional_drift_abs: f64,
    pub max_functional_drift_rel: f64,
    pub objective_non_decreased: bool,
    pub stream_sinrs_non_decreased: bool,
    /// All post-reduction sensing rates meet the configured floor.
    pub sensing_constraints_hold: bool,
}

/// Runs merge (indicator weights — exactly covariance-preserving) followed by
/// per-block rank reduction, and re-evaluates everything.
///
/// The preserved functional family is: M^2 sensing quadratic forms through
/// the solution's own filters, K user-channel forms, and the transmit-power
/// form. Rank-reduction errors propagate; an over-budget or non-PSD input is
/// a precondition error.
pub fn verify_no_sensing_beams(
    sol: &CovarianceSolution,
    scenario: &Scenario,
    cfg: &SystemConfig,
) -> Result<VerificationReport> {
    sol.validate(cfg)?;
    let identical = sol.sense_cov.iter().all(|c| c.re == 0.0 && c.im == 0.0);

    let r_before = sol.transmit_covariance();
    let (common_before, private_before) =
        covariance_stream_sinrs(&sol.comm_covs, &sol.sense_cov, &sol.analog, scenario, cfg)?;
    let sens_before = sensing_sinr_from_cov(&r_before, &sol.filters, scenario, cfg)?;
    let objective_before = maxmin_objective(&common_before, &private_before);
    let power_before = sol.transmit_power_mw();

    let merged = merge_sensing(sol, &indicator_weights(sol.comm_covs.len()))?;
    let r_merged = merged.transmit_covariance();
    let covariance_preserved_exactly = r_merged == r_before;
    let merge_covariance_drift = inf_norm(&(&r_merged - &r_before));
    let sens_merged = sensing_sinr_from_cov(&r_merged, &merged.filters, scenario, cfg)?;
    let sensing_sinrs_preserved_exactly = sens_merged == sens_before;

    let mut functionals = sensing_quadratic_forms(&sol.analog, &sol.filters, scenario);
    functionals.extend(user_channel_forms(&sol.analog, scenario));
    functionals.push(power_form(&sol.analog));

    let mut reduced = Vec::with_capacity(merged.comm_covs.len());
    let mut drift_abs = 0.0_f64;
    let mut drift_rel = 0.0_f64;
    let mut reduced_ranks = Vec::with_capacity(merged.comm_covs.len());
    for block in &merged.comm_covs {
        let low = rank_reduce(block, &functionals)?;
        for b in &functionals {
            let before = (b * block).trace().re;
            let after = (b * &low).trace().re;
            let d = (after - before).abs();
            drift_abs = drift_abs.max(d);
            drift_rel = drift_rel.max(d / before.abs().max(f64::MIN_POSITIVE));
        }
        let (eigs, _) = eigen_hermitian_desc(&low);
        reduced_ranks.push(rank_from_eigenvalues(&eigs, RANK_REL_TOL));
        reduced.push(low);
    }

    let after_sol = CovarianceSolution {
        comm_covs: reduced,
        sense_cov: CMat::zeros(cfg.n_rf, cfg.n_rf),
        analog: sol.analog.clone(),
        filters: sol.filters.clone(),
    };
    let (common_after, private_after) = covariance_stream_sinrs(
        &after_sol.comm_covs,
        &after_sol.sense_cov,
        &after_sol.analog,
        scenario,
        cfg,
    )?;
    let sens_after =
        sensing_sinr_from_cov(&after_sol.transmit_covariance(), &after_sol.filters, scenario, cfg)?;
    let objective_after = maxmin_objective(&common_after, &private_after);
    let power_after = after_sol.transmit_power_mw();

    let non_dec = |before: &[f64], after: &[f64]| {
        before
            .iter()
            .zip(after)
            .all(|(b, a)| *a >= *b - 1e-9 * (1.0 + b.abs()))
    };
    let sensing_rates_before: Vec<f64> = sens_before.iter().map(|g| (1.0 + g).log2()).collect();
    let sensing_rates_after: Vec<f64> = sens_after.iter().map(|g| (1.0 + g).log2()).collect();
    let sensing_constraints_hold = sensing_rates_after
        .iter()
        .all(|r| *r >= cfg.sense_rate_min_bps - 1e-6);

    Ok(VerificationReport {
        identical,
        covariance_preserved_exactly,
        merge_covariance_drift,
        sensing_sinrs_preserved_exactly,
        power_before_mw: power_before,
        power_after_mw: power_after,
        objective_before,
        objective_after,
        objective_non_decreased: objective_after >= objective_before - 1e-8,
        stream_sinrs_non_decreased: non_dec(&common_before, &common_after)
            && non_dec(&private_before, &private_after),
        common_sinrs_before: common_before,
        common_sinrs_after: common_after,
        private_sinrs_before: private_before,
        private_sinrs_after: private_after,
        sensing_rates_before,
        sensing_rates_after,
        reduced_ranks,
        max_functional_drift_abs: drift_abs,
        max_functional_drift_rel: drift_rel,
        sensing_constraints_hold,
    })
}

/// Builds a feasible covariance solution whose blocks provably reduce to
/// rank one: each block is (own visible beam) + (energy along a direction
/// orthogonal to every preserved functional vector), and the sensing
/// covariance lives entirely along that invisible direction.
///
/// Generic high-rank blocks get stuck at rank 2 — the projected functional
/// system becomes square — so full reduction demands instances whose excess
/// rank is invisible to the functional family. Requires M^2 + K < N_f.
pub fn synthesize_reducible_solution(
    scenario: &Scenario,
    cfg: &SystemConfig,
    seed: u64,
) -> Result<CovarianceSolution> {
    let n_f = cfg.n_rf;
    let j1 = cfg.n_targets * cfg.n_targets + cfg.n_users;
    if j1 >= n_f {
        return Err(Error::Argument(format!(
            "functional family size {j1} leaves no invisible direction in {n_f} dimensions"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let analog = CMat::from_fn(cfg.n_tx, n_f, |_, _| {
        C64::from_polar(1.0, rng.random_range(-std::f64::consts::PI..std::f64::consts::PI))
    });
    // Matched receive filters: each sensing channel is rank one, so its
    // normalized first column is the echo's receive direction.
    let filters = ReceiveFilters {
        filters: scenario
            .sense_channels
            .iter()
            .map(|g| {
                let c = g.column(0).into_owned();
                let n = c.norm();
                c / C64::new(n, 0.0)
            })
            .collect(),
    };
    let mut span = Vec::new();
    for g in &scenario.sense_channels {
        for u in &filters.filters {
            span.push(analog.adjoint() * (g.adjoint() * u));
        }
    }
    let digital_channels: Vec<CVec> =
        scenario.comm_channels.iter().map(|h| analog.adjoint() * h).collect();
    span.extend(digital_channels.iter().cloned());
    let invisible = orthogonal_complement_vector(&span).ok_or_else(|| {
        Error::Argument("functional vectors span the whole digital space".into())
    })?;

    let unit = |v: &CVec| -> CVec {
        let n = v.norm();
        v / C64::new(n, 0.0)
    };
    let mut beams: Vec<CVec> = Vec::with_capacity(cfg.n_users + 1);
    let mut sum = CVec::zeros(n_f);
    for h in &digital_channels {
        sum += unit(h);
    }
    beams.push(unit(&sum));
    for h in &digital_channels {
        beams.push(unit(h));
    }

    let inv_block = &invisible * invisible.adjoint();
    let comm_covs: Vec<CMat> = beams
        .iter()
        .map(|w| {
            let visible = rng.random_range(0.5..1.5);
            let hidden = rng.random_range(0.2..0.8);
            (w * w.adjoint()) * C64::new(visible, 0.0) + &inv_block * C64::new(hidden, 0.0)
        })
        .collect();
    let sense_cov = &inv_block * C64::new(rng.random_range(0.3..1.0), 0.0);

    let mut sol = CovarianceSolution { comm_covs, sense_cov, analog, filters };
    let scale = 0.9 * cfg.power_max_mw / sol.transmit_power_mw();
    for w in &mut sol.comm_covs {
        *w *= C64::new(scale, 0.0);
    }
    sol.sense_cov *= C64::new(scale, 0.0);
    Ok(sol)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{PolarCoord, ScatterPath};
    use approx::assert_relative_eq;

    fn small_cfg() -> SystemConfig {
        let mut cfg = SystemConfig::desk();
        cfg.n_users = 3;
        cfg.n_targets = 2;
        cfg.reflect_coeffs = vec![1.0, 1.0];
        // Room for an invisible direction: M^2 + K = 7 < n_rf.
        cfg.n_rf = 8;
        cfg
    }

    fn scenario_for(cfg: &SystemConfig, seed: u64) -> Scenario {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut coord = |lo: f64, hi: f64| {
            PolarCoord::new(rng.random_range(lo..hi), rng.random_range(-1.0..1.0)).unwrap()
        };
        let users: Vec<_> = (0..cfg.n_users).map(|_| coord(5.0, 45.0)).collect();
        let scat: Vec<Vec<_>> = (0..cfg.n_users)
            .map(|_| {
                (0..cfg.n_scatterers)
                    .map(|_| ScatterPath { coord: coord(20.0, 30.0), link_range_m: 9.0 })
                    .collect()
            })
            .collect();
        let targets: Vec<_> = (0..cfg.n_targets).map(|_| coord(5.0, 45.0)).collect();
        Scenario::synthesize(cfg, users, scat, targets).unwrap()
    }

    fn random_psd(rng: &mut ChaCha8Rng, n: usize, rank: usize) -> CMat {
        let g = CMat::from_fn(n, rank, |_, _| {
            C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
        });
        hermitian_part(&(&g * g.adjoint()))
    }

    fn random_solution(cfg: &SystemConfig, scenario: &Scenario, seed: u64) -> CovarianceSolution {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let analog = CMat::from_fn(cfg.n_tx, cfg.n_rf, |_, _| {
            C64::from_polar(1.0, rng.random_range(-3.0..3.0))
        });
        let comm_covs = (0..=cfg.n_users).map(|_| random_psd(&mut rng, cfg.n_rf, 2)).collect();
        let sense_cov = random_psd(&mut rng, cfg.n_rf, 3);
        let filters = ReceiveFilters {
            filters: scenario
                .sense_channels
                .iter()
                .map(|g| {
                    let c = g.column(0).into_owned();
                    let n = c.norm();
                    c / C64::new(n, 0.0)
                })
                .collect(),
        };
        let mut sol = CovarianceSolution { comm_covs, sense_cov, analog, filters };
        let scale = 0.5 * cfg.power_max_mw / sol.transmit_power_mw();
        for w in &mut sol.comm_covs {
            *w *= C64::new(scale, 0.0);
        }
        sol.sense_cov *= C64::new(scale, 0.0);
        sol
    }

    #[test]
    fn merge_with_zero_sensing_cov_is_identity() {
        let cfg = small_cfg();
        let sc = scenario_for(&cfg, 1);
        let mut sol = random_solution(&cfg, &sc, 2);
        sol.sense_cov = CMat::zeros(cfg.n_rf, cfg.n_rf);
        let merged = merge_sensing(&sol, &uniform_weights(cfg.n_users + 1)).unwrap();
        for (a, b) in sol.comm_covs.iter().zip(&merged.comm_covs) {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn merge_uniform_preserves_total_and_power() {
        let cfg = small_cfg();
        let sc = scenario_for(&cfg, 3);
        let sol = random_solution(&cfg, &sc, 4);
        let merged = merge_sensing(&sol, &uniform_weights(cfg.n_users + 1)).unwrap();
        let drift = inf_norm(&(sol.total_covariance() - merged.total_covariance()));
        assert!(drift < 1e-10, "total covariance drift {drift}");
        assert_relative_eq!(
            sol.transmit_power_mw(),
            merged.transmit_power_mw(),
            max_relative = 1e-12
        );
        assert!(merged.sense_cov.iter().all(|c| c.re == 0.0 && c.im == 0.0));
    }

    #[test]
    fn merge_indicator_preserves_total_exactly() {
        let cfg = small_cfg();
        let sc = scenario_for(&cfg, 5);
        let sol = random_solution(&cfg, &sc, 6);
        let merged = merge_sensing(&sol, &indicator_weights(cfg.n_users + 1)).unwrap();
        assert_eq!(sol.total_covariance(), merged.total_covariance());
        assert_eq!(sol.transmit_covariance(), merged.transmit_covariance());
    }

    #[test]
    fn merge_never_decreases_stream_sinrs() {
        let cfg = small_cfg();
        for seed in 0..10 {
            let sc = scenario_for(&cfg, 100 + seed);
            let sol = random_solution(&cfg, &sc, 200 + seed);
            let (c0, p0) =
                covariance_stream_sinrs(&sol.comm_covs, &sol.sense_cov, &sol.analog, &sc, &cfg)
                    .unwrap();
            for weights in [
                uniform_weights(cfg.n_users + 1),
                indicator_weights(cfg.n_users + 1),
                vec![0.1, 0.2, 0.3, 0.4],
            ] {
                let merged = merge_sensing(&sol, &weights).unwrap();
                let (c1, p1) = covariance_stream_sinrs(
                    &merged.comm_covs,
                    &merged.sense_cov,
                    &merged.analog,
                    &sc,
                    &cfg,
                )
                .unwrap();
                for k in 0..cfg.n_users {
                    assert!(c1[k] >= c0[k] * (1.0 - 1e-12), "common {k}: {} < {}", c1[k], c0[k]);
                    assert!(p1[k] >= p0[k] * (1.0 - 1e-12), "private {k}: {} < {}", p1[k], p0[k]);
                }
            }
        }
    }

    #[test]
    fn merge_rejects_bad_weights() {
        let cfg = small_cfg();
        let sc = scenario_for(&cfg, 7);
        let sol = random_solution(&cfg, &sc, 8);
        assert!(matches!(
            merge_sensing(&sol, &[0.5, 0.5, 0.5, 0.5]),
            Err(Error::Argument(_))
        ));
        assert!(matches!(
            merge_sensing(&sol, &[1.5, -0.5, 0.0, 0.0]),
            Err(Error::Argument(_))
        ));
        assert!(matches!(merge_sensing(&sol, &[1.0]), Err(Error::Dimension(_))));
    }

    #[test]
    fn rank_one_input_returned_unchanged() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let w = random_psd(&mut rng, 5, 1);
        let b = random_psd(&mut rng, 5, 1);
        let out = rank_reduce(&w, &[b]).unwrap();
        assert_eq!(out, w);
    }

    #[test]
    fn rank_two_single_functional_reduces_to_rank_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for _ in 0..10 {
            let w = random_psd(&mut rng, 4, 2);
            let bvec = CVec::from_fn(4, |_, _| {
                C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
            });
            let b = &bvec * bvec.adjoint();
            let out = rank_reduce(&w, &[b.clone()]).unwrap();
            let (eigs, _) = eigen_hermitian_desc(&out);
            assert_eq!(rank_from_eigenvalues(&eigs, RANK_REL_TOL), 1);
            assert!(eigs[eigs.len() - 1] >= -1e-9);
            // Scalar oracle for the preserved trace: b^H W b.
            let before = (bvec.adjoint() * &w * &bvec)[(0, 0)].re;
            let after = (bvec.adjoint() * &out * &bvec)[(0, 0)].re;
            assert!((before - after).abs() <= 1e-10 * before.abs().max(1.0));
        }
    }

    #[test]
    fn rank_reduce_steps_decrease_rank_and_stay_psd() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let w = random_psd(&mut rng, 6, 3);
        let functionals: Vec<CMat> = (0..4)
            .map(|_| {
                let v = CVec::from_fn(6, |_, _| {
                    C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
                });
                &v * v.adjoint()
            })
            .collect();
        let traces: Vec<f64> = functionals.iter().map(|b| (b * &w).trace().re).collect();
        let mut current = w.clone();
        let mut prev_rank = 3;
        loop {
            match rank_reduce_step(&current, &functionals) {
                Ok(Some(next)) => {
                    let (eigs, _) = eigen_hermitian_desc(&next);
                    let rank = rank_from_eigenvalues(&eigs, RANK_REL_TOL);
                    assert!(rank < prev_rank, "rank did not decrease: {rank} vs {prev_rank}");
                    assert!(eigs[eigs.len() - 1] >= -1e-9, "lost positive semidefiniteness");
                    for (b, t) in functionals.iter().zip(&traces) {
                        let now = (b * &next).trace().re;
                        assert!((now - t).abs() <= 1e-9 * t.abs().max(1.0));
                    }
                    prev_rank = rank;
                    current = next;
                }
                Ok(None) => {
                    assert_eq!(prev_rank, 1);
                    break;
                }
                Err(Error::Irreducible { rank }) => {
                    // Generic functionals may pin the block at rank 2: the
                    // projected system becomes square and full rank.
                    assert!(rank > 1);
                    break;
                }
                Err(e) => panic!("unexpected error: {e}"),
            }
        }
    }

    #[test]
    fn irreducible_reports_stuck_rank() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let w = random_psd(&mut rng, 4, 2);
        // Five generic rank-one functionals over-determine the 2x2 Hermitian
        // space (4 real dimensions), so no null direction survives.
        let functionals: Vec<CMat> = (0..5)
            .map(|_| {
                let v = CVec::from_fn(4, |_, _| {
                    C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
                });
                &v * v.adjoint()
            })
            .collect();
        match rank_reduce(&w, &functionals) {
            Err(Error::Irreducible { rank }) => assert_eq!(rank, 2),
            other => panic!("expected irreducible, got {other:?}"),
        }
    }

    #[test]
    fn structured_solution_verifies_end_to_end() {
        let cfg = small_cfg();
        for seed in 0..5 {
            let sc = scenario_for(&cfg, 300 + seed);
            let sol = synthesize_reducible_solution(&sc, &cfg, 400 + seed).unwrap();
            sol.validate(&cfg).unwrap();
            let report = verify_no_sensing_beams(&sol, &sc, &cfg).unwrap();
            assert!(!report.identical);
            assert!(report.covariance_preserved_exactly);
            assert!(report.sensing_sinrs_preserved_exactly);
            assert!(report.reduced_ranks.iter().all(|&r| r == 1), "{:?}", report.reduced_ranks);
            assert!(
                (report.power_after_mw - report.power_before_mw).abs() < 1e-10,
                "power drift {}",
                report.power_after_mw - report.power_before_mw
            );
            assert!(report.stream_sinrs_non_decreased);
            assert!(report.objective_non_decreased);
            assert!(report.max_functional_drift_rel < 1e-8, "{}", report.max_functional_drift_rel);
            for (b, a) in report.sensing_rates_before.iter().zip(&report.sensing_rates_after) {
                assert_relative_eq!(b, a, max_relative = 1e-8);
            }
        }
    }

    #[test]
    fn verify_flags_zero_sensing_cov_as_identical() {
        let cfg = small_cfg();
        let sc = scenario_for(&cfg, 13);
        let mut sol = synthesize_reducible_solution(&sc, &cfg, 14).unwrap();
        sol.sense_cov = CMat::zeros(cfg.n_rf, cfg.n_rf);
        let report = verify_no_sensing_beams(&sol, &sc, &cfg).unwrap();
        assert!(report.identical);
        assert!(report.covariance_preserved_exactly);
    }

    #[test]
    fn verify_rejects_power_violation() {
        let cfg = small_cfg();
        let sc = scenario_for(&cfg, 15);
        let mut sol = synthesize_reducible_solution(&sc, &cfg, 16).unwrap();
        let blow_up = 10.0 * cfg.power_max_mw / sol.transmit_power_mw();
        for w in &mut sol.comm_covs {
            *w *= C64::new(blow_up, 0.0);
        }
        assert!(matches!(
            verify_no_sensing_beams(&sol, &sc, &cfg),
            Err(Error::Precondition(_))
        ));
    }

    #[test]
    fn weight_helpers() {
        assert_eq!(uniform_weights(4), vec![0.25; 4]);
        assert_eq!(indicator_weights(3), vec![1.0, 0.0, 0.0]);
    }
}
