//! Convex inner step: precoder, share split, and rate floor in one
//! second-order cone program.
//!
//! With equalizers, weights, and transform points held fixed, every
//! surrogate rate is a concave quadratic in the precoder `P`, so the
//! max-min step becomes
//!
//! ```text
//! max  R_s - ||P - (FW - rho D)||^2 / (2 rho)
//! s.t. sum_j c_j   <= common surrogate rate of every user,
//!      c_k + private surrogate rate of user k >= R_s,
//!      sensing surrogate of every target >= Gamma,
//!      ||P||_F^2 <= P_th,    c_k >= 0,
//! ```
//!
//! each clause one second-order cone. The quadratic penalty enters through
//! an epigraph variable `t >= ||P - target||^2` costed at `1/(2 rho)`;
//! fully digital steps drop it. Disabling the common stream pins the shared
//! beam and the shares to zero and removes the common-rate cones.

use crate::channel::Scenario;
use crate::config::SystemConfig;
use crate::rates::{CommonRateAlloc, ReceiveFilters};
use crate::socp::{ConicProblem, ConicSolver, LinExpr, SolveStatus};
use crate::{C64, CMat, CVec, Error, Result};

use super::{filter_channels, wmmse_rate_offset, AuxVars};

/// Quadratic coupling term `||P - target||^2 / (2 rho)` with
/// `target = F W - rho D`.
#[derive(Debug, Clone)]
pub struct PenaltyTerm {
    pub target: CMat,
    pub rho: f64,
}

/// Result of one convex step.
#[derive(Debug, Clone)]
pub struct ConvexStep {
    /// Precoder iterate (before any power-ball projection by the caller).
    pub p: CMat,
    /// Common-rate shares granted by the step.
    pub alloc: CommonRateAlloc,
    /// Certified surrogate max-min rate R_s.
    pub rate_floor: f64,
}

/// Decision-vector layout: interleaved real/imaginary precoder coordinates
/// in column-major stream order, then shares, the rate floor, and the
/// optional penalty epigraph.
struct Layout {
    n_tx: usize,
    shares: usize,
    rate_floor: usize,
    epigraph: Option<usize>,
    n_vars: usize,
}

impl Layout {
    fn new(n_tx: usize, n_users: usize, with_epigraph: bool) -> Self {
        let streams = n_users + 1;
        let shares = 2 * n_tx * streams;
        let rate_floor = shares + n_users;
        let epigraph = with_epigraph.then_some(rate_floor + 1);
        let n_vars = rate_floor + 1 + usize::from(with_epigraph);
        Layout { n_tx, shares, rate_floor, epigraph, n_vars }
    }

    fn p_re(&self, i: usize, s: usize) -> usize {
        2 * (s * self.n_tx + i)
    }

    fn p_im(&self, i: usize, s: usize) -> usize {
        2 * (s * self.n_tx + i) + 1
    }

    fn share(&self, k: usize) -> usize {
        self.shares + k
    }

    /// `scale * Re(v^H p_s)` as an affine expression.
    fn re_inner(&self, v: &CVec, s: usize, scale: f64) -> LinExpr {
        let mut e = LinExpr::zero();
        for (i, vi) in v.iter().enumerate() {
            e.add_term(self.p_re(i, s), scale * vi.re);
            e.add_term(self.p_im(i, s), scale * vi.im);
        }
        e
    }

    /// `scale * Im(v^H p_s)` as an affine expression.
    fn im_inner(&self, v: &CVec, s: usize, scale: f64) -> LinExpr {
        let mut e = LinExpr::zero();
        for (i, vi) in v.iter().enumerate() {
            e.add_term(self.p_im(i, s), scale * vi.re);
            e.add_term(self.p_re(i, s), -scale * vi.im);
        }
        e
    }
}

fn merge(dst: &mut LinExpr, src: LinExpr) {
    dst.constant += src.constant;
    dst.terms.extend(src.terms);
}

/// Solves the inner convex step. `penalty = None` means a fully digital
/// step; sensing cones are added exactly when `aux.qt_vectors` is non-empty
/// (which requires matching receive filters). Returns
/// [`Error::Infeasible`] when the sensing floors cannot be met.
#[allow(clippy::too_many_arguments)]
pub fn solve_inner_convex(
    aux: &AuxVars,
    penalty: Option<PenaltyTerm>,
    filters: Option<&ReceiveFilters>,
    scenario: &Scenario,
    cfg: &SystemConfig,
    common_stream: bool,
    solver: &dyn ConicSolver,
) -> Result<ConvexStep> {
    let n_users = scenario.comm_channels.len();
    let n_tx = cfg.n_tx;
    let streams = n_users + 1;
    if aux.eq_common.len() != n_users
        || aux.eq_private.len() != n_users
        || aux.wt_common.len() != n_users
        || aux.wt_private.len() != n_users
    {
        return Err(Error::Dimension(format!(
            "auxiliaries sized for {} users, scenario has {n_users}",
            aux.eq_common.len()
        )));
    }
    if !aux.qt_vectors.is_empty() {
        if aux.qt_vectors.len() != scenario.sense_channels.len() {
            return Err(Error::Dimension(format!(
                "{} transform vectors for {} targets",
                aux.qt_vectors.len(),
                scenario.sense_channels.len()
            )));
        }
        for x in &aux.qt_vectors {
            if x.len() != streams {
                return Err(Error::Dimension(format!(
                    "transform vector has {} entries for {streams} streams",
                    x.len()
                )));
            }
        }
        if filters.is_none() {
            return Err(Error::Argument(
                "sensing constraints need the receive filters that produced the transform points"
                    .into(),
            ));
        }
    }
    if let Some(pt) = &penalty {
        if pt.target.nrows() != n_tx || pt.target.ncols() != streams {
            return Err(Error::Dimension(format!(
                "penalty target is {}x{}, expected {n_tx}x{streams}",
                pt.target.nrows(),
                pt.target.ncols()
            )));
        }
        if !(pt.rho > 0.0) {
            return Err(Error::Argument(format!(
                "penalty weight must be strictly positive, got {}",
                pt.rho
            )));
        }
    }

    let layout = Layout::new(n_tx, n_users, penalty.is_some());
    let tau = wmmse_rate_offset();
    let sigma2 = cfg.noise_comm_mw;
    let mut prob = ConicProblem::new(layout.n_vars);

    // Objective: maximize the rate floor, pay for the coupling gap. The
    // 1/(2 rho) weight is folded into the epigraph cone below so the cost
    // vector stays near unit scale as rho shrinks.
    prob.add_cost(layout.rate_floor, -1.0);
    if let (Some(t), Some(_)) = (layout.epigraph, &penalty) {
        prob.add_cost(t, 1.0);
    }

    // Shares: pinned to zero together with the shared beam when the common
    // stream is disabled, otherwise just non-negative.
    if common_stream {
        for k in 0..n_users {
            prob.push_nonneg(LinExpr::var(layout.share(k), 1.0));
        }
    } else {
        for i in 0..n_tx {
            prob.push_eq_zero(LinExpr::var(layout.p_re(i, 0), 1.0));
            prob.push_eq_zero(LinExpr::var(layout.p_im(i, 0), 1.0));
        }
        for k in 0..n_users {
            prob.push_eq_zero(LinExpr::var(layout.share(k), 1.0));
        }
    }

    // Coupling epigraph with the weight absorbed into the cone:
    // t >= ||(P - target) / sqrt(2 rho)||^2 = ||P - target||^2 / (2 rho).
    if let (Some(t), Some(pt)) = (layout.epigraph, &penalty) {
        let scale = 1.0 / (2.0 * pt.rho).sqrt();
        let mut w = Vec::with_capacity(2 * n_tx * streams);
        for s in 0..streams {
            for i in 0..n_tx {
                let tgt = pt.target[(i, s)];
                let mut re = LinExpr::constant(-tgt.re * scale);
                re.add_term(layout.p_re(i, s), scale);
                w.push(re);
                let mut im = LinExpr::constant(-tgt.im * scale);
                im.add_term(layout.p_im(i, s), scale);
                w.push(im);
            }
        }
        prob.push_norm_sq_le(w, &LinExpr::var(t, 1.0));
    }

    // Common-stream rate of every user covers the granted shares:
    // eta |omega|^2 sum_j |h^H p_j|^2
    //   <= tau + log2(eta) - eta (1 + sigma^2 |omega|^2)
    //      + 2 eta Re(omega h^H p_0) - sum_j c_j.
    if common_stream {
        for (k, h) in scenario.comm_channels.iter().enumerate() {
            let eta = aux.wt_common[k];
            let om = aux.eq_common[k];
            let amp = eta.sqrt() * om.norm();
            let mut w = Vec::with_capacity(2 * streams);
            for s in 0..streams {
                w.push(layout.re_inner(h, s, amp));
                w.push(layout.im_inner(h, s, amp));
            }
            let mut rhs =
                LinExpr::constant(tau + eta.log2() - eta * (1.0 + sigma2 * om.norm_sqr()));
            merge(&mut rhs, layout.re_inner(h, 0, 2.0 * eta * om.re));
            merge(&mut rhs, layout.im_inner(h, 0, -2.0 * eta * om.im));
            for j in 0..n_users {
                rhs.add_term(layout.share(j), -1.0);
            }
            prob.push_norm_sq_le(w, &rhs);
        }
    }

    // Private rate plus share covers the floor:
    // eta |omega|^2 (sum_{j>=1} |h^H p_j|^2 + sic |h^H p_0|^2)
    //   <= c_k - R_s + tau + log2(eta) - eta (1 + sigma^2 |omega|^2)
    //      + 2 eta Re(omega h^H p_k).
    for (k, h) in scenario.comm_channels.iter().enumerate() {
        let eta = aux.wt_private[k];
        let om = aux.eq_private[k];
        let amp = eta.sqrt() * om.norm();
        let mut w = Vec::with_capacity(2 * streams);
        for s in 1..streams {
            w.push(layout.re_inner(h, s, amp));
            w.push(layout.im_inner(h, s, amp));
        }
        if cfg.sic_residual > 0.0 {
            let leak = (cfg.sic_residual * eta).sqrt() * om.norm();
            w.push(layout.re_inner(h, 0, leak));
            w.push(layout.im_inner(h, 0, leak));
        }
        let mut rhs = LinExpr::constant(tau + eta.log2() - eta * (1.0 + sigma2 * om.norm_sqr()));
        if common_stream {
            rhs.add_term(layout.share(k), 1.0);
        }
        rhs.add_term(layout.rate_floor, -1.0);
        merge(&mut rhs, layout.re_inner(h, k + 1, 2.0 * eta * om.re));
        merge(&mut rhs, layout.im_inner(h, k + 1, -2.0 * eta * om.im));
        prob.push_norm_sq_le(w, &rhs);
    }

    // Sensing surrogate of every target clears the SINR floor:
    // ||x_m||^2 sum_{j != m} alpha_j sum_s |g_{m,j}^H p_s|^2
    //   <= 2 sqrt(alpha_m) sum_s Re(x_{m,s} g_{m,m}^H p_s)
    //      - Gamma - sigma_0^2 ||x_m||^2.
    if !aux.qt_vectors.is_empty() {
        let gamma = cfg.sense_sinr_min();
        let chans = filter_channels(filters.unwrap(), scenario);
        let m_targets = scenario.sense_channels.len();
        for m in 0..m_targets {
            let x = &aux.qt_vectors[m];
            let xn = x.norm();
            let mut w = Vec::new();
            for j in 0..m_targets {
                if j == m {
                    continue;
                }
                let scale = xn * cfg.reflect_coeffs[j].sqrt();
                for s in 0..streams {
                    w.push(layout.re_inner(&chans[m][j], s, scale));
                    w.push(layout.im_inner(&chans[m][j], s, scale));
                }
            }
            let mut rhs =
                LinExpr::constant(-gamma - cfg.noise_sense_mw * x.norm_squared());
            let boost = 2.0 * cfg.reflect_coeffs[m].sqrt();
            for s in 0..streams {
                merge(&mut rhs, layout.re_inner(&chans[m][m], s, boost * x[s].re));
                merge(&mut rhs, layout.im_inner(&chans[m][m], s, -boost * x[s].im));
            }
            prob.push_norm_sq_le(w, &rhs);
        }
    }

    // Transmit power budget.
    let coords: Vec<LinExpr> =
        (0..2 * n_tx * streams).map(|idx| LinExpr::var(idx, 1.0)).collect();
    prob.push_soc(LinExpr::constant(cfg.power_max_mw.sqrt()), coords);

    let sol = solver.solve(&prob)?;
    match sol.status {
        SolveStatus::Optimal | SolveStatus::Inaccurate => {}
        SolveStatus::Infeasible => return Err(Error::Infeasible),
    }

    let p = CMat::from_fn(n_tx, streams, |i, s| {
        C64::new(sol.x[layout.p_re(i, s)], sol.x[layout.p_im(i, s)])
    });
    let shares: Vec<f64> = (0..n_users).map(|k| sol.x[layout.share(k)].max(0.0)).collect();
    Ok(ConvexStep {
        p,
        alloc: CommonRateAlloc { shares },
        rate_floor: sol.x[layout.rate_floor],
    })
}

/// One max-min step of the sensing-feasibility ascent: maximizes the worst
/// per-target surrogate SINR over the digital stage `W` (analog stage
/// fixed) subject to `||F W||_F^2 <= budget_mw`, with the shared column
/// pinned to zero when the common stream is disabled. Returns the new
/// digital stage and the certified level — a lower bound on the worst true
/// sensing SINR of `F W` because the surrogate minorizes the SINR.
pub(crate) fn sensing_ascent_step(
    analog: &CMat,
    qt: &[CVec],
    filters: &ReceiveFilters,
    scenario: &Scenario,
    cfg: &SystemConfig,
    budget_mw: f64,
    common_stream: bool,
    solver: &dyn ConicSolver,
) -> Result<(CMat, f64)> {
    let n_cols = analog.ncols();
    let streams = cfg.n_users + 1;
    let m_targets = scenario.sense_channels.len();
    if qt.len() != m_targets {
        return Err(Error::Argument(format!(
            "{} transform vectors for {m_targets} targets",
            qt.len()
        )));
    }
    // The digital stage reuses the precoder layout (no shares/floor/epigraph
    // are allocated); the level variable rides behind the W coordinates.
    let layout = Layout { n_tx: n_cols, shares: 0, rate_floor: 0, epigraph: None, n_vars: 0 };
    let level = 2 * n_cols * streams;
    let mut prob = ConicProblem::new(level + 1);
    prob.add_cost(level, -1.0);

    if !common_stream {
        for i in 0..n_cols {
            prob.push_eq_zero(LinExpr::var(layout.p_re(i, 0), 1.0));
            prob.push_eq_zero(LinExpr::var(layout.p_im(i, 0), 1.0));
        }
    }

    // Sensing surrogates against the effective channels F^H (G^H u).
    let chans = filter_channels(filters, scenario);
    let eff: Vec<Vec<CVec>> = chans
        .iter()
        .map(|row| row.iter().map(|g| analog.adjoint() * g).collect())
        .collect();
    for m in 0..m_targets {
        let x = &qt[m];
        let xn = x.norm();
        let mut w = Vec::new();
        for j in 0..m_targets {
            if j == m {
                continue;
            }
            let scale = xn * cfg.reflect_coeffs[j].sqrt();
            for s in 0..streams {
                w.push(layout.re_inner(&eff[m][j], s, scale));
                w.push(layout.im_inner(&eff[m][j], s, scale));
            }
        }
        let mut rhs = LinExpr::constant(-cfg.noise_sense_mw * x.norm_squared());
        rhs.add_term(level, -1.0);
        let boost = 2.0 * cfg.reflect_coeffs[m].sqrt();
        for s in 0..streams {
            merge(&mut rhs, layout.re_inner(&eff[m][m], s, boost * x[s].re));
            merge(&mut rhs, layout.im_inner(&eff[m][m], s, -boost * x[s].im));
        }
        prob.push_norm_sq_le(w, &rhs);
    }

    // Transmit power through the analog stage: ||F W||^2 = sum_s ||L^H w_s||^2
    // with F^H F = L L^H.
    let gram = crate::linalg::hermitian_part(&(analog.adjoint() * analog));
    let chol = gram
        .cholesky()
        .ok_or_else(|| Error::Solver("analog gram matrix is not positive definite".into()))?;
    let l = chol.l();
    let mut coords = Vec::with_capacity(2 * n_cols * streams);
    for s in 0..streams {
        for i in 0..n_cols {
            let col = l.column(i).clone_owned();
            coords.push(layout.re_inner(&col, s, 1.0));
            coords.push(layout.im_inner(&col, s, 1.0));
        }
    }
    prob.push_soc(LinExpr::constant(budget_mw.sqrt()), coords);

    let sol = solver.solve(&prob)?;
    match sol.status {
        SolveStatus::Optimal | SolveStatus::Inaccurate => {}
        SolveStatus::Infeasible => {
            return Err(Error::Solver(
                "sensing ascent step reported infeasible despite a free level".into(),
            ))
        }
    }
    let w = CMat::from_fn(n_cols, streams, |i, s| {
        C64::new(sol.x[layout.p_re(i, s)], sol.x[layout.p_im(i, s)])
    });
    Ok((w, sol.x[level]))
}

#[cfg(test)]
mod tests {
    use super::super::{
        maxmin_rate, surrogate_rates, update_equalizers, update_qt_aux, update_receive_filters,
        update_weights,
    };
    use super::*;
    use crate::channel::{PolarCoord, ScatterPath};
    use crate::rates::Precoder;
    use crate::socp::ClarabelSolver;
    use crate::linalg::inf_norm;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn scenario_for(cfg: &SystemConfig, seed: u64) -> Scenario {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut coord = |lo: f64, hi: f64| {
            PolarCoord::new(rng.random_range(lo..hi), rng.random_range(-1.0..1.0)).unwrap()
        };
        let users: Vec<_> = (0..cfg.n_users).map(|_| coord(5.0, 45.0)).collect();
        let scat: Vec<Vec<_>> = (0..cfg.n_users)
            .map(|_| {
                (0..cfg.n_scatterers)
                    .map(|_| ScatterPath { coord: coord(20.0, 30.0), link_range_m: 11.0 })
                    .collect()
            })
            .collect();
        let targets: Vec<_> = (0..cfg.n_targets).map(|_| coord(5.0, 45.0)).collect();
        Scenario::synthesize(cfg, users, scat, targets).unwrap()
    }

    fn seed_precoder(cfg: &SystemConfig, scenario: &Scenario) -> Precoder {
        // Matched-filter start at 90% of budget.
        let streams = cfg.n_users + 1;
        let mut m = CMat::zeros(cfg.n_tx, streams);
        let mut avg = CVec::zeros(cfg.n_tx);
        for h in &scenario.comm_channels {
            avg += h;
        }
        m.set_column(0, &avg);
        for (j, h) in scenario.comm_channels.iter().enumerate() {
            m.set_column(j + 1, h);
        }
        let s = (0.9 * cfg.power_max_mw / m.norm_squared()).sqrt();
        Precoder::new(m * C64::new(s, 0.0))
    }

    fn tight_aux(
        p: &Precoder,
        scenario: &Scenario,
        cfg: &SystemConfig,
        sensing: bool,
    ) -> (AuxVars, Option<ReceiveFilters>) {
        let (eq_c, eq_p, mmse_c, mmse_p) = update_equalizers(p, scenario, cfg).unwrap();
        let (wt_c, wt_p) = update_weights(&mmse_c, &mmse_p).unwrap();
        let (qt, filters) = if sensing {
            let f = update_receive_filters(p, scenario, cfg).unwrap();
            (update_qt_aux(p, &f, scenario, cfg), Some(f))
        } else {
            (Vec::new(), None)
        };
        (
            AuxVars {
                eq_common: eq_c,
                eq_private: eq_p,
                wt_common: wt_c,
                wt_private: wt_p,
                qt_vectors: qt,
            },
            filters,
        )
    }

    #[test]
    fn step_respects_budget_and_certifies_floor() {
        let cfg = SystemConfig::with_arrays(8, 8, 4, 2, 1, 4.0);
        let scenario = scenario_for(&cfg, 1);
        let p0 = seed_precoder(&cfg, &scenario);
        let (aux, _) = tight_aux(&p0, &scenario, &cfg, false);
        let step =
            solve_inner_convex(&aux, None, None, &scenario, &cfg, true, &ClarabelSolver).unwrap();
        let p1 = Precoder::new(step.p.clone());
        assert!(p1.total_power() <= cfg.power_max_mw * (1.0 + 1e-6));

        // The certificate matches the surrogate rates at the returned point.
        let (r_c, r_p) = surrogate_rates(&p1, &aux, &scenario, &cfg).unwrap();
        let cap = r_c.iter().copied().fold(f64::INFINITY, f64::min);
        assert!(step.alloc.sum() <= cap + 1e-6);
        let floor = step
            .alloc
            .shares
            .iter()
            .zip(&r_p)
            .map(|(c, r)| c + r)
            .fold(f64::INFINITY, f64::min);
        assert!((step.rate_floor - floor).abs() <= 1e-5, "{} vs {floor}", step.rate_floor);

        // The step can only improve on the incumbent: the surrogates are
        // tight at p0, so the true max-min rate of p0 is feasible.
        let (base, _) = maxmin_rate(&p0, true, &scenario, &cfg).unwrap();
        assert!(step.rate_floor >= base - 1e-7, "{} < {base}", step.rate_floor);
    }

    #[test]
    fn sensing_floor_holds_on_true_sinr() {
        let cfg = SystemConfig::with_arrays(8, 8, 4, 2, 2, 4.0);
        let scenario = scenario_for(&cfg, 3);
        let p0 = seed_precoder(&cfg, &scenario);
        let (aux, filters) = tight_aux(&p0, &scenario, &cfg, true);
        let step = solve_inner_convex(
            &aux,
            None,
            filters.as_ref(),
            &scenario,
            &cfg,
            true,
            &ClarabelSolver,
        )
        .unwrap();
        let p1 = Precoder::new(step.p.clone());
        // The surrogate under-estimates the SINR, so the floor transfers to
        // the true value (up to solver tolerance).
        let sinrs =
            crate::rates::sensing_sinr(&p1, filters.as_ref().unwrap(), &scenario, &cfg).unwrap();
        let floor = cfg.sense_sinr_min();
        for (m, g) in sinrs.iter().enumerate() {
            assert!(*g >= floor * (1.0 - 1e-6) - 1e-9, "target {m}: {g} < {floor}");
        }
    }

    #[test]
    fn disabled_common_stream_pins_shared_beam() {
        let cfg = SystemConfig::with_arrays(8, 8, 4, 2, 1, 4.0);
        let scenario = scenario_for(&cfg, 5);
        let p0 = seed_precoder(&cfg, &scenario);
        let (aux, _) = tight_aux(&p0, &scenario, &cfg, false);
        let step =
            solve_inner_convex(&aux, None, None, &scenario, &cfg, false, &ClarabelSolver).unwrap();
        for i in 0..cfg.n_tx {
            assert!(step.p[(i, 0)].norm() <= 1e-7, "shared beam leaked: {}", step.p[(i, 0)]);
        }
        assert!(step.alloc.shares.iter().all(|&c| c == 0.0));
    }

    #[test]
    fn tiny_penalty_weight_pins_precoder_to_target() {
        let cfg = SystemConfig::with_arrays(6, 6, 3, 2, 1, 4.0);
        let scenario = scenario_for(&cfg, 7);
        let p0 = seed_precoder(&cfg, &scenario);
        let (aux, _) = tight_aux(&p0, &scenario, &cfg, false);
        let penalty = PenaltyTerm { target: p0.matrix.clone(), rho: 1e-9 };
        let step = solve_inner_convex(
            &aux,
            Some(penalty),
            None,
            &scenario,
            &cfg,
            true,
            &ClarabelSolver,
        )
        .unwrap();
        assert!(
            inf_norm(&(&step.p - &p0.matrix)) <= 1e-2,
            "deviation {}",
            inf_norm(&(&step.p - &p0.matrix))
        );
    }

    #[test]
    fn unreachable_sensing_floor_is_infeasible() {
        let cfg = SystemConfig::with_arrays(8, 8, 4, 2, 1, 60.0);
        let scenario = scenario_for(&cfg, 11);
        let p0 = seed_precoder(&cfg, &scenario);
        let (aux, filters) = tight_aux(&p0, &scenario, &cfg, true);
        match solve_inner_convex(
            &aux,
            None,
            filters.as_ref(),
            &scenario,
            &cfg,
            true,
            &ClarabelSolver,
        ) {
            Err(Error::Infeasible) => {}
            other => panic!("expected infeasible, got {other:?}"),
        }
    }
}
