//! Communication and sensing performance evaluation.
//!
//! The downlink splits each user's message into one jointly encoded common
//! stream (precoder column 0) and per-user private streams (columns 1..=K).
//! Every receiver first decodes the common stream treating all private
//! streams as noise, cancels it, then decodes its private stream. The common
//! stream's rate is shared among users through a [`CommonRateAlloc`]; its sum
//! may not exceed the worst user's common-stream capacity.
//!
//! Sensing quality is the post-filter SINR of each target echo computed from
//! the transmit covariance `R = P P^H`.
//!
//! All rates are base-2 (bit/s/Hz), all powers linear milliwatts.

use serde::{Deserialize, Serialize};

use crate::channel::Scenario;
use crate::config::SystemConfig;
use crate::{CMat, CVec, Error, Result};

/// Transmit precoder: column 0 carries the common stream, columns 1..=K the
/// private streams.
#[derive(Debug, Clone, PartialEq)]
pub struct Precoder {
    pub matrix: CMat,
}

impl Precoder {
    pub fn new(matrix: CMat) -> Self {
        Precoder { matrix }
    }

    pub fn n_streams(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn n_users(&self) -> usize {
        self.n_streams() - 1
    }

    pub fn common(&self) -> CVec {
        self.matrix.column(0).into_owned()
    }

    /// Private column of 0-based `user` (precoder column `user + 1`).
    pub fn private(&self, user: usize) -> CVec {
        self.matrix.column(user + 1).into_owned()
    }

    /// Total transmit power `||P||_F^2`.
    pub fn total_power(&self) -> f64 {
        self.matrix.norm_squared()
    }

    /// Transmit covariance `R = P P^H`.
    pub fn covariance(&self) -> CMat {
        &self.matrix * self.matrix.adjoint()
    }
}

/// Per-user share of the common-stream rate, bits/s/Hz, all non-negative.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommonRateAlloc {
    pub shares: Vec<f64>,
}

impl CommonRateAlloc {
    pub fn new(shares: Vec<f64>) -> Result<Self> {
        if let Some(&bad) = shares.iter().find(|&&s| !(s >= 0.0) || !s.is_finite()) {
            return Err(Error::Argument(format!(
                "common-rate shares must be finite and non-negative, got {bad}"
            )));
        }
        Ok(CommonRateAlloc { shares })
    }

    pub fn zeros(n_users: usize) -> Self {
        CommonRateAlloc { shares: vec![0.0; n_users] }
    }

    pub fn sum(&self) -> f64 {
        self.shares.iter().sum()
    }
}

/// Radar receive filters, one unit-norm length-N_r vector per target.
#[derive(Debug, Clone, PartialEq)]
pub struct ReceiveFilters {
    pub filters: Vec<CVec>,
}

impl ReceiveFilters {
    /// Checks the unit-norm contract (1e-10).
    pub fn validate(&self) -> Result<()> {
        for (m, u) in self.filters.iter().enumerate() {
            if (u.norm() - 1.0).abs() > 1e-10 {
                return Err(Error::Precondition(format!(
                    "receive filter {m} is not unit norm: ||u|| = {}",
                    u.norm()
                )));
            }
        }
        Ok(())
    }
}

/// Signal/interference decomposition at one user.
///
/// `s_c`/`s_p`: received common/private signal power. `i_p` is the private
/// decoding interference including any residual common-stream leakage after
/// imperfect cancellation; `i_c` excludes that residual (the common stream is
/// decoded before cancellation happens). `t_c = s_c + i_c`, `t_p = s_p + i_p`
/// are the total received powers at each decoding stage.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerTerms {
    pub t_c: f64,
    pub s_c: f64,
    pub i_c: f64,
    pub t_p: f64,
    pub s_p: f64,
    pub i_p: f64,
}

/// Received-power decomposition for 0-based `user` under channel `h`.
pub fn power_terms(
    p: &Precoder,
    h: &CVec,
    user: usize,
    noise_mw: f64,
    sic_residual: f64,
) -> Result<PowerTerms> {
    if h.len() != p.matrix.nrows() {
        return Err(Error::Dimension(format!(
            "channel has {} entries, precoder rows {}",
            h.len(),
            p.matrix.nrows()
        )));
    }
    if user + 1 >= p.n_streams() {
        return Err(Error::Dimension(format!(
            "user {user} out of range for {} streams",
            p.n_streams()
        )));
    }
    if !(noise_mw > 0.0) {
        return Err(Error::Argument(format!(
            "noise power must be strictly positive, got {noise_mw}"
        )));
    }
    let received: Vec<f64> = (0..p.n_streams())
        .map(|j| h.dotc(&p.matrix.column(j).into_owned()).norm_sqr())
        .collect();
    let s_c = received[0];
    let s_p = received[user + 1];
    let cross: f64 = (1..p.n_streams())
        .filter(|&j| j != user + 1)
        .map(|j| received[j])
        .sum();
    let i_p_base = cross + noise_mw;
    let i_p = i_p_base + sic_residual * s_c;
    let i_c = s_p + i_p_base;
    Ok(PowerTerms {
        t_c: s_c + i_c,
        s_c,
        i_c,
        t_p: s_p + i_p,
        s_p,
        i_p,
    })
}

/// Everything measurable about one transmit design.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateReport {
    /// Common-stream rate decodable by each user, R_c,k.
    pub common_rates: Vec<f64>,
    /// Shared common-stream capacity, min_k R_c,k.
    pub common_rate: f64,
    /// Common-rate shares C_k granted to each user.
    pub common_shares: Vec<f64>,
    /// Private-stream rates R_p,k.
    pub private_rates: Vec<f64>,
    /// Per-user totals C_k + R_p,k.
    pub totals: Vec<f64>,
    /// Worst-user total — the max-min design objective.
    pub min_total: f64,
    /// Per-target sensing SINRs (linear).
    pub sensing_sinrs: Vec<f64>,
    /// Per-target sensing rates log2(1 + sinr).
    pub sensing_rates: Vec<f64>,
    /// Objective value (equals `min_total`).
    pub objective: f64,
    /// True when the granted shares exceed the common capacity by more than
    /// 1e-9 — reported, never raised, so intermediate iterates can be logged.
    pub common_sum_violation: bool,
}

/// Communication-side report: rates from the precoder and share split;
/// sensing fields left empty.
pub fn comm_rates(
    p: &Precoder,
    alloc: &CommonRateAlloc,
    scenario: &Scenario,
    cfg: &SystemConfig,
) -> Result<RateReport> {
    let k_users = scenario.comm_channels.len();
    if alloc.shares.len() != k_users {
        return Err(Error::Dimension(format!(
            "{} shares for {} users",
            alloc.shares.len(),
            k_users
        )));
    }
    if p.n_users() != k_users {
        return Err(Error::Dimension(format!(
            "precoder has {} private streams for {} users",
            p.n_users(),
            k_users
        )));
    }
    let mut common_rates = Vec::with_capacity(k_users);
    let mut private_rates = Vec::with_capacity(k_users);
    for (k, h) in scenario.comm_channels.iter().enumerate() {
        let pt = power_terms(p, h, k, cfg.noise_comm_mw, cfg.sic_residual)?;
        common_rates.push((1.0 + pt.s_c / pt.i_c).log2());
        private_rates.push((1.0 + pt.s_p / pt.i_p).log2());
    }
    let common_rate = common_rates.iter().copied().fold(f64::INFINITY, f64::min);
    let totals: Vec<f64> = alloc
        .shares
        .iter()
        .zip(&private_rates)
        .map(|(c, r)| c + r)
        .collect();
    let min_total = totals.iter().copied().fold(f64::INFINITY, f64::min);
    let violation = alloc.sum() > common_rate + 1e-9;
    Ok(RateReport {
        common_rates,
        common_rate,
        common_shares: alloc.shares.clone(),
        private_rates,
        totals,
        min_total,
        sensing_sinrs: Vec::new(),
        sensing_rates: Vec::new(),
        objective: min_total,
        common_sum_violation: violation,
    })
}

/// Per-target sensing SINRs for transmit covariance `r_cov`:
///
/// `gamma_m = alpha_m u^H G_m R G_m^H u / (u^H (sum_{j != m} alpha_j G_j R G_j^H + sigma_0^2 I) u)`.
pub fn sensing_sinr_from_cov(
    r_cov: &CMat,
    filters: &ReceiveFilters,
    scenario: &Scenario,
    cfg: &SystemConfig,
) -> Result<Vec<f64>> {
    let m_targets = scenario.sense_channels.len();
    if filters.filters.len() != m_targets {
        return Err(Error::Dimension(format!(
            "{} filters for {} targets",
            filters.filters.len(),
            m_targets
        )));
    }
    filters.validate()?;
    let mut sinrs = Vec::with_capacity(m_targets);
    for m in 0..m_targets {
        let u = &filters.filters[m];
        // y_j = G_j^H u; echo power of target j after the filter is
        // alpha_j y_j^H R y_j.
        let echo = |j: usize| -> f64 {
            let y = scenario.sense_channels[j].adjoint() * u;
            let val = (y.adjoint() * r_cov * &y)[(0, 0)].re;
            cfg.reflect_coeffs[j] * val.max(0.0)
        };
        let num = echo(m);
        let mut den = cfg.noise_sense_mw * u.norm_squared();
        for j in 0..m_targets {
            if j != m {
                den += echo(j);
            }
        }
        sinrs.push(num / den);
    }
    Ok(sinrs)
}

/// Sensing SINRs of a precoder (covariance `P P^H`).
pub fn sensing_sinr(
    p: &Precoder,
    filters: &ReceiveFilters,
    scenario: &Scenario,
    cfg: &SystemConfig,
) -> Result<Vec<f64>> {
    sensing_sinr_from_cov(&p.covariance(), filters, scenario, cfg)
}

/// Full report: communication and sensing sides.
pub fn rate_report(
    p: &Precoder,
    alloc: &CommonRateAlloc,
    filters: &ReceiveFilters,
    scenario: &Scenario,
    cfg: &SystemConfig,
) -> Result<RateReport> {
    let mut report = comm_rates(p, alloc, scenario, cfg)?;
    report.sensing_sinrs = sensing_sinr(p, filters, scenario, cfg)?;
    report.sensing_rates = report.sensing_sinrs.iter().map(|g| (1.0 + g).log2()).collect();
    Ok(report)
}

/// Best max-min split of a common capacity across users: maximizes
/// `min_k (c_k + private_rates[k])` subject to `sum c_k <= capacity`,
/// `c_k >= 0`. Returns the shares and the achieved min-total.
///
/// The optimum waterfills the worst users: `sum_k max(0, t - r_k)` is
/// piecewise linear and increasing in `t`, so the level `t` solving
/// `= capacity` is found on the sorted rates directly.
pub fn optimal_common_split(capacity: f64, private_rates: &[f64]) -> (Vec<f64>, f64) {
    let k = private_rates.len();
    if k == 0 {
        return (Vec::new(), f64::INFINITY);
    }
    let capacity = capacity.max(0.0);
    let mut sorted: Vec<f64> = private_rates.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut level = 0.0_f64;
    let mut prefix = 0.0_f64;
    let mut found = false;
    for i in 0..k {
        prefix += sorted[i];
        let filled = (i + 1) as f64;
        // Candidate level filling the first i+1 users exactly.
        let t = (capacity + prefix) / filled;
        let next = if i + 1 < k { sorted[i + 1] } else { f64::INFINITY };
        if t >= sorted[i] && t <= next {
            level = t;
            found = true;
            break;
        }
    }
    if !found {
        // capacity = 0 with all rates equal, or degenerate ties: level is the
        // worst rate plus an equal split of whatever remains.
        level = sorted[0];
    }
    let shares: Vec<f64> = private_rates.iter().map(|&r| (level - r).max(0.0)).collect();
    (shares, level)
}
