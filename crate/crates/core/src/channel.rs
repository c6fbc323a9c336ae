//! Array geometry and channel synthesis.
//!
//! Positions are polar `(range, angle)` pairs in the array plane, with the
//! reference element at the origin and elements indexed 1-based along the
//! aperture. Within the Rayleigh distance `2 D^2 / lambda` the wavefront
//! curvature matters: the per-element path detour for a source at `(r, theta)`
//! is the second-order expansion
//!
//! ```text
//! delta_n = n d sin(theta) - (n d)^2 cos^2(theta) / (2 r),   n = 1..N
//! ```
//!
//! which degenerates to the planar-wave form `n d sin(theta)` as `r -> inf`.
//! Channel gains follow free-space loss: one-way paths decay as `1/r` with
//! phase `e^{-j 2 pi r / lambda}`, radar round trips as `1/r^2` with the
//! two-way phase.

use num_complex::Complex;
use serde::{Deserialize, Serialize};

use crate::config::SystemConfig;
use crate::{C64, CMat, CVec, Error, Result};

/// Polar position: range in meters, angle in radians within (-pi/2, pi/2).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolarCoord {
    pub range_m: f64,
    pub angle_rad: f64,
}

impl PolarCoord {
    pub fn new(range_m: f64, angle_rad: f64) -> Result<Self> {
        if !(range_m >= 0.0 && range_m.is_finite()) {
            return Err(Error::Geometry(format!(
                "range must be finite and non-negative, got {range_m}"
            )));
        }
        if !(angle_rad.abs() < std::f64::consts::FRAC_PI_2) {
            return Err(Error::Geometry(format!(
                "angle must lie strictly inside (-pi/2, pi/2), got {angle_rad}"
            )));
        }
        Ok(PolarCoord { range_m, angle_rad })
    }

    pub fn from_degrees(range_m: f64, angle_deg: f64) -> Result<Self> {
        Self::new(range_m, angle_deg.to_radians())
    }

    /// Straight-line distance to another polar point (law of cosines).
    pub fn distance_to(&self, other: &PolarCoord) -> f64 {
        let (r1, r2) = (self.range_m, other.range_m);
        let d2 = r1 * r1 + r2 * r2 - 2.0 * r1 * r2 * (self.angle_rad - other.angle_rad).cos();
        d2.max(0.0).sqrt()
    }
}

/// Wavefront model used when synthesizing steering vectors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Wavefront {
    /// Spherical wave: range-dependent focusing (valid inside the Rayleigh
    /// distance and beyond).
    Spherical,
    /// Planar approximation: angle-only steering.
    Planar,
}

/// Boundary `2 * aperture^2 / lambda` between the spherical-wave region and
/// the planar far field.
pub fn rayleigh_distance(aperture_m: f64, wavelength_m: f64) -> Result<f64> {
    if !(wavelength_m > 0.0) {
        return Err(Error::Geometry(format!(
            "wavelength must be strictly positive, got {wavelength_m}"
        )));
    }
    if !(aperture_m >= 0.0) {
        return Err(Error::Geometry(format!(
            "aperture must be non-negative, got {aperture_m}"
        )));
    }
    Ok(2.0 * aperture_m * aperture_m / wavelength_m)
}

/// Spherical-wavefront steering vector for a source at `coord`.
///
/// Entry `n` (1-based) is `exp(j 2 pi delta_n / lambda)`; every entry has unit
/// magnitude.
pub fn nf_steering(
    coord: PolarCoord,
    n_elems: usize,
    spacing_m: f64,
    wavelength_m: f64,
) -> Result<CVec> {
    if coord.range_m <= 0.0 {
        return Err(Error::Geometry(
            "spherical steering needs a strictly positive range".into(),
        ));
    }
    let k = 2.0 * std::f64::consts::PI / wavelength_m;
    let sin_t = coord.angle_rad.sin();
    let cos2_t = coord.angle_rad.cos().powi(2);
    Ok(CVec::from_fn(n_elems, |i, _| {
        let nd = (i + 1) as f64 * spacing_m;
        let detour = nd * sin_t - nd * nd * cos2_t / (2.0 * coord.range_m);
        Complex::from_polar(1.0, k * detour)
    }))
}

/// Planar-wavefront steering vector: entry `n` is
/// `exp(j 2 pi n d sin(theta) / lambda)`.
pub fn ff_steering(angle_rad: f64, n_elems: usize, spacing_m: f64, wavelength_m: f64) -> CVec {
    let k = 2.0 * std::f64::consts::PI / wavelength_m;
    let sin_t = angle_rad.sin();
    CVec::from_fn(n_elems, |i, _| {
        let nd = (i + 1) as f64 * spacing_m;
        Complex::from_polar(1.0, k * nd * sin_t)
    })
}

fn steering(
    wavefront: Wavefront,
    coord: PolarCoord,
    n_elems: usize,
    spacing_m: f64,
    wavelength_m: f64,
) -> Result<CVec> {
    match wavefront {
        Wavefront::Spherical => nf_steering(coord, n_elems, spacing_m, wavelength_m),
        Wavefront::Planar => Ok(ff_steering(coord.angle_rad, n_elems, spacing_m, wavelength_m)),
    }
}

/// One-way free-space gain over `path_m` meters:
/// `c / (4 pi f path) * exp(-j 2 pi path / lambda)`.
pub fn path_gain(path_m: f64, carrier_hz: f64, wavelength_m: f64) -> Result<C64> {
    if path_m <= 0.0 {
        return Err(Error::Geometry(format!(
            "propagation path must be strictly positive, got {path_m} m"
        )));
    }
    let amp = crate::SPEED_OF_LIGHT / (4.0 * std::f64::consts::PI * carrier_hz * path_m);
    Ok(Complex::from_polar(
        amp,
        -2.0 * std::f64::consts::PI * path_m / wavelength_m,
    ))
}

/// Radar round-trip gain for a target at `range_m`:
/// `c / (4 pi f range^2) * exp(-j 4 pi range / lambda)` — two-way 1/r^2 decay
/// and two-way phase.
pub fn roundtrip_gain(range_m: f64, carrier_hz: f64, wavelength_m: f64) -> Result<C64> {
    if range_m <= 0.0 {
        return Err(Error::Geometry(format!(
            "target range must be strictly positive, got {range_m} m"
        )));
    }
    let amp =
        crate::SPEED_OF_LIGHT / (4.0 * std::f64::consts::PI * carrier_hz * range_m * range_m);
    Ok(Complex::from_polar(
        amp,
        -4.0 * std::f64::consts::PI * range_m / wavelength_m,
    ))
}

/// One reflected path: scatterer position plus the scatterer-to-user link
/// length, so the total path is `coord.range_m + link_range_m`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScatterPath {
    pub coord: PolarCoord,
    pub link_range_m: f64,
}

/// Downlink channel `h = beta_los a(user) + sum_q beta_q a(scatterer_q)`.
///
/// The line-of-sight gain is the one-way free-space gain at the user range;
/// each reflected path uses free-space loss over its total length
/// (array -> scatterer -> user) with the matching phase.
pub fn build_comm_channel(
    user: PolarCoord,
    scatterers: &[ScatterPath],
    cfg: &SystemConfig,
) -> Result<CVec> {
    build_comm_channel_with(Wavefront::Spherical, user, scatterers, cfg)
}

pub fn build_comm_channel_with(
    wavefront: Wavefront,
    user: PolarCoord,
    scatterers: &[ScatterPath],
    cfg: &SystemConfig,
) -> Result<CVec> {
    if scatterers.len() != cfg.n_scatterers {
        return Err(Error::Dimension(format!(
            "expected {} scatter paths, got {}",
            cfg.n_scatterers,
            scatterers.len()
        )));
    }
    let los = path_gain(user.range_m, cfg.carrier_hz, cfg.wavelength_m)?;
    let mut h = steering(wavefront, user, cfg.n_tx, cfg.spacing_m, cfg.wavelength_m)? * los;
    for path in scatterers {
        let gain = path_gain(
            path.coord.range_m + path.link_range_m,
            cfg.carrier_hz,
            cfg.wavelength_m,
        )?;
        h += steering(wavefront, path.coord, cfg.n_tx, cfg.spacing_m, cfg.wavelength_m)? * gain;
    }
    Ok(h)
}

/// Round-trip sensing channel `G = beta b(target) a^T(target)` — transmit
/// steering out, receive steering back, rank one by construction. Note the
/// plain transpose on `a`: the outbound phase profile is re-traversed, not
/// conjugated.
pub fn build_sense_channel(target: PolarCoord, cfg: &SystemConfig) -> Result<CMat> {
    build_sense_channel_with(Wavefront::Spherical, target, cfg)
}

pub fn build_sense_channel_with(
    wavefront: Wavefront,
    target: PolarCoord,
    cfg: &SystemConfig,
) -> Result<CMat> {
    let gain = roundtrip_gain(target.range_m, cfg.carrier_hz, cfg.wavelength_m)?;
    let a = steering(wavefront, target, cfg.n_tx, cfg.spacing_m, cfg.wavelength_m)?;
    let b = steering(wavefront, target, cfg.n_rx, cfg.spacing_m, cfg.wavelength_m)?;
    Ok((b * a.transpose()) * gain)
}

/// Full propagation environment: placements plus the synthesized channels and
/// the gains they were built from.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub wavefront: Wavefront,
    pub users: Vec<PolarCoord>,
    pub scatterers: Vec<Vec<ScatterPath>>,
    pub targets: Vec<PolarCoord>,
    /// h_k, one length-N_t vector per user.
    pub comm_channels: Vec<CVec>,
    /// G_m, one N_r x N_t rank-one matrix per target.
    pub sense_channels: Vec<CMat>,
    /// Line-of-sight gain per user.
    pub los_gains: Vec<C64>,
    /// Reflected-path gains, per user and scatterer.
    pub scatter_gains: Vec<Vec<C64>>,
    /// Round-trip gain per target.
    pub sense_gains: Vec<C64>,
}

impl Scenario {
    /// Synthesize all channels for the given placements.
    pub fn synthesize(
        cfg: &SystemConfig,
        users: Vec<PolarCoord>,
        scatterers: Vec<Vec<ScatterPath>>,
        targets: Vec<PolarCoord>,
    ) -> Result<Self> {
        Self::synthesize_with(Wavefront::Spherical, cfg, users, scatterers, targets)
    }

    pub fn synthesize_with(
        wavefront: Wavefront,
        cfg: &SystemConfig,
        users: Vec<PolarCoord>,
        scatterers: Vec<Vec<ScatterPath>>,
        targets: Vec<PolarCoord>,
    ) -> Result<Self> {
        if users.len() != cfg.n_users {
            return Err(Error::Dimension(format!(
                "expected {} users, got {}",
                cfg.n_users,
                users.len()
            )));
        }
        if scatterers.len() != users.len() {
            return Err(Error::Dimension(format!(
                "expected one scatterer set per user ({}), got {}",
                users.len(),
                scatterers.len()
            )));
        }
        if targets.len() != cfg.n_targets {
            return Err(Error::Dimension(format!(
                "expected {} targets, got {}",
                cfg.n_targets,
                targets.len()
            )));
        }
        let mut comm_channels = Vec::with_capacity(users.len());
        let mut los_gains = Vec::with_capacity(users.len());
        let mut scatter_gains = Vec::with_capacity(users.len());
        for (user, paths) in users.iter().zip(&scatterers) {
            comm_channels.push(build_comm_channel_with(wavefront, *user, paths, cfg)?);
            los_gains.push(path_gain(user.range_m, cfg.carrier_hz, cfg.wavelength_m)?);
            scatter_gains.push(
                paths
                    .iter()
                    .map(|p| {
                        path_gain(
                            p.coord.range_m + p.link_range_m,
                            cfg.carrier_hz,
                            cfg.wavelength_m,
                        )
                    })
                    .collect::<Result<Vec<_>>>()?,
            );
        }
        let mut sense_channels = Vec::with_capacity(targets.len());
        let mut sense_gains = Vec::with_capacity(targets.len());
        for target in &targets {
            sense_channels.push(build_sense_channel_with(wavefront, *target, cfg)?);
            sense_gains.push(roundtrip_gain(target.range_m, cfg.carrier_hz, cfg.wavelength_m)?);
        }
        Ok(Scenario {
            wavefront,
            users,
            scatterers,
            targets,
            comm_channels,
            sense_channels,
            los_gains,
            scatter_gains,
            sense_gains,
        })
    }

    /// Rebuild every channel from the stored placements under a different
    /// wavefront model (used by the planar-wave baseline).
    pub fn resynthesize(&self, wavefront: Wavefront, cfg: &SystemConfig) -> Result<Self> {
        Self::synthesize_with(
            wavefront,
            cfg,
            self.users.clone(),
            self.scatterers.clone(),
            self.targets.clone(),
        )
    }
}
