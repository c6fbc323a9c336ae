//! System configuration: physical constants, array dimensions, and
//! algorithmic thresholds shared by every module.

use serde::{Deserialize, Serialize};

use crate::{Error, Result, SPEED_OF_LIGHT};

/// All scalar parameters of the transmit/receive system.
///
/// Invariants (checked by [`SystemConfig::validate`]):
/// * `n_rf <= n_tx` — the analog stage maps few RF chains onto many antennas;
/// * counts and powers strictly positive (`sic_residual` may be zero);
/// * `wavelength_m * carrier_hz` equals the propagation speed to 1e-6
///   relative.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SystemConfig {
    /// Transmit antennas N_t.
    pub n_tx: usize,
    /// Receive antennas N_r (radar echo array).
    pub n_rx: usize,
    /// RF chains N_f feeding the analog stage.
    pub n_rf: usize,
    /// Downlink users K.
    pub n_users: usize,
    /// Sensing targets M.
    pub n_targets: usize,
    /// Scatterers per user Q.
    pub n_scatterers: usize,
    /// Antenna spacing d in meters.
    pub spacing_m: f64,
    /// Carrier frequency f in Hz.
    pub carrier_hz: f64,
    /// Wavelength lambda = c/f in meters.
    pub wavelength_m: f64,
    /// Transmit power budget P_th, linear mW.
    pub power_max_mw: f64,
    /// Per-user receiver noise power sigma^2, linear mW.
    pub noise_comm_mw: f64,
    /// Radar receiver noise power sigma_0^2, linear mW.
    pub noise_sense_mw: f64,
    /// Per-target sensing-rate floor R_th, bit/s/Hz.
    pub sense_rate_min_bps: f64,
    /// Power reflection coefficients alpha_m, one per target.
    pub reflect_coeffs: Vec<f64>,
    /// Residual fraction of decoded common-stream power leaking into private
    /// decoding (0 = perfect successive interference cancellation).
    pub sic_residual: f64,
}

impl SystemConfig {
    /// Full-scale profile: 64-antenna arrays, 6 users, 4 targets.
    ///
    /// The radar noise floor is -100 dBm: echoes pay a two-way path loss, and
    /// radar integration gain makes the effective floor far lower than the
    /// communication receiver's -80 dBm.
    pub fn paper() -> Self {
        Self::with_arrays(64, 64, 8, 6, 4, 6.0)
    }

    /// Desk-scale profile for fast iteration and CI: 16-antenna arrays,
    /// 3 users, 2 targets, relaxed sensing floor.
    pub fn desk() -> Self {
        Self::with_arrays(16, 16, 8, 3, 2, 4.0)
    }

    /// Profile with custom array/population sizes; everything else (carrier,
    /// budgets, noise floors) matches the standard profiles, and the physical
    /// aperture stays 0.5 m regardless of the element count.
    pub fn with_arrays(
        n_tx: usize,
        n_rx: usize,
        n_rf: usize,
        n_users: usize,
        n_targets: usize,
        sense_rate_min_bps: f64,
    ) -> Self {
        let carrier_hz = 30.0e9;
        // Spacing keeps the physical aperture at 0.5 m regardless of the
        // element count, so the Rayleigh distance stays 50 m in every profile.
        let spacing_m = 0.5 / (n_tx - 1) as f64;
        SystemConfig {
            n_tx,
            n_rx,
            n_rf,
            n_users,
            n_targets,
            n_scatterers: 2,
            spacing_m,
            carrier_hz,
            wavelength_m: SPEED_OF_LIGHT / carrier_hz,
            power_max_mw: 1000.0, // 30 dBm
            noise_comm_mw: 1.0e-8, // -80 dBm
            noise_sense_mw: 1.0e-10, // -100 dBm
            sense_rate_min_bps,
            reflect_coeffs: vec![1.0; n_targets],
            sic_residual: 0.0,
        }
    }

    /// Transmit aperture (N_t - 1) * d in meters.
    pub fn aperture_tx(&self) -> f64 {
        (self.n_tx - 1) as f64 * self.spacing_m
    }

    /// Receive aperture (N_r - 1) * d in meters.
    pub fn aperture_rx(&self) -> f64 {
        (self.n_rx - 1) as f64 * self.spacing_m
    }

    /// Sensing SINR floor 2^R_th - 1 implied by the rate requirement.
    pub fn sense_sinr_min(&self) -> f64 {
        self.sense_rate_min_bps.exp2() - 1.0
    }

    pub fn validate(&self) -> Result<()> {
        fn positive(v: f64, name: &str) -> Result<()> {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} must be strictly positive, got {v}")))
            }
        }
        for (count, name) in [
            (self.n_tx, "n_tx"),
            (self.n_rx, "n_rx"),
            (self.n_rf, "n_rf"),
            (self.n_users, "n_users"),
            (self.n_targets, "n_targets"),
        ] {
            if count == 0 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        if self.n_rf > self.n_tx {
            return Err(Error::Config(format!(
                "n_rf ({}) cannot exceed n_tx ({})",
                self.n_rf, self.n_tx
            )));
        }
        positive(self.spacing_m, "spacing_m")?;
        positive(self.carrier_hz, "carrier_hz")?;
        positive(self.wavelength_m, "wavelength_m")?;
        positive(self.power_max_mw, "power_max_mw")?;
        positive(self.noise_comm_mw, "noise_comm_mw")?;
        positive(self.noise_sense_mw, "noise_sense_mw")?;
        if self.sense_rate_min_bps < 0.0 {
            return Err(Error::Config(format!(
                "sense_rate_min_bps must be non-negative, got {}",
                self.sense_rate_min_bps
            )));
        }
        let c = self.wavelength_m * self.carrier_hz;
        if (c - SPEED_OF_LIGHT).abs() > 1.0e-6 * SPEED_OF_LIGHT {
            return Err(Error::Config(format!(
                "wavelength_m * carrier_hz = {c} is not the propagation speed"
            )));
        }
        if self.reflect_coeffs.len() != self.n_targets {
            return Err(Error::Config(format!(
                "reflect_coeffs has {} entries for {} targets",
                self.reflect_coeffs.len(),
                self.n_targets
            )));
        }
        for (m, &a) in self.reflect_coeffs.iter().enumerate() {
            if !(a > 0.0 && a.is_finite()) {
                return Err(Error::Config(format!(
                    "reflect_coeffs[{m}] must be strictly positive, got {a}"
                )));
            }
        }
        if !(0.0..=1.0).contains(&self.sic_residual) {
            return Err(Error::Config(format!(
                "sic_residual must lie in [0, 1], got {}",
                self.sic_residual
            )));
        }
        Ok(())
    }
}

/// dBm to linear milliwatts.
pub fn dbm_to_mw(dbm: f64) -> f64 {
    10.0_f64.powf(dbm / 10.0)
}

/// Linear milliwatts to dBm.
pub fn mw_to_dbm(mw: f64) -> f64 {
    10.0 * mw.log10()
}
