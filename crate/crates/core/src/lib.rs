//! Near-field integrated sensing and communication (ISAC) hybrid beamforming.
//!
//! The crate covers the full design loop for a rate-splitting downlink that
//! shares its waveform with a monostatic radar:
//!
//! * [`channel`] — spherical-wavefront array responses, multipath user
//!   channels, and round-trip sensing channels from polar geometry.
//! * [`rates`] — common/private stream SINRs, achievable rates, and sensing
//!   SINRs for a given precoder, receive filters, and common-rate split.
//! * [`reconstruct`] — merges a dedicated sensing covariance into the
//!   communication beams and reduces high-rank covariance blocks to rank one
//!   while preserving every performance functional.
//! * [`optimizer`] — the double-loop penalty/dual algorithm that maximizes the
//!   minimum user rate under power and per-target sensing-rate constraints
//!   with a unit-modulus analog stage and a small digital stage.
//! * [`experiments`] — seeded scenario generation, baseline schemes, and
//!   Monte-Carlo sweeps with CSV emission.
//!
//! All powers are linear milliwatts internally; dBm appears only at the CLI
//! boundary. Rates are base-2 (bit/s/Hz). Complex math is `f64` throughout:
//! the tolerances this crate guarantees (down to 1e-12) have no meaning in
//! single precision.

pub mod channel;
pub mod config;
pub mod experiments;
pub mod io;
pub mod linalg;
pub mod optimizer;
pub mod rates;
pub mod reconstruct;
pub mod socp;

use num_complex::Complex;

/// Complex scalar used everywhere in the crate.
pub type C64 = Complex<f64>;
/// Dynamically sized complex matrix.
pub type CMat = nalgebra::DMatrix<C64>;
/// Dynamically sized complex column vector.
pub type CVec = nalgebra::DVector<C64>;
/// Dynamically sized real matrix.
pub type RMat = nalgebra::DMatrix<f64>;
/// Dynamically sized real column vector.
pub type RVec = nalgebra::DVector<f64>;

/// Propagation speed used to tie carrier frequency and wavelength, m/s.
pub const SPEED_OF_LIGHT: f64 = 3.0e8;

/// Errors surfaced by the library.
///
/// `Infeasible` is a *result*, not a bug: it marks trials whose sensing-rate
/// constraints cannot be met at the given power budget and is counted
/// separately from genuine solver failures by the sweep harness.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("invalid geometry: {0}")]
    Geometry(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("sensing-rate constraints infeasible at the configured power budget")]
    Infeasible,
    #[error("conic solver failed: {0}")]
    Solver(String),
    #[error("covariance block is irreducible at rank {rank}: the functional system has no nonzero null space")]
    Irreducible { rank: usize },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
