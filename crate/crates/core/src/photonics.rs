//! Fringe model, sensitivities and scaling limits.

use std::f64::consts::PI;

use crate::config::{Scheme, SensorConfig};
use crate::error::{Error, Result};

/// Output port of the σ_x measurement.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Port {
    Plus,
    Minus,
}

impl Port {
    pub fn sign(self) -> f64 {
        match self {
            Port::Plus => 1.0,
            Port::Minus => -1.0,
        }
    }
}

/// Normalized detector intensity (1 ± ν cos Φ) / 2.
pub fn fringe_intensity(phase: f64, visibility: f64, port: Port) -> Result<f64> {
    if !(0.0..=1.0).contains(&visibility) {
        return Err(Error::domain("visibility", format!("must lie in [0, 1], got {visibility}")));
    }
    Ok(0.5 * (1.0 + port.sign() * visibility * phase.cos()))
}

/// Optical phase from a sample-mirror displacement `d_nm` (double pass).
///
/// Classical: 4π·d/λ_c. Quantum: 4π·d·(1/λ_s + 1/λ_i).
pub fn displacement_to_phase(d_nm: f64, config: &SensorConfig) -> f64 {
    d_nm * config.phase_per_nm()
}

fn sensitivity(eta_ext: f64, internal: f64, visibility: f64) -> Result<f64> {
    let info = eta_ext * internal * visibility * visibility;
    if !(info > 0.0 && info.is_finite()) {
        return Err(Error::domain(
            "visibility",
            "efficiencies and visibility must be > 0 for a finite sensitivity",
        ));
    }
    Ok(1.0 / info.sqrt())
}

/// S_c = (η_ext·η_int,c·ν_c²)^(−1/2), in rad·√photon.
pub fn classical_sensitivity(config: &SensorConfig) -> Result<f64> {
    sensitivity(config.eta_ext, config.eta_int, config.visibility)
}

/// S_q = (η_ext·(η_int,q + 1)·ν_q²)^(−1/2), in rad·√photon.
pub fn quantum_sensitivity(config: &SensorConfig) -> Result<f64> {
    sensitivity(config.eta_ext, config.eta_int + 1.0, config.visibility)
}

/// Sensitivity matching the configured scheme.
pub fn sensitivity_for(config: &SensorConfig) -> Result<f64> {
    match config.scheme {
        Scheme::Classical => classical_sensitivity(config),
        Scheme::Quantum => quantum_sensitivity(config),
    }
}

/// √((η_int,q + 1)·ν_q²); above 1 the quantum sensor beats an ideal classical one.
pub fn quantum_advantage_factor(eta_int_q: f64, nu_q: f64) -> f64 {
    ((eta_int_q + 1.0) * nu_q * nu_q).sqrt()
}

fn check_count(n: f64) -> Result<()> {
    if !(n > 0.0 && n.is_finite()) {
        return Err(Error::domain("photon_count", format!("must be > 0, got {n}")));
    }
    Ok(())
}

/// Shot-noise-limited phase uncertainty 1/√N.
pub fn snl_phase_noise(n: f64) -> Result<f64> {
    check_count(n)?;
    Ok(1.0 / n.sqrt())
}

/// Heisenberg-limited phase uncertainty 1/N.
pub fn heisenberg_limit(n: f64) -> Result<f64> {
    check_count(n)?;
    Ok(1.0 / n)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairRegime {
    /// True when the pair flux stays strictly below the parametric threshold.
    pub individual_pairs: bool,
    /// threshold / flux
    pub margin: f64,
}

pub fn check_pair_regime(config: &SensorConfig) -> Result<PairRegime> {
    if !(config.pair_flux > 0.0 && config.parametric_threshold > 0.0) {
        return Err(Error::domain("pair_flux", "pair flux and threshold must be > 0"));
    }
    Ok(PairRegime {
        individual_pairs: config.pair_flux < config.parametric_threshold,
        margin: config.parametric_threshold / config.pair_flux,
    })
}

/// Fringes traversed over a phase span.
pub fn fringe_count(phase_span: f64) -> f64 {
    phase_span / (2.0 * PI)
}
