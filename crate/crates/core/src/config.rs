//! Physical parameters of one interferometric sensor.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    Classical,
    Quantum,
}

impl Scheme {
    pub fn as_str(self) -> &'static str {
        match self {
            Scheme::Classical => "classical",
            Scheme::Quantum => "quantum",
        }
    }
}

impl std::fmt::Display for Scheme {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "classical" => Ok(Scheme::Classical),
            "quantum" => Ok(Scheme::Quantum),
            other => Err(Error::Parse(format!(
                "unknown scheme `{other}` (expected classical|quantum)"
            ))),
        }
    }
}

pub const LAMBDA_PUMP_NM: f64 = 532.0;
pub const LAMBDA_SIGNAL_NM: f64 = 1109.0;
pub const LAMBDA_IDLER_NM: f64 = 1023.0;
pub const LAMBDA_CLASSICAL_NM: f64 = 1064.0;
/// Photons per second entering the interferometer in the noise benchmark.
pub const PHOTON_RATE: f64 = 2.14e6;
pub const PAIR_FLUX: f64 = 1.65e8;
pub const PARAMETRIC_THRESHOLD: f64 = 7.02e12;
/// Lower bound on the quantum interferometer's internal transmissivity.
pub const ETA_INT_QUANTUM: f64 = 0.74;
/// Measured raw fringe visibility of the quantum sensor.
pub const VISIBILITY_QUANTUM: f64 = 0.85;

/// All physical parameters of one sensor.
///
/// `eta_int` and `visibility` refer to the sensor's own scheme: they are
/// η_int,c / ν_c for a classical sensor and η_int,q / ν_q for a quantum one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SensorConfig {
    pub scheme: Scheme,
    pub lambda_pump_nm: f64,
    pub lambda_signal_nm: f64,
    pub lambda_idler_nm: f64,
    pub lambda_classical_nm: f64,
    /// Photons per second entering the interferometer.
    pub photon_rate: f64,
    pub eta_ext: f64,
    pub eta_int: f64,
    pub visibility: f64,
    pub pair_flux: f64,
    pub parametric_threshold: f64,
    /// Additive dark counts per second and detector.
    pub dark_count_rate: f64,
}

impl Default for SensorConfig {
    fn default() -> Self {
        Self::classical()
    }
}

impl SensorConfig {
    /// Ideal classical Michelson sensor (η_int = ν = 1).
    pub fn classical() -> Self {
        SensorConfig {
            scheme: Scheme::Classical,
            lambda_pump_nm: LAMBDA_PUMP_NM,
            lambda_signal_nm: LAMBDA_SIGNAL_NM,
            lambda_idler_nm: LAMBDA_IDLER_NM,
            lambda_classical_nm: LAMBDA_CLASSICAL_NM,
            photon_rate: PHOTON_RATE,
            eta_ext: 1.0,
            eta_int: 1.0,
            visibility: 1.0,
            pair_flux: PAIR_FLUX,
            parametric_threshold: PARAMETRIC_THRESHOLD,
            dark_count_rate: 0.0,
        }
    }

    /// Quantum sensor at the measured operating point.
    pub fn quantum() -> Self {
        SensorConfig {
            scheme: Scheme::Quantum,
            eta_int: ETA_INT_QUANTUM,
            visibility: VISIBILITY_QUANTUM,
            ..Self::classical()
        }
    }

    pub fn for_scheme(scheme: Scheme) -> Self {
        match scheme {
            Scheme::Classical => Self::classical(),
            Scheme::Quantum => Self::quantum(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("lambda_pump_nm", self.lambda_pump_nm),
            ("lambda_signal_nm", self.lambda_signal_nm),
            ("lambda_idler_nm", self.lambda_idler_nm),
            ("lambda_classical_nm", self.lambda_classical_nm),
            ("photon_rate", self.photon_rate),
            ("pair_flux", self.pair_flux),
            ("parametric_threshold", self.parametric_threshold),
        ];
        for (field, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::domain(field, format!("must be finite and > 0, got {v}")));
            }
        }
        for (field, v) in [("eta_ext", self.eta_ext), ("eta_int", self.eta_int)] {
            if !(v > 0.0 && v <= 1.0) {
                return Err(Error::domain(field, format!("must lie in (0, 1], got {v}")));
            }
        }
        if !(0.0..=1.0).contains(&self.visibility) {
            return Err(Error::domain(
                "visibility",
                format!("must lie in [0, 1], got {}", self.visibility),
            ));
        }
        if !(self.dark_count_rate.is_finite() && self.dark_count_rate >= 0.0) {
            return Err(Error::domain(
                "dark_count_rate",
                format!("must be finite and >= 0, got {}", self.dark_count_rate),
            ));
        }
        Ok(())
    }

    /// Detection efficiency per photon entering the interferometer.
    ///
    /// Classical: η_ext·η_int. Quantum: R photons form R/2 pairs and each
    /// surviving pair yields one detected signal photon with probability
    /// η_ext·(η_int+1)/2, so the per-input-photon efficiency is
    /// η_ext·(η_int+1)/4. This reproduces S_q at the quadrature point.
    pub fn detection_efficiency(&self) -> f64 {
        match self.scheme {
            Scheme::Classical => self.eta_ext * self.eta_int,
            Scheme::Quantum => self.eta_ext * (self.eta_int + 1.0) / 4.0,
        }
    }

    /// Optical phase per nanometre of mirror displacement (double pass).
    pub fn phase_per_nm(&self) -> f64 {
        use std::f64::consts::PI;
        match self.scheme {
            Scheme::Classical => 4.0 * PI / self.lambda_classical_nm,
            Scheme::Quantum => 4.0 * PI * (1.0 / self.lambda_signal_nm + 1.0 / self.lambda_idler_nm),
        }
    }

    /// Ratio between the optical phase and the reported mechanical phase.
    pub fn phase_multiplicity(&self) -> f64 {
        match self.scheme {
            Scheme::Classical => 1.0,
            Scheme::Quantum => 2.0,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        SensorConfig::classical().validate().unwrap();
        SensorConfig::quantum().validate().unwrap();
    }

    #[test]
    fn rejects_out_of_range() {
        let mut c = SensorConfig::quantum();
        c.visibility = 1.2;
        assert!(matches!(c.validate(), Err(Error::Domain { field: "visibility", .. })));
        let mut c = SensorConfig::quantum();
        c.eta_ext = 0.0;
        assert!(matches!(c.validate(), Err(Error::Domain { field: "eta_ext", .. })));
        let mut c = SensorConfig::classical();
        c.lambda_signal_nm = -1.0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn scheme_parses() {
        assert_eq!("Quantum".parse::<Scheme>().unwrap(), Scheme::Quantum);
        assert!("laser".parse::<Scheme>().is_err());
    }
}
