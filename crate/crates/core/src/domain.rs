//! Shared value types and unit conventions.
//!
//! Frequencies are in Hz (never angular), S21 is complex and dimensionless,
//! and powers are at the device input in watts.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Minimum number of points in a trace: the hanger model has seven real
/// parameters.
pub const MIN_TRACE_POINTS: usize = 7;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhysicalConstants {
    /// Reduced Planck constant, J*s.
    pub hbar: f64,
    /// Vacuum permeability, H/m.
    pub mu0: f64,
}

pub const CONSTANTS: PhysicalConstants = PhysicalConstants {
    hbar: 1.054_571_817e-34,
    mu0: 1.256_637_062_12e-6,
};

/// A measured or simulated transmission sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawTrace", into = "RawTrace")]
pub struct FrequencyTrace {
    frequencies: Vec<f64>,
    s21: Vec<Complex64>,
    drive_power_at_device: Option<f64>,
    label: String,
}

#[derive(Serialize, Deserialize)]
struct RawTrace {
    frequencies: Vec<f64>,
    s21: Vec<Complex64>,
    drive_power_at_device: Option<f64>,
    label: String,
}

impl TryFrom<RawTrace> for FrequencyTrace {
    type Error = Error;
    fn try_from(r: RawTrace) -> Result<Self> {
        FrequencyTrace::new(r.frequencies, r.s21, r.drive_power_at_device, r.label)
    }
}

impl From<FrequencyTrace> for RawTrace {
    fn from(t: FrequencyTrace) -> Self {
        RawTrace {
            frequencies: t.frequencies,
            s21: t.s21,
            drive_power_at_device: t.drive_power_at_device,
            label: t.label,
        }
    }
}

impl FrequencyTrace {
    /// Validates and builds a trace. Frequencies must be finite, positive and
    /// strictly increasing; every S21 sample must be finite and non-zero.
    pub fn new(
        frequencies: Vec<f64>,
        s21: Vec<Complex64>,
        drive_power_at_device: Option<f64>,
        label: impl Into<String>,
    ) -> Result<Self> {
        if frequencies.len() != s21.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} frequencies but {} S21 samples",
                frequencies.len(),
                s21.len()
            )));
        }
        if frequencies.len() < MIN_TRACE_POINTS {
            return Err(Error::InvalidInput(format!(
                "trace has {} points, at least {MIN_TRACE_POINTS} required",
                frequencies.len()
            )));
        }
        for (i, f) in frequencies.iter().enumerate() {
            if !f.is_finite() || *f <= 0.0 {
                return Err(Error::InvalidInput(format!("frequency #{i} = {f} is not a positive finite value")));
            }
        }
        if let Some(i) = frequencies.windows(2).position(|w| w[1] <= w[0]) {
            return Err(Error::InvalidInput(format!(
                "frequencies must be strictly increasing (violated at index {})",
                i + 1
            )));
        }
        for (i, z) in s21.iter().enumerate() {
            let m = z.norm();
            if !z.re.is_finite() || !z.im.is_finite() || !(m > 0.0) {
                return Err(Error::InvalidInput(format!("S21 sample #{i} = {z} must be finite and non-zero")));
            }
        }
        if let Some(p) = drive_power_at_device {
            if !p.is_finite() || p < 0.0 {
                return Err(Error::InvalidInput(format!("drive power {p} W must be finite and non-negative")));
            }
        }
        Ok(FrequencyTrace {
            frequencies,
            s21,
            drive_power_at_device,
            label: label.into(),
        })
    }

    pub fn frequencies(&self) -> &[f64] {
        &self.frequencies
    }

    pub fn s21(&self) -> &[Complex64] {
        &self.s21
    }

    pub fn len(&self) -> usize {
        self.frequencies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frequencies.is_empty()
    }

    pub fn drive_power_at_device(&self) -> Option<f64> {
        self.drive_power_at_device
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn points(&self) -> impl Iterator<Item = (f64, Complex64)> + '_ {
        self.frequencies.iter().copied().zip(self.s21.iter().copied())
    }

    pub fn span(&self) -> (f64, f64) {
        (self.frequencies[0], self.frequencies[self.frequencies.len() - 1])
    }

    /// Same frequencies and metadata, new samples (validated).
    pub fn with_s21(&self, s21: Vec<Complex64>) -> Result<Self> {
        FrequencyTrace::new(self.frequencies.clone(), s21, self.drive_power_at_device, self.label.clone())
    }

    pub fn with_power(mut self, power: Option<f64>) -> Self {
        self.drive_power_at_device = power;
        self
    }
}

/// The seven real parameters of the asymmetric hanger model
///
/// S21(f) = a e^{i alpha} e^{-i 2 pi f tau} [1 - (Q_L/|Q_c|) e^{i phi} / (1 + 2 i Q_L (f/fr - 1))]
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HangerParams {
    pub fr: f64,
    pub q_loaded: f64,
    pub q_coupling_mag: f64,
    pub phi: f64,
    pub amplitude_a: f64,
    pub alpha: f64,
    pub tau: f64,
}

impl HangerParams {
    pub fn evaluate(&self, f: f64) -> Complex64 {
        let env = Complex64::from_polar(
            self.amplitude_a,
            self.alpha - std::f64::consts::TAU * f * self.tau,
        );
        let k = Complex64::from_polar(self.q_loaded / self.q_coupling_mag, self.phi);
        let d = Complex64::new(1.0, 2.0 * self.q_loaded * (f / self.fr - 1.0));
        env * (Complex64::new(1.0, 0.0) - k / d)
    }

    /// Effective real coupling quality factor |Q_c| / cos(phi).
    pub fn q_coupling_effective(&self) -> f64 {
        self.q_coupling_mag / self.phi.cos()
    }
}

/// Result of a hanger fit: best-fit parameters with one-sigma uncertainties.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HangerFit {
    #[serde(flatten)]
    pub params: HangerParams,
    pub sigma: HangerParams,
    /// Covariance of (fr, q_loaded, q_coupling_mag, phi, amplitude_a, alpha, tau)
    /// in that order, row-major.
    pub covariance: Vec<[f64; 7]>,
    /// Residual sum of squares of the complex refinement.
    pub residual_ss: f64,
    pub points: usize,
}

impl HangerFit {
    pub fn fr(&self) -> f64 {
        self.params.fr
    }
    pub fn q_loaded(&self) -> f64 {
        self.params.q_loaded
    }
}

/// Internal quality factor of one mode at one operating point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeRecord {
    pub mode_id: String,
    pub frequency: f64,
    pub q_int: f64,
    pub q_int_sigma: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub photon_number: Option<f64>,
}

impl ModeRecord {
    pub fn new(mode_id: impl Into<String>, frequency: f64, q_int: f64, q_int_sigma: f64) -> Result<Self> {
        let r = ModeRecord {
            mode_id: mode_id.into(),
            frequency,
            q_int,
            q_int_sigma,
            photon_number: None,
        };
        r.validate()?;
        Ok(r)
    }

    pub fn with_photon_number(mut self, n: f64) -> Self {
        self.photon_number = Some(n);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.q_int > 0.0) || !self.q_int.is_finite() {
            return Err(Error::InvalidInput(format!("mode {}: q_int = {} must be positive", self.mode_id, self.q_int)));
        }
        if !(self.q_int_sigma >= 0.0) || !self.q_int_sigma.is_finite() {
            return Err(Error::InvalidInput(format!(
                "mode {}: q_int_sigma = {} must be non-negative",
                self.mode_id, self.q_int_sigma
            )));
        }
        if !(self.frequency > 0.0) {
            return Err(Error::InvalidInput(format!("mode {}: frequency must be positive", self.mode_id)));
        }
        Ok(())
    }

    /// Internal loss rate kappa = 1/Q_int and its first-order sigma.
    pub fn kappa(&self) -> (f64, f64) {
        (1.0 / self.q_int, self.q_int_sigma / (self.q_int * self.q_int))
    }
}

/// Converts dBm to watts.
pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

/// Converts a (magnitude dB, phase degrees) pair into complex S21.
pub fn s21_from_db_deg(mag_db: f64, phase_deg: f64) -> Complex64 {
    Complex64::from_polar(10f64.powf(mag_db / 20.0), phase_deg.to_radians())
}

pub fn s21_to_db_deg(z: Complex64) -> (f64, f64) {
    (20.0 * z.norm().log10(), z.arg().to_degrees())
}
