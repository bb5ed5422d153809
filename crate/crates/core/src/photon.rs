//! Drive power and photon-number calibration.

use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

use crate::domain::CONSTANTS;
use crate::error::{Error, Result};

/// Input-line description: source power and the frequency-dependent
/// attenuation between the source and the device.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LineBudget {
    #[serde(rename = "vna_power_dbm")]
    pub vna_power: f64,
    /// (frequency Hz, attenuation dB), frequencies increasing.
    #[serde(rename = "attenuation_table")]
    pub attenuation_vs_frequency: Vec<[f64; 2]>,
    #[serde(rename = "uncertainty_db")]
    pub attenuation_uncertainty: f64,
}

impl LineBudget {
    pub fn validate(&self) -> Result<()> {
        if self.attenuation_vs_frequency.is_empty() {
            return Err(Error::InvalidInput("attenuation table is empty".into()));
        }
        if self.attenuation_vs_frequency.iter().any(|[f, a]| !f.is_finite() || !a.is_finite() || *a < 0.0) {
            return Err(Error::InvalidInput("attenuation values must be finite and >= 0 dB".into()));
        }
        if self.attenuation_vs_frequency.windows(2).any(|w| w[1][0] <= w[0][0]) {
            return Err(Error::InvalidInput("attenuation table frequencies must be increasing".into()));
        }
        if !(self.attenuation_uncertainty >= 0.0) {
            return Err(Error::InvalidInput("attenuation uncertainty must be >= 0 dB".into()));
        }
        Ok(())
    }

    /// Attenuation in dB at `f`, linearly interpolated in dB.
    pub fn attenuation_at(&self, f: f64) -> Result<f64> {
        let t = &self.attenuation_vs_frequency;
        let (first, last) = (t[0][0], t[t.len() - 1][0]);
        if !(f >= first && f <= last) {
            return Err(Error::AttenuationUnknown(f));
        }
        let i = t.partition_point(|e| e[0] < f);
        if t[i][0] == f {
            return Ok(t[i][1]);
        }
        let ([f0, a0], [f1, a1]) = (t[i - 1], t[i]);
        Ok(a0 + (a1 - a0) * (f - f0) / (f1 - f0))
    }
}

/// Power delivered to the device input, in W, with the one-sigma spread
/// implied by the dB uncertainty (upper excursion P (10^{u/10} - 1)).
pub fn power_at_device(budget: &LineBudget, f: f64) -> Result<(f64, f64)> {
    budget.validate()?;
    let a = budget.attenuation_at(f)?;
    let p = 10f64.powf((budget.vna_power - a - 30.0) / 10.0);
    let sigma = p * (10f64.powf(budget.attenuation_uncertainty / 10.0) - 1.0);
    Ok((p, sigma))
}

/// Average circulating photon number with separate coupling rate Q_plus
/// (general, possibly asymmetric coupling):
///
/// n = [4 Q_L^2 / (w_r Q_+)] / [1 + 4 Q_L^2 (w/w_r - 1)^2] * P / (hbar w)
pub fn mean_photon_number_general(p_in: f64, fr: f64, f_drive: f64, q_loaded: f64, q_plus: f64) -> f64 {
    let wr = TAU * fr;
    let w = TAU * f_drive;
    let det = 2.0 * q_loaded * (w / wr - 1.0);
    let lorentz = 4.0 * q_loaded * q_loaded / (wr * q_plus) / (1.0 + det * det);
    lorentz * p_in / (CONSTANTS.hbar * w)
}

/// Average photon number for a symmetric hanger (Q_+ = 2 Q_c). On resonance
/// this is 2 Q_L^2 P / (hbar w_r^2 Q_c).
pub fn mean_photon_number(p_in: f64, fr: f64, f_drive: f64, q_loaded: f64, q_coupling: f64) -> Result<f64> {
    if !(q_loaded > 0.0) || !(q_coupling > 0.0) {
        return Err(Error::InvalidInput(format!(
            "quality factors must be positive (Q_L = {q_loaded}, Q_c = {q_coupling})"
        )));
    }
    if !(fr > 0.0) || !(f_drive > 0.0) || !(p_in >= 0.0) {
        return Err(Error::InvalidInput("frequencies must be positive and power non-negative".into()));
    }
    Ok(mean_photon_number_general(p_in, fr, f_drive, q_loaded, 2.0 * q_coupling))
}

/// Coupling Q from a driven qubit Rabi rate (rad/s): Q_c = 2 P / (hbar Omega^2).
pub fn qc_from_rabi(p_in: f64, rabi_rate: f64) -> Result<f64> {
    if !(rabi_rate > 0.0) {
        return Err(Error::InvalidInput(format!("Rabi rate {rabi_rate} rad/s must be positive")));
    }
    Ok(2.0 * p_in / (CONSTANTS.hbar * rabi_rate * rabi_rate))
}
