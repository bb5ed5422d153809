//! Measurement pipeline: per-trace hanger fits with photon-number calibration,
//! per-mode power sweeps with a TLS fit, and internal Q's at a chosen photon
//! number ready for extraction.

use serde::{Deserialize, Serialize};

use crate::circle::{fit_hanger, internal_q};
use crate::domain::{FrequencyTrace, HangerFit, ModeRecord};
use crate::error::{Error, Result};
use crate::par::{self, Execution};
use crate::photon::mean_photon_number;
use crate::tls::{fit_tls, q_int_at, TlsFit, TlsPoint};

/// Analysis of one trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerPoint {
    pub label: String,
    /// Drive power at the device, W.
    pub power: f64,
    pub fit: HangerFit,
    pub q_int: f64,
    pub q_int_sigma: f64,
    /// On-resonance photon number at the fitted fr, Q_L and effective Q_c.
    pub photon_number: f64,
}

pub fn analyze_trace(trace: &FrequencyTrace) -> Result<PowerPoint> {
    let power = trace.drive_power_at_device().ok_or_else(|| {
        Error::InvalidInput(format!("trace '{}' carries no drive power at the device", trace.label()))
    })?;
    let fit = fit_hanger(trace)?;
    let (q_int, q_int_sigma) = internal_q(&fit)?;
    let p = &fit.params;
    let photon_number = mean_photon_number(power, p.fr, p.fr, p.q_loaded, p.q_coupling_effective())?;
    Ok(PowerPoint {
        label: trace.label().to_string(),
        power,
        fit,
        q_int,
        q_int_sigma,
        photon_number,
    })
}

/// Fits many traces; results keep the input order.
pub fn analyze_batch(exec: Execution, traces: &[FrequencyTrace]) -> Vec<Result<PowerPoint>> {
    par::map(exec, traces, analyze_trace)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeSweep {
    pub mode_id: String,
    /// Mean fitted resonance frequency over the sweep.
    pub frequency: f64,
    pub points: Vec<PowerPoint>,
    pub tls: TlsFit,
}

impl ModeSweep {
    pub fn record_at(&self, photon_number: f64) -> Result<ModeRecord> {
        let (q, s) = q_int_at(&self.tls, photon_number)?;
        Ok(ModeRecord::new(self.mode_id.clone(), self.frequency, q, s)?.with_photon_number(photon_number))
    }
}

/// Builds a mode's power sweep from already-analyzed points.
pub fn sweep_from_points(mode_id: &str, points: Vec<PowerPoint>) -> Result<ModeSweep> {
    if points.is_empty() {
        return Err(Error::InsufficientPowerRange(format!("mode '{mode_id}' has no traces")));
    }
    let tls_points: Vec<TlsPoint> = points
        .iter()
        .map(|p| TlsPoint {
            photon_number: p.photon_number,
            q_int: p.q_int,
            q_int_sigma: p.q_int_sigma,
        })
        .collect();
    let tls = fit_tls(&tls_points)?;
    let frequency = points.iter().map(|p| p.fit.params.fr).sum::<f64>() / points.len() as f64;
    Ok(ModeSweep {
        mode_id: mode_id.to_string(),
        frequency,
        points,
        tls,
    })
}

pub fn power_sweep(mode_id: &str, traces: &[FrequencyTrace]) -> Result<ModeSweep> {
    power_sweep_with(Execution::default(), mode_id, traces)
}

pub fn power_sweep_with(exec: Execution, mode_id: &str, traces: &[FrequencyTrace]) -> Result<ModeSweep> {
    let points = analyze_batch(exec, traces).into_iter().collect::<Result<Vec<_>>>()?;
    sweep_from_points(mode_id, points)
}

/// Power sweeps for several modes, parallel over every trace of every mode.
pub fn power_sweeps(exec: Execution, modes: &[(String, Vec<FrequencyTrace>)]) -> Result<Vec<ModeSweep>> {
    let flat: Vec<&FrequencyTrace> = modes.iter().flat_map(|(_, t)| t.iter()).collect();
    let mut fitted = par::map(exec, &flat, |t| analyze_trace(t)).into_iter();
    let mut out = Vec::with_capacity(modes.len());
    for (id, traces) in modes {
        let points = fitted.by_ref().take(traces.len()).collect::<Result<Vec<_>>>()?;
        out.push(sweep_from_points(id, points)?);
    }
    Ok(out)
}

/// Internal Q of every sweep interpolated to `photon_number`.
pub fn records_at(sweeps: &[ModeSweep], photon_number: f64) -> Result<Vec<ModeRecord>> {
    sweeps.iter().map(|s| s.record_at(photon_number)).collect()
}
