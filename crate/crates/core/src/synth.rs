//! Forward model for tests and Monte-Carlo studies: noisy hanger traces and
//! whole multi-mode, multi-power datasets generated from ground truth.
//!
//! Randomness is a ChaCha8 generator seeded from the truth's seed, with one
//! stream per (mode, power) task, so output is bit-identical regardless of
//! thread count or execution order.

use std::collections::BTreeMap;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::domain::{dbm_to_watts, FrequencyTrace, HangerParams};
use crate::error::{Error, Result};
use crate::par::{self, Execution};
use crate::participation::{FactorModel, ParticipationMatrix};
use crate::photon::mean_photon_number;
use crate::sweep::{plan_phase_uniform, SweepPlan};
use crate::tls::TlsParams;

pub const MAX_PHOTON_ITERATIONS: usize = 100;
pub const PHOTON_DAMPING: f64 = 0.5;
const PHOTON_TOLERANCE: f64 = 1e-12;

/// Ground truth for a single trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceTruth {
    pub params: HangerParams,
    /// Complex RMS of the additive noise; each quadrature gets rms/sqrt(2).
    pub noise_rms: f64,
    pub seed: u64,
    #[serde(default)]
    pub stream: u64,
    /// Drive power at the device in W, stamped on the trace.
    #[serde(default)]
    pub power: Option<f64>,
    #[serde(default)]
    pub label: String,
}

pub fn generate_trace(truth: &TraceTruth, plan: &SweepPlan) -> Result<FrequencyTrace> {
    if !(truth.noise_rms >= 0.0) || !truth.noise_rms.is_finite() {
        return Err(Error::InvalidInput(format!("noise rms {} must be non-negative", truth.noise_rms)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(truth.seed);
    rng.set_stream(truth.stream);
    let normal = Normal::new(0.0, truth.noise_rms / std::f64::consts::SQRT_2)
        .map_err(|e| Error::InvalidInput(e.to_string()))?;
    let s21: Vec<Complex64> = plan
        .points
        .iter()
        .map(|&f| {
            let z = truth.params.evaluate(f);
            if truth.noise_rms > 0.0 {
                z + Complex64::new(normal.sample(&mut rng), normal.sample(&mut rng))
            } else {
                z
            }
        })
        .collect();
    FrequencyTrace::new(plan.points.clone(), s21, truth.power, truth.label.clone())
}

/// Coupling and line parameters of one simulated mode. The internal loss
/// comes from the participation matrix unless `internal_loss` overrides it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeTruth {
    /// |Q_c|.
    pub q_coupling: f64,
    #[serde(default)]
    pub phi: f64,
    #[serde(default = "one")]
    pub amplitude: f64,
    #[serde(default)]
    pub alpha: f64,
    #[serde(default)]
    pub tau: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub internal_loss: Option<TlsParams>,
}

fn one() -> f64 {
    1.0
}

fn default_points() -> usize {
    101
}

fn default_weight() -> f64 {
    5.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetTruth {
    pub seed: u64,
    pub snr_db: f64,
    /// Drive powers at the device, dBm.
    pub powers_dbm: Vec<f64>,
    #[serde(default = "default_points")]
    pub sweep_points: usize,
    /// Sweep span in units of the loaded linewidth.
    #[serde(default = "default_weight")]
    pub sweep_weight: f64,
    /// Power-independent channels.
    #[serde(default)]
    pub loss_factors: BTreeMap<String, FactorModel>,
    /// Power-dependent channels: Gamma(n) = q0_inv + A / sqrt(1 + (n/n_c)^beta).
    #[serde(default)]
    pub tls_channels: BTreeMap<String, TlsParams>,
    pub modes: BTreeMap<String, ModeTruth>,
}

impl DatasetTruth {
    fn check(&self, matrix: &ParticipationMatrix) -> Result<()> {
        if !self.snr_db.is_finite() {
            return Err(Error::InvalidInput("snr_db must be finite".into()));
        }
        if self.powers_dbm.is_empty() || self.powers_dbm.iter().any(|p| !p.is_finite()) {
            return Err(Error::InvalidInput("powers_dbm must be a non-empty list of finite values".into()));
        }
        for id in self.loss_factors.keys().chain(self.tls_channels.keys()) {
            if matrix.channel_index(id).is_none() {
                return Err(Error::InvalidInput(format!("truth channel '{id}' is not in the participation matrix")));
            }
        }
        for id in self.tls_channels.keys() {
            if self.loss_factors.contains_key(id) {
                return Err(Error::InvalidInput(format!("channel '{id}' is given both a constant and a TLS law")));
            }
        }
        for m in matrix.modes() {
            let t = self
                .modes
                .get(&m.id)
                .ok_or_else(|| Error::InvalidInput(format!("mode '{}' has no truth entry", m.id)))?;
            if !(t.q_coupling > 0.0) || !(t.phi.abs() < std::f64::consts::FRAC_PI_2) || !(t.amplitude > 0.0) {
                return Err(Error::InvalidInput(format!(
                    "mode '{}': need q_coupling > 0, |phi| < pi/2 and amplitude > 0",
                    m.id
                )));
            }
            if t.internal_loss.is_none() {
                for c in matrix.channels() {
                    if !self.loss_factors.contains_key(&c.id) && !self.tls_channels.contains_key(&c.id) {
                        return Err(Error::MissingChannel(c.id.clone()));
                    }
                }
            }
        }
        Ok(())
    }

    /// True loss factor of `channel` at photon number `n` and frequency `f`.
    pub fn factor_at(&self, channel: &str, n: f64, f: f64) -> Option<f64> {
        if let Some(t) = self.tls_channels.get(channel) {
            return Some(t.loss_at(n));
        }
        self.loss_factors.get(channel).map(|m| m.at(f).0)
    }

    /// True internal loss 1/Q_int of mode `j` at photon number `n`.
    pub fn internal_loss(&self, matrix: &ParticipationMatrix, j: usize, n: f64) -> f64 {
        let mode = &matrix.modes()[j];
        if let Some(law) = self.modes[&mode.id].internal_loss {
            return law.loss_at(n);
        }
        matrix
            .channels()
            .iter()
            .enumerate()
            .map(|(i, c)| matrix.value(j, i) * self.factor_at(&c.id, n, mode.freq_hz).unwrap_or(0.0))
            .sum()
    }
}

/// Solution of the photon-number self-consistency problem for one drive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OperatingPoint {
    pub photon_number: f64,
    pub q_int: f64,
    pub q_loaded: f64,
    pub iterations: usize,
    /// Relative change of Q_L in the first iteration.
    pub first_step_change: f64,
}

/// Finds n such that n = nbar(P, Q_L(n)) with 1/Q_L = loss(n) + 1/Q_c, using
/// a damped fixed-point iteration started from the weak-drive Q_L.
pub fn solve_operating_point(
    power: f64,
    fr: f64,
    q_coupling_eff: f64,
    loss: impl Fn(f64) -> f64,
) -> Result<OperatingPoint> {
    let ql_at = |n: f64| 1.0 / (loss(n) + 1.0 / q_coupling_eff);
    let mut ql = ql_at(0.0);
    let mut n = mean_photon_number(power, fr, fr, ql, q_coupling_eff)?;
    let mut first_step_change = f64::NAN;
    for it in 1..=MAX_PHOTON_ITERATIONS {
        let ql_new = ql_at(n);
        let change = ((ql_new - ql) / ql).abs();
        if it == 1 {
            first_step_change = change;
        }
        let target = mean_photon_number(power, fr, fr, ql_new, q_coupling_eff)?;
        let n_new = (1.0 - PHOTON_DAMPING) * n + PHOTON_DAMPING * target;
        ql = ql_new;
        let done = change < PHOTON_TOLERANCE && (n_new - n).abs() <= PHOTON_TOLERANCE * n.max(f64::MIN_POSITIVE);
        n = n_new;
        if done {
            return Ok(OperatingPoint {
                photon_number: n,
                q_int: 1.0 / loss(n),
                q_loaded: ql,
                iterations: it,
                first_step_change,
            });
        }
    }
    Err(Error::NonConvergence {
        stage: "photon-number",
        detail: format!("self-consistent photon number not reached in {MAX_PHOTON_ITERATIONS} iterations"),
        residual: ((ql_at(n) - ql) / ql).abs(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulatedTrace {
    pub mode_id: String,
    pub power_dbm: f64,
    pub operating_point: OperatingPoint,
    pub params: HangerParams,
    pub trace: FrequencyTrace,
}

pub fn generate_dataset(truth: &DatasetTruth, matrix: &ParticipationMatrix) -> Result<Vec<SimulatedTrace>> {
    generate_dataset_with(Execution::default(), truth, matrix)
}

/// Traces ordered mode-major (matrix order), then by the order of `powers_dbm`.
pub fn generate_dataset_with(
    exec: Execution,
    truth: &DatasetTruth,
    matrix: &ParticipationMatrix,
) -> Result<Vec<SimulatedTrace>> {
    truth.check(matrix)?;
    let np = truth.powers_dbm.len();
    par::map_range(exec, matrix.modes().len() * np, |task| {
        let (j, k) = (task / np, task % np);
        let mode = &matrix.modes()[j];
        let mt = &truth.modes[&mode.id];
        let qc_eff = mt.q_coupling / mt.phi.cos();
        let p_dbm = truth.powers_dbm[k];
        let power = dbm_to_watts(p_dbm);
        let op = solve_operating_point(power, mode.freq_hz, qc_eff, |n| truth.internal_loss(matrix, j, n))?;
        let params = HangerParams {
            fr: mode.freq_hz,
            q_loaded: op.q_loaded,
            q_coupling_mag: mt.q_coupling,
            phi: mt.phi,
            amplitude_a: mt.amplitude,
            alpha: mt.alpha,
            tau: mt.tau,
        };
        let span = truth.sweep_weight * mode.freq_hz / op.q_loaded;
        let plan = plan_phase_uniform(mode.freq_hz, span, truth.sweep_weight, truth.sweep_points)?;
        let trace = generate_trace(
            &TraceTruth {
                params,
                noise_rms: mt.amplitude * 10f64.powf(-truth.snr_db / 20.0),
                seed: truth.seed,
                stream: task as u64,
                power: Some(power),
                label: format!("{}@{}dBm", mode.id, p_dbm),
            },
            &plan,
        )?;
        Ok(SimulatedTrace {
            mode_id: mode.id.clone(),
            power_dbm: p_dbm,
            operating_point: op,
            params,
            trace,
        })
    })
    .into_iter()
    .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::participation::{ChannelKind, LossChannel, ModeSpec};

    fn truth_params() -> HangerParams {
        HangerParams {
            fr: 6e9,
            q_loaded: 5e5,
            q_coupling_mag: 1e6,
            phi: 0.2,
            amplitude_a: 0.3,
            alpha: 1.0,
            tau: 40e-9,
        }
    }

    fn plan() -> SweepPlan {
        plan_phase_uniform(6e9, 5.0 * 6e9 / 5e5, 5.0, 51).unwrap()
    }

    #[test]
    fn noiseless_trace_is_the_model() {
        let t = TraceTruth {
            params: truth_params(),
            noise_rms: 0.0,
            seed: 1,
            stream: 0,
            power: Some(1e-15),
            label: "x".into(),
        };
        let tr = generate_trace(&t, &plan()).unwrap();
        for (f, z) in tr.points() {
            assert_eq!(z, t.params.evaluate(f));
        }
        assert_eq!(tr.drive_power_at_device(), Some(1e-15));
    }

    #[test]
    fn same_seed_same_trace() {
        let mut t = TraceTruth {
            params: truth_params(),
            noise_rms: 1e-3,
            seed: 42,
            stream: 3,
            power: None,
            label: String::new(),
        };
        let a = generate_trace(&t, &plan()).unwrap();
        let b = generate_trace(&t, &plan()).unwrap();
        assert_eq!(a, b);
        t.stream = 4;
        let c = generate_trace(&t, &plan()).unwrap();
        assert_ne!(a, c);
    }

    fn one_mode_matrix() -> ParticipationMatrix {
        ParticipationMatrix::new(
            vec![ModeSpec { id: "r".into(), freq_hz: 6e9 }],
            vec![LossChannel {
                id: "surf".into(),
                kind: ChannelKind::for_id("surf").unwrap(),
            }],
            vec![vec![1e-3]],
        )
        .unwrap()
    }

    fn dataset_truth() -> DatasetTruth {
        DatasetTruth {
            seed: 7,
            snr_db: 40.0,
            powers_dbm: vec![-160.0, -140.0, -120.0],
            sweep_points: 51,
            sweep_weight: 5.0,
            loss_factors: BTreeMap::new(),
            tls_channels: BTreeMap::from([(
                "surf".to_string(),
                TlsParams {
                    q0_inv: 1e-4,
                    tls_amplitude: 5e-4,
                    n_critical: 10.0,
                    beta: 0.8,
                },
            )]),
            modes: BTreeMap::from([(
                "r".to_string(),
                ModeTruth {
                    q_coupling: 1e6,
                    phi: 0.1,
                    amplitude: 1.0,
                    alpha: 0.0,
                    tau: 0.0,
                    internal_loss: None,
                },
            )]),
        }
    }

    #[test]
    fn weak_drive_converges_immediately() {
        let op = solve_operating_point(1e-30, 6e9, 1e6, |n| 1e-6 + 1e-6 / (1.0 + n).sqrt()).unwrap();
        assert!(op.first_step_change < 1e-9);
        assert!(op.photon_number < 1e-3);
    }

    #[test]
    fn operating_point_is_self_consistent() {
        let truth = dataset_truth();
        let m = one_mode_matrix();
        let qc = 1e6 / 0.1f64.cos();
        for p in [-160.0, -130.0, -100.0] {
            let op = solve_operating_point(dbm_to_watts(p), 6e9, qc, |n| truth.internal_loss(&m, 0, n)).unwrap();
            let ql = 1.0 / (truth.internal_loss(&m, 0, op.photon_number) + 1.0 / qc);
            assert!(((ql - op.q_loaded) / ql).abs() < 1e-10);
            let n = mean_photon_number(dbm_to_watts(p), 6e9, 6e9, ql, qc).unwrap();
            assert!(((n - op.photon_number) / n).abs() < 1e-9);
        }
    }

    #[test]
    fn dataset_is_deterministic_and_ordered() {
        let truth = dataset_truth();
        let m = one_mode_matrix();
        let a = generate_dataset_with(Execution::Sequential, &truth, &m).unwrap();
        let b = generate_dataset(&truth, &m).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 3);
        assert!(a.windows(2).all(|w| w[1].operating_point.photon_number > w[0].operating_point.photon_number));
        assert!(a.windows(2).all(|w| w[1].operating_point.q_int > w[0].operating_point.q_int));
    }

    #[test]
    fn missing_truth_channel_is_an_error() {
        let mut truth = dataset_truth();
        truth.tls_channels.clear();
        assert!(matches!(generate_dataset(&truth, &one_mode_matrix()), Err(Error::MissingChannel(_))));
    }
}
