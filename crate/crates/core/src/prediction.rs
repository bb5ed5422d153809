//! Forward prediction of internal Q and T1 from participations and a
//! loss-factor library.

use std::collections::BTreeMap;
use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::extraction::{budget_with, LossBudget, LossFactorSet};
use crate::participation::{FactorModel, ParticipationMatrix};

/// One library entry: a loss factor (possibly frequency dependent) and where
/// it came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LibraryEntry {
    #[serde(flatten)]
    pub factor: FactorModel,
    #[serde(default)]
    pub provenance: String,
}

pub type Library = BTreeMap<String, LibraryEntry>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModePrediction {
    pub mode_id: String,
    pub frequency: f64,
    /// Total internal loss 1/Q_int and its sigma.
    pub loss: f64,
    pub loss_sigma: f64,
    pub q_int_predicted: f64,
    pub sigma: f64,
    /// T1 = Q / (2 pi f), in seconds.
    pub t1_predicted: f64,
    pub t1_sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub modes: Vec<ModePrediction>,
    pub budget: LossBudget,
}

fn mode_prediction(mode_id: &str, f: f64, loss: f64, var: f64) -> Result<ModePrediction> {
    if !(loss > 0.0) {
        return Err(Error::NoLossModel(mode_id.to_string()));
    }
    let q = 1.0 / loss;
    let sigma = var.max(0.0).sqrt() * q * q;
    Ok(ModePrediction {
        mode_id: mode_id.to_string(),
        frequency: f,
        loss,
        loss_sigma: var.max(0.0).sqrt(),
        q_int_predicted: q,
        sigma,
        t1_predicted: q / (TAU * f),
        t1_sigma: sigma / (TAU * f),
    })
}

/// Predicts every mode of `matrix` assuming independent library factors.
pub fn predict(matrix: &ParticipationMatrix, library: &Library) -> Result<Prediction> {
    for c in matrix.channels() {
        let entry = library.get(&c.id).ok_or_else(|| Error::MissingChannel(c.id.clone()))?;
        entry.factor.validate()?;
    }
    let mut modes = Vec::new();
    for (j, m) in matrix.modes().iter().enumerate() {
        let (mut loss, mut var) = (0.0, 0.0);
        for (i, c) in matrix.channels().iter().enumerate() {
            let (g, s) = library[&c.id].factor.at(m.freq_hz);
            let p = matrix.value(j, i);
            loss += p * g;
            var += (p * s) * (p * s);
        }
        modes.push(mode_prediction(&m.id, m.freq_hz, loss, var)?);
    }
    let budget = budget_with(matrix, |id, f| library.get(id).map(|e| e.factor.at(f).0))?;
    Ok(Prediction { modes, budget })
}

/// Predicts using an extracted factor set: the full covariance p^T C p for the
/// extracted channels plus independent contributions of its fixed channels.
pub fn predict_with_set(matrix: &ParticipationMatrix, set: &LossFactorSet) -> Result<Prediction> {
    for c in matrix.channels() {
        if set.factor_at(&c.id, 1.0).is_none() {
            return Err(Error::MissingChannel(c.id.clone()));
        }
    }
    let mut modes = Vec::new();
    for (j, m) in matrix.modes().iter().enumerate() {
        let f = m.freq_hz;
        let p_of = |id: &str| matrix.channel_index(id).map_or(0.0, |i| matrix.value(j, i));
        let mut loss = 0.0;
        let mut var = 0.0;
        for (a, ida) in set.free_channels.iter().enumerate() {
            let pa = p_of(ida);
            loss += pa * set.factors[ida].value;
            for (b, idb) in set.free_channels.iter().enumerate() {
                var += pa * set.covariance[a][b] * p_of(idb);
            }
        }
        for (id, model) in &set.fixed {
            let (g, s) = model.at(f);
            let p = p_of(id);
            loss += p * g;
            var += (p * s) * (p * s);
        }
        modes.push(mode_prediction(&m.id, f, loss, var)?);
    }
    let budget = budget_with(matrix, |id, f| set.factor_at(id, f).map(|(g, _)| g))?;
    Ok(Prediction { modes, budget })
}

/// A measured energy-relaxation time of one mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasuredT1 {
    pub mode_id: String,
    pub frequency: f64,
    pub t1: f64,
    #[serde(default)]
    pub t1_sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub mode_id: String,
    pub q_loaded_measured: f64,
    pub q_int_measured: f64,
    pub q_int_measured_sigma: f64,
    pub q_int_predicted: f64,
    pub q_int_predicted_sigma: f64,
    /// Relative change of the inferred Q_int caused by removing coupling loss.
    pub coupling_correction: f64,
    /// (measured - predicted) / combined sigma.
    pub z_score: f64,
}

/// Removes coupling loss from a measured T1 (1/(w T1) = 1/Q_int + 1/Q_c) and
/// compares the resulting internal Q with the prediction.
pub fn compare_measured(prediction: &ModePrediction, measured: &MeasuredT1, q_coupling: f64) -> Result<Comparison> {
    if !(q_coupling > 0.0) {
        return Err(Error::InvalidInput(format!("coupling Q {q_coupling} must be positive")));
    }
    if !(measured.t1 > 0.0) || !(measured.frequency > 0.0) || !(measured.t1_sigma >= 0.0) {
        return Err(Error::InvalidInput("measured T1 and frequency must be positive".into()));
    }
    let w = TAU * measured.frequency;
    let q_loaded = w * measured.t1;
    let inv = 1.0 / q_loaded - 1.0 / q_coupling;
    if !(inv > 0.0) {
        return Err(Error::Nonphysical(format!(
            "measured loaded loss {:e} does not exceed the coupling loss {:e}",
            1.0 / q_loaded,
            1.0 / q_coupling
        )));
    }
    let q_int = 1.0 / inv;
    // dQint/dT1 = Qint^2 / (w T1^2)
    let q_int_sigma = q_int * q_int / (w * measured.t1 * measured.t1) * measured.t1_sigma;
    let diff = q_int - prediction.q_int_predicted;
    let combined = (prediction.sigma * prediction.sigma + q_int_sigma * q_int_sigma).sqrt();
    let z_score = if combined > 0.0 {
        diff / combined
    } else if diff == 0.0 {
        0.0
    } else {
        diff.signum() * f64::INFINITY
    };
    Ok(Comparison {
        mode_id: measured.mode_id.clone(),
        q_loaded_measured: q_loaded,
        q_int_measured: q_int,
        q_int_measured_sigma: q_int_sigma,
        q_int_predicted: prediction.q_int_predicted,
        q_int_predicted_sigma: prediction.sigma,
        coupling_correction: q_int / q_loaded - 1.0,
        z_score,
    })
}
