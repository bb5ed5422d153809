//! Intrinsic loss factors from internal quality factors of several modes.
//!
//! Each mode's internal loss is kappa_j = 1/Q_j = sum_i P_ji Gamma_i. Channels
//! whose loss factor is known independently ("fixed", e.g. package losses)
//! are subtracted first and their uncertainty is added in quadrature to the
//! measurement uncertainty. The remaining factors come from the weighted
//! least-squares solve with P~_ji = P_ji / sigma_j and kappa~_j = kappa_j / sigma_j:
//!
//! Gamma = C P~^T kappa~, C = (P~^T P~)^-1, sigma_Gamma_i = sqrt(C_ii).

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::domain::ModeRecord;
use crate::error::{Error, Result};
use crate::par::{self, Execution};
use crate::participation::{FactorModel, ParticipationMatrix};
use crate::tls::{self, TlsFit};

/// Condition threshold on the column-equilibrated weighted matrix.
const RANK_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorEstimate {
    pub value: f64,
    pub sigma: f64,
    /// |value| < 2 sigma.
    pub consistent_with_zero: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossFactorSet {
    /// Extracted (free) channels.
    pub factors: BTreeMap<String, FactorEstimate>,
    /// Order of the rows/columns of `covariance`.
    pub free_channels: Vec<String>,
    pub covariance: Vec<Vec<f64>>,
    /// Channels that were held at externally supplied values.
    pub fixed: BTreeMap<String, FactorModel>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub photon_number: Option<f64>,
}

impl LossFactorSet {
    /// Loss factor of channel `id` evaluated at frequency `f`.
    pub fn factor_at(&self, id: &str, f: f64) -> Option<(f64, f64)> {
        if let Some(e) = self.factors.get(id) {
            return Some((e.value, e.sigma));
        }
        self.fixed.get(id).map(|m| m.at(f))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelShare {
    /// p_i Gamma_i, the absolute loss 1/Q_i contributed by this channel.
    pub loss: f64,
    /// p_i Gamma_i / sum_k p_k Gamma_k.
    pub fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeBudget {
    pub mode_id: String,
    pub frequency: f64,
    pub total_loss: f64,
    pub channels: BTreeMap<String, ChannelShare>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossBudget {
    pub modes: Vec<ModeBudget>,
}

/// Per-mode loss budget for any channel -> factor lookup at the mode frequency.
pub fn budget_with<F>(matrix: &ParticipationMatrix, mut factor: F) -> Result<LossBudget>
where
    F: FnMut(&str, f64) -> Option<f64>,
{
    let mut modes = Vec::with_capacity(matrix.modes().len());
    for (j, m) in matrix.modes().iter().enumerate() {
        let mut losses = Vec::with_capacity(matrix.channels().len());
        for (i, c) in matrix.channels().iter().enumerate() {
            let g = factor(&c.id, m.freq_hz).ok_or_else(|| Error::MissingChannel(c.id.clone()))?;
            losses.push((c.id.clone(), matrix.value(j, i) * g));
        }
        let total: f64 = losses.iter().map(|(_, l)| l).sum();
        let channels = losses
            .into_iter()
            .map(|(id, loss)| {
                let fraction = if total != 0.0 { loss / total } else { 0.0 };
                (id, ChannelShare { loss, fraction })
            })
            .collect();
        modes.push(ModeBudget {
            mode_id: m.id.clone(),
            frequency: m.freq_hz,
            total_loss: total,
            channels,
        });
    }
    Ok(LossBudget { modes })
}

pub fn budget(matrix: &ParticipationMatrix, factors: &LossFactorSet) -> Result<LossBudget> {
    budget_with(matrix, |id, f| factors.factor_at(id, f).map(|(g, _)| g))
}

/// Weighted linear solve shared by extraction and the sensitivity map.
/// `p` is the row-weighted design matrix, `k` the weighted losses.
pub(crate) struct WeightedSolve {
    pub values: DVector<f64>,
    pub covariance: DMatrix<f64>,
}

pub(crate) fn weighted_solve(p: &DMatrix<f64>, k: Option<&DVector<f64>>, names: &[String]) -> Result<WeightedSolve> {
    let ncol = p.ncols();
    let scale: Vec<f64> = (0..ncol).map(|c| p.column(c).norm()).collect();
    let zero: Vec<String> = scale
        .iter()
        .zip(names)
        .filter(|(s, _)| !(**s > 0.0))
        .map(|(_, n)| n.clone())
        .collect();
    if !zero.is_empty() {
        return Err(Error::UnidentifiableChannels(zero));
    }
    let mut ps = p.clone();
    for (c, s) in scale.iter().enumerate() {
        ps.column_mut(c).scale_mut(1.0 / s);
    }
    let svd = ps.svd(true, true);
    let sv = &svd.singular_values;
    let smax = sv.max();
    let (kmin, smin) = sv.iter().enumerate().fold((0, f64::INFINITY), |a, (i, s)| if *s < a.1 { (i, *s) } else { a });
    let v_t = svd.v_t.as_ref().expect("V^T requested");
    if !(smin > RANK_TOLERANCE * smax) {
        let null = v_t.row(kmin);
        let big = null.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let cols = names
            .iter()
            .zip(null.iter())
            .filter(|(_, v)| v.abs() > 0.1 * big)
            .map(|(n, _)| n.clone())
            .collect();
        return Err(Error::UnidentifiableChannels(cols));
    }
    let u = svd.u.as_ref().expect("U requested");
    let mut cov_s = DMatrix::zeros(ncol, ncol);
    let mut sol_s = DVector::zeros(ncol);
    for i in 0..sv.len() {
        let v = v_t.row(i).transpose();
        cov_s += &v * v.transpose() / (sv[i] * sv[i]);
        if let Some(k) = k {
            let coef = u.column(i).dot(k) / sv[i];
            sol_s += v * coef;
        }
    }
    let values = DVector::from_fn(ncol, |i, _| sol_s[i] / scale[i]);
    let covariance = DMatrix::from_fn(ncol, ncol, |i, j| cov_s[(i, j)] / (scale[i] * scale[j]));
    Ok(WeightedSolve { values, covariance })
}

/// Extracts loss factors of all non-fixed channels from per-mode internal Q's.
pub fn extract(
    matrix: &ParticipationMatrix,
    modes: &[ModeRecord],
    fixed: &BTreeMap<String, FactorModel>,
) -> Result<LossFactorSet> {
    for id in fixed.keys() {
        if matrix.channel_index(id).is_none() {
            return Err(Error::InvalidInput(format!("fixed channel '{id}' is not a column of the participation matrix")));
        }
    }
    for m in fixed.values() {
        m.validate()?;
    }
    let free: Vec<usize> = (0..matrix.channels().len())
        .filter(|i| !fixed.contains_key(&matrix.channels()[*i].id))
        .collect();
    let free_names: Vec<String> = free.iter().map(|i| matrix.channels()[*i].id.clone()).collect();
    if free.is_empty() {
        return Err(Error::InvalidInput("every channel is fixed; nothing to extract".into()));
    }
    if modes.len() < free.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} modes cannot determine {} free channels ({})",
            modes.len(),
            free.len(),
            free_names.join(", ")
        )));
    }

    let mut rows = Vec::with_capacity(modes.len());
    for (n, rec) in modes.iter().enumerate() {
        rec.validate()?;
        if modes[..n].iter().any(|o| o.mode_id == rec.mode_id) {
            return Err(Error::InvalidInput(format!("mode '{}' appears twice", rec.mode_id)));
        }
        let j = matrix
            .mode_index(&rec.mode_id)
            .ok_or_else(|| Error::InvalidInput(format!("mode '{}' is not in the participation matrix", rec.mode_id)))?;
        let f = matrix.modes()[j].freq_hz;
        let (mut kappa, sk) = rec.kappa();
        let mut var = sk * sk;
        for (id, model) in fixed {
            let i = matrix.channel_index(id).expect("checked above");
            let (g, sg) = model.at(f);
            let p = matrix.value(j, i);
            kappa -= p * g;
            var += (p * sg) * (p * sg);
        }
        let sigma = var.sqrt();
        if !(sigma > 0.0) {
            return Err(Error::InvalidInput(format!("mode '{}' has zero loss uncertainty", rec.mode_id)));
        }
        rows.push((j, kappa, sigma));
    }

    let p = DMatrix::from_fn(rows.len(), free.len(), |r, c| matrix.value(rows[r].0, free[c]) / rows[r].2);
    let k = DVector::from_fn(rows.len(), |r, _| rows[r].1 / rows[r].2);
    let solved = weighted_solve(&p, Some(&k), &free_names)?;

    let factors = free_names
        .iter()
        .enumerate()
        .map(|(i, id)| {
            let value = solved.values[i];
            let sigma = solved.covariance[(i, i)].sqrt();
            (
                id.clone(),
                FactorEstimate {
                    value,
                    sigma,
                    consistent_with_zero: value.abs() < 2.0 * sigma,
                },
            )
        })
        .collect();
    let n = free.len();
    Ok(LossFactorSet {
        factors,
        free_channels: free_names,
        covariance: (0..n).map(|i| (0..n).map(|j| solved.covariance[(i, j)]).collect()).collect(),
        fixed: fixed.clone(),
        photon_number: None,
    })
}

/// Result of the median-relative-deviation outlier rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MrdSummary {
    pub median: f64,
    pub mrd: Vec<f64>,
    /// True for values with MRD > 3 (excluded).
    pub flags: Vec<bool>,
    pub kept: Vec<f64>,
    pub mean: f64,
    /// Population standard deviation of the kept values.
    pub std: f64,
}

pub const MRD_THRESHOLD: f64 = 3.0;

/// Flags values whose |x - median| / median exceeds 3 and summarizes the rest.
pub fn mrd_filter(values: &[f64]) -> Result<MrdSummary> {
    if values.len() < 3 {
        return Err(Error::InvalidInput(format!("MRD filter needs at least 3 values, got {}", values.len())));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("MRD filter input contains non-finite values".into()));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let median = if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    };
    if !(median > 0.0) {
        return Err(Error::InvalidInput("MRD is undefined for a non-positive median".into()));
    }
    let mrd: Vec<f64> = values.iter().map(|v| (v - median).abs() / median).collect();
    let flags: Vec<bool> = mrd.iter().map(|m| *m > MRD_THRESHOLD).collect();
    let kept: Vec<f64> = values.iter().zip(&flags).filter(|(_, f)| !**f).map(|(v, _)| *v).collect();
    let mean = kept.iter().sum::<f64>() / kept.len() as f64;
    let std = (kept.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / kept.len() as f64).sqrt();
    Ok(MrdSummary {
        median,
        mrd,
        flags,
        kept,
        mean,
        std,
    })
}

/// Runs `extract` at each photon number of `grid`, using each mode's TLS fit
/// to interpolate its internal Q.
pub fn extract_vs_power(
    matrix: &ParticipationMatrix,
    tls_fits: &BTreeMap<String, TlsFit>,
    grid: &[f64],
    fixed: &BTreeMap<String, FactorModel>,
) -> Result<Vec<LossFactorSet>> {
    extract_vs_power_with(Execution::default(), matrix, tls_fits, grid, fixed)
}

pub fn extract_vs_power_with(
    exec: Execution,
    matrix: &ParticipationMatrix,
    tls_fits: &BTreeMap<String, TlsFit>,
    grid: &[f64],
    fixed: &BTreeMap<String, FactorModel>,
) -> Result<Vec<LossFactorSet>> {
    for m in matrix.modes() {
        if !tls_fits.contains_key(&m.id) {
            return Err(Error::InvalidInput(format!("mode '{}' has no TLS fit", m.id)));
        }
    }
    par::map(exec, grid, |&n| {
        let records = matrix
            .modes()
            .iter()
            .map(|m| {
                let (q, s) = tls::q_int_at(&tls_fits[&m.id], n)?;
                Ok(ModeRecord::new(m.id.clone(), m.freq_hz, q, s)?.with_photon_number(n))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut set = extract(matrix, &records, fixed)?;
        set.photon_number = Some(n);
        Ok(set)
    })
    .into_iter()
    .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::participation::{ChannelKind, LossChannel, ModeSpec};

    fn matrix(values: Vec<Vec<f64>>, ids: &[&str]) -> ParticipationMatrix {
        let modes = (0..values.len())
            .map(|j| ModeSpec {
                id: format!("m{j}"),
                freq_hz: 5e9 + 1e8 * j as f64,
            })
            .collect();
        let channels = ids
            .iter()
            .map(|id| LossChannel {
                id: id.to_string(),
                kind: ChannelKind::for_id(id).unwrap(),
            })
            .collect();
        ParticipationMatrix::new(modes, channels, values).unwrap()
    }

    #[test]
    fn diagonal_system_decouples() {
        let m = matrix(vec![vec![0.5, 0.0], vec![0.0, 0.25]], &["surf", "bulk"]);
        let recs = vec![
            ModeRecord::new("m0", 5e9, 1e6, 1e4).unwrap(),
            ModeRecord::new("m1", 5.1e9, 4e6, 8e4).unwrap(),
        ];
        let set = extract(&m, &recs, &BTreeMap::new()).unwrap();
        let s = &set.factors["surf"];
        assert!((s.value - 1e-6 / 0.5).abs() < 1e-18);
        assert!((s.sigma - (1e4 / 1e12) / 0.5).abs() < 1e-20);
        let b = &set.factors["bulk"];
        assert!((b.value - 2.5e-7 / 0.25).abs() < 1e-18);
        assert!((b.sigma - (8e4 / 16e12) / 0.25).abs() < 1e-20);
    }

    #[test]
    fn collinear_columns_are_named() {
        let m = matrix(vec![vec![0.1, 0.2, 0.3], vec![0.2, 0.4, 0.1], vec![0.3, 0.6, 0.5]], &["surf", "bulk", "seam"]);
        let recs: Vec<ModeRecord> = (0..3).map(|j| ModeRecord::new(format!("m{j}"), 5e9, 1e6, 1e4).unwrap()).collect();
        match extract(&m, &recs, &BTreeMap::new()) {
            Err(Error::UnidentifiableChannels(c)) => assert_eq!(c, vec!["surf".to_string(), "bulk".to_string()]),
            other => panic!("expected unidentifiable channels, got {other:?}"),
        }
    }

    #[test]
    fn too_few_modes() {
        let m = matrix(vec![vec![0.1, 0.2]], &["surf", "bulk"]);
        let recs = vec![ModeRecord::new("m0", 5e9, 1e6, 1e4).unwrap()];
        assert!(matches!(extract(&m, &recs, &BTreeMap::new()), Err(Error::DimensionMismatch(_))));
    }

    #[test]
    fn budgets() {
        let m = matrix(vec![vec![0.5]], &["surf"]);
        let b = budget_with(&m, |_, _| Some(1e-3)).unwrap();
        assert!((b.modes[0].channels["surf"].fraction - 1.0).abs() < 1e-15);
        let m = matrix(vec![vec![0.5, 0.25]], &["surf", "bulk"]);
        let b = budget_with(&m, |id, _| Some(if id == "surf" { 1e-3 } else { 2e-3 })).unwrap();
        assert!((b.modes[0].channels["surf"].fraction - 0.5).abs() < 1e-15);
        assert!((b.modes[0].channels["bulk"].fraction - 0.5).abs() < 1e-15);
        assert!(matches!(budget_with(&m, |id, _| (id == "surf").then_some(1.0)), Err(Error::MissingChannel(c)) if c == "bulk"));
    }

    #[test]
    fn mrd_examples() {
        let s = mrd_filter(&[2.0, 2.0, 2.0, 2.0]).unwrap();
        assert!(s.flags.iter().all(|f| !f));
        assert_eq!(s.std, 0.0);
        let s = mrd_filter(&[1.0, 1.0, 1.0, 10.0]).unwrap();
        assert_eq!(s.flags, vec![false, false, false, true]);
        assert!((s.mrd[3] - 9.0).abs() < 1e-15);
        assert!(mrd_filter(&[1.0, 2.0]).is_err());
    }
}
