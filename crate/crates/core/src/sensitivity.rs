//! Measurement-sensitivity maps: over a log grid of two loss factors, the
//! fractional uncertainty with which a device design would resolve each of
//! them, given a fixed fractional uncertainty on every measured Q.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::extraction::weighted_solve;
use crate::par::{self, Execution};
use crate::participation::{FactorModel, ParticipationMatrix};

/// Long-term scatter of measured internal Q's.
pub const DEFAULT_MEAS_FRACTIONAL_SIGMA: f64 = 0.10;
pub const DEFAULT_GRID_POINTS: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AxisSpec {
    pub channel: String,
    pub min: f64,
    pub max: f64,
    pub points: usize,
}

impl AxisSpec {
    /// Default log range for a channel id, 64 points.
    pub fn default_for(channel: &str) -> AxisSpec {
        let (min, max) = match channel {
            "bulk" => (1e-10, 1e-5),
            "seam" | "seam_ta_al" => (1e-5, 1.0),
            "pkg_cond" => (1e-6, 1e-1),
            "pkg_ma" => (1e-4, 1.0),
            _ => (1e-7, 1e-2),
        };
        AxisSpec {
            channel: channel.to_string(),
            min,
            max,
            points: DEFAULT_GRID_POINTS,
        }
    }

    pub fn values(&self) -> Result<Vec<f64>> {
        if self.points < 2 || !(self.min > 0.0) || !(self.max > self.min) || !self.max.is_finite() {
            return Err(Error::InvalidInput(format!(
                "degenerate grid for '{}': need >= 2 points and 0 < min < max (got {} points, [{}, {}])",
                self.channel, self.points, self.min, self.max
            )));
        }
        let (a, b) = (self.min.ln(), self.max.ln());
        let n = self.points - 1;
        Ok((0..self.points)
            .map(|k| match k {
                0 => self.min,
                k if k == n => self.max,
                k => (a + (b - a) * k as f64 / n as f64).exp(),
            })
            .collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityMap {
    pub x: AxisSpec,
    pub y: AxisSpec,
    pub x_values: Vec<f64>,
    pub y_values: Vec<f64>,
    pub meas_fractional_sigma: f64,
    /// sigma/Gamma of the x channel, indexed [iy][ix].
    pub fractional_error_x: Vec<Vec<f64>>,
    pub fractional_error_y: Vec<Vec<f64>>,
    pub resolvable_x: Vec<Vec<bool>>,
    pub resolvable_y: Vec<Vec<bool>>,
}

impl SensitivityMap {
    /// Smallest x-channel factor resolvable anywhere on the map.
    pub fn floor_x(&self) -> Option<f64> {
        floor(&self.resolvable_x, |_, ix| self.x_values[ix])
    }

    pub fn floor_y(&self) -> Option<f64> {
        floor(&self.resolvable_y, |iy, _| self.y_values[iy])
    }
}

fn floor(mask: &[Vec<bool>], value: impl Fn(usize, usize) -> f64) -> Option<f64> {
    let mut best: Option<f64> = None;
    for (iy, row) in mask.iter().enumerate() {
        for (ix, ok) in row.iter().enumerate() {
            if *ok {
                let v = value(iy, ix);
                best = Some(best.map_or(v, |b| b.min(v)));
            }
        }
    }
    best
}

pub fn sensitivity_map(
    matrix: &ParticipationMatrix,
    fixed: &BTreeMap<String, FactorModel>,
    x: &AxisSpec,
    y: &AxisSpec,
    meas_fractional_sigma: f64,
) -> Result<SensitivityMap> {
    sensitivity_map_with(Execution::default(), matrix, fixed, x, y, meas_fractional_sigma)
}

pub fn sensitivity_map_with(
    exec: Execution,
    matrix: &ParticipationMatrix,
    fixed: &BTreeMap<String, FactorModel>,
    x: &AxisSpec,
    y: &AxisSpec,
    meas_fractional_sigma: f64,
) -> Result<SensitivityMap> {
    if !(meas_fractional_sigma > 0.0) {
        return Err(Error::InvalidInput("measurement fractional sigma must be positive".into()));
    }
    if x.channel == y.channel {
        return Err(Error::InvalidInput("the two axes must be different channels".into()));
    }
    let ix = matrix
        .channel_index(&x.channel)
        .ok_or_else(|| Error::MissingChannel(x.channel.clone()))?;
    let iy = matrix
        .channel_index(&y.channel)
        .ok_or_else(|| Error::MissingChannel(y.channel.clone()))?;
    for id in fixed.keys() {
        if id == &x.channel || id == &y.channel {
            return Err(Error::InvalidInput(format!("axis channel '{id}' cannot also be fixed")));
        }
    }
    for c in matrix.channels() {
        if c.id != x.channel && c.id != y.channel && !fixed.contains_key(&c.id) {
            return Err(Error::InvalidInput(format!(
                "channel '{}' is neither an axis nor fixed; exactly two channels may vary",
                c.id
            )));
        }
    }
    let xv = x.values()?;
    let yv = y.values()?;
    let names = [x.channel.clone(), y.channel.clone()];

    let nm = matrix.modes().len();
    let fixed_loss: Vec<f64> = (0..nm)
        .map(|j| {
            let f = matrix.modes()[j].freq_hz;
            fixed
                .iter()
                .map(|(id, m)| matrix.value(j, matrix.channel_index(id).expect("checked")) * m.at(f).0)
                .sum()
        })
        .collect();

    // Fail early (once) if the two free columns are not independent.
    let probe = DMatrix::from_fn(nm, 2, |j, c| matrix.value(j, if c == 0 { ix } else { iy }));
    weighted_solve(&probe, None, &names)?;

    let rows: Vec<Vec<(f64, f64)>> = par::map_range(exec, yv.len(), |r| {
        let gy = yv[r];
        xv.iter()
            .map(|&gx| {
                let p = DMatrix::from_fn(nm, 2, |j, c| {
                    let kappa = matrix.value(j, ix) * gx + matrix.value(j, iy) * gy + fixed_loss[j];
                    let sigma = meas_fractional_sigma * kappa;
                    matrix.value(j, if c == 0 { ix } else { iy }) / sigma
                });
                match weighted_solve(&p, None, &names) {
                    Ok(s) => (s.covariance[(0, 0)].sqrt() / gx, s.covariance[(1, 1)].sqrt() / gy),
                    Err(_) => (f64::INFINITY, f64::INFINITY),
                }
            })
            .collect()
    });

    let fx: Vec<Vec<f64>> = rows.iter().map(|r| r.iter().map(|v| v.0).collect()).collect();
    let fy: Vec<Vec<f64>> = rows.iter().map(|r| r.iter().map(|v| v.1).collect()).collect();
    Ok(SensitivityMap {
        x: x.clone(),
        y: y.clone(),
        x_values: xv,
        y_values: yv,
        meas_fractional_sigma,
        resolvable_x: fx.iter().map(|r| r.iter().map(|v| *v < 1.0).collect()).collect(),
        resolvable_y: fy.iter().map(|r| r.iter().map(|v| *v < 1.0).collect()).collect(),
        fractional_error_x: fx,
        fractional_error_y: fy,
    })
}
