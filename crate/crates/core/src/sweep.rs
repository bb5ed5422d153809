//! Frequency-point distributions for resonator sweeps.
//!
//! The phase-uniform scheme places points so that they are evenly spaced in
//! angle around the resonance circle. With the weight W = span / linewidth,
//! the half-angle covered by the sweep is arctan(W) and point n of N is
//!
//! f_n = center + (span / 2W) * tan((2n / (N - 1)) * arctan(W)),
//! n = -(N-1)/2 ..= (N-1)/2.
//!
//! The rescaling ratio that pins the outermost point to center + span/2 is
//! W / tan(arctan(W)), which is 1 up to rounding; endpoints are assigned
//! exactly. Computing the half-angle as arctan(W) directly avoids the branch
//! cut of arctan(2W / (1 - W^2)) at W = 1.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MIN_PLAN_POINTS: usize = 7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    Linear,
    Quadratic,
    PhaseUniform,
}

impl std::str::FromStr for Scheme {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(Scheme::Linear),
            "quadratic" => Ok(Scheme::Quadratic),
            "phase-uniform" => Ok(Scheme::PhaseUniform),
            other => Err(Error::InvalidInput(format!(
                "unknown sweep scheme '{other}' (expected linear, quadratic or phase-uniform)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPlan {
    pub center: f64,
    pub span: f64,
    pub weight: f64,
    /// Ascending frequencies in Hz.
    pub points: Vec<f64>,
    pub scheme: Scheme,
}

fn check_common(center: f64, span: f64, n_points: usize, odd: bool) -> Result<()> {
    if !(center > 0.0) || !center.is_finite() {
        return Err(Error::InvalidInput(format!("center {center} Hz must be positive")));
    }
    if !(span > 0.0) || !span.is_finite() || span >= 2.0 * center {
        return Err(Error::InvalidInput(format!("span {span} Hz must be positive and below twice the center")));
    }
    if n_points < MIN_PLAN_POINTS {
        return Err(Error::InvalidInput(format!("a sweep needs at least {MIN_PLAN_POINTS} points, got {n_points}")));
    }
    if odd && n_points.is_multiple_of(2) {
        return Err(Error::InvalidInput(format!("point count must be odd, got {n_points}")));
    }
    Ok(())
}

/// Builds an ascending symmetric plan from positive offsets of the points
/// above the center (outermost offset last, already equal to span/2).
fn symmetric(center: f64, span: f64, offsets: &[f64]) -> Vec<f64> {
    let m = offsets.len();
    let mut pts = Vec::with_capacity(2 * m + 1);
    pts.push(center - span / 2.0);
    pts.extend(offsets[..m - 1].iter().rev().map(|o| center - o));
    pts.push(center);
    pts.extend(offsets[..m - 1].iter().map(|o| center + o));
    pts.push(center + span / 2.0);
    pts
}

pub fn plan_phase_uniform(center: f64, span: f64, weight: f64, n_points: usize) -> Result<SweepPlan> {
    if !(weight > 0.0) || !weight.is_finite() {
        return Err(Error::InvalidInput(format!("weight W = {weight} must be positive")));
    }
    check_common(center, span, n_points, true)?;
    let m = (n_points - 1) / 2;
    let half_angle = weight.atan();
    let rescale = weight / half_angle.tan();
    let offsets: Vec<f64> = (1..=m)
        .map(|n| rescale * span / (2.0 * weight) * ((n as f64 / m as f64) * half_angle).tan())
        .collect();
    Ok(SweepPlan {
        center,
        span,
        weight,
        points: symmetric(center, span, &offsets),
        scheme: Scheme::PhaseUniform,
    })
}

/// Spacing between consecutive points grows as k^2 with the index distance k
/// from the center, so the offset of point m is proportional to
/// sum_{k<=m} k^2 = m(m+1)(2m+1)/6, normalized so the outermost point sits at
/// span/2. For 7 points the normalized offsets are {1/14, 5/14, 1}; a 5-point
/// layout by the same rule would be {1/5, 1}.
pub fn plan_quadratic(center: f64, span: f64, n_points: usize) -> Result<SweepPlan> {
    check_common(center, span, n_points, true)?;
    let m = (n_points - 1) / 2;
    let cum = |j: usize| (j * (j + 1) * (2 * j + 1)) as f64 / 6.0;
    let total = cum(m);
    let offsets: Vec<f64> = (1..=m).map(|j| span / 2.0 * cum(j) / total).collect();
    Ok(SweepPlan {
        center,
        span,
        weight: f64::NAN,
        points: symmetric(center, span, &offsets),
        scheme: Scheme::Quadratic,
    })
}

pub fn plan_linear(center: f64, span: f64, n_points: usize) -> Result<SweepPlan> {
    check_common(center, span, n_points, false)?;
    let lo = center - span / 2.0;
    let step = span / (n_points - 1) as f64;
    let mut points: Vec<f64> = (0..n_points).map(|k| lo + step * k as f64).collect();
    points[n_points - 1] = center + span / 2.0;
    Ok(SweepPlan {
        center,
        span,
        weight: f64::NAN,
        points,
        scheme: Scheme::Linear,
    })
}

/// Largest angular gap between adjacent points on the resonance circle,
/// mapping each point through 2 arctan(2 Q_L (f/center - 1)).
pub fn phase_gap_metric(plan: &SweepPlan, q_loaded: f64) -> Result<f64> {
    if !(q_loaded > 0.0) {
        return Err(Error::InvalidInput(format!("q_loaded {q_loaded} must be positive")));
    }
    let angles: Vec<f64> = plan
        .points
        .iter()
        .map(|f| 2.0 * (2.0 * q_loaded * (f / plan.center - 1.0)).atan())
        .collect();
    Ok(angles.windows(2).map(|w| (w[1] - w[0]).abs()).fold(0.0, f64::max))
}

/// One frequency per line with a header, ascending.
pub fn plan_csv(plan: &SweepPlan) -> String {
    let mut s = String::from("index,frequency_hz\n");
    for (i, f) in plan.points.iter().enumerate() {
        let _ = writeln!(s, "{i},{f:.6}");
    }
    s
}

/// VNA segment table: one two-point segment per adjacent pair of plan points.
pub fn segment_table(plan: &SweepPlan) -> String {
    let mut s = String::new();
    let scheme = match plan.scheme {
        Scheme::Linear => "linear",
        Scheme::Quadratic => "quadratic",
        Scheme::PhaseUniform => "phase-uniform",
    };
    let _ = writeln!(s, "# lossforge segment table");
    let _ = writeln!(s, "# scheme={scheme} center_hz={:.6} span_hz={:.6} points={}", plan.center, plan.span, plan.points.len());
    let _ = writeln!(s, "segment\tstart_hz\tstop_hz\tpoints");
    for (i, w) in plan.points.windows(2).enumerate() {
        let _ = writeln!(s, "{}\t{:.6}\t{:.6}\t2", i + 1, w[0], w[1]);
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn phase_uniform_center_and_endpoints() {
        for w in [0.3, 1.0, 5.0, 40.0] {
            let p = plan_phase_uniform(5e9, 2e6, w, 101).unwrap();
            assert_eq!(p.points[50], 5e9);
            assert_eq!(p.points[0], 5e9 - 1e6);
            assert_eq!(p.points[100], 5e9 + 1e6);
            assert!(p.points.windows(2).all(|x| x[1] > x[0]));
        }
    }

    #[test]
    fn weight_must_be_positive() {
        assert!(plan_phase_uniform(5e9, 2e6, 0.0, 101).is_err());
        assert!(plan_phase_uniform(5e9, 2e6, -1.0, 101).is_err());
        assert!(plan_phase_uniform(5e9, 2e6, 1.0, 100).is_err());
        assert!(plan_phase_uniform(5e9, 2e6, 1.0, 5).is_err());
    }

    #[test]
    fn quadratic_seven_point_offsets() {
        let p = plan_quadratic(10.0, 1.0, 7).unwrap();
        let off: Vec<f64> = p.points[4..].iter().map(|f| (f - 10.0) / 0.5).collect();
        let expect = [1.0 / 14.0, 5.0 / 14.0, 1.0];
        for (a, b) in off.iter().zip(expect) {
            assert!((a - b).abs() < 1e-13);
        }
        let gaps: Vec<f64> = p.points.windows(2).map(|w| w[1] - w[0]).collect();
        assert!(gaps[2] <= gaps[1] && gaps[1] <= gaps[0]);
    }

    #[test]
    fn matched_weight_gives_equal_gaps() {
        let (c, q, w) = (5e9, 1e6, 5.0);
        let p = plan_phase_uniform(c, w * c / q, w, 101).unwrap();
        let angles: Vec<f64> = p.points.iter().map(|f| 2.0 * (2.0 * q * (f / c - 1.0)).atan()).collect();
        let gaps: Vec<f64> = angles.windows(2).map(|x| x[1] - x[0]).collect();
        let expect = 4.0 * w.atan() / 100.0;
        for g in gaps {
            assert!((g - expect).abs() < 1e-9);
        }
    }

    #[test]
    fn segment_table_has_one_row_per_pair() {
        let p = plan_phase_uniform(5e9, 2e6, 5.0, 11).unwrap();
        let t = segment_table(&p);
        let rows = t.lines().filter(|l| !l.starts_with('#')).count();
        assert_eq!(rows, 1 + 10);
    }
}
