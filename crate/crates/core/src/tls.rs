//! Two-level-system saturation model of internal loss versus photon number:
//!
//! 1/Q_int(n) = 1/Q0 + A / sqrt(1 + (n/n_c)^beta)
//!
//! The fit is weighted least squares in 1/Q space. Internally n_c and beta
//! are fitted through their logarithms, which keeps them positive.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lsq::{self, Model};

pub const MIN_POINTS: usize = 5;
pub const MIN_DECADES: f64 = 2.0;

/// One power point: mean photon number and internal Q with its sigma.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TlsPoint {
    pub photon_number: f64,
    pub q_int: f64,
    pub q_int_sigma: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TlsParams {
    pub q0_inv: f64,
    pub tls_amplitude: f64,
    pub n_critical: f64,
    pub beta: f64,
}

impl TlsParams {
    /// Internal loss 1/Q_int at photon number `n`.
    pub fn loss_at(&self, n: f64) -> f64 {
        self.q0_inv + self.tls_amplitude / (1.0 + (n / self.n_critical).powf(self.beta)).sqrt()
    }

    /// Gradient of `loss_at` with respect to (q0_inv, A, n_c, beta).
    fn gradient(&self, n: f64) -> [f64; 4] {
        let s = (n / self.n_critical).powf(self.beta);
        let g = 1.0 / (1.0 + s).sqrt();
        let dg_ds = -0.5 * g * g * g;
        let ds_dnc = if s > 0.0 { -self.beta * s / self.n_critical } else { 0.0 };
        let ds_dbeta = if s > 0.0 { s * (n / self.n_critical).ln() } else { 0.0 };
        [1.0, g, self.tls_amplitude * dg_ds * ds_dnc, self.tls_amplitude * dg_ds * ds_dbeta]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TlsFit {
    #[serde(flatten)]
    pub params: TlsParams,
    pub sigma: TlsParams,
    /// Covariance of (q0_inv, tls_amplitude, n_critical, beta).
    pub covariance: [[f64; 4]; 4],
    /// Weighted sum of squared residuals.
    pub chi2: f64,
    pub points: usize,
    /// Set when beta falls outside (0, 2].
    pub beta_out_of_range: bool,
    /// Set when the data carry no information on n_c and beta (flat loss);
    /// their sigmas are then infinite and they do not enter propagated errors.
    pub saturation_unresolved: bool,
}

struct TlsModel<'a> {
    n: &'a [f64],
    y: &'a [f64],
    w: &'a [f64],
}

fn unpack(p: &[f64]) -> TlsParams {
    TlsParams {
        q0_inv: p[0],
        tls_amplitude: p[1],
        n_critical: p[2].exp(),
        beta: p[3].exp(),
    }
}

impl Model for TlsModel<'_> {
    fn n_residuals(&self) -> usize {
        self.n.len()
    }

    fn residuals(&self, p: &[f64]) -> DVector<f64> {
        let m = unpack(p);
        DVector::from_iterator(
            self.n.len(),
            self.n.iter().zip(self.y).zip(self.w).map(|((n, y), w)| (m.loss_at(*n) - y) * w),
        )
    }

    fn jacobian(&self, p: &[f64]) -> DMatrix<f64> {
        let m = unpack(p);
        let mut j = DMatrix::zeros(self.n.len(), 4);
        for (i, (n, w)) in self.n.iter().zip(self.w).enumerate() {
            let g = m.gradient(*n);
            j[(i, 0)] = g[0] * w;
            j[(i, 1)] = g[1] * w;
            j[(i, 2)] = g[2] * m.n_critical * w;
            j[(i, 3)] = g[3] * m.beta * w;
        }
        j
    }
}

/// Weighted linear solve for (q0_inv, A) at fixed (n_c, beta); returns the
/// parameters and chi^2.
fn linear_subproblem(n: &[f64], y: &[f64], w: &[f64], nc: f64, beta: f64) -> Option<([f64; 2], f64)> {
    let (mut s11, mut s12, mut s22, mut b1, mut b2) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for ((n, y), w) in n.iter().zip(y).zip(w) {
        let g = 1.0 / (1.0 + (n / nc).powf(beta)).sqrt();
        let w2 = w * w;
        s11 += w2;
        s12 += w2 * g;
        s22 += w2 * g * g;
        b1 += w2 * y;
        b2 += w2 * g * y;
    }
    let det = s11 * s22 - s12 * s12;
    if !(det > 1e-12 * s11 * s22) {
        return None;
    }
    let q0 = (s22 * b1 - s12 * b2) / det;
    let a = (s11 * b2 - s12 * b1) / det;
    let chi2 = n
        .iter()
        .zip(y)
        .zip(w)
        .map(|((n, y), w)| {
            let r = (q0 + a / (1.0 + (n / nc).powf(beta)).sqrt() - y) * w;
            r * r
        })
        .sum();
    Some(([q0, a], chi2))
}

/// Fits the saturation model to power-sweep points.
pub fn fit_tls(points: &[TlsPoint]) -> Result<TlsFit> {
    if points.len() < MIN_POINTS {
        return Err(Error::InsufficientPowerRange(format!(
            "{} points supplied, at least {MIN_POINTS} required",
            points.len()
        )));
    }
    for p in points {
        if !(p.photon_number > 0.0 && p.photon_number.is_finite()) || !(p.q_int > 0.0) || !(p.q_int_sigma > 0.0) {
            return Err(Error::InvalidInput(format!(
                "power point (n = {}, Q = {}, sigma = {}) needs positive finite values",
                p.photon_number, p.q_int, p.q_int_sigma
            )));
        }
    }
    let mut pts = points.to_vec();
    pts.sort_by(|a, b| a.photon_number.total_cmp(&b.photon_number));
    let (nmin, nmax) = (pts[0].photon_number, pts[pts.len() - 1].photon_number);
    let decades = (nmax / nmin).log10();
    if decades < MIN_DECADES {
        return Err(Error::InsufficientPowerRange(format!(
            "photon numbers span {decades:.2} decades, at least {MIN_DECADES} required"
        )));
    }

    let n: Vec<f64> = pts.iter().map(|p| p.photon_number).collect();
    let y: Vec<f64> = pts.iter().map(|p| 1.0 / p.q_int).collect();
    let w: Vec<f64> = pts.iter().map(|p| p.q_int * p.q_int / p.q_int_sigma).collect();
    let model = TlsModel { n: &n, y: &y, w: &w };

    // Start 1: loss floor from the three highest powers, amplitude from the
    // lowest-minus-highest difference, n_c at the geometric middle, beta = 1.
    let k = pts.len();
    let q0_init = y[k - 3..].iter().sum::<f64>() / 3.0;
    let mut a_init = y[0] - y[k - 1];
    if !(a_init > 0.0) {
        a_init = 1e-3 * q0_init;
    }
    let nc_init = (nmin * nmax).sqrt();
    let mut starts = vec![[q0_init, a_init, nc_init.ln(), 0.0]];

    // Start 2: best point of a coarse grid over (n_c, beta) with the linear
    // parameters solved exactly.
    let (lo, hi) = (nmin.ln() - 2.0, nmax.ln() + 2.0);
    let mut best: Option<([f64; 4], f64)> = None;
    for i in 0..25 {
        let lnc = lo + (hi - lo) * i as f64 / 24.0;
        for b in [0.3, 0.5, 0.7, 0.9, 1.1, 1.3, 1.6, 2.0] {
            if let Some(([q0, a], chi2)) = linear_subproblem(&n, &y, &w, lnc.exp(), b) {
                if best.as_ref().is_none_or(|(_, c)| chi2 < *c) {
                    best = Some(([q0, a, lnc, f64::ln(b)], chi2));
                }
            }
        }
    }
    if let Some((s, _)) = best {
        starts.push(s);
    }

    let mut solution: Option<lsq::Solution> = None;
    let mut last_err = None;
    for s in &starts {
        match lsq::minimize(&model, s, "TLS fit") {
            Ok(sol) => {
                if solution.as_ref().is_none_or(|b| sol.ssr < b.ssr) {
                    solution = Some(sol);
                }
            }
            Err(e) => last_err = Some(e),
        }
    }
    let sol = match solution {
        Some(s) => s,
        None => return Err(last_err.expect("at least one start")),
    };

    let params = unpack(&sol.params);
    let (cov_internal, unresolved) = match lsq::inverse_normal_matrix(&sol.jacobian) {
        Some(c) => (c, false),
        None => {
            // Flat data: only the linear parameters are identifiable.
            let j2 = sol.jacobian.columns(0, 2).into_owned();
            let (c2, _) = lsq::pseudo_inverse_normal_matrix(&j2, 1e-12);
            let mut c = DMatrix::zeros(4, 4);
            c.view_mut((0, 0), (2, 2)).copy_from(&c2);
            (c, true)
        }
    };
    let scale = [1.0, 1.0, params.n_critical, params.beta];
    let covariance: [[f64; 4]; 4] = std::array::from_fn(|i| std::array::from_fn(|j| cov_internal[(i, j)] * scale[i] * scale[j]));
    let sd = |i: usize| {
        if unresolved && i >= 2 {
            f64::INFINITY
        } else {
            covariance[i][i].max(0.0).sqrt()
        }
    };
    Ok(TlsFit {
        params,
        sigma: TlsParams {
            q0_inv: sd(0),
            tls_amplitude: sd(1),
            n_critical: sd(2),
            beta: sd(3),
        },
        covariance,
        chi2: sol.ssr,
        points: pts.len(),
        beta_out_of_range: !(params.beta > 0.0 && params.beta <= 2.0),
        saturation_unresolved: unresolved,
    })
}

/// Interpolated internal Q at photon number `n` with first-order sigma.
pub fn q_int_at(fit: &TlsFit, n: f64) -> Result<(f64, f64)> {
    if !(n > 0.0) {
        return Err(Error::InvalidInput(format!("photon number {n} must be positive")));
    }
    let loss = fit.params.loss_at(n);
    if !(loss > 0.0) {
        return Err(Error::Nonphysical(format!("interpolated loss {loss:e} at n = {n} is not positive")));
    }
    let g = fit.params.gradient(n);
    let mut var = 0.0;
    for i in 0..4 {
        for j in 0..4 {
            if g[i] != 0.0 && g[j] != 0.0 {
                var += g[i] * g[j] * fit.covariance[i][j];
            }
        }
    }
    let q = 1.0 / loss;
    Ok((q, var.max(0.0).sqrt() * q * q))
}

/// Fraction of points whose error bar (one sigma in Q) contains the fitted curve.
pub fn fraction_within_error_bars(fit: &TlsFit, points: &[TlsPoint]) -> f64 {
    let inside = points
        .iter()
        .filter(|p| (1.0 / fit.params.loss_at(p.photon_number) - p.q_int).abs() <= p.q_int_sigma)
        .count();
    inside as f64 / points.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    fn truth() -> TlsParams {
        TlsParams {
            q0_inv: 3e-8,
            tls_amplitude: 4e-7,
            n_critical: 50.0,
            beta: 0.8,
        }
    }

    fn synth(p: &TlsParams, k: usize) -> Vec<TlsPoint> {
        (0..k)
            .map(|i| {
                let n = 10f64.powf(-1.0 + 7.0 * i as f64 / (k - 1) as f64);
                let q = 1.0 / p.loss_at(n);
                TlsPoint {
                    photon_number: n,
                    q_int: q,
                    q_int_sigma: 0.01 * q,
                }
            })
            .collect()
    }

    #[test]
    fn noiseless_roundtrip() {
        let t = truth();
        let fit = fit_tls(&synth(&t, 20)).unwrap();
        let rel = |a: f64, b: f64| ((a - b) / b).abs();
        assert!(rel(fit.params.q0_inv, t.q0_inv) < 1e-3);
        assert!(rel(fit.params.tls_amplitude, t.tls_amplitude) < 1e-3);
        assert!(rel(fit.params.n_critical, t.n_critical) < 1e-3);
        assert!(rel(fit.params.beta, t.beta) < 1e-3);
        assert!(!fit.beta_out_of_range);
    }

    #[test]
    fn flat_data_gives_zero_amplitude() {
        let pts: Vec<TlsPoint> = (0..8)
            .map(|i| TlsPoint {
                photon_number: 10f64.powi(i),
                q_int: 2e6,
                q_int_sigma: 2e4,
            })
            .collect();
        let fit = fit_tls(&pts).unwrap();
        assert!(fit.params.tls_amplitude.abs() <= fit.sigma.tls_amplitude.max(1e-15));
        assert!((fit.params.q0_inv - 5e-7).abs() < 1e-12);
    }

    #[test]
    fn power_range_is_checked() {
        let pts: Vec<TlsPoint> = (0..6)
            .map(|i| TlsPoint {
                photon_number: 1.0 + i as f64,
                q_int: 1e6,
                q_int_sigma: 1e4,
            })
            .collect();
        assert!(matches!(fit_tls(&pts), Err(Error::InsufficientPowerRange(_))));
        assert!(matches!(fit_tls(&pts[..3]), Err(Error::InsufficientPowerRange(_))));
    }

    #[test]
    fn limits_of_the_model() {
        let t = truth();
        assert!((t.loss_at(1e80) - t.q0_inv).abs() < 1e-20);
        assert!((t.loss_at(1e-30) - (t.q0_inv + t.tls_amplitude)).abs() < 1e-20);
        let at_nc = t.loss_at(t.n_critical) - t.q0_inv;
        assert!((at_nc - t.tls_amplitude / 2f64.sqrt()).abs() < 1e-20);
    }

    #[test]
    fn interpolation_reproduces_fit_residuals() {
        let t = truth();
        let pts = synth(&t, 12);
        let fit = fit_tls(&pts).unwrap();
        let mut chi2 = 0.0;
        for p in &pts {
            let (q, s) = q_int_at(&fit, p.photon_number).unwrap();
            assert!(s >= 0.0);
            let w = p.q_int * p.q_int / p.q_int_sigma;
            chi2 += ((1.0 / q - 1.0 / p.q_int) * w).powi(2);
        }
        assert!((chi2 - fit.chi2).abs() <= 1e-9 * (1.0 + fit.chi2));
    }
}
