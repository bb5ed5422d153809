//! Hanger-resonator fitting in the complex plane.
//!
//! The pipeline follows the usual geometric construction: remove the cable
//! delay, fit a circle algebraically, fit the phase around the circle center
//! to get the resonance frequency and loaded Q, read the off-resonant point off
//! the circle, and finish with a joint Levenberg-Marquardt refinement of all
//! seven model parameters on the raw complex data.

use std::f64::consts::{FRAC_PI_2, PI, TAU};

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::domain::{FrequencyTrace, HangerFit, HangerParams};
use crate::error::{Error, Result};
use crate::lsq::{self, Model};

const DELAY_SCAN_POINTS: usize = 401;
const GOLDEN_ITERATIONS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CircleGeometry {
    pub center: Complex64,
    pub radius: f64,
}

impl CircleGeometry {
    /// Root-mean-square geometric distance of `points` from the circle.
    pub fn rms_residual(&self, points: &[Complex64]) -> f64 {
        (geometric_ss(self, points) / points.len() as f64).sqrt()
    }
}

fn geometric_ss(c: &CircleGeometry, points: &[Complex64]) -> f64 {
    points
        .iter()
        .map(|z| {
            let d = (z - c.center).norm() - c.radius;
            d * d
        })
        .sum()
}

/// Taubin algebraic circle fit, solved with Chernov's Newton iteration on the
/// characteristic polynomial. Exact for noiseless points on a circle.
pub fn algebraic_circle_fit(points: &[Complex64]) -> Result<CircleGeometry> {
    if points.len() < 3 {
        return Err(Error::InvalidInput(format!("circle fit needs at least 3 points, got {}", points.len())));
    }
    if points.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(Error::InvalidInput("circle fit input contains non-finite values".into()));
    }
    let n = points.len() as f64;
    let mean = points.iter().sum::<Complex64>() / n;
    let scale = (points.iter().map(|z| (z - mean).norm_sqr()).sum::<f64>() / n).sqrt();
    if !(scale > 0.0) {
        return Err(Error::DegenerateCircle);
    }

    let (mut mxx, mut myy, mut mxy, mut mxz, mut myz, mut mzz) = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
    for z in points {
        let u = (z - mean) / scale;
        let (x, y) = (u.re, u.im);
        let zz = x * x + y * y;
        mxx += x * x;
        myy += y * y;
        mxy += x * y;
        mxz += x * zz;
        myz += y * zz;
        mzz += zz * zz;
    }
    mxx /= n;
    myy /= n;
    mxy /= n;
    mxz /= n;
    myz /= n;
    mzz /= n;

    // After normalization mxx + myy = 1, so this is the smaller eigenvalue of
    // the scatter matrix up to O(det^2): zero for collinear data.
    let cov_xy = mxx * myy - mxy * mxy;
    if cov_xy < 1e-13 {
        return Err(Error::DegenerateCircle);
    }

    let mz = mxx + myy;
    let var_z = mzz - mz * mz;
    let a3 = 4.0 * mz;
    let a2 = -3.0 * mz * mz - mzz;
    let a1 = var_z * mz + 4.0 * cov_xy * mz - mxz * mxz - myz * myz;
    let a0 = mxz * (mxz * myy - myz * mxy) + myz * (myz * mxx - mxz * mxy) - var_z * cov_xy;
    let a22 = a2 + a2;
    let a33 = a3 + a3 + a3;

    let mut x = 0.0;
    let mut y = a0;
    for _ in 0..100 {
        let dy = a1 + x * (a22 + a33 * x);
        let x_new = x - y / dy;
        if x_new == x || !x_new.is_finite() {
            break;
        }
        let y_new = a0 + x_new * (a1 + x_new * (a2 + x_new * a3));
        if y_new.abs() >= y.abs() {
            break;
        }
        x = x_new;
        y = y_new;
    }

    let det = x * x - x * mz + cov_xy;
    let xc = (mxz * (myy - x) - myz * mxy) / det / 2.0;
    let yc = (myz * (mxx - x) - mxz * mxy) / det / 2.0;
    let radius = (xc * xc + yc * yc + mz).sqrt() * scale;
    let center = mean + Complex64::new(xc, yc) * scale;
    if !radius.is_finite() || !center.re.is_finite() || !center.im.is_finite() || radius > 1e8 * scale {
        return Err(Error::DegenerateCircle);
    }
    Ok(CircleGeometry { center, radius })
}

/// Removes an electrical delay: returns S21 * e^{+i 2 pi f tau}.
pub fn remove_delay(trace: &FrequencyTrace, tau: f64) -> Vec<Complex64> {
    trace
        .points()
        .map(|(f, z)| z * Complex64::from_polar(1.0, TAU * f * tau))
        .collect()
}

fn delay_objective(freqs: &[f64], s21: &[Complex64], f_ref: f64, tau: f64, buf: &mut Vec<Complex64>) -> f64 {
    buf.clear();
    buf.extend(
        freqs
            .iter()
            .zip(s21)
            .map(|(f, z)| z * Complex64::from_polar(1.0, TAU * (f - f_ref) * tau)),
    );
    match algebraic_circle_fit(buf) {
        Ok(g) => geometric_ss(&g, buf),
        Err(_) => f64::INFINITY,
    }
}

fn unwrap_phases(z: impl Iterator<Item = Complex64>) -> Vec<f64> {
    let mut out: Vec<f64> = Vec::new();
    for v in z {
        let a = v.arg();
        match out.last() {
            None => out.push(a),
            Some(&prev) => {
                let mut d = a - prev.rem_euclid(TAU);
                d = (d + PI).rem_euclid(TAU) - PI;
                out.push(prev + d);
            }
        }
    }
    out
}

/// Estimates the electrical delay tau (s) by minimizing the geometric
/// deviation of the delay-corrected trace from a circle: a coarse scan around
/// the end-to-end phase slope followed by golden-section refinement.
pub fn estimate_delay(trace: &FrequencyTrace) -> Result<f64> {
    let f = trace.frequencies();
    let z = trace.s21();
    let (f0, f1) = trace.span();
    let span = f1 - f0;
    let f_ref = 0.5 * (f0 + f1);

    let phases = unwrap_phases(z.iter().copied());
    let slope_guess = -(phases[phases.len() - 1] - phases[0]) / (TAU * span);
    let half_range = 1.5 / span;
    let step = 2.0 * half_range / (DELAY_SCAN_POINTS - 1) as f64;

    let mut buf = Vec::with_capacity(z.len());
    let mut best = (f64::INFINITY, 0.0);
    for k in 0..DELAY_SCAN_POINTS {
        let tau = slope_guess - half_range + step * k as f64;
        let v = delay_objective(f, z, f_ref, tau, &mut buf);
        if v < best.0 {
            best = (v, tau);
        }
    }
    // Always include the zero-delay and slope candidates exactly.
    for tau in [0.0, slope_guess] {
        let v = delay_objective(f, z, f_ref, tau, &mut buf);
        if v < best.0 {
            best = (v, tau);
        }
    }
    if !best.0.is_finite() {
        return Err(Error::NoResonance("no delay produces a circular trace".into()));
    }

    let (mut lo, mut hi) = (best.1 - step, best.1 + step);
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = hi - g * (hi - lo);
    let mut d = lo + g * (hi - lo);
    let mut fc = delay_objective(f, z, f_ref, c, &mut buf);
    let mut fd = delay_objective(f, z, f_ref, d, &mut buf);
    for _ in 0..GOLDEN_ITERATIONS {
        if (hi - lo) <= 1e-14 * (best.1.abs() + step) {
            break;
        }
        if fc < fd {
            hi = d;
            d = c;
            fd = fc;
            c = hi - g * (hi - lo);
            fc = delay_objective(f, z, f_ref, c, &mut buf);
        } else {
            lo = c;
            c = d;
            fc = fd;
            d = lo + g * (hi - lo);
            fd = delay_objective(f, z, f_ref, d, &mut buf);
        }
    }
    let mut tau = 0.5 * (lo + hi);
    let v = delay_objective(f, z, f_ref, tau, &mut buf);
    if best.0 < v {
        tau = best.1;
    }

    let corrected = remove_delay(trace, tau);
    let geom = algebraic_circle_fit(&corrected)?;
    let rms = geom.rms_residual(&corrected);
    if !(geom.radius > 3.0 * rms) {
        return Err(Error::NoResonance(format!(
            "circle radius {:.3e} is not above the residual noise floor {:.3e}",
            geom.radius, rms
        )));
    }
    // A pure delay also traces a circle (centered on the origin) but leaves
    // |S21| constant; a resonance must modulate the magnitude.
    let (lo, hi) = z.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), v| (lo.min(v.norm()), hi.max(v.norm())));
    if !(hi - lo > 4.0 * rms + 1e-12 * hi) {
        return Err(Error::NoResonance(format!(
            "|S21| varies by {:.3e}, not above the residual noise floor {:.3e}",
            hi - lo,
            rms
        )));
    }
    Ok(tau)
}

/// Result of the arctangent phase fit around the circle center.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseFit {
    pub fr: f64,
    pub q_loaded: f64,
    pub theta0: f64,
}

struct PhaseModel<'a> {
    f: &'a [f64],
    theta: &'a [f64],
    f_ref: f64,
}

impl Model for PhaseModel<'_> {
    fn n_residuals(&self) -> usize {
        self.f.len()
    }

    fn residuals(&self, p: &[f64]) -> DVector<f64> {
        let fr = self.f_ref + p[2];
        DVector::from_iterator(
            self.f.len(),
            self.f
                .iter()
                .zip(self.theta)
                .map(|(f, th)| p[0] + 2.0 * (2.0 * p[1] * (1.0 - f / fr)).atan() - th),
        )
    }

    fn jacobian(&self, p: &[f64]) -> DMatrix<f64> {
        let fr = self.f_ref + p[2];
        let mut j = DMatrix::zeros(self.f.len(), 3);
        for (i, f) in self.f.iter().enumerate() {
            let u = 2.0 * p[1] * (1.0 - f / fr);
            let w = 2.0 / (1.0 + u * u);
            j[(i, 0)] = 1.0;
            j[(i, 1)] = w * 2.0 * (1.0 - f / fr);
            j[(i, 2)] = w * 2.0 * p[1] * f / (fr * fr);
        }
        j
    }
}

/// Linear interpolation of the frequency where the (decreasing) phase
/// crosses `level`.
fn crossing(f: &[f64], theta: &[f64], level: f64) -> Option<f64> {
    for i in 1..f.len() {
        let (a, b) = (theta[i - 1] - level, theta[i] - level);
        if a == 0.0 {
            return Some(f[i - 1]);
        }
        if a > 0.0 && b <= 0.0 {
            return Some(f[i - 1] + (f[i] - f[i - 1]) * a / (a - b));
        }
    }
    None
}

/// Fits theta(f) = theta0 + 2 arctan(2 Q_L (1 - f/fr)) to the phase of the
/// delay-corrected trace measured around the circle center.
pub fn phase_fit(trace_on_circle: &FrequencyTrace, geometry: &CircleGeometry) -> Result<PhaseFit> {
    let f = trace_on_circle.frequencies();
    if f.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidInput("phase fit requires strictly increasing frequencies".into()));
    }
    let mut theta = unwrap_phases(trace_on_circle.s21().iter().map(|z| z - geometry.center));
    // The hanger circle is traversed with decreasing phase; a trace whose net
    // rotation is positive is mirrored and cannot be described by the model.
    let n = f.len();
    if theta[n - 1] > theta[0] {
        return Err(Error::NoResonance("phase around the circle increases with frequency".into()));
    }
    // Anchor the unwrapped branch so the midpoint phase lies in (-pi, pi].
    let shift = TAU * ((0.5 * (theta[0] + theta[n - 1]) + PI) / TAU).floor();
    for t in &mut theta {
        *t -= shift;
    }

    let theta0 = 0.5 * (theta[0] + theta[n - 1]);
    let fr0 = crossing(f, &theta, theta0).unwrap_or(0.5 * (f[0] + f[n - 1]));
    let q0 = match (crossing(f, &theta, theta0 + FRAC_PI_2), crossing(f, &theta, theta0 - FRAC_PI_2)) {
        (Some(fa), Some(fb)) if fb > fa => fr0 / (fb - fa),
        _ => {
            let i = f.partition_point(|x| *x < fr0).clamp(1, n - 1);
            let slope = (theta[i] - theta[i - 1]) / (f[i] - f[i - 1]);
            (-slope * fr0 / 4.0).max(1.0)
        }
    };

    let model = PhaseModel { f, theta: &theta, f_ref: fr0 };
    let sol = lsq::minimize(&model, &[theta0, q0, 0.0], "phase fit")?;
    let fr = fr0 + sol.params[2];
    let q_loaded = sol.params[1];
    if !(q_loaded > 0.0) || fr < f[0] || fr > f[n - 1] {
        return Err(Error::NonConvergence {
            stage: "phase fit",
            detail: format!("fit left the physical region (fr = {fr:.6e} Hz, Q_L = {q_loaded:.3e})"),
            residual: sol.ssr,
        });
    }
    Ok(PhaseFit {
        fr,
        q_loaded,
        theta0: sol.params[0],
    })
}

/// Full hanger model in the refinement parametrization
/// p = [a, alpha', tau, dfr, Q_L, |Q_c|, phi] with
/// alpha' = alpha - 2 pi f_ref tau and fr = f_ref + dfr.
struct HangerModel<'a> {
    f: &'a [f64],
    z: &'a [Complex64],
    f_ref: f64,
}

impl HangerModel<'_> {
    fn parts(&self, p: &[f64], f: f64) -> (Complex64, Complex64, Complex64, f64) {
        let fr = self.f_ref + p[3];
        let b = Complex64::from_polar(1.0, p[1] - TAU * (f - self.f_ref) * p[2]);
        let k = Complex64::from_polar(p[4] / p[5], p[6]);
        let d = Complex64::new(1.0, 2.0 * p[4] * (f / fr - 1.0));
        (b, k, d, fr)
    }
}

impl Model for HangerModel<'_> {
    fn n_residuals(&self) -> usize {
        2 * self.f.len()
    }

    fn residuals(&self, p: &[f64]) -> DVector<f64> {
        let n = self.f.len();
        let mut r = DVector::zeros(2 * n);
        for (i, (&f, z)) in self.f.iter().zip(self.z).enumerate() {
            let (b, k, d, _) = self.parts(p, f);
            let s = b * p[0] * (1.0 - k / d);
            r[i] = s.re - z.re;
            r[n + i] = s.im - z.im;
        }
        r
    }

    fn jacobian(&self, p: &[f64]) -> DMatrix<f64> {
        let n = self.f.len();
        let i_unit = Complex64::i();
        let mut j = DMatrix::zeros(2 * n, 7);
        for (row, &f) in self.f.iter().enumerate() {
            let (b, k, d, fr) = self.parts(p, f);
            let a = p[0];
            let (ql, qc) = (p[4], p[5]);
            let s = b * a * (1.0 - k / d);
            let ab = b * a;
            let u = f / fr - 1.0;
            let derivs = [
                b * (1.0 - k / d),
                i_unit * s,
                -i_unit * TAU * (f - self.f_ref) * s,
                // d/dfr: dD/dfr = -2i Q_L f / fr^2 ; dS = aB K/D^2 dD
                ab * k / (d * d) * (-i_unit * 2.0 * ql * f / (fr * fr)),
                -ab * (k / (ql * d) - k * i_unit * 2.0 * u / (d * d)),
                ab * k / (qc * d),
                -ab * i_unit * k / d,
            ];
            for (c, v) in derivs.iter().enumerate() {
                j[(row, c)] = v.re;
                j[(n + row, c)] = v.im;
            }
        }
        j
    }
}

fn wrap_angle(x: f64) -> f64 {
    let y = (x + PI).rem_euclid(TAU) - PI;
    if y == -PI {
        PI
    } else {
        y
    }
}

/// Geometric initial estimate of all seven parameters (no joint refinement).
pub fn initial_estimate(trace: &FrequencyTrace) -> Result<HangerParams> {
    let tau = estimate_delay(trace)?;
    let corrected = trace.with_s21(remove_delay(trace, tau))?;
    let geom = algebraic_circle_fit(corrected.s21())?;
    let ph = phase_fit(&corrected, &geom)?;
    let off = geom.center + Complex64::from_polar(geom.radius, ph.theta0 + PI);
    let a = off.norm();
    let cn = geom.center / off;
    let rn = geom.radius / a;
    Ok(HangerParams {
        fr: ph.fr,
        q_loaded: ph.q_loaded,
        q_coupling_mag: ph.q_loaded / (2.0 * rn),
        phi: (1.0 - cn).arg(),
        amplitude_a: a,
        alpha: off.arg(),
        tau,
    })
}

/// Fits the asymmetric hanger model to a trace and returns all seven
/// parameters with one-sigma uncertainties from the residual covariance.
pub fn fit_hanger(trace: &FrequencyTrace) -> Result<HangerFit> {
    let init = initial_estimate(trace)?;
    let f_ref = init.fr;
    let model = HangerModel {
        f: trace.frequencies(),
        z: trace.s21(),
        f_ref,
    };
    let x0 = [
        init.amplitude_a,
        init.alpha - TAU * f_ref * init.tau,
        init.tau,
        0.0,
        init.q_loaded,
        init.q_coupling_mag,
        init.phi,
    ];
    let sol = lsq::minimize(&model, &x0, "hanger refinement")?;
    let mut p = sol.params.clone();
    if !(p[4] > 0.0) || !(p[0] > 0.0) {
        return Err(Error::NonConvergence {
            stage: "hanger refinement",
            detail: format!("non-positive Q_L ({:.3e}) or amplitude ({:.3e})", p[4], p[0]),
            residual: sol.ssr,
        });
    }
    let mut phi_flip = false;
    if p[5] < 0.0 {
        p[5] = -p[5];
        p[6] += PI;
        phi_flip = true;
    }
    let phi = wrap_angle(p[6]);
    let fr = f_ref + p[3];
    let (f0, f1) = trace.span();
    if fr < f0 || fr > f1 {
        return Err(Error::NoResonance(format!("fitted fr = {fr:.6e} Hz is outside the trace span")));
    }
    if phi.abs() >= FRAC_PI_2 {
        return Err(Error::InvalidAsymmetry(phi.abs()));
    }

    let n = trace.len();
    let dof = (2 * n).saturating_sub(7).max(1) as f64;
    let s2 = sol.ssr / dof;
    let inner = lsq::inverse_normal_matrix(&sol.jacobian)
        .unwrap_or_else(|| lsq::pseudo_inverse_normal_matrix(&sol.jacobian, 1e-12).0)
        * s2;
    // Map refinement parameters to reported order
    // (fr, Q_L, |Q_c|, phi, a, alpha, tau).
    let mut t = DMatrix::<f64>::zeros(7, 7);
    t[(0, 3)] = 1.0;
    t[(1, 4)] = 1.0;
    t[(2, 5)] = if phi_flip { -1.0 } else { 1.0 };
    t[(3, 6)] = 1.0;
    t[(4, 0)] = 1.0;
    t[(5, 1)] = 1.0;
    t[(5, 2)] = TAU * f_ref;
    t[(6, 2)] = 1.0;
    let cov = &t * inner * t.transpose();
    let sd = |i: usize| cov[(i, i)].max(0.0).sqrt();

    Ok(HangerFit {
        params: HangerParams {
            fr,
            q_loaded: p[4],
            q_coupling_mag: p[5],
            phi,
            amplitude_a: p[0],
            alpha: wrap_angle(p[1] + TAU * f_ref * p[2]),
            tau: p[2],
        },
        sigma: HangerParams {
            fr: sd(0),
            q_loaded: sd(1),
            q_coupling_mag: sd(2),
            phi: sd(3),
            amplitude_a: sd(4),
            alpha: sd(5),
            tau: sd(6),
        },
        covariance: (0..7).map(|i| std::array::from_fn(|j| cov[(i, j)])).collect(),
        residual_ss: sol.ssr,
        points: n,
    })
}

/// Internal quality factor from 1/Q_int = 1/Q_L - cos(phi)/|Q_c|, with a
/// first-order uncertainty that uses the full fit covariance of
/// (Q_L, |Q_c|, phi).
pub fn internal_q(fit: &HangerFit) -> Result<(f64, f64)> {
    let HangerParams {
        q_loaded: ql,
        q_coupling_mag: qc,
        phi,
        ..
    } = fit.params;
    let inv_ql = 1.0 / ql;
    let coupling = phi.cos() / qc;
    let inv = inv_ql - coupling;
    if !(inv > 0.0) {
        return Err(Error::NonphysicalInternalLoss { inv_ql, coupling });
    }
    let q = 1.0 / inv;
    // dq/dx = -q^2 d(inv)/dx
    let grad = [
        q * q / (ql * ql),
        if qc.is_finite() { -q * q * phi.cos() / (qc * qc) } else { 0.0 },
        if qc.is_finite() { -q * q * phi.sin() / qc } else { 0.0 },
    ];
    let idx = [1usize, 2, 3];
    let mut var = 0.0;
    for (a, ia) in idx.iter().enumerate() {
        for (b, ib) in idx.iter().enumerate() {
            let c = fit.covariance.get(*ia).map_or(0.0, |row| row[*ib]);
            if grad[a] != 0.0 && grad[b] != 0.0 {
                var += grad[a] * grad[b] * c;
            }
        }
    }
    Ok((q, var.max(0.0).sqrt()))
}
