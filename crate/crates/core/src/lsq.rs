//! Thin adapter over the `levenberg-marquardt` crate for dynamically sized
//! problems, plus covariance helpers shared by the fitting modules.

use levenberg_marquardt::{LeastSquaresProblem, LevenbergMarquardt};
use nalgebra::{DMatrix, DVector, Dyn, Owned};

use crate::error::{Error, Result};

/// A residual model r(p) with an analytic Jacobian.
pub trait Model {
    fn n_residuals(&self) -> usize;
    fn residuals(&self, p: &[f64]) -> DVector<f64>;
    fn jacobian(&self, p: &[f64]) -> DMatrix<f64>;
}

struct Problem<'a, M: Model> {
    model: &'a M,
    params: DVector<f64>,
}

impl<M: Model> LeastSquaresProblem<f64, Dyn, Dyn> for Problem<'_, M> {
    type ResidualStorage = Owned<f64, Dyn>;
    type JacobianStorage = Owned<f64, Dyn, Dyn>;
    type ParameterStorage = Owned<f64, Dyn>;

    fn set_params(&mut self, x: &DVector<f64>) {
        self.params.copy_from(x);
    }

    fn params(&self) -> DVector<f64> {
        self.params.clone()
    }

    fn residuals(&self) -> Option<DVector<f64>> {
        let r = self.model.residuals(self.params.as_slice());
        r.iter().all(|v| v.is_finite()).then_some(r)
    }

    fn jacobian(&self) -> Option<DMatrix<f64>> {
        let j = self.model.jacobian(self.params.as_slice());
        j.iter().all(|v| v.is_finite()).then_some(j)
    }
}

#[derive(Debug, Clone)]
pub struct Solution {
    pub params: Vec<f64>,
    /// Residual sum of squares at the solution.
    pub ssr: f64,
    pub evaluations: usize,
    pub jacobian: DMatrix<f64>,
}

/// Minimizes the sum of squared residuals starting from `x0`.
pub fn minimize<M: Model>(model: &M, x0: &[f64], stage: &'static str) -> Result<Solution> {
    let problem = Problem {
        model,
        params: DVector::from_column_slice(x0),
    };
    let (problem, report) = LevenbergMarquardt::new().with_patience(200).minimize(problem);
    let params: Vec<f64> = problem.params.iter().copied().collect();
    let ssr = 2.0 * report.objective_function;
    // Hitting machine precision on an exact (noiseless) problem is a success.
    let ok = report.termination.was_successful()
        || matches!(report.termination, levenberg_marquardt::TerminationReason::NoImprovementPossible(_));
    if !ok || !ssr.is_finite() {
        return Err(Error::NonConvergence {
            stage,
            detail: format!("{:?} after {} evaluations", report.termination, report.number_of_evaluations),
            residual: ssr,
        });
    }
    let jacobian = model.jacobian(&params);
    Ok(Solution {
        params,
        ssr,
        evaluations: report.number_of_evaluations,
        jacobian,
    })
}

/// Inverse of JᵀJ computed with column equilibration; `None` if singular to
/// working precision.
pub fn inverse_normal_matrix(jacobian: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let n = jacobian.ncols();
    let scale: Vec<f64> = (0..n).map(|c| jacobian.column(c).norm()).collect();
    if scale.iter().any(|s| !(*s > 0.0) || !s.is_finite()) {
        return None;
    }
    let mut js = jacobian.clone();
    for (c, s) in scale.iter().enumerate() {
        js.column_mut(c).scale_mut(1.0 / s);
    }
    let svd = js.svd(false, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if !(smin > smax * 1e-10) {
        return None;
    }
    let v_t = svd.v_t?;
    let mut inner = DMatrix::zeros(n, n);
    for k in 0..n {
        let w = 1.0 / (svd.singular_values[k] * svd.singular_values[k]);
        let row = v_t.row(k);
        inner += row.transpose() * row * w;
    }
    Some(DMatrix::from_fn(n, n, |i, j| inner[(i, j)] / (scale[i] * scale[j])))
}

/// Moore-Penrose pseudo-inverse of JᵀJ; directions with singular values below
/// `rcond` times the largest get zero variance. Returns the matrix and the
/// effective rank.
pub fn pseudo_inverse_normal_matrix(jacobian: &DMatrix<f64>, rcond: f64) -> (DMatrix<f64>, usize) {
    let n = jacobian.ncols();
    let scale: Vec<f64> = (0..n)
        .map(|c| {
            let s = jacobian.column(c).norm();
            if s > 0.0 && s.is_finite() {
                s
            } else {
                1.0
            }
        })
        .collect();
    let mut js = jacobian.clone();
    for (c, s) in scale.iter().enumerate() {
        js.column_mut(c).scale_mut(1.0 / s);
    }
    let svd = js.svd(false, true);
    let smax = svd.singular_values.max();
    let v_t = svd.v_t.expect("requested V^T");
    let mut inner = DMatrix::zeros(n, n);
    let mut rank = 0;
    for k in 0..svd.singular_values.len() {
        let s = svd.singular_values[k];
        if s > smax * rcond {
            rank += 1;
            let row = v_t.row(k);
            inner += row.transpose() * row / (s * s);
        }
    }
    (DMatrix::from_fn(n, n, |i, j| inner[(i, j)] / (scale[i] * scale[j])), rank)
}
