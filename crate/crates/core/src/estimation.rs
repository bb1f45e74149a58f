//! Least-squares baselines: per-condition fits and the pooled fit `theta_star`.

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen, SVD};
use serde::Serialize;

use crate::data::{stack_problems, ModelStructure, ParameterVector, RegressionProblem};
use crate::error::{Error, Result};

/// Largest parameter count for which the Gram spectrum is computed.
pub const GRAM_EIGEN_LIMIT: usize = 512;

#[derive(Debug, Clone, PartialEq)]
pub struct LsFit {
    pub theta: ParameterVector,
    pub residual_norm_sq: f64,
    /// Smallest eigenvalue of `Phi^T Phi`; `None` above [`GRAM_EIGEN_LIMIT`] parameters.
    pub gram_min_eig: Option<f64>,
    pub gram_positive_definite: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GramInfo {
    pub min_eig: Option<f64>,
    pub positive_definite: bool,
}

/// Least-squares fit of one condition.
///
/// Uses an SVD so that rank-deficient designs return the minimum-norm minimizer.
pub fn ls_fit(p: &RegressionProblem) -> Result<LsFit> {
    if p.rows() == 0 {
        return Err(Error::InvalidInput(format!("{}: no rows", p.condition_name)));
    }
    if p.phi.iter().chain(p.y.iter()).any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "{}: non-finite entries in Y or Phi",
            p.condition_name
        )));
    }
    let theta = min_norm_solve(&p.phi, &p.y);
    let residual_norm_sq = p.residual_norm_sq(&theta);
    let gram = gram_info(&p.phi);
    Ok(LsFit {
        theta: ParameterVector::new(theta, p.structure)?,
        residual_norm_sq,
        gram_min_eig: gram.min_eig,
        gram_positive_definite: gram.positive_definite,
    })
}

/// The single parameter vector minimizing the summed squared residuals of all conditions.
pub fn pooled_ls_fit(problems: &[RegressionProblem]) -> Result<LsFit> {
    let stacked = stack_problems(problems, "pooled")?;
    ls_fit(&stacked)
}

fn min_norm_solve(phi: &DMatrix<f64>, y: &DVector<f64>) -> DVector<f64> {
    let (m, n) = phi.shape();
    if n == 0 {
        return DVector::zeros(0);
    }
    let svd = SVD::new(phi.clone(), true, true);
    let sigma_max = svd.singular_values.max();
    if sigma_max == 0.0 {
        return DVector::zeros(n);
    }
    let tol = m.max(n) as f64 * sigma_max * f64::EPSILON;
    svd.solve(y, tol).expect("SVD computed with both factors")
}

/// Positive-definiteness information for `Phi^T Phi`.
pub fn gram_info(phi: &DMatrix<f64>) -> GramInfo {
    let gram = phi.transpose() * phi;
    let n = gram.nrows();
    if n <= GRAM_EIGEN_LIMIT {
        let eig = SymmetricEigen::new(gram);
        let min = eig.eigenvalues.min();
        let max = eig.eigenvalues.max();
        let positive_definite = phi.nrows() >= n && min > n as f64 * f64::EPSILON * max.abs();
        GramInfo {
            min_eig: Some(min),
            positive_definite,
        }
    } else {
        GramInfo {
            min_eig: None,
            positive_definite: phi.nrows() >= n && Cholesky::new(gram).is_some(),
        }
    }
}

/// Per-condition least-squares fits, in input order.
pub fn ls_fit_all(problems: &[RegressionProblem]) -> Result<Vec<LsFit>> {
    problems.iter().map(ls_fit).collect()
}

/// Problem structure check used by callers that take several conditions.
pub fn shared_structure(problems: &[RegressionProblem]) -> Result<ModelStructure> {
    crate::data::check_shared_structure(problems.iter().map(|p| p.structure))
}
