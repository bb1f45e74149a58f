//! Closed-form penalty bounds and optimality certificates for the coalesced solution.
//!
//! All fusion quantities are evaluated at the pooled least-squares point `theta_star`, with the
//! per-condition gradients `g_k = 2 Phi_k^T (Y_k - Phi_k theta_star)`. Pooled stationarity gives
//! `sum_k g_k = 0`.

use nalgebra::DVector;
use serde::Serialize;

use crate::data::{ParameterVector, RegressionProblem};
use crate::error::{Error, Result};
use crate::estimation::pooled_ls_fit;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundsReport {
    pub conditions: Vec<String>,
    pub lambda1_max: f64,
    pub lambda2_max: f64,
    pub lambda1_sufficient: f64,
    pub per_condition_gradients: Vec<Vec<f64>>,
    pub theta_star: Vec<f64>,
}

/// Pooled solution and the per-condition gradients at it.
#[derive(Debug, Clone, PartialEq)]
pub struct PooledGradients {
    pub theta_star: ParameterVector,
    pub gradients: Vec<DVector<f64>>,
}

impl PooledGradients {
    pub fn compute(problems: &[RegressionProblem]) -> Result<Self> {
        let pooled = pooled_ls_fit(problems)?;
        let gradients = problems
            .iter()
            .map(|p| 2.0 * p.phi.transpose() * (&p.y - &p.phi * pooled.theta.values()))
            .collect();
        Ok(PooledGradients {
            theta_star: pooled.theta,
            gradients,
        })
    }

    fn max_gradient_norm(&self) -> f64 {
        self.gradients.iter().map(|g| g.norm()).fold(0.0, f64::max)
    }
}

fn require_fusion(problems: &[RegressionProblem]) -> Result<()> {
    if problems.len() < 2 {
        return Err(Error::Precondition(
            "fusion bound undefined for a single condition".into(),
        ));
    }
    Ok(())
}

/// `max_k (2 / (K - 1)) ||Phi_k^T (Y_k - Phi_k theta_star)||_2`.
pub fn lambda1_max(problems: &[RegressionProblem]) -> Result<f64> {
    require_fusion(problems)?;
    let pg = PooledGradients::compute(problems)?;
    Ok(pg.max_gradient_norm() / (problems.len() - 1) as f64)
}

/// `(4 / K) max_k ||Phi_k^T (Y_k - Phi_k theta_star)||_2`; at or above it the coalesced point
/// always has a feasible pairwise certificate.
pub fn lambda1_sufficient(problems: &[RegressionProblem]) -> Result<f64> {
    require_fusion(problems)?;
    let pg = PooledGradients::compute(problems)?;
    Ok(2.0 * pg.max_gradient_norm() / problems.len() as f64)
}

/// `max_k 2 ||Phi_k^T Y_k||_inf`: above it every parameter vector is zero (with `lambda1 = 0`).
pub fn lambda2_max(problems: &[RegressionProblem]) -> Result<f64> {
    if problems.is_empty() {
        return Err(Error::Precondition("at least one condition is required".into()));
    }
    Ok(problems
        .iter()
        .map(|p| 2.0 * (p.phi.transpose() * &p.y).amax())
        .fold(0.0, f64::max))
}

/// Per-condition margin `lambda1 - (2 / (K - 1)) ||Phi_k^T (Y_k - Phi_k theta_star)||_2`. All
/// margins are nonnegative exactly when `lambda1 >= lambda1_max`.
pub fn kkt_necessary_margin(problems: &[RegressionProblem], lambda1: f64) -> Result<Vec<f64>> {
    require_fusion(problems)?;
    let pg = PooledGradients::compute(problems)?;
    let denom = (problems.len() - 1) as f64;
    Ok(pg.gradients.iter().map(|g| lambda1 - g.norm() / denom).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoalescenceCertificate {
    /// Largest `||z_ki||_2` over all pairs.
    pub z_norm_max: f64,
    /// `z_norm_max <= 1`: the coalesced point `theta_k = theta_star` is optimal.
    pub certified: bool,
    /// `max_k ||sum_{i != k} z_ki - g_k / lambda1||_inf`; zero up to round-off.
    pub identity_residual: f64,
}

/// Builds the explicit pair subgradients `z_ki = (g_k - g_i) / (lambda1 K)` and checks that they
/// lie in the unit ball. They satisfy `sum_{i != k} z_ki = g_k / lambda1` for every `k`, which is
/// the stationarity condition of the coalesced point.
pub fn coalescence_certificate(
    problems: &[RegressionProblem],
    lambda1: f64,
) -> Result<CoalescenceCertificate> {
    require_fusion(problems)?;
    if !(lambda1 > 0.0 && lambda1.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "certificate needs a positive finite lambda1, got {lambda1}"
        )));
    }
    let pg = PooledGradients::compute(problems)?;
    let k_count = problems.len();
    let scale = lambda1 * k_count as f64;
    let g = &pg.gradients;

    let mut z_norm_max = 0.0f64;
    let mut identity_residual = 0.0f64;
    for k in 0..k_count {
        let mut sum = DVector::zeros(g[k].len());
        for i in (0..k_count).filter(|&i| i != k) {
            let z = (&g[k] - &g[i]) / scale;
            if i > k {
                z_norm_max = z_norm_max.max(z.norm());
            }
            sum += z;
        }
        identity_residual = identity_residual.max((sum - &g[k] / lambda1).amax());
    }
    Ok(CoalescenceCertificate {
        z_norm_max,
        certified: z_norm_max <= 1.0,
        identity_residual,
    })
}

pub fn bounds_report(problems: &[RegressionProblem]) -> Result<BoundsReport> {
    require_fusion(problems)?;
    let pg = PooledGradients::compute(problems)?;
    let k_count = problems.len() as f64;
    let max_norm = pg.max_gradient_norm();
    Ok(BoundsReport {
        conditions: problems.iter().map(|p| p.condition_name.clone()).collect(),
        lambda1_max: max_norm / (k_count - 1.0),
        lambda2_max: lambda2_max(problems)?,
        lambda1_sufficient: 2.0 * max_norm / k_count,
        per_condition_gradients: pg.gradients.iter().map(|g| g.as_slice().to_vec()).collect(),
        theta_star: pg.theta_star.as_slice().to_vec(),
    })
}
