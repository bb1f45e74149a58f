//! Joint minimization of the fusion/sparsity criterion.
//!
//! [`solve`] is the production ADMM solver. [`solve_oracle`] is a slow primal-dual reference
//! used only to cross-check it on tiny instances.

mod admm;
mod oracle;

use serde::{Deserialize, Serialize};

pub use admm::{solve, solve_from};
pub use oracle::{solve_oracle, OracleLimits, DEFAULT_ORACLE_ITERATIONS};

use crate::criterion::ObjectiveBreakdown;
use crate::data::ParameterVector;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    /// Augmented-Lagrangian weight.
    pub rho: f64,
    pub eps_abs: f64,
    pub eps_rel: f64,
    pub max_iter: usize,
    /// Rescale `rho` by 2 when one residual exceeds the other by a factor of 10.
    pub adapt_rho: bool,
    /// Upper bound on the number of `rho` rescalings.
    pub max_rho_updates: usize,
    /// Record an iteration trace (objective and residuals per iteration).
    pub trace: bool,
    /// Seed for the reference solver's starting point.
    pub seed: u64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            rho: 1.0,
            eps_abs: 1e-8,
            eps_rel: 1e-6,
            max_iter: 50_000,
            adapt_rho: true,
            max_rho_updates: 10,
            trace: false,
            seed: 0,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.rho > 0.0 && self.rho.is_finite()) {
            return Err(Error::InvalidInput(format!("rho must be positive, got {}", self.rho)));
        }
        if !(self.eps_abs > 0.0 && self.eps_rel > 0.0) {
            return Err(Error::InvalidInput("solver tolerances must be positive".into()));
        }
        if self.max_iter == 0 {
            return Err(Error::InvalidInput("max_iter must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TraceRow {
    pub iter: usize,
    pub objective: f64,
    pub primal_res: f64,
    pub dual_res: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveResult {
    pub thetas: Vec<ParameterVector>,
    pub objective: ObjectiveBreakdown,
    pub iterations: usize,
    pub converged: bool,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub rho: f64,
    pub trace: Vec<TraceRow>,
}

impl SolveResult {
    pub fn max_pairwise_distance(&self) -> f64 {
        max_pairwise_distance(&self.thetas)
    }

    pub fn is_coalesced(&self) -> bool {
        self.max_pairwise_distance() <= coalescence_tolerance(&self.thetas)
    }

    /// Writes the trace as `iter,objective,primal_res,dual_res` CSV.
    pub fn trace_csv(&self) -> String {
        use crate::fmt::fmt_f64;
        let mut out = String::from("iter,objective,primal_res,dual_res\n");
        for row in &self.trace {
            out.push_str(&format!(
                "{},{},{},{}\n",
                row.iter,
                fmt_f64(row.objective),
                fmt_f64(row.primal_res),
                fmt_f64(row.dual_res)
            ));
        }
        out
    }
}

pub fn max_pairwise_distance(thetas: &[ParameterVector]) -> f64 {
    let mut max = 0.0f64;
    for (k, a) in thetas.iter().enumerate() {
        for b in &thetas[k + 1..] {
            max = max.max((a.values() - b.values()).norm());
        }
    }
    max
}

/// Merge threshold: conditions `k, i` count as merged when
/// `||theta_k - theta_i||_2 <= 1e-5 * (1 + max_k ||theta_k||_2)`.
pub fn coalescence_tolerance(thetas: &[ParameterVector]) -> f64 {
    let scale = thetas
        .iter()
        .map(|t| t.values().norm())
        .fold(0.0f64, f64::max);
    1e-5 * (1.0 + scale)
}

/// Groups of conditions whose parameter vectors are within the merge threshold, in order of
/// first member. Merging is transitive.
pub fn merged_groups(thetas: &[ParameterVector]) -> Vec<Vec<usize>> {
    let tol = coalescence_tolerance(thetas);
    let k = thetas.len();
    let mut parent: Vec<usize> = (0..k).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    for a in 0..k {
        for b in a + 1..k {
            if (thetas[a].values() - thetas[b].values()).norm() <= tol {
                let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
                if ra != rb {
                    parent[ra.max(rb)] = ra.min(rb);
                }
            }
        }
    }
    let mut groups: Vec<Vec<usize>> = Vec::new();
    let mut root_slot = vec![usize::MAX; k];
    for i in 0..k {
        let r = find(&mut parent, i);
        if root_slot[r] == usize::MAX {
            root_slot[r] = groups.len();
            groups.push(Vec::new());
        }
        groups[root_slot[r]].push(i);
    }
    groups
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::ModelStructure;

    fn pv(v: &[f64]) -> ParameterVector {
        ParameterVector::from_slice(v, ModelStructure::new(v.len(), 1).unwrap()).unwrap()
    }

    #[test]
    fn merged_groups_are_transitive() {
        let thetas = [pv(&[0.0]), pv(&[5.0]), pv(&[1e-7]), pv(&[5.0 + 1e-6]), pv(&[9.0])];
        assert_eq!(merged_groups(&thetas), vec![vec![0, 2], vec![1, 3], vec![4]]);
        assert!((max_pairwise_distance(&thetas) - 9.0).abs() < 1e-15);
    }

    #[test]
    fn config_validation() {
        assert!(SolverConfig::default().validate().is_ok());
        let bad = SolverConfig { rho: 0.0, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = SolverConfig { max_iter: 0, ..Default::default() };
        assert!(bad.validate().is_err());
    }
}
