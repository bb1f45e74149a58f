use log::debug;
use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use super::{SolveResult, SolverConfig, TraceRow};
use crate::criterion::{objective, prox_block_l2, prox_l1, FusionVariant, Hyperparameters};
use crate::data::{ParameterVector, RegressionProblem};
use crate::error::{Error, Result};
use crate::estimation::shared_structure;

/// Minimizes the joint criterion by ADMM, starting from zero.
pub fn solve(
    problems: &[RegressionProblem],
    hp: &Hyperparameters,
    cfg: &SolverConfig,
) -> Result<SolveResult> {
    solve_from(problems, hp, cfg, None)
}

/// Minimizes the joint criterion by ADMM from an optional initial parameter list.
///
/// Splitting: one auxiliary `d_p = theta_a - theta_b` per unordered pair `a < b` (block
/// soft-threshold step) and one `w_k = theta_k` per condition (soft-threshold step). With the
/// squared fusion variant the pair terms are smooth and go into the quadratic step instead.
/// The coupled quadratic step has the form `blockdiag(A_k) - beta * 1 1^T (x) I` and is solved
/// exactly through the sum `s = sum_k theta_k`, reusing cached Cholesky factors of every `A_k`.
pub fn solve_from(
    problems: &[RegressionProblem],
    hp: &Hyperparameters,
    cfg: &SolverConfig,
    init: Option<&[ParameterVector]>,
) -> Result<SolveResult> {
    hp.validate()?;
    cfg.validate()?;
    let structure = shared_structure(problems)?;
    let k_count = problems.len();
    let n = structure.n_theta();

    let grams: Vec<DMatrix<f64>> = problems.iter().map(|p| p.phi.transpose() * &p.phi).collect();
    let phi_t_y: Vec<DVector<f64>> = problems.iter().map(|p| p.phi.transpose() * &p.y).collect();
    let finite = grams.iter().all(|g| g.iter().all(|v| v.is_finite()))
        && phi_t_y.iter().all(|b| b.iter().all(|v| v.is_finite()));
    if !finite {
        return Err(Error::InvalidInput("non-finite regression data".into()));
    }

    let pairs: Vec<(usize, usize)> =
        if hp.fusion_variant == FusionVariant::L2 && hp.lambda1 > 0.0 {
            (0..k_count)
                .flat_map(|a| (a + 1..k_count).map(move |b| (a, b)))
                .collect()
        } else {
            Vec::new()
        };
    let smooth_coupling = match hp.fusion_variant {
        FusionVariant::L2Squared => 2.0 * hp.lambda1,
        FusionVariant::L2 => 0.0,
    };

    let mut theta: Vec<DVector<f64>> = match init {
        Some(init) => {
            if init.len() != k_count || init.iter().any(|t| t.structure() != structure) {
                return Err(Error::Dimension(
                    "initial parameters do not match the problems".into(),
                ));
            }
            init.iter().map(|t| t.values().clone()).collect()
        }
        None => vec![DVector::zeros(n); k_count],
    };
    let mut d: Vec<DVector<f64>> = pairs.iter().map(|&(a, b)| &theta[a] - &theta[b]).collect();
    let mut u: Vec<DVector<f64>> = vec![DVector::zeros(n); pairs.len()];
    let mut w: Vec<DVector<f64>> = theta.clone();
    let mut v: Vec<DVector<f64>> = vec![DVector::zeros(n); k_count];

    let mut rho = cfg.rho;
    let mut rho_updates = 0;
    let mut system = QuadraticStep::new(&grams, rho, smooth_coupling, !pairs.is_empty())?;

    let constraint_dim = ((pairs.len() + k_count) * n) as f64;
    let primal_dim = (k_count * n) as f64;
    let mut trace = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    let (mut r_norm, mut s_norm) = (f64::INFINITY, f64::INFINITY);

    for iter in 1..=cfg.max_iter {
        iterations = iter;

        // theta-step
        let mut rhs: Vec<DVector<f64>> = (0..k_count)
            .map(|k| 2.0 * &phi_t_y[k] + rho * (&w[k] - &v[k]))
            .collect();
        for (p, &(a, b)) in pairs.iter().enumerate() {
            let c = rho * (&d[p] - &u[p]);
            rhs[a] += &c;
            rhs[b] -= &c;
        }
        theta = system.solve(&rhs);
        if let Some(k) = theta.iter().position(|t| t.iter().any(|x| !x.is_finite())) {
            return Err(Error::Diverged {
                iteration: iter,
                message: format!("non-finite parameters for condition {}", k + 1),
            });
        }

        // auxiliary steps and scaled dual updates
        let mut r_sq = 0.0;
        let mut ax_sq = 0.0;
        let mut z_sq = 0.0;
        let mut dual_push: Vec<DVector<f64>> = vec![DVector::zeros(n); k_count];
        let tau_fusion = hp.lambda1 / rho;
        for (p, &(a, b)) in pairs.iter().enumerate() {
            let diff = &theta[a] - &theta[b];
            let d_new = prox_block_l2(&(&diff + &u[p]), tau_fusion);
            let delta = &d_new - &d[p];
            dual_push[a] += &delta;
            dual_push[b] -= &delta;
            let r = &diff - &d_new;
            u[p] += &r;
            r_sq += r.norm_squared();
            ax_sq += diff.norm_squared();
            z_sq += d_new.norm_squared();
            d[p] = d_new;
        }
        let tau_sparse = hp.lambda2 / rho;
        for k in 0..k_count {
            let w_new = prox_l1(&(&theta[k] + &v[k]), tau_sparse);
            dual_push[k] += &w_new - &w[k];
            let r = &theta[k] - &w_new;
            v[k] += &r;
            r_sq += r.norm_squared();
            ax_sq += theta[k].norm_squared();
            z_sq += w_new.norm_squared();
            w[k] = w_new;
        }
        r_norm = r_sq.sqrt();
        s_norm = rho * dual_push.iter().map(|x| x.norm_squared()).sum::<f64>().sqrt();

        // A^T y with y = rho * (u, v)
        let mut aty: Vec<DVector<f64>> = v.clone();
        for (p, &(a, b)) in pairs.iter().enumerate() {
            aty[a] += &u[p];
            aty[b] -= &u[p];
        }
        let aty_norm = rho * aty.iter().map(|x| x.norm_squared()).sum::<f64>().sqrt();

        let eps_pri = cfg.eps_abs * constraint_dim.sqrt() + cfg.eps_rel * ax_sq.sqrt().max(z_sq.sqrt());
        let eps_dual = cfg.eps_abs * primal_dim.sqrt() + cfg.eps_rel * aty_norm;

        if cfg.trace {
            let thetas = to_params(&theta, structure)?;
            trace.push(TraceRow {
                iter,
                objective: objective(problems, &thetas, hp)?.total,
                primal_res: r_norm,
                dual_res: s_norm,
            });
        }

        if r_norm <= eps_pri && s_norm <= eps_dual {
            converged = true;
            break;
        }

        if cfg.adapt_rho && rho_updates < cfg.max_rho_updates {
            let factor = if r_norm > 10.0 * s_norm {
                Some(2.0)
            } else if s_norm > 10.0 * r_norm {
                Some(0.5)
            } else {
                None
            };
            if let Some(f) = factor {
                rho *= f;
                rho_updates += 1;
                u.iter_mut().for_each(|x| *x /= f);
                v.iter_mut().for_each(|x| *x /= f);
                system = QuadraticStep::new(&grams, rho, smooth_coupling, !pairs.is_empty())?;
                debug!("iteration {iter}: rho -> {rho}");
            }
        }
    }

    let thetas = to_params(&theta, structure)?;
    let objective = objective(problems, &thetas, hp)?;
    Ok(SolveResult {
        thetas,
        objective,
        iterations,
        converged,
        primal_residual: r_norm,
        dual_residual: s_norm,
        rho,
        trace,
    })
}

fn to_params(
    theta: &[DVector<f64>],
    structure: crate::data::ModelStructure,
) -> Result<Vec<ParameterVector>> {
    theta
        .iter()
        .map(|t| ParameterVector::new(t.clone(), structure))
        .collect()
}

/// Cached factorization of the theta-step system
/// `(2 Phi_k^T Phi_k + (beta K + rho) I) theta_k - beta sum_i theta_i = rhs_k`.
struct QuadraticStep {
    blocks: Vec<Cholesky<f64, Dyn>>,
    /// Factor of `I - beta * sum_k A_k^{-1}`; absent when `beta == 0`.
    sum_system: Option<Cholesky<f64, Dyn>>,
    beta: f64,
}

impl QuadraticStep {
    fn new(grams: &[DMatrix<f64>], rho: f64, smooth_coupling: f64, pair_split: bool) -> Result<Self> {
        let k_count = grams.len();
        let beta = smooth_coupling + if pair_split { rho } else { 0.0 };
        let shift = beta * k_count as f64 + rho;
        let n = grams.first().map_or(0, |g| g.nrows());
        let blocks = grams
            .iter()
            .map(|g| {
                let a = 2.0 * g + DMatrix::from_diagonal_element(n, n, shift);
                Cholesky::new(a).ok_or_else(|| {
                    Error::Diverged {
                        iteration: 0,
                        message: "theta-step system is not positive definite".into(),
                    }
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let sum_system = if beta > 0.0 {
            let mut m = DMatrix::identity(n, n);
            for c in &blocks {
                m -= beta * c.inverse();
            }
            // symmetrize against round-off before factoring
            let m = (&m + m.transpose()) * 0.5;
            Some(Cholesky::new(m).ok_or_else(|| Error::Diverged {
                iteration: 0,
                message: "coupling system is not positive definite".into(),
            })?)
        } else {
            None
        };
        Ok(QuadraticStep {
            blocks,
            sum_system,
            beta,
        })
    }

    fn solve(&self, rhs: &[DVector<f64>]) -> Vec<DVector<f64>> {
        let partial: Vec<DVector<f64>> = self
            .blocks
            .iter()
            .zip(rhs)
            .map(|(c, r)| c.solve(r))
            .collect();
        let Some(sum_system) = &self.sum_system else {
            return partial;
        };
        let mut acc = DVector::zeros(partial[0].len());
        for p in &partial {
            acc += p;
        }
        let total = sum_system.solve(&acc);
        let coupled = self.beta * total;
        self.blocks
            .iter()
            .zip(rhs)
            .map(|(c, r)| c.solve(&(r + &coupled)))
            .collect()
    }
}
