use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::SolveResult;
use crate::criterion::{objective, FusionVariant, Hyperparameters};
use crate::data::{ParameterVector, RegressionProblem};
use crate::error::{Error, Result};
use crate::estimation::shared_structure;

pub const DEFAULT_ORACLE_ITERATIONS: usize = 200_000;

/// Size guard for the reference solver.
#[derive(Debug, Clone, Copy)]
pub struct OracleLimits {
    pub max_conditions: usize,
    pub max_params: usize,
    pub max_rows: usize,
}

impl Default for OracleLimits {
    fn default() -> Self {
        OracleLimits {
            max_conditions: 6,
            max_params: 20,
            max_rows: 100,
        }
    }
}

/// How often the exact criterion is evaluated for best-iterate tracking.
const EVAL_EVERY: usize = 10;

/// Reference minimizer for desk-scale instances.
///
/// Runs a primal-dual splitting with dual iterates projected onto the dual-norm balls of the
/// nonsmooth terms: radius `lambda1` Euclidean balls for every pair difference and the
/// `[-lambda2, lambda2]` box for the l1 term. The smooth part is handled by explicit gradient
/// steps. It starts from a seeded random point and keeps the best iterate by exact objective.
/// Nothing here is shared with the ADMM solver apart from objective evaluation.
pub fn solve_oracle(
    problems: &[RegressionProblem],
    hp: &Hyperparameters,
    iterations: usize,
    seed: u64,
) -> Result<SolveResult> {
    hp.validate()?;
    let structure = shared_structure(problems)?;
    let limits = OracleLimits::default();
    let k_count = problems.len();
    let n = structure.n_theta();
    let max_rows = problems.iter().map(|p| p.rows()).max().unwrap_or(0);
    if k_count > limits.max_conditions || n > limits.max_params || max_rows > limits.max_rows {
        return Err(Error::Precondition(format!(
            "reference solver is limited to K <= {}, n_theta <= {}, M <= {} (got K={k_count}, n_theta={n}, M={max_rows})",
            limits.max_conditions, limits.max_params, limits.max_rows
        )));
    }
    if iterations == 0 {
        return Err(Error::InvalidInput("reference solver needs at least one iteration".into()));
    }

    let grams: Vec<DMatrix<f64>> = problems.iter().map(|p| p.phi.transpose() * &p.phi).collect();
    let targets: Vec<DVector<f64>> = problems.iter().map(|p| p.phi.transpose() * &p.y).collect();

    let squared = hp.fusion_variant == FusionVariant::L2Squared;
    let nonsmooth_pairs = !squared && hp.lambda1 > 0.0;
    let pairs: Vec<(usize, usize)> = (0..k_count)
        .flat_map(|a| (a + 1..k_count).map(move |b| (a, b)))
        .collect();

    // Lipschitz constant of the smooth part's gradient.
    let gram_norm = grams
        .iter()
        .map(|g| g.symmetric_eigenvalues().max())
        .fold(0.0f64, f64::max);
    let mut lipschitz = 2.0 * gram_norm;
    if squared {
        // Laplacian of the complete graph has largest eigenvalue K.
        lipschitz += 2.0 * hp.lambda1 * k_count as f64;
    }
    let lipschitz = lipschitz.max(1e-12);
    // Squared norm of the stacked linear map [pair differences; identity].
    let op_norm_sq = if nonsmooth_pairs { k_count as f64 + 1.0 } else { 1.0 };
    let sigma = lipschitz / (2.0 * op_norm_sq);
    let tau = 0.99 / (lipschitz / 2.0 + sigma * op_norm_sq);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x: Vec<DVector<f64>> = (0..k_count)
        .map(|_| DVector::from_fn(n, |_, _| rng.sample(StandardNormal)))
        .collect();
    let mut pair_dual: Vec<DVector<f64>> = vec![DVector::zeros(n); pairs.len()];
    let mut l1_dual: Vec<DVector<f64>> = vec![DVector::zeros(n); k_count];

    let eval = |x: &[DVector<f64>]| -> Result<(f64, Vec<ParameterVector>)> {
        let params = x
            .iter()
            .map(|v| ParameterVector::new(v.clone(), structure))
            .collect::<Result<Vec<_>>>()?;
        Ok((objective(problems, &params, hp)?.total, params))
    };
    let (mut best_value, mut best) = eval(&x)?;

    for t in 1..=iterations {
        // gradient of the smooth part plus adjoint of the current duals
        let mut step: Vec<DVector<f64>> = (0..k_count)
            .map(|k| 2.0 * (&grams[k] * &x[k] - &targets[k]) + &l1_dual[k])
            .collect();
        if squared && hp.lambda1 > 0.0 {
            let total: DVector<f64> = x.iter().fold(DVector::zeros(n), |acc, v| acc + v);
            for k in 0..k_count {
                step[k] += 2.0 * hp.lambda1 * (k_count as f64 * &x[k] - &total);
            }
        }
        if nonsmooth_pairs {
            for (p, &(a, b)) in pairs.iter().enumerate() {
                step[a] += &pair_dual[p];
                step[b] -= &pair_dual[p];
            }
        }
        let x_new: Vec<DVector<f64>> = x.iter().zip(&step).map(|(xi, g)| xi - tau * g).collect();
        let extrapolated: Vec<DVector<f64>> =
            x_new.iter().zip(&x).map(|(a, b)| 2.0 * a - b).collect();

        if nonsmooth_pairs {
            for (p, &(a, b)) in pairs.iter().enumerate() {
                let y = &pair_dual[p] + sigma * (&extrapolated[a] - &extrapolated[b]);
                pair_dual[p] = project_ball(y, hp.lambda1);
            }
        }
        for k in 0..k_count {
            let y = &l1_dual[k] + sigma * &extrapolated[k];
            l1_dual[k] = y.map(|v| v.clamp(-hp.lambda2, hp.lambda2));
        }
        x = x_new;
        if x.iter().any(|v| v.iter().any(|e| !e.is_finite())) {
            return Err(Error::Diverged {
                iteration: t,
                message: "reference solver produced non-finite iterate".into(),
            });
        }

        if t % EVAL_EVERY == 0 || t == iterations {
            let (value, params) = eval(&x)?;
            if value < best_value {
                best_value = value;
                best = params;
            }
        }
    }

    let objective = objective(problems, &best, hp)?;
    Ok(SolveResult {
        thetas: best,
        objective,
        iterations,
        converged: true,
        primal_residual: f64::NAN,
        dual_residual: f64::NAN,
        rho: f64::NAN,
        trace: Vec::new(),
    })
}

fn project_ball(v: DVector<f64>, radius: f64) -> DVector<f64> {
    let norm = v.norm();
    if norm <= radius {
        v
    } else {
        v * (radius / norm)
    }
}
