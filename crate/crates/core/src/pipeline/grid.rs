use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bounds::lambda1_max;
use crate::criterion::{objective, FusionVariant, Hyperparameters};
use crate::data::{condition_key, RegressionProblem};
use crate::error::{Error, Result};
use crate::estimation::shared_structure;
use crate::solver::{solve, SolverConfig};

/// Penalty grid. `lambda1_factors` are multiplied by `lambda1_max` of the estimation data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub lambda1_factors: Vec<f64>,
    pub lambda2_values: Vec<f64>,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            lambda1_factors: vec![1e-5, 1e-4, 1e-3, 1e-2, 1e-1, 1.0],
            lambda2_values: vec![0.0, 1e-6, 1e-4, 1e-2, 1.0, 1e2],
        }
    }
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        for (name, values) in [
            ("lambda1_factors", &self.lambda1_factors),
            ("lambda2_values", &self.lambda2_values),
        ] {
            if values.is_empty() {
                return Err(Error::InvalidInput(format!("{name} is empty")));
            }
            if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
                return Err(Error::InvalidInput(format!(
                    "{name} must be finite and nonnegative"
                )));
            }
            if values.windows(2).any(|w| w[0] > w[1]) {
                return Err(Error::InvalidInput(format!("{name} must be sorted ascending")));
            }
        }
        Ok(())
    }
}

/// How a grid point is scored on the validation data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreKind {
    /// Validation squared error only.
    #[default]
    ValidationFit,
    /// Full criterion on validation data, penalties weighted by the candidate lambdas.
    LiteralCriterion,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridPoint {
    pub lambda1: f64,
    pub lambda2: f64,
    /// `+inf` (serialized as `null`) when the solve did not converge.
    pub score: f64,
    pub converged: bool,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridResult {
    pub selected: Hyperparameters,
    /// `lambda1_max` the factors were scaled by; `None` with a single condition.
    pub lambda1_max: Option<f64>,
    pub score: ScoreKind,
    pub table: Vec<GridPoint>,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct GridOptions {
    pub score: ScoreKind,
    pub fusion_variant: FusionVariant,
}

/// Solves on `estimation` at every grid point and picks the point with the lowest validation
/// score. Ties go to the larger `lambda1`, then the larger `lambda2`. Points are solved in
/// parallel; the table keeps grid order (lambda1 outer, lambda2 inner).
pub fn grid_search(
    estimation: &[RegressionProblem],
    validation: &[RegressionProblem],
    grid: &GridSpec,
    opts: GridOptions,
    cfg: &SolverConfig,
) -> Result<GridResult> {
    grid.validate()?;
    let structure = shared_structure(estimation)?;
    if shared_structure(validation)? != structure {
        return Err(Error::Dimension(
            "validation problems use a different model structure".into(),
        ));
    }
    if estimation.len() != validation.len() {
        return Err(Error::InvalidInput(format!(
            "{} estimation but {} validation conditions",
            estimation.len(),
            validation.len()
        )));
    }
    for (e, v) in estimation.iter().zip(validation) {
        if condition_key(&e.condition_name) != condition_key(&v.condition_name) {
            return Err(Error::InvalidInput(format!(
                "estimation {} is paired with validation {}",
                e.condition_name, v.condition_name
            )));
        }
    }

    let l1max = if estimation.len() >= 2 {
        Some(lambda1_max(estimation)?)
    } else {
        None
    };
    let lambda1_values: Vec<f64> = match l1max {
        Some(m) => grid.lambda1_factors.iter().map(|f| f * m).collect(),
        None => vec![0.0],
    };
    let points: Vec<(f64, f64)> = lambda1_values
        .iter()
        .flat_map(|&l1| grid.lambda2_values.iter().map(move |&l2| (l1, l2)))
        .collect();

    let table = points
        .par_iter()
        .map(|&(lambda1, lambda2)| -> Result<GridPoint> {
            let hp = Hyperparameters::new(lambda1, lambda2)?.with_variant(opts.fusion_variant);
            let result = match solve(estimation, &hp, cfg) {
                Ok(r) => r,
                Err(Error::Diverged { .. }) => {
                    return Ok(GridPoint {
                        lambda1,
                        lambda2,
                        score: f64::INFINITY,
                        converged: false,
                        iterations: 0,
                    })
                }
                Err(e) => return Err(e),
            };
            let score = if !result.converged {
                f64::INFINITY
            } else {
                match opts.score {
                    ScoreKind::ValidationFit => validation
                        .iter()
                        .zip(&result.thetas)
                        .map(|(p, t)| p.residual_norm_sq(t.values()))
                        .sum(),
                    ScoreKind::LiteralCriterion => objective(validation, &result.thetas, &hp)?.total,
                }
            };
            Ok(GridPoint {
                lambda1,
                lambda2,
                score,
                converged: result.converged,
                iterations: result.iterations,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let best = select_best(&table)
        .ok_or_else(|| Error::NotConverged("no grid point converged".into()))?;
    let selected = Hyperparameters::new(best.lambda1, best.lambda2)?.with_variant(opts.fusion_variant);
    Ok(GridResult {
        selected,
        lambda1_max: l1max,
        score: opts.score,
        table,
    })
}

/// Lowest finite score; ties go to the larger `lambda1`, then the larger `lambda2`.
fn select_best(table: &[GridPoint]) -> Option<&GridPoint> {
    table.iter().filter(|p| p.score.is_finite()).min_by(|a, b| {
        a.score
            .total_cmp(&b.score)
            .then(b.lambda1.total_cmp(&a.lambda1))
            .then(b.lambda2.total_cmp(&a.lambda2))
    })
}
