use nalgebra::DVector;
use serde::Serialize;

use crate::data::{ParameterVector, RegressionProblem};
use crate::error::{Error, Result};

/// Goodness of fit in percent: `100 * (1 - ||Y - Y_hat||^2 / ||Y - mean(Y)||^2)`.
pub fn fit_metric(y: &DVector<f64>, y_hat: &DVector<f64>) -> Result<f64> {
    if y.len() != y_hat.len() {
        return Err(Error::Dimension(format!(
            "FIT needs equal lengths, got {} and {}",
            y.len(),
            y_hat.len()
        )));
    }
    if y.len() < 2 {
        return Err(Error::InvalidInput("FIT needs at least two samples".into()));
    }
    let mean = y.mean();
    let spread: f64 = y.iter().map(|v| (v - mean) * (v - mean)).sum();
    if spread == 0.0 {
        return Err(Error::InvalidInput("undefined FIT (zero variance)".into()));
    }
    let err = (y - y_hat).norm_squared();
    Ok((1.0 - err / spread) * 100.0)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FitReport {
    /// Dataset(s) the model was estimated from.
    pub model_source: String,
    pub eval_dataset: String,
    /// `None` when FIT is undefined for the evaluation data.
    pub fit_percent: Option<f64>,
}

/// FIT of every model on every evaluation problem, models outermost.
pub fn cross_evaluate(
    models: &[(String, ParameterVector)],
    eval_problems: &[RegressionProblem],
) -> Result<Vec<FitReport>> {
    let mut out = Vec::with_capacity(models.len() * eval_problems.len());
    for (source, theta) in models {
        for p in eval_problems {
            let y_hat = p.predict(theta)?;
            out.push(FitReport {
                model_source: source.clone(),
                eval_dataset: p.condition_name.clone(),
                fit_percent: fit_metric(&p.y, &y_hat).ok(),
            });
        }
    }
    Ok(out)
}
