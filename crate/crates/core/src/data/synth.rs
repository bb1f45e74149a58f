use std::collections::{BTreeMap, BTreeSet};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use super::dataset::ConditionDataset;
use super::structure::{ModelStructure, ParameterVector};
use crate::error::{Error, Result};

/// Ground truth and sampling settings for a synthetic multi-condition benchmark.
///
/// Serialized as the `synth` scenario config; `irrelevant_channels` are 1-based.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticScenario {
    pub taps: usize,
    pub channels: usize,
    /// One coefficient vector (length `taps * channels`) per ground-truth group.
    pub group_truths: Vec<Vec<f64>>,
    /// Condition name (e.g. `SC10`) to 0-based group index.
    pub assignment: BTreeMap<String, usize>,
    pub noise_sigma: f64,
    #[serde(default)]
    pub irrelevant_channels: BTreeSet<usize>,
    /// Raw samples L per generated dataset; the regression has `L - taps + 1` rows.
    pub samples_per_condition: usize,
    pub seed: u64,
    /// First-order AR coefficient for input coloring; 0 gives white inputs.
    #[serde(default)]
    pub input_ar_coef: f64,
}

impl SyntheticScenario {
    pub fn structure(&self) -> Result<ModelStructure> {
        ModelStructure::new(self.taps, self.channels)
    }

    pub fn truth(&self, group: usize) -> Result<ParameterVector> {
        let values = self.group_truths.get(group).ok_or_else(|| {
            Error::InvalidInput(format!("group index {group} has no ground truth"))
        })?;
        ParameterVector::from_slice(values, self.structure()?)
    }

    pub fn validate(&self) -> Result<()> {
        let structure = self.structure()?;
        if self.group_truths.is_empty() || self.assignment.is_empty() {
            return Err(Error::InvalidInput(
                "scenario needs at least one group and one condition".into(),
            ));
        }
        for (g, truth) in self.group_truths.iter().enumerate() {
            let theta = ParameterVector::from_slice(truth, structure)?;
            if theta.as_slice().iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidInput(format!("group {g} truth is not finite")));
            }
            for &j in &self.irrelevant_channels {
                if theta.block(j)?.iter().any(|&v| v != 0.0) {
                    return Err(Error::InvalidInput(format!(
                        "group {g}: channel {j} is declared irrelevant but has nonzero coefficients"
                    )));
                }
            }
        }
        for (cond, &g) in &self.assignment {
            if g >= self.group_truths.len() {
                return Err(Error::InvalidInput(format!(
                    "condition {cond} maps to group {g}, only {} groups exist",
                    self.group_truths.len()
                )));
            }
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::InvalidInput("noise_sigma must be finite and >= 0".into()));
        }
        if self.input_ar_coef.is_nan() || self.input_ar_coef.abs() >= 1.0 {
            return Err(Error::InvalidInput("input_ar_coef must lie in (-1, 1)".into()));
        }
        if self.samples_per_condition < self.taps {
            return Err(Error::InvalidInput(format!(
                "samples_per_condition {} is below the tap count {}",
                self.samples_per_condition, self.taps
            )));
        }
        Ok(())
    }

    /// Random group truths with geometrically decaying taps; blocks listed in `irrelevant`
    /// (1-based) are zero.
    pub fn random_truths(
        structure: ModelStructure,
        groups: usize,
        irrelevant: &BTreeSet<usize>,
        seed: u64,
    ) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..groups)
            .map(|_| {
                (0..structure.n_theta())
                    .map(|i| {
                        let (channel, lag) = (i / structure.taps + 1, i % structure.taps);
                        let z: f64 = rng.sample(StandardNormal);
                        if irrelevant.contains(&channel) {
                            0.0
                        } else {
                            z * 0.7f64.powi(lag as i32)
                        }
                    })
                    .collect()
            })
            .collect()
    }
}

/// Generates an estimation (`-1`) and a validation (`-2`) dataset per condition, in condition
/// name order. Deterministic given the scenario seed.
pub fn generate_synthetic(scn: &SyntheticScenario) -> Result<Vec<ConditionDataset>> {
    scn.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(scn.seed);
    let noise = Normal::new(0.0, scn.noise_sigma)
        .map_err(|e| Error::InvalidInput(format!("noise distribution: {e}")))?;
    let mut out = Vec::with_capacity(2 * scn.assignment.len());
    for (cond, &group) in &scn.assignment {
        let theta = scn.truth(group)?;
        for suffix in 1..=2 {
            let inputs = draw_inputs(&mut rng, scn);
            let mut output = fir_response(&inputs, &theta);
            for v in output.iter_mut() {
                *v += noise.sample(&mut rng);
            }
            out.push(ConditionDataset::new(format!("{cond}-{suffix}"), inputs, output)?);
        }
    }
    Ok(out)
}

fn draw_inputs(rng: &mut ChaCha8Rng, scn: &SyntheticScenario) -> DMatrix<f64> {
    let (l, j_count) = (scn.samples_per_condition, scn.channels);
    let a = scn.input_ar_coef;
    let innovation_scale = (1.0 - a * a).sqrt();
    let mut x = DMatrix::zeros(l, j_count);
    for t in 0..l {
        for j in 0..j_count {
            let e: f64 = rng.sample(StandardNormal);
            x[(t, j)] = if t == 0 || a == 0.0 {
                e
            } else {
                a * x[(t - 1, j)] + innovation_scale * e
            };
        }
    }
    x
}

/// Noise-free FIR output with zero pre-history before the first sample.
fn fir_response(inputs: &DMatrix<f64>, theta: &ParameterVector) -> DVector<f64> {
    let s = theta.structure();
    DVector::from_fn(inputs.nrows(), |t, _| {
        let mut acc = 0.0;
        for (j, block) in theta.blocks().enumerate() {
            for (lag, &coef) in block.iter().enumerate().take(s.taps.min(t + 1)) {
                acc += coef * inputs[(t - lag, j)];
            }
        }
        acc
    })
}
