//! The joint criterion, its fusion functional, proximal operators and the pairwise subgradient
//! bookkeeping used by the optimality certificates.

use std::fmt;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::data::{check_shared_structure, ParameterVector, RegressionProblem};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionVariant {
    /// `||theta_k - theta_i||_2`
    #[default]
    L2,
    /// `||theta_k - theta_i||_2^2`
    L2Squared,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyperparameters {
    /// Fusion weight.
    pub lambda1: f64,
    /// Sparsity weight.
    pub lambda2: f64,
    #[serde(default)]
    pub fusion_variant: FusionVariant,
}

impl Hyperparameters {
    pub fn new(lambda1: f64, lambda2: f64) -> Result<Self> {
        let hp = Hyperparameters {
            lambda1,
            lambda2,
            fusion_variant: FusionVariant::L2,
        };
        hp.validate()?;
        Ok(hp)
    }

    pub fn with_variant(mut self, variant: FusionVariant) -> Self {
        self.fusion_variant = variant;
        self
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("lambda1", self.lambda1), ("lambda2", self.lambda2)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::InvalidInput(format!(
                    "{name} must be finite and nonnegative, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// Value of the criterion split into its three terms.
///
/// `fusion_term` and `sparsity_term` are unweighted; `total` applies the stored weights.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ObjectiveBreakdown {
    pub fit_term: f64,
    pub fusion_term: f64,
    pub sparsity_term: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub fusion_variant: FusionVariant,
    pub total: f64,
}

/// Sum over unordered pairs `k < i` of `||theta_k - theta_i||_2`.
pub fn fusion_value(thetas: &[ParameterVector]) -> Result<f64> {
    fusion_sum(thetas, FusionVariant::L2)
}

/// Pairwise fusion sum for either variant.
pub fn fusion_sum(thetas: &[ParameterVector], variant: FusionVariant) -> Result<f64> {
    check_shared_structure(thetas.iter().map(ParameterVector::structure))?;
    let mut total = 0.0;
    for (k, a) in thetas.iter().enumerate() {
        for b in &thetas[k + 1..] {
            let d2 = (a.values() - b.values()).norm_squared();
            total += match variant {
                FusionVariant::L2 => d2.sqrt(),
                FusionVariant::L2Squared => d2,
            };
        }
    }
    Ok(total)
}

pub fn objective(
    problems: &[RegressionProblem],
    thetas: &[ParameterVector],
    hp: &Hyperparameters,
) -> Result<ObjectiveBreakdown> {
    if problems.len() != thetas.len() {
        return Err(Error::Dimension(format!(
            "{} problems but {} parameter vectors",
            problems.len(),
            thetas.len()
        )));
    }
    let structure = check_shared_structure(problems.iter().map(|p| p.structure))?;
    if let Some(t) = thetas.iter().find(|t| t.structure() != structure) {
        return Err(Error::Dimension(format!(
            "parameter structure {:?} does not match problems {:?}",
            t.structure(),
            structure
        )));
    }
    let fit_term: f64 = problems
        .iter()
        .zip(thetas)
        .map(|(p, t)| p.residual_norm_sq(t.values()))
        .sum();
    let fusion_term = fusion_sum(thetas, hp.fusion_variant)?;
    let sparsity_term: f64 = thetas.iter().map(|t| t.values().lp_norm(1)).sum();
    Ok(ObjectiveBreakdown {
        fit_term,
        fusion_term,
        sparsity_term,
        lambda1: hp.lambda1,
        lambda2: hp.lambda2,
        fusion_variant: hp.fusion_variant,
        total: fit_term + hp.lambda1 * fusion_term + hp.lambda2 * sparsity_term,
    })
}

/// Block soft-threshold: `argmin_x 0.5||x - v||^2 + tau ||x||_2`.
pub fn prox_block_l2(v: &DVector<f64>, tau: f64) -> DVector<f64> {
    let norm = v.norm();
    if norm <= tau {
        DVector::zeros(v.len())
    } else {
        v * (1.0 - tau / norm)
    }
}

/// Componentwise soft-threshold: `argmin_x 0.5||x - v||^2 + tau ||x||_1`.
pub fn prox_l1(v: &DVector<f64>, tau: f64) -> DVector<f64> {
    v.map(|x| soft_threshold(x, tau))
}

#[inline]
pub fn soft_threshold(x: f64, tau: f64) -> f64 {
    if x > tau {
        x - tau
    } else if x < -tau {
        x + tau
    } else {
        0.0
    }
}

/// One signed pair variable `±z_{first,second}` with `first > second` (1-based).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PairTerm {
    pub sign: i8,
    pub first: usize,
    pub second: usize,
}

/// For each condition `k` (1-based), the signed pair variables summing to its fusion
/// subgradient `p_K^k`: `-z_{ik}` for every `i > k` and `+z_{ki}` for every `i < k`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubgradientStructure {
    pub conditions: usize,
    pub terms: Vec<Vec<PairTerm>>,
}

pub fn subgradient_structure(k_count: usize) -> Result<SubgradientStructure> {
    if k_count < 2 {
        return Err(Error::Precondition(format!(
            "pair subgradients need at least two conditions, got {k_count}"
        )));
    }
    let terms = (1..=k_count)
        .map(|k| {
            (1..=k_count)
                .filter(|&i| i != k)
                .map(|i| {
                    if i < k {
                        PairTerm {
                            sign: 1,
                            first: k,
                            second: i,
                        }
                    } else {
                        PairTerm {
                            sign: -1,
                            first: i,
                            second: k,
                        }
                    }
                })
                .collect()
        })
        .collect();
    Ok(SubgradientStructure {
        conditions: k_count,
        terms,
    })
}

impl SubgradientStructure {
    pub fn distinct_pairs(&self) -> usize {
        let mut pairs: Vec<(usize, usize)> = self
            .terms
            .iter()
            .flatten()
            .map(|t| (t.first, t.second))
            .collect();
        pairs.sort_unstable();
        pairs.dedup();
        pairs.len()
    }
}

impl fmt::Display for SubgradientStructure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (idx, terms) in self.terms.iter().enumerate() {
            write!(f, "p_{}^{} =", self.conditions, idx + 1)?;
            for (pos, t) in terms.iter().enumerate() {
                let sign = if t.sign < 0 { "-" } else if pos == 0 { "" } else { "+" };
                write!(f, " {sign}z{}{}", t.first, t.second)?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}
