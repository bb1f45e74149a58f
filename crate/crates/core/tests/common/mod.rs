#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use fusedfir::data::{
    generate_synthetic, ConditionDataset, ModelStructure, RegressionProblem, Role,
    SyntheticScenario,
};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal_vec(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.sample(StandardNormal))
}

/// `k` problems with Gaussian regressors, a common base parameter plus per-condition offsets of
/// size `spread`, and noise of size `noise`.
pub fn random_problems(
    rng: &mut ChaCha8Rng,
    k: usize,
    structure: ModelStructure,
    rows: usize,
    spread: f64,
    noise: f64,
) -> Vec<RegressionProblem> {
    let n = structure.n_theta();
    let base = normal_vec(rng, n);
    (0..k)
        .map(|i| {
            let phi = DMatrix::from_fn(rows, n, |_, _| rng.sample(StandardNormal));
            let theta = &base + spread * normal_vec(rng, n);
            let y = &phi * theta + noise * normal_vec(rng, rows);
            RegressionProblem::new(y, phi, structure, format!("R{}0-1", i + 1)).unwrap()
        })
        .collect()
}

fn choose2(x: f64) -> f64 {
    x * (x - 1.0) / 2.0
}

/// Adjusted Rand index between two labelings of the same items.
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> f64 {
    assert_eq!(a.len(), b.len());
    let mut table: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    let mut rows: BTreeMap<usize, f64> = BTreeMap::new();
    let mut cols: BTreeMap<usize, f64> = BTreeMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *table.entry((x, y)).or_default() += 1.0;
        *rows.entry(x).or_default() += 1.0;
        *cols.entry(y).or_default() += 1.0;
    }
    let index: f64 = table.values().map(|&c| choose2(c)).sum();
    let sum_rows: f64 = rows.values().map(|&c| choose2(c)).sum();
    let sum_cols: f64 = cols.values().map(|&c| choose2(c)).sum();
    let expected = sum_rows * sum_cols / choose2(a.len() as f64);
    let max = 0.5 * (sum_rows + sum_cols);
    if max == expected {
        return 1.0;
    }
    (index - expected) / (max - expected)
}

/// Six conditions in two groups, three channels of which the third is irrelevant, five taps,
/// 400 regression rows per dataset, noise 0.1.
pub fn recovery_scenario() -> SyntheticScenario {
    let irrelevant: BTreeSet<usize> = [3].into();
    // group 1: fast decay; group 2: delayed peak with opposite sign on channel 2
    let group_truths = vec![
        [
            [1.0, 0.7, 0.49, 0.343, 0.24],
            [0.5, 0.35, 0.245, 0.17, 0.12],
            [0.0; 5],
        ]
        .concat(),
        [
            [0.3, 0.8, 0.6, 0.3, 0.1],
            [-0.6, -0.4, -0.2, -0.1, -0.05],
            [0.0; 5],
        ]
        .concat(),
    ];
    let assignment = [
        ("SC10", 0),
        ("SC20", 0),
        ("SC30", 0),
        ("SC40", 1),
        ("SC50", 1),
        ("SC60", 1),
    ]
    .into_iter()
    .map(|(n, g)| (n.to_string(), g))
    .collect();
    SyntheticScenario {
        taps: 5,
        channels: 3,
        group_truths,
        assignment,
        noise_sigma: 0.1,
        irrelevant_channels: irrelevant,
        samples_per_condition: 404,
        seed: 2024,
        input_ar_coef: 0.0,
    }
}

/// Synthetic datasets with `-1` as estimation and `-2` as validation data.
pub fn with_roles(datasets: Vec<ConditionDataset>) -> Vec<(Role, ConditionDataset)> {
    datasets
        .into_iter()
        .map(|ds| {
            let role = if ds.name().ends_with("-1") {
                Role::Estimation
            } else {
                Role::Validation
            };
            (role, ds)
        })
        .collect()
}

pub fn scenario_datasets(scn: &SyntheticScenario) -> Vec<(Role, ConditionDataset)> {
    with_roles(generate_synthetic(scn).unwrap())
}
