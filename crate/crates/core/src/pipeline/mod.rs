//! The end-to-end procedure: bounds, grid-search tuning, joint estimation, K-means merging,
//! per-category refits and FIT cross evaluation.

mod evaluate;
mod grid;
mod kmeans;

use std::collections::BTreeMap;
use std::path::Path;

use log::info;
use nalgebra::DVector;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

pub use evaluate::{cross_evaluate, fit_metric, FitReport};
pub use grid::{grid_search, GridOptions, GridPoint, GridResult, GridSpec, ScoreKind};
pub use kmeans::{kmeans, silhouette, KMeansResult};

use crate::bounds::{bounds_report, lambda2_max, BoundsReport};
use crate::criterion::{FusionVariant, Hyperparameters, ObjectiveBreakdown};
use crate::data::{
    build_regressor, condition_key, load_dataset, ConditionDataset, ManifestEntry, ModelStructure,
    ParameterVector, RegressionProblem, Role,
};
use crate::error::{Error, Result};
use crate::estimation::{ls_fit, pooled_ls_fit, LsFit};
use crate::fmt::{fmt_f64, to_json_string};
use crate::solver::{merged_groups, solve, SolveResult, SolverConfig};

pub const REPORT_SCHEMA: u32 = 1;

/// Cluster labels per condition (1-based categories) and the category centroids.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClusterAssignment {
    pub labels: BTreeMap<String, usize>,
    pub centroids: Vec<Vec<f64>>,
    pub k: usize,
    pub inertia: f64,
}

impl ClusterAssignment {
    /// Condition names of each category, categories in ascending order.
    pub fn members(&self) -> BTreeMap<usize, Vec<String>> {
        let mut out: BTreeMap<usize, Vec<String>> = BTreeMap::new();
        for (name, &cat) in &self.labels {
            out.entry(cat).or_default().push(name.clone());
        }
        out
    }
}

/// Runs K-means over the condition models and labels conditions `1..=k`.
pub fn cluster_conditions(
    names: &[String],
    thetas: &[ParameterVector],
    k: usize,
    seed: u64,
    restarts: usize,
) -> Result<ClusterAssignment> {
    if names.len() != thetas.len() {
        return Err(Error::Dimension("one name per parameter vector is required".into()));
    }
    let points: Vec<DVector<f64>> = thetas.iter().map(|t| t.values().clone()).collect();
    let result = kmeans(&points, k, seed, restarts)?;
    Ok(ClusterAssignment {
        labels: names
            .iter()
            .cloned()
            .zip(result.labels.iter().map(|l| l + 1))
            .collect(),
        centroids: result.centroids.iter().map(|c| c.as_slice().to_vec()).collect(),
        k,
        inertia: result.inertia,
    })
}

/// Pooled least-squares fit per category over the member conditions. Problems are matched to
/// assignment labels by condition key.
pub fn refit_clusters(
    problems: &[RegressionProblem],
    assignment: &ClusterAssignment,
) -> Result<BTreeMap<usize, LsFit>> {
    let mut groups: BTreeMap<usize, Vec<RegressionProblem>> =
        (1..=assignment.k).map(|c| (c, Vec::new())).collect();
    for p in problems {
        let key = condition_key(&p.condition_name);
        let cat = assignment.labels.get(key).ok_or_else(|| {
            Error::InvalidInput(format!("condition {key} has no cluster label"))
        })?;
        groups
            .get_mut(cat)
            .ok_or_else(|| Error::InvalidInput(format!("label {cat} outside 1..={}", assignment.k)))?
            .push(p.clone());
    }
    groups
        .into_iter()
        .map(|(cat, members)| {
            if members.is_empty() {
                return Err(Error::InvalidInput(format!("category {cat} has no conditions")));
            }
            Ok((cat, pooled_ls_fit(&members)?))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ClusterCount {
    Fixed(usize),
    /// Maximum silhouette over `k = 2..K-1`.
    Auto,
}

#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub structure: ModelStructure,
    pub grid: GridSpec,
    pub clusters: ClusterCount,
    pub solver: SolverConfig,
    pub seed: u64,
    pub score: ScoreKind,
    pub fusion_variant: FusionVariant,
    pub kmeans_restarts: usize,
}

impl PipelineConfig {
    pub fn new(structure: ModelStructure, k: usize) -> Self {
        PipelineConfig {
            structure,
            grid: GridSpec::default(),
            clusters: ClusterCount::Fixed(k),
            solver: SolverConfig::default(),
            seed: 0,
            score: ScoreKind::default(),
            fusion_variant: FusionVariant::default(),
            kmeans_restarts: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolveSummary {
    pub objective: ObjectiveBreakdown,
    pub iterations: usize,
    pub converged: bool,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub max_pairwise_distance: f64,
    /// Conditions whose joint estimates coincide within the merge threshold.
    pub merged_groups: Vec<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CategoryModel {
    pub category: usize,
    pub members: Vec<String>,
    pub source: String,
    pub theta: Vec<f64>,
    pub residual_norm_sq: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PipelineReport {
    pub schema: u32,
    pub structure: ModelStructure,
    pub conditions: Vec<String>,
    pub notes: Vec<String>,
    pub bounds: Option<BoundsReport>,
    pub lambda2_max: f64,
    pub grid: GridResult,
    pub selected: Hyperparameters,
    pub solve: SolveSummary,
    /// Joint estimates per condition.
    pub thetas: BTreeMap<String, Vec<f64>>,
    pub least_squares: BTreeMap<String, Vec<f64>>,
    pub clusters: ClusterAssignment,
    pub categories: Vec<CategoryModel>,
    pub evaluation_role: Role,
    pub fits: Vec<FitReport>,
}

/// Everything `run_pipeline` produced, including data the JSON report only summarizes.
#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub report: PipelineReport,
    pub joint: SolveResult,
}

/// Loads every manifest dataset and runs the pipeline.
pub fn run_pipeline(entries: &[ManifestEntry], cfg: &PipelineConfig) -> Result<PipelineOutput> {
    let datasets = entries
        .iter()
        .map(|e| Ok((e.role, load_dataset(&e.file, e)?)))
        .collect::<Result<Vec<_>>>()
        .map_err(|e| e.in_stage("ingest"))?;
    run_pipeline_on(&datasets, cfg)
}

struct ConditionSets {
    names: Vec<String>,
    estimation: Vec<RegressionProblem>,
    validation: Vec<RegressionProblem>,
    evaluation: Option<Vec<RegressionProblem>>,
}

fn arrange(datasets: &[(Role, ConditionDataset)], structure: ModelStructure) -> Result<ConditionSets> {
    let mut by_condition: BTreeMap<String, BTreeMap<Role, &ConditionDataset>> = BTreeMap::new();
    for (role, ds) in datasets {
        let slot = by_condition.entry(ds.condition_key().to_string()).or_default();
        if slot.insert(*role, ds).is_some() {
            return Err(Error::InvalidInput(format!(
                "condition {} has more than one {role:?} dataset",
                ds.condition_key()
            )));
        }
    }
    if by_condition.is_empty() {
        return Err(Error::InvalidInput("manifest lists no datasets".into()));
    }
    let mut sets = ConditionSets {
        names: Vec::new(),
        estimation: Vec::new(),
        validation: Vec::new(),
        evaluation: Some(Vec::new()),
    };
    for (name, roles) in &by_condition {
        let get = |role: Role| {
            roles.get(&role).ok_or_else(|| {
                Error::InvalidInput(format!("condition {name} has no {role:?} dataset"))
            })
        };
        sets.names.push(name.clone());
        sets.estimation.push(build_regressor(get(Role::Estimation)?, structure)?);
        sets.validation.push(build_regressor(get(Role::Validation)?, structure)?);
        match (roles.get(&Role::Evaluation), sets.evaluation.as_mut()) {
            (Some(ds), Some(list)) => list.push(build_regressor(ds, structure)?),
            _ => sets.evaluation = None,
        }
    }
    Ok(sets)
}

/// Runs the pipeline on in-memory datasets. Conditions are processed in name order, so the
/// report does not depend on input order.
pub fn run_pipeline_on(
    datasets: &[(Role, ConditionDataset)],
    cfg: &PipelineConfig,
) -> Result<PipelineOutput> {
    let sets = arrange(datasets, cfg.structure).map_err(|e| e.in_stage("ingest"))?;
    let k_count = sets.names.len();
    let mut notes = Vec::new();
    let mut stage_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let kmeans_seed = stage_rng.next_u64();

    // Step 1: bounds
    let bounds = if k_count >= 2 {
        Some(bounds_report(&sets.estimation).map_err(|e| e.in_stage("bounds"))?)
    } else {
        notes.push("fusion undefined: a single condition has no pairwise fusion term".to_string());
        None
    };
    let l2max = lambda2_max(&sets.estimation).map_err(|e| e.in_stage("bounds"))?;
    info!(
        "bounds: lambda1_max={:?} lambda2_max={l2max}",
        bounds.as_ref().map(|b| b.lambda1_max)
    );

    // Step 2: grid search
    let opts = GridOptions {
        score: cfg.score,
        fusion_variant: cfg.fusion_variant,
    };
    let grid_solver = SolverConfig {
        trace: false,
        ..cfg.solver
    };
    let grid = grid_search(&sets.estimation, &sets.validation, &cfg.grid, opts, &grid_solver)
        .map_err(|e| e.in_stage("grid search"))?;
    let flagged = grid.table.iter().filter(|p| !p.converged).count();
    if flagged > 0 {
        notes.push(format!("{flagged} grid point(s) did not converge and were scored +inf"));
    }
    info!(
        "grid search: lambda1={} lambda2={}",
        grid.selected.lambda1, grid.selected.lambda2
    );

    // Step 3: joint estimation
    let joint = solve(&sets.estimation, &grid.selected, &cfg.solver)
        .map_err(|e| e.in_stage("joint estimation"))?;
    if !joint.converged {
        notes.push(format!(
            "joint estimation stopped after {} iterations without converging",
            joint.iterations
        ));
    }
    info!(
        "joint estimation: objective={} iterations={} converged={}",
        joint.objective.total, joint.iterations, joint.converged
    );

    // Step 4: clustering
    let k = match cfg.clusters {
        ClusterCount::Fixed(k) if k_count == 1 => {
            if k != 1 {
                notes.push(format!("cluster count {k} reduced to 1 for a single condition"));
            }
            1
        }
        ClusterCount::Fixed(k) => k,
        ClusterCount::Auto => auto_cluster_count(&joint.thetas, kmeans_seed, cfg.kmeans_restarts)
            .map_err(|e| e.in_stage("clustering"))?,
    };
    let clusters = cluster_conditions(&sets.names, &joint.thetas, k, kmeans_seed, cfg.kmeans_restarts)
        .map_err(|e| e.in_stage("clustering"))?;
    info!("clustering: k={k} inertia={}", clusters.inertia);

    // refit and evaluation
    let refits = refit_clusters(&sets.estimation, &clusters).map_err(|e| e.in_stage("refit"))?;
    let members = clusters.members();
    let estimation_names: BTreeMap<&str, &str> = sets
        .names
        .iter()
        .zip(&sets.estimation)
        .map(|(n, p)| (n.as_str(), p.condition_name.as_str()))
        .collect();
    let categories: Vec<CategoryModel> = refits
        .iter()
        .map(|(&cat, fit)| {
            let names = members.get(&cat).cloned().unwrap_or_default();
            let source = names
                .iter()
                .map(|n| estimation_names[n.as_str()])
                .collect::<Vec<_>>()
                .join(" + ");
            CategoryModel {
                category: cat,
                members: names,
                source,
                theta: fit.theta.as_slice().to_vec(),
                residual_norm_sq: fit.residual_norm_sq,
            }
        })
        .collect();

    let ls_fits: Vec<LsFit> = sets
        .estimation
        .iter()
        .map(ls_fit)
        .collect::<Result<_>>()
        .map_err(|e| e.in_stage("refit"))?;

    let mut models: Vec<(String, ParameterVector)> = Vec::new();
    for (p, fit) in sets.estimation.iter().zip(&ls_fits) {
        models.push((format!("ls:{}", p.condition_name), fit.theta.clone()));
    }
    for (p, theta) in sets.estimation.iter().zip(&joint.thetas) {
        models.push((format!("joint:{}", p.condition_name), theta.clone()));
    }
    for (cat, fit) in categories.iter().zip(refits.values()) {
        models.push((format!("category:{}", cat.source), fit.theta.clone()));
    }
    let (evaluation_role, eval_problems) = match &sets.evaluation {
        Some(list) => (Role::Evaluation, list),
        None => (Role::Validation, &sets.validation),
    };
    let fits = cross_evaluate(&models, eval_problems).map_err(|e| e.in_stage("evaluation"))?;

    let solve_summary = SolveSummary {
        objective: joint.objective,
        iterations: joint.iterations,
        converged: joint.converged,
        primal_residual: joint.primal_residual,
        dual_residual: joint.dual_residual,
        max_pairwise_distance: joint.max_pairwise_distance(),
        merged_groups: merged_groups(&joint.thetas)
            .into_iter()
            .map(|g| g.into_iter().map(|i| sets.names[i].clone()).collect())
            .collect(),
    };
    let report = PipelineReport {
        schema: REPORT_SCHEMA,
        structure: cfg.structure,
        conditions: sets.names.clone(),
        notes,
        bounds,
        lambda2_max: l2max,
        selected: grid.selected,
        grid,
        solve: solve_summary,
        thetas: sets
            .names
            .iter()
            .cloned()
            .zip(joint.thetas.iter().map(|t| t.as_slice().to_vec()))
            .collect(),
        least_squares: sets
            .names
            .iter()
            .cloned()
            .zip(ls_fits.iter().map(|f| f.theta.as_slice().to_vec()))
            .collect(),
        clusters,
        categories,
        evaluation_role,
        fits,
    };
    Ok(PipelineOutput { report, joint })
}

fn auto_cluster_count(thetas: &[ParameterVector], seed: u64, restarts: usize) -> Result<usize> {
    let k_count = thetas.len();
    if k_count < 3 {
        return Ok(k_count.clamp(1, 2));
    }
    let points: Vec<DVector<f64>> = thetas.iter().map(|t| t.values().clone()).collect();
    let mut best = (2, f64::NEG_INFINITY);
    for k in 2..k_count {
        let r = kmeans(&points, k, seed, restarts)?;
        let s = silhouette(&points, &r.labels);
        if s > best.1 {
            best = (k, s);
        }
    }
    Ok(best.0)
}

impl PipelineReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(to_json_string(self)?)
    }

    /// Long-format parameter table: `model,index,channel,lag,value` for the least-squares,
    /// joint and category models.
    pub fn thetas_csv(&self) -> String {
        let mut rows: Vec<(String, &[f64])> = Vec::new();
        for (name, t) in &self.least_squares {
            rows.push((format!("ls:{name}"), t));
        }
        for (name, t) in &self.thetas {
            rows.push((format!("joint:{name}"), t));
        }
        for c in &self.categories {
            rows.push((format!("category:{}", c.category), &c.theta));
        }
        thetas_csv(self.structure, rows.iter().map(|(n, t)| (n.as_str(), *t)))
    }

    /// Wide FIT table: one row per model, one column per evaluation dataset.
    pub fn fit_matrix_csv(&self) -> String {
        fit_matrix_csv(&self.fits)
    }

    /// Writes `report.json`, `thetas.csv` and `fit_matrix.csv` into `dir`.
    pub fn write_files(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let write = |name: &str, contents: String| {
            let path = dir.join(name);
            std::fs::write(&path, contents).map_err(|e| Error::io(path, e))
        };
        write("report.json", self.to_json()?)?;
        write("thetas.csv", self.thetas_csv())?;
        write("fit_matrix.csv", self.fit_matrix_csv())
    }
}

/// `model,index,channel,lag,value` rows; channel is 1-based, lag 0-based.
pub fn thetas_csv<'a, I>(structure: ModelStructure, models: I) -> String
where
    I: IntoIterator<Item = (&'a str, &'a [f64])>,
{
    let mut out = String::from("model,index,channel,lag,value\n");
    for (name, values) in models {
        for (i, v) in values.iter().enumerate() {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                csv_field(name),
                i,
                i / structure.taps + 1,
                i % structure.taps,
                fmt_f64(*v)
            ));
        }
    }
    out
}

/// Reads a long-format parameter table back into named models, in first-appearance order.
pub fn parse_thetas_csv(text: &str, structure: ModelStructure) -> Result<Vec<(String, ParameterVector)>> {
    let mut reader = csv::ReaderBuilder::new().from_reader(text.as_bytes());
    let bad = |row: usize, msg: String| Error::InvalidInput(format!("theta table row {row}: {msg}"));
    let mut order: Vec<String> = Vec::new();
    let mut values: BTreeMap<String, Vec<Option<f64>>> = BTreeMap::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 2;
        let record = record.map_err(|e| bad(row, e.to_string()))?;
        if record.len() != 5 {
            return Err(bad(row, format!("expected 5 fields, got {}", record.len())));
        }
        let model = record[0].to_string();
        let index: usize = record[1].parse().map_err(|_| bad(row, "bad index".into()))?;
        let value: f64 = record[4].parse().map_err(|_| bad(row, "bad value".into()))?;
        if index >= structure.n_theta() || !value.is_finite() {
            return Err(bad(row, format!("index {index} or value {value} out of range")));
        }
        let slot = values.entry(model.clone()).or_insert_with(|| {
            order.push(model.clone());
            vec![None; structure.n_theta()]
        });
        slot[index] = Some(value);
    }
    order
        .into_iter()
        .map(|name| {
            let v: Option<Vec<f64>> = values[&name].iter().copied().collect();
            let v = v.ok_or_else(|| {
                Error::InvalidInput(format!("model {name} is missing coefficients"))
            })?;
            Ok((name, ParameterVector::from_slice(&v, structure)?))
        })
        .collect()
}

pub fn fit_matrix_csv(fits: &[FitReport]) -> String {
    let mut columns: Vec<&str> = Vec::new();
    let mut rows: Vec<&str> = Vec::new();
    for f in fits {
        if !columns.contains(&f.eval_dataset.as_str()) {
            columns.push(&f.eval_dataset);
        }
        if !rows.contains(&f.model_source.as_str()) {
            rows.push(&f.model_source);
        }
    }
    let mut out = String::from("model");
    for c in &columns {
        out.push(',');
        out.push_str(&csv_field(c));
    }
    out.push('\n');
    for r in &rows {
        out.push_str(&csv_field(r));
        for c in &columns {
            out.push(',');
            let cell = fits
                .iter()
                .find(|f| f.model_source == *r && f.eval_dataset == *c)
                .and_then(|f| f.fit_percent);
            if let Some(v) = cell {
                out.push_str(&fmt_f64(v));
            }
        }
        out.push('\n');
    }
    out
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    fn problem(name: &str, y: &[f64]) -> RegressionProblem {
        let phi = DMatrix::from_column_slice(y.len(), 1, &vec![1.0; y.len()]);
        RegressionProblem::new(
            DVector::from_column_slice(y),
            phi,
            ModelStructure::new(1, 1).unwrap(),
            name,
        )
        .unwrap()
    }

    #[test]
    fn refit_singleton_and_identical_merge() {
        let a = problem("A10-1", &[1.0, 3.0]);
        let b = problem("B10-1", &[1.0, 3.0]);
        let c = problem("C10-1", &[10.0, 12.0]);
        let assignment = ClusterAssignment {
            labels: [("A10".to_string(), 1), ("B10".to_string(), 1), ("C10".to_string(), 2)].into(),
            centroids: vec![vec![2.0], vec![11.0]],
            k: 2,
            inertia: 0.0,
        };
        let fits = refit_clusters(&[a.clone(), b, c.clone()], &assignment).unwrap();
        assert!((fits[&1].theta.as_slice()[0] - 2.0).abs() < 1e-12);
        let single = ls_fit(&c).unwrap();
        assert!((fits[&2].theta.as_slice()[0] - single.theta.as_slice()[0]).abs() < 1e-12);
    }

    #[test]
    fn refit_rejects_empty_or_unlabelled() {
        let a = problem("A10-1", &[1.0, 3.0]);
        let mut assignment = ClusterAssignment {
            labels: [("A10".to_string(), 1)].into(),
            centroids: vec![vec![2.0], vec![0.0]],
            k: 2,
            inertia: 0.0,
        };
        assert!(refit_clusters(std::slice::from_ref(&a), &assignment).is_err());
        assignment.labels.clear();
        assignment.k = 1;
        assert!(refit_clusters(&[a], &assignment).is_err());
    }

    #[test]
    fn cluster_conditions_labels_are_one_based() {
        let s = ModelStructure::new(1, 1).unwrap();
        let thetas: Vec<_> = [0.0, 0.1, 10.0]
            .iter()
            .map(|&v| ParameterVector::from_slice(&[v], s).unwrap())
            .collect();
        let names: Vec<String> = ["BR30", "BR40", "WBA40"].iter().map(|s| s.to_string()).collect();
        let c = cluster_conditions(&names, &thetas, 2, 3, 10).unwrap();
        assert_eq!(c.labels["BR30"], 1);
        assert_eq!(c.labels["BR40"], 1);
        assert_eq!(c.labels["WBA40"], 2);
        assert_eq!(c.members()[&1], vec!["BR30".to_string(), "BR40".to_string()]);
    }

    #[test]
    fn theta_table_round_trip() {
        let s = ModelStructure::new(2, 2).unwrap();
        let a = [1.0, -2.0, 1.0 / 3.0, 4.0];
        let b = [0.0, 0.5, 0.25, -0.125];
        let text = thetas_csv(s, [("m, one", &a[..]), ("two", &b[..])]);
        let back = parse_thetas_csv(&text, s).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[0].0, "m, one");
        assert_eq!(back[0].1.as_slice(), &a);
        assert_eq!(back[1].1.as_slice(), &b);
        assert!(parse_thetas_csv("model,index,channel,lag,value\nx,0,1,0,1\n", s).is_err());
    }

    #[test]
    fn fit_matrix_layout() {
        let fits = vec![
            FitReport { model_source: "m1".into(), eval_dataset: "A-2".into(), fit_percent: Some(50.0) },
            FitReport { model_source: "m1".into(), eval_dataset: "B-2".into(), fit_percent: None },
            FitReport { model_source: "m2".into(), eval_dataset: "A-2".into(), fit_percent: Some(-1.0) },
            FitReport { model_source: "m2".into(), eval_dataset: "B-2".into(), fit_percent: Some(0.0) },
        ];
        let csv = fit_matrix_csv(&fits);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "model,A-2,B-2");
        assert_eq!(lines[1], "m1,5.0000000000000000e1,");
        assert_eq!(lines[2], "m2,-1.0000000000000000e0,0.0000000000000000e0");
    }
}
