//! Acceptance checks, one line per criterion. Runs without the libtest harness so the report is
//! always printed; exits nonzero if any criterion fails.

mod common;

use std::time::{Duration, Instant};

use fusedfir::bounds::{
    coalescence_certificate, kkt_necessary_margin, lambda1_max, lambda1_sufficient, lambda2_max,
    PooledGradients,
};
use fusedfir::criterion::{prox_block_l2, prox_l1, Hyperparameters};
use fusedfir::data::{ModelStructure, ParameterVector, RegressionProblem};
use fusedfir::estimation::{gram_info, ls_fit};
use fusedfir::pipeline::{fit_metric, run_pipeline_on, PipelineConfig};
use fusedfir::solver::{solve, solve_oracle, SolveResult, SolverConfig, DEFAULT_ORACLE_ITERATIONS};
use nalgebra::DVector;
use rand::Rng;

use common::*;

struct Outcome {
    pass: bool,
    detail: String,
}

fn check(
    id: u32,
    title: &str,
    limit: Option<Duration>,
    f: impl FnOnce() -> Outcome,
) -> bool {
    let start = Instant::now();
    let outcome = f();
    let elapsed = start.elapsed();
    let in_time = limit.is_none_or(|l| elapsed < l);
    let pass = outcome.pass && in_time;
    let budget = limit.map_or(String::new(), |l| format!(" (limit {:.0} s)", l.as_secs_f64()));
    println!(
        "criterion {id}: {} - {title}: {} [{:.2} s{budget}]",
        if pass { "PASS" } else { "FAIL" },
        outcome.detail,
        elapsed.as_secs_f64()
    );
    pass
}

fn tight() -> SolverConfig {
    SolverConfig {
        eps_abs: 1e-12,
        eps_rel: 1e-10,
        max_iter: 200_000,
        ..Default::default()
    }
}

fn hp(lambda1: f64, lambda2: f64) -> Hyperparameters {
    Hyperparameters::new(lambda1, lambda2).unwrap()
}

fn linf(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).amax()
}

fn criterion_1() -> Outcome {
    let mut rng = rng(1);
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..200 {
        let n = rng.random_range(1..=8);
        let v = normal_vec(&mut rng, n) * rng.random_range(0.1..5.0);
        let tau = rng.random_range(0.0..3.0);
        let block = |x: &DVector<f64>| 0.5 * (x - &v).norm_squared() + tau * x.norm();
        let l1 = |x: &DVector<f64>| 0.5 * (x - &v).norm_squared() + tau * x.lp_norm(1);
        for (obj, p) in [
            (&block as &dyn Fn(&DVector<f64>) -> f64, prox_block_l2(&v, tau)),
            (&l1, prox_l1(&v, tau)),
        ] {
            let at = obj(&p);
            for c in 0..1000 {
                let scale = 10f64.powi(c % 6 - 4);
                let cand = &p + normal_vec(&mut rng, n) * scale;
                worst = worst.max(at - obj(&cand));
            }
        }
    }
    Outcome {
        pass: worst <= 1e-8,
        detail: format!("max(prox value - candidate value) = {worst:.3e} <= 1e-8"),
    }
}

/// The 20 instances shared by criteria 2 to 4, with their penalty settings.
fn solver_instances() -> Vec<(Vec<RegressionProblem>, f64, f64)> {
    let mut rng = rng(2);
    (0..20)
        .map(|i| {
            let k = [2, 3, 4][i % 3];
            let taps = rng.random_range(1..=5);
            let channels = rng.random_range(1..=2);
            let s = ModelStructure::new(taps, channels).unwrap();
            let rows = rng.random_range(s.n_theta() + 5..=50);
            let problems = random_problems(&mut rng, k, s, rows, 0.5, 0.3);
            let l1 = if (i / 2) % 2 == 0 { 0.0 } else { 0.5 * lambda1_max(&problems).unwrap() };
            let l2 = if i % 2 == 0 { 0.0 } else { 0.5 * lambda2_max(&problems).unwrap() };
            (problems, l1, l2)
        })
        .collect()
}

fn criterion_2(instances: &[(Vec<RegressionProblem>, f64, f64)]) -> Outcome {
    let mut worst = 0.0f64;
    for (i, (problems, l1, l2)) in instances.iter().enumerate() {
        let h = hp(*l1, *l2);
        let admm = solve(problems, &h, &tight()).unwrap();
        let oracle = solve_oracle(problems, &h, DEFAULT_ORACLE_ITERATIONS, i as u64).unwrap();
        let gap = (admm.objective.total - oracle.objective.total).abs() / oracle.objective.total.abs();
        worst = worst.max(gap);
    }
    Outcome {
        pass: worst <= 1e-5,
        detail: format!("max relative objective gap vs reference = {worst:.3e} <= 1e-5"),
    }
}

fn criterion_3(instances: &[(Vec<RegressionProblem>, f64, f64)]) -> Outcome {
    let mut worst = 0.0f64;
    for (problems, _, _) in instances {
        let r = solve(problems, &hp(0.0, 0.0), &tight()).unwrap();
        for (p, t) in problems.iter().zip(&r.thetas) {
            worst = worst.max(linf(ls_fit(p).unwrap().theta.values(), t.values()));
        }
    }
    Outcome {
        pass: worst <= 1e-6,
        detail: format!("max l_inf gap to per-condition least squares = {worst:.3e} <= 1e-6"),
    }
}

fn max_abs(r: &SolveResult) -> f64 {
    r.thetas.iter().map(|t| t.values().amax()).fold(0.0, f64::max)
}

fn criterion_4(instances: &[(Vec<RegressionProblem>, f64, f64)]) -> Outcome {
    let mut above = 0.0f64;
    let mut below = f64::INFINITY;
    for (problems, _, _) in instances {
        let l2max = lambda2_max(problems).unwrap();
        let r = solve(problems, &hp(0.0, 1.01 * l2max), &tight()).unwrap();
        above = above.max(max_abs(&r));
        if l2max > 0.0 {
            let r = solve(problems, &hp(0.0, 0.5 * l2max), &tight()).unwrap();
            below = below.min(max_abs(&r));
        }
    }
    Outcome {
        pass: above <= 1e-6 && below > 1e-4,
        detail: format!(
            "max |theta| at 1.01 lambda2_max = {above:.3e} <= 1e-6; min over instances of max |theta| at 0.5 lambda2_max = {below:.3e} > 1e-4"
        ),
    }
}

/// Instances with positive definite Gram matrices for criteria 5 and 6.
fn bound_instances() -> Vec<Vec<RegressionProblem>> {
    let mut rng = rng(5);
    (0..12)
        .map(|i| {
            let k = [2, 3, 4, 5][i % 4];
            let s = ModelStructure::new(rng.random_range(1..=4), rng.random_range(1..=2)).unwrap();
            let rows = rng.random_range(2 * s.n_theta() + 5..=60);
            let problems = random_problems(&mut rng, k, s, rows, 1.0, 0.2);
            assert!(problems.iter().all(|p| gram_info(&p.phi).positive_definite));
            problems
        })
        .collect()
}

fn criterion_5(instances: &[Vec<RegressionProblem>]) -> Outcome {
    let mut a_spread = 0.0f64;
    let mut a_match = 0.0f64;
    let mut b_ok = true;
    let mut b_min_ratio = f64::INFINITY;
    for problems in instances {
        let pg = PooledGradients::compute(problems).unwrap();
        let star = pg.theta_star.values();
        let scale = 1.0 + star.norm();

        let r = solve(problems, &hp(1.05 * lambda1_sufficient(problems).unwrap(), 0.0), &tight()).unwrap();
        a_spread = a_spread.max(r.max_pairwise_distance() / scale);
        for t in &r.thetas {
            a_match = a_match.max((t.values() - star).norm() / scale);
        }

        let l1 = 0.9 * lambda1_max(problems).unwrap();
        let margin_negative = kkt_necessary_margin(problems, l1).unwrap().iter().any(|&m| m < 0.0);
        let r = solve(problems, &hp(l1, 0.0), &tight()).unwrap();
        let ratio = r.max_pairwise_distance() / (1e-3 * scale);
        b_min_ratio = b_min_ratio.min(ratio);
        b_ok &= margin_negative && ratio > 1.0;
    }

    let mut rng = rng(55);
    let mut c_worst = 0.0f64;
    for _ in 0..10 {
        let s = ModelStructure::new(rng.random_range(1..=3), rng.random_range(1..=2)).unwrap();
        let rows = rng.random_range(2 * s.n_theta() + 5..=40);
        let problems = random_problems(&mut rng, 2, s, rows, 1.0, 0.2);
        let l1max = lambda1_max(&problems).unwrap();
        let coalesced = |l: f64| solve(&problems, &hp(l, 0.0), &tight()).unwrap().is_coalesced();
        let (mut lo, mut hi) = (0.5 * l1max, 1.5 * l1max);
        assert!(!coalesced(lo) && coalesced(hi));
        for _ in 0..30 {
            let mid = 0.5 * (lo + hi);
            if coalesced(mid) {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        c_worst = c_worst.max((0.5 * (lo + hi) - l1max).abs() / l1max);
    }

    Outcome {
        pass: a_spread <= 1e-5 && a_match <= 1e-5 && b_ok && c_worst <= 0.01,
        detail: format!(
            "(a) spread/(1+|theta*|) = {a_spread:.3e}, |theta-theta*|/(1+|theta*|) = {a_match:.3e}, both <= 1e-5; \
             (b) negative margin and non-coalesced on all, min distance/threshold = {b_min_ratio:.3e} > 1; \
             (c) K=2 bisection relative error = {c_worst:.3e} <= 0.01"
        ),
    }
}

fn criterion_6(instances: &[Vec<RegressionProblem>]) -> Outcome {
    let mut identity = 0.0f64;
    let mut certified = true;
    for problems in instances {
        let l1max = lambda1_max(problems).unwrap();
        let suff = lambda1_sufficient(problems).unwrap();
        for l1 in [0.9 * l1max, 1.05 * suff] {
            let cert = coalescence_certificate(problems, l1).unwrap();
            identity = identity.max(cert.identity_residual);
        }
        for factor in [1.0, 1.05, 2.0, 10.0] {
            certified &= coalescence_certificate(problems, factor * suff).unwrap().certified;
        }
    }
    Outcome {
        pass: identity <= 1e-10 && certified,
        detail: format!(
            "max identity residual = {identity:.3e} <= 1e-10; certified at every lambda1 >= lambda1_sufficient: {certified}"
        ),
    }
}

/// Informational: where the solver's coalescence threshold falls between the two bounds for
/// K >= 3. Not asserted.
fn report_threshold(instances: &[Vec<RegressionProblem>]) {
    let mut ratios = Vec::new();
    for problems in instances.iter().filter(|p| p.len() >= 3) {
        let l1max = lambda1_max(problems).unwrap();
        let suff = lambda1_sufficient(problems).unwrap();
        let coalesced = |l: f64| solve(problems, &hp(l, 0.0), &tight()).unwrap().is_coalesced();
        let (mut lo, mut hi) = (0.5 * l1max, 1.05 * suff);
        for _ in 0..30 {
            let mid = 0.5 * (lo + hi);
            if coalesced(mid) {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        ratios.push(format!("K={} {:.4}", problems.len(), hi / l1max));
    }
    println!(
        "  note: empirical coalescence threshold / lambda1_max for K >= 3 (lambda1_sufficient / lambda1_max = 2(K-1)/K): {}",
        ratios.join(", ")
    );
}

fn criterion_7() -> Outcome {
    let y = DVector::from_vec(vec![1.0, 2.0, 3.0]);
    let cases = [
        (y.clone(), 100.0),
        (DVector::from_vec(vec![2.0, 2.0, 2.0]), 0.0),
        (DVector::from_vec(vec![1.0, 2.0, 5.0]), -100.0),
    ];
    let got: Vec<f64> = cases.iter().map(|(h, _)| fit_metric(&y, h).unwrap()).collect();
    let pass = got.iter().zip(&cases).all(|(g, (_, want))| g == want);
    Outcome {
        pass,
        detail: format!("FIT = {got:?}, expected [100, 0, -100] exactly"),
    }
}

fn criterion_8_and_9() -> (Outcome, Outcome) {
    let scn = recovery_scenario();
    let structure = scn.structure().unwrap();
    let datasets = scenario_datasets(&scn);
    let cfg = PipelineConfig::new(structure, 2);
    let out = run_pipeline_on(&datasets, &cfg).unwrap();
    let report = &out.report;

    let names: Vec<&String> = report.conditions.iter().collect();
    let truth: Vec<usize> = names.iter().map(|n| scn.assignment[n.as_str()]).collect();
    let found: Vec<usize> = names.iter().map(|n| report.clusters.labels[n.as_str()]).collect();
    let ari = adjusted_rand_index(&truth, &found);

    let mut irrelevant = 0.0f64;
    let mut relevant = 0.0f64;
    for theta in report.thetas.values() {
        let t = ParameterVector::from_slice(theta, structure).unwrap();
        for j in 1..=structure.channels {
            let m = t.block(j).unwrap().iter().fold(0.0f64, |a, v| a.max(v.abs()));
            if scn.irrelevant_channels.contains(&j) {
                irrelevant = irrelevant.max(m);
            } else {
                relevant = relevant.max(m);
            }
        }
    }
    let ratio = irrelevant / relevant;

    let mut own_min = f64::INFINITY;
    let mut gap_min = f64::INFINITY;
    for c in &report.categories {
        let source = format!("category:{}", c.source);
        let (mut own, mut cross) = (f64::INFINITY, f64::NEG_INFINITY);
        for f in report.fits.iter().filter(|f| f.model_source == source) {
            let fit = f.fit_percent.unwrap_or(f64::NEG_INFINITY);
            let cond = fusedfir::data::condition_key(&f.eval_dataset);
            if c.members.iter().any(|m| m == cond) {
                own = own.min(fit);
            } else {
                cross = cross.max(fit);
            }
        }
        own_min = own_min.min(own);
        gap_min = gap_min.min(own - cross);
    }

    let recovery = Outcome {
        pass: ari == 1.0 && ratio <= 0.05 && own_min >= 70.0 && gap_min >= 20.0,
        detail: format!(
            "ARI = {ari}; irrelevant/relevant block max = {ratio:.3e} <= 0.05; min own-group FIT = {own_min:.2}% >= 70; \
             min (own - cross) FIT = {gap_min:.2} >= 20; lambda1 = {:.4e}, lambda2 = {:.4e}",
            report.selected.lambda1, report.selected.lambda2
        ),
    };

    let first = report.to_json().unwrap();
    let again = run_pipeline_on(&datasets, &cfg).unwrap().report.to_json().unwrap();
    let determinism = Outcome {
        pass: first == again,
        detail: format!("rerun report byte-identical: {} ({} bytes)", first == again, first.len()),
    };
    (recovery, determinism)
}

fn main() {
    let mut all = true;
    all &= check(1, "prox optimality", Some(Duration::from_secs(5)), criterion_1);

    let instances = solver_instances();
    all &= check(2, "ADMM vs reference solver", Some(Duration::from_secs(120)), || {
        criterion_2(&instances)
    });
    all &= check(3, "decoupling at zero penalties", None, || criterion_3(&instances));
    all &= check(4, "lambda2 bound", None, || criterion_4(&instances));

    let bound_set = bound_instances();
    all &= check(5, "fusion threshold behavior", Some(Duration::from_secs(180)), || {
        criterion_5(&bound_set)
    });
    all &= check(6, "certificate identity", None, || criterion_6(&bound_set));
    report_threshold(&bound_set);
    all &= check(7, "FIT hand cases", None, criterion_7);

    let mut determinism = None;
    all &= check(8, "end-to-end recovery", Some(Duration::from_secs(300)), || {
        let (recovery, det) = criterion_8_and_9();
        determinism = Some(det);
        recovery
    });
    let determinism = determinism.expect("criterion 8 ran");
    all &= check(9, "determinism", None, || determinism);

    if !all {
        std::process::exit(1);
    }
}
