//! Seeded K-means (k-means++ initialization, Lloyd iterations, best of several restarts).

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

const MAX_LLOYD_ITERS: usize = 300;

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    /// 0-based cluster of each point; clusters are numbered by first appearance.
    pub labels: Vec<usize>,
    pub centroids: Vec<DVector<f64>>,
    /// Sum of squared distances to the assigned centroid.
    pub inertia: f64,
}

pub fn kmeans(points: &[DVector<f64>], k: usize, seed: u64, restarts: usize) -> Result<KMeansResult> {
    if k == 0 {
        return Err(Error::InvalidInput("cluster count must be at least 1".into()));
    }
    if k > points.len() {
        return Err(Error::InvalidInput(format!(
            "cluster count {k} exceeds the number of points {}",
            points.len()
        )));
    }
    let dim = points[0].len();
    if points.iter().any(|p| p.len() != dim) {
        return Err(Error::Dimension("points have different lengths".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<KMeansResult> = None;
    for _ in 0..restarts.max(1) {
        let centroids = plus_plus_init(points, k, &mut rng);
        let run = lloyd(points, centroids);
        if best.as_ref().is_none_or(|b| run.inertia < b.inertia) {
            best = Some(run);
        }
    }
    Ok(canonicalize(best.expect("at least one restart")))
}

fn sq_dist(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).norm_squared()
}

fn nearest(p: &DVector<f64>, centroids: &[DVector<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, centroid) in centroids.iter().enumerate() {
        let d = sq_dist(p, centroid);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn plus_plus_init(points: &[DVector<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<DVector<f64>> {
    let mut chosen = vec![rng.random_range(0..points.len())];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &points[chosen[0]])).collect();
    while chosen.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = None;
            for (i, &w) in d2.iter().enumerate() {
                if w > 0.0 {
                    pick = Some(i);
                    if target < w {
                        break;
                    }
                    target -= w;
                }
            }
            pick.expect("positive total weight")
        } else {
            // every remaining point coincides with a chosen center
            (0..points.len())
                .find(|i| !chosen.contains(i))
                .expect("k <= number of points")
        };
        chosen.push(next);
        for (i, p) in points.iter().enumerate() {
            d2[i] = d2[i].min(sq_dist(p, &points[next]));
        }
    }
    chosen.into_iter().map(|i| points[i].clone()).collect()
}

fn lloyd(points: &[DVector<f64>], mut centroids: Vec<DVector<f64>>) -> KMeansResult {
    let k = centroids.len();
    let mut labels: Vec<usize> = points.iter().map(|p| nearest(p, &centroids).0).collect();
    let mut inertia = f64::INFINITY;
    for _ in 0..MAX_LLOYD_ITERS {
        let repaired = repair_empty(points, &mut labels, &centroids, k);
        centroids = means(points, &labels, k);
        let new_labels: Vec<usize> = points.iter().map(|p| nearest(p, &centroids).0).collect();
        let new_inertia: f64 = points
            .iter()
            .zip(&new_labels)
            .map(|(p, &l)| sq_dist(p, &centroids[l]))
            .sum();
        debug_assert!(
            repaired || new_inertia <= inertia * (1.0 + 1e-12) + 1e-12,
            "inertia increased from {inertia} to {new_inertia}"
        );
        inertia = new_inertia;
        if new_labels == labels {
            break;
        }
        labels = new_labels;
    }
    repair_empty(points, &mut labels, &centroids, k);
    let centroids = means(points, &labels, k);
    let inertia = points
        .iter()
        .zip(&labels)
        .map(|(p, &l)| sq_dist(p, &centroids[l]))
        .sum();
    KMeansResult {
        labels,
        centroids,
        inertia,
    }
}

/// Moves the point farthest from its centroid into each empty cluster. Returns whether any
/// point moved.
fn repair_empty(points: &[DVector<f64>], labels: &mut [usize], centroids: &[DVector<f64>], k: usize) -> bool {
    let mut moved = false;
    loop {
        let mut counts = vec![0usize; k];
        labels.iter().for_each(|&l| counts[l] += 1);
        let Some(empty) = counts.iter().position(|&c| c == 0) else {
            return moved;
        };
        let farthest = (0..points.len())
            .filter(|&i| counts[labels[i]] > 1)
            .max_by(|&a, &b| {
                let da = sq_dist(&points[a], &centroids[labels[a]]);
                let db = sq_dist(&points[b], &centroids[labels[b]]);
                da.total_cmp(&db).then(b.cmp(&a))
            })
            .expect("k <= number of points");
        labels[farthest] = empty;
        moved = true;
    }
}

fn means(points: &[DVector<f64>], labels: &[usize], k: usize) -> Vec<DVector<f64>> {
    let dim = points[0].len();
    let mut sums = vec![DVector::zeros(dim); k];
    let mut counts = vec![0usize; k];
    for (p, &l) in points.iter().zip(labels) {
        sums[l] += p;
        counts[l] += 1;
    }
    sums.into_iter()
        .zip(counts)
        .map(|(s, c)| s / c.max(1) as f64)
        .collect()
}

fn canonicalize(result: KMeansResult) -> KMeansResult {
    let k = result.centroids.len();
    let mut order = Vec::with_capacity(k);
    for &l in &result.labels {
        if !order.contains(&l) {
            order.push(l);
        }
    }
    let mut relabel = vec![0; k];
    for (new, &old) in order.iter().enumerate() {
        relabel[old] = new;
    }
    KMeansResult {
        labels: result.labels.iter().map(|&l| relabel[l]).collect(),
        centroids: order.iter().map(|&old| result.centroids[old].clone()).collect(),
        inertia: result.inertia,
    }
}

/// Mean silhouette coefficient of a labelling; singleton clusters contribute 0.
pub fn silhouette(points: &[DVector<f64>], labels: &[usize]) -> f64 {
    let k = labels.iter().max().map_or(0, |m| m + 1);
    if k < 2 || points.len() < 2 {
        return 0.0;
    }
    let mut total = 0.0;
    for (i, p) in points.iter().enumerate() {
        let mut sum = vec![0.0; k];
        let mut count = vec![0usize; k];
        for (j, q) in points.iter().enumerate() {
            if i != j {
                sum[labels[j]] += (p - q).norm();
                count[labels[j]] += 1;
            }
        }
        let own = labels[i];
        if count[own] == 0 {
            continue;
        }
        let a = sum[own] / count[own] as f64;
        let b = (0..k)
            .filter(|&c| c != own && count[c] > 0)
            .map(|c| sum[c] / count[c] as f64)
            .fold(f64::INFINITY, f64::min);
        let denom = a.max(b);
        if denom > 0.0 && b.is_finite() {
            total += (b - a) / denom;
        }
    }
    total / points.len() as f64
}
