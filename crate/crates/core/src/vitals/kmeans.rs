//! One-dimensional k-means.
//!
//! For inputs up to `EXACT_LIMIT` points the Lloyd iteration starts from the
//! optimal contiguous partition (dynamic programming over the sorted points), so
//! the result is the global optimum. Larger inputs start from seeded
//! farthest-point centres.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};

const EXACT_LIMIT: usize = 2048;
const MAX_ITER: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KMeans {
    /// Ascending.
    pub centroids: Vec<f64>,
    /// Cluster of each input point, indexing `centroids`.
    pub assignments: Vec<usize>,
    /// Within-cluster sum of squares after each Lloyd step.
    pub objective: Vec<f64>,
}

pub fn kmeans_1d(points: &[f64], k: usize, seed: u64) -> Result<Vec<f64>> {
    Ok(kmeans_1d_detailed(points, k, seed)?.centroids)
}

pub fn kmeans_1d_detailed(points: &[f64], k: usize, seed: u64) -> Result<KMeans> {
    ensure!(k >= 1, Validation, "k must be >= 1");
    ensure!(
        k <= points.len(),
        Validation,
        "k = {k} exceeds the number of points ({})",
        points.len()
    );
    ensure!(points.iter().all(|p| p.is_finite()), Validation, "non-finite point");

    let mut centroids = if points.len() <= EXACT_LIMIT {
        optimal_centroids(points, k)
    } else {
        farthest_point_seeds(points, k, seed)
    };
    let mut assignments = assign(points, &centroids);
    let mut objective = vec![sse(points, &centroids, &assignments)];
    for _ in 0..MAX_ITER {
        let mut sum = vec![0.0; k];
        let mut count = vec![0usize; k];
        for (p, &a) in points.iter().zip(&assignments) {
            sum[a] += p;
            count[a] += 1;
        }
        for c in 0..k {
            if count[c] > 0 {
                centroids[c] = sum[c] / count[c] as f64;
            } else {
                // Re-seed an empty cluster at the worst-served point.
                let far = (0..points.len())
                    .max_by(|&i, &j| {
                        let di = (points[i] - centroids[assignments[i]]).abs();
                        let dj = (points[j] - centroids[assignments[j]]).abs();
                        di.total_cmp(&dj)
                    })
                    .unwrap();
                centroids[c] = points[far];
            }
        }
        let next = assign(points, &centroids);
        objective.push(sse(points, &centroids, &next));
        if next == assignments {
            break;
        }
        assignments = next;
    }

    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| centroids[a].total_cmp(&centroids[b]));
    let mut rank = vec![0; k];
    for (r, &c) in order.iter().enumerate() {
        rank[c] = r;
    }
    Ok(KMeans {
        centroids: order.iter().map(|&c| centroids[c]).collect(),
        assignments: assignments.iter().map(|&a| rank[a]).collect(),
        objective,
    })
}

fn assign(points: &[f64], centroids: &[f64]) -> Vec<usize> {
    points
        .iter()
        .map(|p| {
            (0..centroids.len())
                .min_by(|&a, &b| (p - centroids[a]).abs().total_cmp(&(p - centroids[b]).abs()))
                .unwrap()
        })
        .collect()
}

pub fn sse(points: &[f64], centroids: &[f64], assignments: &[usize]) -> f64 {
    points
        .iter()
        .zip(assignments)
        .map(|(p, &a)| (p - centroids[a]).powi(2))
        .sum()
}

fn farthest_point_seeds(points: &[f64], k: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seeds = vec![points[rng.random_range(0..points.len())]];
    while seeds.len() < k {
        let next = points
            .iter()
            .copied()
            .max_by(|a, b| {
                let da = seeds.iter().map(|s| (a - s).abs()).fold(f64::INFINITY, f64::min);
                let db = seeds.iter().map(|s| (b - s).abs()).fold(f64::INFINITY, f64::min);
                da.total_cmp(&db)
            })
            .unwrap();
        seeds.push(next);
    }
    seeds
}

/// Cluster means of the minimum-SSE partition of the sorted points into `k`
/// contiguous groups.
fn optimal_centroids(points: &[f64], k: usize) -> Vec<f64> {
    let mut x = points.to_vec();
    x.sort_by(f64::total_cmp);
    let n = x.len();
    let mut s1 = vec![0.0; n + 1];
    let mut s2 = vec![0.0; n + 1];
    for i in 0..n {
        s1[i + 1] = s1[i] + x[i];
        s2[i + 1] = s2[i] + x[i] * x[i];
    }
    // SSE of x[i..j].
    let cost = |i: usize, j: usize| {
        let m = (j - i) as f64;
        let s = s1[j] - s1[i];
        (s2[j] - s2[i] - s * s / m).max(0.0)
    };
    let inf = f64::INFINITY;
    // best[c][j]: minimal SSE of x[..j] in c+1 groups; cut[c][j]: start of the last group.
    let mut best = vec![vec![inf; n + 1]; k];
    let mut cut = vec![vec![0usize; n + 1]; k];
    for j in 1..=n {
        best[0][j] = cost(0, j);
    }
    for c in 1..k {
        for j in c + 1..=n {
            for i in c..j {
                let v = best[c - 1][i] + cost(i, j);
                if v < best[c][j] {
                    best[c][j] = v;
                    cut[c][j] = i;
                }
            }
        }
    }
    let mut centroids = vec![0.0; k];
    let mut j = n;
    for c in (0..k).rev() {
        let i = if c == 0 { 0 } else { cut[c][j] };
        centroids[c] = (s1[j] - s1[i]) / (j - i) as f64;
        j = i;
    }
    centroids
}
