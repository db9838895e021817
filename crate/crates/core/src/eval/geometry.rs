//! Pure geometry/statistics primitives: distance matrices, k-means, NMI.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::EvalError;

/// Full symmetric Euclidean distance matrix with a zero diagonal.
pub fn pairwise_euclidean(points: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = points.len();
    if n == 0 {
        return Vec::new();
    }
    let dim = points[0].len();
    assert!(points.iter().all(|p| p.len() == dim), "points must share one dimension");
    let mut out = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in i + 1..n {
            let d = euclidean(&points[i], &points[j]);
            out[i][j] = d;
            out[j][i] = d;
        }
    }
    out
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    squared_euclidean(a, b).sqrt()
}

fn squared_euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// The `k` nearest other points to `id` as `(index, distance)`, sorted by
/// distance, distance ties broken toward the lower index.
pub fn nearest_neighbors(distances: &[Vec<f64>], id: usize, k: usize) -> Vec<(usize, f64)> {
    let mut others: Vec<(usize, f64)> = distances[id]
        .iter()
        .copied()
        .enumerate()
        .filter(|&(j, _)| j != id)
        .collect();
    others.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    others.truncate(k);
    others
}

#[derive(Debug, Clone)]
pub struct KmeansResult {
    /// Cluster index per input point.
    pub assignments: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    /// Sum of squared distances from each point to its centroid.
    pub inertia: f64,
    pub iterations: usize,
}

/// Lloyd's algorithm with k-means++ initialization. Distance ties assign to
/// the lower centroid index; a cluster left empty is reseeded at the point
/// currently farthest from its own centroid. Inertia is asserted nonincreasing
/// across iterations; iteration stops when assignments stabilize or after
/// `max_iter` rounds.
pub fn kmeans(
    points: &[Vec<f64>],
    k: usize,
    seed: u64,
    max_iter: usize,
) -> Result<KmeansResult, EvalError> {
    let n = points.len();
    if k == 0 || k > n {
        return Err(EvalError::BadK { k, n });
    }
    let dim = points[0].len();
    assert!(points.iter().all(|p| p.len() == dim), "points must share one dimension");

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = plus_plus_init(points, k, &mut rng);
    let mut assignments = vec![usize::MAX; n];
    let mut inertia = f64::INFINITY;
    let mut iterations = 0;

    for _ in 0..max_iter.max(1) {
        iterations += 1;
        let mut next: Vec<usize> = points.iter().map(|p| nearest_centroid(p, &centroids)).collect();
        fix_empty_clusters(points, &mut centroids, &mut next);

        for (c, centroid) in centroids.iter_mut().enumerate() {
            let members: Vec<&Vec<f64>> =
                points.iter().zip(&next).filter(|&(_, &a)| a == c).map(|(p, _)| p).collect();
            debug_assert!(!members.is_empty(), "empty clusters are reseeded before the update");
            for (d, slot) in centroid.iter_mut().enumerate() {
                *slot = members.iter().map(|p| p[d]).sum::<f64>() / members.len() as f64;
            }
        }

        let next_inertia: f64 = points
            .iter()
            .zip(&next)
            .map(|(p, &a)| squared_euclidean(p, &centroids[a]))
            .sum();
        assert!(
            next_inertia <= inertia + 1e-9,
            "k-means inertia increased: {inertia} -> {next_inertia}"
        );
        let converged = next == assignments;
        assignments = next;
        inertia = next_inertia;
        if converged {
            break;
        }
    }

    Ok(KmeansResult { assignments, centroids, inertia, iterations })
}

/// k-means++ seeding: first centroid uniform, each later one sampled with
/// probability proportional to squared distance from the chosen set.
fn plus_plus_init(points: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = points.len();
    let mut centroids: Vec<Vec<f64>> = vec![points[rng.random_range(0..n)].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| squared_euclidean(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let idx = if total > 0.0 {
            let mut target = rng.random_range(0.0..total);
            let mut chosen = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                if target < w {
                    chosen = i;
                    break;
                }
                target -= w;
            }
            chosen
        } else {
            // All remaining points coincide with a centroid; any choice works.
            rng.random_range(0..n)
        };
        centroids.push(points[idx].clone());
        for (i, p) in points.iter().enumerate() {
            d2[i] = d2[i].min(squared_euclidean(p, centroids.last().unwrap()));
        }
    }
    centroids
}

fn nearest_centroid(point: &[f64], centroids: &[Vec<f64>]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (c, centroid) in centroids.iter().enumerate() {
        let d = squared_euclidean(point, centroid);
        if d < best_d {
            best_d = d;
            best = c;
        }
    }
    best
}

/// Reseeds every empty cluster at the point farthest from its own centroid
/// (never stealing the last member of another cluster), reassigning that
/// point, which strictly lowers inertia.
fn fix_empty_clusters(points: &[Vec<f64>], centroids: &mut [Vec<f64>], assignments: &mut [usize]) {
    let k = centroids.len();
    loop {
        let mut sizes = vec![0usize; k];
        for &a in assignments.iter() {
            sizes[a] += 1;
        }
        let Some(empty) = sizes.iter().position(|&s| s == 0) else { return };
        let mut farthest: Option<(usize, f64)> = None;
        for (i, p) in points.iter().enumerate() {
            if sizes[assignments[i]] <= 1 {
                continue;
            }
            let d = squared_euclidean(p, &centroids[assignments[i]]);
            if farthest.is_none_or(|(_, best)| d > best) {
                farthest = Some((i, d));
            }
        }
        let (idx, _) = farthest.expect("a stealable point exists whenever a cluster is empty");
        centroids[empty] = points[idx].clone();
        assignments[idx] = empty;
    }
}

/// Normalized mutual information `I(A;B) / sqrt(H(A) * H(B))` with natural
/// logarithms. If both partitions are single-cluster the score is 1; if
/// exactly one is, it is 0. The result is clamped to `[0, 1]`.
pub fn nmi(a: &[u32], b: &[u32]) -> Result<f64, EvalError> {
    if a.len() != b.len() {
        return Err(EvalError::LengthMismatch(a.len(), b.len()));
    }
    if a.is_empty() {
        return Err(EvalError::Empty);
    }
    let n = a.len() as f64;
    let mut ca: BTreeMap<u32, usize> = BTreeMap::new();
    let mut cb: BTreeMap<u32, usize> = BTreeMap::new();
    let mut cab: BTreeMap<(u32, u32), usize> = BTreeMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *ca.entry(x).or_default() += 1;
        *cb.entry(y).or_default() += 1;
        *cab.entry((x, y)).or_default() += 1;
    }
    let entropy = |counts: &BTreeMap<u32, usize>| -> f64 {
        -counts
            .values()
            .map(|&c| {
                let p = c as f64 / n;
                p * p.ln()
            })
            .sum::<f64>()
    };
    let ha = entropy(&ca);
    let hb = entropy(&cb);
    if ha == 0.0 && hb == 0.0 {
        return Ok(1.0);
    }
    if ha == 0.0 || hb == 0.0 {
        return Ok(0.0);
    }
    let mut mi = 0.0;
    for (&(x, y), &c) in &cab {
        let p = c as f64 / n;
        let px = ca[&x] as f64 / n;
        let py = cb[&y] as f64 / n;
        mi += p * (p / (px * py)).ln();
    }
    Ok((mi / (ha * hb).sqrt()).clamp(0.0, 1.0))
}
