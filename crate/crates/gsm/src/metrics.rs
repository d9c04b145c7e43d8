//! Embedding evaluation: k-means classification error, neighborhood
//! preservation and the adjusted Rand index.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::DataMatrix;
use crate::error::Error;
use crate::init::Embedding;
use crate::knn::{build_knn_graph, Metric, NeighborGraph};

const MAX_LLOYD_ITER: usize = 300;

#[derive(Debug, Clone)]
pub struct ClusterAssignment {
    pub assignments: Vec<usize>,
    pub centroids: Vec<f64>,
    pub k: usize,
    pub dim: usize,
    pub inertia: f64,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn kmeans_once(points: &[f64], n: usize, dim: usize, k: usize, rng: &mut ChaCha8Rng) -> ClusterAssignment {
    let point = |i: usize| &points[i * dim..(i + 1) * dim];

    // k-means++ seeding.
    let mut centroids = Vec::with_capacity(k * dim);
    let first = rng.gen_range(0..n);
    centroids.extend_from_slice(point(first));
    let mut min_d2: Vec<f64> = (0..n).map(|i| sq_dist(point(i), point(first))).collect();
    for _ in 1..k {
        let total: f64 = min_d2.iter().sum();
        let choice = if total > 0.0 {
            let mut target = rng.gen_range(0.0..total);
            let mut pick = n - 1;
            for (i, &d) in min_d2.iter().enumerate() {
                if target < d {
                    pick = i;
                    break;
                }
                target -= d;
            }
            pick
        } else {
            rng.gen_range(0..n)
        };
        centroids.extend_from_slice(point(choice));
        let c = centroids.len() / dim - 1;
        for i in 0..n {
            let d = sq_dist(point(i), &centroids[c * dim..(c + 1) * dim]);
            if d < min_d2[i] {
                min_d2[i] = d;
            }
        }
    }

    let mut assignments = vec![0usize; n];
    let mut inertia = f64::INFINITY;
    for _ in 0..MAX_LLOYD_ITER {
        // Assign.
        let mut changed = false;
        let mut new_inertia = 0.0;
        for i in 0..n {
            let (mut best_c, mut best_d) = (0, f64::INFINITY);
            for c in 0..k {
                let d = sq_dist(point(i), &centroids[c * dim..(c + 1) * dim]);
                if d < best_d {
                    best_d = d;
                    best_c = c;
                }
            }
            if assignments[i] != best_c {
                assignments[i] = best_c;
                changed = true;
            }
            new_inertia += best_d;
        }
        debug_assert!(new_inertia <= inertia + 1e-9, "inertia increased across Lloyd iteration");
        inertia = new_inertia;
        if !changed {
            break;
        }
        // Update. Empty clusters keep their previous centroid.
        let mut sums = vec![0.0; k * dim];
        let mut counts = vec![0usize; k];
        for i in 0..n {
            let c = assignments[i];
            counts[c] += 1;
            for d in 0..dim {
                sums[c * dim + d] += point(i)[d];
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                for d in 0..dim {
                    centroids[c * dim + d] = sums[c * dim + d] / counts[c] as f64;
                }
            }
        }
    }

    // Final assignment pass so every point sits with its nearest centroid.
    let mut final_inertia = 0.0;
    for i in 0..n {
        let (mut best_c, mut best_d) = (0, f64::INFINITY);
        for c in 0..k {
            let d = sq_dist(point(i), &centroids[c * dim..(c + 1) * dim]);
            if d < best_d {
                best_d = d;
                best_c = c;
            }
        }
        assignments[i] = best_c;
        final_inertia += best_d;
    }

    ClusterAssignment {
        assignments,
        centroids,
        k,
        dim,
        inertia: final_inertia,
    }
}

/// Lloyd's algorithm with k-means++ seeding, best inertia over `restarts`
/// runs. Deterministic for a given seed.
pub fn kmeans(
    emb: &Embedding,
    k: usize,
    seed: u64,
    restarts: usize,
) -> Result<ClusterAssignment, Error> {
    if k == 0 || k > emb.n_points {
        return Err(Error::Config(format!(
            "k must satisfy 1 <= k <= N, got k={k} with N={}",
            emb.n_points
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<ClusterAssignment> = None;
    for _ in 0..restarts.max(1) {
        let run = kmeans_once(&emb.coords, emb.n_points, emb.dim, k, &mut rng);
        if best.as_ref().is_none_or(|b| run.inertia < b.inertia) {
            best = Some(run);
        }
    }
    Ok(best.unwrap())
}

/// Classification-by-clustering error: each cluster maps to its majority
/// true label; the error is the fraction of points disagreeing with their
/// cluster's majority.
pub fn cluster_error(assign: &ClusterAssignment, labels: &[i64]) -> Result<f64, Error> {
    let n = assign.assignments.len();
    if labels.len() != n {
        return Err(Error::LengthMismatch {
            what: "labels",
            found: labels.len(),
            expected: n,
        });
    }
    use std::collections::HashMap;
    let mut per_cluster: HashMap<usize, HashMap<i64, usize>> = HashMap::new();
    for (&c, &l) in assign.assignments.iter().zip(labels) {
        *per_cluster.entry(c).or_default().entry(l).or_default() += 1;
    }
    let mut correct = 0usize;
    for counts in per_cluster.values() {
        correct += counts.values().copied().max().unwrap_or(0);
    }
    Ok(1.0 - correct as f64 / n as f64)
}

/// Mean fraction of high-dimensional k-nearest neighbors retained among
/// the embedding's k-nearest neighbors.
pub fn knn_preservation(high: &NeighborGraph, emb: &Embedding, k: usize) -> Result<f64, Error> {
    if emb.n_points != high.n_points {
        return Err(Error::LengthMismatch {
            what: "embedding",
            found: emb.n_points,
            expected: high.n_points,
        });
    }
    if k == 0 || k > high.k {
        return Err(Error::Config(format!(
            "k must satisfy 1 <= k <= {}, got {k}",
            high.k
        )));
    }
    let data = DataMatrix::new(emb.n_points, emb.dim, emb.coords.clone());
    let low = build_knn_graph(&data, k, Metric::Euclidean)?;
    let mut total = 0.0;
    for i in 0..emb.n_points {
        let high_set: std::collections::HashSet<usize> =
            high.neighbors(i).iter().take(k).copied().collect();
        let overlap = low.neighbors(i).iter().filter(|j| high_set.contains(j)).count();
        total += overlap as f64 / k as f64;
    }
    Ok(total / emb.n_points as f64)
}

/// Adjusted Rand index between two flat labelings.
pub fn adjusted_rand_index(a: &[i64], b: &[i64]) -> Result<f64, Error> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch {
            what: "labels",
            found: b.len(),
            expected: a.len(),
        });
    }
    use std::collections::HashMap;
    let n = a.len();
    let mut contingency: HashMap<(i64, i64), u64> = HashMap::new();
    let mut row_sums: HashMap<i64, u64> = HashMap::new();
    let mut col_sums: HashMap<i64, u64> = HashMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *contingency.entry((x, y)).or_default() += 1;
        *row_sums.entry(x).or_default() += 1;
        *col_sums.entry(y).or_default() += 1;
    }
    let choose2 = |x: u64| (x * x.saturating_sub(1)) as f64 / 2.0;
    let sum_ij: f64 = contingency.values().map(|&v| choose2(v)).sum();
    let sum_a: f64 = row_sums.values().map(|&v| choose2(v)).sum();
    let sum_b: f64 = col_sums.values().map(|&v| choose2(v)).sum();
    let total = choose2(n as u64);
    let expected = sum_a * sum_b / total;
    let max_index = 0.5 * (sum_a + sum_b);
    if (max_index - expected).abs() < 1e-300 {
        return Ok(0.0);
    }
    Ok((sum_ij - expected) / (max_index - expected))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn emb(coords: Vec<f64>, dim: usize) -> Embedding {
        Embedding {
            n_points: coords.len() / dim,
            dim,
            coords,
        }
    }

    #[test]
    fn kmeans_two_separated_pairs() {
        let e = emb(vec![0.0, 0.0, 0.0, 1.0, 10.0, 10.0, 10.0, 11.0], 2);
        let a = kmeans(&e, 2, 0, 5).unwrap();
        assert_eq!(a.assignments[0], a.assignments[1]);
        assert_eq!(a.assignments[2], a.assignments[3]);
        assert_ne!(a.assignments[0], a.assignments[2]);
        // Each pair: two points at distance 1, centroid midway, 2 * 0.25.
        assert!((a.inertia - 1.0).abs() < 1e-12);
    }

    #[test]
    fn kmeans_k_equals_n() {
        let e = emb(vec![0.0, 1.0, 5.0, 9.0], 1);
        let a = kmeans(&e, 4, 0, 5).unwrap();
        assert!(a.inertia < 1e-12);
        let mut seen: Vec<usize> = a.assignments.clone();
        seen.sort_unstable();
        seen.dedup();
        assert_eq!(seen.len(), 4);
    }

    #[test]
    fn kmeans_duplicated_dataset_doubles_inertia() {
        let base = vec![0.0, 0.0, 0.0, 1.0, 10.0, 10.0, 10.0, 11.0];
        let mut doubled = base.clone();
        doubled.extend_from_slice(&base);
        let a = kmeans(&emb(base, 2), 2, 3, 10).unwrap();
        let b = kmeans(&emb(doubled, 2), 2, 3, 10).unwrap();
        assert!((b.inertia - 2.0 * a.inertia).abs() < 1e-9);
    }

    #[test]
    fn kmeans_k_too_large() {
        let e = emb(vec![0.0, 1.0], 1);
        assert!(kmeans(&e, 3, 0, 1).is_err());
    }

    #[test]
    fn kmeans_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let coords: Vec<f64> = (0..60).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let e = emb(coords, 2);
        let a = kmeans(&e, 3, 11, 4).unwrap();
        let b = kmeans(&e, 3, 11, 4).unwrap();
        assert_eq!(a.assignments, b.assignments);
    }

    fn assignment(assignments: Vec<usize>) -> ClusterAssignment {
        ClusterAssignment {
            assignments,
            centroids: vec![],
            k: 0,
            dim: 0,
            inertia: 0.0,
        }
    }

    #[test]
    fn cluster_error_perfect() {
        let a = assignment(vec![0, 0, 1, 1]);
        assert_eq!(cluster_error(&a, &[5, 5, 9, 9]).unwrap(), 0.0);
    }

    #[test]
    fn cluster_error_majority() {
        let a = assignment(vec![0, 0, 0]);
        let e = cluster_error(&a, &[1, 1, 2]).unwrap();
        assert!((e - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn cluster_error_single_cluster_uniform_labels() {
        let assignments = vec![0; 100];
        let labels: Vec<i64> = (0..100).map(|i| i % 10).collect();
        let e = cluster_error(&assignment(assignments), &labels).unwrap();
        assert!((e - 0.9).abs() < 1e-12);
    }

    #[test]
    fn cluster_error_permutation_invariant() {
        let a = assignment(vec![0, 0, 1, 1, 2, 2]);
        let labels = [7, 7, 3, 3, 5, 9];
        let relabeled: Vec<i64> = labels.iter().map(|l| l * 10 + 1).collect();
        let b = assignment(vec![2, 2, 0, 0, 1, 1]);
        let e1 = cluster_error(&a, &labels).unwrap();
        let e2 = cluster_error(&b, &relabeled).unwrap();
        assert_eq!(e1, e2);
    }

    #[test]
    fn cluster_error_length_mismatch() {
        let a = assignment(vec![0, 1]);
        assert!(cluster_error(&a, &[1]).is_err());
    }

    fn grid_data(n: usize, seed: u64) -> DataMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DataMatrix::new(n, 2, (0..n * 2).map(|_| rng.gen_range(-10.0..10.0)).collect())
    }

    #[test]
    fn preservation_identity_embedding() {
        let data = grid_data(50, 1);
        let high = build_knn_graph(&data, 5, Metric::Euclidean).unwrap();
        let e = emb(data.values.clone(), 2);
        assert_eq!(knn_preservation(&high, &e, 5).unwrap(), 1.0);
    }

    #[test]
    fn preservation_reflection_invariant() {
        let data = grid_data(40, 2);
        let high = build_knn_graph(&data, 6, Metric::Euclidean).unwrap();
        // Rotate by 30 degrees, reflect x, translate.
        let (s, c) = (30.0f64.to_radians().sin(), 30.0f64.to_radians().cos());
        let coords: Vec<f64> = (0..40)
            .flat_map(|i| {
                let p = data.row(i);
                let (x, y) = (c * p[0] - s * p[1], s * p[0] + c * p[1]);
                [-x + 3.0, y - 7.0]
            })
            .collect();
        let e = emb(coords, 2);
        assert_eq!(knn_preservation(&high, &e, 6).unwrap(), 1.0);
    }

    #[test]
    fn preservation_reversed_line() {
        let data = DataMatrix::new(6, 1, vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0]);
        let high = build_knn_graph(&data, 2, Metric::Euclidean).unwrap();
        let e = emb(vec![5.0, 4.0, 3.0, 2.0, 1.0, 0.0], 1);
        assert_eq!(knn_preservation(&high, &e, 2).unwrap(), 1.0);
    }

    #[test]
    fn preservation_random_embedding_near_chance() {
        let n = 1000;
        let k = 10;
        let data = grid_data(n, 3);
        let high = build_knn_graph(&data, k, Metric::Euclidean).unwrap();
        let mut total = 0.0;
        let trials = 20;
        for seed in 1000..1000 + trials {
            let e = crate::init::random_init(n, 2, seed, 10.0);
            total += knn_preservation(&high, &e, k).unwrap();
        }
        let mean = total / trials as f64;
        let chance = k as f64 / (n - 1) as f64;
        assert!((mean - chance).abs() < 0.01, "mean {mean} vs chance {chance}");
    }

    #[test]
    fn ari_perfect_and_independent() {
        let a = [1, 1, 2, 2, 3, 3];
        assert!((adjusted_rand_index(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        let relabeled = [9, 9, 4, 4, 0, 0];
        assert!((adjusted_rand_index(&a, &relabeled).unwrap() - 1.0).abs() < 1e-12);
        // Splitting one cluster scores below perfect.
        let split = [1, 5, 2, 2, 3, 3];
        assert!(adjusted_rand_index(&a, &split).unwrap() < 1.0);
    }
}
