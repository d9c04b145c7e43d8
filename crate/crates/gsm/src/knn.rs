//! Exact k-nearest-neighbor graph construction.

use rayon::prelude::*;

use crate::data::DataMatrix;
use crate::error::Error;

/// Distance metric id. Only Euclidean is required; the enum leaves room
/// for alternatives.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Metric {
    #[default]
    Euclidean,
}

impl std::str::FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s {
            "euclidean" => Ok(Metric::Euclidean),
            other => Err(Error::Config(format!("unknown metric {other:?}"))),
        }
    }
}

/// Per-point k nearest neighbors, distances sorted ascending, ties broken
/// by smaller index. Never contains self-neighbors.
#[derive(Debug, Clone)]
pub struct NeighborGraph {
    pub n_points: usize,
    pub k: usize,
    pub indices: Vec<usize>,
    pub distances: Vec<f64>,
}

impl NeighborGraph {
    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.indices[i * self.k..(i + 1) * self.k]
    }

    pub fn dists(&self, i: usize) -> &[f64] {
        &self.distances[i * self.k..(i + 1) * self.k]
    }
}

pub fn euclidean_distance(x: &[f64], y: &[f64]) -> Result<f64, Error> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch {
            what: "vector",
            found: y.len(),
            expected: x.len(),
        });
    }
    Ok(x.iter()
        .zip(y)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt())
}

/// Exact O(N^2 D) kNN search. Rows are computed independently in parallel;
/// the result does not depend on the thread count.
pub fn build_knn_graph(
    data: &DataMatrix,
    k: usize,
    metric: Metric,
) -> Result<NeighborGraph, Error> {
    let n = data.n_rows;
    if k == 0 || k >= n {
        return Err(Error::Config(format!(
            "k must satisfy 1 <= k <= N-1, got k={k} with N={n}"
        )));
    }
    let Metric::Euclidean = metric;

    let rows: Vec<Result<(Vec<usize>, Vec<f64>), Error>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let xi = data.row(i);
            let mut pairs: Vec<(f64, usize)> = Vec::with_capacity(n - 1);
            for j in 0..n {
                if j == i {
                    continue;
                }
                let d = euclidean_distance(xi, data.row(j))?;
                if !d.is_finite() {
                    return Err(Error::Numeric(format!(
                        "non-finite distance between points {i} and {j}"
                    )));
                }
                pairs.push((d, j));
            }
            pairs.sort_by(|a, b| a.partial_cmp(b).unwrap());
            pairs.truncate(k);
            let (dists, idx): (Vec<f64>, Vec<usize>) = pairs.into_iter().unzip();
            Ok((idx, dists))
        })
        .collect();

    let mut indices = Vec::with_capacity(n * k);
    let mut distances = Vec::with_capacity(n * k);
    for row in rows {
        let (idx, dists) = row?;
        indices.extend(idx);
        distances.extend(dists);
    }
    Ok(NeighborGraph {
        n_points: n,
        k,
        indices,
        distances,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn euclidean_345() {
        assert_eq!(euclidean_distance(&[0.0, 0.0], &[3.0, 4.0]).unwrap(), 5.0);
    }

    #[test]
    fn euclidean_self_is_zero() {
        let x = [1.5, -2.0, 7.0];
        assert_eq!(euclidean_distance(&x, &x).unwrap(), 0.0);
    }

    #[test]
    fn euclidean_1d() {
        assert_eq!(euclidean_distance(&[1.0], &[-1.0]).unwrap(), 2.0);
    }

    #[test]
    fn euclidean_length_mismatch() {
        assert!(euclidean_distance(&[1.0], &[1.0, 2.0]).is_err());
    }

    fn line_points(xs: &[f64]) -> DataMatrix {
        DataMatrix::new(xs.len(), 1, xs.to_vec())
    }

    #[test]
    fn knn_line_k1() {
        let g = build_knn_graph(&line_points(&[0.0, 1.0, 10.0]), 1, Metric::Euclidean).unwrap();
        assert_eq!(g.indices, vec![1, 0, 1]);
        assert_eq!(g.distances, vec![1.0, 1.0, 9.0]);
    }

    #[test]
    fn knn_line_k2() {
        let g = build_knn_graph(&line_points(&[0.0, 1.0, 10.0]), 2, Metric::Euclidean).unwrap();
        assert_eq!(g.neighbors(0), &[1, 2]);
        assert_eq!(g.dists(0), &[1.0, 10.0]);
    }

    #[test]
    fn knn_k_too_large() {
        let data = line_points(&[0.0, 1.0, 2.0, 3.0, 4.0]);
        assert!(build_knn_graph(&data, 5, Metric::Euclidean).is_err());
    }

    fn brute_force_oracle(data: &DataMatrix, k: usize) -> (Vec<usize>, Vec<f64>) {
        // Independent of build_knn_graph: full pairwise matrix, full sort.
        let n = data.n_rows;
        let mut indices = Vec::new();
        let mut distances = Vec::new();
        for i in 0..n {
            let mut all: Vec<(f64, usize)> = (0..n)
                .filter(|&j| j != i)
                .map(|j| {
                    let d: f64 = data
                        .row(i)
                        .iter()
                        .zip(data.row(j))
                        .map(|(a, b)| (a - b).powi(2))
                        .sum::<f64>()
                        .sqrt();
                    (d, j)
                })
                .collect();
            all.sort_by(|a, b| a.partial_cmp(b).unwrap());
            for &(d, j) in all.iter().take(k) {
                indices.push(j);
                distances.push(d);
            }
        }
        (indices, distances)
    }

    #[test]
    fn knn_matches_brute_force_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for &n in &[10usize, 50, 200] {
            let values: Vec<f64> = (0..n * 3).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let data = DataMatrix::new(n, 3, values);
            for &k in &[1usize, 5, n - 1] {
                let g = build_knn_graph(&data, k, Metric::Euclidean).unwrap();
                let (idx, dists) = brute_force_oracle(&data, k);
                assert_eq!(g.indices, idx, "n={n} k={k}");
                assert_eq!(g.distances, dists, "n={n} k={k}");
            }
        }
    }

    #[test]
    fn knn_permutation_isomorphic() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let n = 30;
        let values: Vec<f64> = (0..n * 2).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let data = DataMatrix::new(n, 2, values.clone());

        // Reverse the row order and relabel.
        let perm: Vec<usize> = (0..n).rev().collect();
        let mut permuted = Vec::with_capacity(n * 2);
        for &p in &perm {
            permuted.extend_from_slice(data.row(p));
        }
        let data_p = DataMatrix::new(n, 2, permuted);

        let g = build_knn_graph(&data, 4, Metric::Euclidean).unwrap();
        let g_p = build_knn_graph(&data_p, 4, Metric::Euclidean).unwrap();

        // inv[old] = new position
        let mut inv = vec![0usize; n];
        for (new, &old) in perm.iter().enumerate() {
            inv[old] = new;
        }
        for i in 0..n {
            let mut expected: Vec<usize> =
                g.neighbors(i).iter().map(|&j| inv[j]).collect();
            let mut got: Vec<usize> = g_p.neighbors(inv[i]).to_vec();
            expected.sort_unstable();
            got.sort_unstable();
            assert_eq!(expected, got);
        }
    }

    #[test]
    fn knn_duplicate_points_give_zero_distance_neighbor() {
        let g = build_knn_graph(&line_points(&[2.0, 2.0, 5.0]), 1, Metric::Euclidean).unwrap();
        assert_eq!(g.dists(0), &[0.0]);
        assert_eq!(g.neighbors(0), &[1]);
        assert_eq!(g.neighbors(1), &[0]);
    }
}
