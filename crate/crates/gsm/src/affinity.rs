//! Per-point bandwidth calibration and the symmetric fuzzy affinity graph.

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;

use crate::error::Error;
use crate::knn::NeighborGraph;

/// Residual tolerance for the per-point bandwidth solve.
pub const SIGMA_TOL: f64 = 1e-5;

const SIGMA_LO: f64 = 1e-10;
const SIGMA_HI: f64 = 1e6;
const SIGMA_MAX_ITER: usize = 100;

/// Bandwidth assigned to degenerate points whose neighbors are all at
/// distance zero; the calibration constraint has no solution there.
pub const DEGENERATE_SIGMA: f64 = 1.0;

/// Calibrated per-point offsets and bandwidths.
#[derive(Debug, Clone)]
pub struct SmoothKnnParams {
    pub rho: Vec<f64>,
    pub sigma: Vec<f64>,
}

/// Directed conditional affinities aligned with a neighbor graph: row i
/// holds the weight toward each of i's k neighbors.
#[derive(Debug, Clone)]
pub struct DirectedAffinity {
    pub n_points: usize,
    pub k: usize,
    pub indices: Vec<usize>,
    pub weights: Vec<f64>,
}

impl DirectedAffinity {
    pub fn row_weights(&self, i: usize) -> &[f64] {
        &self.weights[i * self.k..(i + 1) * self.k]
    }
}

/// Undirected edge with fuzzy-union weight, stored with i < j.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub i: usize,
    pub j: usize,
    pub weight: f64,
}

/// Sparse symmetric affinity graph over the union of directed kNN edges.
#[derive(Debug, Clone)]
pub struct FuzzyGraph {
    pub n_vertices: usize,
    pub edges: Vec<Edge>,
}

impl FuzzyGraph {
    pub fn max_weight(&self) -> f64 {
        self.edges.iter().map(|e| e.weight).fold(0.0, f64::max)
    }

    /// Debug serialization: 3-column CSV (i, j, weight), 0-based vertices.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<(), Error> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        for e in &self.edges {
            writeln!(w, "{},{},{}", e.i, e.j, e.weight).map_err(|er| Error::io(path, er))?;
        }
        Ok(())
    }
}

/// Offset of each point: its smallest positive neighbor distance, or 0
/// when every neighbor sits at distance zero.
pub fn compute_rho(g: &NeighborGraph) -> Vec<f64> {
    (0..g.n_points)
        .map(|i| {
            g.dists(i)
                .iter()
                .copied()
                .find(|&d| d > 0.0)
                .unwrap_or(0.0)
        })
        .collect()
}

/// Directed similarity 1 / (1 + max(0, d - rho) / sigma).
pub fn conditional_affinity(d: f64, rho: f64, sigma: f64) -> Result<f64, Error> {
    if sigma <= 0.0 {
        return Err(Error::Config(format!("sigma must be positive, got {sigma}")));
    }
    Ok(1.0 / (1.0 + (d - rho).max(0.0) / sigma))
}

fn affinity_sum(adjusted: &[f64], sigma: f64) -> f64 {
    adjusted.iter().map(|&a| 1.0 / (1.0 + a / sigma)).sum()
}

/// Solve for the bandwidth sigma making the row affinity sum hit log2(k),
/// by bisection on the monotone scalar equation. The residual is below
/// `tol` whenever the target is attainable (fewer zero-distance ties than
/// the target).
///
/// Errors when every adjusted distance is zero: the sum is then k for any
/// sigma and the constraint is unsatisfiable; callers substitute
/// [`DEGENERATE_SIGMA`].
pub fn solve_sigma(adjusted: &[f64], tol: f64) -> Result<f64, Error> {
    debug_assert!(tol > 0.0);
    let k = adjusted.len();
    if k < 2 {
        return Err(Error::Config(format!("need at least 2 neighbors, got {k}")));
    }
    if adjusted.iter().all(|&a| a == 0.0) {
        return Err(Error::Numeric(
            "degenerate point: all adjusted neighbor distances are zero".to_string(),
        ));
    }
    let target = (k as f64).log2();

    let mut lo = SIGMA_LO;
    let mut hi = SIGMA_HI;
    // The sum increases with sigma toward k > target; shrink-proof the
    // bracket for extreme distance scales.
    while affinity_sum(adjusted, hi) < target && hi < 1e12 {
        hi *= 10.0;
    }
    // Run the bisection to full convergence rather than stopping at the
    // residual tolerance: the extra iterations are cheap and make sigma
    // scale with the metric to near machine precision, so calibrated
    // affinities are invariant under rescaling the input distances.
    let mut sigma = 0.5 * (lo + hi);
    for _ in 0..SIGMA_MAX_ITER {
        sigma = 0.5 * (lo + hi);
        if affinity_sum(adjusted, sigma) < target {
            lo = sigma;
        } else {
            hi = sigma;
        }
        if (hi - lo) <= f64::EPSILON * sigma {
            break;
        }
    }
    Ok(sigma)
}

/// Calibrate rho and sigma for every point of a neighbor graph.
pub fn smooth_knn_params(g: &NeighborGraph, tol: f64) -> SmoothKnnParams {
    let rho = compute_rho(g);
    let sigma: Vec<f64> = (0..g.n_points)
        .into_par_iter()
        .map(|i| {
            let adjusted: Vec<f64> = g
                .dists(i)
                .iter()
                .map(|&d| (d - rho[i]).max(0.0))
                .collect();
            solve_sigma(&adjusted, tol).unwrap_or(DEGENERATE_SIGMA)
        })
        .collect();
    SmoothKnnParams { rho, sigma }
}

/// Directed conditional weights P(j|i) over exactly the kNN edges.
pub fn conditional_matrix(g: &NeighborGraph, params: &SmoothKnnParams) -> DirectedAffinity {
    let mut weights = Vec::with_capacity(g.n_points * g.k);
    for i in 0..g.n_points {
        for &d in g.dists(i) {
            let w = 1.0 / (1.0 + (d - params.rho[i]).max(0.0) / params.sigma[i]);
            weights.push(w);
        }
    }
    DirectedAffinity {
        n_points: g.n_points,
        k: g.k,
        indices: g.indices.clone(),
        weights,
    }
}

/// Fuzzy-union symmetrization: P_ij = p + q - p*q over the union of
/// directed edges. Edges come out sorted by (i, j) with i < j.
pub fn symmetrize(directed: &DirectedAffinity) -> Result<FuzzyGraph, Error> {
    use std::collections::HashMap;

    let mut pairs: HashMap<(usize, usize), (f64, f64)> = HashMap::new();
    for i in 0..directed.n_points {
        for (slot, &j) in directed.indices[i * directed.k..(i + 1) * directed.k]
            .iter()
            .enumerate()
        {
            let w = directed.weights[i * directed.k + slot];
            if !(0.0..=1.0).contains(&w) {
                return Err(Error::Numeric(format!(
                    "directed weight {w} for edge ({i},{j}) outside [0,1]"
                )));
            }
            let key = (i.min(j), i.max(j));
            let entry = pairs.entry(key).or_insert((0.0, 0.0));
            if i < j {
                entry.0 = w;
            } else {
                entry.1 = w;
            }
        }
    }

    let mut edges: Vec<Edge> = pairs
        .into_iter()
        .map(|((i, j), (p, q))| Edge {
            i,
            j,
            weight: p + q - p * q,
        })
        .filter(|e| e.weight > 0.0)
        .collect();
    edges.sort_by_key(|e| (e.i, e.j));
    Ok(FuzzyGraph {
        n_vertices: directed.n_points,
        edges,
    })
}

/// Full affinity stage: calibrate bandwidths, build the conditional
/// matrix and symmetrize it.
pub fn fuzzy_graph(g: &NeighborGraph) -> Result<FuzzyGraph, Error> {
    let params = smooth_knn_params(g, SIGMA_TOL);
    symmetrize(&conditional_matrix(g, &params))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::DataMatrix;
    use crate::knn::{build_knn_graph, Metric};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn graph_from_rows(dists: Vec<Vec<f64>>, indices: Vec<Vec<usize>>) -> NeighborGraph {
        let k = dists[0].len();
        NeighborGraph {
            n_points: dists.len(),
            k,
            indices: indices.into_iter().flatten().collect(),
            distances: dists.into_iter().flatten().collect(),
        }
    }

    #[test]
    fn rho_is_min_positive() {
        let g = graph_from_rows(vec![vec![1.0, 2.0, 9.0]], vec![vec![1, 2, 3]]);
        assert_eq!(compute_rho(&g), vec![1.0]);
    }

    #[test]
    fn rho_skips_zero_distances() {
        let g = graph_from_rows(vec![vec![0.0, 0.5]], vec![vec![1, 2]]);
        assert_eq!(compute_rho(&g), vec![0.5]);
    }

    #[test]
    fn rho_all_zero_fallback() {
        let g = graph_from_rows(vec![vec![0.0, 0.0]], vec![vec![1, 2]]);
        assert_eq!(compute_rho(&g), vec![0.0]);
    }

    #[test]
    fn conditional_affinity_anchor_points() {
        let (rho, sigma) = (0.7, 1.3);
        assert_eq!(conditional_affinity(rho, rho, sigma).unwrap(), 1.0);
        assert_eq!(conditional_affinity(rho + sigma, rho, sigma).unwrap(), 0.5);
        assert_eq!(conditional_affinity(rho + 3.0 * sigma, rho, sigma).unwrap(), 0.25);
        assert!(conditional_affinity(1.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn sigma_example_k4() {
        // Sum 1/(1+a/sigma) over [0,1,2,3] must hit log2(4) = 2.
        let sigma = solve_sigma(&[0.0, 1.0, 2.0, 3.0], 1e-7).unwrap();
        let sum = affinity_sum(&[0.0, 1.0, 2.0, 3.0], sigma);
        assert!((sum - 2.0).abs() <= 1e-5);
        assert!((sigma - 0.879).abs() < 1e-3, "sigma = {sigma}");
    }

    #[test]
    fn sigma_closed_form_case() {
        // [0, c, c, c]: 1 + 3/(1+c/sigma) = 2 has the exact solution c/2.
        for &c in &[0.5, 1.0, 7.0] {
            let sigma = solve_sigma(&[0.0, c, c, c], 1e-9).unwrap();
            assert!((sigma - c / 2.0).abs() < 1e-4, "c={c}: sigma={sigma}");
        }
    }

    #[test]
    fn sigma_degenerate_all_zero() {
        assert!(matches!(
            solve_sigma(&[0.0, 0.0, 0.0], 1e-5),
            Err(Error::Numeric(_))
        ));
    }

    #[test]
    fn sigma_monotone_in_distances() {
        let base = [0.0, 0.4, 1.1, 2.0, 3.3];
        let larger: Vec<f64> = base.iter().map(|&a| if a > 0.0 { a * 1.5 } else { 0.1 }).collect();
        let s1 = solve_sigma(&base, 1e-8).unwrap();
        let s2 = solve_sigma(&larger, 1e-8).unwrap();
        assert!(s2 > s1);
    }

    #[test]
    fn conditional_matrix_plugin() {
        // Row with adjusted distances (0, sigma): weights (1, 0.5).
        let g = graph_from_rows(vec![vec![2.0, 2.0 + 1.5]], vec![vec![1, 2]]);
        let params = SmoothKnnParams {
            rho: vec![2.0],
            sigma: vec![1.5],
        };
        let m = conditional_matrix(&g, &params);
        assert_eq!(m.row_weights(0), &[1.0, 0.5]);
    }

    #[test]
    fn symmetrize_arithmetic() {
        let fuzzy = |p: f64, q: f64| p + q - p * q;
        assert_eq!(fuzzy(0.5, 0.5), 0.75);
        assert_eq!(fuzzy(1.0, 0.0), 1.0);
        for &p in &[0.0, 0.25, 0.9] {
            assert_eq!(fuzzy(p, 0.0), p);
        }
    }

    #[test]
    fn symmetrize_one_sided_edge() {
        // 0 -> 1 and 1 -> 0 mutual, 2 -> 0 one-sided.
        let directed = DirectedAffinity {
            n_points: 3,
            k: 1,
            indices: vec![1, 0, 0],
            weights: vec![0.5, 0.5, 0.8],
        };
        let g = symmetrize(&directed).unwrap();
        assert_eq!(g.edges.len(), 2);
        assert_eq!(g.edges[0], Edge { i: 0, j: 1, weight: 0.75 });
        assert_eq!(g.edges[1], Edge { i: 0, j: 2, weight: 0.8 });
    }

    #[test]
    fn symmetrize_rejects_out_of_range() {
        let directed = DirectedAffinity {
            n_points: 2,
            k: 1,
            indices: vec![1, 0],
            weights: vec![1.5, 0.5],
        };
        assert!(symmetrize(&directed).is_err());
    }

    fn random_data(n: usize, d: usize, seed: u64) -> DataMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DataMatrix::new(n, d, (0..n * d).map(|_| rng.gen_range(-1.0..1.0)).collect())
    }

    #[test]
    fn row_sums_hit_target() {
        let data = random_data(60, 4, 2);
        let k = 8;
        let g = build_knn_graph(&data, k, Metric::Euclidean).unwrap();
        let params = smooth_knn_params(&g, SIGMA_TOL);
        let m = conditional_matrix(&g, &params);
        let target = (k as f64).log2();
        for i in 0..g.n_points {
            let sum: f64 = m.row_weights(i).iter().sum();
            assert!((sum - target).abs() <= SIGMA_TOL * 10.0, "row {i}: {sum}");
        }
    }

    #[test]
    fn fuzzy_weight_bounds() {
        let data = random_data(40, 3, 7);
        let g = build_knn_graph(&data, 5, Metric::Euclidean).unwrap();
        let params = smooth_knn_params(&g, SIGMA_TOL);
        let m = conditional_matrix(&g, &params);
        let fg = symmetrize(&m).unwrap();

        let mut directed = std::collections::HashMap::new();
        for i in 0..m.n_points {
            for (slot, &j) in g.neighbors(i).iter().enumerate() {
                directed.insert((i, j), m.weights[i * m.k + slot]);
            }
        }
        for e in &fg.edges {
            let p = directed.get(&(e.i, e.j)).copied().unwrap_or(0.0);
            let q = directed.get(&(e.j, e.i)).copied().unwrap_or(0.0);
            assert!(e.weight > 0.0 && e.weight <= 1.0);
            assert!(e.weight >= p.max(q) - 1e-15);
            assert!(e.weight <= p + q + 1e-15);
        }
    }

    #[test]
    fn metric_scale_invariance() {
        let data = random_data(50, 3, 13);
        let scaled = DataMatrix::new(
            data.n_rows,
            data.n_cols,
            data.values.iter().map(|v| v * 37.5).collect(),
        );
        let g1 = fuzzy_graph(&build_knn_graph(&data, 6, Metric::Euclidean).unwrap()).unwrap();
        let g2 = fuzzy_graph(&build_knn_graph(&scaled, 6, Metric::Euclidean).unwrap()).unwrap();
        assert_eq!(g1.edges.len(), g2.edges.len());
        for (a, b) in g1.edges.iter().zip(&g2.edges) {
            assert_eq!((a.i, a.j), (b.i, b.j));
            assert!((a.weight - b.weight).abs() < 1e-10);
        }
    }

    #[test]
    fn graph_csv_output() {
        let fg = FuzzyGraph {
            n_vertices: 3,
            edges: vec![Edge { i: 0, j: 2, weight: 0.5 }],
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.csv");
        fg.write_csv(&path).unwrap();
        assert_eq!(std::fs::read_to_string(path).unwrap(), "0,2,0.5\n");
    }

    proptest! {
        #[test]
        fn prop_sigma_residual(adjusted in proptest::collection::vec(0.0f64..10.0, 5..15)) {
            prop_assume!(adjusted.iter().any(|&a| a > 0.0));
            let k = adjusted.len() as f64;
            let sigma = solve_sigma(&adjusted, SIGMA_TOL).unwrap();
            let sum = affinity_sum(&adjusted, sigma);
            // Attainable whenever the count of zero entries is below target.
            let zeros = adjusted.iter().filter(|&&a| a == 0.0).count() as f64;
            if zeros < k.log2() {
                prop_assert!((sum - k.log2()).abs() <= SIGMA_TOL * 2.0);
            }
        }

        #[test]
        fn prop_fuzzy_union_bounds(p in 0.0f64..=1.0, q in 0.0f64..=1.0) {
            let w = p + q - p * q;
            prop_assert!(w >= p.max(q) - 1e-15);
            prop_assert!(w <= (p + q).min(1.0) + 1e-15);
        }
    }
}
