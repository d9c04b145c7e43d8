//! Initial embeddings: spectral (normalized-Laplacian eigenvectors) or
//! seeded random.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::affinity::FuzzyGraph;
use crate::error::Error;

/// Low-dimensional coordinates, one row per point.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    pub n_points: usize,
    pub dim: usize,
    pub coords: Vec<f64>,
}

impl Embedding {
    pub fn point(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    pub fn point_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.coords[i * self.dim..(i + 1) * self.dim]
    }
}

/// Spectral embedding scale: max absolute coordinate after rescaling.
const SPECTRAL_SCALE: f64 = 10.0;
/// Standard deviation of the tie-breaking jitter added after rescaling.
const JITTER_SIGMA: f64 = 1e-4;
/// Above this size the dense eigensolver is replaced by Lanczos.
const DENSE_LIMIT: usize = 2000;
/// Ritz-pair residual tolerance for the Lanczos path.
const LANCZOS_TOL: f64 = 1e-4;

/// Uniform random coordinates in [-scale, scale], ChaCha8-seeded.
pub fn random_init(n: usize, dim: usize, seed: u64, scale: f64) -> Embedding {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let coords = (0..n * dim).map(|_| rng.gen_range(-scale..=scale)).collect();
    Embedding {
        n_points: n,
        dim,
        coords,
    }
}

fn adjacency(graph: &FuzzyGraph) -> Vec<Vec<(usize, f64)>> {
    let mut adj = vec![Vec::new(); graph.n_vertices];
    for e in &graph.edges {
        adj[e.i].push((e.j, e.weight));
        adj[e.j].push((e.i, e.weight));
    }
    adj
}

fn count_components(adj: &[Vec<(usize, f64)>]) -> usize {
    let n = adj.len();
    let mut seen = vec![false; n];
    let mut components = 0;
    let mut stack = Vec::new();
    for start in 0..n {
        if seen[start] {
            continue;
        }
        components += 1;
        seen[start] = true;
        stack.push(start);
        while let Some(v) = stack.pop() {
            for &(u, _) in &adj[v] {
                if !seen[u] {
                    seen[u] = true;
                    stack.push(u);
                }
            }
        }
    }
    components
}

/// Multiply the symmetric normalized Laplacian by x using the edge list:
/// (L x)_i = x_i - sum_j w_ij x_j / sqrt(d_i d_j).
fn laplacian_matvec(adj: &[Vec<(usize, f64)>], inv_sqrt_deg: &[f64], x: &[f64]) -> Vec<f64> {
    let n = adj.len();
    let mut y = vec![0.0; n];
    for i in 0..n {
        let mut acc = 0.0;
        for &(j, w) in &adj[i] {
            acc += w * inv_sqrt_deg[j] * x[j];
        }
        y[i] = x[i] - inv_sqrt_deg[i] * acc;
    }
    y
}

/// Eigenvectors of the `dim` smallest nonzero eigenvalues, as raw
/// unit-norm columns stored row-major per point. Fails (for the caller to
/// fall back on) when the spectrum does not supply enough nonzero modes
/// or the iterative solver does not converge.
fn spectral_coordinates(graph: &FuzzyGraph, dim: usize) -> Result<Vec<f64>, Error> {
    let n = graph.n_vertices;
    let adj = adjacency(graph);
    let components = count_components(&adj);
    if components > dim + 1 {
        return Err(Error::Numeric(format!(
            "graph has {components} connected components, too many for dim {dim}"
        )));
    }

    let degrees: Vec<f64> = adj.iter().map(|row| row.iter().map(|&(_, w)| w).sum()).collect();
    let inv_sqrt_deg: Vec<f64> = degrees
        .iter()
        .map(|&d| if d > 0.0 { 1.0 / d.sqrt() } else { 0.0 })
        .collect();

    let (eigenvalues, vectors) = if n <= DENSE_LIMIT {
        dense_eigen(&adj, &inv_sqrt_deg)
    } else {
        lanczos_eigen(&adj, &inv_sqrt_deg, dim + components)?
    };

    // The trivial zero mode is D^{1/2} 1. On disconnected graphs the null
    // space also contains the component-indicator combinations, which are
    // exactly the directions that separate components; so rather than
    // skipping every near-zero eigenvalue, deflate the trivial mode and
    // keep whatever independent directions remain, in ascending
    // eigenvalue order.
    let mut trivial: Vec<f64> = degrees.iter().map(|&d| d.sqrt()).collect();
    normalize(&mut trivial);

    let mut order: Vec<usize> = (0..eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eigenvalues[a].partial_cmp(&eigenvalues[b]).unwrap());

    let mut selected: Vec<Vec<f64>> = Vec::with_capacity(dim);
    for &col in &order {
        if selected.len() == dim {
            break;
        }
        let mut v = vectors[col].clone();
        for basis in std::iter::once(&trivial).chain(selected.iter()) {
            let c = dot(&v, basis);
            for (vi, bi) in v.iter_mut().zip(basis) {
                *vi -= c * bi;
            }
        }
        if dot(&v, &v).sqrt() < 1e-6 {
            continue;
        }
        normalize(&mut v);
        // Deterministic sign: largest-magnitude entry positive.
        let mut pivot = 0.0f64;
        for &x in &v {
            if x.abs() > pivot.abs() {
                pivot = x;
            }
        }
        if pivot < 0.0 {
            for x in v.iter_mut() {
                *x = -*x;
            }
        }
        selected.push(v);
    }
    if selected.len() < dim {
        return Err(Error::Numeric(format!(
            "only {} independent Laplacian modes available, need {dim}",
            selected.len()
        )));
    }

    let mut coords = vec![0.0; n * dim];
    for (d, v) in selected.iter().enumerate() {
        for i in 0..n {
            coords[i * dim + d] = v[i];
        }
    }
    Ok(coords)
}

fn dense_eigen(
    adj: &[Vec<(usize, f64)>],
    inv_sqrt_deg: &[f64],
) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = adj.len();
    let mut l = DMatrix::<f64>::identity(n, n);
    for (i, row) in adj.iter().enumerate() {
        for &(j, w) in row {
            l[(i, j)] -= w * inv_sqrt_deg[i] * inv_sqrt_deg[j];
        }
    }
    let eigen = l.symmetric_eigen();
    let eigenvalues: Vec<f64> = eigen.eigenvalues.iter().copied().collect();
    let vectors: Vec<Vec<f64>> = (0..n)
        .map(|c| eigen.eigenvectors.column(c).iter().copied().collect())
        .collect();
    (eigenvalues, vectors)
}

/// Lanczos with full reorthogonalization for the low end of the spectrum.
/// The Laplacian is sparse (kNN graph), so matvecs are cheap; the Krylov
/// dimension is capped well below the 5000-matvec budget.
fn lanczos_eigen(
    adj: &[Vec<(usize, f64)>],
    inv_sqrt_deg: &[f64],
    wanted: usize,
) -> Result<(Vec<f64>, Vec<Vec<f64>>), Error> {
    let n = adj.len();
    let m = (8 * wanted + 80).min(n - 1).min(400);
    let mut rng = ChaCha8Rng::seed_from_u64(0x1a_c205);

    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(m);
    let mut alphas = Vec::with_capacity(m);
    let mut betas = Vec::with_capacity(m);

    let mut v: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    normalize(&mut v);
    basis.push(v);

    for step in 0..m {
        let mut w = laplacian_matvec(adj, inv_sqrt_deg, &basis[step]);
        let alpha = dot(&w, &basis[step]);
        alphas.push(alpha);
        for (wi, vi) in w.iter_mut().zip(&basis[step]) {
            *wi -= alpha * vi;
        }
        if step > 0 {
            let beta_prev: f64 = betas[step - 1];
            for (wi, vi) in w.iter_mut().zip(&basis[step - 1]) {
                *wi -= beta_prev * vi;
            }
        }
        // Full reorthogonalization keeps the basis usable at this scale.
        for b in &basis {
            let c = dot(&w, b);
            for (wi, bi) in w.iter_mut().zip(b) {
                *wi -= c * bi;
            }
        }
        let beta = dot(&w, &w).sqrt();
        if beta < 1e-12 || step == m - 1 {
            betas.push(beta);
            break;
        }
        betas.push(beta);
        for wi in w.iter_mut() {
            *wi /= beta;
        }
        basis.push(w);
    }

    let steps = basis.len();
    let mut tri = DMatrix::<f64>::zeros(steps, steps);
    for i in 0..steps {
        tri[(i, i)] = alphas[i];
        if i + 1 < steps {
            tri[(i, i + 1)] = betas[i];
            tri[(i + 1, i)] = betas[i];
        }
    }
    let eigen = tri.symmetric_eigen();

    let mut order: Vec<usize> = (0..steps).collect();
    order.sort_by(|&a, &b| eigen.eigenvalues[a].partial_cmp(&eigen.eigenvalues[b]).unwrap());

    let mut eigenvalues = Vec::new();
    let mut vectors = Vec::new();
    let beta_last = *betas.last().unwrap_or(&0.0);
    for &col in order.iter().take(wanted + 2) {
        // Ritz residual estimate |beta_m * s_m|.
        let resid = (beta_last * eigen.eigenvectors[(steps - 1, col)]).abs();
        if resid > LANCZOS_TOL {
            return Err(Error::Numeric(format!(
                "Lanczos did not converge: Ritz residual {resid:.2e}"
            )));
        }
        let mut ritz = vec![0.0; n];
        for (s, b) in basis.iter().enumerate() {
            let c = eigen.eigenvectors[(s, col)];
            for (ri, bi) in ritz.iter_mut().zip(b) {
                *ri += c * bi;
            }
        }
        eigenvalues.push(eigen.eigenvalues[col]);
        vectors.push(ritz);
    }
    Ok((eigenvalues, vectors))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn normalize(v: &mut [f64]) {
    let n = dot(v, v).sqrt();
    if n > 0.0 {
        for x in v.iter_mut() {
            *x /= n;
        }
    }
}

/// Spectral coordinates rescaled so the largest absolute coordinate is
/// exactly [`SPECTRAL_SCALE`]; no jitter. Errors when the spectrum cannot
/// supply `dim` nonzero modes.
pub fn spectral_layout(graph: &FuzzyGraph, dim: usize) -> Result<Embedding, Error> {
    let n = graph.n_vertices;
    if n == 0 {
        return Err(Error::Config("empty graph".to_string()));
    }
    if n < dim + 1 {
        return Err(Error::Config(format!(
            "graph has {n} vertices, need at least {}",
            dim + 1
        )));
    }
    let mut coords = spectral_coordinates(graph, dim)?;
    let max_abs = coords.iter().fold(0.0f64, |m, &v| m.max(v.abs()));
    if max_abs > 0.0 {
        let scale = SPECTRAL_SCALE / max_abs;
        for v in coords.iter_mut() {
            *v *= scale;
        }
    }
    Ok(Embedding {
        n_points: n,
        dim,
        coords,
    })
}

/// Spectral initialization with seeded Gaussian jitter; falls back to
/// [`random_init`] when the eigensolve fails or the graph is too
/// disconnected.
pub fn spectral_init(graph: &FuzzyGraph, dim: usize, seed: u64) -> Result<Embedding, Error> {
    let n = graph.n_vertices;
    if n == 0 {
        return Err(Error::Config("empty graph".to_string()));
    }
    let mut emb = match spectral_layout(graph, dim) {
        Ok(emb) => emb,
        Err(_) => return Ok(random_init(n, dim, seed, SPECTRAL_SCALE)),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for v in emb.coords.iter_mut() {
        let z: f64 = rng.sample(StandardNormal);
        *v += JITTER_SIGMA * z;
    }
    Ok(emb)
}
