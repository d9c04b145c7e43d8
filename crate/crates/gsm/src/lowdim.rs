//! The low-dimensional similarity kernel, its gradient, the per-edge SGD
//! forces and the full-batch loss used as a test oracle.

use crate::affinity::FuzzyGraph;
use crate::error::Error;
use crate::init::Embedding;

/// Distance clamp for force/gradient evaluation: with a = 1 the kernel
/// gradient carries a factor r^(a-2) that is singular at the origin.
pub const EPS_DIST: f64 = 1e-3;

/// Floor on 1 - Q in the repulsive denominator, bounding the update when
/// a negative sample lands almost on top of the point.
pub const REPULSION_FLOOR: f64 = 1e-3;

/// Low-dimensional kernel parameters. `a` is the exponent (useful range
/// [1, 1.5]), `b` the tail parameter: smaller b, heavier tail.
#[derive(Debug, Clone, Copy)]
pub struct KernelParams {
    pub a: f64,
    pub b: f64,
}

impl KernelParams {
    pub fn new(a: f64, b: f64) -> Result<Self, Error> {
        if !(a > 0.0) || !a.is_finite() {
            return Err(Error::Config(format!("kernel exponent a must be positive, got {a}")));
        }
        if !(b > 0.0) || !b.is_finite() {
            return Err(Error::Config(format!("tail parameter b must be positive, got {b}")));
        }
        Ok(KernelParams { a, b })
    }

    /// The recommended range for `a`; values outside it are legal but the
    /// CLI warns about them.
    pub fn a_in_recommended_range(&self) -> bool {
        (1.0..=1.5).contains(&self.a)
    }

    /// 2^(1/b) - 1, the coefficient that pins Q(1) = 0.5.
    fn coeff(&self) -> f64 {
        (1.0 / self.b).exp2() - 1.0
    }
}

/// Similarity at embedding distance `dist`: [1 + (2^(1/b)-1) dist^a]^(-b).
/// Equals 1 at dist = 0 and exactly 0.5 at dist = 1 for every (a, b).
pub fn q_similarity(dist: f64, p: &KernelParams) -> f64 {
    (1.0 + p.coeff() * dist.powf(p.a)).powf(-p.b)
}

/// The UMAP closed-form kernel 1 / (1 + a* dist^(2 b*)), kept for the
/// equivalence check against `q_similarity` at b = 1.
pub fn umap_kernel(dist: f64, a_star: f64, b_star: f64) -> f64 {
    1.0 / (1.0 + a_star * dist.powf(2.0 * b_star))
}

/// Gradient of Q with respect to y_i at separation delta = y_i - y_j.
/// Requires ||delta|| > 0; force entry points apply the epsilon clamp.
pub fn q_gradient(delta: &[f64], p: &KernelParams) -> Vec<f64> {
    let r = norm(delta);
    let coeff = q_gradient_coeff(r, p);
    delta.iter().map(|&d| coeff * d).collect()
}

/// Scalar multiplier on delta in the Q gradient:
/// -a b c (1 + c r^a)^(-b-1) r^(a-2), with c = 2^(1/b) - 1.
fn q_gradient_coeff(r: f64, p: &KernelParams) -> f64 {
    let c = p.coeff();
    -p.a * p.b * c * (1.0 + c * r.powf(p.a)).powf(-p.b - 1.0) * r.powf(p.a - 2.0)
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Per-unit-delta multiplier of the attractive force (d log Q / d y_i),
/// evaluated at the clamped distance. Always negative: the update moves
/// y_i toward the neighbor.
pub fn attractive_coeff(r: f64, p: &KernelParams) -> f64 {
    let r = r.max(EPS_DIST);
    let c = p.coeff();
    -p.a * p.b * c * r.powf(p.a - 2.0) / (1.0 + c * r.powf(p.a))
}

/// Per-unit-delta multiplier of the repulsive force
/// (-d log(1-Q) / d y_i), with the 1 - Q denominator floored. Always
/// positive: the update moves y_i away from the negative sample.
pub fn repulsive_coeff(r: f64, p: &KernelParams) -> f64 {
    let r = r.max(EPS_DIST);
    let c = p.coeff();
    let base = 1.0 + c * r.powf(p.a);
    let q = base.powf(-p.b);
    p.a * p.b * c * base.powf(-p.b - 1.0) * r.powf(p.a - 2.0) / (1.0 - q).max(REPULSION_FLOOR)
}

/// Attractive force vector (dQ/dy_i)/Q at separation delta; zero when the
/// points coincide exactly.
pub fn attractive_force(delta: &[f64], p: &KernelParams) -> Vec<f64> {
    let coeff = attractive_coeff(norm(delta), p);
    delta.iter().map(|&d| coeff * d).collect()
}

/// Repulsive force vector -(dQ/dy_i)/(1-Q) at separation delta; zero when
/// the points coincide exactly (the optimizer jitters the direction in
/// that case).
pub fn repulsive_force(delta: &[f64], p: &KernelParams) -> Vec<f64> {
    let coeff = repulsive_coeff(norm(delta), p);
    delta.iter().map(|&d| coeff * d).collect()
}

fn pair_q(emb: &Embedding, i: usize, j: usize, p: &KernelParams) -> (f64, f64) {
    let delta: Vec<f64> = emb
        .point(i)
        .iter()
        .zip(emb.point(j))
        .map(|(a, b)| a - b)
        .collect();
    let r = norm(&delta).max(EPS_DIST);
    (r, q_similarity(r, p))
}

/// Full-batch cross-entropy loss over all pairs: O(N^2), test oracle only.
pub fn full_loss(graph: &FuzzyGraph, emb: &Embedding, p: &KernelParams) -> f64 {
    let n = emb.n_points;
    let mut edge_weight = std::collections::HashMap::new();
    for e in &graph.edges {
        edge_weight.insert((e.i, e.j), e.weight);
    }
    let mut loss = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            let (_, q) = pair_q(emb, i, j, p);
            match edge_weight.get(&(i, j)) {
                Some(&w) => loss -= w * q.max(1e-300).ln(),
                None => loss -= (1.0 - q).max(1e-15).ln(),
            }
        }
    }
    loss
}

/// Analytic gradient of `full_loss` with respect to every coordinate;
/// exact for configurations away from the distance clamp.
pub fn full_loss_grad(graph: &FuzzyGraph, emb: &Embedding, p: &KernelParams) -> Vec<f64> {
    let n = emb.n_points;
    let dim = emb.dim;
    let mut edge_weight = std::collections::HashMap::new();
    for e in &graph.edges {
        edge_weight.insert((e.i, e.j), e.weight);
    }
    let mut grad = vec![0.0; n * dim];
    for i in 0..n {
        for j in (i + 1)..n {
            let delta: Vec<f64> = emb
                .point(i)
                .iter()
                .zip(emb.point(j))
                .map(|(a, b)| a - b)
                .collect();
            let r = norm(&delta).max(EPS_DIST);
            // d/dy_i of the pair term, as a multiple of delta.
            let coeff = match edge_weight.get(&(i, j)) {
                // -w log Q: gradient -w (dQ/dy_i)/Q
                Some(&w) => -w * attractive_coeff_raw(r, p),
                // -log(1-Q): gradient +(dQ/dy_i)/(1-Q)
                None => {
                    let c = p.coeff();
                    let base = 1.0 + c * r.powf(p.a);
                    let q = base.powf(-p.b);
                    -p.a * p.b * c * base.powf(-p.b - 1.0) * r.powf(p.a - 2.0)
                        / (1.0 - q).max(1e-15)
                }
            };
            for d in 0..dim {
                grad[i * dim + d] += coeff * delta[d];
                grad[j * dim + d] -= coeff * delta[d];
            }
        }
    }
    grad
}

fn attractive_coeff_raw(r: f64, p: &KernelParams) -> f64 {
    let c = p.coeff();
    -p.a * p.b * c * r.powf(p.a - 2.0) / (1.0 + c * r.powf(p.a))
}

/// Sample (dist, Q) pairs on a regular grid, for curve plots and CSV dumps.
pub fn kernel_curve(p: &KernelParams, max_dist: f64, step: f64) -> Vec<(f64, f64)> {
    let n = (max_dist / step).round() as usize;
    (0..=n)
        .map(|i| {
            let d = i as f64 * step;
            (d, q_similarity(d, p))
        })
        .collect()
}
