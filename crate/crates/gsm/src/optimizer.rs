//! Negative-sampling stochastic gradient descent on the fuzzy graph.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::affinity::FuzzyGraph;
use crate::error::Error;
use crate::init::Embedding;
use crate::lowdim::{attractive_coeff, repulsive_coeff, KernelParams, EPS_DIST};

#[derive(Debug, Clone)]
pub struct OptimizerConfig {
    pub n_epochs: usize,
    /// Negative samples drawn per processed edge.
    pub neg_samples: usize,
    pub lr_initial: f64,
    /// Per-coordinate force clip; the update is bounded by clip * lr.
    pub clip: f64,
    pub seed: u64,
    /// 1 = sequential, seeded, bit-reproducible. >1 = lock-free
    /// asynchronous shards; results vary run to run.
    pub threads: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            n_epochs: 500,
            neg_samples: 5,
            lr_initial: 1.0,
            clip: 4.0,
            seed: 0,
            threads: 1,
        }
    }
}

impl OptimizerConfig {
    fn validate(&self) -> Result<(), Error> {
        if self.n_epochs == 0 {
            return Err(Error::Config("n_epochs must be at least 1".to_string()));
        }
        if !(self.lr_initial > 0.0) {
            return Err(Error::Config(format!(
                "lr_initial must be positive, got {}",
                self.lr_initial
            )));
        }
        if !(self.clip > 0.0) {
            return Err(Error::Config(format!("clip must be positive, got {}", self.clip)));
        }
        if self.threads == 0 {
            return Err(Error::Config("threads must be at least 1".to_string()));
        }
        Ok(())
    }
}

/// Weight-proportional edge processing schedule: the max-weight edge is
/// touched every epoch, an edge of half that weight every other epoch, so
/// expected processing counts realize the weighted loss.
#[derive(Debug, Clone)]
pub struct EdgeSchedule {
    pub epochs_per_sample: Vec<f64>,
}

impl EdgeSchedule {
    /// Number of times edge `e` is processed over `n_epochs` epochs.
    pub fn count_over(&self, e: usize, n_epochs: usize) -> usize {
        (n_epochs as f64 / self.epochs_per_sample[e]).floor() as usize
    }
}

pub fn make_schedule(graph: &FuzzyGraph, _n_epochs: usize) -> Result<EdgeSchedule, Error> {
    let max_weight = graph.max_weight();
    let mut epochs_per_sample = Vec::with_capacity(graph.edges.len());
    for e in &graph.edges {
        if !(e.weight > 0.0) {
            return Err(Error::Config(format!(
                "edge ({}, {}) has non-positive weight {}",
                e.i, e.j, e.weight
            )));
        }
        epochs_per_sample.push(max_weight / e.weight);
    }
    Ok(EdgeSchedule { epochs_per_sample })
}

/// Per-epoch progress report for CLI feedback.
#[derive(Debug, Clone, Copy)]
pub struct Progress {
    pub epoch: usize,
    pub edges_processed: usize,
    pub loss: Option<f64>,
}

pub fn optimize(
    emb: Embedding,
    graph: &FuzzyGraph,
    kernel: &KernelParams,
    cfg: &OptimizerConfig,
) -> Result<Embedding, Error> {
    optimize_with_progress(emb, graph, kernel, cfg, &mut |_| {})
}

pub fn optimize_with_progress(
    mut emb: Embedding,
    graph: &FuzzyGraph,
    kernel: &KernelParams,
    cfg: &OptimizerConfig,
    progress: &mut dyn FnMut(Progress),
) -> Result<Embedding, Error> {
    cfg.validate()?;
    if emb.n_points != graph.n_vertices {
        return Err(Error::LengthMismatch {
            what: "embedding",
            found: emb.n_points,
            expected: graph.n_vertices,
        });
    }

    let schedule = make_schedule(graph, cfg.n_epochs)?;
    let mut next_sample = schedule.epochs_per_sample.clone();

    if cfg.threads <= 1 {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        for epoch in 1..=cfg.n_epochs {
            let lr = cfg.lr_initial * (1.0 - (epoch - 1) as f64 / cfg.n_epochs as f64);
            let mut processed = 0;
            for (e, edge) in graph.edges.iter().enumerate() {
                if next_sample[e] > epoch as f64 {
                    continue;
                }
                next_sample[e] += schedule.epochs_per_sample[e];
                process_edge(&mut emb, edge.i, edge.j, kernel, cfg, lr, &mut rng);
                processed += 1;
            }
            check_finite(&emb, epoch)?;
            progress(Progress {
                epoch,
                edges_processed: processed,
                loss: None,
            });
        }
    } else {
        optimize_parallel(&mut emb, graph, kernel, cfg, &schedule, &mut next_sample, progress)?;
    }
    Ok(emb)
}

fn process_edge(
    emb: &mut Embedding,
    i: usize,
    j: usize,
    kernel: &KernelParams,
    cfg: &OptimizerConfig,
    lr: f64,
    rng: &mut ChaCha8Rng,
) {
    let (n, dim) = (emb.n_points, emb.dim);
    process_edge_slice(&mut emb.coords, n, dim, i, j, kernel, cfg, lr, rng);
}

fn check_finite(emb: &Embedding, epoch: usize) -> Result<(), Error> {
    for (idx, v) in emb.coords.iter().enumerate() {
        if !v.is_finite() {
            return Err(Error::Numeric(format!(
                "non-finite coordinate for point {} at epoch {epoch}",
                idx / emb.dim
            )));
        }
    }
    Ok(())
}

/// Lock-free asynchronous shard updates. Shards own disjoint edge ranges
/// and their own RNG streams; concurrent writes to shared embedding rows
/// are tolerated and make this mode non-reproducible.
fn optimize_parallel(
    emb: &mut Embedding,
    graph: &FuzzyGraph,
    kernel: &KernelParams,
    cfg: &OptimizerConfig,
    schedule: &EdgeSchedule,
    next_sample: &mut [f64],
    progress: &mut dyn FnMut(Progress),
) -> Result<(), Error> {
    use rayon::prelude::*;

    struct SharedCoords(*mut f64);
    unsafe impl Send for SharedCoords {}
    unsafe impl Sync for SharedCoords {}

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads)
        .build()
        .map_err(|e| Error::Config(format!("cannot build thread pool: {e}")))?;

    let n_edges = graph.edges.len();
    let shard_len = n_edges.div_ceil(cfg.threads);
    let dim = emb.dim;
    let n = emb.n_points;

    for epoch in 1..=cfg.n_epochs {
        let lr = cfg.lr_initial * (1.0 - (epoch - 1) as f64 / cfg.n_epochs as f64);
        let shared = SharedCoords(emb.coords.as_mut_ptr());
        let shared_ref = &shared;

        let processed: usize = pool.install(|| {
            next_sample
                .par_chunks_mut(shard_len.max(1))
                .enumerate()
                .map(|(shard, next)| {
                    let base = shard * shard_len;
                    let mut rng = ChaCha8Rng::seed_from_u64(
                        cfg.seed ^ (shard as u64) << 32 ^ epoch as u64,
                    );
                    let mut count = 0;
                    for (off, next_e) in next.iter_mut().enumerate() {
                        if *next_e > epoch as f64 {
                            continue;
                        }
                        let e = base + off;
                        *next_e += schedule.epochs_per_sample[e];
                        let edge = &graph.edges[e];
                        let coords = unsafe {
                            std::slice::from_raw_parts_mut(shared_ref.0, n * dim)
                        };
                        process_edge_slice(coords, n, dim, edge.i, edge.j, kernel, cfg, lr, &mut rng);
                        count += 1;
                    }
                    count
                })
                .sum()
        });

        check_finite(emb, epoch)?;
        progress(Progress {
            epoch,
            edges_processed: processed,
            loss: None,
        });
    }
    Ok(())
}

fn process_edge_slice(
    coords: &mut [f64],
    n: usize,
    dim: usize,
    i: usize,
    j: usize,
    kernel: &KernelParams,
    cfg: &OptimizerConfig,
    lr: f64,
    rng: &mut ChaCha8Rng,
) {
    let mut delta = vec![0.0; dim];
    let mut r2 = 0.0;
    for d in 0..dim {
        delta[d] = coords[i * dim + d] - coords[j * dim + d];
        r2 += delta[d] * delta[d];
    }
    let coeff = attractive_coeff(r2.sqrt(), kernel);
    for d in 0..dim {
        let g = (coeff * delta[d]).clamp(-cfg.clip, cfg.clip);
        coords[i * dim + d] += lr * g;
        coords[j * dim + d] -= lr * g;
    }
    for _ in 0..cfg.neg_samples {
        let t = loop {
            let t = rng.gen_range(0..n);
            if t != i {
                break t;
            }
        };
        let mut r2 = 0.0;
        for d in 0..dim {
            delta[d] = coords[i * dim + d] - coords[t * dim + d];
            r2 += delta[d] * delta[d];
        }
        if r2 == 0.0 {
            let mut norm = 0.0;
            for v in delta.iter_mut() {
                *v = rng.sample(StandardNormal);
                norm += *v * *v;
            }
            let norm = norm.sqrt().max(1e-30);
            for v in delta.iter_mut() {
                *v *= EPS_DIST / norm;
            }
            r2 = EPS_DIST * EPS_DIST;
        }
        let coeff = repulsive_coeff(r2.sqrt(), kernel);
        for d in 0..dim {
            let g = (coeff * delta[d]).clamp(-cfg.clip, cfg.clip);
            coords[i * dim + d] += lr * g;
        }
    }
}
