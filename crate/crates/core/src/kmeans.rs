//! Private k-means (noisy Lloyd).
//!
//! Every Lloyd step clips the points to a ball about the origin, then releases
//! per-cluster coordinate sums through the Gaussian mechanism (Δ₂ = clip
//! radius) and per-cluster counts through the Laplace mechanism (Δ₁ = 1). The
//! k-means share of the budget is divided evenly across steps, and within a
//! step between sums and counts at `sum_count_ratio : 1`.
//!
//! Two initializations are available. `RandomBall` draws k centers uniformly
//! from the clip ball. `Splitting` starts from the private mean of all points
//! and repeatedly doubles the center set (each center replaced by two copies
//! nudged apart along a random direction), running a noisy step after every
//! doubling; when k is not a power of two the surplus centers are merged
//! pairwise by Ward's criterion on the released sums and counts. Neither
//! initialization touches the data outside the accounted steps.

use rand::Rng;

use crate::budget::PrivacyBudget;
use crate::dataset::EmbeddingDataset;
use crate::error::{config, contract, Result};
use crate::exec::{Backend, CHUNK_ROWS};
use crate::linalg::{clip_in_place, nearest, norm, sample_in_ball, unit_vector};
use crate::mechanisms::{gaussian_mechanism, laplace_mechanism};

/// The component-count grid searched in practice.
pub const K_GRID: [usize; 5] = [1, 2, 4, 8, 16];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KMeansInit {
    RandomBall,
    Splitting,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansConfig {
    pub k: usize,
    pub clip_radius: f64,
    pub lloyd_iterations: usize,
    pub init: KMeansInit,
    /// Budget ratio between noisy sums and noisy counts within a step.
    pub sum_count_ratio: f64,
}

impl KMeansConfig {
    pub fn new(k: usize, clip_radius: f64) -> Self {
        Self {
            k,
            clip_radius,
            lloyd_iterations: 5,
            init: KMeansInit::Splitting,
            sum_count_ratio: 4.0,
        }
    }

    /// Steps consumed before the center set reaches size k.
    pub fn min_iterations(&self) -> usize {
        match self.init {
            KMeansInit::RandomBall => 1,
            KMeansInit::Splitting => 1 + doublings(self.k),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return config("k must be at least 1");
        }
        if !(self.clip_radius > 0.0 && self.clip_radius.is_finite()) {
            return config(format!("k-means clip radius must be positive, got {}", self.clip_radius));
        }
        if self.lloyd_iterations < self.min_iterations() {
            return config(format!(
                "lloyd_iterations = {} is below the {} steps needed to grow {} centers by splitting",
                self.lloyd_iterations,
                self.min_iterations(),
                self.k
            ));
        }
        if !(self.sum_count_ratio > 0.0 && self.sum_count_ratio.is_finite()) {
            return config("sum_count_ratio must be positive");
        }
        Ok(())
    }
}

fn doublings(k: usize) -> usize {
    k.next_power_of_two().trailing_zeros() as usize
}

/// A `(ζ, η)`-approximate solution has cost at most `ζ·OPT + η`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ApproxGuarantee {
    pub zeta: f64,
    pub eta: f64,
}

impl ApproxGuarantee {
    pub fn new(zeta: f64, eta: f64) -> Result<Self> {
        if !(zeta >= 1.0 && eta >= 0.0) {
            return contract(format!("need zeta >= 1 and eta >= 0, got ({zeta}, {eta})"));
        }
        Ok(Self { zeta, eta })
    }

    pub fn admits(&self, cost: f64, opt: f64) -> bool {
        cost <= self.zeta * opt + self.eta
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusteringResult {
    pub centers: Vec<Vec<f64>>,
    pub noisy_counts: Vec<f64>,
    /// Nearest final center for every input row, lowest index on ties.
    pub assignment: Vec<usize>,
    /// (step, cluster) pairs whose noisy count fell below one and whose
    /// center was redrawn uniformly from the clip ball.
    pub reseeded: Vec<(usize, usize)>,
}

impl ClusteringResult {
    pub fn k(&self) -> usize {
        self.centers.len()
    }
}

/// Nearest-center assignment of every row and the exact cluster sizes.
pub fn assign_and_count(ds: &EmbeddingDataset, centers: &[Vec<f64>]) -> (Vec<usize>, Vec<usize>) {
    assign_and_count_with(Backend::default(), ds, centers)
}

pub fn assign_and_count_with(
    backend: Backend,
    ds: &EmbeddingDataset,
    centers: &[Vec<f64>],
) -> (Vec<usize>, Vec<usize>) {
    assert!(!centers.is_empty(), "at least one center required");
    let mut assignment = vec![0usize; ds.len()];
    backend.fill_chunks(&mut assignment, CHUNK_ROWS, |start, out| {
        for (i, slot) in out.iter_mut().enumerate() {
            *slot = nearest(ds.row(start + i), centers).0;
        }
    });
    let mut counts = vec![0usize; centers.len()];
    for &a in &assignment {
        counts[a] += 1;
    }
    debug_assert_eq!(counts.iter().sum::<usize>(), ds.len());
    (assignment, counts)
}

/// Sum of squared distances to the nearest center.
pub fn kmeans_cost(ds: &EmbeddingDataset, centers: &[Vec<f64>]) -> f64 {
    Backend::default()
        .map_chunks(ds.as_slice(), CHUNK_ROWS * ds.dim(), |_, chunk| {
            chunk
                .chunks_exact(ds.dim())
                .map(|x| nearest(x, centers).1)
                .sum::<f64>()
        })
        .into_iter()
        .sum()
}

/// Per-cluster coordinate sums (row-major k×d) and counts.
pub fn cluster_sums_with(
    backend: Backend,
    points: &[f64],
    d: usize,
    centers: &[Vec<f64>],
) -> (Vec<f64>, Vec<f64>) {
    let k = centers.len();
    let partials = backend.map_chunks(points, CHUNK_ROWS * d, |_, chunk| {
        let mut sums = vec![0.0; k * d];
        let mut counts = vec![0.0; k];
        for x in chunk.chunks_exact(d) {
            let j = nearest(x, centers).0;
            counts[j] += 1.0;
            for (s, v) in sums[j * d..(j + 1) * d].iter_mut().zip(x) {
                *s += v;
            }
        }
        (sums, counts)
    });
    let mut sums = vec![0.0; k * d];
    let mut counts = vec![0.0; k];
    for (s, c) in partials {
        sums.iter_mut().zip(&s).for_each(|(a, b)| *a += b);
        counts.iter_mut().zip(&c).for_each(|(a, b)| *a += b);
    }
    (sums, counts)
}

struct Step {
    sums: Vec<f64>,
    counts: Vec<f64>,
}

struct NoisyLloyd<'a, R: Rng + ?Sized> {
    points: Vec<f64>,
    d: usize,
    radius: f64,
    sum_budget: PrivacyBudget,
    count_budget: PrivacyBudget,
    backend: Backend,
    rng: &'a mut R,
    steps_taken: usize,
    reseeded: Vec<(usize, usize)>,
}

impl<R: Rng + ?Sized> NoisyLloyd<'_, R> {
    /// One privatized step: returns the noisy sums and counts for `centers`.
    fn release(&mut self, centers: &[Vec<f64>]) -> Result<Step> {
        let (sums, counts) = cluster_sums_with(self.backend, &self.points, self.d, centers);
        let sums = gaussian_mechanism(&sums, self.radius, &self.sum_budget, self.rng)?;
        let counts = laplace_mechanism(&counts, 1.0, &self.count_budget, self.rng)?;
        self.steps_taken += 1;
        Ok(Step { sums, counts })
    }

    /// Turns a released step into centers, re-drawing empty clusters.
    fn centers_from(&mut self, step: &Step) -> Vec<Vec<f64>> {
        let d = self.d;
        (0..step.counts.len())
            .map(|j| {
                if step.counts[j] < 1.0 {
                    self.reseeded.push((self.steps_taken - 1, j));
                    return sample_in_ball(d, self.radius, self.rng);
                }
                let mut c: Vec<f64> = step.sums[j * d..(j + 1) * d]
                    .iter()
                    .map(|s| s / step.counts[j])
                    .collect();
                clip_in_place(&mut c, self.radius);
                c
            })
            .collect()
    }

    fn step(&mut self, centers: &[Vec<f64>]) -> Result<(Vec<Vec<f64>>, Step)> {
        let released = self.release(centers)?;
        let next = self.centers_from(&released);
        Ok((next, released))
    }
}

/// Replaces each center by two copies nudged apart along a random direction.
fn split_all<R: Rng + ?Sized>(centers: &[Vec<f64>], radius: f64, rng: &mut R) -> Vec<Vec<f64>> {
    let offset = 1e-3 * radius;
    let mut out = Vec::with_capacity(2 * centers.len());
    for c in centers {
        let u = unit_vector(c.len(), rng);
        for sign in [1.0, -1.0] {
            let mut v: Vec<f64> = c.iter().zip(&u).map(|(x, e)| x + sign * offset * e).collect();
            clip_in_place(&mut v, radius);
            out.push(v);
        }
    }
    out
}

/// Greedily merges clusters by Ward's criterion until `k` remain. Inputs are
/// released values, so this is post-processing.
fn merge_to(centers: &mut Vec<Vec<f64>>, counts: &mut Vec<f64>, k: usize) {
    while centers.len() > k {
        let mut best = (0, 1, f64::INFINITY);
        for a in 0..centers.len() {
            for b in a + 1..centers.len() {
                let (na, nb) = (counts[a].max(0.0), counts[b].max(0.0));
                let w = if na + nb > 0.0 { na * nb / (na + nb) } else { 0.0 };
                let cost = w * crate::linalg::sq_dist(&centers[a], &centers[b]);
                if cost < best.2 {
                    best = (a, b, cost);
                }
            }
        }
        let (a, b, _) = best;
        let (na, nb) = (counts[a].max(0.0), counts[b].max(0.0));
        let merged: Vec<f64> = if na + nb > 0.0 {
            centers[a]
                .iter()
                .zip(&centers[b])
                .map(|(x, y)| (na * x + nb * y) / (na + nb))
                .collect()
        } else {
            centers[a].clone()
        };
        centers[a] = merged;
        counts[a] += counts[b];
        centers.remove(b);
        counts.remove(b);
    }
}

/// Private k-means over `ds` within `budget`.
pub fn dp_kmeans<R: Rng + ?Sized>(
    ds: &EmbeddingDataset,
    cfg: &KMeansConfig,
    budget: &PrivacyBudget,
    rng: &mut R,
) -> Result<ClusteringResult> {
    dp_kmeans_with(Backend::default(), ds, cfg, budget, rng)
}

pub fn dp_kmeans_with<R: Rng + ?Sized>(
    backend: Backend,
    ds: &EmbeddingDataset,
    cfg: &KMeansConfig,
    budget: &PrivacyBudget,
    rng: &mut R,
) -> Result<ClusteringResult> {
    cfg.validate()?;
    if cfg.k > ds.len() {
        return contract(format!("k = {} exceeds the {} available points", cfg.k, ds.len()));
    }
    let d = ds.dim();
    let mut points = ds.as_slice().to_vec();
    for x in points.chunks_exact_mut(d) {
        clip_in_place(x, cfg.clip_radius);
    }
    let per_step = budget.fraction(1.0 / cfg.lloyd_iterations as f64);
    let sum_share = cfg.sum_count_ratio / (cfg.sum_count_ratio + 1.0);
    let mut lloyd = NoisyLloyd {
        points,
        d,
        radius: cfg.clip_radius,
        sum_budget: per_step.fraction(sum_share),
        count_budget: per_step.fraction(1.0 - sum_share),
        backend,
        rng,
        steps_taken: 0,
        reseeded: Vec::new(),
    };

    let (mut centers, mut counts) = match cfg.init {
        KMeansInit::RandomBall => {
            let init: Vec<Vec<f64>> = (0..cfg.k)
                .map(|_| sample_in_ball(d, cfg.clip_radius, lloyd.rng))
                .collect();
            let (c, s) = lloyd.step(&init)?;
            (c, s.counts)
        }
        KMeansInit::Splitting => {
            let (mut c, mut s) = lloyd.step(&[vec![0.0; d]])?;
            for _ in 0..doublings(cfg.k) {
                let split = split_all(&c, cfg.clip_radius, lloyd.rng);
                (c, s) = lloyd.step(&split)?;
            }
            let mut counts = s.counts;
            if c.len() > cfg.k {
                merge_to(&mut c, &mut counts, cfg.k);
            }
            (c, counts)
        }
    };
    while lloyd.steps_taken < cfg.lloyd_iterations {
        let (c, s) = lloyd.step(&centers)?;
        centers = c;
        counts = s.counts;
    }

    let reseeded = std::mem::take(&mut lloyd.reseeded);
    let (assignment, _) = assign_and_count_with(backend, ds, &centers);
    debug_assert!(centers.iter().all(|c| norm(c) <= cfg.clip_radius * (1.0 + 1e-12)));
    Ok(ClusteringResult {
        centers,
        noisy_counts: counts,
        assignment,
        reseeded,
    })
}
