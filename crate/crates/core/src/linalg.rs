//! Small dense-vector helpers.

use rand::Rng;
use rand_distr::StandardNormal;

#[inline]
pub fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[inline]
pub fn norm(a: &[f64]) -> f64 {
    a.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Scales `x` onto the ball of radius `r` about the origin if it lies outside.
#[inline]
pub fn clip_in_place(x: &mut [f64], r: f64) {
    let n = norm(x);
    if n > r {
        let s = r / n;
        x.iter_mut().for_each(|v| *v *= s);
    }
}

/// Uniform draw from the d-ball of radius `r`.
pub fn sample_in_ball<R: Rng + ?Sized>(d: usize, r: f64, rng: &mut R) -> Vec<f64> {
    let dir = unit_vector(d, rng);
    let u: f64 = rng.random();
    let radius = r * u.powf(1.0 / d as f64);
    dir.into_iter().map(|v| v * radius).collect()
}

/// Uniform draw from the unit sphere in R^d.
pub fn unit_vector<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let n = norm(&v);
        if n > 1e-12 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

/// Index of the nearest center; ties go to the lowest index.
#[inline]
pub fn nearest(x: &[f64], centers: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centers.iter().enumerate() {
        let d = sq_dist(x, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

/// Index of the nearest row of the row-major `rows` (width `d`); ties go to
/// the lowest index.
#[inline]
pub fn nearest_row(x: &[f64], rows: &[f64], d: usize) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, r) in rows.chunks_exact(d).enumerate() {
        let dist = sq_dist(x, r);
        if dist < best.1 {
            best = (j, dist);
        }
    }
    best
}

/// Rows stored dimension-major for vectorized nearest-row queries.
///
/// Distances are accumulated in the same coordinate order as [`sq_dist`],
/// so results match [`nearest_row`] exactly.
#[derive(Debug, Clone)]
pub struct ColumnIndex {
    d: usize,
    m: usize,
    columns: Vec<f64>,
}

const QUERY_BLOCK: usize = 256;

impl ColumnIndex {
    pub fn new(rows: &[f64], d: usize) -> Self {
        assert!(d > 0 && rows.len().is_multiple_of(d));
        let m = rows.len() / d;
        let mut columns = vec![0.0; rows.len()];
        for (j, r) in rows.chunks_exact(d).enumerate() {
            for (i, v) in r.iter().enumerate() {
                columns[i * m + j] = *v;
            }
        }
        Self { d, m, columns }
    }

    pub fn len(&self) -> usize {
        self.m
    }

    pub fn is_empty(&self) -> bool {
        self.m == 0
    }

    /// Index of the nearest row; ties go to the lowest index.
    pub fn nearest(&self, x: &[f64]) -> (usize, f64) {
        debug_assert_eq!(x.len(), self.d);
        #[cfg(target_arch = "x86_64")]
        if std::is_x86_feature_detected!("avx2") {
            // SAFETY: the CPU supports every feature enabled on the callee.
            return unsafe { self.nearest_avx2(x) };
        }
        self.nearest_portable(x)
    }

    #[cfg(target_arch = "x86_64")]
    #[target_feature(enable = "avx2")]
    unsafe fn nearest_avx2(&self, x: &[f64]) -> (usize, f64) {
        // Wider lanes only; no fused multiply-add, so rounding is unchanged.
        self.nearest_portable(x)
    }

    #[inline(always)]
    fn nearest_portable(&self, x: &[f64]) -> (usize, f64) {
        let mut best = (0, f64::INFINITY);
        let mut dist = [0.0f64; QUERY_BLOCK];
        let mut start = 0;
        while start < self.m {
            let len = QUERY_BLOCK.min(self.m - start);
            let dist = &mut dist[..len];
            dist.iter_mut().for_each(|v| *v = 0.0);
            for (i, xi) in x.iter().enumerate() {
                let col = &self.columns[i * self.m + start..i * self.m + start + len];
                dist.iter_mut().zip(col).for_each(|(acc, g)| {
                    let t = xi - g;
                    *acc += t * t;
                });
            }
            // Block minimum first; only a strictly better block is scanned
            // for its lowest index.
            let lo = dist.iter().fold(f64::INFINITY, |a, &b| a.min(b));
            if lo < best.1 {
                let j = dist.iter().position(|&v| v == lo).unwrap_or(0);
                best = (start + j, lo);
            }
            start += len;
        }
        best
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    #[test]
    fn column_index_matches_row_scan() {
        let mut rng = stream(3, "idx");
        for (d, m) in [(1, 1), (3, 255), (8, 700), (5, 1025)] {
            // Coarse values force many exact ties.
            let rows: Vec<f64> = (0..d * m).map(|_| rng.random_range(0..4) as f64).collect();
            let index = ColumnIndex::new(&rows, d);
            for _ in 0..50 {
                let x: Vec<f64> = (0..d).map(|_| rng.random_range(0..4) as f64).collect();
                assert_eq!(index.nearest(&x), nearest_row(&x, &rows, d));
            }
        }
    }

    #[test]
    fn clipping_caps_the_norm() {
        let mut x = vec![3.0, 4.0];
        clip_in_place(&mut x, 1.0);
        assert!((norm(&x) - 1.0).abs() < 1e-15);
        let mut y = vec![0.3, 0.4];
        clip_in_place(&mut y, 1.0);
        assert_eq!(y, vec![0.3, 0.4]);
    }
}
