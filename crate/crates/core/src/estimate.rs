//! Private per-cluster Gaussian estimation by clipping and noising.
//!
//! Deviations from a reference point are clipped to an ℓ₂ ball, summed, and
//! released through the Gaussian mechanism. The cluster size is released
//! once, by the mean estimator, and reused as the denominator for the
//! covariance.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;

use crate::budget::PrivacyBudget;
use crate::error::{config, contract, Result};
use crate::gmm::{Covariance, CovarianceModel};
use crate::linalg::clip_in_place;
use crate::mechanisms::{gaussian_mechanism, laplace_mechanism};

/// Clip radii searched in practice.
pub const CLIP_GRID: [f64; 5] = [2.0, 4.0, 6.0, 8.0, 10.0];

#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorConfig {
    /// Radius for deviations in the covariance estimate.
    pub clip_radius: f64,
    /// Radius for deviations in the mean estimate; `clip_radius` when unset.
    pub mean_clip_radius: Option<f64>,
    pub covariance_model: CovarianceModel,
    pub variance_floor: f64,
    /// Budget ratio between the noisy sum and the noisy count in the mean estimate.
    pub sum_count_ratio: f64,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            clip_radius: 6.0,
            mean_clip_radius: None,
            covariance_model: CovarianceModel::Diagonal,
            variance_floor: 1e-6,
            sum_count_ratio: 4.0,
        }
    }
}

impl EstimatorConfig {
    pub fn mean_radius(&self) -> f64 {
        self.mean_clip_radius.unwrap_or(self.clip_radius)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |x: f64| x > 0.0 && x.is_finite();
        if !positive(self.clip_radius) || !positive(self.mean_radius()) {
            return config("estimator clip radii must be positive");
        }
        if !positive(self.variance_floor) {
            return config("variance_floor must be positive");
        }
        if !positive(self.sum_count_ratio) {
            return config("sum_count_ratio must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MeanEstimate {
    pub mean: Vec<f64>,
    pub noisy_count: f64,
    /// The released count was below one; `mean` is the reference center.
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceEstimate {
    pub covariance: Covariance,
    /// The shared count was below one; `covariance` is `variance_floor·I`.
    pub degenerate: bool,
}

/// A fitted component: mean, covariance, and released count.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianEstimate {
    pub mean: Vec<f64>,
    pub covariance: Covariance,
    pub noisy_count: f64,
    pub degenerate: bool,
}

fn check_rows(cluster: &[&[f64]], d: usize) -> Result<()> {
    if d == 0 {
        return contract("reference point must have dimension at least 1");
    }
    if cluster.iter().any(|r| r.len() != d) {
        return contract(format!("cluster rows must have dimension {d}"));
    }
    Ok(())
}

/// Private mean of `cluster`, with deviations clipped about `center`.
pub fn dp_mean<R: Rng + ?Sized>(
    cluster: &[&[f64]],
    center: &[f64],
    cfg: &EstimatorConfig,
    budget: &PrivacyBudget,
    rng: &mut R,
) -> Result<MeanEstimate> {
    cfg.validate()?;
    let d = center.len();
    check_rows(cluster, d)?;
    let radius = cfg.mean_radius();
    let mut sum = vec![0.0; d];
    let mut dev = vec![0.0; d];
    for x in cluster {
        dev.iter_mut().zip(x.iter().zip(center)).for_each(|(v, (a, c))| *v = a - c);
        clip_in_place(&mut dev, radius);
        sum.iter_mut().zip(&dev).for_each(|(s, v)| *s += v);
    }
    let sum_share = cfg.sum_count_ratio / (cfg.sum_count_ratio + 1.0);
    let noisy_sum = gaussian_mechanism(&sum, radius, &budget.fraction(sum_share), rng)?;
    let noisy_count = laplace_mechanism(&[cluster.len() as f64], 1.0, &budget.fraction(1.0 - sum_share), rng)?[0];
    if noisy_count < 1.0 {
        return Ok(MeanEstimate {
            mean: center.to_vec(),
            noisy_count,
            degenerate: true,
        });
    }
    let mean = center.iter().zip(&noisy_sum).map(|(c, s)| c + s / noisy_count).collect();
    Ok(MeanEstimate {
        mean,
        noisy_count,
        degenerate: false,
    })
}

/// Private covariance of `cluster` about `mean`, normalized by the count
/// already released by [`dp_mean`].
pub fn dp_covariance<R: Rng + ?Sized>(
    cluster: &[&[f64]],
    mean: &[f64],
    noisy_count: f64,
    cfg: &EstimatorConfig,
    budget: &PrivacyBudget,
    rng: &mut R,
) -> Result<CovarianceEstimate> {
    cfg.validate()?;
    let d = mean.len();
    check_rows(cluster, d)?;
    let radius = cfg.clip_radius;
    let floor = cfg.variance_floor;
    let sensitivity = radius * radius;
    let degenerate = noisy_count < 1.0;
    let denom = noisy_count.max(1.0);
    let mut dev = vec![0.0; d];
    let mut deviations = cluster.iter().map(|x| {
        dev.iter_mut().zip(x.iter().zip(mean)).for_each(|(v, (a, m))| *v = a - m);
        clip_in_place(&mut dev, radius);
        dev.clone()
    });

    let covariance = match cfg.covariance_model {
        CovarianceModel::Diagonal => {
            let mut sq = vec![0.0; d];
            for v in &mut deviations {
                sq.iter_mut().zip(&v).for_each(|(s, x)| *s += x * x);
            }
            let noisy = gaussian_mechanism(&sq, sensitivity, budget, rng)?;
            if degenerate {
                Covariance::isotropic(d, floor)
            } else {
                Covariance::Diagonal(noisy.iter().map(|s| (s / denom).max(floor)).collect())
            }
        }
        CovarianceModel::Full => {
            // Upper triangle, row-major; its ℓ₂ norm is at most ‖v vᵀ‖_F ≤ r².
            let tri = d * (d + 1) / 2;
            let mut upper = vec![0.0; tri];
            for v in &mut deviations {
                let mut idx = 0;
                for i in 0..d {
                    for j in i..d {
                        upper[idx] += v[i] * v[j];
                        idx += 1;
                    }
                }
            }
            let noisy = gaussian_mechanism(&upper, sensitivity, budget, rng)?;
            if degenerate {
                Covariance::isotropic(d, floor)
            } else {
                let mut m = DMatrix::zeros(d, d);
                let mut idx = 0;
                for i in 0..d {
                    for j in i..d {
                        m[(i, j)] = noisy[idx] / denom;
                        m[(j, i)] = m[(i, j)];
                        idx += 1;
                    }
                }
                Covariance::Full(project_to_floor(m, floor))
            }
        }
    };
    Ok(CovarianceEstimate { covariance, degenerate })
}

/// Nearest symmetric matrix with all eigenvalues at least `floor`.
pub fn project_to_floor(m: DMatrix<f64>, floor: f64) -> DMatrix<f64> {
    let sym = (&m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let clamped = eig.eigenvalues.map(|l| l.max(floor));
    let v = &eig.eigenvectors;
    let out = v * DMatrix::from_diagonal(&clamped) * v.transpose();
    (&out + out.transpose()) * 0.5
}

/// Mixture weights from released counts: negatives clamp to zero, all-zero
/// falls back to uniform.
pub fn dp_weights(noisy_counts: &[f64]) -> Result<Vec<f64>> {
    if noisy_counts.is_empty() {
        return contract("need at least one count");
    }
    let clamped: Vec<f64> = noisy_counts.iter().map(|c| c.max(0.0)).collect();
    let total: f64 = clamped.iter().sum();
    if !(total > 0.0) || !total.is_finite() {
        let k = noisy_counts.len() as f64;
        return Ok(vec![1.0 / k; noisy_counts.len()]);
    }
    Ok(clamped.into_iter().map(|c| c / total).collect())
}

/// Mean then covariance for one cluster, each on its own budget.
pub fn estimate_gaussian<R: Rng + ?Sized>(
    cluster: &[&[f64]],
    center: &[f64],
    cfg: &EstimatorConfig,
    mean_budget: &PrivacyBudget,
    cov_budget: &PrivacyBudget,
    rng: &mut R,
) -> Result<GaussianEstimate> {
    let m = dp_mean(cluster, center, cfg, mean_budget, rng)?;
    let c = dp_covariance(cluster, &m.mean, m.noisy_count, cfg, cov_budget, rng)?;
    Ok(GaussianEstimate {
        mean: m.mean,
        covariance: c.covariance,
        noisy_count: m.noisy_count,
        degenerate: m.degenerate || c.degenerate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gmm::{sample_gmm, GmmModel};
    use crate::rng::stream;
    use proptest::prelude::*;

    fn rows(ds: &crate::EmbeddingDataset) -> Vec<&[f64]> {
        ds.rows().collect()
    }

    fn median(mut v: Vec<f64>) -> f64 {
        v.sort_by(f64::total_cmp);
        let n = v.len();
        if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) }
    }

    fn cfg(clip: f64, model: CovarianceModel) -> EstimatorConfig {
        EstimatorConfig {
            clip_radius: clip,
            covariance_model: model,
            ..EstimatorConfig::default()
        }
    }

    const NP: fn() -> PrivacyBudget = PrivacyBudget::non_private;

    #[test]
    fn symmetric_deviations_cancel() {
        let a = [1.0, 1.0];
        let b = [3.0, 3.0];
        let est = dp_mean(&[&a, &b], &[2.0, 2.0], &cfg(10.0, CovarianceModel::Diagonal), &NP(), &mut stream(0, "m")).unwrap();
        assert_eq!(est.mean, vec![2.0, 2.0]);
        assert_eq!(est.noisy_count, 2.0);
        assert!(!est.degenerate);
    }

    #[test]
    fn non_private_mean_is_sample_mean() {
        let pts: Vec<Vec<f64>> = (0..50).map(|i| vec![(i as f64).sin(), (i as f64 * 0.3).cos(), i as f64 * 0.01]).collect();
        let refs: Vec<&[f64]> = pts.iter().map(Vec::as_slice).collect();
        let est = dp_mean(&refs, &[0.1, -0.2, 0.3], &cfg(100.0, CovarianceModel::Diagonal), &NP(), &mut stream(0, "m")).unwrap();
        for j in 0..3 {
            let m: f64 = pts.iter().map(|p| p[j]).sum::<f64>() / 50.0;
            assert!((est.mean[j] - m).abs() < 1e-12);
        }
    }

    #[test]
    fn empty_cluster_is_degenerate() {
        let c = cfg(1.0, CovarianceModel::Diagonal);
        let m = dp_mean(&[], &[4.0, 5.0], &c, &NP(), &mut stream(0, "m")).unwrap();
        assert!(m.degenerate);
        assert_eq!(m.mean, vec![4.0, 5.0]);
        let cov = dp_covariance(&[], &m.mean, m.noisy_count, &c, &NP(), &mut stream(0, "c")).unwrap();
        assert!(cov.degenerate);
        assert_eq!(cov.covariance, Covariance::isotropic(2, 1e-6));
    }

    #[test]
    fn exact_second_moment_diagonal_and_full() {
        let a = [-1.0, 0.0];
        let b = [1.0, 0.0];
        let diag = dp_covariance(&[&a, &b], &[0.0, 0.0], 2.0, &cfg(10.0, CovarianceModel::Diagonal), &NP(), &mut stream(0, "c")).unwrap();
        assert_eq!(diag.covariance, Covariance::Diagonal(vec![1.0, 1e-6]));
        let full = dp_covariance(&[&a, &b], &[0.0, 0.0], 2.0, &cfg(10.0, CovarianceModel::Full), &NP(), &mut stream(0, "c")).unwrap();
        let Covariance::Full(m) = full.covariance else { panic!("expected full") };
        let expect = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1e-6]);
        assert!((m - expect).amax() < 1e-12);
    }

    #[test]
    fn non_private_matches_classical_estimators() {
        let truth = GmmModel::new(vec![1.0], vec![vec![1.0, -2.0, 0.5]], vec![Covariance::Diagonal(vec![0.5, 1.0, 2.0])]).unwrap();
        let ds = sample_gmm(&truth, 500, &mut stream(1, "s")).unwrap();
        let r = rows(&ds);
        let n = r.len() as f64;
        let mean: Vec<f64> = (0..3).map(|j| r.iter().map(|x| x[j]).sum::<f64>() / n).collect();
        for model in [CovarianceModel::Diagonal, CovarianceModel::Full] {
            let c = cfg(1e3, model);
            let est = estimate_gaussian(&r, &[0.0; 3], &c, &NP(), &NP(), &mut stream(0, "e")).unwrap();
            for j in 0..3 {
                assert!((est.mean[j] - mean[j]).abs() < 1e-9);
            }
            let m = est.covariance.to_matrix();
            for i in 0..3 {
                for j in 0..3 {
                    let s: f64 = r.iter().map(|x| (x[i] - mean[i]) * (x[j] - mean[j])).sum::<f64>() / n;
                    let expect = if model == CovarianceModel::Diagonal && i != j { 0.0 } else { s };
                    assert!((m[(i, j)] - expect).abs() < 1e-9, "{model:?} ({i},{j})");
                }
            }
        }
    }

    fn planted(seed: u64) -> (Vec<f64>, crate::EmbeddingDataset) {
        let mu: Vec<f64> = (0..8).map(|i| i as f64 * 0.5 - 1.0).collect();
        let truth = GmmModel::new(vec![1.0], vec![mu.clone()], vec![Covariance::isotropic(8, 0.25)]).unwrap();
        (mu, sample_gmm(&truth, 10_000, &mut stream(seed, "planted")).unwrap())
    }

    #[test]
    fn private_mean_error_over_seeds() {
        let budget = PrivacyBudget::new(0.2, 2e-6).unwrap();
        let c = cfg(6.0, CovarianceModel::Diagonal);
        let errs: Vec<f64> = (0..20)
            .map(|seed| {
                let (mu, ds) = planted(seed);
                let est = dp_mean(&rows(&ds), &mu, &c, &budget, &mut stream(seed, "mean")).unwrap();
                crate::linalg::sq_dist(&est.mean, &mu).sqrt()
            })
            .collect();
        // Oracle: sampling error √(8·0.25/n) ≈ 0.014 plus noise √8·σ_G/n ≈ 0.055.
        let med = median(errs);
        assert!(med <= 0.15, "median {med}");
    }

    /// Median over seeds of the largest per-coordinate relative variance error.
    fn variance_error(clip: f64) -> f64 {
        let budget = PrivacyBudget::new(0.2, 2e-6).unwrap();
        let c = cfg(clip, CovarianceModel::Diagonal);
        median(
            (0..20)
                .map(|seed| {
                    let (mu, ds) = planted(100 + seed);
                    let est = dp_covariance(&rows(&ds), &mu, ds.len() as f64, &c, &budget, &mut stream(seed, "cov")).unwrap();
                    let Covariance::Diagonal(v) = est.covariance else { unreachable!() };
                    v.iter().map(|x| (x - 0.25).abs() / 0.25).fold(0.0, f64::max)
                })
                .collect(),
        )
    }

    #[test]
    fn private_variance_error_matches_noise_oracle() {
        // Analytic noise on each coordinate: τ = r²·sqrt(2 ln(1.25/δ))/ε / n.
        // The median of the max of 8 half-normals is ≈ 1.73τ.
        let tau = |r: f64| r * r * (2.0 * (1.25f64 / 2e-6).ln()).sqrt() / 0.2 / 10_000.0 / 0.25;
        for clip in [3.0, 6.0] {
            let predicted = 1.73 * tau(clip);
            let got = variance_error(clip);
            assert!((got / predicted - 1.0).abs() < 0.35, "clip {clip}: {got} vs {predicted}");
        }
        assert!(variance_error(3.0) <= 0.2);
    }

    #[test]
    fn weights_normalize_and_clamp() {
        let w = dp_weights(&[900.0, 100.0]).unwrap();
        assert!((w[0] - 0.9).abs() < 1e-15 && (w[1] - 0.1).abs() < 1e-15);
        assert_eq!(dp_weights(&[-5.0, 10.0]).unwrap(), vec![0.0, 1.0]);
        assert_eq!(dp_weights(&[0.0, 0.0]).unwrap(), vec![0.5, 0.5]);
        assert!(dp_weights(&[]).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]
        #[test]
        fn covariance_respects_floor(seed in any::<u64>(), full in any::<bool>()) {
            let model = if full { CovarianceModel::Full } else { CovarianceModel::Diagonal };
            let c = EstimatorConfig { clip_radius: 2.0, covariance_model: model, variance_floor: 1e-3, ..EstimatorConfig::default() };
            let pts: Vec<Vec<f64>> = (0..5).map(|i| vec![i as f64 * 0.1, -(i as f64) * 0.2, 0.3]).collect();
            let refs: Vec<&[f64]> = pts.iter().map(Vec::as_slice).collect();
            let budget = PrivacyBudget::new(0.1, 1e-6).unwrap();
            let mut rng = stream(seed, "psd");
            let noisy_count = 5.0 + (seed % 7) as f64 - 3.0;
            let est = dp_covariance(&refs, &[0.2, -0.4, 0.3], noisy_count, &c, &budget, &mut rng).unwrap();
            prop_assert!(est.covariance.is_psd());
            prop_assert!(est.covariance.min_eigenvalue() >= 1e-3 * (1.0 - 1e-9));
            if let Covariance::Full(m) = &est.covariance {
                prop_assert!((m - m.transpose()).amax() == 0.0);
            }
        }
    }
}
