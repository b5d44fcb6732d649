//! Gaussian mixture models: sampling and distributional distances.

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::dataset::EmbeddingDataset;
use crate::error::{contract, Result};
use crate::linalg::sq_dist;

/// Tolerance on the simplex constraint for mixture weights.
pub const WEIGHT_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CovarianceModel {
    Diagonal,
    Full,
}

impl CovarianceModel {
    pub fn name(&self) -> &'static str {
        match self {
            CovarianceModel::Diagonal => "diagonal",
            CovarianceModel::Full => "full",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "diagonal" | "diag" => Some(CovarianceModel::Diagonal),
            "full" => Some(CovarianceModel::Full),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Covariance {
    /// Per-coordinate variances.
    Diagonal(Vec<f64>),
    Full(DMatrix<f64>),
}

impl Covariance {
    pub fn isotropic(d: usize, variance: f64) -> Self {
        Covariance::Diagonal(vec![variance; d])
    }

    pub fn dim(&self) -> usize {
        match self {
            Covariance::Diagonal(v) => v.len(),
            Covariance::Full(m) => m.nrows(),
        }
    }

    pub fn model(&self) -> CovarianceModel {
        match self {
            Covariance::Diagonal(_) => CovarianceModel::Diagonal,
            Covariance::Full(_) => CovarianceModel::Full,
        }
    }

    pub fn to_matrix(&self) -> DMatrix<f64> {
        match self {
            Covariance::Diagonal(v) => DMatrix::from_diagonal(&DVector::from_column_slice(v)),
            Covariance::Full(m) => m.clone(),
        }
    }

    pub fn eigenvalues(&self) -> Vec<f64> {
        match self {
            Covariance::Diagonal(v) => v.clone(),
            Covariance::Full(m) => SymmetricEigen::new(m.clone()).eigenvalues.iter().copied().collect(),
        }
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eigenvalues().into_iter().fold(f64::INFINITY, f64::min)
    }

    pub fn max_eigenvalue(&self) -> f64 {
        self.eigenvalues().into_iter().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Symmetric and positive semidefinite up to a relative tolerance.
    pub fn is_psd(&self) -> bool {
        match self {
            Covariance::Diagonal(v) => v.iter().all(|x| *x >= 0.0 && x.is_finite()),
            Covariance::Full(m) => {
                if m.nrows() != m.ncols() || m.iter().any(|x| !x.is_finite()) {
                    return false;
                }
                let scale = m.amax().max(1e-300);
                if (m - m.transpose()).amax() > 1e-9 * scale {
                    return false;
                }
                self.min_eigenvalue() >= -1e-10 * scale
            }
        }
    }

    pub fn frobenius_distance(&self, other: &Covariance) -> f64 {
        match (self, other) {
            (Covariance::Diagonal(a), Covariance::Diagonal(b)) => sq_dist(a, b).sqrt(),
            _ => (self.to_matrix() - other.to_matrix()).norm(),
        }
    }

    pub fn frobenius_norm(&self) -> f64 {
        match self {
            Covariance::Diagonal(a) => crate::linalg::norm(a),
            Covariance::Full(m) => m.norm(),
        }
    }

    /// A factor `L` with `L·Lᵀ = Σ`, used for sampling.
    fn sampling_factor(&self) -> SamplingFactor {
        match self {
            Covariance::Diagonal(v) => SamplingFactor::Diagonal(v.iter().map(|x| x.max(0.0).sqrt()).collect()),
            Covariance::Full(m) => match Cholesky::new(m.clone()) {
                Some(ch) => SamplingFactor::Full(ch.l()),
                None => SamplingFactor::Full(psd_sqrt(m)),
            },
        }
    }
}

enum SamplingFactor {
    Diagonal(Vec<f64>),
    Full(DMatrix<f64>),
}

/// Symmetric square root with negative eigenvalues clamped to zero.
pub(crate) fn psd_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(m.clone());
    let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose()
}

#[derive(Debug, Clone, PartialEq)]
pub struct GmmModel {
    weights: Vec<f64>,
    means: Vec<Vec<f64>>,
    covariances: Vec<Covariance>,
    covariance_model: CovarianceModel,
}

impl GmmModel {
    pub fn new(weights: Vec<f64>, means: Vec<Vec<f64>>, covariances: Vec<Covariance>) -> Result<Self> {
        let k = weights.len();
        if k == 0 {
            return contract("a mixture needs at least one component");
        }
        if means.len() != k || covariances.len() != k {
            return contract(format!(
                "{k} weights but {} means and {} covariances",
                means.len(),
                covariances.len()
            ));
        }
        if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return contract("mixture weights must be nonnegative");
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > WEIGHT_TOLERANCE {
            return contract(format!("mixture weights sum to {sum}, not 1"));
        }
        let d = means[0].len();
        if d == 0 {
            return contract("means must have dimension at least 1");
        }
        if means.iter().any(|m| m.len() != d || m.iter().any(|v| !v.is_finite())) {
            return contract("all means must be finite and share one dimension");
        }
        let model = covariances[0].model();
        for c in &covariances {
            if c.dim() != d {
                return contract(format!("covariance of dimension {} in a {d}-dimensional mixture", c.dim()));
            }
            if c.model() != model {
                return contract("mixed covariance models in one mixture");
            }
            if !c.is_psd() {
                return contract("covariances must be symmetric positive semidefinite");
            }
        }
        Ok(Self {
            weights,
            means,
            covariances,
            covariance_model: model,
        })
    }

    pub fn k(&self) -> usize {
        self.weights.len()
    }

    pub fn dim(&self) -> usize {
        self.means[0].len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn means(&self) -> &[Vec<f64>] {
        &self.means
    }

    pub fn covariances(&self) -> &[Covariance] {
        &self.covariances
    }

    pub fn covariance_model(&self) -> CovarianceModel {
        self.covariance_model
    }

    /// The same components reordered by `order` (new index i takes old `order[i]`).
    pub fn permuted(&self, order: &[usize]) -> Result<Self> {
        let mut seen = vec![false; self.k()];
        if order.len() != self.k() || order.iter().any(|&i| i >= self.k() || std::mem::replace(&mut seen[i], true)) {
            return contract("permutation does not match the component count");
        }
        GmmModel::new(
            order.iter().map(|&i| self.weights[i]).collect(),
            order.iter().map(|&i| self.means[i].clone()).collect(),
            order.iter().map(|&i| self.covariances[i].clone()).collect(),
        )
    }
}

/// Draws `m` points; row labels record the generating component.
pub fn sample_gmm<R: Rng + ?Sized>(model: &GmmModel, m: usize, rng: &mut R) -> Result<EmbeddingDataset> {
    if m == 0 {
        return contract("sample count must be at least 1");
    }
    let d = model.dim();
    let factors: Vec<SamplingFactor> = model.covariances.iter().map(Covariance::sampling_factor).collect();
    let mut cumulative = Vec::with_capacity(model.k());
    let mut acc = 0.0;
    for w in &model.weights {
        acc += w;
        cumulative.push(acc);
    }
    let last_positive = model.weights.iter().rposition(|w| *w > 0.0).unwrap_or(0);

    let mut data = Vec::with_capacity(m * d);
    let mut labels = Vec::with_capacity(m);
    let mut z = vec![0.0; d];
    for _ in 0..m {
        let u: f64 = rng.random::<f64>() * acc;
        let j = cumulative.iter().position(|c| u < *c).unwrap_or(last_positive);
        z.iter_mut().for_each(|v| *v = rng.sample(StandardNormal));
        let mean = &model.means[j];
        match &factors[j] {
            SamplingFactor::Diagonal(s) => {
                data.extend(mean.iter().zip(s).zip(&z).map(|((mu, s), z)| mu + s * z));
            }
            SamplingFactor::Full(l) => {
                for r in 0..d {
                    data.push(mean[r] + (0..d).map(|c| l[(r, c)] * z[c]).sum::<f64>());
                }
            }
        }
        labels.push(j as u32);
    }
    EmbeddingDataset::new(data, d, Some(labels))
}

fn check_pair(mu1: &[f64], cov1: &Covariance, mu2: &[f64], cov2: &Covariance) -> Result<usize> {
    let d = mu1.len();
    if mu2.len() != d || cov1.dim() != d || cov2.dim() != d {
        return contract("Gaussian parameters have mismatched dimensions");
    }
    if !cov1.is_psd() || !cov2.is_psd() {
        return contract("covariances must be positive semidefinite");
    }
    Ok(d)
}

/// Squared 2-Wasserstein distance between two Gaussians.
///
/// Diagonal pairs use `‖μ₁−μ₂‖² + ‖Σ₁^{1/2} − Σ₂^{1/2}‖_F²`; otherwise the
/// Bures form `tr Σ₁ + tr Σ₂ − 2 tr (Σ₁^{1/2} Σ₂ Σ₁^{1/2})^{1/2}`, which agrees
/// with the first whenever the covariances commute.
pub fn w2_gaussian_sq(mu1: &[f64], cov1: &Covariance, mu2: &[f64], cov2: &Covariance) -> Result<f64> {
    check_pair(mu1, cov1, mu2, cov2)?;
    let mean_term = sq_dist(mu1, mu2);
    let cov_term = match (cov1, cov2) {
        (Covariance::Diagonal(a), Covariance::Diagonal(b)) => a
            .iter()
            .zip(b)
            .map(|(x, y)| (x.sqrt() - y.sqrt()).powi(2))
            .sum::<f64>(),
        _ => {
            let a = cov1.to_matrix();
            let b = cov2.to_matrix();
            let ra = psd_sqrt(&a);
            let cross = psd_sqrt(&(&ra * &b * &ra));
            (a.trace() + b.trace() - 2.0 * cross.trace()).max(0.0)
        }
    };
    Ok(mean_term + cov_term)
}

pub fn w2_gaussian(mu1: &[f64], cov1: &Covariance, mu2: &[f64], cov2: &Covariance) -> Result<f64> {
    Ok(w2_gaussian_sq(mu1, cov1, mu2, cov2)?.sqrt())
}

/// Geometry of a mixture's components.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeparationSpec {
    /// Minimum pairwise distance between means.
    pub delta_sep: f64,
    /// σ with every Σᵢ ⪯ σ²I.
    pub sigma_max: f64,
    /// Maximum pairwise distance between means.
    pub mean_diameter: f64,
    pub w_min: f64,
}

impl SeparationSpec {
    pub fn new(delta_sep: f64, sigma_max: f64, mean_diameter: f64, w_min: f64) -> Result<Self> {
        if !(delta_sep > 0.0 && sigma_max > 0.0 && mean_diameter > 0.0 && w_min > 0.0) {
            return contract("separation parameters must be positive");
        }
        if delta_sep > mean_diameter {
            return contract("minimum separation exceeds the mean diameter");
        }
        Ok(Self {
            delta_sep,
            sigma_max,
            mean_diameter,
            w_min,
        })
    }

    /// Reads the geometry off a model. For a single component the pairwise
    /// quantities are zero.
    pub fn from_model(model: &GmmModel) -> Self {
        let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
        for i in 0..model.k() {
            for j in i + 1..model.k() {
                let dist = sq_dist(&model.means[i], &model.means[j]).sqrt();
                lo = lo.min(dist);
                hi = hi.max(dist);
            }
        }
        if model.k() == 1 {
            lo = 0.0;
        }
        let sigma = model
            .covariances
            .iter()
            .map(|c| c.max_eigenvalue().max(0.0))
            .fold(0.0, f64::max)
            .sqrt();
        let w_min = model.weights.iter().copied().fold(f64::INFINITY, f64::min);
        Self {
            delta_sep: lo,
            sigma_max: sigma,
            mean_diameter: hi,
            w_min,
        }
    }
}

/// Greedy minimum-distance matching of means: `result[i]` is the index in
/// `estimated` paired with `reference[i]`.
pub fn match_components(reference: &[Vec<f64>], estimated: &[Vec<f64>]) -> Result<Vec<usize>> {
    if reference.len() != estimated.len() {
        return contract(format!(
            "cannot match {} components against {}",
            reference.len(),
            estimated.len()
        ));
    }
    let k = reference.len();
    let mut pairs: Vec<(f64, usize, usize)> = (0..k)
        .flat_map(|i| (0..k).map(move |j| (i, j)))
        .map(|(i, j)| (sq_dist(&reference[i], &estimated[j]), i, j))
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut out = vec![usize::MAX; k];
    let mut used = vec![false; k];
    for (_, i, j) in pairs {
        if out[i] == usize::MAX && !used[j] {
            out[i] = j;
            used[j] = true;
        }
    }
    Ok(out)
}

/// Inputs and value of the mixture Wasserstein bound.
#[derive(Debug, Clone, PartialEq)]
pub struct WassersteinBound {
    /// Largest matched mean error ‖μ̂ᵢ − μᵢ‖₂.
    pub alpha_mean: f64,
    /// Largest matched covariance error ‖Σ̂ᵢ − Σᵢ‖_F.
    pub alpha_cov: f64,
    /// ‖ŵ − w‖₁ after matching.
    pub gamma: f64,
    /// Order z of the bound.
    pub order: f64,
    /// Upper bound on W_z^z.
    pub value: f64,
    pub matching: Vec<usize>,
}

/// Closed-form upper bound on `W_z^z` between two mixtures:
///
/// `2^{3z/2−2}·γ·R^z + 2^{5z/2−2}·γ·d^{z/2}·σ^z + 2^{3z/2−2}·α_μ^z + 2^{3z/2−2}·d^{z/4}·α_Σ^{z/2}`
///
/// where α_μ and α_Σ are the worst matched mean and Frobenius covariance errors.
pub fn wasserstein_bound_value(alpha_mean: f64, alpha_cov: f64, gamma: f64, sep: &SeparationSpec, d: usize, z: f64) -> f64 {
    let d = d as f64;
    let c = 2f64.powf(1.5 * z - 2.0);
    c * gamma * sep.mean_diameter.powf(z)
        + 2f64.powf(2.5 * z - 2.0) * gamma * d.powf(z / 2.0) * sep.sigma_max.powf(z)
        + c * alpha_mean.powf(z)
        + c * d.powf(z / 4.0) * alpha_cov.powf(z / 2.0)
}

pub fn gmm_wasserstein_bound(
    truth: &GmmModel,
    estimate: &GmmModel,
    sep: &SeparationSpec,
    z: f64,
    matching: Option<&[usize]>,
) -> Result<WassersteinBound> {
    if truth.k() != estimate.k() || truth.dim() != estimate.dim() {
        return contract(format!(
            "mixtures differ in shape: k {} vs {}, d {} vs {}",
            truth.k(),
            estimate.k(),
            truth.dim(),
            estimate.dim()
        ));
    }
    if !(1.0..=2.0).contains(&z) {
        return contract(format!("order z must lie in [1, 2], got {z}"));
    }
    let matching = match matching {
        Some(m) => {
            estimate.permuted(m)?;
            m.to_vec()
        }
        None => match_components(&truth.means, &estimate.means)?,
    };
    let mut alpha_mean = 0.0f64;
    let mut alpha_cov = 0.0f64;
    let mut gamma = 0.0;
    for (i, &j) in matching.iter().enumerate() {
        alpha_mean = alpha_mean.max(sq_dist(&truth.means[i], &estimate.means[j]).sqrt());
        alpha_cov = alpha_cov.max(truth.covariances[i].frobenius_distance(&estimate.covariances[j]));
        gamma += (truth.weights[i] - estimate.weights[j]).abs();
    }
    let value = wasserstein_bound_value(alpha_mean, alpha_cov, gamma, sep, truth.dim(), z);
    Ok(WassersteinBound {
        alpha_mean,
        alpha_cov,
        gamma,
        order: z,
        value,
        matching,
    })
}

fn kl_gaussian(mu1: &[f64], cov1: &DMatrix<f64>, mu2: &[f64], cov2: &DMatrix<f64>) -> Option<f64> {
    let d = mu1.len() as f64;
    let ch2 = Cholesky::new(cov2.clone())?;
    let ch1 = Cholesky::new(cov1.clone())?;
    let logdet = |ch: &Cholesky<f64, nalgebra::Dyn>| 2.0 * ch.l().diagonal().iter().map(|x| x.ln()).sum::<f64>();
    let trace_term = ch2.solve(cov1).trace();
    let diff = DVector::from_iterator(mu1.len(), mu2.iter().zip(mu1).map(|(a, b)| a - b));
    let maha = diff.dot(&ch2.solve(&diff));
    Some(0.5 * (trace_term + maha - d + logdet(&ch2) - logdet(&ch1)))
}

/// Pinsker bound `sqrt(KL/2)` on the total variation distance between two
/// Gaussians, using the smaller of the two KL directions, clamped to [0, 1].
pub fn tv_bound_gaussians(
    mu1: &[f64],
    cov1: &Covariance,
    mu2: &[f64],
    cov2: &Covariance,
    sigma_min: f64,
) -> Result<f64> {
    check_pair(mu1, cov1, mu2, cov2)?;
    if !(sigma_min > 0.0) {
        return contract("sigma_min must be positive");
    }
    let floor = sigma_min * sigma_min * (1.0 - 1e-9);
    if cov1.min_eigenvalue() < floor || cov2.min_eigenvalue() < floor {
        return contract(format!("covariance eigenvalues fall below sigma_min^2 = {}", sigma_min * sigma_min));
    }
    let (a, b) = (cov1.to_matrix(), cov2.to_matrix());
    let kl = match (kl_gaussian(mu1, &a, mu2, &b), kl_gaussian(mu2, &b, mu1, &a)) {
        (Some(x), Some(y)) => x.min(y),
        _ => return contract("covariance is not positive definite"),
    };
    Ok((kl.max(0.0) / 2.0).sqrt().clamp(0.0, 1.0))
}
