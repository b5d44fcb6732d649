//! Calibrated noise mechanisms.

use rand::{Rng, RngCore};
use rand_distr::StandardNormal;

use crate::budget::PrivacyBudget;
use crate::error::{config, contract, Result};

/// Laplace noise with scale `b = Δ₁/ε`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LaplaceNoise {
    scale: f64,
}

impl LaplaceNoise {
    pub fn calibrate(l1_sensitivity: f64, epsilon: f64) -> Result<Self> {
        if !(l1_sensitivity > 0.0 && l1_sensitivity.is_finite()) {
            return contract(format!("L1 sensitivity must be positive, got {l1_sensitivity}"));
        }
        if !(epsilon > 0.0) {
            return contract(format!("epsilon must be positive, got {epsilon}"));
        }
        Ok(Self {
            scale: l1_sensitivity / epsilon,
        })
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    /// Inverse-CDF draw from a 53-bit uniform on the open unit interval.
    pub fn sample<R: RngCore + ?Sized>(&self, rng: &mut R) -> f64 {
        let u = ((rng.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64);
        if u < 0.5 {
            self.scale * (2.0 * u).ln()
        } else {
            -self.scale * (2.0 * (1.0 - u)).ln()
        }
    }
}

/// Gaussian noise with the classical calibration
/// `σ = Δ₂·sqrt(2·ln(1.25/δ))/ε`, valid for ε < 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianNoise {
    sigma: f64,
}

impl GaussianNoise {
    pub fn calibrate(l2_sensitivity: f64, budget: &PrivacyBudget) -> Result<Self> {
        if !(l2_sensitivity > 0.0 && l2_sensitivity.is_finite()) {
            return contract(format!("L2 sensitivity must be positive, got {l2_sensitivity}"));
        }
        let (eps, delta) = (budget.epsilon(), budget.delta());
        if !(eps > 0.0 && eps < 1.0) {
            return config(format!(
                "Gaussian mechanism needs epsilon in (0, 1), got {eps}; split the budget further"
            ));
        }
        if !(delta > 0.0 && delta < 1.0) {
            return config(format!("Gaussian mechanism needs delta in (0, 1), got {delta}"));
        }
        Ok(Self {
            sigma: l2_sensitivity * (2.0 * (1.25 / delta).ln()).sqrt() / eps,
        })
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let z: f64 = rng.sample(StandardNormal);
        self.sigma * z
    }
}

/// `value + Lap(Δ₁/ε)` per coordinate; the identity in non-private mode.
pub fn laplace_mechanism<R: RngCore + ?Sized>(
    value: &[f64],
    l1_sensitivity: f64,
    budget: &PrivacyBudget,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if !(l1_sensitivity > 0.0) {
        return contract(format!("L1 sensitivity must be positive, got {l1_sensitivity}"));
    }
    if budget.is_non_private() {
        return Ok(value.to_vec());
    }
    let noise = LaplaceNoise::calibrate(l1_sensitivity, budget.epsilon())?;
    Ok(value.iter().map(|v| v + noise.sample(rng)).collect())
}

/// `value + N(0, σ²I)`; the identity in non-private mode.
pub fn gaussian_mechanism<R: Rng + ?Sized>(
    value: &[f64],
    l2_sensitivity: f64,
    budget: &PrivacyBudget,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if !(l2_sensitivity > 0.0) {
        return contract(format!("L2 sensitivity must be positive, got {l2_sensitivity}"));
    }
    if budget.is_non_private() {
        return Ok(value.to_vec());
    }
    let noise = GaussianNoise::calibrate(l2_sensitivity, budget)?;
    Ok(value.iter().map(|v| v + noise.sample(rng)).collect())
}
