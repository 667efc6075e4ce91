//! Randomized response for epsilon-local label DP, with debiasing constants.
//!
//! The randomizer keeps a bit with probability `sigma(eps) = e^eps / (e^eps + 1)`
//! and flips it otherwise. The debiased label `c(eps) * (z + sigma(eps) - 1)`
//! with `c(eps) = (e^eps + 1) / (e^eps - 1)` is an exactly unbiased
//! reconstruction of the clean bit. `epsilon = +inf` is the non-private
//! sentinel: the randomizer is the identity, the debiased label is the raw
//! label, and downstream losses reduce to the standard log-loss.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::{sigmoid, PreferenceDataset, Stage};
use crate::error::{Error, Result};
use crate::rng::SimRng;

fn check_epsilon(epsilon: f64) -> Result<()> {
    if epsilon.is_nan() || epsilon <= 0.0 {
        return Err(Error::domain(format!(
            "privacy epsilon must be positive (or +inf), got {epsilon}"
        )));
    }
    Ok(())
}

fn check_bit(bit: u8) -> Result<()> {
    if bit > 1 {
        return Err(Error::domain(format!("labels are bits, got {bit}")));
    }
    Ok(())
}

/// Probability that randomized response keeps the input bit: `sigma(eps)`,
/// exactly 1 at the non-private sentinel.
pub fn retention_prob(epsilon: f64) -> Result<f64> {
    check_epsilon(epsilon)?;
    if epsilon.is_infinite() {
        return Ok(1.0);
    }
    Ok(sigmoid(epsilon))
}

/// Debiasing constant `c(eps) = (e^eps + 1) / (e^eps - 1) >= 1`, exactly 1 at
/// the non-private sentinel.
pub fn debias_scale(epsilon: f64) -> Result<f64> {
    check_epsilon(epsilon)?;
    if epsilon.is_infinite() {
        return Ok(1.0);
    }
    let e = epsilon.exp();
    if e.is_finite() {
        Ok((e + 1.0) / (e - 1.0))
    } else {
        // e^eps overflowed; the ratio is 1 to double precision.
        Ok(1.0)
    }
}

/// Randomized response: returns `y` with probability `retention_prob(eps)`,
/// else `1 - y`.
pub fn randomize_label(y: u8, epsilon: f64, rng: &mut SimRng) -> Result<u8> {
    check_bit(y)?;
    let keep = retention_prob(epsilon)?;
    Ok(if rng.gen::<f64>() < keep { y } else { 1 - y })
}

/// Unbiased reconstruction `c(eps) * (z + sigma(eps) - 1)` of the clean label
/// from a randomized-response output. Lies outside `[0, 1]` under privacy;
/// no clipping is applied, on purpose: clipping would destroy unbiasedness.
pub fn debiased_label(z: u8, epsilon: f64) -> Result<f64> {
    check_bit(z)?;
    let c = debias_scale(epsilon)?;
    let sigma = retention_prob(epsilon)?;
    Ok(c * (z as f64 + sigma - 1.0))
}

/// Applies randomized response to every label independently.
pub fn randomize_dataset(
    ds: &PreferenceDataset,
    epsilon: f64,
    rng: &mut SimRng,
) -> Result<PreferenceDataset> {
    let mut labels = Vec::with_capacity(ds.len());
    for r in &ds.records {
        labels.push(randomize_label(r.label, epsilon, rng)?);
    }
    ds.with_labels(&labels, Stage::Privatized)
}

/// Privacy level: a positive epsilon, or `+inf` for the non-private path.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrivacyParams {
    epsilon: f64,
}

impl PrivacyParams {
    pub fn new(epsilon: f64) -> Result<Self> {
        check_epsilon(epsilon)?;
        Ok(Self { epsilon })
    }

    pub fn non_private() -> Self {
        Self {
            epsilon: f64::INFINITY,
        }
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn is_private(&self) -> bool {
        self.epsilon.is_finite()
    }
}
