//! Strong label-corruption adversaries and the privacy/corruption pipelines.
//!
//! An adversary inspects the dataset (and, for the oracle strategy, the true
//! parameter) and rewrites at most `floor(alpha * n)` labels. Pipelines
//! compose corruption with randomized response in either order: corrupt-then-
//! privatize (`ctl`), privatize-then-corrupt (`ltc`), or corrupt on both
//! sides (`clc`).
//!
//! Each pipeline stage draws from its own child RNG stream, forked up front
//! in a fixed order. This makes degenerate compositions literally degenerate:
//! `ctl` at `alpha = 0` produces the same bytes as `private_only`, and `ltc`
//! at `epsilon = +inf` the same bytes as `corrupt_only`.

use nalgebra::DVector;
use rand::seq::index::sample as index_sample;
use serde::{Deserialize, Serialize};

use crate::env::{Environment, PreferenceDataset, Stage};
use crate::error::{Error, Result};
use crate::metrics::empirical_covariance;
use crate::privacy::{randomize_dataset, PrivacyParams};
use crate::rng::{rng_from_seed, SimRng};
use rand::RngCore;

/// How the adversary chooses which labels to rewrite.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorruptionStrategy {
    /// Flip a uniformly random subset of the budgeted size.
    RandomFlip,
    /// Flip the budgeted records whose current label agrees with the model's
    /// most likely label, largest margin `|<theta_star, x>|` first.
    OracleFlip,
    /// Flip the budgeted records with the largest leverage
    /// `x^T (Sigma_hat + lambda I)^{-1} x`.
    LeverageFlip,
}

impl CorruptionStrategy {
    pub fn name(&self) -> &'static str {
        match self {
            Self::RandomFlip => "random_flip",
            Self::OracleFlip => "oracle_flip",
            Self::LeverageFlip => "leverage_flip",
        }
    }
}

impl std::fmt::Display for CorruptionStrategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Corruption budget and strategy. `alpha1`/`alpha2` are the pre- and
/// post-privatization budgets and are consulted only by the `clc` pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorruptionSpec {
    pub alpha: f64,
    pub strategy: CorruptionStrategy,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha2: Option<f64>,
}

fn check_alpha(alpha: f64, what: &str) -> Result<()> {
    if !(0.0..=0.5).contains(&alpha) {
        return Err(Error::config(format!(
            "{what} must lie in [0, 0.5], got {alpha}"
        )));
    }
    Ok(())
}

impl CorruptionSpec {
    pub fn new(alpha: f64, strategy: CorruptionStrategy) -> Result<Self> {
        check_alpha(alpha, "alpha")?;
        Ok(Self {
            alpha,
            strategy,
            alpha1: None,
            alpha2: None,
        })
    }

    /// Spec for the corrupt-privatize-corrupt pipeline.
    pub fn clc(alpha1: f64, alpha2: f64, strategy: CorruptionStrategy) -> Result<Self> {
        check_alpha(alpha1, "alpha1")?;
        check_alpha(alpha2, "alpha2")?;
        Ok(Self {
            alpha: 0.0,
            strategy,
            alpha1: Some(alpha1),
            alpha2: Some(alpha2),
        })
    }

    fn clc_budgets(&self) -> Result<(f64, f64)> {
        match (self.alpha1, self.alpha2) {
            (Some(a1), Some(a2)) => {
                check_alpha(a1, "alpha1")?;
                check_alpha(a2, "alpha2")?;
                Ok((a1, a2))
            }
            _ => Err(Error::config("clc requires both alpha1 and alpha2")),
        }
    }
}

/// Which stages are applied, and in which order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PipelineSetting {
    Clean,
    PrivateOnly,
    CorruptOnly,
    Ctl,
    Ltc,
    Clc,
}

impl PipelineSetting {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Clean => "clean",
            Self::PrivateOnly => "private_only",
            Self::CorruptOnly => "corrupt_only",
            Self::Ctl => "ctl",
            Self::Ltc => "ltc",
            Self::Clc => "clc",
        }
    }

    pub fn uses_privacy(&self) -> bool {
        matches!(self, Self::PrivateOnly | Self::Ctl | Self::Ltc | Self::Clc)
    }

    pub fn uses_corruption(&self) -> bool {
        matches!(self, Self::CorruptOnly | Self::Ctl | Self::Ltc | Self::Clc)
    }
}

impl std::fmt::Display for PipelineSetting {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Applies one corruption stage with budget `floor(spec.alpha * n)`.
///
/// Features, states, and actions are untouched; exactly
/// `min(budget, flippable)` labels change.
pub fn corrupt(
    ds: &PreferenceDataset,
    spec: &CorruptionSpec,
    env: &Environment,
    lambda: f64,
    rng: &mut SimRng,
) -> Result<PreferenceDataset> {
    corrupt_with_alpha(ds, spec.alpha, spec.strategy, env, lambda, rng)
}

fn corrupt_with_alpha(
    ds: &PreferenceDataset,
    alpha: f64,
    strategy: CorruptionStrategy,
    env: &Environment,
    lambda: f64,
    rng: &mut SimRng,
) -> Result<PreferenceDataset> {
    check_alpha(alpha, "alpha")?;
    let n = ds.len();
    let budget = (alpha * n as f64).floor() as usize;
    let mut labels = ds.labels();
    if budget == 0 {
        // Empty budget consumes no randomness, so degenerate compositions
        // stay bit-identical to the pipeline without this stage.
        return ds.with_labels(&labels, Stage::Corrupted);
    }

    let targets: Vec<usize> = match strategy {
        CorruptionStrategy::RandomFlip => {
            index_sample(rng, n, budget.min(n)).into_iter().collect()
        }
        CorruptionStrategy::OracleFlip => {
            // Flippable records are those whose current label agrees with the
            // Bradley-Terry most likely label; flipping them is maximally
            // misleading. Ties on the margin break toward the lowest index.
            let mut agreeing: Vec<(usize, f64)> = ds
                .records
                .iter()
                .enumerate()
                .filter_map(|(i, r)| {
                    let margin = env.theta_star().dot(&r.diff_feature);
                    let most_likely = u8::from(margin >= 0.0);
                    (r.label == most_likely).then_some((i, margin.abs()))
                })
                .collect();
            agreeing.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
            agreeing.into_iter().take(budget).map(|(i, _)| i).collect()
        }
        CorruptionStrategy::LeverageFlip => {
            let sigma = empirical_covariance(ds)?;
            let d = sigma.nrows();
            let reg = sigma + nalgebra::DMatrix::identity(d, d) * lambda;
            let chol = reg.cholesky().ok_or_else(|| {
                Error::numerical("Sigma_hat + lambda I is not positive definite")
            })?;
            let mut scores: Vec<(usize, f64)> = ds
                .records
                .iter()
                .enumerate()
                .map(|(i, r)| {
                    let solved: DVector<f64> = chol.solve(&r.diff_feature);
                    (i, r.diff_feature.dot(&solved))
                })
                .collect();
            scores.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
            scores.into_iter().take(budget).map(|(i, _)| i).collect()
        }
    };

    for i in targets {
        labels[i] = 1 - labels[i];
    }
    ds.with_labels(&labels, Stage::Corrupted)
}

/// Final observed dataset plus the retained intermediate stages, in the order
/// they were produced.
#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub observed: PreferenceDataset,
    pub intermediate: Vec<PreferenceDataset>,
}

/// Runs the selected privacy/corruption composition over a clean dataset.
///
/// Stage RNG streams are forked from `rng` in a fixed order (primary
/// corruption, randomized response, second `clc` corruption) before any stage
/// runs, so a stage's draws do not depend on which other stages are active.
pub fn apply_pipeline(
    clean: &PreferenceDataset,
    setting: PipelineSetting,
    privacy: &PrivacyParams,
    spec: &CorruptionSpec,
    env: &Environment,
    lambda: f64,
    rng: &mut SimRng,
) -> Result<PipelineOutput> {
    let corrupt_seed = rng.next_u64();
    let privatize_seed = rng.next_u64();
    let second_corrupt_seed = rng.next_u64();
    let mut corrupt_rng = rng_from_seed(corrupt_seed);
    let mut privatize_rng = rng_from_seed(privatize_seed);
    let mut second_corrupt_rng = rng_from_seed(second_corrupt_seed);
    let eps = privacy.epsilon();

    let mut intermediate = Vec::new();
    let observed = match setting {
        PipelineSetting::Clean => clean.with_stage(Stage::Observed),
        PipelineSetting::PrivateOnly => {
            randomize_dataset(clean, eps, &mut privatize_rng)?.with_stage(Stage::Observed)
        }
        PipelineSetting::CorruptOnly => {
            corrupt(clean, spec, env, lambda, &mut corrupt_rng)?.with_stage(Stage::Observed)
        }
        PipelineSetting::Ctl => {
            let corrupted = corrupt(clean, spec, env, lambda, &mut corrupt_rng)?;
            let privatized = randomize_dataset(&corrupted, eps, &mut privatize_rng)?;
            intermediate.push(corrupted);
            privatized.with_stage(Stage::Observed)
        }
        PipelineSetting::Ltc => {
            // The adversary inspects the privatized dataset.
            let privatized = randomize_dataset(clean, eps, &mut privatize_rng)?;
            let corrupted = corrupt(&privatized, spec, env, lambda, &mut corrupt_rng)?;
            intermediate.push(privatized);
            corrupted.with_stage(Stage::Observed)
        }
        PipelineSetting::Clc => {
            let (alpha1, alpha2) = spec.clc_budgets()?;
            let first = corrupt_with_alpha(
                clean,
                alpha1,
                spec.strategy,
                env,
                lambda,
                &mut corrupt_rng,
            )?;
            let privatized = randomize_dataset(&first, eps, &mut privatize_rng)?;
            let second = corrupt_with_alpha(
                &privatized,
                alpha2,
                spec.strategy,
                env,
                lambda,
                &mut second_corrupt_rng,
            )?;
            intermediate.push(first);
            intermediate.push(privatized);
            second.with_stage(Stage::Observed)
        }
    };
    Ok(PipelineOutput {
        observed,
        intermediate,
    })
}
