//! Linear preference environments, Bradley-Terry labels, and dataset sampling.
//!
//! An [`Environment`] fixes a feature table `phi(s, a)` in the unit ball, a
//! reward parameter `theta_star` on the zero-sum sphere of radius at most `B`,
//! and a state distribution `rho`. Preference records compare two actions in
//! a common state; the label is 1 when the second action wins, drawn from the
//! Bradley-Terry probability of the reward difference.

use nalgebra::DVector;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy::TabularPolicy;
use crate::rng::SimRng;

const SUM_TOL: f64 = 1e-12;
// Slack for invariants re-checked after JSON round trips.
const NORM_TOL: f64 = 1e-9;

/// Numerically stable logistic sigmoid.
pub fn sigmoid(u: f64) -> f64 {
    if u >= 0.0 {
        1.0 / (1.0 + (-u).exp())
    } else {
        let e = u.exp();
        e / (1.0 + e)
    }
}

/// Bradley-Terry probability that the item with reward `r_chosen` beats the
/// one with reward `r_other`: `sigmoid(r_chosen - r_other)`.
pub fn bt_prob(r_chosen: f64, r_other: f64) -> Result<f64> {
    if !r_chosen.is_finite() || !r_other.is_finite() {
        return Err(Error::domain(format!(
            "bt_prob needs finite rewards, got ({r_chosen}, {r_other})"
        )));
    }
    Ok(sigmoid(r_chosen - r_other))
}

/// Centers `raw` to the zero-sum hyperplane and rescales it to norm exactly
/// `bound`. Errors when centering annihilates the vector (constant input).
pub fn project_theta_star(raw: &DVector<f64>, bound: f64) -> Result<DVector<f64>> {
    if raw.len() < 2 {
        return Err(Error::config("theta_star needs dimension >= 2"));
    }
    if !bound.is_finite() || bound <= 0.0 {
        return Err(Error::domain(format!("norm bound must be positive, got {bound}")));
    }
    let mean = raw.mean();
    let centered = raw.map(|v| v - mean);
    let norm = centered.norm();
    if norm <= 1e-12 {
        return Err(Error::domain(
            "cannot normalize: vector is constant after centering",
        ));
    }
    Ok(centered * (bound / norm))
}

/// JSON document form of [`Environment`]:
/// `{d, S, A, B, rho: [...], theta_star: [...], features: [[[...]]]}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EnvironmentSpec {
    pub d: usize,
    #[serde(rename = "S")]
    pub num_states: usize,
    #[serde(rename = "A")]
    pub num_actions: usize,
    #[serde(rename = "B")]
    pub norm_bound: f64,
    pub rho: Vec<f64>,
    pub theta_star: Vec<f64>,
    /// `features[s][a]` is the d-vector `phi(s, a)`.
    pub features: Vec<Vec<Vec<f64>>>,
}

/// Finite state/action environment with linear reward `<theta_star, phi(s,a)>`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "EnvironmentSpec", into = "EnvironmentSpec")]
pub struct Environment {
    dim: usize,
    num_states: usize,
    num_actions: usize,
    norm_bound: f64,
    rho: Vec<f64>,
    theta_star: DVector<f64>,
    // Indexed by `state * num_actions + action`.
    features: Vec<DVector<f64>>,
}

impl Environment {
    /// Validates every invariant: features in the unit ball, `rho` a
    /// probability vector, `theta_star` zero-sum with norm at most `B`.
    pub fn new(
        features: Vec<Vec<DVector<f64>>>,
        theta_star: DVector<f64>,
        rho: Vec<f64>,
        norm_bound: f64,
    ) -> Result<Self> {
        let num_states = features.len();
        if num_states == 0 {
            return Err(Error::config("environment needs at least one state"));
        }
        let num_actions = features[0].len();
        if num_actions == 0 {
            return Err(Error::config("environment needs at least one action"));
        }
        let dim = theta_star.len();
        if dim < 2 {
            return Err(Error::config("feature dimension must be >= 2"));
        }
        if rho.len() != num_states {
            return Err(Error::config(format!(
                "rho has {} entries for {} states",
                rho.len(),
                num_states
            )));
        }
        if rho.iter().any(|&p| !p.is_finite() || p < 0.0) {
            return Err(Error::domain("rho entries must be nonnegative"));
        }
        let rho_sum: f64 = rho.iter().sum();
        if (rho_sum - 1.0).abs() > SUM_TOL {
            return Err(Error::domain(format!("rho sums to {rho_sum}, expected 1")));
        }
        if !norm_bound.is_finite() || norm_bound <= 0.0 {
            return Err(Error::domain("norm bound B must be positive"));
        }
        if theta_star.iter().sum::<f64>().abs() > SUM_TOL {
            return Err(Error::domain("theta_star must be zero-sum"));
        }
        if theta_star.norm() > norm_bound + NORM_TOL {
            return Err(Error::domain(format!(
                "||theta_star|| = {} exceeds B = {norm_bound}",
                theta_star.norm()
            )));
        }
        let mut flat = Vec::with_capacity(num_states * num_actions);
        for (s, row) in features.into_iter().enumerate() {
            if row.len() != num_actions {
                return Err(Error::config(format!(
                    "state {s} has {} feature rows, expected {num_actions}",
                    row.len()
                )));
            }
            for (a, phi) in row.into_iter().enumerate() {
                if phi.len() != dim {
                    return Err(Error::config(format!(
                        "phi({s}, {a}) has dimension {}, expected {dim}",
                        phi.len()
                    )));
                }
                if phi.norm() > 1.0 + NORM_TOL {
                    return Err(Error::domain(format!(
                        "||phi({s}, {a})|| = {} exceeds 1",
                        phi.norm()
                    )));
                }
                flat.push(phi);
            }
        }
        Ok(Self {
            dim,
            num_states,
            num_actions,
            norm_bound,
            rho,
            theta_star,
            features: flat,
        })
    }

    /// Random instance: features uniform in the unit ball, uniform `rho`, and
    /// `theta_star` a projected standard normal of norm exactly `bound`.
    pub fn random(
        rng: &mut SimRng,
        dim: usize,
        num_states: usize,
        num_actions: usize,
        bound: f64,
    ) -> Result<Self> {
        let raw: DVector<f64> =
            DVector::from_fn(dim, |_, _| StandardNormal.sample(rng));
        let theta = project_theta_star(&raw, bound)?;
        Self::random_with_theta(rng, dim, num_states, num_actions, bound, theta)
    }

    /// Random features with an explicitly supplied reward parameter.
    pub fn random_with_theta(
        rng: &mut SimRng,
        dim: usize,
        num_states: usize,
        num_actions: usize,
        bound: f64,
        theta_star: DVector<f64>,
    ) -> Result<Self> {
        let mut features = Vec::with_capacity(num_states);
        for _ in 0..num_states {
            let mut row = Vec::with_capacity(num_actions);
            for _ in 0..num_actions {
                row.push(sample_unit_ball(rng, dim));
            }
            features.push(row);
        }
        let rho = vec![1.0 / num_states as f64; num_states];
        Self::new(features, theta_star, rho, bound)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn norm_bound(&self) -> f64 {
        self.norm_bound
    }

    pub fn rho(&self) -> &[f64] {
        &self.rho
    }

    pub fn theta_star(&self) -> &DVector<f64> {
        &self.theta_star
    }

    /// Replaces the reward parameter, revalidating the `Theta_B` invariants.
    pub fn with_theta_star(mut self, theta_star: DVector<f64>, bound: f64) -> Result<Self> {
        if theta_star.len() != self.dim {
            return Err(Error::config("theta_star dimension mismatch"));
        }
        if theta_star.iter().sum::<f64>().abs() > SUM_TOL {
            return Err(Error::domain("theta_star must be zero-sum"));
        }
        if !bound.is_finite() || bound <= 0.0 || theta_star.norm() > bound + NORM_TOL {
            return Err(Error::domain("||theta_star|| exceeds the stored bound"));
        }
        self.theta_star = theta_star;
        self.norm_bound = bound;
        Ok(self)
    }

    pub fn feature(&self, state: usize, action: usize) -> &DVector<f64> {
        &self.features[state * self.num_actions + action]
    }

    /// `x = phi(s, winner_candidate) - phi(s, other)`; the difference feature
    /// of the record `(s, other, winner_candidate)`.
    pub fn diff_feature(&self, state: usize, action_second: usize, action_first: usize) -> DVector<f64> {
        self.feature(state, action_second) - self.feature(state, action_first)
    }

    pub fn reward(&self, state: usize, action: usize) -> f64 {
        self.theta_star.dot(self.feature(state, action))
    }
}

fn sample_unit_ball(rng: &mut SimRng, dim: usize) -> DVector<f64> {
    let g: DVector<f64> = DVector::from_fn(dim, |_, _| StandardNormal.sample(rng));
    let norm = g.norm();
    if norm == 0.0 {
        return DVector::zeros(dim);
    }
    let u: f64 = rng.gen();
    let radius = u.powf(1.0 / dim as f64);
    g * (radius / norm)
}

impl TryFrom<EnvironmentSpec> for Environment {
    type Error = Error;

    fn try_from(spec: EnvironmentSpec) -> Result<Self> {
        if spec.features.len() != spec.num_states {
            return Err(Error::config("features outer length must equal S"));
        }
        if spec.theta_star.len() != spec.d {
            return Err(Error::config("theta_star length must equal d"));
        }
        let features = spec
            .features
            .into_iter()
            .map(|row| row.into_iter().map(DVector::from_vec).collect())
            .collect();
        let env = Environment::new(
            features,
            DVector::from_vec(spec.theta_star),
            spec.rho,
            spec.norm_bound,
        )?;
        if env.num_actions != spec.num_actions {
            return Err(Error::config("features inner length must equal A"));
        }
        if env.dim != spec.d {
            return Err(Error::config("feature dimension must equal d"));
        }
        Ok(env)
    }
}

impl From<Environment> for EnvironmentSpec {
    fn from(env: Environment) -> Self {
        let features = (0..env.num_states)
            .map(|s| {
                (0..env.num_actions)
                    .map(|a| env.feature(s, a).iter().copied().collect())
                    .collect()
            })
            .collect();
        EnvironmentSpec {
            d: env.dim,
            num_states: env.num_states,
            num_actions: env.num_actions,
            norm_bound: env.norm_bound,
            rho: env.rho,
            theta_star: env.theta_star.iter().copied().collect(),
            features,
        }
    }
}

/// Where a dataset sits in the privacy/corruption pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Clean,
    Corrupted,
    Privatized,
    Observed,
}

/// One preference comparison. `label = 1` means `action_second` won.
#[derive(Debug, Clone, PartialEq)]
pub struct PreferenceRecord {
    pub state: usize,
    pub action_first: usize,
    pub action_second: usize,
    /// `phi(s, action_second) - phi(s, action_first)`.
    pub diff_feature: DVector<f64>,
    pub label: u8,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PreferenceDataset {
    pub records: Vec<PreferenceRecord>,
    pub stage: Stage,
}

impl PreferenceDataset {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.records.first().map_or(0, |r| r.diff_feature.len())
    }

    pub fn labels(&self) -> Vec<u8> {
        self.records.iter().map(|r| r.label).collect()
    }

    /// Same records with new labels and a new stage tag.
    pub fn with_labels(&self, labels: &[u8], stage: Stage) -> Result<Self> {
        if labels.len() != self.records.len() {
            return Err(Error::config("label count mismatch"));
        }
        let records = self
            .records
            .iter()
            .zip(labels)
            .map(|(r, &label)| PreferenceRecord { label, ..r.clone() })
            .collect();
        Ok(Self { records, stage })
    }

    pub fn with_stage(&self, stage: Stage) -> Self {
        Self {
            records: self.records.clone(),
            stage,
        }
    }

    /// Number of positions at which the label vectors differ.
    pub fn label_hamming(&self, other: &Self) -> usize {
        self.records
            .iter()
            .zip(&other.records)
            .filter(|(a, b)| a.label != b.label)
            .count()
    }
}

/// How the action pair of each record is drawn given the state.
#[derive(Debug, Clone)]
pub enum BehaviorRule {
    /// Ordered pair of distinct actions, uniform over the `A * (A - 1)` choices.
    UniformDistinctPairs,
    /// `action_first` from `first`, `action_second` from `second`, independent.
    PolicyPair {
        first: TabularPolicy,
        second: TabularPolicy,
    },
}

/// Draws `n` i.i.d. records: `s ~ rho`, an action pair per `behavior`, and a
/// label that is 1 with probability `sigmoid(<theta_star, x>)`.
pub fn sample_dataset(
    env: &Environment,
    n: usize,
    behavior: &BehaviorRule,
    rng: &mut SimRng,
) -> Result<PreferenceDataset> {
    if n == 0 {
        return Err(Error::config("dataset size must be >= 1"));
    }
    if matches!(behavior, BehaviorRule::UniformDistinctPairs) && env.num_actions() < 2 {
        return Err(Error::config(
            "uniform distinct pairs need at least two actions",
        ));
    }
    let mut records = Vec::with_capacity(n);
    for _ in 0..n {
        let state = sample_categorical(env.rho(), rng);
        let (action_first, action_second) = match behavior {
            BehaviorRule::UniformDistinctPairs => {
                let a = env.num_actions();
                let k = rng.gen_range(0..a * (a - 1));
                let first = k / (a - 1);
                let r = k % (a - 1);
                let second = if r >= first { r + 1 } else { r };
                (first, second)
            }
            BehaviorRule::PolicyPair { first, second } => (
                first.sample_action(state, rng),
                second.sample_action(state, rng),
            ),
        };
        let diff_feature = env.diff_feature(state, action_second, action_first);
        let p = sigmoid(env.theta_star().dot(&diff_feature));
        let label = u8::from(rng.gen::<f64>() < p);
        records.push(PreferenceRecord {
            state,
            action_first,
            action_second,
            diff_feature,
            label,
        });
    }
    Ok(PreferenceDataset {
        records,
        stage: Stage::Clean,
    })
}

fn sample_categorical(weights: &[f64], rng: &mut SimRng) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, &w) in weights.iter().enumerate() {
        acc += w;
        if u < acc {
            return i;
        }
    }
    weights.len() - 1
}
