//! Offline RLHF policy construction: the greedy reduction and the pessimistic
//! variant that maximizes a lower confidence bound on the value difference
//! against a reference policy.
//!
//! The inner minimization over the confidence ellipsoid
//! `{theta : ||theta - theta_hat||_{Sigma_hat + lambda I} <= Gamma}` has the
//! closed form `theta_hat^T v - Gamma * ||v||_{(Sigma_hat + lambda I)^{-1}}`.
//! The intersection with the norm ball is dropped; that only deepens the
//! pessimism, which preserves the validity direction of the bound.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::corruption::PipelineSetting;
use crate::env::Environment;
use crate::error::{Error, Result};
use crate::metrics::{feature_expectation, weighted_norm};
pub use crate::metrics::empirical_covariance;
use crate::policy::TabularPolicy;
use crate::privacy::debias_scale;

/// Ellipsoidal confidence set around an estimate.
#[derive(Debug, Clone)]
pub struct ConfidenceSet {
    pub theta_hat: DVector<f64>,
    pub sigma_hat: DMatrix<f64>,
    pub lambda: f64,
    pub gamma_radius: f64,
}

impl ConfidenceSet {
    pub fn new(
        theta_hat: DVector<f64>,
        sigma_hat: DMatrix<f64>,
        lambda: f64,
        gamma_radius: f64,
    ) -> Result<Self> {
        let d = theta_hat.len();
        if sigma_hat.nrows() != d || sigma_hat.ncols() != d {
            return Err(Error::config("covariance dimension mismatch"));
        }
        if (&sigma_hat - sigma_hat.transpose()).norm() > 1e-10 {
            return Err(Error::domain("sigma_hat must be symmetric"));
        }
        if lambda.is_nan() || lambda <= 0.0 {
            return Err(Error::domain("lambda must be positive"));
        }
        if gamma_radius.is_nan() || gamma_radius < 0.0 {
            return Err(Error::domain("gamma radius must be nonnegative"));
        }
        Ok(Self {
            theta_hat,
            sigma_hat,
            lambda,
            gamma_radius,
        })
    }

    fn cholesky(&self) -> Result<Cholesky<f64, Dyn>> {
        let d = self.sigma_hat.nrows();
        let reg = &self.sigma_hat + DMatrix::identity(d, d) * self.lambda;
        reg.cholesky()
            .ok_or_else(|| Error::numerical("Sigma_hat + lambda I is not positive definite"))
    }
}

/// How `alpha` enters the theory bound: one budget, or the split pair used by
/// the corrupt-privatize-corrupt pipeline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CorruptionLevel {
    Single(f64),
    Split { first: f64, second: f64 },
}

/// Inputs of the high-probability radius from the estimation-error bound.
#[derive(Debug, Clone, Copy)]
pub struct BoundInputs {
    pub n: usize,
    pub d: usize,
    pub delta_conf: f64,
    pub lambda: f64,
    pub epsilon: f64,
    pub alpha: CorruptionLevel,
    pub setting: PipelineSetting,
    pub c_const: f64,
    pub b_prime: f64,
}

/// Theory radius
/// `C * (corruption/gamma + (c(eps)/gamma) * sqrt((d + ln(1/delta)) / n) + B' * sqrt(lambda))`
/// with `gamma = 1 / (2 + exp(-B') + exp(B'))` and the corruption term chosen
/// by the pipeline setting: `sqrt(alpha)` when corruption precedes the
/// randomizer, `c(eps) * sqrt(alpha)` when it follows it, and the sum of both
/// pieces under `clc`.
pub fn gamma_bound(bi: &BoundInputs) -> Result<f64> {
    if bi.n == 0 {
        return Err(Error::config("bound needs n >= 1"));
    }
    if bi.delta_conf.is_nan() || bi.delta_conf <= 0.0 || bi.delta_conf >= 1.0 {
        return Err(Error::config("delta_conf must lie in (0, 1)"));
    }
    if bi.c_const.is_nan() || bi.c_const <= 0.0 {
        return Err(Error::config("C must be positive"));
    }
    if bi.lambda < 0.0 {
        return Err(Error::domain("lambda must be nonnegative"));
    }
    let c_eps = debias_scale(bi.epsilon)?;
    let gamma = 1.0 / (2.0 + (-bi.b_prime).exp() + bi.b_prime.exp());
    let corruption = match (bi.setting, bi.alpha) {
        (PipelineSetting::Clean, _) | (PipelineSetting::PrivateOnly, _) => 0.0,
        (PipelineSetting::Ctl, CorruptionLevel::Single(a))
        | (PipelineSetting::CorruptOnly, CorruptionLevel::Single(a)) => a.sqrt(),
        (PipelineSetting::Ltc, CorruptionLevel::Single(a)) => c_eps * a.sqrt(),
        (PipelineSetting::Clc, CorruptionLevel::Split { first, second }) => {
            first.sqrt() + c_eps * second.sqrt()
        }
        (setting, alpha) => {
            return Err(Error::config(format!(
                "corruption level {alpha:?} does not match setting {setting}"
            )))
        }
    };
    let concentration = c_eps * ((bi.d as f64 + (1.0 / bi.delta_conf).ln()) / bi.n as f64).sqrt();
    Ok(bi.c_const * ((corruption + concentration) / gamma + bi.b_prime * bi.lambda.sqrt()))
}

/// Simulation-only radius that puts the true parameter exactly on the
/// ellipsoid boundary: `||theta_hat - theta_star||_{Sigma_hat + lambda I}`.
pub fn oracle_gamma(
    theta_hat: &DVector<f64>,
    theta_star: &DVector<f64>,
    sigma_hat: &DMatrix<f64>,
    lambda: f64,
) -> Result<f64> {
    weighted_norm(&(theta_hat - theta_star), sigma_hat, lambda)
}

/// Deterministic argmax policy for the estimated reward; ties go to the
/// lowest action index.
pub fn greedy_policy(theta_hat: &DVector<f64>, env: &Environment) -> TabularPolicy {
    let actions: Vec<usize> = (0..env.num_states())
        .map(|s| {
            let mut best = 0;
            let mut best_score = theta_hat.dot(env.feature(s, 0));
            for a in 1..env.num_actions() {
                let score = theta_hat.dot(env.feature(s, a));
                if score > best_score {
                    best = a;
                    best_score = score;
                }
            }
            best
        })
        .collect();
    TabularPolicy::deterministic(&actions, env.num_actions())
        .expect("argmax actions are in range")
}

/// Pessimistic value difference
/// `J_hat(pi) = min over the ellipsoid of theta^T (E[phi(s, pi)] - E[phi(s, pi_ref)])`.
pub fn pessimistic_value(
    pi: &TabularPolicy,
    cset: &ConfidenceSet,
    pi_ref: &TabularPolicy,
    env: &Environment,
) -> Result<f64> {
    let chol = cset.cholesky()?;
    let v = feature_expectation(pi, env) - feature_expectation(pi_ref, env);
    Ok(pessimistic_value_of_diff(&v, cset, &chol))
}

fn pessimistic_value_of_diff(
    v: &DVector<f64>,
    cset: &ConfidenceSet,
    chol: &Cholesky<f64, Dyn>,
) -> f64 {
    let solved = chol.solve(v);
    let inv_norm = solved.dot(v).max(0.0).sqrt();
    cset.theta_hat.dot(v) - cset.gamma_radius * inv_norm
}

/// Search mode for the pessimistic policy.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PolicySearch {
    /// Scan every deterministic policy, then refine with a conditional-
    /// gradient pass over stochastic mixtures (the maximizer of a concave
    /// objective need not be a vertex). Requires `A^S <= 1e6`.
    Enumerate,
    /// Frank-Wolfe over the product of simplices with the classic `2/(k+2)`
    /// step, returning the best iterate.
    FrankWolfe(usize),
}

const ENUMERATE_LIMIT: u64 = 1_000_000;
const FW_REFINE_STEPS: usize = 200;

/// Maximizes the pessimistic value difference. The reference policy and the
/// greedy policy are always evaluated as candidates, so the returned policy
/// never scores below either.
pub fn pessimistic_policy(
    cset: &ConfidenceSet,
    pi_ref: &TabularPolicy,
    env: &Environment,
    mode: PolicySearch,
) -> Result<TabularPolicy> {
    let chol = cset.cholesky()?;
    let ref_feat = feature_expectation(pi_ref, env);
    let score = |pi: &TabularPolicy| -> f64 {
        let v = feature_expectation(pi, env) - &ref_feat;
        pessimistic_value_of_diff(&v, cset, &chol)
    };

    let mut best = pi_ref.clone();
    let mut best_score = score(&best);
    let consider = |pi: TabularPolicy, s: f64, best: &mut TabularPolicy, bs: &mut f64| {
        if s > *bs {
            *best = pi;
            *bs = s;
        }
    };

    let greedy = greedy_policy(&cset.theta_hat, env);
    let greedy_score = score(&greedy);
    consider(greedy.clone(), greedy_score, &mut best, &mut best_score);

    let fw_steps = match mode {
        PolicySearch::Enumerate => {
            let mut count: u64 = 1;
            for _ in 0..env.num_states() {
                count = count.saturating_mul(env.num_actions() as u64);
                if count > ENUMERATE_LIMIT {
                    return Err(Error::config(format!(
                        "A^S exceeds {ENUMERATE_LIMIT}; use the frank-wolfe mode"
                    )));
                }
            }
            let s_count = env.num_states();
            let a_count = env.num_actions();
            let mut actions = vec![0usize; s_count];
            loop {
                let pi = TabularPolicy::deterministic(&actions, a_count)?;
                let sc = score(&pi);
                consider(pi, sc, &mut best, &mut best_score);
                // Odometer over action assignments.
                let mut pos = 0;
                loop {
                    if pos == s_count {
                        break;
                    }
                    actions[pos] += 1;
                    if actions[pos] < a_count {
                        break;
                    }
                    actions[pos] = 0;
                    pos += 1;
                }
                if pos == s_count {
                    break;
                }
            }
            FW_REFINE_STEPS
        }
        PolicySearch::FrankWolfe(k) => k,
    };

    // Conditional-gradient ascent from the best candidate found so far.
    let mut current = best.clone();
    for k in 0..fw_steps {
        let v = feature_expectation(&current, env) - &ref_feat;
        let solved = chol.solve(&v);
        let inv_norm = solved.dot(&v).max(0.0).sqrt();
        // Gradient of theta_hat^T v - Gamma ||v||_{M^-1} in v; guard the
        // nondifferentiable point v = 0.
        let grad_v = if inv_norm > 1e-12 {
            &cset.theta_hat - &solved * (cset.gamma_radius / inv_norm)
        } else {
            cset.theta_hat.clone()
        };
        // The linear maximizer over the product of simplices is the per-state
        // argmax of the action scores rho(s) * <grad_v, phi(s, a)>.
        let vertex = greedy_policy(&grad_v, env);
        let step = 2.0 / (k as f64 + 2.0);
        current = current.mix(&vertex, step);
        let sc = score(&current);
        consider(current.clone(), sc, &mut best, &mut best_score);
    }

    Ok(best)
}
