//! Log-linear direct preference optimization.
//!
//! For the log-linear policy class, fitting the preference data with the
//! shifted-and-scaled logistic loss estimates `beta * (theta_pi - theta_sft)`,
//! where `theta_pi` parameterizes the KL-regularized optimal policy. The
//! policy parameter is then recovered as `theta_hat / beta + theta_sft` and
//! evaluated through the softmax.

use nalgebra::{DMatrix, DVector};

use crate::env::{Environment, PreferenceDataset};
use crate::error::{Error, Result};
use crate::estimator::{estimate, ConstraintSet, EstimateReport, SolverConfig};
use crate::policy::TabularPolicy;

#[derive(Debug, Clone)]
pub struct DpoConfig {
    pub beta: f64,
    pub theta_sft: DVector<f64>,
}

impl DpoConfig {
    pub fn new(beta: f64, theta_sft: DVector<f64>) -> Result<Self> {
        if !beta.is_finite() || beta <= 0.0 {
            return Err(Error::domain(format!("beta must be positive, got {beta}")));
        }
        if theta_sft.iter().any(|v| !v.is_finite()) {
            return Err(Error::domain("theta_sft must be finite"));
        }
        if theta_sft.iter().sum::<f64>().abs() > 1e-10 {
            return Err(Error::domain("theta_sft must be zero-sum"));
        }
        Ok(Self { beta, theta_sft })
    }

    /// Uniform SFT policy: `theta_sft = 0`.
    pub fn with_uniform_sft(beta: f64, dim: usize) -> Result<Self> {
        Self::new(beta, DVector::zeros(dim))
    }
}

/// Softmax policy `pi(a | s) = exp(<theta, phi(s,a)>) / sum_a' exp(...)`,
/// computed with max-subtraction.
pub fn log_linear_policy(theta: &DVector<f64>, env: &Environment) -> TabularPolicy {
    let s_count = env.num_states();
    let a_count = env.num_actions();
    let mut probs = DMatrix::zeros(s_count, a_count);
    for s in 0..s_count {
        let scores: Vec<f64> = (0..a_count).map(|a| theta.dot(env.feature(s, a))).collect();
        let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for (a, &score) in scores.iter().enumerate() {
            let e = (score - max).exp();
            probs[(s, a)] = e;
            sum += e;
        }
        for a in 0..a_count {
            probs[(s, a)] /= sum;
        }
    }
    TabularPolicy::from_matrix(probs).expect("softmax rows are stochastic")
}

/// Inverts the DPO reparameterization: `theta_hat / beta + theta_sft`.
pub fn dpo_recover(theta_hat: &DVector<f64>, cfg: &DpoConfig) -> DVector<f64> {
    theta_hat / cfg.beta + &cfg.theta_sft
}

#[derive(Debug, Clone)]
pub struct DpoOutcome {
    pub report: EstimateReport,
    pub theta_recovered: DVector<f64>,
    pub policy: TabularPolicy,
}

/// Full direct route: estimate with radius `B' = 2 * beta * B`, recover the
/// policy parameter, return the softmax policy.
pub fn dpo_pipeline(
    ds: &PreferenceDataset,
    env: &Environment,
    cfg: &DpoConfig,
    epsilon: f64,
    solver: &SolverConfig,
) -> Result<DpoOutcome> {
    if cfg.theta_sft.len() != env.dim() {
        return Err(Error::config("theta_sft dimension mismatch"));
    }
    if cfg.theta_sft.norm() > env.norm_bound() + 1e-9 {
        return Err(Error::config("theta_sft must lie in the parameter ball"));
    }
    let cs = ConstraintSet::new(2.0 * cfg.beta * env.norm_bound(), env.dim())?;
    let report = estimate(ds, epsilon, &cs, solver)?;
    let theta_recovered = dpo_recover(&report.theta_hat, cfg);
    let policy = log_linear_policy(&theta_recovered, env);
    Ok(DpoOutcome {
        report,
        theta_recovered,
        policy,
    })
}

/// `E_{s ~ rho} KL(p1(.|s) || p2(.|s))` with the `0 ln 0 = 0` convention.
/// Errors when `p1` puts mass where `p2` has none.
pub fn kl_divergence(p1: &TabularPolicy, p2: &TabularPolicy, rho: &[f64]) -> Result<f64> {
    if p1.num_states() != p2.num_states()
        || p1.num_actions() != p2.num_actions()
        || rho.len() != p1.num_states()
    {
        return Err(Error::config("kl_divergence shape mismatch"));
    }
    let mut total = 0.0;
    for (s, &w) in rho.iter().enumerate() {
        if w == 0.0 {
            continue;
        }
        let mut state_kl = 0.0;
        for a in 0..p1.num_actions() {
            let p = p1.prob(s, a);
            if p == 0.0 {
                continue;
            }
            let q = p2.prob(s, a);
            if q == 0.0 {
                return Err(Error::domain(format!(
                    "support violation at state {s}, action {a}"
                )));
            }
            state_kl += p * (p / q).ln();
        }
        total += w * state_kl;
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{sample_dataset, sigmoid, BehaviorRule, Environment, project_theta_star};
    use crate::metrics::suboptimality;
    use crate::rng::rng_from_seed;
    use approx::assert_abs_diff_eq;
    use rand_distr::{Distribution, StandardNormal};

    fn env_fixture(seed: u64, d: usize, s: usize, a: usize) -> Environment {
        let mut rng = rng_from_seed(seed);
        Environment::random(&mut rng, d, s, a, 1.0).unwrap()
    }

    #[test]
    fn softmax_trivials() {
        let env = env_fixture(1, 4, 3, 4);
        let uni = log_linear_policy(&DVector::zeros(4), &env);
        for s in 0..3 {
            for a in 0..4 {
                assert_abs_diff_eq!(uni.prob(s, a), 0.25, epsilon = 1e-15);
            }
        }

        // Large temperature scaling concentrates on the argmax.
        let theta = env.theta_star() * 1000.0;
        let sharp = log_linear_policy(&theta, &env);
        for s in 0..3 {
            let best = (0..4)
                .max_by(|&a, &b| env.reward(s, a).partial_cmp(&env.reward(s, b)).unwrap())
                .unwrap();
            assert!(sharp.prob(s, best) >= 1.0 - 1e-6);
        }
    }

    #[test]
    fn softmax_rows_are_stochastic_and_shift_invariant() {
        let env = env_fixture(2, 4, 3, 3);
        let mut rng = rng_from_seed(3);
        for _ in 0..20 {
            let raw: DVector<f64> = DVector::from_fn(4, |_, _| StandardNormal.sample(&mut rng));
            let pi = log_linear_policy(&raw, &env);
            for s in 0..3 {
                let sum: f64 = (0..3).map(|a| pi.prob(s, a)).sum();
                assert_abs_diff_eq!(sum, 1.0, epsilon = 1e-12);
            }
            // Per-state constant shifts of the action scores leave the rows
            // unchanged: recompute through a manual softmax with shifts.
            for s in 0..3 {
                let shift: f64 = StandardNormal.sample(&mut rng);
                let scores: Vec<f64> = (0..3)
                    .map(|a| raw.dot(env.feature(s, a)) + shift)
                    .collect();
                let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let exps: Vec<f64> = scores.iter().map(|v| (v - max).exp()).collect();
                let total: f64 = exps.iter().sum();
                for (a, e) in exps.iter().enumerate() {
                    assert_abs_diff_eq!(pi.prob(s, a), e / total, epsilon = 1e-12);
                }
            }
        }
    }

    #[test]
    fn recover_trivials() {
        let cfg = DpoConfig::with_uniform_sft(0.1, 2).unwrap();
        let rec = dpo_recover(&DVector::from_vec(vec![0.2, -0.2]), &cfg);
        assert_abs_diff_eq!(rec[0], 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(rec[1], -2.0, epsilon = 1e-12);

        // theta_hat = 0 falls back to the SFT parameter.
        let sft = DVector::from_vec(vec![0.3, -0.3]);
        let cfg = DpoConfig::new(0.5, sft.clone()).unwrap();
        assert_eq!(dpo_recover(&DVector::zeros(2), &cfg), sft);

        // Exact inverse of the reparameterization.
        let theta_star = DVector::from_vec(vec![0.4, -0.4]);
        let beta = 0.7;
        let true_param = (&theta_star - &sft) * beta;
        let cfg = DpoConfig::new(beta, sft).unwrap();
        assert!((dpo_recover(&true_param, &cfg) - theta_star).norm() < 1e-12);
    }

    #[test]
    fn scaling_beta_with_theta_hat_changes_nothing() {
        let env = env_fixture(4, 4, 3, 3);
        let sft = DVector::zeros(4);
        let theta_hat: DVector<f64> =
            project_theta_star(&DVector::from_vec(vec![1.0, -0.3, 0.2, 0.4]), 0.5).unwrap();
        for t in [2.0, 10.0] {
            let a = dpo_recover(&theta_hat, &DpoConfig::new(0.1, sft.clone()).unwrap());
            let b = dpo_recover(&(&theta_hat * t), &DpoConfig::new(0.1 * t, sft.clone()).unwrap());
            assert!((&a - &b).norm() < 1e-12);
            let pa = log_linear_policy(&a, &env);
            let pb = log_linear_policy(&b, &env);
            assert!((pa.matrix() - pb.matrix()).norm() < 1e-12);
        }
    }

    #[test]
    fn realizability_identity() {
        // Labels generated from the reward beta * ln(pi_star / pi_sft)
        // differences follow the logistic model in the difference features
        // with parameter beta * (theta_pi - theta_sft).
        let env = env_fixture(5, 4, 3, 3);
        let mut rng = rng_from_seed(6);
        let theta_pi: DVector<f64> =
            project_theta_star(&DVector::from_fn(4, |_, _| StandardNormal.sample(&mut rng)), 1.0)
                .unwrap();
        let theta_sft: DVector<f64> =
            project_theta_star(&DVector::from_fn(4, |_, _| StandardNormal.sample(&mut rng)), 0.8)
                .unwrap();
        let beta = 0.3;
        let pi_star = log_linear_policy(&theta_pi, &env);
        let pi_sft = log_linear_policy(&theta_sft, &env);
        let theta_true = (&theta_pi - &theta_sft) * beta;
        for s in 0..3 {
            for a0 in 0..3 {
                for a1 in 0..3 {
                    let implicit = beta
                        * ((pi_star.prob(s, a1) / pi_sft.prob(s, a1)).ln()
                            - (pi_star.prob(s, a0) / pi_sft.prob(s, a0)).ln());
                    let x = env.diff_feature(s, a1, a0);
                    let direct = theta_true.dot(&x);
                    assert_abs_diff_eq!(sigmoid(implicit), sigmoid(direct), epsilon = 1e-12);
                }
            }
        }
    }

    #[test]
    fn pipeline_is_consistent_on_clean_data() {
        // Reward parameter realizable for beta = 1, sft uniform; at n = 30k
        // the learned policy should be close to the KL-regularized optimum.
        let mut rng = rng_from_seed(7);
        let env = env_fixture(8, 4, 3, 3);
        let cfg = DpoConfig::with_uniform_sft(1.0, 4).unwrap();
        let ds = sample_dataset(&env, 30_000, &BehaviorRule::UniformDistinctPairs, &mut rng)
            .unwrap();
        let out = dpo_pipeline(&ds, &env, &cfg, f64::INFINITY, &SolverConfig::default()).unwrap();
        let theta_pi = env.theta_star() / cfg.beta + &cfg.theta_sft;
        let pi_star = log_linear_policy(&theta_pi, &env);
        let gap = suboptimality(&out.policy, &pi_star, &env);
        assert!(gap.abs() <= 0.1, "gap = {gap}");
        assert!((&out.theta_recovered - &theta_pi).norm() < 0.2);
    }

    #[test]
    fn degenerate_pipeline_settings_agree() {
        use crate::corruption::{apply_pipeline, CorruptionSpec, CorruptionStrategy, PipelineSetting};
        use crate::privacy::PrivacyParams;
        let env = env_fixture(9, 4, 3, 3);
        let mut rng = rng_from_seed(10);
        let clean =
            sample_dataset(&env, 2000, &BehaviorRule::UniformDistinctPairs, &mut rng).unwrap();
        let cfg = DpoConfig::with_uniform_sft(0.5, 4).unwrap();
        let privacy = PrivacyParams::new(1.0).unwrap();
        let spec = CorruptionSpec::new(0.0, CorruptionStrategy::RandomFlip).unwrap();
        let mut pipelines = Vec::new();
        for setting in [PipelineSetting::Ctl, PipelineSetting::PrivateOnly] {
            let out = apply_pipeline(
                &clean,
                setting,
                &privacy,
                &spec,
                &env,
                0.05,
                &mut rng_from_seed(11),
            )
            .unwrap();
            let dpo = dpo_pipeline(&out.observed, &env, &cfg, 1.0, &SolverConfig::default())
                .unwrap();
            pipelines.push(dpo.policy);
        }
        assert_eq!(pipelines[0].matrix(), pipelines[1].matrix());
    }

    #[test]
    fn kl_divergence_cases() {
        let p = TabularPolicy::deterministic(&[0], 2).unwrap();
        let q = TabularPolicy::uniform(1, 2);
        assert_eq!(kl_divergence(&p, &p, &[1.0]).unwrap(), 0.0);
        assert_abs_diff_eq!(
            kl_divergence(&p, &q, &[1.0]).unwrap(),
            2.0_f64.ln(),
            epsilon = 1e-14
        );
        // Support violation.
        assert!(kl_divergence(&q, &p, &[1.0]).is_err());

        // Gibbs: nonnegativity on random pairs.
        let mut rng = rng_from_seed(12);
        use rand::Rng;
        for _ in 0..50 {
            let mk = |rng: &mut crate::rng::SimRng| {
                let mut row: Vec<f64> = (0..4).map(|_| rng.gen_range(0.01..1.0)).collect();
                let sum: f64 = row.iter().sum();
                row.iter_mut().for_each(|v| *v /= sum);
                TabularPolicy::from_matrix(DMatrix::from_row_slice(1, 4, &row)).unwrap()
            };
            let p1 = mk(&mut rng);
            let p2 = mk(&mut rng);
            assert!(kl_divergence(&p1, &p2, &[1.0]).unwrap() >= 0.0);
        }
    }
}
