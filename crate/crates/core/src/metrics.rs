//! Ground-truth evaluation quantities: policy values, suboptimality gaps,
//! difference-feature covariances, the relative condition number, coverage,
//! and weighted norms.

use nalgebra::{DMatrix, DVector};

use crate::env::{BehaviorRule, Environment, PreferenceDataset};
use crate::error::{Error, Result};
use crate::policy::TabularPolicy;

/// Rank tolerance for the range projection in the condition number.
const RANK_TOL: f64 = 1e-10;
/// Mass threshold outside the reference range before reporting infinity.
const LEAK_TOL: f64 = 1e-8;

/// Empirical second moment of the difference features:
/// `Sigma_hat = (1/n) sum_i x_i x_i^T`.
pub fn empirical_covariance(ds: &PreferenceDataset) -> Result<DMatrix<f64>> {
    if ds.is_empty() {
        return Err(Error::domain("empirical covariance of an empty dataset"));
    }
    let d = ds.dim();
    let mut sigma = DMatrix::zeros(d, d);
    for r in &ds.records {
        sigma.syger(1.0, &r.diff_feature, &r.diff_feature, 1.0);
    }
    sigma /= ds.len() as f64;
    // syger fills the lower triangle; mirror it.
    for i in 0..d {
        for j in (i + 1)..d {
            sigma[(i, j)] = sigma[(j, i)];
        }
    }
    Ok(sigma)
}

/// `E_{s ~ rho} [phi(s, pi(s))]`, the policy-averaged feature vector.
pub fn feature_expectation(pi: &TabularPolicy, env: &Environment) -> DVector<f64> {
    let mut v = DVector::zeros(env.dim());
    for s in 0..env.num_states() {
        let w = env.rho()[s];
        if w == 0.0 {
            continue;
        }
        for a in 0..env.num_actions() {
            let p = pi.prob(s, a);
            if p > 0.0 {
                v.axpy(w * p, env.feature(s, a), 1.0);
            }
        }
    }
    v
}

/// `J(pi) = E_{s ~ rho, a ~ pi}[ <theta_star, phi(s, a)> ]`.
pub fn policy_value(pi: &TabularPolicy, env: &Environment) -> f64 {
    env.theta_star().dot(&feature_expectation(pi, env))
}

/// `J(pi_dagger) - J(pi_hat)`; negative when the learned policy wins.
pub fn suboptimality(pi_hat: &TabularPolicy, pi_dagger: &TabularPolicy, env: &Environment) -> f64 {
    policy_value(pi_dagger, env) - policy_value(pi_hat, env)
}

/// Difference-feature covariance
/// `E_{s ~ rho, a ~ pi1, a' ~ pi2} [psi psi^T]` with `psi = phi(s,a) - phi(s,a')`.
pub fn diff_covariance(pi1: &TabularPolicy, pi2: &TabularPolicy, env: &Environment) -> DMatrix<f64> {
    let d = env.dim();
    let mut sigma = DMatrix::zeros(d, d);
    for s in 0..env.num_states() {
        let w = env.rho()[s];
        if w == 0.0 {
            continue;
        }
        for a in 0..env.num_actions() {
            let p1 = pi1.prob(s, a);
            if p1 == 0.0 {
                continue;
            }
            for a2 in 0..env.num_actions() {
                let p2 = pi2.prob(s, a2);
                if p2 == 0.0 || a == a2 {
                    continue;
                }
                let psi = env.feature(s, a) - env.feature(s, a2);
                sigma.syger(w * p1 * p2, &psi, &psi, 1.0);
            }
        }
    }
    for i in 0..d {
        for j in (i + 1)..d {
            sigma[(i, j)] = sigma[(j, i)];
        }
    }
    sigma
}

fn symmetric_eigen(m: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let eig = m.clone().symmetric_eigen();
    (eig.eigenvalues, eig.eigenvectors)
}

pub fn max_eigenvalue(m: &DMatrix<f64>) -> f64 {
    symmetric_eigen(m).0.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    symmetric_eigen(m).0.iter().copied().fold(f64::INFINITY, f64::min)
}

/// Relative condition number
/// `kappa = sup_w (w^T Sigma_dagger w) / (w^T Sigma_sft w)` with
/// `Sigma_dagger = diff_covariance(pi_dagger, pi_ref)` and
/// `Sigma_sft = diff_covariance(pi_sft, pi_sft)`.
///
/// The supremum is taken over the range of `Sigma_sft`; if `Sigma_dagger`
/// carries more than `1e-8` trace mass outside that range the ratio is
/// unbounded and `+inf` is returned.
pub fn relative_condition_number(
    pi_dagger: &TabularPolicy,
    pi_ref: &TabularPolicy,
    pi_sft: &TabularPolicy,
    env: &Environment,
) -> f64 {
    let sigma_dagger = diff_covariance(pi_dagger, pi_ref, env);
    let sigma_sft = diff_covariance(pi_sft, pi_sft, env);
    if sigma_dagger == sigma_sft {
        // Identical quadratic forms have ratio one on their common range.
        return if sigma_sft.trace() > 0.0 { 1.0 } else { 0.0 };
    }
    let (vals, vecs) = symmetric_eigen(&sigma_sft);
    let kept: Vec<usize> = (0..vals.len()).filter(|&i| vals[i] > RANK_TOL).collect();

    // Trace mass of Sigma_dagger outside range(Sigma_sft).
    let mut inside = 0.0;
    for &i in &kept {
        let v = vecs.column(i);
        inside += (&sigma_dagger * v).dot(&v);
    }
    let leak = sigma_dagger.trace() - inside;
    if leak > LEAK_TOL {
        return f64::INFINITY;
    }
    if kept.is_empty() {
        return 0.0;
    }

    // Generalized eigenproblem restricted to the kept eigenvectors; in that
    // basis Sigma_sft is diagonal, so whiten by D^{-1/2}.
    let r = kept.len();
    let mut projected = DMatrix::zeros(r, r);
    for (bi, &i) in kept.iter().enumerate() {
        let col_i = &sigma_dagger * vecs.column(i);
        for (bj, &j) in kept.iter().enumerate() {
            projected[(bi, bj)] = col_i.dot(&vecs.column(j)) / (vals[i] * vals[j]).sqrt();
        }
    }
    // Symmetrize fp residue before the eigensolve.
    let projected = (&projected + projected.transpose()) * 0.5;
    max_eigenvalue(&projected).max(0.0)
}

/// Minimum eigenvalue of the empirical difference-feature second moment.
pub fn uniform_coverage_empirical(ds: &PreferenceDataset) -> Result<f64> {
    Ok(min_eigenvalue(&empirical_covariance(ds)?))
}

/// Minimum eigenvalue of the population difference-feature second moment,
/// enumerated exactly over `rho` and the pair-sampling rule.
pub fn uniform_coverage_population(env: &Environment, behavior: &BehaviorRule) -> Result<f64> {
    let d = env.dim();
    let a_count = env.num_actions();
    let mut sigma = DMatrix::zeros(d, d);
    match behavior {
        BehaviorRule::UniformDistinctPairs => {
            if a_count < 2 {
                return Err(Error::config(
                    "uniform distinct pairs need at least two actions",
                ));
            }
            let pair_w = 1.0 / (a_count * (a_count - 1)) as f64;
            for s in 0..env.num_states() {
                let w = env.rho()[s];
                if w == 0.0 {
                    continue;
                }
                for first in 0..a_count {
                    for second in 0..a_count {
                        if first == second {
                            continue;
                        }
                        let x = env.diff_feature(s, second, first);
                        sigma.syger(w * pair_w, &x, &x, 1.0);
                    }
                }
            }
        }
        BehaviorRule::PolicyPair { first, second } => {
            for s in 0..env.num_states() {
                let w = env.rho()[s];
                if w == 0.0 {
                    continue;
                }
                for a0 in 0..a_count {
                    let p0 = first.prob(s, a0);
                    if p0 == 0.0 {
                        continue;
                    }
                    for a1 in 0..a_count {
                        let p1 = second.prob(s, a1);
                        if p1 == 0.0 || a0 == a1 {
                            continue;
                        }
                        let x = env.diff_feature(s, a1, a0);
                        sigma.syger(w * p0 * p1, &x, &x, 1.0);
                    }
                }
            }
        }
    }
    for i in 0..d {
        for j in (i + 1)..d {
            sigma[(i, j)] = sigma[(j, i)];
        }
    }
    Ok(min_eigenvalue(&sigma))
}

fn check_weight_matrix(m: &DMatrix<f64>, v: &DVector<f64>, lambda: f64) -> Result<()> {
    if m.nrows() != m.ncols() || m.nrows() != v.len() {
        return Err(Error::config("weighted norm dimension mismatch"));
    }
    if lambda < 0.0 {
        return Err(Error::domain("lambda must be nonnegative"));
    }
    Ok(())
}

/// `sqrt(v^T (M + lambda I) v)` for symmetric PSD `M`.
pub fn weighted_norm(v: &DVector<f64>, m: &DMatrix<f64>, lambda: f64) -> Result<f64> {
    check_weight_matrix(m, v, lambda)?;
    let q = (m * v).dot(v) + lambda * v.norm_squared();
    Ok(q.max(0.0).sqrt())
}

/// `sqrt(v^T (M + lambda I)^{-1} v)`; fails when `M + lambda I` is singular.
pub fn weighted_norm_inv(v: &DVector<f64>, m: &DMatrix<f64>, lambda: f64) -> Result<f64> {
    check_weight_matrix(m, v, lambda)?;
    let d = m.nrows();
    let reg = m + DMatrix::identity(d, d) * lambda;
    let chol = reg
        .cholesky()
        .ok_or_else(|| Error::domain("M + lambda I is singular"))?;
    let solved = chol.solve(v);
    Ok(solved.dot(v).max(0.0).sqrt())
}

/// One trial's ground-truth evaluation summary.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub j_pi: f64,
    pub subopt: f64,
    pub est_err_l2: f64,
    pub est_err_weighted: f64,
    pub kappa: f64,
    pub xi: f64,
}

impl EvalReport {
    /// Bundles the standard per-trial quantities: the learned policy's value
    /// and gap against the comparator, both estimation errors, the condition
    /// number of (comparator, reference) relative to the sft pair, and the
    /// population coverage of the behavior rule.
    #[allow(clippy::too_many_arguments)]
    pub fn compute(
        env: &Environment,
        behavior: &BehaviorRule,
        theta_hat: &DVector<f64>,
        sigma_hat: &DMatrix<f64>,
        lambda: f64,
        pi_hat: &TabularPolicy,
        pi_dagger: &TabularPolicy,
        pi_ref: &TabularPolicy,
        pi_sft: &TabularPolicy,
    ) -> Result<Self> {
        let diff = theta_hat - env.theta_star();
        Ok(Self {
            j_pi: policy_value(pi_hat, env),
            subopt: suboptimality(pi_hat, pi_dagger, env),
            est_err_l2: diff.norm(),
            est_err_weighted: weighted_norm(&diff, sigma_hat, lambda)?,
            kappa: relative_condition_number(pi_dagger, pi_ref, pi_sft, env),
            xi: uniform_coverage_population(env, behavior)?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{sample_dataset, BehaviorRule, PreferenceRecord, Stage};
    use crate::rng::{rng_from_seed, SimRng};
    use approx::assert_abs_diff_eq;
    use nalgebra::DVector;
    use rand_distr::{Distribution, StandardNormal};

    fn env_fixture(seed: u64, d: usize, s: usize, a: usize) -> Environment {
        let mut rng = rng_from_seed(seed);
        Environment::random(&mut rng, d, s, a, 1.0).unwrap()
    }

    fn random_policy(rng: &mut SimRng, s: usize, a: usize) -> TabularPolicy {
        use rand::Rng;
        let mut m = DMatrix::zeros(s, a);
        for i in 0..s {
            let mut row: Vec<f64> = (0..a).map(|_| rng.gen_range(0.01..1.0)).collect();
            let sum: f64 = row.iter().sum();
            row.iter_mut().for_each(|p| *p /= sum);
            for (j, p) in row.into_iter().enumerate() {
                m[(i, j)] = p;
            }
        }
        TabularPolicy::from_matrix(m).unwrap()
    }

    fn dataset_from_xs(xs: Vec<DVector<f64>>) -> PreferenceDataset {
        let records = xs
            .into_iter()
            .map(|x| PreferenceRecord {
                state: 0,
                action_first: 0,
                action_second: 1,
                diff_feature: x,
                label: 1,
            })
            .collect();
        PreferenceDataset {
            records,
            stage: Stage::Clean,
        }
    }

    #[test]
    fn covariance_single_and_pair() {
        let ds = dataset_from_xs(vec![DVector::from_vec(vec![1.0, 0.0])]);
        let sigma = empirical_covariance(&ds).unwrap();
        assert_eq!(sigma, DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]));

        let ds = dataset_from_xs(vec![
            DVector::from_vec(vec![1.0, 0.0]),
            DVector::from_vec(vec![0.0, 1.0]),
        ]);
        let sigma = empirical_covariance(&ds).unwrap();
        assert_eq!(sigma, DMatrix::from_row_slice(2, 2, &[0.5, 0.0, 0.0, 0.5]));
    }

    #[test]
    fn covariance_matches_naive_double_loop() {
        let env = env_fixture(1, 5, 4, 3);
        let mut rng = rng_from_seed(2);
        let ds = sample_dataset(&env, 200, &BehaviorRule::UniformDistinctPairs, &mut rng).unwrap();
        let fast = empirical_covariance(&ds).unwrap();
        let d = ds.dim();
        let mut naive = DMatrix::zeros(d, d);
        for r in &ds.records {
            for i in 0..d {
                for j in 0..d {
                    naive[(i, j)] += r.diff_feature[i] * r.diff_feature[j];
                }
            }
        }
        naive /= ds.len() as f64;
        assert!((fast - &naive).norm() < 1e-12);
        assert!(min_eigenvalue(&naive) >= -1e-12);
    }

    #[test]
    fn policy_value_trivials() {
        let mut rng = rng_from_seed(3);
        let env = Environment::random_with_theta(&mut rng, 3, 4, 3, 1.0, DVector::zeros(3)).unwrap();
        let pi = random_policy(&mut rng, 4, 3);
        assert_eq!(policy_value(&pi, &env), 0.0);

        // Deterministic policy on a point-mass state distribution.
        let env2 = env_fixture(4, 3, 1, 3);
        let det = TabularPolicy::deterministic(&[2], 3).unwrap();
        assert_abs_diff_eq!(policy_value(&det, &env2), env2.reward(0, 2), epsilon = 1e-15);
    }

    #[test]
    fn policy_value_matches_monte_carlo_rollout() {
        let env = env_fixture(5, 4, 3, 3);
        let mut rng = rng_from_seed(6);
        let pi = random_policy(&mut rng, 3, 3);
        let exact = policy_value(&pi, &env);
        let draws = 1_000_000;
        let mut sum = 0.0;
        let mut sumsq = 0.0;
        for _ in 0..draws {
            use rand::Rng;
            let u: f64 = rng.gen();
            let mut s = 0;
            let mut acc = 0.0;
            for (i, &w) in env.rho().iter().enumerate() {
                acc += w;
                if u < acc {
                    s = i;
                    break;
                }
            }
            let a = pi.sample_action(s, &mut rng);
            let r = env.reward(s, a);
            sum += r;
            sumsq += r * r;
        }
        let mean = sum / draws as f64;
        let var = (sumsq / draws as f64 - mean * mean).max(0.0);
        let se = (var / draws as f64).sqrt();
        assert!(
            (mean - exact).abs() <= 3.0 * se + 1e-9,
            "mc {mean} vs exact {exact} (se {se})"
        );
    }

    #[test]
    fn suboptimality_signs() {
        let env = env_fixture(7, 4, 3, 4);
        let mut rng = rng_from_seed(8);
        let pi = random_policy(&mut rng, 3, 4);
        assert_eq!(suboptimality(&pi, &pi, &env), 0.0);

        // The exact per-state argmax policy dominates everything.
        let star: Vec<usize> = (0..3)
            .map(|s| {
                (0..4)
                    .max_by(|&a, &b| env.reward(s, a).partial_cmp(&env.reward(s, b)).unwrap())
                    .unwrap()
            })
            .collect();
        let pi_star = TabularPolicy::deterministic(&star, 4).unwrap();
        for _ in 0..50 {
            let other = random_policy(&mut rng, 3, 4);
            assert!(suboptimality(&other, &pi_star, &env) >= -1e-12);
        }
    }

    #[test]
    fn diff_covariance_hand_example() {
        // One state, two actions with psi = (1, -1), both policies uniform:
        // the four (a, a') terms sum to 0.5 * [[1, -1], [-1, 1]].
        let phi0 = DVector::from_vec(vec![0.5, -0.5]);
        let phi1 = DVector::from_vec(vec![-0.5, 0.5]);
        // psi(0, 1) = phi0 - phi1 = (1, -1).
        let env = Environment::new(
            vec![vec![phi0, phi1]],
            DVector::from_vec(vec![0.5, -0.5]),
            vec![1.0],
            1.0,
        )
        .unwrap();
        let uni = TabularPolicy::uniform(1, 2);
        let sigma = diff_covariance(&uni, &uni, &env);
        let expected = DMatrix::from_row_slice(2, 2, &[0.5, -0.5, -0.5, 0.5]);
        assert!((sigma - expected).norm() < 1e-14);
    }

    #[test]
    fn diff_covariance_zero_for_identical_point_masses() {
        let env = env_fixture(9, 3, 2, 3);
        let det = TabularPolicy::deterministic(&[1, 2], 3).unwrap();
        let sigma = diff_covariance(&det, &det, &env);
        assert_eq!(sigma.norm(), 0.0);
    }

    #[test]
    fn diff_covariance_is_symmetric_in_policies_and_psd() {
        let env = env_fixture(10, 4, 3, 3);
        let mut rng = rng_from_seed(11);
        for _ in 0..20 {
            let p1 = random_policy(&mut rng, 3, 3);
            let p2 = random_policy(&mut rng, 3, 3);
            let a = diff_covariance(&p1, &p2, &env);
            let b = diff_covariance(&p2, &p1, &env);
            assert!((&a - &b).norm() < 1e-12);
            assert!(min_eigenvalue(&a) >= -1e-10);
        }
    }

    #[test]
    fn kappa_is_one_for_identical_policies() {
        let env = env_fixture(12, 4, 3, 3);
        let mut rng = rng_from_seed(13);
        let pi = random_policy(&mut rng, 3, 3);
        assert_eq!(relative_condition_number(&pi, &pi, &pi, &env), 1.0);
    }

    #[test]
    fn kappa_dominates_sampled_rayleigh_ratios() {
        let env = env_fixture(14, 4, 4, 3);
        let mut rng = rng_from_seed(15);
        for _ in 0..5 {
            let pd = random_policy(&mut rng, 4, 3);
            let pr = random_policy(&mut rng, 4, 3);
            let ps = random_policy(&mut rng, 4, 3);
            let kappa = relative_condition_number(&pd, &pr, &ps, &env);
            let sd = diff_covariance(&pd, &pr, &env);
            let ss = diff_covariance(&ps, &ps, &env);
            for _ in 0..10_000 {
                let w: DVector<f64> = DVector::from_fn(4, |_, _| StandardNormal.sample(&mut rng));
                let denom = (&ss * &w).dot(&w);
                if denom <= 1e-12 {
                    continue;
                }
                let ratio = (&sd * &w).dot(&w) / denom;
                assert!(
                    kappa + 1e-8 >= ratio,
                    "kappa {kappa} below sampled ratio {ratio}"
                );
            }
        }
    }

    #[test]
    fn kappa_detects_unbounded_directions() {
        // pi_sft covers nothing (identical point masses), the comparator pair
        // produces a nonzero covariance: kappa = +inf.
        let env = env_fixture(16, 3, 2, 3);
        let sft = TabularPolicy::deterministic(&[0, 0], 3).unwrap();
        let pd = TabularPolicy::deterministic(&[1, 2], 3).unwrap();
        let pr = TabularPolicy::deterministic(&[2, 0], 3).unwrap();
        let kappa = relative_condition_number(&pd, &pr, &sft, &env);
        assert!(kappa.is_infinite());
    }

    #[test]
    fn kappa_of_proportional_forms() {
        // One state, two actions. Uniform pi_sft puts weight 0.5 on the two
        // ordered distinct pairs, point masses on opposite actions put weight
        // 1 on one of them; both covariances are multiples of psi psi^T, with
        // ratio exactly 2.
        let env = env_fixture(17, 3, 1, 2);
        let sft = TabularPolicy::uniform(1, 2);
        let pd = TabularPolicy::deterministic(&[0], 2).unwrap();
        let pr = TabularPolicy::deterministic(&[1], 2).unwrap();
        let kappa = relative_condition_number(&pd, &pr, &sft, &env);
        assert_abs_diff_eq!(kappa, 2.0, epsilon = 1e-10);
    }

    #[test]
    fn coverage_identity_and_rank_deficiency() {
        // Signed unit vectors, equal weights: Sigma_hat = 0.5 * I exactly.
        let ds = dataset_from_xs(vec![
            DVector::from_vec(vec![1.0, 0.0]),
            DVector::from_vec(vec![0.0, 1.0]),
            DVector::from_vec(vec![-1.0, 0.0]),
            DVector::from_vec(vec![0.0, -1.0]),
        ]);
        let xi = uniform_coverage_empirical(&ds).unwrap();
        assert_abs_diff_eq!(xi, 0.5, epsilon = 1e-12);

        let ds = dataset_from_xs(vec![
            DVector::from_vec(vec![1.0, 0.0]),
            DVector::from_vec(vec![-1.0, 0.0]),
        ]);
        let xi = uniform_coverage_empirical(&ds).unwrap();
        assert!(xi.abs() < 1e-10);
    }

    #[test]
    fn coverage_matches_power_iteration_oracle() {
        // Independent eigensolver: power iteration on c*I - Sigma gives the
        // smallest eigenvalue of Sigma as c - lambda_max.
        let env = env_fixture(19, 4, 5, 3);
        let xi = uniform_coverage_population(&env, &BehaviorRule::UniformDistinctPairs).unwrap();

        let a = env.num_actions();
        let pair_w = 1.0 / (a * (a - 1)) as f64;
        let mut sigma = DMatrix::zeros(4, 4);
        for s in 0..env.num_states() {
            for a0 in 0..a {
                for a1 in 0..a {
                    if a0 == a1 {
                        continue;
                    }
                    let x = env.diff_feature(s, a1, a0);
                    sigma += env.rho()[s] * pair_w * &x * x.transpose();
                }
            }
        }
        let c = 10.0;
        let shifted = DMatrix::identity(4, 4) * c - &sigma;
        let mut v = DVector::from_element(4, 1.0).normalize();
        for _ in 0..20_000 {
            v = (&shifted * v).normalize();
        }
        let lmax_shifted = (&shifted * &v).dot(&v);
        let oracle = c - lmax_shifted;
        assert_abs_diff_eq!(xi, oracle, epsilon = 1e-8);
    }

    #[test]
    fn weighted_norm_trivials_and_cauchy_schwarz() {
        let v = DVector::from_vec(vec![3.0, 4.0]);
        let id = DMatrix::identity(2, 2);
        assert_abs_diff_eq!(weighted_norm(&v, &id, 0.0).unwrap(), 5.0, epsilon = 1e-12);
        assert_eq!(weighted_norm(&DVector::zeros(2), &id, 0.0).unwrap(), 0.0);

        let mut rng = rng_from_seed(20);
        for _ in 0..50 {
            let g: DMatrix<f64> = DMatrix::from_fn(3, 3, |_, _| StandardNormal.sample(&mut rng));
            let m = &g * g.transpose();
            let v: DVector<f64> = DVector::from_fn(3, |_, _| StandardNormal.sample(&mut rng));
            let lambda = 0.3;
            let a = weighted_norm(&v, &m, lambda).unwrap();
            let b = weighted_norm_inv(&v, &m, lambda).unwrap();
            assert!(a * b + 1e-10 >= v.norm_squared());
        }

        // Singular M with lambda = 0 is a domain error for the inverse form.
        let singular = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]);
        assert!(weighted_norm_inv(&v, &singular, 0.0).is_err());
    }
}
