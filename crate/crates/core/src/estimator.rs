//! The analyzer: minimize the shifted-and-scaled logistic loss over the
//! zero-sum norm ball by projected first-order descent.
//!
//! The per-record loss is `-[ln(1 - sigma(theta^T x)) + w * theta^T x]` with
//! `w` the debiased label `c(eps) * (z + sigma(eps) - 1)`. At `eps = +inf`
//! this is the ordinary logistic log-loss. The objective is convex, its
//! Hessian is dominated by `Sigma_hat / 4`, so the fixed step `4 / lambda_max`
//! is a safe descent step.

use nalgebra::{DMatrix, DVector};

use crate::env::PreferenceDataset;
use crate::error::{Error, Result};
use crate::metrics::max_eigenvalue;
use crate::privacy::debiased_label;

/// Feasible set `{theta : <1, theta> = 0, ||theta|| <= b_prime}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstraintSet {
    pub b_prime: f64,
    pub dim: usize,
}

impl ConstraintSet {
    pub fn new(b_prime: f64, dim: usize) -> Result<Self> {
        if !b_prime.is_finite() || b_prime <= 0.0 {
            return Err(Error::domain(format!(
                "constraint radius must be positive, got {b_prime}"
            )));
        }
        if dim < 2 {
            return Err(Error::config("constraint set needs dimension >= 2"));
        }
        Ok(Self { b_prime, dim })
    }

    pub fn contains(&self, theta: &DVector<f64>, tol: f64) -> bool {
        theta.len() == self.dim
            && theta.iter().sum::<f64>().abs() <= tol
            && theta.norm() <= self.b_prime + tol
    }
}

/// Step-size rule for the projected descent.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepRule {
    /// `4 / lambda_max(Sigma_hat)`, the inverse smoothness constant.
    FixedAuto,
    /// A caller-supplied constant step.
    Fixed(f64),
    /// Armijo-style backtracking with step growth between iterations.
    Backtracking,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig {
    pub max_iters: usize,
    pub grad_tol: f64,
    pub step: StepRule,
    /// Record per-iterate loss and feasibility diagnostics in the report.
    pub record_history: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            max_iters: 100_000,
            grad_tol: 1e-8,
            step: StepRule::FixedAuto,
            record_history: false,
        }
    }
}

impl SolverConfig {
    fn validate(&self) -> Result<()> {
        if self.max_iters == 0 {
            return Err(Error::config("max_iters must be >= 1"));
        }
        if self.grad_tol.is_nan() || self.grad_tol <= 0.0 {
            return Err(Error::config("grad_tol must be positive"));
        }
        if let StepRule::Fixed(eta) = self.step {
            if !eta.is_finite() || eta <= 0.0 {
                return Err(Error::config("fixed step must be positive"));
            }
        }
        Ok(())
    }
}

/// Per-iterate diagnostics, recorded when [`SolverConfig::record_history`] is set.
#[derive(Debug, Clone, Copy)]
pub struct IterStat {
    pub loss: f64,
    pub ones_dot: f64,
    pub norm: f64,
}

#[derive(Debug, Clone)]
pub struct EstimateReport {
    pub theta_hat: DVector<f64>,
    pub iters: usize,
    pub final_grad_norm: f64,
    pub converged: bool,
    pub history: Option<Vec<IterStat>>,
}

fn softplus(u: f64) -> f64 {
    if u > 0.0 {
        u + (-u).exp().ln_1p()
    } else {
        u.exp().ln_1p()
    }
}

fn sigmoid(u: f64) -> f64 {
    crate::env::sigmoid(u)
}

/// Dense view of one estimation problem: the `n x d` feature matrix and the
/// debiased label vector.
struct Objective {
    x: DMatrix<f64>,
    w: DVector<f64>,
    n: usize,
}

impl Objective {
    fn from_dataset(ds: &PreferenceDataset, epsilon: f64) -> Result<Self> {
        if ds.is_empty() {
            return Err(Error::domain("cannot fit an empty dataset"));
        }
        let n = ds.len();
        let d = ds.dim();
        let mut x = DMatrix::zeros(n, d);
        let mut w = DVector::zeros(n);
        for (i, r) in ds.records.iter().enumerate() {
            if r.diff_feature.len() != d {
                return Err(Error::config("ragged feature dimensions in dataset"));
            }
            x.row_mut(i).copy_from(&r.diff_feature.transpose());
            w[i] = debiased_label(r.label, epsilon)?;
        }
        Ok(Self { x, w, n })
    }

    fn margins(&self, theta: &DVector<f64>) -> DVector<f64> {
        &self.x * theta
    }

    fn loss_at_margins(&self, u: &DVector<f64>) -> f64 {
        let mut acc = 0.0;
        for i in 0..self.n {
            acc += softplus(u[i]) - self.w[i] * u[i];
        }
        acc / self.n as f64
    }

    fn loss(&self, theta: &DVector<f64>) -> f64 {
        self.loss_at_margins(&self.margins(theta))
    }

    fn gradient(&self, theta: &DVector<f64>) -> DVector<f64> {
        let u = self.margins(theta);
        let resid = DVector::from_fn(self.n, |i, _| sigmoid(u[i]) - self.w[i]);
        (self.x.transpose() * resid) / self.n as f64
    }

    fn sigma_hat_max_eigenvalue(&self) -> f64 {
        let sigma = self.x.transpose() * &self.x / self.n as f64;
        max_eigenvalue(&sigma)
    }
}

/// Average shifted-and-scaled logistic loss
/// `-(1/n) sum_i [ln(1 - sigma(theta^T x_i)) + w_i * theta^T x_i]`.
pub fn loss(theta: &DVector<f64>, ds: &PreferenceDataset, epsilon: f64) -> Result<f64> {
    check_theta(theta)?;
    Ok(Objective::from_dataset(ds, epsilon)?.loss(theta))
}

/// Gradient `-(1/n) sum_i [w_i - sigma(theta^T x_i)] x_i`.
pub fn gradient(theta: &DVector<f64>, ds: &PreferenceDataset, epsilon: f64) -> Result<DVector<f64>> {
    check_theta(theta)?;
    Ok(Objective::from_dataset(ds, epsilon)?.gradient(theta))
}

fn check_theta(theta: &DVector<f64>) -> Result<()> {
    if theta.iter().any(|v| !v.is_finite()) {
        return Err(Error::domain("theta must be finite"));
    }
    Ok(())
}

/// Euclidean projection onto the feasible set: center to the zero-sum
/// hyperplane, then shrink to the norm ball. Radial scaling preserves the
/// hyperplane because it passes through the origin, so the composition is the
/// exact projection.
pub fn project(theta: &DVector<f64>, cs: &ConstraintSet) -> DVector<f64> {
    let mean = theta.mean();
    let mut centered = theta.map(|v| v - mean);
    let norm = centered.norm();
    if norm > cs.b_prime {
        centered *= cs.b_prime / norm;
    }
    centered
}

/// Projected descent for `argmin` of the loss over the constraint set,
/// started from zero. Non-convergence within the budget is reported, not an
/// error.
pub fn estimate(
    ds: &PreferenceDataset,
    epsilon: f64,
    cs: &ConstraintSet,
    cfg: &SolverConfig,
) -> Result<EstimateReport> {
    cfg.validate()?;
    let obj = Objective::from_dataset(ds, epsilon)?;
    if obj.x.ncols() != cs.dim {
        return Err(Error::config(format!(
            "dataset dimension {} does not match constraint dimension {}",
            obj.x.ncols(),
            cs.dim
        )));
    }

    let lmax = obj.sigma_hat_max_eigenvalue();
    let eta_base = if lmax > 1e-12 { 4.0 / lmax } else { 1.0 };
    let mut eta = match cfg.step {
        StepRule::FixedAuto => eta_base,
        StepRule::Fixed(v) => v,
        StepRule::Backtracking => eta_base,
    };
    let eta_cap = eta * 64.0;

    let mut theta: DVector<f64> = DVector::zeros(cs.dim);
    let mut cur_loss = obj.loss(&theta);
    let mut history = cfg.record_history.then(Vec::new);
    if let Some(h) = history.as_mut() {
        h.push(IterStat {
            loss: cur_loss,
            ones_dot: 0.0,
            norm: 0.0,
        });
    }

    let mut iters = 0;
    let mut pg_norm = f64::INFINITY;
    let mut converged = false;
    while iters < cfg.max_iters {
        let grad = obj.gradient(&theta);
        let (candidate, step_used) = match cfg.step {
            StepRule::FixedAuto | StepRule::Fixed(_) => {
                (project(&(&theta - &grad * eta), cs), eta)
            }
            StepRule::Backtracking => {
                // Shrink until the quadratic upper model holds at the
                // projected point; the proximal step then guarantees descent.
                loop {
                    let cand = project(&(&theta - &grad * eta), cs);
                    let dir = &cand - &theta;
                    let model = cur_loss + grad.dot(&dir) + dir.norm_squared() / (2.0 * eta);
                    if obj.loss(&cand) <= model + 1e-12 || eta < 1e-18 {
                        break (cand, eta);
                    }
                    eta *= 0.5;
                }
            }
        };

        pg_norm = (&theta - &candidate).norm() / step_used;
        if pg_norm <= cfg.grad_tol {
            converged = true;
            break;
        }

        theta = candidate;
        cur_loss = obj.loss(&theta);
        iters += 1;
        if let Some(h) = history.as_mut() {
            h.push(IterStat {
                loss: cur_loss,
                ones_dot: theta.iter().sum(),
                norm: theta.norm(),
            });
        }
        if matches!(cfg.step, StepRule::Backtracking) {
            eta = (eta * 2.0).min(eta_cap);
        }
    }

    Ok(EstimateReport {
        theta_hat: theta,
        iters,
        final_grad_norm: pg_norm,
        converged,
        history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{sample_dataset, BehaviorRule, Environment, PreferenceRecord, Stage};
    use crate::privacy::{randomize_dataset, retention_prob};
    use crate::rng::{rng_from_seed, SimRng};
    use approx::assert_abs_diff_eq;
    use rand::Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn fixture(seed: u64, n: usize, d: usize) -> (Environment, PreferenceDataset) {
        let mut rng = rng_from_seed(seed);
        let env = Environment::random(&mut rng, d, 4, 3, 1.0).unwrap();
        let ds = sample_dataset(&env, n, &BehaviorRule::UniformDistinctPairs, &mut rng).unwrap();
        (env, ds)
    }

    fn random_feasible(rng: &mut SimRng, cs: &ConstraintSet) -> DVector<f64> {
        let raw: DVector<f64> = DVector::from_fn(cs.dim, |_, _| StandardNormal.sample(rng));
        let scale: f64 = rng.gen_range(0.0..1.0);
        let centered = project(&raw, cs);
        let norm = centered.norm();
        if norm == 0.0 {
            centered
        } else {
            &centered * (scale * cs.b_prime / norm)
        }
    }

    fn single_record_ds(x: Vec<f64>, label: u8) -> PreferenceDataset {
        PreferenceDataset {
            records: vec![PreferenceRecord {
                state: 0,
                action_first: 0,
                action_second: 1,
                diff_feature: DVector::from_vec(x),
                label,
            }],
            stage: Stage::Observed,
        }
    }

    #[test]
    fn loss_at_zero_is_ln_two() {
        let (_, ds) = fixture(1, 100, 4);
        let theta = DVector::zeros(4);
        assert_abs_diff_eq!(
            loss(&theta, &ds, f64::INFINITY).unwrap(),
            2.0_f64.ln(),
            epsilon = 1e-12
        );
    }

    #[test]
    fn non_private_loss_is_standard_log_loss() {
        let (_, ds) = fixture(2, 50, 4);
        let mut rng = rng_from_seed(3);
        let cs = ConstraintSet::new(1.0, 4).unwrap();
        for _ in 0..20 {
            let theta = random_feasible(&mut rng, &cs);
            let ours = loss(&theta, &ds, f64::INFINITY).unwrap();
            let mut nll = 0.0;
            for r in &ds.records {
                let p = crate::env::sigmoid(theta.dot(&r.diff_feature));
                nll -= if r.label == 1 { p.ln() } else { (1.0 - p).ln() };
            }
            nll /= ds.len() as f64;
            assert_abs_diff_eq!(ours, nll, epsilon = 1e-12);
        }
    }

    #[test]
    fn single_record_closed_form() {
        // x = (1, 0), z = 1, eps = ln 3, theta = (1, 0):
        // loss = ln(1 + e) - 1.5.
        let ds = single_record_ds(vec![1.0, 0.0], 1);
        let theta = DVector::from_vec(vec![1.0, 0.0]);
        let expected = (1.0 + std::f64::consts::E).ln() - 1.5;
        assert_abs_diff_eq!(
            loss(&theta, &ds, 3.0_f64.ln()).unwrap(),
            expected,
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(expected, -0.18673831248177717, epsilon = 1e-15);
    }

    #[test]
    fn empty_dataset_is_domain_error() {
        let ds = PreferenceDataset {
            records: vec![],
            stage: Stage::Observed,
        };
        assert!(loss(&DVector::zeros(2), &ds, 1.0).is_err());
        assert!(gradient(&DVector::zeros(2), &ds, 1.0).is_err());
    }

    #[test]
    fn gradient_single_record_trivial() {
        let ds = single_record_ds(vec![1.0, 0.0], 1);
        let g = gradient(&DVector::zeros(2), &ds, f64::INFINITY).unwrap();
        assert_abs_diff_eq!(g[0], -0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(g[1], 0.0, epsilon = 1e-15);
    }

    #[test]
    fn gradient_matches_central_finite_differences() {
        let mut rng = rng_from_seed(5);
        let cs = ConstraintSet::new(1.0, 4).unwrap();
        for trial in 0..50 {
            let (_, ds) = fixture(100 + trial, 30, 4);
            let eps = [0.5, 1.0, 3.0, f64::INFINITY][(trial % 4) as usize];
            let ds = if eps.is_finite() {
                let mut prng = rng_from_seed(200 + trial);
                randomize_dataset(&ds, eps, &mut prng).unwrap()
            } else {
                ds
            };
            let theta = random_feasible(&mut rng, &cs);
            let g = gradient(&theta, &ds, eps).unwrap();
            let h = 1e-6;
            let fd = DVector::from_fn(4, |k, _| {
                let mut up = theta.clone();
                let mut dn = theta.clone();
                up[k] += h;
                dn[k] -= h;
                (loss(&up, &ds, eps).unwrap() - loss(&dn, &ds, eps).unwrap()) / (2.0 * h)
            });
            let rel = (&g - &fd).norm() / g.norm().max(fd.norm()).max(1e-12);
            assert!(rel <= 1e-6, "trial {trial}: relative error {rel}");
        }
    }

    #[test]
    fn gradient_is_linear_in_debiased_labels() {
        // Replacing each privatized label by its RR expectation makes the
        // debiased labels equal the clean ones, so the gradient matches the
        // clean-data gradient exactly.
        let (_, ds) = fixture(7, 40, 4);
        let eps = 1.0;
        let keep = retention_prob(eps).unwrap();
        let c = crate::privacy::debias_scale(eps).unwrap();
        let mut rng = rng_from_seed(8);
        let cs = ConstraintSet::new(1.0, 4).unwrap();
        let theta = random_feasible(&mut rng, &cs);

        let clean_grad = gradient(&theta, &ds, f64::INFINITY).unwrap();
        // E[debias(z)] per record: keep * debias(y) + (1 - keep) * debias(1 - y).
        let mut expected = DVector::zeros(4);
        for r in &ds.records {
            let y = r.label as f64;
            let ez = keep * y + (1.0 - keep) * (1.0 - y);
            let w = c * (ez + keep - 1.0);
            let s = crate::env::sigmoid(theta.dot(&r.diff_feature));
            expected.axpy(-(w - s) / ds.len() as f64, &r.diff_feature, 1.0);
        }
        assert!((clean_grad - expected).norm() < 1e-12);
    }

    #[test]
    fn project_center_then_scale() {
        let cs = ConstraintSet::new(1.0, 2).unwrap();
        let p = project(&DVector::from_vec(vec![2.0, 0.0]), &cs);
        assert_abs_diff_eq!(p[0], std::f64::consts::FRAC_1_SQRT_2, epsilon = 1e-8);
        assert_abs_diff_eq!(p[1], -std::f64::consts::FRAC_1_SQRT_2, epsilon = 1e-8);

        let mut rng = rng_from_seed(9);
        for _ in 0..100 {
            let v = random_feasible(&mut rng, &cs);
            let q = project(&v, &cs);
            assert!((q - &v).norm() < 1e-14);
        }
    }

    #[test]
    fn projection_is_closest_feasible_point() {
        let cs = ConstraintSet::new(1.0, 5).unwrap();
        let mut rng = rng_from_seed(10);
        for _ in 0..20 {
            let raw: DVector<f64> = DVector::from_fn(5, |_, _| {
                let g: f64 = StandardNormal.sample(&mut rng);
                3.0 * g
            });
            let p = project(&raw, &cs);
            let base = (&p - &raw).norm();
            for _ in 0..1000 {
                let v = random_feasible(&mut rng, &cs);
                assert!(base <= (&v - &raw).norm() + 1e-12);
            }
        }
    }

    #[test]
    fn recovers_zero_parameter() {
        let mut rng = rng_from_seed(11);
        let env =
            Environment::random_with_theta(&mut rng, 4, 8, 4, 1.0, DVector::zeros(4)).unwrap();
        let ds = sample_dataset(&env, 50_000, &BehaviorRule::UniformDistinctPairs, &mut rng)
            .unwrap();
        let cs = ConstraintSet::new(1.0, 4).unwrap();
        let report = estimate(&ds, f64::INFINITY, &cs, &SolverConfig::default()).unwrap();
        assert!(report.converged);
        assert!(
            report.theta_hat.norm() <= 0.05,
            "norm = {}",
            report.theta_hat.norm()
        );
    }

    #[test]
    fn recovers_planted_two_dimensional_parameter() {
        let s = 1.0 / 2.0_f64.sqrt();
        let theta_true = DVector::from_vec(vec![s, -s]);
        let mut rng = rng_from_seed(12);
        let env =
            Environment::random_with_theta(&mut rng, 2, 4, 3, 1.0, theta_true.clone()).unwrap();
        let ds = sample_dataset(&env, 100_000, &BehaviorRule::UniformDistinctPairs, &mut rng)
            .unwrap();
        let cs = ConstraintSet::new(1.0, 2).unwrap();
        let report = estimate(&ds, f64::INFINITY, &cs, &SolverConfig::default()).unwrap();
        assert!(
            (&report.theta_hat - &theta_true).norm() <= 0.05,
            "error = {}",
            (&report.theta_hat - &theta_true).norm()
        );
    }

    #[test]
    fn estimate_is_globally_optimal_on_clean_data() {
        let (_, ds) = fixture(13, 2000, 4);
        let cs = ConstraintSet::new(1.0, 4).unwrap();
        let report = estimate(&ds, f64::INFINITY, &cs, &SolverConfig::default()).unwrap();
        let best = loss(&report.theta_hat, &ds, f64::INFINITY).unwrap();
        let mut rng = rng_from_seed(14);
        for _ in 0..100 {
            let theta = random_feasible(&mut rng, &cs);
            let other = loss(&theta, &ds, f64::INFINITY).unwrap();
            assert!(best <= other + 1e-8, "{best} > {other}");
        }
    }

    #[test]
    fn loss_is_convex_along_segments() {
        let (_, ds) = fixture(15, 200, 4);
        let cs = ConstraintSet::new(1.0, 4).unwrap();
        let mut rng = rng_from_seed(16);
        for _ in 0..50 {
            let t1 = random_feasible(&mut rng, &cs);
            let t2 = random_feasible(&mut rng, &cs);
            let t: f64 = rng.gen_range(0.01..0.99);
            let mid = &t1 * t + &t2 * (1.0 - t);
            let lhs = loss(&mid, &ds, 0.5).unwrap();
            let rhs = t * loss(&t1, &ds, 0.5).unwrap() + (1.0 - t) * loss(&t2, &ds, 0.5).unwrap();
            assert!(lhs <= rhs + 1e-12);
        }
    }

    #[test]
    fn descent_is_monotone_and_feasible() {
        let (_, ds) = fixture(17, 500, 4);
        let mut prng = rng_from_seed(18);
        let ds = randomize_dataset(&ds, 0.5, &mut prng).unwrap();
        let cs = ConstraintSet::new(1.0, 4).unwrap();
        for step in [StepRule::FixedAuto, StepRule::Backtracking] {
            let cfg = SolverConfig {
                record_history: true,
                step,
                max_iters: 5_000,
                ..SolverConfig::default()
            };
            let report = estimate(&ds, 0.5, &cs, &cfg).unwrap();
            let hist = report.history.as_ref().unwrap();
            for pair in hist.windows(2) {
                assert!(pair[1].loss <= pair[0].loss + 1e-12);
            }
            for it in hist {
                assert!(it.ones_dot.abs() <= 1e-10);
                assert!(it.norm <= 1.0 + 1e-10);
            }
            assert!(cs.contains(&report.theta_hat, 1e-10));
        }
    }

    #[test]
    fn non_convergence_is_reported_not_thrown() {
        let (_, ds) = fixture(19, 1000, 4);
        let cfg = SolverConfig {
            max_iters: 3,
            ..SolverConfig::default()
        };
        let cs = ConstraintSet::new(1.0, 4).unwrap();
        let report = estimate(&ds, f64::INFINITY, &cs, &cfg).unwrap();
        assert!(!report.converged);
        assert_eq!(report.iters, 3);
    }

    #[test]
    fn rr_expectation_of_loss_equals_clean_loss() {
        // Exhaustive enumeration of all 2^n randomized-response outcomes for
        // n = 10: the probability-weighted average of the private loss equals
        // the clean log-loss.
        let (_, ds) = fixture(20, 10, 3);
        let eps = 1.0;
        let keep = retention_prob(eps).unwrap();
        let cs = ConstraintSet::new(1.0, 3).unwrap();
        let mut rng = rng_from_seed(21);
        let theta = random_feasible(&mut rng, &cs);
        let clean = loss(&theta, &ds, f64::INFINITY).unwrap();

        let n = ds.len();
        let base = ds.labels();
        // Kahan summation keeps the 2^n-term accumulation at the 1e-12 scale.
        let mut acc = 0.0;
        let mut comp = 0.0;
        for mask in 0u32..(1 << n) {
            let mut prob = 1.0;
            let labels: Vec<u8> = (0..n)
                .map(|i| {
                    let flip = (mask >> i) & 1 == 1;
                    prob *= if flip { 1.0 - keep } else { keep };
                    if flip {
                        1 - base[i]
                    } else {
                        base[i]
                    }
                })
                .collect();
            let flipped = ds.with_labels(&labels, Stage::Observed).unwrap();
            let term = prob * loss(&theta, &flipped, eps).unwrap();
            let y = term - comp;
            let t = acc + y;
            comp = (t - acc) - y;
            acc = t;
        }
        assert_abs_diff_eq!(acc, clean, epsilon = 1e-12);
    }
}
