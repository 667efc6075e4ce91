//! The shifted-and-scaled logistic MLE: recover the reward parameter from
//! clean and privatized labels, and watch the privacy cost in the error.
//!
//! Run with: cargo run --release --example private_estimation

use alignsim::corruption::{apply_pipeline, CorruptionSpec, CorruptionStrategy, PipelineSetting};
use alignsim::env::{sample_dataset, BehaviorRule, Environment};
use alignsim::estimator::{estimate, ConstraintSet, SolverConfig};
use alignsim::privacy::{debias_scale, PrivacyParams};
use alignsim::rng::rng_from_seed;

fn main() {
    let mut rng = rng_from_seed(21);
    let env = Environment::random(&mut rng, 8, 16, 4, 1.0).unwrap();
    let cs = ConstraintSet::new(env.norm_bound(), env.dim()).unwrap();
    let solver = SolverConfig::default();
    let spec = CorruptionSpec::new(0.0, CorruptionStrategy::RandomFlip).unwrap();

    println!("n = 8192, d = 8; estimation error by privacy level:");
    println!("epsilon     c(eps)    ||theta_hat - theta*||   iters");
    let n = 8192;
    for eps in [0.25, 0.5, 1.0, 2.0, f64::INFINITY] {
        let mut data_rng = rng_from_seed(100); // same clean data across eps
        let clean =
            sample_dataset(&env, n, &BehaviorRule::UniformDistinctPairs, &mut data_rng).unwrap();
        let privacy = if eps.is_finite() {
            PrivacyParams::new(eps).unwrap()
        } else {
            PrivacyParams::non_private()
        };
        let out = apply_pipeline(
            &clean,
            PipelineSetting::PrivateOnly,
            &privacy,
            &spec,
            &env,
            0.01,
            &mut data_rng,
        )
        .unwrap();
        let report = estimate(&out.observed, eps, &cs, &solver).unwrap();
        let err = (&report.theta_hat - env.theta_star()).norm();
        println!(
            "{:<10}  {:<8.3}  {err:<22.4}   {}",
            if eps.is_infinite() { "inf".into() } else { format!("{eps}") },
            debias_scale(eps).unwrap(),
            report.iters
        );
    }

    println!("\nerror vs n on clean data (the 1/sqrt(n) decay):");
    println!("      n    error");
    for k in [9u32, 11, 13, 15] {
        let n = 1usize << k;
        let mut data_rng = rng_from_seed(200 + k as u64);
        let ds =
            sample_dataset(&env, n, &BehaviorRule::UniformDistinctPairs, &mut data_rng).unwrap();
        let report = estimate(&ds, f64::INFINITY, &cs, &solver).unwrap();
        println!(
            "  {n:>6}   {:.4}",
            (&report.theta_hat - env.theta_star()).norm()
        );
    }
}
