//! Offline policy construction from an estimated reward: the greedy argmax
//! versus the pessimistic lower-confidence-bound policy.
//!
//! Run with: cargo run --release --example pessimistic_rlhf

use alignsim::env::{sample_dataset, BehaviorRule, Environment};
use alignsim::estimator::{estimate, ConstraintSet, SolverConfig};
use alignsim::metrics::{empirical_covariance, policy_value, suboptimality};
use alignsim::policy::TabularPolicy;
use alignsim::rlhf::{
    greedy_policy, oracle_gamma, pessimistic_policy, pessimistic_value, ConfidenceSet,
    PolicySearch,
};
use alignsim::rng::rng_from_seed;

fn main() {
    let mut rng = rng_from_seed(5);
    let env = Environment::random(&mut rng, 4, 3, 3, 1.0).unwrap();
    let pi_star = greedy_policy(env.theta_star(), &env);
    let pi_ref = TabularPolicy::uniform(env.num_states(), env.num_actions());

    // A deliberately small dataset, so the estimate is noticeably off.
    let n = 300;
    let ds = sample_dataset(&env, n, &BehaviorRule::UniformDistinctPairs, &mut rng).unwrap();
    let cs = ConstraintSet::new(env.norm_bound(), env.dim()).unwrap();
    let report = estimate(&ds, f64::INFINITY, &cs, &SolverConfig::default()).unwrap();
    let err = (&report.theta_hat - env.theta_star()).norm();
    println!("n = {n}: ||theta_hat - theta*|| = {err:.3}");

    let sigma = empirical_covariance(&ds).unwrap();
    let lambda = 0.05;
    let gamma = oracle_gamma(&report.theta_hat, env.theta_star(), &sigma, lambda).unwrap();
    println!("oracle confidence radius: {gamma:.3} (puts theta* on the boundary)");
    let cset = ConfidenceSet::new(report.theta_hat.clone(), sigma, lambda, gamma).unwrap();

    let pi_greedy = greedy_policy(&report.theta_hat, &env);
    let pi_pess = pessimistic_policy(&cset, &pi_ref, &env, PolicySearch::Enumerate).unwrap();

    println!("\npolicy                value J    SubOpt vs pi*   J_hat (lcb)");
    for (name, pi) in [
        ("pi*  (oracle greedy)", &pi_star),
        ("greedy(theta_hat)", &pi_greedy),
        ("pessimistic", &pi_pess),
        ("reference (uniform)", &pi_ref),
    ] {
        let j = policy_value(pi, &env);
        let gap = suboptimality(pi, &pi_star, &env);
        let lcb = pessimistic_value(pi, &cset, &pi_ref, &env).unwrap();
        println!("{name:<21} {j:>+8.4}   {gap:>+10.4}     {lcb:>+8.4}");
    }

    // The lower confidence bound is valid: it never exceeds the true value
    // difference when theta* lies in the set.
    println!("\nvalidity spot check on 5 random policies (J_hat <= true difference):");
    for i in 0..5 {
        let pi = {
            use rand::Rng;
            let mut m = nalgebra::DMatrix::zeros(3, 3);
            for s in 0..3 {
                let mut row: Vec<f64> = (0..3).map(|_| rng.gen_range(0.05..1.0)).collect();
                let sum: f64 = row.iter().sum();
                row.iter_mut().for_each(|p| *p /= sum);
                for (a, p) in row.into_iter().enumerate() {
                    m[(s, a)] = p;
                }
            }
            TabularPolicy::from_matrix(m).unwrap()
        };
        let lcb = pessimistic_value(&pi, &cset, &pi_ref, &env).unwrap();
        let truth = policy_value(&pi, &env) - policy_value(&pi_ref, &env);
        println!("  policy {i}: J_hat {lcb:+.4} <= true {truth:+.4}  ({})", lcb <= truth + 1e-12);
    }
}
