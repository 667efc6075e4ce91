//! Coverage diagnostics: the relative condition number kappa and the uniform
//! coverage xi, on benign and degenerate instances.
//!
//! Run with: cargo run --release --example condition_number

use alignsim::env::{BehaviorRule, Environment};
use alignsim::metrics::{relative_condition_number, uniform_coverage_population};
use alignsim::policy::TabularPolicy;
use alignsim::rlhf::greedy_policy;
use alignsim::rng::rng_from_seed;

fn main() {
    let mut rng = rng_from_seed(31);
    let env = Environment::random(&mut rng, 4, 5, 3, 1.0).unwrap();
    let uniform = TabularPolicy::uniform(5, 3);
    let pi_star = greedy_policy(env.theta_star(), &env);

    let xi = uniform_coverage_population(&env, &BehaviorRule::UniformDistinctPairs).unwrap();
    println!("uniform coverage xi (min eigenvalue of E[x x^T]): {xi:.4}");

    println!("\nrelative condition number kappa(pi_dagger, pi_ref) with pi_sft = uniform:");
    let cases = [
        ("uniform vs uniform", &uniform, &uniform),
        ("pi* vs uniform", &pi_star, &uniform),
        ("pi* vs pi*", &pi_star, &pi_star),
    ];
    for (name, pd, pr) in cases {
        let kappa = relative_condition_number(pd, pr, &uniform, &env);
        println!("  {name:<20} kappa = {kappa:.4}");
    }

    // Degenerate reference coverage: a point-mass pi_sft spans nothing, so a
    // comparator pair with any off-span mass is unbounded.
    let point = TabularPolicy::deterministic(&[0, 0, 0, 0, 0], 3).unwrap();
    let other = TabularPolicy::deterministic(&[1, 2, 1, 2, 1], 3).unwrap();
    let kappa = relative_condition_number(&other, &point, &point, &env);
    println!("\npoint-mass pi_sft against a disjoint comparator: kappa = {kappa}");
    println!("(infinite kappa means the pessimism bound has no coverage to work with)");

    // Coverage of a narrow behavior policy: both sampling policies nearly
    // deterministic leaves most directions unexplored.
    let narrow = {
        let mut m = nalgebra::DMatrix::from_element(5, 3, 0.01);
        for s in 0..5 {
            m[(s, 0)] = 0.98;
        }
        TabularPolicy::from_matrix(m).unwrap()
    };
    let xi_narrow = uniform_coverage_population(
        &env,
        &BehaviorRule::PolicyPair {
            first: narrow.clone(),
            second: narrow,
        },
    )
    .unwrap();
    println!("\nxi under a nearly deterministic behavior pair: {xi_narrow:.6}");
    println!("xi under uniform distinct pairs:                {xi:.6}");
}
