//! Build a linear preference environment, sample a Bradley-Terry labeled
//! dataset, and check the empirical label frequencies against the model.
//!
//! Run with: cargo run --release --example bt_dataset

use std::collections::HashMap;

use alignsim::env::{bt_prob, sample_dataset, sigmoid, BehaviorRule, Environment};
use alignsim::rng::rng_from_seed;

fn main() {
    let mut rng = rng_from_seed(7);
    let env = Environment::random(&mut rng, 4, 3, 3, 1.0).unwrap();
    println!(
        "environment: d={} S={} A={} B={}",
        env.dim(),
        env.num_states(),
        env.num_actions(),
        env.norm_bound()
    );
    println!("reward table <theta*, phi(s,a)>:");
    for s in 0..env.num_states() {
        let rewards: Vec<String> = (0..env.num_actions())
            .map(|a| format!("{:+.3}", env.reward(s, a)))
            .collect();
        println!("  state {s}: [{}]", rewards.join(", "));
    }

    // The headline probability: P(second action wins) = sigmoid(reward gap).
    let p = bt_prob(env.reward(0, 1), env.reward(0, 0)).unwrap();
    println!(
        "\nbt_prob(r(0,1), r(0,0)) = {p:.4}  (sigmoid of the gap {:+.4})",
        env.reward(0, 1) - env.reward(0, 0)
    );

    let n = 200_000;
    let ds = sample_dataset(&env, n, &BehaviorRule::UniformDistinctPairs, &mut rng).unwrap();
    println!("\nsampled {n} records; checking per-pair label frequencies:");

    let mut counts: HashMap<(usize, usize, usize), (usize, usize)> = HashMap::new();
    for r in &ds.records {
        let e = counts
            .entry((r.state, r.action_first, r.action_second))
            .or_default();
        e.0 += 1;
        e.1 += r.label as usize;
    }
    let mut keys: Vec<_> = counts.keys().copied().collect();
    keys.sort();
    println!("  (s, a0, a1)   count   freq(y=1)   model p");
    for (s, a0, a1) in keys.into_iter().take(9) {
        let (total, ones) = counts[&(s, a0, a1)];
        let x = env.diff_feature(s, a1, a0);
        let p = sigmoid(env.theta_star().dot(&x));
        println!(
            "  ({s}, {a0}, {a1})     {total:>6}   {:>8.4}   {p:>7.4}",
            ones as f64 / total as f64
        );
    }
    println!("  ... frequencies track the Bradley-Terry probabilities.");
}
