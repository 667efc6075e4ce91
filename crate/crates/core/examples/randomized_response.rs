//! The local label-DP mechanism: randomized response, its retention and
//! debiasing constants, and the exact unbiasedness of the debiased label.
//!
//! Run with: cargo run --release --example randomized_response

use alignsim::privacy::{debias_scale, debiased_label, randomize_label, retention_prob};
use alignsim::rng::rng_from_seed;

fn main() {
    println!("epsilon     keep      c(eps)    debias(1)  debias(0)");
    for eps in [0.1, 0.5, 1.0, 3.0_f64.ln(), 2.0, 5.0, f64::INFINITY] {
        let keep = retention_prob(eps).unwrap();
        let c = debias_scale(eps).unwrap();
        println!(
            "{:<10} {keep:<9.4} {c:<9.4} {:<+10.4} {:<+10.4}",
            if eps.is_infinite() {
                "inf".to_string()
            } else {
                format!("{eps:.4}")
            },
            debiased_label(1, eps).unwrap(),
            debiased_label(0, eps).unwrap(),
        );
    }

    // Exact unbiasedness: averaging the debiased label over the two
    // randomizer outcomes recovers the clean bit.
    println!("\nexact unbiasedness (two-outcome enumeration):");
    for eps in [0.5, 3.0_f64.ln()] {
        let keep = retention_prob(eps).unwrap();
        for y in [0u8, 1u8] {
            let expectation = keep * debiased_label(y, eps).unwrap()
                + (1.0 - keep) * debiased_label(1 - y, eps).unwrap();
            println!("  eps={eps:.4} y={y}: E[debias(R(y))] = {expectation:+.15}");
        }
    }

    // Monte Carlo flip frequencies against the closed form 1/(e^eps + 1).
    println!("\nempirical flip frequency over 1e6 draws:");
    let mut rng = rng_from_seed(42);
    for eps in [0.5, 3.0_f64.ln(), 2.0] {
        let trials = 1_000_000;
        let flips = (0..trials)
            .filter(|_| randomize_label(1, eps, &mut rng).unwrap() == 0)
            .count();
        let expected = 1.0 / (eps.exp() + 1.0);
        println!(
            "  eps={eps:.4}: flipped {:.4} of labels (closed form {expected:.4})",
            flips as f64 / trials as f64
        );
    }
}
