//! The ordering separation: corrupting after the randomizer (ltc) costs more
//! than corrupting before it (ctl), because post-randomizer flips are
//! amplified by the debiasing constant c(eps).
//!
//! Run with: cargo run --release --example ctl_vs_ltc

use alignsim::corruption::{CorruptionStrategy, PipelineSetting};
use alignsim::harness::{
    compare_settings, run_sweep, AlphaSpec, BehaviorSpec, EnvSource, ExperimentConfig,
    GammaSource, GridSpec, Mode, PolicySearchSpec, SolverSettings, StepSpec,
};
use alignsim::privacy::debias_scale;

fn main() {
    let eps = 0.5;
    let cfg = ExperimentConfig {
        env: EnvSource::Generate {
            seed: 2024,
            d: 8,
            num_states: 32,
            num_actions: 8,
            b: 3.0,
            theta_norm: Some(1.0),
        },
        grid: GridSpec {
            n: vec![1 << 13],
            epsilon: vec![eps],
            alpha: vec![AlphaSpec::Scalar(0.1)],
            settings: vec![PipelineSetting::Ctl, PipelineSetting::Ltc],
            strategies: vec![CorruptionStrategy::OracleFlip],
        },
        trials: 16,
        master_seed: 7,
        mode: Mode::Estimate,
        behavior: BehaviorSpec::default(),
        solver: SolverSettings {
            max_iters: 50_000,
            grad_tol: 1e-6,
            step: StepSpec::FixedAuto,
        },
        lambda_scale: 1.0,
        delta_conf: 0.05,
        c_const: 1.0,
        beta: 0.1,
        theta_sft: None,
        gamma_source: GammaSource::Theory,
        policy_search: PolicySearchSpec::default(),
    };

    println!(
        "oracle-flip corruption, alpha = 0.1, eps = {eps} (c(eps) = {:.2})",
        debias_scale(eps).unwrap()
    );
    println!("running {} paired trials per setting...", cfg.trials);
    let result = run_sweep(&cfg).unwrap();
    assert_eq!(result.failures, 0);

    println!("\n  seed                  ctl error   ltc error");
    let mut rows: Vec<(u64, f64, f64)> = Vec::new();
    for rec in &result.records {
        if rec.setting == PipelineSetting::Ctl {
            let partner = result
                .records
                .iter()
                .find(|r| r.setting == PipelineSetting::Ltc && r.seed == rec.seed)
                .unwrap();
            rows.push((
                rec.seed,
                rec.est_err_l2.unwrap(),
                partner.est_err_l2.unwrap(),
            ));
        }
    }
    for (seed, ctl, ltc) in rows.iter().take(8) {
        println!("  {seed:<20}  {ctl:<10.3}  {ltc:<10.3}");
    }
    println!("  ...");

    let summary = compare_settings(&result.records, "est_err_l2").unwrap();
    println!(
        "\npaired summary: mean_ctl {:.3}, mean_ltc {:.3}, ratio {:.2}, win_fraction {:.2}",
        summary.mean_ctl, summary.mean_ltc, summary.ratio, summary.win_fraction
    );
    println!("ltc >= ctl on every paired seed: the order of privacy and corruption matters.");
}
