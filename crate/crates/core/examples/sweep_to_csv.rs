//! Drive a full experiment sweep from code: build the config, run it, write
//! the CSV, then fit the error rate and compare the two orderings — the same
//! operations the `alignsim` binary exposes as subcommands.
//!
//! Run with: cargo run --release --example sweep_to_csv

use alignsim::corruption::{CorruptionStrategy, PipelineSetting};
use alignsim::harness::{
    compare_settings, csv_string, fit_rate, run_sweep_with_workers, AlphaSpec, BehaviorSpec,
    EnvSource, ExperimentConfig, GammaSource, GridSpec, Mode, PolicySearchSpec, SolverSettings,
    StepSpec,
};

fn main() {
    let cfg = ExperimentConfig {
        env: EnvSource::Generate {
            seed: 2024,
            d: 8,
            num_states: 16,
            num_actions: 4,
            b: 1.0,
            theta_norm: None,
        },
        grid: GridSpec {
            n: vec![512, 1024, 2048, 4096],
            epsilon: vec![1.0],
            alpha: vec![AlphaSpec::Scalar(0.05)],
            settings: vec![
                PipelineSetting::Clean,
                PipelineSetting::Ctl,
                PipelineSetting::Ltc,
            ],
            strategies: vec![CorruptionStrategy::OracleFlip],
        },
        trials: 10,
        master_seed: 1,
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

    // The same document the CLI consumes: alignsim sweep --config sweep.json ...
    println!("config as JSON:\n{}\n", cfg.to_json().unwrap());

    let result = run_sweep_with_workers(&cfg, None).unwrap();
    println!(
        "ran {} trials ({} failed)",
        result.records.len(),
        result.failures
    );

    let out = std::env::temp_dir().join("alignsim_demo_sweep.csv");
    std::fs::write(&out, csv_string(&result.records)).unwrap();
    println!("wrote {}", out.display());

    // Rate fit on the clean subset only.
    let clean: Vec<_> = result
        .records
        .iter()
        .filter(|r| r.setting == PipelineSetting::Clean)
        .cloned()
        .collect();
    let slope = fit_rate(&clean, "n", "est_err_l2").unwrap();
    println!("\nclean error rate: slope log(err) vs log(n) = {slope:.3} (expect about -0.5)");

    let summary = compare_settings(&result.records, "est_err_l2").unwrap();
    println!(
        "ctl/ltc comparison: mean_ctl {:.4}, mean_ltc {:.4}, ratio {:.2}, win_fraction {:.2}",
        summary.mean_ctl, summary.mean_ltc, summary.ratio, summary.win_fraction
    );
}
