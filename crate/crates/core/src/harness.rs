//! Experiment configuration, deterministic sweeps, CSV emission, and the
//! rate-fit and paired-comparison analyses.
//!
//! A sweep crosses the grid lists into cells, drops the coordinates a setting
//! does not use, and runs `trials` independent trials per cell. Child seeds
//! are derived from `(master_seed, n_index, trial_index)`: deliberately not
//! from the full cell index, so that trials at the same `n` share their
//! environment, clean dataset, and stage RNG streams across settings,
//! epsilons, and alphas. Paired comparisons (`ctl` vs `ltc` at matched seeds)
//! are meaningful because of this coupling.

use std::collections::HashSet;
use std::time::Instant;

use nalgebra::DVector;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corruption::{
    apply_pipeline, CorruptionSpec, CorruptionStrategy, PipelineSetting,
};
use crate::dpo::{dpo_pipeline, log_linear_policy, DpoConfig};
use crate::env::{
    project_theta_star, sample_dataset, BehaviorRule, Environment, EnvironmentSpec,
};
use crate::error::{Error, Result};
use crate::estimator::{estimate, ConstraintSet, SolverConfig, StepRule};
use crate::metrics::{
    empirical_covariance, relative_condition_number, suboptimality, uniform_coverage_population,
    weighted_norm, EvalReport,
};
use crate::policy::TabularPolicy;
use crate::privacy::PrivacyParams;
use crate::rlhf::{
    gamma_bound, greedy_policy, oracle_gamma, pessimistic_policy, BoundInputs, ConfidenceSet,
    CorruptionLevel, PolicySearch,
};
use crate::rng::{child_seed, rng_from_seed, SimRng};

/// What each trial computes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Estimate,
    Rlhf,
    Dpo,
    Kappa,
}

impl Mode {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Estimate => "estimate",
            Self::Rlhf => "rlhf",
            Self::Dpo => "dpo",
            Self::Kappa => "kappa",
        }
    }

    fn from_name(s: &str) -> Result<Self> {
        Ok(match s {
            "estimate" => Self::Estimate,
            "rlhf" => Self::Rlhf,
            "dpo" => Self::Dpo,
            "kappa" => Self::Kappa,
            other => return Err(Error::Csv(format!("unknown mode {other}"))),
        })
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// The environment is either given verbatim or generated per trial.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvSource {
    Explicit(Box<EnvironmentSpec>),
    Generate {
        seed: u64,
        d: usize,
        num_states: usize,
        num_actions: usize,
        /// Norm bound of the feasible parameter ball.
        b: f64,
        /// Norm of the drawn true parameter; defaults to `b`. A value below
        /// `b` leaves the estimator slack inside the constraint set.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        theta_norm: Option<f64>,
    },
}

/// Corruption budget: a single fraction, or the `[alpha1, alpha2]` pair
/// consumed by the `clc` setting.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AlphaSpec {
    Scalar(f64),
    Pair(f64, f64),
}

fn serialize_epsilons<S: serde::Serializer>(eps: &[f64], s: S) -> std::result::Result<S::Ok, S::Error> {
    use serde::ser::SerializeSeq;
    let mut seq = s.serialize_seq(Some(eps.len()))?;
    for &e in eps {
        if e.is_infinite() {
            seq.serialize_element("inf")?;
        } else {
            seq.serialize_element(&e)?;
        }
    }
    seq.end()
}

fn deserialize_epsilons<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Vec<f64>, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Raw {
        Num(f64),
        Name(String),
    }
    let raw: Vec<Raw> = Vec::deserialize(d)?;
    raw.into_iter()
        .map(|r| match r {
            Raw::Num(v) => Ok(v),
            Raw::Name(s) if matches!(s.as_str(), "inf" | "+inf" | "infinity") => {
                Ok(f64::INFINITY)
            }
            Raw::Name(s) => Err(serde::de::Error::custom(format!(
                "epsilon must be a number or \"inf\", got {s:?}"
            ))),
        })
        .collect()
}

/// Grid of experiment coordinates. `epsilon` entries may be numbers or the
/// string `"inf"` for the non-private path.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridSpec {
    pub n: Vec<usize>,
    #[serde(
        serialize_with = "serialize_epsilons",
        deserialize_with = "deserialize_epsilons",
        default
    )]
    pub epsilon: Vec<f64>,
    #[serde(default)]
    pub alpha: Vec<AlphaSpec>,
    pub settings: Vec<PipelineSetting>,
    #[serde(default)]
    pub strategies: Vec<CorruptionStrategy>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepSpec {
    FixedAuto,
    Fixed(f64),
    Backtracking,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverSettings {
    pub max_iters: usize,
    pub grad_tol: f64,
    pub step: StepSpec,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            max_iters: 100_000,
            grad_tol: 1e-8,
            step: StepSpec::FixedAuto,
        }
    }
}

impl SolverSettings {
    pub fn to_config(self) -> SolverConfig {
        SolverConfig {
            max_iters: self.max_iters,
            grad_tol: self.grad_tol,
            step: match self.step {
                StepSpec::FixedAuto => StepRule::FixedAuto,
                StepSpec::Fixed(v) => StepRule::Fixed(v),
                StepSpec::Backtracking => StepRule::Backtracking,
            },
            record_history: false,
        }
    }
}

/// Where the pessimism radius comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GammaSource {
    /// The theory bound with the configured constant `C`.
    #[default]
    Theory,
    /// `||theta_hat - theta_star||_{Sigma_hat + lambda I}`; simulation-only.
    Oracle,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicySearchSpec {
    Enumerate,
    FrankWolfe(usize),
}

impl Default for PolicySearchSpec {
    fn default() -> Self {
        Self::FrankWolfe(500)
    }
}

impl PolicySearchSpec {
    fn to_mode(self) -> PolicySearch {
        match self {
            Self::Enumerate => PolicySearch::Enumerate,
            Self::FrankWolfe(k) => PolicySearch::FrankWolfe(k),
        }
    }
}

/// How action pairs are drawn during dataset generation.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BehaviorSpec {
    #[default]
    UniformDistinct,
    PolicyPair {
        first: Vec<Vec<f64>>,
        second: Vec<Vec<f64>>,
    },
}

impl BehaviorSpec {
    fn to_rule(&self, num_states: usize, num_actions: usize) -> Result<BehaviorRule> {
        match self {
            Self::UniformDistinct => Ok(BehaviorRule::UniformDistinctPairs),
            Self::PolicyPair { first, second } => {
                let build = |rows: &Vec<Vec<f64>>| -> Result<TabularPolicy> {
                    if rows.len() != num_states || rows.iter().any(|r| r.len() != num_actions) {
                        return Err(Error::config("behavior policy shape mismatch"));
                    }
                    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
                    TabularPolicy::from_matrix(nalgebra::DMatrix::from_row_slice(
                        num_states,
                        num_actions,
                        &flat,
                    ))
                };
                Ok(BehaviorRule::PolicyPair {
                    first: build(first)?,
                    second: build(second)?,
                })
            }
        }
    }
}

fn default_lambda_scale() -> f64 {
    1.0
}
fn default_delta_conf() -> f64 {
    0.05
}
fn default_c_const() -> f64 {
    1.0
}
fn default_beta() -> f64 {
    0.1
}

/// One JSON document drives a whole sweep.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub env: EnvSource,
    pub grid: GridSpec,
    pub trials: usize,
    pub master_seed: u64,
    pub mode: Mode,
    #[serde(default)]
    pub behavior: BehaviorSpec,
    #[serde(default)]
    pub solver: SolverSettings,
    /// Multiplier on the default ridge `d * ln(n / delta) / n`.
    #[serde(default = "default_lambda_scale")]
    pub lambda_scale: f64,
    #[serde(default = "default_delta_conf")]
    pub delta_conf: f64,
    /// The abstract constant in the theory radius.
    #[serde(default = "default_c_const")]
    pub c_const: f64,
    #[serde(default = "default_beta")]
    pub beta: f64,
    /// SFT policy parameter for DPO runs; zero (uniform SFT) when absent.
    #[serde(default)]
    pub theta_sft: Option<Vec<f64>>,
    #[serde(default)]
    pub gamma_source: GammaSource,
    #[serde(default)]
    pub policy_search: PolicySearchSpec,
}

impl ExperimentConfig {
    pub fn from_json(json: &str) -> Result<Self> {
        Ok(serde_json::from_str(json)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Default ridge: `lambda_scale * d * ln(n / delta_conf) / n`.
    pub fn lambda(&self, n: usize, d: usize) -> f64 {
        self.lambda_scale * d as f64 * (n as f64 / self.delta_conf).ln() / n as f64
    }

    fn dims(&self) -> (usize, usize, usize, f64) {
        match &self.env {
            EnvSource::Explicit(spec) => {
                (spec.d, spec.num_states, spec.num_actions, spec.norm_bound)
            }
            EnvSource::Generate {
                d,
                num_states,
                num_actions,
                b,
                ..
            } => (*d, *num_states, *num_actions, *b),
        }
    }

    fn theta_sft_vec(&self, d: usize) -> Result<DVector<f64>> {
        match &self.theta_sft {
            None => Ok(DVector::zeros(d)),
            Some(v) => {
                if v.len() != d {
                    return Err(Error::config("theta_sft length must equal d"));
                }
                let vec = DVector::from_vec(v.clone());
                if vec.iter().sum::<f64>().abs() > 1e-10 {
                    return Err(Error::config("theta_sft must be zero-sum"));
                }
                Ok(vec)
            }
        }
    }

    fn validate(&self) -> Result<()> {
        let (d, s, a, b) = self.dims();
        if d < 2 {
            return Err(Error::config("d must be >= 2"));
        }
        if s == 0 || a < 2 {
            return Err(Error::config("need at least one state and two actions"));
        }
        if b.is_nan() || b <= 0.0 {
            return Err(Error::config("B must be positive"));
        }
        if self.delta_conf.is_nan() || self.delta_conf <= 0.0 || self.delta_conf >= 1.0 {
            return Err(Error::config("delta_conf must lie in (0, 1)"));
        }
        if self.lambda_scale.is_nan() || self.lambda_scale <= 0.0 {
            return Err(Error::config("lambda_scale must be positive"));
        }
        if self.c_const.is_nan() || self.c_const <= 0.0 {
            return Err(Error::config("c_const must be positive"));
        }
        if self.beta.is_nan() || self.beta <= 0.0 {
            return Err(Error::config("beta must be positive"));
        }
        self.theta_sft_vec(d)?;
        Ok(())
    }
}

/// One grid cell after normalization: coordinates a setting does not use are
/// dropped, and duplicate cells are merged.
#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub n: usize,
    /// Index of `n` in the grid; the only cell coordinate that feeds the
    /// child seed.
    pub n_index: usize,
    pub setting: PipelineSetting,
    pub epsilon: Option<f64>,
    pub alpha: Option<AlphaSpec>,
    pub strategy: Option<CorruptionStrategy>,
}

impl Cell {
    fn corruption_spec(&self) -> Result<CorruptionSpec> {
        let strategy = self.strategy.unwrap_or(CorruptionStrategy::RandomFlip);
        match self.alpha {
            None => CorruptionSpec::new(0.0, strategy),
            Some(AlphaSpec::Scalar(a)) => CorruptionSpec::new(a, strategy),
            Some(AlphaSpec::Pair(a1, a2)) => CorruptionSpec::clc(a1, a2, strategy),
        }
    }

    fn corruption_level(&self) -> CorruptionLevel {
        match self.alpha {
            None => CorruptionLevel::Single(0.0),
            Some(AlphaSpec::Scalar(a)) => CorruptionLevel::Single(a),
            Some(AlphaSpec::Pair(a1, a2)) => CorruptionLevel::Split {
                first: a1,
                second: a2,
            },
        }
    }

    fn dedup_key(&self) -> (usize, u8, u64, u8, u64, u64, u8) {
        let (tag, a1, a2) = match self.alpha {
            None => (0u8, 0u64, 0u64),
            Some(AlphaSpec::Scalar(a)) => (1, a.to_bits(), 0),
            Some(AlphaSpec::Pair(a, b)) => (2, a.to_bits(), b.to_bits()),
        };
        let strat = match self.strategy {
            None => 0u8,
            Some(CorruptionStrategy::RandomFlip) => 1,
            Some(CorruptionStrategy::OracleFlip) => 2,
            Some(CorruptionStrategy::LeverageFlip) => 3,
        };
        (
            self.n_index,
            self.setting as u8,
            self.epsilon.map_or(u64::MAX, f64::to_bits),
            tag,
            a1,
            a2,
            strat,
        )
    }
}

/// Crosses the grid into normalized, deduplicated cells.
pub fn expand_cells(cfg: &ExperimentConfig) -> Result<Vec<Cell>> {
    cfg.validate()?;
    let grid = &cfg.grid;
    let mut cells = Vec::new();
    let mut seen = HashSet::new();
    for (n_index, &n) in grid.n.iter().enumerate() {
        if n == 0 {
            return Err(Error::config("grid n values must be >= 1"));
        }
        for &setting in &grid.settings {
            // kappa trials never touch the pipeline; collapse its coordinates.
            let (uses_privacy, uses_corruption) = if cfg.mode == Mode::Kappa {
                (false, false)
            } else {
                (setting.uses_privacy(), setting.uses_corruption())
            };
            let setting = if cfg.mode == Mode::Kappa {
                PipelineSetting::Clean
            } else {
                setting
            };
            let eps_options: Vec<Option<f64>> = if uses_privacy {
                grid.epsilon.iter().map(|&e| Some(e)).collect()
            } else {
                vec![None]
            };
            let alpha_options: Vec<Option<AlphaSpec>> = if uses_corruption {
                let compatible: Vec<Option<AlphaSpec>> = grid
                    .alpha
                    .iter()
                    .filter(|a| match (setting, a) {
                        (PipelineSetting::Clc, AlphaSpec::Pair(..)) => true,
                        (PipelineSetting::Clc, AlphaSpec::Scalar(_)) => false,
                        (_, AlphaSpec::Scalar(_)) => true,
                        (_, AlphaSpec::Pair(..)) => false,
                    })
                    .map(|&a| Some(a))
                    .collect();
                if compatible.is_empty() && !grid.alpha.is_empty() {
                    return Err(Error::config(format!(
                        "setting {setting} has no compatible alpha entries \
                         (clc takes [alpha1, alpha2] pairs, other settings take scalars)"
                    )));
                }
                compatible
            } else {
                vec![None]
            };
            let strategy_options: Vec<Option<CorruptionStrategy>> = if uses_corruption {
                grid.strategies.iter().map(|&s| Some(s)).collect()
            } else {
                vec![None]
            };
            for &epsilon in &eps_options {
                if let Some(e) = epsilon {
                    PrivacyParams::new(e)?;
                }
                for &alpha in &alpha_options {
                    for &strategy in &strategy_options {
                        let cell = Cell {
                            n,
                            n_index,
                            setting,
                            epsilon,
                            alpha,
                            strategy,
                        };
                        cell.corruption_spec()?;
                        if seen.insert(cell.dedup_key()) {
                            cells.push(cell);
                        }
                    }
                }
            }
        }
    }
    Ok(cells)
}

/// One CSV row. Fields a mode does not produce stay `None` and serialize as
/// empty cells.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialRecord {
    pub seed: u64,
    pub mode: Mode,
    pub setting: PipelineSetting,
    pub strategy: Option<CorruptionStrategy>,
    pub n: usize,
    pub d: usize,
    pub epsilon: Option<f64>,
    pub alpha: Option<AlphaSpec>,
    pub est_err_l2: Option<f64>,
    pub est_err_weighted: Option<f64>,
    pub subopt_greedy: Option<f64>,
    pub subopt_pess: Option<f64>,
    pub subopt_dpo: Option<f64>,
    pub gamma_used: Option<f64>,
    pub kappa: Option<f64>,
    pub xi: Option<f64>,
    pub iters: Option<usize>,
    pub runtime_ms: Option<f64>,
}

pub const CSV_HEADER: &str = "seed,mode,setting,strategy,n,d,epsilon,alpha,\
est_err_l2,est_err_weighted,subopt_greedy,subopt_pess,subopt_dpo,gamma_used,\
kappa,xi,iters,runtime_ms";

fn fmt_f64(v: f64) -> String {
    if v.is_infinite() {
        if v > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{v}")
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

fn parse_f64(s: &str) -> Result<f64> {
    match s {
        "inf" => Ok(f64::INFINITY),
        "-inf" => Ok(f64::NEG_INFINITY),
        other => other
            .parse()
            .map_err(|_| Error::Csv(format!("bad float {other:?}"))),
    }
}

fn parse_opt_f64(s: &str) -> Result<Option<f64>> {
    if s.is_empty() {
        Ok(None)
    } else {
        parse_f64(s).map(Some)
    }
}

impl TrialRecord {
    fn empty(seed: u64, mode: Mode, cell: &Cell, d: usize) -> Self {
        Self {
            seed,
            mode,
            setting: cell.setting,
            strategy: cell.strategy,
            n: cell.n,
            d,
            epsilon: cell.epsilon,
            alpha: cell.alpha,
            est_err_l2: None,
            est_err_weighted: None,
            subopt_greedy: None,
            subopt_pess: None,
            subopt_dpo: None,
            gamma_used: None,
            kappa: None,
            xi: None,
            iters: None,
            runtime_ms: None,
        }
    }

    pub fn csv_row(&self) -> String {
        let alpha = match self.alpha {
            None => String::new(),
            Some(AlphaSpec::Scalar(a)) => fmt_f64(a),
            Some(AlphaSpec::Pair(a1, a2)) => format!("{}/{}", fmt_f64(a1), fmt_f64(a2)),
        };
        [
            self.seed.to_string(),
            self.mode.name().to_string(),
            self.setting.name().to_string(),
            self.strategy.map(|s| s.name().to_string()).unwrap_or_default(),
            self.n.to_string(),
            self.d.to_string(),
            fmt_opt(self.epsilon),
            alpha,
            fmt_opt(self.est_err_l2),
            fmt_opt(self.est_err_weighted),
            fmt_opt(self.subopt_greedy),
            fmt_opt(self.subopt_pess),
            fmt_opt(self.subopt_dpo),
            fmt_opt(self.gamma_used),
            fmt_opt(self.kappa),
            fmt_opt(self.xi),
            self.iters.map(|i| i.to_string()).unwrap_or_default(),
            fmt_opt(self.runtime_ms),
        ]
        .join(",")
    }

    pub fn from_csv_row(line: &str) -> Result<Self> {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 18 {
            return Err(Error::Csv(format!(
                "expected 18 fields, got {}",
                fields.len()
            )));
        }
        let strategy = match fields[3] {
            "" => None,
            "random_flip" => Some(CorruptionStrategy::RandomFlip),
            "oracle_flip" => Some(CorruptionStrategy::OracleFlip),
            "leverage_flip" => Some(CorruptionStrategy::LeverageFlip),
            other => return Err(Error::Csv(format!("unknown strategy {other}"))),
        };
        let setting = match fields[2] {
            "clean" => PipelineSetting::Clean,
            "private_only" => PipelineSetting::PrivateOnly,
            "corrupt_only" => PipelineSetting::CorruptOnly,
            "ctl" => PipelineSetting::Ctl,
            "ltc" => PipelineSetting::Ltc,
            "clc" => PipelineSetting::Clc,
            other => return Err(Error::Csv(format!("unknown setting {other}"))),
        };
        let alpha = if fields[7].is_empty() {
            None
        } else if let Some((a1, a2)) = fields[7].split_once('/') {
            Some(AlphaSpec::Pair(parse_f64(a1)?, parse_f64(a2)?))
        } else {
            Some(AlphaSpec::Scalar(parse_f64(fields[7])?))
        };
        Ok(Self {
            seed: fields[0]
                .parse()
                .map_err(|_| Error::Csv("bad seed".into()))?,
            mode: Mode::from_name(fields[1])?,
            setting,
            strategy,
            n: fields[4].parse().map_err(|_| Error::Csv("bad n".into()))?,
            d: fields[5].parse().map_err(|_| Error::Csv("bad d".into()))?,
            epsilon: parse_opt_f64(fields[6])?,
            alpha,
            est_err_l2: parse_opt_f64(fields[8])?,
            est_err_weighted: parse_opt_f64(fields[9])?,
            subopt_greedy: parse_opt_f64(fields[10])?,
            subopt_pess: parse_opt_f64(fields[11])?,
            subopt_dpo: parse_opt_f64(fields[12])?,
            gamma_used: parse_opt_f64(fields[13])?,
            kappa: parse_opt_f64(fields[14])?,
            xi: parse_opt_f64(fields[15])?,
            iters: if fields[16].is_empty() {
                None
            } else {
                Some(
                    fields[16]
                        .parse()
                        .map_err(|_| Error::Csv("bad iters".into()))?,
                )
            },
            runtime_ms: parse_opt_f64(fields[17])?,
        })
    }
}

/// Renders records as an RFC-4180 document with the fixed one-line header.
pub fn csv_string(records: &[TrialRecord]) -> String {
    let mut out = String::with_capacity(64 * (records.len() + 1));
    out.push_str(CSV_HEADER);
    out.push('\n');
    for r in records {
        out.push_str(&r.csv_row());
        out.push('\n');
    }
    out
}

pub fn parse_csv(text: &str) -> Result<Vec<TrialRecord>> {
    let mut lines = text.lines().map(|l| l.trim_end_matches('\r'));
    match lines.next() {
        Some(h) if h == CSV_HEADER => {}
        Some(h) => return Err(Error::Csv(format!("unexpected header {h:?}"))),
        None => return Err(Error::Csv("empty document".into())),
    }
    lines
        .filter(|l| !l.is_empty())
        .map(TrialRecord::from_csv_row)
        .collect()
}

/// Drops the trailing runtime column from a rendered CSV; runtimes are the
/// one legitimately nondeterministic field.
pub fn strip_runtime_column(csv: &str) -> String {
    csv.lines()
        .map(|l| match l.rfind(',') {
            Some(idx) => &l[..idx],
            None => l,
        })
        .collect::<Vec<_>>()
        .join("\n")
}

/// Numeric view of a record field, by CSV column name. Fields the record does
/// not carry (and pair-valued alphas) come back as `None`.
pub fn numeric_field(rec: &TrialRecord, field: &str) -> Result<Option<f64>> {
    Ok(match field {
        "seed" => Some(rec.seed as f64),
        "n" => Some(rec.n as f64),
        "d" => Some(rec.d as f64),
        "epsilon" => rec.epsilon,
        "alpha" => match rec.alpha {
            Some(AlphaSpec::Scalar(a)) => Some(a),
            _ => None,
        },
        "est_err_l2" => rec.est_err_l2,
        "est_err_weighted" => rec.est_err_weighted,
        "subopt_greedy" => rec.subopt_greedy,
        "subopt_pess" => rec.subopt_pess,
        "subopt_dpo" => rec.subopt_dpo,
        "gamma_used" => rec.gamma_used,
        "kappa" => rec.kappa,
        "xi" => rec.xi,
        "iters" => rec.iters.map(|i| i as f64),
        "runtime_ms" => rec.runtime_ms,
        other => return Err(Error::config(format!("unknown field {other:?}"))),
    })
}

/// Runs one trial. Pure in `(cfg, cell, seed)`; the clock only feeds the
/// runtime column.
pub fn run_trial(
    cfg: &ExperimentConfig,
    base_env: Option<&Environment>,
    cell: &Cell,
    seed: u64,
) -> Result<TrialRecord> {
    let start = Instant::now();
    let mut rng = rng_from_seed(seed);
    let env = build_environment(cfg, base_env, seed)?;
    let behavior = cfg.behavior.to_rule(env.num_states(), env.num_actions())?;
    let d = env.dim();
    let lambda = cfg.lambda(cell.n, d);

    let mut rec = TrialRecord::empty(seed, cfg.mode, cell, d);
    rec.xi = Some(uniform_coverage_population(&env, &behavior)?);

    if cfg.mode == Mode::Kappa {
        let pi_star = greedy_policy(env.theta_star(), &env);
        let uniform = TabularPolicy::uniform(env.num_states(), env.num_actions());
        rec.kappa = Some(relative_condition_number(&pi_star, &uniform, &uniform, &env));
        rec.runtime_ms = Some(start.elapsed().as_secs_f64() * 1000.0);
        return Ok(rec);
    }

    let clean = sample_dataset(&env, cell.n, &behavior, &mut rng)?;
    let privacy = match cell.epsilon {
        Some(e) => PrivacyParams::new(e)?,
        None => PrivacyParams::non_private(),
    };
    let spec = cell.corruption_spec()?;
    let out = apply_pipeline(&clean, cell.setting, &privacy, &spec, &env, lambda, &mut rng)?;
    let eps_eff = cell.epsilon.unwrap_or(f64::INFINITY);
    let solver = cfg.solver.to_config();
    let sigma = empirical_covariance(&out.observed)?;

    match cfg.mode {
        Mode::Estimate | Mode::Rlhf => {
            let cs = ConstraintSet::new(env.norm_bound(), d)?;
            let report = estimate(&out.observed, eps_eff, &cs, &solver)?;
            let diff = &report.theta_hat - env.theta_star();
            rec.est_err_l2 = Some(diff.norm());
            rec.est_err_weighted = Some(weighted_norm(&diff, &sigma, lambda)?);
            rec.iters = Some(report.iters);

            if cfg.mode == Mode::Rlhf {
                let pi_star = greedy_policy(env.theta_star(), &env);
                let pi_ref = TabularPolicy::uniform(env.num_states(), env.num_actions());
                let pi_greedy = greedy_policy(&report.theta_hat, &env);
                rec.subopt_greedy = Some(suboptimality(&pi_greedy, &pi_star, &env));
                let gamma = match cfg.gamma_source {
                    GammaSource::Theory => gamma_bound(&BoundInputs {
                        n: cell.n,
                        d,
                        delta_conf: cfg.delta_conf,
                        lambda,
                        epsilon: eps_eff,
                        alpha: cell.corruption_level(),
                        setting: cell.setting,
                        c_const: cfg.c_const,
                        b_prime: env.norm_bound(),
                    })?,
                    GammaSource::Oracle => {
                        oracle_gamma(&report.theta_hat, env.theta_star(), &sigma, lambda)?
                    }
                };
                let cset =
                    ConfidenceSet::new(report.theta_hat.clone(), sigma.clone(), lambda, gamma)?;
                let pi_pess =
                    pessimistic_policy(&cset, &pi_ref, &env, cfg.policy_search.to_mode())?;
                // The sft pair defaults to the reference (uniform) policy.
                let eval = EvalReport::compute(
                    &env,
                    &behavior,
                    &report.theta_hat,
                    &sigma,
                    lambda,
                    &pi_pess,
                    &pi_star,
                    &pi_ref,
                    &pi_ref,
                )?;
                rec.subopt_pess = Some(eval.subopt);
                rec.gamma_used = Some(gamma);
                rec.kappa = Some(eval.kappa);
            }
        }
        Mode::Dpo => {
            let theta_sft = cfg.theta_sft_vec(d)?;
            let dcfg = DpoConfig::new(cfg.beta, theta_sft.clone())?;
            let outcome = dpo_pipeline(&out.observed, &env, &dcfg, eps_eff, &solver)?;
            let diff = &outcome.report.theta_hat - env.theta_star();
            rec.est_err_l2 = Some(diff.norm());
            rec.est_err_weighted = Some(weighted_norm(&diff, &sigma, lambda)?);
            rec.iters = Some(outcome.report.iters);
            // The KL-regularized optimum in closed form.
            let theta_pi = env.theta_star() / cfg.beta + &theta_sft;
            let pi_star = log_linear_policy(&theta_pi, &env);
            rec.subopt_dpo = Some(suboptimality(&outcome.policy, &pi_star, &env));
        }
        Mode::Kappa => unreachable!(),
    }

    rec.runtime_ms = Some(start.elapsed().as_secs_f64() * 1000.0);
    Ok(rec)
}

fn build_environment(
    cfg: &ExperimentConfig,
    base_env: Option<&Environment>,
    seed: u64,
) -> Result<Environment> {
    if let Some(env) = base_env {
        return Ok(env.clone());
    }
    match &cfg.env {
        EnvSource::Explicit(spec) => Environment::try_from((**spec).clone()),
        EnvSource::Generate {
            seed: gen_seed,
            d,
            num_states,
            num_actions,
            b,
            theta_norm,
        } => {
            let norm = theta_norm.unwrap_or(*b);
            if norm.is_nan() || norm <= 0.0 || norm > *b + 1e-12 {
                return Err(Error::config("theta_norm must lie in (0, b]"));
            }
            let mut env_rng: SimRng = rng_from_seed(child_seed(*gen_seed, &[seed]));
            let raw: DVector<f64> =
                DVector::from_fn(*d, |_, _| StandardNormal.sample(&mut env_rng));
            let theta_env = match cfg.mode {
                Mode::Dpo => {
                    // DPO-realizable instance: draw the optimal policy
                    // parameter on the sphere, derive the reward parameter
                    // beta * (theta_pi - theta_sft).
                    let theta_sft = cfg.theta_sft_vec(*d)?;
                    let theta_pi = project_theta_star(&raw, norm)?;
                    let theta_env = (&theta_pi - &theta_sft) * cfg.beta;
                    if theta_env.norm() > *b + 1e-9 {
                        return Err(Error::config(
                            "beta * (theta_pi - theta_sft) exceeds B; lower beta or theta_sft",
                        ));
                    }
                    theta_env
                }
                _ => project_theta_star(&raw, norm)?,
            };
            Environment::random_with_theta(
                &mut env_rng,
                *d,
                *num_states,
                *num_actions,
                *b,
                theta_env,
            )
        }
    }
}

#[derive(Debug, Clone)]
pub struct SweepResult {
    pub records: Vec<TrialRecord>,
    pub failures: usize,
}

/// Runs every (cell, trial) job, in parallel, with deterministic output order
/// (cell-major, trial-minor). A failed trial yields a row with empty metric
/// fields and is counted in `failures`.
pub fn run_sweep(cfg: &ExperimentConfig) -> Result<SweepResult> {
    let cells = expand_cells(cfg)?;
    let base_env = match &cfg.env {
        EnvSource::Explicit(spec) => Some(Environment::try_from((**spec).clone())?),
        EnvSource::Generate { .. } => None,
    };
    let jobs: Vec<(usize, usize)> = (0..cells.len())
        .flat_map(|c| (0..cfg.trials).map(move |t| (c, t)))
        .collect();
    let outcomes: Vec<(usize, usize, Result<TrialRecord>)> = jobs
        .into_par_iter()
        .map(|(ci, t)| {
            let cell = &cells[ci];
            let seed = child_seed(cfg.master_seed, &[cell.n_index as u64, t as u64]);
            (ci, t, run_trial(cfg, base_env.as_ref(), cell, seed))
        })
        .collect();

    let (d, ..) = cfg.dims();
    let mut records = Vec::with_capacity(outcomes.len());
    let mut failures = 0;
    for (ci, t, outcome) in outcomes {
        match outcome {
            Ok(rec) => records.push(rec),
            Err(err) => {
                failures += 1;
                let cell = &cells[ci];
                let seed = child_seed(cfg.master_seed, &[cell.n_index as u64, t as u64]);
                eprintln!("trial failed (cell {ci}, trial {t}, seed {seed}): {err}");
                records.push(TrialRecord::empty(seed, cfg.mode, cell, d));
            }
        }
    }
    Ok(SweepResult { records, failures })
}

/// [`run_sweep`] under a bounded worker pool; `None` uses the global default.
pub fn run_sweep_with_workers(cfg: &ExperimentConfig, workers: Option<usize>) -> Result<SweepResult> {
    match workers {
        None => run_sweep(cfg),
        Some(w) => {
            if w == 0 {
                return Err(Error::config("workers must be >= 1"));
            }
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(w)
                .build()
                .map_err(|e| Error::config(format!("thread pool: {e}")))?;
            pool.install(|| run_sweep(cfg))
        }
    }
}

/// Ordinary least-squares slope of `log(mean y)` against `log(x)`, with
/// trials aggregated per distinct `x`.
pub fn fit_rate(records: &[TrialRecord], x_field: &str, y_field: &str) -> Result<f64> {
    use std::collections::BTreeMap;
    let mut groups: BTreeMap<u64, (f64, Vec<f64>)> = BTreeMap::new();
    for rec in records {
        let (Some(x), Some(y)) = (numeric_field(rec, x_field)?, numeric_field(rec, y_field)?)
        else {
            continue;
        };
        if !x.is_finite() || x <= 0.0 {
            return Err(Error::domain(format!("x value {x} is not positive finite")));
        }
        groups.entry(x.to_bits()).or_insert((x, Vec::new())).1.push(y);
    }
    if groups.len() < 3 {
        return Err(Error::config(format!(
            "need >= 3 distinct {x_field} values, got {}",
            groups.len()
        )));
    }
    let mut points = Vec::with_capacity(groups.len());
    for (x, ys) in groups.into_values() {
        let mean = ys.iter().sum::<f64>() / ys.len() as f64;
        if mean.is_nan() || mean <= 0.0 {
            return Err(Error::domain(format!(
                "mean {y_field} at {x_field} = {x} is not positive"
            )));
        }
        points.push((x.ln(), mean.ln()));
    }
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    Ok(sxy / sxx)
}

/// Paired `ctl` vs `ltc` comparison at matched `(n, epsilon, alpha, seed)`.
#[derive(Debug, Clone, Copy)]
pub struct CompareSummary {
    pub mean_ctl: f64,
    pub mean_ltc: f64,
    /// `mean_ltc / mean_ctl`.
    pub ratio: f64,
    /// Fraction of non-tied pairs where the `ltc` value exceeds the `ctl`
    /// value; NaN when every pair ties.
    pub win_fraction: f64,
    pub pairs: usize,
    pub ties: usize,
}

pub fn compare_settings(records: &[TrialRecord], metric: &str) -> Result<CompareSummary> {
    use std::collections::BTreeMap;
    type Key = (usize, u64, u8, u64, u64, u64);
    let key_of = |rec: &TrialRecord| -> Key {
        let (tag, a1, a2) = match rec.alpha {
            None => (0u8, 0u64, 0u64),
            Some(AlphaSpec::Scalar(a)) => (1, a.to_bits(), 0),
            Some(AlphaSpec::Pair(a, b)) => (2, a.to_bits(), b.to_bits()),
        };
        (
            rec.n,
            rec.epsilon.map_or(u64::MAX, f64::to_bits),
            tag,
            a1,
            a2,
            rec.seed,
        )
    };
    let mut ctl: BTreeMap<Key, f64> = BTreeMap::new();
    let mut ltc: BTreeMap<Key, f64> = BTreeMap::new();
    for rec in records {
        let side = match rec.setting {
            PipelineSetting::Ctl => &mut ctl,
            PipelineSetting::Ltc => &mut ltc,
            _ => continue,
        };
        let Some(value) = numeric_field(rec, metric)? else {
            continue;
        };
        if side.insert(key_of(rec), value).is_some() {
            return Err(Error::config(
                "duplicate (n, epsilon, alpha, seed) record makes the pairing ambiguous",
            ));
        }
    }
    if ctl.is_empty() || ltc.is_empty() {
        return Err(Error::config("need records for both ctl and ltc"));
    }
    if ctl.len() != ltc.len() || ctl.keys().any(|k| !ltc.contains_key(k)) {
        return Err(Error::config("unmatched ctl/ltc pairing"));
    }
    let mut sum_ctl = 0.0;
    let mut sum_ltc = 0.0;
    let mut wins = 0usize;
    let mut ties = 0usize;
    for (key, &c) in &ctl {
        let l = ltc[key];
        sum_ctl += c;
        sum_ltc += l;
        if l == c {
            ties += 1;
        } else if l > c {
            wins += 1;
        }
    }
    let pairs = ctl.len();
    let informative = pairs - ties;
    Ok(CompareSummary {
        mean_ctl: sum_ctl / pairs as f64,
        mean_ltc: sum_ltc / pairs as f64,
        ratio: sum_ltc / sum_ctl,
        win_fraction: if informative == 0 {
            f64::NAN
        } else {
            wins as f64 / informative as f64
        },
        pairs,
        ties,
    })
}
