//! Row-stochastic tabular policies over a finite state/action space.

use nalgebra::DMatrix;
use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::SimRng;

const ROW_SUM_TOL: f64 = 1e-12;

/// A policy as an `S x A` row-stochastic matrix: `probs[(s, a)] = pi(a | s)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularPolicy {
    probs: DMatrix<f64>,
}

impl TabularPolicy {
    /// Validates row sums (within `1e-12`) and nonnegativity.
    pub fn from_matrix(probs: DMatrix<f64>) -> Result<Self> {
        if probs.nrows() == 0 || probs.ncols() == 0 {
            return Err(Error::config("policy must have at least one state and action"));
        }
        for s in 0..probs.nrows() {
            let row = probs.row(s);
            if row.iter().any(|&p| !p.is_finite() || p < 0.0) {
                return Err(Error::domain(format!(
                    "policy row {s} has a negative or non-finite entry"
                )));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > ROW_SUM_TOL {
                return Err(Error::domain(format!(
                    "policy row {s} sums to {sum}, expected 1"
                )));
            }
        }
        Ok(Self { probs })
    }

    pub fn uniform(num_states: usize, num_actions: usize) -> Self {
        let p = 1.0 / num_actions as f64;
        Self {
            probs: DMatrix::from_element(num_states, num_actions, p),
        }
    }

    /// Point mass on `actions[s]` in each state `s`.
    pub fn deterministic(actions: &[usize], num_actions: usize) -> Result<Self> {
        let mut probs = DMatrix::zeros(actions.len(), num_actions);
        for (s, &a) in actions.iter().enumerate() {
            if a >= num_actions {
                return Err(Error::config(format!(
                    "action {a} out of range for {num_actions} actions"
                )));
            }
            probs[(s, a)] = 1.0;
        }
        Self::from_matrix(probs)
    }

    pub fn num_states(&self) -> usize {
        self.probs.nrows()
    }

    pub fn num_actions(&self) -> usize {
        self.probs.ncols()
    }

    pub fn prob(&self, state: usize, action: usize) -> f64 {
        self.probs[(state, action)]
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.probs
    }

    /// Convex combination `(1 - t) * self + t * other`, row-renormalized to
    /// keep sums at exactly one under repeated mixing.
    pub fn mix(&self, other: &TabularPolicy, t: f64) -> TabularPolicy {
        let mut probs = &self.probs * (1.0 - t) + &other.probs * t;
        for s in 0..probs.nrows() {
            let sum: f64 = probs.row(s).iter().sum();
            if sum > 0.0 {
                for a in 0..probs.ncols() {
                    probs[(s, a)] /= sum;
                }
            }
        }
        TabularPolicy { probs }
    }

    pub fn sample_action(&self, state: usize, rng: &mut SimRng) -> usize {
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        let last = self.num_actions() - 1;
        for a in 0..=last {
            acc += self.probs[(state, a)];
            if u < acc {
                return a;
            }
        }
        last
    }
}
