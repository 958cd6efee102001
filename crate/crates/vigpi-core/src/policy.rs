//! Tabular policies: one probability row over actions per state.

use serde::{Deserialize, Serialize};

use crate::error::OperatorError;
use crate::value::QTable;

/// Tolerance for "row sums to one" checks.
pub const ROW_SUM_TOL: f64 = 1e-12;

/// A stochastic tabular policy. Row `s` is the distribution pi(.|s).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TabularPolicy {
    probs: Vec<Vec<f64>>,
}

impl TabularPolicy {
    /// The uniform policy over `num_actions` actions at every state.
    pub fn uniform(num_states: usize, num_actions: usize) -> Self {
        let p = 1.0 / num_actions as f64;
        Self {
            probs: vec![vec![p; num_actions]; num_states],
        }
    }

    /// A deterministic policy selecting `actions[s]` at state `s`.
    pub fn deterministic(num_actions: usize, actions: &[usize]) -> Self {
        let probs = actions
            .iter()
            .map(|&a| {
                let mut row = vec![0.0; num_actions];
                row[a] = 1.0;
                row
            })
            .collect();
        Self { probs }
    }

    /// Builds a policy from explicit rows, checking each row is a
    /// distribution (non-negative, sums to 1 within `ROW_SUM_TOL`).
    pub fn from_rows(probs: Vec<Vec<f64>>) -> Result<Self, OperatorError> {
        if probs.is_empty() || probs[0].is_empty() {
            return Err(OperatorError::ShapeMismatch(
                "policy must be non-empty".into(),
            ));
        }
        let width = probs[0].len();
        for (s, row) in probs.iter().enumerate() {
            if row.len() != width {
                return Err(OperatorError::ShapeMismatch(format!(
                    "policy row {s} has {} entries, expected {width}",
                    row.len()
                )));
            }
            if row.iter().any(|p| !p.is_finite() || *p < 0.0) {
                return Err(OperatorError::ShapeMismatch(format!(
                    "policy row {s} has a negative or non-finite entry"
                )));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > ROW_SUM_TOL {
                return Err(OperatorError::ShapeMismatch(format!(
                    "policy row {s} sums to {sum}, not 1"
                )));
            }
        }
        Ok(Self { probs })
    }

    /// Internal constructor for rows produced by operator code, which are
    /// normalized by construction.
    pub(crate) fn from_normalized_rows(probs: Vec<Vec<f64>>) -> Self {
        debug_assert!(probs
            .iter()
            .all(|row| (row.iter().sum::<f64>() - 1.0).abs() <= ROW_SUM_TOL));
        Self { probs }
    }

    pub fn num_states(&self) -> usize {
        self.probs.len()
    }

    pub fn num_actions(&self) -> usize {
        self.probs.first().map_or(0, Vec::len)
    }

    pub fn prob(&self, state: usize, action: usize) -> f64 {
        self.probs[state][action]
    }

    pub fn row(&self, state: usize) -> &[f64] {
        &self.probs[state]
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.probs
    }

    /// True when every row places all mass on a single action.
    pub fn is_deterministic(&self) -> bool {
        self.probs
            .iter()
            .all(|row| row.iter().filter(|p| **p > 0.0).count() == 1)
    }

    /// The selected action at `state` for a deterministic row.
    pub fn action(&self, state: usize) -> Option<usize> {
        let mut chosen = None;
        for (a, p) in self.probs[state].iter().enumerate() {
            if *p > 0.0 {
                if chosen.is_some() {
                    return None;
                }
                chosen = Some(a);
            }
        }
        chosen
    }

    /// Expected q-value at `state`: sum_a pi(a|s) q(s,a).
    pub fn expected_value(&self, state: usize, q: &QTable) -> f64 {
        self.probs[state]
            .iter()
            .zip(q.row(state))
            .map(|(p, v)| p * v)
            .sum()
    }
}
