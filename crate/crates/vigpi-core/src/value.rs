//! State-action and state value containers.

use serde::{Deserialize, Serialize};

use crate::error::DpError;

/// A per-(state, action) table of real values, one row per state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct QTable {
    rows: Vec<Vec<f64>>,
}

impl QTable {
    pub fn zeros(num_states: usize, num_actions: usize) -> Self {
        Self {
            rows: vec![vec![0.0; num_actions]; num_states],
        }
    }

    /// Builds a table from explicit rows; every entry must be finite and all
    /// rows must share one length.
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self, DpError> {
        if rows.is_empty() || rows[0].is_empty() {
            return Err(DpError::ShapeMismatch("q table must be non-empty".into()));
        }
        let width = rows[0].len();
        for (s, row) in rows.iter().enumerate() {
            if row.len() != width {
                return Err(DpError::ShapeMismatch(format!(
                    "q row {s} has {} entries, expected {width}",
                    row.len()
                )));
            }
            for (a, v) in row.iter().enumerate() {
                if !v.is_finite() {
                    return Err(DpError::ShapeMismatch(format!(
                        "q({s},{a}) is not finite"
                    )));
                }
            }
        }
        Ok(Self { rows })
    }

    pub(crate) fn from_rows_unchecked(rows: Vec<Vec<f64>>) -> Self {
        Self { rows }
    }

    pub fn num_states(&self) -> usize {
        self.rows.len()
    }

    pub fn num_actions(&self) -> usize {
        self.rows.first().map_or(0, Vec::len)
    }

    pub fn get(&self, state: usize, action: usize) -> f64 {
        self.rows[state][action]
    }

    pub fn row(&self, state: usize) -> &[f64] {
        &self.rows[state]
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    /// Largest value in a state's row.
    pub fn row_max(&self, state: usize) -> f64 {
        self.rows[state].iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Sup-norm distance to another table of the same shape.
    pub fn sup_distance(&self, other: &QTable) -> f64 {
        debug_assert_eq!(self.num_states(), other.num_states());
        debug_assert_eq!(self.num_actions(), other.num_actions());
        self.rows
            .iter()
            .zip(&other.rows)
            .flat_map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y).abs()))
            .fold(0.0, f64::max)
    }

    /// True when every entry of `self` is `<=` the matching entry of `other`
    /// plus `slack`.
    pub fn le_elementwise(&self, other: &QTable, slack: f64) -> bool {
        self.rows
            .iter()
            .zip(&other.rows)
            .all(|(a, b)| a.iter().zip(b).all(|(x, y)| *x <= *y + slack))
    }
}

/// A per-state vector of real values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ValueVector {
    values: Vec<f64>,
}

impl ValueVector {
    pub fn zeros(num_states: usize) -> Self {
        Self {
            values: vec![0.0; num_states],
        }
    }

    pub fn from_vec(values: Vec<f64>) -> Self {
        Self { values }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, state: usize) -> f64 {
        self.values[state]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn max(&self) -> f64 {
        self.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn sup_distance(&self, other: &ValueVector) -> f64 {
        debug_assert_eq!(self.len(), other.len());
        self.values
            .iter()
            .zip(&other.values)
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max)
    }
}
