use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `states x cols` matrix whose columns are probability vectors.
/// Stored column-major so each column is a contiguous slice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StochasticMatrix {
    states: usize,
    cols: usize,
    data: Vec<f64>,
}

impl StochasticMatrix {
    pub fn uniform(states: usize, cols: usize) -> Self {
        Self {
            states,
            cols,
            data: vec![1.0 / states as f64; states * cols],
        }
    }

    /// Builds from columns and checks normalization.
    pub fn from_columns(states: usize, columns: Vec<Vec<f64>>) -> Result<Self> {
        let cols = columns.len();
        let mut data = Vec::with_capacity(states * cols);
        for c in columns {
            if c.len() != states {
                return Err(Error::Shape(format!("column of length {} for {states} states", c.len())));
            }
            data.extend(c);
        }
        let m = Self { states, cols, data };
        m.validate(1e-9)?;
        Ok(m)
    }

    /// Column-major data, unchecked.
    pub fn from_raw(states: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != states * cols {
            return Err(Error::Shape(format!(
                "{} values for a {states}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Self { states, cols, data })
    }

    pub fn states(&self) -> usize {
        self.states
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, state: usize, col: usize) -> f64 {
        self.data[col * self.states + state]
    }

    pub fn col(&self, col: usize) -> &[f64] {
        &self.data[col * self.states..(col + 1) * self.states]
    }

    pub fn col_mut(&mut self, col: usize) -> &mut [f64] {
        &mut self.data[col * self.states..(col + 1) * self.states]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Entrywise nonnegative and every column sums to one within `tol`.
    pub fn validate(&self, tol: f64) -> Result<()> {
        for q in 0..self.cols {
            let c = self.col(q);
            if c.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) {
                return Err(Error::Numerical(format!("column {q} has a negative or non-finite entry")));
            }
            let s: f64 = c.iter().sum();
            if (s - 1.0).abs() > tol {
                return Err(Error::Numerical(format!("column {q} sums to {s}")));
            }
        }
        Ok(())
    }

    /// Rescales columns to sum to one; all-zero columns become uniform.
    pub fn normalize_columns(&mut self) {
        let m = self.states;
        for q in 0..self.cols {
            let c = self.col_mut(q);
            let s: f64 = c.iter().sum();
            if s > 0.0 && s.is_finite() {
                c.iter_mut().for_each(|p| *p /= s);
            } else {
                c.iter_mut().for_each(|p| *p = 1.0 / m as f64);
            }
        }
    }

    /// Reorders states: row `j` of the result is row `perm[j]` of `self`.
    pub fn permute_states(&self, perm: &[usize]) -> Self {
        let mut out = self.clone();
        for q in 0..self.cols {
            for (j, &p) in perm.iter().enumerate() {
                out.data[q * self.states + j] = self.get(p, q);
            }
        }
        out
    }

    pub fn argmax(&self, col: usize) -> usize {
        let c = self.col(col);
        (0..self.states)
            .fold(0, |best, j| if c[j] > c[best] { j } else { best })
    }
}
