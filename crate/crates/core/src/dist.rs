//! Square class-by-class matrices, typically row-stochastic
//! neighbor-label distributions `P(Y_v = j | Y_u = i, v ∈ N(u))`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ClassMatrix(Vec<Vec<f64>>);

impl ClassMatrix {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        let k = rows.len();
        if rows.iter().any(|r| r.len() != k) {
            return Err(Error::dim("class matrix", format!("expected {}x{} rows", k, k)));
        }
        Ok(Self(rows))
    }

    pub fn filled(k: usize, value: f64) -> Self {
        Self(vec![vec![value; k]; k])
    }

    pub fn uniform(k: usize) -> Self {
        Self::filled(k, 1.0 / k as f64)
    }

    pub fn identity(k: usize) -> Self {
        let mut m = Self::filled(k, 0.0);
        for i in 0..k {
            m.0[i][i] = 1.0;
        }
        m
    }

    pub fn num_classes(&self) -> usize {
        self.0.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.0[i]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0[i][j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.0[i][j] = v;
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.0
    }

    /// Normalizes each row to sum to one. Rows summing to zero become uniform
    /// and are reported in the returned mask.
    pub fn normalize_rows(&mut self) -> Vec<bool> {
        let k = self.num_classes();
        self.0
            .iter_mut()
            .map(|row| {
                let total: f64 = row.iter().sum();
                if total > 0.0 {
                    row.iter_mut().for_each(|v| *v /= total);
                    false
                } else {
                    row.iter_mut().for_each(|v| *v = 1.0 / k as f64);
                    true
                }
            })
            .collect()
    }

    pub fn is_row_stochastic(&self, tol: f64) -> bool {
        self.0
            .iter()
            .all(|r| r.iter().all(|&v| v >= 0.0) && (r.iter().sum::<f64>() - 1.0).abs() <= tol)
    }

    /// Total-variation distance of each row pair.
    pub fn row_tv(&self, other: &ClassMatrix) -> Vec<f64> {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| 0.5 * a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>())
            .collect()
    }

    pub fn max_abs_diff(&self, other: &ClassMatrix) -> f64 {
        self.0
            .iter()
            .flatten()
            .zip(other.0.iter().flatten())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}
