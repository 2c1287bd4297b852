//! Per-party feature blocks for vertically partitioned data.

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense row-major matrix.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::InvalidProblem(
                "matrix data does not match its shape",
            ));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: alloc::vec![0.0; rows * cols],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::InvalidProblem("ragged matrix rows"));
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data: rows.concat(),
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, value: f64) {
        self.data[r * self.cols + c] = value;
    }

    pub fn column(&self, c: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self.get(r, c)).collect()
    }

    pub fn select_rows(&self, rows: &[usize]) -> Self {
        let mut data = Vec::with_capacity(rows.len() * self.cols);
        for &r in rows {
            data.extend_from_slice(self.row(r));
        }
        Self {
            rows: rows.len(),
            cols: self.cols,
            data,
        }
    }

    /// Side-by-side concatenation of matrices with equal row counts.
    pub fn hcat(blocks: &[&Matrix]) -> Result<Self> {
        let rows = blocks.first().map_or(0, |m| m.rows);
        if blocks.iter().any(|m| m.rows != rows) {
            return Err(Error::Misaligned);
        }
        let cols = blocks.iter().map(|m| m.cols).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for m in blocks {
                data.extend_from_slice(m.row(r));
            }
        }
        Ok(Self { rows, cols, data })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Active,
    Passive,
}

/// One encoded feature column and the raw column it came from.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureColumn {
    pub name: String,
    pub source: String,
    /// Continuous columns are standardized; indicator columns are not.
    pub continuous: bool,
}

/// A party's block of features over globally indexed samples.
///
/// Parties in one federation share `row_index` exactly; only the active party
/// carries labels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PartyDataset {
    pub party_id: String,
    pub role: Role,
    pub features: Matrix,
    pub columns: Vec<FeatureColumn>,
    pub labels: Option<Vec<f64>>,
    pub row_index: Vec<usize>,
}

impl PartyDataset {
    pub fn new(
        party_id: String,
        role: Role,
        features: Matrix,
        columns: Vec<FeatureColumn>,
        labels: Option<Vec<f64>>,
        row_index: Vec<usize>,
    ) -> Result<Self> {
        if columns.len() != features.cols() {
            return Err(Error::Party(
                party_id,
                "column list does not match feature width",
            ));
        }
        if row_index.len() != features.rows() {
            return Err(Error::Party(
                party_id,
                "row index does not match feature rows",
            ));
        }
        match (&role, &labels) {
            (Role::Active, None) => {
                return Err(Error::Party(party_id, "active party needs labels"))
            }
            (Role::Passive, Some(_)) => {
                return Err(Error::Party(party_id, "passive party cannot hold labels"))
            }
            (Role::Active, Some(y)) => {
                if y.len() != row_index.len() {
                    return Err(Error::Party(party_id, "label count does not match rows"));
                }
                if y.iter().any(|&v| v != 0.0 && v != 1.0) {
                    return Err(Error::Party(party_id, "labels must be 0 or 1"));
                }
            }
            (Role::Passive, None) => {}
        }
        Ok(Self {
            party_id,
            role,
            features,
            columns,
            labels,
            row_index,
        })
    }

    pub fn rows(&self) -> usize {
        self.row_index.len()
    }

    pub fn width(&self) -> usize {
        self.features.cols()
    }

    pub fn is_active(&self) -> bool {
        self.role == Role::Active
    }

    /// Keeps the rows at the given positions, in that order.
    pub fn select_rows(&self, positions: &[usize]) -> Self {
        Self {
            party_id: self.party_id.clone(),
            role: self.role,
            features: self.features.select_rows(positions),
            columns: self.columns.clone(),
            labels: self
                .labels
                .as_ref()
                .map(|y| positions.iter().map(|&p| y[p]).collect()),
            row_index: positions.iter().map(|&p| self.row_index[p]).collect(),
        }
    }
}

/// Fails unless every party has the same `row_index`.
pub fn check_alignment<'a>(parties: impl IntoIterator<Item = &'a PartyDataset>) -> Result<()> {
    let mut iter = parties.into_iter();
    let Some(first) = iter.next() else {
        return Ok(());
    };
    if iter.all(|p| p.row_index == first.row_index) {
        Ok(())
    } else {
        Err(Error::Misaligned)
    }
}
