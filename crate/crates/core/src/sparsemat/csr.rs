use std::sync::OnceLock;

use crate::error::{check_len, Error, Result};

/// Square sparse matrix in canonical CSR form: rows sorted by column, no
/// duplicate entries.
#[derive(Debug, Clone)]
pub struct CsrMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
    frobenius: OnceLock<f64>,
}

impl PartialEq for CsrMatrix {
    fn eq(&self, other: &Self) -> bool {
        self.n == other.n
            && self.row_ptr == other.row_ptr
            && self.col_idx == other.col_idx
            && self.values.len() == other.values.len()
            && self
                .values
                .iter()
                .zip(&other.values)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

impl CsrMatrix {
    /// Builds a matrix from raw CSR arrays, validating the canonical-form
    /// invariants.
    pub fn new(
        n: usize,
        row_ptr: Vec<usize>,
        col_idx: Vec<usize>,
        values: Vec<f64>,
    ) -> Result<Self> {
        check_len(n + 1, row_ptr.len())?;
        check_len(col_idx.len(), values.len())?;
        if row_ptr[0] != 0 || row_ptr[n] != col_idx.len() {
            return Err(Error::InvalidMatrix(format!(
                "row_ptr must start at 0 and end at nnz={}",
                col_idx.len()
            )));
        }
        for row in 0..n {
            let (start, end) = (row_ptr[row], row_ptr[row + 1]);
            if start > end {
                return Err(Error::InvalidMatrix(format!(
                    "row_ptr decreases at row {row}"
                )));
            }
            let cols = &col_idx[start..end];
            if let Some(&c) = cols.iter().find(|&&c| c >= n) {
                return Err(Error::InvalidMatrix(format!(
                    "column {c} out of range in row {row}"
                )));
            }
            if cols.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::InvalidMatrix(format!(
                    "columns of row {row} are not strictly increasing"
                )));
            }
        }
        Ok(Self {
            n,
            row_ptr,
            col_idx,
            values,
            frobenius: OnceLock::new(),
        })
    }

    /// Assembles from 0-based `(row, col, value)` triplets. Duplicates are summed.
    pub fn from_triplets(n: usize, mut triplets: Vec<(usize, usize, f64)>) -> Result<Self> {
        if let Some(&(r, c, _)) = triplets.iter().find(|&&(r, c, _)| r >= n || c >= n) {
            return Err(Error::InvalidMatrix(format!(
                "entry ({r}, {c}) outside {n}x{n}"
            )));
        }
        // stable sort keeps the input order of duplicates, so their sum is reproducible
        triplets.sort_by_key(|&(r, c, _)| (r, c));

        let mut row_ptr = vec![0usize; n + 1];
        let mut col_idx = Vec::with_capacity(triplets.len());
        let mut values: Vec<f64> = Vec::with_capacity(triplets.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in triplets {
            if last == Some((r, c)) {
                *values.last_mut().expect("duplicate follows an entry") += v;
                continue;
            }
            last = Some((r, c));
            row_ptr[r + 1] += 1;
            col_idx.push(c);
            values.push(v);
        }
        for i in 0..n {
            row_ptr[i + 1] += row_ptr[i];
        }
        Self::new(n, row_ptr, col_idx, values)
    }

    pub fn identity(n: usize) -> Self {
        Self::from_diagonal(&vec![1.0; n])
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        let n = diag.len();
        Self {
            n,
            row_ptr: (0..=n).collect(),
            col_idx: (0..n).collect(),
            values: diag.to_vec(),
            frobenius: OnceLock::new(),
        }
    }

    /// Dense row-major copy; only sensible for small matrices.
    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut dense = vec![vec![0.0; self.n]; self.n];
        for (row, dense_row) in dense.iter_mut().enumerate() {
            for (c, v) in self.row(row) {
                dense_row[c] = v;
            }
        }
        dense
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row_ptr(&self) -> &[usize] {
        &self.row_ptr
    }

    pub fn col_idx(&self) -> &[usize] {
        &self.col_idx
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Mutable access to the nonzeros. Invalidates the cached norm.
    pub fn values_mut(&mut self) -> &mut [f64] {
        self.frobenius = OnceLock::new();
        &mut self.values
    }

    /// XORs one bit of a stored value in place and returns the word as it
    /// was before the flip.
    ///
    /// Meant for transient corruption that is undone by a second flip, so the
    /// cached norm is left alone.
    pub fn flip_value_bit(&mut self, index: usize, bit: u32) -> u64 {
        let old = self.values[index].to_bits();
        self.values[index] = f64::from_bits(old ^ (1u64 << bit));
        old
    }

    /// `(column, value)` pairs of one row in ascending column order.
    pub fn row(&self, row: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let range = self.row_ptr[row]..self.row_ptr[row + 1];
        self.col_idx[range.clone()]
            .iter()
            .copied()
            .zip(self.values[range].iter().copied())
    }

    pub fn get(&self, row: usize, col: usize) -> Option<f64> {
        let range = self.row_ptr[row]..self.row_ptr[row + 1];
        let cols = &self.col_idx[range.clone()];
        cols.binary_search(&col)
            .ok()
            .map(|k| self.values[range.start + k])
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.get(i, i).unwrap_or(0.0)).collect()
    }

    /// Frobenius norm over the stored nonzeros, computed once and cached.
    pub fn frobenius_norm(&self) -> f64 {
        *self.frobenius.get_or_init(|| super::norm2(&self.values))
    }

    /// True if the sparsity pattern and the values are symmetric.
    pub fn is_symmetric(&self) -> bool {
        (0..self.n).all(|r| {
            self.row(r)
                .all(|(c, v)| self.get(c, r).is_some_and(|w| w.to_bits() == v.to_bits()))
        })
    }

    pub fn is_structurally_symmetric(&self) -> bool {
        (0..self.n).all(|r| self.row(r).all(|(c, _)| self.get(c, r).is_some()))
    }
}
