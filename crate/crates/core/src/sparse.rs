//! Compressed-row sparse storage and the vector kernels the BiCG recurrences need.
//!
//! All accumulation orders are fixed: `spmv` sums each row in CSR storage order,
//! `spmv_transpose` scatters rows in ascending order (which makes it bit-identical
//! to `spmv` on the explicit transpose), and every dot product goes through a
//! [`ReductionPlan`] whose per-block tree reduction mirrors a shared-memory
//! reduction padded to a power of two.

use std::io::Write;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::exec_model::ReductionPlan;

/// Sparse matrix in compressed-row form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsrMatrix {
    n_rows: usize,
    n_cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Builds a matrix from raw CSR arrays, checking every structural invariant.
    pub fn new(
        n_rows: usize,
        n_cols: usize,
        row_ptr: Vec<usize>,
        col_idx: Vec<usize>,
        values: Vec<f64>,
    ) -> Result<Self> {
        if row_ptr.len() != n_rows + 1 {
            return Err(Error::InvalidMatrix(format!(
                "row_ptr has length {}, expected {}",
                row_ptr.len(),
                n_rows + 1
            )));
        }
        if row_ptr[0] != 0 {
            return Err(Error::InvalidMatrix("row_ptr[0] must be 0".into()));
        }
        if col_idx.len() != values.len() || row_ptr[n_rows] != values.len() {
            return Err(Error::InvalidMatrix(format!(
                "row_ptr ends at {} but there are {} column indices and {} values",
                row_ptr[n_rows],
                col_idx.len(),
                values.len()
            )));
        }
        for row in 0..n_rows {
            let (start, end) = (row_ptr[row], row_ptr[row + 1]);
            if start > end {
                return Err(Error::InvalidMatrix(format!("row_ptr decreases at row {row}")));
            }
            let cols = &col_idx[start..end];
            if let Some(&last) = cols.last() {
                if last >= n_cols {
                    return Err(Error::InvalidMatrix(format!(
                        "column {last} out of range in row {row}"
                    )));
                }
            }
            if cols.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::InvalidMatrix(format!(
                    "columns of row {row} are not strictly increasing"
                )));
            }
        }
        Ok(Self { n_rows, n_cols, row_ptr, col_idx, values })
    }

    pub fn identity(n: usize) -> Self {
        Self {
            n_rows: n,
            n_cols: n,
            row_ptr: (0..=n).collect(),
            col_idx: (0..n).collect(),
            values: vec![1.0; n],
        }
    }

    /// Square matrix with `diag` on the diagonal.
    pub fn from_diagonal(diag: &[f64]) -> Self {
        let mut m = Self::identity(diag.len());
        m.values.copy_from_slice(diag);
        m
    }

    /// Builds a matrix from dense rows, storing only non-zero entries.
    pub fn from_dense(rows: &[Vec<f64>]) -> Result<Self> {
        let n_rows = rows.len();
        let n_cols = rows.first().map_or(0, Vec::len);
        let mut row_ptr = Vec::with_capacity(n_rows + 1);
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        row_ptr.push(0);
        for row in rows {
            check_len(n_cols, row.len())?;
            for (j, &v) in row.iter().enumerate() {
                if v != 0.0 {
                    col_idx.push(j);
                    values.push(v);
                }
            }
            row_ptr.push(values.len());
        }
        Self::new(n_rows, n_cols, row_ptr, col_idx, values)
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
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

    /// Mutable access to the stored values; the sparsity pattern stays fixed.
    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn is_square(&self) -> bool {
        self.n_rows == self.n_cols
    }

    /// Column indices and values of one row.
    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let range = self.row_ptr[i]..self.row_ptr[i + 1];
        (&self.col_idx[range.clone()], &self.values[range])
    }

    /// Stored value at `(i, j)`, or zero when the entry is structurally absent.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (cols, vals) = self.row(i);
        cols.binary_search(&j).map_or(0.0, |k| vals[k])
    }

    /// Explicit transpose. Within each output row, entries appear in ascending
    /// source-row order.
    pub fn transpose(&self) -> CsrMatrix {
        let mut counts = vec![0usize; self.n_cols + 1];
        for &j in &self.col_idx {
            counts[j + 1] += 1;
        }
        for j in 0..self.n_cols {
            counts[j + 1] += counts[j];
        }
        let row_ptr = counts.clone();
        let mut next = counts;
        let mut col_idx = vec![0; self.nnz()];
        let mut values = vec![0.0; self.nnz()];
        for i in 0..self.n_rows {
            let (cols, vals) = self.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                let slot = next[j];
                col_idx[slot] = i;
                values[slot] = v;
                next[j] += 1;
            }
        }
        CsrMatrix { n_rows: self.n_cols, n_cols: self.n_rows, row_ptr, col_idx, values }
    }

    /// True when no row in `range` references a column outside `range`.
    pub fn is_closed_over(&self, range: Range<usize>) -> bool {
        range.clone().all(|i| {
            let (cols, _) = self.row(i);
            cols.first().is_none_or(|&c| c >= range.start)
                && cols.last().is_none_or(|&c| c < range.end)
        })
    }

    /// Writes the matrix in Matrix Market coordinate format (1-based indices).
    pub fn write_matrix_market<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "%%MatrixMarket matrix coordinate real general")?;
        writeln!(out, "{} {} {}", self.n_rows, self.n_cols, self.nnz())?;
        for i in 0..self.n_rows {
            let (cols, vals) = self.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                writeln!(out, "{} {} {:?}", i + 1, j + 1, v)?;
            }
        }
        Ok(())
    }
}

/// `y = A x`, each row accumulated sequentially in storage order.
pub fn spmv(a: &CsrMatrix, x: &[f64]) -> Result<Vec<f64>> {
    let mut y = vec![0.0; a.n_rows];
    spmv_into(a, x, &mut y)?;
    Ok(y)
}

pub fn spmv_into(a: &CsrMatrix, x: &[f64], y: &mut [f64]) -> Result<()> {
    check_len(a.n_cols, x.len())?;
    check_len(a.n_rows, y.len())?;
    spmv_rows(a, x, 0..a.n_rows, y);
    Ok(())
}

/// Computes `y[i] = (A x)[i]` for the rows in `rows` only. Lengths must already
/// be checked by the caller.
pub(crate) fn spmv_rows(a: &CsrMatrix, x: &[f64], rows: Range<usize>, y: &mut [f64]) {
    for i in rows {
        let (start, end) = (a.row_ptr[i], a.row_ptr[i + 1]);
        let mut acc = 0.0;
        for k in start..end {
            acc += a.values[k] * x[a.col_idx[k]];
        }
        y[i] = acc;
    }
}

/// `y = Aᵀ x` without forming the transpose.
pub fn spmv_transpose(a: &CsrMatrix, x: &[f64]) -> Result<Vec<f64>> {
    let mut y = vec![0.0; a.n_cols];
    spmv_transpose_into(a, x, &mut y)?;
    Ok(y)
}

pub fn spmv_transpose_into(a: &CsrMatrix, x: &[f64], y: &mut [f64]) -> Result<()> {
    check_len(a.n_rows, x.len())?;
    check_len(a.n_cols, y.len())?;
    y.fill(0.0);
    // Scattering rows in ascending order adds the terms of each output entry
    // in the same order a row of the explicit transpose would.
    for i in 0..a.n_rows {
        let xi = x[i];
        for k in a.row_ptr[i]..a.row_ptr[i + 1] {
            y[a.col_idx[k]] += a.values[k] * xi;
        }
    }
    Ok(())
}

/// `z = a·x + b·y`.
pub fn axpby(a: f64, x: &[f64], b: f64, y: &[f64]) -> Result<Vec<f64>> {
    check_len(x.len(), y.len())?;
    Ok(x.iter().zip(y).map(|(&xi, &yi)| a * xi + b * yi).collect())
}

/// Halving-tree sum over `padded_len` slots, where slots past `slots.len()` are zero.
///
/// At each stage `slot[i] += slot[i + stride]` for `i < stride`, with the stride
/// starting at `padded_len / 2`.
pub fn tree_reduce(slots: &[f64], padded_len: usize) -> Result<f64> {
    if !padded_len.is_power_of_two() {
        return Err(Error::NotPowerOfTwo(padded_len));
    }
    if padded_len < slots.len() {
        return Err(Error::Contract(format!(
            "padded length {padded_len} is shorter than the {} slots",
            slots.len()
        )));
    }
    let mut buf = vec![0.0; padded_len];
    buf[..slots.len()].copy_from_slice(slots);
    Ok(tree_reduce_in_place(&mut buf))
}

/// Tree reduction over a buffer whose length is already a power of two.
pub(crate) fn tree_reduce_in_place(buf: &mut [f64]) -> f64 {
    debug_assert!(buf.len().is_power_of_two());
    let mut stride = buf.len() / 2;
    while stride > 0 {
        let (low, high) = buf.split_at_mut(stride);
        for (l, h) in low.iter_mut().zip(&high[..stride]) {
            *l += *h;
        }
        stride /= 2;
    }
    buf[0]
}

/// Dot product reduced through `plan`: per-block tree sums, then the block
/// partials summed left to right.
pub fn dot(x: &[f64], y: &[f64], plan: &ReductionPlan) -> Result<f64> {
    check_len(x.len(), y.len())?;
    check_len(plan.len(), x.len())?;
    let mut scratch = Vec::new();
    let partials = plan.block_partials(|i| x[i] * y[i], &mut scratch);
    Ok(plan.combine(&partials))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_by_two() -> CsrMatrix {
        CsrMatrix::from_dense(&[vec![2.0, 0.0], vec![1.0, 3.0]]).unwrap()
    }

    #[test]
    fn rejects_malformed_csr() {
        assert!(CsrMatrix::new(2, 2, vec![0, 1], vec![0], vec![1.0]).is_err());
        assert!(CsrMatrix::new(1, 2, vec![1, 1], vec![0], vec![1.0]).is_err());
        assert!(CsrMatrix::new(1, 2, vec![0, 2], vec![1, 0], vec![1.0, 1.0]).is_err());
        assert!(CsrMatrix::new(1, 2, vec![0, 1], vec![2], vec![1.0]).is_err());
        assert!(CsrMatrix::new(2, 2, vec![0, 2, 1], vec![0, 1], vec![1.0, 1.0]).is_err());
        assert!(CsrMatrix::new(1, 2, vec![0, 2], vec![0, 1], vec![1.0]).is_err());
    }

    #[test]
    fn spmv_examples() {
        let x = [1.0, 2.0, 3.0];
        assert_eq!(spmv(&CsrMatrix::identity(3), &x).unwrap(), x.to_vec());
        assert_eq!(spmv(&two_by_two(), &[1.0, 1.0]).unwrap(), vec![2.0, 4.0]);
        assert_eq!(spmv(&two_by_two(), &[0.0, 0.0]).unwrap(), vec![0.0, 0.0]);
        assert!(matches!(
            spmv(&two_by_two(), &[1.0]),
            Err(Error::DimensionMismatch { expected: 2, actual: 1 })
        ));
    }

    #[test]
    fn spmv_transpose_examples() {
        let x = [4.0, -1.0, 0.5];
        assert_eq!(spmv_transpose(&CsrMatrix::identity(3), &x).unwrap(), x.to_vec());
        assert_eq!(spmv_transpose(&two_by_two(), &[1.0, 1.0]).unwrap(), vec![3.0, 3.0]);
        assert!(spmv_transpose(&two_by_two(), &[1.0, 1.0, 1.0]).is_err());

        let sym = CsrMatrix::from_dense(&[
            vec![4.0, 0.1, 0.0],
            vec![0.1, 3.0, -0.7],
            vec![0.0, -0.7, 5.0],
        ])
        .unwrap();
        let x = [0.3, -1.7, 2.9];
        let a = spmv(&sym, &x).unwrap();
        let b = spmv_transpose(&sym, &x).unwrap();
        assert_eq!(
            a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            b.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn axpby_examples() {
        let x = [1.0, 1.0];
        let y = [1.0, 2.0];
        assert_eq!(axpby(1.0, &x, 0.0, &y).unwrap(), x.to_vec());
        assert_eq!(axpby(0.0, &x, 1.0, &y).unwrap(), y.to_vec());
        assert_eq!(axpby(2.0, &x, 3.0, &y).unwrap(), vec![5.0, 8.0]);
        assert!(axpby(1.0, &x, 1.0, &[1.0]).is_err());
    }

    #[test]
    fn tree_reduce_examples() {
        // stride 2: [1+3, 2+0], stride 1: 4+2
        assert_eq!(tree_reduce(&[1.0, 2.0, 3.0], 4).unwrap(), 6.0);
        assert_eq!(tree_reduce(&[7.25], 1).unwrap(), 7.25);
        assert_eq!(tree_reduce(&[0.0; 5], 8).unwrap(), 0.0);
        assert!(matches!(tree_reduce(&[1.0, 2.0, 3.0], 3), Err(Error::NotPowerOfTwo(3))));
        assert!(tree_reduce(&[1.0, 2.0, 3.0], 2).is_err());
    }

    #[test]
    fn tree_reduce_follows_halving_order() {
        // (1e16 + 1) loses the 1; pairing order decides which terms meet.
        let slots = [1e16, 1.0, -1e16, 1.0];
        // stride 2: [1e16 - 1e16, 1 + 1] = [0, 2]; stride 1: 2
        assert_eq!(tree_reduce(&slots, 4).unwrap(), 2.0);
        let sequential: f64 = slots.iter().sum();
        assert_eq!(sequential, 1.0);
    }

    #[test]
    fn dot_examples() {
        let e1 = [0.0, 1.0, 0.0];
        assert_eq!(dot(&e1, &e1, &ReductionPlan::single_block(3)).unwrap(), 1.0);
        assert_eq!(dot(&[1.0, 2.0], &[3.0, 4.0], &ReductionPlan::single_block(2)).unwrap(), 11.0);
        assert_eq!(dot(&[1.0, 0.0], &[0.0, 5.0], &ReductionPlan::single_block(2)).unwrap(), 0.0);
        assert!(dot(&[1.0, 2.0], &[3.0], &ReductionPlan::single_block(2)).is_err());
        assert!(dot(&[1.0, 2.0], &[3.0, 4.0], &ReductionPlan::single_block(3)).is_err());
    }

    #[test]
    fn get_and_transpose() {
        let a = two_by_two();
        assert_eq!(a.get(1, 0), 1.0);
        assert_eq!(a.get(0, 1), 0.0);
        let t = a.transpose();
        assert_eq!(t.get(0, 1), 1.0);
        assert_eq!(t.transpose(), a);
    }

    #[test]
    fn closed_over_detects_coupling() {
        let a = CsrMatrix::from_dense(&[
            vec![1.0, 2.0, 0.0],
            vec![0.0, 1.0, 0.0],
            vec![0.0, 0.0, 1.0],
        ])
        .unwrap();
        assert!(a.is_closed_over(0..2));
        assert!(a.is_closed_over(2..3));
        assert!(!a.is_closed_over(0..1));
    }

    #[test]
    fn matrix_market_dump() {
        let mut out = Vec::new();
        two_by_two().write_matrix_market(&mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert_eq!(
            text,
            "%%MatrixMarket matrix coordinate real general\n2 2 3\n1 1 2.0\n2 1 1.0\n2 2 3.0\n"
        );
    }
}
