//! Dense LU with partial pivoting: the accuracy oracle and breakdown fallback.

use crate::error::{check_len, Error, Result};
use crate::sparse::CsrMatrix;

/// Square matrix stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    n: usize,
    entries: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(n: usize) -> Self {
        Self { n, entries: vec![0.0; n * n] }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let mut m = Self::zeros(n);
        for (i, row) in rows.iter().enumerate() {
            check_len(n, row.len())?;
            m.entries[i * n..(i + 1) * n].copy_from_slice(row);
        }
        Ok(m)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.n + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.entries[i * self.n + j] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.entries[i * self.n..(i + 1) * self.n]
    }

    /// Row-major entries.
    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    pub fn matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_len(self.n, x.len())?;
        Ok((0..self.n)
            .map(|i| self.row(i).iter().zip(x).map(|(a, b)| a * b).sum())
            .collect())
    }

    /// Maximum absolute row sum.
    pub fn norm_inf(&self) -> f64 {
        (0..self.n)
            .map(|i| self.row(i).iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    /// CSR copy keeping only non-zero entries.
    pub fn to_csr(&self) -> CsrMatrix {
        let rows: Vec<Vec<f64>> = (0..self.n).map(|i| self.row(i).to_vec()).collect();
        CsrMatrix::from_dense(&rows).expect("square rows are well formed")
    }
}

/// Exact entrywise copy of a square CSR matrix; absent entries become zero.
pub fn densify(a: &CsrMatrix) -> Result<DenseMatrix> {
    if !a.is_square() {
        return Err(Error::Contract(format!("cannot densify a {}x{} matrix", a.n_rows(), a.n_cols())));
    }
    let mut m = DenseMatrix::zeros(a.n_rows());
    for i in 0..a.n_rows() {
        let (cols, vals) = a.row(i);
        for (&j, &v) in cols.iter().zip(vals) {
            m.set(i, j, v);
        }
    }
    Ok(m)
}

/// Solves `A x = b` by Gaussian elimination with partial pivoting. The pivot is
/// the largest magnitude in the column; ties go to the lowest row index.
pub fn lu_solve(a: &DenseMatrix, b: &[f64]) -> Result<Vec<f64>> {
    let n = a.n;
    check_len(n, b.len())?;
    let mut lu = a.entries.clone();
    let mut x = b.to_vec();

    for k in 0..n {
        let mut pivot = k;
        let mut best = lu[k * n + k].abs();
        for i in k + 1..n {
            let v = lu[i * n + k].abs();
            if v > best {
                best = v;
                pivot = i;
            }
        }
        if best == 0.0 || !best.is_finite() {
            return Err(Error::Singular { column: k });
        }
        if pivot != k {
            for j in 0..n {
                lu.swap(k * n + j, pivot * n + j);
            }
            x.swap(k, pivot);
        }
        let diag = lu[k * n + k];
        for i in k + 1..n {
            let factor = lu[i * n + k] / diag;
            if factor == 0.0 {
                continue;
            }
            lu[i * n + k] = factor;
            for j in k + 1..n {
                lu[i * n + j] -= factor * lu[k * n + j];
            }
            x[i] -= factor * x[k];
        }
    }

    for k in (0..n).rev() {
        let mut acc = x[k];
        for j in k + 1..n {
            acc -= lu[k * n + j] * x[j];
        }
        x[k] = acc / lu[k * n + k];
    }
    Ok(x)
}

/// Convenience wrapper: densify a CSR system and solve it.
pub fn lu_solve_csr(a: &CsrMatrix, b: &[f64]) -> Result<Vec<f64>> {
    lu_solve(&densify(a)?, b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn norm_inf(v: &[f64]) -> f64 {
        v.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    #[test]
    fn identity_and_permutation() {
        let b = [1.5, -2.0, 4.0];
        let x = lu_solve(&densify(&CsrMatrix::identity(3)).unwrap(), &b).unwrap();
        assert_eq!(x, b.to_vec());

        let perm = DenseMatrix::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        assert_eq!(lu_solve(&perm, &[2.0, 3.0]).unwrap(), vec![3.0, 2.0]);
    }

    #[test]
    fn singular_is_reported() {
        let m = DenseMatrix::from_rows(&[vec![1.0, 2.0], vec![2.0, 4.0]]).unwrap();
        assert!(matches!(lu_solve(&m, &[1.0, 1.0]), Err(Error::Singular { column: 1 })));
        assert!(lu_solve(&DenseMatrix::zeros(2), &[1.0, 1.0]).is_err());
        assert!(lu_solve(&m, &[1.0]).is_err());
    }

    #[test]
    fn residual_bound_on_random_156() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 156;
        let mut rows = vec![vec![0.0; n]; n];
        for (i, row) in rows.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                if i == j || rng.gen_bool(0.05) {
                    *v = rng.gen_range(-10.0..10.0);
                }
            }
        }
        let csr = CsrMatrix::from_dense(&rows).unwrap();
        let a = densify(&csr).unwrap();
        let b: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let x = lu_solve(&a, &b).unwrap();
        let ax = a.matvec(&x).unwrap();
        let resid: Vec<f64> = ax.iter().zip(&b).map(|(p, q)| p - q).collect();
        assert!(norm_inf(&resid) <= 1e-10 * (a.norm_inf() * norm_inf(&x) + norm_inf(&b)));
    }

    #[test]
    fn densify_examples() {
        let id = densify(&CsrMatrix::identity(3)).unwrap();
        assert_eq!(id, DenseMatrix::from_rows(&[vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]]).unwrap());

        let a = CsrMatrix::from_dense(&[vec![0.0, -3.5, 1e-300], vec![2.0, 0.0, 0.0], vec![0.1, 0.2, 0.3]]).unwrap();
        assert_eq!(densify(&a).unwrap().to_csr(), a);

        let block = CsrMatrix::from_dense(&[
            vec![1.0, 2.0, 0.0, 0.0],
            vec![3.0, 4.0, 0.0, 0.0],
            vec![0.0, 0.0, 5.0, 6.0],
            vec![0.0, 0.0, 7.0, 8.0],
        ])
        .unwrap();
        let d = densify(&block).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                if (i < 2) != (j < 2) {
                    assert_eq!(d.get(i, j), 0.0);
                } else {
                    assert_eq!(d.get(i, j), block.get(i, j));
                }
            }
        }
    }

    #[test]
    fn pivot_ties_pick_lowest_row() {
        // Both candidate pivots have magnitude 2; picking row 0 keeps the
        // elimination exact, so the answer is exact.
        let m = DenseMatrix::from_rows(&[vec![2.0, 1.0], vec![-2.0, 1.0]]).unwrap();
        assert_eq!(lu_solve(&m, &[3.0, -1.0]).unwrap(), vec![1.0, 1.0]);
    }
}
