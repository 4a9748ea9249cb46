//! Independent reference computations shared by the integration tests.
//! Nothing here calls into the library's numerics.
#![allow(dead_code)]

use blockcells::sparse::CsrMatrix;
use blockcells::strategies::BatchedSystem;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn to_dense(a: &CsrMatrix) -> Vec<Vec<f64>> {
    let mut rows = vec![vec![0.0; a.n_cols()]; a.n_rows()];
    for (i, row) in rows.iter_mut().enumerate() {
        let (cols, vals) = a.row(i);
        for (&j, &v) in cols.iter().zip(vals) {
            row[j] += v;
        }
    }
    rows
}

/// Gaussian elimination with partial pivoting.
pub fn lu_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for k in 0..n {
        let p = (k..n)
            .max_by(|&i, &j| a[i][k].abs().total_cmp(&a[j][k].abs()))
            .unwrap();
        assert!(a[p][k] != 0.0, "oracle: singular matrix");
        a.swap(k, p);
        b.swap(k, p);
        for i in k + 1..n {
            let m = a[i][k] / a[k][k];
            if m == 0.0 {
                continue;
            }
            for j in k..n {
                a[i][j] -= m * a[k][j];
            }
            b[i] -= m * b[k];
        }
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let s: f64 = (i + 1..n).map(|j| a[i][j] * x[j]).sum();
        x[i] = (b[i] - s) / a[i][i];
    }
    x
}

pub fn lu_solve_sparse(a: &CsrMatrix, b: &[f64]) -> Vec<f64> {
    lu_solve(to_dense(a), b.to_vec())
}

pub fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// `‖x − y‖∞ / ‖y‖∞`, or the absolute difference when `y` is zero.
pub fn rel_err(x: &[f64], y: &[f64]) -> f64 {
    let diff = x.iter().zip(y).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    let scale = max_abs(y);
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

/// Random strictly diagonally dominant matrix with roughly `density` of the
/// off-diagonal entries present.
pub fn diag_dominant(rng: &mut ChaCha8Rng, n: usize, density: f64) -> Vec<Vec<f64>> {
    let mut rows = vec![vec![0.0; n]; n];
    for (i, row) in rows.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            if i != j && rng.gen_bool(density) {
                *v = rng.gen_range(-1.0..1.0);
            }
        }
        let off: f64 = row.iter().map(|v: &f64| v.abs()).sum();
        row[i] = off + rng.gen_range(1.0..2.0);
    }
    rows
}

/// A batch of diagonally dominant systems sharing one pattern.
pub fn random_batch(seed: u64, cells: usize, species: usize) -> BatchedSystem {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut mask = vec![vec![false; species]; species];
    for (i, row) in mask.iter_mut().enumerate() {
        for (j, m) in row.iter_mut().enumerate() {
            *m = i == j || rng.gen_bool(0.4);
        }
    }
    let mut matrices = Vec::with_capacity(cells);
    let mut rhs = Vec::with_capacity(cells);
    for _ in 0..cells {
        let mut rows = vec![vec![0.0; species]; species];
        for i in 0..species {
            let mut off = 0.0;
            for j in 0..species {
                if i != j && mask[i][j] {
                    let mut v: f64 = rng.gen_range(-1.0..1.0);
                    if v == 0.0 {
                        v = 0.5;
                    }
                    rows[i][j] = v;
                    off += v.abs();
                }
            }
            rows[i][i] = off + rng.gen_range(1.0..2.0);
        }
        matrices.push(CsrMatrix::from_dense(&rows).unwrap());
        rhs.push((0..species).map(|_| rng.gen_range(-1.0..1.0)).collect());
    }
    BatchedSystem::new(species, matrices, rhs).unwrap()
}

fn mat_mul(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = a.len();
    let mut c = vec![vec![0.0; n]; n];
    for i in 0..n {
        for k in 0..n {
            let aik = a[i][k];
            for j in 0..n {
                c[i][j] += aik * b[k][j];
            }
        }
    }
    c
}

/// Matrix exponential by scaling and squaring of a truncated Taylor series.
pub fn expm(a: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = a.len();
    let norm = a.iter().map(|r| r.iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max);
    let mut squarings = 0;
    let mut scale = 1.0;
    while norm * scale > 0.5 {
        scale *= 0.5;
        squarings += 1;
    }
    let scaled: Vec<Vec<f64>> = a.iter().map(|r| r.iter().map(|v| v * scale).collect()).collect();
    let mut result: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| f64::from(u8::from(i == j))).collect()).collect();
    let mut term = result.clone();
    for k in 1..=20 {
        term = mat_mul(&term, &scaled);
        for row in term.iter_mut() {
            for v in row.iter_mut() {
                *v /= k as f64;
            }
        }
        for (r, t) in result.iter_mut().zip(&term) {
            for (v, tv) in r.iter_mut().zip(t) {
                *v += tv;
            }
        }
    }
    for _ in 0..squarings {
        result = mat_mul(&result, &result);
    }
    result
}

pub fn mat_vec(a: &[Vec<f64>], x: &[f64]) -> Vec<f64> {
    a.iter().map(|r| r.iter().zip(x).map(|(a, b)| a * b).sum()).collect()
}

/// Central-difference Jacobian of `f` at `y`.
pub fn fd_jacobian(f: impl Fn(&[f64]) -> Vec<f64>, y: &[f64], rel_step: f64) -> Vec<Vec<f64>> {
    let n = y.len();
    let mut jac = vec![vec![0.0; n]; n];
    let mut probe = y.to_vec();
    for j in 0..n {
        let h = rel_step * y[j].abs().max(1.0);
        probe[j] = y[j] + h;
        let up = f(&probe);
        probe[j] = y[j] - h;
        let down = f(&probe);
        probe[j] = y[j];
        for i in 0..n {
            jac[i][j] = (up[i] - down[i]) / (2.0 * h);
        }
    }
    jac
}

/// Resident-warp fraction of one SM: blocks are limited by the block cap,
/// the thread budget (whole warps) and shared memory.
pub fn occupancy(
    threads: usize,
    shared_slots: usize,
    warp_size: usize,
    max_warps: usize,
    max_threads: usize,
    max_blocks: usize,
    shared_bytes: usize,
) -> f64 {
    let warps = threads.div_ceil(warp_size);
    let by_threads = max_threads / (warps * warp_size);
    let by_shared = shared_bytes / (shared_slots * 8);
    let blocks = max_blocks.min(by_threads).min(by_shared);
    (blocks * warps) as f64 / max_warps as f64
}
