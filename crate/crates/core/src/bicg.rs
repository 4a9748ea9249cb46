//! Unpreconditioned two-sided Biconjugate Gradient.
//!
//! The [`ReductionPlan`] decides both the floating-point order of every inner
//! product and the convergence scope:
//!
//! * with a host stage (or a single block) all blocks form one system with
//!   shared scalars and one global convergence test, as in Multi-cells;
//! * without a host stage each block runs its own recurrence with its own
//!   scalars and stops on its own, as independent thread blocks would. The
//!   matrix must then be block-diagonal with respect to the plan.

use std::ops::Range;

use crate::error::{check_len, Error, Result};
use crate::exec_model::{block_sum, combine_partials, ReductionPlan};
use crate::sparse::{spmv_into, spmv_rows, spmv_transpose_into, CsrMatrix};

pub const DEFAULT_TOL: f64 = 1e-30;
pub const DEFAULT_MAX_ITER: usize = 1000;
/// Denominators smaller than this in magnitude count as breakdown.
pub const BREAKDOWN_THRESHOLD: f64 = 1e-300;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BicgOptions {
    /// Threshold on the RMS of the residual entries in a convergence scope.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for BicgOptions {
    fn default() -> Self {
        Self { tol: DEFAULT_TOL, max_iter: DEFAULT_MAX_ITER }
    }
}

impl BicgOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) {
            return Err(Error::Contract(format!("tolerance must be positive, got {}", self.tol)));
        }
        if self.max_iter == 0 {
            return Err(Error::Contract("max_iter must be at least 1".into()));
        }
        Ok(())
    }
}

/// Work vectors of one solve. Reusable across solves of any size.
#[derive(Debug, Clone, Default)]
pub struct BicgWorkspace {
    r: Vec<f64>,
    r_shadow: Vec<f64>,
    p: Vec<f64>,
    p_shadow: Vec<f64>,
    ap: Vec<f64>,
    atp_shadow: Vec<f64>,
    best_x: Vec<f64>,
    /// Sum of squared residual entries per reduction-plan block, from the last check.
    pub per_block_error: Vec<f64>,
    dot_partials: Vec<f64>,
    scratch: Vec<f64>,
}

impl BicgWorkspace {
    /// Length-n work vectors held besides the solution and right-hand side.
    pub const AUX_ARRAY_COUNT: usize = 7;

    pub fn new(n: usize) -> Self {
        let mut ws = Self::default();
        ws.resize(n);
        ws
    }

    fn resize(&mut self, n: usize) {
        for v in [
            &mut self.r,
            &mut self.r_shadow,
            &mut self.p,
            &mut self.p_shadow,
            &mut self.ap,
            &mut self.atp_shadow,
            &mut self.best_x,
        ] {
            v.clear();
            v.resize(n, 0.0);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveOutcome {
    pub x: Vec<f64>,
    /// Iterations of the slowest convergence scope.
    pub iterations: usize,
    /// RMS of the true residual `b - A x` at return, reduced through the plan.
    pub final_residual_rms: f64,
    pub converged: bool,
    pub breakdown: bool,
    /// Iterations per convergence scope, in plan order.
    pub scope_iterations: Vec<usize>,
    pub scope_converged: Vec<bool>,
    pub scope_breakdown: Vec<bool>,
}

/// `flag[b] = sqrt(error[b] / n[b]) <= tol`.
pub fn block_converged_mask(per_block_error: &[f64], n_per_block: &[usize], tol: f64) -> Result<Vec<bool>> {
    check_len(per_block_error.len(), n_per_block.len())?;
    Ok(per_block_error
        .iter()
        .zip(n_per_block)
        .map(|(&err, &n)| scope_converged(err, n, tol))
        .collect())
}

fn scope_converged(sum_sq: f64, n: usize, tol: f64) -> bool {
    (sum_sq / n as f64).sqrt() <= tol
}

/// A set of consecutive plan blocks sharing recurrence scalars.
#[derive(Debug, Clone)]
struct Scope {
    blocks: Range<usize>,
    rows: Range<usize>,
    rho: f64,
    /// Smallest recursive residual seen; its iterate is kept in `best_x`.
    best_err: f64,
    active: bool,
    converged: bool,
    breakdown: bool,
    iterations: usize,
}

/// Block-wise inner product over a scope: tree sums per block, host-order sum
/// across blocks. The per-block partials are left in `partials[blocks]`.
fn scope_dot(
    ranges: &[Range<usize>],
    blocks: Range<usize>,
    x: &[f64],
    y: &[f64],
    scratch: &mut Vec<f64>,
    partials: &mut [f64],
) -> f64 {
    let out = &mut partials[blocks.clone()];
    for (slot, r) in out.iter_mut().zip(&ranges[blocks]) {
        *slot = block_sum(r.clone(), |i| x[i] * y[i], scratch);
    }
    combine_partials(out)
}

fn is_breakdown(v: f64) -> bool {
    !v.is_finite() || v.abs() < BREAKDOWN_THRESHOLD
}

/// Solves `A x = b` from `x0`, allocating a fresh workspace.
pub fn bicg_solve(
    a: &CsrMatrix,
    b: &[f64],
    x0: &[f64],
    opts: &BicgOptions,
    plan: &ReductionPlan,
) -> Result<SolveOutcome> {
    bicg_solve_with(&mut BicgWorkspace::default(), a, b, x0, opts, plan)
}

/// Solves `A x = b` from `x0` reusing `ws`.
///
/// Breakdown (a vanishing or non-finite `⟨r̃, r⟩` or `⟨p̃, A p⟩`) is reported
/// through the outcome flags rather than as an error; the caller picks the
/// fallback. A scope that stops without converging returns the iterate with
/// the smallest recursive residual it reached.
pub fn bicg_solve_with(
    ws: &mut BicgWorkspace,
    a: &CsrMatrix,
    b: &[f64],
    x0: &[f64],
    opts: &BicgOptions,
    plan: &ReductionPlan,
) -> Result<SolveOutcome> {
    opts.validate()?;
    if !a.is_square() {
        return Err(Error::Contract(format!("matrix is {}x{}, not square", a.n_rows(), a.n_cols())));
    }
    let n = a.n_rows();
    check_len(n, b.len())?;
    check_len(n, x0.len())?;
    check_len(n, plan.len())?;

    let ranges = plan.block_ranges();
    let mut scopes: Vec<Scope> = if plan.host_stage() || ranges.len() == 1 {
        vec![Scope::new(0..ranges.len(), 0..n)]
    } else {
        for r in ranges {
            if !a.is_closed_over(r.clone()) {
                return Err(Error::InvalidPlan(format!(
                    "rows {r:?} couple to other blocks; per-block scope needs a block-diagonal matrix"
                )));
            }
        }
        ranges.iter().enumerate().map(|(k, r)| Scope::new(k..k + 1, r.clone())).collect()
    };

    ws.resize(n);
    ws.per_block_error.clear();
    ws.per_block_error.resize(ranges.len(), 0.0);
    ws.dot_partials.clear();
    ws.dot_partials.resize(ranges.len(), 0.0);
    let BicgWorkspace { r, r_shadow, p, p_shadow, ap, atp_shadow, best_x, per_block_error, dot_partials, scratch } =
        ws;

    let mut x = x0.to_vec();
    spmv_into(a, &x, r)?;
    for (ri, bi) in r.iter_mut().zip(b) {
        *ri = bi - *ri;
    }
    r_shadow.copy_from_slice(r);
    p.copy_from_slice(r);
    p_shadow.copy_from_slice(r);
    best_x.copy_from_slice(&x);

    for s in &mut scopes {
        let err = scope_dot(ranges, s.blocks.clone(), r, r, scratch, per_block_error);
        s.best_err = err;
        if scope_converged(err, s.rows.len(), opts.tol) {
            s.converged = true;
            s.active = false;
            continue;
        }
        s.rho = scope_dot(ranges, s.blocks.clone(), r_shadow, r, scratch, dot_partials);
        if is_breakdown(s.rho) || err.is_nan() {
            s.breakdown = true;
            s.active = false;
        }
    }

    for iteration in 1..=opts.max_iter {
        if scopes.iter().all(|s| !s.active) {
            break;
        }
        spmv_into(a, p, ap)?;
        spmv_transpose_into(a, p_shadow, atp_shadow)?;

        for s in scopes.iter_mut().filter(|s| s.active) {
            let rows = s.rows.clone();
            let sigma = scope_dot(ranges, s.blocks.clone(), p_shadow, ap, scratch, dot_partials);
            if is_breakdown(sigma) {
                s.breakdown = true;
                s.active = false;
                continue;
            }
            let alpha = s.rho / sigma;
            for i in rows.clone() {
                x[i] += alpha * p[i];
                r[i] -= alpha * ap[i];
                r_shadow[i] -= alpha * atp_shadow[i];
            }
            s.iterations = iteration;

            let err = scope_dot(ranges, s.blocks.clone(), r, r, scratch, per_block_error);
            if err.is_nan() {
                s.breakdown = true;
                s.active = false;
                continue;
            }
            if err < s.best_err {
                s.best_err = err;
                best_x[rows.clone()].copy_from_slice(&x[rows.clone()]);
            }
            if scope_converged(err, rows.len(), opts.tol) {
                // The recursive residual can drift below the attainable
                // accuracy, so convergence is only accepted on the true one.
                spmv_rows(a, &x, rows.clone(), ap);
                for i in rows.clone() {
                    ap[i] = b[i] - ap[i];
                }
                let true_err = scope_dot(ranges, s.blocks.clone(), ap, ap, scratch, per_block_error);
                if scope_converged(true_err, rows.len(), opts.tol) {
                    s.converged = true;
                    s.active = false;
                    continue;
                }
            }

            let rho_next = scope_dot(ranges, s.blocks.clone(), r_shadow, r, scratch, dot_partials);
            if is_breakdown(rho_next) {
                s.breakdown = true;
                s.active = false;
                continue;
            }
            let beta = rho_next / s.rho;
            s.rho = rho_next;
            for i in rows {
                p[i] = r[i] + beta * p[i];
                p_shadow[i] = r_shadow[i] + beta * p_shadow[i];
            }
        }
    }

    for s in scopes.iter().filter(|s| !s.converged) {
        x[s.rows.clone()].copy_from_slice(&best_x[s.rows.clone()]);
    }

    spmv_into(a, &x, ap)?;
    for (ri, bi) in ap.iter_mut().zip(b) {
        *ri = bi - *ri;
    }
    for (slot, range) in per_block_error.iter_mut().zip(ranges) {
        *slot = block_sum(range.clone(), |i| ap[i] * ap[i], scratch);
    }
    let final_residual_rms = (combine_partials(per_block_error) / n as f64).sqrt();

    Ok(SolveOutcome {
        x,
        iterations: scopes.iter().map(|s| s.iterations).max().unwrap_or(0),
        final_residual_rms,
        converged: scopes.iter().all(|s| s.converged),
        breakdown: scopes.iter().any(|s| s.breakdown),
        scope_iterations: scopes.iter().map(|s| s.iterations).collect(),
        scope_converged: scopes.iter().map(|s| s.converged).collect(),
        scope_breakdown: scopes.iter().map(|s| s.breakdown).collect(),
    })
}

impl Scope {
    fn new(blocks: Range<usize>, rows: Range<usize>) -> Self {
        Self { blocks, rows, rho: 0.0, best_err: f64::INFINITY, active: true, converged: false, breakdown: false, iterations: 0 }
    }
}
