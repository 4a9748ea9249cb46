//! The three load-distribution strategies over a batch of per-cell systems.

use std::ops::Range;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bicg::{bicg_solve_with, BicgOptions, BicgWorkspace};
use crate::direct::lu_solve_csr;
use crate::error::{check_len, Error, Result};
use crate::exec_model::{build_reduction_plan, plan_kernel, CellsPerBlock, DeviceSpec, ReductionPlan, Strategy};
use crate::sparse::{spmv, CsrMatrix};

/// Per-cell linear systems sharing one sparsity pattern.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchedSystem {
    species: usize,
    matrices: Vec<CsrMatrix>,
    rhs: Vec<Vec<f64>>,
}

impl BatchedSystem {
    pub fn new(species: usize, matrices: Vec<CsrMatrix>, rhs: Vec<Vec<f64>>) -> Result<Self> {
        if matrices.is_empty() {
            return Err(Error::Contract("batch needs at least one cell".into()));
        }
        check_len(matrices.len(), rhs.len())?;
        let first = &matrices[0];
        for (c, (m, b)) in matrices.iter().zip(&rhs).enumerate() {
            if m.n_rows() != species || m.n_cols() != species {
                return Err(Error::InvalidMatrix(format!(
                    "cell {c}: matrix is {}x{}, expected {species}x{species}",
                    m.n_rows(),
                    m.n_cols()
                )));
            }
            if m.row_ptr() != first.row_ptr() || m.col_idx() != first.col_idx() {
                return Err(Error::InvalidMatrix(format!("cell {c}: sparsity pattern differs from cell 0")));
            }
            check_len(species, b.len())?;
        }
        Ok(Self { species, matrices, rhs })
    }

    pub fn species(&self) -> usize {
        self.species
    }

    pub fn cells(&self) -> usize {
        self.matrices.len()
    }

    pub fn matrix(&self, cell: usize) -> &CsrMatrix {
        &self.matrices[cell]
    }

    pub fn rhs(&self, cell: usize) -> &[f64] {
        &self.rhs[cell]
    }

    /// The batch with cells reordered so that new cell `i` is old cell `order[i]`.
    pub fn permuted(&self, order: &[usize]) -> Result<Self> {
        check_len(self.cells(), order.len())?;
        let mut seen = vec![false; order.len()];
        for &c in order {
            if c >= order.len() || std::mem::replace(&mut seen[c], true) {
                return Err(Error::Contract("order is not a permutation".into()));
            }
        }
        Ok(Self {
            species: self.species,
            matrices: order.iter().map(|&c| self.matrices[c].clone()).collect(),
            rhs: order.iter().map(|&c| self.rhs[c].clone()).collect(),
        })
    }
}

/// Block-diagonal matrix and concatenated right-hand side of `cells`.
pub fn assemble_block_diagonal(system: &BatchedSystem, cells: Range<usize>) -> Result<(CsrMatrix, Vec<f64>)> {
    if cells.is_empty() {
        return Err(Error::Contract("cannot assemble an empty cell range".into()));
    }
    if cells.end > system.cells() {
        return Err(Error::Contract(format!(
            "cell range {cells:?} exceeds the batch of {} cells",
            system.cells()
        )));
    }
    let s = system.species;
    let n = cells.len() * s;
    let nnz: usize = cells.clone().map(|c| system.matrices[c].nnz()).sum();
    let mut row_ptr = Vec::with_capacity(n + 1);
    let mut col_idx = Vec::with_capacity(nnz);
    let mut values = Vec::with_capacity(nnz);
    let mut b = Vec::with_capacity(n);
    row_ptr.push(0);
    for (local, c) in cells.enumerate() {
        let m = &system.matrices[c];
        let offset = local * s;
        let base = col_idx.len();
        row_ptr.extend(m.row_ptr()[1..].iter().map(|p| p + base));
        col_idx.extend(m.col_idx().iter().map(|j| j + offset));
        values.extend_from_slice(m.values());
        b.extend_from_slice(&system.rhs[c]);
    }
    Ok((CsrMatrix::new(n, n, row_ptr, col_idx, values)?, b))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub strategy: Strategy,
    pub label: String,
    pub cells_per_block: f64,
    pub iterations_effective: usize,
    pub iterations_sum: usize,
    /// One entry per cell (One-cell), per group (Block-cells) or a single entry (Multi-cells).
    pub per_block_iterations: Vec<usize>,
    /// Largest per-cell RMS of `b - A x`.
    pub max_residual_rms: f64,
    pub wall_time_ns: u64,
    pub breakdown_fallbacks: usize,
    /// Solution of every cell, in batch order.
    pub solutions: Vec<Vec<f64>>,
}

/// `report_b.iterations_effective / report_a.iterations_effective`.
pub fn iteration_reduction_ratio(report_a: &SolveReport, report_b: &SolveReport) -> Result<f64> {
    if report_a.iterations_effective == 0 {
        return Err(Error::Contract("iteration ratio with zero-iteration denominator".into()));
    }
    Ok(report_b.iterations_effective as f64 / report_a.iterations_effective as f64)
}

fn residual_rms(a: &CsrMatrix, b: &[f64], x: &[f64]) -> Result<f64> {
    let ax = spmv(a, x)?;
    let sum_sq: f64 = ax.iter().zip(b).map(|(v, bi)| (bi - v) * (bi - v)).sum();
    Ok((sum_sq / b.len() as f64).sqrt())
}

fn max_cell_residual(system: &BatchedSystem, solutions: &[Vec<f64>]) -> Result<f64> {
    let mut worst = 0.0f64;
    for (c, x) in solutions.iter().enumerate() {
        worst = worst.max(residual_rms(&system.matrices[c], &system.rhs[c], x)?);
    }
    Ok(worst)
}

fn split_cells(flat: Vec<f64>, species: usize) -> Vec<Vec<f64>> {
    flat.chunks(species).map(<[f64]>::to_vec).collect()
}

fn lu_cells(system: &BatchedSystem, cells: Range<usize>) -> Result<Vec<Vec<f64>>> {
    cells.map(|c| lu_solve_csr(&system.matrices[c], &system.rhs[c])).collect()
}

fn elapsed_ns(started: Instant) -> u64 {
    u64::try_from(started.elapsed().as_nanos()).unwrap_or(u64::MAX)
}

/// Solves the cells one after another, each as its own single-block system.
pub fn solve_one_cell(system: &BatchedSystem, opts: &BicgOptions) -> Result<SolveReport> {
    let started = Instant::now();
    let s = system.species;
    let plan = ReductionPlan::single_block(s);
    let x0 = vec![0.0; s];
    let mut ws = BicgWorkspace::new(s);
    let mut iterations = Vec::with_capacity(system.cells());
    let mut solutions = Vec::with_capacity(system.cells());
    let mut fallbacks = 0;
    for c in 0..system.cells() {
        let out = bicg_solve_with(&mut ws, &system.matrices[c], &system.rhs[c], &x0, opts, &plan)?;
        iterations.push(out.iterations);
        if out.breakdown {
            fallbacks += 1;
            solutions.push(lu_solve_csr(&system.matrices[c], &system.rhs[c])?);
        } else {
            solutions.push(out.x);
        }
    }
    let max_residual_rms = max_cell_residual(system, &solutions)?;
    Ok(SolveReport {
        strategy: Strategy::OneCell,
        label: Strategy::OneCell.to_string(),
        cells_per_block: 1.0,
        iterations_effective: iterations.iter().copied().max().unwrap_or(0),
        iterations_sum: iterations.iter().sum(),
        per_block_iterations: iterations,
        max_residual_rms,
        wall_time_ns: elapsed_ns(started),
        breakdown_fallbacks: fallbacks,
        solutions,
    })
}

/// Solves the whole batch as one block-diagonal system with a single global
/// convergence test reduced through blocks and a host stage.
pub fn solve_multi_cells(system: &BatchedSystem, device: &DeviceSpec, opts: &BicgOptions) -> Result<SolveReport> {
    let started = Instant::now();
    let kernel = plan_kernel(Strategy::MultiCells, system.cells(), system.species, device, None)?;
    let (a, b) = assemble_block_diagonal(system, 0..system.cells())?;
    let plan = build_reduction_plan(&kernel, a.n_rows())?;
    let x0 = vec![0.0; a.n_rows()];
    let out = bicg_solve_with(&mut BicgWorkspace::new(a.n_rows()), &a, &b, &x0, opts, &plan)?;
    let (solutions, fallbacks) = if out.breakdown {
        (lu_cells(system, 0..system.cells())?, 1)
    } else {
        (split_cells(out.x, system.species), 0)
    };
    let max_residual_rms = max_cell_residual(system, &solutions)?;
    Ok(SolveReport {
        strategy: Strategy::MultiCells,
        label: Strategy::MultiCells.to_string(),
        cells_per_block: kernel.cells_per_block,
        iterations_effective: out.iterations,
        iterations_sum: out.iterations,
        per_block_iterations: vec![out.iterations],
        max_residual_rms,
        wall_time_ns: elapsed_ns(started),
        breakdown_fallbacks: fallbacks,
        solutions,
    })
}

struct GroupResult {
    iterations: usize,
    breakdown: bool,
    solutions: Vec<Vec<f64>>,
}

fn solve_group(system: &BatchedSystem, cells: Range<usize>, opts: &BicgOptions) -> Result<GroupResult> {
    let (a, b) = assemble_block_diagonal(system, cells.clone())?;
    let n = a.n_rows();
    let out = bicg_solve_with(
        &mut BicgWorkspace::new(n),
        &a,
        &b,
        &vec![0.0; n],
        opts,
        &ReductionPlan::single_block(n),
    )?;
    let solutions = if out.breakdown {
        lu_cells(system, cells)?
    } else {
        split_cells(out.x, system.species)
    };
    Ok(GroupResult { iterations: out.iterations, breakdown: out.breakdown, solutions })
}

/// Partitions the cells into groups of `cells_per_block` (plus a smaller
/// remainder group) and solves every group independently on `pool`.
pub fn solve_block_cells(
    system: &BatchedSystem,
    cells_per_block: CellsPerBlock,
    device: &DeviceSpec,
    opts: &BicgOptions,
    pool: &rayon::ThreadPool,
) -> Result<SolveReport> {
    let started = Instant::now();
    opts.validate()?;
    let kernel = plan_kernel(
        Strategy::BlockCells,
        system.cells(),
        system.species,
        device,
        cells_per_block.request(),
    )?;
    let mut groups = Vec::new();
    let mut start = 0;
    for size in kernel.group_sizes() {
        groups.push(start..start + size);
        start += size;
    }
    let results: Vec<GroupResult> = pool.install(|| {
        groups
            .par_iter()
            .map(|g| solve_group(system, g.clone(), opts))
            .collect::<Result<_>>()
    })?;

    let per_block_iterations: Vec<usize> = results.iter().map(|g| g.iterations).collect();
    let breakdown_fallbacks = results.iter().filter(|g| g.breakdown).count();
    let solutions: Vec<Vec<f64>> = results.into_iter().flat_map(|g| g.solutions).collect();
    let max_residual_rms = max_cell_residual(system, &solutions)?;
    Ok(SolveReport {
        strategy: Strategy::BlockCells,
        label: format!("block-cells({cells_per_block})"),
        cells_per_block: kernel.cells_per_block,
        iterations_effective: per_block_iterations.iter().copied().max().unwrap_or(0),
        iterations_sum: per_block_iterations.iter().sum(),
        per_block_iterations,
        max_residual_rms,
        wall_time_ns: elapsed_ns(started),
        breakdown_fallbacks,
        solutions,
    })
}

/// Anything that can solve a whole batch at once.
pub trait BatchSolver: Sync {
    fn solve_batch(&self, system: &BatchedSystem) -> Result<SolveReport>;

    fn label(&self) -> String;
}

/// Strategy choice plus everything it needs to run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StrategyConfig {
    pub strategy: Strategy,
    /// Only read for Block-cells.
    pub cells_per_block: CellsPerBlock,
    pub options: BicgOptions,
    pub device: DeviceSpec,
    /// Block-cells worker threads; 0 means one per available core.
    pub workers: usize,
}

impl StrategyConfig {
    pub fn label(&self) -> String {
        match self.strategy {
            Strategy::BlockCells => format!("block-cells({})", self.cells_per_block),
            s => s.to_string(),
        }
    }
}

pub struct StrategySolver {
    config: StrategyConfig,
    pool: rayon::ThreadPool,
}

impl StrategySolver {
    pub fn new(config: StrategyConfig) -> Result<Self> {
        config.options.validate()?;
        config.device.validate()?;
        let workers = if config.workers == 0 { available_workers() } else { config.workers };
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| Error::Config(format!("cannot start {workers} workers: {e}")))?;
        Ok(Self { config, pool })
    }

    pub fn config(&self) -> &StrategyConfig {
        &self.config
    }

    pub fn workers(&self) -> usize {
        self.pool.current_num_threads()
    }
}

/// Number of hardware threads, or 1 if unknown.
pub fn available_workers() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

impl BatchSolver for StrategySolver {
    fn solve_batch(&self, system: &BatchedSystem) -> Result<SolveReport> {
        let c = &self.config;
        match c.strategy {
            Strategy::OneCell => solve_one_cell(system, &c.options),
            Strategy::MultiCells => solve_multi_cells(system, &c.device, &c.options),
            Strategy::BlockCells => solve_block_cells(system, c.cells_per_block, &c.device, &c.options, &self.pool),
        }
    }

    fn label(&self) -> String {
        self.config.label()
    }
}

/// Dense LU on every cell; the reference the iterative strategies are held to.
#[derive(Debug, Clone, Copy, Default)]
pub struct DirectSolver;

impl BatchSolver for DirectSolver {
    fn solve_batch(&self, system: &BatchedSystem) -> Result<SolveReport> {
        let started = Instant::now();
        let solutions = lu_cells(system, 0..system.cells())?;
        let max_residual_rms = max_cell_residual(system, &solutions)?;
        Ok(SolveReport {
            strategy: Strategy::OneCell,
            label: self.label(),
            cells_per_block: 1.0,
            iterations_effective: 0,
            iterations_sum: 0,
            per_block_iterations: vec![0; system.cells()],
            max_residual_rms,
            wall_time_ns: elapsed_ns(started),
            breakdown_fallbacks: 0,
            solutions,
        })
    }

    fn label(&self) -> String {
        "dense-lu".into()
    }
}
