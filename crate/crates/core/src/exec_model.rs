//! Analytic model of the GPU launch geometry.
//!
//! Nothing here runs on a GPU. The planner reproduces the arithmetic a CUDA
//! launch would use (cells per block, warp padding, power-of-two shared-memory
//! reduction buffers, remainder kernels) so that the CPU solver can follow the
//! same block boundaries and reduction order, and so that occupancy and memory
//! footprints can be estimated without hardware.

use std::fmt;
use std::ops::Range;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sparse::tree_reduce_in_place;

/// Hardware limits used by the planner. Defaults describe an NVIDIA V100.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeviceSpec {
    pub max_threads_per_block: usize,
    pub warp_size: usize,
    pub max_warps_per_sm: usize,
    pub max_blocks_per_sm: usize,
    pub max_threads_per_sm: usize,
    pub shared_mem_per_sm: usize,
    pub shared_slot_bytes: usize,
}

impl Default for DeviceSpec {
    fn default() -> Self {
        Self {
            max_threads_per_block: 1024,
            warp_size: 32,
            max_warps_per_sm: 64,
            max_blocks_per_sm: 32,
            max_threads_per_sm: 2048,
            shared_mem_per_sm: 96 * 1024,
            shared_slot_bytes: 8,
        }
    }
}

impl DeviceSpec {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("max_threads_per_block", self.max_threads_per_block),
            ("warp_size", self.warp_size),
            ("max_warps_per_sm", self.max_warps_per_sm),
            ("max_blocks_per_sm", self.max_blocks_per_sm),
            ("max_threads_per_sm", self.max_threads_per_sm),
            ("shared_mem_per_sm", self.shared_mem_per_sm),
            ("shared_slot_bytes", self.shared_slot_bytes),
        ];
        if let Some((name, _)) = fields.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("device field {name} must be positive")));
        }
        if self.max_threads_per_block > self.max_threads_per_sm {
            return Err(Error::Config(
                "max_threads_per_block exceeds max_threads_per_sm".into(),
            ));
        }
        Ok(())
    }

    /// Parses `key = value` lines. Blank lines and `#` comments are ignored;
    /// keys not present keep their default value.
    pub fn from_config_str(text: &str) -> Result<Self> {
        let mut spec = Self::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected key = value", lineno + 1))
            })?;
            let value: usize = value.trim().parse().map_err(|_| {
                Error::Config(format!("line {}: {:?} is not a count", lineno + 1, value.trim()))
            })?;
            let slot = match key.trim() {
                "max_threads_per_block" => &mut spec.max_threads_per_block,
                "warp_size" => &mut spec.warp_size,
                "max_warps_per_sm" => &mut spec.max_warps_per_sm,
                "max_blocks_per_sm" => &mut spec.max_blocks_per_sm,
                "max_threads_per_sm" => &mut spec.max_threads_per_sm,
                "shared_mem_per_sm" => &mut spec.shared_mem_per_sm,
                "shared_slot_bytes" => &mut spec.shared_slot_bytes,
                other => {
                    return Err(Error::Config(format!(
                        "line {}: unknown device key {other:?}",
                        lineno + 1
                    )))
                }
            };
            *slot = value;
        }
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| Error::Io { path: path.to_owned(), source })?;
        Self::from_config_str(&text)
    }
}

/// Load-distribution strategy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Strategy {
    OneCell,
    MultiCells,
    BlockCells,
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Strategy::OneCell => "one-cell",
            Strategy::MultiCells => "multi-cells",
            Strategy::BlockCells => "block-cells",
        })
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "one-cell" => Ok(Strategy::OneCell),
            "multi-cells" => Ok(Strategy::MultiCells),
            "block-cells" => Ok(Strategy::BlockCells),
            other => Err(Error::Config(format!("unknown strategy {other:?}"))),
        }
    }
}

/// Cells assigned to one thread block: a fixed count, or `N`, the largest
/// count that fits without splitting a cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CellsPerBlock {
    Fixed(usize),
    Max,
}

impl CellsPerBlock {
    pub fn request(self) -> Option<usize> {
        match self {
            CellsPerBlock::Fixed(k) => Some(k),
            CellsPerBlock::Max => None,
        }
    }
}

impl fmt::Display for CellsPerBlock {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CellsPerBlock::Fixed(k) => write!(f, "{k}"),
            CellsPerBlock::Max => f.write_str("N"),
        }
    }
}

impl FromStr for CellsPerBlock {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "N" {
            return Ok(CellsPerBlock::Max);
        }
        match s.parse::<usize>() {
            Ok(k) if k >= 1 => Ok(CellsPerBlock::Fixed(k)),
            _ => Err(Error::Config(format!(
                "cells per block must be a positive count or N, got {s:?}"
            ))),
        }
    }
}

/// The trailing kernel that handles `total_cells mod cells_per_block` cells.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RemainderBlock {
    pub cells: usize,
    pub threads: usize,
    pub shared_slots: usize,
}

/// Simulated launch geometry for one strategy.
///
/// `cells_per_block` is fractional for Multi-cells, where a block of
/// `max_threads_per_block` threads may cut through a cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelPlan {
    pub strategy: Strategy,
    pub cells_per_block: f64,
    pub threads_per_block: usize,
    pub shared_slots: usize,
    pub full_blocks: usize,
    pub remainder: Option<RemainderBlock>,
}

impl KernelPlan {
    /// Cells per block when the strategy never splits a cell.
    pub fn whole_cells_per_block(&self) -> Option<usize> {
        match self.strategy {
            Strategy::MultiCells => None,
            _ => Some(self.cells_per_block as usize),
        }
    }

    pub fn total_blocks(&self) -> usize {
        self.full_blocks + usize::from(self.remainder.is_some())
    }

    /// Cell counts of the independent groups, in launch order. Empty for
    /// Multi-cells, whose blocks are not independent.
    pub fn group_sizes(&self) -> Vec<usize> {
        let Some(k) = self.whole_cells_per_block() else {
            return Vec::new();
        };
        let mut sizes = vec![k; self.full_blocks];
        sizes.extend(self.remainder.map(|r| r.cells));
        sizes
    }
}

/// Smallest power of two that is `>= n`.
pub fn next_pow2(n: usize) -> Result<usize> {
    if n == 0 {
        return Err(Error::Contract("next_pow2 of zero".into()));
    }
    n.checked_next_power_of_two()
        .ok_or_else(|| Error::Contract(format!("next_pow2({n}) overflows")))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WarpPadding {
    pub warps: usize,
    pub idle: usize,
}

/// Warps launched for `threads` threads and how many of their lanes sit idle.
pub fn warp_padding(threads: usize, warp_size: usize) -> Result<WarpPadding> {
    if threads == 0 || warp_size == 0 {
        return Err(Error::Contract("warp padding needs threads >= 1 and warp size >= 1".into()));
    }
    let warps = threads.div_ceil(warp_size);
    Ok(WarpPadding { warps, idle: warps * warp_size - threads })
}

/// Plans the launch geometry of `strategy` for `total_cells` cells of
/// `species` species each.
///
/// `cells_per_block` is only read for Block-cells; `None` selects `N`.
pub fn plan_kernel(
    strategy: Strategy,
    total_cells: usize,
    species: usize,
    device: &DeviceSpec,
    cells_per_block: Option<usize>,
) -> Result<KernelPlan> {
    if total_cells == 0 || species == 0 {
        return Err(Error::Contract("plan_kernel needs at least one cell and one species".into()));
    }
    let max_threads = device.max_threads_per_block;
    if species > max_threads {
        return Err(Error::UnsupportedMechanism { species, max_threads });
    }
    match strategy {
        Strategy::OneCell => Ok(KernelPlan {
            strategy,
            cells_per_block: 1.0,
            threads_per_block: species,
            shared_slots: next_pow2(species)?,
            full_blocks: total_cells,
            remainder: None,
        }),
        Strategy::MultiCells => Ok(KernelPlan {
            strategy,
            cells_per_block: max_threads as f64 / species as f64,
            threads_per_block: max_threads,
            shared_slots: next_pow2(max_threads)?,
            full_blocks: (total_cells * species).div_ceil(max_threads),
            remainder: None,
        }),
        Strategy::BlockCells => {
            let k = match cells_per_block {
                Some(0) => return Err(Error::Contract("cells per block must be >= 1".into())),
                Some(k) => k,
                None => max_threads / species,
            };
            let threads = k * species;
            if threads > max_threads {
                return Err(Error::InvalidGrouping {
                    cells_per_block: k,
                    species,
                    threads,
                    max_threads,
                });
            }
            let rest = total_cells % k;
            let remainder = if rest == 0 {
                None
            } else {
                Some(RemainderBlock {
                    cells: rest,
                    threads: rest * species,
                    shared_slots: next_pow2(rest * species)?,
                })
            };
            Ok(KernelPlan {
                strategy,
                cells_per_block: k as f64,
                threads_per_block: threads,
                shared_slots: next_pow2(threads)?,
                full_blocks: total_cells / k,
                remainder,
            })
        }
    }
}

/// Which per-SM resource caps the number of resident blocks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OccupancyLimit {
    Blocks,
    Threads,
    SharedMemory,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Occupancy {
    /// Resident warps over the per-SM maximum, in `[0, 1]`.
    pub value: f64,
    pub blocks_per_sm: usize,
    pub warps_per_block: usize,
    pub limited_by: OccupancyLimit,
    /// Set when one block alone needs more shared memory than an SM has.
    pub infeasible: bool,
}

/// Theoretical occupancy of the plan's main kernel. Register pressure is not
/// modeled.
pub fn occupancy_estimate(plan: &KernelPlan, device: &DeviceSpec) -> Occupancy {
    let warps_per_block = plan.threads_per_block.div_ceil(device.warp_size);
    let padded_threads = warps_per_block * device.warp_size;
    let shared_bytes = plan.shared_slots * device.shared_slot_bytes;

    let limits = [
        (device.max_blocks_per_sm, OccupancyLimit::Blocks),
        (device.max_threads_per_sm / padded_threads.max(1), OccupancyLimit::Threads),
        (device.shared_mem_per_sm / shared_bytes.max(1), OccupancyLimit::SharedMemory),
    ];
    let (blocks_per_sm, limited_by) = limits
        .into_iter()
        .min_by_key(|(blocks, _)| *blocks)
        .expect("three limits");
    let value = (blocks_per_sm * warps_per_block) as f64 / device.max_warps_per_sm as f64;
    Occupancy {
        value: value.clamp(0.0, 1.0),
        blocks_per_sm,
        warps_per_block,
        limited_by,
        infeasible: shared_bytes > device.shared_mem_per_sm,
    }
}

/// Auxiliary array count of the reference BCG implementation.
pub const REFERENCE_AUX_ARRAYS: usize = 9;

/// Device memory in bytes for a strategy's solver arrays: the solution and
/// right-hand side plus `aux_array_count` work vectors per cell, one convergence
/// scalar per block, and for Multi-cells two per-cell host-stage buffers.
///
/// One-cell reuses a single cell's arrays for every cell.
pub fn memory_estimate(
    strategy: Strategy,
    cells: usize,
    species: usize,
    cells_per_block: Option<usize>,
    aux_array_count: usize,
    device: &DeviceSpec,
) -> Result<u64> {
    if cells == 0 || species == 0 {
        return Err(Error::Contract("memory_estimate needs positive cells and species".into()));
    }
    let plan = plan_kernel(strategy, cells, species, device, cells_per_block)?;
    let word = 8u64;
    let (resident_cells, blocks) = match strategy {
        Strategy::OneCell => (1, 1),
        _ => (cells as u64, plan.total_blocks() as u64),
    };
    let arrays = (2 + aux_array_count as u64) * resident_cells * species as u64 * word;
    let host_stage = if strategy == Strategy::MultiCells { 2 * cells as u64 * word } else { 0 };
    Ok(arrays + blocks * word + host_stage)
}

/// Summation topology: one contiguous index range per block, each reduced
/// with a power-of-two tree, then optionally a host stage that adds the block
/// partials left to right.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReductionPlan {
    block_ranges: Vec<Range<usize>>,
    host_stage: bool,
}

impl ReductionPlan {
    pub fn new(block_ranges: Vec<Range<usize>>, host_stage: bool) -> Result<Self> {
        if block_ranges.is_empty() {
            return Err(Error::InvalidPlan("no blocks".into()));
        }
        let mut expected = 0;
        for r in &block_ranges {
            if r.start != expected || r.end <= r.start {
                return Err(Error::InvalidPlan(format!(
                    "block {r:?} does not continue the partition at {expected}"
                )));
            }
            expected = r.end;
        }
        Ok(Self { block_ranges, host_stage })
    }

    /// One block spanning `[0, n)`.
    pub fn single_block(n: usize) -> Self {
        Self { block_ranges: std::iter::once(0..n).collect(), host_stage: false }
    }

    pub fn block_ranges(&self) -> &[Range<usize>] {
        &self.block_ranges
    }

    pub fn host_stage(&self) -> bool {
        self.host_stage
    }

    pub fn n_blocks(&self) -> usize {
        self.block_ranges.len()
    }

    /// Length of the index range the plan partitions.
    pub fn len(&self) -> usize {
        self.block_ranges.last().map_or(0, |r| r.end)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Per-block tree sums of `term(i)`.
    pub fn block_partials(&self, term: impl Fn(usize) -> f64, scratch: &mut Vec<f64>) -> Vec<f64> {
        self.block_ranges
            .iter()
            .map(|r| block_sum(r.clone(), &term, scratch))
            .collect()
    }

    /// Adds block partials left to right.
    pub fn combine(&self, partials: &[f64]) -> f64 {
        combine_partials(partials)
    }

    /// Full reduction of `term` over the plan's range.
    pub fn reduce(&self, term: impl Fn(usize) -> f64) -> f64 {
        let mut scratch = Vec::new();
        let partials = self.block_partials(term, &mut scratch);
        self.combine(&partials)
    }
}

pub(crate) fn combine_partials(partials: &[f64]) -> f64 {
    let mut iter = partials.iter();
    let first = iter.next().copied().unwrap_or(0.0);
    iter.fold(first, |acc, &p| acc + p)
}

/// Tree sum of `term(i)` for `i` in `range`, padded to the next power of two.
pub(crate) fn block_sum(range: Range<usize>, term: impl Fn(usize) -> f64, scratch: &mut Vec<f64>) -> f64 {
    let len = range.len();
    if len == 0 {
        return 0.0;
    }
    let padded = len.next_power_of_two();
    scratch.clear();
    scratch.extend(range.map(term));
    scratch.resize(padded, 0.0);
    tree_reduce_in_place(scratch)
}

/// Reduction topology matching a kernel plan.
///
/// One-cell plans describe a single cell's system; Block-cells plans the
/// concatenation of all groups; Multi-cells plans the whole batch cut into
/// blocks of `threads_per_block` entries, with a host stage.
pub fn build_reduction_plan(plan: &KernelPlan, system_length: usize) -> Result<ReductionPlan> {
    match plan.strategy {
        Strategy::OneCell => {
            if system_length != plan.threads_per_block {
                return Err(Error::InvalidPlan(format!(
                    "one-cell system has length {system_length}, plan expects {}",
                    plan.threads_per_block
                )));
            }
            Ok(ReductionPlan::single_block(system_length))
        }
        Strategy::BlockCells => {
            let expected =
                plan.full_blocks * plan.threads_per_block + plan.remainder.map_or(0, |r| r.threads);
            if system_length != expected {
                return Err(Error::InvalidPlan(format!(
                    "block-cells system has length {system_length}, plan covers {expected}"
                )));
            }
            let mut ranges = Vec::with_capacity(plan.total_blocks());
            let mut start = 0;
            for _ in 0..plan.full_blocks {
                ranges.push(start..start + plan.threads_per_block);
                start += plan.threads_per_block;
            }
            if let Some(r) = plan.remainder {
                ranges.push(start..start + r.threads);
            }
            ReductionPlan::new(ranges, false)
        }
        Strategy::MultiCells => {
            let width = plan.threads_per_block;
            let blocks = plan.full_blocks;
            if system_length == 0
                || system_length > blocks * width
                || system_length <= (blocks - 1) * width
            {
                return Err(Error::InvalidPlan(format!(
                    "multi-cells system of length {system_length} does not fill {blocks} blocks of {width}"
                )));
            }
            let ranges = (0..blocks)
                .map(|b| b * width..((b + 1) * width).min(system_length))
                .collect();
            ReductionPlan::new(ranges, true)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v100() -> DeviceSpec {
        DeviceSpec::default()
    }

    #[test]
    fn next_pow2_examples() {
        assert_eq!(next_pow2(100).unwrap(), 128);
        assert_eq!(next_pow2(156).unwrap(), 256);
        assert_eq!(next_pow2(1).unwrap(), 1);
        assert_eq!(next_pow2(1024).unwrap(), 1024);
        assert!(next_pow2(0).is_err());
    }

    #[test]
    fn warp_padding_examples() {
        assert_eq!(warp_padding(100, 32).unwrap().idle, 28);
        assert_eq!(warp_padding(1000, 32).unwrap().idle, 24);
        assert_eq!(warp_padding(156, 32).unwrap(), WarpPadding { warps: 5, idle: 4 });
        assert!(warp_padding(0, 32).is_err());
    }

    #[test]
    fn plan_examples() {
        let one = plan_kernel(Strategy::BlockCells, 10_000, 156, &v100(), Some(1)).unwrap();
        assert_eq!((one.threads_per_block, one.shared_slots), (156, 256));

        let n = plan_kernel(Strategy::BlockCells, 10_000, 156, &v100(), None).unwrap();
        assert_eq!(n.cells_per_block, 6.0);
        // floor(1024 / 156) = 6 cells, 6 × 156 threads.
        assert_eq!((n.threads_per_block, n.shared_slots), (936, 1024));

        let p = plan_kernel(Strategy::BlockCells, 11, 100, &v100(), Some(10)).unwrap();
        assert_eq!(p.threads_per_block, 1000);
        assert_eq!(p.full_blocks, 1);
        assert_eq!(p.remainder, Some(RemainderBlock { cells: 1, threads: 100, shared_slots: 128 }));
        assert_eq!(p.group_sizes(), vec![10, 1]);

        let m = plan_kernel(Strategy::MultiCells, 10_000, 156, &v100(), None).unwrap();
        assert_eq!((m.threads_per_block, m.shared_slots), (1024, 1024));
        assert!((m.cells_per_block - 6.564).abs() < 1e-3);
        assert_eq!(format!("{:.1}", m.cells_per_block), "6.6");

        let o = plan_kernel(Strategy::OneCell, 5, 156, &v100(), None).unwrap();
        assert_eq!((o.threads_per_block, o.shared_slots, o.full_blocks), (156, 256, 5));
    }

    #[test]
    fn plan_errors() {
        assert!(matches!(
            plan_kernel(Strategy::BlockCells, 4, 1025, &v100(), Some(1)),
            Err(Error::UnsupportedMechanism { species: 1025, .. })
        ));
        assert!(matches!(
            plan_kernel(Strategy::BlockCells, 4, 156, &v100(), Some(7)),
            Err(Error::InvalidGrouping { threads: 1092, .. })
        ));
        assert!(plan_kernel(Strategy::MultiCells, 0, 156, &v100(), None).is_err());
    }

    #[test]
    fn occupancy_examples() {
        let one = plan_kernel(Strategy::BlockCells, 100, 156, &v100(), Some(1)).unwrap();
        let occ = occupancy_estimate(&one, &v100());
        assert_eq!(occ.value, 60.0 / 64.0);
        assert_eq!(occ.blocks_per_sm, 12);
        assert_eq!(occ.limited_by, OccupancyLimit::Threads);

        // 936 threads pad to 30 warps; two blocks fit per SM.
        let n = plan_kernel(Strategy::BlockCells, 100, 156, &v100(), None).unwrap();
        assert_eq!(occupancy_estimate(&n, &v100()).value, 60.0 / 64.0);
        assert!(occupancy_estimate(&one, &v100()).value >= occupancy_estimate(&n, &v100()).value);

        // A 924-thread block pads to 29 warps: 2 · 29 / 64.
        let narrow = KernelPlan { threads_per_block: 924, ..n };
        assert_eq!(occupancy_estimate(&narrow, &v100()).value, 58.0 / 64.0);

        let tiny = DeviceSpec { shared_mem_per_sm: 1024, ..v100() };
        let occ = occupancy_estimate(&n, &tiny);
        assert_eq!(occ.value, 0.0);
        assert!(occ.infeasible);
    }

    #[test]
    fn memory_examples() {
        let d = v100();
        assert_eq!(memory_estimate(Strategy::BlockCells, 1, 156, Some(1), 9, &d).unwrap(), 13_736);
        assert!(memory_estimate(Strategy::BlockCells, 0, 156, Some(1), 9, &d).is_err());
        // Six cells of 156 species fill exactly one block under both layouts.
        let multi = memory_estimate(Strategy::MultiCells, 6, 156, None, 9, &d).unwrap();
        let blocks_n = memory_estimate(Strategy::BlockCells, 6, 156, None, 9, &d).unwrap();
        assert_eq!(multi - blocks_n, 2 * 6 * 8);
        let one_cell = memory_estimate(Strategy::OneCell, 50, 156, None, 9, &d).unwrap();
        assert_eq!(one_cell, 13_736);
    }

    #[test]
    fn reduction_plans() {
        let m = plan_kernel(Strategy::MultiCells, 2, 1024, &v100(), None).unwrap();
        let rp = build_reduction_plan(&m, 2048).unwrap();
        assert_eq!(rp.block_ranges(), &[0..1024, 1024..2048]);
        assert!(rp.host_stage());

        let b = plan_kernel(Strategy::BlockCells, 11, 100, &v100(), Some(10)).unwrap();
        let rp = build_reduction_plan(&b, 1100).unwrap();
        assert_eq!(rp.block_ranges(), &[0..1000, 1000..1100]);
        assert!(!rp.host_stage());
        assert!(build_reduction_plan(&b, 1000).is_err());

        let o = plan_kernel(Strategy::OneCell, 3, 20, &v100(), None).unwrap();
        assert_eq!(build_reduction_plan(&o, 20).unwrap(), ReductionPlan::single_block(20));
        assert!(build_reduction_plan(&o, 60).is_err());
    }

    #[test]
    fn single_block_matches_tree_reduce() {
        let v: Vec<f64> = (0..37).map(|i| (i as f64).sin() * 1e3).collect();
        let plan = ReductionPlan::single_block(v.len());
        let direct = crate::sparse::tree_reduce(&v, 64).unwrap();
        assert_eq!(plan.reduce(|i| v[i]).to_bits(), direct.to_bits());
    }

    #[test]
    fn reduction_plan_rejects_gaps() {
        assert!(ReductionPlan::new(vec![0..3, 4..5], true).is_err());
        assert!(ReductionPlan::new(vec![0..3, 3..3], true).is_err());
        assert!(ReductionPlan::new(vec![], true).is_err());
    }

    #[test]
    fn device_config_file() {
        let spec = DeviceSpec::from_config_str(
            "# small part\nmax_threads_per_block = 512\nwarp_size=32\n\nshared_mem_per_sm = 65536 # bytes\n",
        )
        .unwrap();
        assert_eq!(spec.max_threads_per_block, 512);
        assert_eq!(spec.shared_mem_per_sm, 65536);
        assert_eq!(spec.max_warps_per_sm, 64);
        assert!(DeviceSpec::from_config_str("bogus = 1").is_err());
        assert!(DeviceSpec::from_config_str("warp_size = 0").is_err());
        assert!(DeviceSpec::from_config_str("warp_size 32").is_err());
        assert!(DeviceSpec::from_config_str("max_threads_per_block = 4096").is_err());
    }

    #[test]
    fn kernel_plan_json_fields() {
        let p = plan_kernel(Strategy::BlockCells, 11, 100, &v100(), Some(10)).unwrap();
        let json = serde_json::to_value(p).unwrap();
        let keys: Vec<_> = json.as_object().unwrap().keys().cloned().collect();
        let mut expected = vec![
            "cells_per_block",
            "full_blocks",
            "remainder",
            "shared_slots",
            "strategy",
            "threads_per_block",
        ];
        expected.sort();
        assert_eq!(keys, expected);
        assert_eq!(json["remainder"]["threads"], 100);
        let back: KernelPlan = serde_json::from_value(json).unwrap();
        assert_eq!(back, p);
    }

    #[test]
    fn cells_per_block_parsing() {
        assert_eq!("N".parse::<CellsPerBlock>().unwrap(), CellsPerBlock::Max);
        assert_eq!("3".parse::<CellsPerBlock>().unwrap(), CellsPerBlock::Fixed(3));
        assert!("0".parse::<CellsPerBlock>().is_err());
        assert!("n".parse::<CellsPerBlock>().is_err());
    }
}
