//! Experiment driver: strategy sweeps, per-step tables, aggregate statistics
//! and the CSV/JSON reports.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::bicg::{BicgOptions, BicgWorkspace};
use crate::error::{Error, Result};
use crate::exec_model::{
    memory_estimate, occupancy_estimate, plan_kernel, CellsPerBlock, DeviceSpec, KernelPlan, Occupancy, Strategy,
    REFERENCE_AUX_ARRAYS,
};
use crate::problem::{
    batch_conditions, generate_mechanism, initial_state, run_simulation, CellState, ConditionMode, KineticsModel,
    SimulationConfig, StepRecord,
};
use crate::strategies::{StrategyConfig, StrategySolver};

pub const CSV_HEADER: [&str; 11] = [
    "step",
    "strategy",
    "cells",
    "species",
    "cells_per_block",
    "iterations_effective",
    "iterations_sum",
    "wall_ns",
    "max_residual_rms",
    "breakdown_fallbacks",
    "clip_events",
];

/// A strategy together with its block size, e.g. `block-cells(N)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StrategySpec {
    pub strategy: Strategy,
    /// Only meaningful for Block-cells.
    pub cells_per_block: CellsPerBlock,
}

impl StrategySpec {
    pub const ONE_CELL: Self = Self { strategy: Strategy::OneCell, cells_per_block: CellsPerBlock::Fixed(1) };
    pub const MULTI_CELLS: Self = Self { strategy: Strategy::MultiCells, cells_per_block: CellsPerBlock::Max };

    pub fn block_cells(cells_per_block: CellsPerBlock) -> Self {
        Self { strategy: Strategy::BlockCells, cells_per_block }
    }

    /// One-cell, Multi-cells, Block-cells(1) and Block-cells(N).
    pub fn all() -> Vec<Self> {
        vec![
            Self::ONE_CELL,
            Self::MULTI_CELLS,
            Self::block_cells(CellsPerBlock::Fixed(1)),
            Self::block_cells(CellsPerBlock::Max),
        ]
    }

    fn block_request(&self) -> Option<usize> {
        match self.strategy {
            Strategy::BlockCells => self.cells_per_block.request(),
            _ => None,
        }
    }
}

impl fmt::Display for StrategySpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.strategy {
            Strategy::BlockCells => write!(f, "block-cells({})", self.cells_per_block),
            s => write!(f, "{s}"),
        }
    }
}

impl FromStr for StrategySpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if let Some(inner) = s.strip_prefix("block-cells(").and_then(|r| r.strip_suffix(')')) {
            return Ok(Self::block_cells(inner.parse()?));
        }
        match s.parse()? {
            Strategy::OneCell => Ok(Self::ONE_CELL),
            Strategy::MultiCells => Ok(Self::MULTI_CELLS),
            Strategy::BlockCells => Ok(Self::block_cells(CellsPerBlock::Max)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub cells: usize,
    pub species: usize,
    pub reactions: usize,
    pub steps: usize,
    /// Seconds.
    pub dt: f64,
    pub mode: ConditionMode,
    pub strategies: Vec<StrategySpec>,
    pub tol: f64,
    pub max_iter: usize,
    pub seed: u64,
    /// 0 means one worker per available core.
    pub workers: usize,
    pub device: DeviceSpec,
    pub output_path: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let opts = BicgOptions::default();
        Self {
            cells: 1000,
            species: 156,
            reactions: 3 * 156,
            steps: 720,
            dt: 120.0,
            mode: ConditionMode::Realistic,
            strategies: StrategySpec::all(),
            tol: opts.tol,
            max_iter: opts.max_iter,
            seed: 0,
            workers: 0,
            device: DeviceSpec::default(),
            output_path: None,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.cells == 0 {
            return Err(Error::Config("cells must be at least 1".into()));
        }
        if self.species < 2 {
            return Err(Error::Config("species must be at least 2".into()));
        }
        if self.reactions == 0 {
            return Err(Error::Config("reactions must be at least 1".into()));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::Config(format!("dt must be positive, got {}", self.dt)));
        }
        if self.strategies.is_empty() {
            return Err(Error::Config("no strategies selected".into()));
        }
        self.device.validate()?;
        self.options().validate().map_err(|e| Error::Config(e.to_string()))?;
        for s in &self.strategies {
            plan_kernel(s.strategy, self.cells, self.species, &self.device, s.block_request())
                .map_err(|e| Error::Config(format!("{s}: {e}")))?;
        }
        Ok(())
    }

    pub fn options(&self) -> BicgOptions {
        BicgOptions { tol: self.tol, max_iter: self.max_iter }
    }

    fn strategy_config(&self, spec: StrategySpec) -> StrategyConfig {
        StrategyConfig {
            strategy: spec.strategy,
            cells_per_block: spec.cells_per_block,
            options: self.options(),
            device: self.device,
            workers: self.workers,
        }
    }
}

/// One row of the per-step table.
#[derive(Debug, Clone, PartialEq)]
pub struct RawRow {
    pub step: usize,
    pub strategy: String,
    pub cells: usize,
    pub species: usize,
    pub cells_per_block: f64,
    pub iterations_effective: usize,
    pub iterations_sum: usize,
    pub wall_ns: u64,
    pub max_residual_rms: f64,
    pub breakdown_fallbacks: usize,
    pub clip_events: usize,
}

/// Mean and population standard deviation of a series.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeriesStats {
    pub mean: f64,
    pub std: f64,
    pub count: usize,
}

/// Two-pass mean and population standard deviation. A constant series has a
/// standard deviation of exactly zero.
pub fn series_stats(xs: &[f64]) -> Result<SeriesStats> {
    if xs.is_empty() {
        return Err(Error::Contract("statistics of an empty series".into()));
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let std = if xs.iter().all(|&x| x == xs[0]) {
        0.0
    } else {
        (xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n).sqrt()
    };
    let mean = if std == 0.0 { xs[0] } else { mean };
    Ok(SeriesStats { mean, std, count: xs.len() })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyStats {
    pub strategy: StrategySpec,
    pub label: String,
    pub iterations_effective: SeriesStats,
    pub iterations_sum: SeriesStats,
    pub wall_ns: SeriesStats,
    /// Mean baseline wall time over mean wall time of this strategy.
    pub speedup: Option<f64>,
    /// Per-step `iterations_effective` of this strategy over the comparator's.
    pub iteration_ratio: Option<SeriesStats>,
    pub breakdown_fallbacks: usize,
    pub clip_events: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateStats {
    pub baseline: Option<String>,
    pub comparator: Option<String>,
    pub strategies: Vec<StrategyStats>,
}

impl AggregateStats {
    pub fn get(&self, label: &str) -> Option<&StrategyStats> {
        self.strategies.iter().find(|s| s.label == label)
    }
}

/// Simulation of one strategy within an experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct StrategyRun {
    pub strategy: StrategySpec,
    pub steps: Vec<StepRecord>,
    pub final_states: Vec<CellState>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentResult {
    pub config: ExperimentConfig,
    pub runs: Vec<StrategyRun>,
    pub stats: AggregateStats,
    pub table: Vec<RawRow>,
}

/// Label of the speedup baseline.
pub const BASELINE_LABEL: &str = "one-cell";
/// Label of the iteration-ratio comparator.
pub const COMPARATOR_LABEL: &str = "block-cells(1)";

/// Runs the configured simulation once per strategy, from identical inputs.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentResult> {
    config.validate()?;
    let mech = generate_mechanism(config.species, config.reactions, config.seed)?;
    let model = KineticsModel::new(mech)?;
    let conditions = batch_conditions(config.cells, config.mode)?;
    let initial = vec![initial_state(config.species, config.seed); config.cells];
    let sim = SimulationConfig { steps: config.steps, dt: config.dt, ..SimulationConfig::default() };

    let mut runs = Vec::with_capacity(config.strategies.len());
    for &spec in &config.strategies {
        let solver = StrategySolver::new(config.strategy_config(spec))?;
        let result = run_simulation(&model, &conditions, &initial, &sim, &solver)?;
        runs.push(StrategyRun { strategy: spec, steps: result.steps, final_states: result.final_states });
    }

    let table = raw_table(config, &runs);
    let stats = aggregate(&runs)?;
    Ok(ExperimentResult { config: config.clone(), runs, stats, table })
}

fn raw_table(config: &ExperimentConfig, runs: &[StrategyRun]) -> Vec<RawRow> {
    let mut rows = Vec::new();
    for step in 0..config.steps {
        for run in runs {
            let rec = &run.steps[step];
            let plan = plan_kernel(
                run.strategy.strategy,
                config.cells,
                config.species,
                &config.device,
                run.strategy.block_request(),
            )
            .expect("plans were validated");
            rows.push(RawRow {
                step,
                strategy: run.strategy.to_string(),
                cells: config.cells,
                species: config.species,
                cells_per_block: plan.cells_per_block,
                iterations_effective: rec.iterations_effective,
                iterations_sum: rec.iterations_sum,
                wall_ns: rec.wall_ns,
                max_residual_rms: rec.max_residual_rms,
                breakdown_fallbacks: rec.breakdown_fallbacks,
                clip_events: rec.clip_events,
            });
        }
    }
    rows
}

/// Aggregates per-step records. Speedups are relative to One-cell and
/// iteration ratios to Block-cells(1) when those strategies were run.
pub fn aggregate(runs: &[StrategyRun]) -> Result<AggregateStats> {
    let find = |label: &str| runs.iter().find(|r| r.strategy.to_string() == label);
    let baseline = find(BASELINE_LABEL);
    let comparator = find(COMPARATOR_LABEL);
    let baseline_wall = match baseline {
        Some(b) if !b.steps.is_empty() => Some(wall_stats(b)?.mean),
        _ => None,
    };

    let mut strategies = Vec::with_capacity(runs.len());
    for run in runs {
        if run.steps.is_empty() {
            return Err(Error::Contract(format!("{}: no steps to aggregate", run.strategy)));
        }
        let eff: Vec<f64> = run.steps.iter().map(|s| s.iterations_effective as f64).collect();
        let sum: Vec<f64> = run.steps.iter().map(|s| s.iterations_sum as f64).collect();
        let wall = wall_stats(run)?;
        let speedup = baseline_wall
            .filter(|b| *b > 0.0 && wall.mean > 0.0)
            .map(|b| if b == wall.mean { 1.0 } else { b / wall.mean });
        let iteration_ratio = match comparator {
            Some(c) => {
                let ratios: Vec<f64> = run
                    .steps
                    .iter()
                    .zip(&c.steps)
                    .filter(|(_, cs)| cs.iterations_effective > 0)
                    .map(|(s, cs)| s.iterations_effective as f64 / cs.iterations_effective as f64)
                    .collect();
                if ratios.is_empty() {
                    None
                } else {
                    Some(series_stats(&ratios)?)
                }
            }
            None => None,
        };
        strategies.push(StrategyStats {
            strategy: run.strategy,
            label: run.strategy.to_string(),
            iterations_effective: series_stats(&eff)?,
            iterations_sum: series_stats(&sum)?,
            wall_ns: wall,
            speedup,
            iteration_ratio,
            breakdown_fallbacks: run.steps.iter().map(|s| s.breakdown_fallbacks).sum(),
            clip_events: run.steps.iter().map(|s| s.clip_events).sum(),
        });
    }
    Ok(AggregateStats {
        baseline: baseline.map(|r| r.strategy.to_string()),
        comparator: comparator.map(|r| r.strategy.to_string()),
        strategies,
    })
}

fn wall_stats(run: &StrategyRun) -> Result<SeriesStats> {
    let wall: Vec<f64> = run.steps.iter().map(|s| s.wall_ns as f64).collect();
    series_stats(&wall)
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(source) => Error::Io { path: path.to_owned(), source },
        kind => Error::Config(format!("{}: {kind:?}", path.display())),
    }
}

/// Writes the per-step table. Reals are printed in their shortest
/// round-trip form.
pub fn emit_csv(table: &[RawRow], path: &Path) -> Result<()> {
    if table.is_empty() {
        return Err(Error::Contract("refusing to write an empty table".into()));
    }
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    w.write_record(CSV_HEADER).map_err(|e| csv_error(path, e))?;
    for r in table {
        w.write_record([
            r.step.to_string(),
            r.strategy.clone(),
            r.cells.to_string(),
            r.species.to_string(),
            format!("{:?}", r.cells_per_block),
            r.iterations_effective.to_string(),
            r.iterations_sum.to_string(),
            r.wall_ns.to_string(),
            format!("{:?}", r.max_residual_rms),
            r.breakdown_fallbacks.to_string(),
            r.clip_events.to_string(),
        ])
        .map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|source| Error::Io { path: path.to_owned(), source })
}

/// Parses a table written by [`emit_csv`].
pub fn read_csv(path: &Path) -> Result<Vec<RawRow>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    let header = reader.headers().map_err(|e| csv_error(path, e))?;
    if header.iter().ne(CSV_HEADER) {
        return Err(Error::Config(format!("{}: unexpected header", path.display())));
    }
    let bad = |field: &str| Error::Config(format!("{}: cannot parse {field:?}", path.display()));
    let mut rows = Vec::new();
    for record in reader.records() {
        let rec = record.map_err(|e| csv_error(path, e))?;
        let int = |i: usize| rec[i].parse::<usize>().map_err(|_| bad(&rec[i]));
        let real = |i: usize| rec[i].parse::<f64>().map_err(|_| bad(&rec[i]));
        rows.push(RawRow {
            step: int(0)?,
            strategy: rec[1].to_string(),
            cells: int(2)?,
            species: int(3)?,
            cells_per_block: real(4)?,
            iterations_effective: int(5)?,
            iterations_sum: int(6)?,
            wall_ns: rec[7].parse().map_err(|_| bad(&rec[7]))?,
            max_residual_rms: real(8)?,
            breakdown_fallbacks: int(9)?,
            clip_events: int(10)?,
        });
    }
    Ok(rows)
}

/// Launch geometry and footprint of one strategy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanSummary {
    pub label: String,
    pub plan: KernelPlan,
    pub occupancy: Occupancy,
    /// With this solver's own work-vector count.
    pub memory_bytes: u64,
    /// With the reference implementation's work-vector count.
    pub memory_bytes_reference: u64,
    pub aux_arrays: usize,
    pub aux_arrays_reference: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub config: ExperimentConfig,
    pub stats: AggregateStats,
    pub plans: Vec<PlanSummary>,
}

pub fn plan_summaries(config: &ExperimentConfig) -> Result<Vec<PlanSummary>> {
    config
        .strategies
        .iter()
        .map(|s| {
            let req = s.block_request();
            let plan = plan_kernel(s.strategy, config.cells, config.species, &config.device, req)?;
            let memory = |aux| memory_estimate(s.strategy, config.cells, config.species, req, aux, &config.device);
            Ok(PlanSummary {
                label: s.to_string(),
                plan,
                occupancy: occupancy_estimate(&plan, &config.device),
                memory_bytes: memory(BicgWorkspace::AUX_ARRAY_COUNT)?,
                memory_bytes_reference: memory(REFERENCE_AUX_ARRAYS)?,
                aux_arrays: BicgWorkspace::AUX_ARRAY_COUNT,
                aux_arrays_reference: REFERENCE_AUX_ARRAYS,
            })
        })
        .collect()
}

impl Summary {
    pub fn new(config: &ExperimentConfig, stats: AggregateStats) -> Result<Self> {
        if config.strategies.is_empty() || stats.strategies.is_empty() {
            return Err(Error::Contract("summary needs at least one strategy".into()));
        }
        Ok(Self { config: config.clone(), stats, plans: plan_summaries(config)? })
    }
}

pub fn emit_summary_json(summary: &Summary, path: &Path) -> Result<()> {
    if summary.stats.strategies.is_empty() || summary.plans.is_empty() {
        return Err(Error::Contract("summary needs at least one strategy".into()));
    }
    let mut text = serde_json::to_string_pretty(summary)?;
    text.push('\n');
    std::fs::write(path, text).map_err(|source| Error::Io { path: path.to_owned(), source })
}

pub fn read_summary_json(path: &Path) -> Result<Summary> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io { path: path.to_owned(), source })?;
    Ok(serde_json::from_str(&text)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(strategies: Vec<StrategySpec>, steps: usize) -> ExperimentConfig {
        ExperimentConfig {
            cells: 6,
            species: 8,
            reactions: 24,
            steps,
            strategies,
            tol: 1e-10,
            workers: 2,
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn spec_labels_round_trip() {
        for s in StrategySpec::all() {
            assert_eq!(s.to_string().parse::<StrategySpec>().unwrap(), s);
        }
        assert_eq!(
            "block-cells(4)".parse::<StrategySpec>().unwrap(),
            StrategySpec::block_cells(CellsPerBlock::Fixed(4))
        );
        assert!("block-cells(0)".parse::<StrategySpec>().is_err());
        assert!("two-cells".parse::<StrategySpec>().is_err());
    }

    #[test]
    fn series_statistics() {
        let c = series_stats(&[0.1; 7]).unwrap();
        assert_eq!((c.mean, c.std), (0.1, 0.0));
        let s = series_stats(&[1.0, 3.0]).unwrap();
        assert_eq!((s.mean, s.std), (2.0, 1.0));
        assert!(series_stats(&[]).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(small(StrategySpec::all(), 1).validate().is_ok());
        let mut c = small(StrategySpec::all(), 1);
        c.cells = 0;
        assert!(c.validate().is_err());
        let mut c = small(StrategySpec::all(), 1);
        c.dt = 0.0;
        assert!(c.validate().is_err());
        assert!(small(vec![], 1).validate().is_err());
        let mut c = small(vec![StrategySpec::block_cells(CellsPerBlock::Fixed(200))], 1);
        assert!(c.validate().is_err());
        c.strategies = vec![StrategySpec::ONE_CELL];
        c.tol = -1.0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn single_step_stats_equal_the_step() {
        let res = run_experiment(&small(vec![StrategySpec::ONE_CELL], 1)).unwrap();
        let st = &res.stats.strategies[0];
        let rec = &res.runs[0].steps[0];
        assert_eq!(st.iterations_effective.mean, rec.iterations_effective as f64);
        assert_eq!(st.iterations_effective.std, 0.0);
        assert_eq!(st.wall_ns.mean, rec.wall_ns as f64);
        assert_eq!(st.speedup, Some(1.0));
        assert_eq!(res.table.len(), 1);
    }

    #[test]
    fn csv_round_trip() {
        let res = run_experiment(&small(
            vec![StrategySpec::ONE_CELL, StrategySpec::block_cells(CellsPerBlock::Fixed(1))],
            2,
        ))
        .unwrap();
        assert_eq!(res.table.len(), 4);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("raw.csv");
        emit_csv(&res.table, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(!text.contains('\r'));
        assert_eq!(text.lines().next().unwrap(), CSV_HEADER.join(","));
        assert_eq!(text.lines().count(), 5);
        let back = read_csv(&path).unwrap();
        assert_eq!(back.len(), res.table.len());
        for (a, b) in back.iter().zip(&res.table) {
            assert_eq!(a, b);
            assert_eq!(a.max_residual_rms.to_bits(), b.max_residual_rms.to_bits());
        }
        assert!(emit_csv(&[], &dir.path().join("empty.csv")).is_err());
        assert!(emit_csv(&res.table, &dir.path().join("missing/raw.csv")).is_err());
    }

    #[test]
    fn summary_round_trip() {
        let config = small(StrategySpec::all(), 2);
        let res = run_experiment(&config).unwrap();
        assert_eq!(res.stats.baseline.as_deref(), Some(BASELINE_LABEL));
        assert_eq!(res.stats.comparator.as_deref(), Some(COMPARATOR_LABEL));
        let cmp = res.stats.get(COMPARATOR_LABEL).unwrap().iteration_ratio.unwrap();
        assert_eq!(cmp.mean, 1.0);
        assert_eq!(cmp.std, 0.0);
        let summary = Summary::new(&config, res.stats.clone()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("summary.json");
        emit_summary_json(&summary, &path).unwrap();
        assert_eq!(read_summary_json(&path).unwrap(), summary);

        let mut empty = summary.clone();
        empty.stats.strategies.clear();
        assert!(emit_summary_json(&empty, &path).is_err());
        assert!(Summary::new(&small(vec![], 1), res.stats).is_err());
    }

    #[test]
    fn summary_plans_for_reference_geometry() {
        let config = ExperimentConfig {
            cells: 1000,
            strategies: StrategySpec::all(),
            ..ExperimentConfig::default()
        };
        let plans = plan_summaries(&config).unwrap();
        let by = |l: &str| plans.iter().find(|p| p.label == l).unwrap();
        assert_eq!(by("block-cells(1)").plan.threads_per_block, 156);
        assert_eq!(by("block-cells(1)").plan.shared_slots, 256);
        assert_eq!(by("block-cells(N)").plan.cells_per_block, 6.0);
        assert_eq!(by("block-cells(N)").plan.shared_slots, 1024);
        assert_eq!(by("multi-cells").plan.threads_per_block, 1024);
        assert_eq!(by("multi-cells").plan.cells_per_block, 1024.0 / 156.0);
        assert!(by("multi-cells").memory_bytes_reference > by("multi-cells").memory_bytes);
    }
}
