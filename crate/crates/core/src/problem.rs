//! Synthetic stiff chemistry: mass-action mechanisms, per-cell atmospheric
//! conditions, the analytic Jacobian, and a backward-Euler Newton driver that
//! feeds batched linear systems to a [`BatchSolver`].

use std::collections::BTreeSet;
use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::direct::{densify, DenseMatrix};
use crate::error::{check_len, Error, Result};
use crate::sparse::CsrMatrix;
use crate::strategies::{BatchSolver, BatchedSystem};

/// Reference temperature of the rate laws, K.
pub const REFERENCE_TEMPERATURE: f64 = 300.0;
/// Surface pressure, hPa.
pub const SURFACE_PRESSURE: f64 = 1000.0;
/// Top-of-column pressure in realistic mode, hPa.
pub const TOP_PRESSURE: f64 = 100.0;
/// Poisson exponent R/cp for dry air.
pub const POISSON_EXPONENT: f64 = 0.2854;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ReactionKind {
    Emission,
    Unimolecular,
    Bimolecular,
}

impl ReactionKind {
    pub fn reactant_count(self) -> usize {
        match self {
            ReactionKind::Emission => 0,
            ReactionKind::Unimolecular => 1,
            ReactionKind::Bimolecular => 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reaction {
    pub kind: ReactionKind,
    pub reactants: Vec<usize>,
    pub products: Vec<usize>,
    /// Rate coefficient at the reference temperature.
    pub rate_coeff: f64,
    pub temp_exponent: f64,
}

impl Reaction {
    /// `rate_coeff · (T / 300)^temp_exponent`.
    pub fn rate_constant(&self, temperature: f64) -> f64 {
        self.rate_coeff * (temperature / REFERENCE_TEMPERATURE).powf(self.temp_exponent)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MechanismSpec {
    pub n_species: usize,
    pub reactions: Vec<Reaction>,
}

impl MechanismSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_species == 0 {
            return Err(Error::InvalidMechanism("no species".into()));
        }
        for (idx, r) in self.reactions.iter().enumerate() {
            let bad = |msg: String| Err(Error::InvalidMechanism(format!("reaction {idx}: {msg}")));
            if r.reactants.len() != r.kind.reactant_count() {
                return bad(format!(
                    "{:?} needs {} reactants, has {}",
                    r.kind,
                    r.kind.reactant_count(),
                    r.reactants.len()
                ));
            }
            if r.products.is_empty() || r.products.len() > 2 {
                return bad(format!("{} products, expected 1 or 2", r.products.len()));
            }
            if let Some(&s) = r.reactants.iter().chain(&r.products).find(|&&s| s >= self.n_species) {
                return bad(format!("species index {s} out of range (n_species = {})", self.n_species));
            }
            if !(r.rate_coeff > 0.0 && r.rate_coeff.is_finite()) {
                return bad(format!("rate coefficient {} is not positive", r.rate_coeff));
            }
            if !r.temp_exponent.is_finite() {
                return bad("temperature exponent is not finite".into());
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let mech: Self = serde_json::from_str(text)?;
        mech.validate()?;
        Ok(mech)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| Error::Io { path: path.to_owned(), source })?;
        Self::from_json(&text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = self.to_json()?;
        text.push('\n');
        std::fs::write(path, text).map_err(|source| Error::Io { path: path.to_owned(), source })
    }
}

/// Random mass-action mechanism, deterministic in `seed`.
///
/// About 10% of reactions are emissions. Rate coefficients are log-uniform on
/// `[1e-6, 1e2]`. Non-emission reactions take species `0, 1, 2, …` in turn as
/// their first reactant until every species has a loss path, and never have
/// more products than reactants, so no reaction cycle can amplify itself.
/// All other reactant and product choices are uniform, with no species
/// appearing twice in one reaction.
pub fn generate_mechanism(n_species: usize, n_reactions: usize, seed: u64) -> Result<MechanismSpec> {
    if n_species < 2 || n_reactions == 0 {
        return Err(Error::Contract(format!(
            "need at least 2 species and 1 reaction, got {n_species} and {n_reactions}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut next_loss = 0;
    let mut reactions = Vec::with_capacity(n_reactions);

    for _ in 0..n_reactions {
        let mut kind = if rng.gen_bool(0.1) {
            ReactionKind::Emission
        } else if rng.gen_bool(0.5) {
            ReactionKind::Unimolecular
        } else {
            ReactionKind::Bimolecular
        };
        if kind == ReactionKind::Bimolecular && n_species < 3 {
            kind = ReactionKind::Unimolecular;
        }

        let mut used = Vec::with_capacity(4);
        let mut reactants = Vec::with_capacity(2);
        for slot in 0..kind.reactant_count() {
            let s = if slot == 0 && next_loss < n_species {
                next_loss += 1;
                next_loss - 1
            } else {
                pick_unused(&mut rng, n_species, &used)
            };
            used.push(s);
            reactants.push(s);
        }

        let wanted = match kind {
            ReactionKind::Unimolecular => 1,
            _ => rng.gen_range(1..=2),
        };
        let n_products = wanted.min(n_species - used.len());
        let mut products = Vec::with_capacity(n_products);
        for _ in 0..n_products {
            let s = pick_unused(&mut rng, n_species, &used);
            used.push(s);
            products.push(s);
        }

        let rate_coeff = 10f64.powf(rng.gen_range(-6.0..=2.0));
        let temp_exponent = match kind {
            ReactionKind::Emission => 0.0,
            _ => rng.gen_range(-2.0..=2.0),
        };
        reactions.push(Reaction { kind, reactants, products, rate_coeff, temp_exponent });
    }

    Ok(MechanismSpec { n_species, reactions })
}

fn pick_unused(rng: &mut ChaCha8Rng, n: usize, used: &[usize]) -> usize {
    loop {
        let s = rng.gen_range(0..n);
        if !used.contains(&s) {
            return s;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ConditionMode {
    Ideal,
    Realistic,
}

impl std::fmt::Display for ConditionMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ConditionMode::Ideal => "ideal",
            ConditionMode::Realistic => "realistic",
        })
    }
}

impl std::str::FromStr for ConditionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ideal" => Ok(ConditionMode::Ideal),
            "realistic" => Ok(ConditionMode::Realistic),
            other => Err(Error::Config(format!("unknown mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellConditions {
    /// hPa
    pub pressure: f64,
    /// K
    pub temperature: f64,
    pub emission_scale: f64,
}

/// Conditions of cell `i` out of `total`.
///
/// Realistic cells stack up a column: pressure falls linearly from 1000 to
/// 100 hPa, emissions from full to none, and temperature follows the dry
/// adiabat `T = 300 · (p / 1000)^0.2854`.
pub fn cell_conditions(i: usize, total: usize, mode: ConditionMode) -> Result<CellConditions> {
    if i >= total {
        return Err(Error::Contract(format!("cell {i} out of range for {total} cells")));
    }
    match mode {
        ConditionMode::Ideal => Ok(CellConditions {
            pressure: SURFACE_PRESSURE,
            temperature: REFERENCE_TEMPERATURE,
            emission_scale: 1.0,
        }),
        ConditionMode::Realistic => {
            let frac = if total == 1 { 0.0 } else { i as f64 / (total - 1) as f64 };
            let pressure = SURFACE_PRESSURE - (SURFACE_PRESSURE - TOP_PRESSURE) * frac;
            Ok(CellConditions {
                pressure,
                temperature: REFERENCE_TEMPERATURE * (pressure / SURFACE_PRESSURE).powf(POISSON_EXPONENT),
                emission_scale: 1.0 - frac,
            })
        }
    }
}

pub fn batch_conditions(total: usize, mode: ConditionMode) -> Result<Vec<CellConditions>> {
    (0..total).map(|i| cell_conditions(i, total, mode)).collect()
}

/// Species concentrations of one cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellState {
    pub concentrations: Vec<f64>,
}

impl CellState {
    pub fn new(concentrations: Vec<f64>) -> Self {
        Self { concentrations }
    }
}

/// Concentrations drawn uniformly from `[0.1, 1]`, deterministic in `seed`.
pub fn initial_state(n_species: usize, seed: u64) -> CellState {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5e_ed0f_ce11);
    CellState::new((0..n_species).map(|_| rng.gen_range(0.1..=1.0)).collect())
}

/// Reads one cell per line, one column per species, no header.
pub fn load_initial_states(path: &Path, n_species: usize) -> Result<Vec<CellState>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)?;
    let mut states = Vec::new();
    for record in reader.records() {
        let record = record?;
        let values = record
            .iter()
            .map(|f| {
                f.parse::<f64>()
                    .map_err(|_| Error::Config(format!("{}: {f:?} is not a number", path.display())))
            })
            .collect::<Result<Vec<_>>>()?;
        check_len(n_species, values.len())?;
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Config(format!(
                "{}: row {} has a negative or non-finite concentration",
                path.display(),
                states.len() + 1
            )));
        }
        states.push(CellState::new(values));
    }
    Ok(states)
}

#[derive(Debug, Clone)]
struct JacobianStamp {
    reaction: usize,
    slot: usize,
    coeff: f64,
    /// Other reactant of a bimolecular reaction, whose concentration scales the entry.
    partner: Option<usize>,
}

/// A mechanism with its Jacobian sparsity pattern precomputed.
///
/// The pattern holds the full diagonal plus, for every reactant `j` of every
/// non-emission reaction, the entries `(s, j)` for each species `s` the
/// reaction touches. It does not depend on the concentrations.
#[derive(Debug, Clone)]
pub struct KineticsModel {
    mech: MechanismSpec,
    pattern: CsrMatrix,
    stamps: Vec<JacobianStamp>,
    diag_slots: Vec<usize>,
}

impl KineticsModel {
    pub fn new(mech: MechanismSpec) -> Result<Self> {
        mech.validate()?;
        let n = mech.n_species;
        let mut entries: BTreeSet<(usize, usize)> = (0..n).map(|i| (i, i)).collect();
        for r in &mech.reactions {
            for &j in &r.reactants {
                for &s in r.reactants.iter().chain(&r.products) {
                    entries.insert((s, j));
                }
            }
        }
        let mut row_ptr = vec![0; n + 1];
        let mut col_idx = Vec::with_capacity(entries.len());
        for &(i, j) in &entries {
            row_ptr[i + 1] += 1;
            col_idx.push(j);
        }
        for i in 0..n {
            row_ptr[i + 1] += row_ptr[i];
        }
        let values = vec![0.0; col_idx.len()];
        let pattern = CsrMatrix::new(n, n, row_ptr, col_idx, values)?;
        let slot = |i: usize, j: usize| {
            let (cols, _) = pattern.row(i);
            pattern.row_ptr()[i] + cols.binary_search(&j).expect("entry is in the pattern")
        };

        let mut stamps = Vec::new();
        for (ri, r) in mech.reactions.iter().enumerate() {
            for (k, &j) in r.reactants.iter().enumerate() {
                let partner = (r.reactants.len() == 2).then(|| r.reactants[1 - k]);
                for &s in &r.reactants {
                    stamps.push(JacobianStamp { reaction: ri, slot: slot(s, j), coeff: -1.0, partner });
                }
                for &s in &r.products {
                    stamps.push(JacobianStamp { reaction: ri, slot: slot(s, j), coeff: 1.0, partner });
                }
            }
        }
        let diag_slots = (0..n).map(|i| slot(i, i)).collect();
        Ok(Self { mech, pattern, stamps, diag_slots })
    }

    pub fn mechanism(&self) -> &MechanismSpec {
        &self.mech
    }

    pub fn n_species(&self) -> usize {
        self.mech.n_species
    }

    /// Jacobian sparsity pattern (values are zero).
    pub fn pattern(&self) -> &CsrMatrix {
        &self.pattern
    }

    pub fn rate_constants(&self, cond: &CellConditions) -> Vec<f64> {
        self.mech
            .reactions
            .iter()
            .map(|r| r.rate_constant(cond.temperature))
            .collect()
    }

    pub fn rhs(&self, cond: &CellConditions, y: &[f64]) -> Result<Vec<f64>> {
        check_len(self.n_species(), y.len())?;
        let k = self.rate_constants(cond);
        let mut f = vec![0.0; self.n_species()];
        for (r, &kr) in self.mech.reactions.iter().zip(&k) {
            let rate = match r.kind {
                ReactionKind::Emission => kr * cond.emission_scale,
                ReactionKind::Unimolecular => kr * y[r.reactants[0]],
                ReactionKind::Bimolecular => kr * y[r.reactants[0]] * y[r.reactants[1]],
            };
            for &s in &r.reactants {
                f[s] -= rate;
            }
            for &s in &r.products {
                f[s] += rate;
            }
        }
        Ok(f)
    }

    pub fn jacobian(&self, cond: &CellConditions, y: &[f64]) -> Result<CsrMatrix> {
        check_len(self.n_species(), y.len())?;
        let k = self.rate_constants(cond);
        let mut jac = self.pattern.clone();
        let values = jac.values_mut();
        for st in &self.stamps {
            let scale = st.partner.map_or(1.0, |p| y[p]);
            values[st.slot] += st.coeff * k[st.reaction] * scale;
        }
        Ok(jac)
    }

    /// One backward-Euler Newton linearization at `y`:
    /// `A = I - h J(y)`, `b = -(y - y_prev - h f(y))`.
    pub fn newton_system(&self, cond: &CellConditions, y: &[f64], y_prev: &[f64], h: f64) -> Result<NewtonSystem> {
        if !(h > 0.0) {
            return Err(Error::Contract(format!("time step must be positive, got {h}")));
        }
        check_len(y.len(), y_prev.len())?;
        let f = self.rhs(cond, y)?;
        let mut a = self.jacobian(cond, y)?;
        let values = a.values_mut();
        for v in values.iter_mut() {
            *v *= -h;
        }
        for &d in &self.diag_slots {
            values[d] += 1.0;
        }
        let b = y
            .iter()
            .zip(y_prev)
            .zip(&f)
            .map(|((yi, pi), fi)| -((yi - pi) - h * fi))
            .collect();
        Ok(NewtonSystem { gamma: h, a, b })
    }
}

/// Jacobian of the rate equations by central differences, column by column,
/// with steps of `rel_step · max(|y_j|, 1)`.
pub fn finite_difference_jacobian(
    model: &KineticsModel,
    cond: &CellConditions,
    y: &[f64],
    rel_step: f64,
) -> Result<DenseMatrix> {
    let n = model.n_species();
    check_len(n, y.len())?;
    let mut jac = DenseMatrix::zeros(n);
    let mut probe = y.to_vec();
    for j in 0..n {
        let step = rel_step * y[j].abs().max(1.0);
        probe[j] = y[j] + step;
        let up = model.rhs(cond, &probe)?;
        probe[j] = y[j] - step;
        let down = model.rhs(cond, &probe)?;
        probe[j] = y[j];
        for i in 0..n {
            jac.set(i, j, (up[i] - down[i]) / (2.0 * step));
        }
    }
    Ok(jac)
}

/// Largest discrepancy between the analytic and finite-difference Jacobians,
/// each column scaled by its largest analytic entry.
pub fn jacobian_fd_discrepancy(model: &KineticsModel, cond: &CellConditions, y: &[f64]) -> Result<f64> {
    let analytic = densify(&model.jacobian(cond, y)?)?;
    let fd = finite_difference_jacobian(model, cond, y, 1e-3)?;
    let n = model.n_species();
    let mut worst = 0.0f64;
    for j in 0..n {
        let scale = (0..n).map(|i| analytic.get(i, j).abs()).fold(0.0, f64::max);
        for i in 0..n {
            let diff = (fd.get(i, j) - analytic.get(i, j)).abs();
            let rel = if scale > 0.0 { diff / scale } else { diff };
            worst = worst.max(rel);
        }
    }
    Ok(worst)
}

/// Right-hand side of the rate equations for one cell.
pub fn rhs(mech: &MechanismSpec, cond: &CellConditions, y: &CellState) -> Result<Vec<f64>> {
    KineticsModel::new(mech.clone())?.rhs(cond, &y.concentrations)
}

/// Analytic Jacobian of [`rhs`] on the mechanism's fixed sparsity pattern.
pub fn jacobian(mech: &MechanismSpec, cond: &CellConditions, y: &CellState) -> Result<CsrMatrix> {
    KineticsModel::new(mech.clone())?.jacobian(cond, &y.concentrations)
}

/// Linear system of one Newton iteration of a backward-Euler step.
#[derive(Debug, Clone, PartialEq)]
pub struct NewtonSystem {
    /// Time-step multiplier of the Jacobian, seconds.
    pub gamma: f64,
    pub a: CsrMatrix,
    pub b: Vec<f64>,
}

pub fn newton_system(
    mech: &MechanismSpec,
    cond: &CellConditions,
    y: &CellState,
    y_prev: &CellState,
    h: f64,
) -> Result<NewtonSystem> {
    KineticsModel::new(mech.clone())?.newton_system(cond, &y.concentrations, &y_prev.concentrations, h)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimulationConfig {
    pub steps: usize,
    /// Seconds.
    pub dt: f64,
    pub newton_max_iter: usize,
    /// Newton stops once `‖Δ‖∞ ≤ newton_rel_tol · ‖y‖∞` over the whole batch.
    pub newton_rel_tol: f64,
    /// Keep every cell's state after every step.
    pub record_trajectory: bool,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self { steps: 720, dt: 120.0, newton_max_iter: 10, newton_rel_tol: 1e-10, record_trajectory: false }
    }
}

/// Linear-solver statistics of one time step, summed over its Newton iterations.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub newton_iterations: usize,
    pub iterations_effective: usize,
    pub iterations_sum: usize,
    pub wall_ns: u64,
    pub max_residual_rms: f64,
    pub breakdown_fallbacks: usize,
    pub clip_events: usize,
    /// `iterations_effective` of each Newton solve.
    pub newton_solve_iterations: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationResult {
    pub steps: Vec<StepRecord>,
    pub final_states: Vec<CellState>,
    /// States after each step when requested.
    pub trajectory: Vec<Vec<CellState>>,
    pub clip_events: usize,
}

/// Advances every cell by `config.steps` backward-Euler steps, handing each
/// Newton iteration's batch of linear systems to `solver`.
pub fn run_simulation(
    model: &KineticsModel,
    conditions: &[CellConditions],
    initial: &[CellState],
    config: &SimulationConfig,
    solver: &dyn BatchSolver,
) -> Result<SimulationResult> {
    let n = model.n_species();
    check_len(conditions.len(), initial.len())?;
    if initial.is_empty() {
        return Err(Error::Contract("simulation needs at least one cell".into()));
    }
    if !(config.dt > 0.0) {
        return Err(Error::Contract(format!("time step must be positive, got {}", config.dt)));
    }
    for s in initial {
        check_len(n, s.concentrations.len())?;
    }

    let mut states: Vec<Vec<f64>> = initial.iter().map(|s| s.concentrations.clone()).collect();
    let mut steps = Vec::with_capacity(config.steps);
    let mut trajectory = Vec::new();
    let mut total_clips = 0;

    for step in 0..config.steps {
        let prev = states.clone();
        let mut record = StepRecord {
            step,
            newton_iterations: 0,
            iterations_effective: 0,
            iterations_sum: 0,
            wall_ns: 0,
            max_residual_rms: 0.0,
            breakdown_fallbacks: 0,
            clip_events: 0,
            newton_solve_iterations: Vec::new(),
        };

        for _ in 0..config.newton_max_iter {
            let mut matrices = Vec::with_capacity(states.len());
            let mut rhs = Vec::with_capacity(states.len());
            for ((y, y_prev), cond) in states.iter().zip(&prev).zip(conditions) {
                let sys = model.newton_system(cond, y, y_prev, config.dt)?;
                matrices.push(sys.a);
                rhs.push(sys.b);
            }
            let batch = BatchedSystem::new(n, matrices, rhs)?;

            let started = Instant::now();
            let report = solver
                .solve_batch(&batch)
                .map_err(|e| Error::SolverAbort { step, source: Box::new(e) })?;
            let elapsed = started.elapsed().as_nanos() as u64;

            record.newton_iterations += 1;
            record.iterations_effective += report.iterations_effective;
            record.iterations_sum += report.iterations_sum;
            record.wall_ns += elapsed;
            record.max_residual_rms = record.max_residual_rms.max(report.max_residual_rms);
            record.breakdown_fallbacks += report.breakdown_fallbacks;
            record.newton_solve_iterations.push(report.iterations_effective);

            let mut delta_norm = 0.0f64;
            let mut y_norm = 0.0f64;
            for (y, delta) in states.iter_mut().zip(&report.solutions) {
                for (yi, di) in y.iter_mut().zip(delta) {
                    *yi += di;
                    delta_norm = delta_norm.max(di.abs());
                    y_norm = y_norm.max(yi.abs());
                }
            }
            if states.iter().flatten().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite { step });
            }
            if delta_norm <= config.newton_rel_tol * y_norm {
                break;
            }
        }

        for v in states.iter_mut().flatten() {
            if *v < 0.0 {
                *v = 0.0;
                record.clip_events += 1;
            }
        }
        total_clips += record.clip_events;
        if config.record_trajectory {
            trajectory.push(states.iter().cloned().map(CellState::new).collect());
        }
        steps.push(record);
    }

    Ok(SimulationResult {
        steps,
        final_states: states.into_iter().map(CellState::new).collect(),
        trajectory,
        clip_events: total_clips,
    })
}
