use std::path::{Path, PathBuf};
use std::process::ExitCode;

use blockcells::bench::{emit_csv, emit_summary_json, run_experiment, ExperimentConfig, StrategySpec, Summary};
use blockcells::exec_model::{plan_kernel, CellsPerBlock, DeviceSpec, KernelPlan, Strategy};
use blockcells::problem::{
    batch_conditions, generate_mechanism, jacobian_fd_discrepancy, ConditionMode, KineticsModel, MechanismSpec,
};
use blockcells::Error;
use clap::{Args, Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const EXIT_CONFIG: u8 = 2;
const EXIT_SOLVER: u8 = 3;
const FD_LIMIT: f64 = 1e-6;

#[derive(Parser)]
#[command(name = "blockcells", version, about = "Batched BiCG strategies for many small chemistry systems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a strategy comparison and write raw.csv and summary.json.
    Run(RunArgs),
    /// Print the launch geometry of each block size.
    Plan(PlanArgs),
    /// Generate a random mechanism.
    GenMech(GenMechArgs),
    /// Check a mechanism file and its Jacobian.
    Validate(ValidateArgs),
}

#[derive(Args)]
struct RunArgs {
    #[arg(long, default_value_t = 1000)]
    cells: usize,
    #[arg(long, default_value_t = 156)]
    species: usize,
    /// Reactions in the generated mechanism [default: 3 × species]
    #[arg(long)]
    reactions: Option<usize>,
    #[arg(long, default_value_t = 720)]
    steps: usize,
    #[arg(long, default_value_t = 120.0)]
    dt_seconds: f64,
    #[arg(long, default_value = "realistic", value_parser = ["ideal", "realistic"])]
    mode: String,
    /// Strategy to run; repeat or comma-separate for several
    #[arg(
        long,
        value_delimiter = ',',
        default_value = "one-cell,multi-cells,block-cells",
        value_parser = ["one-cell", "multi-cells", "block-cells"]
    )]
    strategy: Vec<String>,
    /// Block sizes for block-cells, each a count or N
    #[arg(long, value_delimiter = ',', default_value = "1,N")]
    cells_per_block: Vec<String>,
    #[arg(long, default_value = "1e-30")]
    tol: f64,
    #[arg(long, default_value_t = 1000)]
    max_iter: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Worker threads for block-cells, or max
    #[arg(long, default_value = "max")]
    workers: String,
    /// Device description (key = value lines) [default: V100]
    #[arg(long)]
    device: Option<PathBuf>,
    #[arg(long, default_value = "results")]
    out: PathBuf,
}

#[derive(Args)]
struct PlanArgs {
    #[arg(long, default_value_t = 156)]
    species: usize,
    #[arg(long, default_value_t = 1000)]
    cells: usize,
    /// Block sizes, each a count or N
    #[arg(long, value_delimiter = ',', default_value = "1,2,3,N")]
    cells_per_block: Vec<String>,
    /// Device description (key = value lines) [default: V100]
    #[arg(long)]
    device: Option<PathBuf>,
}

#[derive(Args)]
struct GenMechArgs {
    #[arg(long, default_value_t = 156)]
    species: usize,
    /// [default: 3 × species]
    #[arg(long)]
    reactions: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ValidateArgs {
    #[arg(long)]
    mech: PathBuf,
}

enum Failure {
    Config(String),
    Solver(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::SolverAbort { .. } | Error::NonFinite { .. } => Failure::Solver(e.to_string()),
            other => Failure::Config(other.to_string()),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Run(a) => run(a),
        Command::Plan(a) => plan(a),
        Command::GenMech(a) => gen_mech(a),
        Command::Validate(a) => validate(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_CONFIG)
        }
        Err(Failure::Solver(msg)) => {
            eprintln!("solver aborted: {msg}");
            ExitCode::from(EXIT_SOLVER)
        }
    }
}

fn load_device(path: Option<&Path>) -> Result<DeviceSpec, Failure> {
    Ok(match path {
        Some(p) => DeviceSpec::load(p)?,
        None => DeviceSpec::default(),
    })
}

fn parse_block_sizes(values: &[String]) -> Result<Vec<CellsPerBlock>, Failure> {
    values
        .iter()
        .map(|v| v.trim().parse::<CellsPerBlock>().map_err(Failure::from))
        .collect()
}

fn run(a: RunArgs) -> Result<(), Failure> {
    let block_sizes = parse_block_sizes(&a.cells_per_block)?;
    let mut strategies = Vec::new();
    for name in &a.strategy {
        match name.parse::<Strategy>()? {
            Strategy::OneCell => strategies.push(StrategySpec::ONE_CELL),
            Strategy::MultiCells => strategies.push(StrategySpec::MULTI_CELLS),
            Strategy::BlockCells => strategies.extend(block_sizes.iter().map(|&k| StrategySpec::block_cells(k))),
        }
    }
    strategies.dedup();
    let workers = match a.workers.as_str() {
        "max" => 0,
        n => match n.parse::<usize>() {
            Ok(w) if w >= 1 => w,
            _ => return Err(Failure::Config(format!("--workers must be a positive count or max, got {n:?}"))),
        },
    };
    let config = ExperimentConfig {
        cells: a.cells,
        species: a.species,
        reactions: a.reactions.unwrap_or(3 * a.species),
        steps: a.steps,
        dt: a.dt_seconds,
        mode: a.mode.parse::<ConditionMode>()?,
        strategies,
        tol: a.tol,
        max_iter: a.max_iter,
        seed: a.seed,
        workers,
        device: load_device(a.device.as_deref())?,
        output_path: Some(a.out.clone()),
    };
    config.validate()?;

    println!(
        "cells = {}, species = {}, steps = {}, dt = {} s, mode = {}, tol = {:e}, max_iter = {}, seed = {}",
        config.cells, config.species, config.steps, config.dt, config.mode, config.tol, config.max_iter, config.seed
    );
    for s in &config.strategies {
        let p = plan_kernel(s.strategy, config.cells, config.species, &config.device, block_request(s))?;
        match s.strategy {
            Strategy::BlockCells => println!("plan {s}: groups {:?}", p.group_sizes()),
            _ => println!("plan {s}: {} blocks of {} threads", p.total_blocks(), p.threads_per_block),
        }
    }

    let result = run_experiment(&config)?;
    for st in &result.stats.strategies {
        let speedup = st.speedup.map_or("-".to_string(), |v| format!("{v:.3}"));
        let ratio = st
            .iteration_ratio
            .map_or("-".to_string(), |r| format!("{:.3} ± {:.3}", r.mean, r.std));
        println!(
            "{}: iterations {:.1} ± {:.1}, wall {:.3} ms ± {:.3}, speedup {}, iteration ratio {}, fallbacks {}, clips {}",
            st.label,
            st.iterations_effective.mean,
            st.iterations_effective.std,
            st.wall_ns.mean / 1e6,
            st.wall_ns.std / 1e6,
            speedup,
            ratio,
            st.breakdown_fallbacks,
            st.clip_events
        );
    }

    std::fs::create_dir_all(&a.out)
        .map_err(|e| Failure::Config(format!("cannot create {}: {e}", a.out.display())))?;
    emit_csv(&result.table, &a.out.join("raw.csv"))?;
    emit_summary_json(&Summary::new(&config, result.stats)?, &a.out.join("summary.json"))?;
    println!("wrote {} and {}", a.out.join("raw.csv").display(), a.out.join("summary.json").display());
    Ok(())
}

fn block_request(s: &StrategySpec) -> Option<usize> {
    match s.strategy {
        Strategy::BlockCells => s.cells_per_block.request(),
        _ => None,
    }
}

fn plan(a: PlanArgs) -> Result<(), Failure> {
    let device = load_device(a.device.as_deref())?;
    let block_sizes = parse_block_sizes(&a.cells_per_block)?;
    let mut rows: Vec<(String, KernelPlan)> = Vec::new();
    for k in block_sizes {
        let p = match plan_kernel(Strategy::BlockCells, a.cells, a.species, &device, k.request()) {
            Ok(p) => p,
            Err(e @ Error::InvalidGrouping { .. }) => {
                eprintln!("skipping ({k}): {e}");
                continue;
            }
            Err(e) => return Err(e.into()),
        };
        let case = match k {
            CellsPerBlock::Fixed(n) => format!("({n})"),
            CellsPerBlock::Max => format!("(N={})", p.cells_per_block),
        };
        rows.push((case, p));
    }
    rows.push((
        "Multi-cells".into(),
        plan_kernel(Strategy::MultiCells, a.cells, a.species, &device, None)?,
    ));

    println!("{:<12} {:>18} {:>14} {:>14}", "Case", "Cells/block", "Threads/block", "Shared memory");
    for (case, p) in rows {
        println!(
            "{:<12} {:>18} {:>14} {:>14}",
            case, p.cells_per_block, p.threads_per_block, p.shared_slots
        );
    }
    Ok(())
}

fn gen_mech(a: GenMechArgs) -> Result<(), Failure> {
    let mech = generate_mechanism(a.species, a.reactions.unwrap_or(3 * a.species), a.seed)?;
    mech.save(&a.out)?;
    println!(
        "wrote {} ({} species, {} reactions)",
        a.out.display(),
        mech.n_species,
        mech.reactions.len()
    );
    Ok(())
}

fn validate(a: ValidateArgs) -> Result<(), Failure> {
    let mech = MechanismSpec::load(&a.mech)?;
    let n = mech.n_species;
    let reactions = mech.reactions.len();
    let model = KineticsModel::new(mech)?;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut worst = 0.0f64;
    for cond in batch_conditions(2, ConditionMode::Realistic)? {
        let y: Vec<f64> = (0..n).map(|_| rng.gen_range(0.1..=10.0)).collect();
        worst = worst.max(jacobian_fd_discrepancy(&model, &cond, &y)?);
    }
    if worst.is_nan() || worst >= FD_LIMIT {
        return Err(Failure::Config(format!(
            "{}: Jacobian disagrees with finite differences by {worst:e}",
            a.mech.display()
        )));
    }
    println!(
        "{}: {n} species, {reactions} reactions, Jacobian vs finite differences {worst:e}",
        a.mech.display()
    );
    Ok(())
}
