//! `fe2` — command-line pipeline for the two-scale homogenization solver:
//! mesh generation, training-data generation, surrogate training, coupled
//! runs and result comparison.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use fe2_core::driver::{compare_runs, run_fe2, RunConfig, SimulationResult};
use fe2_core::error::Error;
use fe2_core::fe::mesh::Mesh;
use fe2_core::io;
use fe2_core::net::{train_lm, Dataset, MlpNetwork, TrainingConfig};
use fe2_core::pipeline::{generate_dataset, sample_deformation_gradients, SamplingSpec};
use fe2_core::rve::{BcMode, RveProblem};
use fe2_core::tensor::MaterialParams;

#[derive(Parser)]
#[command(
    name = "fe2",
    version,
    about = "Two-scale FE homogenization for 2D neo-Hookean solids with an MLP surrogate"
)]
struct Cli {
    /// Worker threads for cell solves and data generation
    /// (default: available parallelism).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a structured quad mesh on a rectangle.
    GenMesh(GenMeshArgs),
    /// Sample deformation gradients, solve the cell for each, write the
    /// training dataset CSV.
    GenData(GenDataArgs),
    /// Train the surrogate network on a dataset CSV.
    Train(TrainArgs),
    /// Run a two-scale simulation from a configuration file.
    Run(RunArgs),
    /// Compare two result files increment by increment.
    Compare(CompareArgs),
}

#[derive(Args)]
struct GenMeshArgs {
    #[arg(long)]
    nx: usize,
    #[arg(long)]
    ny: usize,
    #[arg(long, default_value_t = 1.0)]
    width: f64,
    #[arg(long, default_value_t = 1.0)]
    height: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct GenDataArgs {
    /// Cell mesh JSON (plain mesh, or with embedded element materials).
    #[arg(long)]
    rve: PathBuf,
    /// Material JSON {"lambda": .., "mu": ..}; required unless the cell
    /// file embeds materials.
    #[arg(long)]
    material: Option<PathBuf>,
    #[arg(long, default_value_t = 500)]
    samples: usize,
    #[arg(long, default_value_t = 0.15)]
    amplitude: f64,
    #[arg(long = "min-det", default_value_t = 0.5)]
    min_det: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long = "bc-mode", value_enum, default_value_t = BcModeArg::Periodic)]
    bc_mode: BcModeArg,
    #[arg(long, default_value_t = 1e-10)]
    tol: f64,
    #[arg(long = "max-iter", default_value_t = 30)]
    max_iter: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
enum BcModeArg {
    Affine,
    Periodic,
}

impl From<BcModeArg> for BcMode {
    fn from(value: BcModeArg) -> Self {
        match value {
            BcModeArg::Affine => BcMode::Affine,
            BcModeArg::Periodic => BcMode::Periodic,
        }
    }
}

#[derive(Args)]
struct TrainArgs {
    /// Dataset CSV from gen-data.
    #[arg(long)]
    data: PathBuf,
    /// Hidden layer sizes, comma separated.
    #[arg(long, default_value = "16,16")]
    hidden: String,
    #[arg(long = "max-iter", default_value_t = 300)]
    max_iter: usize,
    #[arg(long = "target-mse", default_value_t = 1e-6)]
    target_mse: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
}

#[derive(Args)]
struct CompareArgs {
    #[arg(long)]
    a: PathBuf,
    #[arg(long)]
    b: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

/// Exit code taxonomy: 0 success, 1 user/config error, 2 solver or
/// training failure.
fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::NonConvergence { .. }
        | Error::ElementInversion { .. }
        | Error::SingularSystem { .. }
        | Error::TrainingDiverged { .. }
        | Error::DatasetGenerationFailed { .. }
        | Error::SamplingInfeasible { .. } => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            // help/version are successful outputs, anything else a usage error
            let code = match err.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = err.print();
            return ExitCode::from(code);
        }
    };
    if let Some(n) = cli.threads {
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global();
    }
    let outcome = match cli.command {
        Command::GenMesh(args) => gen_mesh(args),
        Command::GenData(args) => gen_data(args),
        Command::Train(args) => train(args),
        Command::Run(args) => run(args),
        Command::Compare(args) => compare(args),
    };
    match outcome {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}

fn gen_mesh(args: GenMeshArgs) -> Result<ExitCode, Error> {
    let mesh = Mesh::structured(args.nx, args.ny, args.width, args.height)?;
    mesh.save_json(&args.out)?;
    println!(
        "wrote {} ({} nodes, {} elements, {} boundary nodes)",
        args.out.display(),
        mesh.n_nodes(),
        mesh.n_elements(),
        mesh.boundary_nodes().len()
    );
    Ok(ExitCode::SUCCESS)
}

fn gen_data(args: GenDataArgs) -> Result<ExitCode, Error> {
    let material = match &args.material {
        Some(path) => Some(io::read_json::<MaterialParams>(path)?),
        None => None,
    };
    let rve = RveProblem::load_json(&args.rve, material, args.bc_mode.into())?;
    let spec = SamplingSpec {
        n_samples: args.samples,
        amplitude: args.amplitude,
        min_det: args.min_det,
        seed: args.seed,
    };
    let samples = sample_deformation_gradients(&spec)?;
    let started = std::time::Instant::now();
    let gen = generate_dataset(&rve, &samples, args.tol, args.max_iter)?;
    gen.dataset.save_csv(&args.out)?;
    println!(
        "wrote {}: {} converged, {} failed of {} samples ({:.2}s)",
        args.out.display(),
        gen.n_converged(),
        gen.failures.len(),
        gen.n_samples,
        started.elapsed().as_secs_f64()
    );
    for (index, msg) in &gen.failures {
        eprintln!("warning: sample {index} skipped: {msg}");
    }
    Ok(ExitCode::SUCCESS)
}

fn parse_hidden(list: &str) -> Result<Vec<usize>, Error> {
    let sizes: Vec<usize> = list
        .split(',')
        .map(|s| {
            s.trim()
                .parse::<usize>()
                .map_err(|_| Error::InvalidInput(format!("bad hidden layer size {s:?}")))
        })
        .collect::<Result<_, _>>()?;
    if sizes.is_empty() || sizes.contains(&0) {
        return Err(Error::InvalidInput(
            "hidden layer list must be nonempty positive sizes".into(),
        ));
    }
    Ok(sizes)
}

fn train(args: TrainArgs) -> Result<ExitCode, Error> {
    let dataset = Dataset::load_csv(&args.data)?;
    dataset.validate()?;
    let mut layer_sizes = vec![4];
    layer_sizes.extend(parse_hidden(&args.hidden)?);
    layer_sizes.push(4);
    let net = MlpNetwork::init_nguyen_widrow(&layer_sizes, args.seed)?;
    let cfg = TrainingConfig {
        max_iterations: args.max_iter,
        target_mse: args.target_mse,
        seed: args.seed,
        ..Default::default()
    };
    let started = std::time::Instant::now();
    let (net, report) = train_lm(net, &dataset, &cfg)?;
    net.save_json(&args.out)?;
    println!(
        "wrote {}: final mse {:.6e} after {} iterations ({:.2}s, {} samples, layers {:?})",
        args.out.display(),
        report.final_mse,
        report.iterations_used,
        started.elapsed().as_secs_f64(),
        dataset.len(),
        layer_sizes
    );
    Ok(ExitCode::SUCCESS)
}

fn run(args: RunArgs) -> Result<ExitCode, Error> {
    let config = RunConfig::load_json(&args.config)?;
    let base_dir = args.config.parent().map(Path::to_path_buf);
    let (problem, provider, settings) = config.build(base_dir.as_deref())?;
    let mut result = run_fe2(&problem, &provider, settings.tol, settings.max_iter)?;

    result.provenance.config_hash = io::fnv1a_hex(io::read_text(&args.config)?.as_bytes());
    let model_source = match config.mode.as_str() {
        "surrogate" => config.model.clone(),
        _ => config.rve_mesh.clone(),
    };
    if let Some(path) = model_source {
        let resolved = match &base_dir {
            Some(base) if path.is_relative() => base.join(&path),
            _ => path,
        };
        result.provenance.model_hash = io::fnv1a_hex(io::read_text(&resolved)?.as_bytes());
    }

    let out = match &base_dir {
        Some(base) if config.out.is_relative() => base.join(&config.out),
        _ => config.out.clone(),
    };
    result.save_json(&out)?;
    io::write_text(&out.with_extension("csv"), &result.displacements_csv())?;

    for (k, inc) in result.increments.iter().enumerate() {
        match &inc.failure {
            None => println!(
                "increment {}/{}: converged in {} iterations (residual {:.3e})",
                k + 1,
                problem.load.n_increments,
                inc.newton.iterations,
                inc.newton
                    .residual_history
                    .last()
                    .copied()
                    .unwrap_or(f64::NAN)
            ),
            Some(msg) => println!(
                "increment {}/{}: FAILED: {msg}",
                k + 1,
                problem.load.n_increments
            ),
        }
    }
    if result.extrapolation_warnings > 0 {
        eprintln!(
            "warning: {} gauss-point evaluations left the training box",
            result.extrapolation_warnings
        );
    }
    println!(
        "wrote {} and {} ({} mode, online {:.3}s)",
        out.display(),
        out.with_extension("csv").display(),
        result.mode,
        result.timing.online_seconds
    );
    if result.completed {
        Ok(ExitCode::SUCCESS)
    } else {
        eprintln!("error: run did not complete; partial results written");
        Ok(ExitCode::from(2))
    }
}

fn compare(args: CompareArgs) -> Result<ExitCode, Error> {
    let a = SimulationResult::load_json(&args.a)?;
    let b = SimulationResult::load_json(&args.b)?;
    let report = compare_runs(&a, &b)?;
    report.save_json(&args.out)?;
    println!("increment      max |du|      RMS |du|      max |dP|");
    for inc in &report.increments {
        println!(
            "{:>9}  {:>12.5e}  {:>12.5e}  {:>12.5e}",
            inc.increment, inc.max_du, inc.rms_du, inc.max_dp
        );
    }
    println!(
        "online time ratio (a/b): {:.2} ({:.4}s vs {:.4}s)",
        report.online_time_ratio, a.timing.online_seconds, b.timing.online_seconds
    );
    println!("wrote {}", args.out.display());
    Ok(ExitCode::SUCCESS)
}
