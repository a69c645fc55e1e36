//! Command-line surface for the curvlab library: curvature-matrix dumps,
//! single optimization runs, hyperparameter grid search, the three
//! experiment pipelines, and the split-validity check.
//!
//! Exit codes: 0 on success, 1 on usage errors (flags, config schema,
//! malformed data files), 2 on numerical failures.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::DVector;

use curvlab::curvature::{self, GgnSplit};
use curvlab::data::{DatasetConfig, ModelConfig};
use curvlab::error::Error;
use curvlab::experiment::{
    self, config_hash, ExperimentConfig, OutputConfig, OutputFormat, OutputSink, Table,
};
use curvlab::model::ModelKind;
use curvlab::optim;

#[derive(Parser)]
#[command(
    name = "curvlab",
    version,
    about = "Curvature-matrix laboratory for exponential-family GLMs"
)]
struct Cli {
    /// Path to a JSON experiment config (see the README for the schema).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Overrides the seed from the config.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Overrides the output directory from the config.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,

    /// Overrides the output format from the config.
    #[arg(long, global = true, value_enum)]
    format: Option<FormatArg>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Csv,
    Json,
}

impl From<FormatArg> for OutputFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Csv => OutputFormat::Csv,
            FormatArg::Json => OutputFormat::Json,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum MatrixArg {
    Fisher,
    Ef,
    GgnCanonical,
    GgnEf,
    GgnTrivial,
    Hessian,
    McFisher,
    McFisherArgmax,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Canonical,
    Ef,
    Trivial,
}

impl From<SplitArg> for GgnSplit {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Canonical => GgnSplit::Canonical,
            SplitArg::Ef => GgnSplit::EfSplit,
            SplitArg::Trivial => GgnSplit::Trivial,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ModelArg {
    LinearGaussian,
    LinearLogistic,
    LinearSoftmax,
    ScalarSine,
}

impl From<ModelArg> for ModelKind {
    fn from(m: ModelArg) -> Self {
        match m {
            ModelArg::LinearGaussian => ModelKind::LinearGaussian,
            ModelArg::LinearLogistic => ModelKind::LinearLogistic,
            ModelArg::LinearSoftmax => ModelKind::LinearSoftmax { classes: 3 },
            ModelArg::ScalarSine => ModelKind::ScalarSine,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Compute one curvature matrix for the configured dataset and model.
    Curvature(CurvatureArgs),
    /// Run one optimizer configuration and record the trajectory.
    Optimize,
    /// Sweep step sizes and dampings, reporting the best cell per method.
    Gridsearch {
        /// Use the full 241 x 41 grid instead of the reduced one.
        #[arg(long)]
        full_grid: bool,
    },
    /// Emit preconditioned vector fields and trajectories on the synthetic
    /// regression problem.
    Fig1,
    /// Emit quadratic-fit reports and misspecification gaps at the minimizer.
    Fig2,
    /// Run the tuned GD/NGD/EFGD comparison with the cosine diagnostic.
    Fig3,
    /// Report whether a Gauss-Newton split can attain zero residual gradient.
    ValidateSplit {
        #[arg(value_enum)]
        split: SplitArg,
        /// Model whose likelihood the split is checked against.
        #[arg(long, value_enum, default_value = "linear-gaussian")]
        model: ModelArg,
    },
}

#[derive(Args)]
struct CurvatureArgs {
    #[arg(long, value_enum)]
    matrix: MatrixArg,
    /// Evaluation point, comma separated. Defaults to zeros.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    theta: Option<Vec<f64>>,
    /// Label draws per input for the Monte Carlo estimate.
    #[arg(long, default_value_t = 1)]
    mc_samples: usize,
}

fn main() -> ExitCode {
    // Die quietly when stdout is a closed pipe (e.g. `curvlab fig2 | head`)
    // instead of panicking on the failed write.
    #[cfg(unix)]
    unsafe {
        libc::signal(libc::SIGPIPE, libc::SIG_DFL);
    }
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return ExitCode::SUCCESS;
            }
            eprintln!("{e}");
            return ExitCode::from(1);
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_usage() { 1 } else { 2 })
        }
    }
}

/// The effective config: file contents (or empty defaults) with the global
/// flag overrides applied.
struct Effective {
    config: ExperimentConfig,
    seed: u64,
    output: OutputConfig,
}

fn load_effective(cli: &Cli) -> Result<Effective, Error> {
    let mut config = match &cli.config {
        Some(path) => ExperimentConfig::from_path(path)?,
        None => ExperimentConfig::parse("{\"version\": 1}")?,
    };
    if let Some(seed) = cli.seed {
        config.seed = Some(seed);
    }
    let mut output = config.output.clone().unwrap_or_default();
    if let Some(dir) = &cli.out_dir {
        output.dir = dir.clone();
    }
    if let Some(format) = cli.format {
        output.format = format.into();
    }
    config.output = Some(output.clone());
    let seed = config.seed.unwrap_or(0);
    Ok(Effective {
        config,
        seed,
        output,
    })
}

fn require_dataset(config: &ExperimentConfig) -> Result<&DatasetConfig, Error> {
    config.dataset.as_ref().ok_or_else(|| {
        Error::Config(
            "no dataset: pass --config with a 'dataset' section (file path or synthetic spec)"
                .into(),
        )
    })
}

fn require_model(config: &ExperimentConfig) -> Result<&ModelConfig, Error> {
    config
        .model
        .as_ref()
        .ok_or_else(|| Error::Config("no model: pass --config with a 'model' section".into()))
}

fn sink_for(eff: &Effective) -> Result<OutputSink, Error> {
    OutputSink::new(&eff.output.dir, eff.output.format)
}

fn finish(sink: OutputSink, eff: &Effective) -> Result<(), Error> {
    let hash = config_hash(&eff.config.canonical_bytes());
    let manifest = sink.finish(eff.seed, hash)?;
    println!("manifest: {}", manifest.display());
    Ok(())
}

fn execute(cli: Cli) -> Result<(), Error> {
    let eff = load_effective(&cli)?;
    match &cli.command {
        Command::ValidateSplit { split, model } => {
            let spec = curvlab::model::ModelSpec::new((*model).into(), false)?;
            let report = curvature::check_split_validity((*split).into(), &spec);
            println!("split: {}", report.split.name());
            println!("verdict: {}", report.verdict.label());
            println!(
                "attains zero residual gradient: {}",
                if report.attains_zero_gradient {
                    "yes"
                } else {
                    "no"
                }
            );
            println!("detail: {}", report.detail);
            Ok(())
        }
        Command::Curvature(args) => run_curvature(&eff, args),
        Command::Optimize => run_optimize(&eff),
        Command::Gridsearch { full_grid } => run_gridsearch(&eff, *full_grid),
        Command::Fig1 => {
            let mut cfg = eff.config.fig1.clone().unwrap_or_default();
            if cli.seed.is_some() {
                cfg.seed = eff.seed;
            }
            let mut sink = sink_for(&eff)?;
            let summary = experiment::reproduce_fig1(&cfg, &mut sink)?;
            println!(
                "optimum: theta = [{:.6}, {:.6}], loss = {:.6}",
                summary.theta_star[0], summary.theta_star[1], summary.optimum_loss
            );
            for run in &summary.runs {
                println!(
                    "{} from [{}, {}]: final loss {:.6e}, distance to optimum {:.6e}{}",
                    run.method.label(),
                    run.start[0],
                    run.start[1],
                    run.final_loss,
                    run.final_distance,
                    if run.diverged { " (diverged)" } else { "" }
                );
            }
            finish(sink, &eff)
        }
        Command::Fig2 => {
            let mut cfg = eff.config.fig2.clone().unwrap_or_default();
            if cli.seed.is_some() {
                cfg.seed = eff.seed;
            }
            let mut sink = sink_for(&eff)?;
            let summary = experiment::reproduce_fig2(&cfg, &mut sink)?;
            for case in &summary.cases {
                println!(
                    "{:?}: gap = {:.4}{}",
                    case.generator,
                    case.gap,
                    case.accuracy
                        .map(|a| format!(", accuracy = {a:.3}"))
                        .unwrap_or_default()
                );
            }
            finish(sink, &eff)
        }
        Command::Fig3 => {
            let cfg = eff.config.fig3.clone().unwrap_or_default();
            if let DatasetConfig::File(f) = &cfg.dataset {
                if !f.path.exists() {
                    println!(
                        "notice: dataset file '{}' not found, skipping",
                        f.path.display()
                    );
                    return Ok(());
                }
            }
            let mut sink = sink_for(&eff)?;
            let summary = experiment::reproduce_fig3(&cfg, &mut sink)?;
            for cell in &summary.winners {
                println!(
                    "{}: gamma = {:.3e}, lambda = {:.3e}",
                    cell.method.label(),
                    cell.gamma,
                    cell.lambda
                );
            }
            for (method, loss) in &summary.final_losses {
                println!("{}: final loss {:.6e}", method.label(), loss);
            }
            println!("min cosine along EFGD path: {:.4}", summary.min_cosine());
            finish(sink, &eff)
        }
    }
}

fn run_curvature(eff: &Effective, args: &CurvatureArgs) -> Result<(), Error> {
    let data = require_dataset(&eff.config)?.load()?;
    let model = require_model(&eff.config)?.build()?;
    let d = model.param_dim(data.input_dim());
    let theta = match &args.theta {
        Some(values) => {
            if values.len() != d {
                return Err(Error::Config(format!(
                    "--theta needs {d} values for this model, got {}",
                    values.len()
                )));
            }
            DVector::from_vec(values.clone())
        }
        None => DVector::zeros(d),
    };
    let matrix = match args.matrix {
        MatrixArg::Fisher => curvature::fisher(&model, &data, &theta)?,
        MatrixArg::Ef => curvature::empirical_fisher(&model, &data, &theta)?,
        MatrixArg::GgnCanonical => curvature::ggn(&model, &data, &theta, GgnSplit::Canonical)?,
        MatrixArg::GgnEf => curvature::ggn(&model, &data, &theta, GgnSplit::EfSplit)?,
        MatrixArg::GgnTrivial => curvature::ggn(&model, &data, &theta, GgnSplit::Trivial)?,
        MatrixArg::Hessian => curvature::hessian(&model, &data, &theta)?,
        MatrixArg::McFisher => {
            curvature::mc_fisher(&model, &data, &theta, args.mc_samples, eff.seed)?
        }
        MatrixArg::McFisherArgmax => curvature::mc_fisher_argmax(&model, &data, &theta)?,
    };
    let mut sink = sink_for(eff)?;
    let columns: Vec<String> = (0..d).map(|j| format!("c{j}")).collect();
    let mut table = Table {
        columns,
        rows: Vec::new(),
    };
    for i in 0..d {
        table.push((0..d).map(|j| matrix.values[(i, j)]).collect());
    }
    sink.write_table(&format!("curvature_{}", matrix.kind.label()), &table)?;
    println!(
        "{} ({}): dim = {}, frobenius = {:.6e}, min eigenvalue = {:.6e}",
        matrix.kind.label(),
        curvature::CurvatureMatrix::CONVENTION,
        d,
        matrix.frobenius_norm(),
        matrix.min_eigenvalue()
    );
    finish(sink, eff)
}

fn run_optimize(eff: &Effective) -> Result<(), Error> {
    let data = require_dataset(&eff.config)?.load()?;
    let model = require_model(&eff.config)?.build()?;
    let opt = eff.config.optimizer.ok_or_else(|| {
        Error::Config("no optimizer: pass --config with an 'optimizer' section".into())
    })?;
    let d = model.param_dim(data.input_dim());
    let theta0 = match &eff.config.theta0 {
        Some(values) => {
            if values.len() != d {
                return Err(Error::Config(format!(
                    "theta0 needs {d} values for this model, got {}",
                    values.len()
                )));
            }
            DVector::from_vec(values.clone())
        }
        None => DVector::zeros(d),
    };
    let traj = optim::run(&opt, &model, &data, &theta0)?;
    let mut sink = sink_for(eff)?;
    let mut columns: Vec<String> = vec!["iter".into()];
    columns.extend((0..d).map(|j| format!("theta{j}")));
    columns.push("loss".into());
    let mut table = Table {
        columns,
        rows: Vec::new(),
    };
    for (t, (theta, loss)) in traj.thetas.iter().zip(&traj.losses).enumerate() {
        let mut row = vec![t as f64];
        row.extend(theta.iter().cloned());
        row.push(*loss);
        table.push(row);
    }
    sink.write_table("trajectory", &table)?;
    println!(
        "{}: final loss {:.6e} after {} steps{}",
        opt.method.label(),
        traj.final_loss(),
        traj.thetas.len() - 1,
        if traj.diverged { " (diverged)" } else { "" }
    );
    finish(sink, eff)
}

fn run_gridsearch(eff: &Effective, full_grid: bool) -> Result<(), Error> {
    let data = require_dataset(&eff.config)?.load()?;
    let model = require_model(&eff.config)?.build()?;
    let mut grid = eff.config.grid.clone().unwrap_or_default();
    if full_grid {
        grid.gamma = experiment::full_gamma_grid();
        grid.lambda = experiment::full_lambda_grid();
    }
    let d = model.param_dim(data.input_dim());
    let theta0 = match &eff.config.theta0 {
        Some(values) => DVector::from_vec(values.clone()),
        None => DVector::zeros(d),
    };
    let result = experiment::grid_search(&grid, &model, &data, &theta0)?;
    let mut sink = sink_for(eff)?;
    experiment::write_grid_result(&result, &mut sink)?;
    for (method, best) in &result.best {
        match best {
            Some(cell) => println!(
                "{}: best gamma = {:.3e}, lambda = {:.3e}, final loss = {:.6e}",
                method.label(),
                cell.gamma,
                cell.lambda,
                cell.final_loss
            ),
            None => println!("{}: no viable cell (all runs diverged)", method.label()),
        }
    }
    finish(sink, eff)
}
