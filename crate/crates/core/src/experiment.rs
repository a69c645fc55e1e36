//! Declarative experiment running: hyperparameter grid search, the three
//! reproduction pipelines, and CSV/JSON table emission with a per-run
//! manifest.
//!
//! Every emitted table is purely numeric with a header row, so the crate's
//! own CSV parser can read everything it writes. Method and variant
//! identifiers are encoded as numeric ids (see [`Method::id`] and
//! [`MisspecVariant`] ordering) and the mapping is documented in the README.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::curvature::{self, solve_damped};
use crate::data::{self, MisspecVariant, SyntheticGenerator, SyntheticSpec};
use crate::diagnostics;
use crate::error::{Error, Result};
use crate::model::{self, Dataset, ModelKind, ModelSpec};
use crate::optim::{self, Method, OptimizerConfig, Trajectory};
use crate::reduce;

/// Numeric ids used in emitted tables.
pub fn method_id(method: Method) -> f64 {
    match method {
        Method::Gd => 0.0,
        Method::Ngd => 1.0,
        Method::Efgd => 2.0,
        Method::McNgd { .. } => 3.0,
        Method::VarAdapted => 4.0,
    }
}

pub fn variant_id(variant: MisspecVariant) -> f64 {
    match variant {
        MisspecVariant::Correct => 0.0,
        MisspecVariant::A => 1.0,
        MisspecVariant::B => 2.0,
    }
}

/// `num` log10-spaced exponents from `start` to `stop` inclusive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LogGrid {
    pub start: f64,
    pub stop: f64,
    pub num: usize,
}

impl LogGrid {
    pub fn values(&self) -> Vec<f64> {
        if self.num == 1 {
            return vec![10f64.powf(self.start)];
        }
        let step = (self.stop - self.start) / (self.num - 1) as f64;
        (0..self.num)
            .map(|i| 10f64.powf(self.start + step * i as f64))
            .collect()
    }
}

/// Desk-scale default: every 8th step-size point and every 4th damping point
/// of the full grid.
pub fn reduced_gamma_grid() -> LogGrid {
    LogGrid {
        start: -20.0,
        stop: 10.0,
        num: 31,
    }
}

pub fn reduced_lambda_grid() -> LogGrid {
    LogGrid {
        start: -10.0,
        stop: 10.0,
        num: 11,
    }
}

/// Full search grid (241 step sizes x 41 dampings).
pub fn full_gamma_grid() -> LogGrid {
    LogGrid {
        start: -20.0,
        stop: 10.0,
        num: 241,
    }
}

pub fn full_lambda_grid() -> LogGrid {
    LogGrid {
        start: -10.0,
        stop: 10.0,
        num: 41,
    }
}

/// Grid-search section of a config.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub methods: Vec<Method>,
    #[serde(default = "reduced_gamma_grid")]
    pub gamma: LogGrid,
    #[serde(default = "reduced_lambda_grid")]
    pub lambda: LogGrid,
    pub iterations: usize,
    #[serde(default)]
    pub seed: u64,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            methods: vec![Method::Gd, Method::Ngd, Method::Efgd],
            gamma: reduced_gamma_grid(),
            lambda: reduced_lambda_grid(),
            iterations: 100,
            seed: 0,
        }
    }
}

/// One evaluated grid cell.
#[derive(Debug, Clone, Copy)]
pub struct GridCell {
    pub method: Method,
    pub gamma: f64,
    pub lambda: f64,
    pub final_loss: f64,
    pub diverged: bool,
}

/// Best non-diverged cell per method (`None` when every cell diverged).
#[derive(Debug, Clone)]
pub struct GridSearchResult {
    pub cells: Vec<GridCell>,
    pub best: Vec<(Method, Option<GridCell>)>,
}

impl GridSearchResult {
    pub fn best_for(&self, method: Method) -> Option<&GridCell> {
        self.best
            .iter()
            .find(|(m, _)| *m == method)
            .and_then(|(_, c)| c.as_ref())
    }
}

/// Run the full grid for every configured method. Cells execute
/// concurrently; ties are broken toward the smaller step size, then the
/// smaller damping (cells are enumerated in that order, so the first
/// strictly-better cell wins).
pub fn grid_search(
    grid: &GridConfig,
    model: &ModelSpec,
    data: &Dataset,
    theta0: &DVector<f64>,
) -> Result<GridSearchResult> {
    if grid.methods.is_empty() {
        return Err(Error::Config("grid needs at least one method".into()));
    }
    if grid.iterations == 0 {
        return Err(Error::Config("grid needs at least one iteration".into()));
    }
    let gammas = grid.gamma.values();
    let lambdas = grid.lambda.values();
    if gammas.is_empty() || lambdas.is_empty() {
        return Err(Error::Config("grids must be non-empty".into()));
    }
    model.check_compat(data)?;

    let mut specs: Vec<(Method, f64, f64)> = Vec::new();
    for &method in &grid.methods {
        let method_lambdas: &[f64] = if method.uses_damping() {
            &lambdas
        } else {
            &[0.0]
        };
        for &gamma in &gammas {
            for &lambda in method_lambdas {
                specs.push((method, gamma, lambda));
            }
        }
    }

    let cells: Vec<GridCell> = reduce::indexed_map(specs.len(), |i| {
        let (method, gamma, lambda) = specs[i];
        let cfg = OptimizerConfig {
            method,
            step_size: gamma,
            damping: lambda,
            iterations: grid.iterations,
            seed: grid.seed,
            record_cosine: false,
        };
        match optim::run(&cfg, model, data, theta0) {
            // Diverged cells record the last finite loss seen; the flag
            // carries the semantics and keeps the emitted tables finite.
            Ok(traj) => GridCell {
                method,
                gamma,
                lambda,
                final_loss: traj
                    .losses
                    .iter()
                    .rev()
                    .find(|l| l.is_finite())
                    .copied()
                    .unwrap_or(f64::MAX),
                diverged: traj.diverged,
            },
            // Unusable cells (singular preconditioner, overflow) count as
            // diverged rather than aborting the whole sweep.
            Err(_) => GridCell {
                method,
                gamma,
                lambda,
                final_loss: f64::MAX,
                diverged: true,
            },
        }
    });

    let best = grid
        .methods
        .iter()
        .map(|&method| {
            let mut best: Option<GridCell> = None;
            for cell in cells.iter().filter(|c| c.method == method && !c.diverged) {
                let better = match &best {
                    None => true,
                    Some(b) => cell.final_loss < b.final_loss,
                };
                if better {
                    best = Some(*cell);
                }
            }
            (method, best)
        })
        .collect();

    Ok(GridSearchResult { cells, best })
}

/// A purely numeric table with named columns.
#[derive(Debug, Clone)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn new(columns: &[&str]) -> Self {
        Self {
            columns: columns.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<f64>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{}", self.columns.join(","))?;
        for row in &self.rows {
            let cells: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
            writeln!(w, "{}", cells.join(","))?;
        }
        Ok(())
    }

    /// JSON mirror: an array of objects with the column names as fields.
    /// Non-finite values become `null`.
    pub fn write_json<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let rows: Vec<serde_json::Value> = self
            .rows
            .iter()
            .map(|row| {
                let map: serde_json::Map<String, serde_json::Value> = self
                    .columns
                    .iter()
                    .zip(row)
                    .map(|(c, v)| {
                        let value = serde_json::Number::from_f64(*v)
                            .map(serde_json::Value::Number)
                            .unwrap_or(serde_json::Value::Null);
                        (c.clone(), value)
                    })
                    .collect();
                serde_json::Value::Object(map)
            })
            .collect();
        let text = serde_json::to_string_pretty(&rows).expect("json encoding");
        writeln!(w, "{text}")
    }
}

/// Output format for emitted tables.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputFormat {
    Csv,
    Json,
}

impl OutputFormat {
    fn extension(&self) -> &'static str {
        match self {
            OutputFormat::Csv => "csv",
            OutputFormat::Json => "json",
        }
    }
}

/// FNV-1a hash of the canonical config serialization, recorded in manifests.
pub fn config_hash(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(0x1_0000_01b3);
    }
    hash
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    tool_version: &'static str,
    config_hash: String,
    seed: u64,
    outputs: &'a [String],
}

/// Collects emitted files for one run and writes the manifest last.
#[derive(Debug)]
pub struct OutputSink {
    dir: PathBuf,
    format: OutputFormat,
    files: Vec<String>,
}

impl OutputSink {
    pub fn new(dir: &Path, format: OutputFormat) -> Result<Self> {
        std::fs::create_dir_all(dir)?;
        Ok(Self {
            dir: dir.to_path_buf(),
            format,
            files: Vec::new(),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    /// Write a table under `name` (extension chosen by the output format).
    pub fn write_table(&mut self, name: &str, table: &Table) -> Result<PathBuf> {
        let file_name = format!("{name}.{}", self.format.extension());
        let path = self.dir.join(&file_name);
        let mut w = BufWriter::new(File::create(&path)?);
        match self.format {
            OutputFormat::Csv => table.write_csv(&mut w)?,
            OutputFormat::Json => table.write_json(&mut w)?,
        }
        w.flush()?;
        self.files.push(file_name);
        Ok(path)
    }

    /// Write `manifest.json` recording the run metadata and every emitted
    /// file exactly once.
    pub fn finish(self, seed: u64, hash: u64) -> Result<PathBuf> {
        let manifest = Manifest {
            tool_version: env!("CARGO_PKG_VERSION"),
            config_hash: format!("{hash:016x}"),
            seed,
            outputs: &self.files,
        };
        let path = self.dir.join("manifest.json");
        let mut w = BufWriter::new(File::create(&path)?);
        let text = serde_json::to_string_pretty(&manifest).expect("manifest encoding");
        writeln!(w, "{text}")?;
        w.flush()?;
        Ok(path)
    }
}

/// Emit one `grid_<method>.csv` per method plus `grid_best.csv`.
pub fn write_grid_result(result: &GridSearchResult, sink: &mut OutputSink) -> Result<()> {
    for (method, _) in &result.best {
        let mut table = Table::new(&["gamma", "lambda", "final_loss", "diverged"]);
        for cell in result.cells.iter().filter(|c| c.method == *method) {
            table.push(vec![
                cell.gamma,
                cell.lambda,
                cell.final_loss,
                f64::from(u8::from(cell.diverged)),
            ]);
        }
        sink.write_table(&format!("grid_{}", method.label()), &table)?;
    }
    let mut best = Table::new(&["method_id", "gamma", "lambda", "final_loss"]);
    for (method, cell) in &result.best {
        if let Some(c) = cell {
            best.push(vec![method_id(*method), c.gamma, c.lambda, c.final_loss]);
        }
    }
    sink.write_table("grid_best", &best)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Figure 1: vector fields and trajectories on the lognormal regression line.
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Fig1Config {
    #[serde(default = "default_n")]
    pub num_samples: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "fig1_step_size")]
    pub step_size: f64,
    #[serde(default = "fig1_damping")]
    pub damping: f64,
    #[serde(default = "fig1_iterations")]
    pub iterations: usize,
    #[serde(default = "fig1_starts")]
    pub starts: Vec<[f64; 2]>,
    /// Vector-field window `[theta0_min, theta0_max, theta1_min, theta1_max]`.
    #[serde(default = "fig1_field_bounds")]
    pub field_bounds: [f64; 4],
    #[serde(default = "fig1_field_resolution")]
    pub field_resolution: usize,
    /// Methods whose (rescaled) update fields are emitted.
    #[serde(default = "fig1_field_methods")]
    pub field_methods: Vec<Method>,
}

fn default_n() -> usize {
    1000
}
fn fig1_step_size() -> f64 {
    1e-4
}
fn fig1_damping() -> f64 {
    1e-8
}
fn fig1_iterations() -> usize {
    50_000
}
fn fig1_starts() -> Vec<[f64; 2]> {
    vec![[2.0, 4.5], [1.0, 0.0], [4.5, 3.0], [-0.5, 3.0]]
}
fn fig1_field_bounds() -> [f64; 4] {
    [-1.0, 5.0, -1.0, 5.0]
}
fn fig1_field_resolution() -> usize {
    13
}
fn fig1_field_methods() -> Vec<Method> {
    vec![Method::Gd, Method::Ngd, Method::Efgd]
}

impl Default for Fig1Config {
    fn default() -> Self {
        serde_json::from_str("{}").expect("defaults")
    }
}

/// Relative rescaling applied to the emitted vector fields so the three
/// methods are visible at a common scale: gradient 1/3, natural gradient 1,
/// EF-preconditioned gradient 3.
pub fn field_rescale(method: Method) -> f64 {
    match method {
        Method::Gd => 1.0 / 3.0,
        Method::Efgd => 3.0,
        _ => 1.0,
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Fig1Run {
    pub method: Method,
    pub start: [f64; 2],
    pub final_loss: f64,
    pub final_distance: f64,
    pub diverged: bool,
}

#[derive(Debug, Clone)]
pub struct Fig1Summary {
    pub theta_star: DVector<f64>,
    pub optimum_loss: f64,
    pub runs: Vec<Fig1Run>,
}

/// Generate the lognormal regression data, emit the preconditioned vector
/// fields on a parameter grid and the trajectories of each method from the
/// configured starting points.
pub fn reproduce_fig1(cfg: &Fig1Config, sink: &mut OutputSink) -> Result<Fig1Summary> {
    let data = data::generate(&SyntheticSpec {
        generator: SyntheticGenerator::Fig1Lognormal,
        num_samples: cfg.num_samples,
        seed: cfg.seed,
    })?;
    let spec = ModelSpec::new(ModelKind::LinearGaussian, true)?;
    let theta_star = diagnostics::minimize_reference(&spec, &data, &DVector::zeros(2))?;
    let optimum_loss = model::loss(&spec, &data, &theta_star)?;

    let mut optimum = Table::new(&["theta0", "theta1", "loss"]);
    optimum.push(vec![theta_star[0], theta_star[1], optimum_loss]);
    sink.write_table("fig1_optimum", &optimum)?;

    // Vector field with the same damping as the trajectories.
    let mut columns: Vec<String> = vec!["theta0".into(), "theta1".into()];
    for method in &cfg.field_methods {
        columns.push(format!("{}_d0", method.label()));
        columns.push(format!("{}_d1", method.label()));
    }
    let mut field = Table {
        columns,
        rows: Vec::new(),
    };
    let res = cfg.field_resolution.max(2);
    let [x0, x1, y0, y1] = cfg.field_bounds;
    for i in 0..res {
        for j in 0..res {
            let a = x0 + (x1 - x0) * i as f64 / (res - 1) as f64;
            let b = y0 + (y1 - y0) * j as f64 / (res - 1) as f64;
            let theta = DVector::from_vec(vec![a, b]);
            let grad = model::gradient(&spec, &data, &theta)?;
            let mut row = vec![a, b];
            for &method in &cfg.field_methods {
                let dir = match method {
                    Method::Gd => grad.clone(),
                    Method::Ngd => {
                        let f = curvature::fisher(&spec, &data, &theta)?;
                        solve_damped(&f.values, cfg.damping, &grad, "fisher preconditioner")?
                    }
                    Method::Efgd => {
                        let ef = curvature::empirical_fisher(&spec, &data, &theta)?;
                        solve_damped(&ef.values, cfg.damping, &grad, "ef preconditioner")?
                    }
                    other => {
                        return Err(Error::Config(format!(
                            "vector field not defined for method {:?}",
                            other
                        )));
                    }
                };
                let scale = field_rescale(method);
                row.push(dir[0] * scale);
                row.push(dir[1] * scale);
            }
            field.push(row);
        }
    }
    sink.write_table("fig1_field", &field)?;

    let methods = [Method::Gd, Method::Ngd, Method::Efgd];
    let mut runs = Vec::new();
    let mut runs_table = Table::new(&[
        "method_id",
        "start0",
        "start1",
        "final_loss",
        "final_distance",
        "diverged",
    ]);
    for &method in &methods {
        for (k, start) in cfg.starts.iter().enumerate() {
            let cfg_run = OptimizerConfig {
                method,
                step_size: cfg.step_size,
                damping: cfg.damping,
                iterations: cfg.iterations,
                seed: cfg.seed,
                record_cosine: false,
            };
            let theta0 = DVector::from_vec(start.to_vec());
            let traj = optim::run(&cfg_run, &spec, &data, &theta0)?;
            let mut table = Table::new(&["iter", "theta0", "theta1", "loss"]);
            for (t, (theta, loss)) in traj.thetas.iter().zip(&traj.losses).enumerate() {
                table.push(vec![t as f64, theta[0], theta[1], *loss]);
            }
            sink.write_table(&format!("fig1_trajectory_{}_{k}", method.label()), &table)?;
            let run = Fig1Run {
                method,
                start: *start,
                final_loss: traj.final_loss(),
                final_distance: (traj.final_theta() - &theta_star).norm(),
                diverged: traj.diverged,
            };
            runs_table.push(vec![
                method_id(method),
                start[0],
                start[1],
                run.final_loss,
                run.final_distance,
                f64::from(u8::from(run.diverged)),
            ]);
            runs.push(run);
        }
    }
    sink.write_table("fig1_runs", &runs_table)?;

    Ok(Fig1Summary {
        theta_star,
        optimum_loss,
        runs,
    })
}

// ---------------------------------------------------------------------------
// Figure 2: quadratic fits and misspecification gaps at the minimizer.
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Fig2Config {
    #[serde(default = "default_n")]
    pub num_samples: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "fig2_directions")]
    pub num_directions: usize,
    #[serde(default = "fig2_cert_tol")]
    pub cert_tol: f64,
}

fn fig2_directions() -> usize {
    32
}
fn fig2_cert_tol() -> f64 {
    1e-6
}

impl Default for Fig2Config {
    fn default() -> Self {
        serde_json::from_str("{}").expect("defaults")
    }
}

#[derive(Debug, Clone)]
pub struct Fig2Case {
    pub generator: SyntheticGenerator,
    pub variant: MisspecVariant,
    pub gap: f64,
    /// Classification accuracy at the minimizer (`None` for regression).
    pub accuracy: Option<f64>,
    /// Largest `|ef_model - fisher_model| / fisher_model` over directions.
    pub ef_vs_fisher_ratio: f64,
}

#[derive(Debug, Clone)]
pub struct Fig2Summary {
    pub cases: Vec<Fig2Case>,
}

impl Fig2Summary {
    pub fn case(&self, generator_kind: &str, variant: MisspecVariant) -> Option<&Fig2Case> {
        self.cases.iter().find(|c| {
            c.variant == variant
                && match c.generator {
                    SyntheticGenerator::Table3Classification(_) => generator_kind == "table3",
                    SyntheticGenerator::Table4Regression(_) => generator_kind == "table4",
                    _ => false,
                }
        })
    }
}

fn classification_accuracy(model: &ModelSpec, data: &Dataset, theta: &DVector<f64>) -> Result<f64> {
    let pred = model::predict(model, data, theta)?;
    let labels = data.labels().expect("classification labels");
    let mut correct = 0usize;
    for (i, &label) in labels.iter().enumerate() {
        let hit = pred.outputs[(i, 0)] >= 0.0;
        if hit == (label == 1) {
            correct += 1;
        }
    }
    Ok(correct as f64 / labels.len() as f64)
}

/// For each classification and regression variant: generate data, find the
/// minimizer, and emit the quadratic-fit table and the misspecification gap.
pub fn reproduce_fig2(cfg: &Fig2Config, sink: &mut OutputSink) -> Result<Fig2Summary> {
    let mut cases = Vec::new();
    let mut summary_class = Table::new(&["variant_id", "gap", "accuracy", "ef_vs_fisher_ratio"]);
    let mut summary_reg = Table::new(&["variant_id", "gap", "ef_vs_fisher_ratio"]);

    for family_id in 0..2usize {
        for variant in [
            MisspecVariant::Correct,
            MisspecVariant::A,
            MisspecVariant::B,
        ] {
            let (generator, spec, family_name) = if family_id == 0 {
                (
                    SyntheticGenerator::Table3Classification(variant),
                    ModelSpec::new(ModelKind::LinearLogistic, true)?,
                    "table3",
                )
            } else {
                (
                    SyntheticGenerator::Table4Regression(variant),
                    ModelSpec::new(ModelKind::LinearGaussian, true)?,
                    "table4",
                )
            };
            let data = data::generate(&SyntheticSpec {
                generator,
                num_samples: cfg.num_samples,
                seed: cfg.seed,
            })?;
            let d = spec.param_dim(data.input_dim());
            let theta_star = diagnostics::minimize_reference(&spec, &data, &DVector::zeros(d))?;
            let gap = diagnostics::misspecification_gap(&spec, &data, &theta_star, cfg.cert_tol)?;
            let fisher = curvature::fisher(&spec, &data, &theta_star)?;
            let ef = curvature::empirical_fisher(&spec, &data, &theta_star)?;
            let fit = diagnostics::quadratic_fit(
                &spec,
                &data,
                &theta_star,
                &[&fisher, &ef],
                cfg.num_directions,
                cfg.seed,
                cfg.cert_tol,
            )?;

            let mut columns: Vec<String> = (0..d).map(|i| format!("dir{i}")).collect();
            columns.extend([
                "true_delta".to_string(),
                "fisher_model".to_string(),
                "ef_model".to_string(),
            ]);
            let mut table = Table {
                columns,
                rows: Vec::new(),
            };
            let fisher_vals = &fit.model_delta[0].1;
            let ef_vals = &fit.model_delta[1].1;
            let mut ratio: f64 = 0.0;
            for k in 0..fit.directions.len() {
                let mut row: Vec<f64> = fit.directions[k].iter().cloned().collect();
                row.push(fit.true_delta[k]);
                row.push(fisher_vals[k]);
                row.push(ef_vals[k]);
                table.push(row);
                if fisher_vals[k] != 0.0 {
                    ratio = ratio.max((ef_vals[k] - fisher_vals[k]).abs() / fisher_vals[k].abs());
                }
            }
            sink.write_table(
                &format!("fig2_{family_name}_{}_quadfit", variant.label()),
                &table,
            )?;

            let accuracy = if family_id == 0 {
                let acc = classification_accuracy(&spec, &data, &theta_star)?;
                summary_class.push(vec![variant_id(variant), gap, acc, ratio]);
                Some(acc)
            } else {
                summary_reg.push(vec![variant_id(variant), gap, ratio]);
                None
            };
            cases.push(Fig2Case {
                generator,
                variant,
                gap,
                accuracy,
                ef_vs_fisher_ratio: ratio,
            });
        }
    }
    sink.write_table("fig2_table3_summary", &summary_class)?;
    sink.write_table("fig2_table4_summary", &summary_reg)?;
    Ok(Fig2Summary { cases })
}

// ---------------------------------------------------------------------------
// Figure 3: tuned optimization runs with the per-step cosine diagnostic.
// ---------------------------------------------------------------------------

/// Fixed hyperparameters for one method (exponents already applied).
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FixedCell {
    pub method: Method,
    pub gamma: f64,
    pub lambda: f64,
}

/// Hyperparameter source for the tuned runs.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fig3Hyperparams {
    GridSearch(GridConfig),
    Fixed(Vec<FixedCell>),
}

/// Hyperparameters selected for the Boston regression runs (log10 exponents
/// GD -5.25; NGD 0.125 with damping -10; EFGD -1.25 with damping -8).
pub fn table6_boston() -> Vec<FixedCell> {
    vec![
        FixedCell {
            method: Method::Gd,
            gamma: 10f64.powf(-5.25),
            lambda: 0.0,
        },
        FixedCell {
            method: Method::Ngd,
            gamma: 10f64.powf(0.125),
            lambda: 1e-10,
        },
        FixedCell {
            method: Method::Efgd,
            gamma: 10f64.powf(-1.25),
            lambda: 1e-8,
        },
    ]
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MultistartConfig {
    pub count: usize,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Fig3Config {
    pub dataset: data::DatasetConfig,
    pub model: data::ModelConfig,
    pub hyperparams: Fig3Hyperparams,
    #[serde(default = "fig3_iterations")]
    pub iterations: usize,
    #[serde(default)]
    pub multistart: Option<MultistartConfig>,
}

fn fig3_iterations() -> usize {
    100
}

impl Default for Fig3Config {
    fn default() -> Self {
        Self {
            dataset: data::DatasetConfig::Synthetic(SyntheticSpec {
                generator: SyntheticGenerator::Fig1Lognormal,
                num_samples: 1000,
                seed: 0,
            }),
            model: data::ModelConfig {
                kind: ModelKind::LinearGaussian,
                bias: true,
            },
            hyperparams: Fig3Hyperparams::GridSearch(GridConfig::default()),
            iterations: 100,
            multistart: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Fig3Summary {
    pub winners: Vec<FixedCell>,
    pub final_losses: Vec<(Method, f64)>,
    pub cosine_series: Vec<f64>,
    pub multistart: Vec<(f64, f64)>,
}

impl Fig3Summary {
    pub fn final_loss(&self, method: Method) -> Option<f64> {
        self.final_losses
            .iter()
            .find(|(m, _)| *m == method)
            .map(|(_, l)| *l)
    }

    pub fn min_cosine(&self) -> f64 {
        self.cosine_series
            .iter()
            .cloned()
            .filter(|c| c.is_finite())
            .fold(f64::INFINITY, f64::min)
    }
}

/// Run the tuned GD/NGD/EFGD comparison on one dataset: select
/// hyperparameters (grid search or fixed), rerun the winners from
/// `theta0 = 0`, emit per-iteration loss curves, and walk the EFGD path
/// recording the undamped EF-vs-Fisher cosine at every step.
pub fn reproduce_fig3(cfg: &Fig3Config, sink: &mut OutputSink) -> Result<Fig3Summary> {
    let data = cfg.dataset.load()?;
    let spec = cfg.model.build()?;
    spec.check_compat(&data)?;
    let d = spec.param_dim(data.input_dim());
    let theta0 = DVector::zeros(d);

    let winners: Vec<FixedCell> = match &cfg.hyperparams {
        Fig3Hyperparams::Fixed(cells) => cells.clone(),
        Fig3Hyperparams::GridSearch(grid) => {
            let result = grid_search(grid, &spec, &data, &theta0)?;
            write_grid_result(&result, sink)?;
            let mut cells = Vec::new();
            for (method, best) in &result.best {
                match best {
                    Some(b) => cells.push(FixedCell {
                        method: *method,
                        gamma: b.gamma,
                        lambda: b.lambda,
                    }),
                    None => {
                        return Err(Error::Numerical(format!(
                            "no viable grid cell for method {}",
                            method.label()
                        )));
                    }
                }
            }
            cells
        }
    };

    let mut winners_table = Table::new(&["method_id", "gamma", "lambda"]);
    for cell in &winners {
        winners_table.push(vec![method_id(cell.method), cell.gamma, cell.lambda]);
    }
    sink.write_table("fig3_hyperparameters", &winners_table)?;

    let mut final_losses = Vec::new();
    let mut trajectories: Vec<(Method, Trajectory)> = Vec::new();
    for cell in &winners {
        let run_cfg = OptimizerConfig {
            method: cell.method,
            step_size: cell.gamma,
            damping: cell.lambda,
            iterations: cfg.iterations,
            seed: 0,
            record_cosine: false,
        };
        let traj = optim::run(&run_cfg, &spec, &data, &theta0)?;
        final_losses.push((cell.method, traj.final_loss()));
        trajectories.push((cell.method, traj));
    }

    // One loss-curve file per method; lengths can differ when a run aborts.
    for (method, traj) in &trajectories {
        let mut curve = Table::new(&["iter", "loss"]);
        for (t, loss) in traj.losses.iter().enumerate() {
            if loss.is_finite() {
                curve.push(vec![t as f64, *loss]);
            }
        }
        sink.write_table(&format!("fig3_loss_{}", method.label()), &curve)?;
    }

    // Undamped cosine between the EF direction and the natural gradient at
    // every point of the EFGD path. Points where the comparison is undefined
    // (zero gradient) are left out of the table.
    let mut cosine_series = Vec::new();
    let mut cosine_table = Table::new(&["iter", "cosine", "damping_used"]);
    if let Some((_, ef_traj)) = trajectories.iter().find(|(m, _)| *m == Method::Efgd) {
        for (t, theta) in ef_traj.thetas.iter().enumerate() {
            match diagnostics::direction_comparison_undamped(&spec, &data, theta) {
                Ok(cmp) => {
                    cosine_series.push(cmp.cosine);
                    cosine_table.push(vec![t as f64, cmp.cosine, cmp.damping]);
                }
                Err(_) => cosine_series.push(f64::NAN),
            }
        }
    }
    sink.write_table("fig3_cosine", &cosine_table)?;

    // Multi-start variant: EFGD with the tuned hyperparameters from starts
    // sampled in the box spanned by -theta* and theta*.
    let mut multistart = Vec::new();
    if let Some(ms) = &cfg.multistart {
        let theta_star = diagnostics::minimize_reference(&spec, &data, &theta0)?;
        let efgd = winners
            .iter()
            .find(|c| c.method == Method::Efgd)
            .copied()
            .ok_or_else(|| Error::Config("multistart needs an EFGD cell".into()))?;
        use rand::Rng;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(ms.seed);
        let mut table = Table::new(&["start_distance", "final_loss", "diverged"]);
        for _ in 0..ms.count {
            let start = DVector::from_fn(d, |i, _| {
                let hi = theta_star[i].abs();
                if hi == 0.0 {
                    0.0
                } else {
                    rng.random_range(-hi..hi)
                }
            });
            let run_cfg = OptimizerConfig {
                method: Method::Efgd,
                step_size: efgd.gamma,
                damping: efgd.lambda,
                iterations: cfg.iterations,
                seed: 0,
                record_cosine: false,
            };
            let traj = optim::run(&run_cfg, &spec, &data, &start)?;
            let dist = (&start - &theta_star).norm();
            table.push(vec![
                dist,
                traj.final_loss(),
                f64::from(u8::from(traj.diverged)),
            ]);
            multistart.push((dist, traj.final_loss()));
        }
        sink.write_table("fig3_multistart", &table)?;
    }

    Ok(Fig3Summary {
        winners,
        final_losses,
        cosine_series,
        multistart,
    })
}

// ---------------------------------------------------------------------------
// Experiment configuration file.
// ---------------------------------------------------------------------------

/// Top-level config file schema (versioned JSON).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub version: u32,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub dataset: Option<data::DatasetConfig>,
    #[serde(default)]
    pub model: Option<data::ModelConfig>,
    #[serde(default)]
    pub optimizer: Option<OptimizerConfig>,
    #[serde(default)]
    pub theta0: Option<Vec<f64>>,
    #[serde(default)]
    pub grid: Option<GridConfig>,
    #[serde(default)]
    pub fig1: Option<Fig1Config>,
    #[serde(default)]
    pub fig2: Option<Fig2Config>,
    #[serde(default)]
    pub fig3: Option<Fig3Config>,
    #[serde(default)]
    pub output: Option<OutputConfig>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default = "default_out_dir")]
    pub dir: PathBuf,
    #[serde(default = "default_format")]
    pub format: OutputFormat,
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}

fn default_format() -> OutputFormat {
    OutputFormat::Csv
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: default_out_dir(),
            format: default_format(),
        }
    }
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text).map_err(|e| {
            Error::Config(format!(
                "config schema error at line {}, column {}: {e}",
                e.line(),
                e.column()
            ))
        })?;
        if cfg.version != 1 {
            return Err(Error::Config(format!(
                "unsupported config version {} (expected 1)",
                cfg.version
            )));
        }
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            Error::Config(format!(
                "cannot read --config file '{}': {e}",
                path.display()
            ))
        })?;
        Self::parse(&text)
    }

    /// Canonical serialization used for the manifest hash. The output
    /// section (directory, format) is excluded so the hash identifies the
    /// experiment itself, not where its files land.
    pub fn canonical_bytes(&self) -> Vec<u8> {
        let mut hashed = self.clone();
        hashed.output = None;
        serde_json::to_vec(&hashed).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_grid_endpoints() {
        let g = LogGrid {
            start: -2.0,
            stop: 2.0,
            num: 5,
        };
        let v = g.values();
        assert_eq!(v.len(), 5);
        assert!((v[0] - 0.01).abs() < 1e-15);
        assert!((v[2] - 1.0).abs() < 1e-12);
        assert!((v[4] - 100.0).abs() < 1e-10);
    }

    #[test]
    fn reduced_grid_matches_full_grid_subsampling() {
        // Every 8th of 241 step-size points and every 4th of 41 damping
        // points land on the same exponents.
        let full: Vec<f64> = full_gamma_grid().values();
        let reduced = reduced_gamma_grid().values();
        for (k, v) in reduced.iter().enumerate() {
            assert!((v - full[8 * k]).abs() <= 1e-9 * full[8 * k]);
        }
        let full_l = full_lambda_grid().values();
        let reduced_l = reduced_lambda_grid().values();
        for (k, v) in reduced_l.iter().enumerate() {
            assert!((v - full_l[4 * k]).abs() <= 1e-9 * full_l[4 * k]);
        }
    }

    #[test]
    fn config_hash_is_stable() {
        assert_eq!(config_hash(b"abc"), config_hash(b"abc"));
        assert_ne!(config_hash(b"abc"), config_hash(b"abd"));
    }

    #[test]
    fn config_rejects_unknown_fields_and_versions() {
        assert!(ExperimentConfig::parse("{\"version\": 1}").is_ok());
        assert!(ExperimentConfig::parse("{\"version\": 2}").is_err());
        let err = ExperimentConfig::parse("{\"version\": 1, \"bogus\": 3}").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("line"), "{msg}");
    }
}
