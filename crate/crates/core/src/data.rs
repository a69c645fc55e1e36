//! Dataset ingestion: LIBSVM and CSV parsers, the synthetic generators used
//! by the reproduction pipelines, feature standardization, and a versioned
//! text dump for round-trip checks.

use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::PathBuf;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Dataset, ModelKind, ModelSpec, Targets, Task};

/// Generator families for the synthetic experiment datasets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SyntheticGenerator {
    /// `x ~ Lognormal(0, 3/4)`, `y = 2 + 2x + eps`, `eps ~ N(0, 1)`.
    ///
    /// `3/4` is read as the log-space standard deviation (sigma, not
    /// sigma squared).
    Fig1Lognormal,
    /// Two balanced Gaussian classes in the plane. `Correct` shares one
    /// covariance across classes (so a logistic posterior is exact); the
    /// misspecified variants use unequal or rotated covariances.
    Table3Classification(MisspecVariant),
    /// Scalar regression `x ~ N(0, 1)`. `Correct`: `y = x + eps` with unit
    /// noise; `A`: noise standard deviation 2; `B`: `y = x + x^2/2 + eps`.
    Table4Regression(MisspecVariant),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MisspecVariant {
    Correct,
    A,
    B,
}

impl MisspecVariant {
    pub fn label(&self) -> &'static str {
        match self {
            MisspecVariant::Correct => "correct",
            MisspecVariant::A => "a",
            MisspecVariant::B => "b",
        }
    }
}

/// Declarative description of a synthetic dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub generator: SyntheticGenerator,
    pub num_samples: usize,
    pub seed: u64,
}

/// Dataset file formats understood by [`DatasetConfig::load`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FileFormat {
    Libsvm,
    Csv,
    /// The crate's own versioned text dump.
    Dump,
}

/// File-backed dataset source.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileSourceConfig {
    pub path: PathBuf,
    pub format: FileFormat,
    /// Required for CSV.
    #[serde(default)]
    pub target_column: Option<String>,
    pub task: Task,
    /// Standardize features after loading. On by default for real datasets.
    #[serde(default = "default_true")]
    pub standardize: bool,
}

fn default_true() -> bool {
    true
}

/// Where a dataset comes from: a synthetic generator or a file on disk.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetConfig {
    Synthetic(SyntheticSpec),
    File(FileSourceConfig),
}

impl DatasetConfig {
    pub fn load(&self) -> Result<Dataset> {
        match self {
            DatasetConfig::Synthetic(spec) => generate(spec),
            DatasetConfig::File(f) => {
                let file = File::open(&f.path).map_err(|e| {
                    Error::Config(format!(
                        "cannot open dataset file '{}': {e}",
                        f.path.display()
                    ))
                })?;
                let reader = BufReader::new(file);
                let data = match f.format {
                    FileFormat::Libsvm => {
                        if f.task != Task::Binary {
                            return Err(Error::Config(
                                "libsvm sources are binary classification".into(),
                            ));
                        }
                        parse_libsvm(reader)?
                    }
                    FileFormat::Csv => {
                        let target = f.target_column.as_deref().ok_or_else(|| {
                            Error::Config("csv datasets need a target_column".into())
                        })?;
                        parse_csv(reader, target, f.task)?
                    }
                    FileFormat::Dump => read_dataset(reader)?,
                };
                Ok(if f.standardize {
                    standardize(&data).0
                } else {
                    data
                })
            }
        }
    }
}

/// Model section of a config.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub kind: ModelKind,
    #[serde(default = "default_true")]
    pub bias: bool,
}

impl ModelConfig {
    pub fn build(&self) -> Result<ModelSpec> {
        ModelSpec::new(self.kind, self.bias)
    }
}

/// Class-conditional means and covariances for the classification datasets.
pub fn table3_parameters(variant: MisspecVariant) -> ([[f64; 2]; 2], [[[f64; 2]; 2]; 2]) {
    match variant {
        MisspecVariant::Correct => (
            [[1.0, 1.0], [-1.0, -1.0]],
            [[[2.0, 0.0], [0.0, 2.0]], [[2.0, 0.0], [0.0, 2.0]]],
        ),
        MisspecVariant::A => (
            [[1.5, 1.5], [-1.5, -1.5]],
            [[[3.0, 0.0], [0.0, 3.0]], [[1.0, 0.0], [0.0, 1.0]]],
        ),
        MisspecVariant::B => (
            [[-1.0, -1.0], [1.0, 1.0]],
            [[[1.5, -0.9], [-0.9, 1.5]], [[1.5, 0.9], [0.9, 1.5]]],
        ),
    }
}

/// Generate a dataset. Deterministic given the spec.
pub fn generate(spec: &SyntheticSpec) -> Result<Dataset> {
    if spec.num_samples == 0 {
        return Err(Error::Config("generator needs at least one sample".into()));
    }
    let n = spec.num_samples;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    match spec.generator {
        SyntheticGenerator::Fig1Lognormal => {
            let lognormal = LogNormal::new(0.0, 0.75).expect("valid lognormal");
            let mut xs = Vec::with_capacity(n);
            let mut ys = Vec::with_capacity(n);
            for _ in 0..n {
                let x: f64 = lognormal.sample(&mut rng);
                let eps: f64 = StandardNormal.sample(&mut rng);
                xs.push(x);
                ys.push(2.0 + 2.0 * x + eps);
            }
            Dataset::new(
                DMatrix::from_column_slice(n, 1, &xs),
                Targets::Real(DVector::from_vec(ys)),
                Task::Regression,
            )
        }
        SyntheticGenerator::Table3Classification(variant) => {
            let (means, covs) = table3_parameters(variant);
            // Cholesky factors of the 2x2 covariances.
            let chol: Vec<[[f64; 2]; 2]> = covs
                .iter()
                .map(|c| {
                    let l11 = c[0][0].sqrt();
                    let l21 = c[1][0] / l11;
                    let l22 = (c[1][1] - l21 * l21).sqrt();
                    [[l11, 0.0], [l21, l22]]
                })
                .collect();
            let coin = Uniform::new(0.0, 1.0).expect("valid uniform");
            let mut features = Vec::with_capacity(2 * n);
            let mut labels = Vec::with_capacity(n);
            for _ in 0..n {
                let y = usize::from(coin.sample(&mut rng) < 0.5);
                let z0: f64 = StandardNormal.sample(&mut rng);
                let z1: f64 = StandardNormal.sample(&mut rng);
                let l = &chol[y];
                features.push(means[y][0] + l[0][0] * z0);
                features.push(means[y][1] + l[1][0] * z0 + l[1][1] * z1);
                labels.push(y);
            }
            Dataset::new(
                DMatrix::from_row_slice(n, 2, &features),
                Targets::Labels(labels),
                Task::Binary,
            )
        }
        SyntheticGenerator::Table4Regression(variant) => {
            let mut xs = Vec::with_capacity(n);
            let mut ys = Vec::with_capacity(n);
            for _ in 0..n {
                let x: f64 = StandardNormal.sample(&mut rng);
                let eps: f64 = StandardNormal.sample(&mut rng);
                let y = match variant {
                    MisspecVariant::Correct => x + eps,
                    MisspecVariant::A => x + 2.0 * eps,
                    MisspecVariant::B => x + 0.5 * x * x + eps,
                };
                xs.push(x);
                ys.push(y);
            }
            Dataset::new(
                DMatrix::from_column_slice(n, 1, &xs),
                Targets::Real(DVector::from_vec(ys)),
                Task::Regression,
            )
        }
    }
}

/// Map raw binary labels onto `{0, 1}`.
///
/// Accepted conventions, in order: `{0, 1}` as-is; `{-1, +1}` with `-1 -> 0`;
/// `{1, 2}` with `1 -> 0` when a `2` is present; otherwise any two distinct
/// integer values map smaller -> 0, larger -> 1 (this covers files labeled
/// e.g. `{2, 4}`).
fn map_binary_labels(raw: &[f64], line_of: impl Fn(usize) -> usize) -> Result<Vec<usize>> {
    let as_int = |v: f64, idx: usize| -> Result<i64> {
        if v.fract() != 0.0 || !v.is_finite() {
            return Err(Error::Parse {
                line: line_of(idx),
                message: format!("label {v} is not an integer class label"),
            });
        }
        Ok(v as i64)
    };
    let ints: Vec<i64> = raw
        .iter()
        .enumerate()
        .map(|(i, &v)| as_int(v, i))
        .collect::<Result<_>>()?;
    let mut distinct: Vec<i64> = ints.clone();
    distinct.sort_unstable();
    distinct.dedup();

    let all_in = |set: &[i64]| ints.iter().all(|v| set.contains(v));
    if all_in(&[0, 1]) {
        return Ok(ints.into_iter().map(|v| v as usize).collect());
    }
    if all_in(&[-1, 1]) {
        return Ok(ints.into_iter().map(|v| usize::from(v == 1)).collect());
    }
    if all_in(&[1, 2]) && distinct.contains(&2) {
        return Ok(ints.into_iter().map(|v| usize::from(v == 2)).collect());
    }
    if distinct.len() == 2 {
        let hi = distinct[1];
        return Ok(ints.into_iter().map(|v| usize::from(v == hi)).collect());
    }
    Err(Error::Parse {
        line: line_of(0),
        message: format!("cannot map labels {distinct:?} onto binary classes"),
    })
}

/// Parse the LIBSVM text format: `label idx:value ...` per line with
/// strictly increasing 1-based indices, materialized densely. Blank lines
/// and lines starting with `#` are skipped. Labels `{-1,+1}` or `{1,2}` are
/// mapped to `{0,1}`.
pub fn parse_libsvm<R: BufRead>(reader: R) -> Result<Dataset> {
    let mut raw_labels: Vec<f64> = Vec::new();
    let mut rows: Vec<Vec<(usize, f64)>> = Vec::new();
    let mut label_lines: Vec<usize> = Vec::new();
    let mut max_index = 0usize;

    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let mut tokens = trimmed.split_whitespace();
        let label_tok = tokens.next().expect("non-empty line has a first token");
        let label: f64 = label_tok.parse().map_err(|_| Error::Parse {
            line: line_no,
            message: format!("non-numeric label '{label_tok}'"),
        })?;
        let mut entries: Vec<(usize, f64)> = Vec::new();
        let mut prev_index = 0usize;
        for tok in tokens {
            let (idx_str, val_str) = tok.split_once(':').ok_or_else(|| Error::Parse {
                line: line_no,
                message: format!("expected 'index:value', got '{tok}'"),
            })?;
            let index: usize = idx_str.parse().map_err(|_| Error::Parse {
                line: line_no,
                message: format!("non-numeric feature index '{idx_str}'"),
            })?;
            let value: f64 = val_str.parse().map_err(|_| Error::Parse {
                line: line_no,
                message: format!("non-numeric feature value '{val_str}'"),
            })?;
            if index < 1 {
                return Err(Error::Parse {
                    line: line_no,
                    message: "feature indices are 1-based".into(),
                });
            }
            if index <= prev_index {
                return Err(Error::Parse {
                    line: line_no,
                    message: format!("non-increasing feature index at line {line_no}"),
                });
            }
            prev_index = index;
            max_index = max_index.max(index);
            entries.push((index, value));
        }
        raw_labels.push(label);
        label_lines.push(line_no);
        rows.push(entries);
    }

    if rows.is_empty() {
        return Err(Error::Parse {
            line: 1,
            message: "no samples found".into(),
        });
    }
    if max_index == 0 {
        return Err(Error::Parse {
            line: 1,
            message: "no features found".into(),
        });
    }
    let labels = map_binary_labels(&raw_labels, |i| label_lines[i])?;
    let n = rows.len();
    let mut features = DMatrix::zeros(n, max_index);
    for (i, entries) in rows.iter().enumerate() {
        for &(index, value) in entries {
            features[(i, index - 1)] = value;
        }
    }
    Dataset::new(features, Targets::Labels(labels), Task::Binary)
}

/// Parse a headered all-numeric CSV: the named column becomes the target,
/// every other column a feature.
pub fn parse_csv<R: BufRead>(reader: R, target_column: &str, task: Task) -> Result<Dataset> {
    let mut lines = reader.lines().enumerate();
    let (_, header) = lines.next().ok_or(Error::Parse {
        line: 1,
        message: "missing header row".into(),
    })?;
    let header = header?;
    let columns: Vec<String> = header.split(',').map(|s| s.trim().to_string()).collect();
    let target_idx = columns
        .iter()
        .position(|c| c == target_column)
        .ok_or_else(|| Error::Parse {
            line: 1,
            message: format!(
                "target column '{target_column}' not found; available columns: {}",
                columns.join(", ")
            ),
        })?;

    let mut features: Vec<f64> = Vec::new();
    let mut raw_targets: Vec<f64> = Vec::new();
    let mut target_lines: Vec<usize> = Vec::new();
    let mut n = 0usize;
    for (idx, line) in lines {
        let line_no = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != columns.len() {
            return Err(Error::Parse {
                line: line_no,
                message: format!(
                    "ragged row: expected {} cells, got {}",
                    columns.len(),
                    cells.len()
                ),
            });
        }
        for (j, cell) in cells.iter().enumerate() {
            let value: f64 = cell.trim().parse().map_err(|_| Error::Parse {
                line: line_no,
                message: format!(
                    "non-numeric cell '{}' in column '{}'",
                    cell.trim(),
                    columns[j]
                ),
            })?;
            if j == target_idx {
                raw_targets.push(value);
                target_lines.push(line_no);
            } else {
                features.push(value);
            }
        }
        n += 1;
    }
    if n == 0 {
        return Err(Error::Parse {
            line: 1,
            message: "no data rows found".into(),
        });
    }
    let d = columns.len() - 1;
    if d == 0 {
        return Err(Error::Parse {
            line: 1,
            message: "need at least one feature column besides the target".into(),
        });
    }
    let features = DMatrix::from_row_slice(n, d, &features);
    let targets = match task {
        Task::Regression => Targets::Real(DVector::from_vec(raw_targets)),
        Task::Binary => Targets::Labels(map_binary_labels(&raw_targets, |i| target_lines[i])?),
        Task::Multiclass(c) => {
            let labels: Vec<usize> = raw_targets
                .iter()
                .enumerate()
                .map(|(i, &v)| {
                    if v.fract() == 0.0 && v >= 0.0 && (v as usize) < c {
                        Ok(v as usize)
                    } else {
                        Err(Error::Parse {
                            line: target_lines[i],
                            message: format!("label {v} is not in 0..{c}"),
                        })
                    }
                })
                .collect::<Result<_>>()?;
            Targets::Labels(labels)
        }
    };
    Dataset::new(features, targets, task)
}

/// Per-column affine transform applied by [`standardize`]. Zero-variance
/// columns are flagged and passed through unscaled.
#[derive(Debug, Clone)]
pub struct StandardizationReport {
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
    pub zero_variance: Vec<bool>,
}

/// Standardize features to zero mean and unit (population) variance per
/// column. Idempotent up to floating-point roundoff.
pub fn standardize(data: &Dataset) -> (Dataset, StandardizationReport) {
    let n = data.num_samples();
    let d = data.input_dim();
    let nf = n as f64;
    let mut means = vec![0.0; d];
    let mut stds = vec![1.0; d];
    let mut zero_variance = vec![false; d];
    let mut features = data.features().clone();
    for j in 0..d {
        let mean = features.column(j).sum() / nf;
        let var = features
            .column(j)
            .iter()
            .map(|v| (v - mean) * (v - mean))
            .sum::<f64>()
            / nf;
        means[j] = mean;
        if var <= 0.0 {
            zero_variance[j] = true;
            continue;
        }
        let std = var.sqrt();
        stds[j] = std;
        for i in 0..n {
            features[(i, j)] = (features[(i, j)] - mean) / std;
        }
    }
    let out = Dataset::new(features, data.targets().clone(), data.task())
        .expect("standardization preserves validity");
    (
        out,
        StandardizationReport {
            means,
            stds,
            zero_variance,
        },
    )
}

const DUMP_MAGIC: &str = "curvlab-dataset v1";

/// Write the versioned text dump. Floats are printed with Rust's shortest
/// round-trip formatting, so reading the dump back reproduces the dataset
/// exactly.
pub fn write_dataset<W: Write>(data: &Dataset, mut w: W) -> std::io::Result<()> {
    writeln!(w, "{DUMP_MAGIC}")?;
    match data.task() {
        Task::Regression => writeln!(w, "task regression")?,
        Task::Binary => writeln!(w, "task binary")?,
        Task::Multiclass(c) => writeln!(w, "task multiclass {c}")?,
    }
    writeln!(w, "shape {} {}", data.num_samples(), data.input_dim())?;
    for i in 0..data.num_samples() {
        match data.targets() {
            Targets::Real(y) => write!(w, "{}", y[i])?,
            Targets::Labels(y) => write!(w, "{}", y[i])?,
        }
        for j in 0..data.input_dim() {
            write!(w, " {}", data.features()[(i, j)])?;
        }
        writeln!(w)?;
    }
    Ok(())
}

/// Read a dump produced by [`write_dataset`].
pub fn read_dataset<R: BufRead>(reader: R) -> Result<Dataset> {
    let mut lines = reader.lines().enumerate();
    let mut next_line = |expect: &str| -> Result<(usize, String)> {
        match lines.next() {
            Some((idx, line)) => Ok((idx + 1, line?)),
            None => Err(Error::Parse {
                line: 0,
                message: format!("missing {expect}"),
            }),
        }
    };
    let (line_no, magic) = next_line("header")?;
    if magic.trim() != DUMP_MAGIC {
        return Err(Error::Parse {
            line: line_no,
            message: format!("unsupported header '{}'", magic.trim()),
        });
    }
    let (line_no, task_line) = next_line("task line")?;
    let task_tokens: Vec<&str> = task_line.split_whitespace().collect();
    let task = match task_tokens.as_slice() {
        ["task", "regression"] => Task::Regression,
        ["task", "binary"] => Task::Binary,
        ["task", "multiclass", c] => Task::Multiclass(c.parse().map_err(|_| Error::Parse {
            line: line_no,
            message: format!("bad class count '{c}'"),
        })?),
        _ => {
            return Err(Error::Parse {
                line: line_no,
                message: "bad task line".into(),
            });
        }
    };
    let (line_no, shape_line) = next_line("shape line")?;
    let shape_tokens: Vec<&str> = shape_line.split_whitespace().collect();
    let (n, d) = match shape_tokens.as_slice() {
        ["shape", n, d] => {
            let n: usize = n.parse().map_err(|_| Error::Parse {
                line: line_no,
                message: "bad sample count".into(),
            })?;
            let d: usize = d.parse().map_err(|_| Error::Parse {
                line: line_no,
                message: "bad feature count".into(),
            })?;
            (n, d)
        }
        _ => {
            return Err(Error::Parse {
                line: line_no,
                message: "bad shape line".into(),
            });
        }
    };

    let mut features = DMatrix::zeros(n, d);
    let mut reals = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let (line_no, row) = next_line("data row")?;
        let tokens: Vec<&str> = row.split_whitespace().collect();
        if tokens.len() != d + 1 {
            return Err(Error::Parse {
                line: line_no,
                message: format!("expected {} values, got {}", d + 1, tokens.len()),
            });
        }
        match task {
            Task::Regression => reals.push(tokens[0].parse::<f64>().map_err(|_| Error::Parse {
                line: line_no,
                message: "bad target".into(),
            })?),
            _ => labels.push(tokens[0].parse::<usize>().map_err(|_| Error::Parse {
                line: line_no,
                message: "bad label".into(),
            })?),
        }
        for j in 0..d {
            features[(i, j)] = tokens[j + 1].parse().map_err(|_| Error::Parse {
                line: line_no,
                message: format!("bad feature value '{}'", tokens[j + 1]),
            })?;
        }
    }
    let targets = match task {
        Task::Regression => Targets::Real(DVector::from_vec(reals)),
        _ => Targets::Labels(labels),
    };
    Dataset::new(features, targets, task)
}
