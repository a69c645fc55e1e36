//! Grid search selection, pipeline emission contracts (manifest
//! completeness, reparseable tables), and reproducibility.

use std::fs;
use std::io::BufReader;
use std::path::Path;

use curvlab::data::{
    generate, parse_csv, DatasetConfig, ModelConfig, SyntheticGenerator, SyntheticSpec,
};
use curvlab::experiment::{
    grid_search, reproduce_fig1, reproduce_fig2, reproduce_fig3, Fig1Config, Fig2Config,
    Fig3Config, Fig3Hyperparams, FixedCell, GridConfig, LogGrid, MultistartConfig, OutputFormat,
    OutputSink, Table,
};
use curvlab::model::{ModelKind, ModelSpec, Task};
use curvlab::optim::Method;
use nalgebra::DVector;

fn temp_dir(name: &str) -> std::path::PathBuf {
    let dir = std::env::temp_dir().join(format!("curvlab_test_{name}_{}", std::process::id()));
    let _ = fs::remove_dir_all(&dir);
    dir
}

fn fig1_data() -> curvlab::model::Dataset {
    generate(&SyntheticSpec {
        generator: SyntheticGenerator::Fig1Lognormal,
        num_samples: 1000,
        seed: 0,
    })
    .unwrap()
}

/// Every emitted csv must parse through the crate's own reader.
fn assert_reparseable(dir: &Path) {
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap();
    let outputs = manifest["outputs"].as_array().unwrap();
    assert!(!outputs.is_empty());
    for name in outputs {
        let name = name.as_str().unwrap();
        let path = dir.join(name);
        assert!(path.exists(), "manifest references missing file {name}");
        if name.ends_with(".csv") {
            let text = fs::read_to_string(&path).unwrap();
            let header = text.lines().next().unwrap().to_string();
            let target = header.split(',').next().unwrap().to_string();
            let has_rows = text.lines().count() > 1;
            if has_rows {
                parse_csv(BufReader::new(text.as_bytes()), &target, Task::Regression)
                    .unwrap_or_else(|e| panic!("{name} is not reparseable: {e}"));
            }
        }
    }
    // Completeness: every file in the directory except the manifest is
    // referenced exactly once.
    let mut on_disk: Vec<String> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .filter(|n| n != "manifest.json")
        .collect();
    on_disk.sort();
    let mut listed: Vec<String> = outputs
        .iter()
        .map(|v| v.as_str().unwrap().to_string())
        .collect();
    listed.sort();
    assert_eq!(
        on_disk, listed,
        "manifest must list every output exactly once"
    );
}

#[test]
fn grid_search_prefers_the_newton_like_cell() {
    let data = fig1_data();
    let model = ModelSpec::new(ModelKind::LinearGaussian, true).unwrap();
    let grid = GridConfig {
        methods: vec![Method::Ngd],
        gamma: LogGrid {
            start: -2.0,
            stop: 0.0,
            num: 3,
        },
        lambda: LogGrid {
            start: -10.0,
            stop: -2.0,
            num: 3,
        },
        iterations: 100,
        seed: 0,
    };
    let result = grid_search(&grid, &model, &data, &DVector::zeros(2)).unwrap();
    let best = result.best_for(Method::Ngd).unwrap();
    // The unit-step, tiny-damping cell is Newton's method on this quadratic;
    // the winner must match its loss (ties can pick a loss-equivalent cell).
    let newton = result
        .cells
        .iter()
        .find(|c| (c.gamma - 1.0).abs() < 1e-12 && (c.lambda - 1e-10).abs() < 1e-22)
        .unwrap();
    assert!(best.final_loss <= newton.final_loss + 1e-15);
    assert!((best.gamma - 1.0).abs() < 1e-12);
}

#[test]
fn all_diverged_grid_reports_no_viable_cell() {
    let data = fig1_data();
    let model = ModelSpec::new(ModelKind::LinearGaussian, true).unwrap();
    let grid = GridConfig {
        methods: vec![Method::Gd],
        gamma: LogGrid {
            start: 10.0,
            stop: 12.0,
            num: 2,
        },
        lambda: LogGrid {
            start: -10.0,
            stop: -10.0,
            num: 1,
        },
        iterations: 20,
        seed: 0,
    };
    let result = grid_search(&grid, &model, &data, &DVector::from_vec(vec![1.0, 1.0])).unwrap();
    assert!(result.best_for(Method::Gd).is_none());
    assert!(result.cells.iter().all(|c| c.diverged));
    assert!(result.cells.iter().all(|c| c.final_loss.is_finite()));
}

#[test]
fn grid_search_is_reproducible_including_tie_breaks() {
    let data = fig1_data();
    let model = ModelSpec::new(ModelKind::LinearGaussian, true).unwrap();
    let grid = GridConfig {
        methods: vec![Method::Gd, Method::Ngd, Method::Efgd],
        gamma: LogGrid {
            start: -6.0,
            stop: 2.0,
            num: 5,
        },
        lambda: LogGrid {
            start: -10.0,
            stop: 0.0,
            num: 3,
        },
        iterations: 50,
        seed: 7,
    };
    let a = grid_search(&grid, &model, &data, &DVector::zeros(2)).unwrap();
    let b = grid_search(&grid, &model, &data, &DVector::zeros(2)).unwrap();
    for (ca, cb) in a.cells.iter().zip(&b.cells) {
        assert_eq!(ca.final_loss.to_bits(), cb.final_loss.to_bits());
        assert_eq!(ca.diverged, cb.diverged);
    }
    for ((ma, ba), (mb, bb)) in a.best.iter().zip(&b.best) {
        assert_eq!(ma, mb);
        assert_eq!(
            ba.map(|c| (c.gamma, c.lambda)),
            bb.map(|c| (c.gamma, c.lambda))
        );
    }
}

#[test]
fn fig1_pipeline_emits_contracted_tables_and_a_complete_manifest() {
    let dir = temp_dir("fig1");
    let mut sink = OutputSink::new(&dir, OutputFormat::Csv).unwrap();
    let cfg = Fig1Config {
        iterations: 50,
        field_resolution: 4,
        // Two methods requested: the field file carries 2 coordinates plus
        // a 2-vector per method, six columns in total.
        field_methods: vec![Method::Ngd, Method::Efgd],
        ..Fig1Config::default()
    };
    let summary = reproduce_fig1(&cfg, &mut sink).unwrap();
    assert_eq!(summary.runs.len(), 12);
    sink.finish(0, 1).unwrap();

    let field = fs::read_to_string(dir.join("fig1_field.csv")).unwrap();
    let header = field.lines().next().unwrap();
    assert_eq!(header.split(',').count(), 6, "header {header}");
    assert_eq!(field.lines().count() - 1, 16);

    assert_reparseable(&dir);
    let _ = fs::remove_dir_all(&dir);
}

#[test]
fn fig2_pipeline_reports_all_six_cases() {
    let dir = temp_dir("fig2");
    let mut sink = OutputSink::new(&dir, OutputFormat::Csv).unwrap();
    let cfg = Fig2Config {
        num_samples: 400,
        ..Fig2Config::default()
    };
    let summary = reproduce_fig2(&cfg, &mut sink).unwrap();
    sink.finish(0, 2).unwrap();
    assert_eq!(summary.cases.len(), 6);
    assert!(summary.cases.iter().all(|c| c.gap.is_finite()));
    assert!(summary
        .cases
        .iter()
        .filter(|c| c.accuracy.is_some())
        .all(|c| (0.0..=1.0).contains(&c.accuracy.unwrap())));
    assert_reparseable(&dir);
    let _ = fs::remove_dir_all(&dir);
}

#[test]
fn fig3_pipeline_with_fixed_cells_and_multistart() {
    let dir = temp_dir("fig3");
    let mut sink = OutputSink::new(&dir, OutputFormat::Csv).unwrap();
    let cfg = Fig3Config {
        dataset: DatasetConfig::Synthetic(SyntheticSpec {
            generator: SyntheticGenerator::Fig1Lognormal,
            num_samples: 400,
            seed: 0,
        }),
        model: ModelConfig {
            kind: ModelKind::LinearGaussian,
            bias: true,
        },
        hyperparams: Fig3Hyperparams::Fixed(vec![
            FixedCell {
                method: Method::Gd,
                gamma: 1e-3,
                lambda: 0.0,
            },
            FixedCell {
                method: Method::Ngd,
                gamma: 0.5,
                lambda: 1e-10,
            },
            FixedCell {
                method: Method::Efgd,
                gamma: 1e-2,
                lambda: 1e-8,
            },
        ]),
        iterations: 60,
        multistart: Some(MultistartConfig { count: 6, seed: 1 }),
    };
    let summary = reproduce_fig3(&cfg, &mut sink).unwrap();
    sink.finish(0, 3).unwrap();
    assert_eq!(summary.winners.len(), 3);
    assert_eq!(summary.cosine_series.len(), 61);
    assert_eq!(summary.multistart.len(), 6);
    assert!(summary.min_cosine() >= -1.0 - 1e-12);
    assert_reparseable(&dir);
    let _ = fs::remove_dir_all(&dir);
}

#[test]
fn one_dimensional_problems_have_unit_cosine_everywhere() {
    // Scalars preserve sign, so the EF and Fisher directions coincide.
    let dir = temp_dir("fig3_d1");
    let mut sink = OutputSink::new(&dir, OutputFormat::Csv).unwrap();
    let cfg = Fig3Config {
        dataset: DatasetConfig::Synthetic(SyntheticSpec {
            generator: SyntheticGenerator::Table4Regression(curvlab::data::MisspecVariant::Correct),
            num_samples: 200,
            seed: 4,
        }),
        model: ModelConfig {
            kind: ModelKind::LinearGaussian,
            bias: false,
        },
        hyperparams: Fig3Hyperparams::Fixed(vec![FixedCell {
            method: Method::Efgd,
            gamma: 1e-2,
            lambda: 1e-8,
        }]),
        iterations: 30,
        multistart: None,
    };
    let summary = reproduce_fig3(&cfg, &mut sink).unwrap();
    sink.finish(0, 6).unwrap();
    assert!(!summary.cosine_series.is_empty());
    for c in summary.cosine_series.iter().filter(|c| c.is_finite()) {
        assert!((c - 1.0).abs() <= 1e-12, "cosine {c}");
    }
    let _ = fs::remove_dir_all(&dir);
}

#[test]
fn exact_ties_prefer_smaller_step_size_then_smaller_damping() {
    // Noiseless targets and a start at the minimizer: the gradient is zero,
    // every run stays put, and every cell records exactly the same loss.
    let features = nalgebra::DMatrix::from_row_slice(6, 1, &[0.0, 1.0, 2.0, 3.0, -1.0, -2.0]);
    let theta_star = DVector::from_vec(vec![1.0, -0.5]);
    let y = nalgebra::DVector::from_fn(6, |i, _| theta_star[0] + theta_star[1] * features[(i, 0)]);
    let data =
        curvlab::model::Dataset::new(features, curvlab::model::Targets::Real(y), Task::Regression)
            .unwrap();
    let model = ModelSpec::new(ModelKind::LinearGaussian, true).unwrap();
    let grid = GridConfig {
        methods: vec![Method::Ngd],
        gamma: LogGrid {
            start: -3.0,
            stop: 0.0,
            num: 4,
        },
        lambda: LogGrid {
            start: -8.0,
            stop: -4.0,
            num: 3,
        },
        iterations: 5,
        seed: 0,
    };
    let result = grid_search(&grid, &model, &data, &theta_star).unwrap();
    assert!(result
        .cells
        .iter()
        .all(|c| c.final_loss == 0.0 && !c.diverged));
    let best = result.best_for(Method::Ngd).unwrap();
    assert!(
        (best.gamma - 1e-3).abs() <= 1e-15,
        "tie should pick the smallest gamma"
    );
    assert!(
        (best.lambda - 1e-8).abs() <= 1e-20,
        "then the smallest lambda"
    );
}

#[test]
fn efgd_multistart_runs_end_lower_when_started_nearer_the_optimum() {
    let dir = temp_dir("multistart");
    let mut sink = OutputSink::new(&dir, OutputFormat::Csv).unwrap();
    let cfg = Fig3Config {
        dataset: DatasetConfig::Synthetic(SyntheticSpec {
            generator: SyntheticGenerator::Fig1Lognormal,
            num_samples: 1000,
            seed: 0,
        }),
        model: ModelConfig {
            kind: ModelKind::LinearGaussian,
            bias: true,
        },
        hyperparams: Fig3Hyperparams::Fixed(vec![FixedCell {
            method: Method::Efgd,
            gamma: 1e-2,
            lambda: 1e-8,
        }]),
        iterations: 100,
        multistart: Some(MultistartConfig { count: 16, seed: 2 }),
    };
    let summary = reproduce_fig3(&cfg, &mut sink).unwrap();
    sink.finish(0, 5).unwrap();
    let mut pairs = summary.multistart.clone();
    pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    let half = pairs.len() / 2;
    let near: f64 = pairs[..half].iter().map(|p| p.1).sum::<f64>() / half as f64;
    let far: f64 = pairs[half..].iter().map(|p| p.1).sum::<f64>() / half as f64;
    assert!(
        near < far,
        "near-start mean {near} should beat far-start mean {far}"
    );
    assert!(pairs.first().unwrap().1 < pairs.last().unwrap().1);
    let _ = fs::remove_dir_all(&dir);
}

#[test]
fn json_mirrors_share_field_names_with_csv() {
    let dir = temp_dir("json");
    let mut sink = OutputSink::new(&dir, OutputFormat::Json).unwrap();
    let mut table = Table::new(&["alpha", "beta"]);
    table.push(vec![1.0, 2.0]);
    table.push(vec![f64::NAN, 4.0]);
    sink.write_table("demo", &table).unwrap();
    sink.finish(0, 4).unwrap();
    let value: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.join("demo.json")).unwrap()).unwrap();
    assert_eq!(value[0]["alpha"], 1.0);
    assert_eq!(value[0]["beta"], 2.0);
    assert!(value[1]["alpha"].is_null());
    let _ = fs::remove_dir_all(&dir);
}
