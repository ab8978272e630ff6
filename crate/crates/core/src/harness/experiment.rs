use std::fs;
use std::path::{Path, PathBuf};

use super::config::ExperimentConfig;
use super::report::{ResultRow, ResultTable};
use crate::dataset::{
    derive_seed, generate_dataset, generate_to_dir, load_dataset, split_by_distance, SplitSpec,
    TurntableDataset, MANIFEST,
};
use crate::error::Result;
use crate::nn::{build_model, save_checkpoint, Arch, ModelGraph};
use crate::pipeline::PipelineVariant;
use crate::train::{evaluate, train_model, Preprocessor};

/// One point of the experiment matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cell {
    pub arch: Arch,
    pub variant: PipelineVariant,
    pub train_distance: f64,
    pub trial: usize,
}

impl Cell {
    pub fn file_stem(&self) -> String {
        format!(
            "{}_{}_{:.1}_{}",
            self.arch.name(),
            self.variant.tag(),
            self.train_distance,
            self.trial
        )
    }
}

/// Outputs beyond the returned table.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Each finished cell is written here as its own CSV.
    pub cell_dir: Option<PathBuf>,
    /// Each trained model is checkpointed here.
    pub checkpoint_dir: Option<PathBuf>,
}

/// Matrix order: architecture, variant, distance, trial.
pub fn cells(cfg: &ExperimentConfig) -> Vec<Cell> {
    let mut out = Vec::new();
    for &arch in &cfg.architectures {
        for &variant in &cfg.variants {
            for &train_distance in &cfg.train_distances {
                for trial in 0..cfg.trials {
                    out.push(Cell {
                        arch,
                        variant,
                        train_distance,
                        trial,
                    });
                }
            }
        }
    }
    out
}

/// Seed for a cell's weights and data order. Shared across architectures and
/// variants so that they differ only in what is being compared.
pub fn cell_seed(cfg: &ExperimentConfig, cell: &Cell) -> u64 {
    derive_seed(
        cfg.seed,
        &[cell.train_distance.to_bits(), cell.trial as u64],
    )
}

/// Loads the configured dataset, rendering it first if needed.
pub fn obtain_dataset(cfg: &ExperimentConfig) -> Result<TurntableDataset> {
    match &cfg.data_dir {
        Some(dir) if dir.join(MANIFEST).exists() => load_dataset(dir),
        Some(dir) => {
            log::info!(
                "rendering {} images into {}",
                cfg.dataset.total(),
                dir.display()
            );
            generate_to_dir(&cfg.dataset, cfg.seed, dir)?;
            load_dataset(dir)
        }
        None => generate_dataset(&cfg.dataset, cfg.seed),
    }
}

/// Trains and scores one cell. Train accuracy is measured in eval mode on the
/// un-augmented training split.
pub fn run_cell(
    cfg: &ExperimentConfig,
    ds: &TurntableDataset,
    cell: &Cell,
) -> Result<(ResultRow, ModelGraph)> {
    let split = SplitSpec::train_on(ds, cell.train_distance)?;
    let (train, test) = split_by_distance(ds, &split)?;
    let prep = Preprocessor::new(cell.variant, cfg.input_side)?;
    let seed = cell_seed(cfg, cell);
    let mut model = build_model(cell.arch, prep.channels(), ds.objects, cfg.input_side, seed)?;
    let report = train_model(&mut model, &prep, &train, &cfg.optim, seed)?;
    let train_acc = evaluate(&model, &prep, &train)?;
    let test_acc = if test.is_empty() {
        None
    } else {
        Some(evaluate(&model, &prep, &test)?)
    };
    let row = ResultRow {
        architecture: cell.arch.name().to_string(),
        variant: cell.variant.tag().to_string(),
        train_distance: cell.train_distance,
        trial: cell.trial,
        train_acc: Some(train_acc),
        test_acc,
        epoch_seconds: Some(report.mean_epoch_seconds()),
        error: String::new(),
    };
    Ok((row, model))
}

/// Runs every cell against an already-loaded dataset. A failing cell becomes
/// an error row and the matrix carries on.
pub fn run_matrix(
    cfg: &ExperimentConfig,
    ds: &TurntableDataset,
    opts: &RunOptions,
) -> Result<ResultTable> {
    cfg.validate()?;
    for dir in [&opts.cell_dir, &opts.checkpoint_dir].into_iter().flatten() {
        fs::create_dir_all(dir)?;
    }
    let all = cells(cfg);
    let mut table = ResultTable::default();
    for (i, cell) in all.iter().enumerate() {
        log::info!("cell {}/{}: {}", i + 1, all.len(), cell.file_stem());
        let row = match run_cell(cfg, ds, cell) {
            Ok((row, model)) => {
                if let Some(dir) = &opts.checkpoint_dir {
                    let path = dir.join(format!("{}.gbnn", cell.file_stem()));
                    save_checkpoint(&path, &model, cfg.input_side)?;
                }
                row
            }
            Err(e) => {
                log::error!("cell {} failed: {e}", cell.file_stem());
                ResultRow {
                    architecture: cell.arch.name().to_string(),
                    variant: cell.variant.tag().to_string(),
                    train_distance: cell.train_distance,
                    trial: cell.trial,
                    train_acc: None,
                    test_acc: None,
                    epoch_seconds: None,
                    error: e.to_string(),
                }
            }
        };
        if let Some(dir) = &opts.cell_dir {
            write_cell(dir, i, &row)?;
        }
        table.rows.push(row);
    }
    Ok(table)
}

fn write_cell(dir: &Path, index: usize, row: &ResultRow) -> Result<()> {
    ResultTable {
        rows: vec![row.clone()],
    }
    .write_csv_atomic(dir.join(format!("cell-{index:05}.csv")))
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ResultTable> {
    run_experiment_with(cfg, &RunOptions::default())
}

pub fn run_experiment_with(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<ResultTable> {
    cfg.validate()?;
    let ds = obtain_dataset(cfg)?;
    run_matrix(cfg, &ds, opts)
}
