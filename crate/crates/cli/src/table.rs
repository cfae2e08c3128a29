//! Grids of runs reproducing the comparison tables. Every finished run leaves
//! its rows in `metrics.csv`; runs whose test row is already there are not
//! repeated, so an interrupted table resumes where it stopped.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use anyhow::Result;
use rayon::prelude::*;

use crate::config::RunConfig;
use crate::metrics::{self, MetricsRecord};
use crate::runner::{mean, run_seed};

pub const TASKS: [&str; 4] = ["symmetry", "diagonal", "power", "trace"];
/// The baseline of Maron et al. is not implemented, so its row is absent.
pub const TABLE1_MODELS: [&str; 3] = ["fnn", "reynet", "red-reynet"];
pub const TABLE2_LOSSES: [&str; 2] = ["mse", "corner"];
pub const DEFAULT_NS: [usize; 4] = [3, 5, 10, 20];

#[derive(Clone, Debug)]
pub struct TableOptions {
    pub which: Which,
    pub ns: Vec<usize>,
    pub tasks: Vec<String>,
    /// Everything but model, task, size and loss comes from here.
    pub base: RunConfig,
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Which {
    Table1,
    Table2,
}

impl Which {
    pub fn from_name(s: &str) -> Option<Self> {
        match s {
            "table1" => Some(Which::Table1),
            "table2" => Some(Which::Table2),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Which::Table1 => "table1",
            Which::Table2 => "table2",
        }
    }
}

/// One cell's run configuration (all seeds).
fn cell(base: &RunConfig, model: &str, task: &str, n: usize, loss: &str) -> RunConfig {
    RunConfig {
        model: model.into(),
        task: task.into(),
        n_train: n,
        n_test: Vec::new(),
        loss: loss.into(),
        pooling: None,
        restrict: false,
        train_data: None,
        test_data: None,
        ..base.clone()
    }
}

fn cells(opts: &TableOptions) -> Vec<RunConfig> {
    let mut out = Vec::new();
    match opts.which {
        Which::Table1 => {
            for task in &opts.tasks {
                for &n in &opts.ns {
                    for model in TABLE1_MODELS {
                        out.push(cell(&opts.base, model, task, n, "mse"));
                    }
                }
            }
        }
        Which::Table2 => {
            for &n in &opts.ns {
                for loss in TABLE2_LOSSES {
                    out.push(cell(&opts.base, "red-reynet", "symmetry", n, loss));
                }
            }
        }
    }
    out
}

fn test_key(cfg: &RunConfig, seed: u64) -> MetricsRecord {
    MetricsRecord {
        task: cfg.task.clone(),
        model: cfg.model.clone(),
        loss: cfg.loss.clone(),
        n_train: cfg.n_train,
        n_test: cfg.n_train,
        seed,
        epoch: 0,
        split: "test".into(),
        mse: 0.0,
    }
}

pub fn metrics_path(out: &Path) -> PathBuf {
    out.join("metrics.csv")
}

pub fn layout_path(out: &Path, which: Which) -> PathBuf {
    out.join(format!("{}.csv", which.name()))
}

/// Mean final test MSE per cell, in layout order.
#[derive(Clone, Debug, PartialEq)]
pub struct CellMean {
    pub model: String,
    pub task: String,
    pub loss: String,
    pub n: usize,
    pub mse: f64,
    pub seeds: usize,
}

/// Run the missing part of the grid, then write the layout CSV. Returns the
/// number of runs executed and the cell means.
pub fn run_table(opts: &TableOptions) -> Result<(usize, Vec<CellMean>)> {
    std::fs::create_dir_all(&opts.out)?;
    let mpath = metrics_path(&opts.out);
    let cells = cells(opts);
    for c in &cells {
        c.validate()?;
    }
    let done: HashSet<_> = metrics::read(&mpath)?
        .iter()
        .filter(|r| r.split == "test")
        .map(MetricsRecord::run_key)
        .collect();
    let todo: Vec<(&RunConfig, u64)> = cells
        .iter()
        .flat_map(|c| c.seeds.iter().map(move |&s| (c, s)))
        .filter(|(c, s)| !done.contains(&test_key(c, *s).run_key()))
        .collect();
    let ran = todo.len();
    // runs finish in any order; each appends its own rows as soon as it is done
    let lock = std::sync::Mutex::new(());
    crate::with_pool(|| {
        todo.par_iter().try_for_each(|(c, s)| -> Result<()> {
            let outcome = run_seed(c, *s)?;
            let _guard = lock.lock().expect("metrics lock");
            metrics::append(&mpath, &outcome.records)
        })
    })??;

    let rows = metrics::read(&mpath)?;
    let means: Vec<CellMean> = cells
        .iter()
        .map(|c| {
            let values: Vec<f64> = c
                .seeds
                .iter()
                .filter_map(|&s| {
                    let key = test_key(c, s).run_key();
                    rows.iter().rev().find(|r| r.run_key() == key).map(|r| r.mse)
                })
                .collect();
            CellMean {
                model: c.model.clone(),
                task: c.task.clone(),
                loss: c.loss.clone(),
                n: c.n_train,
                mse: mean(&values),
                seeds: values.len(),
            }
        })
        .collect();
    write_layout(&layout_path(&opts.out, opts.which), opts, &means)?;
    Ok((ran, means))
}

/// Table 1: one row per model, one column per (task, n). Table 2: one row per
/// n, one column per loss.
fn write_layout(path: &Path, opts: &TableOptions, means: &[CellMean]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let find = |pred: &dyn Fn(&CellMean) -> bool| {
        means
            .iter()
            .find(|m| pred(m))
            .map_or_else(String::new, |m| format!("{:.3e}", m.mse))
    };
    match opts.which {
        Which::Table1 => {
            let mut header = vec!["model".to_string()];
            for t in &opts.tasks {
                for n in &opts.ns {
                    header.push(format!("{t} n={n}"));
                }
            }
            w.write_record(&header)?;
            for model in TABLE1_MODELS {
                let mut row = vec![model.to_string()];
                for t in &opts.tasks {
                    for &n in &opts.ns {
                        row.push(find(&|m| m.model == model && &m.task == t && m.n == n));
                    }
                }
                w.write_record(&row)?;
            }
        }
        Which::Table2 => {
            w.write_record(["n", "mse", "corner"])?;
            for &n in &opts.ns {
                let mut row = vec![n.to_string()];
                for loss in TABLE2_LOSSES {
                    row.push(find(&|m| m.loss == loss && m.n == n));
                }
                w.write_record(&row)?;
            }
        }
    }
    w.flush()?;
    Ok(())
}
