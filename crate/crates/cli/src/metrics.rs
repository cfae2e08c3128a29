//! Metrics CSV: `task,model,loss,n_train,n_test,seed,epoch,split,mse`.

use std::fs::OpenOptions;
use std::path::Path;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub task: String,
    pub model: String,
    pub loss: String,
    pub n_train: usize,
    pub n_test: usize,
    pub seed: u64,
    pub epoch: usize,
    pub split: String,
    pub mse: f64,
}

pub const HEADER: &str = "task,model,loss,n_train,n_test,seed,epoch,split,mse";

impl MetricsRecord {
    /// Identity of a run, for resuming: everything but the epoch and value.
    pub fn run_key(&self) -> (String, String, String, usize, usize, u64, String) {
        (
            self.task.clone(),
            self.model.clone(),
            self.loss.clone(),
            self.n_train,
            self.n_test,
            self.seed,
            self.split.clone(),
        )
    }
}

/// Append rows, writing the header only when the file is new or empty.
pub fn append(path: &Path, rows: &[MetricsRecord]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    let fresh = std::fs::metadata(path).map_or(true, |m| m.len() == 0);
    let file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .with_context(|| format!("opening {}", path.display()))?;
    let mut w = csv::WriterBuilder::new().has_headers(fresh).from_writer(file);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read(path: &Path) -> Result<Vec<MetricsRecord>> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let mut r = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    let header: Vec<String> = r.headers()?.iter().map(str::to_owned).collect();
    if header.join(",") != HEADER {
        anyhow::bail!("{} does not have the metrics header", path.display());
    }
    Ok(r.deserialize().collect::<std::result::Result<Vec<_>, _>>()?)
}

pub fn write_stdout(rows: &[MetricsRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(std::io::stdout());
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}
