//! Synthetic matrix tasks and the `REYNDATA` file format.
//!
//! Layout, little-endian throughout:
//!
//! ```text
//! "REYNDATA" | u32 version = 1 | u32 task | u32 n | u32 count | u64 seed
//! | count·n² f64 inputs (row-major) | count·outsize f64 targets
//! ```

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::rng::{self, streams, uniform};
use crate::tensor::DenseTensor;
use crate::{Error, Result};

pub const MAGIC: &[u8; 8] = b"REYNDATA";
pub const VERSION: u32 = 1;
/// 8 magic bytes, four `u32` fields and the `u64` seed.
pub const HEADER_LEN: usize = 32;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    /// `(A + Aᵀ) / 2`
    Symmetry,
    /// `diag(A)`
    Diagonal,
    /// `[A_ij²]`
    Power,
    /// `tr(A)`
    Trace,
}

impl TaskKind {
    pub const ALL: [TaskKind; 4] = [TaskKind::Symmetry, TaskKind::Diagonal, TaskKind::Power, TaskKind::Trace];

    pub fn id(self) -> u32 {
        self as u32
    }

    pub fn from_id(id: u32) -> Option<Self> {
        TaskKind::ALL.get(id as usize).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            TaskKind::Symmetry => "symmetry",
            TaskKind::Diagonal => "diagonal",
            TaskKind::Power => "power",
            TaskKind::Trace => "trace",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        TaskKind::ALL.into_iter().find(|t| t.name() == s)
    }

    /// Order of the target tensor: 2, 1, 2 and 0 (invariant).
    pub fn output_order(self) -> usize {
        match self {
            TaskKind::Symmetry | TaskKind::Power => 2,
            TaskKind::Diagonal => 1,
            TaskKind::Trace => 0,
        }
    }

    pub fn is_invariant(self) -> bool {
        self == TaskKind::Trace
    }

    pub fn output_len(self, n: usize) -> usize {
        n.pow(self.output_order() as u32)
    }
}

/// The task map on one matrix.
pub fn apply_task(task: TaskKind, a: &DenseTensor) -> Result<DenseTensor> {
    if a.order() != 2 || a.channels() != 1 {
        return Err(Error::Shape(format!(
            "tasks take square matrices, got order {} with {} channels",
            a.order(),
            a.channels()
        )));
    }
    let n = a.n();
    let x = a.data();
    match task {
        TaskKind::Symmetry => DenseTensor::from_vec(
            n,
            2,
            1,
            (0..n * n).map(|p| 0.5 * (x[p] + x[(p % n) * n + p / n])).collect(),
        ),
        TaskKind::Diagonal => DenseTensor::from_vec(n, 1, 1, (0..n).map(|i| x[i * n + i]).collect()),
        TaskKind::Power => DenseTensor::from_vec(n, 2, 1, x.iter().map(|v| v * v).collect()),
        TaskKind::Trace => DenseTensor::from_vec(n, 0, 1, vec![(0..n).map(|i| x[i * n + i]).sum()]),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub task: TaskKind,
    pub n: usize,
    pub seed: u64,
    pub inputs: Vec<DenseTensor>,
    pub targets: Vec<DenseTensor>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    /// Bytes of the serialized file.
    pub fn file_size(&self) -> usize {
        HEADER_LEN + 8 * self.len() * (self.n * self.n + self.task.output_len(self.n))
    }
}

/// `count` matrices with i.i.d. entries uniform on `[0, 10]`, drawn in order
/// from the data stream of `seed`.
pub fn generate(task: TaskKind, n: usize, count: usize, seed: u64) -> Result<Dataset> {
    if n < 2 {
        return Err(Error::InvalidArgument(format!("n must be at least 2, got {n}")));
    }
    if count == 0 {
        return Err(Error::InvalidArgument("count must be positive".into()));
    }
    let mut r = rng::stream(seed, streams::DATA);
    let mut inputs = Vec::with_capacity(count);
    let mut targets = Vec::with_capacity(count);
    for _ in 0..count {
        let a = DenseTensor::from_fn(n, 2, 1, |_, _| uniform(&mut r, 0.0, 10.0));
        targets.push(apply_task(task, &a)?);
        inputs.push(a);
    }
    Ok(Dataset {
        task,
        n,
        seed,
        inputs,
        targets,
    })
}

pub fn encode_dataset(ds: &Dataset) -> Vec<u8> {
    let mut out = Vec::with_capacity(ds.file_size());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&ds.task.id().to_le_bytes());
    out.extend_from_slice(&(ds.n as u32).to_le_bytes());
    out.extend_from_slice(&(ds.len() as u32).to_le_bytes());
    out.extend_from_slice(&ds.seed.to_le_bytes());
    for t in ds.inputs.iter().chain(&ds.targets) {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

fn u32_at(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4 bytes"))
}

pub fn decode_dataset(bytes: &[u8]) -> Result<Dataset> {
    if bytes.len() < MAGIC.len() || &bytes[..8] != MAGIC {
        return Err(Error::BadMagic);
    }
    if bytes.len() < HEADER_LEN {
        return Err(Error::Truncated {
            expected: HEADER_LEN,
            found: bytes.len(),
        });
    }
    let version = u32_at(bytes, 8);
    if version != VERSION {
        return Err(Error::VersionMismatch {
            found: version,
            expected: VERSION,
        });
    }
    let task_id = u32_at(bytes, 12);
    let task = TaskKind::from_id(task_id).ok_or_else(|| Error::InvalidArgument(format!("unknown task id {task_id}")))?;
    let n = u32_at(bytes, 16) as usize;
    let count = u32_at(bytes, 20) as usize;
    let seed = u64::from_le_bytes(bytes[24..HEADER_LEN].try_into().expect("8 bytes"));
    let (in_len, out_len) = (n * n, task.output_len(n));
    let expected = HEADER_LEN + 8 * count * (in_len + out_len);
    if bytes.len() != expected {
        return Err(Error::Truncated {
            expected,
            found: bytes.len(),
        });
    }
    let mut values = bytes[HEADER_LEN..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
    let mut take = |len: usize, order: usize| -> Result<Vec<DenseTensor>> {
        (0..count)
            .map(|_| DenseTensor::from_vec(n, order, 1, values.by_ref().take(len).collect()))
            .collect()
    };
    let inputs = take(in_len, 2)?;
    let targets = take(out_len, task.output_order())?;
    Ok(Dataset {
        task,
        n,
        seed,
        inputs,
        targets,
    })
}

pub fn save_dataset(ds: &Dataset, path: &Path) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(&encode_dataset(ds))?;
    Ok(())
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    decode_dataset(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::group::{act_tensor, enumerate_symmetric};

    fn matrix(rows: &[[f64; 2]; 2]) -> DenseTensor {
        DenseTensor::from_vec(2, 2, 1, rows.iter().flatten().copied().collect()).unwrap()
    }

    #[test]
    fn task_formulas() {
        let a = matrix(&[[1.0, 2.0], [3.0, 4.0]]);
        assert_eq!(apply_task(TaskKind::Symmetry, &a).unwrap().data(), &[1.0, 2.5, 2.5, 4.0]);
        assert_eq!(apply_task(TaskKind::Trace, &a).unwrap().data(), &[5.0]);
        assert_eq!(apply_task(TaskKind::Power, &a).unwrap().data(), &[1.0, 4.0, 9.0, 16.0]);
        assert_eq!(apply_task(TaskKind::Diagonal, &a).unwrap().data(), &[1.0, 4.0]);
        assert!(apply_task(TaskKind::Trace, &DenseTensor::zeros(2, 1, 1)).is_err());
    }

    #[test]
    fn tasks_respect_the_group() {
        let ds = generate(TaskKind::Symmetry, 3, 5, 3).unwrap();
        for task in TaskKind::ALL {
            for a in &ds.inputs {
                let fa = apply_task(task, a).unwrap();
                for g in enumerate_symmetric(3).unwrap() {
                    let lhs = apply_task(task, &act_tensor(&g, a).unwrap()).unwrap();
                    let rhs = act_tensor(&g, &fa).unwrap();
                    if task.is_invariant() {
                        // the trace sums the diagonal in a permuted order
                        assert!(lhs.max_abs_diff(&rhs).unwrap() <= 1e-12 * rhs.data()[0].abs());
                    } else {
                        assert_eq!(lhs, rhs, "{}", task.name());
                    }
                }
            }
        }
    }

    #[test]
    fn generation_is_deterministic_and_uniform() {
        let a = generate(TaskKind::Power, 10, 100, 7).unwrap();
        assert_eq!(a, generate(TaskKind::Power, 10, 100, 7).unwrap());
        assert_ne!(a.inputs, generate(TaskKind::Power, 10, 100, 8).unwrap().inputs);
        let all: Vec<f64> = a.inputs.iter().flat_map(|t| t.data().to_vec()).collect();
        assert!(all.iter().all(|v| (0.0..=10.0).contains(v)));
        let mean = all.iter().sum::<f64>() / all.len() as f64;
        assert!((mean - 5.0).abs() < 0.5);
        for (x, y) in a.inputs.iter().zip(&a.targets) {
            assert_eq!(&apply_task(a.task, x).unwrap(), y);
        }
        assert!(generate(TaskKind::Trace, 1, 10, 0).is_err());
        assert!(generate(TaskKind::Trace, 3, 0, 0).is_err());
    }

    #[test]
    fn paper_sizes() {
        for n in [3, 5, 10, 20] {
            let ds = generate(TaskKind::Symmetry, n, 1000, 0).unwrap();
            assert_eq!((ds.len(), ds.inputs[0].data().len()), (1000, n * n));
        }
    }

    #[test]
    fn round_trip_and_size() {
        let dir = tempfile::tempdir().unwrap();
        for task in TaskKind::ALL {
            let ds = generate(task, 4, 13, 99).unwrap();
            let path = dir.path().join(format!("{}.reyd", task.name()));
            save_dataset(&ds, &path).unwrap();
            assert_eq!(fs::metadata(&path).unwrap().len() as usize, 32 + 8 * 13 * (16 + task.output_len(4)));
            assert_eq!(load_dataset(&path).unwrap(), ds);
        }
        let ds = generate(TaskKind::Symmetry, 5, 1000, 0).unwrap();
        assert_eq!(encode_dataset(&ds).len(), 32 + 8 * 1000 * (25 + 25));
    }

    #[test]
    fn corrupt_files_are_rejected_distinctly() {
        let bytes = encode_dataset(&generate(TaskKind::Diagonal, 3, 4, 1).unwrap());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode_dataset(&bad), Err(Error::BadMagic)));
        let mut bad = bytes.clone();
        bad[8] = 2;
        assert!(matches!(decode_dataset(&bad), Err(Error::VersionMismatch { found: 2, .. })));
        assert!(matches!(decode_dataset(&bytes[..bytes.len() - 3]), Err(Error::Truncated { .. })));
        assert!(matches!(decode_dataset(&bytes[..30]), Err(Error::Truncated { .. })));
        assert!(matches!(decode_dataset(b"REY"), Err(Error::BadMagic)));
    }
}
