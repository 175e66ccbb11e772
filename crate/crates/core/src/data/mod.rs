//! Task environments: in-memory datasets, synthetic generators with exact
//! population losses, IDX ingestion, permuted-task construction and the
//! on-disk container.

mod container;
mod idx;
mod permute;
mod synthetic;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use container::{load_dataset, save_dataset, CONTAINER_HEADER};
pub use idx::{
    encode_idx, parse_idx, read_idx, write_idx, IdxHeader, IdxTensor, IMAGE_MAGIC, LABEL_MAGIC,
};
pub use permute::{make_permuted_tasks, swap_permutation, PermuteKind, PermuteSpec};
pub use synthetic::{
    gaussian_residual_loss, gen_synthetic, SyntheticEnv, SyntheticEnvSpec, SyntheticOracle,
};

/// Row-major feature/target matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct Samples {
    input_dim: usize,
    output_dim: usize,
    x: Vec<f64>,
    y: Vec<f64>,
}

impl Samples {
    pub fn new(input_dim: usize, output_dim: usize, x: Vec<f64>, y: Vec<f64>) -> Result<Self> {
        if input_dim == 0 || output_dim == 0 {
            return Err(Error::domain(
                "feature and target dimensions must be positive",
            ));
        }
        if !x.len().is_multiple_of(input_dim)
            || !y.len().is_multiple_of(output_dim)
            || x.len() / input_dim != y.len() / output_dim
        {
            return Err(Error::domain(format!(
                "inconsistent sample shapes: {} features of width {input_dim}, {} targets of width {output_dim}",
                x.len(),
                y.len()
            )));
        }
        Ok(Samples {
            input_dim,
            output_dim,
            x,
            y,
        })
    }

    pub fn empty(input_dim: usize, output_dim: usize) -> Self {
        Samples {
            input_dim,
            output_dim,
            x: Vec::new(),
            y: Vec::new(),
        }
    }

    pub fn rows(&self) -> usize {
        self.x.len() / self.input_dim
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    pub fn x(&self, row: usize) -> &[f64] {
        &self.x[row * self.input_dim..(row + 1) * self.input_dim]
    }

    pub fn y(&self, row: usize) -> &[f64] {
        &self.y[row * self.output_dim..(row + 1) * self.output_dim]
    }

    pub fn features(&self) -> &[f64] {
        &self.x
    }

    pub fn targets(&self) -> &[f64] {
        &self.y
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskData {
    pub train: Samples,
    pub test: Samples,
}

/// How a dataset was produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Provenance {
    Synthetic {
        spec: SyntheticEnvSpec,
        /// `train` or `test` half of the environment.
        split: String,
    },
    Permuted {
        spec: PermuteSpec,
        source_images: usize,
    },
    Manual {
        note: String,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetaDataset {
    pub input_dim: usize,
    pub output_dim: usize,
    pub tasks: Vec<TaskData>,
    pub provenance: Provenance,
}

impl MetaDataset {
    pub fn new(tasks: Vec<TaskData>, provenance: Provenance) -> Result<Self> {
        let first = tasks
            .first()
            .ok_or_else(|| Error::domain("a dataset needs at least one task"))?;
        let (p, k, m) = (
            first.train.input_dim,
            first.train.output_dim,
            first.train.rows(),
        );
        for (i, t) in tasks.iter().enumerate() {
            for s in [&t.train, &t.test] {
                if s.input_dim != p || s.output_dim != k {
                    return Err(Error::domain(format!("task {i} has mismatched dimensions")));
                }
            }
            if t.train.rows() == 0 {
                return Err(Error::domain(format!("task {i} has no training samples")));
            }
            if t.train.rows() != m {
                return Err(Error::domain(format!(
                    "all tasks need the same number of training samples: task 0 has {m}, task {i} has {}",
                    t.train.rows()
                )));
            }
        }
        Ok(MetaDataset {
            input_dim: p,
            output_dim: k,
            tasks,
            provenance,
        })
    }

    pub fn n(&self) -> usize {
        self.tasks.len()
    }

    /// Training samples per task.
    pub fn m(&self) -> usize {
        self.tasks[0].train.rows()
    }
}
