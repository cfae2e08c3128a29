//! JSON checkpoints. Parameters are written as decimal strings of 17
//! significant digits, enough to read every `f64` back bit-for-bit.

use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Number;

use crate::data::TaskKind;
use crate::model::{Model, ModelKind, ModelSpec};
use crate::nn::Mlp;
use crate::train::TrainConfig;
use crate::{Error, Result};

pub const FORMAT: &str = "reynet-checkpoint";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpRecord {
    pub dims: Vec<usize>,
    /// Per layer: weights row-major (`out x in`), then biases.
    pub params: Vec<Number>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub kind: ModelKind,
    pub spec: ModelSpec,
    pub task: Option<TaskKind>,
    pub seed: u64,
    pub train: Option<TrainConfig>,
    pub mlps: Vec<MlpRecord>,
}

fn number(v: f64) -> Number {
    Number::from_str(&format!("{v:.16e}")).expect("finite parameters")
}

impl Checkpoint {
    pub fn from_model(model: &Model, task: Option<TaskKind>, seed: u64, train: Option<TrainConfig>) -> Self {
        Checkpoint {
            format: FORMAT.into(),
            version: FORMAT_VERSION,
            kind: model.kind(),
            spec: model.spec().clone(),
            task,
            seed,
            train,
            mlps: model
                .mlps()
                .iter()
                .map(|m| MlpRecord {
                    dims: m.dims().to_vec(),
                    params: m.flat_params().into_iter().map(number).collect(),
                })
                .collect(),
        }
    }

    pub fn to_model(&self) -> Result<Model> {
        if self.format != FORMAT || self.version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "expected {FORMAT} v{FORMAT_VERSION}, found {} v{}",
                self.format, self.version
            )));
        }
        if self.kind != self.spec.kind {
            return Err(Error::Checkpoint("kind disagrees with the model spec".into()));
        }
        let mlps = self
            .mlps
            .iter()
            .map(|r| {
                let mut m = Mlp::zeros(&r.dims)?;
                let flat = r
                    .params
                    .iter()
                    .map(|v| {
                        v.as_f64()
                            .filter(|x| x.is_finite())
                            .ok_or_else(|| Error::Checkpoint(format!("bad parameter {v}")))
                    })
                    .collect::<Result<Vec<_>>>()?;
                m.set_flat_params(&flat)?;
                Ok(m)
            })
            .collect::<Result<Vec<_>>>()?;
        Model::from_mlps(self.spec.clone(), mlps)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }
}
