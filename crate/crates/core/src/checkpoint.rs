//! Model checkpoints: a JSON manifest followed by the raw tensors.
//!
//! File layout: `"EFBGCKPT"`, format version (`u32`), manifest length in
//! bytes (`u64`), the UTF-8 JSON manifest, then every tensor as
//! little-endian `f32` in manifest order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Mode, ParamStore, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::model::{ExtractorConfig, RegressionModel, ShapeRegressor, SiameseModel};
use crate::train::{Pipeline, SplitSpec};

pub const MAGIC: &[u8; 8] = b"EFBGCKPT";
pub const VERSION: u32 = 1;
const PREFIX_LEN: usize = 8 + 4 + 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Regression,
    Siamese,
}

#[derive(Clone, Debug)]
pub enum AnyModel {
    Regression(RegressionModel<f32>),
    Siamese(SiameseModel<f32>),
}

impl AnyModel {
    pub fn kind(&self) -> ModelKind {
        match self {
            AnyModel::Regression(_) => ModelKind::Regression,
            AnyModel::Siamese(_) => ModelKind::Siamese,
        }
    }

    pub fn extractor_config(&self) -> &ExtractorConfig {
        match self {
            AnyModel::Regression(m) => m.extractor_config(),
            AnyModel::Siamese(m) => m.extractor_config(),
        }
    }
}

impl ShapeRegressor<f32> for AnyModel {
    fn output_dim(&self) -> usize {
        match self {
            AnyModel::Regression(m) => m.output_dim(),
            AnyModel::Siamese(m) => m.output_dim(),
        }
    }

    fn params(&self) -> &ParamStore<f32> {
        match self {
            AnyModel::Regression(m) => m.params(),
            AnyModel::Siamese(m) => m.params(),
        }
    }

    fn params_mut(&mut self) -> &mut ParamStore<f32> {
        match self {
            AnyModel::Regression(m) => m.params_mut(),
            AnyModel::Siamese(m) => m.params_mut(),
        }
    }

    fn regress(&mut self, tape: &mut Tape<f32>, x: Var, mode: Mode, dropout_seed: u64) -> Result<Var> {
        match self {
            AnyModel::Regression(m) => m.regress(tape, x, mode, dropout_seed),
            AnyModel::Siamese(m) => m.regress(tape, x, mode, dropout_seed),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub trainable: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub model: ModelKind,
    pub extractor: ExtractorConfig,
    pub output_dim: usize,
    pub dropout_rate: f64,
    pub tensors: Vec<TensorEntry>,
    pub pipeline: Pipeline,
    /// How the training run split its dataset, so evaluation can rebuild it.
    pub split: SplitSpec,
    pub split_seed: u64,
    pub n_samples: usize,
    pub config_digest: String,
}

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub model: AnyModel,
    pub pipeline: Pipeline,
    pub split: SplitSpec,
    pub split_seed: u64,
    pub n_samples: usize,
    pub config_digest: String,
}

impl Checkpoint {
    pub fn manifest(&self) -> Manifest {
        let dropout_rate = match &self.model {
            AnyModel::Regression(m) => m.dropout_rate(),
            AnyModel::Siamese(_) => 0.0,
        };
        Manifest {
            model: self.model.kind(),
            extractor: self.model.extractor_config().clone(),
            output_dim: self.model.output_dim(),
            dropout_rate,
            tensors: self
                .model
                .params()
                .iter()
                .map(|(_, p)| TensorEntry {
                    name: p.name.clone(),
                    shape: p.value.shape().to_vec(),
                    trainable: p.trainable,
                })
                .collect(),
            pipeline: self.pipeline.clone(),
            split: self.split,
            split_seed: self.split_seed,
            n_samples: self.n_samples,
            config_digest: self.config_digest.clone(),
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let manifest = serde_json::to_vec(&self.manifest())?;
        let n_values: usize = self.model.params().iter().map(|(_, p)| p.value.numel()).sum();
        let mut out = Vec::with_capacity(PREFIX_LEN + manifest.len() + 4 * n_values);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(manifest.len() as u64).to_le_bytes());
        out.extend_from_slice(&manifest);
        for (_, p) in self.model.params().iter() {
            for v in p.value.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let bad = |msg: String| Error::format(path, msg);
        if bytes.len() < PREFIX_LEN || &bytes[..8] != MAGIC {
            return Err(bad("not a checkpoint (bad magic)".into()));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != VERSION {
            return Err(bad(format!("unsupported checkpoint version {version}")));
        }
        let mlen = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
        let body = bytes
            .get(PREFIX_LEN..PREFIX_LEN.saturating_add(mlen))
            .ok_or_else(|| bad("truncated manifest".into()))?;
        let manifest: Manifest = serde_json::from_slice(body).map_err(|e| bad(format!("manifest: {e}")))?;
        let mut model = match manifest.model {
            ModelKind::Regression => AnyModel::Regression(RegressionModel::build(
                &manifest.extractor,
                manifest.output_dim,
                manifest.dropout_rate,
                0,
            )?),
            ModelKind::Siamese => AnyModel::Siamese(SiameseModel::build(&manifest.extractor, manifest.output_dim, 0)?),
        };
        let store = model.params_mut();
        if store.len() != manifest.tensors.len() {
            return Err(bad(format!(
                "manifest lists {} tensors, the architecture has {}",
                manifest.tensors.len(),
                store.len()
            )));
        }
        let mut data = &bytes[PREFIX_LEN + mlen..];
        for ((_, p), entry) in store.iter_mut().zip(&manifest.tensors) {
            if p.name != entry.name || p.value.shape() != entry.shape.as_slice() || p.trainable != entry.trainable {
                return Err(bad(format!("tensor {} does not match the architecture", entry.name)));
            }
            let nbytes = 4 * p.value.numel();
            if data.len() < nbytes {
                return Err(bad(format!("truncated tensor data at {}", entry.name)));
            }
            let values = data[..nbytes]
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
                .collect();
            p.value = Tensor::new(entry.shape.clone(), values)?;
            data = &data[nbytes..];
        }
        if !data.is_empty() {
            return Err(bad(format!("{} trailing bytes after tensor data", data.len())));
        }
        Ok(Checkpoint {
            model,
            pipeline: manifest.pipeline,
            split: manifest.split,
            split_seed: manifest.split_seed,
            n_samples: manifest.n_samples,
            config_digest: manifest.config_digest,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }
}
