use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::store::{read_tensors, Reader};
use crate::error::{Error, Result};
use crate::model::{build_model, Model, ModelConfig};

use super::adam::AdamState;
use super::{TrainConfig, TrainHistory};

pub const CKPT_MAGIC: &[u8; 4] = b"CKPT";
pub const CKPT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub history: TrainHistory,
    pub best_score: Option<f64>,
}

/// Everything needed to resume training or run inference.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub epoch: u32,
    pub model: Model<f32>,
    pub adam: AdamState,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let doc = serde_json::to_vec(&self.meta).expect("checkpoint metadata serializes");
        let mut out = Vec::new();
        out.extend_from_slice(CKPT_MAGIC);
        out.extend_from_slice(&CKPT_VERSION.to_le_bytes());
        out.extend_from_slice(&(doc.len() as u32).to_le_bytes());
        out.extend_from_slice(&doc);
        out.extend_from_slice(&self.epoch.to_le_bytes());
        out.extend_from_slice(&self.model.params.to_bytes());
        out.extend_from_slice(&self.adam.t.to_le_bytes());
        out.extend_from_slice(&self.adam.to_store(&self.model.params).to_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != CKPT_MAGIC {
            return Err(Error::VersionMismatch("missing CKPT magic".into()));
        }
        let version = r.u32()?;
        if version != CKPT_VERSION {
            return Err(Error::VersionMismatch(format!("checkpoint version {version}, expected {CKPT_VERSION}")));
        }
        let len = r.u32()? as usize;
        let meta: CheckpointMeta =
            serde_json::from_slice(r.take(len)?).map_err(|e| Error::VersionMismatch(format!("checkpoint metadata: {e}")))?;
        let epoch = r.u32()?;
        let params = read_tensors(&mut r)?;
        let t = r.u64()?;
        let moments = read_tensors(&mut r)?;
        if r.pos != bytes.len() {
            return Err(Error::VersionMismatch(format!("{} trailing bytes", bytes.len() - r.pos)));
        }

        let mut model = build_model(&meta.model, 0)?;
        let n = model.params.len();
        if params.len() != n || moments.len() != 2 * n {
            return Err(Error::ShapeMismatch(format!(
                "checkpoint holds {} tensors and {} moments for a {n}-tensor model",
                params.len(),
                moments.len()
            )));
        }
        for (i, (name, t)) in params.iter().enumerate() {
            let want = (model.params.name(i), &model.params.get(i).shape);
            if (name.as_str(), &t.shape) != want || moments[i].1.shape != t.shape || moments[n + i].1.shape != t.shape {
                return Err(Error::ShapeMismatch(format!("checkpoint tensor {name} {:?} does not fit {want:?}", t.shape)));
            }
        }
        for (i, (_, t)) in params.into_iter().enumerate() {
            model.params.get_mut(i).data = t.data;
        }
        let mut it = moments.into_iter().map(|(_, t)| t);
        let m = it.by_ref().take(n).collect();
        let v = it.collect();
        Ok(Checkpoint {
            meta,
            epoch,
            model,
            adam: AdamState { m, v, t },
        })
    }

    /// Write via a temporary sibling and rename.
    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let tmp = path.with_extension("ckpt.tmp");
        let mut f = std::fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(&self.to_bytes()).map_err(|e| Error::io(&tmp, e))?;
        drop(f);
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
    }
}
