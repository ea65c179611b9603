//! Versioned binary checkpoints: model parameters, optimizer moments, the
//! sampler RNG position, trainer counters, and an echo of the resolved
//! config. Enough state to continue a run bit-compatibly with one that was
//! never interrupted.

use std::io::Read as _;
use std::path::{Path, PathBuf};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use thiserror::Error;

use crate::io::atomic_write;
use crate::models::{AdamState, Backbone, Matrix, ModelState};

const MAGIC: &[u8; 8] = b"SPRCKPT1";
const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("malformed checkpoint: {0}")]
    Format(String),
    #[error("failed to access {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: ModelState,
    /// Last completed epoch (1-based; 0 = untrained).
    pub epoch: u32,
    pub samples_seen: u64,
    /// Best Recall@K observed so far; NaN encodes "none yet".
    pub best_recall: f64,
    pub evals_since_improve: u32,
    pub rng_seed: [u8; 32],
    pub rng_word_pos: u128,
    /// Flat key=value echo of the config that produced this state.
    pub config_kv: String,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.write_u32::<LittleEndian>(VERSION).unwrap();

        let model = &self.model;
        match model.backbone {
            Backbone::Mf => {
                out.push(0);
                out.write_u32::<LittleEndian>(0).unwrap();
            }
            Backbone::Gcn { layers } => {
                out.push(1);
                out.write_u32::<LittleEndian>(layers).unwrap();
            }
        }
        out.write_u64::<LittleEndian>(model.num_users() as u64).unwrap();
        out.write_u64::<LittleEndian>(model.num_items() as u64).unwrap();
        out.write_u64::<LittleEndian>(model.dim() as u64).unwrap();
        out.push(model.boundary_w.is_some() as u8);

        let write_f64s = |out: &mut Vec<u8>, xs: &[f64]| {
            for &x in xs {
                out.write_f64::<LittleEndian>(x).unwrap();
            }
        };
        write_f64s(&mut out, model.user_emb.data());
        write_f64s(&mut out, model.item_emb.data());
        if let Some(w) = &model.boundary_w {
            write_f64s(&mut out, w);
        }
        out.write_u64::<LittleEndian>(model.adam.step).unwrap();
        write_f64s(&mut out, model.adam.m_user.data());
        write_f64s(&mut out, model.adam.v_user.data());
        write_f64s(&mut out, model.adam.m_item.data());
        write_f64s(&mut out, model.adam.v_item.data());
        if let Some(m_w) = &model.adam.m_w {
            write_f64s(&mut out, m_w);
            write_f64s(&mut out, model.adam.v_w.as_ref().unwrap());
        }

        out.write_u32::<LittleEndian>(self.epoch).unwrap();
        out.write_u64::<LittleEndian>(self.samples_seen).unwrap();
        out.write_f64::<LittleEndian>(self.best_recall).unwrap();
        out.write_u32::<LittleEndian>(self.evals_since_improve).unwrap();
        out.extend_from_slice(&self.rng_seed);
        out.write_u128::<LittleEndian>(self.rng_word_pos).unwrap();
        let kv = self.config_kv.as_bytes();
        out.write_u32::<LittleEndian>(kv.len() as u32).unwrap();
        out.extend_from_slice(kv);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        let fmt = |msg: &str| CheckpointError::Format(msg.to_string());
        let mut cur = bytes;
        let mut magic = [0u8; 8];
        cur.read_exact(&mut magic).map_err(|_| fmt("truncated magic"))?;
        if &magic != MAGIC {
            return Err(fmt("bad magic bytes"));
        }
        let version = cur
            .read_u32::<LittleEndian>()
            .map_err(|_| fmt("truncated version"))?;
        if version != VERSION {
            return Err(CheckpointError::Format(format!(
                "unsupported version {version}"
            )));
        }
        let backbone_byte = cur.read_u8().map_err(|_| fmt("truncated backbone"))?;
        let layers = cur
            .read_u32::<LittleEndian>()
            .map_err(|_| fmt("truncated layers"))?;
        let backbone = match backbone_byte {
            0 => Backbone::Mf,
            1 => Backbone::Gcn { layers },
            _ => return Err(fmt("bad backbone byte")),
        };
        let num_users = cur
            .read_u64::<LittleEndian>()
            .map_err(|_| fmt("truncated num_users"))? as usize;
        let num_items = cur
            .read_u64::<LittleEndian>()
            .map_err(|_| fmt("truncated num_items"))? as usize;
        let d = cur
            .read_u64::<LittleEndian>()
            .map_err(|_| fmt("truncated dim"))? as usize;
        let has_boundary = cur.read_u8().map_err(|_| fmt("truncated boundary flag"))? != 0;

        let user_len = num_users
            .checked_mul(d)
            .ok_or_else(|| fmt("user table size overflow"))?;
        let item_len = num_items
            .checked_mul(d)
            .ok_or_else(|| fmt("item table size overflow"))?;

        let mut read_matrix = |rows: usize, cols: usize, len: usize, what: &str| {
            let mut m = Matrix::zeros(rows, cols);
            debug_assert_eq!(m.data().len(), len);
            cur.read_f64_into::<LittleEndian>(m.data_mut())
                .map_err(|_| CheckpointError::Format(format!("truncated {what}")))?;
            Ok::<Matrix, CheckpointError>(m)
        };
        let user_emb = read_matrix(num_users, d, user_len, "user embeddings")?;
        let item_emb = read_matrix(num_items, d, item_len, "item embeddings")?;
        let boundary_w = if has_boundary {
            let mut w = vec![0.0; d];
            cur.read_f64_into::<LittleEndian>(&mut w)
                .map_err(|_| fmt("truncated boundary vector"))?;
            Some(w)
        } else {
            None
        };
        let step = cur
            .read_u64::<LittleEndian>()
            .map_err(|_| fmt("truncated optimizer step"))?;
        let mut read_matrix = |rows: usize, cols: usize, what: &str| {
            let mut m = Matrix::zeros(rows, cols);
            cur.read_f64_into::<LittleEndian>(m.data_mut())
                .map_err(|_| CheckpointError::Format(format!("truncated {what}")))?;
            Ok::<Matrix, CheckpointError>(m)
        };
        let m_user = read_matrix(num_users, d, "user first moments")?;
        let v_user = read_matrix(num_users, d, "user second moments")?;
        let m_item = read_matrix(num_items, d, "item first moments")?;
        let v_item = read_matrix(num_items, d, "item second moments")?;
        let (m_w, v_w) = if has_boundary {
            let mut m = vec![0.0; d];
            cur.read_f64_into::<LittleEndian>(&mut m)
                .map_err(|_| fmt("truncated boundary first moments"))?;
            let mut v = vec![0.0; d];
            cur.read_f64_into::<LittleEndian>(&mut v)
                .map_err(|_| fmt("truncated boundary second moments"))?;
            (Some(m), Some(v))
        } else {
            (None, None)
        };

        let epoch = cur
            .read_u32::<LittleEndian>()
            .map_err(|_| fmt("truncated epoch"))?;
        let samples_seen = cur
            .read_u64::<LittleEndian>()
            .map_err(|_| fmt("truncated samples"))?;
        let best_recall = cur
            .read_f64::<LittleEndian>()
            .map_err(|_| fmt("truncated best recall"))?;
        let evals_since_improve = cur
            .read_u32::<LittleEndian>()
            .map_err(|_| fmt("truncated patience counter"))?;
        let mut rng_seed = [0u8; 32];
        cur.read_exact(&mut rng_seed)
            .map_err(|_| fmt("truncated rng seed"))?;
        let rng_word_pos = cur
            .read_u128::<LittleEndian>()
            .map_err(|_| fmt("truncated rng position"))?;
        let kv_len = cur
            .read_u32::<LittleEndian>()
            .map_err(|_| fmt("truncated config length"))? as usize;
        let mut kv_bytes = vec![0u8; kv_len];
        cur.read_exact(&mut kv_bytes)
            .map_err(|_| fmt("truncated config echo"))?;
        let config_kv =
            String::from_utf8(kv_bytes).map_err(|_| fmt("config echo is not utf-8"))?;
        if !cur.is_empty() {
            return Err(fmt("trailing bytes"));
        }

        Ok(Checkpoint {
            model: ModelState {
                backbone,
                user_emb,
                item_emb,
                boundary_w,
                adam: AdamState {
                    step,
                    m_user,
                    v_user,
                    m_item,
                    v_item,
                    m_w,
                    v_w,
                },
            },
            epoch,
            samples_seen,
            best_recall,
            evals_since_improve,
            rng_seed,
            rng_word_pos,
            config_kv,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        atomic_write(path, &self.to_bytes()).map_err(|source| CheckpointError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        let bytes = std::fs::read(path).map_err(|source| CheckpointError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_bytes(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_checkpoint() -> Checkpoint {
        let mut model = ModelState::init(3, 4, 2, Backbone::Gcn { layers: 2 }, true, 7);
        model.boundary_w.as_mut().unwrap()[1] = 0.25;
        model.adam.step = 11;
        Checkpoint {
            model,
            epoch: 10,
            samples_seen: 12345,
            best_recall: 0.5,
            evals_since_improve: 2,
            rng_seed: [9; 32],
            rng_word_pos: 77,
            config_kv: "loss = bpr\nseed = 1\n".to_string(),
        }
    }

    #[test]
    fn round_trips_exactly() {
        let ckpt = sample_checkpoint();
        let restored = Checkpoint::from_bytes(&ckpt.to_bytes()).unwrap();
        assert_eq!(restored, ckpt);
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let ckpt = sample_checkpoint();
        ckpt.save(&path).unwrap();
        assert_eq!(Checkpoint::load(&path).unwrap(), ckpt);
    }

    #[test]
    fn corrupt_files_are_rejected_without_partial_state() {
        let ckpt = sample_checkpoint();
        let bytes = ckpt.to_bytes();
        for cut in [3usize, 20, bytes.len() / 2, bytes.len() - 1] {
            let err = Checkpoint::from_bytes(&bytes[..cut]).unwrap_err();
            assert!(matches!(err, CheckpointError::Format(_)));
        }
        let mut extended = bytes.clone();
        extended.push(0);
        assert!(Checkpoint::from_bytes(&extended).is_err());
        let mut wrong_magic = bytes;
        wrong_magic[0] = b'X';
        assert!(Checkpoint::from_bytes(&wrong_magic).is_err());
    }
}
