//! Binary checkpoint: magic, version, JSON header, then named tensors as
//! (name length, name, rank, extents, little-endian f64 data).

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{AdamParams, AdamState, EpochRecord, TrainConfig, TrainState};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::layers::ParamSet;
use crate::model::{AffordanceModel, ModelConfig};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"AFFSEGCK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    model_config: ModelConfig,
    train_config: TrainConfig,
    epoch: usize,
    adam_t: u64,
    adam: AdamParams,
    rng_seed: [u8; 32],
    rng_stream: u64,
    rng_word_pos: String,
    history: Vec<EpochRecord>,
}

const GROUPS: [&str; 3] = ["param", "adam.m", "adam.v"];

pub fn encode_checkpoint(state: &TrainState) -> Result<Vec<u8>> {
    let header = Header {
        model_config: state.model.config().clone(),
        train_config: state.train_config.clone(),
        epoch: state.epoch,
        adam_t: state.adam.t,
        adam: state.adam.hp,
        rng_seed: state.rng.get_seed(),
        rng_stream: state.rng.get_stream(),
        rng_word_pos: state.rng.get_word_pos().to_string(),
        history: state.history.clone(),
    };
    let json = serde_json::to_vec(&header)?;
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    let sets = [state.model.params(), &state.adam.m, &state.adam.v];
    let count: usize = sets.iter().map(|s| s.len()).sum();
    out.extend_from_slice(&(count as u64).to_le_bytes());
    for (group, set) in GROUPS.iter().zip(sets) {
        for (name, t) in set.iter() {
            let full = format!("{group}/{name}");
            out.extend_from_slice(&(full.len() as u32).to_le_bytes());
            out.extend_from_slice(full.as_bytes());
            out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for &v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    Ok(out)
}

pub fn save_checkpoint(state: &TrainState, path: &Path) -> Result<()> {
    let bytes = encode_checkpoint(state)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::CheckpointTruncated(what));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &'static str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &'static str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn len(&mut self, what: &'static str) -> Result<usize> {
        let v = self.u64(what)?;
        usize::try_from(v).map_err(|_| Error::CheckpointTruncated(what))
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<TrainState> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(8, "magic").map_err(|_| Error::CheckpointMagic)? != CHECKPOINT_MAGIC {
        return Err(Error::CheckpointMagic);
    }
    let version = r.u32("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::CheckpointVersion {
            found: version,
            expected: CHECKPOINT_VERSION,
        });
    }
    let header_len = r.len("header length")?;
    let header: Header = serde_json::from_slice(r.take(header_len, "header")?)
        .map_err(|e| Error::CheckpointMismatch(format!("unreadable header: {e}")))?;
    header.model_config.validate()?;

    let count = r.len("tensor count")?;
    let mut sets = [ParamSet::new(), ParamSet::new(), ParamSet::new()];
    for _ in 0..count {
        let name_len = r.u32("tensor name length")? as usize;
        let name = std::str::from_utf8(r.take(name_len, "tensor name")?)
            .map_err(|_| Error::CheckpointMismatch("tensor name is not UTF-8".into()))?;
        let (group, pname) = name
            .split_once('/')
            .ok_or_else(|| Error::CheckpointMismatch(format!("tensor `{name}` has no group")))?;
        let slot = GROUPS
            .iter()
            .position(|g| *g == group)
            .ok_or_else(|| Error::CheckpointMismatch(format!("unknown tensor group `{group}`")))?;
        let rank = r.u32("tensor rank")? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.len("tensor extents")?);
        }
        let numel: usize = shape.iter().product();
        let raw = r.take(numel.checked_mul(8).ok_or(Error::CheckpointTruncated("tensor data"))?, "tensor data")?;
        let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        let tensor = Tensor::new(shape, data).map_err(|e| Error::CheckpointMismatch(format!("tensor `{name}`: {e}")))?;
        sets[slot].insert(pname, tensor)?;
    }
    if r.pos != bytes.len() {
        return Err(Error::CheckpointMismatch("trailing bytes after the last tensor".into()));
    }
    let [params, m, v] = sets;
    if !params.same_layout(&m) || !params.same_layout(&v) || params.len() != m.len() || params.len() != v.len() {
        return Err(Error::CheckpointMismatch("optimizer moments do not match the parameters".into()));
    }
    let model = AffordanceModel::from_params(&header.model_config, params)?;
    let word_pos: u128 = header
        .rng_word_pos
        .parse()
        .map_err(|_| Error::CheckpointMismatch("bad RNG position".into()))?;
    let mut rng = ChaCha8Rng::from_seed(header.rng_seed);
    rng.set_stream(header.rng_stream);
    rng.set_word_pos(word_pos);
    Ok(TrainState {
        model,
        train_config: header.train_config,
        adam: AdamState {
            m,
            v,
            t: header.adam_t,
            hp: header.adam,
        },
        epoch: header.epoch,
        rng,
        history: header.history,
    })
}

pub fn load_checkpoint(path: &Path) -> Result<TrainState> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}

impl TrainState {
    /// Errors unless the stored model was built from `config`.
    pub fn ensure_model_config(&self, config: &ModelConfig) -> Result<()> {
        if self.model.config() != config {
            return Err(Error::CheckpointMismatch(format!(
                "checkpoint model config {:?} differs from requested {:?}",
                self.model.config(),
                config
            )));
        }
        Ok(())
    }
}
