//! Binary checkpoint files.
//!
//! Layout: `WUNETCK\0`, format version (u32 LE), header length (u64 LE), a JSON
//! header, little-endian f32 tensor payloads in header-table order, and a
//! CRC32 (u32 LE) over every preceding byte.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use super::{AdamState, EpochLoss, TrainConfig};
use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig};
use crate::transforms::PcaBasis;

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"WUNETCK\0";

/// Exact position of a ChaCha8 stream.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    /// 32-byte seed, hex encoded.
    pub seed: String,
    pub stream: u64,
    /// u128 word position, as a decimal string.
    pub word_pos: String,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        Self { seed: hex::encode(rng.get_seed()), stream: rng.get_stream(), word_pos: rng.get_word_pos().to_string() }
    }

    pub fn restore(&self) -> Result<ChaCha8Rng> {
        let bytes = hex::decode(&self.seed).map_err(|e| Error::CorruptData(format!("rng seed: {e}")))?;
        let seed: [u8; 32] = bytes.try_into().map_err(|_| Error::CorruptData("rng seed must be 32 bytes".into()))?;
        let pos: u128 = self.word_pos.parse().map_err(|e| Error::CorruptData(format!("rng word_pos: {e}")))?;
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(pos);
        Ok(rng)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

/// Everything needed to resume training or run inference.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub epoch: usize,
    pub step: usize,
    pub rng: RngState,
    pub losses: Vec<EpochLoss>,
    pub adam: AdamState,
    pub params: Vec<NamedTensor>,
    pub global_bases: Option<Vec<PcaBasis>>,
}

impl Checkpoint {
    pub(crate) fn capture(
        model: &Model,
        train: &TrainConfig,
        adam: &AdamState,
        rng: &ChaCha8Rng,
        epoch: usize,
        step: usize,
        losses: &[EpochLoss],
    ) -> Self {
        let params = model
            .params()
            .iter()
            .map(|p| NamedTensor { name: p.name.clone(), shape: p.tensor.shape.clone(), data: p.tensor.value.clone() })
            .collect();
        Self {
            model: model.config().clone(),
            train: train.clone(),
            epoch,
            step,
            rng: RngState::capture(rng),
            losses: losses.to_vec(),
            adam: adam.clone(),
            params,
            global_bases: model.global_bases().map(<[PcaBasis]>::to_vec),
        }
    }

    /// Inference-only checkpoint for an untrained or externally built model.
    pub fn from_model(model: &Model) -> Self {
        let train = TrainConfig { epochs: 1, ..TrainConfig::default() };
        let rng = ChaCha8Rng::seed_from_u64(train.seed);
        Self::capture(model, &train, &AdamState::new(model.params()), &rng, 0, 0, &[])
    }

    /// Rebuilds the model and overwrites every parameter with the stored values.
    pub fn restore_model(&self) -> Result<Model> {
        let mut model = Model::build(self.model.clone())?;
        if model.params().len() != self.params.len() {
            return Err(Error::CorruptData(format!(
                "checkpoint has {} tensors, model expects {}",
                self.params.len(),
                model.params().len()
            )));
        }
        for t in &self.params {
            let p = model
                .params_mut()
                .by_name_mut(&t.name)
                .ok_or_else(|| Error::CorruptData(format!("unknown tensor {}", t.name)))?;
            if p.tensor.shape != t.shape || t.data.len() != p.tensor.len() {
                return Err(Error::CorruptData(format!("tensor {} has shape {:?}, expected {:?}", t.name, t.shape, p.tensor.shape)));
            }
            p.tensor.value.copy_from_slice(&t.data);
        }
        model.set_global_bases(self.global_bases.clone())?;
        Ok(model)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct TableEntry {
    name: String,
    shape: Vec<usize>,
    len: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    model: ModelConfig,
    train: TrainConfig,
    epoch: usize,
    step: usize,
    rng: RngState,
    losses: Vec<EpochLoss>,
    adam: AdamState,
    global_bases: Option<Vec<PcaBasis>>,
    tensors: Vec<TableEntry>,
}

fn encode(ckpt: &Checkpoint) -> Result<Vec<u8>> {
    let mut tensors: Vec<TableEntry> = Vec::new();
    let mut payload: Vec<&[f32]> = Vec::new();
    for t in &ckpt.params {
        tensors.push(TableEntry { name: t.name.clone(), shape: t.shape.clone(), len: t.data.len() });
        payload.push(&t.data);
    }
    for (prefix, moments) in [("adam.m/", &ckpt.adam.m), ("adam.v/", &ckpt.adam.v)] {
        for (t, m) in ckpt.params.iter().zip(moments) {
            tensors.push(TableEntry { name: format!("{prefix}{}", t.name), shape: t.shape.clone(), len: m.len() });
            payload.push(m);
        }
    }
    let header = Header {
        model: ckpt.model.clone(),
        train: ckpt.train.clone(),
        epoch: ckpt.epoch,
        step: ckpt.step,
        rng: ckpt.rng.clone(),
        losses: ckpt.losses.clone(),
        adam: ckpt.adam.clone(),
        global_bases: ckpt.global_bases.clone(),
        tensors,
    };
    let json = serde_json::to_vec(&header).map_err(|e| Error::CorruptData(format!("header encode: {e}")))?;

    let mut out = Vec::with_capacity(json.len() + 64 + 4 * payload.iter().map(|p| p.len()).sum::<usize>());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for p in payload {
        for v in p {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

fn decode(bytes: &[u8]) -> Result<Checkpoint> {
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        return Err(Error::CorruptData("not a checkpoint file".into()));
    }
    if bytes.len() < MAGIC.len() + 4 + 8 + 4 {
        return Err(Error::ChecksumMismatch);
    }
    let (body, trailer) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(trailer.try_into().expect("4 bytes"));
    if crc32fast::hash(body) != stored {
        return Err(Error::ChecksumMismatch);
    }
    let version = u32::from_le_bytes(body[8..12].try_into().expect("4 bytes"));
    if version != CHECKPOINT_VERSION {
        return Err(Error::VersionMismatch { found: version, expected: CHECKPOINT_VERSION });
    }
    let hlen = u64::from_le_bytes(body[12..20].try_into().expect("8 bytes")) as usize;
    let json = body.get(20..20usize.saturating_add(hlen)).ok_or_else(|| Error::CorruptData("header overruns file".into()))?;
    let mut header: Header = serde_json::from_slice(json).map_err(|e| Error::CorruptData(format!("header: {e}")))?;

    let mut rest = &body[20 + hlen..];
    let mut take = |len: usize| -> Result<Vec<f32>> {
        let n = len.checked_mul(4).filter(|&n| n <= rest.len()).ok_or_else(|| Error::CorruptData("payload truncated".into()))?;
        let (chunk, tail) = rest.split_at(n);
        rest = tail;
        Ok(chunk.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes"))).collect())
    };

    let mut params = Vec::new();
    let (mut m, mut v) = (Vec::new(), Vec::new());
    for entry in &header.tensors {
        if entry.shape.iter().product::<usize>() != entry.len {
            return Err(Error::CorruptData(format!("tensor {} length disagrees with shape", entry.name)));
        }
        let data = take(entry.len)?;
        if entry.name.starts_with("adam.m/") {
            m.push(data);
        } else if entry.name.starts_with("adam.v/") {
            v.push(data);
        } else {
            params.push(NamedTensor { name: entry.name.clone(), shape: entry.shape.clone(), data });
        }
    }
    if !rest.is_empty() {
        return Err(Error::CorruptData("trailing bytes after payload".into()));
    }
    if m.len() != params.len() || v.len() != params.len() {
        return Err(Error::CorruptData("optimizer moments do not match parameters".into()));
    }
    header.adam.m = m;
    header.adam.v = v;
    Ok(Checkpoint {
        model: header.model,
        train: header.train,
        epoch: header.epoch,
        step: header.step,
        rng: header.rng,
        losses: header.losses,
        adam: header.adam,
        params,
        global_bases: header.global_bases,
    })
}

/// Writes atomically: a sibling temp file is written, synced and renamed.
pub fn save_checkpoint(ckpt: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode(ckpt)?;
    let mut tmp_name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    tmp_name.push(".tmp");
    let tmp = path.with_file_name(tmp_name);
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(&bytes).and_then(|_| f.sync_all()).map_err(|e| Error::io(&tmp, e))?;
    drop(f);
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    if !path.is_file() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}
