use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{History, TrainConfig};
use crate::error::{Error, Result};
use crate::loss::LossConfig;
use crate::model::{ModelConfig, Network};
use crate::nn::ParamStore;
use crate::scalar::Scalar;
use crate::spectral::FrequencyIndexSet;
use crate::tensor::Tensor;

const MAGIC: &[u8; 8] = b"DDCDCKPT";
const VERSION: u32 = 1;
const DIGEST_LEN: usize = 32;

/// Serializable description of a run at an epoch boundary.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub model: ModelConfig,
    pub loss: LossConfig,
    pub train: TrainConfig,
    /// Frequency indices in index-file syntax.
    pub frequency_indices: String,
    /// Completed epochs.
    pub epoch: usize,
    pub history: History,
    pub best_f1: Option<f64>,
}

/// Parameters, batch-norm buffers and momentum with the run metadata.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint<T> {
    pub meta: CheckpointMeta,
    pub params: ParamStore<T>,
    pub momentum: BTreeMap<String, Tensor<T>>,
}

#[derive(Clone, Copy)]
enum Kind {
    Param = 0,
    Buffer = 1,
    Momentum = 2,
}

fn put_tensor<T: Scalar>(out: &mut Vec<u8>, kind: Kind, name: &str, t: &Tensor<T>) {
    out.push(kind as u8);
    out.extend_from_slice(&(name.len() as u32).to_le_bytes());
    out.extend_from_slice(name.as_bytes());
    out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
    for &d in t.shape() {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for &v in t.data() {
        v.write_le(out);
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Integrity("checkpoint body ends early".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

impl<T: Scalar> Checkpoint<T> {
    /// Rebuilds the network this checkpoint was trained with.
    pub fn network(&self) -> Result<Network<T>> {
        let m = &self.meta.model;
        let idx = FrequencyIndexSet::parse(
            &self.meta.frequency_indices,
            m.freq_components,
            m.base_grid[0],
            m.base_grid[1],
        )?;
        let net = Network::with_indices(m.clone(), idx)?;
        self.params.validate(&net.registry())?;
        Ok(net)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let meta = serde_json::to_vec(&self.meta).expect("metadata serializes");
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.push(T::TAG);
        out.extend_from_slice(&(meta.len() as u64).to_le_bytes());
        out.extend_from_slice(&meta);
        let count = self.params.params().count() + self.params.buffers().count() + self.momentum.len();
        out.extend_from_slice(&(count as u64).to_le_bytes());
        for (k, t) in self.params.params() {
            put_tensor(&mut out, Kind::Param, k, t);
        }
        for (k, t) in self.params.buffers() {
            put_tensor(&mut out, Kind::Buffer, k, t);
        }
        for (k, t) in &self.momentum {
            put_tensor(&mut out, Kind::Momentum, k, t);
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < MAGIC.len() + DIGEST_LEN || &bytes[..MAGIC.len()] != MAGIC {
            return Err(Error::Integrity("not a checkpoint file".into()));
        }
        let (body, digest) = bytes.split_at(bytes.len() - DIGEST_LEN);
        if Sha256::digest(body).as_slice() != digest {
            return Err(Error::Integrity("checksum mismatch".into()));
        }
        let mut r = Reader {
            buf: body,
            pos: MAGIC.len(),
        };
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Integrity(format!("unsupported checkpoint version {version}")));
        }
        let tag = r.u8()?;
        if tag != T::TAG {
            return Err(Error::Integrity(format!(
                "checkpoint stores {tag}-byte scalars, reader expects {}",
                T::TAG
            )));
        }
        let meta_len = r.u64()? as usize;
        let meta: CheckpointMeta =
            serde_json::from_slice(r.take(meta_len)?).map_err(|e| Error::Integrity(format!("metadata: {e}")))?;
        let mut params = ParamStore::new();
        let mut momentum = BTreeMap::new();
        for _ in 0..r.u64()? {
            let kind = r.u8()?;
            let name_len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(name_len)?)
                .map_err(|_| Error::Integrity("tensor name is not UTF-8".into()))?
                .to_string();
            let rank = r.u32()? as usize;
            let shape = (0..rank).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let len: usize = shape.iter().product();
            let raw = r.take(len * T::BYTES)?;
            let data = raw.chunks_exact(T::BYTES).map(T::read_le).collect();
            let t = Tensor::new(shape, data)?;
            match kind {
                0 => params.insert_param(name, t),
                1 => params.insert_buffer(name, t),
                2 => {
                    momentum.insert(name, t);
                }
                other => return Err(Error::Integrity(format!("unknown tensor kind {other}"))),
            }
        }
        if r.pos != body.len() {
            return Err(Error::Integrity("trailing bytes after tensors".into()));
        }
        Ok(Self {
            meta,
            params,
            momentum,
        })
    }

    /// Writes to a sibling temporary file and renames it into place.
    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, self.to_bytes()).map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}
