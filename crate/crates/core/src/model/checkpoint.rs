//! Binary checkpoints: magic, epoch, config hash, then named `f32` records.

use std::fs;
use std::path::Path;

use super::{LocationHead, Model, ModelSpec, FEATURE_DIM};
use crate::error::{Error, Result};
use crate::tensor::{ParamStore, Scalar, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"SSLFGVC1";

/// Records under this prefix describe the architecture rather than hold
/// weights.
const META_PREFIX: &str = "meta.";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CheckpointInfo {
    pub epoch: u32,
    pub config_hash: u64,
}

struct Record {
    name: String,
    shape: Vec<usize>,
    data: Vec<f32>,
}

fn encode(info: CheckpointInfo, records: &[Record]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&info.epoch.to_le_bytes());
    out.extend_from_slice(&info.config_hash.to_le_bytes());
    out.extend_from_slice(&(records.len() as u32).to_le_bytes());
    for r in records {
        out.extend_from_slice(&(r.name.len() as u32).to_le_bytes());
        out.extend_from_slice(r.name.as_bytes());
        out.extend_from_slice(&(r.shape.len() as u32).to_le_bytes());
        for &d in &r.shape {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in &r.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.at.checked_add(n).filter(|&e| e <= self.buf.len());
        match end {
            Some(end) => {
                let s = &self.buf[self.at..end];
                self.at = end;
                Ok(s)
            }
            None => Err(Error::Checkpoint("truncated payload".into())),
        }
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

fn decode(buf: &[u8]) -> Result<(CheckpointInfo, Vec<Record>)> {
    let mut r = Reader { buf, at: 0 };
    let magic = r.take(8).map_err(|_| Error::Checkpoint("bad magic".into()))?;
    if magic != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let info = CheckpointInfo {
        epoch: r.u32()?,
        config_hash: r.u64()?,
    };
    let count = r.u32()? as usize;
    let mut records = Vec::new();
    for _ in 0..count {
        let len = r.u32()? as usize;
        let name = String::from_utf8(r.take(len)?.to_vec())
            .map_err(|_| Error::Checkpoint("record name is not utf-8".into()))?;
        let rank = r.u32()? as usize;
        let mut shape = Vec::with_capacity(rank.min(8));
        for _ in 0..rank {
            shape.push(r.u32()? as usize);
        }
        let n = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or_else(|| Error::Checkpoint(format!("record {name} has an absurd shape {shape:?}")))?;
        let bytes = r.take(n.checked_mul(4).ok_or_else(|| Error::Checkpoint("truncated payload".into()))?)?;
        let data = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        records.push(Record { name, shape, data });
    }
    if r.at != buf.len() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", buf.len() - r.at)));
    }
    Ok((info, records))
}

fn spec_from_records(records: &[Record]) -> Result<ModelSpec> {
    let find = |name: &str| records.iter().find(|r| r.name == name);
    let bad = |msg: String| Error::Checkpoint(msg);
    let cam = find("cam.w").is_some();
    let num_classes = match (find("cls.w"), find("cam.w")) {
        (Some(r), None) if r.shape.len() == 2 => r.shape[1],
        (None, Some(r)) if r.shape.len() == 4 => r.shape[0],
        _ => return Err(bad("cannot tell the classifier layout".into())),
    };
    let location = match (find("loc.w"), find("meta.loc_k")) {
        (None, _) => None,
        (Some(w), Some(k)) if !k.data.is_empty() => {
            let k = k.data[0] as usize;
            Some(LocationHead {
                k,
                classify: w.shape.first() == Some(&(k * k)),
            })
        }
        _ => return Err(bad("location head without its grid size".into())),
    };
    let pirl_patches = match find("pirl_g.w") {
        Some(r) if r.shape.len() == 2 && r.shape[0] % FEATURE_DIM == 0 => Some(r.shape[0] / FEATURE_DIM),
        Some(r) => return Err(bad(format!("pirl_g.w has shape {:?}", r.shape))),
        None => None,
    };
    Ok(ModelSpec {
        num_classes,
        cam,
        rotation: find("rot.w").is_some(),
        adversarial: find("adv.w").is_some(),
        location,
        pirl_patches,
    })
}

fn records_of<T: Scalar>(model: &Model<T>) -> Vec<Record> {
    let mut out: Vec<Record> = model
        .params
        .iter()
        .map(|p| Record {
            name: p.name.clone(),
            shape: p.value.shape().to_vec(),
            data: p.value.data().iter().map(|v| v.as_f64() as f32).collect(),
        })
        .collect();
    if let Some(l) = model.spec.location {
        out.push(Record {
            name: format!("{META_PREFIX}loc_k"),
            shape: vec![1],
            data: vec![l.k as f32],
        });
    }
    out
}

pub fn save_checkpoint<T: Scalar>(model: &Model<T>, path: &Path, info: CheckpointInfo) -> Result<()> {
    fs::write(path, encode(info, &records_of(model)))?;
    Ok(())
}

/// Rebuilds the architecture from the record names and shapes.
pub fn load_checkpoint<T: Scalar>(path: &Path) -> Result<(Model<T>, CheckpointInfo)> {
    let (info, records) = decode(&fs::read(path)?)?;
    let spec = spec_from_records(&records)?;
    let mut params = ParamStore::new();
    for (name, shape) in spec.layout() {
        let r = records
            .iter()
            .find(|r| r.name == name)
            .ok_or_else(|| Error::Checkpoint(format!("missing parameter {name}")))?;
        if r.shape != shape {
            return Err(Error::Checkpoint(format!(
                "parameter {name} has shape {:?}, expected {shape:?}",
                r.shape
            )));
        }
        let data = r.data.iter().map(|&v| T::of(v as f64)).collect();
        params.add(name, Tensor::new(shape, data)?)?;
    }
    let model = Model::from_params(spec, params)?;
    Ok((model, info))
}

impl<T: Scalar> Model<T> {
    /// Loads weights into an existing architecture. Every parameter must be
    /// present with the same shape. A differing `expected_hash` only warns.
    pub fn load_weights(&mut self, path: &Path, expected_hash: Option<u64>) -> Result<CheckpointInfo> {
        let (info, records) = decode(&fs::read(path)?)?;
        if let Some(h) = expected_hash {
            if h != info.config_hash {
                log::warn!(
                    "checkpoint {} was written under config {:016x}, current config is {h:016x}",
                    path.display(),
                    info.config_hash
                );
            }
        }
        let mut staged = Vec::new();
        for p in self.params.iter() {
            let r = records
                .iter()
                .find(|r| r.name == p.name)
                .ok_or_else(|| Error::Checkpoint(format!("missing parameter {}", p.name)))?;
            if r.shape != p.value.shape() {
                return Err(Error::Checkpoint(format!(
                    "parameter {} has shape {:?}, model expects {:?}",
                    p.name,
                    r.shape,
                    p.value.shape()
                )));
            }
            staged.push(r.data.iter().map(|&v| T::of(v as f64)).collect::<Vec<T>>());
        }
        for (p, data) in self.params.iter_mut().zip(staged) {
            p.value.data_mut().copy_from_slice(&data);
        }
        Ok(info)
    }
}
