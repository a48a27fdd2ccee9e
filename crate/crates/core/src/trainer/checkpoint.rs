//! Binary checkpoint format.
//!
//! ```text
//! "GPN1" | u32 version | u64 record length | JSON record
//! | u32 tensor count | tensors
//! [| u32 tensor count | optimizer tensors]     when the record says so
//! tensor = u16 name length | name | u8 rank | u64 dims[rank] | f32 data
//! ```
//! All integers and floats are little-endian; data is row-major.

use super::hyper::TrainHyper;
use super::optim::OptimizerState;
use crate::error::{GpnError, Result};
use crate::model::{ModelConfig, Params};
use crate::numerics::Tensor;
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::path::Path;

pub const MAGIC: [u8; 4] = *b"GPN1";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub hyper: Option<TrainHyper>,
    /// Optimizer updates applied to `params`.
    pub step: u64,
    pub params: Params<f32>,
    pub optimizer: Option<OptimizerState<f32>>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Record {
    config: ModelConfig,
    step: u64,
    has_optimizer: bool,
    #[serde(default)]
    optimizer_step: u64,
    #[serde(default)]
    hyper: Option<TrainHyper>,
}

/// Header information without the tensor payload.
#[derive(Debug, Clone)]
pub struct CheckpointHeader {
    pub version: u32,
    pub record_json: String,
    pub tensors: Vec<(String, Vec<usize>)>,
}

fn write_tensors<W: Write>(w: &mut W, tensors: &[(String, &Tensor<f32>)]) -> Result<()> {
    w.write_all(&(tensors.len() as u32).to_le_bytes())?;
    for (name, t) in tensors {
        let nb = name.as_bytes();
        w.write_all(&(nb.len() as u16).to_le_bytes())?;
        w.write_all(nb)?;
        w.write_all(&[t.shape.len() as u8])?;
        for d in &t.shape {
            w.write_all(&(*d as u64).to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(t.data.len() * 4);
        for v in &t.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    Ok(())
}

pub fn save_checkpoint(path: &Path, ck: &Checkpoint) -> Result<()> {
    let record = Record {
        config: ck.config,
        step: ck.step,
        has_optimizer: ck.optimizer.is_some(),
        optimizer_step: ck.optimizer.as_ref().map_or(0, |o| o.step),
        hyper: ck.hyper.clone(),
    };
    let json = serde_json::to_vec(&record)?;
    let mut out = Vec::new();
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    let params: Vec<(String, &Tensor<f32>)> =
        ck.params.tensors().into_iter().map(|(n, t)| (n.to_string(), t)).collect();
    write_tensors(&mut out, &params)?;
    if let Some(opt) = &ck.optimizer {
        let mut moments: Vec<(String, &Tensor<f32>)> = Vec::new();
        moments.extend(opt.m.tensors().into_iter().map(|(n, t)| (format!("m.{n}"), t)));
        moments.extend(opt.v.tensors().into_iter().map(|(n, t)| (format!("v.{n}"), t)));
        write_tensors(&mut out, &moments)?;
    }
    let tmp = path.with_extension("tmp");
    std::fs::File::create(&tmp)?.write_all(&out)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let end = self.pos.checked_add(n)?;
        let s = self.buf.get(self.pos..end)?;
        self.pos = end;
        Some(s)
    }

    fn u8(&mut self) -> Option<u8> {
        self.take(1).map(|b| b[0])
    }

    fn u16(&mut self) -> Option<u16> {
        self.take(2).map(|b| u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self) -> Option<u32> {
        self.take(4).map(|b| u32::from_le_bytes(b.try_into().unwrap()))
    }

    fn u64(&mut self) -> Option<u64> {
        self.take(8).map(|b| u64::from_le_bytes(b.try_into().unwrap()))
    }
}

fn truncated(what: &str) -> GpnError {
    GpnError::TruncatedTensors(format!("file ends inside {what}"))
}

fn read_tensors(r: &mut Reader<'_>, section: &str) -> Result<Vec<(String, Tensor<f32>)>> {
    let count = r.u32().ok_or_else(|| truncated(section))? as usize;
    let mut out = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let nlen = r.u16().ok_or_else(|| truncated(section))? as usize;
        let name = String::from_utf8(r.take(nlen).ok_or_else(|| truncated(section))?.to_vec())
            .map_err(|_| GpnError::CheckpointFormat("tensor name is not UTF-8".into()))?;
        let rank = r.u8().ok_or_else(|| truncated(section))? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u64().ok_or_else(|| truncated(section))? as usize);
        }
        let n: usize = shape.iter().product();
        let bytes = n.checked_mul(4).and_then(|b| r.take(b)).ok_or_else(|| truncated(&name))?;
        let data = bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
        out.push((name, Tensor::from_vec(&shape, data)));
    }
    Ok(out)
}

fn read_header<'a>(buf: &'a [u8]) -> Result<(Reader<'a>, u32, Vec<u8>)> {
    let mut r = Reader { buf, pos: 0 };
    let magic = r.take(4).ok_or_else(|| GpnError::CheckpointFormat("file shorter than magic".into()))?;
    if magic != MAGIC {
        return Err(GpnError::BadMagic(magic.try_into().unwrap()));
    }
    let version = r.u32().ok_or_else(|| GpnError::CheckpointFormat("missing version".into()))?;
    if version != FORMAT_VERSION {
        return Err(GpnError::VersionMismatch { found: version, expected: FORMAT_VERSION });
    }
    let len = r.u64().ok_or_else(|| GpnError::CheckpointFormat("missing record length".into()))?;
    let json = usize::try_from(len)
        .ok()
        .and_then(|l| r.take(l))
        .ok_or_else(|| GpnError::CheckpointFormat("record shorter than declared".into()))?;
    Ok((r, version, json.to_vec()))
}

fn fill(target: &mut Params<f32>, loaded: Vec<(String, Tensor<f32>)>, prefix: &str) -> Result<()> {
    let expected = target.tensors().len();
    if loaded.len() != expected {
        return Err(GpnError::CheckpointFormat(format!(
            "{} tensors stored, model has {expected}",
            loaded.len()
        )));
    }
    for (name, t) in loaded {
        let key = name.strip_prefix(prefix).unwrap_or(&name);
        let slot = target
            .get_mut(key)
            .ok_or_else(|| GpnError::CheckpointFormat(format!("unexpected tensor {name}")))?;
        if slot.shape != t.shape {
            return Err(GpnError::CheckpointFormat(format!(
                "tensor {name} has shape {:?}, expected {:?}",
                t.shape, slot.shape
            )));
        }
        *slot = t;
    }
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let mut buf = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut buf)?;
    let (mut r, _, json) = read_header(&buf)?;
    let record: Record = serde_json::from_slice(&json)?;
    record.config.validate()?;
    let mut params = Params::<f32>::zeros(&record.config);
    fill(&mut params, read_tensors(&mut r, "parameter tensors")?, "")?;
    let optimizer = if record.has_optimizer {
        let moments = read_tensors(&mut r, "optimizer tensors")?;
        let (m_part, v_part): (Vec<_>, Vec<_>) = moments.into_iter().partition(|(n, _)| n.starts_with("m."));
        let mut m = Params::zeros(&record.config);
        let mut v = Params::zeros(&record.config);
        fill(&mut m, m_part, "m.")?;
        fill(&mut v, v_part, "v.")?;
        Some(OptimizerState { m, v, step: record.optimizer_step })
    } else {
        None
    };
    if r.pos != buf.len() {
        return Err(GpnError::CheckpointFormat(format!("{} trailing bytes", buf.len() - r.pos)));
    }
    Ok(Checkpoint { config: record.config, hyper: record.hyper, step: record.step, params, optimizer })
}

/// Reads the header and tensor directory without materializing the model.
pub fn inspect_checkpoint(path: &Path) -> Result<CheckpointHeader> {
    let mut buf = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut buf)?;
    let (mut r, version, json) = read_header(&buf)?;
    let record: Record = serde_json::from_slice(&json)?;
    let mut tensors: Vec<(String, Vec<usize>)> =
        read_tensors(&mut r, "parameter tensors")?.into_iter().map(|(n, t)| (n, t.shape)).collect();
    if record.has_optimizer {
        tensors.extend(read_tensors(&mut r, "optimizer tensors")?.into_iter().map(|(n, t)| (n, t.shape)));
    }
    Ok(CheckpointHeader {
        version,
        record_json: String::from_utf8_lossy(&json).into_owned(),
        tensors,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{random_params, Mode};

    fn sample(with_opt: bool) -> Checkpoint {
        let config = ModelConfig { d: 4, d_ffn: 6, d_emb: 4, vocab: 7, heads: 2, d_k: 2, d_v: 3, ..ModelConfig::desk(Mode::GpnM) };
        let params = random_params::<f32>(&config, 1, 0.5).unwrap();
        let optimizer = with_opt.then(|| OptimizerState {
            m: random_params(&config, 2, 0.1).unwrap(),
            v: random_params(&config, 3, 0.1).unwrap(),
            step: 17,
        });
        Checkpoint { config, hyper: Some(TrainHyper::default()), step: 17, params, optimizer }
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        for with_opt in [false, true] {
            let path = dir.path().join("a.gpn");
            let ck = sample(with_opt);
            save_checkpoint(&path, &ck).unwrap();
            assert_eq!(load_checkpoint(&path).unwrap(), ck);
        }
    }

    #[test]
    fn corrupted_magic_version_and_truncation_are_distinct() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.gpn");
        save_checkpoint(&path, &sample(true)).unwrap();
        let good = std::fs::read(&path).unwrap();

        let mut bad = good.clone();
        bad[0] = b'X';
        std::fs::write(&path, &bad).unwrap();
        assert_eq!(load_checkpoint(&path).unwrap_err().code(), "bad_magic");

        let mut bad = good.clone();
        bad[4..8].copy_from_slice(&7u32.to_le_bytes());
        std::fs::write(&path, &bad).unwrap();
        assert_eq!(load_checkpoint(&path).unwrap_err().code(), "version_mismatch");

        std::fs::write(&path, &good[..good.len() - 10]).unwrap();
        assert_eq!(load_checkpoint(&path).unwrap_err().code(), "truncated_tensors");
    }

    #[test]
    fn inspect_lists_every_tensor() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.gpn");
        let ck = sample(true);
        save_checkpoint(&path, &ck).unwrap();
        let h = inspect_checkpoint(&path).unwrap();
        assert_eq!(h.version, 1);
        assert_eq!(h.tensors.len(), 3 * ck.params.tensors().len());
        assert_eq!(h.tensors[0], ("emb".to_string(), vec![7, 4]));
        assert!(h.record_json.contains("\"has_optimizer\":true"));
    }
}
