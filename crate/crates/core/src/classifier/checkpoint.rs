//! Flat little-endian weight file plus a JSON metadata sidecar.
//!
//! Layout: magic `RSIFTCNN`, `u32` version, seven `u32` architecture fields
//! (input length, conv1 filters, conv1 kernel, conv2 filters, conv2 kernel,
//! dense units, outputs), `f64` dropout rate, `u64` optimizer step, `u64`
//! parameter count `P`, then `P` weights, `P` first moments and `P` second
//! moments as `f64`.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::adam::{Adam, AdamParams};
use super::model::{Architecture, Model};
use super::train::{Classifier, Metrics, TrainConfig};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"RSIFTCNN";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub format_version: u32,
    pub architecture: Architecture,
    pub class_names: Vec<String>,
    pub config: TrainConfig,
    pub seed: u64,
    pub fold_metrics: Vec<Metrics>,
    pub selected_fold: Option<usize>,
    pub epoch_losses: Vec<f64>,
}

pub fn encode(classifier: &Classifier) -> Vec<u8> {
    let model = &classifier.model;
    let a = model.architecture();
    let p = model.params();
    let mut out = Vec::with_capacity(64 + 24 * p.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    for d in [a.input_len, a.conv1_filters, a.conv1_kernel, a.conv2_filters, a.conv2_kernel, a.dense_units, a.outputs] {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    out.extend_from_slice(&model.dropout_rate.to_le_bytes());
    out.extend_from_slice(&classifier.optimizer.step.to_le_bytes());
    out.extend_from_slice(&(p.len() as u64).to_le_bytes());
    for block in [p, &classifier.optimizer.m, &classifier.optimizer.v] {
        for w in block {
            out.extend_from_slice(&w.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or(Error::Truncated)?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(n.checked_mul(8).ok_or(Error::Truncated)?)?;
        Ok(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
    }
}

/// Decode a weight file. Adam hyperparameters are not stored in the binary
/// and come from `adam`.
pub fn decode(bytes: &[u8], adam: AdamParams) -> Result<Classifier> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(Error::Format("not a classifier checkpoint".into()));
    }
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let mut d = [0usize; 7];
    for v in &mut d {
        *v = r.u32()? as usize;
    }
    let arch = Architecture {
        input_len: d[0],
        conv1_filters: d[1],
        conv1_kernel: d[2],
        conv2_filters: d[3],
        conv2_kernel: d[4],
        dense_units: d[5],
        outputs: d[6],
    };
    let dropout = r.f64()?;
    let step = r.u64()?;
    let n = r.u64()? as usize;
    if n != arch.n_params()? {
        return Err(Error::ShapeMismatch(format!("checkpoint holds {n} parameters for {arch:?}")));
    }
    let params = r.f64s(n)?;
    let m = r.f64s(n)?;
    let v = r.f64s(n)?;
    if r.pos != bytes.len() {
        return Err(Error::Format("trailing bytes after checkpoint".into()));
    }
    let model = Model::from_params(arch, dropout, params)?;
    let optimizer = Adam { params: adam, m, v, step };
    Ok(Classifier { model, optimizer, epoch_losses: Vec::new() })
}

pub fn save(classifier: &Classifier, meta: &CheckpointMeta, weights: impl AsRef<Path>, meta_path: impl AsRef<Path>) -> Result<()> {
    fs::write(weights, encode(classifier))?;
    let mut f = fs::File::create(meta_path)?;
    serde_json::to_writer_pretty(&mut f, meta).map_err(|e| Error::Format(e.to_string()))?;
    f.write_all(b"\n")?;
    Ok(())
}

pub fn load(weights: impl AsRef<Path>, meta_path: impl AsRef<Path>) -> Result<(Classifier, CheckpointMeta)> {
    let meta: CheckpointMeta =
        serde_json::from_slice(&fs::read(meta_path)?).map_err(|e| Error::Format(e.to_string()))?;
    let mut classifier = decode(&fs::read(weights)?, meta.config.adam)?;
    if classifier.model.architecture() != meta.architecture {
        return Err(Error::ShapeMismatch("metadata and weight file disagree on architecture".into()));
    }
    classifier.epoch_losses = meta.epoch_losses.clone();
    Ok((classifier, meta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_for;

    fn small() -> Classifier {
        let arch = Architecture {
            input_len: 12,
            conv1_filters: 2,
            conv1_kernel: 5,
            conv2_filters: 3,
            conv2_kernel: 3,
            dense_units: 4,
            outputs: 3,
        };
        let model = Model::init(arch, &mut rng_for(5, &[])).unwrap();
        let mut optimizer = Adam::new(model.params().len(), AdamParams::default());
        optimizer.step = 7;
        optimizer.m[0] = 0.25;
        optimizer.v[1] = 1e-9;
        Classifier { model, optimizer, epoch_losses: vec![] }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let c = small();
        let bytes = encode(&c);
        let back = decode(&bytes, AdamParams::default()).unwrap();
        assert_eq!(back, c);
        assert_eq!(encode(&back), bytes);
    }

    #[test]
    fn rejects_damage() {
        let bytes = encode(&small());
        assert!(matches!(decode(&bytes[..bytes.len() - 3], AdamParams::default()), Err(Error::Truncated)));
        let mut bad = bytes.clone();
        bad[8] = 9;
        assert!(decode(&bad, AdamParams::default()).is_err());
        let mut long = bytes;
        long.push(0);
        assert!(decode(&long, AdamParams::default()).is_err());
    }
}
