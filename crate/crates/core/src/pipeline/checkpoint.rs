//! Trained model bundle and its binary checkpoint format.
//!
//! Layout, all integers little-endian:
//! `"NSDF"`, `u32` version, `u32` entry count, then per entry
//! `u32` name length, UTF-8 name, `u32` rank, `u64` per dimension, `f64` payload;
//! finally a `u32`-length JSON training configuration.

use std::fs;
use std::path::Path;

use ndarray::{Array2, ArrayView2};

use super::config::TrainConfig;
use super::denoiser::{Denoiser, DENOISER_PREFIX};
use crate::data::Standardizer;
use crate::error::{Error, Result};
use crate::estimators::{ChannelMlp, Target, MEAN_PREFIX, VARIANCE_PREFIX};
use crate::learner::ParameterStore;
use crate::schedule::NoiseSchedule;

pub const MAGIC: &[u8; 4] = b"NSDF";
pub const VERSION: u32 = 1;

/// Everything needed to sample forecasts: the three networks, the data scaler and the configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct NsDiffModel {
    pub config: TrainConfig,
    pub schedule: NoiseSchedule,
    pub mean: ChannelMlp,
    pub variance: ChannelMlp,
    pub denoiser: Denoiser,
    pub scaler: Standardizer,
}

fn push_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn push_entry(out: &mut Vec<u8>, name: &str, value: ArrayView2<'_, f64>) {
    push_u32(out, name.len() as u32);
    out.extend_from_slice(name.as_bytes());
    push_u32(out, 2);
    out.extend_from_slice(&(value.nrows() as u64).to_le_bytes());
    out.extend_from_slice(&(value.ncols() as u64).to_le_bytes());
    for v in value.iter() {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

fn row(values: &[f64]) -> Array2<f64> {
    Array2::from_shape_vec((1, values.len()), values.to_vec()).expect("row vector shape")
}

impl NsDiffModel {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut entries: Vec<(String, Array2<f64>)> = Vec::new();
        for store in [self.mean.store(), self.variance.store(), self.denoiser.store()] {
            entries.extend(store.iter().map(|p| (p.name.clone(), p.value.clone())));
        }
        entries.push(("scaler/mean".into(), row(&self.scaler.mean)));
        entries.push(("scaler/std".into(), row(&self.scaler.std)));

        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        push_u32(&mut out, VERSION);
        push_u32(&mut out, entries.len() as u32);
        for (name, value) in &entries {
            push_entry(&mut out, name, value.view());
        }
        let json = self.config.to_json()?;
        push_u32(&mut out, json.len() as u32);
        out.extend_from_slice(json.as_bytes());
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Format("not a checkpoint (bad magic bytes)".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {version}, expected {VERSION}")));
        }
        let count = r.u32()? as usize;
        let mut entries = Vec::with_capacity(count.min(1024));
        for _ in 0..count {
            let len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(len)?)
                .map_err(|_| Error::Format("entry name is not UTF-8".into()))?
                .to_owned();
            let rank = r.u32()?;
            if rank != 2 {
                return Err(Error::Format(format!("entry {name:?} has rank {rank}, expected 2")));
            }
            let rows = r.u64()? as usize;
            let cols = r.u64()? as usize;
            let n = rows
                .checked_mul(cols)
                .filter(|n| n.checked_mul(8).is_some_and(|b| b <= r.remaining()))
                .ok_or_else(|| Error::Format(format!("entry {name:?} is truncated")))?;
            let data: Vec<f64> = r
                .take(n * 8)?
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect();
            let value = Array2::from_shape_vec((rows, cols), data).map_err(|e| Error::Format(e.to_string()))?;
            entries.push((name, value));
        }
        let len = r.u32()? as usize;
        let json = std::str::from_utf8(r.take(len)?).map_err(|_| Error::Format("config trailer is not UTF-8".into()))?;
        let config = TrainConfig::from_json(json)?;
        if r.remaining() != 0 {
            return Err(Error::Format(format!("{} trailing bytes after the config", r.remaining())));
        }
        Self::assemble(config, entries)
    }

    fn assemble(config: TrainConfig, entries: Vec<(String, Array2<f64>)>) -> Result<Self> {
        let section = |prefix: &str| -> Result<ParameterStore> {
            let mut store = ParameterStore::new();
            for (name, value) in &entries {
                if name.strip_prefix(prefix).is_some_and(|rest| rest.starts_with('/')) {
                    store.insert(name.clone(), value.clone()).map_err(|_| Error::Format(format!("duplicate entry {name:?}")))?;
                }
            }
            if store.is_empty() {
                return Err(Error::MissingArtifact(format!("checkpoint section {prefix}/*")));
            }
            Ok(store)
        };
        let vector = |name: &str| -> Result<Vec<f64>> {
            let (_, v) = entries
                .iter()
                .find(|(n, _)| n == name)
                .ok_or_else(|| Error::MissingArtifact(format!("checkpoint entry {name}")))?;
            Ok(v.iter().copied().collect())
        };
        let mean = ChannelMlp::from_store(section(MEAN_PREFIX)?, MEAN_PREFIX, config.estimator_spec(Target::Mean)?)?;
        let variance = ChannelMlp::from_store(
            section(VARIANCE_PREFIX)?,
            VARIANCE_PREFIX,
            config.estimator_spec(Target::Variance)?,
        )?;
        let denoiser = Denoiser::from_store(
            section(DENOISER_PREFIX)?,
            config.denoiser_spec()?,
            config.steps,
            config.step_embedding,
            config.variant,
        )?;
        let scaler = Standardizer {
            mean: vector("scaler/mean")?,
            std: vector("scaler/std")?,
        };
        if scaler.mean.len() != scaler.std.len() {
            return Err(Error::Format("scaler mean and std lengths differ".into()));
        }
        Ok(Self {
            schedule: config.schedule()?,
            config,
            mean,
            variance,
            denoiser,
            scaler,
        })
    }

    pub fn features(&self) -> usize {
        self.scaler.mean.len()
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if n > self.remaining() {
            return Err(Error::Format(format!(
                "truncated checkpoint: wanted {n} bytes at offset {}, {} left",
                self.pos,
                self.remaining()
            )));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn save_checkpoint(path: impl AsRef<Path>, model: &NsDiffModel) -> Result<()> {
    let path = path.as_ref();
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, model.to_bytes()?).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<NsDiffModel> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            Error::MissingArtifact(format!("checkpoint {}", path.display()))
        } else {
            Error::io(path, e)
        }
    })?;
    NsDiffModel::from_bytes(&bytes)
}
