//! Checkpoint persistence for learned-optimizer weights.
//!
//! The on-disk format is a small self-describing binary: the magic bytes
//! `OPENOPT1`, a length-prefixed JSON descriptor (architecture, feature mask,
//! shared/separated flag, provenance), the flat meta-parameter vector as
//! little-endian f64, and optionally the outer-loop state for resuming.

use crate::es::EsState;
use crate::optim::{FeatureMask, OpenArch, OpenOptimizer};
use crate::{Error, Result};
use std::io::{Read, Write};
use std::path::Path;

const MAGIC: &[u8; 8] = b"OPENOPT1";

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Provenance {
    pub config_hash: String,
    pub generation: u64,
    pub validation_fitness: f64,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
struct Descriptor {
    version: u32,
    arch: OpenArch,
    mask: FeatureMask,
    separated: bool,
    meta_len: usize,
    has_es_state: bool,
    provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub arch: OpenArch,
    pub mask: FeatureMask,
    pub separated: bool,
    pub meta: Vec<f64>,
    pub es_state: Option<EsState>,
    pub provenance: Provenance,
}

fn write_f64s(buf: &mut Vec<u8>, values: &[f64]) {
    buf.extend_from_slice(&(values.len() as u64).to_le_bytes());
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

fn read_f64s(r: &mut impl Read) -> Result<Vec<f64>> {
    let mut len8 = [0u8; 8];
    r.read_exact(&mut len8)?;
    let n = u64::from_le_bytes(len8) as usize;
    let mut out = Vec::with_capacity(n);
    let mut b = [0u8; 8];
    for _ in 0..n {
        r.read_exact(&mut b)?;
        out.push(f64::from_le_bytes(b));
    }
    Ok(out)
}

impl Checkpoint {
    pub fn validate(&self) -> Result<()> {
        let expected = OpenOptimizer::n_params_meta(self.arch, self.separated);
        if self.meta.len() != expected {
            return Err(Error::Config(format!(
                "checkpoint meta length {} does not match architecture ({:?}, separated={}) expecting {expected}",
                self.meta.len(),
                self.arch,
                self.separated,
            )));
        }
        if let Some(es) = &self.es_state {
            if es.mean.len() != expected || es.adam_m.len() != expected || es.adam_v.len() != expected {
                return Err(Error::Config("checkpoint outer-loop state has mismatched lengths".into()));
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        self.validate()?;
        let descriptor = Descriptor {
            version: 1,
            arch: self.arch,
            mask: self.mask,
            separated: self.separated,
            meta_len: self.meta.len(),
            has_es_state: self.es_state.is_some(),
            provenance: self.provenance.clone(),
        };
        let desc_json = serde_json::to_vec(&descriptor).expect("descriptor serializes");
        let mut buf = Vec::new();
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&(desc_json.len() as u32).to_le_bytes());
        buf.extend_from_slice(&desc_json);
        for v in &self.meta {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        if let Some(es) = &self.es_state {
            write_f64s(&mut buf, &es.mean);
            write_f64s(&mut buf, &es.adam_m);
            write_f64s(&mut buf, &es.adam_v);
            buf.extend_from_slice(&es.sigma.to_le_bytes());
            buf.extend_from_slice(&es.lr.to_le_bytes());
            buf.extend_from_slice(&es.generation.to_le_bytes());
            buf.extend_from_slice(&es.adam_step.to_le_bytes());
        }
        Ok(buf)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Checkpoint> {
        let mut r = bytes;
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)
            .map_err(|_| Error::Config("checkpoint truncated before magic".into()))?;
        if &magic != MAGIC {
            return Err(Error::Config(format!(
                "not a checkpoint: magic {:?} != {:?}",
                String::from_utf8_lossy(&magic),
                String::from_utf8_lossy(MAGIC)
            )));
        }
        let mut len4 = [0u8; 4];
        r.read_exact(&mut len4)
            .map_err(|_| Error::Config("checkpoint truncated in descriptor length".into()))?;
        let desc_len = u32::from_le_bytes(len4) as usize;
        if r.len() < desc_len {
            return Err(Error::Config("checkpoint truncated in descriptor".into()));
        }
        let (desc_bytes, rest) = r.split_at(desc_len);
        let descriptor: Descriptor = serde_json::from_slice(desc_bytes)
            .map_err(|e| Error::Config(format!("corrupt checkpoint descriptor: {e}")))?;
        if descriptor.version != 1 {
            return Err(Error::Config(format!("unrecognized checkpoint version {}", descriptor.version)));
        }
        let mut r = rest;
        let mut meta = Vec::with_capacity(descriptor.meta_len);
        let mut b = [0u8; 8];
        for _ in 0..descriptor.meta_len {
            r.read_exact(&mut b)
                .map_err(|_| Error::Config("checkpoint truncated in meta vector".into()))?;
            meta.push(f64::from_le_bytes(b));
        }
        let es_state = if descriptor.has_es_state {
            let mean = read_f64s(&mut r)?;
            let adam_m = read_f64s(&mut r)?;
            let adam_v = read_f64s(&mut r)?;
            let mut f8 = [0u8; 8];
            r.read_exact(&mut f8)?;
            let sigma = f64::from_le_bytes(f8);
            r.read_exact(&mut f8)?;
            let lr = f64::from_le_bytes(f8);
            r.read_exact(&mut f8)?;
            let generation = u64::from_le_bytes(f8);
            r.read_exact(&mut f8)?;
            let adam_step = u64::from_le_bytes(f8);
            Some(EsState { mean, sigma, lr, generation, adam_m, adam_v, adam_step })
        } else {
            None
        };
        if !r.is_empty() {
            return Err(Error::Config(format!("{} trailing bytes after checkpoint payload", r.len())));
        }
        let ckpt = Checkpoint {
            arch: descriptor.arch,
            mask: descriptor.mask,
            separated: descriptor.separated,
            meta,
            es_state,
            provenance: descriptor.provenance,
        };
        ckpt.validate()?;
        Ok(ckpt)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        let mut f = std::fs::File::create(path)?;
        f.write_all(&bytes)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        let bytes = std::fs::read(path)
            .map_err(|e| Error::Config(format!("cannot read checkpoint {}: {e}", path.display())))?;
        Checkpoint::from_bytes(&bytes)
    }
}
