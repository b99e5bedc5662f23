//! Memory checkpoint layout (little-endian):
//!
//! ```text
//! magic        4 bytes  "DCPK"
//! version      u32      1
//! header_len   u64
//! header       JSON {dim, num_groups, domains, param_count, config}
//! per domain t = 0..domains:
//!   centroid   dim f64
//!   params     param_count f64 in CalibratorParams::flatten order:
//!              coarse MLP, then fine MLP of group 0, 1, ...;
//!              each MLP layer by layer, weights row-major (out × in)
//!              followed by biases
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::DomainMemory;
use crate::calibrator::{CalibratorParams, TrainConfig};
use crate::error::{Error, Result};
use crate::rng::seeded;
use crate::store::Cursor;

const MAGIC: &[u8; 4] = b"DCPK";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    dim: usize,
    num_groups: usize,
    domains: usize,
    param_count: usize,
    config: TrainConfig,
}

impl DomainMemory {
    pub fn to_bytes(&self, config: &TrainConfig) -> Result<Vec<u8>> {
        let first = self
            .params
            .first()
            .ok_or_else(|| Error::Undefined("empty memory".into()))?;
        let header = Header {
            dim: first.dim,
            num_groups: first.num_groups(),
            domains: self.len(),
            param_count: first.param_count(),
            config: config.clone(),
        };
        let json = serde_json::to_vec(&header).map_err(|e| Error::Manifest(e.to_string()))?;
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for (c, p) in self.centroids.iter().zip(&self.params) {
            if p.param_count() != header.param_count || c.len() != header.dim {
                return Err(Error::Shape("domains disagree on parameter layout".into()));
            }
            for v in c.iter().chain(&p.flatten()) {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    /// Returns the memory and the training configuration stored with it.
    pub fn from_bytes(bytes: &[u8]) -> Result<(DomainMemory, TrainConfig)> {
        let mut cur = Cursor::new(bytes);
        if cur.take(4, "magic")? != MAGIC {
            return Err(Error::CorruptHeader("not a memory checkpoint".into()));
        }
        let version = cur.u32("version")?;
        if version != VERSION {
            return Err(Error::CorruptHeader(format!(
                "checkpoint version {version}"
            )));
        }
        let len = cur.u64("header length")? as usize;
        let header: Header = serde_json::from_slice(cur.take(len, "checkpoint header")?)
            .map_err(|e| Error::Manifest(e.to_string()))?;
        let template = CalibratorParams::init(
            header.dim,
            header.num_groups,
            &header.config.arch,
            &mut seeded(0),
        )?;
        if template.param_count() != header.param_count {
            return Err(Error::Shape(
                "architecture does not match parameter count".into(),
            ));
        }
        let mut memory = DomainMemory {
            centroids: Vec::with_capacity(header.domains),
            params: Vec::with_capacity(header.domains),
        };
        for _ in 0..header.domains {
            memory
                .centroids
                .push(cur.f64_block(header.dim, "centroid")?);
            let mut p = template.clone();
            p.unflatten(&cur.f64_block(header.param_count, "parameters")?)?;
            if !p.is_finite() {
                return Err(Error::NonFinite("checkpoint parameters".into()));
            }
            memory.params.push(p);
        }
        if cur.remaining() != 0 {
            return Err(Error::CorruptHeader(
                "trailing bytes after checkpoint".into(),
            ));
        }
        Ok((memory, header.config))
    }

    pub fn save(&self, config: &TrainConfig, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes(config)?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<(DomainMemory, TrainConfig)> {
        let path = path.as_ref();
        Self::from_bytes(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
    }
}
