//! On-disk embedding container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic       4 bytes   "DCP1"
//! version     u32       1
//! n           u32       rows
//! d           u32       feature dimension
//! k           u32       classes
//! t           u32       domains
//! normalized  u8        0 or 1
//! features    n*d f32   row-major
//! labels      n u32
//! domain_ids  n u32
//! json_len    u64
//! manifest    json_len bytes of UTF-8 JSON {"class_names": [..], "domain_names": [..]}
//! ```

use std::cell::Cell;
use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{norm, normalized, Matrix};

pub const MAGIC: &[u8; 4] = b"DCP1";
pub const VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 * 5 + 1;

/// Tolerance on row norms when the normalized flag is set.
pub const UNIT_ROW_TOL: f64 = 1e-5;
/// Tolerance on guidance column norms.
pub const UNIT_COLUMN_TOL: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub class_names: Vec<String>,
    pub domain_names: Vec<String>,
}

impl Manifest {
    fn validate(&self) -> Result<()> {
        if self.class_names.is_empty() {
            return Err(Error::Manifest("no classes".into()));
        }
        if self.domain_names.is_empty() {
            return Err(Error::Manifest("no domains".into()));
        }
        let mut seen = HashSet::new();
        for name in &self.class_names {
            if name.is_empty() {
                return Err(Error::Manifest("empty class name".into()));
            }
            if !seen.insert(name.as_str()) {
                return Err(Error::Manifest(format!("duplicate class name {name:?}")));
            }
        }
        Ok(())
    }
}

/// Feature rows with class labels and domain ids. Immutable once built.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingSet {
    dim: usize,
    features: Vec<f32>,
    labels: Vec<u32>,
    domain_ids: Vec<u32>,
    manifest: Manifest,
    normalized: bool,
}

impl EmbeddingSet {
    pub fn new(
        dim: usize,
        features: Vec<f32>,
        labels: Vec<u32>,
        domain_ids: Vec<u32>,
        manifest: Manifest,
        normalized: bool,
    ) -> Result<Self> {
        let set = EmbeddingSet {
            dim,
            features,
            labels,
            domain_ids,
            manifest,
            normalized,
        };
        set.validate()?;
        Ok(set)
    }

    /// Convenience constructor from `f64` rows; values are rounded to `f32`.
    pub fn from_rows(
        rows: &[Vec<f64>],
        labels: Vec<u32>,
        domain_ids: Vec<u32>,
        manifest: Manifest,
        normalized: bool,
    ) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::Shape("ragged rows".into()));
        }
        let features = rows.iter().flatten().map(|&v| v as f32).collect();
        Self::new(dim, features, labels, domain_ids, manifest, normalized)
    }

    fn validate(&self) -> Result<()> {
        let n = self.labels.len();
        if n == 0 {
            return Err(Error::Empty);
        }
        if self.dim < 2 {
            return Err(Error::Shape(format!("dimension {} < 2", self.dim)));
        }
        if self.features.len() != n * self.dim || self.domain_ids.len() != n {
            return Err(Error::Shape(format!(
                "{} features, {} labels, {} domain ids for d = {}",
                self.features.len(),
                n,
                self.domain_ids.len(),
                self.dim
            )));
        }
        self.manifest.validate()?;
        if let Some(i) = self.features.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "row {} column {}",
                i / self.dim,
                i % self.dim
            )));
        }
        let k = self.num_classes();
        if let Some(&label) = self.labels.iter().find(|&&l| l as usize >= k) {
            return Err(Error::LabelOutOfRange { label, classes: k });
        }
        let t = self.num_domains();
        if let Some(&domain) = self.domain_ids.iter().find(|&&g| g as usize >= t) {
            return Err(Error::DomainOutOfRange { domain, domains: t });
        }
        if self.normalized {
            for i in 0..n {
                if (norm(&self.row_f64(i)) - 1.0).abs() > UNIT_ROW_TOL {
                    return Err(Error::NotNormalized(i));
                }
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_classes(&self) -> usize {
        self.manifest.class_names.len()
    }

    pub fn num_domains(&self) -> usize {
        self.manifest.domain_names.len()
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    pub fn features(&self) -> &[f32] {
        &self.features
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn domain_ids(&self) -> &[u32] {
        &self.domain_ids
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn row_f64(&self, i: usize) -> Vec<f64> {
        self.row(i).iter().map(|&v| f64::from(v)).collect()
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i] as usize
    }

    pub fn domain(&self, i: usize) -> usize {
        self.domain_ids[i] as usize
    }

    /// Indices of rows belonging to `domain`, in file order.
    pub fn domain_rows(&self, domain: usize) -> Vec<usize> {
        (0..self.len())
            .filter(|&i| self.domain(i) == domain)
            .collect()
    }

    /// Copies out the rows of a single domain. The trainer for that domain
    /// only ever sees this view.
    pub fn domain_view(&self, domain: usize) -> Result<DomainView> {
        if domain >= self.num_domains() {
            return Err(Error::MissingDomain(domain));
        }
        let idx = self.domain_rows(domain);
        if idx.is_empty() {
            return Err(Error::MissingDomain(domain));
        }
        let mut features = Matrix::zeros(idx.len(), self.dim);
        for (r, &i) in idx.iter().enumerate() {
            features.row_mut(r).copy_from_slice(&self.row_f64(i));
        }
        Ok(DomainView {
            domain,
            num_domains: self.num_domains(),
            origins: idx.iter().map(|&i| self.domain(i)).collect(),
            labels: idx.iter().map(|&i| self.label(i)).collect(),
            features,
            reads: (0..self.num_domains()).map(|_| Cell::new(0)).collect(),
        })
    }

    /// Returns a copy whose rows are scaled to unit L2 norm (computed in
    /// `f64`, stored back as `f32`).
    pub fn normalize_rows(&self) -> Result<EmbeddingSet> {
        let mut features = Vec::with_capacity(self.features.len());
        for i in 0..self.len() {
            let row = self.row_f64(i);
            let n = norm(&row);
            if n == 0.0 {
                return Err(Error::ZeroVector(format!("row {i}")));
            }
            features.extend(row.iter().map(|v| (v / n) as f32));
        }
        EmbeddingSet::new(
            self.dim,
            features,
            self.labels.clone(),
            self.domain_ids.clone(),
            self.manifest.clone(),
            true,
        )
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        self.validate()?;
        let json =
            serde_json::to_vec(&self.manifest).map_err(|e| Error::Manifest(e.to_string()))?;
        let n = self.len();
        let mut out = Vec::with_capacity(HEADER_LEN + 4 * (n * self.dim + 2 * n) + 8 + json.len());
        out.extend_from_slice(MAGIC);
        for v in [
            VERSION,
            n as u32,
            self.dim as u32,
            self.num_classes() as u32,
            self.num_domains() as u32,
        ] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.push(u8::from(self.normalized));
        for v in &self.features {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for v in self.labels.iter().chain(&self.domain_ids) {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cur = Cursor::new(bytes);
        let magic = cur
            .take(4, "magic")
            .map_err(|_| Error::CorruptHeader("missing magic".into()))?;
        if magic != MAGIC {
            return Err(Error::CorruptHeader(format!("bad magic {magic:?}")));
        }
        let header = |cur: &mut Cursor, what: &str| {
            cur.u32(what)
                .map_err(|_| Error::CorruptHeader(format!("header ends before {what}")))
        };
        let version = header(&mut cur, "version")?;
        if version != VERSION {
            return Err(Error::CorruptHeader(format!(
                "unsupported version {version}"
            )));
        }
        let n = header(&mut cur, "n")? as usize;
        let d = header(&mut cur, "d")? as usize;
        let k = header(&mut cur, "k")? as usize;
        let t = header(&mut cur, "t")? as usize;
        let flag = cur
            .take(1, "normalized flag")
            .map_err(|_| Error::CorruptHeader("header ends before flag".into()))?[0];
        let normalized = match flag {
            0 => false,
            1 => true,
            other => return Err(Error::CorruptHeader(format!("normalized flag {other}"))),
        };
        if n == 0 {
            return Err(Error::Empty);
        }
        if d < 2 {
            return Err(Error::CorruptHeader(format!("dimension {d} < 2")));
        }
        if k == 0 || t == 0 {
            return Err(Error::CorruptHeader("zero classes or domains".into()));
        }
        let cells = n
            .checked_mul(d)
            .ok_or_else(|| Error::CorruptHeader("n*d overflows".into()))?;
        let feat_bytes = cur.take(
            cells
                .checked_mul(4)
                .ok_or_else(|| Error::CorruptHeader("n*d overflows".into()))?,
            "feature block",
        )?;
        let features: Vec<f32> = feat_bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let labels = cur.u32_block(n, "labels")?;
        let domain_ids = cur.u32_block(n, "domain ids")?;
        let json_len = cur.u64("manifest length")?;
        let json_len = usize::try_from(json_len)
            .map_err(|_| Error::CorruptHeader("manifest length overflows".into()))?;
        let json = cur.take(json_len, "manifest")?;
        if cur.remaining() != 0 {
            return Err(Error::CorruptHeader(format!(
                "{} trailing bytes",
                cur.remaining()
            )));
        }
        let manifest: Manifest =
            serde_json::from_slice(json).map_err(|e| Error::Manifest(e.to_string()))?;
        if manifest.class_names.len() != k || manifest.domain_names.len() != t {
            return Err(Error::Manifest(format!(
                "header says K = {k}, T = {t}; manifest lists {} classes, {} domains",
                manifest.class_names.len(),
                manifest.domain_names.len()
            )));
        }
        EmbeddingSet::new(d, features, labels, domain_ids, manifest, normalized)
    }
}

/// Reads and validates a container.
pub fn load(path: impl AsRef<Path>) -> Result<EmbeddingSet> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    EmbeddingSet::from_bytes(&bytes)
}

/// Validates and writes a container.
pub fn save(set: &EmbeddingSet, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = set.to_bytes()?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub(crate) struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    pub(crate) fn new(bytes: &'a [u8]) -> Self {
        Cursor { bytes, pos: 0 }
    }

    pub(crate) fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    pub(crate) fn take(&mut self, len: usize, what: &str) -> Result<&'a [u8]> {
        if self.remaining() < len {
            return Err(Error::Truncated(format!(
                "{what}: need {len} bytes, {} left",
                self.remaining()
            )));
        }
        let out = &self.bytes[self.pos..self.pos + len];
        self.pos += len;
        Ok(out)
    }

    pub(crate) fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    pub(crate) fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    pub(crate) fn u32_block(&mut self, n: usize, what: &str) -> Result<Vec<u32>> {
        let len = n
            .checked_mul(4)
            .ok_or_else(|| Error::CorruptHeader(format!("{what} length overflows")))?;
        Ok(self
            .take(len, what)?
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    pub(crate) fn f64_block(&mut self, n: usize, what: &str) -> Result<Vec<f64>> {
        let len = n
            .checked_mul(8)
            .ok_or_else(|| Error::CorruptHeader(format!("{what} length overflows")))?;
        Ok(self
            .take(len, what)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

/// The rows of one domain, copied out of an [`EmbeddingSet`].
///
/// Every feature read goes through [`DomainView::features`] and is tallied
/// against the domain the row originated from.
#[derive(Debug)]
pub struct DomainView {
    domain: usize,
    num_domains: usize,
    origins: Vec<usize>,
    labels: Vec<usize>,
    features: Matrix,
    reads: Vec<Cell<u64>>,
}

impl DomainView {
    pub fn domain(&self) -> usize {
        self.domain
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn features(&self, i: usize) -> &[f64] {
        let origin = &self.reads[self.origins[i]];
        origin.set(origin.get() + 1);
        self.features.row(i)
    }

    /// Feature reads so far, indexed by originating domain.
    pub fn reads_by_domain(&self) -> Vec<u64> {
        debug_assert_eq!(self.reads.len(), self.num_domains);
        self.reads.iter().map(Cell::get).collect()
    }

    /// Mean feature of the view, without touching the read counters.
    pub fn centroid(&self) -> Vec<f64> {
        self.mean_of(|row| row.to_vec())
    }

    /// Mean of the unit-normalized features; zero rows are skipped in the
    /// sum but still counted.
    pub fn normalized_centroid(&self) -> Vec<f64> {
        self.mean_of(|row| normalized(row).unwrap_or_else(|| vec![0.0; row.len()]))
    }

    fn mean_of(&self, map: impl Fn(&[f64]) -> Vec<f64>) -> Vec<f64> {
        let mut c = vec![0.0; self.dim()];
        for i in 0..self.len() {
            for (a, b) in c.iter_mut().zip(map(self.features.row(i))) {
                *a += b;
            }
        }
        let n = self.len() as f64;
        c.iter_mut().for_each(|v| *v /= n);
        c
    }
}

/// Unit-norm class guidance vectors, one column per class, in manifest order.
#[derive(Clone, Debug, PartialEq)]
pub struct GuidanceMatrix {
    columns: Matrix,
    class_names: Vec<String>,
}

impl GuidanceMatrix {
    /// Normalizes each column in `f64`; a zero column is an error.
    pub fn from_columns(columns: &[Vec<f64>], class_names: Vec<String>) -> Result<Self> {
        if columns.is_empty() {
            return Err(Error::Empty);
        }
        if columns.len() != class_names.len() {
            return Err(Error::Shape(format!(
                "{} guidance columns for {} class names",
                columns.len(),
                class_names.len()
            )));
        }
        let d = columns[0].len();
        let mut unit = Vec::with_capacity(columns.len());
        for (i, c) in columns.iter().enumerate() {
            if c.len() != d {
                return Err(Error::Shape("ragged guidance columns".into()));
            }
            if c.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("guidance column {i}")));
            }
            let n = norm(c);
            if n == 0.0 {
                return Err(Error::ZeroVector(format!("guidance column {i}")));
            }
            unit.push(c.iter().map(|v| v / n).collect::<Vec<_>>());
        }
        Manifest {
            class_names: class_names.clone(),
            domain_names: vec!["guidance".into()],
        }
        .validate()?;
        Ok(GuidanceMatrix {
            columns: Matrix::from_columns(&unit),
            class_names,
        })
    }

    /// Reads guidance stored as a container with exactly one row per class.
    pub fn from_set(set: &EmbeddingSet) -> Result<Self> {
        let k = set.num_classes();
        if set.len() != k {
            return Err(Error::Shape(format!(
                "guidance container has {} rows for {k} classes",
                set.len()
            )));
        }
        let mut columns: Vec<Option<Vec<f64>>> = vec![None; k];
        for i in 0..set.len() {
            let slot = &mut columns[set.label(i)];
            if slot.is_some() {
                return Err(Error::Manifest(format!(
                    "class {} has two guidance rows",
                    set.label(i)
                )));
            }
            *slot = Some(set.row_f64(i));
        }
        let columns: Vec<Vec<f64>> = columns.into_iter().map(Option::unwrap).collect();
        Self::from_columns(&columns, set.manifest().class_names.clone())
    }

    pub fn to_set(&self) -> Result<EmbeddingSet> {
        let k = self.num_classes();
        EmbeddingSet::from_rows(
            &self.columns.columns(),
            (0..k as u32).collect(),
            vec![0; k],
            Manifest {
                class_names: self.class_names.clone(),
                domain_names: vec!["guidance".into()],
            },
            true,
        )
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_set(&load(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        save(&self.to_set()?, path)
    }

    /// `d × K` matrix of unit columns.
    pub fn matrix(&self) -> &Matrix {
        &self.columns
    }

    pub fn column(&self, i: usize) -> Vec<f64> {
        self.columns.col(i)
    }

    pub fn dim(&self) -> usize {
        self.columns.rows()
    }

    pub fn num_classes(&self) -> usize {
        self.columns.cols()
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }
}
