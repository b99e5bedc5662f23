use std::path::Path;

use serde::{Deserialize, Serialize};

use super::etf::{etf_from_basis, vanilla_prototypes, VanillaPrototypes};
use super::graph::{connected_groups, similarity_graph, Grouping};
use crate::error::{Error, Result};
use crate::linalg::{householder_qr, normalized, Matrix};
use crate::store::{Cursor, EmbeddingSet, GuidanceMatrix};

/// How the class grouping was obtained.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BankMode {
    /// Grouping from thresholded guidance similarity.
    Dual,
    /// Every class its own group: one flat ETF over all classes.
    Vanilla,
}

/// Coarse prototypes (one per group), fine prototypes (one matrix per
/// group) and, when `K ≤ d`, the flat vanilla prototypes for comparison.
#[derive(Clone, Debug, PartialEq)]
pub struct DualPrototypeBank {
    pub mode: BankMode,
    pub threshold: f64,
    pub coarse: Matrix,
    pub fine: Vec<Matrix>,
    pub grouping: Grouping,
    pub vanilla: Option<VanillaPrototypes>,
    pub class_names: Vec<String>,
}

impl DualPrototypeBank {
    pub fn dim(&self) -> usize {
        self.coarse.rows()
    }

    pub fn num_classes(&self) -> usize {
        self.grouping.num_classes()
    }

    pub fn num_groups(&self) -> usize {
        self.grouping.num_groups()
    }

    pub fn coarse_prototype(&self, group: usize) -> Vec<f64> {
        self.coarse.col(group)
    }

    pub fn fine_prototype(&self, group: usize, member: usize) -> Vec<f64> {
        self.fine[group].col(member)
    }

    /// Coarse and fine targets of a class.
    pub fn targets(&self, class: usize) -> (usize, Vec<f64>, Vec<f64>) {
        let (g, m) = self.grouping.locate(class);
        (g, self.coarse_prototype(g), self.fine_prototype(g, m))
    }

    /// Binary layout: magic `DCPB`, u32 version, u64 JSON header length,
    /// JSON header, then matrix blocks (u32 rows, u32 cols, rows*cols f64,
    /// row-major, little-endian) in the order coarse, fine 0..N_g, vanilla.
    pub fn to_bytes(&self) -> Vec<u8> {
        let header = BankHeader {
            mode: self.mode,
            threshold: self.threshold,
            dim: self.dim(),
            num_classes: self.num_classes(),
            num_groups: self.num_groups(),
            groups: self.grouping.groups().to_vec(),
            has_vanilla: self.vanilla.is_some(),
            class_names: self.class_names.clone(),
        };
        let json = serde_json::to_vec(&header).expect("bank header serializes");
        let mut out = Vec::new();
        out.extend_from_slice(BANK_MAGIC);
        out.extend_from_slice(&BANK_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        let vanilla = self.vanilla.as_ref().map(|v| &v.e);
        for m in std::iter::once(&self.coarse)
            .chain(&self.fine)
            .chain(vanilla)
        {
            write_block(&mut out, m);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cur = Cursor::new(bytes);
        if cur.take(4, "magic")? != BANK_MAGIC {
            return Err(Error::CorruptHeader("not a prototype bank".into()));
        }
        let version = cur.u32("version")?;
        if version != BANK_VERSION {
            return Err(Error::CorruptHeader(format!("bank version {version}")));
        }
        let len = cur.u64("header length")? as usize;
        let header: BankHeader = serde_json::from_slice(cur.take(len, "bank header")?)
            .map_err(|e| Error::Manifest(e.to_string()))?;
        let grouping = Grouping::from_groups(header.groups, header.num_classes)?;
        if grouping.num_groups() != header.num_groups {
            return Err(Error::Manifest("group count mismatch".into()));
        }
        let coarse = read_block(&mut cur, header.dim, header.num_groups)?;
        let fine = grouping
            .groups()
            .iter()
            .map(|g| read_block(&mut cur, header.dim, g.len()))
            .collect::<Result<Vec<_>>>()?;
        let vanilla = if header.has_vanilla {
            Some(VanillaPrototypes {
                e: read_block(&mut cur, header.dim, header.num_classes)?,
            })
        } else {
            None
        };
        if cur.remaining() != 0 {
            return Err(Error::CorruptHeader("trailing bytes after bank".into()));
        }
        Ok(DualPrototypeBank {
            mode: header.mode,
            threshold: header.threshold,
            coarse,
            fine,
            grouping,
            vanilla,
            class_names: header.class_names,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_bytes(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
    }
}

const BANK_MAGIC: &[u8; 4] = b"DCPB";
const BANK_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct BankHeader {
    mode: BankMode,
    threshold: f64,
    dim: usize,
    num_classes: usize,
    num_groups: usize,
    groups: Vec<Vec<usize>>,
    has_vanilla: bool,
    class_names: Vec<String>,
}

fn write_block(out: &mut Vec<u8>, m: &Matrix) {
    out.extend_from_slice(&(m.rows() as u32).to_le_bytes());
    out.extend_from_slice(&(m.cols() as u32).to_le_bytes());
    for v in m.as_slice() {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

fn read_block(cur: &mut Cursor, rows: usize, cols: usize) -> Result<Matrix> {
    let (r, c) = (
        cur.u32("block rows")? as usize,
        cur.u32("block cols")? as usize,
    );
    if (r, c) != (rows, cols) {
        return Err(Error::Shape(format!(
            "block {r}x{c}, expected {rows}x{cols}"
        )));
    }
    let data = cur.f64_block(r * c, "matrix block")?;
    if data.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("bank matrix".into()));
    }
    Ok(Matrix::from_row_major(r, c, data))
}

/// Column `k` is the plain average of the guidance columns in group `k`.
/// The average is not re-normalized.
pub fn group_means(guidance: &GuidanceMatrix, grouping: &Grouping) -> Matrix {
    let d = guidance.dim();
    let y = guidance.matrix();
    let mut means = Matrix::zeros(d, grouping.num_groups());
    for (k, members) in grouping.groups().iter().enumerate() {
        let n = members.len() as f64;
        for i in 0..d {
            means[(i, k)] = members.iter().map(|&c| y[(i, c)]).sum::<f64>() / n;
        }
    }
    means
}

/// ETF over the columns of `columns`, with the one-column case resolved to
/// the normalized column itself.
fn prototypes_for(columns: &Matrix) -> Result<Matrix> {
    let k = columns.cols();
    if k == 1 {
        let unit = normalized(&columns.col(0))
            .ok_or_else(|| Error::ZeroVector("single prototype column".into()))?;
        return Ok(Matrix::from_columns(&[unit]));
    }
    let basis = householder_qr(columns)?;
    Ok(etf_from_basis(&basis.q)?.e)
}

fn build_with_grouping(
    guidance: &GuidanceMatrix,
    grouping: Grouping,
    mode: BankMode,
    threshold: f64,
) -> Result<DualPrototypeBank> {
    let d = guidance.dim();
    if grouping.num_groups() > d {
        return Err(Error::TooManyClassesForDim {
            classes: grouping.num_groups(),
            dim: d,
        });
    }
    let coarse = prototypes_for(&group_means(guidance, &grouping))?;
    let y = guidance.matrix();
    let fine = grouping
        .groups()
        .iter()
        .map(|members| {
            let cols: Vec<Vec<f64>> = members.iter().map(|&c| y.col(c)).collect();
            prototypes_for(&Matrix::from_columns(&cols))
        })
        .collect::<Result<Vec<_>>>()?;
    let vanilla = if guidance.num_classes() >= 2 && guidance.num_classes() <= d {
        match vanilla_prototypes(guidance) {
            Ok(v) => Some(v),
            Err(Error::RankDeficient { .. }) => None,
            Err(e) => return Err(e),
        }
    } else {
        None
    };
    Ok(DualPrototypeBank {
        mode,
        threshold,
        coarse,
        fine,
        grouping,
        vanilla,
        class_names: guidance.class_names().to_vec(),
    })
}

/// Groups classes whose guidance similarity chains above `p`, then builds a
/// coarse ETF over the group means and a fine ETF inside every group.
pub fn build_dual_bank(guidance: &GuidanceMatrix, p: f64) -> Result<DualPrototypeBank> {
    let graph = similarity_graph(guidance, p)?;
    let grouping = connected_groups(&graph);
    build_with_grouping(guidance, grouping, BankMode::Dual, p)
}

/// All-singleton bank: the coarse stage is the flat K-way ETF.
pub fn build_vanilla_bank(guidance: &GuidanceMatrix) -> Result<DualPrototypeBank> {
    let k = guidance.num_classes();
    if k > guidance.dim() {
        return Err(Error::TooManyClassesForDim {
            classes: k,
            dim: guidance.dim(),
        });
    }
    build_with_grouping(guidance, Grouping::singletons(k), BankMode::Vanilla, 1.0)
}

/// Guidance from image features: normalized per-class mean over the rows of
/// one (base) domain.
pub fn class_mean_guidance(set: &EmbeddingSet, domain: usize) -> Result<GuidanceMatrix> {
    if domain >= set.num_domains() {
        return Err(Error::MissingDomain(domain));
    }
    let (k, d) = (set.num_classes(), set.dim());
    let mut sums = vec![vec![0.0; d]; k];
    let mut counts = vec![0usize; k];
    for i in set.domain_rows(domain) {
        let c = set.label(i);
        counts[c] += 1;
        for (s, v) in sums[c].iter_mut().zip(set.row(i)) {
            *s += f64::from(*v);
        }
    }
    if let Some(c) = counts.iter().position(|&n| n == 0) {
        return Err(Error::MissingClass(c));
    }
    for (s, &n) in sums.iter_mut().zip(&counts) {
        s.iter_mut().for_each(|v| *v /= n as f64);
    }
    GuidanceMatrix::from_columns(&sums, set.manifest().class_names.clone())
}
