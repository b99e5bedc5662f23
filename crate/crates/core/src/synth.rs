//! Deterministic multi-domain embeddings with a known class grouping.
//!
//! Guidance: an orthonormal frame supplies one direction `u_g` per planned
//! group and one private direction `w_c` per class; class `c` in group `g`
//! gets `y_c = sqrt(s) u_g + sqrt(1 - s) w_c`. Members of a group then have
//! cosine exactly `s`, classes of different groups cosine 0, so any
//! threshold in `[0, s)` recovers the plan.
//!
//! Features: `x = A y_c + sigma_dom o_t + sigma_cls eps`, with `A` a fixed
//! Gaussian map scaled by `1/sqrt(d)`, `o_t` a random unit offset per
//! domain and `eps` standard normal noise.

use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::cpg::Grouping;
use crate::error::{Error, Result};
use crate::linalg::{householder_qr, normalized, Matrix};
use crate::rng::{derive_seed, seeded, Prng};
use crate::store::{EmbeddingSet, GuidanceMatrix, Manifest};

/// Grouping threshold the construction is built to respect.
pub const DEFAULT_THRESHOLD: f64 = 0.85;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub num_classes: usize,
    pub num_domains: usize,
    pub dim: usize,
    /// Training samples per class per domain.
    pub per_class: usize,
    /// Test samples per class per domain.
    pub test_per_class: usize,
    /// Planned group sizes; must sum to `num_classes`.
    pub group_plan: Vec<usize>,
    /// Cosine between guidance vectors of the same group.
    pub intra_cosine: f64,
    /// The intra-group cosine must exceed this.
    pub threshold: f64,
    pub domain_shift: f64,
    pub class_noise: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            num_classes: 20,
            num_domains: 3,
            dim: 64,
            per_class: 50,
            test_per_class: 20,
            group_plan: vec![4, 4, 3, 3, 2, 2, 1, 1],
            intra_cosine: 0.9,
            threshold: DEFAULT_THRESHOLD,
            domain_shift: 1.0,
            class_noise: 0.05,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Infeasible(m));
        let k = self.num_classes;
        if k < 2 || self.num_domains == 0 || self.per_class == 0 || self.test_per_class == 0 {
            return bad("need at least two classes, one domain and one sample per class".into());
        }
        if self.group_plan.iter().sum::<usize>() != k || self.group_plan.contains(&0) {
            return bad(format!(
                "group plan {:?} does not partition {k} classes",
                self.group_plan
            ));
        }
        if self.dim < 2 || self.dim < k + self.group_plan.len() {
            return bad(format!(
                "dimension {} cannot hold {} group directions and {k} class directions",
                self.dim,
                self.group_plan.len()
            ));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return bad(format!("threshold {}", self.threshold));
        }
        if !(self.intra_cosine > self.threshold && self.intra_cosine < 1.0) {
            return bad(format!(
                "intra-group cosine {} must lie in ({}, 1)",
                self.intra_cosine, self.threshold
            ));
        }
        if !(self.domain_shift >= 0.0 && self.class_noise >= 0.0)
            || !self.domain_shift.is_finite()
            || !self.class_noise.is_finite()
        {
            return bad("noise scales must be finite and non-negative".into());
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct SynthData {
    pub train: EmbeddingSet,
    pub test: EmbeddingSet,
    pub guidance: GuidanceMatrix,
    /// The grouping the guidance was built to produce.
    pub planned: Grouping,
}

fn gaussian_vec(n: usize, rng: &mut Prng) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

pub fn generate(spec: &SynthSpec) -> Result<SynthData> {
    spec.validate()?;
    let (k, d, t) = (spec.num_classes, spec.dim, spec.num_domains);
    let n_groups = spec.group_plan.len();
    let mut rng = seeded(derive_seed(spec.seed, 0));

    let frame_src =
        Matrix::from_row_major(d, n_groups + k, gaussian_vec(d * (n_groups + k), &mut rng));
    let frame = householder_qr(&frame_src)?.q;

    let mut classes: Vec<usize> = (0..k).collect();
    classes.shuffle(&mut rng);
    let mut groups = Vec::with_capacity(n_groups);
    let mut offset = 0;
    for &size in &spec.group_plan {
        groups.push(classes[offset..offset + size].to_vec());
        offset += size;
    }
    let planned = Grouping::from_groups(groups, k)?;

    let (a, b) = (spec.intra_cosine.sqrt(), (1.0 - spec.intra_cosine).sqrt());
    let guidance_cols: Vec<Vec<f64>> = (0..k)
        .map(|c| {
            let (g, _) = planned.locate(c);
            (0..d)
                .map(|i| a * frame[(i, g)] + b * frame[(i, n_groups + c)])
                .collect()
        })
        .collect();
    let class_names: Vec<String> = (0..k).map(|c| format!("class_{c:02}")).collect();
    let guidance = GuidanceMatrix::from_columns(&guidance_cols, class_names.clone())?;

    let scale = 1.0 / (d as f64).sqrt();
    let map = Matrix::from_row_major(
        d,
        d,
        gaussian_vec(d * d, &mut rng)
            .into_iter()
            .map(|v| v * scale)
            .collect(),
    );
    let offsets: Vec<Vec<f64>> = (0..t)
        .map(|_| normalized(&gaussian_vec(d, &mut rng)).expect("gaussian vector is nonzero"))
        .collect();
    let means: Vec<Vec<f64>> = (0..k).map(|c| map.matvec(&guidance.column(c))).collect();

    let manifest = Manifest {
        class_names,
        domain_names: (0..t).map(|i| format!("domain_{i}")).collect(),
    };
    let sample = |per_class: usize, stream: u64| -> Result<EmbeddingSet> {
        let mut rng = seeded(derive_seed(spec.seed, stream));
        let mut rows = Vec::with_capacity(t * k * per_class);
        let mut labels = Vec::with_capacity(rows.capacity());
        let mut domains = Vec::with_capacity(rows.capacity());
        for (dom, off) in offsets.iter().enumerate() {
            for (c, mean) in means.iter().enumerate() {
                for _ in 0..per_class {
                    let noise = gaussian_vec(d, &mut rng);
                    rows.push(
                        (0..d)
                            .map(|i| {
                                mean[i] + spec.domain_shift * off[i] + spec.class_noise * noise[i]
                            })
                            .collect::<Vec<f64>>(),
                    );
                    labels.push(c as u32);
                    domains.push(dom as u32);
                }
            }
        }
        EmbeddingSet::from_rows(&rows, labels, domains, manifest.clone(), false)
    };

    Ok(SynthData {
        train: sample(spec.per_class, 1)?,
        test: sample(spec.test_per_class, 2)?,
        guidance,
        planned,
    })
}
