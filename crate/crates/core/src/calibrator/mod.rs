//! Coarse-to-fine calibrator: a coarse MLP `g_C(x)` and one fine MLP per
//! class group `g_F([x, x_C])`, both L2-normalized at the output, trained to
//! regress their dot products with the class prototypes onto 1.

mod mlp;
mod train;

pub use mlp::{Activation, Architecture, Dense, Mlp, MlpCache};
pub use train::{cosine_lr, train_domain, TrainConfig, TrainOutcome};

use crate::cpg::DualPrototypeBank;
use crate::error::{Error, Result};
use crate::linalg::{dot, norm};
use crate::rng::Prng;

/// Outputs with a norm below this are rejected instead of normalized.
pub const MIN_OUTPUT_NORM: f64 = 1e-12;

/// Per-domain calibrator weights.
#[derive(Clone, Debug, PartialEq)]
pub struct CalibratorParams {
    pub dim: usize,
    pub arch: Architecture,
    pub coarse: Mlp,
    pub fine: Vec<Mlp>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CalibratedFeatures {
    pub coarse: Vec<f64>,
    pub fine: Vec<f64>,
}

impl CalibratorParams {
    /// Fresh parameters for a bank with `num_groups` groups.
    pub fn init(
        dim: usize,
        num_groups: usize,
        arch: &Architecture,
        rng: &mut Prng,
    ) -> Result<Self> {
        arch.validate()?;
        if num_groups == 0 {
            return Err(Error::BadConfig("bank has no groups".into()));
        }
        let coarse = Mlp::new(dim, dim, arch, rng);
        let fine = (0..num_groups)
            .map(|_| Mlp::new(2 * dim, dim, arch, rng))
            .collect();
        Ok(CalibratorParams {
            dim,
            arch: *arch,
            coarse,
            fine,
        })
    }

    pub fn num_groups(&self) -> usize {
        self.fine.len()
    }

    pub fn zeros_like(&self) -> Self {
        CalibratorParams {
            dim: self.dim,
            arch: self.arch,
            coarse: self.coarse.zeros_like(),
            fine: self.fine.iter().map(Mlp::zeros_like).collect(),
        }
    }

    pub fn param_count(&self) -> usize {
        self.coarse.param_count() + self.fine.iter().map(Mlp::param_count).sum::<usize>()
    }

    /// Coarse MLP first, then each fine MLP in group order.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        self.coarse.write_flat(&mut out);
        for f in &self.fine {
            f.write_flat(&mut out);
        }
        out
    }

    /// `true` where [`CalibratorParams::flatten`] holds a weight, `false`
    /// for biases.
    pub fn weight_mask(&self) -> Vec<bool> {
        let mut out = Vec::with_capacity(self.param_count());
        self.coarse.write_weight_mask(&mut out);
        for f in &self.fine {
            f.write_weight_mask(&mut out);
        }
        out
    }

    pub fn unflatten(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::Shape(format!(
                "{} values for {} parameters",
                flat.len(),
                self.param_count()
            )));
        }
        let mut pos = self.coarse.read_flat(flat);
        for f in &mut self.fine {
            pos += f.read_flat(&flat[pos..]);
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.flatten().iter().all(|v| v.is_finite())
    }
}

fn unit(v: &[f64]) -> Result<(Vec<f64>, f64)> {
    let n = norm(v);
    if !n.is_finite() {
        return Err(Error::NonFinite("calibrator output".into()));
    }
    if n < MIN_OUTPUT_NORM {
        return Err(Error::DegenerateOutput);
    }
    Ok((v.iter().map(|x| x / n).collect(), n))
}

struct Trace {
    coarse_cache: MlpCache,
    coarse_norm: f64,
    fine_cache: MlpCache,
    fine_norm: f64,
    feats: CalibratedFeatures,
}

fn forward_traced(params: &CalibratorParams, x: &[f64], group: usize) -> Result<Trace> {
    if x.len() != params.dim {
        return Err(Error::Shape(format!(
            "input of length {} for d = {}",
            x.len(),
            params.dim
        )));
    }
    if group >= params.num_groups() {
        return Err(Error::Shape(format!(
            "group {group} of {}",
            params.num_groups()
        )));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("calibrator input".into()));
    }
    let (u, coarse_cache) = params.coarse.forward(x);
    let (xc, coarse_norm) = unit(&u)?;
    let joint: Vec<f64> = x.iter().chain(&xc).copied().collect();
    let (v, fine_cache) = params.fine[group].forward(&joint);
    let (xf, fine_norm) = unit(&v)?;
    Ok(Trace {
        coarse_cache,
        coarse_norm,
        fine_cache,
        fine_norm,
        feats: CalibratedFeatures {
            coarse: xc,
            fine: xf,
        },
    })
}

/// `x_C = g_C(x) / |g_C(x)|`, `x_F = g_F([x, x_C]) / |g_F([x, x_C])|`.
pub fn forward(params: &CalibratorParams, x: &[f64], group: usize) -> Result<CalibratedFeatures> {
    forward_traced(params, x, group).map(|t| t.feats)
}

/// Coarse features only; the fine branch needs a group.
pub fn forward_coarse(params: &CalibratorParams, x: &[f64]) -> Result<Vec<f64>> {
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("calibrator input".into()));
    }
    let (u, _) = params.coarse.forward(x);
    unit(&u).map(|(xc, _)| xc)
}

/// Dual dot-regression loss
/// `alpha (x_C·e_C - 1)² + (1 - alpha) (x_F·e_F - 1)²`.
pub fn ddr_loss(
    feats: &CalibratedFeatures,
    coarse_target: &[f64],
    fine_target: &[f64],
    alpha: f64,
) -> f64 {
    let sc = dot(&feats.coarse, coarse_target) - 1.0;
    let sf = dot(&feats.fine, fine_target) - 1.0;
    alpha * sc * sc + (1.0 - alpha) * sf * sf
}

/// Backprop through `v -> v / |v|`: drop the radial part of `g` and divide
/// by `|v|`.
fn through_normalization(g: &[f64], unit: &[f64], length: f64) -> Vec<f64> {
    let radial = dot(g, unit);
    g.iter()
        .zip(unit)
        .map(|(gi, ui)| (gi - radial * ui) / length)
        .collect()
}

/// Loss of one sample and its gradient, accumulated into `grad`.
fn sample_gradient(
    params: &CalibratorParams,
    x: &[f64],
    class: usize,
    bank: &DualPrototypeBank,
    alpha: f64,
    scale: f64,
    grad: &mut CalibratorParams,
) -> Result<f64> {
    let (group, member) = bank.grouping.locate(class);
    let e_c = bank.coarse_prototype(group);
    let e_f = bank.fine_prototype(group, member);
    let t = forward_traced(params, x, group)?;
    let sc = dot(&t.feats.coarse, &e_c) - 1.0;
    let sf = dot(&t.feats.fine, &e_f) - 1.0;
    let loss = alpha * sc * sc + (1.0 - alpha) * sf * sf;

    let g_xf: Vec<f64> = e_f
        .iter()
        .map(|e| scale * 2.0 * (1.0 - alpha) * sf * e)
        .collect();
    let g_v = through_normalization(&g_xf, &t.feats.fine, t.fine_norm);
    let g_joint = params.fine[group].backward(&t.fine_cache, &g_v, &mut grad.fine[group]);
    let d = params.dim;
    let g_xc: Vec<f64> = e_c
        .iter()
        .zip(&g_joint[d..])
        .map(|(e, gj)| scale * 2.0 * alpha * sc * e + gj)
        .collect();
    let g_u = through_normalization(&g_xc, &t.feats.coarse, t.coarse_norm);
    params
        .coarse
        .backward(&t.coarse_cache, &g_u, &mut grad.coarse);
    Ok(loss)
}

/// Mean DDR loss over a batch of `(features, class)` samples and its exact
/// gradient with respect to every calibrator parameter, including the path
/// from the fine loss back through `x_C` into the coarse MLP.
pub fn loss_gradients<'a, I>(
    params: &CalibratorParams,
    batch: I,
    bank: &DualPrototypeBank,
    alpha: f64,
) -> Result<(f64, CalibratorParams)>
where
    I: IntoIterator<Item = (&'a [f64], usize)>,
    I::IntoIter: ExactSizeIterator,
{
    let batch = batch.into_iter();
    let n = batch.len();
    if n == 0 {
        return Err(Error::Empty);
    }
    let scale = 1.0 / n as f64;
    let mut grad = params.zeros_like();
    let mut total = 0.0;
    for (x, class) in batch {
        total += sample_gradient(params, x, class, bank, alpha, scale, &mut grad)?;
    }
    Ok((total * scale, grad))
}

/// Mean DDR loss over a batch, forward only.
pub fn batch_loss<'a>(
    params: &CalibratorParams,
    batch: impl IntoIterator<Item = (&'a [f64], usize)>,
    bank: &DualPrototypeBank,
    alpha: f64,
) -> Result<f64> {
    let mut total = 0.0;
    let mut n = 0usize;
    for (x, class) in batch {
        let (group, e_c, e_f) = bank.targets(class);
        total += ddr_loss(&forward(params, x, group)?, &e_c, &e_f, alpha);
        n += 1;
    }
    if n == 0 {
        return Err(Error::Empty);
    }
    Ok(total / n as f64)
}

#[cfg(test)]
#[allow(clippy::needless_range_loop)]
mod tests {
    use super::*;
    use crate::cpg::build_dual_bank;
    use crate::rng::seeded;
    use crate::store::GuidanceMatrix;
    use rand_distr::{Distribution, StandardNormal};

    fn bank(d: usize) -> DualPrototypeBank {
        // classes {0,1} and {2,3} grouped, 4 alone
        let mut cols = vec![vec![0.0; d]; 5];
        cols[0][0] = 1.0;
        cols[1][0] = 0.95;
        cols[1][1] = 0.3;
        cols[2][2] = 1.0;
        cols[3][2] = 0.95;
        cols[3][3] = 0.3;
        cols[4][4] = 1.0;
        let y =
            GuidanceMatrix::from_columns(&cols, (0..5).map(|i| format!("c{i}")).collect()).unwrap();
        build_dual_bank(&y, 0.85).unwrap()
    }

    fn gaussian(n: usize, rng: &mut Prng) -> Vec<f64> {
        (0..n).map(|_| StandardNormal.sample(rng)).collect()
    }

    #[test]
    fn loss_values() {
        let e = vec![1.0, 0.0];
        let perp = vec![0.0, 1.0];
        let aligned = CalibratedFeatures {
            coarse: e.clone(),
            fine: e.clone(),
        };
        assert_eq!(ddr_loss(&aligned, &e, &e, 0.5), 0.0);
        let orth = CalibratedFeatures {
            coarse: perp.clone(),
            fine: perp.clone(),
        };
        assert_eq!(ddr_loss(&orth, &e, &e, 0.5), 1.0);
        let s = 3f64.sqrt() / 2.0;
        let half = CalibratedFeatures {
            coarse: vec![0.5, s],
            fine: e.clone(),
        };
        assert!((ddr_loss(&half, &e, &e, 0.5) - 0.125).abs() < 1e-15);
    }

    #[test]
    fn zero_output_is_degenerate() {
        let d = 5;
        let mut p = CalibratorParams::init(
            d,
            3,
            &Architecture {
                layers: 1,
                ..Default::default()
            },
            &mut seeded(0),
        )
        .unwrap();
        for w in &mut p.coarse.layers[0].weight {
            *w = 0.0;
        }
        assert!(matches!(
            forward(&p, &[1.0; 5], 0),
            Err(Error::DegenerateOutput)
        ));
    }

    #[test]
    fn identity_layer_passes_unit_input() {
        let d = 4;
        let mut p = CalibratorParams::init(
            d,
            1,
            &Architecture {
                layers: 1,
                ..Default::default()
            },
            &mut seeded(0),
        )
        .unwrap();
        let l = &mut p.coarse.layers[0];
        l.weight.iter_mut().for_each(|w| *w = 0.0);
        for i in 0..d {
            l.weight[i * d + i] = 1.0;
        }
        let x = vec![0.5, -0.5, 0.5, 0.5];
        let out = forward(&p, &x, 0).unwrap();
        assert_eq!(out.coarse, x);
        assert!((norm(&out.fine) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn non_finite_input() {
        let p = CalibratorParams::init(3, 1, &Architecture::default(), &mut seeded(0)).unwrap();
        assert!(matches!(
            forward(&p, &[f64::NAN, 0.0, 0.0], 0),
            Err(Error::NonFinite(_))
        ));
    }

    #[test]
    fn forward_matches_hand_matmul() {
        let d = 6;
        let b = bank(d);
        let mut rng = seeded(11);
        let p =
            CalibratorParams::init(d, b.num_groups(), &Architecture::default(), &mut rng).unwrap();
        let matvec = |l: &Dense, x: &[f64]| -> Vec<f64> {
            (0..l.outputs)
                .map(|o| {
                    let mut s = l.bias[o];
                    for i in 0..l.inputs {
                        s += l.weight[o * l.inputs + i] * x[i];
                    }
                    s
                })
                .collect()
        };
        let silu = |v: f64| v / (1.0 + (-v).exp());
        let unitize = |v: Vec<f64>| {
            let n = v.iter().map(|a| a * a).sum::<f64>().sqrt();
            v.into_iter().map(|a| a / n).collect::<Vec<_>>()
        };
        for s in 0..8 {
            let x = gaussian(d, &mut rng);
            let g = s % b.num_groups();
            let h: Vec<f64> = matvec(&p.coarse.layers[0], &x)
                .into_iter()
                .map(silu)
                .collect();
            let xc = unitize(matvec(&p.coarse.layers[1], &h));
            let joint: Vec<f64> = x.iter().chain(&xc).copied().collect();
            let h: Vec<f64> = matvec(&p.fine[g].layers[0], &joint)
                .into_iter()
                .map(silu)
                .collect();
            let xf = unitize(matvec(&p.fine[g].layers[1], &h));
            let out = forward(&p, &x, g).unwrap();
            for (a, b) in out.coarse.iter().zip(&xc).chain(out.fine.iter().zip(&xf)) {
                assert!((a - b).abs() < 1e-10);
            }
        }
    }

    fn fd_check(alpha: f64, arch: Architecture, seed: u64) -> f64 {
        let d = 6;
        let b = bank(d);
        let mut rng = seeded(seed);
        let p = CalibratorParams::init(d, b.num_groups(), &arch, &mut rng).unwrap();
        let xs: Vec<Vec<f64>> = (0..4).map(|_| gaussian(d, &mut rng)).collect();
        let classes = [0usize, 3, 4, 1];
        let batch = || xs.iter().map(Vec::as_slice).zip(classes);
        let (_, grad) = loss_gradients(&p, batch(), &b, alpha).unwrap();
        let analytic = grad.flatten();
        let base = p.flatten();
        let h = 1e-5;
        let mut worst: f64 = 0.0;
        let mut probe = p.clone();
        for i in 0..base.len() {
            let mut plus = base.clone();
            plus[i] += h;
            probe.unflatten(&plus).unwrap();
            let lp = batch_loss(&probe, batch(), &b, alpha).unwrap();
            let mut minus = base.clone();
            minus[i] -= h;
            probe.unflatten(&minus).unwrap();
            let lm = batch_loss(&probe, batch(), &b, alpha).unwrap();
            let fd = (lp - lm) / (2.0 * h);
            let err = (fd - analytic[i]).abs() / fd.abs().max(analytic[i].abs()).max(1e-4);
            worst = worst.max(err);
        }
        worst
    }

    #[test]
    fn gradients_match_finite_differences() {
        let arch = Architecture::default();
        assert!(fd_check(0.5, arch, 21) < 1e-6);
        let deep = Architecture {
            layers: 3,
            hidden_mult: 0.5,
            activation: Activation::Tanh,
            skip: true,
        };
        assert!(fd_check(0.3, deep, 22) < 1e-6);
    }

    #[test]
    fn alpha_one_leaves_fine_layers_untouched() {
        assert!(fd_check(1.0, Architecture::default(), 23) < 1e-6);
        let d = 6;
        let b = bank(d);
        let mut rng = seeded(5);
        let p =
            CalibratorParams::init(d, b.num_groups(), &Architecture::default(), &mut rng).unwrap();
        let x = gaussian(d, &mut rng);
        let (_, g) = loss_gradients(&p, [(x.as_slice(), 2usize)], &b, 1.0).unwrap();
        let mut fine = Vec::new();
        for f in &g.fine {
            f.write_flat(&mut fine);
        }
        assert!(fine.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn aligned_batch_has_zero_gradient() {
        // one-layer identity calibrators; input equal to the targets
        let d = 6;
        let b = bank(d);
        let arch = Architecture {
            layers: 1,
            ..Default::default()
        };
        let mut p = CalibratorParams::init(d, b.num_groups(), &arch, &mut seeded(0)).unwrap();
        let class = 2;
        let (g, e_c, e_f) = b.targets(class);
        let mut coarse = Dense::zeros(d, d);
        // W x = e_c for x = e_c: use W = e_c e_cᵀ
        for i in 0..d {
            for j in 0..d {
                coarse.weight[i * d + j] = e_c[i] * e_c[j];
            }
        }
        p.coarse.layers[0] = coarse;
        let mut fine = Dense::zeros(2 * d, d);
        for i in 0..d {
            for j in 0..d {
                fine.weight[i * 2 * d + d + j] = e_f[i] * e_c[j];
            }
        }
        p.fine[g].layers[0] = fine;
        let (loss, grad) = loss_gradients(&p, [(e_c.as_slice(), class)], &b, 0.5).unwrap();
        assert!(loss < 1e-20);
        assert!(grad.flatten().iter().all(|v| v.abs() < 1e-10));
    }
}
