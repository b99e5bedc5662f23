use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{loss_gradients, Architecture, CalibratorParams};
use crate::cpg::DualPrototypeBank;
use crate::error::{Error, Result};
use crate::rng::seeded;
use crate::store::DomainView;

/// Optimizer and loss settings for one domain.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Weight of the coarse term in the DDR loss.
    pub alpha: f64,
    /// Initial learning rate of the cosine schedule.
    pub lr0: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// L2 decay on weights (biases are not decayed).
    pub weight_decay: f64,
    pub momentum: f64,
    pub seed: u64,
    /// Start domain `t` from the parameters of domain `t - 1`.
    pub warm_start: bool,
    /// Average unit-normalized features, rather than raw ones, when
    /// computing each domain's centroid.
    #[serde(default)]
    pub normalized_centroids: bool,
    pub arch: Architecture,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            alpha: 0.5,
            lr0: 0.1,
            epochs: 20,
            batch_size: 128,
            weight_decay: 2e-4,
            momentum: 0.9,
            seed: 0,
            warm_start: false,
            normalized_centroids: false,
            arch: Architecture::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::BadConfig(msg));
        if !(0.0..=1.0).contains(&self.alpha) {
            return bad(format!("alpha = {} outside [0, 1]", self.alpha));
        }
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            return bad(format!("lr0 = {}", self.lr0));
        }
        if self.epochs == 0 {
            return bad("epochs must be at least 1".into());
        }
        if self.batch_size == 0 {
            return bad("batch size must be at least 1".into());
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad(format!("weight decay = {}", self.weight_decay));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum = {} outside [0, 1)", self.momentum));
        }
        self.arch.validate()
    }
}

/// `lr0 / 2 * (1 + cos(pi * epoch / epochs))`.
pub fn cosine_lr(lr0: f64, epoch: usize, epochs: usize) -> f64 {
    0.5 * lr0 * (1.0 + (std::f64::consts::PI * epoch as f64 / epochs as f64).cos())
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub params: CalibratorParams,
    /// Mean training loss of each epoch.
    pub epoch_losses: Vec<f64>,
}

impl TrainOutcome {
    pub fn final_loss(&self) -> f64 {
        *self.epoch_losses.last().expect("at least one epoch")
    }
}

/// Mini-batch SGD with momentum, decoupled-from-bias weight decay and a
/// per-epoch cosine learning rate on the rows of a single domain.
///
/// `init` warm-starts from existing parameters; otherwise parameters are
/// drawn from `seed`. Batches are reshuffled every epoch from the same seed.
pub fn train_domain(
    data: &DomainView,
    bank: &DualPrototypeBank,
    cfg: &TrainConfig,
    init: Option<&CalibratorParams>,
    seed: u64,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::MissingDomain(data.domain()));
    }
    if data.dim() != bank.dim() {
        return Err(Error::Shape(format!(
            "features of dimension {} for a bank of dimension {}",
            data.dim(),
            bank.dim()
        )));
    }
    if let Some(&c) = data.labels().iter().find(|&&c| c >= bank.num_classes()) {
        return Err(Error::MissingClass(c));
    }
    let mut rng = seeded(seed);
    let mut params = match init {
        Some(p) => {
            if p.num_groups() != bank.num_groups() || p.dim != bank.dim() {
                return Err(Error::Shape(
                    "warm-start parameters do not fit the bank".into(),
                ));
            }
            p.clone()
        }
        None => CalibratorParams::init(bank.dim(), bank.num_groups(), &cfg.arch, &mut rng)?,
    };
    let mask = params.weight_mask();
    let mut flat = params.flatten();
    let mut velocity = vec![0.0; flat.len()];
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let lr = cosine_lr(cfg.lr0, epoch, cfg.epochs);
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<(&[f64], usize)> = chunk
                .iter()
                .map(|&i| (data.features(i), data.labels()[i]))
                .collect();
            let (loss, grad) = match loss_gradients(&params, batch, bank, cfg.alpha) {
                Ok(v) => v,
                Err(Error::NonFinite(_)) => return Err(Error::Diverged { epoch }),
                Err(e) => return Err(e),
            };
            if !loss.is_finite() {
                return Err(Error::Diverged { epoch });
            }
            total += loss * chunk.len() as f64;
            for (((w, v), g), &is_weight) in flat
                .iter_mut()
                .zip(velocity.iter_mut())
                .zip(grad.flatten())
                .zip(&mask)
            {
                let g = if is_weight {
                    g + cfg.weight_decay * *w
                } else {
                    g
                };
                *v = cfg.momentum * *v + g;
                *w -= lr * *v;
            }
            params.unflatten(&flat)?;
        }
        let mean = total / data.len() as f64;
        if !mean.is_finite() || !params.is_finite() {
            return Err(Error::Diverged { epoch });
        }
        epoch_losses.push(mean);
    }
    Ok(TrainOutcome {
        params,
        epoch_losses,
    })
}
