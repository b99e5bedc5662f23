//! The rehearsal-free domain-incremental protocol: one calibrator per
//! domain trained only on that domain's rows, a mean feature per domain for
//! routing test samples, and coarse-then-fine nearest-prototype prediction.

mod checkpoint;
mod metrics;

pub use metrics::{average_accuracy, forgetting, AccuracyMatrix};

use rayon::prelude::*;
use serde::Serialize;

use crate::calibrator::{forward, forward_coarse, train_domain, CalibratorParams, TrainConfig};
use crate::cpg::DualPrototypeBank;
use crate::error::{Error, Result};
use crate::linalg::{argmax, cosine, dot, norm};
use crate::rng::derive_seed;
use crate::store::EmbeddingSet;

/// What was learned per domain, in presentation order.
#[derive(Clone, Debug, PartialEq)]
pub struct DomainMemory {
    /// Mean raw training feature of each domain.
    pub centroids: Vec<Vec<f64>>,
    pub params: Vec<CalibratorParams>,
}

impl DomainMemory {
    pub fn len(&self) -> usize {
        self.centroids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centroids.is_empty()
    }

    /// Memory as it stood after the first `domains` domains.
    pub fn prefix(&self, domains: usize) -> MemoryView<'_> {
        MemoryView {
            centroids: &self.centroids[..domains],
            params: &self.params[..domains],
        }
    }

    pub fn view(&self) -> MemoryView<'_> {
        self.prefix(self.len())
    }
}

#[derive(Clone, Copy, Debug)]
pub struct MemoryView<'a> {
    pub centroids: &'a [Vec<f64>],
    pub params: &'a [CalibratorParams],
}

fn ensure_nonzero(z: &[f64]) -> Result<()> {
    if z.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("query".into()));
    }
    if norm(z) == 0.0 {
        return Err(Error::ZeroVector("query".into()));
    }
    Ok(())
}

/// Domain whose centroid has the largest cosine with `z`; ties go to the
/// lowest index.
pub fn identify_domain(z: &[f64], centroids: &[Vec<f64>]) -> Result<usize> {
    ensure_nonzero(z)?;
    let nz = norm(z);
    argmax(centroids.iter().map(|c| {
        let nc = norm(c);
        if nc == 0.0 {
            f64::NEG_INFINITY
        } else {
            dot(z, c) / (nz * nc)
        }
    }))
    .ok_or(Error::Undefined("no domains in memory".into()))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct Prediction {
    pub class: usize,
    pub domain: usize,
    pub group: usize,
}

fn best_column(v: &[f64], m: &crate::linalg::Matrix) -> usize {
    argmax((0..m.cols()).map(|j| cosine(v, &m.col(j)).unwrap_or(f64::NEG_INFINITY)))
        .expect("prototype matrix has columns")
}

/// Routes `z` to a domain, picks the nearest coarse prototype, then the
/// nearest fine prototype inside that group. Singleton groups skip the
/// fine stage.
pub fn predict_in(
    z: &[f64],
    memory: MemoryView<'_>,
    bank: &DualPrototypeBank,
) -> Result<Prediction> {
    let domain = identify_domain(z, memory.centroids)?;
    let params = &memory.params[domain];
    let zc = forward_coarse(params, z)?;
    let group = best_column(&zc, &bank.coarse);
    let members = bank.grouping.group(group);
    let member = if members.len() == 1 {
        0
    } else {
        let feats = forward(params, z, group)?;
        best_column(&feats.fine, &bank.fine[group])
    };
    Ok(Prediction {
        class: bank.grouping.class_of(group, member),
        domain,
        group,
    })
}

pub fn predict(z: &[f64], memory: &DomainMemory, bank: &DualPrototypeBank) -> Result<Prediction> {
    predict_in(z, memory.view(), bank)
}

/// Single-stage nearest vanilla prototype on the coarse features.
pub fn predict_vanilla(
    z: &[f64],
    memory: &DomainMemory,
    bank: &DualPrototypeBank,
) -> Result<usize> {
    let vanilla = bank
        .vanilla
        .as_ref()
        .ok_or_else(|| Error::Undefined("bank has no vanilla prototypes".into()))?;
    let domain = identify_domain(z, &memory.centroids)?;
    let zc = forward_coarse(&memory.params[domain], z)?;
    Ok(best_column(&zc, &vanilla.e))
}

fn check_compatible(
    train: &EmbeddingSet,
    test: &EmbeddingSet,
    bank: &DualPrototypeBank,
) -> Result<()> {
    if train.manifest() != test.manifest() {
        return Err(Error::Manifest("train and test manifests differ".into()));
    }
    if train.dim() != test.dim() || train.dim() != bank.dim() {
        return Err(Error::Shape(
            "train, test and bank dimensions differ".into(),
        ));
    }
    if train.num_classes() != bank.num_classes() {
        return Err(Error::Shape(format!(
            "{} classes in data, {} in bank",
            train.num_classes(),
            bank.num_classes()
        )));
    }
    Ok(())
}

/// Sequential training over the domains of `train`.
#[derive(Clone, Debug)]
pub struct TrainingRun {
    pub memory: DomainMemory,
    pub final_losses: Vec<f64>,
    /// `reads[t][s]`: feature reads of domain-`s` rows while training
    /// domain `t`.
    pub reads: Vec<Vec<u64>>,
}

/// Trains one calibrator per domain in order. The trainer for domain `t`
/// receives a view holding only domain-`t` rows.
pub fn train_sequence(
    train: &EmbeddingSet,
    bank: &DualPrototypeBank,
    cfg: &TrainConfig,
) -> Result<TrainingRun> {
    train_sequence_with(train, bank, cfg, |_, _| Ok(()))
}

fn train_sequence_with(
    train: &EmbeddingSet,
    bank: &DualPrototypeBank,
    cfg: &TrainConfig,
    mut after_domain: impl FnMut(usize, &DomainMemory) -> Result<()>,
) -> Result<TrainingRun> {
    cfg.validate()?;
    if train.dim() != bank.dim() || train.num_classes() != bank.num_classes() {
        return Err(Error::Shape("training data does not match the bank".into()));
    }
    let mut memory = DomainMemory {
        centroids: Vec::new(),
        params: Vec::new(),
    };
    let mut final_losses = Vec::new();
    let mut reads = Vec::new();
    for t in 0..train.num_domains() {
        let view = train.domain_view(t)?;
        let init = if cfg.warm_start {
            memory.params.last()
        } else {
            None
        };
        let outcome = train_domain(&view, bank, cfg, init, derive_seed(cfg.seed, t as u64))?;
        reads.push(view.reads_by_domain());
        memory.centroids.push(if cfg.normalized_centroids {
            view.normalized_centroid()
        } else {
            view.centroid()
        });
        memory.params.push(outcome.params);
        final_losses.push(*outcome.epoch_losses.last().expect("epochs >= 1"));
        after_domain(t, &memory)?;
    }
    Ok(TrainingRun {
        memory,
        final_losses,
        reads,
    })
}

/// Per-row outcome of the final model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct RowOutcome {
    pub true_label: usize,
    pub true_domain: usize,
    pub predicted: usize,
    pub identified_domain: usize,
}

fn predict_rows(
    test: &EmbeddingSet,
    rows: &[usize],
    memory: MemoryView<'_>,
    bank: &DualPrototypeBank,
) -> Result<Vec<Prediction>> {
    rows.par_iter()
        .map(|&i| predict_in(&test.row_f64(i), memory, bank))
        .collect()
}

fn accuracy_of(test: &EmbeddingSet, rows: &[usize], preds: &[Prediction]) -> f64 {
    let hits = rows
        .iter()
        .zip(preds)
        .filter(|(&i, p)| p.class == test.label(i))
        .count();
    hits as f64 / rows.len() as f64
}

/// Fills `B[i][j]` for all `j ≥ i` using the memory prefix `0..=j`.
pub fn accuracy_matrix(
    test: &EmbeddingSet,
    memory: &DomainMemory,
    bank: &DualPrototypeBank,
) -> Result<AccuracyMatrix> {
    let t = memory.len();
    if test.num_domains() < t {
        return Err(Error::MissingDomain(test.num_domains()));
    }
    let domain_rows: Vec<Vec<usize>> = (0..t).map(|i| test.domain_rows(i)).collect();
    if let Some(i) = domain_rows.iter().position(Vec::is_empty) {
        return Err(Error::MissingDomain(i));
    }
    let mut b = AccuracyMatrix::new(t);
    for j in 0..t {
        let view = memory.prefix(j + 1);
        for (i, rows) in domain_rows.iter().enumerate().take(j + 1) {
            let preds = predict_rows(test, rows, view, bank)?;
            b.set(i, j, accuracy_of(test, rows, &preds))?;
        }
    }
    Ok(b)
}

/// Everything the protocol measures on a test set.
#[derive(Clone, Debug, Serialize)]
pub struct EvalReport {
    pub class_names: Vec<String>,
    pub domain_names: Vec<String>,
    pub num_groups: usize,
    pub accuracy_matrix: AccuracyMatrix,
    pub average_accuracy: f64,
    /// `None` with a single domain.
    pub forgetting: Option<f64>,
    pub backward_transfer: Option<Vec<f64>>,
    /// Fraction of each test domain routed to its own calibrator by the
    /// final memory.
    pub domain_id_accuracy: Vec<f64>,
    pub domain_id_accuracy_overall: f64,
    #[serde(skip)]
    pub rows: Vec<RowOutcome>,
}

pub fn evaluate(
    test: &EmbeddingSet,
    memory: &DomainMemory,
    bank: &DualPrototypeBank,
) -> Result<EvalReport> {
    let b = accuracy_matrix(test, memory, bank)?;
    let t = memory.len();
    let all: Vec<usize> = (0..test.len()).filter(|&i| test.domain(i) < t).collect();
    let preds = predict_rows(test, &all, memory.view(), bank)?;
    let rows: Vec<RowOutcome> = all
        .iter()
        .zip(&preds)
        .map(|(&i, p)| RowOutcome {
            true_label: test.label(i),
            true_domain: test.domain(i),
            predicted: p.class,
            identified_domain: p.domain,
        })
        .collect();
    let mut hit = vec![0usize; t];
    let mut count = vec![0usize; t];
    for r in &rows {
        count[r.true_domain] += 1;
        hit[r.true_domain] += usize::from(r.identified_domain == r.true_domain);
    }
    let domain_id_accuracy = hit
        .iter()
        .zip(&count)
        .map(|(&h, &c)| h as f64 / c as f64)
        .collect();
    let overall = hit.iter().sum::<usize>() as f64 / rows.len() as f64;
    let (forgetting, backward_transfer) = if t >= 2 {
        (Some(forgetting(&b)?), Some(b.backward_transfer()?))
    } else {
        (None, None)
    };
    Ok(EvalReport {
        class_names: test.manifest().class_names.clone(),
        domain_names: test.manifest().domain_names[..t].to_vec(),
        num_groups: bank.num_groups(),
        average_accuracy: average_accuracy(&b)?,
        accuracy_matrix: b,
        forgetting,
        backward_transfer,
        domain_id_accuracy,
        domain_id_accuracy_overall: overall,
        rows,
    })
}

/// Result of the full train-and-evaluate protocol.
#[derive(Clone, Debug)]
pub struct ProtocolOutcome {
    pub run: TrainingRun,
    pub accuracy: AccuracyMatrix,
}

/// Trains domain by domain and measures `B[i][t]` for every seen domain
/// right after domain `t` finishes.
pub fn run_protocol(
    train: &EmbeddingSet,
    test: &EmbeddingSet,
    bank: &DualPrototypeBank,
    cfg: &TrainConfig,
) -> Result<ProtocolOutcome> {
    check_compatible(train, test, bank)?;
    let t_total = train.num_domains();
    let domain_rows: Vec<Vec<usize>> = (0..t_total).map(|i| test.domain_rows(i)).collect();
    if let Some(i) = domain_rows.iter().position(Vec::is_empty) {
        return Err(Error::MissingDomain(i));
    }
    let mut b = AccuracyMatrix::new(t_total);
    let run = train_sequence_with(train, bank, cfg, |t, memory| {
        for (i, rows) in domain_rows.iter().enumerate().take(t + 1) {
            let preds = predict_rows(test, rows, memory.view(), bank)?;
            b.set(i, t, accuracy_of(test, rows, &preds))?;
        }
        Ok(())
    })?;
    Ok(ProtocolOutcome { run, accuracy: b })
}

/// Runs `f` on a rayon pool of `threads` workers (or the global pool).
pub fn with_threads<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> T {
    match threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build()
            .expect("thread pool")
            .install(f),
        None => f(),
    }
}

/// Worker count of the pool the caller is running in.
pub fn current_threads() -> usize {
    rayon::current_num_threads()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use rand::Rng;

    #[test]
    fn self_match_and_tie_break() {
        let cents = vec![
            vec![1.0, 0.0, 0.0],
            vec![0.0, 1.0, 0.0],
            vec![0.0, 0.0, 1.0],
        ];
        assert_eq!(identify_domain(&[0.0, 0.0, 2.0], &cents).unwrap(), 2);
        assert_eq!(identify_domain(&[1.0, 1.0, 0.0], &cents).unwrap(), 0);
        assert!(matches!(
            identify_domain(&[0.0; 3], &cents),
            Err(Error::ZeroVector(_))
        ));
    }

    #[test]
    fn identification_matches_exhaustive_scan() {
        let mut rng = seeded(9);
        let cents: Vec<Vec<f64>> = (0..5)
            .map(|_| (0..4).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        for _ in 0..1000 {
            let z: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
            let mut best = 0;
            let mut best_score = f64::MIN;
            for (t, c) in cents.iter().enumerate() {
                let s = z.iter().zip(c).map(|(a, b)| a * b).sum::<f64>()
                    / (z.iter().map(|a| a * a).sum::<f64>().sqrt()
                        * c.iter().map(|a| a * a).sum::<f64>().sqrt());
                if s > best_score {
                    best_score = s;
                    best = t;
                }
            }
            assert_eq!(identify_domain(&z, &cents).unwrap(), best);
            let scaled: Vec<f64> = z.iter().map(|v| v * 7.5).collect();
            assert_eq!(identify_domain(&scaled, &cents).unwrap(), best);
        }
    }
}
