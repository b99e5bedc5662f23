//! Self-checks run by `dualcp verify`. Each suite compares the engine
//! against an independent reference: analytic ETF geometry, the flat-ETF
//! angle bound, central finite differences, and transitive closure.

use std::time::Instant;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::calibrator::{batch_loss, loss_gradients, Activation, Architecture, CalibratorParams};
use crate::cpg::{
    build_dual_bank, check_separation, connected_groups, etf_from_basis, Grouping, SimilarityGraph,
};
use crate::error::Result;
use crate::linalg::householder_qr;
use crate::rng::{seeded, Prng};
use crate::store::GuidanceMatrix;

#[derive(Clone, Debug, Serialize)]
pub struct SuiteResult {
    pub name: &'static str,
    pub passed: bool,
    pub cases: usize,
    /// Worst observed error (or slack) against the suite's tolerance.
    pub worst: f64,
    pub tolerance: f64,
    pub seconds: f64,
}

fn gaussian(n: usize, rng: &mut Prng) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

/// Random unit guidance with planted clusters so thresholds in (0, 1)
/// produce non-trivial groupings.
pub fn clustered_guidance(k: usize, d: usize, rng: &mut Prng) -> GuidanceMatrix {
    let clusters = rng.random_range(1..=k);
    let centers: Vec<Vec<f64>> = (0..clusters).map(|_| gaussian(d, rng)).collect();
    let spread: f64 = rng.random_range(0.05..1.5);
    let cols: Vec<Vec<f64>> = (0..k)
        .map(|_| {
            let c = &centers[rng.random_range(0..clusters)];
            c.iter()
                .zip(gaussian(d, rng))
                .map(|(a, n)| a + spread * n)
                .collect()
        })
        .collect();
    GuidanceMatrix::from_columns(&cols, (0..k).map(|i| format!("c{i}")).collect())
        .expect("gaussian columns are nonzero")
}

/// Unit norms and `-1/(K-1)` pairwise products for `K ∈ {2, 5, 50}`.
pub fn etf_suite(seed: u64) -> Result<SuiteResult> {
    let start = Instant::now();
    let mut rng = seeded(seed);
    let d = 512;
    let mut worst: f64 = 0.0;
    let ks = [2usize, 5, 50];
    for &k in &ks {
        let y = GuidanceMatrix::from_columns(
            &(0..k).map(|_| gaussian(d, &mut rng)).collect::<Vec<_>>(),
            (0..k).map(|i| format!("c{i}")).collect(),
        )?;
        let e = etf_from_basis(&householder_qr(y.matrix())?.q)?.e;
        let g = e.gram();
        let off = -1.0 / (k as f64 - 1.0);
        for i in 0..k {
            for j in 0..k {
                let want = if i == j { 1.0 } else { off };
                worst = worst.max((g[(i, j)] - want).abs());
            }
        }
    }
    let tolerance = 1e-6;
    Ok(SuiteResult {
        name: "etf-geometry",
        passed: worst < tolerance,
        cases: ks.len(),
        worst,
        tolerance,
        seconds: start.elapsed().as_secs_f64(),
    })
}

/// Random `(K, p)` banks; reports the largest shortfall of any coarse or
/// fine angle below the flat-ETF angle (negative when the bound holds).
pub fn separation_suite(seed: u64, cases: usize) -> Result<SuiteResult> {
    let start = Instant::now();
    let mut rng = seeded(seed);
    let d = 64;
    let mut worst = f64::NEG_INFINITY;
    let mut passed = true;
    for case in 0..cases {
        let k = rng.random_range(2..=64);
        let y = clustered_guidance(k, d, &mut rng);
        let p = if case == 0 {
            1.0
        } else {
            rng.random_range(0.05..=1.0)
        };
        let bank = match build_dual_bank(&y, p) {
            Ok(b) => b,
            // a group mean can vanish for opposite members; skip such draws
            Err(crate::Error::RankDeficient { .. }) | Err(crate::Error::ZeroVector(_)) => continue,
            Err(e) => return Err(e),
        };
        let report = check_separation(&bank);
        passed &= report.holds;
        for a in report
            .coarse_min_angle
            .iter()
            .chain(report.fine_min_angles.iter().flatten())
        {
            worst = worst.max(report.vanilla_angle - a);
        }
    }
    Ok(SuiteResult {
        name: "separation",
        passed,
        cases,
        worst,
        tolerance: crate::cpg::separation::ANGLE_TOL,
        seconds: start.elapsed().as_secs_f64(),
    })
}

/// Worst relative error between analytic gradients and central differences
/// for one random instance.
pub fn gradient_check(d: usize, layers: usize, alpha: f64, seed: u64) -> Result<f64> {
    let mut rng = seeded(seed);
    let k = rng.random_range(3..=d.min(6));
    let y = clustered_guidance(k, d, &mut rng);
    let bank = build_dual_bank(&y, rng.random_range(0.2..0.95))?;
    let arch = Architecture {
        layers,
        hidden_mult: if rng.random_bool(0.5) { 1.0 } else { 0.5 },
        activation: if rng.random_bool(0.5) {
            Activation::Silu
        } else {
            Activation::Tanh
        },
        skip: rng.random_bool(0.3),
    };
    let params = CalibratorParams::init(d, bank.num_groups(), &arch, &mut rng)?;
    let n = rng.random_range(1..=6);
    let xs: Vec<Vec<f64>> = (0..n).map(|_| gaussian(d, &mut rng)).collect();
    let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
    let batch = || xs.iter().map(Vec::as_slice).zip(labels.iter().copied());
    let (_, grad) = loss_gradients(&params, batch(), &bank, alpha)?;
    let analytic = grad.flatten();
    let base = params.flatten();
    let h = 1e-5;
    let mut probe = params.clone();
    let mut worst: f64 = 0.0;
    for i in 0..base.len() {
        let mut shifted = base.clone();
        shifted[i] = base[i] + h;
        probe.unflatten(&shifted)?;
        let up = batch_loss(&probe, batch(), &bank, alpha)?;
        shifted[i] = base[i] - h;
        probe.unflatten(&shifted)?;
        let down = batch_loss(&probe, batch(), &bank, alpha)?;
        let fd = (up - down) / (2.0 * h);
        let scale = fd.abs().max(analytic[i].abs()).max(1e-3);
        worst = worst.max((fd - analytic[i]).abs() / scale);
    }
    Ok(worst)
}

pub fn gradient_suite(seed: u64, cases: usize) -> Result<SuiteResult> {
    let start = Instant::now();
    let mut rng = seeded(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..cases {
        let d = rng.random_range(3..=8);
        let layers = rng.random_range(1..=2);
        let alpha = rng.random_range(0.0..=1.0);
        worst = worst.max(gradient_check(d, layers, alpha, rng.random())?);
    }
    let tolerance = 1e-6;
    Ok(SuiteResult {
        name: "ddr-gradients",
        passed: worst < tolerance,
        cases,
        worst,
        tolerance,
        seconds: start.elapsed().as_secs_f64(),
    })
}

/// Floyd–Warshall reachability, then groups by reachable sets.
#[allow(clippy::needless_range_loop)]
pub fn closure_partition(adjacency: &[Vec<bool>]) -> Vec<Vec<usize>> {
    let k = adjacency.len();
    let mut reach: Vec<Vec<bool>> = (0..k)
        .map(|i| {
            (0..k)
                .map(|j| i == j || adjacency[i][j] || adjacency[j][i])
                .collect()
        })
        .collect();
    for m in 0..k {
        for i in 0..k {
            if reach[i][m] {
                for j in 0..k {
                    if reach[m][j] {
                        reach[i][j] = true;
                    }
                }
            }
        }
    }
    let mut seen = vec![false; k];
    let mut groups = Vec::new();
    for i in 0..k {
        if !seen[i] {
            let g: Vec<usize> = (0..k).filter(|&j| reach[i][j]).collect();
            g.iter().for_each(|&j| seen[j] = true);
            groups.push(g);
        }
    }
    groups
}

/// Random symmetric graph with `k` nodes and edge probability `density`.
#[allow(clippy::needless_range_loop)]
pub fn random_graph(k: usize, density: f64, rng: &mut Prng) -> Vec<Vec<bool>> {
    let mut a = vec![vec![false; k]; k];
    for i in 0..k {
        a[i][i] = true;
        for j in i + 1..k {
            if rng.random_bool(density) {
                a[i][j] = true;
                a[j][i] = true;
            }
        }
    }
    a
}

pub fn grouping_suite(seed: u64, cases: usize) -> Result<SuiteResult> {
    let start = Instant::now();
    let mut rng = seeded(seed);
    let mut mismatches = 0usize;
    for _ in 0..cases {
        let k = rng.random_range(1..=200);
        let density = rng.random_range(0.0..3.0) / k as f64;
        let a = random_graph(k, density, &mut rng);
        let got = connected_groups(&SimilarityGraph::from_adjacency(a.clone())?);
        let want = Grouping::from_groups(closure_partition(&a), k)?;
        mismatches += usize::from(got != want);
    }
    Ok(SuiteResult {
        name: "grouping-oracle",
        passed: mismatches == 0,
        cases,
        worst: mismatches as f64,
        tolerance: 0.0,
        seconds: start.elapsed().as_secs_f64(),
    })
}

/// All suites with the case counts used by the CLI.
pub fn run_all(seed: u64) -> Result<Vec<SuiteResult>> {
    Ok(vec![
        etf_suite(seed)?,
        separation_suite(seed, 100)?,
        gradient_suite(seed, 20)?,
        grouping_suite(seed, 200)?,
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closure_oracle_small() {
        let mut a = vec![vec![false; 4]; 4];
        a[0][2] = true;
        a[2][3] = true;
        assert_eq!(closure_partition(&a), vec![vec![0, 2, 3], vec![1]]);
    }

    #[test]
    fn suites_pass_on_small_counts() {
        assert!(etf_suite(1).unwrap().passed);
        assert!(separation_suite(1, 10).unwrap().passed);
        assert!(gradient_suite(1, 3).unwrap().passed);
        assert!(grouping_suite(1, 20).unwrap().passed);
    }
}
