use serde::Serialize;

use super::bank::DualPrototypeBank;
use crate::linalg::Matrix;

/// Slack allowed when comparing measured angles to the vanilla angle.
pub const ANGLE_TOL: f64 = 1e-9;

/// Minimum pairwise angles of a bank against the flat K-way ETF angle.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SeparationReport {
    pub num_classes: usize,
    pub num_groups: usize,
    /// `arccos(-1/(K-1))`.
    pub vanilla_angle: f64,
    /// `None` when there is a single group.
    pub coarse_min_angle: Option<f64>,
    /// Per group; `None` for singleton groups.
    pub fine_min_angles: Vec<Option<f64>>,
    pub holds: bool,
}

/// Angle between unit vectors as `2 atan2(|a - b|, |a + b|)`, which stays
/// accurate near 0 and near pi where `acos` of the dot product does not.
pub fn unit_angle(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt();
    let sum: f64 = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x + y) * (x + y))
        .sum::<f64>()
        .sqrt();
    2.0 * diff.atan2(sum)
}

fn min_pairwise_angle(m: &Matrix) -> Option<f64> {
    let cols = m.columns();
    let mut best: Option<f64> = None;
    for i in 0..cols.len() {
        for j in i + 1..cols.len() {
            let angle = unit_angle(&cols[i], &cols[j]);
            best = Some(best.map_or(angle, |b: f64| b.min(angle)));
        }
    }
    best
}

/// Checks that no coarse or fine pair is closer than any pair of the flat
/// ETF over all `K` classes would be.
pub fn check_separation(bank: &DualPrototypeBank) -> SeparationReport {
    let k = bank.num_classes();
    let vanilla_angle = (-1.0 / (k as f64 - 1.0)).acos();
    let coarse_min_angle = min_pairwise_angle(&bank.coarse);
    let fine_min_angles: Vec<Option<f64>> = bank.fine.iter().map(min_pairwise_angle).collect();
    let holds = coarse_min_angle
        .iter()
        .chain(fine_min_angles.iter().flatten())
        .all(|&a| a >= vanilla_angle - ANGLE_TOL);
    SeparationReport {
        num_classes: k,
        num_groups: bank.num_groups(),
        vanilla_angle,
        coarse_min_angle,
        fine_min_angles,
        holds,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cpg::{build_dual_bank, build_vanilla_bank};
    use crate::store::GuidanceMatrix;

    fn basis_guidance(k: usize, d: usize) -> GuidanceMatrix {
        let cols: Vec<Vec<f64>> = (0..k)
            .map(|i| (0..d).map(|j| f64::from(u8::from(i == j))).collect())
            .collect();
        GuidanceMatrix::from_columns(&cols, (0..k).map(|i| format!("c{i}")).collect()).unwrap()
    }

    #[test]
    fn antipodal_pair_meets_the_bound() {
        let bank = build_vanilla_bank(&basis_guidance(2, 3)).unwrap();
        let r = check_separation(&bank);
        assert!(r.holds);
        assert!((r.coarse_min_angle.unwrap() - std::f64::consts::PI).abs() < 1e-12);
    }

    #[test]
    fn all_singletons_attain_equality() {
        let bank = build_vanilla_bank(&basis_guidance(6, 8)).unwrap();
        let r = check_separation(&bank);
        assert!(r.holds);
        assert!((r.coarse_min_angle.unwrap() - r.vanilla_angle).abs() < 1e-12);
    }

    #[test]
    fn two_groups_of_five_are_antipodal() {
        // classes 0..5 near e0, classes 5..10 near e1
        let d = 12;
        let cols: Vec<Vec<f64>> = (0..10)
            .map(|i| {
                let mut v = vec![0.0; d];
                v[if i < 5 { 0 } else { 1 }] = 3.0;
                v[2 + i] = 1.0;
                v
            })
            .collect();
        let y = GuidanceMatrix::from_columns(&cols, (0..10).map(|i| format!("c{i}")).collect())
            .unwrap();
        let bank = build_dual_bank(&y, 0.85).unwrap();
        assert_eq!(bank.num_groups(), 2);
        let r = check_separation(&bank);
        assert!((r.coarse_min_angle.unwrap() - std::f64::consts::PI).abs() < 1e-12);
        assert!(r.coarse_min_angle.unwrap() > (-1.0f64 / 9.0).acos());
        assert!(r.holds);
    }
}
