// Index loops mirror the matrix notation of the oracles.
#![allow(clippy::needless_range_loop)]

use dualcp::calibrator::{ddr_loss, CalibratedFeatures};
use dualcp::cpg::{connected_groups, etf_from_basis, SimilarityGraph};
use dualcp::harness::identify_domain;
use dualcp::linalg::{dot, householder_qr, normalized, Matrix};
use dualcp::{store, EmbeddingSet, Manifest};
use proptest::prelude::*;

fn manifest(k: usize, t: usize) -> Manifest {
    Manifest {
        class_names: (0..k).map(|i| format!("class {i}")).collect(),
        domain_names: (0..t).map(|i| format!("domain {i}")).collect(),
    }
}

fn embedding_set() -> impl Strategy<Value = EmbeddingSet> {
    (1usize..12, 2usize..6, 1usize..4, 1usize..3).prop_flat_map(|(n, d, k, t)| {
        (
            prop::collection::vec(-1e3f32..1e3, n * d),
            prop::collection::vec(0..k as u32, n),
            prop::collection::vec(0..t as u32, n),
        )
            .prop_map(move |(f, l, g)| {
                EmbeddingSet::new(d, f, l, g, manifest(k, t), false).unwrap()
            })
    })
}

fn orthonormal(d: usize, k: usize, data: &[f64]) -> Option<Matrix> {
    householder_qr(&Matrix::from_row_major(d, k, data[..d * k].to_vec()))
        .ok()
        .map(|qr| qr.q)
}

proptest! {
    #[test]
    fn container_round_trip_is_bit_exact(set in embedding_set()) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("set.dcp");
        store::save(&set, &path).unwrap();
        let back = store::load(&path).unwrap();
        prop_assert_eq!(back.features().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                        set.features().iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        prop_assert_eq!(back, set);
    }

    #[test]
    fn normalization_is_idempotent(set in embedding_set()) {
        if let Ok(once) = set.normalize_rows() {
            let twice = once.normalize_rows().unwrap();
            for (a, b) in once.features().iter().zip(twice.features()) {
                prop_assert!((a - b).abs() < 1e-7);
            }
        }
    }

    #[test]
    fn etf_geometry_and_rotation_invariance(
        k in 2usize..9,
        extra in 0usize..4,
        data in prop::collection::vec(-1.0f64..1.0, 16 * 16),
        rot in prop::collection::vec(-1.0f64..1.0, 16 * 16),
    ) {
        let d = k + extra;
        let Some(q) = orthonormal(d, k, &data) else { return Ok(()) };
        let Some(w) = orthonormal(d, d, &rot) else { return Ok(()) };
        let e = etf_from_basis(&q).unwrap().e;
        let rotated = etf_from_basis(&w.matmul(&q)).unwrap().e;
        let off = -1.0 / (k as f64 - 1.0);
        let (g, gr) = (e.gram(), rotated.gram());
        for i in 0..k {
            for j in 0..k {
                let want = if i == j { 1.0 } else { off };
                prop_assert!((g[(i, j)] - want).abs() < 1e-6);
                prop_assert!((g[(i, j)] - gr[(i, j)]).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn grouping_is_transitive_closure(
        k in 1usize..40,
        edges in prop::collection::vec((0usize..40, 0usize..40), 0..60),
    ) {
        let mut a = vec![vec![false; k]; k];
        for (i, j) in edges {
            if i < k && j < k {
                a[i][j] = true;
                a[j][i] = true;
            }
        }
        let grouping = connected_groups(&SimilarityGraph::from_adjacency(a.clone()).unwrap());
        // reachability by repeated squaring of the boolean relation
        let mut r: Vec<Vec<bool>> = (0..k).map(|i| (0..k).map(|j| i == j || a[i][j]).collect()).collect();
        loop {
            let mut changed = false;
            for i in 0..k {
                for j in 0..k {
                    if !r[i][j] && (0..k).any(|m| r[i][m] && r[m][j]) {
                        r[i][j] = true;
                        changed = true;
                    }
                }
            }
            if !changed { break; }
        }
        for i in 0..k {
            for j in 0..k {
                prop_assert_eq!(grouping.locate(i).0 == grouping.locate(j).0, r[i][j]);
            }
        }
        let firsts: Vec<usize> = grouping.groups().iter().map(|g| g[0]).collect();
        prop_assert!(firsts.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn ddr_loss_is_non_negative(
        raw in prop::collection::vec(-1.0f64..1.0, 16),
        alpha in 0.0f64..=1.0,
    ) {
        let unit = |v: &[f64]| normalized(v).unwrap_or_else(|| vec![1.0, 0.0, 0.0, 0.0]);
        let f = CalibratedFeatures { coarse: unit(&raw[0..4]), fine: unit(&raw[4..8]) };
        let (ec, ef) = (unit(&raw[8..12]), unit(&raw[12..16]));
        let loss = ddr_loss(&f, &ec, &ef, alpha);
        prop_assert!(loss >= 0.0);
        let perfect = CalibratedFeatures { coarse: ec.clone(), fine: ef.clone() };
        prop_assert!(ddr_loss(&perfect, &ec, &ef, alpha) < 1e-24);
        let _ = dot(&ec, &ef);
    }

    #[test]
    fn domain_identification_is_scale_invariant(
        z in prop::collection::vec(-1.0f64..1.0, 5),
        cents in prop::collection::vec(prop::collection::vec(-1.0f64..1.0, 5), 1..6),
        scale in 1e-3f64..1e3,
    ) {
        prop_assume!(z.iter().any(|v| *v != 0.0));
        let scaled: Vec<f64> = z.iter().map(|v| v * scale).collect();
        let a = identify_domain(&z, &cents).unwrap();
        let b = identify_domain(&scaled, &cents).unwrap();
        if a != b {
            // only an exact tie within rounding may flip
            let s = |v: &[f64], c: &[f64]| dot(v, c) / (dot(v, v).sqrt() * dot(c, c).sqrt());
            prop_assert!((s(&z, &cents[a]) - s(&z, &cents[b])).abs() < 1e-12);
        }
    }
}
