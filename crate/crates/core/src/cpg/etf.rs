use crate::error::{Error, Result};
use crate::linalg::{householder_qr, Matrix, OrthonormalBasis};
use crate::store::GuidanceMatrix;

/// Orthonormal basis of the guidance columns.
pub fn qr_decompose(guidance: &GuidanceMatrix) -> Result<OrthonormalBasis> {
    householder_qr(guidance.matrix())
}

/// `K` unit vectors with pairwise inner product `-1/(K-1)`, one per column.
#[derive(Clone, Debug, PartialEq)]
pub struct VanillaPrototypes {
    pub e: Matrix,
}

impl VanillaPrototypes {
    pub fn len(&self) -> usize {
        self.e.cols()
    }

    pub fn is_empty(&self) -> bool {
        self.e.cols() == 0
    }

    pub fn column(&self, i: usize) -> Vec<f64> {
        self.e.col(i)
    }
}

/// `E = sqrt(K/(K-1)) Q (I_K - 1 1ᵀ / K)`: each prototype is the basis
/// vector minus the basis centroid, rescaled so it has unit length.
pub fn etf_from_basis(q: &Matrix) -> Result<VanillaPrototypes> {
    let (d, k) = (q.rows(), q.cols());
    if k < 2 {
        return Err(Error::SingletonEtf);
    }
    let kf = k as f64;
    let scale = (kf / (kf - 1.0)).sqrt();
    let mut e = Matrix::zeros(d, k);
    for i in 0..d {
        let row = q.row(i);
        let mean = row.iter().sum::<f64>() / kf;
        for (out, &v) in e.row_mut(i).iter_mut().zip(row) {
            *out = scale * (v - mean);
        }
    }
    Ok(VanillaPrototypes { e })
}

/// One prototype per class straight from the guidance: QR then ETF.
pub fn vanilla_prototypes(guidance: &GuidanceMatrix) -> Result<VanillaPrototypes> {
    etf_from_basis(&qr_decompose(guidance)?.q)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::dot;
    use crate::rng::seeded;
    use rand_distr::{Distribution, StandardNormal};

    fn random_orthonormal(d: usize, k: usize, seed: u64) -> Matrix {
        let mut rng = seeded(seed);
        let data: Vec<f64> = (0..d * k)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        householder_qr(&Matrix::from_row_major(d, k, data))
            .unwrap()
            .q
    }

    #[test]
    fn pair_is_antipodal() {
        let e = etf_from_basis(&random_orthonormal(5, 2, 1)).unwrap().e;
        let (a, b) = (e.col(0), e.col(1));
        for (x, y) in a.iter().zip(&b) {
            assert!((x + y).abs() < 1e-12);
        }
        assert!((dot(&a, &b) + 1.0).abs() < 1e-12);
    }

    #[test]
    fn four_vertices_meet_at_minus_one_third() {
        let e = etf_from_basis(&random_orthonormal(6, 4, 2)).unwrap().e;
        for i in 0..4 {
            for j in 0..4 {
                let g = dot(&e.col(i), &e.col(j));
                let want = if i == j { 1.0 } else { -1.0 / 3.0 };
                assert!((g - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn norms_are_forced_to_one() {
        let e = etf_from_basis(&random_orthonormal(8, 5, 3)).unwrap().e;
        for i in 0..5 {
            assert!((dot(&e.col(i), &e.col(i)) - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn similarity_law_matches_basis_gram() {
        let q = random_orthonormal(7, 4, 4);
        let e = etf_from_basis(&q).unwrap().e;
        let k = 4.0;
        for i in 0..4 {
            for j in 0..4 {
                let law = k / (k - 1.0) * dot(&q.col(i), &q.col(j)) - 1.0 / (k - 1.0);
                assert!((dot(&e.col(i), &e.col(j)) - law).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn single_vertex_is_rejected() {
        assert!(matches!(
            etf_from_basis(&Matrix::zeros(3, 1)),
            Err(Error::SingletonEtf)
        ));
    }
}
