//! Small dense linear-algebra helpers shared by the filters and the attack.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Eigenvalues above this (but below zero) are treated as rounding noise.
pub const PSD_TOLERANCE: f64 = 1e-10;

pub fn is_symmetric(m: &DMatrix<f64>, tol: f64) -> bool {
    m.is_square() && (m - m.transpose()).amax() <= tol * (1.0 + m.amax())
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Smallest eigenvalue of the symmetric part of `m`.
pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    symmetrize(m).symmetric_eigenvalues().min()
}

/// Largest eigenvalue modulus of a general square matrix.
pub fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    m.complex_eigenvalues()
        .iter()
        .map(|l| l.norm())
        .fold(0.0, f64::max)
}

/// Symmetric inverse square root of a symmetric positive definite matrix.
pub fn inv_sqrt_spd(m: &DMatrix<f64>, name: &str) -> Result<DMatrix<f64>> {
    let eig = symmetrize(m).symmetric_eigen();
    if eig.eigenvalues.iter().any(|&l| l <= 0.0) {
        return Err(Error::NotPositiveDefinite(name.to_string()));
    }
    let d = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| 1.0 / l.sqrt()));
    Ok(&eig.eigenvectors * d * eig.eigenvectors.transpose())
}

pub fn inverse_spd(m: &DMatrix<f64>, name: &str) -> Result<DMatrix<f64>> {
    m.clone()
        .cholesky()
        .map(|c| c.inverse())
        .ok_or_else(|| Error::NotPositiveDefinite(name.to_string()))
}

/// Draws from `N(0, cov)` through a fixed factor `L` with `L Lᵀ = cov`.
///
/// The factor is a Cholesky factor when `cov` is positive definite and an
/// eigendecomposition factor otherwise, with eigenvalues in
/// `[-PSD_TOLERANCE, 0)` clamped to zero.
#[derive(Debug, Clone)]
pub struct GaussianSampler {
    factor: DMatrix<f64>,
}

impl GaussianSampler {
    pub fn new(cov: &DMatrix<f64>, name: &str) -> Result<Self> {
        if !cov.is_square() {
            return Err(Error::dim(
                "Gaussian covariance",
                "square matrix",
                format!("{}x{}", cov.nrows(), cov.ncols()),
            ));
        }
        if let Some(chol) = cov.clone().cholesky() {
            return Ok(Self { factor: chol.l() });
        }
        let eig = symmetrize(cov).symmetric_eigen();
        let min = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
        if min < -PSD_TOLERANCE {
            return Err(Error::NotPsd {
                name: name.to_string(),
                min_eigenvalue: min,
            });
        }
        let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
        Ok(Self {
            factor: &eig.eigenvectors * DMatrix::from_diagonal(&roots),
        })
    }

    /// Sampler from an explicit factor `F`, giving covariance `F Fᵀ`.
    pub fn from_factor(factor: DMatrix<f64>) -> Self {
        Self { factor }
    }

    pub fn dim(&self) -> usize {
        self.factor.nrows()
    }

    pub fn factor(&self) -> &DMatrix<f64> {
        &self.factor
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        let xi = standard_normal(self.factor.ncols(), rng);
        &self.factor * xi
    }
}

pub fn standard_normal<R: Rng + ?Sized>(n: usize, rng: &mut R) -> DVector<f64> {
    DVector::from_iterator(n, (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)))
}

pub fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

pub fn from_rows(rows: &[Vec<f64>], name: &str) -> Result<DMatrix<f64>> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, Vec::len);
    if let Some(bad) = rows.iter().find(|r| r.len() != ncols) {
        return Err(Error::Config(format!(
            "matrix `{name}` is ragged: row of length {} in a {ncols}-column matrix",
            bad.len()
        )));
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn spectral_radius_of_rotation_is_one() {
        let m = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]);
        assert!((spectral_radius(&m) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn inverse_sqrt_squares_to_inverse() {
        let m = DMatrix::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 3.0]);
        let s = inv_sqrt_spd(&m, "m").unwrap();
        let inv = inverse_spd(&m, "m").unwrap();
        assert!((&s * &s - inv).amax() < 1e-12);
    }

    #[test]
    fn singular_covariance_uses_eigen_factor() {
        let cov = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let s = GaussianSampler::new(&cov, "cov").unwrap();
        assert!((s.factor() * s.factor().transpose() - &cov).amax() < 1e-12);
    }

    #[test]
    fn indefinite_covariance_rejected() {
        let cov = DMatrix::from_row_slice(1, 1, &[-1e-3]);
        assert!(matches!(
            GaussianSampler::new(&cov, "q"),
            Err(Error::NotPsd { .. })
        ));
        // Rounding-level negatives are clamped.
        let tiny = DMatrix::from_row_slice(1, 1, &[-1e-12]);
        let s = GaussianSampler::new(&tiny, "q").unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(s.sample(&mut rng)[0], 0.0);
    }

    #[test]
    fn ragged_rows_rejected() {
        assert!(from_rows(&[vec![1.0, 2.0], vec![3.0]], "x").is_err());
        let m = from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]], "x").unwrap();
        assert_eq!(m[(0, 1)], 2.0);
        assert_eq!(to_rows(&m), vec![vec![1.0, 2.0], vec![3.0, 4.0]]);
    }
}
