use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg;
use crate::model::System;

/// The attacker's full-information Kalman filter over all nodes'
/// true observations, giving `x̂(t) = E[x(t) | y(1..t)]` and its error
/// covariance `R(t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CentralKf {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    stacked_h: DMatrix<f64>,
    stacked_r: DMatrix<f64>,
}

impl CentralKf {
    /// Filter with prior `x(0) ~ N(prior_mean, prior_cov)` on the stacked
    /// model (rows of every `H_k`, block-diagonal `R`).
    pub fn new(system: &System, prior_mean: DVector<f64>, prior_cov: DMatrix<f64>) -> Self {
        let q = system.state_dim();
        let total: usize = system.sensors.iter().map(|s| s.dim()).sum();
        let mut stacked_h = DMatrix::zeros(total, q);
        let mut stacked_r = DMatrix::zeros(total, total);
        let mut row = 0;
        for s in &system.sensors {
            let m = s.dim();
            stacked_h.view_mut((row, 0), (m, q)).copy_from(&s.observation);
            stacked_r.view_mut((row, row), (m, m)).copy_from(&s.noise_cov);
            row += m;
        }
        Self {
            mean: prior_mean,
            cov: prior_cov,
            stacked_h,
            stacked_r,
        }
    }

    pub fn stacked_observation(&self) -> &DMatrix<f64> {
        &self.stacked_h
    }

    /// Predict through the process model, then update on `y_all` (one
    /// observation per node, in node order).
    pub fn step(&mut self, y_all: &[DVector<f64>], system: &System) -> Result<()> {
        let total = self.stacked_h.nrows();
        let got: usize = y_all.iter().map(|y| y.len()).sum();
        if got != total {
            return Err(Error::dim("central_kf_step", total, got));
        }
        let y = DVector::from_iterator(total, y_all.iter().flat_map(|y| y.iter().copied()));
        let a = &system.process.transition;
        let pred_mean = a * &self.mean;
        let pred_cov = a * &self.cov * a.transpose() + &system.process.noise_cov;

        // Whitening by the Cholesky factor of R keeps the innovation
        // covariance well scaled when some sensors are nearly noiseless.
        let chol_r = self.stacked_r.clone().cholesky().ok_or(Error::SingularInnovation)?;
        let l = chol_r.l();
        let l_solve = |m: &DMatrix<f64>| l.solve_lower_triangular(m).ok_or(Error::SingularInnovation);
        let h = l_solve(&self.stacked_h)?;
        let resid = l_solve(&DMatrix::from_column_slice(total, 1, (y - &self.stacked_h * &pred_mean).as_slice()))?;
        let s = &h * &pred_cov * h.transpose() + DMatrix::identity(total, total);
        let chol_s = s.cholesky().ok_or(Error::SingularInnovation)?;
        // gain = P Hᵀ S⁻¹, formed as (S⁻¹ H P)ᵀ.
        let gain = chol_s.solve(&(&h * &pred_cov)).transpose();
        self.mean = &pred_mean + &gain * resid.column(0);
        // Joseph form keeps the covariance symmetric PSD.
        let q = self.mean.len();
        let ikh = DMatrix::identity(q, q) - &gain * &h;
        let cov = &ikh * pred_cov * ikh.transpose() + &gain * gain.transpose();
        self.cov = linalg::symmetrize(&cov);
        Ok(())
    }
}

/// Free-function form of [`CentralKf::step`].
pub fn central_kf_step(
    kf: &mut CentralKf,
    y_all: &[DVector<f64>],
    system: &System,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    kf.step(y_all, system)?;
    Ok((kf.mean.clone(), kf.cov.clone()))
}
