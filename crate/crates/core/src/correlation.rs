//! Exchangeable random-intercept covariance algebra.
//!
//! Individual outcomes in the same cluster share a random intercept with
//! variance τ², and carry independent residuals with variance σ². The
//! cluster-period means of `K` individuals then have an exchangeable
//! covariance over the `J` periods whose inverse has the closed form
//! `x I - y 11'`.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{Error, Result};

/// Largest admissible intra-cluster correlation.
pub const RHO_MAX: f64 = 0.999;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CorrelationParams {
    /// Between-cluster variance τ².
    pub tau_sq: f64,
    /// Residual variance σ².
    pub sigma_sq: f64,
    pub k: usize,
    pub j: usize,
    /// ICC τ²/(τ²+σ²).
    pub rho: f64,
    /// Correlation of cluster-period means τ²/(τ²+σ²/K).
    pub phi: f64,
    /// Total variance τ²+σ².
    pub sigma_t_sq: f64,
    /// Variance of a cluster-period mean, τ²+σ²/K.
    pub eta_sq: f64,
    /// 1-ρ.
    pub lambda1: f64,
    /// 1+(JK-1)ρ.
    pub lambda2: f64,
    /// Diagonal coefficient of the inverse mean covariance.
    pub x: f64,
    /// Off-diagonal coefficient of the inverse mean covariance.
    pub y: f64,
}

impl CorrelationParams {
    /// Builds every derived quantity from the two variance components.
    pub fn new(tau_sq: f64, sigma_sq: f64, k: usize, j: usize) -> Result<Self> {
        if !(sigma_sq > 0.0) || !sigma_sq.is_finite() {
            return Err(Error::config(format!("sigma_sq must be positive, got {sigma_sq}")));
        }
        if !(tau_sq >= 0.0) || !tau_sq.is_finite() {
            return Err(Error::config(format!("tau_sq must be non-negative, got {tau_sq}")));
        }
        if k == 0 {
            return Err(Error::config("K must be at least 1"));
        }
        if j < 2 {
            return Err(Error::config(format!("J must be at least 2, got {j}")));
        }
        let kf = k as f64;
        let jf = j as f64;
        let sigma_t_sq = tau_sq + sigma_sq;
        let rho = tau_sq / sigma_t_sq;
        if rho > RHO_MAX {
            return Err(Error::config(format!("ICC {rho} exceeds the limit {RHO_MAX}")));
        }
        let eta_sq = tau_sq + sigma_sq / kf;
        let phi = tau_sq / eta_sq;
        // η²(1-φ) = σ²/K for every τ², so x never degenerates.
        let x = kf / sigma_sq;
        let y = x * phi / (1.0 + phi * (jf - 1.0));
        Ok(Self {
            tau_sq,
            sigma_sq,
            k,
            j,
            rho,
            phi,
            sigma_t_sq,
            eta_sq,
            lambda1: 1.0 - rho,
            lambda2: 1.0 + (jf * kf - 1.0) * rho,
            x,
            y,
        })
    }

    /// From an ICC and the residual variance σ², so that τ² = ρσ²/(1-ρ).
    pub fn from_icc(rho: f64, sigma_sq: f64, k: usize, j: usize) -> Result<Self> {
        check_rho(rho)?;
        Self::new(rho * sigma_sq / (1.0 - rho), sigma_sq, k, j)
    }

    /// From an ICC and the total variance σ_t².
    pub fn from_icc_total(rho: f64, sigma_t_sq: f64, k: usize, j: usize) -> Result<Self> {
        check_rho(rho)?;
        Self::new(rho * sigma_t_sq, (1.0 - rho) * sigma_t_sq, k, j)
    }

    /// Same variance components with a different cluster-period size or period count.
    pub fn reshaped(&self, k: usize, j: usize) -> Result<Self> {
        Self::new(self.tau_sq, self.sigma_sq, k, j)
    }

    /// Covariance of one cluster's `J` cluster-period means.
    pub fn mean_covariance(&self) -> DMatrix<f64> {
        let j = self.j;
        DMatrix::from_fn(j, j, |a, b| {
            if a == b {
                self.eta_sq
            } else {
                self.tau_sq
            }
        })
    }

    /// Closed-form inverse `x I - y 11'` of [`Self::mean_covariance`].
    pub fn mean_precision(&self) -> DMatrix<f64> {
        let j = self.j;
        DMatrix::from_fn(j, j, |a, b| if a == b { self.x - self.y } else { -self.y })
    }
}

fn check_rho(rho: f64) -> Result<()> {
    if !(0.0..=RHO_MAX).contains(&rho) {
        return Err(Error::config(format!("ICC must lie in [0, {RHO_MAX}], got {rho}")));
    }
    Ok(())
}

/// Mean-covariance precision for a correlation of means φ, up to the scale η²(1-φ).
pub fn unit_precision(phi: f64, j: usize) -> DMatrix<f64> {
    let y = phi / (1.0 + phi * (j as f64 - 1.0));
    DMatrix::from_fn(j, j, |a, b| if a == b { 1.0 - y } else { -y })
}
