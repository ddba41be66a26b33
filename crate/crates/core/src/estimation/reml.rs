//! Likelihood fits with estimated variance components.
//!
//! The individual-level covariance within a cluster is σ_t²{(1-ρ)I + ρ11'}.
//! For fixed ρ the total variance σ_t² has a closed-form maximizer, so the
//! (restricted) likelihood is profiled to one dimension and maximized over
//! ρ ∈ [0, 0.999] by a grid scan followed by golden-section refinement.
//! Everything is computed from cluster-period means and the within-cell sum
//! of squares, which are sufficient for equal cell sizes.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};

use super::{check_rank, Dataset, FitMethod, FitResult, SufficientStats};
use crate::correlation::RHO_MAX;
use crate::design::DesignLayout;
use crate::error::{Error, Result};
use crate::model::ModelKind;

const GRID_POINTS: usize = 48;
const RHO_TOL: f64 = 1e-9;
const BOUNDARY_TOL: f64 = 1e-6;

struct Profile {
    k: f64,
    j: f64,
    n_clusters: f64,
    n_obs: f64,
    p: usize,
    /// Per sequence: count, B'B, B'1, B'S, 1'S.
    seqs: Vec<(f64, DMatrix<f64>, DVector<f64>, DVector<f64>, f64)>,
    sum_sq_means: f64,
    sum_sq_totals: f64,
    within_ss: f64,
}

struct Point {
    rho: f64,
    /// Profiled criterion value.
    value: f64,
    quad: f64,
    log_det_r: f64,
    log_det_a: f64,
    a_inv: DMatrix<f64>,
    beta: DVector<f64>,
}

impl Profile {
    fn new(layout: &DesignLayout, model: ModelKind, stats: &SufficientStats) -> Result<Self> {
        let blocks = model.blocks(layout);
        check_rank(model, layout, &blocks)?;
        let jm = layout.n_periods();
        let ones = DVector::from_element(jm, 1.0);
        let seqs = blocks
            .iter()
            .zip(&stats.seq_counts)
            .zip(&stats.seq_sums)
            .map(|((b, &n), s)| {
                let s = DVector::from_column_slice(s);
                (n as f64, b.transpose() * b, b.transpose() * &ones, b.transpose() * &s, s.sum())
            })
            .collect();
        let k = stats.k as f64;
        let n_clusters = stats.n_clusters as f64;
        let p = model.n_columns(jm);
        let n_obs = n_clusters * jm as f64 * k;
        if n_obs <= p as f64 {
            return Err(Error::config("fewer observations than fixed effects"));
        }
        Ok(Self {
            k,
            j: jm as f64,
            n_clusters,
            n_obs,
            p,
            seqs,
            sum_sq_means: stats.sum_sq_means,
            sum_sq_totals: stats.sum_sq_totals,
            within_ss: stats.within_ss,
        })
    }

    fn evaluate(&self, rho: f64, method: FitMethod) -> Option<Point> {
        let lambda1 = 1.0 - rho;
        let lambda2 = 1.0 + (self.j * self.k - 1.0) * rho;
        let kappa = self.k * rho / lambda2;
        let scale = self.k / lambda1;
        let mut a = DMatrix::zeros(self.p, self.p);
        let mut c = DVector::zeros(self.p);
        for (n, btb, b1, bs, s1) in &self.seqs {
            a += (btb - b1 * b1.transpose() * kappa) * (scale * n);
            c += (bs - b1 * (kappa * s1)) * scale;
        }
        let chol = a.cholesky()?;
        let beta = chol.solve(&c);
        let ypy = scale * (self.sum_sq_means - kappa * self.sum_sq_totals) + self.within_ss / lambda1;
        let quad = ypy - c.dot(&beta);
        if !(quad > 1e-12 * ypy.abs()) || !quad.is_finite() {
            return None;
        }
        let log_det_r = self.n_clusters * ((self.j * self.k - 1.0) * lambda1.ln() + lambda2.ln());
        let log_det_a = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
        let value = match method {
            FitMethod::Ml => {
                let n = self.n_obs;
                -0.5 * (n * ((2.0 * PI * quad / n).ln() + 1.0) + log_det_r)
            }
            _ => {
                let m = self.n_obs - self.p as f64;
                -0.5 * (m * ((2.0 * PI * quad / m).ln() + 1.0) + log_det_r + log_det_a)
            }
        };
        if !value.is_finite() {
            return None;
        }
        Some(Point {
            rho,
            value,
            quad,
            log_det_r,
            log_det_a,
            a_inv: chol.inverse(),
            beta,
        })
    }

    /// Full and restricted log-likelihoods at (ρ, σ_t²).
    fn logliks(&self, pt: &Point, sigma_t_sq: f64) -> (f64, f64) {
        let n = self.n_obs;
        let p = self.p as f64;
        let ml = -0.5 * (n * (2.0 * PI * sigma_t_sq).ln() + pt.log_det_r + pt.quad / sigma_t_sq);
        // |G'V⁻¹G| = σ_t^{-2p} |A|, and the restricted likelihood adds p ln(2π)/2
        let reml = ml - 0.5 * (pt.log_det_a - p * sigma_t_sq.ln()) + 0.5 * p * (2.0 * PI).ln();
        (ml, reml)
    }
}

fn best(profile: &Profile, method: FitMethod) -> Result<Point> {
    let grid: Vec<f64> = (0..=GRID_POINTS)
        .map(|g| RHO_MAX * (g as f64 / GRID_POINTS as f64).powi(2))
        .collect();
    let evals: Vec<Option<Point>> = grid.iter().map(|&r| profile.evaluate(r, method)).collect();
    let (g_best, _) = evals
        .iter()
        .enumerate()
        .filter_map(|(g, e)| e.as_ref().map(|p| (g, p.value)))
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .ok_or_else(|| {
            Error::Convergence(
                "criterion is not finite anywhere on [0, 0.999]; residual variation may be zero".into(),
            )
        })?;
    let lo = grid[g_best.saturating_sub(1)];
    let hi = grid[(g_best + 1).min(GRID_POINTS)];
    let mut champion = evals.into_iter().nth(g_best).flatten().expect("present");

    let ratio = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (lo, hi);
    let f = |r: f64| profile.evaluate(r, method);
    let mut c = b - ratio * (b - a);
    let mut d = a + ratio * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    let value = |p: &Option<Point>| p.as_ref().map_or(f64::NEG_INFINITY, |p| p.value);
    let mut iters = 0;
    while b - a > RHO_TOL {
        iters += 1;
        if iters > 200 {
            return Err(Error::Convergence(format!(
                "golden-section search stalled in [{a}, {b}]"
            )));
        }
        if value(&fc) >= value(&fd) {
            b = d;
            d = c;
            fd = fc;
            c = b - ratio * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + ratio * (b - a);
            fd = f(d);
        }
    }
    for cand in [fc, fd, f(0.5 * (a + b))].into_iter().flatten() {
        if cand.value > champion.value {
            champion = cand;
        }
    }
    Ok(champion)
}

fn fit(layout: &DesignLayout, model: ModelKind, data: &Dataset, method: FitMethod) -> Result<FitResult> {
    data.match_layout(layout)?;
    let means = data.cluster_period_means()?;
    let stats = SufficientStats::from_means(layout, &means)?;
    let profile = Profile::new(layout, model, &stats)?;
    let pt = best(&profile, method)?;
    let denom = match method {
        FitMethod::Ml => profile.n_obs,
        _ => profile.n_obs - profile.p as f64,
    };
    let sigma_t_sq = pt.quad / denom;
    let cov = &pt.a_inv * sigma_t_sq;
    let (ml, reml) = profile.logliks(&pt, sigma_t_sq);
    let mut out = FitResult::assemble(model, method, layout.n_periods(), &pt.beta, &cov)
        .with_variance(pt.rho * sigma_t_sq, (1.0 - pt.rho) * sigma_t_sq);
    out.loglik_ml = Some(ml);
    out.loglik_reml = Some(reml);
    out.boundary = pt.rho < BOUNDARY_TOL || pt.rho > RHO_MAX - BOUNDARY_TOL;
    Ok(out)
}

/// Restricted maximum likelihood fit of `model`.
pub fn reml_fit(layout: &DesignLayout, model: ModelKind, data: &Dataset) -> Result<FitResult> {
    fit(layout, model, data, FitMethod::Reml)
}

/// Maximum likelihood fit of `model`, used for likelihood-ratio tests.
pub fn ml_fit(layout: &DesignLayout, model: ModelKind, data: &Dataset) -> Result<FitResult> {
    fit(layout, model, data, FitMethod::Ml)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::correlation::CorrelationParams;
    use crate::estimation::gls_fit;

    /// Dense individual-level likelihood, straight from the definition.
    fn dense_logliks(layout: &DesignLayout, model: ModelKind, data: &Dataset, rho: f64, st2: f64) -> (f64, f64) {
        let jm = layout.n_periods();
        let k = layout.cluster_period_size();
        let n = jm * k;
        let r = DMatrix::from_fn(n, n, |a, b| if a == b { st2 } else { rho * st2 });
        let r_inv = r.clone().try_inverse().unwrap();
        let log_det = r.determinant().ln();
        let adopt = data.adoption_periods().unwrap();
        let p = model.n_columns(jm);
        let mut info = DMatrix::zeros(p, p);
        let mut rhs = DVector::zeros(p);
        for (i, &a) in adopt.iter().enumerate() {
            let b = model.sequence_block(a, jm, layout.ell());
            let g = DMatrix::from_fn(n, p, |row, col| b[(row / k, col)]);
            let y = DVector::from_iterator(n, (0..jm).flat_map(|j| data.cell(i, j).to_vec()));
            info += g.transpose() * &r_inv * &g;
            rhs += g.transpose() * &r_inv * y;
        }
        let beta = info.clone().try_inverse().unwrap() * rhs;
        let mut ml = 0.0;
        for (i, &a) in adopt.iter().enumerate() {
            let b = model.sequence_block(a, jm, layout.ell());
            let g = DMatrix::from_fn(n, p, |row, col| b[(row / k, col)]);
            let y = DVector::from_iterator(n, (0..jm).flat_map(|j| data.cell(i, j).to_vec()));
            let res = y - g * &beta;
            ml += -0.5 * (n as f64 * (2.0 * PI).ln() + log_det + res.dot(&(&r_inv * &res)));
        }
        let reml = ml - 0.5 * info.determinant().ln() + 0.5 * p as f64 * (2.0 * PI).ln();
        (ml, reml)
    }

    fn toy() -> (DesignLayout, Dataset) {
        let layout = DesignLayout::standard(6, 4, 3, 1).unwrap();
        let n = 6 * 4 * 3;
        // deterministic pseudo-noise with a cluster component
        let y: Vec<f64> = (0..n)
            .map(|t| {
                let i = t / 12;
                let period = (t / 3) % 4;
                0.3 * period as f64 + 0.5 * ((i * 7 % 5) as f64 - 2.0) + ((t * 37 % 11) as f64 - 5.0) / 4.0
            })
            .collect();
        (layout.clone(), Dataset::from_layout(&layout, 1, y).unwrap())
    }

    #[test]
    fn profiled_likelihood_matches_dense() {
        let (layout, data) = toy();
        for model in ModelKind::ALL {
            let fit = reml_fit(&layout, model, &data).unwrap();
            let st2 = fit.tau_sq + fit.sigma_sq;
            let (ml, reml) = dense_logliks(&layout, model, &data, fit.rho, st2);
            assert!((fit.loglik_reml.unwrap() - reml).abs() < 1e-8, "{model}");
            assert!((fit.loglik_ml.unwrap() - ml).abs() < 1e-8, "{model}");
        }
    }

    #[test]
    fn reml_is_a_local_maximum() {
        let (layout, data) = toy();
        let fit = reml_fit(&layout, ModelKind::Hh, &data).unwrap();
        let st2 = fit.tau_sq + fit.sigma_sq;
        let (_, at) = dense_logliks(&layout, ModelKind::Hh, &data, fit.rho, st2);
        for (dr, ds) in [(0.01, 0.0), (-0.01, 0.0), (0.0, 0.05), (0.0, -0.05)] {
            let r = (fit.rho + dr).clamp(0.0, 0.99);
            let (_, other) = dense_logliks(&layout, ModelKind::Hh, &data, r, st2 * (1.0 + ds));
            assert!(other <= at + 1e-9);
        }
    }

    #[test]
    fn fixed_effects_match_known_variance_gls() {
        let (layout, data) = toy();
        let fit = reml_fit(&layout, ModelKind::HhAnt, &data).unwrap();
        let params = CorrelationParams::new(fit.tau_sq, fit.sigma_sq, 3, 4).unwrap();
        let known = gls_fit(&layout, ModelKind::HhAnt, &params, &data.cluster_period_means().unwrap()).unwrap();
        for (a, b) in fit.coefficients.iter().zip(&known.coefficients) {
            assert!((a.estimate - b.estimate).abs() < 1e-9);
            assert!((a.se - b.se).abs() < 1e-9);
        }
    }

    #[test]
    fn ml_variance_is_smaller() {
        let (layout, data) = toy();
        let r = reml_fit(&layout, ModelKind::Eti, &data).unwrap();
        let m = ml_fit(&layout, ModelKind::Eti, &data).unwrap();
        assert!(m.sigma_sq + m.tau_sq < r.sigma_sq + r.tau_sq);
        assert_eq!(m.method, FitMethod::Ml);
    }

    #[test]
    fn no_within_noise_hits_upper_boundary() {
        let layout = DesignLayout::standard(4, 3, 2, 1).unwrap();
        let y: Vec<f64> = (0..24)
            .map(|t| {
                let i = t / 6;
                let period = (t / 2) % 3;
                [0.3, -0.5, 1.1, 0.2][i] + 0.1 * period as f64
            })
            .collect();
        let data = Dataset::from_layout(&layout, 1, y).unwrap();
        let fit = reml_fit(&layout, ModelKind::Hh, &data).unwrap();
        assert!(fit.boundary);
        assert!(fit.sigma_sq < 1e-2 * fit.tau_sq);
    }

    #[test]
    fn constant_data_is_a_convergence_error() {
        let layout = DesignLayout::standard(4, 3, 2, 1).unwrap();
        let data = Dataset::from_layout(&layout, 1, vec![1.0; 24]).unwrap();
        assert!(matches!(reml_fit(&layout, ModelKind::Hh, &data), Err(Error::Convergence(_))));
    }
}
