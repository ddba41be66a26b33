//! Fitting the four working models and computing exact expectations.
//!
//! Fixed effects are estimated by generalized least squares on cluster-period
//! means. Variance components are either supplied ([`gls_fit`]) or estimated
//! from the individual-level data by profiling the (restricted) likelihood
//! over the ICC ([`reml_fit`], [`ml_fit`]).

mod data;
mod gls;
mod lrt;
mod reml;
mod weights;

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::design::DesignLayout;
use crate::error::{Error, Result};
use crate::model::ModelKind;

pub use data::{ClusterPeriodMeans, Dataset};
pub use gls::{expected_estimate, gls_fit, hat_rows, Expectation};
pub(crate) use gls::expected_estimate_phi;
pub use lrt::{lrt_exposure_heterogeneity, LrtResult};
pub use reml::{ml_fit, reml_fit};
pub use weights::{eti_weights_for, eti_weights_j3, hh_weights, hhant_weights, WeightGrid};

/// Relative pivot threshold for the rank check.
pub const RANK_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum FitMethod {
    /// Variance components supplied by the caller.
    Known,
    Reml,
    Ml,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Estimate {
    pub estimate: f64,
    pub se: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Coefficient {
    pub label: String,
    pub estimate: f64,
    pub se: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FitResult {
    pub model: ModelKind,
    pub method: FitMethod,
    pub coefficients: Vec<Coefficient>,
    pub covariance: Vec<Vec<f64>>,
    pub tau_sq: f64,
    pub sigma_sq: f64,
    pub tau: f64,
    pub sigma: f64,
    pub rho: f64,
    /// Restricted log-likelihood at the fitted variance components.
    pub loglik_reml: Option<f64>,
    /// Full log-likelihood at the fitted variance components.
    pub loglik_ml: Option<f64>,
    /// The constant effect, or the average of the exposure-time effects.
    pub effect: Estimate,
    pub gamma: Option<Estimate>,
    /// The variance search ended at an end of the admissible ICC range.
    pub boundary: bool,
}

impl FitResult {
    pub(crate) fn assemble(
        model: ModelKind,
        method: FitMethod,
        n_periods: usize,
        beta: &DVector<f64>,
        cov: &DMatrix<f64>,
    ) -> Self {
        let labels = model.labels(n_periods);
        let coefficients = labels
            .into_iter()
            .enumerate()
            .map(|(c, label)| Coefficient {
                label,
                estimate: beta[c],
                se: cov[(c, c)].max(0.0).sqrt(),
            })
            .collect();
        let start = model.effect_start(n_periods);
        let n_eff = model.n_effects(n_periods);
        let nf = n_eff as f64;
        let est = beta.rows(start, n_eff).sum() / nf;
        let var = cov.view((start, start), (n_eff, n_eff)).sum() / (nf * nf);
        let gamma = model.gamma_index(n_periods).map(|g| Estimate {
            estimate: beta[g],
            se: cov[(g, g)].max(0.0).sqrt(),
        });
        Self {
            model,
            method,
            coefficients,
            covariance: (0..cov.nrows())
                .map(|r| cov.row(r).iter().copied().collect())
                .collect(),
            tau_sq: f64::NAN,
            sigma_sq: f64::NAN,
            tau: f64::NAN,
            sigma: f64::NAN,
            rho: f64::NAN,
            loglik_reml: None,
            loglik_ml: None,
            effect: Estimate {
                estimate: est,
                se: var.max(0.0).sqrt(),
            },
            gamma,
            boundary: false,
        }
    }

    pub(crate) fn with_variance(mut self, tau_sq: f64, sigma_sq: f64) -> Self {
        self.tau_sq = tau_sq;
        self.sigma_sq = sigma_sq;
        self.tau = tau_sq.max(0.0).sqrt();
        self.sigma = sigma_sq.max(0.0).sqrt();
        self.rho = tau_sq / (tau_sq + sigma_sq);
        self
    }

    pub fn coefficient(&self, label: &str) -> Option<&Coefficient> {
        self.coefficients.iter().find(|c| c.label == label)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Per-sequence sums of cluster-period means plus the scalar totals the
/// likelihood needs.
#[derive(Debug, Clone)]
pub(crate) struct SufficientStats {
    pub k: usize,
    pub n_clusters: usize,
    pub seq_counts: Vec<usize>,
    pub seq_sums: Vec<Vec<f64>>,
    /// Σ_i Ȳ_i'Ȳ_i.
    pub sum_sq_means: f64,
    /// Σ_i (1'Ȳ_i)².
    pub sum_sq_totals: f64,
    pub within_ss: f64,
}

impl SufficientStats {
    pub fn from_means(layout: &DesignLayout, m: &ClusterPeriodMeans) -> Result<Self> {
        let jm = layout.n_periods();
        if m.n_periods != jm {
            return Err(Error::config(format!(
                "means have {} periods, layout has {jm}",
                m.n_periods
            )));
        }
        let index: HashMap<usize, usize> = layout
            .sequences()
            .iter()
            .enumerate()
            .map(|(q, s)| (s.adopt, q))
            .collect();
        let nq = layout.n_sequences();
        let mut seq_counts = vec![0usize; nq];
        let mut seq_sums = vec![vec![0.0; jm]; nq];
        let (mut ss_means, mut ss_totals) = (0.0, 0.0);
        for (i, &a) in m.adoption.iter().enumerate() {
            let q = *index.get(&a).ok_or_else(|| {
                Error::config(format!("cluster {} adopts in period {a}, which the layout lacks", i + 1))
            })?;
            seq_counts[q] += 1;
            let row = m.row(i);
            for (acc, v) in seq_sums[q].iter_mut().zip(row) {
                *acc += v;
            }
            ss_means += row.iter().map(|v| v * v).sum::<f64>();
            let t: f64 = row.iter().sum();
            ss_totals += t * t;
        }
        for (q, s) in layout.sequences().iter().enumerate() {
            if seq_counts[q] != s.count {
                return Err(Error::config(format!(
                    "layout expects {} clusters adopting in period {}, data has {}",
                    s.count, s.adopt, seq_counts[q]
                )));
            }
        }
        Ok(Self {
            k: m.k,
            n_clusters: m.n_clusters(),
            seq_counts,
            seq_sums,
            sum_sq_means: ss_means,
            sum_sq_totals: ss_totals,
            within_ss: m.within_ss,
        })
    }
}

/// Fails with the first fixed-effect column that is linearly dependent on the
/// columns before it.
pub(crate) fn check_rank(model: ModelKind, layout: &DesignLayout, blocks: &[DMatrix<f64>]) -> Result<()> {
    let stacked = stack(blocks);
    let p = stacked.ncols();
    if rank(&stacked) == p {
        return Ok(());
    }
    let labels = model.labels(layout.n_periods());
    for c in 1..=p {
        let sub = stacked.columns(0, c).into_owned();
        if rank(&sub) < c {
            return Err(Error::Rank {
                column: labels[c - 1].clone(),
                detail: format!(
                    "{model} working model on a layout with adoption periods {:?} and ell = {}",
                    layout.sequences().iter().map(|s| s.adopt).collect::<Vec<_>>(),
                    layout.ell()
                ),
            });
        }
    }
    unreachable!("a rank-deficient matrix has a first dependent column")
}

fn stack(blocks: &[DMatrix<f64>]) -> DMatrix<f64> {
    let rows: usize = blocks.iter().map(|b| b.nrows()).sum();
    let p = blocks[0].ncols();
    let mut out = DMatrix::zeros(rows, p);
    let mut r = 0;
    for b in blocks {
        out.rows_mut(r, b.nrows()).copy_from(b);
        r += b.nrows();
    }
    out
}

fn rank(m: &DMatrix<f64>) -> usize {
    let n = m.nrows().min(m.ncols());
    let r = m.clone().col_piv_qr().r();
    let diag: Vec<f64> = (0..n).map(|i| r[(i, i)].abs()).collect();
    let max = diag.iter().cloned().fold(0.0, f64::max);
    if max == 0.0 {
        return 0;
    }
    diag.iter().filter(|&&d| d > RANK_TOLERANCE * max).count()
}

/// Inverse of a symmetric positive-definite matrix.
pub(crate) fn spd_inverse(m: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    m.clone()
        .cholesky()
        .map(|c| c.inverse())
        .ok_or_else(|| Error::Singular(format!("{what} is not positive definite")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::design::Sequence;

    #[test]
    fn rank_check_names_unobserved_exposure() {
        // nobody adopts in period 2, so exposure time 3 is never observed
        let layout = DesignLayout::custom(
            vec![Sequence { adopt: 3, count: 2 }, Sequence { adopt: 4, count: 2 }],
            4,
            1,
            1,
        )
        .unwrap();
        let blocks = ModelKind::Eti.blocks(&layout);
        match check_rank(ModelKind::Eti, &layout, &blocks) {
            Err(Error::Rank { column, .. }) => assert_eq!(column, "delta_3"),
            other => panic!("unexpected {other:?}"),
        }
        let blocks = ModelKind::Hh.blocks(&layout);
        assert!(check_rank(ModelKind::Hh, &layout, &blocks).is_ok());
    }

    #[test]
    fn full_anticipation_window_collides_with_treatment() {
        let layout = DesignLayout::standard(4, 5, 1, 4).unwrap();
        let blocks = ModelKind::HhAnt.blocks(&layout);
        assert!(matches!(
            check_rank(ModelKind::HhAnt, &layout, &blocks),
            Err(Error::Rank { .. })
        ));
    }

    #[test]
    fn standard_designs_are_full_rank() {
        for j in 3..=10 {
            let layout = DesignLayout::standard(j - 1, j, 1, 1).unwrap();
            for m in ModelKind::ALL {
                let blocks = m.blocks(&layout);
                assert!(check_rank(m, &layout, &blocks).is_ok(), "{m} J={j}");
            }
        }
    }
}
