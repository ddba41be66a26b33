use serde::Serialize;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use super::{ml_fit, Dataset};
use crate::design::DesignLayout;
use crate::error::{Error, Result};
use crate::model::ModelKind;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LrtResult {
    pub statistic: f64,
    pub df: usize,
    pub p_value: f64,
    pub loglik_null: f64,
    pub loglik_alt: f64,
}

/// Likelihood-ratio test of a constant treatment effect against one effect
/// per exposure time, with or without the anticipation term in both models.
pub fn lrt_exposure_heterogeneity(
    layout: &DesignLayout,
    data: &Dataset,
    with_anticipation: bool,
) -> Result<LrtResult> {
    let df = layout.n_periods().saturating_sub(2);
    if df == 0 {
        return Err(Error::config(
            "with two periods the constant and exposure-time models coincide (df = 0)",
        ));
    }
    let null_model = ModelKind::Hh.with_anticipation(with_anticipation);
    let alt_model = ModelKind::Eti.with_anticipation(with_anticipation);
    let null = ml_fit(layout, null_model, data)?;
    let alt = ml_fit(layout, alt_model, data)?;
    let (l0, l1) = (null.loglik_ml.unwrap_or(f64::NAN), alt.loglik_ml.unwrap_or(f64::NAN));
    // nested maximizations can differ by rounding when the fits coincide
    let statistic = (2.0 * (l1 - l0)).max(0.0);
    let chi = ChiSquared::new(df as f64).map_err(|e| Error::config(e.to_string()))?;
    Ok(LrtResult {
        statistic,
        df,
        p_value: chi.sf(statistic),
        loglik_null: l0,
        loglik_alt: l1,
    })
}
