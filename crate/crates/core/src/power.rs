//! Analytic variances of the treatment-effect estimators, power of the
//! two-sided Wald test, minimum detectable effects, sample-size search and
//! power comparisons between a working model and its anticipation-adjusted
//! counterpart.
//!
//! Variances come from design constants (see [`DesignConstants`]) rather
//! than from assembling the GLS information matrix, but the two agree.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::bias::{predict_expectation, PredictMode};
use crate::correlation::CorrelationParams;
use crate::design::{DesignConstants, DesignLayout};
use crate::error::{Error, Result};
use crate::estimation::check_rank;
use crate::model::{ModelKind, TrueModelParams};

fn std_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("unit normal")
}

/// Standard normal quantile, polished with Newton steps on the CDF so that
/// `cdf(quantile(p))` round-trips to machine precision.
pub(crate) fn normal_quantile(p: f64) -> f64 {
    let n = std_normal();
    let mut z = n.inverse_cdf(p);
    for _ in 0..2 {
        let d = statrs::distribution::Continuous::pdf(&n, z);
        if d > 0.0 {
            z -= (n.cdf(z) - p) / d;
        }
    }
    z
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::config(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    Ok(())
}

fn check_power(p: f64) -> Result<()> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::config(format!("target power must lie in (0, 1), got {p}")));
    }
    Ok(())
}

/// Inputs a variance was computed from.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VarianceInputs {
    #[serde(rename = "I")]
    pub n_clusters: usize,
    #[serde(rename = "J")]
    pub n_periods: usize,
    #[serde(rename = "K")]
    pub k: usize,
    pub rho: f64,
    pub sigma_t_sq: f64,
    pub ell: usize,
    pub constants: DesignConstants,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VarianceResult {
    pub model: ModelKind,
    /// Variance of the constant effect or of the average exposure-time effect.
    pub variance: f64,
    pub se: f64,
    /// Variance of the anticipation estimator, for the -ANT models.
    pub gamma_variance: Option<f64>,
    pub inputs: VarianceInputs,
}

impl VarianceResult {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

fn to_f64(m: &[Vec<i64>]) -> DMatrix<f64> {
    DMatrix::from_fn(m.len(), m.len(), |r, c| m[r][c] as f64)
}

fn vec_f64(v: &[i64]) -> DVector<f64> {
    DVector::from_iterator(v.len(), v.iter().map(|&x| x as f64))
}

/// Model-based variance of the treatment-effect estimator (and of the
/// anticipation estimator when the model has one).
pub fn variance(model: ModelKind, layout: &DesignLayout, params: &CorrelationParams) -> Result<VarianceResult> {
    let jm = layout.n_periods();
    if params.j != jm || params.k != layout.cluster_period_size() {
        return Err(Error::config("correlation parameters were built for a different J or K"));
    }
    check_rank(model, layout, &model.blocks(layout))?;
    let c = DesignConstants::new(layout);
    let (i, j) = (layout.n_clusters() as f64, jm as f64);
    let (l1, l2) = (params.lambda1, params.lambda2);

    // treatment part: scalars for the constant effect, exposure-time blocks otherwise
    let (u1, u2, w1, w2, w5, u5, w6) = if model.exposure_specific() {
        (
            vec_f64(&c.u1_vec),
            to_f64(&c.u2_mat),
            to_f64(&c.w1_mat),
            to_f64(&c.w2_mat),
            vec_f64(&c.w5_vec),
            vec_f64(&c.u5_vec),
            vec_f64(&c.w6_vec),
        )
    } else {
        let s = |v: i64| DVector::from_element(1, v as f64);
        let m = |v: i64| DMatrix::from_element(1, 1, v as f64);
        // Z is binary, so Σ Z_i'Z_i = U
        (s(c.u), m(c.u), m(c.w1), m(c.w2), s(c.w5), s(c.u5), s(c.w6))
    };
    let u1u1 = &u1 * u1.transpose();
    let b_dd = (&u1u1 + &u2 * (i * j) - &w1 * j - &w2 * i) * l2 + (&w2 * i - &u1u1) * l1;
    let p = u1.len();

    let info = if model.has_anticipation() {
        let (u3, u4, w3, w4) = (c.u3 as f64, c.u4 as f64, c.w3 as f64, c.w4 as f64);
        let b_gg = l2 * (u3 * u3 + i * j * u4 - j * w3 - i * w4) + l1 * (i * w4 - u3 * u3);
        let b_gd = (&u1 * u3 + &u5 * (i * j) - &w5 * j - &w6 * i) * l2 + (&w6 * i - &u1 * u3) * l1;
        let mut m = DMatrix::zeros(p + 1, p + 1);
        m[(0, 0)] = b_gg;
        m.view_mut((1, 0), (p, 1)).copy_from(&b_gd);
        m.view_mut((0, 1), (1, p)).copy_from(&b_gd.transpose());
        m.view_mut((1, 1), (p, p)).copy_from(&b_dd);
        m
    } else {
        b_dd
    };
    let scale = i * j * l1 * l2 * params.sigma_t_sq / params.k as f64;
    let inv = info
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Singular(format!("{model} information matrix is not positive definite")))?
        .inverse()
        * scale;
    let off = usize::from(model.has_anticipation());
    let var = inv.view((off, off), (p, p)).sum() / (p * p) as f64;
    let gamma_variance = model.has_anticipation().then(|| inv[(0, 0)]);
    if !(var > 0.0) {
        return Err(Error::Singular(format!("{model} variance is not positive")));
    }
    Ok(VarianceResult {
        model,
        variance: var,
        se: var.sqrt(),
        gamma_variance,
        inputs: VarianceInputs {
            n_clusters: layout.n_clusters(),
            n_periods: jm,
            k: layout.cluster_period_size(),
            rho: params.rho,
            sigma_t_sq: params.sigma_t_sq,
            ell: layout.ell(),
            constants: c,
        },
    })
}

/// Closed-form variance on a standard design with `n_sequences` equal
/// sequences and a first-order anticipation window.
pub fn variance_standard(
    model: ModelKind,
    n_clusters: usize,
    n_sequences: usize,
    k: usize,
    params: &CorrelationParams,
) -> Result<f64> {
    if n_sequences < 2 {
        return Err(Error::config(format!("need at least two sequences, got Q = {n_sequences}")));
    }
    if n_clusters == 0 || n_clusters % n_sequences != 0 {
        return Err(Error::config(format!(
            "I = {n_clusters} is not a positive multiple of Q = {n_sequences}"
        )));
    }
    if params.j != n_sequences + 1 || params.k != k {
        return Err(Error::config("correlation parameters were built for a different J or K"));
    }
    let q = n_sequences as f64;
    let (l1, l2) = (params.lambda1, params.lambda2);
    let tail = match model {
        ModelKind::Hh => q + 2.0,
        ModelKind::HhAnt => q - 1.0,
        other => {
            return Err(Error::config(format!(
                "the standard-design closed form covers HH and HH-ANT, not {other}"
            )))
        }
    };
    Ok(12.0 * q * params.sigma_t_sq * l1 * l2
        / (n_clusters as f64 * k as f64 * (q - 1.0) * (q * l1 + tail * l2)))
}

/// Power of the two-sided Wald test at level `alpha` when the estimator is
/// centred at `effect`.
pub fn power(effect: f64, variance: f64, alpha: f64) -> Result<f64> {
    check_alpha(alpha)?;
    if !(variance > 0.0) || !variance.is_finite() {
        return Err(Error::config(format!("variance must be positive, got {variance}")));
    }
    let z = normal_quantile(1.0 - alpha / 2.0);
    Ok(std_normal().cdf(effect.abs() / variance.sqrt() - z))
}

/// Effect size at which [`power`] equals `target_power` for an estimator with
/// standard error `se`.
pub fn detectable_effect_for_se(se: f64, target_power: f64, alpha: f64) -> Result<f64> {
    check_alpha(alpha)?;
    check_power(target_power)?;
    // power at zero effect is already alpha/2
    if target_power <= alpha / 2.0 {
        return Err(Error::config(format!(
            "target power {target_power} is not above alpha/2 = {}",
            alpha / 2.0
        )));
    }
    Ok((normal_quantile(1.0 - alpha / 2.0) + normal_quantile(target_power)) * se)
}

/// Minimum detectable effect of `model` on `layout`.
pub fn detectable_effect(
    model: ModelKind,
    layout: &DesignLayout,
    params: &CorrelationParams,
    target_power: f64,
    alpha: f64,
) -> Result<f64> {
    let v = variance(model, layout, params)?;
    detectable_effect_for_se(v.se, target_power, alpha)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SearchVariable {
    /// Number of clusters, in multiples of the number of sequences.
    #[serde(rename = "I")]
    Clusters,
    /// Individuals per cluster-period.
    #[serde(rename = "K")]
    ClusterPeriodSize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SampleSizeResult {
    pub vary: SearchVariable,
    pub value: usize,
    pub power: f64,
    pub variance: f64,
}

/// Smallest number of clusters (or individuals per cluster-period) at which
/// `model` reaches `target_power` for `effect`. The ICC and residual variance
/// of `params` are held fixed. Searching over clusters needs a standard
/// template; `cap` bounds the searched value.
pub fn sample_size_search(
    model: ModelKind,
    template: &DesignLayout,
    params: &CorrelationParams,
    effect: f64,
    target_power: f64,
    alpha: f64,
    vary: SearchVariable,
    cap: usize,
) -> Result<SampleSizeResult> {
    check_alpha(alpha)?;
    check_power(target_power)?;
    if effect == 0.0 {
        return Err(Error::config("a zero effect cannot reach any power above alpha/2"));
    }
    let q = template.n_periods() - 1;
    let step = match vary {
        SearchVariable::Clusters => {
            if !template.is_standard() {
                return Err(Error::config("searching over I needs a standard layout"));
            }
            q
        }
        SearchVariable::ClusterPeriodSize => 1,
    };
    let eval = |m: usize| -> Result<(f64, f64)> {
        let value = m * step;
        let (layout, p) = match vary {
            SearchVariable::Clusters => (
                DesignLayout::standard(value, template.n_periods(), template.cluster_period_size(), template.ell())?,
                *params,
            ),
            SearchVariable::ClusterPeriodSize => (
                template.with_cluster_period_size(value)?,
                params.reshaped(value, template.n_periods())?,
            ),
        };
        let v = variance(model, &layout, &p)?.variance;
        Ok((power(effect, v, alpha)?, v))
    };
    let max_m = cap / step;
    if max_m == 0 {
        return Err(Error::config(format!("cap {cap} is below the smallest admissible value {step}")));
    }
    let (p_max, _) = eval(max_m)?;
    if p_max < target_power {
        return Err(Error::config(format!(
            "power {p_max:.4} at the cap ({}) is below the target {target_power}",
            max_m * step
        )));
    }
    // power increases with the searched count: bisect on the multiplier
    let (mut lo, mut hi) = (0usize, max_m);
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if eval(mid)?.0 >= target_power {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let (p, v) = eval(hi)?;
    Ok(SampleSizeResult {
        vary,
        value: hi * step,
        power: p,
        variance: v,
    })
}

/// Which quantity the first grid axis holds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum GridScan {
    /// Effect fixed at the given value; the axis is the anticipation-to-effect ratio.
    FixedEffect(f64),
    /// Ratio fixed at the given value; the axis is the effect.
    FixedRatio(f64),
}

/// Power comparison of two working models on a standard design when the
/// truth carries an anticipation effect. With `shape` set, the truth has
/// exposure-time effects following that curve, shifted so their average
/// equals the effect under study.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerComparison {
    pub layout: DesignLayout,
    pub model_a: ModelKind,
    pub model_b: ModelKind,
    pub shape: Option<Vec<f64>>,
    pub sigma_sq: f64,
    pub alpha: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GridRow {
    pub param1: f64,
    pub param2: f64,
    #[serde(rename = "power_A")]
    pub power_a: f64,
    #[serde(rename = "power_B")]
    pub power_b: f64,
    /// power_a / power_b.
    pub ratio: f64,
    /// Both tests keep their size when the effect is zero and the
    /// anticipation effect is as in this cell.
    pub valid: bool,
}

impl PowerComparison {
    fn truth(&self, effect: f64, gamma: f64) -> Result<TrueModelParams> {
        let jm = self.layout.n_periods();
        let mut t = match &self.shape {
            None => TrueModelParams::constant(jm, effect, gamma),
            Some(shape) => {
                if shape.len() != jm - 1 {
                    return Err(Error::config(format!(
                        "effect curve needs {} values, got {}",
                        jm - 1,
                        shape.len()
                    )));
                }
                let mean = shape.iter().sum::<f64>() / shape.len() as f64;
                TrueModelParams::curve(jm, shape.iter().map(|v| v - mean + effect).collect(), gamma)
            }
        };
        t.ell = self.layout.ell();
        Ok(t)
    }

    fn variances(&self, rho: f64) -> Result<(f64, f64, f64)> {
        let p = CorrelationParams::from_icc(rho, self.sigma_sq, self.layout.cluster_period_size(), self.layout.n_periods())?;
        let va = variance(self.model_a, &self.layout, &p)?.variance;
        let vb = variance(self.model_b, &self.layout, &p)?.variance;
        Ok((va, vb, p.phi))
    }

    fn expected(&self, model: ModelKind, truth: &TrueModelParams, phi: f64) -> Result<f64> {
        Ok(predict_expectation(&self.layout, model, truth, phi, PredictMode::AllowOracle)?.effect)
    }

    fn cell_with(&self, scan: GridScan, param1: f64, rho: f64, var: (f64, f64, f64)) -> Result<GridRow> {
        let (effect, gamma) = match scan {
            GridScan::FixedEffect(e) => (e, param1 * e),
            GridScan::FixedRatio(r) => (param1, r * param1),
        };
        let (va, vb, phi) = var;
        let truth = self.truth(effect, gamma)?;
        let null = self.truth(0.0, gamma)?;
        let mut valid = true;
        for m in [self.model_a, self.model_b] {
            if self.expected(m, &null, phi)?.abs() > 1e-9 {
                valid = false;
            }
        }
        let pa = power(self.expected(self.model_a, &truth, phi)?, va, self.alpha)?;
        let pb = power(self.expected(self.model_b, &truth, phi)?, vb, self.alpha)?;
        Ok(GridRow {
            param1,
            param2: rho,
            power_a: pa,
            power_b: pb,
            ratio: pa / pb,
            valid,
        })
    }

    /// One grid cell; `param1` is read according to `scan`.
    pub fn cell(&self, scan: GridScan, param1: f64, rho: f64) -> Result<GridRow> {
        self.cell_with(scan, param1, rho, self.variances(rho)?)
    }

    /// Anticipation-to-effect ratio in `[lo, hi]` at which the two powers are
    /// equal for a fixed effect, or `None` when the power difference does not
    /// change sign on the interval.
    pub fn crossing(&self, effect: f64, rho: f64, lo: f64, hi: f64) -> Result<Option<f64>> {
        let var = self.variances(rho)?;
        let scan = GridScan::FixedEffect(effect);
        let diff = |r: f64| -> Result<f64> {
            let c = self.cell_with(scan, r, rho, var)?;
            Ok(c.power_a - c.power_b)
        };
        let (mut a, mut b) = (lo, hi);
        let (fa, fb) = (diff(a)?, diff(b)?);
        if fa == 0.0 {
            return Ok(Some(a));
        }
        if fa.signum() == fb.signum() {
            return Ok(None);
        }
        for _ in 0..200 {
            let m = 0.5 * (a + b);
            let fm = diff(m)?;
            if fm == 0.0 || b - a < 1e-12 {
                return Ok(Some(m));
            }
            if fm.signum() == fa.signum() {
                a = m;
            } else {
                b = m;
            }
        }
        Ok(Some(0.5 * (a + b)))
    }
}

/// Evaluates the comparison over `param1s × rhos`, row-major in `param1`.
pub fn power_ratio_grid(cmp: &PowerComparison, scan: GridScan, param1s: &[f64], rhos: &[f64]) -> Result<Vec<GridRow>> {
    let vars = rhos
        .par_iter()
        .map(|&r| cmp.variances(r))
        .collect::<Result<Vec<_>>>()?;
    let cells: Vec<(f64, usize)> = param1s
        .iter()
        .flat_map(|&p| (0..rhos.len()).map(move |r| (p, r)))
        .collect();
    cells
        .par_iter()
        .map(|&(p, r)| cmp.cell_with(scan, p, rhos[r], vars[r]))
        .collect()
}

pub fn write_grid<W: Write>(rows: &[GridRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::design::Sequence;
    use crate::estimation::{gls_fit, ClusterPeriodMeans};
    use crate::model::sinusoid_curve;

    fn study() -> (DesignLayout, CorrelationParams) {
        (
            DesignLayout::standard(32, 9, 100, 1).unwrap(),
            CorrelationParams::new(0.141 * 0.141, 1.0, 100, 9).unwrap(),
        )
    }

    fn gls_variances(model: ModelKind, layout: &DesignLayout, p: &CorrelationParams) -> (f64, Option<f64>) {
        let jm = layout.n_periods();
        let m = ClusterPeriodMeans {
            n_periods: jm,
            k: layout.cluster_period_size(),
            adoption: layout.adoption_periods(),
            means: vec![0.0; layout.n_clusters() * jm],
            within_ss: 0.0,
        };
        let f = gls_fit(layout, model, p, &m).unwrap();
        (f.effect.se.powi(2), f.gamma.map(|g| g.se.powi(2)))
    }

    #[test]
    fn study_standard_errors() {
        let (layout, p) = study();
        let want = [
            (ModelKind::Hh, 0.020277),
            (ModelKind::HhAnt, 0.024028),
            (ModelKind::Eti, 0.032468),
            (ModelKind::EtiAnt, 0.042647),
        ];
        for (m, se) in want {
            let v = variance(m, &layout, &p).unwrap();
            assert!((v.se - se).abs() < 5e-6, "{m} {}", v.se);
        }
    }

    #[test]
    fn matches_gls_information() {
        let layouts = [
            DesignLayout::standard(12, 5, 7, 1).unwrap(),
            DesignLayout::standard(12, 5, 7, 2).unwrap(),
            DesignLayout::standard(10, 6, 3, 3).unwrap(),
            DesignLayout::custom(
                vec![Sequence { adopt: 2, count: 3 }, Sequence { adopt: 3, count: 1 }, Sequence { adopt: 5, count: 4 }, Sequence { adopt: 4, count: 2 }],
                5,
                9,
                2,
            )
            .unwrap(),
        ];
        for layout in &layouts {
            for rho in [0.0, 0.01, 0.1, 0.5] {
                let p = CorrelationParams::from_icc(rho, 2.0, layout.cluster_period_size(), layout.n_periods()).unwrap();
                for m in ModelKind::ALL {
                    let v = variance(m, layout, &p).unwrap();
                    let (g, gg) = gls_variances(m, layout, &p);
                    assert!(((v.variance - g) / g).abs() < 1e-8, "{m} rho={rho} {} {g}", v.variance);
                    if let (Some(a), Some(b)) = (v.gamma_variance, gg) {
                        assert!(((a - b) / b).abs() < 1e-8);
                    }
                }
            }
        }
    }

    #[test]
    fn standard_closed_form() {
        for q in 2..=10 {
            let layout = DesignLayout::standard(3 * q, q + 1, 20, 1).unwrap();
            for rho in [0.0, 0.02, 0.2, 0.7] {
                let p = CorrelationParams::from_icc(rho, 1.0, 20, q + 1).unwrap();
                for m in [ModelKind::Hh, ModelKind::HhAnt] {
                    let a = variance_standard(m, 3 * q, q, 20, &p).unwrap();
                    let b = variance(m, &layout, &p).unwrap().variance;
                    assert!(((a - b) / b).abs() < 1e-12, "{m} Q={q} rho={rho}");
                }
            }
        }
        let p = CorrelationParams::from_icc(0.1, 1.0, 5, 4).unwrap();
        assert!(variance_standard(ModelKind::Eti, 6, 3, 5, &p).is_err());
        assert!(variance_standard(ModelKind::Hh, 7, 3, 5, &p).is_err());
    }

    #[test]
    fn anticipation_inflates_variance() {
        let (layout, _) = study();
        for rho in [0.01, 0.05, 0.2] {
            let p = CorrelationParams::from_icc(rho, 1.0, 100, 9).unwrap();
            let v = |m| variance(m, &layout, &p).unwrap().variance;
            assert!(v(ModelKind::Hh) < v(ModelKind::HhAnt));
            assert!(v(ModelKind::Eti) <= v(ModelKind::EtiAnt));
        }
    }

    #[test]
    fn inflation_band_for_nine_periods() {
        let layout = DesignLayout::standard(32, 9, 100, 1).unwrap();
        for g in 2..=25 {
            let rho = g as f64 / 100.0;
            let p = CorrelationParams::from_icc(rho, 1.0, 100, 9).unwrap();
            let r = variance(ModelKind::HhAnt, &layout, &p).unwrap().variance
                / variance(ModelKind::Hh, &layout, &p).unwrap().variance;
            assert!((1.40..=1.50).contains(&r), "rho={rho} ratio={r}");
        }
    }

    #[test]
    fn power_basics() {
        assert!((power(0.0, 0.01, 0.05).unwrap() - 0.025).abs() < 1e-12);
        assert!(power(0.5, 1e-8, 0.05).unwrap() > 1.0 - 1e-12);
        assert!((power(0.3, 0.01, 0.05).unwrap() - power(-0.3, 0.01, 0.05).unwrap()).abs() < 1e-15);
        assert!(power(0.1, 0.0, 0.05).is_err());
        assert!(power(0.1, 0.01, 1.0).is_err());
    }

    #[test]
    fn hh_power_on_study_design() {
        let (layout, p) = study();
        let v = variance(ModelKind::Hh, &layout, &p).unwrap();
        let pw = power(0.075, v.variance, 0.05).unwrap();
        assert!((pw - 0.96).abs() < 0.01, "{pw}");
    }

    #[test]
    fn detectable_effect_table() {
        let layout = DesignLayout::standard(18, 7, 50, 1).unwrap();
        let want = [(0.0, 0.124), (0.01, 0.212), (0.05, 0.281), (0.10, 0.299), (0.20, 0.310)];
        for (rho, mde) in want {
            let tau_sq = rho / (1.0 - rho);
            let p = CorrelationParams::new(tau_sq, 1.0, 50, 7).unwrap();
            let d = detectable_effect(ModelKind::EtiAnt, &layout, &p, 0.8, 0.05).unwrap();
            assert!((d - mde).abs() < 1e-3, "rho={rho} {d}");
            let v = variance(ModelKind::EtiAnt, &layout, &p).unwrap().variance;
            assert!((power(d, v, 0.05).unwrap() - 0.8).abs() < 1e-12);
        }
    }

    #[test]
    fn sample_size_over_clusters() {
        let template = DesignLayout::standard(4, 5, 20, 1).unwrap();
        let p = CorrelationParams::from_icc(0.05, 1.0, 20, 5).unwrap();
        let r = sample_size_search(ModelKind::Hh, &template, &p, 0.2, 0.8, 0.05, SearchVariable::Clusters, 10_000).unwrap();
        assert_eq!(r.value % 4, 0);
        assert!(r.power >= 0.8);
        let below = DesignLayout::standard(r.value - 4, 5, 20, 1);
        if let Ok(b) = below {
            let v = variance(ModelKind::Hh, &b, &p).unwrap().variance;
            assert!(power(0.2, v, 0.05).unwrap() < 0.8);
        }
        let d = detectable_effect(ModelKind::Hh, &DesignLayout::standard(r.value, 5, 20, 1).unwrap(), &p, 0.8, 0.05).unwrap();
        assert!(d <= 0.2);
        // doubling I halves the standard-design variance
        let a = variance_standard(ModelKind::Hh, 8, 4, 20, &p).unwrap();
        let b = variance_standard(ModelKind::Hh, 16, 4, 20, &p).unwrap();
        assert!((a / b - 2.0).abs() < 1e-12);
    }

    #[test]
    fn sample_size_over_cluster_size() {
        let template = DesignLayout::standard(16, 5, 1, 1).unwrap();
        let p = CorrelationParams::from_icc(0.02, 1.0, 1, 5).unwrap();
        let r = sample_size_search(ModelKind::HhAnt, &template, &p, 0.15, 0.9, 0.05, SearchVariable::ClusterPeriodSize, 5000).unwrap();
        assert!(r.power >= 0.9);
        let q = p.reshaped(r.value - 1, 5).unwrap();
        let v = variance(ModelKind::HhAnt, &template.with_cluster_period_size(r.value - 1).unwrap(), &q).unwrap();
        assert!(power(0.15, v.variance, 0.05).unwrap() < 0.9);
        assert!(sample_size_search(ModelKind::HhAnt, &template, &p, 0.001, 0.9, 0.05, SearchVariable::ClusterPeriodSize, 10).is_err());
    }

    fn hh_comparison(j: usize) -> PowerComparison {
        PowerComparison {
            layout: DesignLayout::standard(32, j, 100, 1).unwrap(),
            model_a: ModelKind::HhAnt,
            model_b: ModelKind::Hh,
            shape: None,
            sigma_sq: 1.0,
            alpha: 0.05,
        }
    }

    #[test]
    fn crossing_near_three_tenths() {
        let cmp = hh_comparison(5);
        for g in 1..=25 {
            let rho = g as f64 / 100.0;
            let r = cmp.crossing(0.1, rho, 0.0, 1.0).unwrap().unwrap();
            assert!((r - 0.295).abs() < 0.01, "rho={rho} crossing={r}");
        }
    }

    #[test]
    fn crossing_has_closed_form() {
        let cmp = hh_comparison(5);
        for rho in [0.03, 0.12] {
            let p = CorrelationParams::from_icc(rho, 1.0, 100, 5).unwrap();
            let se_hh = variance(ModelKind::Hh, &cmp.layout, &p).unwrap().se;
            let se_ant = variance(ModelKind::HhAnt, &cmp.layout, &p).unwrap().se;
            let w = crate::bias::omega_hh_hhant(4, p.phi).unwrap();
            let want = (1.0 - se_hh / se_ant) / -w;
            let got = cmp.crossing(0.1, rho, 0.0, 1.0).unwrap().unwrap();
            assert!((got - want).abs() < 1e-9);
        }
    }

    #[test]
    fn grid_shape_and_signs() {
        let cmp = hh_comparison(5);
        let ratios = [0.0, 0.5, 1.0];
        let rhos = [0.01, 0.1];
        let rows = power_ratio_grid(&cmp, GridScan::FixedEffect(0.1), &ratios, &rhos).unwrap();
        assert_eq!(rows.len(), 6);
        assert_eq!((rows[1].param1, rows[1].param2), (0.0, 0.1));
        // no anticipation: the constant-effect model wins on variance alone
        assert!(rows[0].ratio < 1.0 && rows[0].valid);
        assert!(!rows[2].valid);
        let neg = power_ratio_grid(&cmp, GridScan::FixedEffect(-0.1), &ratios, &rhos).unwrap();
        for (a, b) in rows.iter().zip(&neg) {
            assert!((a.ratio - b.ratio).abs() < 1e-12);
        }
        let mut buf = Vec::new();
        write_grid(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("param1,param2,power_A,power_B,ratio,valid\n"));
    }

    #[test]
    fn curve_shape_does_not_move_exposure_time_comparison() {
        let layout = DesignLayout::standard(32, 5, 100, 1).unwrap();
        let mk = |shape| PowerComparison {
            layout: layout.clone(),
            model_a: ModelKind::EtiAnt,
            model_b: ModelKind::Eti,
            shape,
            sigma_sq: 1.0,
            alpha: 0.05,
        };
        let a = mk(Some(sinusoid_curve(4, 0.5, 3.0, 1.2f64.ln()))).cell(GridScan::FixedEffect(0.04), 0.4, 0.05).unwrap();
        let b = mk(Some(vec![0.0; 4])).cell(GridScan::FixedEffect(0.04), 0.4, 0.05).unwrap();
        assert!((a.ratio - b.ratio).abs() < 1e-10);
    }
}
