//! Closed-form expectations of misspecified working-model estimators on
//! standard designs, and a dispatcher that falls back to the exact GLS
//! expectation when no closed form applies.
//!
//! Weights are indexed by exposure time `j = 1..Q`; `q` is the number of
//! sequences `Q = J - 1` and `phi` the correlation of cluster-period means.

use std::io::Write;

use serde::Serialize;

use crate::design::DesignLayout;
use crate::error::{Error, Result};
use crate::estimation::Expectation;
use crate::model::{ModelKind, TrueModelParams};

fn check_q(q: usize) -> Result<f64> {
    if q < 2 {
        return Err(Error::config(format!("need at least two sequences, got Q = {q}")));
    }
    Ok(q as f64)
}

fn check_phi(phi: f64) -> Result<()> {
    if !(0.0..1.0).contains(&phi) {
        return Err(Error::config(format!("phi must lie in [0, 1), got {phi}")));
    }
    Ok(())
}

/// Weight of the anticipation effect in the constant-effect estimator that
/// ignores a first-order anticipation term.
pub fn omega_hh_hhant(q: usize, phi: f64) -> Result<f64> {
    let qf = check_q(q)?;
    check_phi(phi)?;
    Ok(-6.0 * (1.0 + phi * qf) / ((qf + 1.0) * (2.0 + phi * qf)))
}

/// Same weight for an anticipation window of `ell` periods.
pub fn omega_hh_hhant_order(q: usize, phi: f64, ell: usize) -> Result<f64> {
    let qf = check_q(q)?;
    check_phi(phi)?;
    if ell == 0 || ell > q {
        return Err(Error::config(format!("anticipation order {ell} outside 1..={q}")));
    }
    if ell == 1 {
        return omega_hh_hhant(q, phi);
    }
    let l = ell as f64;
    let num = 6.0 * phi * qf.powi(3) - 9.0 * phi * l * qf * qf + 3.0 * phi * qf * qf + 6.0 * qf * qf
        + 4.0 * phi * l * l * qf
        - 3.0 * phi * l * qf
        - 6.0 * l * qf
        - phi * qf
        + 2.0 * l * l
        - 2.0;
    Ok(-l * num / (qf * (qf + 1.0) * (qf - 1.0) * (phi * qf + 2.0)))
}

/// Exposure-time weights `(π, ω)` of the constant-effect estimator when the
/// truth has exposure-time effects and first-order anticipation:
/// E(δ̂) = Σ_j π(j)δ(j) + γ Σ_j ω(j).
pub fn weights_hh_under_etiant(q: usize, phi: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    let qf = check_q(q)?;
    check_phi(phi)?;
    let den = qf * (qf + 1.0) * (qf - 1.0) * (phi * qf + 2.0);
    let pi = (1..=q)
        .map(|j| {
            let j = j as f64;
            6.0 * (j - qf - 1.0) * ((1.0 + 2.0 * phi * qf) * j - (1.0 + phi + phi * qf) * qf) / den
        })
        .collect();
    let omega = (1..=q)
        .map(|j| -6.0 * (phi * qf * qf - phi * qf + 2.0 * j as f64 - 2.0) / den)
        .collect();
    Ok((pi, omega))
}

/// Exposure-time weights `(π, ψ)` of the anticipation model with a constant
/// effect when the truth has exposure-time effects:
/// E(δ̂) = Σ_j π(j)δ(j) and E(γ̂) = γ + Σ_j ψ(j)δ(j).
pub fn weights_hhant_under_eti(q: usize, phi: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    let qf = check_q(q)?;
    check_phi(phi)?;
    let den = qf * (qf - 1.0) * (phi * qf * qf - 2.0 * phi * qf + 2.0 * qf - 1.0);
    let pi = (1..=q)
        .map(|j| {
            let j = j as f64;
            6.0 * (phi * qf.powi(3) - 3.0 * phi * qf * qf * j + phi * qf * qf + qf * qf + 2.0 * phi * qf * j * j
                - 2.0 * phi * qf * j
                + phi * qf
                - 2.0 * qf * j
                + j * j)
                / den
        })
        .collect();
    let psi = (1..=q)
        .map(|j| {
            let j = j as f64;
            (2.0 * phi * qf.powi(3) - 8.0 * phi * qf * qf * j + 5.0 * phi * qf * qf + qf * qf
                + 6.0 * phi * qf * j * j
                - 8.0 * phi * qf * j
                + 3.0 * phi * qf
                - 4.0 * qf * j
                + qf
                + 3.0 * j * j
                - j)
                / den
        })
        .collect();
    Ok((pi, psi))
}

/// Expectations of the two exposure-time estimators on a three-period
/// standard design when a first-order anticipation effect is ignored.
/// `delta` holds the true effects at exposure times 1 and 2 (equal for a
/// constant-effect truth).
pub fn eti_bias_j3(phi: f64, delta: [f64; 2], gamma: f64) -> Result<[f64; 2]> {
    check_phi(phi)?;
    Ok([delta[0] - (1.0 + phi) * gamma, delta[1] - (1.0 + 2.0 * phi) * gamma])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    /// Closed-form theorem or correct/over-specification identity.
    Analytic,
    /// Exact GLS expectation computed numerically.
    Oracle,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PredictMode {
    AnalyticOnly,
    AllowOracle,
}

/// Predicted expectations of the anticipation and treatment-effect coefficients.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Prediction {
    pub working: ModelKind,
    pub truth: ModelKind,
    pub provenance: Provenance,
    pub labels: Vec<String>,
    pub values: Vec<f64>,
    /// Expected constant effect, or the average of the expected exposure-time effects.
    pub effect: f64,
    pub gamma: Option<f64>,
}

impl Prediction {
    fn new(working: ModelKind, truth: ModelKind, provenance: Provenance, n_periods: usize, gamma: Option<f64>, effects: Vec<f64>) -> Self {
        let labels = working.labels(n_periods)[working.gamma_index(n_periods).unwrap_or(n_periods)..].to_vec();
        let effect = effects.iter().sum::<f64>() / effects.len() as f64;
        let values = gamma.into_iter().chain(effects).collect();
        Self {
            working,
            truth,
            provenance,
            labels,
            values,
            effect,
            gamma,
        }
    }

    fn from_expectation(e: &Expectation, truth: ModelKind, n_periods: usize) -> Self {
        let w = e.working;
        let start = w.effect_start(n_periods);
        let effects = e.values[start..].to_vec();
        Self::new(w, truth, Provenance::Oracle, n_periods, e.gamma(), effects)
    }

    pub fn get(&self, label: &str) -> Option<f64> {
        self.labels.iter().position(|l| l == label).map(|i| self.values[i])
    }
}

/// Closed-form expectation when a theorem covers the scenario on a standard
/// design; `None` otherwise.
fn analytic(layout: &DesignLayout, working: ModelKind, truth: &TrueModelParams, phi: f64) -> Result<Option<Prediction>> {
    use ModelKind::*;
    if !layout.is_standard() {
        return Ok(None);
    }
    let jm = layout.n_periods();
    let q = jm - 1;
    let t = truth.kind;
    let make = |gamma: Option<f64>, effects: Vec<f64>| {
        Some(Prediction::new(working, t, Provenance::Analytic, jm, gamma, effects))
    };
    let truth_curve: Vec<f64> = (1..=q).map(|s| truth.effect_at(s)).collect();
    let dot = |w: &[f64]| w.iter().zip(&truth_curve).map(|(a, b)| a * b).sum::<f64>();
    let covers_truth = (working.has_anticipation() || !t.has_anticipation())
        && (working.exposure_specific() || !t.exposure_specific());
    let same_window = !t.has_anticipation() || truth.ell == layout.ell();

    if covers_truth && same_window {
        // correct or over-specified: unbiased
        let gamma = working.has_anticipation().then_some(truth.gamma);
        let effects = if working.exposure_specific() {
            truth_curve
        } else {
            vec![truth.delta[0]]
        };
        return Ok(make(gamma, effects));
    }
    Ok(match (working, t) {
        (Hh, HhAnt) => {
            let w = omega_hh_hhant_order(q, phi, truth.ell)?;
            make(None, vec![truth.delta[0] + w * truth.gamma])
        }
        (Hh, Eti) | (Hh, EtiAnt) if truth.ell == 1 || t == Eti => {
            let (pi, omega) = weights_hh_under_etiant(q, phi)?;
            let g: f64 = omega.iter().sum::<f64>() * truth.gamma;
            make(None, vec![dot(&pi) + g])
        }
        (HhAnt, Eti) | (HhAnt, EtiAnt) if layout.ell() == 1 && (truth.ell == 1 || t == Eti) => {
            let (pi, psi) = weights_hhant_under_eti(q, phi)?;
            make(Some(truth.gamma + dot(&psi)), vec![dot(&pi)])
        }
        (Eti, HhAnt) | (Eti, EtiAnt) if jm == 3 && truth.ell == 1 => {
            let e = eti_bias_j3(phi, [truth.effect_at(1), truth.effect_at(2)], truth.gamma)?;
            make(None, e.to_vec())
        }
        _ => None,
    })
}

/// Expectation of the working-model coefficients under `truth`, from a
/// closed form when one applies and otherwise (if allowed) from the exact
/// GLS expectation.
pub fn predict_expectation(
    layout: &DesignLayout,
    working: ModelKind,
    truth: &TrueModelParams,
    phi: f64,
    mode: PredictMode,
) -> Result<Prediction> {
    truth.validate()?;
    check_phi(phi)?;
    if truth.n_periods() != layout.n_periods() {
        return Err(Error::config("truth and layout disagree on the number of periods"));
    }
    if let Some(p) = analytic(layout, working, truth, phi)? {
        return Ok(p);
    }
    match mode {
        PredictMode::AnalyticOnly => Err(Error::config(format!(
            "no closed form for {working} working under {} truth on this layout (J = {}, standard = {}, ell = {})",
            truth.kind,
            layout.n_periods(),
            layout.is_standard(),
            truth.ell
        ))),
        PredictMode::AllowOracle => {
            let e = crate::estimation::expected_estimate_phi(layout, working, truth, phi)?;
            Ok(Prediction::from_expectation(&e, truth.kind, layout.n_periods()))
        }
    }
}

/// One row of the weight grid export.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WeightRow {
    #[serde(rename = "Q")]
    pub q: usize,
    pub phi: f64,
    pub j: usize,
    pub weight_name: &'static str,
    pub value: f64,
}

/// Every closed-form weight over the given `Q` and `φ` values. Order-ℓ
/// anticipation weights use `j = ℓ`; the three-period exposure-time
/// anticipation coefficients are emitted for `Q = 2` only.
pub fn weight_grid(qs: &[usize], phis: &[f64]) -> Result<Vec<WeightRow>> {
    let mut rows = Vec::new();
    for &q in qs {
        for &phi in phis {
            let mut push = |name: &'static str, vals: &[f64]| {
                for (i, v) in vals.iter().enumerate() {
                    rows.push(WeightRow {
                        q,
                        phi,
                        j: i + 1,
                        weight_name: name,
                        value: *v,
                    });
                }
            };
            let (pi, omega) = weights_hh_under_etiant(q, phi)?;
            push("pi_hh_etiant", &pi);
            push("omega_hh_etiant", &omega);
            let (pi, psi) = weights_hhant_under_eti(q, phi)?;
            push("pi_hhant_eti", &pi);
            push("psi_hhant_eti", &psi);
            let order: Vec<f64> = (1..=q)
                .map(|l| omega_hh_hhant_order(q, phi, l))
                .collect::<Result<_>>()?;
            push("omega_hh_hhant_order", &order);
            if q == 2 {
                push("eti_anticipation_coef", &[-(1.0 + phi), -(1.0 + 2.0 * phi)]);
            }
        }
    }
    Ok(rows)
}

pub fn write_weight_grid<W: Write>(rows: &[WeightRow], out: W) -> Result<()> {
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
    use crate::estimation::expected_estimate_phi;

    fn phis() -> Vec<f64> {
        (0..10).map(|t| t as f64 / 10.0).collect()
    }

    fn unit_curve(q: usize, at: usize, gamma: f64) -> TrueModelParams {
        let mut d = vec![0.0; q];
        d[at - 1] = 1.0;
        TrueModelParams::curve(q + 1, d, gamma)
    }

    #[test]
    fn omega_values() {
        let w = omega_hh_hhant(8, 0.665).unwrap();
        assert!((w - (-0.576)).abs() < 1e-3);
        assert!((0.075 + w * 0.04 - 0.0520).abs() < 2e-4);
        for q in 2..=12 {
            assert!((omega_hh_hhant(q, 0.0).unwrap() + 3.0 / (q as f64 + 1.0)).abs() < 1e-15);
            assert!((omega_hh_hhant_order(q, 0.4, q).unwrap() + 1.0).abs() < 1e-12);
            assert_eq!(omega_hh_hhant_order(q, 0.4, 1).unwrap(), omega_hh_hhant(q, 0.4).unwrap());
        }
        assert!(omega_hh_hhant_order(4, 0.1, 5).is_err());
        assert!(omega_hh_hhant_order(4, 0.1, 0).is_err());
    }

    #[test]
    fn sum_identities() {
        for q in 2..=12 {
            for phi in phis() {
                let (pi, om) = weights_hh_under_etiant(q, phi).unwrap();
                assert!((pi.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                let total: f64 = om.iter().sum();
                assert!((total - omega_hh_hhant(q, phi).unwrap()).abs() < 1e-12);
                assert!(om.iter().all(|&w| w <= 0.0 && w >= -1.0 - 1e-12));
                if q > 2 && phi > 0.0 {
                    assert!(om.iter().all(|&w| w < 0.0 && w > -1.0), "Q={q} phi={phi} {om:?}");
                }
                let (pi, psi) = weights_hhant_under_eti(q, phi).unwrap();
                assert!((pi.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                assert!(psi.iter().sum::<f64>().abs() < 1e-12);
            }
        }
    }

    #[test]
    fn hh_weights_against_oracle() {
        for q in [2, 5, 9] {
            let layout = DesignLayout::standard(q, q + 1, 1, 1).unwrap();
            for phi in phis() {
                let (pi, om) = weights_hh_under_etiant(q, phi).unwrap();
                for j in 1..=q {
                    let e = expected_estimate_phi(&layout, ModelKind::Hh, &unit_curve(q, j, 0.0), phi).unwrap();
                    assert!((e.get("delta").unwrap() - pi[j - 1]).abs() < 1e-10);
                }
                let e = expected_estimate_phi(&layout, ModelKind::Hh, &unit_curve(q, 1, 1.0), phi).unwrap();
                let want = pi[0] + om.iter().sum::<f64>();
                assert!((e.get("delta").unwrap() - want).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn hhant_weights_against_oracle() {
        for q in [2, 4, 8] {
            let layout = DesignLayout::standard(q, q + 1, 1, 1).unwrap();
            for phi in phis() {
                let (pi, psi) = weights_hhant_under_eti(q, phi).unwrap();
                for j in 1..=q {
                    let e = expected_estimate_phi(&layout, ModelKind::HhAnt, &unit_curve(q, j, 0.0), phi).unwrap();
                    assert!((e.get("delta").unwrap() - pi[j - 1]).abs() < 1e-10);
                    assert!((e.gamma().unwrap() - psi[j - 1]).abs() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn order_ell_against_oracle() {
        let layout = DesignLayout::standard(7, 8, 1, 1).unwrap();
        for ell in 1..=7 {
            let mut t = TrueModelParams::constant(8, 0.0, 1.0);
            t.ell = ell;
            let e = expected_estimate_phi(&layout, ModelKind::Hh, &t, 0.8).unwrap();
            assert!((e.get("delta").unwrap() - omega_hh_hhant_order(7, 0.8, ell).unwrap()).abs() < 1e-10);
        }
    }

    #[test]
    fn two_sequence_last_anticipation_weight_is_minus_one() {
        for phi in phis() {
            let (_, om) = weights_hh_under_etiant(2, phi).unwrap();
            assert!((om[1] + 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn omega_monotone() {
        for q in 2..=10 {
            let mut prev = 0.0;
            for phi in phis() {
                let w = omega_hh_hhant(q, phi).unwrap().abs();
                assert!(w > prev);
                prev = w;
            }
            // nonincreasing in the window length only under independence
            let ws: Vec<f64> = (1..=q).map(|l| omega_hh_hhant_order(q, 0.0, l).unwrap()).collect();
            assert!(ws.windows(2).all(|w| w[1] <= w[0] + 1e-12), "Q={q} {ws:?}");
            for phi in phis() {
                assert!((omega_hh_hhant_order(q, phi, q).unwrap() + 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn boundary_weights() {
        // no correlation: the earliest adopters carry no anticipation weight
        for q in 2..=8 {
            let (_, om) = weights_hh_under_etiant(q, 0.0).unwrap();
            assert_eq!(om[0], 0.0);
        }
        // two sequences: the late sequence's weight sits at -1 for every phi
        for phi in phis() {
            let (_, om) = weights_hh_under_etiant(2, phi).unwrap();
            assert!(om.iter().any(|w| (w + 1.0).abs() < 1e-12), "{om:?}");
        }
    }

    #[test]
    fn window_weight_is_not_monotone_under_correlation() {
        let ws: Vec<f64> = (1..=5).map(|l| omega_hh_hhant_order(5, 0.5, l).unwrap()).collect();
        assert!(ws[2] < ws[1] && ws[3] > ws[2], "{ws:?}");
        let (a, b) = (omega_hh_hhant_order(2, 0.1, 1).unwrap(), omega_hh_hhant_order(2, 0.1, 2).unwrap());
        assert!(a < -1.0 && b > a);
    }

    #[test]
    fn eti_j3() {
        assert_eq!(eti_bias_j3(0.0, [0.0, 0.0], 1.0).unwrap(), [-1.0, -1.0]);
        assert_eq!(eti_bias_j3(0.4, [0.3, 0.5], 0.0).unwrap(), [0.3, 0.5]);
        let [a, b] = eti_bias_j3(0.3, [1.0, 1.0], 0.5).unwrap();
        assert!((b - 1.0).abs() > (a - 1.0).abs());
        let layout = DesignLayout::standard(2, 3, 1, 1).unwrap();
        let e = expected_estimate_phi(&layout, ModelKind::Eti, &TrueModelParams::constant(3, 0.0, 1.0), 0.0).unwrap();
        assert!((e.get("delta_1").unwrap() + 1.0).abs() < 1e-12);
        assert!((e.get("delta_2").unwrap() + 1.0).abs() < 1e-12);
    }

    #[test]
    fn dispatch() {
        let layout = DesignLayout::standard(32, 9, 100, 1).unwrap();
        let hhant = TrueModelParams::constant(9, 0.075, 0.04);
        let p = predict_expectation(&layout, ModelKind::EtiAnt, &hhant, 0.665, PredictMode::AnalyticOnly).unwrap();
        assert_eq!(p.provenance, Provenance::Analytic);
        assert_eq!(p.gamma, Some(0.04));
        assert!(p.values[1..].iter().all(|&v| v == 0.075));
        let p = predict_expectation(&layout, ModelKind::Hh, &hhant, 0.665, PredictMode::AnalyticOnly).unwrap();
        assert!((p.effect - 0.0520).abs() < 2e-4);

        // exposure-time working model beyond three periods needs the oracle
        assert!(predict_expectation(&layout, ModelKind::Eti, &hhant, 0.665, PredictMode::AnalyticOnly).is_err());
        let p = predict_expectation(&layout, ModelKind::Eti, &hhant, 0.665, PredictMode::AllowOracle).unwrap();
        assert_eq!(p.provenance, Provenance::Oracle);
        assert_eq!(p.labels.len(), 8);

        let custom = DesignLayout::custom(
            vec![crate::design::Sequence { adopt: 2, count: 3 }, crate::design::Sequence { adopt: 4, count: 5 }],
            5,
            10,
            1,
        )
        .unwrap();
        let t = TrueModelParams::constant(5, 0.1, 0.02);
        assert!(predict_expectation(&custom, ModelKind::Hh, &t, 0.3, PredictMode::AnalyticOnly).is_err());
    }

    #[test]
    fn grid_rows() {
        let rows = weight_grid(&[2, 3], &[0.0, 0.5]).unwrap();
        assert!(rows.iter().any(|r| r.weight_name == "eti_anticipation_coef" && r.q == 2));
        assert!(!rows.iter().any(|r| r.weight_name == "eti_anticipation_coef" && r.q == 3));
        let mut buf = Vec::new();
        write_weight_grid(&rows, &mut buf).unwrap();
        assert!(String::from_utf8(buf).unwrap().starts_with("Q,phi,j,weight_name,value\n2,0.0,1,pi_hh_etiant,"));
    }
}
