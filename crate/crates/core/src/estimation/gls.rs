use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use super::{check_rank, spd_inverse, ClusterPeriodMeans, FitMethod, FitResult, SufficientStats};
use crate::correlation::{unit_precision, CorrelationParams};
use crate::design::DesignLayout;
use crate::error::{Error, Result};
use crate::model::{ModelKind, TrueModelParams};

/// Inverse information and, per sequence, the map from that sequence's mean
/// profile to the estimates: θ̂ = Σ_q n_q L_q Ȳ(q).
struct Operator {
    inverse_info: DMatrix<f64>,
    maps: Vec<DMatrix<f64>>,
}

fn operator(layout: &DesignLayout, model: ModelKind, precision: &DMatrix<f64>) -> Result<Operator> {
    let blocks = model.blocks(layout);
    check_rank(model, layout, &blocks)?;
    let p = model.n_columns(layout.n_periods());
    let mut info = DMatrix::zeros(p, p);
    for (b, s) in blocks.iter().zip(layout.sequences()) {
        info += (b.transpose() * precision * b) * s.count as f64;
    }
    let inverse_info = spd_inverse(&info, "GLS information matrix")?;
    let maps = blocks
        .iter()
        .map(|b| &inverse_info * b.transpose() * precision)
        .collect();
    Ok(Operator { inverse_info, maps })
}

/// GLS fit with known variance components.
pub fn gls_fit(
    layout: &DesignLayout,
    model: ModelKind,
    params: &CorrelationParams,
    means: &ClusterPeriodMeans,
) -> Result<FitResult> {
    if params.j != layout.n_periods() || params.k != layout.cluster_period_size() {
        return Err(Error::config("correlation parameters were built for a different J or K"));
    }
    let stats = SufficientStats::from_means(layout, means)?;
    let op = operator(layout, model, &params.mean_precision())?;
    let p = op.inverse_info.nrows();
    let mut beta = DVector::zeros(p);
    for (l, s) in op.maps.iter().zip(&stats.seq_sums) {
        beta += l * DVector::from_column_slice(s);
    }
    Ok(
        FitResult::assemble(model, FitMethod::Known, layout.n_periods(), &beta, &op.inverse_info)
            .with_variance(params.tau_sq, params.sigma_sq),
    )
}

/// Exact expectation of every working-model coefficient.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Expectation {
    pub working: ModelKind,
    pub labels: Vec<String>,
    pub values: Vec<f64>,
}

impl Expectation {
    pub fn get(&self, label: &str) -> Option<f64> {
        self.labels.iter().position(|l| l == label).map(|i| self.values[i])
    }

    /// Expected constant effect, or the average of the expected exposure-time effects.
    pub fn effect(&self, n_periods: usize) -> f64 {
        let start = self.working.effect_start(n_periods);
        let n = self.working.n_effects(n_periods);
        self.values[start..start + n].iter().sum::<f64>() / n as f64
    }

    pub fn gamma(&self) -> Option<f64> {
        self.get("gamma")
    }
}

/// Noise-free expectation of the working-model estimators when the data
/// follow `truth`. Only the correlation of means φ matters.
pub fn expected_estimate(
    layout: &DesignLayout,
    working: ModelKind,
    truth: &TrueModelParams,
    params: &CorrelationParams,
) -> Result<Expectation> {
    expected_estimate_phi(layout, working, truth, params.phi)
}

pub(crate) fn expected_estimate_phi(
    layout: &DesignLayout,
    working: ModelKind,
    truth: &TrueModelParams,
    phi: f64,
) -> Result<Expectation> {
    truth.validate()?;
    let jm = layout.n_periods();
    if truth.n_periods() != jm {
        return Err(Error::config(format!(
            "truth has {} periods, layout has {jm}",
            truth.n_periods()
        )));
    }
    let op = operator(layout, working, &unit_precision(phi, jm))?;
    let p = op.inverse_info.nrows();
    let mut values = DVector::zeros(p);
    for ((l, s), mean) in op.maps.iter().zip(layout.sequences()).zip(truth.sequence_means(layout)) {
        values += l * DVector::from_vec(mean) * s.count as f64;
    }
    Ok(Expectation {
        working,
        labels: working.labels(jm),
        values: values.iter().copied().collect(),
    })
}

/// Weights on the sequence averages Ȳ_j(q): entry `[c][q][j]` multiplies
/// Ȳ_{j+1}(q+1) in coefficient `c`.
pub fn hat_rows(layout: &DesignLayout, working: ModelKind, phi: f64) -> Result<Vec<Vec<Vec<f64>>>> {
    let jm = layout.n_periods();
    let op = operator(layout, working, &unit_precision(phi, jm))?;
    let p = op.inverse_info.nrows();
    Ok((0..p)
        .map(|c| {
            op.maps
                .iter()
                .zip(layout.sequences())
                .map(|(l, s)| l.row(c).iter().map(|v| v * s.count as f64).collect())
                .collect()
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::design::Sequence;
    use crate::model::sinusoid_curve;

    fn study_layout() -> DesignLayout {
        DesignLayout::standard(32, 9, 100, 1).unwrap()
    }

    fn study_params() -> CorrelationParams {
        CorrelationParams::new(0.141 * 0.141, 1.0, 100, 9).unwrap()
    }

    #[test]
    fn correct_specification_is_unbiased() {
        let layout = DesignLayout::standard(8, 5, 10, 1).unwrap();
        let params = CorrelationParams::new(0.05, 1.0, 10, 5).unwrap();
        let truths = [
            TrueModelParams::constant(5, 0.3, 0.0),
            TrueModelParams::constant(5, 0.3, -0.2),
            TrueModelParams::curve(5, vec![0.1, 0.5, -0.2, 0.7], 0.0),
            TrueModelParams::curve(5, vec![0.1, 0.5, -0.2, 0.7], 0.4),
        ];
        for t in &truths {
            let e = expected_estimate(&layout, t.kind, t, &params).unwrap();
            let start = t.kind.effect_start(5);
            for (s, d) in t.delta.iter().enumerate() {
                assert!((e.values[start + s] - d).abs() < 1e-12);
            }
            if t.kind.has_anticipation() {
                assert!((e.gamma().unwrap() - t.gamma).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn study_ii_hh_expectation() {
        let t = TrueModelParams::constant(9, 0.075, 0.04);
        let e = expected_estimate(&study_layout(), ModelKind::Hh, &t, &study_params()).unwrap();
        assert!((e.get("delta").unwrap() - 0.0520).abs() < 2e-4);
    }

    #[test]
    fn study_iv_hhant_gamma() {
        let mut t = TrueModelParams::curve(9, sinusoid_curve(8, 1.41, 7.0, 0.12), 0.04);
        t.beta = (1..=9).map(|j| j as f64 - 1.0).collect();
        // the fitted weights use the inflated between-cluster SD the misspecified fit reports
        let fitted = CorrelationParams::new(0.3977 * 0.3977, 1.0, 100, 9).unwrap();
        let e = expected_estimate(&study_layout(), ModelKind::HhAnt, &t, &fitted).unwrap();
        assert!((e.gamma().unwrap() - (-0.3902)).abs() < 1e-3, "{}", e.gamma().unwrap());
        let at_truth = expected_estimate(&study_layout(), ModelKind::HhAnt, &t, &study_params()).unwrap();
        assert!(at_truth.gamma().unwrap() < 0.0);
    }

    #[test]
    fn period_shifts_drop_out() {
        let layout = DesignLayout::standard(6, 4, 5, 1).unwrap();
        let params = CorrelationParams::new(0.1, 1.0, 5, 4).unwrap();
        let base = TrueModelParams::curve(4, vec![0.2, 0.4, 0.9], 0.3);
        let mut shifted = base.clone();
        shifted.mu = 3.0;
        shifted.beta = vec![0.0, -1.0, 2.5, 7.0];
        for m in ModelKind::ALL {
            let a = expected_estimate(&layout, m, &base, &params).unwrap();
            let b = expected_estimate(&layout, m, &shifted, &params).unwrap();
            for c in m.effect_start(4)..m.n_columns(4) {
                assert!((a.values[c] - b.values[c]).abs() < 1e-12);
            }
            if let Some(g) = m.gamma_index(4) {
                assert!((a.values[g] - b.values[g]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn gls_on_noiseless_means_recovers_truth() {
        let layout = DesignLayout::custom(
            vec![Sequence { adopt: 2, count: 3 }, Sequence { adopt: 3, count: 1 }, Sequence { adopt: 4, count: 2 }],
            4,
            7,
            1,
        )
        .unwrap();
        let mut truth = TrueModelParams::curve(4, vec![0.5, 1.0, 1.5], 0.25);
        truth.mu = 2.0;
        truth.beta = vec![0.0, 0.3, 0.1, -0.4];
        let mut means = Vec::new();
        for a in layout.adoption_periods() {
            means.extend((1..=4).map(|j| truth.cell_mean(a, j)));
        }
        let m = ClusterPeriodMeans {
            n_periods: 4,
            k: 7,
            adoption: layout.adoption_periods(),
            means,
            within_ss: 0.0,
        };
        let params = CorrelationParams::new(0.2, 1.0, 7, 4).unwrap();
        let fit = gls_fit(&layout, ModelKind::EtiAnt, &params, &m).unwrap();
        assert!((fit.coefficient("mu").unwrap().estimate - 2.0).abs() < 1e-10);
        assert!((fit.coefficient("delta_3").unwrap().estimate - 1.5).abs() < 1e-10);
        assert!((fit.gamma.unwrap().estimate - 0.25).abs() < 1e-10);
        assert!((fit.effect.estimate - 1.0).abs() < 1e-10);
    }

    #[test]
    fn hat_rows_reproduce_expectation() {
        let layout = DesignLayout::standard(10, 6, 1, 1).unwrap();
        let truth = TrueModelParams::curve(6, vec![0.3, -0.1, 0.8, 0.2, 0.6], 0.5);
        let rows = hat_rows(&layout, ModelKind::HhAnt, 0.4).unwrap();
        let e = expected_estimate_phi(&layout, ModelKind::HhAnt, &truth, 0.4).unwrap();
        let means = truth.sequence_means(&layout);
        for (c, row) in rows.iter().enumerate() {
            let v: f64 = row
                .iter()
                .zip(&means)
                .map(|(w, m)| w.iter().zip(m).map(|(a, b)| a * b).sum::<f64>())
                .sum();
            assert!((v - e.values[c]).abs() < 1e-12);
        }
    }
}
