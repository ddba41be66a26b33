//! Closed-form estimator weights on the sequence averages Ȳ_j(q) of a
//! standard design.

use crate::error::{Error, Result};

/// `grid[q - 1][j - 1]` is the weight on Ȳ_j(q).
pub type WeightGrid = Vec<Vec<f64>>;

fn grid(q_max: usize, f: impl Fn(f64, f64) -> f64) -> WeightGrid {
    let j_max = q_max + 1;
    (1..=q_max)
        .map(|q| (1..=j_max).map(|j| f(q as f64, j as f64)).collect())
        .collect()
}

fn ind(c: bool) -> f64 {
    c as u8 as f64
}

/// Weights of the constant-effect estimator without anticipation.
pub fn hh_weights(q_max: usize, phi: f64) -> WeightGrid {
    let q = q_max as f64;
    let t1 = 12.0 * (1.0 + phi * q) / (q * (q + 1.0) * (q - 1.0) * (phi * q + 2.0));
    let shift = |s: f64| phi * q * (2.0 * s - q - 1.0) / (2.0 * (1.0 + phi * q));
    grid(q_max, |s, j| t1 * (q * ind(j > s) - j + 1.0 + shift(s)))
}

/// Weights of the constant-effect and anticipation estimators of the model
/// with a first-order anticipation term.
pub fn hhant_weights(q_max: usize, phi: f64) -> (WeightGrid, WeightGrid) {
    let q = q_max as f64;
    let jm = q + 1.0;
    let t2 = 6.0 / (phi * q * (1.0 - q * q) + (2.0 * q - 1.0) * (q - 1.0) * (phi * q + 1.0));
    let t3 = 1.0 / ((q - 1.0) * (phi * q * q - 2.0 * phi * q + 2.0 * q - 1.0));
    let delta = grid(q_max, |s, j| {
        let inner = q * ind(j == s) + 2.0 * q * ind(j > s) + ind(j == jm) - 2.0 * j + 1.0;
        t2 * (-phi * (q - 2.0 * s + 1.0) + (phi * q + 1.0) / q * inner)
    });
    let gamma = grid(q_max, |s, j| {
        let c = (q + 1.0) * (phi * q + 2.0);
        t3 * (c * ind(j == s) + 6.0 * (phi * q + 1.0) * ind(j > s) + c / q * ind(j == jm)
            - 4.0 * phi * q
            - 6.0 * phi * j
            + 6.0 * phi * s
            + 2.0 * phi
            - 2.0
            - 6.0 * j / q
            + 4.0 / q)
    });
    (delta, gamma)
}

/// Weights of the two exposure-time estimators on a standard three-period design.
pub fn eti_weights_j3(phi: f64) -> (WeightGrid, WeightGrid) {
    let a = 1.0 + 2.0 * phi;
    let first = grid(2, |s, j| {
        -(j - 1.0) * a + phi * ind(j > 1.0) + 2.0 * (1.0 + phi) * ind(j == s + 1.0) + 2.0 * a * ind(j == s + 2.0)
            + phi * (2.0 * s - 3.0)
    });
    let second = grid(2, |s, j| {
        -(j - 1.0) * a - a * ind(j == 3.0) + 2.0 * a * ind(j == s + 1.0) + 4.0 * a * ind(j == s + 2.0)
            + 2.0 * phi * (2.0 * s - 3.0)
    });
    (first, second)
}

/// Checked wrapper that rejects designs other than three periods.
pub fn eti_weights_for(n_periods: usize, phi: f64) -> Result<(WeightGrid, WeightGrid)> {
    if n_periods != 3 {
        return Err(Error::config(format!(
            "closed-form exposure-time weights exist only for J = 3, got J = {n_periods}"
        )));
    }
    Ok(eti_weights_j3(phi))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::design::DesignLayout;
    use crate::estimation::hat_rows;
    use crate::model::ModelKind;

    fn max_diff(a: &WeightGrid, b: &[Vec<f64>]) -> f64 {
        a.iter()
            .zip(b)
            .flat_map(|(r, s)| r.iter().zip(s).map(|(x, y)| (x - y).abs()))
            .fold(0.0, f64::max)
    }

    fn total(w: &WeightGrid) -> f64 {
        w.iter().flatten().sum()
    }

    #[test]
    fn hh_matches_gls() {
        for q in 2..=10 {
            let layout = DesignLayout::standard(q, q + 1, 1, 1).unwrap();
            for t in 0..10 {
                let phi = t as f64 / 10.0;
                let rows = hat_rows(&layout, ModelKind::Hh, phi).unwrap();
                let w = hh_weights(q, phi);
                assert!(max_diff(&w, &rows[q + 1]) < 1e-10, "Q={q} phi={phi}");
                assert!(total(&w).abs() < 1e-12);
                let treated: f64 = w
                    .iter()
                    .enumerate()
                    .map(|(s, r)| r.iter().skip(s + 1).sum::<f64>())
                    .sum();
                assert!((treated - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn hhant_matches_gls() {
        for q in 2..=10 {
            let layout = DesignLayout::standard(q, q + 1, 1, 1).unwrap();
            for t in 0..10 {
                let phi = t as f64 / 10.0;
                let rows = hat_rows(&layout, ModelKind::HhAnt, phi).unwrap();
                let (wd, wg) = hhant_weights(q, phi);
                assert!(max_diff(&wd, &rows[q + 2]) < 1e-10, "delta Q={q} phi={phi}");
                assert!(max_diff(&wg, &rows[q + 1]) < 1e-10, "gamma Q={q} phi={phi}");
                assert!(total(&wd).abs() < 1e-12);
                assert!(total(&wg).abs() < 1e-12);
                // pure anticipation, noiseless: one cell per sequence at period q
                let g: f64 = wg.iter().enumerate().map(|(s, r)| r[s]).sum();
                assert!((g - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn eti_matches_gls() {
        let layout = DesignLayout::standard(2, 3, 1, 1).unwrap();
        for phi in [0.0, 0.3, 0.8] {
            let rows = hat_rows(&layout, ModelKind::Eti, phi).unwrap();
            let (w1, w2) = eti_weights_j3(phi);
            assert!(max_diff(&w1, &rows[3]) < 1e-10, "phi={phi}");
            assert!(max_diff(&w2, &rows[4]) < 1e-10, "phi={phi}");
        }
        let (w1, _) = eti_weights_j3(0.0);
        assert_eq!(w1[0][1], 2.0 - 1.0);
        assert!(eti_weights_for(4, 0.1).is_err());
    }

    #[test]
    fn eti_noiseless_curve() {
        let (w1, w2) = eti_weights_j3(0.35);
        // δ(1) = 1, δ(2) = 2 with no period effects
        let y = [[0.0, 1.0, 2.0], [0.0, 0.0, 1.0]];
        let apply = |w: &WeightGrid| -> f64 {
            w.iter().zip(&y).map(|(r, m)| r.iter().zip(m).map(|(a, b)| a * b).sum::<f64>()).sum()
        };
        assert!((apply(&w1) - 1.0).abs() < 1e-12);
        assert!((apply(&w2) - 2.0).abs() < 1e-12);
    }
}
