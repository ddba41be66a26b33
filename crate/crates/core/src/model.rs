//! The four treatment-effect structures and their fixed-effect design blocks.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::design::{anticipating, exposure_time, DesignLayout};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ModelKind {
    /// Constant treatment effect.
    #[serde(rename = "HH")]
    Hh,
    /// Constant treatment effect plus an anticipation term.
    #[serde(rename = "HH-ANT")]
    HhAnt,
    /// One treatment effect per exposure time.
    #[serde(rename = "ETI")]
    Eti,
    /// Exposure-time effects plus an anticipation term.
    #[serde(rename = "ETI-ANT")]
    EtiAnt,
}

impl ModelKind {
    pub const ALL: [ModelKind; 4] = [ModelKind::Hh, ModelKind::HhAnt, ModelKind::Eti, ModelKind::EtiAnt];

    pub fn has_anticipation(self) -> bool {
        matches!(self, ModelKind::HhAnt | ModelKind::EtiAnt)
    }

    pub fn exposure_specific(self) -> bool {
        matches!(self, ModelKind::Eti | ModelKind::EtiAnt)
    }

    /// The same effect structure with or without the anticipation term.
    pub fn with_anticipation(self, on: bool) -> ModelKind {
        match (self.exposure_specific(), on) {
            (false, false) => ModelKind::Hh,
            (false, true) => ModelKind::HhAnt,
            (true, false) => ModelKind::Eti,
            (true, true) => ModelKind::EtiAnt,
        }
    }

    /// Number of treatment-effect coefficients.
    pub fn n_effects(self, n_periods: usize) -> usize {
        if self.exposure_specific() {
            n_periods - 1
        } else {
            1
        }
    }

    /// Total fixed-effect columns: intercept, `J-1` period effects, optional
    /// anticipation, then the treatment effects.
    pub fn n_columns(self, n_periods: usize) -> usize {
        n_periods + self.has_anticipation() as usize + self.n_effects(n_periods)
    }

    /// Column index of the anticipation coefficient.
    pub fn gamma_index(self, n_periods: usize) -> Option<usize> {
        self.has_anticipation().then_some(n_periods)
    }

    /// Column index of the first treatment-effect coefficient.
    pub fn effect_start(self, n_periods: usize) -> usize {
        n_periods + self.has_anticipation() as usize
    }

    pub fn labels(self, n_periods: usize) -> Vec<String> {
        let mut out = vec!["mu".to_string()];
        out.extend((2..=n_periods).map(|j| format!("beta_{j}")));
        if self.has_anticipation() {
            out.push("gamma".into());
        }
        if self.exposure_specific() {
            out.extend((1..n_periods).map(|s| format!("delta_{s}")));
        } else {
            out.push("delta".into());
        }
        out
    }

    /// The `J x p` fixed-effect block shared by every cluster adopting in `adopt`.
    pub fn sequence_block(self, adopt: usize, n_periods: usize, ell: usize) -> DMatrix<f64> {
        let p = self.n_columns(n_periods);
        let mut m = DMatrix::zeros(n_periods, p);
        let start = self.effect_start(n_periods);
        for j in 1..=n_periods {
            let r = j - 1;
            m[(r, 0)] = 1.0;
            if j >= 2 {
                m[(r, j - 1)] = 1.0;
            }
            if let Some(g) = self.gamma_index(n_periods) {
                if anticipating(adopt, j, ell) {
                    m[(r, g)] = 1.0;
                }
            }
            if let Some(s) = exposure_time(adopt, j) {
                let col = if self.exposure_specific() { start + s - 1 } else { start };
                m[(r, col)] = 1.0;
            }
        }
        m
    }

    /// Design blocks for every sequence of `layout`, in sequence order.
    pub fn blocks(self, layout: &DesignLayout) -> Vec<DMatrix<f64>> {
        layout
            .sequences()
            .iter()
            .map(|s| self.sequence_block(s.adopt, layout.n_periods(), layout.ell()))
            .collect()
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelKind::Hh => "HH",
            ModelKind::HhAnt => "HH-ANT",
            ModelKind::Eti => "ETI",
            ModelKind::EtiAnt => "ETI-ANT",
        })
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "hh" => Ok(ModelKind::Hh),
            "hh-ant" | "hhant" => Ok(ModelKind::HhAnt),
            "eti" => Ok(ModelKind::Eti),
            "eti-ant" | "etiant" => Ok(ModelKind::EtiAnt),
            other => Err(Error::config(format!(
                "unknown model `{other}` (expected hh, hh-ant, eti or eti-ant)"
            ))),
        }
    }
}

/// A data-generating model: mean structure plus variance components.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrueModelParams {
    pub kind: ModelKind,
    pub mu: f64,
    /// Period effects for periods `1..=J`; the first entry must be zero.
    pub beta: Vec<f64>,
    /// A single constant effect, or one effect per exposure time `1..J-1`.
    pub delta: Vec<f64>,
    pub gamma: f64,
    pub tau_sq: f64,
    pub sigma_sq: f64,
    pub ell: usize,
}

impl TrueModelParams {
    /// Constant-effect truth (HH, or HH-ANT when `gamma != 0`).
    pub fn constant(n_periods: usize, delta: f64, gamma: f64) -> Self {
        Self {
            kind: if gamma != 0.0 { ModelKind::HhAnt } else { ModelKind::Hh },
            mu: 0.0,
            beta: vec![0.0; n_periods],
            delta: vec![delta],
            gamma,
            tau_sq: 0.0,
            sigma_sq: 1.0,
            ell: 1,
        }
    }

    /// Exposure-time truth (ETI, or ETI-ANT when `gamma != 0`).
    pub fn curve(n_periods: usize, delta: Vec<f64>, gamma: f64) -> Self {
        Self {
            kind: if gamma != 0.0 { ModelKind::EtiAnt } else { ModelKind::Eti },
            mu: 0.0,
            beta: vec![0.0; n_periods],
            delta,
            gamma,
            tau_sq: 0.0,
            sigma_sq: 1.0,
            ell: 1,
        }
    }

    pub fn n_periods(&self) -> usize {
        self.beta.len()
    }

    pub fn validate(&self) -> Result<()> {
        let j = self.beta.len();
        if j < 2 {
            return Err(Error::config("truth needs at least two period effects"));
        }
        if self.beta[0] != 0.0 {
            return Err(Error::config("the first period effect must be zero"));
        }
        let want = self.kind.n_effects(j);
        if self.delta.len() != want {
            return Err(Error::config(format!(
                "{} truth needs {want} treatment effects, got {}",
                self.kind,
                self.delta.len()
            )));
        }
        if !self.kind.has_anticipation() && self.gamma != 0.0 {
            return Err(Error::config(format!("{} truth cannot carry an anticipation effect", self.kind)));
        }
        if self.ell == 0 || self.ell >= j {
            return Err(Error::config(format!("anticipation order {} outside 1..{j}", self.ell)));
        }
        if !(self.tau_sq >= 0.0) || !(self.sigma_sq >= 0.0) {
            return Err(Error::config("variance components must be non-negative"));
        }
        let all = [self.mu, self.gamma, self.tau_sq, self.sigma_sq]
            .into_iter()
            .chain(self.beta.iter().copied())
            .chain(self.delta.iter().copied());
        if all.into_iter().any(|v| !v.is_finite()) {
            return Err(Error::config("truth parameters must be finite"));
        }
        Ok(())
    }

    /// Treatment effect at exposure time `s` (1-based).
    pub fn effect_at(&self, s: usize) -> f64 {
        if self.kind.exposure_specific() {
            self.delta[s - 1]
        } else {
            self.delta[0]
        }
    }

    /// The constant effect, or the time-averaged effect over exposure times.
    pub fn average_effect(&self) -> f64 {
        self.delta.iter().sum::<f64>() / self.delta.len() as f64
    }

    /// Expected outcome in `period` for a cluster adopting in `adopt`.
    pub fn cell_mean(&self, adopt: usize, period: usize) -> f64 {
        let mut m = self.mu + self.beta[period - 1];
        if anticipating(adopt, period, self.ell) {
            m += self.gamma;
        }
        if let Some(s) = exposure_time(adopt, period) {
            m += self.effect_at(s);
        }
        m
    }

    /// Expected cluster-period means for each sequence of `layout`.
    pub fn sequence_means(&self, layout: &DesignLayout) -> Vec<Vec<f64>> {
        layout
            .sequences()
            .iter()
            .map(|s| (1..=layout.n_periods()).map(|j| self.cell_mean(s.adopt, j)).collect())
            .collect()
    }
}

/// Sinusoidal exposure-time curve `-amplitude sin{2π(s-1)/period} + shift`
/// for `s = 1..=n_exposures`.
pub fn sinusoid_curve(n_exposures: usize, amplitude: f64, period: f64, shift: f64) -> Vec<f64> {
    (1..=n_exposures)
        .map(|s| -amplitude * (2.0 * std::f64::consts::PI * (s as f64 - 1.0) / period).sin() + shift)
        .collect()
}
