//! Argument groups shared across subcommands and their resolution into
//! library types.

use std::path::{Path, PathBuf};

use clap::Args;
use serde::Serialize;
use swcrt::estimation::Dataset;
use swcrt::{CorrelationParams, DesignLayout, Error, ModelKind, Result, TrueModelParams};

use crate::output::{Format, Precision};

pub fn config_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct OutputArgs {
    /// Output file; standard output when omitted. Written atomically.
    #[arg(long, short = 'o')]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "csv")]
    pub format: Format,
    /// `6` significant digits or `full` round-trip precision.
    #[arg(long, value_enum, default_value = "6")]
    pub precision: Precision,
}

#[derive(Debug, Clone, Default, Args, Serialize)]
pub struct LayoutArgs {
    /// Standard layout `I,J,K[,ell]`.
    #[arg(long, value_name = "I,J,K[,ell]")]
    pub standard: Option<String>,
    /// Layout JSON file. Wins over inline flags; a disagreeing inline flag is an error.
    #[arg(long, value_name = "FILE")]
    pub layout: Option<PathBuf>,
    /// Number of clusters.
    #[arg(long = "I", visible_alias = "clusters")]
    pub clusters: Option<usize>,
    /// Number of periods.
    #[arg(long = "J", visible_alias = "periods")]
    pub periods: Option<usize>,
    /// Individuals per cluster-period.
    #[arg(long = "K", visible_alias = "cluster-size")]
    pub size: Option<usize>,
    /// Anticipation window length (periods before adoption).
    #[arg(long)]
    pub ell: Option<usize>,
    /// Treatment indicators, cluster-major, I*J values of 0/1 separated by commas.
    #[arg(long, value_name = "Z11,Z12,...")]
    pub design: Option<String>,
}

impl LayoutArgs {
    pub fn is_empty(&self) -> bool {
        self.standard.is_none()
            && self.layout.is_none()
            && self.clusters.is_none()
            && self.periods.is_none()
            && self.size.is_none()
            && self.ell.is_none()
            && self.design.is_none()
    }

    pub fn resolve(&self) -> Result<DesignLayout> {
        if let Some(path) = &self.layout {
            let text = read_text(path)?;
            let file = DesignLayout::from_json(&text)?;
            self.check_against(&file, "--layout")?;
            return Ok(file);
        }
        if let Some(s) = &self.standard {
            let v = parse_usizes(s, "--standard")?;
            if !(3..=4).contains(&v.len()) {
                return Err(config_err("--standard takes I,J,K or I,J,K,ell"));
            }
            let layout = DesignLayout::standard(v[0], v[1], v[2], v.get(3).copied().unwrap_or(1))?;
            let rest = Self {
                standard: None,
                ..self.clone()
            };
            rest.check_against(&layout, "--standard")?;
            return Ok(layout);
        }
        let j = self.periods.ok_or_else(|| config_err("layout needs --J (or --standard / --layout)"))?;
        let k = self.size.ok_or_else(|| config_err("layout needs --K (or --standard / --layout)"))?;
        let ell = self.ell.unwrap_or(1);
        if let Some(d) = &self.design {
            let z = parse_bits(d)?;
            let layout = DesignLayout::from_treatment_vector(&z, j, k, ell)?;
            if let Some(i) = self.clusters {
                if i != layout.n_clusters() {
                    return Err(config_err(format!(
                        "--I {i} disagrees with --design, which has {} clusters",
                        layout.n_clusters()
                    )));
                }
            }
            return Ok(layout);
        }
        let i = self.clusters.ok_or_else(|| config_err("layout needs --I (or --design / --standard / --layout)"))?;
        DesignLayout::standard(i, j, k, ell)
    }

    fn check_against(&self, layout: &DesignLayout, source: &str) -> Result<()> {
        let mismatch = |flag: &str, given: String, have: String| {
            Err(config_err(format!("{flag} {given} conflicts with {source}, which gives {have}")))
        };
        if let Some(s) = &self.standard {
            let v = parse_usizes(s, "--standard")?;
            let ell = v.get(3).copied().unwrap_or(1);
            let other = DesignLayout::standard(*v.first().unwrap_or(&0), *v.get(1).unwrap_or(&0), *v.get(2).unwrap_or(&0), ell)?;
            if &other != layout {
                return mismatch("--standard", s.clone(), "a different layout".into());
            }
        }
        if let Some(i) = self.clusters {
            if i != layout.n_clusters() {
                return mismatch("--I", i.to_string(), layout.n_clusters().to_string());
            }
        }
        if let Some(j) = self.periods {
            if j != layout.n_periods() {
                return mismatch("--J", j.to_string(), layout.n_periods().to_string());
            }
        }
        if let Some(k) = self.size {
            if k != layout.cluster_period_size() {
                return mismatch("--K", k.to_string(), layout.cluster_period_size().to_string());
            }
        }
        if let Some(ell) = self.ell {
            if ell != layout.ell() {
                return mismatch("--ell", ell.to_string(), layout.ell().to_string());
            }
        }
        if let Some(d) = &self.design {
            let z = parse_bits(d)?;
            let other = DesignLayout::from_treatment_vector(&z, layout.n_periods(), layout.cluster_period_size(), layout.ell())?;
            if other.adoption_periods() != layout.adoption_periods() {
                return mismatch("--design", "pattern".into(), "a different treatment pattern".into());
            }
        }
        Ok(())
    }

    /// Layout for a dataset: the flags when any are given, otherwise the
    /// treatment pattern found in the data with window `ell` (default 1).
    pub fn resolve_for(&self, data: &Dataset) -> Result<DesignLayout> {
        let only_ell = Self {
            ell: None,
            ..self.clone()
        };
        if !only_ell.is_empty() {
            return self.resolve();
        }
        let (i_max, j_max) = (data.n_clusters(), data.n_periods());
        let z: Vec<u8> = (0..i_max)
            .flat_map(|i| (0..j_max).map(move |j| (i, j)))
            .map(|(i, j)| data.treatment(i, j))
            .collect();
        DesignLayout::from_treatment_vector(&z, j_max, data.cluster_period_size(), self.ell.unwrap_or(1))
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct CorrelationArgs {
    /// Intracluster correlation; a comma list or `start:stop:step` range.
    #[arg(long)]
    pub rho: Option<String>,
    /// Between-cluster variance, instead of --rho.
    #[arg(long = "tau-sq", visible_alias = "tau_sq")]
    pub tau_sq: Option<f64>,
    /// Residual (individual-level) variance.
    #[arg(long = "sigma-sq", visible_alias = "sigma_sq", default_value_t = 1.0)]
    pub sigma_sq: f64,
}

impl CorrelationArgs {
    pub fn resolve(&self, layout: &DesignLayout) -> Result<Vec<CorrelationParams>> {
        let (k, j) = (layout.cluster_period_size(), layout.n_periods());
        match (&self.rho, self.tau_sq) {
            (Some(_), Some(_)) => Err(config_err("give either --rho or --tau-sq, not both")),
            (None, None) => Err(config_err("correlation needs --rho or --tau-sq")),
            (None, Some(t)) => Ok(vec![CorrelationParams::new(t, self.sigma_sq, k, j)?]),
            (Some(r), None) => parse_floats(r, "--rho")?
                .into_iter()
                .map(|rho| CorrelationParams::from_icc(rho, self.sigma_sq, k, j))
                .collect(),
        }
    }

    pub fn resolve_one(&self, layout: &DesignLayout) -> Result<CorrelationParams> {
        let mut all = self.resolve(layout)?;
        if all.len() != 1 {
            return Err(config_err("this command takes a single --rho"));
        }
        Ok(all.remove(0))
    }
}

/// Correlation of cluster-period means, directly or from an ICC and K.
#[derive(Debug, Clone, Args, Serialize)]
pub struct PhiArgs {
    /// Correlation of cluster-period means; a comma list or range.
    #[arg(long)]
    pub phi: Option<String>,
    /// Intracluster correlation, converted with --K when --phi is absent.
    #[arg(long)]
    pub rho: Option<String>,
}

impl PhiArgs {
    /// `k` and `j` are used only to convert an ICC.
    pub fn resolve(&self, k: Option<usize>, j: usize) -> Result<Vec<f64>> {
        match (&self.phi, &self.rho) {
            (Some(_), Some(_)) => Err(config_err("give either --phi or --rho, not both")),
            (Some(p), None) => parse_floats(p, "--phi"),
            (None, Some(r)) => {
                let k = k.ok_or_else(|| config_err("--rho needs --K to give the correlation of means"))?;
                parse_floats(r, "--rho")?
                    .into_iter()
                    .map(|rho| Ok(CorrelationParams::from_icc(rho, 1.0, k, j)?.phi))
                    .collect()
            }
            (None, None) => Err(config_err("needs --phi or --rho")),
        }
    }
}

/// A data-generating model given inline or as a JSON file.
#[derive(Debug, Clone, Args, Serialize)]
pub struct TruthArgs {
    /// Truth JSON file (fields kind, mu, beta, delta, gamma, tau_sq, sigma_sq, ell).
    #[arg(long, value_name = "FILE")]
    pub truth: Option<PathBuf>,
    /// True effect: one value for a constant effect or J-1 values for exposure-time effects.
    #[arg(long = "delta", visible_alias = "trt-true", allow_hyphen_values = true)]
    pub delta: Option<String>,
    /// True anticipation effect.
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    pub gamma: f64,
    /// True anticipation window; defaults to the layout's.
    #[arg(long = "truth-ell")]
    pub truth_ell: Option<usize>,
}

impl TruthArgs {
    pub fn resolve(&self, layout: &DesignLayout) -> Result<TrueModelParams> {
        let jm = layout.n_periods();
        if let Some(path) = &self.truth {
            if self.delta.is_some() || self.truth_ell.is_some() || self.gamma != 0.0 {
                return Err(config_err("--truth conflicts with inline --delta/--gamma/--truth-ell"));
            }
            let t: TrueModelParams = serde_json::from_str(&read_text(path)?)?;
            t.validate()?;
            return Ok(t);
        }
        let delta = parse_floats(
            self.delta.as_deref().ok_or_else(|| config_err("truth needs --delta or --truth"))?,
            "--delta",
        )?;
        let mut t = if delta.len() == 1 {
            TrueModelParams::constant(jm, delta[0], self.gamma)
        } else {
            TrueModelParams::curve(jm, delta, self.gamma)
        };
        t.ell = self.truth_ell.unwrap_or(layout.ell());
        t.validate()?;
        Ok(t)
    }
}

pub fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(Error::Io)
}

/// Comma list, or `start:stop:step` inclusive of both ends.
pub fn parse_floats(s: &str, flag: &str) -> Result<Vec<f64>> {
    let bad = |p: &str| config_err(format!("{flag}: `{p}` is not a number"));
    if s.contains(':') {
        let parts: Vec<f64> = s
            .split(':')
            .map(|p| p.trim().parse::<f64>().map_err(|_| bad(p)))
            .collect::<Result<_>>()?;
        let [start, stop, step] = parts[..] else {
            return Err(config_err(format!("{flag}: ranges are start:stop:step")));
        };
        if !(step > 0.0) || stop < start {
            return Err(config_err(format!("{flag}: need start <= stop and step > 0")));
        }
        let n = ((stop - start) / step + 1e-9).floor() as usize;
        return Ok((0..=n).map(|i| start + i as f64 * step).collect());
    }
    s.split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|_| bad(p)))
        .collect()
}

pub fn parse_usizes(s: &str, flag: &str) -> Result<Vec<usize>> {
    s.split(',')
        .map(|p| {
            p.trim()
                .parse::<usize>()
                .map_err(|_| config_err(format!("{flag}: `{p}` is not a non-negative integer")))
        })
        .collect()
}

fn parse_bits(s: &str) -> Result<Vec<u8>> {
    s.split(',')
        .map(|p| match p.trim() {
            "0" => Ok(0),
            "1" => Ok(1),
            other => Err(config_err(format!("--design: `{other}` is not 0 or 1"))),
        })
        .collect()
}

pub fn parse_models(s: &str) -> Result<Vec<ModelKind>> {
    s.split(',').map(|m| m.trim().parse()).collect()
}
