//! One struct per subcommand; `run` resolves the arguments, calls the
//! library and writes the result.

use std::fs::File;
use std::path::PathBuf;

use clap::{Args, ValueEnum};
use serde::Serialize;
use serde_json::{json, Value};
use swcrt::bias::{self, PredictMode};
use swcrt::estimation::{self, Dataset, FitResult};
use swcrt::model::sinusoid_curve;
use swcrt::montecarlo::{self, Scenario};
use swcrt::power::{self, GridScan, PowerComparison, SearchVariable};
use swcrt::{DesignConstants, IndicatorSet, ModelKind, Result};

use crate::args::*;
use crate::output::{config_line, emit, format_float, render, write_atomic, Cell, Output, Table};

fn finish<T: Serialize>(name: &str, args: &T, resolved: Value, out: &OutputArgs, result: Output) -> Result<()> {
    let config = json!({ "command": name, "args": args, "resolved": resolved });
    let bytes = render(&result, &config, out.format, out.precision)?;
    emit(out.out.as_deref(), &bytes)
}

fn models_or_all(s: &Option<String>) -> Result<Vec<ModelKind>> {
    match s {
        Some(s) => parse_models(s),
        None => Ok(ModelKind::ALL.to_vec()),
    }
}

fn read_dataset(path: &PathBuf) -> Result<Dataset> {
    Dataset::read_csv(File::open(path)?)
}

#[derive(Debug, Args, Serialize)]
pub struct DesignCmd {
    #[command(flatten)]
    #[serde(flatten)]
    layout: LayoutArgs,
    #[command(flatten)]
    #[serde(flatten)]
    output: OutputArgs,
}

impl DesignCmd {
    pub fn run(&self) -> Result<()> {
        let layout = self.layout.resolve()?;
        let ind = IndicatorSet::new(&layout);
        let mut t = Table::new(&["cluster", "period", "Z", "A", "s"]);
        for i in 0..ind.n_clusters() {
            for j in 0..ind.n_periods() {
                t.push(vec![
                    (i + 1).into(),
                    (j + 1).into(),
                    (ind.treatment[i][j] as usize).into(),
                    (ind.anticipation[i][j] as usize).into(),
                    ind.exposure[i][j].into(),
                ]);
            }
        }
        finish("design", self, json!({ "layout": layout }), &self.output, Output::table(t))
    }
}

#[derive(Debug, Args, Serialize)]
pub struct ConstantsCmd {
    #[command(flatten)]
    #[serde(flatten)]
    layout: LayoutArgs,
    #[command(flatten)]
    #[serde(flatten)]
    output: OutputArgs,
}

impl ConstantsCmd {
    pub fn run(&self) -> Result<()> {
        let layout = self.layout.resolve()?;
        let c = DesignConstants::new(&layout);
        let mut t = Table::new(&["name", "row", "col", "value"]);
        let Value::Object(fields) = serde_json::to_value(&c)? else {
            unreachable!("constants serialize to an object")
        };
        for (name, v) in fields {
            match v {
                Value::Array(rows) => {
                    for (r, x) in rows.into_iter().enumerate() {
                        match x {
                            Value::Array(cols) => {
                                for (col, y) in cols.into_iter().enumerate() {
                                    t.push(vec![name.as_str().into(), (r + 1).into(), (col + 1).into(), y.to_string().into()]);
                                }
                            }
                            y => t.push(vec![name.as_str().into(), (r + 1).into(), Cell::Empty, y.to_string().into()]),
                        }
                    }
                }
                y => t.push(vec![name.as_str().into(), Cell::Empty, Cell::Empty, y.to_string().into()]),
            }
        }
        finish("constants", self, json!({ "layout": layout }), &self.output, Output::with_json(t, &c)?)
    }
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum BiasScenario {
    /// Weight ω on the anticipation effect when it is ignored (order set by --ell).
    HhUnderHhant,
    /// Weights π, ω of the constant-effect model under exposure-time effects with anticipation.
    HhUnderEtiant,
    /// Weights π, ψ of the anticipation model under exposure-time effects.
    HhantUnderEti,
    /// Expected exposure-time estimates with ignored anticipation, three periods.
    EtiJ3,
    /// Every weight over the --Q and --phi lists.
    Grid,
}

#[derive(Debug, Args, Serialize)]
pub struct BiasCmd {
    #[arg(long, value_enum)]
    scenario: BiasScenario,
    /// Number of sequences (J-1); a comma list.
    #[arg(long = "Q")]
    q: Option<String>,
    #[command(flatten)]
    #[serde(flatten)]
    phi: PhiArgs,
    /// Individuals per cluster-period, to convert --rho.
    #[arg(long = "K")]
    k: Option<usize>,
    /// Anticipation order.
    #[arg(long, default_value_t = 1)]
    ell: usize,
    /// True effects at exposure times 1 and 2 (eti-j3); one value means a constant effect.
    #[arg(long, allow_hyphen_values = true)]
    delta: Option<String>,
    /// True anticipation effect (eti-j3).
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    gamma: f64,
    #[command(flatten)]
    #[serde(flatten)]
    output: OutputArgs,
}

impl BiasCmd {
    fn qs(&self) -> Result<Vec<usize>> {
        parse_usizes(self.q.as_deref().ok_or_else(|| config_err("needs --Q"))?, "--Q")
    }

    pub fn run(&self) -> Result<()> {
        let phis = self.phi.resolve(self.k, 2)?;
        let resolved = json!({ "phi": phis });
        let result = match self.scenario {
            BiasScenario::HhUnderHhant => {
                let mut t = Table::new(&["Q", "phi", "ell", "omega"]);
                for q in self.qs()? {
                    for &phi in &phis {
                        let w = bias::omega_hh_hhant_order(q, phi, self.ell)?;
                        t.push(vec![q.into(), phi.into(), self.ell.into(), w.into()]);
                    }
                }
                Output::table(t)
            }
            BiasScenario::HhUnderEtiant | BiasScenario::HhantUnderEti => {
                let etiant = matches!(self.scenario, BiasScenario::HhUnderEtiant);
                let second = if etiant { "omega" } else { "psi" };
                let mut t = Table::new(&["Q", "phi", "j", "pi", second]);
                for q in self.qs()? {
                    for &phi in &phis {
                        let (pi, other) = if etiant {
                            bias::weights_hh_under_etiant(q, phi)?
                        } else {
                            bias::weights_hhant_under_eti(q, phi)?
                        };
                        for (j, (p, o)) in pi.iter().zip(&other).enumerate() {
                            t.push(vec![q.into(), phi.into(), (j + 1).into(), (*p).into(), (*o).into()]);
                        }
                    }
                }
                Output::table(t)
            }
            BiasScenario::EtiJ3 => {
                let d = parse_floats(self.delta.as_deref().ok_or_else(|| config_err("eti-j3 needs --delta"))?, "--delta")?;
                let delta = match d[..] {
                    [c] => [c, c],
                    [a, b] => [a, b],
                    _ => return Err(config_err("eti-j3 takes one or two --delta values")),
                };
                let mut t = Table::new(&["phi", "s", "delta", "gamma", "expected"]);
                for &phi in &phis {
                    let e = bias::eti_bias_j3(phi, delta, self.gamma)?;
                    for s in 0..2 {
                        t.push(vec![phi.into(), (s + 1).into(), delta[s].into(), self.gamma.into(), e[s].into()]);
                    }
                }
                Output::table(t)
            }
            BiasScenario::Grid => {
                let rows = bias::weight_grid(&self.qs()?, &phis)?;
                let mut t = Table::new(&["Q", "phi", "j", "weight_name", "value"]);
                for r in &rows {
                    t.push(vec![r.q.into(), r.phi.into(), r.j.into(), r.weight_name.into(), r.value.into()]);
                }
                Output::with_json(t, &rows)?
            }
        };
        finish("bias", self, resolved, &self.output, result)
    }
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ExpectMode {
    /// Closed form when one applies, exact numerical expectation otherwise.
    Auto,
    /// Closed forms only; error when none applies.
    Analytic,
}

#[derive(Debug, Args, Serialize)]
pub struct ExpectCmd {
    #[command(flatten)]
    #[serde(flatten)]
    layout: LayoutArgs,
    #[command(flatten)]
    #[serde(flatten)]
    truth: TruthArgs,
    /// Working models, comma separated; all four when omitted.
    #[arg(long, visible_alias = "model")]
    working: Option<String>,
    #[command(flatten)]
    #[serde(flatten)]
    phi: PhiArgs,
    #[arg(long, value_enum, default_value = "auto")]
    mode: ExpectMode,
    #[command(flatten)]
    #[serde(flatten)]
    output: OutputArgs,
}

impl ExpectCmd {
    pub fn run(&self) -> Result<()> {
        let layout = self.layout.resolve()?;
        let truth = self.truth.resolve(&layout)?;
        let phis = self.phi.resolve(Some(layout.cluster_period_size()), layout.n_periods())?;
        let mode = match self.mode {
            ExpectMode::Auto => PredictMode::AllowOracle,
            ExpectMode::Analytic => PredictMode::AnalyticOnly,
        };
        let mut t = Table::new(&["working", "truth", "phi", "provenance", "coefficient", "expected"]);
        let mut preds = Vec::new();
        for &phi in &phis {
            for m in models_or_all(&self.working)? {
                let p = bias::predict_expectation(&layout, m, &truth, phi, mode)?;
                let prov = serde_json::to_value(p.provenance)?.as_str().unwrap_or_default().to_string();
                let mut row = |label: &str, v: f64| {
                    t.push(vec![
                        m.to_string().into(),
                        truth.kind.to_string().into(),
                        phi.into(),
                        prov.as_str().into(),
                        label.into(),
                        v.into(),
                    ])
                };
                for (l, v) in p.labels.iter().zip(&p.values) {
                    row(l, *v);
                }
                row("effect", p.effect);
                preds.push(json!({ "phi": phi, "prediction": p }));
            }
        }
        let resolved = json!({ "layout": layout, "truth": truth, "phi": phis });
        finish("expect", self, resolved, &self.output, Output::with_json(t, &preds)?)
    }
}

#[derive(Debug, Args, Serialize)]
pub struct VarianceCmd {
    #[command(flatten)]
    #[serde(flatten)]
    layout: LayoutArgs,
    /// Models, comma separated; all four when omitted.
    #[arg(long)]
    model: Option<String>,
    #[command(flatten)]
    #[serde(flatten)]
    corr: CorrelationArgs,
    #[command(flatten)]
    #[serde(flatten)]
    output: OutputArgs,
}

impl VarianceCmd {
    pub fn run(&self) -> Result<()> {
        let layout = self.layout.resolve()?;
        let params = self.corr.resolve(&layout)?;
        let mut t = Table::new(&["model", "rho", "tau_sq", "sigma_sq", "phi", "variance", "se", "gamma_variance"]);
        let mut results = Vec::new();
        for p in &params {
            for m in models_or_all(&self.model)? {
                let v = power::variance(m, &layout, p)?;
                t.push(vec![
                    m.to_string().into(),
                    p.rho.into(),
                    p.tau_sq.into(),
                    p.sigma_sq.into(),
                    p.phi.into(),
                    v.variance.into(),
                    v.se.into(),
                    v.gamma_variance.into(),
                ]);
                results.push(v);
            }
        }
        let resolved = json!({ "layout": layout, "correlation": params });
        finish("variance", self, resolved, &self.output, Output::with_json(t, &results)?)
    }
}

#[derive(Debug, Args, Serialize)]
pub struct PowerCmd {
    #[command(flatten)]
    #[serde(flatten)]
    layout: LayoutArgs,
    /// Models, comma separated; all four when omitted.
    #[arg(long)]
    model: Option<String>,
    /// Treatment effect to detect.
    #[arg(long, visible_alias = "trt", allow_hyphen_values = true)]
    effect: f64,
    #[command(flatten)]
    #[serde(flatten)]
    corr: CorrelationArgs,
    /// Two-sided significance level.
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[command(flatten)]
    #[serde(flatten)]
    output: OutputArgs,
}

impl PowerCmd {
    pub fn run(&self) -> Result<()> {
        let layout = self.layout.resolve()?;
        let params = self.corr.resolve(&layout)?;
        let mut t = Table::new(&["model", "rho", "effect", "variance", "se", "power"]);
        for p in &params {
            for m in models_or_all(&self.model)? {
                let v = power::variance(m, &layout, p)?;
                let pw = power::power(self.effect, v.variance, self.alpha)?;
                t.push(vec![
                    m.to_string().into(),
                    p.rho.into(),
                    self.effect.into(),
                    v.variance.into(),
                    v.se.into(),
                    pw.into(),
                ]);
            }
        }
        let resolved = json!({ "layout": layout, "correlation": params });
        finish("power", self, resolved, &self.output, Output::table(t))
    }
}

#[derive(Debug, Args, Serialize)]
pub struct MdeCmd {
    #[command(flatten)]
    #[serde(flatten)]
    layout: LayoutArgs,
    /// Models, comma separated; all four when omitted.
    #[arg(long)]
    model: Option<String>,
    #[command(flatten)]
    #[serde(flatten)]
    corr: CorrelationArgs,
    /// Target power.
    #[arg(long = "power", default_value_t = 0.8)]
    target_power: f64,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[command(flatten)]
    #[serde(flatten)]
    output: OutputArgs,
}

impl MdeCmd {
    pub fn run(&self) -> Result<()> {
        let layout = self.layout.resolve()?;
        let params = self.corr.resolve(&layout)?;
        let mut t = Table::new(&["model", "rho", "se", "power", "detectable_effect"]);
        for p in &params {
            for m in models_or_all(&self.model)? {
                let v = power::variance(m, &layout, p)?;
                let d = power::detectable_effect_for_se(v.se, self.target_power, self.alpha)?;
                t.push(vec![m.to_string().into(), p.rho.into(), v.se.into(), self.target_power.into(), d.into()]);
            }
        }
        let resolved = json!({ "layout": layout, "correlation": params });
        finish("mde", self, resolved, &self.output, Output::table(t))
    }
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
pub enum Vary {
    /// Number of clusters, in multiples of the number of sequences.
    #[value(name = "I")]
    I,
    /// Individuals per cluster-period.
    #[value(name = "K")]
    K,
}

#[derive(Debug, Args, Serialize)]
pub struct SizeCmd {
    /// Layout template; the searched quantity replaces its I or K.
    #[command(flatten)]
    #[serde(flatten)]
    layout: LayoutArgs,
    #[arg(long)]
    model: ModelKindArg,
    #[arg(long, visible_alias = "trt", allow_hyphen_values = true)]
    effect: f64,
    #[command(flatten)]
    #[serde(flatten)]
    corr: CorrelationArgs,
    #[arg(long = "power", default_value_t = 0.8)]
    target_power: f64,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[arg(long, value_enum, default_value = "I")]
    vary: Vary,
    /// Largest value searched.
    #[arg(long, default_value_t = 100_000)]
    cap: usize,
    #[command(flatten)]
    #[serde(flatten)]
    output: OutputArgs,
}

/// A model name parsed by the library.
#[derive(Debug, Clone, Copy, Serialize)]
#[serde(transparent)]
pub struct ModelKindArg(ModelKind);

impl std::str::FromStr for ModelKindArg {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        s.parse::<ModelKind>().map(ModelKindArg).map_err(|e| e.to_string())
    }
}

impl SizeCmd {
    pub fn run(&self) -> Result<()> {
        let layout = self.layout.resolve()?;
        let p = self.corr.resolve_one(&layout)?;
        let vary = match self.vary {
            Vary::I => SearchVariable::Clusters,
            Vary::K => SearchVariable::ClusterPeriodSize,
        };
        let r = power::sample_size_search(self.model.0, &layout, &p, self.effect, self.target_power, self.alpha, vary, self.cap)?;
        let mut t = Table::new(&["model", "vary", "value", "power", "variance"]);
        let vary_name = serde_json::to_value(r.vary)?.as_str().unwrap_or_default().to_string();
        t.push(vec![self.model.0.to_string().into(), vary_name.into(), r.value.into(), r.power.into(), r.variance.into()]);
        let resolved = json!({ "layout": layout, "correlation": p });
        finish("size", self, resolved, &self.output, Output::with_json(t, &r)?)
    }
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scan {
    /// --fixed is the effect; --param1 lists anticipation-to-effect ratios.
    FixedEffect,
    /// --fixed is the ratio; --param1 lists effects.
    FixedRatio,
}

#[derive(Debug, Args, Serialize)]
pub struct GridCmd {
    #[command(flatten)]
    #[serde(flatten)]
    layout: LayoutArgs,
    #[arg(long = "model-a")]
    model_a: ModelKindArg,
    #[arg(long = "model-b")]
    model_b: ModelKindArg,
    #[arg(long, value_enum, default_value = "fixed-effect")]
    scan: Scan,
    #[arg(long, allow_hyphen_values = true)]
    fixed: f64,
    /// First axis: comma list or `start:stop:step`.
    #[arg(long, allow_hyphen_values = true)]
    param1: String,
    /// Second axis (ICC): comma list or `start:stop:step`.
    #[arg(long)]
    rho: String,
    #[arg(long = "sigma-sq", visible_alias = "sigma_sq", default_value_t = 1.0)]
    sigma_sq: f64,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    /// Exposure-time effect shape, J-1 values; shifted so its mean is the effect.
    #[arg(long, allow_hyphen_values = true)]
    curve: Option<String>,
    /// Sinusoidal shape `amplitude,period` instead of --curve.
    #[arg(long, allow_hyphen_values = true)]
    sinusoid: Option<String>,
    /// Report the ratio at which the two powers cross, searched over the --param1 span.
    #[arg(long)]
    crossing: bool,
    #[command(flatten)]
    #[serde(flatten)]
    output: OutputArgs,
}

impl GridCmd {
    pub fn run(&self) -> Result<()> {
        let layout = self.layout.resolve()?;
        let shape = match (&self.curve, &self.sinusoid) {
            (Some(_), Some(_)) => return Err(config_err("give --curve or --sinusoid, not both")),
            (Some(c), None) => Some(parse_floats(c, "--curve")?),
            (None, Some(s)) => match parse_floats(s, "--sinusoid")?[..] {
                [amp, period] => Some(sinusoid_curve(layout.n_periods() - 1, amp, period, 0.0)),
                _ => return Err(config_err("--sinusoid takes amplitude,period")),
            },
            (None, None) => None,
        };
        let cmp = PowerComparison {
            layout: layout.clone(),
            model_a: self.model_a.0,
            model_b: self.model_b.0,
            shape: shape.clone(),
            sigma_sq: self.sigma_sq,
            alpha: self.alpha,
        };
        let param1 = parse_floats(&self.param1, "--param1")?;
        let rhos = parse_floats(&self.rho, "--rho")?;
        let resolved = json!({ "layout": layout, "shape": shape, "param1": param1, "rho": rhos });
        let result = if self.crossing {
            let Scan::FixedEffect = self.scan else {
                return Err(config_err("--crossing searches over the ratio; use --scan fixed-effect"));
            };
            let lo = param1.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = param1.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut t = Table::new(&["rho", "effect", "crossing"]);
            for &rho in &rhos {
                let c = cmp.crossing(self.fixed, rho, lo, hi)?;
                t.push(vec![rho.into(), self.fixed.into(), c.into()]);
            }
            Output::table(t)
        } else {
            let scan = match self.scan {
                Scan::FixedEffect => GridScan::FixedEffect(self.fixed),
                Scan::FixedRatio => GridScan::FixedRatio(self.fixed),
            };
            let rows = power::power_ratio_grid(&cmp, scan, &param1, &rhos)?;
            let mut t = Table::new(&["param1", "param2", "power_A", "power_B", "ratio", "valid"]);
            for r in &rows {
                t.push(vec![r.param1.into(), r.param2.into(), r.power_a.into(), r.power_b.into(), r.ratio.into(), r.valid.into()]);
            }
            Output::with_json(t, &rows)?
        };
        finish("grid", self, resolved, &self.output, result)
    }
}

#[derive(Debug, Args, Serialize)]
pub struct SimulateCmd {
    /// Built-in study setting: I-null, I-alt, II, III or IV.
    #[arg(long)]
    preset: Option<String>,
    /// Scenario JSON file (name, layout, truth, working).
    #[arg(long, value_name = "FILE")]
    scenario: Option<PathBuf>,
    #[command(flatten)]
    #[serde(flatten)]
    layout: LayoutArgs,
    #[command(flatten)]
    #[serde(flatten)]
    truth: TruthArgs,
    /// Intercept of an inline truth.
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    mu: f64,
    /// Between-cluster variance of an inline truth.
    #[arg(long = "tau-sq", visible_alias = "tau_sq", default_value_t = 0.0)]
    tau_sq: f64,
    /// Residual variance of an inline truth.
    #[arg(long = "sigma-sq", visible_alias = "sigma_sq", default_value_t = 1.0)]
    sigma_sq: f64,
    /// Working models, comma separated; overrides the scenario's list.
    #[arg(long, visible_alias = "model")]
    models: Option<String>,
    /// Number of replications; 0 with --emit-dataset writes only the dataset.
    #[arg(long, default_value_t = 2000)]
    reps: usize,
    /// Random seed (required).
    #[arg(long)]
    seed: u64,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    /// Also write the first replication's data (long CSV) here.
    #[arg(long, value_name = "FILE")]
    emit_dataset: Option<PathBuf>,
    #[command(flatten)]
    #[serde(flatten)]
    output: OutputArgs,
}

impl SimulateCmd {
    fn scenario(&self) -> Result<Scenario> {
        let inline = !self.layout.is_empty() || self.truth.truth.is_some() || self.truth.delta.is_some();
        let mut s = match (&self.preset, &self.scenario, inline) {
            (Some(p), None, false) => montecarlo::preset(p)?,
            (None, Some(f), false) => serde_json::from_str(&read_text(f)?)?,
            (None, None, true) => {
                let layout = self.layout.resolve()?;
                let mut truth = self.truth.resolve(&layout)?;
                if self.truth.truth.is_none() {
                    truth.mu = self.mu;
                    truth.tau_sq = self.tau_sq;
                    truth.sigma_sq = self.sigma_sq;
                }
                Scenario {
                    name: "inline".into(),
                    layout,
                    truth,
                    working: ModelKind::ALL.to_vec(),
                }
            }
            (None, None, false) => return Err(config_err("simulate needs --preset, --scenario or an inline layout and truth")),
            _ => return Err(config_err("give exactly one of --preset, --scenario or an inline layout and truth")),
        };
        if let Some(m) = &self.models {
            s.working = parse_models(m)?;
        }
        Ok(s)
    }

    pub fn run(&self) -> Result<()> {
        let s = self.scenario()?;
        if let Some(path) = &self.emit_dataset {
            let d = montecarlo::simulate_dataset(&s.layout, &s.truth, self.seed)?;
            let mut buf = Vec::new();
            d.write_csv(&mut buf)?;
            write_atomic(path, &buf)?;
        }
        if self.reps == 0 {
            if self.emit_dataset.is_none() {
                return Err(config_err("--reps 0 only makes sense with --emit-dataset"));
            }
            return Ok(());
        }
        let report = s.run(self.reps, self.seed, self.alpha)?;
        let config = json!({ "command": "simulate", "args": self, "resolved": { "scenario": s } });
        let bytes = match self.output.format {
            crate::output::Format::Csv => {
                let mut buf = config_line(&config)?.into_bytes();
                let precision = self.output.precision;
                report.write_csv_with(&mut buf, |x| format_float(x, precision))?;
                buf
            }
            crate::output::Format::Json => {
                let out = Output::with_json(Table::default(), &report)?;
                render(&out, &config, self.output.format, self.output.precision)?
            }
        };
        emit(self.output.out.as_deref(), &bytes)
    }
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Reml,
    Ml,
    /// Variance components given by --rho or --tau-sq.
    Known,
}

#[derive(Debug, Args, Serialize)]
pub struct FitCmd {
    /// Long-format CSV with columns cluster,period,individual,Z,A,y.
    #[arg(long, value_name = "FILE")]
    data: PathBuf,
    /// Optional layout; by default read from the data's treatment pattern.
    #[command(flatten)]
    #[serde(flatten)]
    layout: LayoutArgs,
    /// Models, comma separated; all four when omitted.
    #[arg(long)]
    model: Option<String>,
    #[arg(long, value_enum, default_value = "reml")]
    method: Method,
    #[command(flatten)]
    #[serde(flatten)]
    corr: FitCorrelation,
    #[command(flatten)]
    #[serde(flatten)]
    output: OutputArgs,
}

/// Correlation arguments that only the known-variance fit reads.
#[derive(Debug, Clone, Args, Serialize)]
pub struct FitCorrelation {
    #[arg(long)]
    rho: Option<String>,
    #[arg(long = "tau-sq", visible_alias = "tau_sq")]
    tau_sq: Option<f64>,
    #[arg(long = "sigma-sq", visible_alias = "sigma_sq", default_value_t = 1.0)]
    sigma_sq: f64,
}

impl FitCmd {
    pub fn run(&self) -> Result<()> {
        let data = read_dataset(&self.data)?;
        let layout = self.layout.resolve_for(&data)?;
        let mut t = Table::new(&["model", "method", "term", "estimate", "se"]);
        let mut fits: Vec<FitResult> = Vec::new();
        let known = match self.method {
            Method::Known => Some(
                CorrelationArgs {
                    rho: self.corr.rho.clone(),
                    tau_sq: self.corr.tau_sq,
                    sigma_sq: self.corr.sigma_sq,
                }
                .resolve_one(&layout)?,
            ),
            _ => {
                if self.corr.rho.is_some() || self.corr.tau_sq.is_some() {
                    return Err(config_err("--rho/--tau-sq apply only to --method known"));
                }
                None
            }
        };
        for m in models_or_all(&self.model)? {
            let f = match self.method {
                Method::Reml => estimation::reml_fit(&layout, m, &data)?,
                Method::Ml => estimation::ml_fit(&layout, m, &data)?,
                Method::Known => {
                    estimation::gls_fit(&layout, m, known.as_ref().expect("resolved"), &data.cluster_period_means()?)?
                }
            };
            let method = serde_json::to_value(f.method)?.as_str().unwrap_or_default().to_string();
            let mut row = |term: &str, est: f64, se: Cell| {
                t.push(vec![m.to_string().into(), method.as_str().into(), term.into(), est.into(), se])
            };
            for c in &f.coefficients {
                row(&c.label, c.estimate, c.se.into());
            }
            row("effect", f.effect.estimate, f.effect.se.into());
            row("tau_sq", f.tau_sq, Cell::Empty);
            row("sigma_sq", f.sigma_sq, Cell::Empty);
            row("rho", f.rho, Cell::Empty);
            if let Some(ll) = f.loglik_reml {
                row("loglik_reml", ll, Cell::Empty);
            }
            if let Some(ll) = f.loglik_ml {
                row("loglik_ml", ll, Cell::Empty);
            }
            fits.push(f);
        }
        let resolved = json!({ "layout": layout, "correlation": known });
        finish("fit", self, resolved, &self.output, Output::with_json(t, &fits)?)
    }
}

#[derive(Debug, Args, Serialize)]
pub struct LrtCmd {
    #[arg(long, value_name = "FILE")]
    data: PathBuf,
    #[command(flatten)]
    #[serde(flatten)]
    layout: LayoutArgs,
    /// Include the anticipation term in both models.
    #[arg(long)]
    anticipation: bool,
    #[command(flatten)]
    #[serde(flatten)]
    output: OutputArgs,
}

impl LrtCmd {
    pub fn run(&self) -> Result<()> {
        let data = read_dataset(&self.data)?;
        let layout = self.layout.resolve_for(&data)?;
        let r = estimation::lrt_exposure_heterogeneity(&layout, &data, self.anticipation)?;
        let mut t = Table::new(&["statistic", "df", "p_value", "loglik_null", "loglik_alt"]);
        t.push(vec![r.statistic.into(), r.df.into(), r.p_value.into(), r.loglik_null.into(), r.loglik_alt.into()]);
        finish("lrt", self, json!({ "layout": layout }), &self.output, Output::with_json(t, &r)?)
    }
}
