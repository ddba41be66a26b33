//! Simulated stepped-wedge trials and replication studies.
//!
//! Replication `r` of a study with seed `s` draws from ChaCha8 stream `r` of
//! key `s`, so results do not depend on how replications are scheduled.
//! Replication 0 is the dataset [`simulate_dataset`] returns for the same seed.

use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::design::DesignLayout;
use crate::error::{Error, Result};
use crate::estimation::{reml_fit, Dataset, FitResult};
use crate::model::{sinusoid_curve, ModelKind};
use crate::power::normal_quantile;

pub use crate::model::TrueModelParams;

/// Largest tolerated share of failed fits per working model.
pub const MAX_FAILURE_RATE: f64 = 0.01;

fn check_truth(layout: &DesignLayout, truth: &TrueModelParams) -> Result<()> {
    truth.validate()?;
    if truth.n_periods() != layout.n_periods() {
        return Err(Error::config(format!(
            "truth has {} periods, layout has {}",
            truth.n_periods(),
            layout.n_periods()
        )));
    }
    Ok(())
}

fn draw(layout: &DesignLayout, truth: &TrueModelParams, rng: &mut ChaCha8Rng) -> Result<Dataset> {
    let (jm, k) = (layout.n_periods(), layout.cluster_period_size());
    let (tau, sigma) = (truth.tau_sq.sqrt(), truth.sigma_sq.sqrt());
    let mut y = Vec::with_capacity(layout.n_clusters() * jm * k);
    for adopt in layout.adoption_periods() {
        let a: f64 = StandardNormal.sample(rng);
        let alpha = tau * a;
        for j in 1..=jm {
            let m = truth.cell_mean(adopt, j) + alpha;
            for _ in 0..k {
                let e: f64 = StandardNormal.sample(rng);
                y.push(m + sigma * e);
            }
        }
    }
    Dataset::from_layout(layout, truth.ell, y)
}

fn stream(seed: u64, rep: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(rep);
    rng
}

/// One dataset from `truth` on `layout`. The anticipation column follows the
/// truth's window.
pub fn simulate_dataset(layout: &DesignLayout, truth: &TrueModelParams, seed: u64) -> Result<Dataset> {
    check_truth(layout, truth)?;
    draw(layout, truth, &mut stream(seed, 0))
}

/// Per-working-model summary over replications.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportRow {
    pub true_model: ModelKind,
    pub working_model: ModelKind,
    pub effect_true: f64,
    pub mean_est: f64,
    pub mean_gamma: Option<f64>,
    pub mean_tau: f64,
    /// Not part of the CSV table.
    pub mean_sigma: f64,
    pub sd_est: f64,
    pub mean_se: f64,
    pub coverage_pct: f64,
    pub power_pct: f64,
    pub sd_gamma: Option<f64>,
    pub se_gamma: Option<f64>,
    pub coverage_gamma_pct: Option<f64>,
    pub power_gamma_pct: Option<f64>,
    /// Replications whose fit succeeded.
    pub n_fitted: usize,
    pub n_failed: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MonteCarloReport {
    pub truth: TrueModelParams,
    pub n_reps: usize,
    pub seed: u64,
    pub alpha: f64,
    pub rows: Vec<ReportRow>,
}

const CSV_HEADER: [&str; 14] = [
    "true_model",
    "working_model",
    "effect_true",
    "mean_est",
    "mean_gamma",
    "mean_tau",
    "sd_est",
    "mean_se",
    "coverage_pct",
    "power_pct",
    "sd_gamma",
    "se_gamma",
    "coverage_gamma_pct",
    "power_gamma_pct",
];

impl MonteCarloReport {
    pub fn row(&self, working: ModelKind) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.working_model == working)
    }

    /// Writes the table columns, formatting every number with `fmt`.
    pub fn write_csv_with<W: Write>(&self, out: W, fmt: impl Fn(f64) -> String) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(CSV_HEADER)?;
        let opt = |v: Option<f64>| v.map(&fmt).unwrap_or_default();
        for r in &self.rows {
            w.write_record([
                r.true_model.to_string(),
                r.working_model.to_string(),
                fmt(r.effect_true),
                fmt(r.mean_est),
                opt(r.mean_gamma),
                fmt(r.mean_tau),
                fmt(r.sd_est),
                fmt(r.mean_se),
                fmt(r.coverage_pct),
                fmt(r.power_pct),
                opt(r.sd_gamma),
                opt(r.se_gamma),
                opt(r.coverage_gamma_pct),
                opt(r.power_gamma_pct),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        self.write_csv_with(out, |v| v.to_string())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

#[derive(Debug, Clone, Copy)]
struct Draw {
    est: f64,
    se: f64,
    gamma: Option<(f64, f64)>,
    tau: f64,
    sigma: f64,
}

impl Draw {
    fn from_fit(f: &FitResult) -> Self {
        Self {
            est: f.effect.estimate,
            se: f.effect.se,
            gamma: f.gamma.map(|g| (g.estimate, g.se)),
            tau: f.tau,
            sigma: f.sigma,
        }
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn sample_sd(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return f64::NAN;
    }
    let m = mean(v);
    (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

fn pct(hits: usize, n: usize) -> f64 {
    100.0 * hits as f64 / n as f64
}

fn summarize(truth: &TrueModelParams, working: ModelKind, draws: &[Draw], n_failed: usize, z: f64) -> ReportRow {
    let effect = truth.average_effect();
    let est: Vec<f64> = draws.iter().map(|d| d.est).collect();
    let n = draws.len();
    let covered = draws.iter().filter(|d| (d.est - effect).abs() <= z * d.se).count();
    let rejected = draws.iter().filter(|d| d.est.abs() > z * d.se).count();
    let gammas: Vec<(f64, f64)> = draws.iter().filter_map(|d| d.gamma).collect();
    let has_gamma = working.has_anticipation() && !gammas.is_empty();
    let g_est: Vec<f64> = gammas.iter().map(|g| g.0).collect();
    let g_se: Vec<f64> = gammas.iter().map(|g| g.1).collect();
    let g_cov = gammas.iter().filter(|g| (g.0 - truth.gamma).abs() <= z * g.1).count();
    let g_rej = gammas.iter().filter(|g| g.0.abs() > z * g.1).count();
    ReportRow {
        true_model: truth.kind,
        working_model: working,
        effect_true: effect,
        mean_est: mean(&est),
        mean_gamma: has_gamma.then(|| mean(&g_est)),
        mean_tau: mean(&draws.iter().map(|d| d.tau).collect::<Vec<_>>()),
        mean_sigma: mean(&draws.iter().map(|d| d.sigma).collect::<Vec<_>>()),
        sd_est: sample_sd(&est),
        mean_se: mean(&draws.iter().map(|d| d.se).collect::<Vec<_>>()),
        coverage_pct: pct(covered, n),
        power_pct: pct(rejected, n),
        sd_gamma: has_gamma.then(|| sample_sd(&g_est)),
        se_gamma: has_gamma.then(|| mean(&g_se)),
        coverage_gamma_pct: has_gamma.then(|| pct(g_cov, gammas.len())),
        power_gamma_pct: has_gamma.then(|| pct(g_rej, gammas.len())),
        n_fitted: n,
        n_failed,
    }
}

/// Replicates `n_reps` trials from `truth` and fits every working model to
/// each by REML. Failed fits are dropped and counted; the study fails if more
/// than [`MAX_FAILURE_RATE`] of any model's fits fail.
pub fn run_study(
    layout: &DesignLayout,
    truth: &TrueModelParams,
    working: &[ModelKind],
    n_reps: usize,
    seed: u64,
    alpha: f64,
) -> Result<MonteCarloReport> {
    check_truth(layout, truth)?;
    if n_reps == 0 {
        return Err(Error::config("need at least one replication"));
    }
    if working.is_empty() {
        return Err(Error::config("need at least one working model"));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::config(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    let z = normal_quantile(1.0 - alpha / 2.0);

    // rank problems are a property of the layout, not of the draw
    for &m in working {
        crate::estimation::check_rank(m, layout, &m.blocks(layout))?;
    }

    let per_rep: Vec<Vec<Option<Draw>>> = (0..n_reps)
        .into_par_iter()
        .map(|r| -> Result<Vec<Option<Draw>>> {
            let data = draw(layout, truth, &mut stream(seed, r as u64))?;
            Ok(working
                .iter()
                .map(|&m| reml_fit(layout, m, &data).ok().map(|f| Draw::from_fit(&f)))
                .collect())
        })
        .collect::<Result<_>>()?;

    let mut rows = Vec::with_capacity(working.len());
    for (c, &m) in working.iter().enumerate() {
        let draws: Vec<Draw> = per_rep.iter().filter_map(|r| r[c]).collect();
        let failed = n_reps - draws.len();
        if failed as f64 > MAX_FAILURE_RATE * n_reps as f64 || draws.is_empty() {
            return Err(Error::Convergence(format!(
                "{failed} of {n_reps} {m} fits failed (limit {:.0}%)",
                100.0 * MAX_FAILURE_RATE
            )));
        }
        rows.push(summarize(truth, m, &draws, failed, z));
    }
    Ok(MonteCarloReport {
        truth: truth.clone(),
        n_reps,
        seed,
        alpha,
        rows,
    })
}

/// A named simulation setting: layout, truth and the working models to fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    pub layout: DesignLayout,
    pub truth: TrueModelParams,
    pub working: Vec<ModelKind>,
}

impl Scenario {
    pub fn run(&self, n_reps: usize, seed: u64, alpha: f64) -> Result<MonteCarloReport> {
        run_study(&self.layout, &self.truth, &self.working, n_reps, seed, alpha)
    }
}

/// Amplitude of the study curve. Printed to two decimals as 1.41; the
/// tabulated misspecified-model means are reproduced only with √2.
pub const STUDY_AMPLITUDE: f64 = std::f64::consts::SQRT_2;

/// Exposure-time curve used by the heterogeneous-effect studies; averages 0.12.
pub fn study_curve() -> Vec<f64> {
    sinusoid_curve(8, STUDY_AMPLITUDE, 7.0, 0.12)
}

/// The replication-study settings: 32 clusters, 9 periods, 100 individuals
/// per cluster-period, τ = 0.141, σ = 1, period effects β_j = j.
pub fn preset_scenarios() -> Vec<Scenario> {
    let layout = DesignLayout::standard(32, 9, 100, 1).expect("valid study layout");
    let finish = |mut t: TrueModelParams| {
        // μ + β_j = j with the first period effect pinned at zero
        t.mu = 1.0;
        t.beta = (0..9).map(f64::from).collect();
        t.tau_sq = 0.141 * 0.141;
        t.sigma_sq = 1.0;
        t
    };
    let all = ModelKind::ALL.to_vec();
    vec![
        Scenario {
            name: "I-null".into(),
            layout: layout.clone(),
            truth: finish(TrueModelParams::constant(9, 0.0, 0.0)),
            working: vec![ModelKind::Hh, ModelKind::HhAnt],
        },
        Scenario {
            name: "I-alt".into(),
            layout: layout.clone(),
            truth: finish(TrueModelParams::constant(9, 0.075, 0.0)),
            working: vec![ModelKind::Hh, ModelKind::HhAnt],
        },
        Scenario {
            name: "II".into(),
            layout: layout.clone(),
            truth: finish(TrueModelParams::constant(9, 0.075, 0.04)),
            working: all.clone(),
        },
        Scenario {
            name: "III".into(),
            layout: layout.clone(),
            truth: finish(TrueModelParams::curve(9, study_curve(), 0.0)),
            working: all.clone(),
        },
        Scenario {
            name: "IV".into(),
            layout,
            truth: finish(TrueModelParams::curve(9, study_curve(), 0.04)),
            working: all,
        },
    ]
}

pub fn preset(name: &str) -> Result<Scenario> {
    preset_scenarios()
        .into_iter()
        .find(|s| s.name.eq_ignore_ascii_case(name))
        .ok_or_else(|| Error::config(format!("unknown preset `{name}` (expected I-null, I-alt, II, III or IV)")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::correlation::CorrelationParams;
    use crate::estimation::expected_estimate;

    fn small() -> (DesignLayout, TrueModelParams) {
        let layout = DesignLayout::standard(6, 4, 5, 1).unwrap();
        let mut t = TrueModelParams::curve(4, vec![0.5, 1.0, 0.2], 0.3);
        t.mu = 2.0;
        t.beta = vec![0.0, 0.4, -0.1, 0.7];
        t.tau_sq = 0.1;
        t.sigma_sq = 0.5;
        (layout, t)
    }

    #[test]
    fn noiseless_draw_is_mean_structure() {
        let (layout, mut t) = small();
        t.tau_sq = 0.0;
        t.sigma_sq = 0.0;
        let d = simulate_dataset(&layout, &t, 3).unwrap();
        for (i, a) in layout.adoption_periods().into_iter().enumerate() {
            for j in 1..=4 {
                assert!(d.cell(i, j - 1).iter().all(|&v| v == t.cell_mean(a, j)));
            }
        }
    }

    #[test]
    fn same_seed_same_bytes() {
        let (layout, t) = small();
        let mut a = Vec::new();
        let mut b = Vec::new();
        simulate_dataset(&layout, &t, 11).unwrap().write_csv(&mut a).unwrap();
        simulate_dataset(&layout, &t, 11).unwrap().write_csv(&mut b).unwrap();
        assert_eq!(a, b);
        let mut c = Vec::new();
        simulate_dataset(&layout, &t, 12).unwrap().write_csv(&mut c).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn sequence_means_center_on_truth() {
        let (layout, t) = small();
        let reps = 400;
        let jm = 4;
        let means = t.sequence_means(&layout);
        let mut acc = vec![vec![0.0; jm]; layout.n_sequences()];
        for r in 0..reps {
            let d = draw(&layout, &t, &mut stream(5, r)).unwrap();
            let avg = d.cluster_period_means().unwrap().sequence_averages(&layout).unwrap();
            for (a, s) in acc.iter_mut().zip(avg) {
                for (x, v) in a.iter_mut().zip(s) {
                    *x += v / reps as f64;
                }
            }
        }
        // two clusters per sequence: Var(Ȳ_j(q)) = (τ² + σ²/K)/2
        let sd = ((t.tau_sq + t.sigma_sq / 5.0) / 2.0 / reps as f64).sqrt();
        for (a, m) in acc.iter().zip(&means) {
            for (x, y) in a.iter().zip(m) {
                assert!((x - y).abs() < 4.0 * sd, "{x} vs {y}");
            }
        }
    }

    #[test]
    fn replication_zero_is_the_single_draw() {
        let (layout, t) = small();
        let a = simulate_dataset(&layout, &t, 9).unwrap();
        let b = draw(&layout, &t, &mut stream(9, 0)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn study_is_deterministic_and_centred() {
        let (layout, t) = small();
        let models = [ModelKind::EtiAnt, ModelKind::Hh];
        let a = run_study(&layout, &t, &models, 300, 17, 0.05).unwrap();
        let b = run_study(&layout, &t, &models, 300, 17, 0.05).unwrap();
        assert_eq!(a, b);
        let row = a.row(ModelKind::EtiAnt).unwrap();
        assert!((row.mean_est - t.average_effect()).abs() < 3.0 * row.sd_est / 300f64.sqrt());
        let g = row.mean_gamma.unwrap();
        assert!((g - t.gamma).abs() < 3.0 * row.sd_gamma.unwrap() / 300f64.sqrt());
        assert!(a.row(ModelKind::Hh).unwrap().mean_gamma.is_none());
        let mut buf = Vec::new();
        a.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with(&CSV_HEADER.join(",")));
        assert_eq!(text.lines().count(), 3);
    }

    #[test]
    fn misspecified_mean_tracks_oracle_at_fitted_correlation() {
        let (layout, t) = small();
        let r = run_study(&layout, &t, &[ModelKind::Hh], 300, 23, 0.05).unwrap();
        let row = &r.rows[0];
        let fitted = CorrelationParams::new(row.mean_tau * row.mean_tau, row.mean_sigma * row.mean_sigma, 5, 4).unwrap();
        let e = expected_estimate(&layout, ModelKind::Hh, &t, &fitted).unwrap();
        assert!((row.mean_est - e.effect(4)).abs() < 4.0 * row.sd_est / 300f64.sqrt());
    }

    #[test]
    fn presets() {
        let p = preset_scenarios();
        assert_eq!(p.len(), 5);
        let iii = preset("III").unwrap();
        assert!((iii.truth.average_effect() - 0.12).abs() < 1e-12);
        assert_eq!(iii.truth.gamma, 0.0);
        let null = preset("i-null").unwrap();
        assert_eq!((null.truth.delta[0], null.truth.gamma), (0.0, 0.0));
        assert_eq!(preset("II").unwrap().truth.kind, ModelKind::HhAnt);
        assert_eq!(preset("IV").unwrap().truth.kind, ModelKind::EtiAnt);
        for s in &p {
            assert_eq!(s.truth.cell_mean(9, 5), 5.0);
            let text = serde_json::to_string(s).unwrap();
            let back: Scenario = serde_json::from_str(&text).unwrap();
            assert_eq!(&back, s);
        }
        assert!(preset("V").is_err());
    }

    #[test]
    fn bad_inputs() {
        let (layout, t) = small();
        assert!(run_study(&layout, &t, &[ModelKind::Hh], 0, 1, 0.05).is_err());
        assert!(run_study(&layout, &t, &[], 10, 1, 0.05).is_err());
        let wrong = TrueModelParams::constant(5, 0.1, 0.0);
        assert!(simulate_dataset(&layout, &wrong, 1).is_err());
    }
}
