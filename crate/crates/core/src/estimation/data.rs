//! Individual-level datasets and their cluster-period summaries.

use std::collections::HashMap;
use std::io::{Read, Write};

use serde::Deserialize;

use crate::design::{anticipating, treated, DesignLayout};
use crate::error::{Error, Result};

/// Long-format outcomes on a complete cluster x period x individual grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    n_clusters: usize,
    n_periods: usize,
    k: usize,
    treatment: Vec<u8>,
    anticipation: Vec<u8>,
    y: Vec<f64>,
}

#[derive(Debug, Deserialize)]
struct Row {
    cluster: usize,
    period: usize,
    individual: usize,
    #[serde(rename = "Z")]
    z: u8,
    #[serde(rename = "A")]
    a: u8,
    y: f64,
}

impl Dataset {
    /// Wraps outcomes laid out cluster-major, then period, then individual.
    pub fn new(
        n_clusters: usize,
        n_periods: usize,
        k: usize,
        treatment: Vec<u8>,
        anticipation: Vec<u8>,
        y: Vec<f64>,
    ) -> Result<Self> {
        let cells = n_clusters * n_periods;
        if cells == 0 || k == 0 {
            return Err(Error::config("dataset must have at least one cluster, period and individual"));
        }
        if treatment.len() != cells || anticipation.len() != cells || y.len() != cells * k {
            return Err(Error::config("dataset dimensions do not match I x J x K"));
        }
        Ok(Self {
            n_clusters,
            n_periods,
            k,
            treatment,
            anticipation,
            y,
        })
    }

    /// Builds a dataset for `layout` with indicators taken from the layout and
    /// anticipation window `ell`; clusters follow the layout order.
    pub fn from_layout(layout: &DesignLayout, ell: usize, y: Vec<f64>) -> Result<Self> {
        let (z, a) = layout_indicators(layout, ell);
        Self::new(
            layout.n_clusters(),
            layout.n_periods(),
            layout.cluster_period_size(),
            z,
            a,
            y,
        )
    }

    pub fn n_clusters(&self) -> usize {
        self.n_clusters
    }

    pub fn n_periods(&self) -> usize {
        self.n_periods
    }

    pub fn cluster_period_size(&self) -> usize {
        self.k
    }

    pub fn outcomes(&self) -> &[f64] {
        &self.y
    }

    pub fn treatment(&self, cluster: usize, period: usize) -> u8 {
        self.treatment[cluster * self.n_periods + period]
    }

    pub fn anticipation(&self, cluster: usize, period: usize) -> u8 {
        self.anticipation[cluster * self.n_periods + period]
    }

    /// Outcomes of one cluster-period cell (0-based indices).
    pub fn cell(&self, cluster: usize, period: usize) -> &[f64] {
        let start = (cluster * self.n_periods + period) * self.k;
        &self.y[start..start + self.k]
    }

    /// First treated period (1-based) of each cluster, read from `Z`.
    pub fn adoption_periods(&self) -> Result<Vec<usize>> {
        (0..self.n_clusters)
            .map(|i| {
                let row = &self.treatment[i * self.n_periods..(i + 1) * self.n_periods];
                if row.windows(2).any(|w| w[1] < w[0]) {
                    return Err(Error::config(format!("cluster {}: treatment switches off", i + 1)));
                }
                row.iter()
                    .position(|&v| v == 1)
                    .map(|p| p + 1)
                    .ok_or_else(|| Error::config(format!("cluster {} is never treated", i + 1)))
            })
            .collect()
    }

    /// Checks dimensions and the treatment pattern against `layout`; returns
    /// the sequence index of every cluster.
    pub fn match_layout(&self, layout: &DesignLayout) -> Result<Vec<usize>> {
        if self.n_periods != layout.n_periods() {
            return Err(Error::config(format!(
                "dataset has {} periods, layout has {}",
                self.n_periods,
                layout.n_periods()
            )));
        }
        if self.k != layout.cluster_period_size() {
            return Err(Error::config(format!(
                "dataset has {} individuals per cell, layout has K = {}",
                self.k,
                layout.cluster_period_size()
            )));
        }
        if self.n_clusters != layout.n_clusters() {
            return Err(Error::config(format!(
                "dataset has {} clusters, layout has {}",
                self.n_clusters,
                layout.n_clusters()
            )));
        }
        let index: HashMap<usize, usize> = layout
            .sequences()
            .iter()
            .enumerate()
            .map(|(q, s)| (s.adopt, q))
            .collect();
        let mut seen = vec![0usize; layout.n_sequences()];
        let mut out = Vec::with_capacity(self.n_clusters);
        for (i, a) in self.adoption_periods()?.into_iter().enumerate() {
            let q = *index.get(&a).ok_or_else(|| {
                Error::config(format!("cluster {} adopts in period {a}, which the layout lacks", i + 1))
            })?;
            seen[q] += 1;
            out.push(q);
        }
        for (q, s) in layout.sequences().iter().enumerate() {
            if seen[q] != s.count {
                return Err(Error::config(format!(
                    "layout expects {} clusters adopting in period {}, dataset has {}",
                    s.count, s.adopt, seen[q]
                )));
            }
        }
        Ok(out)
    }

    pub fn cluster_period_means(&self) -> Result<ClusterPeriodMeans> {
        let cells = self.n_clusters * self.n_periods;
        let kf = self.k as f64;
        let mut means = Vec::with_capacity(cells);
        let mut ssw = 0.0;
        for c in 0..cells {
            let v = &self.y[c * self.k..(c + 1) * self.k];
            let m = v.iter().sum::<f64>() / kf;
            ssw += v.iter().map(|x| (x - m) * (x - m)).sum::<f64>();
            means.push(m);
        }
        Ok(ClusterPeriodMeans {
            n_periods: self.n_periods,
            k: self.k,
            adoption: self.adoption_periods()?,
            means,
            within_ss: ssw,
        })
    }

    /// Writes `cluster,period,individual,Z,A,y` rows with 1-based indices.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["cluster", "period", "individual", "Z", "A", "y"])?;
        for i in 0..self.n_clusters {
            for j in 0..self.n_periods {
                let z = self.treatment(i, j).to_string();
                let a = self.anticipation(i, j).to_string();
                for (k, y) in self.cell(i, j).iter().enumerate() {
                    w.write_record([
                        (i + 1).to_string(),
                        (j + 1).to_string(),
                        (k + 1).to_string(),
                        z.clone(),
                        a.clone(),
                        y.to_string(),
                    ])?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Reads the long format; the grid must be complete with equal cell sizes.
    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(input);
        let rows: Vec<Row> = rdr.deserialize().collect::<std::result::Result<_, _>>()?;
        if rows.is_empty() {
            return Err(Error::config("dataset has no rows"));
        }
        if rows.iter().any(|r| r.cluster == 0 || r.period == 0 || r.individual == 0) {
            return Err(Error::config("cluster, period and individual indices are 1-based"));
        }
        let n_clusters = rows.iter().map(|r| r.cluster).max().unwrap_or(0);
        let n_periods = rows.iter().map(|r| r.period).max().unwrap_or(0);
        let mut sizes = vec![0usize; n_clusters * n_periods];
        for r in &rows {
            sizes[(r.cluster - 1) * n_periods + r.period - 1] += 1;
        }
        let k = sizes[0];
        if sizes.iter().any(|&s| s != k) {
            return Err(Error::config(
                "cluster-period sizes differ or cells are missing; equal K is required",
            ));
        }
        let cells = n_clusters * n_periods;
        let mut z = vec![u8::MAX; cells];
        let mut a = vec![u8::MAX; cells];
        let mut y = vec![f64::NAN; cells * k];
        for r in &rows {
            if r.individual > k {
                return Err(Error::config(format!(
                    "individual index {} exceeds the cell size {k}",
                    r.individual
                )));
            }
            if r.z > 1 || r.a > 1 {
                return Err(Error::config("Z and A must be 0 or 1"));
            }
            if !r.y.is_finite() {
                return Err(Error::config("outcomes must be finite"));
            }
            let c = (r.cluster - 1) * n_periods + r.period - 1;
            for (slot, v, name) in [(&mut z[c], r.z, "Z"), (&mut a[c], r.a, "A")] {
                if *slot != u8::MAX && *slot != v {
                    return Err(Error::config(format!(
                        "inconsistent {name} within cluster {} period {}",
                        r.cluster, r.period
                    )));
                }
                *slot = v;
            }
            let idx = c * k + r.individual - 1;
            if !y[idx].is_nan() {
                return Err(Error::config(format!(
                    "duplicate row for cluster {} period {} individual {}",
                    r.cluster, r.period, r.individual
                )));
            }
            y[idx] = r.y;
        }
        Self::new(n_clusters, n_periods, k, z, a, y)
    }
}

/// `Z` and `A` grids for the clusters of `layout`, in layout order.
pub(crate) fn layout_indicators(layout: &DesignLayout, ell: usize) -> (Vec<u8>, Vec<u8>) {
    let jm = layout.n_periods();
    let mut z = Vec::with_capacity(layout.n_clusters() * jm);
    let mut a = Vec::with_capacity(layout.n_clusters() * jm);
    for adopt in layout.adoption_periods() {
        for j in 1..=jm {
            z.push(treated(adopt, j) as u8);
            a.push(anticipating(adopt, j, ell) as u8);
        }
    }
    (z, a)
}

/// Cluster-period means with the pooled within-cell sum of squares.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterPeriodMeans {
    pub n_periods: usize,
    pub k: usize,
    /// First treated period (1-based) of each cluster.
    pub adoption: Vec<usize>,
    /// Cluster-major `I x J` means.
    pub means: Vec<f64>,
    /// Σ over cells of Σ_k (Y_ijk - Ȳ_ij)².
    pub within_ss: f64,
}

impl ClusterPeriodMeans {
    pub fn n_clusters(&self) -> usize {
        self.adoption.len()
    }

    pub fn row(&self, cluster: usize) -> &[f64] {
        &self.means[cluster * self.n_periods..(cluster + 1) * self.n_periods]
    }

    /// Per-sequence average profiles Ȳ_j(q) for the sequences of `layout`.
    pub fn sequence_averages(&self, layout: &DesignLayout) -> Result<Vec<Vec<f64>>> {
        let stats = super::SufficientStats::from_means(layout, self)?;
        Ok(stats
            .seq_sums
            .iter()
            .zip(&stats.seq_counts)
            .map(|(s, &n)| s.iter().map(|v| v / n as f64).collect())
            .collect())
    }
}
