//! Stepped-wedge layouts and the indicator structures derived from them.
//!
//! A layout is the post-randomization design: how many clusters adopt the
//! intervention in each period. Every cluster is in control in period 1 and
//! treated in period `J`. Clusters are numbered by sequence (ordered by
//! adoption period) and then by their index within the sequence.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A group of clusters sharing the same adoption period.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sequence {
    /// First treated period (1-based, in `2..=J`).
    pub adopt: usize,
    /// Number of clusters in the sequence.
    pub count: usize,
}

#[derive(Debug, Clone, Deserialize)]
struct RawLayout {
    #[serde(rename = "I")]
    n_clusters: Option<usize>,
    #[serde(rename = "J")]
    n_periods: usize,
    #[serde(rename = "K")]
    cluster_period_size: usize,
    ell: usize,
    sequences: Vec<Sequence>,
}

impl TryFrom<RawLayout> for DesignLayout {
    type Error = Error;

    fn try_from(raw: RawLayout) -> Result<Self> {
        let layout = DesignLayout::custom(
            raw.sequences,
            raw.n_periods,
            raw.cluster_period_size,
            raw.ell,
        )?;
        if let Some(i) = raw.n_clusters {
            if i != layout.n_clusters() {
                return Err(Error::config(format!(
                    "layout declares I = {i} but its sequences hold {} clusters",
                    layout.n_clusters()
                )));
            }
        }
        Ok(layout)
    }
}

/// A validated cluster-by-period design.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawLayout")]
pub struct DesignLayout {
    #[serde(rename = "I")]
    n_clusters: usize,
    #[serde(rename = "J")]
    n_periods: usize,
    #[serde(rename = "K")]
    cluster_period_size: usize,
    ell: usize,
    sequences: Vec<Sequence>,
}

impl DesignLayout {
    /// Complete design with `J - 1` equally sized sequences, sequence `q`
    /// adopting in period `q + 1`.
    pub fn standard(n_clusters: usize, n_periods: usize, k: usize, ell: usize) -> Result<Self> {
        if n_periods < 3 {
            return Err(Error::config(format!(
                "a standard layout needs J >= 3 periods, got {n_periods}"
            )));
        }
        let q = n_periods - 1;
        if n_clusters == 0 || n_clusters % q != 0 {
            return Err(Error::config(format!(
                "I = {n_clusters} is not a positive multiple of the {q} sequences"
            )));
        }
        let per = n_clusters / q;
        let sequences = (1..=q)
            .map(|s| Sequence {
                adopt: s + 1,
                count: per,
            })
            .collect();
        Self::custom(sequences, n_periods, k, ell)
    }

    /// General layout with arbitrary (distinct) adoption periods and
    /// per-sequence cluster counts.
    pub fn custom(mut sequences: Vec<Sequence>, n_periods: usize, k: usize, ell: usize) -> Result<Self> {
        if n_periods < 2 {
            return Err(Error::config(format!("J must be at least 2, got {n_periods}")));
        }
        if k == 0 {
            return Err(Error::config("cluster-period size K must be at least 1"));
        }
        sequences.retain(|s| s.count > 0);
        if sequences.is_empty() {
            return Err(Error::config("layout has no clusters"));
        }
        sequences.sort_by_key(|s| s.adopt);
        for pair in sequences.windows(2) {
            if pair[0].adopt == pair[1].adopt {
                return Err(Error::config(format!(
                    "duplicate adoption period {}",
                    pair[0].adopt
                )));
            }
        }
        for s in &sequences {
            if s.adopt < 2 || s.adopt > n_periods {
                return Err(Error::config(format!(
                    "adoption period {} outside 2..={n_periods}",
                    s.adopt
                )));
            }
        }
        let max_ell = n_periods - 1;
        if ell == 0 || ell > max_ell {
            return Err(Error::config(format!(
                "anticipation order ell = {ell} outside 1..={max_ell}"
            )));
        }
        let n_clusters = sequences.iter().map(|s| s.count).sum();
        Ok(Self {
            n_clusters,
            n_periods,
            cluster_period_size: k,
            ell,
            sequences,
        })
    }

    /// Recover a layout from a cluster-major 0/1 treatment vector of length
    /// `I * J`. Rows must be monotone step functions starting at 0 and
    /// ending at 1.
    pub fn from_treatment_vector(z: &[u8], n_periods: usize, k: usize, ell: usize) -> Result<Self> {
        if n_periods == 0 || z.is_empty() || z.len() % n_periods != 0 {
            return Err(Error::config(format!(
                "treatment vector of length {} is not a multiple of J = {n_periods}",
                z.len()
            )));
        }
        let mut counts = std::collections::BTreeMap::<usize, usize>::new();
        for (i, row) in z.chunks(n_periods).enumerate() {
            if row.iter().any(|&v| v > 1) {
                return Err(Error::config(format!("cluster {}: entries must be 0 or 1", i + 1)));
            }
            if row.windows(2).any(|w| w[1] < w[0]) {
                return Err(Error::config(format!(
                    "cluster {}: treatment must not switch off",
                    i + 1
                )));
            }
            let adopt = match row.iter().position(|&v| v == 1) {
                Some(p) => p + 1,
                None => {
                    return Err(Error::config(format!("cluster {} is never treated", i + 1)));
                }
            };
            *counts.entry(adopt).or_default() += 1;
        }
        let sequences = counts
            .into_iter()
            .map(|(adopt, count)| Sequence { adopt, count })
            .collect();
        Self::custom(sequences, n_periods, k, ell)
    }

    pub fn n_clusters(&self) -> usize {
        self.n_clusters
    }

    pub fn n_periods(&self) -> usize {
        self.n_periods
    }

    pub fn cluster_period_size(&self) -> usize {
        self.cluster_period_size
    }

    /// Anticipation order ℓ.
    pub fn ell(&self) -> usize {
        self.ell
    }

    pub fn sequences(&self) -> &[Sequence] {
        &self.sequences
    }

    pub fn n_sequences(&self) -> usize {
        self.sequences.len()
    }

    /// True for a complete design with one equally sized sequence adopting
    /// in each of periods `2..=J`.
    pub fn is_standard(&self) -> bool {
        let q = self.n_periods - 1;
        self.sequences.len() == q
            && self
                .sequences
                .iter()
                .enumerate()
                .all(|(idx, s)| s.adopt == idx + 2 && s.count == self.sequences[0].count)
    }

    pub fn with_ell(&self, ell: usize) -> Result<Self> {
        Self::custom(self.sequences.clone(), self.n_periods, self.cluster_period_size, ell)
    }

    pub fn with_cluster_period_size(&self, k: usize) -> Result<Self> {
        Self::custom(self.sequences.clone(), self.n_periods, k, self.ell)
    }

    /// Adoption period for each cluster, in cluster order.
    pub fn adoption_periods(&self) -> Vec<usize> {
        self.sequences
            .iter()
            .flat_map(|s| std::iter::repeat_n(s.adopt, s.count))
            .collect()
    }

    /// Sequence index (0-based) of every cluster, in cluster order.
    pub fn cluster_sequence(&self) -> Vec<usize> {
        self.sequences
            .iter()
            .enumerate()
            .flat_map(|(q, s)| std::iter::repeat_n(q, s.count))
            .collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

/// Treatment indicator for a cluster adopting in `adopt`, at `period` (both 1-based).
pub fn treated(adopt: usize, period: usize) -> bool {
    period >= adopt
}

/// Anticipation indicator for an order-`ell` window, clipped at period 1.
pub fn anticipating(adopt: usize, period: usize, ell: usize) -> bool {
    period < adopt && period + ell >= adopt
}

/// Exposure time (1-based) of a treated cell.
pub fn exposure_time(adopt: usize, period: usize) -> Option<usize> {
    treated(adopt, period).then(|| period + 1 - adopt)
}

/// The Z, A and exposure-time grids of a layout.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndicatorSet {
    n_periods: usize,
    adoption: Vec<usize>,
    pub treatment: Vec<Vec<u8>>,
    pub anticipation: Vec<Vec<u8>>,
    pub exposure: Vec<Vec<Option<usize>>>,
}

impl IndicatorSet {
    pub fn new(layout: &DesignLayout) -> Self {
        let j_max = layout.n_periods();
        let ell = layout.ell();
        let adoption = layout.adoption_periods();
        let treatment = adoption
            .iter()
            .map(|&a| (1..=j_max).map(|j| treated(a, j) as u8).collect())
            .collect();
        let anticipation = adoption
            .iter()
            .map(|&a| (1..=j_max).map(|j| anticipating(a, j, ell) as u8).collect())
            .collect();
        let exposure = adoption
            .iter()
            .map(|&a| (1..=j_max).map(|j| exposure_time(a, j)).collect())
            .collect();
        Self {
            n_periods: j_max,
            adoption,
            treatment,
            anticipation,
            exposure,
        }
    }

    pub fn n_clusters(&self) -> usize {
        self.adoption.len()
    }

    pub fn n_periods(&self) -> usize {
        self.n_periods
    }

    pub fn adoption(&self) -> &[usize] {
        &self.adoption
    }

    /// The `J x (J-1)` exposure block of cluster `i`: row `j` has a one in
    /// column `s - 1` when period `j` is at exposure time `s`.
    pub fn exposure_block(&self, i: usize) -> Vec<Vec<u8>> {
        let j_max = self.n_periods;
        self.exposure[i]
            .iter()
            .map(|e| {
                let mut row = vec![0u8; j_max - 1];
                if let Some(s) = e {
                    row[s - 1] = 1;
                }
                row
            })
            .collect()
    }

    /// Writes `cluster,period,Z,A,s` rows (1-based indices, blank `s` when untreated).
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["cluster", "period", "Z", "A", "s"])?;
        for i in 0..self.n_clusters() {
            for j in 0..self.n_periods {
                let s = self.exposure[i][j].map(|s| s.to_string()).unwrap_or_default();
                w.write_record([
                    (i + 1).to_string(),
                    (j + 1).to_string(),
                    self.treatment[i][j].to_string(),
                    self.anticipation[i][j].to_string(),
                    s,
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Integer summaries of the indicator layout entering the variance formulas.
///
/// Scalars follow the treatment indicator `Z` (`u`, `w1`, `w2`), the
/// anticipation indicator `A` (`u3`, `u4`, `w3`, `w4`) or both (`w5`, `w6`).
/// The vector and matrix analogues replace `Z_i` with the exposure block
/// `X_i`, so they are indexed by exposure time `1..J-1`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DesignConstants {
    /// Σ_ij Z_ij.
    pub u: i64,
    /// Σ_j (Σ_i Z_ij)².
    pub w1: i64,
    /// Σ_i (Σ_j Z_ij)².
    pub w2: i64,
    /// Σ_j (Σ_i A_ij)².
    pub w3: i64,
    /// Σ_i (Σ_j A_ij)².
    pub w4: i64,
    /// Σ_j (Σ_i Z_ij)(Σ_i A_ij).
    pub w5: i64,
    /// Σ_i (Σ_j A_ij)(Σ_j Z_ij).
    pub w6: i64,
    /// Σ_ij A_ij.
    pub u3: i64,
    /// Σ_i A_i'A_i.
    pub u4: i64,
    /// Σ_i A_i'Z_i (always zero: a cell is never both anticipating and treated).
    pub u5: i64,
    /// Σ_i X_i'1.
    pub u1_vec: Vec<i64>,
    /// U1 U1'.
    pub u1_outer: Vec<Vec<i64>>,
    /// Σ_i X_i'X_i.
    pub u2_mat: Vec<Vec<i64>>,
    /// (Σ_i X_i)'(Σ_i X_i).
    pub w1_mat: Vec<Vec<i64>>,
    /// Σ_i X_i'11'X_i.
    pub w2_mat: Vec<Vec<i64>>,
    /// (Σ_i X_i)'(Σ_i A_i).
    pub w5_vec: Vec<i64>,
    /// Σ_i A_i'X_i.
    pub u5_vec: Vec<i64>,
    /// Σ_i A_i'11'X_i.
    pub w6_vec: Vec<i64>,
    /// Treated clusters per period.
    pub kappa1: Vec<i64>,
    /// Total treated cells (equals `u`).
    pub kappa2: i64,
    /// Treated periods per sequence.
    pub kappa3: Vec<i64>,
}

impl DesignConstants {
    /// Computes every constant from per-sequence profiles weighted by the
    /// sequence sizes.
    pub fn new(layout: &DesignLayout) -> Self {
        let jm = layout.n_periods();
        let s_len = jm - 1;
        let ell = layout.ell();

        let mut col_z = vec![0i64; jm];
        let mut col_a = vec![0i64; jm];
        let mut u1_vec = vec![0i64; s_len];
        let mut u2_mat = vec![vec![0i64; s_len]; s_len];
        let mut w2_mat = vec![vec![0i64; s_len]; s_len];
        let mut u5_vec = vec![0i64; s_len];
        let mut w6_vec = vec![0i64; s_len];
        let (mut w2, mut w4, mut w6, mut u3, mut u4, mut u5) = (0i64, 0i64, 0i64, 0i64, 0i64, 0i64);
        let mut kappa3 = Vec::with_capacity(layout.n_sequences());

        for seq in layout.sequences() {
            let n = seq.count as i64;
            let z: Vec<i64> = (1..=jm).map(|j| treated(seq.adopt, j) as i64).collect();
            let a: Vec<i64> = (1..=jm).map(|j| anticipating(seq.adopt, j, ell) as i64).collect();
            // exposure times observed by this sequence: 1..=J-adopt+1
            let x_row: Vec<i64> = (1..=s_len)
                .map(|s| (s <= jm + 1 - seq.adopt) as i64)
                .collect();
            let z_sum: i64 = z.iter().sum();
            let a_sum: i64 = a.iter().sum();
            for j in 0..jm {
                col_z[j] += n * z[j];
                col_a[j] += n * a[j];
            }
            w2 += n * z_sum * z_sum;
            w4 += n * a_sum * a_sum;
            w6 += n * a_sum * z_sum;
            u3 += n * a_sum;
            u4 += n * a.iter().map(|v| v * v).sum::<i64>();
            u5 += n * a.iter().zip(&z).map(|(x, y)| x * y).sum::<i64>();
            for s in 0..s_len {
                u1_vec[s] += n * x_row[s];
                u2_mat[s][s] += n * x_row[s];
                w6_vec[s] += n * a_sum * x_row[s];
                for t in 0..s_len {
                    w2_mat[s][t] += n * x_row[s] * x_row[t];
                }
            }
            // A_i'X_i: anticipation and exposure never share a period
            for (j, &aj) in a.iter().enumerate() {
                if aj == 1 {
                    if let Some(s) = exposure_time(seq.adopt, j + 1) {
                        u5_vec[s - 1] += n;
                    }
                }
            }
            kappa3.push(z_sum);
        }

        // (Σ X_i)'(Σ X_i) and (Σ X_i)'(Σ A_i) need the period-by-exposure totals.
        let mut sum_x = vec![vec![0i64; s_len]; jm];
        for seq in layout.sequences() {
            let n = seq.count as i64;
            for j in seq.adopt..=jm {
                sum_x[j - 1][j - seq.adopt] += n;
            }
        }
        let mut w1_mat = vec![vec![0i64; s_len]; s_len];
        let mut w5_vec = vec![0i64; s_len];
        for j in 0..jm {
            for s in 0..s_len {
                w5_vec[s] += sum_x[j][s] * col_a[j];
                for t in 0..s_len {
                    w1_mat[s][t] += sum_x[j][s] * sum_x[j][t];
                }
            }
        }
        let u1_outer = u1_vec
            .iter()
            .map(|&a| u1_vec.iter().map(|&b| a * b).collect())
            .collect();
        let u: i64 = col_z.iter().sum();

        Self {
            u,
            w1: col_z.iter().map(|c| c * c).sum(),
            w2,
            w3: col_a.iter().map(|c| c * c).sum(),
            w4,
            w5: col_z.iter().zip(&col_a).map(|(z, a)| z * a).sum(),
            w6,
            u3,
            u4,
            u5,
            u1_vec,
            u1_outer,
            u2_mat,
            w1_mat,
            w2_mat,
            w5_vec,
            u5_vec,
            w6_vec,
            kappa1: col_z,
            kappa2: u,
            kappa3,
        }
    }
}
