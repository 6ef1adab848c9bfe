//! Reward-margin diagnostics: pairwise accuracy, population moments and histograms.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::PreferenceExample;
use crate::error::{Error, Result};
use crate::model::RewardNet;

/// `Δ_i = r(x, y_c) − r(x, y_r)` for every example, in order.
pub fn compute_margins(net: &RewardNet, dataset: &[PreferenceExample]) -> Result<Vec<f64>> {
    if dataset.is_empty() {
        return Err(Error::InvalidData("dataset is empty".into()));
    }
    dataset
        .iter()
        .map(|e| Ok(net.forward(&e.prompt, &e.chosen)? - net.forward(&e.prompt, &e.rejected)?))
        .collect()
}

/// Fraction of pairs with a strictly positive margin. Ties count as wrong.
pub fn accuracy(net: &RewardNet, dataset: &[PreferenceExample]) -> Result<f64> {
    Ok(accuracy_of_margins(&compute_margins(net, dataset)?))
}

pub fn accuracy_of_margins(margins: &[f64]) -> f64 {
    margins.iter().filter(|&&d| d > 0.0).count() as f64 / margins.len() as f64
}

/// Population moments of a margin sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginStats {
    pub n: usize,
    pub mean: f64,
    /// Population standard deviation `sqrt(m2)`.
    pub std: f64,
    /// `m3 / m2^1.5`
    pub skewness: f64,
    /// `m4 / m2² − 3`
    pub excess_kurtosis: f64,
    pub min: f64,
    pub max: f64,
}

pub fn margin_stats(margins: &[f64]) -> Result<MarginStats> {
    let n = margins.len();
    if n < 2 {
        return Err(Error::Degenerate(format!(
            "need at least 2 margins, got {n}"
        )));
    }
    if let Some(i) = margins.iter().position(|m| !m.is_finite()) {
        return Err(Error::Domain(format!("margin {i} is not finite")));
    }
    let min = margins.iter().copied().fold(f64::INFINITY, f64::min);
    let max = margins.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if min == max {
        return Err(Error::Degenerate(format!(
            "zero variance (all {n} margins equal {min})"
        )));
    }
    let nf = n as f64;
    let mean = margins.iter().sum::<f64>() / nf;
    let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
    for &x in margins {
        let d = x - mean;
        let d2 = d * d;
        m2 += d2;
        m3 += d2 * d;
        m4 += d2 * d2;
    }
    m2 /= nf;
    m3 /= nf;
    m4 /= nf;
    if m2 <= 0.0 {
        return Err(Error::Degenerate("zero variance".into()));
    }
    Ok(MarginStats {
        n,
        mean,
        std: m2.sqrt(),
        skewness: m3 / m2.powf(1.5),
        excess_kurtosis: m4 / (m2 * m2) - 3.0,
        min,
        max,
    })
}

/// Uniform-bin histogram with under/overflow counters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
    pub underflow: usize,
    pub overflow: usize,
}

pub const DEFAULT_BINS: usize = 50;

/// Bins `[edge_k, edge_{k+1})`, with the last bin closed at `hi`.
pub fn histogram(margins: &[f64], bins: usize, lo: f64, hi: f64) -> Result<Histogram> {
    if bins == 0 {
        return Err(Error::InvalidConfig(
            "histogram needs at least one bin".into(),
        ));
    }
    if !(lo.is_finite() && hi.is_finite() && lo < hi) {
        return Err(Error::InvalidConfig(format!(
            "histogram range [{lo}, {hi}] is empty"
        )));
    }
    let width = (hi - lo) / bins as f64;
    let mut edges: Vec<f64> = (0..bins).map(|k| lo + k as f64 * width).collect();
    edges.push(hi);
    let mut h = Histogram {
        edges,
        counts: vec![0; bins],
        underflow: 0,
        overflow: 0,
    };
    for &x in margins {
        if x < lo {
            h.underflow += 1;
        } else if x > hi {
            h.overflow += 1;
        } else {
            // Edge comparisons fix rounding in the division.
            let mut k = (((x - lo) / width) as usize).min(bins - 1);
            while k > 0 && x < h.edges[k] {
                k -= 1;
            }
            while k + 1 < bins && x >= h.edges[k + 1] {
                k += 1;
            }
            h.counts[k] += 1;
        }
    }
    Ok(h)
}

/// Histogram over `[mean − 4·std, mean + 4·std]` with [`DEFAULT_BINS`] bins.
pub fn default_histogram(margins: &[f64], stats: &MarginStats) -> Result<Histogram> {
    histogram(
        margins,
        DEFAULT_BINS,
        stats.mean - 4.0 * stats.std,
        stats.mean + 4.0 * stats.std,
    )
}

impl Histogram {
    pub fn total(&self) -> usize {
        self.counts.iter().sum::<usize>() + self.underflow + self.overflow
    }

    /// CSV with columns `bin_lo,bin_hi,count`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let io = |e| Error::io(path, e);
        writeln!(w, "bin_lo,bin_hi,count").map_err(io)?;
        for (k, c) in self.counts.iter().enumerate() {
            writeln!(w, "{},{},{}", self.edges[k], self.edges[k + 1], c).map_err(io)?;
        }
        w.flush().map_err(io)
    }
}
