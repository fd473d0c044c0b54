//! Wilcoxon signed-rank test for paired samples.
//!
//! Zero differences are dropped before ranking; tied magnitudes share their
//! average rank. The exact null distribution of the positive rank sum is
//! built by a subset-sum recurrence over doubled ranks, which stay integral
//! under ties. Above [`EXACT_THRESHOLD`] effective pairs the normal
//! approximation with tie-corrected variance and continuity correction is
//! used instead.

use std::io::Read;

use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;
use thiserror::Error;

/// Largest effective sample size tested exactly.
pub const EXACT_THRESHOLD: usize = 20;

#[derive(Debug, Error)]
pub enum StatsError {
    #[error("no pairs to test")]
    NoPairs,
    #[error("pair {0} contains a non-finite value")]
    NonFinite(usize),
    #[error("paired-sample CSV: {0}")]
    Csv(#[from] csv::Error),
    #[error("paired-sample CSV: {0}")]
    Format(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedSamples {
    pub label_a: String,
    pub label_b: String,
    pub pairs: Vec<(f64, f64)>,
}

impl PairedSamples {
    pub fn new(label_a: &str, label_b: &str, pairs: Vec<(f64, f64)>) -> Self {
        Self {
            label_a: label_a.to_string(),
            label_b: label_b.to_string(),
            pairs,
        }
    }

    /// Reads `subject,<a>,<b>` rows; the two value column headers become
    /// the condition labels.
    pub fn from_csv<R: Read>(reader: R) -> Result<Self, StatsError> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers = rdr.headers()?.clone();
        if headers.len() != 3 || &headers[0] != "subject" {
            return Err(StatsError::Format(
                "header must be subject,<condition_a>,<condition_b>".into(),
            ));
        }
        let mut pairs = Vec::new();
        for (row, record) in rdr.records().enumerate() {
            let record = record?;
            let value = |i: usize| {
                record[i].parse::<f64>().map_err(|_| {
                    StatsError::Format(format!("row {}: {:?} is not a number", row + 1, &record[i]))
                })
            };
            pairs.push((value(1)?, value(2)?));
        }
        Ok(Self::new(&headers[1], &headers[2], pairs))
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["subject", &self.label_a, &self.label_b])
            .expect("in-memory csv");
        for (i, (a, b)) in self.pairs.iter().enumerate() {
            w.write_record([(i + 1).to_string(), a.to_string(), b.to_string()])
                .expect("in-memory csv");
        }
        String::from_utf8(w.into_inner().expect("in-memory csv")).expect("csv is utf-8")
    }

    pub fn differences(&self) -> Vec<f64> {
        self.pairs.iter().map(|(a, b)| a - b).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Exact,
    NormalApproximation,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WilcoxonResult {
    pub n_effective: usize,
    /// Sum of ranks of the positive differences.
    pub w_statistic: f64,
    pub p_two_sided: f64,
    pub method: Method,
}

/// Ranks of the nonzero differences, averaged over ties, with their signs.
#[derive(Debug, Clone)]
pub struct SignedRanks {
    pub ranks: Vec<f64>,
    pub positive: Vec<bool>,
    /// Sizes of groups of tied magnitudes (only groups larger than one).
    pub tie_groups: Vec<usize>,
}

impl SignedRanks {
    pub fn from_differences(diffs: &[f64]) -> SignedRanks {
        let mut nonzero: Vec<f64> = diffs.iter().copied().filter(|d| *d != 0.0).collect();
        nonzero.sort_by(|a, b| a.abs().total_cmp(&b.abs()));
        let n = nonzero.len();
        let mut ranks = vec![0.0; n];
        let mut tie_groups = Vec::new();
        let mut i = 0;
        while i < n {
            let mut j = i + 1;
            while j < n && nonzero[j].abs() == nonzero[i].abs() {
                j += 1;
            }
            // ranks i+1 ..= j share their mean
            let avg = (i + 1 + j) as f64 / 2.0;
            ranks[i..j].fill(avg);
            if j - i > 1 {
                tie_groups.push(j - i);
            }
            i = j;
        }
        SignedRanks {
            ranks,
            positive: nonzero.iter().map(|d| *d > 0.0).collect(),
            tie_groups,
        }
    }

    pub fn n(&self) -> usize {
        self.ranks.len()
    }

    pub fn w_plus(&self) -> f64 {
        self.ranks
            .iter()
            .zip(&self.positive)
            .filter(|(_, p)| **p)
            .map(|(r, _)| r)
            .sum()
    }

    /// Exact two-sided p: probability under random signs of a rank sum at
    /// least as far from its mean as the observed one.
    pub fn exact_p(&self) -> f64 {
        let doubled: Vec<usize> = self.ranks.iter().map(|r| (r * 2.0).round() as usize).collect();
        let total: usize = doubled.iter().sum();
        let mut dist = vec![0.0f64; total + 1];
        dist[0] = 1.0;
        let mut reach = 0;
        for &r in &doubled {
            for s in (0..=reach).rev() {
                let mass = dist[s] * 0.5;
                dist[s] = mass;
                dist[s + r] += mass;
            }
            reach += r;
        }
        let observed = (self.w_plus() * 2.0).round() as i64;
        let centre = total as i64;
        let distance = (2 * observed - centre).abs();
        let p: f64 = dist
            .iter()
            .enumerate()
            .filter(|(s, _)| (2 * *s as i64 - centre).abs() >= distance)
            .map(|(_, m)| m)
            .sum();
        p.min(1.0)
    }

    /// Normal approximation with tie correction and continuity correction.
    pub fn normal_p(&self) -> f64 {
        let n = self.n() as f64;
        let mean = n * (n + 1.0) / 4.0;
        let tie_term: f64 = self
            .tie_groups
            .iter()
            .map(|&t| {
                let t = t as f64;
                t * t * t - t
            })
            .sum();
        let variance = n * (n + 1.0) * (2.0 * n + 1.0) / 24.0 - tie_term / 48.0;
        if variance <= 0.0 {
            return 1.0;
        }
        let z = ((self.w_plus() - mean).abs() - 0.5).max(0.0) / variance.sqrt();
        erfc(z / std::f64::consts::SQRT_2).min(1.0)
    }
}

/// Which p-value route to take.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MethodChoice {
    /// Exact up to [`EXACT_THRESHOLD`] effective pairs, normal above.
    #[default]
    Auto,
    Exact,
    Normal,
}

pub fn wilcoxon_signed_rank(samples: &PairedSamples) -> Result<WilcoxonResult, StatsError> {
    wilcoxon_signed_rank_with(samples, MethodChoice::Auto)
}

pub fn wilcoxon_signed_rank_with(
    samples: &PairedSamples,
    choice: MethodChoice,
) -> Result<WilcoxonResult, StatsError> {
    if samples.pairs.is_empty() {
        return Err(StatsError::NoPairs);
    }
    if let Some(i) = samples
        .pairs
        .iter()
        .position(|(a, b)| !a.is_finite() || !b.is_finite())
    {
        return Err(StatsError::NonFinite(i));
    }
    let ranks = SignedRanks::from_differences(&samples.differences());
    let n = ranks.n();
    if n == 0 {
        return Ok(WilcoxonResult {
            n_effective: 0,
            w_statistic: 0.0,
            p_two_sided: 1.0,
            method: Method::Exact,
        });
    }
    let method = match choice {
        MethodChoice::Exact => Method::Exact,
        MethodChoice::Normal => Method::NormalApproximation,
        MethodChoice::Auto if n <= EXACT_THRESHOLD => Method::Exact,
        MethodChoice::Auto => Method::NormalApproximation,
    };
    let p_two_sided = match method {
        Method::Exact => ranks.exact_p(),
        Method::NormalApproximation => ranks.normal_p(),
    };
    Ok(WilcoxonResult {
        n_effective: n,
        w_statistic: ranks.w_plus(),
        p_two_sided,
        method,
    })
}
