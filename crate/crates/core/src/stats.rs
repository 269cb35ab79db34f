//! One-tailed Wilcoxon signed-rank test.
//!
//! Zero differences are discarded and tied magnitudes receive average ranks.
//! Up to [`EXACT_MAX_N`] non-zero differences the tail probability is exact,
//! computed by counting sign assignments over doubled (integer) ranks. Larger
//! samples use the normal approximation with tie-corrected variance and a 0.5
//! continuity correction.

use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};

pub const EXACT_MAX_N: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Alternative {
    /// Differences tend to be positive.
    Greater,
    /// Differences tend to be negative.
    Less,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Exact,
    NormalApprox,
    /// Every difference was zero; reported with p = 1.
    Degenerate,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WilcoxonResult {
    /// Sum of the ranks of positive differences (W⁺).
    pub statistic: f64,
    pub p_one_tailed: f64,
    pub n_effective: usize,
    pub method: Method,
}

impl WilcoxonResult {
    /// Placeholder used when a sample has no non-zero differences.
    pub fn degenerate() -> Self {
        WilcoxonResult {
            statistic: 0.0,
            p_one_tailed: 1.0,
            n_effective: 0,
            method: Method::Degenerate,
        }
    }

    pub fn significant(&self, alpha: f64) -> bool {
        self.p_one_tailed < alpha
    }
}

/// Signed ranks of the non-zero differences, doubled so ties stay integral.
struct SignedRanks {
    /// Doubled rank of each non-zero difference, in sorted-magnitude order.
    doubled: Vec<u64>,
    positive: Vec<bool>,
    /// Σ (t³ − t) over tie groups.
    tie_term: f64,
}

impl SignedRanks {
    fn new(diffs: &[f64]) -> Result<Self> {
        if diffs.iter().any(|d| !d.is_finite()) {
            return Err(Error::InvalidArgument("non-finite difference".into()));
        }
        let mut nonzero: Vec<f64> = diffs.iter().copied().filter(|&d| d != 0.0).collect();
        if nonzero.is_empty() {
            return Err(Error::DegenerateSample("all differences are zero".into()));
        }
        nonzero.sort_by(|a, b| a.abs().total_cmp(&b.abs()));
        let n = nonzero.len();
        let mut doubled = vec![0u64; n];
        let mut tie_term = 0.0;
        let mut start = 0;
        while start < n {
            let mut end = start;
            while end + 1 < n && nonzero[end + 1].abs() == nonzero[start].abs() {
                end += 1;
            }
            // average of 1-based ranks start+1 ..= end+1, doubled
            let r2 = (start + end + 2) as u64;
            doubled[start..=end].fill(r2);
            let t = (end - start + 1) as f64;
            tie_term += t * t * t - t;
            start = end + 1;
        }
        Ok(SignedRanks {
            doubled,
            positive: nonzero.iter().map(|&d| d > 0.0).collect(),
            tie_term,
        })
    }

    fn n(&self) -> usize {
        self.doubled.len()
    }

    fn w_plus_doubled(&self) -> u64 {
        self.doubled
            .iter()
            .zip(&self.positive)
            .filter(|(_, &p)| p)
            .map(|(r, _)| r)
            .sum()
    }
}

pub fn wilcoxon_one_tailed(diffs: &[f64], alternative: Alternative) -> Result<WilcoxonResult> {
    let ranks = SignedRanks::new(diffs)?;
    let n = ranks.n();
    let w2 = ranks.w_plus_doubled();
    let statistic = w2 as f64 / 2.0;
    let (p, method) = if n <= EXACT_MAX_N {
        (exact_tail(&ranks.doubled, w2, alternative), Method::Exact)
    } else {
        (normal_tail(n, statistic, ranks.tie_term, alternative), Method::NormalApprox)
    };
    Ok(WilcoxonResult {
        statistic,
        p_one_tailed: p.clamp(0.0, 1.0),
        n_effective: n,
        method,
    })
}

/// Normal approximation regardless of `n`, with tie and continuity
/// corrections; the large-sample branch of [`wilcoxon_one_tailed`].
pub fn wilcoxon_normal_approx(diffs: &[f64], alternative: Alternative) -> Result<WilcoxonResult> {
    let ranks = SignedRanks::new(diffs)?;
    let n = ranks.n();
    let statistic = ranks.w_plus_doubled() as f64 / 2.0;
    Ok(WilcoxonResult {
        statistic,
        p_one_tailed: normal_tail(n, statistic, ranks.tie_term, alternative).clamp(0.0, 1.0),
        n_effective: n,
        method: Method::NormalApprox,
    })
}

/// Exact tail by counting, for every doubled sum, the sign assignments that produce it.
fn exact_tail(doubled: &[u64], observed: u64, alternative: Alternative) -> f64 {
    let total: u64 = doubled.iter().sum();
    let mut counts = vec![0f64; total as usize + 1];
    counts[0] = 1.0;
    let mut reach = 0usize;
    for &r in doubled {
        let r = r as usize;
        for s in (0..=reach).rev() {
            let c = counts[s];
            if c != 0.0 {
                counts[s + r] += c;
            }
        }
        reach += r;
    }
    let tail: f64 = match alternative {
        Alternative::Greater => counts[observed as usize..].iter().sum(),
        Alternative::Less => counts[..=observed as usize].iter().sum(),
    };
    tail / 2f64.powi(doubled.len() as i32)
}

fn normal_tail(n: usize, w_plus: f64, tie_term: f64, alternative: Alternative) -> f64 {
    let n = n as f64;
    let mean = n * (n + 1.0) / 4.0;
    let var = n * (n + 1.0) * (2.0 * n + 1.0) / 24.0 - tie_term / 48.0;
    let sd = var.sqrt();
    match alternative {
        Alternative::Greater => {
            let z = (w_plus - mean - 0.5) / sd;
            0.5 * erfc(z / std::f64::consts::SQRT_2)
        }
        Alternative::Less => {
            let z = (w_plus - mean + 0.5) / sd;
            0.5 * erfc(-z / std::f64::consts::SQRT_2)
        }
    }
}

/// Tail probability by brute-force enumeration of all 2ⁿ sign assignments.
/// Ranks are recomputed by direct counting so this shares no code with the
/// production path. Refuses more than [`EXACT_MAX_N`] non-zero differences.
pub fn exact_wilcoxon_oracle(diffs: &[f64], alternative: Alternative) -> Result<f64> {
    let nonzero: Vec<f64> = diffs.iter().copied().filter(|&d| d != 0.0).collect();
    let n = nonzero.len();
    if n == 0 {
        return Err(Error::DegenerateSample("all differences are zero".into()));
    }
    if n > EXACT_MAX_N {
        return Err(Error::InvalidArgument(format!(
            "exact enumeration refused for n = {n} > {EXACT_MAX_N}"
        )));
    }
    let ranks: Vec<f64> = nonzero
        .iter()
        .map(|d| {
            let below = nonzero.iter().filter(|o| o.abs() < d.abs()).count() as f64;
            let equal = nonzero.iter().filter(|o| o.abs() == d.abs()).count() as f64;
            below + (equal + 1.0) / 2.0
        })
        .collect();
    let observed: f64 = ranks
        .iter()
        .zip(&nonzero)
        .filter(|(_, d)| **d > 0.0)
        .map(|(r, _)| r)
        .sum();
    let mut hits = 0u64;
    for mask in 0u64..(1u64 << n) {
        let w: f64 = (0..n).filter(|i| mask >> i & 1 == 1).map(|i| ranks[i]).sum();
        let hit = match alternative {
            Alternative::Greater => w >= observed - 1e-9,
            Alternative::Less => w <= observed + 1e-9,
        };
        if hit {
            hits += 1;
        }
    }
    Ok(hits as f64 / (1u64 << n) as f64)
}
