//! Min-entropy estimates for the hashed substrings.
//!
//! For each subset, the fractional Hamming distances between substrings of
//! distinct identities give a mean `mu` and deviation `sigma`; the estimate is
//!
//! ```text
//! e = -mu (1 - mu) log2(max(mu, 1 - mu)) / sigma^2
//! ```
//!
//! which equals `k` for iid uniform bits (`mu = 1/2`, `sigma^2 = 1/(4k)`).

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::Path;

use rand::Rng as _;
use rayon::prelude::*;

use crate::bits::BitString;
use crate::error::{Error, Result};
use crate::population::{LabeledSample, Session};
use crate::rng;
use crate::sampling::SubsetPlan;

pub const DEFAULT_PAIR_BUDGET: usize = 1_000_000;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UnlikeStats {
    pub mu: f64,
    pub sigma: f64,
}

/// Mean and (population) standard deviation of fractional Hamming distance
/// over distinct pairs of `substrings`. All pairs are used when there are at
/// most `pair_budget` of them; otherwise `pair_budget` pairs are drawn
/// uniformly with replacement.
pub fn unlike_statistics(
    substrings: &[BitString],
    pair_budget: usize,
    seed: u64,
) -> Result<UnlikeStats> {
    let count = substrings.len();
    if count < 2 {
        return Err(Error::Estimation(format!(
            "unlike statistics need at least 2 identities, got {count}"
        )));
    }
    let k = substrings[0].len();
    if let Some(bad) = substrings.iter().find(|s| s.len() != k) {
        return Err(Error::LengthMismatch {
            expected: k,
            actual: bad.len(),
        });
    }
    if k == 0 {
        return Err(Error::Estimation("empty substrings".into()));
    }
    let distance = |a: usize, b: usize| -> u64 {
        substrings[a]
            .words()
            .iter()
            .zip(substrings[b].words())
            .map(|(x, y)| u64::from((x ^ y).count_ones()))
            .sum()
    };
    let total_pairs = count * (count - 1) / 2;
    let (mut sum, mut sum_sq, mut pairs) = (0u64, 0u128, 0u64);
    let mut add = |d: u64| {
        sum += d;
        sum_sq += u128::from(d * d);
        pairs += 1;
    };
    if total_pairs <= pair_budget.max(1) {
        for a in 0..count {
            for b in a + 1..count {
                add(distance(a, b));
            }
        }
    } else {
        let mut r = rng::seeded(seed);
        for _ in 0..pair_budget {
            let a = r.random_range(0..count);
            let mut b = r.random_range(0..count - 1);
            if b >= a {
                b += 1;
            }
            add(distance(a, b));
        }
    }
    let p = pairs as f64;
    let mean = sum as f64 / p;
    let var = (sum_sq as f64 / p - mean * mean).max(0.0);
    Ok(UnlikeStats {
        mu: mean / k as f64,
        sigma: var.sqrt() / k as f64,
    })
}

/// The Daugman-style degrees-of-freedom estimate in bits.
pub fn estimate_min_entropy(mu: f64, sigma: f64) -> Result<f64> {
    if !(mu > 0.0 && mu < 1.0) {
        return Err(Error::Degenerate(format!(
            "mu_unlike must lie in (0, 1), got {mu}"
        )));
    }
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::Degenerate(format!(
            "sigma_unlike must be positive, got {sigma}"
        )));
    }
    Ok(-mu * (1.0 - mu) * mu.max(1.0 - mu).log2() / (sigma * sigma))
}

#[derive(Clone, Debug, PartialEq)]
pub struct SubsetEntropy {
    pub mu_unlike: f64,
    pub sigma_unlike: f64,
    pub e_bits: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EntropyReport {
    pub k: usize,
    pub per_subset: Vec<SubsetEntropy>,
    pub min: f64,
    pub max: f64,
    pub mean: f64,
}

impl EntropyReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("subset_index,mu_unlike,sigma_unlike,e_bits\n");
        for (i, s) in self.per_subset.iter().enumerate() {
            writeln!(out, "{i},{},{},{}", s.mu_unlike, s.sigma_unlike, s.e_bits).unwrap();
        }
        writeln!(out, "min,,,{}", self.min).unwrap();
        writeln!(out, "max,,,{}", self.max).unwrap();
        writeln!(out, "mean,,,{}", self.mean).unwrap();
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct EntropyOptions {
    pub pair_budget: usize,
    pub seed: u64,
}

impl Default for EntropyOptions {
    fn default() -> Self {
        Self {
            pair_budget: DEFAULT_PAIR_BUDGET,
            seed: 0,
        }
    }
}

/// One substring statistic per subset, using the first enroll-session sample
/// of each identity.
pub fn entropy_report(
    plan: &SubsetPlan,
    samples: &[LabeledSample],
    opts: &EntropyOptions,
) -> Result<EntropyReport> {
    let mut seen = HashSet::new();
    let mut strings = Vec::new();
    for s in samples.iter().filter(|s| s.session == Session::Enroll) {
        let bits = s
            .bits()
            .ok_or_else(|| Error::Estimation("entropy report needs bit-string samples".into()))?;
        if bits.len() != plan.n() {
            return Err(Error::LengthMismatch {
                expected: plan.n(),
                actual: bits.len(),
            });
        }
        if seen.insert(s.id) {
            strings.push(bits);
        }
    }
    let subsets: Vec<&[u16]> = plan.subsets().collect();
    let per_subset = subsets
        .par_iter()
        .enumerate()
        .map(|(i, subset)| {
            let idx: Vec<usize> = subset.iter().map(|&x| usize::from(x)).collect();
            let subs: Vec<BitString> = strings.iter().map(|v| v.select(&idx)).collect();
            let stats = unlike_statistics(
                &subs,
                opts.pair_budget,
                rng::derive_seed(opts.seed, i as u64),
            )?;
            Ok(SubsetEntropy {
                mu_unlike: stats.mu,
                sigma_unlike: stats.sigma,
                e_bits: estimate_min_entropy(stats.mu, stats.sigma)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let es = per_subset.iter().map(|s| s.e_bits);
    let min = es.clone().fold(f64::INFINITY, f64::min);
    let max = es.clone().fold(f64::NEG_INFINITY, f64::max);
    let mean = es.sum::<f64>() / per_subset.len() as f64;
    Ok(EntropyReport {
        k: plan.k(),
        per_subset,
        min,
        max,
        mean,
    })
}
