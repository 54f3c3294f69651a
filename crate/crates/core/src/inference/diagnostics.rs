//! Split R-hat (rank-normalized bulk and tail, plus the classic form) and bulk
//! effective sample size.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamDiagnostic {
    pub parameter: String,
    /// `None` when every draw is identical.
    pub rhat: Option<f64>,
    pub ess_bulk: Option<f64>,
}

impl ParamDiagnostic {
    pub fn degenerate(&self) -> bool {
        self.rhat.is_none()
    }
}

/// `chains[m][i]` is draw `i` of chain `m` for a single scalar parameter.
pub fn diagnose(parameter: &str, chains: &[Vec<f64>]) -> Result<ParamDiagnostic> {
    if chains.len() < 2 {
        return Err(Error::invalid(format!("diagnostics need at least 2 chains, got {}", chains.len())));
    }
    let n = chains.iter().map(Vec::len).min().unwrap_or(0);
    if n < 4 {
        return Err(Error::invalid(format!("diagnostics need at least 4 draws per chain, got {n}")));
    }
    if chains.iter().any(|c| c.len() != n) {
        return Err(Error::invalid("chains have unequal lengths"));
    }
    let first = chains[0][0];
    if chains.iter().flatten().all(|&v| v == first) {
        return Ok(ParamDiagnostic { parameter: parameter.to_string(), rhat: None, ess_bulk: None });
    }
    let split = split_chains(chains);
    let z = rank_normalize(&split);
    let bulk = rhat_raw(&z);
    let pooled: Vec<f64> = split.iter().flatten().copied().collect();
    let med = median(&pooled);
    let folded: Vec<Vec<f64>> = split.iter().map(|c| c.iter().map(|v| (v - med).abs()).collect()).collect();
    let tail = rhat_raw(&rank_normalize(&folded));
    // Rank normalization caps R-hat for fully separated chains (below 2 for two chains),
    // so the classic split R-hat on the raw draws is reported when larger.
    let classic = rhat_raw(&split);
    Ok(ParamDiagnostic {
        parameter: parameter.to_string(),
        rhat: Some(bulk.max(tail).max(classic)),
        ess_bulk: Some(ess_raw(&z)),
    })
}

/// Halves of every chain; the middle draw of odd-length chains is dropped.
fn split_chains(chains: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let half = chains[0].len() / 2;
    let n = chains[0].len();
    chains.iter().flat_map(|c| [c[..half].to_vec(), c[n - half..].to_vec()]).collect()
}

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Pooled average ranks mapped through the normal quantile `(r - 3/8) / (S + 1/4)`.
fn rank_normalize(chains: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let flat: Vec<f64> = chains.iter().flatten().copied().collect();
    let s = flat.len();
    let mut order: Vec<usize> = (0..s).collect();
    order.sort_by(|&a, &b| flat[a].total_cmp(&flat[b]));
    let mut ranks = vec![0.0; s];
    let mut i = 0;
    while i < s {
        let mut j = i;
        while j + 1 < s && flat[order[j + 1]] == flat[order[i]] {
            j += 1;
        }
        let avg = 0.5 * ((i + 1) + (j + 1)) as f64;
        for &k in &order[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    let normal = Normal::standard();
    let mut out = Vec::with_capacity(chains.len());
    let mut k = 0;
    for c in chains {
        out.push(
            c.iter()
                .map(|_| {
                    let r = ranks[k];
                    k += 1;
                    normal.inverse_cdf((r - 0.375) / (s as f64 + 0.25))
                })
                .collect(),
        );
    }
    out
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn rhat_raw(chains: &[Vec<f64>]) -> f64 {
    let m = chains.len() as f64;
    let n = chains[0].len() as f64;
    let means: Vec<f64> = chains.iter().map(|c| mean(c)).collect();
    let grand = mean(&means);
    let b = n / (m - 1.0) * means.iter().map(|x| (x - grand).powi(2)).sum::<f64>();
    let w = chains
        .iter()
        .zip(&means)
        .map(|(c, mu)| c.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / (n - 1.0))
        .sum::<f64>()
        / m;
    if w <= 0.0 {
        return if b <= 0.0 { 1.0 } else { f64::INFINITY };
    }
    (((n - 1.0) / n * w + b / n) / w).sqrt()
}

/// Multi-chain ESS with Geyer's initial positive sequence, truncated at the first
/// negative pair sum and made monotone.
fn ess_raw(chains: &[Vec<f64>]) -> f64 {
    let m = chains.len();
    let n = chains[0].len();
    let means: Vec<f64> = chains.iter().map(|c| mean(c)).collect();
    let acov = |lag: usize| -> f64 {
        chains
            .iter()
            .zip(&means)
            .map(|(c, mu)| (0..n - lag).map(|i| (c[i] - mu) * (c[i + lag] - mu)).sum::<f64>() / n as f64)
            .sum::<f64>()
            / m as f64
    };
    let acov0 = acov(0);
    let mean_var = acov0 * n as f64 / (n as f64 - 1.0);
    let grand = mean(&means);
    let between = if m > 1 {
        means.iter().map(|x| (x - grand).powi(2)).sum::<f64>() / (m as f64 - 1.0)
    } else {
        0.0
    };
    let var_plus = mean_var * (n as f64 - 1.0) / n as f64 + between;
    if var_plus <= 0.0 {
        return 0.0;
    }
    let rho = |lag: usize| 1.0 - (mean_var - acov(lag)) / var_plus;

    let mut sum = 0.0;
    let mut prev_pair = f64::INFINITY;
    let mut t = 0;
    while t + 1 < n {
        let r0 = if t == 0 { 1.0 } else { rho(t) };
        let pair = r0 + rho(t + 1);
        if pair < 0.0 {
            break;
        }
        let pair = pair.min(prev_pair);
        sum += pair;
        prev_pair = pair;
        t += 2;
    }
    let tau = (-1.0 + 2.0 * sum).max(1.0 / ((m * n) as f64).log10().max(1.0));
    let total = (m * n) as f64;
    (total / tau).min(total * total.log10().max(1.0))
}
