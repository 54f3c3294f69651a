//! Posterior summaries: coverage maps per empowerment profile, effect maps per field
//! and coverage conditional on empowerment level.

use serde::{Deserialize, Serialize};

use super::sampler::PosteriorDraws;
use crate::error::{Error, Result};
use crate::model::{inverse_logit, ChildRecord, DesignRow, Profile};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub mean: f64,
    pub sd: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FieldSummary {
    pub mean: f64,
    pub sd: f64,
    pub q05: f64,
    pub q95: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub unit: usize,
    pub time: usize,
    /// Coverage probability per profile, indexed by [`Profile::index`].
    pub pi: [Moments; 9],
    /// Coverage averaged over profiles with the wave's class composition as weights.
    pub marginal: Option<Moments>,
    pub gamma: [FieldSummary; 4],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub n_units: usize,
    pub n_times: usize,
    /// Cells in `t * n_units + unit` order.
    pub cells: Vec<CellSummary>,
    pub alpha: Vec<Moments>,
}

fn moments(values: &[f64]) -> Moments {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let sd = if values.len() > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    Moments { mean, sd }
}

/// Linearly interpolated sample quantile of sorted values.
fn quantile(sorted: &[f64], p: f64) -> f64 {
    let h = p * (sorted.len() - 1) as f64;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

fn field_summary(values: &mut [f64]) -> FieldSummary {
    let m = moments(values);
    values.sort_by(f64::total_cmp);
    FieldSummary { mean: m.mean, sd: m.sd, q05: quantile(values, 0.05), q95: quantile(values, 0.95) }
}

/// Share of each (dm, hc) profile among the records of every wave. Waves without
/// records fall back to the pooled composition.
pub fn profile_weights(records: &[ChildRecord], n_times: usize) -> Result<Vec<[f64; 9]>> {
    let mut counts = vec![[0.0; 9]; n_times];
    let mut pooled = [0.0; 9];
    for r in records {
        if r.time >= n_times {
            return Err(Error::invalid(format!("record {} has wave {} >= {n_times}", r.child_id, r.time)));
        }
        if r.dm_class > 2 || r.hc_class > 2 {
            return Err(Error::invalid(format!("record {} has an empowerment class outside 0-2", r.child_id)));
        }
        let p = Profile { dm: r.dm_class, hc: r.hc_class }.index();
        counts[r.time][p] += 1.0;
        pooled[p] += 1.0;
    }
    let normalize = |c: [f64; 9]| {
        let total: f64 = c.iter().sum();
        c.map(|v| v / total)
    };
    let pooled_total: f64 = pooled.iter().sum();
    if pooled_total == 0.0 {
        return Err(Error::invalid("no records to weight profiles by"));
    }
    Ok(counts.into_iter().map(|c| if c.iter().sum::<f64>() > 0.0 { normalize(c) } else { normalize(pooled) }).collect())
}

/// Per-cell posterior mean and sd of `inverse_logit(eta)` for every profile, computed
/// draw by draw, and posterior summaries of every field cell.
pub fn summarize(draws: &PosteriorDraws, weights: Option<&[[f64; 9]]>) -> Result<Summary> {
    let n_draws = draws.n_draws();
    if n_draws == 0 {
        return Err(Error::invalid("cannot summarize an empty set of draws"));
    }
    if let Some(w) = weights {
        if w.len() != draws.n_times {
            return Err(Error::invalid(format!("{} profile weight rows for {} waves", w.len(), draws.n_times)));
        }
    }
    let n_cells = draws.n_units * draws.n_times;
    let profiles: Vec<(usize, DesignRow)> = Profile::all().map(|p| (p.index(), p.design())).collect();
    let mut cells = Vec::with_capacity(n_cells);
    let mut pi_buf: Vec<Vec<f64>> = (0..9).map(|_| Vec::with_capacity(n_draws)).collect();
    let mut marginal_buf = Vec::with_capacity(n_draws);
    let mut gamma_buf: Vec<Vec<f64>> = (0..4).map(|_| Vec::with_capacity(n_draws)).collect();
    for cell in 0..n_cells {
        let time = cell / draws.n_units;
        pi_buf.iter_mut().for_each(Vec::clear);
        gamma_buf.iter_mut().for_each(Vec::clear);
        marginal_buf.clear();
        for s in draws.iter() {
            let mut marginal = 0.0;
            for (p, design) in &profiles {
                let pi = inverse_logit(s.eta_at(cell, design));
                pi_buf[*p].push(pi);
                if let Some(w) = weights {
                    marginal += w[time][*p] * pi;
                }
            }
            marginal_buf.push(marginal);
            for (buf, g) in gamma_buf.iter_mut().zip(&s.gamma) {
                buf.push(g[cell]);
            }
        }
        cells.push(CellSummary {
            unit: cell % draws.n_units,
            time,
            pi: std::array::from_fn(|p| moments(&pi_buf[p])),
            marginal: weights.map(|_| moments(&marginal_buf)),
            gamma: std::array::from_fn(|k| field_summary(&mut gamma_buf[k])),
        });
    }
    let n_alpha = draws.iter().next().map(|s| s.alpha.len()).unwrap_or(0);
    let alpha = (0..n_alpha).map(|a| moments(&draws.iter().map(|s| s.alpha[a]).collect::<Vec<_>>())).collect();
    Ok(Summary { n_units: draws.n_units, n_times: draws.n_times, cells, alpha })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dimension {
    DecisionMaking,
    Healthcare,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LevelCoverage {
    pub level: u8,
    pub time: usize,
    pub n_records: usize,
    pub coverage: f64,
}

/// Mean of `inverse_logit(eta_i)` over all (record, draw) pairs whose record has the
/// given class in the chosen dimension, per level and wave. Waves without records of a
/// level are omitted.
pub fn conditional_coverage(
    draws: &PosteriorDraws,
    records: &[ChildRecord],
    dimension: Dimension,
) -> Result<Vec<LevelCoverage>> {
    let n_draws = draws.n_draws();
    if n_draws == 0 {
        return Err(Error::invalid("no draws"));
    }
    let mut sums = vec![vec![(0usize, 0.0f64); draws.n_times]; 3];
    for r in records {
        if r.lga >= draws.n_units || r.time >= draws.n_times {
            return Err(Error::invalid(format!("record {} lies outside the fitted grid", r.child_id)));
        }
        let design = DesignRow::from_classes(r.dm_class, r.hc_class)?;
        let level = match dimension {
            Dimension::DecisionMaking => r.dm_class,
            Dimension::Healthcare => r.hc_class,
        } as usize;
        let cell = r.time * draws.n_units + r.lga;
        let total: f64 = draws.iter().map(|s| inverse_logit(s.eta_at(cell, &design))).sum();
        let e = &mut sums[level][r.time];
        e.0 += 1;
        e.1 += total / n_draws as f64;
    }
    let mut out = Vec::new();
    for (level, per_time) in sums.iter().enumerate() {
        if per_time.iter().all(|e| e.0 == 0) {
            return Err(Error::invalid(format!("no records at empowerment level {level}")));
        }
        for (time, &(n, s)) in per_time.iter().enumerate() {
            if n > 0 {
                out.push(LevelCoverage { level: level as u8, time, n_records: n, coverage: s / n as f64 });
            }
        }
    }
    Ok(out)
}
