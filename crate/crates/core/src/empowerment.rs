//! Empowerment index: recoding of survey items, one-factor extraction,
//! regression factor scores and per-wave tertile classes.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Decision-making items: who has the final say on large purchases, own healthcare,
/// the husband's earnings and family visits.
pub const DECISION_COLUMNS: [&str; 4] = ["dm_purchases", "dm_own_health", "dm_husband_money", "dm_family_visits"];

/// Healthcare-access barriers: permission, money, distance, not wanting to go alone.
pub const HEALTHCARE_COLUMNS: [&str; 4] = ["hc_permission", "hc_money", "hc_distance", "hc_alone"];

/// Maps the original decision codes (1 respondent alone, 2 jointly, 3 partner alone,
/// 4 someone else) to 1 = no part, 2 = participated, 3 = sole decision.
pub fn recode_decision(code: u8) -> Result<u8> {
    match code {
        1 => Ok(3),
        2 => Ok(2),
        3 | 4 => Ok(1),
        other => Err(Error::invalid(format!("decision-making code must be 1-4, got {other}"))),
    }
}

/// Healthcare items keep their coding: 1 = big problem, 2 = not a big problem.
pub fn recode_healthcare(code: u8) -> Result<u8> {
    match code {
        1 | 2 => Ok(code),
        other => Err(Error::invalid(format!("healthcare code must be 1 or 2, got {other}"))),
    }
}

pub fn recode_decision_items(items: &[u8; 4]) -> Result<[u8; 4]> {
    Ok([
        recode_decision(items[0])?,
        recode_decision(items[1])?,
        recode_decision(items[2])?,
        recode_decision(items[3])?,
    ])
}

pub fn recode_healthcare_items(items: &[u8; 4]) -> Result<[u8; 4]> {
    Ok([
        recode_healthcare(items[0])?,
        recode_healthcare(items[1])?,
        recode_healthcare(items[2])?,
        recode_healthcare(items[3])?,
    ])
}

/// One-factor solution on the item correlation matrix.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FactorModel {
    pub means: Vec<f64>,
    pub sds: Vec<f64>,
    pub loadings: Vec<f64>,
    pub uniquenesses: Vec<f64>,
    /// Leading eigenvalue of the correlation matrix.
    pub eigenvalue: f64,
    /// Share of total item variance carried by the factor.
    pub explained: f64,
    /// Regression-score weights `R^+ loadings`.
    pub weights: Vec<f64>,
}

/// Principal-factor extraction: the leading eigenvector of the Pearson correlation
/// matrix scaled by the square root of its eigenvalue, oriented so the loadings sum
/// to a non-negative value.
pub fn fit_factor_model(rows: &[Vec<f64>]) -> Result<FactorModel> {
    let p = rows.first().map(Vec::len).unwrap_or(0);
    if p < 2 {
        return Err(Error::invalid("factor model needs at least two items"));
    }
    if rows.len() < 10 {
        return Err(Error::invalid(format!("factor model needs at least 10 complete rows, got {}", rows.len())));
    }
    if rows.iter().any(|r| r.len() != p) {
        return Err(Error::invalid("rows have differing numbers of items"));
    }
    let n = rows.len() as f64;
    let means: Vec<f64> = (0..p).map(|k| rows.iter().map(|r| r[k]).sum::<f64>() / n).collect();
    let sds: Vec<f64> = (0..p)
        .map(|k| (rows.iter().map(|r| (r[k] - means[k]).powi(2)).sum::<f64>() / n).sqrt())
        .collect();
    if let Some(k) = sds.iter().position(|&s| !(s > 1e-12)) {
        return Err(Error::invalid(format!("item {k} has zero variance; correlation matrix is degenerate")));
    }
    let mut corr: DMatrix<f64> = DMatrix::zeros(p, p);
    for r in rows {
        let z: Vec<f64> = (0..p).map(|k| (r[k] - means[k]) / sds[k]).collect();
        for a in 0..p {
            for b in 0..p {
                corr[(a, b)] += z[a] * z[b] / n;
            }
        }
    }
    let eig = corr.clone().symmetric_eigen();
    let lead = (0..p)
        .max_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]).then(b.cmp(&a)))
        .expect("p >= 2");
    let eigenvalue = eig.eigenvalues[lead];
    let mut loadings: Vec<f64> = eig.eigenvectors.column(lead).iter().map(|v| v * eigenvalue.sqrt()).collect();
    if loadings.iter().sum::<f64>() < 0.0 {
        loadings.iter_mut().for_each(|l| *l = -*l);
    }
    let uniquenesses = loadings.iter().map(|l| 1.0 - l * l).collect();

    // Pseudo-inverse so that perfectly collinear items still score.
    let max_ev = eig.eigenvalues.max();
    let mut pinv: DMatrix<f64> = DMatrix::zeros(p, p);
    for k in 0..p {
        let ev = eig.eigenvalues[k];
        if ev > 1e-10 * max_ev {
            let v = eig.eigenvectors.column(k);
            pinv += (v * v.transpose()) / ev;
        }
    }
    let weights = (pinv * DVector::from_column_slice(&loadings)).iter().copied().collect();
    Ok(FactorModel { means, sds, loadings, uniquenesses, eigenvalue, explained: eigenvalue / p as f64, weights })
}

impl FactorModel {
    pub fn score(&self, row: &[f64]) -> Result<f64> {
        if row.len() != self.weights.len() {
            return Err(Error::invalid(format!("expected {} items, got {}", self.weights.len(), row.len())));
        }
        Ok(row
            .iter()
            .enumerate()
            .map(|(k, x)| self.weights[k] * (x - self.means[k]) / self.sds[k])
            .sum())
    }
}

/// Regression-method factor scores.
pub fn factor_scores(rows: &[Vec<f64>], model: &FactorModel) -> Result<Vec<f64>> {
    rows.iter().map(|r| model.score(r)).collect()
}

/// Classes from explicit boundaries: `s <= lower` -> 0, `s <= upper` -> 1, else 2.
pub fn classes_from_boundaries(scores: &[f64], lower: f64, upper: f64) -> Vec<u8> {
    scores.iter().map(|&s| if s <= lower { 0 } else if s <= upper { 1 } else { 2 }).collect()
}

/// Empirical tertile boundaries `(b1, b2)` of one wave: the order statistics at ranks
/// `ceil(n/3)` and `ceil(2n/3)`.
pub fn tertile_boundaries(scores: &[f64]) -> Result<(f64, f64)> {
    let n = scores.len();
    if n < 3 {
        return Err(Error::invalid(format!("a wave needs at least 3 observations for tertiles, got {n}")));
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok((sorted[n.div_ceil(3) - 1], sorted[(2 * n).div_ceil(3) - 1]))
}

/// Per-wave tertile classes. Ties at a boundary all receive the lower class.
pub fn assign_tertiles<W: Ord + Clone>(scores: &[f64], waves: &[W]) -> Result<Vec<u8>> {
    if scores.len() != waves.len() {
        return Err(Error::invalid("scores and wave labels differ in length"));
    }
    let mut groups: BTreeMap<W, Vec<usize>> = BTreeMap::new();
    for (i, w) in waves.iter().enumerate() {
        groups.entry(w.clone()).or_default().push(i);
    }
    let mut classes = vec![0u8; scores.len()];
    for idx in groups.values() {
        let wave_scores: Vec<f64> = idx.iter().map(|&i| scores[i]).collect();
        let (b1, b2) = tertile_boundaries(&wave_scores)?;
        for (&i, c) in idx.iter().zip(classes_from_boundaries(&wave_scores, b1, b2)) {
            classes[i] = c;
        }
    }
    Ok(classes)
}

/// One respondent's raw answers; `None` marks a missing item.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawResponses {
    pub survey_year: String,
    pub decision: [Option<u8>; 4],
    pub healthcare: [Option<u8>; 4],
}

impl RawResponses {
    fn complete(&self) -> Option<([u8; 4], [u8; 4])> {
        let d = [self.decision[0]?, self.decision[1]?, self.decision[2]?, self.decision[3]?];
        let h = [self.healthcare[0]?, self.healthcare[1]?, self.healthcare[2]?, self.healthcare[3]?];
        Some((d, h))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmpowermentAssignment {
    pub dm_class: u8,
    pub hc_class: u8,
    pub dm_score: f64,
    pub hc_score: f64,
}

/// Fixed class boundaries replacing the per-wave empirical tertiles.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct IndexConfig {
    #[serde(default)]
    pub dm_boundaries: Option<[f64; 2]>,
    #[serde(default)]
    pub hc_boundaries: Option<[f64; 2]>,
}

#[derive(Debug, Clone)]
pub struct EmpowermentIndex {
    /// Positions (in the input) of the complete rows that were scored.
    pub kept: Vec<usize>,
    pub assignments: Vec<EmpowermentAssignment>,
    pub decision_model: FactorModel,
    pub healthcare_model: FactorModel,
}

/// Recodes, drops incomplete rows, fits one factor per dimension on the pooled waves and
/// splits each wave's scores into tertiles.
pub fn build_index(responses: &[RawResponses], config: &IndexConfig) -> Result<EmpowermentIndex> {
    let mut kept = Vec::new();
    let mut dm_rows = Vec::new();
    let mut hc_rows = Vec::new();
    for (i, r) in responses.iter().enumerate() {
        if let Some((d, h)) = r.complete() {
            let d = recode_decision_items(&d).map_err(|e| Error::invalid(format!("row {}: {e}", i + 1)))?;
            let h = recode_healthcare_items(&h).map_err(|e| Error::invalid(format!("row {}: {e}", i + 1)))?;
            kept.push(i);
            dm_rows.push(d.iter().map(|&v| v as f64).collect::<Vec<_>>());
            hc_rows.push(h.iter().map(|&v| v as f64).collect::<Vec<_>>());
        }
    }
    let decision_model = fit_factor_model(&dm_rows)?;
    let healthcare_model = fit_factor_model(&hc_rows)?;
    let dm_scores = factor_scores(&dm_rows, &decision_model)?;
    let hc_scores = factor_scores(&hc_rows, &healthcare_model)?;
    let waves: Vec<&str> = kept.iter().map(|&i| responses[i].survey_year.as_str()).collect();
    let classify = |scores: &[f64], fixed: Option<[f64; 2]>| match fixed {
        Some([lo, hi]) => Ok(classes_from_boundaries(scores, lo, hi)),
        None => assign_tertiles(scores, &waves),
    };
    let dm_classes = classify(&dm_scores, config.dm_boundaries)?;
    let hc_classes = classify(&hc_scores, config.hc_boundaries)?;
    let assignments = (0..kept.len())
        .map(|k| EmpowermentAssignment {
            dm_class: dm_classes[k],
            hc_class: hc_classes[k],
            dm_score: dm_scores[k],
            hc_score: hc_scores[k],
        })
        .collect();
    Ok(EmpowermentIndex { kept, assignments, decision_model, healthcare_model })
}

/// Counts per wave and class for both dimensions: `wave -> ([dm counts], [hc counts])`.
pub fn class_distribution<W: Ord + Clone>(
    assignments: &[EmpowermentAssignment],
    waves: &[W],
) -> BTreeMap<W, ([usize; 3], [usize; 3])> {
    let mut out: BTreeMap<W, ([usize; 3], [usize; 3])> = BTreeMap::new();
    for (a, w) in assignments.iter().zip(waves) {
        let e = out.entry(w.clone()).or_default();
        e.0[a.dm_class as usize] += 1;
        e.1[a.hc_class as usize] += 1;
    }
    out
}
