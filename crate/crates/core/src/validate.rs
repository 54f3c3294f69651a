//! Aggregation-based adequacy check (state-level predicted versus empirical coverage)
//! and simulation-based calibration of the sampler.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::graph::AdjacencyGraph;
use crate::inference::{run_chain, FitData};
use crate::latent::{FieldHyper, FieldPrior, HyperPriorSpec, LogGamma, NormalPrior, PrecisionTarget};
use crate::model::{inverse_logit, ChildRecord, Field, InterceptMode, ModelState, Outcomes, Profile, Vaccine};
use crate::rng::{derive_seed, stream, Purpose};
use crate::simulate::simulate_geography;

/// Unweighted mean of unit-level coverage over each state's units, per wave.
///
/// `pi_hat` is indexed by cell `t * n_units + unit`; the result by `t * n_states + state`.
pub fn state_aggregate(pi_hat: &[Option<f64>], graph: &AdjacencyGraph, n_times: usize) -> Result<Vec<f64>> {
    let n = graph.n_units();
    if pi_hat.len() != n * n_times {
        return Err(Error::invalid(format!("{} predictions for {} cells", pi_hat.len(), n * n_times)));
    }
    let members = graph.state_members();
    let mut out = Vec::with_capacity(members.len() * n_times);
    for t in 0..n_times {
        for (s, units) in members.iter().enumerate() {
            let mut sum = 0.0;
            for &j in units {
                sum += pi_hat[t * n + j].ok_or_else(|| {
                    Error::invalid(format!(
                        "unit `{}` (state `{}`) has no prediction for wave {t}",
                        graph.unit_ids()[j],
                        graph.state_names()[s]
                    ))
                })?;
            }
            out.push(sum / units.len() as f64);
        }
    }
    Ok(out)
}

/// Pooled share of vaccinated children among all observed children of each state and
/// wave; `None` where no child was observed.
pub fn empirical_prevalence(
    records: &[ChildRecord],
    graph: &AdjacencyGraph,
    n_times: usize,
    vaccine: Vaccine,
) -> Result<Vec<Option<f64>>> {
    let s = graph.n_states();
    let mut counts = vec![(0usize, 0usize); s * n_times];
    for r in records {
        if r.lga >= graph.n_units() || r.time >= n_times {
            return Err(Error::invalid(format!("record {} lies outside the graph or waves", r.child_id)));
        }
        let e = &mut counts[r.time * s + graph.state_of(r.lga)];
        e.0 += r.y(vaccine) as usize;
        e.1 += 1;
    }
    Ok(counts.into_iter().map(|(y, n)| (n > 0).then(|| y as f64 / n as f64)).collect())
}

/// Pearson correlation of aligned pairs.
pub fn coverage_correlation(p_hat: &[f64], e_hat: &[f64]) -> Result<f64> {
    if p_hat.len() != e_hat.len() {
        return Err(Error::invalid("prediction and prevalence vectors differ in length"));
    }
    if p_hat.len() < 3 {
        return Err(Error::invalid(format!("correlation needs at least 3 pairs, got {}", p_hat.len())));
    }
    let n = p_hat.len() as f64;
    let mp = p_hat.iter().sum::<f64>() / n;
    let me = e_hat.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (p, e) in p_hat.iter().zip(e_hat) {
        sxy += (p - mp) * (e - me);
        sxx += (p - mp).powi(2);
        syy += (e - me).powi(2);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::invalid("correlation undefined: a vector has zero variance"));
    }
    Ok(sxy / (sxx * syy).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationPoint {
    pub state: usize,
    pub time: usize,
    pub p_hat: f64,
    pub e_hat: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub vaccine: Vaccine,
    /// Scatter data, including state-waves without observations.
    pub points: Vec<ValidationPoint>,
    pub pooled_r: Option<f64>,
    pub pooled_pairs: usize,
    /// Per-wave correlation; `None` when fewer than 3 pairs or a constant vector.
    pub per_wave_r: Vec<Option<f64>>,
}

/// Compares state-aggregated predictions with empirical prevalence, pooled over waves
/// and wave by wave.
pub fn validate_vaccine(
    pi_hat: &[Option<f64>],
    records: &[ChildRecord],
    graph: &AdjacencyGraph,
    n_times: usize,
    vaccine: Vaccine,
) -> Result<ValidationReport> {
    let p = state_aggregate(pi_hat, graph, n_times)?;
    let e = empirical_prevalence(records, graph, n_times, vaccine)?;
    let s = graph.n_states();
    let points: Vec<ValidationPoint> =
        (0..p.len()).map(|i| ValidationPoint { state: i % s, time: i / s, p_hat: p[i], e_hat: e[i] }).collect();
    let pairs = |filter: &dyn Fn(&ValidationPoint) -> bool| -> (Vec<f64>, Vec<f64>) {
        points.iter().filter(|q| filter(q) && q.e_hat.is_some()).map(|q| (q.p_hat, q.e_hat.unwrap())).unzip()
    };
    let (pp, ee) = pairs(&|_| true);
    let pooled_r = coverage_correlation(&pp, &ee).ok();
    let per_wave_r = (0..n_times)
        .map(|t| {
            let (a, b) = pairs(&|q| q.time == t);
            coverage_correlation(&a, &b).ok()
        })
        .collect();
    Ok(ValidationReport { vaccine, points, pooled_r, pooled_pairs: pp.len(), per_wave_r })
}

/// Settings of a simulation-based calibration experiment. Truth and fit share the
/// hyperprior and intercept prior, so the prior must be proper and informative enough
/// for truths to stay in a numerically sensible range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SbcConfig {
    pub replications: usize,
    pub n_units: usize,
    pub n_times: usize,
    pub children_per_cell: usize,
    pub warmup: usize,
    /// Posterior draws kept per replication; ranks take values `0..=draws`.
    pub draws: usize,
    pub thin: usize,
    pub bins: usize,
    pub seed: u64,
    pub hyperprior: HyperPriorSpec,
    pub alpha_variance: f64,
    /// Field whose hyperparameters and cells are monitored.
    pub field: Field,
    pub freeze_auxiliary: bool,
}

impl Default for SbcConfig {
    fn default() -> Self {
        SbcConfig {
            replications: 200,
            n_units: 9,
            n_times: 2,
            children_per_cell: 30,
            warmup: 300,
            draws: 99,
            thin: 10,
            bins: 10,
            seed: 1,
            hyperprior: HyperPriorSpec {
                log_tau: LogGamma { shape: 5.0, rate: 5.0 },
                theta1: LogGamma { shape: 5.0, rate: 5.0 },
                theta2: NormalPrior { mean: 0.0, sd: 0.8 },
                precision_target: PrecisionTarget::Icar,
            },
            alpha_variance: 1.0,
            field: Field::HighHealthcare,
            freeze_auxiliary: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SbcParameter {
    pub name: String,
    pub ranks: Vec<usize>,
    pub histogram: Vec<usize>,
    pub chi_square: f64,
    pub p_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SbcReport {
    pub replications: usize,
    pub parameters: Vec<SbcParameter>,
}

impl SbcReport {
    /// True when every monitored parameter passes the uniformity test at `alpha`.
    pub fn uniform(&self, alpha: f64) -> bool {
        self.parameters.iter().all(|p| p.p_value > alpha)
    }
}

/// Chi-square goodness-of-fit p-value of ranks in `0..=max_rank` against uniformity.
pub fn rank_uniformity(ranks: &[usize], max_rank: usize, bins: usize) -> Result<(Vec<usize>, f64, f64)> {
    if ranks.is_empty() || bins < 2 {
        return Err(Error::invalid("uniformity test needs ranks and at least two bins"));
    }
    let levels = max_rank + 1;
    if !levels.is_multiple_of(bins) {
        return Err(Error::invalid(format!("{levels} rank levels do not split into {bins} equal bins")));
    }
    let mut hist = vec![0usize; bins];
    for &r in ranks {
        if r > max_rank {
            return Err(Error::invalid(format!("rank {r} exceeds {max_rank}")));
        }
        hist[r * bins / levels] += 1;
    }
    let expected = ranks.len() as f64 / bins as f64;
    let stat: f64 = hist.iter().map(|&o| (o as f64 - expected).powi(2) / expected).sum();
    let p = 1.0 - ChiSquared::new((bins - 1) as f64).expect("positive dof").cdf(stat);
    Ok((hist, stat, p))
}

/// Draws a full generating state from the fitting prior.
fn prior_state(
    prior: &FieldPrior,
    config: &SbcConfig,
    rng: &mut rand_chacha::ChaCha8Rng,
) -> Result<ModelState> {
    use rand_distr::{Distribution, StandardNormal};
    let mut state = ModelState::zeros(prior.n_units(), prior.n_times(), InterceptMode::PerCell);
    for a in state.alpha.iter_mut() {
        let z: f64 = StandardNormal.sample(rng);
        *a = config.alpha_variance.sqrt() * z;
    }
    for k in 0..4 {
        let (t1, t2) = config.hyperprior.sample_internal(rng);
        let hyper = FieldHyper::from_internal(t1, t2);
        state.hyper[k] = hyper;
        state.gamma[k] = prior.sample(&hyper, rng)?;
    }
    Ok(state)
}

/// Simulation-based calibration: each replication draws a truth from the prior,
/// simulates one outcome, fits one chain and ranks the truth among the thinned draws.
pub fn run_sbc(config: &SbcConfig) -> Result<SbcReport> {
    use rand::Rng;
    if config.replications == 0 {
        return Err(Error::invalid("calibration needs at least one replication"));
    }
    config.hyperprior.validate()?;
    let graph = simulate_geography(config.n_units, 1, &mut stream(config.seed, Purpose::Geography, 0))?;
    let prior = FieldPrior::new(&crate::graph::icar_structure(&graph), config.n_times, Default::default())?;
    let n_cells = config.n_units * config.n_times;
    let k = config.field.index();
    let mut pick = stream(config.seed, Purpose::Calibration, u32::MAX as u64);
    let mut cells: Vec<usize> = Vec::new();
    while cells.len() < 3.min(n_cells) {
        let c = pick.random_range(0..n_cells);
        if !cells.contains(&c) {
            cells.push(c);
        }
    }
    let mut fit_config = RunConfig::default();
    fit_config.model.intercept = InterceptMode::PerCell;
    fit_config.model.alpha_variance = config.alpha_variance;
    fit_config.model.hyperprior = config.hyperprior;
    fit_config.sampler.chains = 1;
    fit_config.sampler.warmup = config.warmup;
    fit_config.sampler.draws = config.draws;
    fit_config.sampler.thin = config.thin;
    fit_config.sampler.freeze_auxiliary = config.freeze_auxiliary;
    let dm = [0.4566, 0.2550, 0.2884];
    let hc = [0.3092, 0.2828, 0.4080];
    let class = |p: &[f64; 3], u: f64| if u < p[0] { 0 } else if u < p[0] + p[1] { 1 } else { 2 };

    let ranks: Vec<Vec<usize>> = (0..config.replications)
        .into_par_iter()
        .map(|rep| -> Result<Vec<usize>> {
            let mut rng = stream(config.seed, Purpose::Calibration, rep as u64);
            let truth = prior_state(&prior, config, &mut rng)?;
            let mut records = Vec::with_capacity(n_cells * config.children_per_cell);
            for cell in 0..n_cells {
                for _ in 0..config.children_per_cell {
                    let p = Profile { dm: class(&dm, rng.random()), hc: class(&hc, rng.random()) };
                    let y = rng.random::<f64>() < inverse_logit(truth.eta_at(cell, &p.design()));
                    records.push(ChildRecord {
                        child_id: records.len().to_string(),
                        lga: cell % config.n_units,
                        time: cell / config.n_units,
                        outcomes: Outcomes { dpt_complete: y, ..Outcomes::default() },
                        dm_class: p.dm,
                        hc_class: p.hc,
                    });
                }
            }
            let data = FitData::new(&graph, config.n_times, &records, Vaccine::DptComplete, Default::default())?;
            let mut cfg = fit_config.clone();
            cfg.sampler.seed = derive_seed(config.seed, Purpose::Calibration, rep as u64);
            let chain = run_chain(&data, &cfg, 0)?;
            let rank = |f: &dyn Fn(&ModelState) -> f64| chain.draws.iter().filter(|s| f(s) < f(&truth)).count();
            let mut out = vec![rank(&|s| s.hyper[k].rho), rank(&|s| s.hyper[k].tau)];
            for &c in &cells {
                out.push(rank(&|s| s.gamma[k][c]));
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;

    let mut names = vec![format!("rho[{}]", config.field.name()), format!("tau[{}]", config.field.name())];
    names.extend(cells.iter().map(|c| format!("{}[{c}]", config.field.name())));
    let parameters = names
        .into_iter()
        .enumerate()
        .map(|(p, name)| {
            let r: Vec<usize> = ranks.iter().map(|v| v[p]).collect();
            let (histogram, chi_square, p_value) = rank_uniformity(&r, config.draws, config.bins)?;
            Ok(SbcParameter { name, ranks: r, histogram, chi_square, p_value })
        })
        .collect::<Result<_>>()?;
    Ok(SbcReport { replications: config.replications, parameters })
}
