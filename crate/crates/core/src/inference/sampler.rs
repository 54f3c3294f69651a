//! Blocked Gibbs sampler with Pólya-Gamma augmentation.
//!
//! One iteration updates, in order: the auxiliaries `omega | eta`; the intercepts;
//! then for each field `k` the pair `(theta_k, gamma_k)` jointly, by a random-walk
//! Metropolis step on `theta_k` with `gamma_k` integrated out followed by an exact
//! draw of `gamma_k | theta_k` from its constrained Gaussian full conditional.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::diagnostics::{diagnose, ParamDiagnostic};
use super::polya_gamma::sample_pg1;
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::graph::{icar_structure, AdjacencyGraph};
use crate::latent::{ConstrainedGaussian, FieldHyper, FieldPrior, HyperPriorSpec};
use crate::model::{ChildRecord, DesignRow, Field, InterceptMode, ModelState, Vaccine};
use crate::rng::{stream, Purpose};
use crate::sparse::{Ordering, SymCsr};

/// Records of one vaccine aligned to the cells of a graph.
#[derive(Debug, Clone)]
pub struct FitData {
    n_units: usize,
    n_times: usize,
    prior: FieldPrior,
    cells: Vec<usize>,
    y: Vec<bool>,
    design: Vec<[bool; 4]>,
    /// Per field, the constraints none of whose cells receive data.
    augment: [Vec<usize>; 4],
    orderings: [Ordering; 4],
}

impl FitData {
    pub fn new(
        graph: &AdjacencyGraph,
        n_times: usize,
        records: &[ChildRecord],
        vaccine: Vaccine,
        island_mode: crate::latent::IslandMode,
    ) -> Result<Self> {
        let n_units = graph.n_units();
        let prior = FieldPrior::new(&icar_structure(graph), n_times, island_mode)?;
        let mut cells = Vec::with_capacity(records.len());
        let mut y = Vec::with_capacity(records.len());
        let mut design = Vec::with_capacity(records.len());
        for r in records {
            if r.lga >= n_units || r.time >= n_times {
                return Err(Error::invalid(format!(
                    "record {} at (lga {}, time {}) outside {n_units} units x {n_times} waves",
                    r.child_id, r.lga, r.time
                )));
            }
            cells.push(r.time * n_units + r.lga);
            y.push(r.y(vaccine));
            design.push(DesignRow::from_classes(r.dm_class, r.hc_class)?.0);
        }
        let n_cells = n_units * n_times;
        let augment = std::array::from_fn(|k| {
            let mut has_data = vec![false; n_cells];
            for (c, d) in cells.iter().zip(&design) {
                if d[k] {
                    has_data[*c] = true;
                }
            }
            prior
                .constraints()
                .iter()
                .enumerate()
                .filter(|(_, a)| a.iter().all(|&(c, _)| !has_data[c]))
                .map(|(r, _)| r)
                .collect::<Vec<_>>()
        });
        let probe = prior.precision(&FieldHyper { rho: 0.5, tau: 1.0 }).q;
        let orderings = std::array::from_fn(|k| {
            let aug: &Vec<usize> = &augment[k];
            if aug.is_empty() {
                Ordering::reverse_cuthill_mckee(&probe)
            } else {
                let mut trips: Vec<(usize, usize, f64)> = probe.upper_triplets().collect();
                for &r in aug {
                    let a = &prior.constraints()[r];
                    for (p, &(i, _)) in a.iter().enumerate() {
                        for &(j, _) in &a[p..] {
                            trips.push((i.min(j), i.max(j), 1.0));
                        }
                    }
                }
                Ordering::reverse_cuthill_mckee(&SymCsr::from_triplets(n_cells, trips))
            }
        });
        Ok(FitData { n_units, n_times, prior, cells, y, design, augment, orderings })
    }

    pub fn n_units(&self) -> usize {
        self.n_units
    }

    pub fn n_times(&self) -> usize {
        self.n_times
    }

    pub fn n_records(&self) -> usize {
        self.cells.len()
    }

    pub fn prior(&self) -> &FieldPrior {
        &self.prior
    }

    fn eta(&self, state: &ModelState, i: usize) -> f64 {
        let c = self.cells[i];
        let mut eta = state.alpha_at(c);
        for k in 0..4 {
            if self.design[i][k] {
                eta += state.gamma[k][c];
            }
        }
        eta
    }

    /// Likelihood part of the full conditional of field `k`: the diagonal
    /// `sum_i omega_i delta_ik` and the linear term `sum_i (y_i - 1/2 - omega_i eta_{-k,i}) delta_ik`.
    fn field_likelihood(&self, k: usize, state: &ModelState, omega: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let n_cells = self.n_units * self.n_times;
        let mut diag = vec![0.0; n_cells];
        let mut linear = vec![0.0; n_cells];
        for i in 0..self.cells.len() {
            if !self.design[i][k] {
                continue;
            }
            let c = self.cells[i];
            let rest = self.eta(state, i) - state.gamma[k][c];
            let kappa = if self.y[i] { 0.5 } else { -0.5 };
            diag[c] += omega[i];
            linear[c] += kappa - omega[i] * rest;
        }
        (diag, linear)
    }
}

/// Gaussian full conditional of one field as `(precision, linear term)`: the density is
/// proportional to `exp(-x'Px/2 + b'x)` on the constrained subspace.
pub fn latent_full_conditional(
    field: Field,
    state: &ModelState,
    data: &FitData,
    omega: &[f64],
    prior_precision: &SymCsr,
) -> Result<(SymCsr, Vec<f64>)> {
    if omega.len() != data.n_records() {
        return Err(Error::invalid(format!("{} auxiliaries for {} records", omega.len(), data.n_records())));
    }
    let (diag, linear) = data.field_likelihood(field.index(), state, omega);
    Ok((prior_precision.add_diagonal(&diag), linear))
}

/// Post-warmup draws of one chain.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChainDraws {
    pub chain: usize,
    pub draws: Vec<ModelState>,
    /// Post-warmup Metropolis acceptance rate per field; `None` when hyperparameters are fixed.
    pub acceptance: [Option<f64>; 4],
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PosteriorDraws {
    pub n_units: usize,
    pub n_times: usize,
    pub intercept: InterceptMode,
    pub seed: u64,
    pub warmup: usize,
    pub thin: usize,
    pub chains: Vec<ChainDraws>,
}

impl PosteriorDraws {
    /// All draws, chain by chain.
    pub fn iter(&self) -> impl Iterator<Item = &ModelState> {
        self.chains.iter().flat_map(|c| c.draws.iter())
    }

    pub fn n_draws(&self) -> usize {
        self.chains.iter().map(|c| c.draws.len()).sum()
    }
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub draws: PosteriorDraws,
    pub diagnostics: Vec<ParamDiagnostic>,
    pub max_rhat: Option<f64>,
    /// False when some split R-hat exceeds the configured threshold.
    pub converged: bool,
}

/// Adaptive Gaussian random-walk proposal on `(theta1, theta2)`.
#[derive(Debug, Clone)]
struct Tuner {
    chol: [[f64; 2]; 2],
    log_scale: f64,
    history: Vec<[f64; 2]>,
    accepted: usize,
    proposed: usize,
}

impl Tuner {
    fn new() -> Self {
        Tuner { chol: [[0.5, 0.0], [0.0, 0.5]], log_scale: 0.0, history: Vec::new(), accepted: 0, proposed: 0 }
    }

    fn propose(&self, theta: [f64; 2], rng: &mut ChaCha8Rng) -> [f64; 2] {
        let z0: f64 = StandardNormal.sample(rng);
        let z1: f64 = StandardNormal.sample(rng);
        let s = self.log_scale.exp();
        [
            theta[0] + s * self.chol[0][0] * z0,
            theta[1] + s * (self.chol[1][0] * z0 + self.chol[1][1] * z1),
        ]
    }

    /// Robbins-Monro step on the log scale.
    fn adapt(&mut self, iter: usize, accept_prob: f64, target: f64, theta: [f64; 2]) {
        self.history.push(theta);
        self.log_scale += (accept_prob - target) / ((iter + 1) as f64).powf(0.6);
        self.log_scale = self.log_scale.clamp(-10.0, 5.0);
    }

    /// Replaces the proposal shape by the covariance of the second half of
    /// the warmup history.
    fn reshape(&mut self) {
        if self.history.len() < 20 {
            return;
        }
        let tail = &self.history[self.history.len() / 2..];
        let n = tail.len() as f64;
        let m = [tail.iter().map(|t| t[0]).sum::<f64>() / n, tail.iter().map(|t| t[1]).sum::<f64>() / n];
        let mut c = [[0.0; 2]; 2];
        for t in tail {
            for a in 0..2 {
                for b in 0..2 {
                    c[a][b] += (t[a] - m[a]) * (t[b] - m[b]) / (n - 1.0);
                }
            }
        }
        // 2.38^2 / d with d = 2, plus a small ridge.
        let f = 2.38 * 2.38 / 2.0;
        let c00 = f * c[0][0] + 1e-6;
        let c11 = f * c[1][1] + 1e-6;
        let c10 = f * c[1][0];
        let l00 = c00.sqrt();
        let l10 = c10 / l00;
        let rem = c11 - l10 * l10;
        if rem > 0.0 && l00.is_finite() {
            self.chol = [[l00, 0.0], [l10, rem.sqrt()]];
            self.log_scale = 0.0;
        }
    }
}

struct Evaluated {
    log_target: f64,
    conditional: ConstrainedGaussian,
}

struct ChainRunner<'a> {
    data: &'a FitData,
    config: &'a RunConfig,
    state: ModelState,
    omega: Vec<f64>,
    theta: [[f64; 2]; 4],
    tuners: [Tuner; 4],
    rng: ChaCha8Rng,
}

impl<'a> ChainRunner<'a> {
    fn new(data: &'a FitData, config: &'a RunConfig, chain: usize) -> Self {
        let mut rng = stream(config.sampler.seed, Purpose::Chain, chain as u64);
        let mut state = ModelState::zeros(data.n_units, data.n_times, config.model.intercept);
        let n = data.y.len();
        if n > 0 {
            let p = (data.y.iter().filter(|&&v| v).count() as f64 + 0.5) / (n as f64 + 1.0);
            let logit = (p / (1.0 - p)).ln();
            state.alpha.iter_mut().for_each(|a| *a = logit);
        }
        let theta = std::array::from_fn(|_| match config.model.fixed_hyper {
            Some(h) => {
                let (t1, t2) = h.to_internal();
                [t1, t2]
            }
            None => {
                let j1: f64 = StandardNormal.sample(&mut rng);
                let j2: f64 = StandardNormal.sample(&mut rng);
                [0.75f64.ln() + 0.5 * j1, 3.0f64.ln() + 0.5 * j2]
            }
        });
        for (h, t) in state.hyper.iter_mut().zip(&theta) {
            *h = FieldHyper::from_internal(t[0], t[1]);
        }
        ChainRunner {
            data,
            config,
            state,
            omega: vec![1.0; n],
            theta,
            tuners: std::array::from_fn(|_| Tuner::new()),
            rng,
        }
    }

    fn update_omega(&mut self) {
        if self.config.sampler.freeze_auxiliary {
            return;
        }
        for i in 0..self.omega.len() {
            let eta = self.data.eta(&self.state, i);
            self.omega[i] = sample_pg1(eta, &mut self.rng);
        }
    }

    fn update_alpha(&mut self) {
        let n_alpha = self.state.alpha.len();
        let mut prec = vec![1.0 / self.config.model.alpha_variance; n_alpha];
        let mut lin = vec![0.0; n_alpha];
        for i in 0..self.omega.len() {
            let a = self.state.alpha_index(self.data.cells[i]);
            let rest = self.data.eta(&self.state, i) - self.state.alpha[a];
            let kappa = if self.data.y[i] { 0.5 } else { -0.5 };
            prec[a] += self.omega[i];
            lin[a] += kappa - self.omega[i] * rest;
        }
        for a in 0..n_alpha {
            let z: f64 = StandardNormal.sample(&mut self.rng);
            self.state.alpha[a] = lin[a] / prec[a] + z / prec[a].sqrt();
        }
    }

    fn evaluate(&self, k: usize, theta: [f64; 2], diag: &[f64], linear: &[f64]) -> Result<Evaluated> {
        let hyper = FieldHyper::from_internal(theta[0], theta[1]);
        if !(hyper.tau.is_finite() && hyper.tau > 0.0 && hyper.rho.abs() < 1.0) {
            return Err(Error::numerical("hyperparameters left their domain"));
        }
        let prior = &self.data.prior;
        let q = prior.precision(&hyper).q.add_diagonal(diag);
        let conditional = ConstrainedGaussian::new(
            &q,
            linear,
            prior.constraints(),
            &self.data.augment[k],
            Some(&self.data.orderings[k]),
        )?;
        let spec: &HyperPriorSpec = &self.config.model.hyperprior;
        let log_target = spec.ln_density_internal(theta[0], theta[1]) + 0.5 * prior.log_pdet(&hyper)
            - 0.5 * conditional.log_det_restricted()
            + 0.5 * conditional.linear_dot_mean();
        if !log_target.is_finite() {
            return Err(Error::numerical("non-finite hyperparameter log target"));
        }
        Ok(Evaluated { log_target, conditional })
    }

    fn update_field(&mut self, k: usize, iter: usize) -> Result<()> {
        let (diag, linear) = self.data.field_likelihood(k, &self.state, &self.omega);
        let warmup = self.config.sampler.warmup;
        let mut current = self.evaluate(k, self.theta[k], &diag, &linear)?;
        if self.config.model.fixed_hyper.is_none() {
            for _ in 0..self.config.sampler.hyper_steps {
                let proposal = self.tuners[k].propose(self.theta[k], &mut self.rng);
                let u: f64 = self.rng.random();
                let (accept_prob, next) = match self.evaluate(k, proposal, &diag, &linear) {
                    Ok(p) => ((p.log_target - current.log_target).exp().min(1.0), Some(p)),
                    Err(_) => (0.0, None),
                };
                let accepted = u < accept_prob;
                if iter >= warmup {
                    self.tuners[k].proposed += 1;
                    self.tuners[k].accepted += accepted as usize;
                }
                if accepted {
                    self.theta[k] = proposal;
                    current = next.expect("accepted proposal was evaluated");
                }
                if iter < warmup {
                    let target = self.config.sampler.target_acceptance;
                    let theta = self.theta[k];
                    self.tuners[k].adapt(iter, accept_prob, target, theta);
                }
            }
            if iter + 1 == warmup / 2 {
                self.tuners[k].reshape();
            }
        }
        let chosen = current.conditional;
        self.state.hyper[k] = FieldHyper::from_internal(self.theta[k][0], self.theta[k][1]);
        self.state.gamma[k] = chosen.sample(&mut self.rng);
        Ok(())
    }

    fn iterate(&mut self, iter: usize) -> Result<()> {
        self.update_omega();
        self.update_alpha();
        for k in 0..4 {
            self.update_field(k, iter)?;
        }
        Ok(())
    }
}

/// Runs one chain from its own seed stream.
pub fn run_chain(data: &FitData, config: &RunConfig, chain: usize) -> Result<ChainDraws> {
    let mut runner = ChainRunner::new(data, config, chain);
    let s = &config.sampler;
    let total = s.warmup + s.draws * s.thin;
    let mut draws = Vec::with_capacity(s.draws);
    for iter in 0..total {
        runner.iterate(iter)?;
        if iter >= s.warmup && (iter - s.warmup + 1).is_multiple_of(s.thin) {
            draws.push(runner.state.clone());
        }
    }
    let acceptance = std::array::from_fn(|k| {
        let t = &runner.tuners[k];
        (config.model.fixed_hyper.is_none() && t.proposed > 0).then(|| t.accepted as f64 / t.proposed as f64)
    });
    Ok(ChainDraws { chain, draws, acceptance })
}

/// Runs all chains in parallel and computes convergence diagnostics.
pub fn fit(data: &FitData, config: &RunConfig) -> Result<FitResult> {
    config.validate()?;
    let chains: Vec<ChainDraws> =
        (0..config.sampler.chains).into_par_iter().map(|c| run_chain(data, config, c)).collect::<Result<_>>()?;
    let draws = PosteriorDraws {
        n_units: data.n_units,
        n_times: data.n_times,
        intercept: config.model.intercept,
        seed: config.sampler.seed,
        warmup: config.sampler.warmup,
        thin: config.sampler.thin,
        chains,
    };
    let diagnostics = if draws.chains.len() >= 2 && config.sampler.draws >= 4 {
        posterior_diagnostics(&draws, config.model.fixed_hyper.is_none())?
    } else {
        Vec::new()
    };
    let max_rhat = diagnostics.iter().filter_map(|d| d.rhat).reduce(f64::max);
    let converged = max_rhat.is_none_or(|r| r <= config.sampler.rhat_threshold);
    Ok(FitResult { draws, diagnostics, max_rhat, converged })
}

/// Names of all scalar parameters, in the order [`parameter_values`] reports them.
pub fn parameter_names(n_alpha: usize, n_cells: usize, with_hyper: bool) -> Vec<String> {
    let mut names: Vec<String> = (0..n_alpha).map(|a| format!("alpha[{a}]")).collect();
    for f in Field::ALL {
        names.extend((0..n_cells).map(|c| format!("{}[{c}]", f.name())));
    }
    if with_hyper {
        for f in Field::ALL {
            names.push(format!("rho[{}]", f.name()));
            names.push(format!("tau[{}]", f.name()));
        }
    }
    names
}

fn parameter_values(s: &ModelState, with_hyper: bool) -> Vec<f64> {
    let mut v = s.alpha.clone();
    for g in &s.gamma {
        v.extend_from_slice(g);
    }
    if with_hyper {
        for h in &s.hyper {
            v.push(h.rho);
            v.push(h.tau.ln());
        }
    }
    v
}

/// Split R-hat and bulk ESS for every intercept, field cell and (unless fixed)
/// hyperparameter. Precisions are diagnosed on the log scale.
pub fn posterior_diagnostics(draws: &PosteriorDraws, with_hyper: bool) -> Result<Vec<ParamDiagnostic>> {
    let first = draws.iter().next().ok_or_else(|| Error::invalid("no draws"))?;
    let names = parameter_names(first.alpha.len(), first.n_cells(), with_hyper);
    let per_chain: Vec<Vec<Vec<f64>>> = draws
        .chains
        .iter()
        .map(|c| c.draws.iter().map(|s| parameter_values(s, with_hyper)).collect())
        .collect();
    names
        .par_iter()
        .enumerate()
        .map(|(p, name)| {
            let chains: Vec<Vec<f64>> = per_chain.iter().map(|c| c.iter().map(|v| v[p]).collect()).collect();
            diagnose(name, &chains)
        })
        .collect()
}
