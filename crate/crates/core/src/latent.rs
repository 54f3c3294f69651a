//! Separable space-time GMRF priors (ICAR in space, AR1 in time), their
//! hyperparameters and hyperpriors, and sampling from constrained Gaussians.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::graph::IcarStructure;
use crate::sparse::{EnvelopeCholesky, Ordering, SymCsr};

/// Temporal autocorrelation and field precision of one spatiotemporal field.
///
/// `tau` is the precision that scales the whole separable prior
/// `Q = tau * (Q_ar1(rho, 1) ⊗ R)`; with `T = 1` it is the ICAR precision.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FieldHyper {
    pub rho: f64,
    pub tau: f64,
}

impl FieldHyper {
    pub fn new(rho: f64, tau: f64) -> Result<Self> {
        if !(rho.abs() < 1.0) {
            return Err(Error::invalid(format!("|rho| must be < 1, got {rho}")));
        }
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(Error::invalid(format!("tau must be positive and finite, got {tau}")));
        }
        Ok(FieldHyper { rho, tau })
    }

    /// `tau * (1 - rho^2)`.
    pub fn kappa(&self) -> f64 {
        self.tau * (1.0 - self.rho) * (1.0 + self.rho)
    }

    pub fn to_internal(&self) -> (f64, f64) {
        natural_to_internal(self.rho, self.tau)
    }

    pub fn from_internal(theta1: f64, theta2: f64) -> Self {
        let (rho, tau) = internal_to_natural(theta1, theta2);
        FieldHyper { rho, tau }
    }
}

/// `(rho, tau) -> (theta1, theta2) = (log(tau (1 - rho^2)), log((1 + rho) / (1 - rho)))`.
pub fn natural_to_internal(rho: f64, tau: f64) -> (f64, f64) {
    let log_one_minus_rho_sq = (-rho).ln_1p() + rho.ln_1p();
    (tau.ln() + log_one_minus_rho_sq, 2.0 * rho.atanh())
}

/// Inverse of [`natural_to_internal`]; maps all of R^2 into `|rho| < 1, tau > 0`.
pub fn internal_to_natural(theta1: f64, theta2: f64) -> (f64, f64) {
    let rho = (0.5 * theta2).tanh();
    let tau = (theta1 - log_one_minus_rho_sq(theta2)).exp();
    (rho, tau)
}

/// `log(1 - rho^2)` as a function of `theta2`, stable for large `|theta2|`.
pub fn log_one_minus_rho_sq(theta2: f64) -> f64 {
    let a = theta2.abs();
    std::f64::consts::LN_2 * 2.0 - a - 2.0 * (-a).exp().ln_1p()
}

/// Precision of a stationary AR1 process of length `t_len` with marginal precision `tau`.
pub fn ar1_precision(t_len: usize, rho: f64, tau: f64) -> Result<DMatrix<f64>> {
    if t_len == 0 {
        return Err(Error::invalid("AR1 length must be at least 1"));
    }
    if !(rho.abs() < 1.0) {
        return Err(Error::invalid(format!("|rho| must be < 1, got {rho}")));
    }
    if !(tau > 0.0) {
        return Err(Error::invalid(format!("tau must be positive, got {tau}")));
    }
    if t_len == 1 {
        return Ok(DMatrix::from_element(1, 1, tau));
    }
    let scale = tau / ((1.0 - rho) * (1.0 + rho));
    let mut q = DMatrix::zeros(t_len, t_len);
    for t in 0..t_len {
        q[(t, t)] = if t == 0 || t == t_len - 1 { scale } else { scale * (1.0 + rho * rho) };
        if t + 1 < t_len {
            q[(t, t + 1)] = -rho * scale;
            q[(t + 1, t)] = -rho * scale;
        }
    }
    Ok(q)
}

/// Prior on `theta` such that `exp(theta) ~ Gamma(shape, rate)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogGamma {
    pub shape: f64,
    pub rate: f64,
}

impl LogGamma {
    pub fn new(shape: f64, rate: f64) -> Result<Self> {
        let p = LogGamma { shape, rate };
        p.validate()?;
        Ok(p)
    }

    fn validate(&self) -> Result<()> {
        if !(self.shape > 0.0 && self.rate > 0.0) {
            return Err(Error::invalid(format!(
                "log-gamma prior needs positive shape and rate, got ({}, {})",
                self.shape, self.rate
            )));
        }
        Ok(())
    }

    pub fn ln_pdf(&self, theta: f64) -> f64 {
        self.shape * self.rate.ln() - ln_gamma(self.shape) + self.shape * theta - self.rate * theta.exp()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        Gamma::new(self.shape, 1.0 / self.rate).expect("validated").sample(rng).ln()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalPrior {
    pub mean: f64,
    pub sd: f64,
}

impl NormalPrior {
    pub fn ln_pdf(&self, x: f64) -> f64 {
        let z = (x - self.mean) / self.sd;
        -0.5 * z * z - self.sd.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln()
    }
}

/// Which log-gamma entry acts as the prior on the field precision.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PrecisionTarget {
    /// `log tau ~ log_tau` (the ICAR precision prior).
    #[default]
    Icar,
    /// `theta1 = log(tau (1 - rho^2)) ~ theta1` (the AR1 internal-scale prior).
    Innovation,
}

/// Hyperprior specification for one field. Defaults: `log tau ~ loggamma(1, 5e-4)`,
/// `theta1 ~ loggamma(1, 5e-5)`, `theta2 ~ N(0, 7^2)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HyperPriorSpec {
    pub log_tau: LogGamma,
    pub theta1: LogGamma,
    pub theta2: NormalPrior,
    #[serde(default)]
    pub precision_target: PrecisionTarget,
}

impl Default for HyperPriorSpec {
    fn default() -> Self {
        HyperPriorSpec {
            log_tau: LogGamma { shape: 1.0, rate: 5e-4 },
            theta1: LogGamma { shape: 1.0, rate: 5e-5 },
            theta2: NormalPrior { mean: 0.0, sd: 7.0 },
            precision_target: PrecisionTarget::Icar,
        }
    }
}

impl HyperPriorSpec {
    pub fn validate(&self) -> Result<()> {
        self.log_tau.validate()?;
        self.theta1.validate()?;
        if !(self.theta2.sd > 0.0) {
            return Err(Error::invalid(format!("theta2 prior sd must be positive, got {}", self.theta2.sd)));
        }
        Ok(())
    }

    /// Prior log density over the internal coordinates `(theta1, theta2)`.
    ///
    /// The map `(theta1, theta2) -> (log tau, theta2)` has unit Jacobian, so the
    /// ICAR target is a plain change of variables.
    pub fn ln_density_internal(&self, theta1: f64, theta2: f64) -> f64 {
        match self.precision_target {
            PrecisionTarget::Innovation => self.theta1.ln_pdf(theta1) + self.theta2.ln_pdf(theta2),
            PrecisionTarget::Icar => {
                self.log_tau.ln_pdf(theta1 - log_one_minus_rho_sq(theta2)) + self.theta2.ln_pdf(theta2)
            }
        }
    }

    /// Draws `(theta1, theta2)` from the prior.
    pub fn sample_internal<R: Rng + ?Sized>(&self, rng: &mut R) -> (f64, f64) {
        let z: f64 = StandardNormal.sample(rng);
        let theta2 = self.theta2.mean + self.theta2.sd * z;
        let theta1 = match self.precision_target {
            PrecisionTarget::Innovation => self.theta1.sample(rng),
            PrecisionTarget::Icar => self.log_tau.sample(rng) + log_one_minus_rho_sq(theta2),
        };
        (theta1, theta2)
    }
}

/// `log p(theta1) + log p(theta2)` with `theta1 ~ spec.theta1`, `theta2 ~ spec.theta2`.
pub fn log_hyperprior(theta1: f64, theta2: f64, spec: &HyperPriorSpec) -> Result<f64> {
    spec.validate()?;
    Ok(spec.theta1.ln_pdf(theta1) + spec.theta2.ln_pdf(theta2))
}

/// A linear constraint `a' x = 0` stored sparsely.
pub type Constraint = Vec<(usize, f64)>;

pub fn indicator(cells: impl IntoIterator<Item = usize>) -> Constraint {
    cells.into_iter().map(|c| (c, 1.0)).collect()
}

/// How zero-neighbour units enter a field.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum IslandMode {
    /// Independent `N(0, 1/tau)` effect per island cell.
    #[default]
    Independent,
    /// Island cells fixed at zero.
    Pinned,
}

/// The hyperparameter-independent part of a separable space-time prior.
///
/// Cells are indexed `t * n_units + unit`.
#[derive(Debug, Clone)]
pub struct FieldPrior {
    icar: IcarStructure,
    n_times: usize,
    island_mode: IslandMode,
    constraints: Vec<Constraint>,
    connected_units: usize,
    connected_blocks: usize,
    log_pdet_structure: f64,
}

impl FieldPrior {
    pub fn new(icar: &IcarStructure, n_times: usize, island_mode: IslandMode) -> Result<Self> {
        if n_times == 0 {
            return Err(Error::invalid("need at least one time point"));
        }
        let n = icar.n_units();
        let blocks = icar.connected_blocks();
        let mut constraints = Vec::new();
        for t in 0..n_times {
            for block in &blocks {
                constraints.push(indicator(block.iter().map(|&j| t * n + j)));
            }
            if island_mode == IslandMode::Pinned {
                for &i in icar.islands() {
                    constraints.push(indicator([t * n + i]));
                }
            }
        }
        let connected_units: usize = blocks.iter().map(Vec::len).sum();
        let mut log_pdet_r = 0.0;
        for block in &blocks {
            log_pdet_r += log_pdet_laplacian(&icar.matrix, block)?;
        }
        Ok(FieldPrior {
            icar: icar.clone(),
            n_times,
            island_mode,
            constraints,
            connected_units,
            connected_blocks: blocks.len(),
            log_pdet_structure: n_times as f64 * log_pdet_r,
        })
    }

    pub fn n_units(&self) -> usize {
        self.icar.n_units()
    }

    pub fn n_times(&self) -> usize {
        self.n_times
    }

    pub fn n_cells(&self) -> usize {
        self.n_units() * self.n_times
    }

    pub fn icar(&self) -> &IcarStructure {
        &self.icar
    }

    pub fn island_mode(&self) -> IslandMode {
        self.island_mode
    }

    pub fn constraints(&self) -> &[Constraint] {
        &self.constraints
    }

    /// Dimension of the subspace the prior is proper on.
    pub fn rank(&self) -> usize {
        let free_islands = match self.island_mode {
            IslandMode::Independent => self.icar.islands().len(),
            IslandMode::Pinned => 0,
        };
        (self.connected_units - self.connected_blocks + free_islands) * self.n_times
    }

    pub fn precision(&self, hyper: &FieldHyper) -> SpatioTemporalPrecision {
        let ar1 = ar1_precision(self.n_times, hyper.rho, 1.0).expect("validated hyperparameters");
        let n = self.n_units();
        let mut q = self.icar.matrix.kron_left(&ar1).scaled(hyper.tau);
        if !self.icar.islands().is_empty() {
            let mut diag = vec![0.0; self.n_cells()];
            for t in 0..self.n_times {
                for &i in self.icar.islands() {
                    diag[t * n + i] = hyper.tau;
                }
            }
            q = q.add_diagonal(&diag);
        }
        SpatioTemporalPrecision { q, constraints: self.constraints.clone() }
    }

    /// Log pseudo-determinant of the prior precision restricted to the constrained subspace.
    pub fn log_pdet(&self, hyper: &FieldHyper) -> f64 {
        let structured = (self.connected_units - self.connected_blocks) as f64;
        let t = self.n_times as f64;
        let log_one_minus_rho_sq = (-hyper.rho).ln_1p() + hyper.rho.ln_1p();
        self.rank() as f64 * hyper.tau.ln() - structured * (t - 1.0) * log_one_minus_rho_sq
            + self.log_pdet_structure
    }

    /// Log density of a field satisfying the constraints.
    pub fn ln_density(&self, field: &[f64], hyper: &FieldHyper) -> f64 {
        let q = self.precision(hyper).q;
        let m = self.rank() as f64;
        -0.5 * m * (2.0 * std::f64::consts::PI).ln() + 0.5 * self.log_pdet(hyper) - 0.5 * q.quad_form(field)
    }

    /// Draws a field from the constrained prior.
    pub fn sample<R: Rng + ?Sized>(&self, hyper: &FieldHyper, rng: &mut R) -> Result<Vec<f64>> {
        let q = self.precision(hyper).q;
        let all: Vec<usize> = (0..self.constraints.len()).collect();
        let g = ConstrainedGaussian::new(&q, &vec![0.0; q.n()], &self.constraints, &all, None)?;
        Ok(g.sample(rng))
    }
}

/// `log pdet` of a connected graph Laplacian: `ln |block| + ln det` of the block with one
/// row and column removed (matrix-tree theorem).
fn log_pdet_laplacian(r: &SymCsr, block: &[usize]) -> Result<f64> {
    if block.len() == 1 {
        return Ok(0.0);
    }
    let pos: std::collections::HashMap<usize, usize> = block.iter().enumerate().map(|(k, &j)| (j, k)).collect();
    let m = block.len() - 1;
    let trips = block[..m].iter().enumerate().flat_map(|(k, &j)| {
        let pos = &pos;
        r.row(j).filter_map(move |(c, v)| pos.get(&c).filter(|&&kc| kc >= k && kc < m).map(|&kc| (k, kc, v)))
    });
    let reduced = SymCsr::from_triplets(m, trips.collect::<Vec<_>>());
    let chol = EnvelopeCholesky::factor(&reduced, &Ordering::reverse_cuthill_mckee(&reduced))?;
    Ok((block.len() as f64).ln() + chol.log_det())
}

/// Prior precision of one field and the constraints that make it proper.
#[derive(Debug, Clone)]
pub struct SpatioTemporalPrecision {
    pub q: SymCsr,
    pub constraints: Vec<Constraint>,
}

/// `tau * (Q_ar1(rho, 1) ⊗ R)` with island cells given independent precision `tau`.
pub fn spatiotemporal_precision(
    icar: &IcarStructure,
    n_times: usize,
    hyper: &FieldHyper,
    island_mode: IslandMode,
) -> Result<SpatioTemporalPrecision> {
    Ok(FieldPrior::new(icar, n_times, island_mode)?.precision(hyper))
}

/// Gaussian `exp(-x'Mx/2 + b'x)` restricted to `A x = 0`, factorized once for both
/// mean/normalizer evaluation and repeated sampling.
#[derive(Debug, Clone)]
pub struct ConstrainedGaussian {
    chol: EnvelopeCholesky,
    linear: Vec<f64>,
    free_mean: Vec<f64>,
    constraints: Vec<Constraint>,
    /// Columns of `M^{-1} A'`.
    projected: Vec<Vec<f64>>,
    schur: Option<nalgebra::Cholesky<f64, nalgebra::Dyn>>,
    mean: Vec<f64>,
}

impl ConstrainedGaussian {
    /// `augment` lists constraints whose outer products are added to `M` before
    /// factorizing. This leaves the constrained distribution unchanged and makes
    /// `M` definite along directions that no data reach.
    pub fn new(
        precision: &SymCsr,
        linear: &[f64],
        constraints: &[Constraint],
        augment: &[usize],
        ordering: Option<&Ordering>,
    ) -> Result<Self> {
        let n = precision.n();
        assert_eq!(linear.len(), n);
        let m = if augment.is_empty() {
            precision.clone()
        } else {
            let mut trips: Vec<(usize, usize, f64)> = precision.upper_triplets().collect();
            for &r in augment {
                let a = &constraints[r];
                for (p, &(i, vi)) in a.iter().enumerate() {
                    for &(j, vj) in &a[p..] {
                        trips.push((i.min(j), i.max(j), vi * vj));
                    }
                }
            }
            SymCsr::from_triplets(n, trips)
        };
        let owned;
        let ordering = match ordering {
            Some(o) => o,
            None => {
                owned = Ordering::reverse_cuthill_mckee(&m);
                &owned
            }
        };
        let chol = EnvelopeCholesky::factor(&m, ordering)?;
        let free_mean = chol.solve(linear);
        let projected: Vec<Vec<f64>> = constraints
            .iter()
            .map(|a| {
                let mut dense = vec![0.0; n];
                for &(i, v) in a {
                    dense[i] += v;
                }
                chol.solve(&dense)
            })
            .collect();
        let k = constraints.len();
        let schur = if k == 0 {
            None
        } else {
            let s = DMatrix::from_fn(k, k, |r, c| apply(&constraints[r], &projected[c]));
            Some(
                s.cholesky()
                    .ok_or_else(|| Error::numerical("constraints are linearly dependent under the precision"))?,
            )
        };
        let mut g = ConstrainedGaussian {
            chol,
            linear: linear.to_vec(),
            free_mean: free_mean.clone(),
            constraints: constraints.to_vec(),
            projected,
            schur,
            mean: Vec::new(),
        };
        g.mean = g.correct(free_mean);
        Ok(g)
    }

    /// Kriging correction `x - M^{-1}A'(A M^{-1} A')^{-1} A x`.
    fn correct(&self, mut x: Vec<f64>) -> Vec<f64> {
        if let Some(schur) = &self.schur {
            let ax = DVector::from_iterator(self.constraints.len(), self.constraints.iter().map(|a| apply(a, &x)));
            let coef = schur.solve(&ax);
            for (w, c) in self.projected.iter().zip(coef.iter()) {
                for (xi, wi) in x.iter_mut().zip(w) {
                    *xi -= c * wi;
                }
            }
        }
        x
    }

    pub fn dim(&self) -> usize {
        self.linear.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    /// Mean ignoring the constraints.
    pub fn unconstrained_mean(&self) -> &[f64] {
        &self.free_mean
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let z: Vec<f64> = (0..self.dim()).map(|_| StandardNormal.sample(rng)).collect();
        let noise = self.chol.whiten_inverse(&z);
        let x: Vec<f64> = self.free_mean.iter().zip(&noise).map(|(m, e)| m + e).collect();
        self.correct(x)
    }

    /// `log det` of the (augmented) precision restricted to the constrained subspace, up to
    /// the constant `-log det(A A')`.
    pub fn log_det_restricted(&self) -> f64 {
        let schur_logdet = self
            .schur
            .as_ref()
            .map(|s| 2.0 * s.l().diagonal().iter().map(|d| d.ln()).sum::<f64>())
            .unwrap_or(0.0);
        self.chol.log_det() + schur_logdet
    }

    /// `b' mu`, twice the maximum of the exponent on the constrained subspace.
    pub fn linear_dot_mean(&self) -> f64 {
        self.linear.iter().zip(&self.mean).map(|(b, m)| b * m).sum()
    }
}

fn apply(a: &Constraint, x: &[f64]) -> f64 {
    a.iter().map(|&(i, v)| v * x[i]).sum()
}

/// Draws `x ~ N(mean, Q^{-1})` conditioned on `a' x = 0` for every constraint, by
/// sampling unconstrained and correcting by kriging.
pub fn sample_constrained_gaussian<R: Rng + ?Sized>(
    q: &SymCsr,
    mean: &[f64],
    constraints: &[Constraint],
    rng: &mut R,
) -> Result<Vec<f64>> {
    let linear = q.mul_vec(mean);
    Ok(ConstrainedGaussian::new(q, &linear, constraints, &[], None)?.sample(rng))
}
