//! Observation model: vaccine indicators, empowerment design indicators, the
//! varying-coefficient linear predictor and the Bernoulli-logit likelihood.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::latent::FieldHyper;

/// The five vaccine indicators, each fitted as its own univariate model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Vaccine {
    Bcg,
    DptComplete,
    Mcv1,
    AllBasic,
    ZeroDose,
}

impl Vaccine {
    pub const ALL: [Vaccine; 5] =
        [Vaccine::Bcg, Vaccine::DptComplete, Vaccine::Mcv1, Vaccine::AllBasic, Vaccine::ZeroDose];

    pub fn name(self) -> &'static str {
        match self {
            Vaccine::Bcg => "bcg",
            Vaccine::DptComplete => "dpt_complete",
            Vaccine::Mcv1 => "mcv1",
            Vaccine::AllBasic => "all_basic",
            Vaccine::ZeroDose => "zero_dose",
        }
    }
}

impl fmt::Display for Vaccine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Vaccine {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Vaccine::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown vaccine `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Outcomes {
    pub bcg: bool,
    pub dpt_complete: bool,
    pub mcv1: bool,
    pub all_basic: bool,
    pub zero_dose: bool,
}

impl Outcomes {
    pub fn get(&self, v: Vaccine) -> bool {
        match v {
            Vaccine::Bcg => self.bcg,
            Vaccine::DptComplete => self.dpt_complete,
            Vaccine::Mcv1 => self.mcv1,
            Vaccine::AllBasic => self.all_basic,
            Vaccine::ZeroDose => self.zero_dose,
        }
    }

    /// Logical couplings between indicators: all-basic requires BCG and complete DPT,
    /// and a zero-dose child cannot have completed DPT.
    pub fn check_consistency(&self) -> Result<()> {
        if self.all_basic && !(self.bcg && self.dpt_complete) {
            return Err(Error::invalid("all_basic = 1 requires bcg = 1 and dpt_complete = 1"));
        }
        if self.zero_dose && self.dpt_complete {
            return Err(Error::invalid("zero_dose = 1 is incompatible with dpt_complete = 1"));
        }
        Ok(())
    }
}

/// One eligible child, with indices into the graph and wave sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChildRecord {
    pub child_id: String,
    pub lga: usize,
    pub time: usize,
    pub outcomes: Outcomes,
    pub dm_class: u8,
    pub hc_class: u8,
}

impl ChildRecord {
    pub fn y(&self, v: Vaccine) -> bool {
        self.outcomes.get(v)
    }
}

/// The four spatiotemporal effect fields, indexed by empowerment level and dimension.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Field {
    /// Moderately empowered in decision-making.
    #[serde(rename = "gamma_m_d")]
    ModerateDecision,
    #[serde(rename = "gamma_h_d")]
    HighDecision,
    /// Moderately empowered in healthcare utilization.
    #[serde(rename = "gamma_m_hc")]
    ModerateHealthcare,
    #[serde(rename = "gamma_h_hc")]
    HighHealthcare,
}

impl Field {
    pub const ALL: [Field; 4] =
        [Field::ModerateDecision, Field::HighDecision, Field::ModerateHealthcare, Field::HighHealthcare];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Field::ModerateDecision => "gamma_m_d",
            Field::HighDecision => "gamma_h_d",
            Field::ModerateHealthcare => "gamma_m_hc",
            Field::HighHealthcare => "gamma_h_hc",
        }
    }
}

impl fmt::Display for Field {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Field {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Field::ALL.into_iter().find(|v| v.name() == s).ok_or_else(|| Error::invalid(format!("unknown field `{s}`")))
    }
}

/// Indicators `(delta_m_d, delta_h_d, delta_m_hc, delta_h_hc)`, in [`Field::ALL`] order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct DesignRow(pub [bool; 4]);

impl DesignRow {
    pub fn from_classes(dm_class: u8, hc_class: u8) -> Result<Self> {
        if dm_class > 2 || hc_class > 2 {
            return Err(Error::invalid(format!("empowerment classes must be 0, 1 or 2; got ({dm_class}, {hc_class})")));
        }
        Ok(DesignRow([dm_class == 1, dm_class == 2, hc_class == 1, hc_class == 2]))
    }

    pub fn get(&self, field: Field) -> bool {
        self.0[field.index()]
    }

    pub fn as_f64(&self) -> [f64; 4] {
        self.0.map(|b| if b { 1.0 } else { 0.0 })
    }
}

pub fn build_design(records: &[ChildRecord]) -> Result<Vec<DesignRow>> {
    records.iter().map(|r| DesignRow::from_classes(r.dm_class, r.hc_class)).collect()
}

/// A (decision-making, healthcare) class pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Profile {
    pub dm: u8,
    pub hc: u8,
}

impl Profile {
    pub const REFERENCE: Profile = Profile { dm: 0, hc: 0 };

    pub fn all() -> impl Iterator<Item = Profile> {
        (0..3).flat_map(|dm| (0..3).map(move |hc| Profile { dm, hc }))
    }

    /// Position in [`Profile::all`].
    pub fn index(self) -> usize {
        self.dm as usize * 3 + self.hc as usize
    }

    pub fn design(self) -> DesignRow {
        DesignRow::from_classes(self.dm, self.hc).expect("profile classes are in range")
    }

    pub fn label(self) -> String {
        format!("dm{}_hc{}", self.dm, self.hc)
    }
}

/// How the intercept `alpha` is indexed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum InterceptMode {
    /// Independent `alpha_jt` for every unit and wave.
    #[default]
    PerCell,
    /// One `alpha_t` per wave shared by all units.
    PerWave,
}

/// Intercepts, the four latent fields and their hyperparameters.
///
/// Cells are indexed `t * n_units + unit`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelState {
    pub n_units: usize,
    pub n_times: usize,
    pub intercept: InterceptMode,
    pub alpha: Vec<f64>,
    pub gamma: [Vec<f64>; 4],
    pub hyper: [FieldHyper; 4],
}

impl ModelState {
    pub fn zeros(n_units: usize, n_times: usize, intercept: InterceptMode) -> Self {
        let cells = n_units * n_times;
        let n_alpha = match intercept {
            InterceptMode::PerCell => cells,
            InterceptMode::PerWave => n_times,
        };
        ModelState {
            n_units,
            n_times,
            intercept,
            alpha: vec![0.0; n_alpha],
            gamma: std::array::from_fn(|_| vec![0.0; cells]),
            hyper: [FieldHyper { rho: 0.0, tau: 1.0 }; 4],
        }
    }

    pub fn n_cells(&self) -> usize {
        self.n_units * self.n_times
    }

    pub fn cell(&self, lga: usize, time: usize) -> Result<usize> {
        if lga >= self.n_units || time >= self.n_times {
            return Err(Error::invalid(format!(
                "cell (lga {lga}, time {time}) outside {}x{}",
                self.n_units, self.n_times
            )));
        }
        Ok(time * self.n_units + lga)
    }

    pub fn alpha_index(&self, cell: usize) -> usize {
        match self.intercept {
            InterceptMode::PerCell => cell,
            InterceptMode::PerWave => cell / self.n_units,
        }
    }

    pub fn alpha_at(&self, cell: usize) -> f64 {
        self.alpha[self.alpha_index(cell)]
    }

    /// Linear predictor at a cell for a given design row.
    pub fn eta_at(&self, cell: usize, design: &DesignRow) -> f64 {
        let mut eta = self.alpha_at(cell);
        for f in Field::ALL {
            if design.get(f) {
                eta += self.gamma[f.index()][cell];
            }
        }
        eta
    }
}

/// `eta = alpha_jt + sum_k gamma^(k)_jt * delta^(k)`.
pub fn linear_predictor(state: &ModelState, record: &ChildRecord, design: &DesignRow) -> Result<f64> {
    let cell = state.cell(record.lga, record.time)?;
    Ok(state.eta_at(cell, design))
}

pub fn inverse_logit(eta: f64) -> f64 {
    if eta >= 0.0 {
        1.0 / (1.0 + (-eta).exp())
    } else {
        let e = eta.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + exp(x))` without overflow.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Bernoulli log mass `y log pi + (1 - y) log(1 - pi)` at `pi = inverse_logit(eta)`.
pub fn bernoulli_logit_ln(y: bool, eta: f64) -> f64 {
    if y {
        -softplus(-eta)
    } else {
        -softplus(eta)
    }
}

pub fn log_likelihood(state: &ModelState, records: &[ChildRecord], designs: &[DesignRow], vaccine: Vaccine) -> Result<f64> {
    if records.len() != designs.len() {
        return Err(Error::invalid(format!("{} records but {} design rows", records.len(), designs.len())));
    }
    let mut total = 0.0;
    for (r, d) in records.iter().zip(designs) {
        total += bernoulli_logit_ln(r.y(vaccine), linear_predictor(state, r, d)?);
    }
    Ok(total)
}
