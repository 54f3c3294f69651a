//! Synthetic geographies, survey datasets and raw questionnaire responses drawn
//! from the generative model, with the ground truth that produced them.

use std::collections::{BTreeMap, VecDeque};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::empowerment::RawResponses;
use crate::error::{Error, Result};
use crate::graph::{icar_structure, AdjacencyGraph};
use crate::latent::{FieldHyper, FieldPrior, IslandMode};
use crate::model::{inverse_logit, ChildRecord, InterceptMode, ModelState, Outcomes, Profile, Vaccine};

/// Grid placement of `n_units` units: `ceil(sqrt(n))` columns filled row by row.
pub fn grid_layout(n_units: usize) -> (usize, Vec<(usize, usize)>) {
    let cols = ((n_units as f64).sqrt().ceil() as usize).max(1);
    (cols, (0..n_units).map(|i| (i / cols, i % cols)).collect())
}

/// A connected grid graph with random edge deletions and a contiguous state partition.
///
/// An edge is only dropped when both endpoints keep at least two neighbours and the
/// graph stays connected. States grow by breadth-first search from random seed units.
pub fn simulate_geography<R: Rng + ?Sized>(n_units: usize, n_states: usize, rng: &mut R) -> Result<AdjacencyGraph> {
    if n_states == 0 || n_units < n_states {
        return Err(Error::invalid(format!("cannot place {n_states} states on {n_units} units")));
    }
    let (cols, _) = grid_layout(n_units);
    let mut edges = Vec::new();
    for i in 0..n_units {
        if (i % cols) + 1 < cols && i + 1 < n_units {
            edges.push((i, i + 1));
        }
        if i + cols < n_units {
            edges.push((i, i + cols));
        }
    }
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n_units];
    for &(a, b) in &edges {
        adj[a].push(b);
        adj[b].push(a);
    }
    let mut order: Vec<usize> = (0..edges.len()).collect();
    order.shuffle(rng);
    let mut kept = vec![true; edges.len()];
    for e in order {
        if !rng.random_bool(0.15) {
            continue;
        }
        let (a, b) = edges[e];
        if adj[a].len() < 3 || adj[b].len() < 3 {
            continue;
        }
        adj[a].retain(|&x| x != b);
        adj[b].retain(|&x| x != a);
        if is_connected(&adj) {
            kept[e] = false;
        } else {
            adj[a].push(b);
            adj[b].push(a);
            adj[a].sort_unstable();
            adj[b].sort_unstable();
        }
    }

    let mut seeds: Vec<usize> = (0..n_units).collect();
    seeds.shuffle(rng);
    seeds.truncate(n_states);
    let mut state_of = vec![usize::MAX; n_units];
    let mut queue = VecDeque::new();
    for (s, &u) in seeds.iter().enumerate() {
        state_of[u] = s;
        queue.push_back(u);
    }
    while let Some(u) = queue.pop_front() {
        let mut nb = adj[u].clone();
        nb.sort_unstable();
        for v in nb {
            if state_of[v] == usize::MAX {
                state_of[v] = state_of[u];
                queue.push_back(v);
            }
        }
    }
    let width = n_units.to_string().len();
    let unit_ids: Vec<String> = (0..n_units).map(|i| format!("U{:0width$}", i + 1)).collect();
    let swidth = n_states.to_string().len();
    let states: Vec<String> = state_of.iter().map(|&s| format!("S{:0swidth$}", s + 1)).collect();
    let kept_edges: Vec<(usize, usize)> = edges.iter().zip(&kept).filter(|(_, &k)| k).map(|(&e, _)| e).collect();
    AdjacencyGraph::new(unit_ids, &kept_edges, &states)
}

fn is_connected(adj: &[Vec<usize>]) -> bool {
    let mut seen = vec![false; adj.len()];
    let mut stack = vec![0];
    seen[0] = true;
    let mut count = 1;
    while let Some(u) = stack.pop() {
        for &v in &adj[u] {
            if !seen[v] {
                seen[v] = true;
                count += 1;
                stack.push(v);
            }
        }
    }
    count == adj.len()
}

/// GeoJSON unit squares for a graph laid out by [`grid_layout`], keyed by `unit_id`.
pub fn grid_geojson(graph: &AdjacencyGraph) -> serde_json::Value {
    let (_, coords) = grid_layout(graph.n_units());
    let features: Vec<serde_json::Value> = coords
        .iter()
        .enumerate()
        .map(|(i, &(r, c))| {
            let (x, y) = (c as f64, -(r as f64));
            serde_json::json!({
                "type": "Feature",
                "properties": {
                    "unit_id": graph.unit_ids()[i],
                    "state": graph.state_names()[graph.state_of(i)],
                },
                "geometry": {
                    "type": "Polygon",
                    "coordinates": [[[x, y], [x + 1.0, y], [x + 1.0, y - 1.0], [x, y - 1.0], [x, y]]],
                },
            })
        })
        .collect();
    serde_json::json!({ "type": "FeatureCollection", "features": features })
}

/// Latent components driving the simulated outcomes. `bcg`, `dpt_complete` and `mcv1` are
/// direct; `polio` completes the all-basic schedule and `no_dose` decides whether a child
/// without a complete DPT series received no dose at all.
pub const COMPONENTS: [&str; 5] = ["bcg", "dpt_complete", "mcv1", "polio", "no_dose"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TruthConfig {
    pub rho: f64,
    pub tau: f64,
    /// Intercept mean per component in [`COMPONENTS`] order.
    pub alpha_mean: [f64; 5],
    pub alpha_sd: f64,
    pub intercept: InterceptMode,
    pub island_mode: IslandMode,
    /// Shares of not / moderately / highly empowered women.
    pub dm_proportions: [f64; 3],
    pub hc_proportions: [f64; 3],
    pub first_year: i32,
    pub year_step: i32,
}

impl Default for TruthConfig {
    fn default() -> Self {
        TruthConfig {
            rho: 0.7,
            tau: 0.5,
            alpha_mean: [0.8, 0.0, 0.2, 0.6, -0.4],
            alpha_sd: 0.4,
            intercept: InterceptMode::PerCell,
            island_mode: IslandMode::Independent,
            dm_proportions: [0.4566, 0.2550, 0.2884],
            hc_proportions: [0.3092, 0.2828, 0.4080],
            first_year: 2003,
            year_step: 5,
        }
    }
}

impl TruthConfig {
    pub fn validate(&self) -> Result<()> {
        FieldHyper::new(self.rho, self.tau)?;
        if !(self.alpha_sd >= 0.0) {
            return Err(Error::invalid("alpha_sd must be non-negative"));
        }
        for p in [self.dm_proportions, self.hc_proportions] {
            if p.iter().any(|&v| !(v >= 0.0)) || (p.iter().sum::<f64>() - 1.0).abs() > 1e-6 {
                return Err(Error::invalid(format!("class proportions {p:?} must be non-negative and sum to 1")));
            }
        }
        Ok(())
    }

    pub fn years(&self, n_times: usize) -> Vec<i32> {
        (0..n_times).map(|t| self.first_year + self.year_step * t as i32).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimTruth {
    pub n_units: usize,
    pub n_times: usize,
    pub years: Vec<i32>,
    pub config: TruthConfig,
    /// Generating state per component in [`COMPONENTS`].
    pub components: BTreeMap<String, ModelState>,
    /// True coverage per vaccine, cell (`t * n_units + unit`) and profile.
    pub pi: BTreeMap<String, Vec<[f64; 9]>>,
}

impl SimTruth {
    pub fn component(&self, name: &str) -> Option<&ModelState> {
        self.components.get(name)
    }
}

/// Draws one generating state: intercepts around `mean`, four fields from the constrained prior.
pub fn draw_state<R: Rng + ?Sized>(
    prior: &FieldPrior,
    hyper: FieldHyper,
    intercept: InterceptMode,
    alpha_mean: f64,
    alpha_sd: f64,
    rng: &mut R,
) -> Result<ModelState> {
    let mut state = ModelState::zeros(prior.n_units(), prior.n_times(), intercept);
    for a in state.alpha.iter_mut() {
        let z: f64 = StandardNormal.sample(rng);
        *a = alpha_mean + alpha_sd * z;
    }
    for k in 0..4 {
        state.gamma[k] = prior.sample(&hyper, rng)?;
        state.hyper[k] = hyper;
    }
    Ok(state)
}

fn draw_class<R: Rng + ?Sized>(p: &[f64; 3], rng: &mut R) -> u8 {
    let u: f64 = rng.random();
    if u < p[0] {
        0
    } else if u < p[0] + p[1] {
        1
    } else {
        2
    }
}

/// Simulates `children_per_cell` children in every (unit, wave) cell.
pub fn simulate_survey<R: Rng + ?Sized>(
    graph: &AdjacencyGraph,
    n_times: usize,
    config: &TruthConfig,
    children_per_cell: usize,
    rng: &mut R,
) -> Result<(Vec<ChildRecord>, SimTruth)> {
    config.validate()?;
    let prior = FieldPrior::new(&icar_structure(graph), n_times, config.island_mode)?;
    let hyper = FieldHyper::new(config.rho, config.tau)?;
    let mut states = Vec::with_capacity(COMPONENTS.len());
    for &mean in &config.alpha_mean {
        states.push(draw_state(&prior, hyper, config.intercept, mean, config.alpha_sd, rng)?);
    }
    let n_units = graph.n_units();
    let n_cells = n_units * n_times;
    let width = (n_cells * children_per_cell).max(1).to_string().len();
    let mut records = Vec::with_capacity(n_cells * children_per_cell);
    for t in 0..n_times {
        for j in 0..n_units {
            let cell = t * n_units + j;
            for _ in 0..children_per_cell {
                let design = Profile { dm: draw_class(&config.dm_proportions, rng), hc: draw_class(&config.hc_proportions, rng) };
                let row = design.design();
                let mut draw = |s: &ModelState| rng.random::<f64>() < inverse_logit(s.eta_at(cell, &row));
                let bcg = draw(&states[0]);
                let dpt_complete = draw(&states[1]);
                let mcv1 = draw(&states[2]);
                let polio = draw(&states[3]);
                let doses = if dpt_complete {
                    3
                } else if draw(&states[4]) {
                    0
                } else {
                    1 + (rng.random::<f64>() < 0.5) as u8
                };
                let outcomes = Outcomes {
                    bcg,
                    dpt_complete,
                    mcv1,
                    all_basic: bcg && dpt_complete && mcv1 && polio,
                    zero_dose: doses == 0,
                };
                records.push(ChildRecord {
                    child_id: format!("C{:0width$}", records.len() + 1),
                    lga: j,
                    time: t,
                    outcomes,
                    dm_class: design.dm,
                    hc_class: design.hc,
                });
            }
        }
    }

    let mut pi: BTreeMap<String, Vec<[f64; 9]>> = BTreeMap::new();
    let prob = |s: &ModelState, cell: usize, p: Profile| inverse_logit(s.eta_at(cell, &p.design()));
    for v in Vaccine::ALL {
        let table = (0..n_cells)
            .map(|cell| {
                let mut row = [0.0; 9];
                for p in Profile::all() {
                    let [b, d, m, po, nd] = std::array::from_fn(|c| prob(&states[c], cell, p));
                    row[p.index()] = match v {
                        Vaccine::Bcg => b,
                        Vaccine::DptComplete => d,
                        Vaccine::Mcv1 => m,
                        Vaccine::AllBasic => b * d * m * po,
                        Vaccine::ZeroDose => (1.0 - d) * nd,
                    };
                }
                row
            })
            .collect();
        pi.insert(v.name().to_string(), table);
    }
    let components = COMPONENTS.iter().map(|c| c.to_string()).zip(states).collect();
    let truth = SimTruth { n_units, n_times, years: config.years(n_times), config: config.clone(), components, pi };
    Ok((records, truth))
}

/// Raw questionnaire answers from a one-factor model per dimension: item propensity
/// `0.8 f + 0.6 e`, cut into the original response codes. Returns the responses with
/// the true decision-making and healthcare factors.
pub fn simulate_responses<R: Rng + ?Sized>(
    n_per_wave: usize,
    years: &[i32],
    rng: &mut R,
) -> Vec<(RawResponses, f64, f64)> {
    let mut out = Vec::with_capacity(n_per_wave * years.len());
    for year in years {
        for _ in 0..n_per_wave {
            let f_dm: f64 = StandardNormal.sample(rng);
            let f_hc: f64 = StandardNormal.sample(rng);
            let mut item = |f: f64| {
                let e: f64 = StandardNormal.sample(rng);
                0.8 * f + 0.6 * e
            };
            // Original decision codes: 1 alone (most empowered) .. 4 someone else.
            let decision = std::array::from_fn(|_| {
                let x = item(f_dm);
                Some(if x > 0.6 {
                    1
                } else if x > -0.3 {
                    2
                } else if x > -1.2 {
                    3
                } else {
                    4
                })
            });
            let healthcare = std::array::from_fn(|_| Some(if item(f_hc) > -0.2 { 2 } else { 1 }));
            out.push((RawResponses { survey_year: year.to_string(), decision, healthcare }, f_dm, f_hc));
        }
    }
    out
}
