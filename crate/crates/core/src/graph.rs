//! Areal adjacency graphs and their intrinsic CAR structure matrices.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::Read;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sparse::SymCsr;

/// Areal units, their symmetric neighbour lists and the state each unit belongs to.
///
/// Immutable after construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdjacencyGraph {
    unit_ids: Vec<String>,
    neighbors: Vec<Vec<usize>>,
    state_names: Vec<String>,
    state_of: Vec<usize>,
}

impl AdjacencyGraph {
    /// Builds a graph from unit ids, undirected edges by index and one state label per unit.
    ///
    /// Edges are closed under symmetry and deduplicated. Self-loops are rejected.
    pub fn new(unit_ids: Vec<String>, edges: &[(usize, usize)], states: &[String]) -> Result<Self> {
        let n = unit_ids.len();
        if states.len() != n {
            return Err(Error::Graph(format!("{} units but {} state labels", n, states.len())));
        }
        let mut seen = BTreeSet::new();
        for id in &unit_ids {
            if !seen.insert(id.as_str()) {
                return Err(Error::Graph(format!("duplicate unit id `{id}`")));
            }
        }
        let mut sets: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); n];
        for &(a, b) in edges {
            if a >= n || b >= n {
                return Err(Error::Graph(format!("edge ({a}, {b}) refers to a unit outside 0..{n}")));
            }
            if a == b {
                return Err(Error::Graph(format!("self-loop on unit `{}`", unit_ids[a])));
            }
            sets[a].insert(b);
            sets[b].insert(a);
        }
        let state_names: Vec<String> = states.iter().cloned().collect::<BTreeSet<_>>().into_iter().collect();
        let state_of = states
            .iter()
            .map(|s| state_names.binary_search(s).expect("state collected above"))
            .collect();
        Ok(AdjacencyGraph {
            unit_ids,
            neighbors: sets.into_iter().map(|s| s.into_iter().collect()).collect(),
            state_names,
            state_of,
        })
    }

    pub fn n_units(&self) -> usize {
        self.unit_ids.len()
    }

    pub fn unit_ids(&self) -> &[String] {
        &self.unit_ids
    }

    pub fn unit_index(&self, id: &str) -> Option<usize> {
        self.unit_ids.iter().position(|u| u == id)
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[i]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.neighbors[i].len()
    }

    /// Sorted distinct state identifiers.
    pub fn state_names(&self) -> &[String] {
        &self.state_names
    }

    pub fn n_states(&self) -> usize {
        self.state_names.len()
    }

    /// Index into [`Self::state_names`] for unit `i`.
    pub fn state_of(&self, i: usize) -> usize {
        self.state_of[i]
    }

    /// Units of each state, in unit order.
    pub fn state_members(&self) -> Vec<Vec<usize>> {
        let mut members = vec![Vec::new(); self.n_states()];
        for (i, &s) in self.state_of.iter().enumerate() {
            members[s].push(i);
        }
        members
    }

    /// Undirected edges with `a < b`, in lexicographic order.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        self.neighbors
            .iter()
            .enumerate()
            .flat_map(|(a, nb)| nb.iter().filter(move |&&b| b > a).map(move |&b| (a, b)))
            .collect()
    }
}

#[derive(Debug, Deserialize)]
struct EdgeRow {
    unit_a: String,
    unit_b: String,
}

#[derive(Debug, Deserialize)]
struct StateRow {
    unit: String,
    state: String,
}

/// Reads a headered `unit_a,unit_b` edge list and a headered `unit,state` map.
///
/// The state map defines the unit set and its order; units that appear in no edge become islands.
pub fn load_adjacency<E: Read, S: Read>(edge_list: E, state_map: S) -> Result<AdjacencyGraph> {
    let mut unit_ids = Vec::new();
    let mut states = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    let mut reader = csv::ReaderBuilder::new().comment(Some(b'#')).trim(csv::Trim::All).from_reader(state_map);
    for row in reader.deserialize() {
        let row: StateRow = row.map_err(|e| Error::Schema(format!("state map: {e}")))?;
        match index.get(&row.unit) {
            Some(&i) if states[i] != row.state => {
                return Err(Error::Graph(format!(
                    "unit `{}` assigned to both `{}` and `{}`",
                    row.unit, states[i], row.state
                )));
            }
            Some(_) => {}
            None => {
                index.insert(row.unit.clone(), unit_ids.len());
                unit_ids.push(row.unit);
                states.push(row.state);
            }
        }
    }
    let mut edges = Vec::new();
    let mut reader = csv::ReaderBuilder::new().comment(Some(b'#')).trim(csv::Trim::All).from_reader(edge_list);
    for row in reader.deserialize() {
        let row: EdgeRow = row.map_err(|e| Error::Schema(format!("edge list: {e}")))?;
        let lookup = |u: &str| {
            index.get(u).copied().ok_or_else(|| Error::Graph(format!("edge list refers to unknown unit `{u}`")))
        };
        edges.push((lookup(&row.unit_a)?, lookup(&row.unit_b)?));
    }
    AdjacencyGraph::new(unit_ids, &edges, &states)
}

/// Connected-component labels of a graph.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Components {
    pub labels: Vec<usize>,
    pub n_components: usize,
    pub islands: Vec<usize>,
}

impl Components {
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.n_components];
        for (i, &c) in self.labels.iter().enumerate() {
            out[c].push(i);
        }
        out
    }
}

/// Labels components in increasing order of their smallest unit id, so labels do not
/// depend on the order units were supplied in.
pub fn connected_components(graph: &AdjacencyGraph) -> Components {
    let n = graph.n_units();
    let mut raw = vec![usize::MAX; n];
    let mut count = 0;
    for start in 0..n {
        if raw[start] != usize::MAX {
            continue;
        }
        let mut stack = vec![start];
        raw[start] = count;
        while let Some(v) = stack.pop() {
            for &w in graph.neighbors(v) {
                if raw[w] == usize::MAX {
                    raw[w] = count;
                    stack.push(w);
                }
            }
        }
        count += 1;
    }
    let mut min_id: BTreeMap<usize, &str> = BTreeMap::new();
    for (i, &c) in raw.iter().enumerate() {
        let id = graph.unit_ids()[i].as_str();
        min_id.entry(c).and_modify(|m| *m = (*m).min(id)).or_insert(id);
    }
    let mut order: Vec<(usize, &str)> = min_id.into_iter().collect();
    order.sort_by(|a, b| a.1.cmp(b.1));
    let mut relabel = vec![0; count];
    for (new, (old, _)) in order.into_iter().enumerate() {
        relabel[old] = new;
    }
    Components {
        labels: raw.iter().map(|&c| relabel[c]).collect(),
        n_components: count,
        islands: (0..n).filter(|&i| graph.degree(i) == 0).collect(),
    }
}

/// ICAR structure matrix `R` (degree on the diagonal, -1 per neighbour pair) with
/// component metadata.
#[derive(Debug, Clone)]
pub struct IcarStructure {
    pub matrix: SymCsr,
    pub components: Components,
}

impl IcarStructure {
    pub fn n_units(&self) -> usize {
        self.matrix.n()
    }

    pub fn islands(&self) -> &[usize] {
        &self.components.islands
    }

    pub fn is_island(&self, i: usize) -> bool {
        self.components.islands.binary_search(&i).is_ok()
    }

    /// Members of every component that is not a single island.
    pub fn connected_blocks(&self) -> Vec<Vec<usize>> {
        self.components.members().into_iter().filter(|m| !(m.len() == 1 && self.is_island(m[0]))).collect()
    }
}

pub fn icar_structure(graph: &AdjacencyGraph) -> IcarStructure {
    let n = graph.n_units();
    let mut trips = Vec::new();
    for i in 0..n {
        trips.push((i, i, graph.degree(i) as f64));
        for &j in graph.neighbors(i) {
            if j > i {
                trips.push((i, j, -1.0));
            }
        }
    }
    IcarStructure { matrix: SymCsr::from_triplets(n, trips), components: connected_components(graph) }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(names: &[&str]) -> Vec<String> {
        names.iter().map(|s| s.to_string()).collect()
    }

    fn load(edges: &str, states: &str) -> Result<AdjacencyGraph> {
        load_adjacency(edges.as_bytes(), states.as_bytes())
    }

    #[test]
    fn loads_path_graph() {
        let g = load("unit_a,unit_b\nA,B\nB,C\n", "unit,state\nA,s1\nB,s1\nC,s2\n").unwrap();
        let b = g.unit_index("B").unwrap();
        let nb: Vec<&str> = g.neighbors(b).iter().map(|&i| g.unit_ids()[i].as_str()).collect();
        assert_eq!(nb, ["A", "C"]);
        assert_eq!(g.state_names(), ["s1", "s2"]);
        assert_eq!(g.state_of(2), 1);
    }

    #[test]
    fn one_sided_edge_is_closed() {
        let g = load("unit_a,unit_b\nA,B\n", "unit,state\nA,s\nB,s\n").unwrap();
        assert_eq!(g.neighbors(0), [1]);
        assert_eq!(g.neighbors(1), [0]);
    }

    #[test]
    fn self_loop_is_rejected() {
        let err = load("unit_a,unit_b\nA,A\n", "unit,state\nA,s\n").unwrap_err();
        assert!(matches!(err, Error::Graph(_)));
    }

    #[test]
    fn unknown_unit_and_conflicting_state_are_rejected() {
        assert!(load("unit_a,unit_b\nA,Z\n", "unit,state\nA,s\n").is_err());
        assert!(load("unit_a,unit_b\n", "unit,state\nA,s\nA,t\n").is_err());
        // Repeating an identical assignment is fine.
        assert!(load("unit_a,unit_b\n", "unit,state\nA,s\nA,s\n").is_ok());
    }

    #[test]
    fn state_only_units_become_islands() {
        let g = load("unit_a,unit_b\nA,B\n", "unit,state\nA,s\nB,s\nC,s\n").unwrap();
        let c = connected_components(&g);
        assert_eq!(c.n_components, 2);
        assert_eq!(c.islands, [2]);
    }

    #[test]
    fn component_counts() {
        let path = AdjacencyGraph::new(ids(&["A", "B", "C"]), &[(0, 1), (1, 2)], &ids(&["s", "s", "s"])).unwrap();
        assert_eq!(connected_components(&path).n_components, 1);

        let split = AdjacencyGraph::new(ids(&["A", "B", "C"]), &[(0, 1)], &ids(&["s", "s", "s"])).unwrap();
        let c = connected_components(&split);
        assert_eq!((c.n_components, c.islands.clone()), (2, vec![2]));

        let empty = AdjacencyGraph::new(ids(&["A", "B", "C"]), &[], &ids(&["s", "s", "s"])).unwrap();
        assert_eq!(connected_components(&empty).n_components, 3);
    }

    #[test]
    fn component_labels_ignore_input_order() {
        let g1 = AdjacencyGraph::new(ids(&["A", "B", "C", "D"]), &[(0, 1), (2, 3)], &ids(&["s"; 4])).unwrap();
        let g2 = AdjacencyGraph::new(ids(&["D", "C", "B", "A"]), &[(3, 2), (1, 0)], &ids(&["s"; 4])).unwrap();
        let c1 = connected_components(&g1);
        let c2 = connected_components(&g2);
        for id in ["A", "B", "C", "D"] {
            assert_eq!(
                c1.labels[g1.unit_index(id).unwrap()],
                c2.labels[g2.unit_index(id).unwrap()]
            );
        }
    }

    #[test]
    fn icar_matrix_examples() {
        let path = AdjacencyGraph::new(ids(&["A", "B", "C"]), &[(0, 1), (1, 2)], &ids(&["s"; 3])).unwrap();
        let r = icar_structure(&path).matrix.to_dense();
        let expected = nalgebra::DMatrix::from_row_slice(3, 3, &[1., -1., 0., -1., 2., -1., 0., -1., 1.]);
        assert_eq!(r, expected);

        let single = AdjacencyGraph::new(ids(&["A"]), &[], &ids(&["s"])).unwrap();
        let icar = icar_structure(&single);
        assert_eq!(icar.matrix.to_dense()[(0, 0)], 0.0);
        assert_eq!(icar.islands(), [0]);
        assert!(icar.connected_blocks().is_empty());
    }

    #[test]
    fn four_cycle_has_rank_three() {
        let g = AdjacencyGraph::new(ids(&["A", "B", "C", "D"]), &[(0, 1), (1, 2), (2, 3), (3, 0)], &ids(&["s"; 4]))
            .unwrap();
        let r = icar_structure(&g).matrix.to_dense();
        assert!((0..4).all(|i| r[(i, i)] == 2.0));
        // Cycle Laplacian eigenvalues are 2 - 2cos(2πk/4) = {0, 2, 2, 4}.
        let mut ev: Vec<f64> = r.symmetric_eigen().eigenvalues.iter().copied().collect();
        ev.sort_by(f64::total_cmp);
        for (got, want) in ev.iter().zip([0.0, 2.0, 2.0, 4.0]) {
            assert!((got - want).abs() < 1e-12);
        }
    }
}
