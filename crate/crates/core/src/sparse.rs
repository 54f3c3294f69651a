//! Symmetric sparse matrices and an envelope (profile) Cholesky factorization.
//!
//! Precision matrices of areal GMRFs are sparse with a small bandwidth once
//! rows are ordered by reverse Cuthill-McKee, so a profile factorization is
//! enough for every model size this crate targets: fill is confined to the
//! row envelope and the factor is stored contiguously row by row.

use std::collections::VecDeque;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Symmetric matrix in compressed sparse row form with both triangles stored.
#[derive(Debug, Clone, PartialEq)]
pub struct SymCsr {
    n: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl SymCsr {
    /// Builds a matrix from entries given once per unordered pair; duplicates are summed
    /// and each off-diagonal entry is mirrored.
    pub fn from_triplets(n: usize, triplets: impl IntoIterator<Item = (usize, usize, f64)>) -> Self {
        let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
        for (i, j, v) in triplets {
            assert!(i < n && j < n, "triplet ({i}, {j}) outside {n}x{n}");
            rows[i].push((j, v));
            if i != j {
                rows[j].push((i, v));
            }
        }
        let mut indptr = Vec::with_capacity(n + 1);
        let mut indices = Vec::new();
        let mut values = Vec::new();
        indptr.push(0);
        for mut row in rows {
            row.sort_by_key(|&(j, _)| j);
            let mut last: Option<usize> = None;
            for (j, v) in row {
                if last == Some(j) {
                    *values.last_mut().unwrap() += v;
                } else {
                    indices.push(j);
                    values.push(v);
                    last = Some(j);
                }
            }
            indptr.push(indices.len());
        }
        SymCsr { n, indptr, indices, values }
    }

    pub fn diagonal_matrix(diag: &[f64]) -> Self {
        Self::from_triplets(diag.len(), diag.iter().enumerate().map(|(i, &d)| (i, i, d)))
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    /// Column indices and values of row `i`.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.indptr[i]..self.indptr[i + 1];
        self.indices[span.clone()].iter().copied().zip(self.values[span].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let span = self.indptr[i]..self.indptr[i + 1];
        match self.indices[span.clone()].binary_search(&j) {
            Ok(pos) => self.values[span.start + pos],
            Err(_) => 0.0,
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.get(i, i)).collect()
    }

    /// Entries of the upper triangle (including the diagonal).
    pub fn upper_triplets(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.n).flat_map(move |i| self.row(i).filter(move |&(j, _)| j >= i).map(move |(j, v)| (i, j, v)))
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.n);
        (0..self.n).map(|i| self.row(i).map(|(j, v)| v * x[j]).sum()).collect()
    }

    pub fn quad_form(&self, x: &[f64]) -> f64 {
        self.mul_vec(x).iter().zip(x).map(|(a, b)| a * b).sum()
    }

    pub fn scaled(&self, factor: f64) -> Self {
        let mut out = self.clone();
        out.values.iter_mut().for_each(|v| *v *= factor);
        out
    }

    /// `self + other`; the result's pattern is the union of both patterns.
    pub fn add(&self, other: &SymCsr) -> Self {
        assert_eq!(self.n, other.n);
        Self::from_triplets(self.n, self.upper_triplets().chain(other.upper_triplets()))
    }

    pub fn add_diagonal(&self, diag: &[f64]) -> Self {
        assert_eq!(diag.len(), self.n);
        Self::from_triplets(
            self.n,
            self.upper_triplets().chain(diag.iter().enumerate().map(|(i, &d)| (i, i, d))),
        )
    }

    /// Kronecker product `outer ⊗ self` for a dense symmetric `outer`.
    ///
    /// Index `(t, j)` of the result is `t * self.n() + j`.
    pub fn kron_left(&self, outer: &DMatrix<f64>) -> Self {
        assert_eq!(outer.nrows(), outer.ncols());
        let t_len = outer.nrows();
        let n = self.n;
        let mut trips = Vec::new();
        for t in 0..t_len {
            for s in t..t_len {
                let a = outer[(t, s)];
                if a == 0.0 {
                    continue;
                }
                if s == t {
                    trips.extend(self.upper_triplets().map(|(i, j, v)| (t * n + i, t * n + j, a * v)));
                } else {
                    for i in 0..n {
                        for (j, v) in self.row(i) {
                            trips.push((t * n + i, s * n + j, a * v));
                        }
                    }
                }
            }
        }
        Self::from_triplets(n * t_len, trips)
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.n, self.n);
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                m[(i, j)] = v;
            }
        }
        m
    }
}

/// A symmetric row/column permutation. `perm[new] = old`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Ordering {
    perm: Vec<usize>,
    inv: Vec<usize>,
}

impl Ordering {
    pub fn identity(n: usize) -> Self {
        Ordering { perm: (0..n).collect(), inv: (0..n).collect() }
    }

    /// Reverse Cuthill-McKee ordering of the matrix graph.
    pub fn reverse_cuthill_mckee(m: &SymCsr) -> Self {
        let n = m.n();
        let adj: Vec<Vec<usize>> = (0..n)
            .map(|i| m.row(i).map(|(j, _)| j).filter(|&j| j != i).collect())
            .collect();
        let degree: Vec<usize> = adj.iter().map(Vec::len).collect();
        let mut visited = vec![false; n];
        let mut order = Vec::with_capacity(n);

        let mut by_degree: Vec<usize> = (0..n).collect();
        by_degree.sort_by_key(|&i| (degree[i], i));

        for &seed in &by_degree {
            if visited[seed] {
                continue;
            }
            let start = pseudo_peripheral(seed, &adj, &degree);
            visited[start] = true;
            let mut queue = VecDeque::from([start]);
            while let Some(v) = queue.pop_front() {
                order.push(v);
                let mut next: Vec<usize> = adj[v].iter().copied().filter(|&w| !visited[w]).collect();
                next.sort_by_key(|&w| (degree[w], w));
                for w in next {
                    visited[w] = true;
                    queue.push_back(w);
                }
            }
        }
        order.reverse();
        Self::from_perm(order)
    }

    pub fn from_perm(perm: Vec<usize>) -> Self {
        let mut inv = vec![0; perm.len()];
        for (new, &old) in perm.iter().enumerate() {
            inv[old] = new;
        }
        Ordering { perm, inv }
    }

    pub fn len(&self) -> usize {
        self.perm.len()
    }

    pub fn is_empty(&self) -> bool {
        self.perm.is_empty()
    }
}

/// Walks BFS level structures from `seed` until eccentricity stops growing.
fn pseudo_peripheral(seed: usize, adj: &[Vec<usize>], degree: &[usize]) -> usize {
    let mut current = seed;
    let mut ecc = 0usize;
    for _ in 0..8 {
        let (levels, last_level) = bfs_levels(current, adj);
        if levels <= ecc {
            break;
        }
        ecc = levels;
        current = *last_level.iter().min_by_key(|&&v| (degree[v], v)).unwrap();
    }
    current
}

fn bfs_levels(start: usize, adj: &[Vec<usize>]) -> (usize, Vec<usize>) {
    let mut dist = vec![usize::MAX; adj.len()];
    dist[start] = 0;
    let mut frontier = vec![start];
    let mut depth = 0;
    loop {
        let mut next = Vec::new();
        for &v in &frontier {
            for &w in &adj[v] {
                if dist[w] == usize::MAX {
                    dist[w] = depth + 1;
                    next.push(w);
                }
            }
        }
        if next.is_empty() {
            return (depth, frontier);
        }
        depth += 1;
        frontier = next;
    }
}

/// Cholesky factor `P M P' = L L'` stored over the row envelope of `P M P'`.
#[derive(Debug, Clone)]
pub struct EnvelopeCholesky {
    ordering: Ordering,
    first: Vec<usize>,
    offsets: Vec<usize>,
    data: Vec<f64>,
}

impl EnvelopeCholesky {
    pub fn factor(m: &SymCsr, ordering: &Ordering) -> Result<Self> {
        let n = m.n();
        assert_eq!(ordering.len(), n, "ordering size mismatch");
        let perm = &ordering.perm;
        let inv = &ordering.inv;

        let mut first = vec![0usize; n];
        for (i, f) in first.iter_mut().enumerate() {
            *f = m.row(perm[i]).map(|(j, _)| inv[j]).filter(|&j| j <= i).min().unwrap_or(i);
        }
        let mut offsets = Vec::with_capacity(n + 1);
        offsets.push(0);
        for i in 0..n {
            offsets.push(offsets[i] + i - first[i] + 1);
        }
        let mut data = vec![0.0; offsets[n]];
        for i in 0..n {
            for (j_old, v) in m.row(perm[i]) {
                let j = inv[j_old];
                if j <= i {
                    data[offsets[i] + j - first[i]] = v;
                }
            }
        }

        for i in 0..n {
            let fi = first[i];
            let oi = offsets[i];
            for j in fi..i {
                let fj = first[j];
                let oj = offsets[j];
                let k0 = fi.max(fj);
                let dot = dot(&data[oi + k0 - fi..oi + j - fi], &data[oj + k0 - fj..oj + j - fj]);
                let ljj = data[oj + j - fj];
                data[oi + j - fi] = (data[oi + j - fi] - dot) / ljj;
            }
            let row = &data[oi..oi + i - fi];
            let a = data[oi + i - fi];
            let d = a - dot(row, row);
            // A pivot lost to rounding relative to its diagonal entry means a singular matrix.
            if !(d > 1e-13 * a.abs()) || !d.is_finite() {
                return Err(Error::numerical(format!(
                    "matrix is not positive definite (pivot {d:e} at row {})",
                    perm[i]
                )));
            }
            data[oi + i - fi] = d.sqrt();
        }
        Ok(EnvelopeCholesky { ordering: ordering.clone(), first, offsets, data })
    }

    pub fn n(&self) -> usize {
        self.first.len()
    }

    fn diag(&self, i: usize) -> f64 {
        self.data[self.offsets[i] + i - self.first[i]]
    }

    pub fn log_det(&self) -> f64 {
        2.0 * (0..self.n()).map(|i| self.diag(i).ln()).sum::<f64>()
    }

    /// Solves `M x = b`.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n();
        assert_eq!(b.len(), n);
        let mut y: Vec<f64> = (0..n).map(|i| b[self.ordering.perm[i]]).collect();
        self.forward_in_place(&mut y);
        self.backward_in_place(&mut y);
        self.unpermute(y)
    }

    /// Returns `P' L^{-T} z`, distributed `N(0, M^{-1})` when `z ~ N(0, I)`.
    pub fn whiten_inverse(&self, z: &[f64]) -> Vec<f64> {
        assert_eq!(z.len(), self.n());
        let mut y = z.to_vec();
        self.backward_in_place(&mut y);
        self.unpermute(y)
    }

    fn unpermute(&self, y: Vec<f64>) -> Vec<f64> {
        let mut x = vec![0.0; y.len()];
        for (i, v) in y.into_iter().enumerate() {
            x[self.ordering.perm[i]] = v;
        }
        x
    }

    fn forward_in_place(&self, y: &mut [f64]) {
        for i in 0..self.n() {
            let fi = self.first[i];
            let oi = self.offsets[i];
            let s = dot(&self.data[oi..oi + i - fi], &y[fi..i]);
            y[i] = (y[i] - s) / self.diag(i);
        }
    }

    fn backward_in_place(&self, y: &mut [f64]) {
        for i in (0..self.n()).rev() {
            let fi = self.first[i];
            let oi = self.offsets[i];
            let xi = y[i] / self.diag(i);
            y[i] = xi;
            for (k, l) in (fi..i).zip(&self.data[oi..oi + i - fi]) {
                y[k] -= l * xi;
            }
        }
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid_laplacian_plus(n_side: usize, shift: f64) -> SymCsr {
        let n = n_side * n_side;
        let mut trips = Vec::new();
        for r in 0..n_side {
            for c in 0..n_side {
                let i = r * n_side + c;
                let mut deg = 0.0;
                if c + 1 < n_side {
                    trips.push((i, i + 1, -1.0));
                    deg += 1.0;
                }
                if r + 1 < n_side {
                    trips.push((i, i + n_side, -1.0));
                    deg += 1.0;
                }
                if c > 0 {
                    deg += 1.0;
                }
                if r > 0 {
                    deg += 1.0;
                }
                trips.push((i, i, deg + shift));
            }
        }
        SymCsr::from_triplets(n, trips)
    }

    #[test]
    fn triplets_are_mirrored_and_summed() {
        let m = SymCsr::from_triplets(3, [(0, 1, -1.0), (1, 0, -1.0), (2, 2, 4.0), (2, 2, 1.0)]);
        assert_eq!(m.get(0, 1), -2.0);
        assert_eq!(m.get(1, 0), -2.0);
        assert_eq!(m.get(2, 2), 5.0);
        assert_eq!(m.get(0, 2), 0.0);
    }

    #[test]
    fn cholesky_matches_dense_solve_and_logdet() {
        let m = grid_laplacian_plus(5, 0.3);
        let dense = m.to_dense();
        let b: Vec<f64> = (0..25).map(|i| (i as f64 * 0.37).sin()).collect();
        for ordering in [Ordering::identity(25), Ordering::reverse_cuthill_mckee(&m)] {
            let chol = EnvelopeCholesky::factor(&m, &ordering).unwrap();
            let x = chol.solve(&b);
            let r = &dense * nalgebra::DVector::from_column_slice(&x);
            for i in 0..25 {
                assert!((r[i] - b[i]).abs() < 1e-10);
            }
            let dense_logdet = dense.clone().cholesky().unwrap().l().diagonal().map(|d| d.ln()).sum() * 2.0;
            assert!((chol.log_det() - dense_logdet).abs() < 1e-10);
        }
    }

    #[test]
    fn whitening_reproduces_inverse() {
        let m = grid_laplacian_plus(3, 1.0);
        let ord = Ordering::reverse_cuthill_mckee(&m);
        let chol = EnvelopeCholesky::factor(&m, &ord).unwrap();
        let inv = m.to_dense().try_inverse().unwrap();
        // Columns of X = P' L^{-T} satisfy X X' = M^{-1}.
        let cols: Vec<Vec<f64>> = (0..9)
            .map(|k| {
                let mut e = vec![0.0; 9];
                e[k] = 1.0;
                chol.whiten_inverse(&e)
            })
            .collect();
        for i in 0..9 {
            for j in 0..9 {
                let s: f64 = cols.iter().map(|c| c[i] * c[j]).sum();
                assert!((s - inv[(i, j)]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn singular_matrix_is_rejected() {
        let m = grid_laplacian_plus(3, 0.0);
        let err = EnvelopeCholesky::factor(&m, &Ordering::identity(9));
        assert!(matches!(err, Err(Error::Numerical(_))));
    }

    #[test]
    fn rcm_reduces_profile_on_scrambled_path() {
        // A path whose vertices are labelled in a scrambled order.
        let labels = [0usize, 7, 3, 9, 1, 5, 8, 2, 6, 4];
        let trips: Vec<_> = labels
            .windows(2)
            .map(|w| (w[0], w[1], -1.0))
            .chain((0..10).map(|i| (i, i, 3.0)))
            .collect();
        let m = SymCsr::from_triplets(10, trips);
        let profile = |o: &Ordering| EnvelopeCholesky::factor(&m, o).unwrap().data.len();
        assert!(profile(&Ordering::reverse_cuthill_mckee(&m)) <= 19);
        assert!(profile(&Ordering::identity(10)) > 19);
    }

    #[test]
    fn kron_left_matches_dense_kronecker() {
        let r = grid_laplacian_plus(2, 0.0);
        let a = DMatrix::from_row_slice(2, 2, &[2.0, -0.5, -0.5, 1.0]);
        let k = r.kron_left(&a).to_dense();
        let expected = a.kronecker(&r.to_dense());
        assert!((k - expected).abs().max() < 1e-15);
    }
}
