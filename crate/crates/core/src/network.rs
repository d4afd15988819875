//! Agent graphs, doubly-stochastic consensus weights, spectral quantities
//! and the consensus mixing step `y_i = Σ_j W_ij x_j`.

use std::collections::{BTreeSet, VecDeque};
use std::fmt::Write as _;

use rand::Rng;
use thiserror::Error;

use crate::{seed, Matrix, Vector};

/// Row/column-sum tolerance for a valid weight matrix.
pub const STOCHASTIC_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NetworkError {
    #[error("graph needs at least {min} nodes, got {got}")]
    TooFewNodes { min: usize, got: usize },
    #[error("edge ({0}, {1}) is a self-loop")]
    SelfLoop(usize, usize),
    #[error("edge ({i}, {j}) references a node outside 0..{n}")]
    NodeOutOfRange { i: usize, j: usize, n: usize },
    #[error("duplicate edge ({0}, {1})")]
    DuplicateEdge(usize, usize),
    #[error("graph is disconnected ({components} components)")]
    Disconnected { components: usize },
    #[error("weight matrix is not doubly stochastic: {0}")]
    NotDoublyStochastic(String),
    #[error("singular value decomposition did not converge")]
    SpectralNoConvergence,
    #[error("expected {expected} states, got {got}")]
    StateCount { expected: usize, got: usize },
    #[error("state {index} has dimension {got}, expected {expected}")]
    StateDimension { index: usize, expected: usize, got: usize },
    #[error("edge list parse error on line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

// ---------------------------------------------------------------------------
// Graph
// ---------------------------------------------------------------------------

/// Undirected, connected, simple graph on nodes `0..n`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Graph {
    n: usize,
    edges: BTreeSet<(usize, usize)>,
}

impl Graph {
    /// Builds a graph, normalizing every edge to `(min, max)`. Rejects
    /// self-loops, duplicates (in either orientation) and disconnected input.
    pub fn new(n: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self, NetworkError> {
        if n == 0 {
            return Err(NetworkError::TooFewNodes { min: 1, got: 0 });
        }
        let mut set = BTreeSet::new();
        for (i, j) in edges {
            if i >= n || j >= n {
                return Err(NetworkError::NodeOutOfRange { i, j, n });
            }
            if i == j {
                return Err(NetworkError::SelfLoop(i, j));
            }
            if !set.insert((i.min(j), i.max(j))) {
                return Err(NetworkError::DuplicateEdge(i, j));
            }
        }
        let graph = Self { n, edges: set };
        let components = graph.component_count();
        if components != 1 {
            return Err(NetworkError::Disconnected { components });
        }
        Ok(graph)
    }

    pub fn node_count(&self) -> usize {
        self.n
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    /// Edges as `(i, j)` with `i < j`, in lexicographic order.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.edges.iter().copied()
    }

    pub fn degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.n];
        for &(i, j) in &self.edges {
            deg[i] += 1;
            deg[j] += 1;
        }
        deg
    }

    fn adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.n];
        for &(i, j) in &self.edges {
            adj[i].push(j);
            adj[j].push(i);
        }
        adj
    }

    fn component_count(&self) -> usize {
        let adj = self.adjacency();
        let mut seen = vec![false; self.n];
        let mut components = 0;
        for start in 0..self.n {
            if seen[start] {
                continue;
            }
            components += 1;
            seen[start] = true;
            let mut queue = VecDeque::from([start]);
            while let Some(u) = queue.pop_front() {
                for &v in &adj[u] {
                    if !seen[v] {
                        seen[v] = true;
                        queue.push_back(v);
                    }
                }
            }
        }
        components
    }

    /// Serializes as `n <count>` followed by one `i j` line per edge.
    pub fn to_edge_list(&self) -> String {
        let mut out = format!("n {}\n", self.n);
        for (i, j) in self.edges() {
            let _ = writeln!(out, "{i} {j}");
        }
        out
    }

    /// Parses the format written by [`Graph::to_edge_list`]. Blank lines and
    /// lines starting with `#` are ignored.
    pub fn from_edge_list(text: &str) -> Result<Self, NetworkError> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(k, l)| (k + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
        let (line, header) = lines.next().ok_or(NetworkError::Parse {
            line: 0,
            msg: "missing header `n <count>`".into(),
        })?;
        let n = match header.split_whitespace().collect::<Vec<_>>().as_slice() {
            ["n", count] => count.parse::<usize>().map_err(|e| NetworkError::Parse {
                line,
                msg: e.to_string(),
            })?,
            _ => {
                return Err(NetworkError::Parse {
                    line,
                    msg: format!("expected `n <count>`, got `{header}`"),
                })
            }
        };
        let mut edges = Vec::new();
        for (line, l) in lines {
            let parts: Vec<_> = l.split_whitespace().collect();
            let parse = |s: &str| {
                s.parse::<usize>().map_err(|e| NetworkError::Parse {
                    line,
                    msg: e.to_string(),
                })
            };
            match parts.as_slice() {
                [i, j] => edges.push((parse(i)?, parse(j)?)),
                _ => {
                    return Err(NetworkError::Parse {
                        line,
                        msg: format!("expected `i j`, got `{l}`"),
                    })
                }
            }
        }
        Self::new(n, edges)
    }
}

/// 4-neighbor `rows × cols` lattice; node `r * cols + c`.
pub fn build_grid_graph(rows: usize, cols: usize) -> Result<Graph, NetworkError> {
    let n = rows * cols;
    if rows == 0 || cols == 0 || n < 2 {
        return Err(NetworkError::TooFewNodes { min: 2, got: n });
    }
    let mut edges = Vec::with_capacity(2 * n);
    for r in 0..rows {
        for c in 0..cols {
            let u = r * cols + c;
            if c + 1 < cols {
                edges.push((u, u + 1));
            }
            if r + 1 < rows {
                edges.push((u, u + cols));
            }
        }
    }
    Graph::new(n, edges)
}

/// Complete graph on `n` nodes.
pub fn build_complete_graph(n: usize) -> Result<Graph, NetworkError> {
    Graph::new(n, (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))))
}

/// Erdős–Rényi `G(n, p)` conditioned on connectivity by rejection.
///
/// Deterministic for a fixed `seed`. `p` is raised internally after many
/// rejections so sparse requests still terminate.
pub fn random_connected_graph(n: usize, p: f64, seed: u64) -> Result<Graph, NetworkError> {
    if n < 2 {
        return Err(NetworkError::TooFewNodes { min: 2, got: n });
    }
    let mut rng = seed::stream(seed, seed::Stream::Losses, 0xE5);
    let mut prob = p.clamp(0.0, 1.0);
    for attempt in 0.. {
        if attempt > 0 && attempt % 100 == 0 {
            prob = (prob + 0.1).min(1.0);
        }
        let edges: Vec<_> = (0..n)
            .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
            .filter(|_| rng.random::<f64>() < prob)
            .collect();
        match Graph::new(n, edges) {
            Ok(g) => return Ok(g),
            Err(NetworkError::Disconnected { .. }) => continue,
            Err(e) => return Err(e),
        }
    }
    unreachable!()
}

// ---------------------------------------------------------------------------
// Weights
// ---------------------------------------------------------------------------

/// Doubly-stochastic consensus weights with positive diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMatrix {
    w: Matrix,
    /// Nonzero `(j, w_ij)` per row, so mixing costs O(edges).
    rows: Vec<Vec<(usize, f64)>>,
}

impl WeightMatrix {
    /// Validates nonnegativity, positive diagonal, and unit row and column
    /// sums within [`STOCHASTIC_TOL`].
    pub fn from_matrix(w: Matrix) -> Result<Self, NetworkError> {
        let n = w.nrows();
        if n == 0 || w.ncols() != n {
            return Err(NetworkError::NotDoublyStochastic(format!(
                "shape {}x{}",
                w.nrows(),
                w.ncols()
            )));
        }
        for i in 0..n {
            if w[(i, i)] <= 0.0 {
                return Err(NetworkError::NotDoublyStochastic(format!("w[{i}][{i}] <= 0")));
            }
            let row: f64 = w.row(i).sum();
            let col: f64 = w.column(i).sum();
            if (row - 1.0).abs() > STOCHASTIC_TOL || (col - 1.0).abs() > STOCHASTIC_TOL {
                return Err(NetworkError::NotDoublyStochastic(format!(
                    "row {i} sums to {row}, column {i} sums to {col}"
                )));
            }
        }
        if let Some(v) = w.iter().find(|v| !(v.is_finite() && (0.0..=1.0).contains(*v))) {
            return Err(NetworkError::NotDoublyStochastic(format!("entry {v} outside [0, 1]")));
        }
        let rows = (0..n)
            .map(|i| (0..n).filter(|&j| w[(i, j)] != 0.0).map(|j| (j, w[(i, j)])).collect())
            .collect();
        Ok(Self { w, rows })
    }

    pub fn n(&self) -> usize {
        self.w.nrows()
    }

    pub fn matrix(&self) -> &Matrix {
        &self.w
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.w[(i, j)]
    }

    /// Neighborhood `N_i = { j : w_ij > 0 }` (includes `i`).
    pub fn neighbors(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        self.rows[i].iter().map(|&(j, _)| j)
    }

    /// Same weights with agents relabelled: new agent `k` is old agent
    /// `perm[k]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self, NetworkError> {
        let n = self.n();
        Self::from_matrix(Matrix::from_fn(n, n, |a, b| self.w[(perm[a], perm[b])]))
    }
}

/// Metropolis–Hastings weights: `w_ij = 1 / (1 + max(deg_i, deg_j))` on
/// edges, remaining mass on the diagonal.
pub fn metropolis_weights(g: &Graph) -> Result<WeightMatrix, NetworkError> {
    let n = g.node_count();
    let deg = g.degrees();
    let mut w = Matrix::zeros(n, n);
    for (i, j) in g.edges() {
        let v = 1.0 / (1.0 + deg[i].max(deg[j]) as f64);
        w[(i, j)] = v;
        w[(j, i)] = v;
    }
    for i in 0..n {
        let off: f64 = (0..n).filter(|&j| j != i).map(|j| w[(i, j)]).sum();
        w[(i, i)] = 1.0 - off;
    }
    WeightMatrix::from_matrix(w)
}

/// All-to-all averaging, every entry `1/n`.
pub fn uniform_complete_weights(n: usize) -> Result<WeightMatrix, NetworkError> {
    if n == 0 {
        return Err(NetworkError::TooFewNodes { min: 1, got: 0 });
    }
    WeightMatrix::from_matrix(Matrix::from_element(n, n, 1.0 / n as f64))
}

// ---------------------------------------------------------------------------
// Spectrum
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectralInfo {
    /// Second largest singular value of `W`.
    pub sigma2: f64,
    /// Spectral gap `1 - sigma2`.
    pub gap: f64,
}

/// Second largest singular value via a dense SVD. A single agent has no
/// second singular value and is reported as `sigma2 = 0`.
pub fn second_singular_value(w: &WeightMatrix) -> Result<SpectralInfo, NetworkError> {
    if w.n() == 1 {
        return Ok(SpectralInfo { sigma2: 0.0, gap: 1.0 });
    }
    let svd = w
        .matrix()
        .clone()
        .try_svd(false, false, 1e-15, 10_000)
        .ok_or(NetworkError::SpectralNoConvergence)?;
    let mut sv: Vec<f64> = svd.singular_values.iter().copied().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    let sigma2 = sv[1].clamp(0.0, 1.0);
    Ok(SpectralInfo { sigma2, gap: 1.0 - sigma2 })
}

// ---------------------------------------------------------------------------
// Mixing
// ---------------------------------------------------------------------------

/// Consensus step: `out[i] = Σ_j w_ij · states[j]`.
pub fn mix(w: &WeightMatrix, states: &[Vector]) -> Result<Vec<Vector>, NetworkError> {
    let n = w.n();
    if states.len() != n {
        return Err(NetworkError::StateCount { expected: n, got: states.len() });
    }
    let d = states[0].len();
    if let Some((index, s)) = states.iter().enumerate().find(|(_, s)| s.len() != d) {
        return Err(NetworkError::StateDimension { index, expected: d, got: s.len() });
    }
    Ok(w.rows
        .iter()
        .map(|row| {
            let mut acc = Vector::zeros(d);
            for &(j, wij) in row {
                acc.axpy(wij, &states[j], 1.0);
            }
            acc
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn path3() -> Graph {
        Graph::new(3, [(0, 1), (1, 2)]).unwrap()
    }

    fn mean(states: &[Vector]) -> Vector {
        states.iter().fold(Vector::zeros(states[0].len()), |a, s| a + s) / states.len() as f64
    }

    #[test]
    fn grid_edge_counts() {
        let g = build_grid_graph(5, 5).unwrap();
        assert_eq!((g.node_count(), g.edge_count()), (25, 40));
        let g = build_grid_graph(1, 2).unwrap();
        assert_eq!((g.node_count(), g.edge_count()), (2, 1));
        let g = build_grid_graph(2, 2).unwrap();
        assert_eq!((g.node_count(), g.edge_count()), (4, 4));
        assert!(matches!(build_grid_graph(1, 1), Err(NetworkError::TooFewNodes { .. })));
        assert!(build_grid_graph(0, 3).is_err());
    }

    #[test]
    fn graph_rejects_bad_input() {
        assert_eq!(Graph::new(2, [(1, 1)]), Err(NetworkError::SelfLoop(1, 1)));
        assert_eq!(Graph::new(2, [(0, 1), (1, 0)]), Err(NetworkError::DuplicateEdge(1, 0)));
        assert!(matches!(Graph::new(4, [(0, 1), (2, 3)]), Err(NetworkError::Disconnected { components: 2 })));
        assert!(matches!(Graph::new(2, [(0, 5)]), Err(NetworkError::NodeOutOfRange { .. })));
    }

    #[test]
    fn metropolis_small_cases() {
        let w = metropolis_weights(&Graph::new(2, [(0, 1)]).unwrap()).unwrap();
        assert_eq!(w.matrix(), &Matrix::from_element(2, 2, 0.5));

        let w = metropolis_weights(&path3()).unwrap();
        let expected = Matrix::from_row_slice(
            3,
            3,
            &[2.0 / 3.0, 1.0 / 3.0, 0.0, 1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0, 0.0, 1.0 / 3.0, 2.0 / 3.0],
        );
        assert!((w.matrix() - expected).amax() < 1e-15);

        let reversed = metropolis_weights(&Graph::new(3, [(2, 1), (1, 0)]).unwrap()).unwrap();
        assert_eq!(w, reversed);
        assert_eq!(w.neighbors(0).collect::<Vec<_>>(), vec![0, 1]);
    }

    #[test]
    fn uniform_weights() {
        assert_eq!(uniform_complete_weights(1).unwrap().matrix()[(0, 0)], 1.0);
        assert_eq!(uniform_complete_weights(2).unwrap().matrix(), &Matrix::from_element(2, 2, 0.5));
        let w = uniform_complete_weights(4).unwrap();
        assert!(w.matrix().iter().all(|&v| v == 0.25));
        assert!(second_singular_value(&w).unwrap().sigma2.abs() < 1e-10);
    }

    #[test]
    fn sigma2_examples() {
        let id = WeightMatrix::from_matrix(Matrix::identity(5, 5)).unwrap();
        assert!((second_singular_value(&id).unwrap().sigma2 - 1.0).abs() < 1e-10);
        let u = uniform_complete_weights(25).unwrap();
        assert!(second_singular_value(&u).unwrap().sigma2 < 1e-10);
        let info = second_singular_value(&metropolis_weights(&path3()).unwrap()).unwrap();
        assert!((info.sigma2 - 2.0 / 3.0).abs() < 1e-10);
        assert!((info.gap - 1.0 / 3.0).abs() < 1e-10);
    }

    #[test]
    fn mix_examples() {
        let states: Vec<Vector> = (0..3).map(|i| Vector::from_vec(vec![i as f64, 1.0])).collect();
        let id = WeightMatrix::from_matrix(Matrix::identity(3, 3)).unwrap();
        assert_eq!(mix(&id, &states).unwrap(), states);

        let out = mix(&uniform_complete_weights(3).unwrap(), &states).unwrap();
        let m = mean(&states);
        assert!(out.iter().all(|o| (o - &m).amax() < 1e-15));

        let w = metropolis_weights(&path3()).unwrap();
        let e: Vec<Vector> = [1.0, 0.0, 0.0].iter().map(|&v| Vector::from_vec(vec![v])).collect();
        let out = mix(&w, &e).unwrap();
        assert!((out[0][0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((out[1][0] - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(out[2][0], 0.0);
    }

    #[test]
    fn mix_rejects_mismatches() {
        let w = uniform_complete_weights(2).unwrap();
        assert!(matches!(mix(&w, &[Vector::zeros(2)]), Err(NetworkError::StateCount { .. })));
        assert!(matches!(
            mix(&w, &[Vector::zeros(2), Vector::zeros(3)]),
            Err(NetworkError::StateDimension { index: 1, .. })
        ));
    }

    #[test]
    fn edge_list_round_trip() {
        let g = build_grid_graph(2, 3).unwrap();
        let text = g.to_edge_list();
        assert!(text.starts_with("n 6\n0 1\n"));
        assert_eq!(Graph::from_edge_list(&text).unwrap(), g);
        assert!(matches!(Graph::from_edge_list("m 3\n"), Err(NetworkError::Parse { .. })));
        assert!(matches!(Graph::from_edge_list("n 3\n0 1 2\n"), Err(NetworkError::Parse { line: 2, .. })));
    }

    #[test]
    fn random_connected_graphs_have_gap() {
        for s in 0..20u64 {
            let n = 2 + (s as usize % 11);
            let g = random_connected_graph(n, 0.3, s).unwrap();
            let w = metropolis_weights(&g).unwrap();
            assert!(second_singular_value(&w).unwrap().sigma2 < 1.0 - 1e-8, "seed {s}");
            assert_eq!(g, random_connected_graph(n, 0.3, s).unwrap());
        }
    }

    proptest! {
        #[test]
        fn metropolis_is_doubly_stochastic(n in 2usize..12, p in 0.1f64..0.9, s in any::<u64>()) {
            let w = metropolis_weights(&random_connected_graph(n, p, s).unwrap()).unwrap();
            let m = w.matrix();
            for i in 0..n {
                prop_assert!((m.row(i).sum() - 1.0).abs() <= 1e-12);
                prop_assert!((m.column(i).sum() - 1.0).abs() <= 1e-12);
                prop_assert!(m[(i, i)] > 0.0);
            }
            prop_assert!(m.iter().all(|&v| v >= 0.0));
            prop_assert_eq!(m, &m.transpose());
        }

        #[test]
        fn mixing_preserves_mean(
            n in 2usize..10,
            s in any::<u64>(),
            vals in prop::collection::vec(-100.0f64..100.0, 30),
        ) {
            let w = metropolis_weights(&random_connected_graph(n, 0.4, s).unwrap()).unwrap();
            let states: Vec<Vector> = (0..n).map(|i| Vector::from_vec(vec![vals[i], vals[i + 10], vals[i + 20]])).collect();
            let before = mean(&states);
            let after = mean(&mix(&w, &states).unwrap());
            prop_assert!((before - after).amax() <= 1e-12);
        }

        #[test]
        fn repeated_mixing_contracts_at_sigma2_rate(
            n in 2usize..10,
            s in any::<u64>(),
            vals in prop::collection::vec(-10.0f64..10.0, 20),
            rounds in 1usize..30,
        ) {
            let w = metropolis_weights(&random_connected_graph(n, 0.4, s).unwrap()).unwrap();
            let sigma2 = second_singular_value(&w).unwrap().sigma2;
            let mut states: Vec<Vector> = (0..n).map(|i| Vector::from_vec(vec![vals[i], vals[i + 10]])).collect();
            let m = mean(&states);
            let spread = states.iter().map(|x| (x - &m).norm()).fold(0.0, f64::max);
            for _ in 0..rounds {
                states = mix(&w, &states).unwrap();
            }
            let after = states.iter().map(|x| (x - &m).norm()).fold(0.0, f64::max);
            prop_assert!(after <= sigma2.powi(rounds as i32) * spread * (n as f64).sqrt() + 1e-9);
        }
    }
}
