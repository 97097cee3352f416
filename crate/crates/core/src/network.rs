//! Time-varying communication graphs and consensus averaging.
//!
//! Neighborhoods always contain the node itself; snapshots only store the
//! edges between distinct nodes. Edge `(j, i)` means `j` sends to `i`, so
//! `j ∈ N_{i,in}` and `i ∈ N_{j,out}`.

use std::collections::VecDeque;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::Rng;

use crate::data::write_matrix_csv;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::rng::seeded_stream;

/// One graph of the sequence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GraphSnapshot {
    directed: bool,
    /// Sorted out-neighbors of each node, self excluded.
    out: Vec<Vec<usize>>,
}

impl GraphSnapshot {
    pub fn empty(nodes: usize, directed: bool) -> Self {
        Self {
            directed,
            out: vec![Vec::new(); nodes],
        }
    }

    /// Builds a snapshot from ordered pairs. Undirected snapshots are
    /// symmetrized; self-loops are dropped.
    pub fn from_edges(nodes: usize, directed: bool, edges: &[(usize, usize)]) -> Self {
        let mut out = vec![Vec::new(); nodes];
        for &(a, b) in edges {
            assert!(a < nodes && b < nodes, "edge ({a}, {b}) out of range");
            if a == b {
                continue;
            }
            out[a].push(b);
            if !directed {
                out[b].push(a);
            }
        }
        for list in &mut out {
            list.sort_unstable();
            list.dedup();
        }
        Self { directed, out }
    }

    /// Complete graph on `nodes` vertices.
    pub fn complete(nodes: usize, directed: bool) -> Self {
        let out = (0..nodes)
            .map(|i| (0..nodes).filter(|&j| j != i).collect())
            .collect();
        Self { directed, out }
    }

    pub fn nodes(&self) -> usize {
        self.out.len()
    }

    pub fn is_directed(&self) -> bool {
        self.directed
    }

    /// Out-neighbors of `i`, excluding `i`.
    pub fn out_neighbors(&self, i: usize) -> &[usize] {
        &self.out[i]
    }

    /// |N_{i,out}| including the node itself.
    pub fn out_degree_with_self(&self, i: usize) -> usize {
        self.out[i].len() + 1
    }

    pub fn has_edge(&self, from: usize, to: usize) -> bool {
        self.out[from].binary_search(&to).is_ok()
    }

    /// Ordered pairs (from, to), one per stored direction.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.out
            .iter()
            .enumerate()
            .flat_map(|(i, list)| list.iter().map(move |&j| (i, j)))
    }

    pub fn edge_count(&self) -> usize {
        self.out.iter().map(Vec::len).sum()
    }

    pub fn write_edges_csv(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        writeln!(w, "from,to")?;
        for (a, b) in self.edges() {
            writeln!(w, "{a},{b}")?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Erdős–Rényi snapshot: each candidate edge is kept with probability
/// `edge_prob`. Undirected mode draws each unordered pair once.
pub fn gen_er_snapshot<R: Rng + ?Sized>(
    nodes: usize,
    edge_prob: f64,
    directed: bool,
    rng: &mut R,
) -> GraphSnapshot {
    assert!(
        (0.0..=1.0).contains(&edge_prob),
        "edge probability {edge_prob} outside [0, 1]"
    );
    let mut out = vec![Vec::new(); nodes];
    for i in 0..nodes {
        for j in 0..nodes {
            if i == j || (!directed && j < i) {
                continue;
            }
            if rng.random::<f64>() < edge_prob {
                out[i].push(j);
                if !directed {
                    out[j].push(i);
                }
            }
        }
    }
    for list in &mut out {
        list.sort_unstable();
    }
    GraphSnapshot { directed, out }
}

/// Nonnegative, column-stochastic mixing matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMatrix {
    dense: Matrix,
    /// Nonzero (column, weight) pairs of each row, in column order.
    rows: Vec<Vec<(usize, f64)>>,
}

impl WeightMatrix {
    fn from_dense(dense: Matrix) -> Self {
        let rows = (0..dense.nrows())
            .map(|i| {
                (0..dense.ncols())
                    .filter(|&j| dense[(i, j)] != 0.0)
                    .map(|j| (j, dense[(i, j)]))
                    .collect()
            })
            .collect();
        Self { dense, rows }
    }

    pub fn nodes(&self) -> usize {
        self.dense.nrows()
    }

    pub fn as_matrix(&self) -> &Matrix {
        &self.dense
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.dense[(i, j)]
    }

    pub fn row_support(&self, i: usize) -> &[(usize, f64)] {
        &self.rows[i]
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        write_matrix_csv(&self.dense, path)
    }
}

/// Metropolis weights for an undirected snapshot:
/// w_ij = 1/max(|N_i|, |N_j|) on edges, w_ii = 1 − Σ_{k≠i} w_ik.
pub fn metropolis_weights(g: &GraphSnapshot) -> WeightMatrix {
    assert!(!g.is_directed(), "metropolis weights need an undirected snapshot");
    let n = g.nodes();
    let mut w = Matrix::zeros(n, n);
    for i in 0..n {
        let mut off = 0.0;
        for &j in g.out_neighbors(i) {
            let d = g.out_degree_with_self(i).max(g.out_degree_with_self(j));
            let v = 1.0 / d as f64;
            w[(i, j)] = v;
            off += v;
        }
        w[(i, i)] = 1.0 - off;
    }
    WeightMatrix::from_dense(w)
}

/// Push weights for a directed snapshot: column j holds 1/|N_{j,out}| at
/// every receiver of j, including j itself.
pub fn push_weights(g: &GraphSnapshot) -> WeightMatrix {
    let n = g.nodes();
    let mut w = Matrix::zeros(n, n);
    for j in 0..n {
        let v = 1.0 / g.out_degree_with_self(j) as f64;
        w[(j, j)] = v;
        for &i in g.out_neighbors(j) {
            w[(i, j)] = v;
        }
    }
    WeightMatrix::from_dense(w)
}

/// Weight construction matching the snapshot's directedness.
pub fn weights_for(g: &GraphSnapshot) -> WeightMatrix {
    if g.is_directed() {
        push_weights(g)
    } else {
        metropolis_weights(g)
    }
}

/// One synchronous mixing round: value_i' = Σ_j w_ij value_j.
pub fn consensus_round(values: &[Matrix], w: &WeightMatrix) -> Result<Vec<Matrix>> {
    if values.len() != w.nodes() {
        return Err(Error::ShapeMismatch(format!(
            "{} values for a {}-node weight matrix",
            values.len(),
            w.nodes()
        )));
    }
    let Some(first) = values.first() else {
        return Ok(Vec::new());
    };
    let shape = first.shape();
    if let Some(bad) = values.iter().position(|v| v.shape() != shape) {
        return Err(Error::ShapeMismatch(format!(
            "value {bad} has shape {:?}, expected {shape:?}",
            values[bad].shape()
        )));
    }
    Ok((0..values.len())
        .map(|i| {
            let mut acc = Matrix::zeros(shape.0, shape.1);
            for &(j, wij) in w.row_support(i) {
                for (a, v) in acc.iter_mut().zip(values[j].iter()) {
                    *a += wij * v;
                }
            }
            acc
        })
        .collect())
}

/// How snapshots evolve over (outer, inner) iteration indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SnapshotPolicy {
    /// A fresh Erdős–Rényi draw for every consensus round.
    #[default]
    FreshPerRound,
    /// One draw reused for the whole run.
    Static,
}

/// Seeded generator of graph snapshots indexed by (t, s).
#[derive(Debug, Clone, PartialEq)]
pub struct TimeVaryingNetwork {
    pub nodes: usize,
    pub edge_prob: f64,
    pub directed: bool,
    pub seed: u64,
    pub policy: SnapshotPolicy,
}

impl TimeVaryingNetwork {
    pub fn new(nodes: usize, edge_prob: f64, directed: bool, seed: u64) -> Result<Self> {
        if nodes == 0 {
            return Err(Error::invalid("nodes", "must be positive"));
        }
        if !(0.0..=1.0).contains(&edge_prob) {
            return Err(Error::invalid("edge_prob", format!("{edge_prob} is outside [0, 1]")));
        }
        Ok(Self {
            nodes,
            edge_prob,
            directed,
            seed,
            policy: SnapshotPolicy::FreshPerRound,
        })
    }

    pub fn with_policy(mut self, policy: SnapshotPolicy) -> Self {
        self.policy = policy;
        self
    }

    /// Snapshot for outer iteration `t`, inner round `s`; a pure function of
    /// (seed, t, s).
    pub fn snapshot(&self, t: usize, s: usize) -> GraphSnapshot {
        let (t, s) = match self.policy {
            SnapshotPolicy::FreshPerRound => (t as u64, s as u64),
            SnapshotPolicy::Static => (0, 0),
        };
        assert!(s < 1 << 32, "inner round index too large");
        let mut rng = seeded_stream(self.seed, (t << 32) | s);
        gen_er_snapshot(self.nodes, self.edge_prob, self.directed, &mut rng)
    }

    pub fn weights(&self, t: usize, s: usize) -> WeightMatrix {
        weights_for(&self.snapshot(t, s))
    }
}

/// Result of the consensus phase of one outer iteration.
#[derive(Debug, Clone)]
pub struct ConsensusOutcome {
    pub values: Vec<Matrix>,
    /// Strong connectivity of the union of the snapshots used (None when no
    /// round ran).
    pub window_connected: Option<bool>,
}

/// `rounds` consensus rounds for outer iteration `t`, round s = 1..=rounds
/// using snapshot (t, s). Zero rounds return the input unchanged.
pub fn consensus_average(
    values: &[Matrix],
    net: &TimeVaryingNetwork,
    t: usize,
    rounds: usize,
) -> Result<Vec<Matrix>> {
    consensus_average_tracked(values, net, t, rounds).map(|o| o.values)
}

pub fn consensus_average_tracked(
    values: &[Matrix],
    net: &TimeVaryingNetwork,
    t: usize,
    rounds: usize,
) -> Result<ConsensusOutcome> {
    let mut current = values.to_vec();
    let mut window = Vec::with_capacity(rounds);
    for s in 1..=rounds {
        let g = net.snapshot(t, s);
        current = consensus_round(&current, &weights_for(&g))?;
        window.push(g);
    }
    let window_connected = (!window.is_empty()).then(|| is_strongly_connected(&window));
    Ok(ConsensusOutcome {
        values: current,
        window_connected,
    })
}

/// Strong connectivity of the union of the snapshots' edge sets.
pub fn is_strongly_connected(snapshots: &[GraphSnapshot]) -> bool {
    let Some(first) = snapshots.first() else {
        return false;
    };
    let n = first.nodes();
    assert!(
        snapshots.iter().all(|g| g.nodes() == n),
        "snapshots disagree on node count"
    );
    if n <= 1 {
        return true;
    }
    let mut forward = vec![Vec::new(); n];
    let mut backward = vec![Vec::new(); n];
    for g in snapshots {
        for (a, b) in g.edges() {
            forward[a].push(b);
            backward[b].push(a);
        }
    }
    reaches_all(&forward) && reaches_all(&backward)
}

fn reaches_all(adj: &[Vec<usize>]) -> bool {
    let mut seen = vec![false; adj.len()];
    let mut queue = VecDeque::from([0usize]);
    seen[0] = true;
    let mut count = 1;
    while let Some(v) = queue.pop_front() {
        for &w in &adj[v] {
            if !seen[w] {
                seen[w] = true;
                count += 1;
                queue.push_back(w);
            }
        }
    }
    count == adj.len()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::frobenius_distance;
    use crate::rng::seeded;

    #[test]
    fn er_extremes() {
        let mut rng = seeded(1);
        let g = gen_er_snapshot(6, 1.0, true, &mut rng);
        assert_eq!(g.edge_count(), 30);
        assert_eq!(g, GraphSnapshot::complete(6, true));
        let g = gen_er_snapshot(6, 0.0, false, &mut rng);
        assert_eq!(g.edge_count(), 0);
    }

    #[test]
    fn undirected_snapshots_are_symmetric() {
        let g = gen_er_snapshot(20, 0.3, false, &mut seeded(2));
        for (a, b) in g.edges() {
            assert!(g.has_edge(b, a));
        }
    }

    #[test]
    fn directed_edge_count_matches_binomial() {
        let mut rng = seeded(3);
        let samples = 200;
        let mean = (0..samples)
            .map(|_| gen_er_snapshot(36, 0.5, true, &mut rng).edge_count() as f64)
            .sum::<f64>()
            / samples as f64;
        // Binomial(1260, 0.5): σ = √315; the mean of 200 draws has σ/√200.
        let sd = (1260.0_f64 * 0.25).sqrt();
        assert!((mean - 630.0).abs() <= 3.0 * sd, "{mean}");
        assert!((mean - 630.0).abs() <= 3.0 * sd / (samples as f64).sqrt(), "{mean}");
    }

    #[test]
    fn metropolis_on_two_node_path() {
        let g = GraphSnapshot::from_edges(2, false, &[(0, 1)]);
        let w = metropolis_weights(&g);
        assert_eq!(w.as_matrix(), &Matrix::from_element(2, 2, 0.5));
    }

    #[test]
    fn empty_graph_weights_are_identity() {
        let n = 5;
        let id = Matrix::identity(n, n);
        assert_eq!(metropolis_weights(&GraphSnapshot::empty(n, false)).as_matrix(), &id);
        assert_eq!(push_weights(&GraphSnapshot::empty(n, true)).as_matrix(), &id);
    }

    #[test]
    fn push_column_with_one_out_edge() {
        let g = GraphSnapshot::from_edges(3, true, &[(0, 2)]);
        let w = push_weights(&g);
        assert_eq!(w.get(0, 0), 0.5);
        assert_eq!(w.get(2, 0), 0.5);
        assert_eq!(w.get(1, 0), 0.0);
        assert_eq!(w.get(1, 1), 1.0);
        assert_eq!(w.get(2, 2), 1.0);
    }

    #[test]
    fn complete_graph_metropolis_averages_in_one_round() {
        let n = 7;
        let w = metropolis_weights(&GraphSnapshot::complete(n, false));
        let mut rng = seeded(4);
        let values: Vec<Matrix> = (0..n)
            .map(|_| Matrix::from_fn(3, 3, |_, _| rng.random::<f64>()))
            .collect();
        let mean = values.iter().fold(Matrix::zeros(3, 3), |acc, v| acc + v) / n as f64;
        for v in consensus_round(&values, &w).unwrap() {
            assert!(frobenius_distance(&v, &mean) <= 1e-10);
        }
    }

    #[test]
    fn consensus_round_rejects_bad_shapes() {
        let w = push_weights(&GraphSnapshot::empty(2, true));
        let values = vec![Matrix::zeros(2, 2), Matrix::zeros(3, 2)];
        assert!(matches!(consensus_round(&values, &w), Err(Error::ShapeMismatch(_))));
        assert!(consensus_round(&values[..1], &w).is_err());
    }

    #[test]
    fn consensus_fixes_agreement_and_zero_rounds() {
        let net = TimeVaryingNetwork::new(5, 0.4, true, 9).unwrap();
        let v = Matrix::from_fn(2, 2, |i, j| (i + 2 * j) as f64);
        let values = vec![v.clone(); 5];
        assert_eq!(consensus_average(&values, &net, 0, 0).unwrap(), values);
        // Push weights are only column stochastic; equal inputs stay equal
        // only for row-stochastic W, so use the undirected network here.
        let net = TimeVaryingNetwork::new(5, 0.4, false, 9).unwrap();
        for out in consensus_average(&values, &net, 3, 4).unwrap() {
            assert!(frobenius_distance(&out, &v) < 1e-12);
        }
    }

    #[test]
    fn snapshots_are_deterministic_per_index() {
        let net = TimeVaryingNetwork::new(12, 0.3, true, 5).unwrap();
        assert_eq!(net.snapshot(3, 2), net.snapshot(3, 2));
        assert_ne!(net.snapshot(3, 2), net.snapshot(3, 1));
        let fixed = net.clone().with_policy(SnapshotPolicy::Static);
        assert_eq!(fixed.snapshot(3, 2), fixed.snapshot(0, 1));
    }

    #[test]
    fn strong_connectivity_examples() {
        assert!(is_strongly_connected(&[GraphSnapshot::complete(4, true)]));
        assert!(!is_strongly_connected(&[GraphSnapshot::empty(4, true)]));
        let cycle: Vec<(usize, usize)> = (0..6).map(|i| (i, (i + 1) % 6)).collect();
        assert!(is_strongly_connected(&[GraphSnapshot::from_edges(6, true, &cycle)]));
        let path: Vec<(usize, usize)> = (0..5).map(|i| (i, i + 1)).collect();
        assert!(!is_strongly_connected(&[GraphSnapshot::from_edges(6, true, &path)]));
        // Two halves of a cycle are connected only jointly.
        let a = GraphSnapshot::from_edges(4, true, &[(0, 1), (1, 2)]);
        let b = GraphSnapshot::from_edges(4, true, &[(2, 3), (3, 0)]);
        assert!(!is_strongly_connected(std::slice::from_ref(&a)));
        assert!(is_strongly_connected(&[a, b]));
    }
}
