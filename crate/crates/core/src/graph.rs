//! Graph plumbing shared by the electrical network and the communication graphs.
//!
//! Edges are directed `(positive end, negative end)` pairs. The incidence matrix
//! `H` has `H[from, e] = +1` and `H[to, e] = -1`; it is never materialized in the
//! hot path, only applied through [`CommGraph::apply`] and
//! [`CommGraph::apply_transpose`].

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// True when the undirected graph over `node_count` nodes is connected.
///
/// A single node with no edges is connected; zero nodes is not.
pub fn is_connected(node_count: usize, edges: &[(usize, usize)]) -> bool {
    if node_count == 0 {
        return false;
    }
    let mut parent: Vec<usize> = (0..node_count).collect();
    fn find(parent: &mut [usize], mut i: usize) -> usize {
        while parent[i] != i {
            parent[i] = parent[parent[i]];
            i = parent[i];
        }
        i
    }
    let mut components = node_count;
    for &(a, b) in edges {
        if a >= node_count || b >= node_count {
            return false;
        }
        let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
        if ra != rb {
            parent[ra] = rb;
            components -= 1;
        }
    }
    components == 1
}

/// Validates a directed edge list: endpoints in range, no self loops, and at
/// most one edge per unordered pair.
pub(crate) fn validate_edges(what: &str, node_count: usize, edges: &[(usize, usize)]) -> Result<()> {
    let mut seen = std::collections::HashSet::new();
    for (e, &(a, b)) in edges.iter().enumerate() {
        if a >= node_count || b >= node_count {
            return Err(Error::config(format!(
                "{what} edge {e} ({a}, {b}) references a node >= {node_count}"
            )));
        }
        if a == b {
            return Err(Error::config(format!("{what} edge {e} is a self loop on {a}")));
        }
        if !seen.insert((a.min(b), a.max(b))) {
            return Err(Error::config(format!("{what} edge {e} duplicates the pair ({a}, {b})")));
        }
    }
    if !is_connected(node_count, edges) {
        return Err(Error::config(format!("{what} graph is not connected")));
    }
    Ok(())
}

/// Solves `L y = rhs` for the weighted Laplacian `L = H W Hᵀ`, pinning
/// `y[ground] = 0`.
///
/// `rhs` must sum to zero (checked against `balance_tol`), otherwise the system
/// has no solution.
pub(crate) fn solve_grounded_laplacian(
    node_count: usize,
    edges: &[(usize, usize)],
    weights: &[f64],
    rhs: &[f64],
    ground: usize,
    balance_tol: f64,
) -> Result<Vec<f64>> {
    let total: f64 = rhs.iter().sum();
    if total.abs() > balance_tol {
        return Err(Error::Infeasible(format!("injections sum to {total:e}, expected zero")));
    }
    if !is_connected(node_count, edges) {
        return Err(Error::config("graph is not connected"));
    }
    if node_count == 1 {
        return Ok(vec![0.0]);
    }
    // Map full indices onto the reduced (grounded) system.
    let reduced = |i: usize| -> Option<usize> {
        match i.cmp(&ground) {
            std::cmp::Ordering::Less => Some(i),
            std::cmp::Ordering::Equal => None,
            std::cmp::Ordering::Greater => Some(i - 1),
        }
    };
    let n = node_count - 1;
    let mut lap = DMatrix::<f64>::zeros(n, n);
    for (&(a, b), &w) in edges.iter().zip(weights) {
        let (ra, rb) = (reduced(a), reduced(b));
        if let Some(i) = ra {
            lap[(i, i)] += w;
        }
        if let Some(j) = rb {
            lap[(j, j)] += w;
        }
        if let (Some(i), Some(j)) = (ra, rb) {
            lap[(i, j)] -= w;
            lap[(j, i)] -= w;
        }
    }
    let b = DVector::from_iterator(n, rhs.iter().enumerate().filter(|&(i, _)| i != ground).map(|(_, &v)| v));
    let chol = lap
        .cholesky()
        .ok_or_else(|| Error::Invariant("grounded Laplacian is not positive definite".into()))?;
    let sol = chol.solve(&b);
    let mut out = vec![0.0; node_count];
    for i in 0..node_count {
        if let Some(r) = reduced(i) {
            out[i] = sol[r];
        }
    }
    Ok(out)
}

/// A connected, directed communication graph between controllers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommGraph {
    node_count: usize,
    edges: Vec<(usize, usize)>,
}

impl CommGraph {
    pub fn new(node_count: usize, edges: Vec<(usize, usize)>) -> Result<Self> {
        validate_edges("communication", node_count, &edges)?;
        Ok(Self { node_count, edges })
    }

    /// Graph without links, for schemes that do not communicate.
    pub fn edgeless(node_count: usize) -> Self {
        Self {
            node_count,
            edges: Vec::new(),
        }
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    /// `H ψ`: per-node sum of outgoing minus incoming edge values.
    pub fn apply(&self, psi: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.node_count];
        for (&(a, b), &v) in self.edges.iter().zip(psi) {
            out[a] += v;
            out[b] -= v;
        }
        out
    }

    /// `Hᵀ p`: per-edge difference `p[from] - p[to]`.
    pub fn apply_transpose(&self, p: &[f64]) -> Vec<f64> {
        self.edges.iter().map(|&(a, b)| p[a] - p[b]).collect()
    }

    /// Dense incidence matrix, for diagnostics and tests.
    pub fn incidence(&self) -> DMatrix<f64> {
        let mut h = DMatrix::zeros(self.node_count, self.edges.len());
        for (e, &(a, b)) in self.edges.iter().enumerate() {
            h[(a, e)] = 1.0;
            h[(b, e)] = -1.0;
        }
        h
    }

    /// Edges incident to `node`.
    pub fn incident_edges(&self, node: usize) -> impl Iterator<Item = usize> + '_ {
        self.edges
            .iter()
            .enumerate()
            .filter(move |(_, &(a, b))| a == node || b == node)
            .map(|(e, _)| e)
    }

    /// `node` together with its neighbours.
    pub fn closed_neighbourhood(&self, node: usize) -> Vec<usize> {
        let mut out = vec![node];
        for &(a, b) in &self.edges {
            if a == node {
                out.push(b);
            } else if b == node {
                out.push(a);
            }
        }
        out.sort_unstable();
        out.dedup();
        out
    }

    /// Minimum-norm solution of `H ψ = target`.
    ///
    /// `target` must sum to zero. The result lies in the range of `Hᵀ`, which is
    /// the orthogonal complement of the cycle space, hence it is the
    /// minimum-norm solution.
    pub fn min_norm_preimage(&self, target: &[f64]) -> Result<Vec<f64>> {
        crate::error::check_len("incidence preimage target", target.len(), self.node_count)?;
        let scale = target.iter().fold(1.0_f64, |m, v| m.max(v.abs()));
        let ones = vec![1.0; self.edges.len()];
        let y = solve_grounded_laplacian(
            self.node_count,
            &self.edges,
            &ones,
            target,
            0,
            1e-9 * scale * self.node_count as f64,
        )?;
        Ok(self.apply_transpose(&y))
    }
}
