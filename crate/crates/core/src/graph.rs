//! Oriented undirected graphs, incidence algebra and matrix-free Kronecker
//! applies `(B^T (x) I_p) x` and `(B (x) I_p) w`.
//!
//! Node indices are 0-based here. Scenario files use 1-based indices and are
//! converted on load.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg;

/// An edge with its positive (`head`) and negative (`tail`) end.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Edge {
    pub head: usize,
    pub tail: usize,
}

impl Edge {
    pub fn new(head: usize, tail: usize) -> Self {
        Self { head, tail }
    }

    pub fn reversed(self) -> Self {
        Self {
            head: self.tail,
            tail: self.head,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    n_nodes: usize,
    edges: Vec<Edge>,
}

impl Graph {
    pub fn new(n_nodes: usize, edges: Vec<Edge>) -> Result<Self> {
        if n_nodes == 0 {
            return Err(Error::InvalidGraph("graph must have at least one node".into()));
        }
        for (k, e) in edges.iter().enumerate() {
            if e.head >= n_nodes || e.tail >= n_nodes {
                return Err(Error::InvalidGraph(format!(
                    "edge {} references node {} but the graph has {} nodes",
                    k + 1,
                    e.head.max(e.tail) + 1,
                    n_nodes
                )));
            }
            if e.head == e.tail {
                return Err(Error::InvalidGraph(format!(
                    "edge {} is a self-loop on node {}",
                    k + 1,
                    e.head + 1
                )));
            }
        }
        Ok(Self { n_nodes, edges })
    }

    /// Builds a graph from 1-based `(head, tail)` pairs.
    pub fn from_one_based(n_nodes: usize, pairs: &[(usize, usize)]) -> Result<Self> {
        let mut edges = Vec::with_capacity(pairs.len());
        for (k, &(h, t)) in pairs.iter().enumerate() {
            if h == 0 || t == 0 {
                return Err(Error::InvalidGraph(format!(
                    "edge {}: node indices are 1-based, got 0",
                    k + 1
                )));
            }
            edges.push(Edge::new(h - 1, t - 1));
        }
        Self::new(n_nodes, edges)
    }

    /// Reads the orientation of every column of a dense incidence matrix.
    pub fn from_incidence(b: &DMatrix<f64>) -> Result<Self> {
        let mut edges = Vec::with_capacity(b.ncols());
        for k in 0..b.ncols() {
            let col = b.column(k);
            let mut head = None;
            let mut tail = None;
            for (i, &v) in col.iter().enumerate() {
                match v {
                    v if v == 1.0 && head.is_none() => head = Some(i),
                    v if v == -1.0 && tail.is_none() => tail = Some(i),
                    0.0 => {}
                    _ => {
                        return Err(Error::InvalidGraph(format!(
                            "column {} is not a valid incidence column",
                            k + 1
                        )))
                    }
                }
            }
            match (head, tail) {
                (Some(h), Some(t)) => edges.push(Edge::new(h, t)),
                _ => {
                    return Err(Error::InvalidGraph(format!(
                        "column {} needs exactly one +1 and one -1",
                        k + 1
                    )))
                }
            }
        }
        Self::new(b.nrows(), edges)
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn degree(&self, node: usize) -> usize {
        self.edges
            .iter()
            .filter(|e| e.head == node || e.tail == node)
            .count()
    }

    /// Same graph with the listed edges removed (0-based edge indices).
    pub fn without_edges(&self, removed: &[usize]) -> Result<Self> {
        let edges = self
            .edges
            .iter()
            .enumerate()
            .filter(|(k, _)| !removed.contains(k))
            .map(|(_, e)| *e)
            .collect();
        Self::new(self.n_nodes, edges)
    }

    /// Same graph with edge `k` reversed.
    pub fn with_flipped_edge(&self, k: usize) -> Self {
        let mut g = self.clone();
        g.edges[k] = g.edges[k].reversed();
        g
    }

    /// Dense `N x M` incidence matrix.
    pub fn incidence(&self) -> DMatrix<f64> {
        let mut b = DMatrix::zeros(self.n_nodes, self.edges.len());
        for (k, e) in self.edges.iter().enumerate() {
            b[(e.head, k)] = 1.0;
            b[(e.tail, k)] = -1.0;
        }
        b
    }

    pub fn is_connected(&self) -> bool {
        let mut adj = vec![Vec::new(); self.n_nodes];
        for e in &self.edges {
            adj[e.head].push(e.tail);
            adj[e.tail].push(e.head);
        }
        let mut seen = vec![false; self.n_nodes];
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
        count == self.n_nodes
    }

    /// True iff the (connected) graph has no cycles. Undefined, and an error,
    /// for disconnected graphs.
    pub fn is_tree(&self) -> Result<bool> {
        if !self.is_connected() {
            return Err(Error::InvalidGraph(
                "tree test is only defined for connected graphs".into(),
            ));
        }
        Ok(self.edges.len() + 1 == self.n_nodes)
    }

    /// `z = (B^T (x) I_p) x`, i.e. `z_k = x_head(k) - x_tail(k)`.
    pub fn apply_bt_kron(&self, p: usize, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.n_nodes * p {
            return Err(Error::dims("(B^T (x) I_p) x", self.n_nodes * p, x.len()));
        }
        let mut z = vec![0.0; self.edges.len() * p];
        self.bt_kron_into(p, x, &mut z);
        Ok(z)
    }

    /// `(B (x) I_p) w` by scatter-add over edges.
    pub fn apply_b_kron(&self, p: usize, w: &[f64]) -> Result<Vec<f64>> {
        if w.len() != self.edges.len() * p {
            return Err(Error::dims("(B (x) I_p) w", self.edges.len() * p, w.len()));
        }
        let mut out = vec![0.0; self.n_nodes * p];
        self.b_kron_into(p, w, &mut out);
        Ok(out)
    }

    pub(crate) fn bt_kron_into(&self, p: usize, x: &[f64], z: &mut [f64]) {
        for (k, e) in self.edges.iter().enumerate() {
            for l in 0..p {
                z[k * p + l] = x[e.head * p + l] - x[e.tail * p + l];
            }
        }
    }

    pub(crate) fn b_kron_into(&self, p: usize, w: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        for (k, e) in self.edges.iter().enumerate() {
            for l in 0..p {
                out[e.head * p + l] += w[k * p + l];
                out[e.tail * p + l] -= w[k * p + l];
            }
        }
    }

    /// Decides whether `spec.z_star` is realizable as `(B^T (x) I_p) x*` and, if
    /// so, returns a least-squares witness `x*`.
    pub fn check_formation_consistency(&self, spec: &FormationSpec) -> Result<Consistency> {
        let p = spec.p;
        let m = self.edges.len();
        if spec.z_star.len() != m * p {
            return Err(Error::dims("formation z*", m * p, spec.z_star.len()));
        }
        let bt = self.incidence().transpose();
        let svd = bt.clone().svd(true, true);
        let mut witness = vec![0.0; self.n_nodes * p];
        for l in 0..p {
            let rhs = DVector::from_iterator(m, (0..m).map(|k| spec.z_star[k * p + l]));
            let sol = svd
                .solve(&rhs, 1e-10)
                .map_err(|e| Error::Numerical(e.to_string()))?;
            for i in 0..self.n_nodes {
                witness[i * p + l] = sol[i];
            }
        }
        let z_fit = self.apply_bt_kron(p, &witness)?;
        let residual = linalg::norm2(
            &z_fit
                .iter()
                .zip(&spec.z_star)
                .map(|(a, b)| a - b)
                .collect::<Vec<_>>(),
        );
        let tol = 1e-9 * (1.0 + linalg::norm2(&spec.z_star));
        Ok(Consistency {
            consistent: residual <= tol,
            residual,
            witness,
        })
    }
}

#[derive(Debug, Clone)]
pub struct Consistency {
    pub consistent: bool,
    pub residual: f64,
    /// Least-squares position vector; meaningful as a witness only when
    /// `consistent` is true.
    pub witness: Vec<f64>,
}

/// Desired relative positions, one `p`-vector per edge, stacked.
#[derive(Debug, Clone, PartialEq)]
pub struct FormationSpec {
    pub p: usize,
    pub z_star: Vec<f64>,
}

impl FormationSpec {
    pub fn new(p: usize, per_edge: &[Vec<f64>]) -> Result<Self> {
        if p == 0 {
            return Err(Error::param("p", "ambient dimension must be positive"));
        }
        let mut z_star = Vec::with_capacity(per_edge.len() * p);
        for (k, z) in per_edge.iter().enumerate() {
            if z.len() != p {
                return Err(Error::dims(format!("z*[{}]", k + 1), p, z.len()));
            }
            z_star.extend_from_slice(z);
        }
        Ok(Self { p, z_star })
    }

    pub fn n_edges(&self) -> usize {
        self.z_star.len() / self.p
    }
}
