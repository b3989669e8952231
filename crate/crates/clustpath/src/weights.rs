//! Gaussian-kernel weight graphs and the edge difference operator.
//!
//! Fusion penalties act on pairwise row differences, so every solver in
//! the crate works against a sparse, connected graph of observation
//! pairs. The graph carries one weight per edge, the implicit difference
//! matrix `D` (one `+1/-1` row per edge), and a cached Cholesky factor of
//! `I + rho * D^T D` that the ADMM updates reuse at every iteration.

use std::collections::BTreeSet;
use std::path::Path;

use ndarray::Array2;

use crate::dataio::{format_float, DataMatrix, Partition};
use crate::error::{Error, Result};
use crate::linalg;
use crate::uf::UnionFind;

/// An undirected weighted edge in canonical orientation (`from < to`).
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedEdge {
    pub from: usize,
    pub to: usize,
    pub weight: f64,
}

/// Bandwidth of the Gaussian kernel `exp(-phi * d^2)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KernelScale {
    /// `phi = 1 / median(d^2)` over all observation pairs.
    Auto,
    Fixed(f64),
}

/// Default neighborhood size for [`WeightGraph::build`].
pub fn default_k_neighbors(n: usize) -> usize {
    ((n as f64).log2().ceil() as usize).max(3)
}

/// A connected weight graph over `n` observations with cached solver
/// factorization.
#[derive(Debug, Clone)]
pub struct WeightGraph {
    n: usize,
    rho: f64,
    edges: Vec<WeightedEdge>,
    factor_lower: Array2<f64>,
    factor_upper: Array2<f64>,
}

impl WeightGraph {
    /// Builds the default graph: union of symmetric `k`-nearest-neighbor
    /// pairs under the Gaussian kernel, augmented with minimum-spanning-tree
    /// edges until connected, with weights rescaled so the largest is 1.
    pub fn build(data: &DataMatrix, k_neighbors: usize, scale: KernelScale) -> Result<Self> {
        Self::build_with_rho(data, k_neighbors, scale, 1.0)
    }

    pub fn build_with_rho(
        data: &DataMatrix,
        k_neighbors: usize,
        scale: KernelScale,
        rho: f64,
    ) -> Result<Self> {
        if k_neighbors < 1 {
            return Err(Error::Range("k_neighbors must be at least 1".into()));
        }
        if let KernelScale::Fixed(phi) = scale {
            if !(phi >= 0.0) {
                return Err(Error::Range(format!(
                    "kernel scale must be non-negative, got {phi}"
                )));
            }
        }
        let n = data.n();
        let k = k_neighbors.min(n - 1);

        let dist2 = pairwise_squared_distances(data);
        for i in 0..n {
            for j in (i + 1)..n {
                if dist2[(i, j)] == 0.0 {
                    return Err(Error::Degenerate(format!(
                        "rows {i} and {j} are identical; jitter the data \
                         (e.g. by 1e-8 times the column standard deviation) \
                         before building weights"
                    )));
                }
            }
        }

        let phi = match scale {
            KernelScale::Fixed(phi) => phi,
            KernelScale::Auto => {
                let mut all: Vec<f64> = Vec::with_capacity(n * (n - 1) / 2);
                for i in 0..n {
                    for j in (i + 1)..n {
                        all.push(dist2[(i, j)]);
                    }
                }
                all.sort_by(|a, b| a.partial_cmp(b).unwrap());
                let m = all.len();
                let median = if m % 2 == 1 {
                    all[m / 2]
                } else {
                    0.5 * (all[m / 2 - 1] + all[m / 2])
                };
                1.0 / median
            }
        };

        // Union of symmetric k-nearest-neighbor pairs; ties break toward
        // the smaller index so the graph is reproducible.
        let mut pairs: BTreeSet<(usize, usize)> = BTreeSet::new();
        for i in 0..n {
            let mut order: Vec<usize> = (0..n).filter(|&j| j != i).collect();
            order.sort_by(|&a, &b| {
                dist2[(i, a)]
                    .partial_cmp(&dist2[(i, b)])
                    .unwrap()
                    .then(a.cmp(&b))
            });
            for &j in order.iter().take(k) {
                pairs.insert((i.min(j), i.max(j)));
            }
        }

        // Connect remaining components along minimum-spanning-tree edges
        // of the full distance graph, in ascending length order.
        let mut uf = UnionFind::new(n);
        for &(a, b) in &pairs {
            uf.union(a, b);
        }
        if uf.components() > 1 {
            for (a, b) in minimum_spanning_tree(&dist2) {
                if uf.union(a, b) {
                    pairs.insert((a, b));
                    if uf.components() == 1 {
                        break;
                    }
                }
            }
        }

        let mut edges: Vec<WeightedEdge> = pairs
            .into_iter()
            .map(|(a, b)| WeightedEdge {
                from: a,
                to: b,
                weight: (-phi * dist2[(a, b)]).exp(),
            })
            .collect();
        let max_w = edges
            .iter()
            .map(|e| e.weight)
            .fold(f64::NEG_INFINITY, f64::max);
        if !(max_w > 0.0) {
            return Err(Error::Numerical(
                "all kernel weights underflowed to zero; decrease phi".into(),
            ));
        }
        for e in &mut edges {
            e.weight /= max_w;
        }

        Self::from_edges(n, edges, rho)
    }

    /// Builds a graph from an explicit edge list. Edges are normalized to
    /// canonical orientation and must form a connected simple graph with
    /// positive weights.
    pub fn from_edges(n: usize, edges: Vec<WeightedEdge>, rho: f64) -> Result<Self> {
        if n < 2 {
            return Err(Error::Dimension(format!(
                "graph needs at least 2 nodes, got {n}"
            )));
        }
        if !(rho > 0.0) {
            return Err(Error::Range(format!("rho must be positive, got {rho}")));
        }
        let mut canonical = Vec::with_capacity(edges.len());
        let mut seen = BTreeSet::new();
        for e in edges {
            if e.from >= n || e.to >= n {
                return Err(Error::Index(format!(
                    "edge ({}, {}) references a node outside 0..{n}",
                    e.from, e.to
                )));
            }
            if e.from == e.to {
                return Err(Error::Degenerate(format!("self-loop at node {}", e.from)));
            }
            if !(e.weight > 0.0) || !e.weight.is_finite() {
                return Err(Error::Range(format!(
                    "edge ({}, {}) has non-positive weight {}",
                    e.from, e.to, e.weight
                )));
            }
            let key = (e.from.min(e.to), e.from.max(e.to));
            if !seen.insert(key) {
                return Err(Error::Degenerate(format!(
                    "duplicate edge ({}, {})",
                    key.0, key.1
                )));
            }
            canonical.push(WeightedEdge {
                from: key.0,
                to: key.1,
                weight: e.weight,
            });
        }
        canonical.sort_by_key(|e| (e.from, e.to));

        let mut uf = UnionFind::new(n);
        for e in &canonical {
            uf.union(e.from, e.to);
        }
        if uf.components() > 1 {
            return Err(Error::Degenerate(format!(
                "edge graph is disconnected ({} components)",
                uf.components()
            )));
        }

        Self::from_parts(n, canonical, rho)
    }

    /// A graph with no edges at all: the penalty vanishes and the cached
    /// factor is the identity. Only useful for degenerate-reduction tests
    /// and for the empty side of a bi-clustering problem.
    pub fn trivial(n: usize, rho: f64) -> Result<Self> {
        if n < 1 {
            return Err(Error::Dimension("graph needs at least 1 node".into()));
        }
        if !(rho > 0.0) {
            return Err(Error::Range(format!("rho must be positive, got {rho}")));
        }
        Self::from_parts(n, Vec::new(), rho)
    }

    fn from_parts(n: usize, edges: Vec<WeightedEdge>, rho: f64) -> Result<Self> {
        // Assemble I + rho * D^T D straight from the edge list.
        let mut gram = Array2::eye(n);
        for e in &edges {
            gram[(e.from, e.from)] += rho;
            gram[(e.to, e.to)] += rho;
            gram[(e.from, e.to)] -= rho;
            gram[(e.to, e.from)] -= rho;
        }
        let factor_lower = linalg::cholesky_lower(&gram)?;
        let factor_upper = factor_lower.t().to_owned();
        Ok(Self {
            n,
            rho,
            edges,
            factor_lower,
            factor_upper,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn edges(&self) -> &[WeightedEdge] {
        &self.edges
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn edge_weights(&self) -> Vec<f64> {
        self.edges.iter().map(|e| e.weight).collect()
    }

    /// Lower Cholesky factor of `I + rho * D^T D`.
    pub fn factor(&self) -> &Array2<f64> {
        &self.factor_lower
    }

    /// Applies the difference operator: row `l` of the result is
    /// `x[from(l)] - x[to(l)]`.
    pub fn apply_difference(&self, x: &Array2<f64>) -> Array2<f64> {
        let p = x.ncols();
        let mut out = Array2::zeros((self.edges.len(), p));
        for (l, e) in self.edges.iter().enumerate() {
            let a = x.row(e.from);
            let b = x.row(e.to);
            let mut r = out.row_mut(l);
            for j in 0..p {
                r[j] = a[j] - b[j];
            }
        }
        out
    }

    /// Applies the transposed difference operator (scatter-add).
    pub fn apply_difference_transpose(&self, v: &Array2<f64>) -> Array2<f64> {
        let p = v.ncols();
        let mut out = Array2::zeros((self.n, p));
        for (l, e) in self.edges.iter().enumerate() {
            let r = v.row(l);
            for j in 0..p {
                out[(e.from, j)] += r[j];
                out[(e.to, j)] -= r[j];
            }
        }
        out
    }

    /// The dense `|E| x n` difference matrix, for audits and small tests.
    pub fn dense_difference_matrix(&self) -> Array2<f64> {
        let mut d = Array2::zeros((self.edges.len(), self.n));
        for (l, e) in self.edges.iter().enumerate() {
            d[(l, e.from)] = 1.0;
            d[(l, e.to)] = -1.0;
        }
        d
    }

    /// Solves `(I + rho * D^T D) X = B` using the cached factor.
    pub fn solve_shifted(&self, b: &Array2<f64>) -> Array2<f64> {
        let y = linalg::forward_substitute(&self.factor_lower, b);
        linalg::backward_substitute(&self.factor_upper, &y)
    }

    /// Number of connected components when only edges with `fused[l]`
    /// set are kept.
    pub fn component_count(&self, fused: &[bool]) -> usize {
        let mut uf = UnionFind::new(self.n);
        for (l, e) in self.edges.iter().enumerate() {
            if fused[l] {
                uf.union(e.from, e.to);
            }
        }
        uf.components()
    }

    /// Cluster assignment induced by the fused edges, labelled by first
    /// appearance so the result is canonical.
    pub fn partition_from_fused(&self, fused: &[bool]) -> Result<Partition> {
        if fused.len() != self.edges.len() {
            return Err(Error::Length(format!(
                "mask has {} entries for {} edges",
                fused.len(),
                self.edges.len()
            )));
        }
        let mut uf = UnionFind::new(self.n);
        for (l, e) in self.edges.iter().enumerate() {
            if fused[l] {
                uf.union(e.from, e.to);
            }
        }
        let mut label = vec![usize::MAX; self.n];
        let mut next = 0;
        let mut assignment = Vec::with_capacity(self.n);
        for i in 0..self.n {
            let root = uf.find(i);
            if label[root] == usize::MAX {
                label[root] = next;
                next += 1;
            }
            assignment.push(label[root]);
        }
        Partition::new(assignment)
    }

    /// Writes the edge list as `from,to,weight` CSV.
    pub fn write_edge_csv(&self, path: &Path) -> Result<()> {
        let mut writer = csv::Writer::from_path(path)?;
        writer.write_record(["from", "to", "weight"])?;
        for e in &self.edges {
            writer.write_record([
                e.from.to_string(),
                e.to.to_string(),
                format_float(e.weight),
            ])?;
        }
        writer.flush()?;
        Ok(())
    }
}

fn pairwise_squared_distances(data: &DataMatrix) -> Array2<f64> {
    let n = data.n();
    let p = data.p();
    let mut dist2 = Array2::zeros((n, n));
    for i in 0..n {
        for j in (i + 1)..n {
            let a = data.values.row(i);
            let b = data.values.row(j);
            let mut acc = 0.0;
            for c in 0..p {
                let d = a[c] - b[c];
                acc += d * d;
            }
            dist2[(i, j)] = acc;
            dist2[(j, i)] = acc;
        }
    }
    dist2
}

/// Kruskal MST over the full distance graph; edges returned in the
/// ascending-length order in which they were accepted.
fn minimum_spanning_tree(dist2: &Array2<f64>) -> Vec<(usize, usize)> {
    let n = dist2.nrows();
    let mut pairs: Vec<(usize, usize)> = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in (i + 1)..n {
            pairs.push((i, j));
        }
    }
    pairs.sort_by(|&(a, b), &(c, d)| {
        dist2[(a, b)]
            .partial_cmp(&dist2[(c, d)])
            .unwrap()
            .then((a, b).cmp(&(c, d)))
    });
    let mut uf = UnionFind::new(n);
    let mut tree = Vec::with_capacity(n - 1);
    for (a, b) in pairs {
        if uf.union(a, b) {
            tree.push((a, b));
            if tree.len() == n - 1 {
                break;
            }
        }
    }
    tree
}

/// Builds the dense `|E| x n` difference matrix from an edge list.
pub fn build_difference_matrix(edges: &[(usize, usize)], n: usize) -> Result<Array2<f64>> {
    let mut d = Array2::zeros((edges.len(), n));
    for (l, &(from, to)) in edges.iter().enumerate() {
        if from >= n || to >= n {
            return Err(Error::Index(format!(
                "edge ({from}, {to}) references a node outside 0..{n}"
            )));
        }
        if from == to {
            return Err(Error::Degenerate(format!("self-loop at node {from}")));
        }
        d[(l, from)] = 1.0;
        d[(l, to)] = -1.0;
    }
    Ok(d)
}

/// Cholesky factor of `I + rho * D^T D` for a dense difference matrix.
pub fn factorize(d: &Array2<f64>, rho: f64) -> Result<Array2<f64>> {
    if !(rho > 0.0) {
        return Err(Error::Range(format!("rho must be positive, got {rho}")));
    }
    let n = d.ncols();
    let gram = Array2::eye(n) + &(d.t().dot(d) * rho);
    linalg::cholesky_lower(&gram)
}
