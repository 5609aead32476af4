//! Undirected graphs, spanning trees, and matrix-tree computations.

use nalgebra::DMatrix;

use crate::error::{Result, TrwError};

/// Undirected pairwise graph with a canonical edge ordering.
///
/// Edges are stored in construction order; all per-edge vectors elsewhere in
/// the crate (weights, appearance probabilities, parameter tables) index
/// against this ordering. Endpoint orientation is preserved as given, but
/// pairs are treated as unordered for duplicate detection.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Graph {
    node_count: usize,
    edges: Vec<(usize, usize)>,
    /// Per node: (neighbor, edge index) pairs.
    adjacency: Vec<Vec<(usize, usize)>>,
    connected: bool,
}

impl Graph {
    /// Builds a graph from an explicit edge list.
    pub fn custom(node_count: usize, edges: Vec<(usize, usize)>) -> Result<Self> {
        if node_count == 0 {
            return Err(TrwError::InvalidGraph("node count must be positive".into()));
        }
        let mut seen = std::collections::HashSet::new();
        for &(s, t) in &edges {
            if s == t {
                return Err(TrwError::InvalidGraph(format!("self-loop at node {s}")));
            }
            if s >= node_count || t >= node_count {
                return Err(TrwError::InvalidGraph(format!(
                    "edge ({s},{t}) references a node >= {node_count}"
                )));
            }
            if !seen.insert((s.min(t), s.max(t))) {
                return Err(TrwError::InvalidGraph(format!("duplicate edge ({s},{t})")));
            }
        }
        let mut adjacency = vec![Vec::new(); node_count];
        for (i, &(s, t)) in edges.iter().enumerate() {
            adjacency[s].push((t, i));
            adjacency[t].push((s, i));
        }
        let connected = {
            let mut uf = UnionFind::new(node_count);
            for &(s, t) in &edges {
                uf.union(s, t);
            }
            (1..node_count).all(|v| uf.find(v) == uf.find(0))
        };
        Ok(Graph { node_count, edges, adjacency, connected })
    }

    /// Rows x cols grid, row-major node numbering; per node the edge to the
    /// right precedes the edge below.
    pub fn grid(rows: usize, cols: usize) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(TrwError::InvalidGraph("grid dimensions must be >= 1".into()));
        }
        let mut edges = Vec::new();
        for r in 0..rows {
            for c in 0..cols {
                let node = r * cols + c;
                if c + 1 < cols {
                    edges.push((node, node + 1));
                }
                if r + 1 < rows {
                    edges.push((node, node + cols));
                }
            }
        }
        Self::custom(rows * cols, edges)
    }

    /// Cycle on n nodes with edges (0,1),(1,2),...,(n-1,0).
    pub fn cycle(n: usize) -> Result<Self> {
        if n < 3 {
            return Err(TrwError::InvalidGraph(format!(
                "cycle needs at least 3 nodes, got {n}"
            )));
        }
        let edges = (0..n).map(|i| (i, (i + 1) % n)).collect();
        Self::custom(n, edges)
    }

    /// Complete graph on n nodes, edges in lexicographic order.
    pub fn complete(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(TrwError::InvalidGraph("node count must be positive".into()));
        }
        let mut edges = Vec::new();
        for s in 0..n {
            for t in (s + 1)..n {
                edges.push((s, t));
            }
        }
        Self::custom(n, edges)
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

    pub fn edge(&self, index: usize) -> (usize, usize) {
        self.edges[index]
    }

    /// (neighbor, edge index) pairs for a node.
    pub fn incident(&self, node: usize) -> &[(usize, usize)] {
        &self.adjacency[node]
    }

    pub fn is_connected(&self) -> bool {
        self.connected
    }

    /// Graph Laplacian L = D - A.
    pub fn laplacian(&self) -> DMatrix<f64> {
        let n = self.node_count;
        let mut lap = DMatrix::zeros(n, n);
        for &(s, t) in &self.edges {
            lap[(s, s)] += 1.0;
            lap[(t, t)] += 1.0;
            lap[(s, t)] -= 1.0;
            lap[(t, s)] -= 1.0;
        }
        lap
    }
}

/// A spanning tree identified by its edge indices into `Graph::edges`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpanningTree {
    edge_indices: Vec<usize>,
}

impl SpanningTree {
    /// Validates that the edge subset is acyclic and spans all nodes.
    pub fn new(graph: &Graph, mut edge_indices: Vec<usize>) -> Result<Self> {
        let n = graph.node_count();
        if n >= 1 && edge_indices.len() != n - 1 {
            return Err(TrwError::InvalidGraph(format!(
                "spanning tree needs {} edges, got {}",
                n - 1,
                edge_indices.len()
            )));
        }
        let mut uf = UnionFind::new(n);
        for &e in &edge_indices {
            if e >= graph.edge_count() {
                return Err(TrwError::InvalidGraph(format!("edge index {e} out of range")));
            }
            let (s, t) = graph.edge(e);
            if !uf.union(s, t) {
                return Err(TrwError::InvalidGraph(format!(
                    "edge subset contains a cycle through edge {e}"
                )));
            }
        }
        edge_indices.sort_unstable();
        Ok(SpanningTree { edge_indices })
    }

    pub fn edge_indices(&self) -> &[usize] {
        &self.edge_indices
    }

    pub fn contains(&self, edge_index: usize) -> bool {
        self.edge_indices.binary_search(&edge_index).is_ok()
    }

    /// 0/1 indicator over all graph edges; a vertex of the spanning tree polytope.
    pub fn indicator(&self, graph: &Graph) -> Vec<f64> {
        let mut v = vec![0.0; graph.edge_count()];
        for &e in &self.edge_indices {
            v[e] = 1.0;
        }
        v
    }
}

/// One finite weight per edge, aligned with `Graph::edges`.
#[derive(Debug, Clone)]
pub struct EdgeWeights(pub Vec<f64>);

impl EdgeWeights {
    pub fn validate(&self, graph: &Graph) -> Result<()> {
        if self.0.len() != graph.edge_count() {
            return Err(TrwError::ShapeMismatch(format!(
                "{} weights for {} edges",
                self.0.len(),
                graph.edge_count()
            )));
        }
        if let Some(i) = self.0.iter().position(|w| !w.is_finite()) {
            return Err(TrwError::InvalidGraph(format!("non-finite weight at edge {i}")));
        }
        Ok(())
    }
}

/// Edge appearance probabilities mu_e, one per edge in [0,1].
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeAppearance(pub Vec<f64>);

impl EdgeAppearance {
    pub fn uniform(graph: &Graph, value: f64) -> Self {
        EdgeAppearance(vec![value; graph.edge_count()])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

struct UnionFind {
    parent: Vec<usize>,
    rank: Vec<u8>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind { parent: (0..n).collect(), rank: vec![0; n] }
    }

    fn find(&mut self, x: usize) -> usize {
        if self.parent[x] != x {
            self.parent[x] = self.find(self.parent[x]);
        }
        self.parent[x]
    }

    /// Returns false if x and y were already in the same component.
    fn union(&mut self, x: usize, y: usize) -> bool {
        let (rx, ry) = (self.find(x), self.find(y));
        if rx == ry {
            return false;
        }
        match self.rank[rx].cmp(&self.rank[ry]) {
            std::cmp::Ordering::Less => self.parent[rx] = ry,
            std::cmp::Ordering::Greater => self.parent[ry] = rx,
            std::cmp::Ordering::Equal => {
                self.parent[ry] = rx;
                self.rank[rx] += 1;
            }
        }
        true
    }
}

/// Maximum weight spanning tree by Kruskal's algorithm.
///
/// Ties between equal-weight edges are broken deterministically in favor of
/// the lower edge index. Negative and zero weights are allowed.
pub fn max_weight_spanning_tree(graph: &Graph, weights: &EdgeWeights) -> Result<SpanningTree> {
    weights.validate(graph)?;
    if !graph.is_connected() {
        return Err(TrwError::NoSpanningTree);
    }
    let mut order: Vec<usize> = (0..graph.edge_count()).collect();
    order.sort_by(|&a, &b| {
        weights.0[b]
            .partial_cmp(&weights.0[a])
            .expect("weights are finite")
            .then(a.cmp(&b))
    });
    let mut uf = UnionFind::new(graph.node_count());
    let mut chosen = Vec::with_capacity(graph.node_count().saturating_sub(1));
    for e in order {
        let (s, t) = graph.edge(e);
        if uf.union(s, t) {
            chosen.push(e);
            if chosen.len() + 1 == graph.node_count() {
                break;
            }
        }
    }
    SpanningTree::new(graph, chosen)
}

/// Natural log of the number of spanning trees, via the matrix-tree theorem.
///
/// Computed as the log-determinant of the principal minor of the Laplacian
/// obtained by deleting node 0, using a Cholesky factorization (the minor is
/// positive definite for connected graphs).
pub fn count_spanning_trees(graph: &Graph) -> Result<f64> {
    if !graph.is_connected() {
        return Err(TrwError::NoSpanningTree);
    }
    let n = graph.node_count();
    if n == 1 {
        return Ok(0.0);
    }
    let minor = reduced_laplacian(graph);
    let chol = nalgebra::Cholesky::new(minor).ok_or_else(|| {
        TrwError::SolverFailure("Cholesky of reduced Laplacian failed".into())
    })?;
    let log_det: f64 = (0..n - 1).map(|i| chol.l_dirty()[(i, i)].ln()).sum();
    Ok(2.0 * log_det)
}

/// Edge appearance probabilities of the uniform distribution over spanning
/// trees: Pr[e in T] equals the effective resistance across e.
///
/// The result lies in the spanning tree polytope by construction, with
/// components in (0,1] summing to N-1.
pub fn uniform_tree_edge_marginals(graph: &Graph) -> Result<EdgeAppearance> {
    if !graph.is_connected() {
        return Err(TrwError::NoSpanningTree);
    }
    let n = graph.node_count();
    if n == 1 {
        return Ok(EdgeAppearance(Vec::new()));
    }
    let minor = reduced_laplacian(graph);
    let chol = nalgebra::Cholesky::new(minor).ok_or_else(|| {
        TrwError::SolverFailure("Cholesky of reduced Laplacian failed".into())
    })?;
    // Inverse of the grounded Laplacian; row/col for node 0 are implicitly zero.
    let inv = chol.inverse();
    let entry = |u: usize, v: usize| -> f64 {
        if u == 0 || v == 0 {
            0.0
        } else {
            inv[(u - 1, v - 1)]
        }
    };
    let mu = graph
        .edges()
        .iter()
        .map(|&(s, t)| (entry(s, s) + entry(t, t) - 2.0 * entry(s, t)).clamp(0.0, 1.0))
        .collect();
    Ok(EdgeAppearance(mu))
}

/// All spanning trees of a small graph, by exhaustive edge-subset search.
///
/// Independent of the matrix-tree route; intended for oracles and for
/// constructing explicit tree mixtures on desk-scale graphs.
pub fn enumerate_spanning_trees(graph: &Graph) -> Vec<SpanningTree> {
    let n = graph.node_count();
    let m = graph.edge_count();
    if n == 1 {
        return vec![SpanningTree { edge_indices: Vec::new() }];
    }
    if m < n - 1 {
        return Vec::new();
    }
    let mut trees = Vec::new();
    let mut subset: Vec<usize> = (0..n - 1).collect();
    loop {
        if let Ok(tree) = SpanningTree::new(graph, subset.clone()) {
            trees.push(tree);
        }
        // Next (n-1)-combination of {0..m} in lexicographic order.
        let k = n - 1;
        let mut i = k;
        loop {
            if i == 0 {
                return trees;
            }
            i -= 1;
            if subset[i] != i + m - k {
                break;
            }
        }
        subset[i] += 1;
        for j in i + 1..k {
            subset[j] = subset[j - 1] + 1;
        }
    }
}

fn reduced_laplacian(graph: &Graph) -> DMatrix<f64> {
    let n = graph.node_count();
    let mut minor = DMatrix::zeros(n - 1, n - 1);
    for &(s, t) in graph.edges() {
        if s > 0 {
            minor[(s - 1, s - 1)] += 1.0;
        }
        if t > 0 {
            minor[(t - 1, t - 1)] += 1.0;
        }
        if s > 0 && t > 0 {
            minor[(s - 1, t - 1)] -= 1.0;
            minor[(t - 1, s - 1)] -= 1.0;
        }
    }
    minor
}
