//! Pseudomarginals on nodes and edges, the local consistency constraints,
//! entropies and mutual informations, the reweighted free energy and its
//! gradient, tree projections, and the convex-combination bound.

use crate::error::{Result, TrwError};
use crate::exact::tree_log_partition;
use crate::graph::{EdgeAppearance, Graph, SpanningTree};
use crate::model::OvercompleteParams;

/// Node and edge pseudomarginal tables aligned to graph order; edge tables
/// are flat m*m, row-major with the first endpoint's state as the row.
#[derive(Debug, Clone, PartialEq)]
pub struct Pseudomarginals {
    pub m: usize,
    pub node: Vec<Vec<f64>>,
    pub edge: Vec<Vec<f64>>,
}

impl Pseudomarginals {
    /// Uniform tables: T_s = 1/m, T_st = 1/m^2. Feasible and interior.
    pub fn uniform(graph: &Graph, m: usize) -> Self {
        Pseudomarginals {
            m,
            node: vec![vec![1.0 / m as f64; m]; graph.node_count()],
            edge: vec![vec![1.0 / (m * m) as f64; m * m]; graph.edge_count()],
        }
    }

    pub fn check_shapes(&self, graph: &Graph) -> Result<()> {
        if self.node.len() != graph.node_count()
            || self.edge.len() != graph.edge_count()
            || self.node.iter().any(|t| t.len() != self.m)
            || self.edge.iter().any(|t| t.len() != self.m * self.m)
        {
            return Err(TrwError::ShapeMismatch(
                "pseudomarginal tables do not match the graph".into(),
            ));
        }
        Ok(())
    }

    /// Smallest table entry.
    pub fn min_entry(&self) -> f64 {
        self.node
            .iter()
            .chain(self.edge.iter())
            .flatten()
            .copied()
            .fold(f64::INFINITY, f64::min)
    }

    /// Largest absolute difference against another set of tables.
    pub fn max_abs_diff(&self, other: &Pseudomarginals) -> f64 {
        let flat = |p: &Pseudomarginals| -> Vec<f64> {
            p.node.iter().chain(p.edge.iter()).flatten().copied().collect()
        };
        flat(self)
            .iter()
            .zip(flat(other).iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Outcome of a local-consistency validation.
#[derive(Debug, Clone, Copy)]
pub struct ConsistencyReport {
    pub max_violation: f64,
    pub tolerance: f64,
}

impl ConsistencyReport {
    pub fn passed(&self) -> bool {
        self.max_violation <= self.tolerance
    }
}

/// Checks nonnegativity, node normalization, and edge-to-node
/// marginalization, reporting the worst absolute violation.
pub fn validate_local_consistency(
    graph: &Graph,
    t: &Pseudomarginals,
    tol: f64,
) -> Result<ConsistencyReport> {
    t.check_shapes(graph)?;
    let m = t.m;
    let mut worst = 0.0f64;
    for table in t.node.iter().chain(t.edge.iter()) {
        for &v in table {
            if v < 0.0 {
                worst = worst.max(-v);
            }
        }
    }
    for table in &t.node {
        worst = worst.max((table.iter().sum::<f64>() - 1.0).abs());
    }
    for (e, table) in t.edge.iter().enumerate() {
        let (s, tt) = graph.edge(e);
        for j in 0..m {
            let row: f64 = (0..m).map(|k| table[j * m + k]).sum();
            worst = worst.max((row - t.node[s][j]).abs());
        }
        for k in 0..m {
            let col: f64 = (0..m).map(|j| table[j * m + k]).sum();
            worst = worst.max((col - t.node[tt][k]).abs());
        }
    }
    Ok(ConsistencyReport { max_violation: worst, tolerance: tol })
}

/// Entropy of a probability table, with the 0 log 0 = 0 convention.
pub fn node_entropy(table: &[f64]) -> Result<f64> {
    if table.iter().any(|&v| v < 0.0) {
        return Err(TrwError::InvalidTable("negative probability entry".into()));
    }
    Ok(entropy_unchecked(table))
}

fn entropy_unchecked(table: &[f64]) -> f64 {
    table.iter().filter(|&&v| v > 0.0).map(|&v| -v * v.ln()).sum()
}

/// Mutual information of a joint m x m table against its own marginals;
/// cells with zero mass contribute zero.
pub fn edge_mutual_information(table: &[f64], m: usize) -> Result<f64> {
    if table.len() != m * m {
        return Err(TrwError::ShapeMismatch("edge table is not m x m".into()));
    }
    if table.iter().any(|&v| v < 0.0) {
        return Err(TrwError::InvalidTable("negative probability entry".into()));
    }
    Ok(mutual_information_unchecked(table, m))
}

pub(crate) fn mutual_information_unchecked(table: &[f64], m: usize) -> f64 {
    let mut row = vec![0.0; m];
    let mut col = vec![0.0; m];
    for j in 0..m {
        for k in 0..m {
            row[j] += table[j * m + k];
            col[k] += table[j * m + k];
        }
    }
    let mut mi = 0.0;
    for j in 0..m {
        for k in 0..m {
            let t = table[j * m + k];
            if t > 0.0 {
                mi += t * (t.ln() - row[j].ln() - col[k].ln());
            }
        }
    }
    mi
}

/// Mutual information of every edge table; the gradient of the optimized
/// bound with respect to the edge appearance probabilities.
pub fn edge_mutual_informations(t: &Pseudomarginals) -> Vec<f64> {
    t.edge.iter().map(|table| mutual_information_unchecked(table, t.m)).collect()
}

/// Tolerance used by `free_energy` when validating its input tables;
/// deliberately looser than solver tolerances to avoid rejecting converged
/// iterates.
pub const VALIDATION_TOL: f64 = 1e-6;

/// The reweighted free energy
/// F(T; mu; theta) = -sum_s H_s + sum_st mu_st I_st - sum_alpha T_alpha theta_alpha.
///
/// Its negation is the upper-bound candidate.
pub fn free_energy(
    graph: &Graph,
    t: &Pseudomarginals,
    mu: &EdgeAppearance,
    theta: &OvercompleteParams,
) -> Result<f64> {
    let report = validate_local_consistency(graph, t, VALIDATION_TOL)?;
    if !report.passed() {
        return Err(TrwError::InvalidPseudomarginals {
            violation: report.max_violation,
            tolerance: report.tolerance,
        });
    }
    if mu.len() != graph.edge_count() {
        return Err(TrwError::ShapeMismatch("mu length".into()));
    }
    if let Some((e, &v)) = mu.0.iter().enumerate().find(|&(_, &v)| !(0.0..=1.0).contains(&v)) {
        return Err(TrwError::InvalidTable(format!(
            "edge appearance mu[{e}] = {v} outside [0,1]"
        )));
    }
    Ok(free_energy_unchecked(t, mu, theta))
}

pub(crate) fn free_energy_unchecked(
    t: &Pseudomarginals,
    mu: &EdgeAppearance,
    theta: &OvercompleteParams,
) -> f64 {
    let m = t.m;
    let mut f = 0.0;
    for (s, table) in t.node.iter().enumerate() {
        f -= entropy_unchecked(table);
        for j in 0..m {
            f -= table[j] * theta.node[s][j];
        }
    }
    for (e, table) in t.edge.iter().enumerate() {
        f += mu.0[e] * mutual_information_unchecked(table, m);
        for i in 0..m * m {
            f -= table[i] * theta.edge[e][i];
        }
    }
    f
}

/// Gradient of the free energy with respect to every table entry, valid at
/// strictly interior points. The contract is agreement with central finite
/// differences of `free_energy`.
pub fn free_energy_gradient(
    graph: &Graph,
    t: &Pseudomarginals,
    mu: &EdgeAppearance,
    theta: &OvercompleteParams,
) -> Result<Pseudomarginals> {
    t.check_shapes(graph)?;
    if t.min_entry() <= 0.0 {
        return Err(TrwError::BoundaryPoint("pseudomarginal table".into()));
    }
    let m = t.m;
    let mut node = vec![vec![0.0; m]; t.node.len()];
    let mut edge = vec![vec![0.0; m * m]; t.edge.len()];
    for (s, table) in t.node.iter().enumerate() {
        for j in 0..m {
            node[s][j] = 1.0 + table[j].ln() - theta.node[s][j];
        }
    }
    for (e, table) in t.edge.iter().enumerate() {
        let mut row = vec![0.0; m];
        let mut col = vec![0.0; m];
        for j in 0..m {
            for k in 0..m {
                row[j] += table[j * m + k];
                col[k] += table[j * m + k];
            }
        }
        for j in 0..m {
            for k in 0..m {
                let idx = j * m + k;
                edge[e][idx] = mu.0[e] * (table[idx].ln() - row[j].ln() - col[k].ln() - 1.0)
                    - theta.edge[e][idx];
            }
        }
    }
    Ok(Pseudomarginals { m, node, edge })
}

/// Projection of pseudomarginals onto a spanning tree: all node tables plus
/// the tree's edge tables.
#[derive(Debug, Clone)]
pub struct TreeProjection {
    pub m: usize,
    pub node: Vec<Vec<f64>>,
    pub tree: SpanningTree,
    /// Tables aligned with `tree.edge_indices()`.
    pub edge: Vec<Vec<f64>>,
}

pub fn tree_project(t: &Pseudomarginals, tree: &SpanningTree) -> TreeProjection {
    TreeProjection {
        m: t.m,
        node: t.node.clone(),
        tree: tree.clone(),
        edge: tree.edge_indices().iter().map(|&e| t.edge[e].clone()).collect(),
    }
}

/// Evaluates the tree factorization
/// p(x) = prod_s T_s(x_s) prod_(s,t) in tree T_st(x_s,x_t) / (T_s(x_s) T_t(x_t)),
/// with 0/0 = 0 and the whole product zero whenever any numerator is zero.
pub fn tree_distribution_eval(graph: &Graph, proj: &TreeProjection, x: &[usize]) -> f64 {
    let m = proj.m;
    let mut p = 1.0;
    for (s, table) in proj.node.iter().enumerate() {
        if table[x[s]] == 0.0 {
            return 0.0;
        }
        p *= table[x[s]];
    }
    for (i, &e) in proj.tree.edge_indices().iter().enumerate() {
        let (s, t) = graph.edge(e);
        let joint = proj.edge[i][x[s] * m + x[t]];
        if joint == 0.0 {
            return 0.0;
        }
        p *= joint / (proj.node[s][x[s]] * proj.node[t][x[t]]);
    }
    p
}

/// Negative entropy of the projected tree distribution, via the
/// tree decomposition -sum_s H_s + sum_(s,t) in tree I_st.
pub fn tree_negative_entropy(proj: &TreeProjection) -> f64 {
    let mut psi = 0.0;
    for table in &proj.node {
        psi -= entropy_unchecked(table);
    }
    for table in &proj.edge {
        psi += mutual_information_unchecked(table, proj.m);
    }
    psi
}

/// A probability distribution over an explicit list of spanning trees.
#[derive(Debug, Clone)]
pub struct TreeMixture {
    trees: Vec<SpanningTree>,
    weights: Vec<f64>,
}

impl TreeMixture {
    pub fn new(trees: Vec<SpanningTree>, weights: Vec<f64>) -> Result<Self> {
        if trees.len() != weights.len() || trees.is_empty() {
            return Err(TrwError::ShapeMismatch("one weight per tree required".into()));
        }
        if weights.iter().any(|&w| !(w > 0.0)) {
            return Err(TrwError::InvalidTable("mixture weights must be positive".into()));
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(TrwError::InvalidTable(format!(
                "mixture weights sum to {sum}, expected 1"
            )));
        }
        Ok(TreeMixture { trees, weights })
    }

    pub fn trees(&self) -> &[SpanningTree] {
        &self.trees
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Edge appearance probabilities induced by the mixture; a certified
    /// point of the spanning tree polytope.
    pub fn edge_marginals(&self, graph: &Graph) -> EdgeAppearance {
        let mut mu = vec![0.0; graph.edge_count()];
        for (tree, &w) in self.trees.iter().zip(&self.weights) {
            for &e in tree.edge_indices() {
                mu[e] += w;
            }
        }
        EdgeAppearance(mu)
    }
}

/// Tree-structured exponential parameters: off-tree edge tables are
/// identically zero.
#[derive(Debug, Clone)]
pub struct TreeParams {
    pub tree: SpanningTree,
    pub params: OvercompleteParams,
}

impl TreeParams {
    pub fn new(tree: SpanningTree, params: OvercompleteParams) -> Result<Self> {
        for (e, table) in params.edge.iter().enumerate() {
            if !tree.contains(e) && table.iter().any(|&v| v != 0.0) {
                return Err(TrwError::InvalidTable(format!(
                    "edge {e} is off the tree but has nonzero parameters"
                )));
            }
        }
        Ok(TreeParams { tree, params })
    }
}

/// Upper bound from a convex combination of tree-structured parameters:
/// sum_T mu(T) Phi(theta(T)), valid when the combination averages back to
/// theta exactly and every edge is covered by a support tree.
pub fn jensen_bound(
    mixture: &TreeMixture,
    tree_params: &[TreeParams],
    theta: &OvercompleteParams,
) -> Result<f64> {
    if tree_params.len() != mixture.trees().len() {
        return Err(TrwError::ShapeMismatch("one parameter vector per tree".into()));
    }
    let graph = &theta.graph;
    for e in 0..graph.edge_count() {
        if !mixture.trees().iter().any(|t| t.contains(e)) {
            return Err(TrwError::UncoveredEdge(e));
        }
    }
    // Admissibility: the weighted average must reproduce theta entrywise.
    let mut avg = OvercompleteParams::zeros(graph.clone(), theta.m);
    for (tp, &w) in tree_params.iter().zip(mixture.weights()) {
        for (s, table) in tp.params.node.iter().enumerate() {
            for (j, &v) in table.iter().enumerate() {
                avg.node[s][j] += w * v;
            }
        }
        for (e, table) in tp.params.edge.iter().enumerate() {
            for (i, &v) in table.iter().enumerate() {
                avg.edge[e][i] += w * v;
            }
        }
    }
    let mut gap = 0.0f64;
    for (a, b) in avg.node.iter().flatten().zip(theta.node.iter().flatten()) {
        gap = gap.max((a - b).abs());
    }
    for (a, b) in avg.edge.iter().flatten().zip(theta.edge.iter().flatten()) {
        gap = gap.max((a - b).abs());
    }
    const ADMISSIBILITY_TOL: f64 = 1e-8;
    if gap > ADMISSIBILITY_TOL {
        return Err(TrwError::Inadmissible { gap, tolerance: ADMISSIBILITY_TOL });
    }
    let mut bound = 0.0;
    for (tp, &w) in tree_params.iter().zip(mixture.weights()) {
        bound += w * tree_log_partition(&tp.params, &tp.tree)?;
    }
    Ok(bound)
}
