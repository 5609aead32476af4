//! Ground-truth computation of the log partition function and marginals:
//! brute force over configurations, variable elimination, and a recursive
//! route for tree-structured parameters.

use crate::error::{Result, TrwError};
use crate::graph::SpanningTree;
use crate::model::OvercompleteParams;

/// Default cap on the number of configurations (brute force) or on the size
/// of an intermediate elimination table.
pub const DEFAULT_CONFIG_CAP: u64 = 1 << 24;

/// Exact log partition function with optional marginal tables.
#[derive(Debug, Clone)]
pub struct ExactResult {
    pub log_partition: f64,
    pub node_marginals: Vec<Vec<f64>>,
    /// Flat m*m tables in the crate's edge-table layout.
    pub edge_marginals: Vec<Vec<f64>>,
}

/// Visits every configuration of n variables with m states each, in
/// lexicographic order with the last variable fastest.
pub fn for_each_configuration<F: FnMut(&[usize])>(n: usize, m: usize, mut f: F) {
    let mut x = vec![0usize; n];
    loop {
        f(&x);
        let mut i = n;
        loop {
            if i == 0 {
                return;
            }
            i -= 1;
            x[i] += 1;
            if x[i] < m {
                break;
            }
            x[i] = 0;
        }
    }
}

fn check_config_count(n: usize, m: usize, cap: u64) -> Result<()> {
    let mut total: u64 = 1;
    for _ in 0..n {
        total = total
            .checked_mul(m as u64)
            .filter(|&t| t <= cap)
            .ok_or_else(|| TrwError::TooLarge(format!("m^N exceeds the cap of {cap}")))?;
    }
    Ok(())
}

/// Exact log partition function and marginals by summing all m^N
/// configurations with log-sum-exp stabilization.
pub fn brute_force_log_partition(p: &OvercompleteParams) -> Result<ExactResult> {
    brute_force_log_partition_capped(p, DEFAULT_CONFIG_CAP)
}

pub fn brute_force_log_partition_capped(p: &OvercompleteParams, cap: u64) -> Result<ExactResult> {
    let n = p.graph.node_count();
    let m = p.m;
    check_config_count(n, m, cap)?;

    let mut max_score = f64::NEG_INFINITY;
    for_each_configuration(n, m, |x| {
        let s = p.log_score(x).expect("in-range states");
        if s > max_score {
            max_score = s;
        }
    });

    let mut total = 0.0;
    let mut node_marginals = vec![vec![0.0; m]; n];
    let mut edge_marginals = vec![vec![0.0; m * m]; p.graph.edge_count()];
    for_each_configuration(n, m, |x| {
        let w = (p.log_score(x).expect("in-range states") - max_score).exp();
        total += w;
        for (s, &xs) in x.iter().enumerate() {
            node_marginals[s][xs] += w;
        }
        for (e, &(s, t)) in p.graph.edges().iter().enumerate() {
            edge_marginals[e][x[s] * m + x[t]] += w;
        }
    });
    for table in node_marginals.iter_mut().chain(edge_marginals.iter_mut()) {
        for v in table.iter_mut() {
            *v /= total;
        }
    }
    Ok(ExactResult {
        log_partition: max_score + total.ln(),
        node_marginals,
        edge_marginals,
    })
}

/// A factor in the log domain over a sorted variable scope.
struct LogFactor {
    scope: Vec<usize>,
    values: Vec<f64>,
}

fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Multiplies (adds in log domain) a set of factors over the union scope and
/// sums out `var`. Tables are row-major over the sorted scope, last variable
/// fastest.
fn combine_and_eliminate(factors: Vec<LogFactor>, var: usize, m: usize, cap: u64) -> Result<LogFactor> {
    let mut scope: Vec<usize> = factors.iter().flat_map(|f| f.scope.iter().copied()).collect();
    scope.sort_unstable();
    scope.dedup();
    check_config_count(scope.len(), m, cap).map_err(|_| {
        TrwError::TooLarge(format!(
            "elimination table over {} variables exceeds the cap of {cap}",
            scope.len()
        ))
    })?;

    let width = scope.len();
    let mut stride = vec![1usize; width];
    for i in (0..width.saturating_sub(1)).rev() {
        stride[i] = stride[i + 1] * m;
    }
    let joint_size = m.pow(width as u32);
    let mut joint = vec![0.0f64; joint_size];
    for f in &factors {
        let positions: Vec<usize> = f
            .scope
            .iter()
            .map(|v| scope.iter().position(|s| s == v).expect("scope is a union"))
            .collect();
        let mut assign = vec![0usize; width];
        for slot in joint.iter_mut() {
            let mut fidx = 0usize;
            for &pos in &positions {
                fidx = fidx * m + assign[pos];
            }
            *slot += f.values[fidx];
            for k in (0..width).rev() {
                assign[k] += 1;
                if assign[k] < m {
                    break;
                }
                assign[k] = 0;
            }
        }
    }

    let var_pos = scope.iter().position(|&s| s == var).expect("var is in scope");
    let var_stride = stride[var_pos];
    let new_scope: Vec<usize> = scope.iter().copied().filter(|&s| s != var).collect();
    // Bases with a zero digit for var enumerate the reduced table in
    // row-major order over the remaining scope.
    let mut values = Vec::with_capacity(joint_size / m);
    let mut buf = vec![0.0f64; m];
    for base in 0..joint_size {
        if (base / var_stride) % m != 0 {
            continue;
        }
        for (state, b) in buf.iter_mut().enumerate() {
            *b = joint[base + state * var_stride];
        }
        values.push(log_sum_exp(&buf));
    }
    Ok(LogFactor { scope: new_scope, values })
}

/// Exact log partition function by sum-product variable elimination in the
/// log domain, following the given node ordering.
pub fn variable_elimination_log_partition(
    p: &OvercompleteParams,
    order: &[usize],
) -> Result<f64> {
    variable_elimination_capped(p, order, DEFAULT_CONFIG_CAP)
}

pub fn variable_elimination_capped(
    p: &OvercompleteParams,
    order: &[usize],
    cap: u64,
) -> Result<f64> {
    let n = p.graph.node_count();
    let m = p.m;
    {
        let mut seen = vec![false; n];
        for &v in order {
            if v >= n || seen[v] {
                return Err(TrwError::InvalidGraph(format!(
                    "elimination order is not a permutation (node {v})"
                )));
            }
            seen[v] = true;
        }
        if order.len() != n {
            return Err(TrwError::InvalidGraph("elimination order misses nodes".into()));
        }
    }

    let mut factors: Vec<LogFactor> = Vec::new();
    for (s, table) in p.node.iter().enumerate() {
        factors.push(LogFactor { scope: vec![s], values: table.clone() });
    }
    for (e, table) in p.edge.iter().enumerate() {
        // All-zero tables are multiplicative identity; dropping them keeps
        // elimination scopes (and width) tied to the effective structure.
        if table.iter().all(|&v| v == 0.0) {
            continue;
        }
        let (s, t) = p.graph.edge(e);
        if s < t {
            factors.push(LogFactor { scope: vec![s, t], values: table.clone() });
        } else {
            let mut transposed = vec![0.0; m * m];
            for j in 0..m {
                for k in 0..m {
                    transposed[k * m + j] = table[j * m + k];
                }
            }
            factors.push(LogFactor { scope: vec![t, s], values: transposed });
        }
    }

    for &var in order {
        let (with_var, rest): (Vec<_>, Vec<_>) =
            factors.into_iter().partition(|f| f.scope.contains(&var));
        factors = rest;
        if with_var.is_empty() {
            continue;
        }
        factors.push(combine_and_eliminate(with_var, var, m, cap)?);
    }

    // All variables eliminated: remaining factors are scalars.
    let total: f64 = factors
        .iter()
        .map(|f| {
            debug_assert!(f.scope.is_empty());
            f.values[0]
        })
        .sum();
    Ok(total)
}

/// Exact log partition function for tree-structured parameters by leaf
/// elimination on the tree; off-tree edge tables are ignored (callers pass
/// parameters that are zero off the tree).
pub fn tree_log_partition(p: &OvercompleteParams, tree: &SpanningTree) -> Result<f64> {
    let n = p.graph.node_count();
    let m = p.m;
    // message[s] accumulates log-domain products of upward messages into s.
    let mut message: Vec<Vec<f64>> = p.node.clone();
    let mut degree = vec![0usize; n];
    let mut neighbors: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n];
    for &e in tree.edge_indices() {
        let (s, t) = p.graph.edge(e);
        degree[s] += 1;
        degree[t] += 1;
        neighbors[s].push((t, e));
        neighbors[t].push((s, e));
    }
    let mut removed = vec![false; n];
    let mut queue: Vec<usize> = (0..n).filter(|&v| degree[v] <= 1).collect();
    let mut processed = 0usize;
    let mut root = 0usize;
    while let Some(leaf) = queue.pop() {
        if removed[leaf] {
            continue;
        }
        let parent = neighbors[leaf]
            .iter()
            .find(|&&(nb, _)| !removed[nb])
            .copied();
        let Some((parent, e)) = parent else {
            root = leaf;
            removed[leaf] = true;
            processed += 1;
            continue;
        };
        // Absorb the leaf into its parent: msg(x_parent) = lse_x_leaf
        // [ theta_edge + message[leaf](x_leaf) ].
        let table = &p.edge[e];
        let (es, _et) = p.graph.edge(e);
        let mut buf = vec![0.0f64; m];
        for xp in 0..m {
            for xl in 0..m {
                let t_val = if es == leaf { table[xl * m + xp] } else { table[xp * m + xl] };
                buf[xl] = t_val + message[leaf][xl];
            }
            let v = log_sum_exp(&buf);
            message[parent][xp] += v;
        }
        removed[leaf] = true;
        processed += 1;
        degree[parent] -= 1;
        if degree[parent] == 1 || (degree[parent] == 0 && !removed[parent]) {
            queue.push(parent);
        }
    }
    if processed != n {
        return Err(TrwError::InvalidGraph("edge subset is not a forest".into()));
    }
    // With a spanning tree there is exactly one root left; disconnected
    // forests would have been rejected by SpanningTree construction.
    Ok(log_sum_exp(&message[root]))
}

/// Index of a single overcomplete parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamIndex {
    Node { node: usize, state: usize },
    Edge { edge: usize, j: usize, k: usize },
}

/// Central finite difference of the log partition function in one coordinate
/// alongside the exact moment E_theta[phi_alpha]; the caller asserts closeness.
pub fn moment_check(p: &OvercompleteParams, alpha: ParamIndex, h: f64) -> Result<(f64, f64)> {
    let mut plus = p.clone();
    let mut minus = p.clone();
    match alpha {
        ParamIndex::Node { node, state } => {
            plus.node[node][state] += h;
            minus.node[node][state] -= h;
        }
        ParamIndex::Edge { edge, j, k } => {
            plus.edge[edge][j * p.m + k] += h;
            minus.edge[edge][j * p.m + k] -= h;
        }
    }
    let phi_plus = brute_force_log_partition(&plus)?.log_partition;
    let phi_minus = brute_force_log_partition(&minus)?.log_partition;
    let result = brute_force_log_partition(p)?;
    let moment = match alpha {
        ParamIndex::Node { node, state } => result.node_marginals[node][state],
        ParamIndex::Edge { edge, j, k } => result.edge_marginals[edge][j * p.m + k],
    };
    Ok(((phi_plus - phi_minus) / (2.0 * h), moment))
}
