//! Deterministic generators for test fixtures: random models and random
//! points of the local consistency set.

use rand_core::RngCore;

use crate::exact::for_each_configuration;
use crate::graph::Graph;
use crate::model::{unit_uniform, Coding, MinimalIsingParams, OvercompleteParams};
use crate::pseudo::Pseudomarginals;

/// Strictly interior pseudomarginals obtained as the exact marginals of a
/// random positive joint distribution, so they satisfy local consistency to
/// machine precision.
pub fn random_interior_pseudomarginals<R: RngCore>(
    graph: &Graph,
    m: usize,
    rng: &mut R,
) -> Pseudomarginals {
    let n = graph.node_count();
    let total = m.pow(n as u32);
    let mut joint = Vec::with_capacity(total);
    let mut sum = 0.0;
    for _ in 0..total {
        let w = 0.05 + unit_uniform(rng);
        joint.push(w);
        sum += w;
    }
    let mut node = vec![vec![0.0; m]; n];
    let mut edge = vec![vec![0.0; m * m]; graph.edge_count()];
    let mut idx = 0usize;
    for_each_configuration(n, m, |x| {
        let p = joint[idx] / sum;
        idx += 1;
        for (s, &xs) in x.iter().enumerate() {
            node[s][xs] += p;
        }
        for (e, &(s, t)) in graph.edges().iter().enumerate() {
            edge[e][x[s] * m + x[t]] += p;
        }
    });
    Pseudomarginals { m, node, edge }
}

/// Random minimal Ising model with node and edge parameters drawn uniformly
/// from [-scale, scale].
pub fn random_ising<R: RngCore>(
    graph: &Graph,
    scale: f64,
    coding: Coding,
    rng: &mut R,
) -> MinimalIsingParams {
    let node = (0..graph.node_count())
        .map(|_| scale * (2.0 * unit_uniform(rng) - 1.0))
        .collect();
    let edge = (0..graph.edge_count())
        .map(|_| scale * (2.0 * unit_uniform(rng) - 1.0))
        .collect();
    MinimalIsingParams::new(graph.clone(), node, edge, coding).expect("finite parameters")
}

/// Random overcomplete parameters with entries uniform in [-scale, scale].
pub fn random_overcomplete<R: RngCore>(
    graph: &Graph,
    m: usize,
    scale: f64,
    rng: &mut R,
) -> OvercompleteParams {
    let node = (0..graph.node_count())
        .map(|_| (0..m).map(|_| scale * (2.0 * unit_uniform(rng) - 1.0)).collect())
        .collect();
    let edge = (0..graph.edge_count())
        .map(|_| (0..m * m).map(|_| scale * (2.0 * unit_uniform(rng) - 1.0)).collect())
        .collect();
    OvercompleteParams::new(graph.clone(), m, node, edge).expect("finite parameters")
}

/// Random tree graph on n nodes: node i attaches to a uniformly random
/// earlier node.
pub fn random_tree_graph<R: RngCore>(n: usize, rng: &mut R) -> Graph {
    let edges: Vec<(usize, usize)> = (1..n)
        .map(|i| ((unit_uniform(rng) * i as f64) as usize, i))
        .collect();
    Graph::custom(n, edges).expect("valid tree edges")
}
