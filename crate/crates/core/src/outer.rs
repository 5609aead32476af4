//! Outer optimization of the edge appearance probabilities over the spanning
//! tree polytope by conditional gradient, with a maximum-weight spanning tree
//! oracle and Armijo step sizes.

use crate::error::{Result, TrwError};
use crate::graph::{
    max_weight_spanning_tree, uniform_tree_edge_marginals, EdgeAppearance, EdgeWeights, Graph,
    SpanningTree,
};
use crate::inner::{
    minimize_free_energy_with, ConstraintSystem, InnerInit, InnerOptions, InnerSolution,
};
use crate::model::OvercompleteParams;
use crate::pseudo::{edge_mutual_informations, TreeMixture};

/// Options for the conditional-gradient outer loop.
#[derive(Debug, Clone)]
pub struct OuterOptions {
    pub fw_gap_tolerance: f64,
    pub max_outer_iterations: usize,
    /// Sufficient-increase fraction of the linearized gain.
    pub armijo_sigma: f64,
    /// Backtracking factor.
    pub armijo_beta: f64,
    pub armijo_initial_step: f64,
    pub inner: InnerOptions,
}

impl Default for OuterOptions {
    fn default() -> Self {
        OuterOptions {
            fw_gap_tolerance: 1e-6,
            max_outer_iterations: 200,
            armijo_sigma: 0.1,
            armijo_beta: 0.5,
            armijo_initial_step: 1.0,
            inner: InnerOptions::default(),
        }
    }
}

/// Iterates stay at least this far from the faces of the polytope so the
/// inner problem keeps strictly positive edge appearances.
const MU_FLOOR: f64 = 1e-9;

/// Smallest Armijo step before the line search reports a stall.
const ALPHA_MIN: f64 = 1e-8;

/// Membership certificate for the current edge appearance vector: a convex
/// combination of the uniform spanning tree distribution (whose edge
/// marginals are exact by the matrix-tree construction) and explicit tree
/// atoms accumulated by the conditional-gradient steps.
#[derive(Debug, Clone)]
pub struct MixtureWitness {
    pub uniform_base: f64,
    pub trees: Vec<SpanningTree>,
    pub weights: Vec<f64>,
}

impl MixtureWitness {
    fn initial() -> Self {
        MixtureWitness { uniform_base: 1.0, trees: Vec::new(), weights: Vec::new() }
    }

    /// Edge marginals of the witness distribution.
    pub fn edge_marginals(&self, graph: &Graph) -> Result<EdgeAppearance> {
        let mut mu = if self.uniform_base > 0.0 {
            let base = uniform_tree_edge_marginals(graph)?;
            base.0.iter().map(|v| v * self.uniform_base).collect()
        } else {
            vec![0.0; graph.edge_count()]
        };
        for (tree, &w) in self.trees.iter().zip(&self.weights) {
            for &e in tree.edge_indices() {
                mu[e] += w;
            }
        }
        Ok(EdgeAppearance(mu))
    }

    /// Explicit tree mixture, available once the base weight has decayed to
    /// numerical dust.
    pub fn as_tree_mixture(&self) -> Option<TreeMixture> {
        if self.uniform_base > 1e-12 || self.trees.is_empty() {
            return None;
        }
        let total: f64 = self.weights.iter().sum();
        let weights = self.weights.iter().map(|w| w / total).collect();
        TreeMixture::new(self.trees.clone(), weights).ok()
    }

    fn shrink_and_add(&mut self, alpha: f64, tree: SpanningTree) {
        self.uniform_base *= 1.0 - alpha;
        for w in &mut self.weights {
            *w *= 1.0 - alpha;
        }
        match self.trees.iter().position(|t| t == &tree) {
            Some(i) => self.weights[i] += alpha,
            None => {
                self.trees.push(tree);
                self.weights.push(alpha);
            }
        }
        // Drop numerical dust, renormalizing so the weights still sum to one.
        let mut kept_trees = Vec::with_capacity(self.trees.len());
        let mut kept_weights = Vec::with_capacity(self.weights.len());
        for (t, &w) in self.trees.iter().zip(&self.weights) {
            if w >= 1e-14 {
                kept_trees.push(t.clone());
                kept_weights.push(w);
            }
        }
        self.trees = kept_trees;
        self.weights = kept_weights;
        if self.uniform_base < 1e-14 {
            self.uniform_base = 0.0;
        }
        let total: f64 = self.uniform_base + self.weights.iter().sum::<f64>();
        self.uniform_base /= total;
        for w in &mut self.weights {
            *w /= total;
        }
    }

    /// Support size (explicit atoms plus the base component if present).
    pub fn support_len(&self) -> usize {
        self.trees.len() + usize::from(self.uniform_base > 0.0)
    }
}

/// One record per outer iteration.
#[derive(Debug, Clone)]
pub struct OuterIteration {
    pub iteration: usize,
    pub mu: EdgeAppearance,
    /// Upper bound -H(mu) at this iterate.
    pub bound: f64,
    pub fw_gap: f64,
    /// Step size taken from this iterate (zero on the final record).
    pub step: f64,
    /// Direction tree chosen by the oracle at this iterate.
    pub tree: SpanningTree,
}

/// Result of the outer optimization.
#[derive(Debug, Clone)]
pub struct OuterSolution {
    pub mu_hat: EdgeAppearance,
    pub witness: MixtureWitness,
    /// Upper bound -H(mu_hat).
    pub bound: f64,
    pub fw_gap: f64,
    pub converged: bool,
    pub history: Vec<OuterIteration>,
    /// Inner solution at mu_hat.
    pub inner: InnerSolution,
}

/// Linear oracle: the polytope vertex maximizing the inner product with the
/// mutual-information vector is the indicator of a maximum-weight spanning
/// tree. Tiny negative inputs (down to -1e-12) are clamped to zero.
pub fn mwst_direction(mi: &[f64], graph: &Graph) -> Result<SpanningTree> {
    let mut weights = Vec::with_capacity(mi.len());
    for (e, &v) in mi.iter().enumerate() {
        if !v.is_finite() || v < -1e-12 {
            return Err(TrwError::InvalidTable(format!(
                "mutual information for edge {e} is {v}; expected a nonnegative value"
            )));
        }
        weights.push(v.max(0.0));
    }
    max_weight_spanning_tree(graph, &EdgeWeights(weights))
}

/// Outcome of one Armijo backtracking search along a vertex direction.
#[derive(Debug)]
pub enum StepOutcome {
    Accepted { alpha: f64, mu: EdgeAppearance, inner: InnerSolution },
    /// No improving step at or above the minimum step size.
    Stalled,
}

/// Backtracking line search on H along the segment toward a polytope vertex:
/// accepts the largest step alpha in {a0, a0*beta, ...} with
/// H(mu + alpha d) >= H(mu) + sigma * alpha * <grad H, d>.
///
/// The step is capped so every shrinking component stays above a small
/// positivity floor, which keeps the iterate a genuine convex combination
/// (the witness stays exact) and the inner problem strictly feasible.
#[allow(clippy::too_many_arguments)]
pub fn armijo_step(
    system: &ConstraintSystem,
    theta: &OvercompleteParams,
    mu: &EdgeAppearance,
    h_current: f64,
    fw_gap: f64,
    direction: &SpanningTree,
    warm: &InnerSolution,
    opts: &OuterOptions,
) -> Result<StepOutcome> {
    let indicator = direction.indicator(&theta.graph);
    let mut alpha_cap = opts.armijo_initial_step.min(1.0);
    for (e, &ind) in indicator.iter().enumerate() {
        if ind == 0.0 && mu.0[e] > MU_FLOOR {
            alpha_cap = alpha_cap.min(1.0 - MU_FLOOR / mu.0[e]);
        } else if ind == 0.0 {
            alpha_cap = 0.0;
        }
    }
    // Trial evaluations warm-start from the current inner optimum and skip
    // most of the barrier path; their Newton budget is capped because the
    // near-vertex candidates tried first are stiff and usually rejected.
    let inner_opts = InnerOptions {
        init: InnerInit::Warm(warm.t_hat.clone()),
        barrier_init: 1e-8,
        max_iterations: opts.inner.max_iterations.min(80),
        ..opts.inner.clone()
    };
    let mut alpha = alpha_cap;
    while alpha >= ALPHA_MIN {
        let candidate = EdgeAppearance(
            mu.0.iter()
                .zip(&indicator)
                .map(|(&m, &ind)| m + alpha * (ind - m))
                .collect(),
        );
        let sol = minimize_free_energy_with(system, theta, &candidate, &inner_opts)?;
        let h_candidate = -sol.bound;
        if sol.converged && h_candidate >= h_current + opts.armijo_sigma * alpha * fw_gap {
            return Ok(StepOutcome::Accepted { alpha, mu: candidate, inner: sol });
        }
        alpha *= opts.armijo_beta;
    }
    Ok(StepOutcome::Stalled)
}

/// Maximizes H(mu) = min_T F(T; mu; theta) over the spanning tree polytope.
///
/// Initialization is the exact edge-marginal vector of the uniform spanning
/// tree distribution; every later iterate is a convex combination of that
/// distribution and oracle trees, tracked in the witness. The gradient of H
/// at an iterate is the vector of edge mutual informations of the inner
/// optimum. On a stall with a small remaining gap (within 1000x the
/// tolerance) the run is reported converged; larger stalls are flagged.
pub fn optimize_edge_appearance(
    theta: &OvercompleteParams,
    opts: &OuterOptions,
) -> Result<OuterSolution> {
    let graph = &theta.graph;
    if graph.edge_count() > 0 && !graph.is_connected() {
        return Err(TrwError::NoSpanningTree);
    }
    let system = ConstraintSystem::new(graph, theta.m)?;
    let mut mu = uniform_tree_edge_marginals(graph)?;
    let mut witness = MixtureWitness::initial();
    let mut inner = minimize_free_energy_with(&system, theta, &mu, &opts.inner)?;
    if !inner.converged {
        return Err(TrwError::SolverFailure(format!(
            "inner solve failed to converge at initialization (residual {:.3e})",
            inner.kkt_residual
        )));
    }
    let mut h_value = -inner.bound;
    let mut history = Vec::new();
    let mut converged = false;
    let mut fw_gap = f64::INFINITY;

    for iteration in 0..opts.max_outer_iterations {
        let mi = edge_mutual_informations(&inner.t_hat);
        let tree = mwst_direction(&mi, graph)?;
        let indicator = tree.indicator(graph);
        fw_gap = mi
            .iter()
            .zip(indicator.iter().zip(&mu.0))
            .map(|(&g, (&ind, &m))| g.max(0.0) * (ind - m))
            .sum();
        let record = OuterIteration {
            iteration,
            mu: mu.clone(),
            bound: -h_value,
            fw_gap,
            step: 0.0,
            tree: tree.clone(),
        };
        if fw_gap <= opts.fw_gap_tolerance {
            history.push(record);
            converged = true;
            break;
        }
        match armijo_step(&system, theta, &mu, h_value, fw_gap, &tree, &inner, opts)? {
            StepOutcome::Accepted { alpha, mu: next_mu, inner: next_inner } => {
                history.push(OuterIteration { step: alpha, ..record });
                witness.shrink_and_add(alpha, tree);
                mu = next_mu;
                inner = next_inner;
                h_value = -inner.bound;
            }
            StepOutcome::Stalled => {
                history.push(record);
                converged = fw_gap <= 1e3 * opts.fw_gap_tolerance;
                break;
            }
        }
    }

    Ok(OuterSolution {
        mu_hat: mu,
        witness,
        bound: -h_value,
        fw_gap,
        converged,
        history,
        inner,
    })
}
