//! Inner variational problem: minimize the reweighted free energy over the
//! local consistency set, by feasible-start Newton steps in the null space of
//! the equality constraints with a short logarithmic barrier path on
//! positivity.

use nalgebra::{DMatrix, DVector};

use crate::error::{Result, TrwError};
use crate::graph::{EdgeAppearance, Graph, SpanningTree};
use crate::model::OvercompleteParams;
use crate::pseudo::Pseudomarginals;

/// Options for the inner minimization.
#[derive(Debug, Clone)]
pub struct InnerOptions {
    /// Convergence threshold on the 2-norm of the gradient projected onto
    /// the constraint null space.
    pub kkt_tolerance: f64,
    /// Cap on total Newton steps across all barrier stages.
    pub max_iterations: usize,
    /// Initial barrier weight on -sum log T.
    pub barrier_init: f64,
    /// Multiplicative decrease per barrier stage.
    pub barrier_shrink: f64,
    /// Barrier weight below which the final polish runs with no barrier.
    pub barrier_floor: f64,
    pub init: InnerInit,
}

#[derive(Debug, Clone)]
pub enum InnerInit {
    /// Uniform tables; feasible and interior by construction.
    Uniform,
    /// Warm start from a previous solution (projected back to feasibility).
    Warm(Pseudomarginals),
}

impl Default for InnerOptions {
    fn default() -> Self {
        InnerOptions {
            kkt_tolerance: 1e-8,
            max_iterations: 500,
            barrier_init: 1e-4,
            barrier_shrink: 0.01,
            barrier_floor: 1e-12,
            init: InnerInit::Uniform,
        }
    }
}

/// Result of the inner minimization.
#[derive(Debug, Clone)]
pub struct InnerSolution {
    pub t_hat: Pseudomarginals,
    /// The upper bound -F(T_hat).
    pub bound: f64,
    /// 2-norm of the projected free-energy gradient at the solution.
    pub kkt_residual: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Free-energy value at each accepted iterate.
    pub objective_history: Vec<f64>,
}

/// Equality constraints of the local consistency set in matrix form, with an
/// orthonormal null-space basis. Depends only on the graph and state count,
/// so it can be reused across solves.
pub struct ConstraintSystem {
    m: usize,
    n_vars: usize,
    a: DMatrix<f64>,
    b: DVector<f64>,
    /// Orthonormal basis of null(A), n_vars x null_dim.
    null_basis: DMatrix<f64>,
    /// Cholesky factor of A A^T for feasibility restoration.
    aat: nalgebra::Cholesky<f64, nalgebra::Dyn>,
}

impl ConstraintSystem {
    pub fn new(graph: &Graph, m: usize) -> Result<Self> {
        let n_nodes = graph.node_count();
        let n_edges = graph.edge_count();
        let n_vars = n_nodes * m + n_edges * m * m;
        // Rows: node normalization, then per edge m row sums and m-1 column
        // sums (the last column sum is implied by the others).
        let n_rows = n_nodes + n_edges * (2 * m - 1);
        let mut a = DMatrix::zeros(n_rows, n_vars);
        let mut b = DVector::zeros(n_rows);
        let node_at = |s: usize, j: usize| s * m + j;
        let edge_at = |e: usize, i: usize| n_nodes * m + e * m * m + i;
        for s in 0..n_nodes {
            for j in 0..m {
                a[(s, node_at(s, j))] = 1.0;
            }
            b[s] = 1.0;
        }
        let mut row = n_nodes;
        for e in 0..n_edges {
            let (s, t) = graph.edge(e);
            for j in 0..m {
                for k in 0..m {
                    a[(row, edge_at(e, j * m + k))] = 1.0;
                }
                a[(row, node_at(s, j))] = -1.0;
                row += 1;
            }
            for k in 0..m - 1 {
                for j in 0..m {
                    a[(row, edge_at(e, j * m + k))] = 1.0;
                }
                a[(row, node_at(t, k))] = -1.0;
                row += 1;
            }
        }
        let null_basis = nullspace_basis(&a)?;
        let aat = nalgebra::Cholesky::new(&a * a.transpose())
            .ok_or_else(|| TrwError::SolverFailure("A A^T is singular".into()))?;
        Ok(ConstraintSystem { m, n_vars, a, b, null_basis, aat })
    }

    pub fn null_dim(&self) -> usize {
        self.null_basis.ncols()
    }

    /// Minimal-norm correction restoring A x = b.
    fn restore_feasibility(&self, x: &mut DVector<f64>) {
        let residual = &self.a * &*x - &self.b;
        if residual.amax() <= 1e-14 {
            return;
        }
        let y = self.aat.solve(&residual);
        *x -= self.a.transpose() * y;
    }
}

/// Orthonormal basis of the null space of a full-row-rank matrix, via a full
/// Householder QR of its transpose.
fn nullspace_basis(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (p, n) = (a.nrows(), a.ncols());
    assert!(n >= p, "more constraints than variables");
    let mut r = a.transpose(); // n x p
    let mut reflectors: Vec<DVector<f64>> = Vec::with_capacity(p);
    for k in 0..p {
        let mut v = DVector::zeros(n);
        for i in k..n {
            v[i] = r[(i, k)];
        }
        let norm = v.rows_range(k..).norm();
        if norm == 0.0 {
            return Err(TrwError::SolverFailure(
                "constraint matrix is rank deficient".into(),
            ));
        }
        let sign = if v[k] >= 0.0 { 1.0 } else { -1.0 };
        v[k] += sign * norm;
        let vnorm = v.rows_range(k..).norm();
        v.rows_range_mut(k..).scale_mut(1.0 / vnorm);
        // Apply H = I - 2 v v^T to the remaining columns of r.
        for col in k..p {
            let mut dot = 0.0;
            for i in k..n {
                dot += v[i] * r[(i, col)];
            }
            for i in k..n {
                r[(i, col)] -= 2.0 * dot * v[i];
            }
        }
        reflectors.push(v);
    }
    let diag_max = (0..p).map(|k| r[(k, k)].abs()).fold(0.0, f64::max);
    let diag_min = (0..p).map(|k| r[(k, k)].abs()).fold(f64::INFINITY, f64::min);
    if diag_min <= 1e-10 * diag_max {
        return Err(TrwError::SolverFailure(format!(
            "constraint matrix is numerically rank deficient (|R_kk| ratio {:.3e})",
            diag_min / diag_max
        )));
    }
    // Null basis: columns p..n of Q, built by applying the reflectors in
    // reverse to the corresponding columns of the identity.
    let mut z = DMatrix::zeros(n, n - p);
    for c in 0..n - p {
        z[(p + c, c)] = 1.0;
    }
    for k in (0..p).rev() {
        let v = &reflectors[k];
        for c in 0..n - p {
            let mut dot = 0.0;
            for i in k..n {
                dot += v[i] * z[(i, c)];
            }
            for i in k..n {
                z[(i, c)] -= 2.0 * dot * v[i];
            }
        }
    }
    Ok(z)
}

/// Flat-vector view of the objective: free energy, gradient, and Hessian
/// products in the packed layout (node tables first, then edge tables).
struct FlatObjective<'a> {
    graph: &'a Graph,
    m: usize,
    mu: &'a [f64],
    theta: &'a OvercompleteParams,
}

impl<'a> FlatObjective<'a> {
    fn node_at(&self, s: usize, j: usize) -> usize {
        s * self.m + j
    }

    fn edge_at(&self, e: usize, i: usize) -> usize {
        self.graph.node_count() * self.m + e * self.m * self.m + i
    }

    fn value(&self, x: &DVector<f64>) -> f64 {
        let m = self.m;
        let mut f = 0.0;
        for s in 0..self.graph.node_count() {
            for j in 0..m {
                let t = x[self.node_at(s, j)];
                if t > 0.0 {
                    f += t * t.ln();
                }
                f -= t * self.theta.node[s][j];
            }
        }
        let mut row = vec![0.0; m];
        let mut col = vec![0.0; m];
        for e in 0..self.graph.edge_count() {
            row.iter_mut().for_each(|v| *v = 0.0);
            col.iter_mut().for_each(|v| *v = 0.0);
            for j in 0..m {
                for k in 0..m {
                    let t = x[self.edge_at(e, j * m + k)];
                    row[j] += t;
                    col[k] += t;
                }
            }
            let mut mi = 0.0;
            for j in 0..m {
                for k in 0..m {
                    let t = x[self.edge_at(e, j * m + k)];
                    if t > 0.0 {
                        mi += t * (t.ln() - row[j].ln() - col[k].ln());
                    }
                    f -= t * self.theta.edge[e][j * m + k];
                }
            }
            f += self.mu[e] * mi;
        }
        f
    }

    fn gradient(&self, x: &DVector<f64>, out: &mut DVector<f64>) {
        let m = self.m;
        for s in 0..self.graph.node_count() {
            for j in 0..m {
                let idx = self.node_at(s, j);
                out[idx] = 1.0 + x[idx].ln() - self.theta.node[s][j];
            }
        }
        let mut row = vec![0.0; m];
        let mut col = vec![0.0; m];
        for e in 0..self.graph.edge_count() {
            row.iter_mut().for_each(|v| *v = 0.0);
            col.iter_mut().for_each(|v| *v = 0.0);
            for j in 0..m {
                for k in 0..m {
                    let t = x[self.edge_at(e, j * m + k)];
                    row[j] += t;
                    col[k] += t;
                }
            }
            for j in 0..m {
                for k in 0..m {
                    let idx = self.edge_at(e, j * m + k);
                    out[idx] = self.mu[e] * (x[idx].ln() - row[j].ln() - col[k].ln() - 1.0)
                        - self.theta.edge[e][j * m + k];
                }
            }
        }
    }

    /// out = (H(x) + tau diag(1/x^2)) * z, column by column, exploiting the
    /// block-diagonal Hessian (diagonal on node entries, m^2 blocks per edge).
    fn hessian_times(&self, x: &DVector<f64>, tau: f64, z: &DMatrix<f64>, out: &mut DMatrix<f64>) {
        let m = self.m;
        let n_node_vars = self.graph.node_count() * self.m;
        let cols = z.ncols();
        for c in 0..cols {
            for idx in 0..n_node_vars {
                out[(idx, c)] = z[(idx, c)] / x[idx] + tau * z[(idx, c)] / (x[idx] * x[idx]);
            }
        }
        let mut row = vec![0.0; m];
        let mut col = vec![0.0; m];
        let mut zrow = vec![0.0; m];
        let mut zcol = vec![0.0; m];
        for e in 0..self.graph.edge_count() {
            row.iter_mut().for_each(|v| *v = 0.0);
            col.iter_mut().for_each(|v| *v = 0.0);
            for j in 0..m {
                for k in 0..m {
                    let t = x[self.edge_at(e, j * m + k)];
                    row[j] += t;
                    col[k] += t;
                }
            }
            for c in 0..cols {
                zrow.iter_mut().for_each(|v| *v = 0.0);
                zcol.iter_mut().for_each(|v| *v = 0.0);
                for j in 0..m {
                    for k in 0..m {
                        let zv = z[(self.edge_at(e, j * m + k), c)];
                        zrow[j] += zv;
                        zcol[k] += zv;
                    }
                }
                for j in 0..m {
                    for k in 0..m {
                        let idx = self.edge_at(e, j * m + k);
                        let t = x[idx];
                        let zv = z[(idx, c)];
                        out[(idx, c)] = self.mu[e]
                            * (zv / t - zrow[j] / row[j] - zcol[k] / col[k])
                            + tau * zv / (t * t);
                    }
                }
            }
        }
    }
}

fn pack(t: &Pseudomarginals) -> DVector<f64> {
    let flat: Vec<f64> = t.node.iter().chain(t.edge.iter()).flatten().copied().collect();
    DVector::from_vec(flat)
}

fn unpack(graph: &Graph, m: usize, x: &DVector<f64>) -> Pseudomarginals {
    let mut node = vec![vec![0.0; m]; graph.node_count()];
    let mut edge = vec![vec![0.0; m * m]; graph.edge_count()];
    let mut idx = 0;
    for table in node.iter_mut().chain(edge.iter_mut()) {
        for v in table.iter_mut() {
            *v = x[idx];
            idx += 1;
        }
    }
    Pseudomarginals { m, node, edge }
}

fn validate_mu(graph: &Graph, mu: &EdgeAppearance) -> Result<()> {
    if mu.len() != graph.edge_count() {
        return Err(TrwError::ShapeMismatch("mu length".into()));
    }
    for (e, &v) in mu.0.iter().enumerate() {
        if !(v > 0.0) {
            return Err(TrwError::NonPositiveEdgeAppearance { edge: e, value: v });
        }
        if v > 1.0 + 1e-12 {
            return Err(TrwError::InvalidTable(format!("mu[{e}] = {v} exceeds 1")));
        }
    }
    Ok(())
}

/// Minimizes F(T; mu; theta) over the local consistency set.
///
/// Returns the unique global minimizer with the bound -F(T_hat) and a
/// projected-gradient certificate. Non-convergence within the iteration cap
/// yields a result flagged `converged: false` rather than an error.
pub fn minimize_free_energy(
    theta: &OvercompleteParams,
    mu: &EdgeAppearance,
    opts: &InnerOptions,
) -> Result<InnerSolution> {
    let system = ConstraintSystem::new(&theta.graph, theta.m)?;
    minimize_free_energy_with(&system, theta, mu, opts)
}

/// As `minimize_free_energy`, reusing a prebuilt constraint system.
pub fn minimize_free_energy_with(
    system: &ConstraintSystem,
    theta: &OvercompleteParams,
    mu: &EdgeAppearance,
    opts: &InnerOptions,
) -> Result<InnerSolution> {
    let graph = &theta.graph;
    let m = theta.m;
    if system.m != m || system.n_vars != graph.node_count() * m + graph.edge_count() * m * m {
        return Err(TrwError::ShapeMismatch("constraint system does not match model".into()));
    }
    if graph.edge_count() > 0 && !graph.is_connected() {
        return Err(TrwError::NoSpanningTree);
    }
    validate_mu(graph, mu)?;

    let objective = FlatObjective { graph, m, mu: &mu.0, theta };
    let uniform = pack(&Pseudomarginals::uniform(graph, m));
    let mut x = match &opts.init {
        InnerInit::Uniform => uniform.clone(),
        InnerInit::Warm(t) => {
            t.check_shapes(graph)?;
            let mut w = pack(t);
            system.restore_feasibility(&mut w);
            // Blend toward uniform until strictly interior.
            let min_entry = w.min();
            if min_entry < 1e-10 {
                let lambda = ((1e-8 - min_entry) / (uniform.min() - min_entry)).clamp(0.0, 1.0);
                w = (1.0 - lambda) * w + lambda * &uniform;
            }
            w
        }
    };

    let nz = system.null_dim();
    let mut history = vec![objective.value(&x)];
    let mut iterations = 0usize;
    let mut converged = false;
    let mut kkt_residual = f64::INFINITY;

    // Barrier stages, ending with a pure Newton polish (tau = 0).
    let mut stages: Vec<f64> = Vec::new();
    let mut tau = opts.barrier_init;
    while tau > opts.barrier_floor {
        stages.push(tau);
        tau *= opts.barrier_shrink;
    }
    stages.push(0.0);

    let mut grad = DVector::zeros(system.n_vars);
    let mut hz = DMatrix::zeros(system.n_vars, nz);
    let mut blind_steps = 0usize;

    'outer: for &tau in &stages {
        // Barrier stages take a few corrector steps each; the final polish
        // may use the whole remaining budget.
        let stage_cap = if tau > 0.0 { 50 } else { opts.max_iterations };
        for _ in 0..stage_cap {
            if iterations >= opts.max_iterations {
                break 'outer;
            }
            objective.gradient(&x, &mut grad);
            let mut grad_phi = grad.clone();
            if tau > 0.0 {
                for i in 0..system.n_vars {
                    grad_phi[i] -= tau / x[i];
                }
            }
            let gz = system.null_basis.tr_mul(&grad_phi);
            if tau == 0.0 {
                kkt_residual = system.null_basis.tr_mul(&grad).norm();
                if kkt_residual <= opts.kkt_tolerance {
                    converged = true;
                    break 'outer;
                }
            }
            if nz == 0 {
                // Fully determined by the constraints; nothing to optimize.
                converged = true;
                kkt_residual = 0.0;
                break 'outer;
            }

            objective.hessian_times(&x, tau, &system.null_basis, &mut hz);
            let mut reduced = system.null_basis.tr_mul(&hz);
            let scale = (0..nz).map(|i| reduced[(i, i)].abs()).fold(1.0, f64::max);
            let mut ridge = 0.0;
            let mut step_z = None;
            while ridge <= 1e-2 * scale {
                match nalgebra::Cholesky::new(reduced.clone()) {
                    Some(chol) => {
                        step_z = Some(chol.solve(&(-&gz)));
                        break;
                    }
                    None => {
                        let bump = if ridge == 0.0 { 1e-13 * scale } else { ridge * 100.0 };
                        for i in 0..nz {
                            reduced[(i, i)] += bump - ridge;
                        }
                        ridge = bump;
                    }
                }
            }
            // An unfactorizable Hessian ends the solve; the final residual
            // check decides whether the current iterate already qualifies.
            let Some(step_z) = step_z else { break 'outer };
            let step = &system.null_basis * &step_z;
            let decrement = -gz.dot(&step_z);
            // Stage exit: the Newton decrement certifies stage accuracy.
            if tau > 0.0 && decrement <= (0.1 * tau).max(1e-14) {
                break;
            }

            // Fraction-to-boundary cap keeps the iterate strictly interior.
            let mut alpha = 1.0f64;
            for i in 0..system.n_vars {
                if step[i] < 0.0 {
                    alpha = alpha.min(-0.995 * x[i] / step[i]);
                }
            }
            let phi = |v: &DVector<f64>| -> f64 {
                let mut val = objective.value(v);
                if tau > 0.0 {
                    val -= tau * v.iter().map(|&t| t.ln()).sum::<f64>();
                }
                val
            };
            let phi_0 = phi(&x);
            // Once the predicted decrease drops below the evaluation noise of
            // the objective, the Armijo test is meaningless; take the damped
            // Newton step outright (the boundary cap still applies).
            let noise_floor = 1e-13 * (1.0 + phi_0.abs());
            let mut accepted = false;
            if decrement <= noise_floor {
                // Give up once repeated noise-floor steps stop helping: the
                // iterate is at the precision floor of this problem.
                blind_steps += 1;
                if blind_steps > 5 {
                    break 'outer;
                }
                let candidate = &x + alpha * &step;
                if candidate.min() > 0.0 {
                    x = candidate;
                    accepted = true;
                }
            } else {
                blind_steps = 0;
                let slope = grad_phi.dot(&step);
                while alpha > 1e-12 {
                    let candidate = &x + alpha * &step;
                    if candidate.min() > 0.0 {
                        let phi_a = phi(&candidate);
                        if phi_a <= phi_0 + 1e-4 * alpha * slope {
                            x = candidate;
                            accepted = true;
                            break;
                        }
                    }
                    alpha *= 0.5;
                }
            }
            iterations += 1;
            if !accepted {
                break; // stage stalled; move to a smaller barrier
            }
            history.push(objective.value(&x));
        }
    }

    if !converged {
        objective.gradient(&x, &mut grad);
        kkt_residual = system.null_basis.tr_mul(&grad).norm();
        converged = kkt_residual <= opts.kkt_tolerance;
    }
    let t_hat = unpack(graph, m, &x);
    let bound = -objective.value(&x);
    Ok(InnerSolution { t_hat, bound, kkt_residual, iterations, converged, objective_history: history })
}

/// 2-norm of the free-energy gradient projected onto the null space of the
/// local consistency constraints at the given tables.
pub fn projected_gradient_norm(
    system: &ConstraintSystem,
    theta: &OvercompleteParams,
    mu: &EdgeAppearance,
    t: &Pseudomarginals,
) -> Result<f64> {
    t.check_shapes(&theta.graph)?;
    let objective = FlatObjective { graph: &theta.graph, m: theta.m, mu: &mu.0, theta };
    let x = pack(t);
    let mut grad = DVector::zeros(x.len());
    objective.gradient(&x, &mut grad);
    Ok(system.null_basis.tr_mul(&grad).norm())
}

/// Tree-structured parameters reproducing the projected distribution:
/// node terms log T_s, on-tree edge terms log T_st - log T_s - log T_t.
///
/// By construction p(x; theta_hat) equals the tree factorization of T_hat,
/// already normalized, so its log partition function is zero.
pub fn recover_tree_params(
    t_hat: &Pseudomarginals,
    graph: &Graph,
    tree: &SpanningTree,
) -> Result<crate::pseudo::TreeParams> {
    t_hat.check_shapes(graph)?;
    if t_hat.min_entry() <= 0.0 {
        return Err(TrwError::BoundaryPoint("pseudomarginal table".into()));
    }
    let m = t_hat.m;
    let mut params = OvercompleteParams::zeros(graph.clone(), m);
    for (s, table) in t_hat.node.iter().enumerate() {
        for j in 0..m {
            params.node[s][j] = table[j].ln();
        }
    }
    for &e in tree.edge_indices() {
        let (s, t) = graph.edge(e);
        for j in 0..m {
            for k in 0..m {
                params.edge[e][j * m + k] = t_hat.edge[e][j * m + k].ln()
                    - t_hat.node[s][j].ln()
                    - t_hat.node[t][k].ln();
            }
        }
    }
    crate::pseudo::TreeParams::new(tree.clone(), params)
}
