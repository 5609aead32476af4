//! Ensemble experiments: random models over a graph family and edge-strength
//! grid, with exact values, unoptimized/optimized upper bounds, and the
//! mean-field lower bound per trial, emitted as CSV rows plus a summary.

use anyhow::{bail, Context};
use rayon::prelude::*;
use trw_core::{
    brute_force_log_partition, minimize_free_energy, naive_mean_field_lower_bound,
    optimize_edge_appearance, sample_ensemble, to_overcomplete, uniform_tree_edge_marginals,
    variable_elimination_log_partition, Condition, EdgeAppearance, EnsembleConfig, Graph,
    InnerOptions, OuterOptions, OvercompleteParams,
};

/// Graph family selector, parsed from strings like `grid:3x4`,
/// `complete:9`, or `cycle:4`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GraphSpec {
    Grid(usize, usize),
    Complete(usize),
    Cycle(usize),
}

impl GraphSpec {
    pub fn build(&self) -> trw_core::Result<Graph> {
        match *self {
            GraphSpec::Grid(r, c) => Graph::grid(r, c),
            GraphSpec::Complete(n) => Graph::complete(n),
            GraphSpec::Cycle(n) => Graph::cycle(n),
        }
    }

    pub fn id(&self) -> String {
        match *self {
            GraphSpec::Grid(r, c) => format!("grid:{r}x{c}"),
            GraphSpec::Complete(n) => format!("complete:{n}"),
            GraphSpec::Cycle(n) => format!("cycle:{n}"),
        }
    }

    /// Default trial count: 30 for grids, 10 otherwise.
    pub fn default_trials(&self) -> usize {
        match self {
            GraphSpec::Grid(..) => 30,
            _ => 10,
        }
    }
}

impl std::str::FromStr for GraphSpec {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        let (kind, arg) = s
            .split_once(':')
            .ok_or_else(|| format!("expected kind:size, got '{s}'"))?;
        let parse = |v: &str| v.parse::<usize>().map_err(|e| format!("bad size '{v}': {e}"));
        match kind {
            "grid" => {
                let (r, c) = arg
                    .split_once('x')
                    .ok_or_else(|| format!("grid wants RxC, got '{arg}'"))?;
                Ok(GraphSpec::Grid(parse(r)?, parse(c)?))
            }
            "complete" => Ok(GraphSpec::Complete(parse(arg)?)),
            "cycle" => Ok(GraphSpec::Cycle(parse(arg)?)),
            other => Err(format!("unknown graph kind '{other}'")),
        }
    }
}

/// How the exact log partition function is computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ExactMethod {
    /// Variable elimination when the width cap allows it, else brute force.
    #[default]
    Auto,
    BruteForce,
    Elimination,
}

impl std::str::FromStr for ExactMethod {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "auto" => Ok(ExactMethod::Auto),
            "brute" => Ok(ExactMethod::BruteForce),
            "elimination" => Ok(ExactMethod::Elimination),
            other => Err(format!("unknown exact method '{other}'")),
        }
    }
}

/// Edge appearance probabilities used for the unoptimized bound.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MuMode {
    /// Exact marginals of the uniform spanning tree distribution; always a
    /// certified interior point of the spanning tree polytope.
    #[default]
    MatrixTree,
    /// The constant (N-1)/|E| vector. Membership in the polytope is
    /// graph-dependent (on square grids it sits on the boundary), so the
    /// optimized bound is not forced to dominate this one.
    UniformCount,
}

impl std::str::FromStr for MuMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "matrix-tree" => Ok(MuMode::MatrixTree),
            "uniform-count" => Ok(MuMode::UniformCount),
            other => Err(format!("unknown mu mode '{other}'")),
        }
    }
}

/// Full experiment configuration.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub graph: GraphSpec,
    pub condition: Condition,
    /// Largest edge strength; defaults to 4/sqrt(N).
    pub d_max: Option<f64>,
    /// Number of evenly spaced d values from 0 to d_max.
    pub d_steps: usize,
    pub trials: usize,
    pub seed: u64,
    pub exact_method: ExactMethod,
    pub mu_mode: MuMode,
    /// Fixed model override: a single row is produced for this exact model.
    pub fixed_model: Option<OvercompleteParams>,
    /// Frank-Wolfe gap tolerance for the optimized bound.
    pub fw_gap_tolerance: f64,
    pub max_outer_iterations: usize,
    /// First Armijo trial step. Accepted steps on ensemble models are far
    /// below 1, so starting lower skips stiff near-vertex evaluations.
    pub armijo_initial_step: f64,
    pub mean_field_restarts: usize,
    /// Zero out the wall-time columns for byte-reproducible output.
    pub include_timing: bool,
}

impl ExperimentConfig {
    pub fn new(graph: GraphSpec, condition: Condition) -> Self {
        ExperimentConfig {
            graph,
            condition,
            d_max: None,
            d_steps: 8,
            trials: graph.default_trials(),
            seed: 0,
            exact_method: ExactMethod::Auto,
            mu_mode: MuMode::MatrixTree,
            fixed_model: None,
            fw_gap_tolerance: 1e-4,
            max_outer_iterations: 100,
            armijo_initial_step: 0.5,
            mean_field_restarts: 5,
            include_timing: true,
        }
    }

    pub fn d_values(&self, graph: &Graph) -> Vec<f64> {
        let d_max = self.d_max.unwrap_or(4.0 / (graph.node_count() as f64).sqrt());
        if self.d_steps <= 1 {
            return vec![d_max];
        }
        (0..self.d_steps)
            .map(|i| d_max * i as f64 / (self.d_steps - 1) as f64)
            .collect()
    }
}

/// One experiment row.
#[derive(Debug, Clone)]
pub struct TrialRecord {
    pub graph_id: String,
    pub condition: Condition,
    pub d: f64,
    pub trial: usize,
    pub phi_exact: f64,
    pub bound_unopt: f64,
    pub bound_opt: f64,
    pub mf_lower: f64,
    pub relerr_unopt: f64,
    pub relerr_opt: f64,
    pub relerr_mf: f64,
    pub secs_inner: f64,
    pub secs_outer: f64,
}

/// Mean and standard deviation of the relative errors at one d value.
#[derive(Debug, Clone)]
pub struct SummaryRow {
    pub d: f64,
    pub mean_relerr_unopt: f64,
    pub sd_relerr_unopt: f64,
    pub mean_relerr_opt: f64,
    pub sd_relerr_opt: f64,
    pub mean_relerr_mf: f64,
    pub sd_relerr_mf: f64,
}

#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub records: Vec<TrialRecord>,
    pub summary: Vec<SummaryRow>,
}

/// SplitMix64 step; used to derive independent per-trial seeds from the
/// master seed.
fn derive_seed(master: u64, salt: u64, d_index: u64, trial: u64) -> u64 {
    let mut z = master
        .wrapping_add(salt.wrapping_mul(0x9e3779b97f4a7c15))
        .wrapping_add(d_index.wrapping_mul(0xbf58476d1ce4e5b9))
        .wrapping_add(trial.wrapping_mul(0x94d049bb133111eb));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Feasibility probe run before any trial work: a model with nonzero
/// couplings on every edge exercises the true elimination width (zero
/// tables would be dropped and hide it), and the brute-force path checks
/// the configuration cap directly.
fn check_exact_feasible(graph: &Graph, method: ExactMethod) -> anyhow::Result<()> {
    let mut probe = OvercompleteParams::zeros(graph.clone(), 2);
    for table in probe.edge.iter_mut() {
        table[0] = 1e-9;
    }
    exact_log_partition(&probe, method)
        .map(|_| ())
        .context("exact method is infeasible for this graph")
}

fn exact_log_partition(theta: &OvercompleteParams, method: ExactMethod) -> anyhow::Result<f64> {
    let order: Vec<usize> = (0..theta.graph.node_count()).collect();
    match method {
        ExactMethod::Elimination => Ok(variable_elimination_log_partition(theta, &order)?),
        ExactMethod::BruteForce => Ok(brute_force_log_partition(theta)?.log_partition),
        ExactMethod::Auto => match variable_elimination_log_partition(theta, &order) {
            Ok(v) => Ok(v),
            Err(trw_core::TrwError::TooLarge(_)) => {
                Ok(brute_force_log_partition(theta)?.log_partition)
            }
            Err(e) => Err(e.into()),
        },
    }
}

fn unoptimized_mu(graph: &Graph, mode: MuMode) -> trw_core::Result<EdgeAppearance> {
    match mode {
        MuMode::MatrixTree => uniform_tree_edge_marginals(graph),
        MuMode::UniformCount => Ok(EdgeAppearance::uniform(
            graph,
            (graph.node_count() - 1) as f64 / graph.edge_count() as f64,
        )),
    }
}

fn run_trial(
    cfg: &ExperimentConfig,
    graph: &Graph,
    d: f64,
    d_index: usize,
    trial: usize,
) -> anyhow::Result<TrialRecord> {
    let theta = match &cfg.fixed_model {
        Some(model) => model.clone(),
        None => {
            let ensemble = EnsembleConfig {
                condition: cfg.condition,
                edge_strength: d,
                rng_seed: derive_seed(cfg.seed, 1, d_index as u64, trial as u64),
            };
            to_overcomplete(&sample_ensemble(graph, &ensemble)?)
        }
    };
    let phi_exact = exact_log_partition(&theta, cfg.exact_method)
        .with_context(|| format!("exact method failed at d={d} trial={trial}"))?;

    let mu = unoptimized_mu(graph, cfg.mu_mode)?;
    let inner_started = std::time::Instant::now();
    let unopt = minimize_free_energy(&theta, &mu, &InnerOptions::default())?;
    let secs_inner = inner_started.elapsed().as_secs_f64();
    if !unopt.converged {
        bail!("inner solve did not converge at d={d} trial={trial}");
    }

    let outer_opts = OuterOptions {
        fw_gap_tolerance: cfg.fw_gap_tolerance,
        max_outer_iterations: cfg.max_outer_iterations,
        armijo_initial_step: cfg.armijo_initial_step,
        ..Default::default()
    };
    let outer_started = std::time::Instant::now();
    let opt = optimize_edge_appearance(&theta, &outer_opts)?;
    let secs_outer = outer_started.elapsed().as_secs_f64();

    let mf = naive_mean_field_lower_bound(
        &theta,
        cfg.mean_field_restarts,
        derive_seed(cfg.seed, 2, d_index as u64, trial as u64),
    )?;

    let record = TrialRecord {
        graph_id: cfg.graph.id(),
        condition: cfg.condition,
        d,
        trial,
        phi_exact,
        bound_unopt: unopt.bound,
        bound_opt: opt.bound,
        mf_lower: mf.lower_bound,
        relerr_unopt: (unopt.bound - phi_exact) / phi_exact,
        relerr_opt: (opt.bound - phi_exact) / phi_exact,
        relerr_mf: (mf.lower_bound - phi_exact) / phi_exact,
        secs_inner: if cfg.include_timing { secs_inner } else { 0.0 },
        secs_outer: if cfg.include_timing { secs_outer } else { 0.0 },
    };

    // Row invariants; violations are reported, never silently emitted.
    if record.bound_unopt < phi_exact - 1e-8 || record.bound_opt < phi_exact - 1e-8 {
        bail!("upper bound fell below the exact value at d={d} trial={trial}");
    }
    if record.mf_lower > phi_exact + 1e-9 {
        bail!("mean-field bound exceeded the exact value at d={d} trial={trial}");
    }
    // The optimized run starts from the matrix-tree point, so dominance over
    // the unoptimized bound is only guaranteed in that mode.
    if cfg.mu_mode == MuMode::MatrixTree && record.bound_opt > record.bound_unopt + 1e-8 {
        bail!("optimized bound exceeded the unoptimized bound at d={d} trial={trial}");
    }
    Ok(record)
}

/// Runs all trials of the experiment (in parallel over a worker pool) and
/// computes the per-d summary. Row order is deterministic: (d index, trial).
pub fn run_experiment(cfg: &ExperimentConfig) -> anyhow::Result<ExperimentOutcome> {
    let graph = cfg.graph.build()?;
    if let Some(model) = &cfg.fixed_model {
        if model.graph.edges() != graph.edges() || model.graph.node_count() != graph.node_count()
        {
            bail!("fixed model graph does not match the configured graph");
        }
    }
    if cfg.trials < 1 {
        bail!("trials must be >= 1");
    }
    check_exact_feasible(&graph, cfg.exact_method)?;

    let jobs: Vec<(usize, f64, usize)> = if cfg.fixed_model.is_some() {
        vec![(0, 0.0, 0)]
    } else {
        let d_values = cfg.d_values(&graph);
        d_values
            .iter()
            .enumerate()
            .flat_map(|(i, &d)| (0..cfg.trials).map(move |t| (i, d, t)))
            .collect()
    };

    let records: Vec<TrialRecord> = jobs
        .par_iter()
        .map(|&(d_index, d, trial)| run_trial(cfg, &graph, d, d_index, trial))
        .collect::<anyhow::Result<_>>()?;

    let mut summary = Vec::new();
    let mut index = 0;
    while index < records.len() {
        let d = records[index].d;
        let group: Vec<&TrialRecord> = records[index..]
            .iter()
            .take_while(|r| r.d == d)
            .collect();
        let stats = |get: &dyn Fn(&TrialRecord) -> f64| -> (f64, f64) {
            let n = group.len() as f64;
            let mean = group.iter().map(|r| get(r)).sum::<f64>() / n;
            let var = if group.len() > 1 {
                group.iter().map(|r| (get(r) - mean).powi(2)).sum::<f64>() / (n - 1.0)
            } else {
                0.0
            };
            (mean, var.sqrt())
        };
        let (mean_relerr_unopt, sd_relerr_unopt) = stats(&|r| r.relerr_unopt);
        let (mean_relerr_opt, sd_relerr_opt) = stats(&|r| r.relerr_opt);
        let (mean_relerr_mf, sd_relerr_mf) = stats(&|r| r.relerr_mf);
        summary.push(SummaryRow {
            d,
            mean_relerr_unopt,
            sd_relerr_unopt,
            mean_relerr_opt,
            sd_relerr_opt,
            mean_relerr_mf,
            sd_relerr_mf,
        });
        index += group.len();
    }
    Ok(ExperimentOutcome { records, summary })
}

pub const CSV_HEADER: &str = "graph,condition,d,trial,phi_exact,bound_unopt,bound_opt,mf_lower,relerr_unopt,relerr_opt,relerr_mf,secs_inner,secs_outer";

fn condition_str(c: Condition) -> &'static str {
    match c {
        Condition::Attractive => "attractive",
        Condition::Mixed => "mixed",
    }
}

/// Renders records in the fixed CSV schema. Numeric cells use the shortest
/// round-trip float representation, so identical results give identical
/// bytes.
pub fn records_to_csv(records: &[TrialRecord]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in records {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{:.3},{:.3}\n",
            r.graph_id,
            condition_str(r.condition),
            r.d,
            r.trial,
            r.phi_exact,
            r.bound_unopt,
            r.bound_opt,
            r.mf_lower,
            r.relerr_unopt,
            r.relerr_opt,
            r.relerr_mf,
            r.secs_inner,
            r.secs_outer
        ));
    }
    out
}

/// Human-readable summary table: mean +/- standard deviation per d.
pub fn summary_to_string(summary: &[SummaryRow]) -> String {
    let mut out = String::from(
        "       d | relerr_unopt (mean +/- sd) | relerr_opt (mean +/- sd) | relerr_mf (mean +/- sd)\n",
    );
    for s in summary {
        out.push_str(&format!(
            "{:8.4} | {:>12.6} +/- {:<9.6} | {:>10.6} +/- {:<9.6} | {:>10.6} +/- {:<9.6}\n",
            s.d,
            s.mean_relerr_unopt,
            s.sd_relerr_unopt,
            s.mean_relerr_opt,
            s.sd_relerr_opt,
            s.mean_relerr_mf,
            s.sd_relerr_mf
        ));
    }
    out
}
