//! Command-line front door: per-model bounds, exact inference, the
//! mean-field baseline, spanning tree counts, and ensemble experiments.

use std::path::PathBuf;

use anyhow::Context;
use clap::{Parser, Subcommand};
use trw_cli::{
    records_to_csv, run_experiment, summary_to_string, ExactMethod, ExperimentConfig, GraphSpec,
    MuMode,
};
use trw_core::{
    brute_force_log_partition, count_spanning_trees, minimize_free_energy,
    naive_mean_field_lower_bound, optimize_edge_appearance, parse_model,
    uniform_tree_edge_marginals, variable_elimination_log_partition, Condition, EdgeAppearance,
    InnerOptions, OuterOptions, OuterSolution, OvercompleteParams,
};

#[derive(Parser)]
#[command(name = "trw", version, about = "Tree-reweighted upper bounds on log partition functions")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum BoundMode {
    Unoptimized,
    Optimized,
}

impl std::str::FromStr for BoundMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "unoptimized" => Ok(BoundMode::Unoptimized),
            "optimized" => Ok(BoundMode::Optimized),
            other => Err(format!("unknown mode '{other}'")),
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Compute an upper bound on the log partition function of a model file.
    Bound {
        /// Model file in the JSON model format.
        #[arg(long)]
        model: PathBuf,
        /// unoptimized (fixed edge appearances) or optimized (conditional gradient).
        #[arg(long, default_value = "optimized")]
        mode: BoundMode,
        /// Edge appearances for the unoptimized bound: matrix-tree | uniform-count.
        #[arg(long, default_value = "matrix-tree")]
        mu: MuMode,
        /// Convergence tolerance (KKT residual; also the Frank-Wolfe gap when optimizing).
        #[arg(long, default_value_t = 1e-6)]
        tol: f64,
        /// Cap on conditional-gradient iterations.
        #[arg(long, default_value_t = 2000)]
        max_outer: usize,
        /// Write the result as JSON.
        #[arg(long)]
        json: Option<PathBuf>,
        /// Write per-iteration history CSV (optimized mode).
        #[arg(long)]
        history: Option<PathBuf>,
        /// Dump the optimizing pseudomarginals as JSON.
        #[arg(long)]
        dump_pseudomarginals: Option<PathBuf>,
    },
    /// Exact log partition function of a model file.
    Exact {
        #[arg(long)]
        model: PathBuf,
        /// auto | brute | elimination
        #[arg(long, default_value = "auto")]
        exact_method: ExactMethod,
    },
    /// Naive mean-field lower bound of a model file.
    Meanfield {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value_t = 5)]
        restarts: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Spanning tree count of a graph (matrix-tree theorem).
    Treecount {
        /// grid:RxC | complete:N | cycle:N
        #[arg(long)]
        graph: GraphSpec,
    },
    /// Ensemble experiment: random models over an edge-strength grid.
    Experiment {
        #[arg(long)]
        graph: GraphSpec,
        /// attractive | mixed
        #[arg(long, default_value = "attractive")]
        condition: Condition,
        /// Largest edge strength (default 4/sqrt(N)).
        #[arg(long)]
        d_max: Option<f64>,
        #[arg(long, default_value_t = 8)]
        d_steps: usize,
        /// Trials per d value (default: 30 for grids, 10 otherwise).
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Edge appearances for the unoptimized bound.
        #[arg(long, default_value = "matrix-tree")]
        mu: MuMode,
        #[arg(long, default_value = "auto")]
        exact_method: ExactMethod,
        /// Frank-Wolfe gap tolerance for the optimized bound.
        #[arg(long, default_value_t = 1e-4)]
        tol: f64,
        /// Fixed model override: run exactly one row on this model.
        #[arg(long)]
        model: Option<PathBuf>,
        /// Output CSV path (stdout when omitted).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Zero the wall-time columns for byte-reproducible CSVs.
        #[arg(long, default_value_t = false)]
        no_timing: bool,
    },
}

fn load_model(path: &PathBuf) -> anyhow::Result<OvercompleteParams> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading model file {}", path.display()))?;
    let model = parse_model(&text)
        .with_context(|| format!("parsing model file {}", path.display()))?;
    Ok(model.into_overcomplete())
}

fn mu_for_mode(theta: &OvercompleteParams, mode: MuMode) -> anyhow::Result<EdgeAppearance> {
    Ok(match mode {
        MuMode::MatrixTree => uniform_tree_edge_marginals(&theta.graph)?,
        MuMode::UniformCount => EdgeAppearance::uniform(
            &theta.graph,
            (theta.graph.node_count() - 1) as f64 / theta.graph.edge_count() as f64,
        ),
    })
}

fn write_history(path: &PathBuf, sol: &OuterSolution) -> anyhow::Result<()> {
    let mut out = String::from("iteration,bound,fw_gap,step,tree\n");
    for rec in &sol.history {
        let tree: Vec<String> = rec.tree.edge_indices().iter().map(|e| e.to_string()).collect();
        out.push_str(&format!(
            "{},{},{},{},\"{}\"\n",
            rec.iteration,
            rec.bound,
            rec.fw_gap,
            rec.step,
            tree.join(" ")
        ));
    }
    std::fs::write(path, out).with_context(|| format!("writing {}", path.display()))
}

fn dump_pseudomarginals(path: &PathBuf, t: &trw_core::Pseudomarginals) -> anyhow::Result<()> {
    let edge_nested: Vec<Vec<Vec<f64>>> = t
        .edge
        .iter()
        .map(|table| (0..t.m).map(|j| table[j * t.m..(j + 1) * t.m].to_vec()).collect())
        .collect();
    let value = serde_json::json!({
        "node_marginals": t.node,
        "edge_marginals": edge_nested,
    });
    std::fs::write(path, serde_json::to_string_pretty(&value)?)
        .with_context(|| format!("writing {}", path.display()))
}

fn format_mu(mu: &EdgeAppearance) -> String {
    let parts: Vec<String> = mu.0.iter().map(|v| format!("{v:.6}")).collect();
    format!("[{}]", parts.join(", "))
}

#[allow(clippy::too_many_arguments)]
fn cmd_bound(
    model: PathBuf,
    mode: BoundMode,
    mu_mode: MuMode,
    tol: f64,
    max_outer: usize,
    json: Option<PathBuf>,
    history: Option<PathBuf>,
    dump: Option<PathBuf>,
) -> anyhow::Result<i32> {
    let theta = load_model(&model)?;
    let inner_opts = InnerOptions { kkt_tolerance: tol.min(1e-8), ..Default::default() };
    match mode {
        BoundMode::Unoptimized => {
            let mu = mu_for_mode(&theta, mu_mode)?;
            let sol = minimize_free_energy(&theta, &mu, &inner_opts)?;
            println!("bound          {:.9}", sol.bound);
            println!("mu             {}", format_mu(&mu));
            println!("kkt_residual   {:.3e}", sol.kkt_residual);
            println!("iterations     {}", sol.iterations);
            println!("converged      {}", sol.converged);
            if let Some(path) = &json {
                let value = serde_json::json!({
                    "mode": "unoptimized",
                    "bound": sol.bound,
                    "mu": mu.0,
                    "kkt_residual": sol.kkt_residual,
                    "iterations": sol.iterations,
                    "converged": sol.converged,
                });
                std::fs::write(path, serde_json::to_string_pretty(&value)?)?;
            }
            if let Some(path) = &dump {
                dump_pseudomarginals(path, &sol.t_hat)?;
            }
            Ok(if sol.converged { 0 } else { 2 })
        }
        BoundMode::Optimized => {
            let opts = OuterOptions {
                fw_gap_tolerance: tol,
                max_outer_iterations: max_outer,
                ..Default::default()
            };
            let sol = optimize_edge_appearance(&theta, &opts)?;
            println!("bound          {:.9}", sol.bound);
            println!("mu             {}", format_mu(&sol.mu_hat));
            println!("fw_gap         {:.3e}", sol.fw_gap);
            println!("kkt_residual   {:.3e}", sol.inner.kkt_residual);
            println!("iterations     {}", sol.history.len());
            println!("witness_trees  {}", sol.witness.support_len());
            println!("converged      {}", sol.converged);
            if let Some(path) = &json {
                let value = serde_json::json!({
                    "mode": "optimized",
                    "bound": sol.bound,
                    "mu": sol.mu_hat.0,
                    "fw_gap": sol.fw_gap,
                    "kkt_residual": sol.inner.kkt_residual,
                    "iterations": sol.history.len(),
                    "converged": sol.converged,
                });
                std::fs::write(path, serde_json::to_string_pretty(&value)?)?;
            }
            if let Some(path) = &history {
                write_history(path, &sol)?;
            }
            if let Some(path) = &dump {
                dump_pseudomarginals(path, &sol.inner.t_hat)?;
            }
            Ok(if sol.converged { 0 } else { 2 })
        }
    }
}

fn cmd_experiment(args: ExperimentArgs) -> anyhow::Result<i32> {
    let mut cfg = ExperimentConfig::new(args.graph, args.condition);
    cfg.d_max = args.d_max;
    cfg.d_steps = args.d_steps;
    cfg.trials = args.trials.unwrap_or_else(|| args.graph.default_trials());
    cfg.seed = args.seed;
    cfg.mu_mode = args.mu;
    cfg.exact_method = args.exact_method;
    cfg.fw_gap_tolerance = args.tol;
    cfg.include_timing = !args.no_timing;
    if let Some(path) = &args.model {
        cfg.fixed_model = Some(load_model(path)?);
    }
    let outcome = run_experiment(&cfg)?;
    let csv = records_to_csv(&outcome.records);
    match &args.out {
        Some(path) => std::fs::write(path, &csv)
            .with_context(|| format!("writing {}", path.display()))?,
        None => print!("{csv}"),
    }
    eprint!("{}", summary_to_string(&outcome.summary));
    Ok(0)
}

struct ExperimentArgs {
    graph: GraphSpec,
    condition: Condition,
    d_max: Option<f64>,
    d_steps: usize,
    trials: Option<usize>,
    seed: u64,
    mu: MuMode,
    exact_method: ExactMethod,
    tol: f64,
    model: Option<PathBuf>,
    out: Option<PathBuf>,
    no_timing: bool,
}

fn main() -> anyhow::Result<()> {
    let cli = Cli::parse();
    let code = match cli.command {
        Command::Bound { model, mode, mu, tol, max_outer, json, history, dump_pseudomarginals } => {
            cmd_bound(model, mode, mu, tol, max_outer, json, history, dump_pseudomarginals)?
        }
        Command::Exact { model, exact_method } => {
            let theta = load_model(&model)?;
            let phi = match exact_method {
                ExactMethod::BruteForce => brute_force_log_partition(&theta)?.log_partition,
                _ => {
                    let order: Vec<usize> = (0..theta.graph.node_count()).collect();
                    match variable_elimination_log_partition(&theta, &order) {
                        Ok(v) => v,
                        Err(trw_core::TrwError::TooLarge(_))
                            if exact_method == ExactMethod::Auto =>
                        {
                            brute_force_log_partition(&theta)?.log_partition
                        }
                        Err(e) => return Err(e.into()),
                    }
                }
            };
            println!("log_partition  {phi:.9}");
            0
        }
        Command::Meanfield { model, restarts, seed } => {
            let theta = load_model(&model)?;
            let r = naive_mean_field_lower_bound(&theta, restarts, seed)?;
            println!("lower_bound    {:.9}", r.lower_bound);
            println!("restarts_used  {}", r.restarts_used);
            println!("best_restart   {}", r.best_restart_index);
            0
        }
        Command::Treecount { graph } => {
            let g = graph.build()?;
            let log_count = count_spanning_trees(&g)?;
            println!("log_count      {log_count:.9}");
            if log_count < (1u64 << 53) as f64 {
                let count = log_count.exp();
                if count < 9e15 {
                    println!("count          {}", count.round() as u64);
                } else {
                    println!("count          {count:.6e}");
                }
            }
            0
        }
        Command::Experiment {
            graph,
            condition,
            d_max,
            d_steps,
            trials,
            seed,
            mu,
            exact_method,
            tol,
            model,
            out,
            no_timing,
        } => cmd_experiment(ExperimentArgs {
            graph,
            condition,
            d_max,
            d_steps,
            trials,
            seed,
            mu,
            exact_method,
            tol,
            model,
            out,
            no_timing,
        })?,
    };
    std::process::exit(code);
}
