//! Optimal upper bounds on the log partition function of discrete pairwise
//! Markov random fields, by minimizing a tree-reweighted convex free energy
//! over locally consistent pseudomarginals and optimizing edge appearance
//! probabilities over the spanning tree polytope with a conditional-gradient
//! method whose linear oracle is a maximum-weight spanning tree.

pub mod error;
pub mod exact;
pub mod graph;
pub mod inner;
pub mod meanfield;
pub mod model;
pub mod outer;
pub mod pseudo;
pub mod testutil;

pub use error::{Result, TrwError};
pub use exact::{
    brute_force_log_partition, moment_check, tree_log_partition,
    variable_elimination_log_partition, ExactResult, ParamIndex,
};
pub use graph::{
    count_spanning_trees, enumerate_spanning_trees, max_weight_spanning_tree,
    uniform_tree_edge_marginals, EdgeAppearance, EdgeWeights, Graph, SpanningTree,
};
pub use inner::{
    minimize_free_energy, minimize_free_energy_with, recover_tree_params, ConstraintSystem,
    InnerInit, InnerOptions, InnerSolution,
};
pub use meanfield::{naive_mean_field_lower_bound, MeanFieldResult};
pub use model::{
    minimal_to_json, model_to_json, parse_model, sample_ensemble, to_overcomplete, Coding,
    Condition, EnsembleConfig, LoadedModel, MinimalIsingParams, OvercompleteParams,
};
pub use outer::{
    armijo_step, mwst_direction, optimize_edge_appearance, MixtureWitness, OuterIteration,
    OuterOptions, OuterSolution, StepOutcome,
};
pub use pseudo::{
    edge_mutual_information, edge_mutual_informations, free_energy, free_energy_gradient,
    jensen_bound, node_entropy, tree_distribution_eval, tree_negative_entropy, tree_project,
    validate_local_consistency, ConsistencyReport, Pseudomarginals, TreeMixture, TreeParams,
    TreeProjection,
};
