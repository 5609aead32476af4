//! Pairwise discrete MRFs: minimal Ising form, overcomplete indicator form,
//! random ensembles, and the JSON model file format.

use rand_core::{RngCore, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::error::{Result, TrwError};
use crate::graph::Graph;

/// Variable coding of the minimal Ising representation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Coding {
    /// x_s in {0,1}
    #[serde(rename = "zero_one")]
    ZeroOne,
    /// x_s in {-1,+1}; table index 0 maps to -1, index 1 to +1.
    #[serde(rename = "spin")]
    Spin,
}

/// Minimal Ising parameters: one real per node and per edge.
#[derive(Debug, Clone)]
pub struct MinimalIsingParams {
    pub graph: Graph,
    pub node_params: Vec<f64>,
    pub edge_params: Vec<f64>,
    pub coding: Coding,
}

impl MinimalIsingParams {
    pub fn new(
        graph: Graph,
        node_params: Vec<f64>,
        edge_params: Vec<f64>,
        coding: Coding,
    ) -> Result<Self> {
        if node_params.len() != graph.node_count() || edge_params.len() != graph.edge_count() {
            return Err(TrwError::ShapeMismatch(format!(
                "expected {} node and {} edge parameters, got {} and {}",
                graph.node_count(),
                graph.edge_count(),
                node_params.len(),
                edge_params.len()
            )));
        }
        if node_params.iter().chain(edge_params.iter()).any(|v| !v.is_finite()) {
            return Err(TrwError::InvalidTable("non-finite parameter".into()));
        }
        Ok(MinimalIsingParams { graph, node_params, edge_params, coding })
    }

    /// Log-score of a binary configuration (table states 0/1) in minimal form.
    pub fn log_score(&self, x: &[usize]) -> Result<f64> {
        let val = |state: usize| -> f64 {
            match self.coding {
                Coding::ZeroOne => state as f64,
                Coding::Spin => 2.0 * state as f64 - 1.0,
            }
        };
        if x.len() != self.graph.node_count() {
            return Err(TrwError::ShapeMismatch("configuration length".into()));
        }
        for (s, &xs) in x.iter().enumerate() {
            if xs > 1 {
                return Err(TrwError::InvalidConfiguration { node: s, state: xs, m: 2 });
            }
        }
        let mut score = 0.0;
        for (s, &theta) in self.node_params.iter().enumerate() {
            score += theta * val(x[s]);
        }
        for (e, &theta) in self.edge_params.iter().enumerate() {
            let (s, t) = self.graph.edge(e);
            score += theta * val(x[s]) * val(x[t]);
        }
        Ok(score)
    }
}

/// Overcomplete indicator parameters: a table theta_{s;j} per node and a
/// table theta_{st;jk} per edge, all nodes sharing the same state count m.
///
/// Edge tables are stored flat in row-major order: entry (j,k) is at
/// `j * m + k`, with j indexing the first endpoint of the stored edge.
#[derive(Debug, Clone)]
pub struct OvercompleteParams {
    pub graph: Graph,
    pub m: usize,
    pub node: Vec<Vec<f64>>,
    pub edge: Vec<Vec<f64>>,
}

impl OvercompleteParams {
    pub fn new(graph: Graph, m: usize, node: Vec<Vec<f64>>, edge: Vec<Vec<f64>>) -> Result<Self> {
        if m == 0 {
            return Err(TrwError::InvalidTable("state count m must be positive".into()));
        }
        if node.len() != graph.node_count() || edge.len() != graph.edge_count() {
            return Err(TrwError::ShapeMismatch(format!(
                "expected {} node and {} edge tables, got {} and {}",
                graph.node_count(),
                graph.edge_count(),
                node.len(),
                edge.len()
            )));
        }
        if node.iter().any(|t| t.len() != m) || edge.iter().any(|t| t.len() != m * m) {
            return Err(TrwError::ShapeMismatch("table shape does not match m".into()));
        }
        if node.iter().chain(edge.iter()).flatten().any(|v| !v.is_finite()) {
            return Err(TrwError::InvalidTable("non-finite parameter".into()));
        }
        Ok(OvercompleteParams { graph, m, node, edge })
    }

    /// All-zero parameters.
    pub fn zeros(graph: Graph, m: usize) -> Self {
        let node = vec![vec![0.0; m]; graph.node_count()];
        let edge = vec![vec![0.0; m * m]; graph.edge_count()];
        OvercompleteParams { graph, m, node, edge }
    }

    /// Sum over nodes of theta_{s;x_s} plus sum over edges of theta_{st;x_s x_t}.
    pub fn log_score(&self, x: &[usize]) -> Result<f64> {
        if x.len() != self.graph.node_count() {
            return Err(TrwError::ShapeMismatch("configuration length".into()));
        }
        for (s, &xs) in x.iter().enumerate() {
            if xs >= self.m {
                return Err(TrwError::InvalidConfiguration { node: s, state: xs, m: self.m });
            }
        }
        let mut score = 0.0;
        for (s, table) in self.node.iter().enumerate() {
            score += table[x[s]];
        }
        for (e, table) in self.edge.iter().enumerate() {
            let (s, t) = self.graph.edge(e);
            score += table[x[s] * self.m + x[t]];
        }
        Ok(score)
    }
}

/// Converts minimal Ising parameters into the overcomplete indicator form.
///
/// The conversion is exact: for every configuration x the overcomplete
/// log-score equals the minimal log-score with no added constant.
pub fn to_overcomplete(p: &MinimalIsingParams) -> OvercompleteParams {
    let m = 2;
    let mut node = Vec::with_capacity(p.graph.node_count());
    let mut edge = Vec::with_capacity(p.graph.edge_count());
    match p.coding {
        Coding::ZeroOne => {
            for &theta in &p.node_params {
                node.push(vec![0.0, theta]);
            }
            for &theta in &p.edge_params {
                edge.push(vec![0.0, 0.0, 0.0, theta]);
            }
        }
        Coding::Spin => {
            for &theta in &p.node_params {
                node.push(vec![-theta, theta]);
            }
            for &theta in &p.edge_params {
                edge.push(vec![theta, -theta, -theta, theta]);
            }
        }
    }
    OvercompleteParams { graph: p.graph.clone(), m, node, edge }
}

/// Ensemble condition for random edge couplings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Condition {
    /// theta_st ~ U[0, d]
    #[serde(rename = "attractive")]
    Attractive,
    /// theta_st ~ U[-d, d]
    #[serde(rename = "mixed")]
    Mixed,
}

impl std::str::FromStr for Condition {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "attractive" => Ok(Condition::Attractive),
            "mixed" => Ok(Condition::Mixed),
            other => Err(format!("unknown condition '{other}'")),
        }
    }
}

/// Configuration for random spin ensembles.
#[derive(Debug, Clone, Copy)]
pub struct EnsembleConfig {
    pub condition: Condition,
    pub edge_strength: f64,
    pub rng_seed: u64,
}

/// Draws a random spin model: zero node parameters, i.i.d. uniform edge
/// couplings per the condition.
///
/// The generator is pinned for cross-platform reproducibility: ChaCha20
/// seeded with `seed_from_u64(rng_seed)`, uniform doubles built from the top
/// 53 bits of each `next_u64` output.
pub fn sample_ensemble(graph: &Graph, cfg: &EnsembleConfig) -> Result<MinimalIsingParams> {
    if !cfg.edge_strength.is_finite() || cfg.edge_strength < 0.0 {
        return Err(TrwError::InvalidTable("edge strength must be finite and >= 0".into()));
    }
    let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(cfg.rng_seed);
    let d = cfg.edge_strength;
    let edge_params = (0..graph.edge_count())
        .map(|_| {
            let u = unit_uniform(&mut rng);
            match cfg.condition {
                Condition::Attractive => d * u,
                Condition::Mixed => d * (2.0 * u - 1.0),
            }
        })
        .collect();
    MinimalIsingParams::new(
        graph.clone(),
        vec![0.0; graph.node_count()],
        edge_params,
        Coding::Spin,
    )
}

/// Uniform double in [0,1) from the top 53 bits of a u64.
pub fn unit_uniform<R: RngCore>(rng: &mut R) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    m: usize,
    coding: Coding,
    nodes: usize,
    edges: Vec<(usize, usize)>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    minimal: bool,
    theta_node: serde_json::Value,
    theta_edge: serde_json::Value,
}

/// A model loaded from the JSON file format, in whichever form it was written.
#[derive(Debug, Clone)]
pub enum LoadedModel {
    Minimal(MinimalIsingParams),
    Overcomplete(OvercompleteParams),
}

impl LoadedModel {
    pub fn into_overcomplete(self) -> OvercompleteParams {
        match self {
            LoadedModel::Minimal(p) => to_overcomplete(&p),
            LoadedModel::Overcomplete(p) => p,
        }
    }
}

/// Parses the JSON model format.
///
/// Overcomplete form: `theta_node` is a per-node list of m reals and
/// `theta_edge` a per-edge m x m nested array. With `"minimal": true`, both
/// hold one scalar per node/edge and `m` must be 2.
pub fn parse_model(json: &str) -> Result<LoadedModel> {
    let file: ModelFile =
        serde_json::from_str(json).map_err(|e| TrwError::ModelFile(e.to_string()))?;
    let graph = Graph::custom(file.nodes, file.edges)?;
    if file.minimal {
        if file.m != 2 {
            return Err(TrwError::ModelFile("minimal form requires m = 2".into()));
        }
        let node_params: Vec<f64> = serde_json::from_value(file.theta_node)
            .map_err(|e| TrwError::ModelFile(format!("theta_node: {e}")))?;
        let edge_params: Vec<f64> = serde_json::from_value(file.theta_edge)
            .map_err(|e| TrwError::ModelFile(format!("theta_edge: {e}")))?;
        Ok(LoadedModel::Minimal(MinimalIsingParams::new(
            graph,
            node_params,
            edge_params,
            file.coding,
        )?))
    } else {
        let node: Vec<Vec<f64>> = serde_json::from_value(file.theta_node)
            .map_err(|e| TrwError::ModelFile(format!("theta_node: {e}")))?;
        let nested: Vec<Vec<Vec<f64>>> = serde_json::from_value(file.theta_edge)
            .map_err(|e| TrwError::ModelFile(format!("theta_edge: {e}")))?;
        let mut edge = Vec::with_capacity(nested.len());
        for (i, rows) in nested.iter().enumerate() {
            if rows.len() != file.m || rows.iter().any(|r| r.len() != file.m) {
                return Err(TrwError::ModelFile(format!(
                    "theta_edge[{i}] is not an {m} x {m} table",
                    m = file.m
                )));
            }
            edge.push(rows.iter().flatten().copied().collect());
        }
        Ok(LoadedModel::Overcomplete(OvercompleteParams::new(graph, file.m, node, edge)?))
    }
}

/// Serializes overcomplete parameters to the JSON model format.
pub fn model_to_json(p: &OvercompleteParams) -> String {
    let coding = Coding::ZeroOne; // table form carries no coding; field is fixed by the format
    let theta_edge: Vec<Vec<Vec<f64>>> = p
        .edge
        .iter()
        .map(|t| (0..p.m).map(|j| t[j * p.m..(j + 1) * p.m].to_vec()).collect())
        .collect();
    let file = ModelFile {
        m: p.m,
        coding,
        nodes: p.graph.node_count(),
        edges: p.graph.edges().to_vec(),
        minimal: false,
        theta_node: serde_json::to_value(&p.node).expect("serializable"),
        theta_edge: serde_json::to_value(&theta_edge).expect("serializable"),
    };
    serde_json::to_string_pretty(&file).expect("serializable")
}

/// Serializes minimal Ising parameters to the JSON model format.
pub fn minimal_to_json(p: &MinimalIsingParams) -> String {
    let file = ModelFile {
        m: 2,
        coding: p.coding,
        nodes: p.graph.node_count(),
        edges: p.graph.edges().to_vec(),
        minimal: true,
        theta_node: serde_json::to_value(&p.node_params).expect("serializable"),
        theta_edge: serde_json::to_value(&p.edge_params).expect("serializable"),
    };
    serde_json::to_string_pretty(&file).expect("serializable")
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn cycle4_model(weights: [f64; 4], coding: Coding) -> MinimalIsingParams {
        MinimalIsingParams::new(
            Graph::cycle(4).unwrap(),
            vec![0.0; 4],
            weights.to_vec(),
            coding,
        )
        .unwrap()
    }

    #[test]
    fn zero_params_map_to_zero_tables() {
        let p = cycle4_model([0.0; 4], Coding::ZeroOne);
        let oc = to_overcomplete(&p);
        assert!(oc.node.iter().flatten().all(|&v| v == 0.0));
        assert!(oc.edge.iter().flatten().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_one_unit_weights_give_indicator_at_11() {
        let p = cycle4_model([1.0; 4], Coding::ZeroOne);
        let oc = to_overcomplete(&p);
        for t in &oc.edge {
            assert_eq!(t.as_slice(), &[0.0, 0.0, 0.0, 1.0]);
        }
    }

    #[test]
    fn spin_single_edge_table() {
        let g = Graph::custom(2, vec![(0, 1)]).unwrap();
        let c = 0.7;
        let p = MinimalIsingParams::new(g, vec![0.0, 0.0], vec![c], Coding::Spin).unwrap();
        let oc = to_overcomplete(&p);
        assert_eq!(oc.edge[0].as_slice(), &[c, -c, -c, c]);
        for x in [[0, 0], [0, 1], [1, 0], [1, 1]] {
            assert_relative_eq!(
                p.log_score(&x).unwrap(),
                oc.log_score(&x).unwrap(),
                epsilon = 1e-15
            );
        }
    }

    #[test]
    fn representation_equivalence_on_random_models() {
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(7);
        for trial in 0..1000 {
            let coding = if trial % 2 == 0 { Coding::ZeroOne } else { Coding::Spin };
            let g = Graph::complete(4).unwrap();
            let node: Vec<f64> = (0..4).map(|_| 4.0 * unit_uniform(&mut rng) - 2.0).collect();
            let edge: Vec<f64> = (0..6).map(|_| 4.0 * unit_uniform(&mut rng) - 2.0).collect();
            let p = MinimalIsingParams::new(g, node, edge, coding).unwrap();
            let oc = to_overcomplete(&p);
            let x: Vec<usize> = (0..4).map(|_| (unit_uniform(&mut rng) < 0.5) as usize).collect();
            let a = p.log_score(&x).unwrap();
            let b = oc.log_score(&x).unwrap();
            assert!((a - b).abs() <= 1e-12, "minimal {a} vs overcomplete {b}");
        }
    }

    #[test]
    fn ensemble_degenerate_interval_gives_zeros() {
        let g = Graph::grid(2, 3).unwrap();
        let cfg = EnsembleConfig { condition: Condition::Mixed, edge_strength: 0.0, rng_seed: 1 };
        let p = sample_ensemble(&g, &cfg).unwrap();
        assert!(p.edge_params.iter().all(|&v| v == 0.0));
        assert!(p.node_params.iter().all(|&v| v == 0.0));
        assert_eq!(p.coding, Coding::Spin);
    }

    #[test]
    fn ensemble_ranges_and_determinism() {
        let g = Graph::complete(5).unwrap();
        let cfg =
            EnsembleConfig { condition: Condition::Attractive, edge_strength: 1.0, rng_seed: 42 };
        let a = sample_ensemble(&g, &cfg).unwrap();
        assert!(a.edge_params.iter().all(|&v| (0.0..1.0).contains(&v)));
        let cfg2 = EnsembleConfig { condition: Condition::Mixed, ..cfg };
        let b1 = sample_ensemble(&g, &cfg2).unwrap();
        let b2 = sample_ensemble(&g, &cfg2).unwrap();
        assert_eq!(b1.edge_params, b2.edge_params);
        assert!(b1.edge_params.iter().all(|&v| (-1.0..1.0).contains(&v)));
    }

    #[test]
    fn ensemble_statistics_match_uniform_law() {
        // 10^4 draws on a single edge; mean within 3 standard errors.
        let g = Graph::custom(2, vec![(0, 1)]).unwrap();
        let n = 10_000usize;
        for (condition, d, mean, half_width) in [
            (Condition::Attractive, 2.0, 1.0, 1.0),
            (Condition::Mixed, 2.0, 0.0, 2.0),
        ] {
            let mut sum = 0.0;
            for seed in 0..n as u64 {
                let cfg =
                    EnsembleConfig { condition, edge_strength: d, rng_seed: 1000 + seed };
                let p = sample_ensemble(&g, &cfg).unwrap();
                let v = p.edge_params[0];
                assert!(v >= mean - half_width && v <= mean + half_width);
                sum += v;
            }
            let sd = half_width / 3.0_f64.sqrt(); // U[a,b] sd = (b-a)/sqrt(12)
            let se = sd / (n as f64).sqrt();
            assert!(
                (sum / n as f64 - mean).abs() <= 3.0 * se,
                "empirical mean {} vs {mean} (se {se})",
                sum / n as f64
            );
        }
    }

    #[test]
    fn log_score_examples() {
        let zero = OvercompleteParams::zeros(Graph::cycle(4).unwrap(), 2);
        assert_eq!(zero.log_score(&[0, 1, 1, 0]).unwrap(), 0.0);

        let unit = to_overcomplete(&cycle4_model([1.0; 4], Coding::ZeroOne));
        assert_relative_eq!(unit.log_score(&[1, 1, 1, 1]).unwrap(), 4.0, epsilon = 1e-15);

        let skewed = to_overcomplete(&cycle4_model([1.0, 1.0, 1.0, 3.0], Coding::ZeroOne));
        assert_relative_eq!(skewed.log_score(&[1, 0, 0, 1]).unwrap(), 3.0, epsilon = 1e-15);
    }

    #[test]
    fn log_score_rejects_out_of_range_state() {
        let p = OvercompleteParams::zeros(Graph::cycle(4).unwrap(), 2);
        assert!(matches!(
            p.log_score(&[0, 2, 0, 0]),
            Err(TrwError::InvalidConfiguration { node: 1, state: 2, m: 2 })
        ));
    }

    #[test]
    fn model_json_round_trip() {
        let p = to_overcomplete(&cycle4_model([1.0, 1.0, 1.0, 3.0], Coding::ZeroOne));
        let json = model_to_json(&p);
        let back = match parse_model(&json).unwrap() {
            LoadedModel::Overcomplete(p) => p,
            _ => panic!("expected overcomplete"),
        };
        assert_eq!(back.node, p.node);
        assert_eq!(back.edge, p.edge);
        assert_eq!(back.graph.edges(), p.graph.edges());
    }

    #[test]
    fn minimal_json_round_trip() {
        let p = cycle4_model([0.5, -0.25, 0.0, 2.0], Coding::Spin);
        let json = minimal_to_json(&p);
        let back = match parse_model(&json).unwrap() {
            LoadedModel::Minimal(p) => p,
            _ => panic!("expected minimal"),
        };
        assert_eq!(back.edge_params, p.edge_params);
        assert_eq!(back.coding, Coding::Spin);
    }

    #[test]
    fn missing_theta_edge_is_a_named_parse_error() {
        let json = r#"{"m":2,"coding":"zero_one","nodes":2,"edges":[[0,1]],"theta_node":[[0,0],[0,0]]}"#;
        let err = parse_model(json).unwrap_err();
        assert!(err.to_string().contains("theta_edge"), "{err}");
    }
}
