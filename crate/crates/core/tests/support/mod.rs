//! Independent reference implementations used by the integration and
//! acceptance tests.

#![allow(dead_code)]

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use portsel::dataset::PerformanceTensor;
use portsel::forest::{Forest, HyperParams, Node, NodeKind, RegressionTree};
use portsel::pipeline::RunConfig;
use portsel::simgraph::Graph;
use portsel::synth::{ClusterSpec, SynthSpec};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Path-dependent conditional expectation of one tree given the features in `known`.
fn tree_value(tree: &RegressionTree, x: &[f64], known: u32, node: usize) -> f64 {
    let n = &tree.nodes()[node];
    match n.kind {
        NodeKind::Leaf { value } => value,
        NodeKind::Split {
            feature,
            threshold,
            left,
            right,
        } => {
            if known & (1 << feature) != 0 {
                let next = if x[feature] <= threshold { left } else { right };
                tree_value(tree, x, known, next)
            } else {
                let (l, r) = (&tree.nodes()[left], &tree.nodes()[right]);
                let total = n.cover as f64;
                tree_value(tree, x, known, left) * l.cover as f64 / total
                    + tree_value(tree, x, known, right) * r.cover as f64 / total
            }
        }
    }
}

fn forest_value(f: &Forest, x: &[f64], known: u32) -> f64 {
    f.trees.iter().map(|t| tree_value(t, x, known, 0)).sum::<f64>() / f.trees.len() as f64
}

fn factorial(n: usize) -> f64 {
    (1..=n).map(|v| v as f64).product()
}

/// Exact Shapley values by enumerating all 2^p coalitions; returns (phi, base).
pub fn brute_force_shapley(f: &Forest, x: &[f64]) -> (Vec<f64>, f64) {
    let p = x.len();
    assert!(p <= 16);
    let values: Vec<f64> = (0..1u32 << p).map(|s| forest_value(f, x, s)).collect();
    let mut phi = vec![0.0; p];
    for (i, out) in phi.iter_mut().enumerate() {
        for s in 0..1u32 << p {
            if s & (1 << i) != 0 {
                continue;
            }
            let size = s.count_ones() as usize;
            let w = factorial(size) * factorial(p - size - 1) / factorial(p);
            *out += w * (values[(s | (1 << i)) as usize] - values[s as usize]);
        }
    }
    (phi, values[0])
}

fn grow(
    rng: &mut ChaCha8Rng,
    nodes: &mut Vec<Node>,
    cover: usize,
    depth: usize,
    max_depth: usize,
    p: usize,
) -> usize {
    let id = nodes.len();
    nodes.push(Node::leaf(rng.random_range(-5.0..5.0), cover));
    if depth < max_depth && cover >= 2 && rng.random::<f64>() < 0.8 {
        let feature = rng.random_range(0..p);
        let threshold = rng.random_range(-1.0..1.0);
        let left_cover = rng.random_range(1..cover);
        let left = grow(rng, nodes, left_cover, depth + 1, max_depth, p);
        let right = grow(rng, nodes, cover - left_cover, depth + 1, max_depth, p);
        nodes[id] = Node::split(feature, threshold, left, right, cover);
    }
    id
}

/// Random tree with consistent covers; features repeat along paths freely.
pub fn random_tree(rng: &mut ChaCha8Rng, p: usize, max_depth: usize) -> RegressionTree {
    let mut nodes = Vec::new();
    let cover = rng.random_range(8..200);
    grow(rng, &mut nodes, cover, 0, max_depth, p);
    RegressionTree::from_nodes(nodes).expect("generated tree is valid")
}

pub fn random_forest(rng: &mut ChaCha8Rng, p: usize, n_trees: usize, max_depth: usize) -> Forest {
    Forest {
        trees: (0..n_trees).map(|_| random_tree(rng, p, max_depth)).collect(),
        hyperparams: HyperParams {
            n_trees,
            max_depth,
            min_samples_leaf: 1,
            feature_fraction: 1.0,
            bootstrap_seed: 0,
        },
        feature_names: (0..p).map(|q| format!("x{q}")).collect(),
    }
}

/// Erdős–Rényi graph with `n` nodes named `v00`, `v01`, ….
pub fn random_graph(rng: &mut ChaCha8Rng, n: usize, density: f64) -> Graph {
    let mut edges = Vec::new();
    for a in 0..n {
        for b in a + 1..n {
            if rng.random::<f64>() < density {
                edges.push((a, b));
            }
        }
    }
    Graph::from_edges((0..n).map(|i| format!("v{i:02}")).collect(), &edges).unwrap()
}

fn indices(g: &Graph, names: &[String]) -> BTreeSet<usize> {
    names
        .iter()
        .map(|n| g.nodes().iter().position(|m| m == n).expect("known node"))
        .collect()
}

pub fn is_independent(g: &Graph, names: &[String]) -> bool {
    let s = indices(g, names);
    s.iter().all(|&v| g.neighbors(v).iter().all(|u| !s.contains(u)))
}

pub fn is_maximal_independent(g: &Graph, names: &[String]) -> bool {
    let s = indices(g, names);
    is_independent(g, names)
        && (0..g.len())
            .filter(|v| !s.contains(v))
            .all(|v| g.neighbors(v).iter().any(|u| s.contains(u)))
}

pub fn is_dominating(g: &Graph, names: &[String]) -> bool {
    let s = indices(g, names);
    (0..g.len()).all(|v| s.contains(&v) || g.neighbors(v).iter().any(|u| s.contains(u)))
}

/// Two-stage performance2vec: sorted-run median per instance, then the mean
/// over instances, accumulated in instance order.
pub fn p2v_oracle(t: &PerformanceTensor, algorithm: &str, s: portsel::dataset::ScenarioKey) -> Vec<f64> {
    t.problems()
        .iter()
        .map(|p| {
            let mut sum = 0.0;
            for i in t.instances() {
                let mut runs = t.runs(algorithm, s, p, i).unwrap().to_vec();
                runs.sort_by(|a, b| a.partial_cmp(b).unwrap());
                let m = runs.len();
                let med = if m % 2 == 1 {
                    runs[m / 2]
                } else {
                    (runs[m / 2 - 1] + runs[m / 2]) / 2.0
                };
                sum += med;
            }
            sum / t.instances().len() as f64
        })
        .collect()
}

/// A small synthetic spec that trains in well under a second.
pub fn tiny_spec() -> SynthSpec {
    let exponents = [[-5.0, -1.0, -2.0, -0.5], [-1.0, -5.0, -0.5, -2.0], [-2.0, -0.5, -5.0, -1.0]];
    SynthSpec {
        n_problems: 4,
        k_instances: 4,
        m_runs: 3,
        n_algorithms: 12,
        p_features: 4,
        clusters: exponents
            .iter()
            .map(|e| ClusterSpec {
                size: 4,
                profile: e.iter().map(|v| 10f64.powf(*v)).collect(),
            })
            .collect(),
        noise_sd: 0.05,
        misleading: BTreeSet::from([0]),
        dimensions: vec![2],
        budgets: vec![100, 1000],
        ..SynthSpec::default()
    }
}

pub fn tiny_config(out: &Path) -> RunConfig {
    let spec = tiny_spec();
    RunConfig {
        scenarios: spec
            .budgets
            .iter()
            .map(|&b| portsel::dataset::ScenarioKey::new(2, b).unwrap())
            .collect(),
        synth: Some(spec),
        thresholds: vec![0.7, 0.95],
        selector_seeds: vec![1, 2],
        grid: vec![
            HyperParams {
                n_trees: 5,
                max_depth: 3,
                min_samples_leaf: 1,
                feature_fraction: 1.0,
                bootstrap_seed: 0,
            },
            HyperParams {
                n_trees: 5,
                max_depth: 8,
                min_samples_leaf: 2,
                feature_fraction: 0.5,
                bootstrap_seed: 0,
            },
        ],
        greedy_top: 3,
        output_dir: out.to_path_buf(),
        ..RunConfig::default()
    }
}

/// Every file under `root`, relative path → contents, sorted by path.
pub fn snapshot(root: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let bytes = std::fs::read(&path).unwrap();
                out.push((path.strip_prefix(root).unwrap().to_path_buf(), bytes));
            }
        }
    }
    out.sort();
    out
}
