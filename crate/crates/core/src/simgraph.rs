//! Cosine-similarity graphs over meta-representations and the two sampling
//! heuristics run on them: maximal independent sets and greedy dominating sets.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::ScenarioKey;
use crate::error::{Error, Result};
use crate::metarep::{MetaRep, RepKind};
use crate::util::fmt_f64;

/// The similarity thresholds swept by default.
pub const DEFAULT_THRESHOLDS: [f64; 7] = [0.60, 0.70, 0.80, 0.85, 0.90, 0.95, 0.97];

/// Cosine similarity clamped to [-1, 1].
///
/// Two zero vectors are treated as identical (1); a zero vector against a
/// non-zero one as orthogonal (0).
pub fn cosine(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::LengthMismatch(u.len(), v.len()));
    }
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    let nu = u.iter().map(|a| a * a).sum::<f64>();
    let nv = v.iter().map(|b| b * b).sum::<f64>();
    Ok(match (nu == 0.0, nv == 0.0) {
        (true, true) => 1.0,
        (true, false) | (false, true) => 0.0,
        // single sqrt so that identical vectors give exactly 1
        _ => (dot / (nu * nv).sqrt()).clamp(-1.0, 1.0),
    })
}

/// Undirected simple graph over named nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    nodes: Vec<String>,
    neighbors: Vec<Vec<usize>>,
}

impl Graph {
    /// Build from node names and an edge list of index pairs. Self-loops and
    /// repeated edges are dropped.
    pub fn from_edges(nodes: Vec<String>, edges: &[(usize, usize)]) -> Result<Self> {
        let n = nodes.len();
        let mut neighbors = vec![Vec::new(); n];
        for &(a, b) in edges {
            if a >= n || b >= n {
                return Err(Error::LengthMismatch(a.max(b), n));
            }
            if a != b {
                neighbors[a].push(b);
                neighbors[b].push(a);
            }
        }
        for list in &mut neighbors {
            list.sort_unstable();
            list.dedup();
        }
        Ok(Self { nodes, neighbors })
    }

    pub fn nodes(&self) -> &[String] {
        &self.nodes
    }
    pub fn len(&self) -> usize {
        self.nodes.len()
    }
    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
    pub fn neighbors(&self, v: usize) -> &[usize] {
        &self.neighbors[v]
    }
    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        self.neighbors[a].binary_search(&b).is_ok()
    }
    pub fn n_edges(&self) -> usize {
        self.neighbors.iter().map(Vec::len).sum::<usize>() / 2
    }

    /// Edges as `(a, b)` with `a < b`, in lexicographic order.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        self.neighbors
            .iter()
            .enumerate()
            .flat_map(|(a, ns)| ns.iter().filter(move |&&b| b > a).map(move |&b| (a, b)))
            .collect()
    }

    fn names(&self, picked: &[usize]) -> Vec<String> {
        let mut out: Vec<String> = picked.iter().map(|&i| self.nodes[i].clone()).collect();
        out.sort();
        out
    }
}

/// Graph built from meta-representations at one threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityGraph {
    graph: Graph,
    pub threshold: f64,
    pub kind: RepKind,
    pub scenario: ScenarioKey,
    pub problem: Option<String>,
    edge_similarity: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphHeader {
    pub threshold: f64,
    pub kind: RepKind,
    pub dimension: u32,
    pub budget: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub problem: Option<String>,
    pub n_nodes: usize,
    pub n_edges: usize,
}

impl SimilarityGraph {
    pub fn graph(&self) -> &Graph {
        &self.graph
    }

    pub fn header(&self) -> GraphHeader {
        GraphHeader {
            threshold: self.threshold,
            kind: self.kind,
            dimension: self.scenario.dimension,
            budget: self.scenario.budget,
            problem: self.problem.clone(),
            n_nodes: self.graph.len(),
            n_edges: self.graph.n_edges(),
        }
    }

    /// Edges `(a, b, similarity)` with `a < b`, in lexicographic order.
    pub fn weighted_edges(&self) -> Vec<(usize, usize, f64)> {
        self.graph
            .edges()
            .into_iter()
            .zip(&self.edge_similarity)
            .map(|((a, b), &s)| (a, b, s))
            .collect()
    }

    /// Edge list as `node_a,node_b,similarity` CSV.
    pub fn edges_csv(&self) -> String {
        let mut out = String::from("node_a,node_b,similarity\n");
        for (a, b, s) in self.weighted_edges() {
            out.push_str(&format!(
                "{},{},{}\n",
                self.graph.nodes[a],
                self.graph.nodes[b],
                fmt_f64(s)
            ));
        }
        out
    }
}

/// Connect every pair of algorithms whose cosine similarity is at least `threshold`.
///
/// Nodes are ordered by algorithm id regardless of input order.
pub fn build_graph(reps: &[MetaRep], threshold: f64) -> Result<SimilarityGraph> {
    let first = reps.first().ok_or(Error::EmptyInput)?;
    if threshold.is_nan() {
        return Err(Error::InvalidConfig("threshold is NaN".into()));
    }
    for r in reps {
        r.validate()?;
        if r.kind != first.kind || r.scenario != first.scenario || r.problem != first.problem {
            return Err(Error::MixedKinds);
        }
        if r.vector.len() != first.vector.len() {
            return Err(Error::LengthMismatch(first.vector.len(), r.vector.len()));
        }
    }
    let mut order: Vec<&MetaRep> = reps.iter().collect();
    order.sort_by(|a, b| a.algorithm.cmp(&b.algorithm));
    if let Some(w) = order.windows(2).find(|w| w[0].algorithm == w[1].algorithm) {
        return Err(Error::DuplicateNode(w[0].algorithm.clone()));
    }
    let n = order.len();
    let rows: Vec<Vec<(usize, f64)>> = (0..n)
        .into_par_iter()
        .map(|a| {
            let mut row = Vec::new();
            for b in a + 1..n {
                let s = cosine(&order[a].vector, &order[b].vector).expect("lengths checked");
                if s >= threshold {
                    row.push((b, s));
                }
            }
            row
        })
        .collect();
    let mut edges = Vec::new();
    let mut edge_similarity = Vec::new();
    for (a, row) in rows.iter().enumerate() {
        for &(b, s) in row {
            edges.push((a, b));
            edge_similarity.push(s);
        }
    }
    let graph = Graph::from_edges(order.iter().map(|r| r.algorithm.clone()).collect(), &edges)?;
    Ok(SimilarityGraph {
        graph,
        threshold,
        kind: first.kind,
        scenario: first.scenario,
        problem: first.problem.clone(),
        edge_similarity,
    })
}

/// Random-order greedy maximal independent set; returns sorted node names.
pub fn mis_sample(g: &Graph, seed: u64) -> Vec<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..g.len()).collect();
    order.shuffle(&mut rng);
    let mut selected = vec![false; g.len()];
    let mut picked = Vec::new();
    for v in order {
        if g.neighbors(v).iter().all(|&u| !selected[u]) {
            selected[v] = true;
            picked.push(v);
        }
    }
    g.names(&picked)
}

/// Greedy dominating set: repeatedly take the node covering the most uncovered
/// nodes (itself included), breaking ties uniformly at random.
pub fn ds_sample(g: &Graph, seed: u64) -> Vec<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = g.len();
    let mut covered = vec![false; n];
    let mut n_covered = 0;
    let mut picked = Vec::new();
    let mut taken = vec![false; n];
    while n_covered < n {
        let gain = |v: usize| {
            usize::from(!covered[v]) + g.neighbors(v).iter().filter(|&&u| !covered[u]).count()
        };
        let mut best = 0;
        let mut maximizers = Vec::new();
        for v in (0..n).filter(|&v| !taken[v]) {
            let c = gain(v);
            if c > best {
                best = c;
                maximizers.clear();
            }
            if c == best && c > 0 {
                maximizers.push(v);
            }
        }
        let v = maximizers[rng.random_range(0..maximizers.len())];
        taken[v] = true;
        picked.push(v);
        for u in std::iter::once(v).chain(g.neighbors(v).iter().copied()) {
            if !covered[u] {
                covered[u] = true;
                n_covered += 1;
            }
        }
    }
    g.names(&picked)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Sampler {
    Mis,
    Ds,
}

impl Sampler {
    pub fn sample(self, g: &Graph, seed: u64) -> Vec<String> {
        match self {
            Sampler::Mis => mis_sample(g, seed),
            Sampler::Ds => ds_sample(g, seed),
        }
    }

    pub fn tag(self) -> &'static str {
        match self {
            Sampler::Mis => "mis",
            Sampler::Ds => "ds",
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn rep(name: &str, v: Vec<f64>) -> MetaRep {
        MetaRep {
            algorithm: name.into(),
            kind: RepKind::P2v,
            problem: None,
            scenario: ScenarioKey::new(5, 500).unwrap(),
            vector: v,
        }
    }

    fn names(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("n{i:02}")).collect()
    }

    #[test]
    fn cosine_examples() {
        assert!((cosine(&[3.0, -4.0], &[3.0, -4.0]).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(cosine(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        let expected = 32.0 / (14f64.sqrt() * 77f64.sqrt());
        let got = cosine(&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]).unwrap();
        assert!((got - expected).abs() < 1e-15);
        assert!((got - 0.97463).abs() < 1e-5);
        assert_eq!(cosine(&[0.0, 0.0], &[0.0, 0.0]).unwrap(), 1.0);
        assert_eq!(cosine(&[0.0, 0.0], &[1.0, 0.0]).unwrap(), 0.0);
        assert!(matches!(cosine(&[1.0], &[1.0, 2.0]), Err(Error::LengthMismatch(1, 2))));
    }

    #[test]
    fn identical_reps_complete_graph() {
        let reps: Vec<MetaRep> = (0..6).map(|i| rep(&format!("a{i}"), vec![1.0, 2.0, 3.0])).collect();
        let g = build_graph(&reps, 0.97).unwrap();
        assert_eq!(g.graph().n_edges(), 15);
        assert_eq!(mis_sample(g.graph(), 4).len(), 1);
        let g = build_graph(&reps, 1.0 + 1e-9).unwrap();
        assert_eq!(g.graph().n_edges(), 0);
    }

    #[test]
    fn inclusive_threshold() {
        let reps = vec![rep("a", vec![1.0, 0.0]), rep("b", vec![0.0, 1.0])];
        assert_eq!(build_graph(&reps, 0.0).unwrap().graph().n_edges(), 1);
        assert_eq!(build_graph(&reps, 1e-12).unwrap().graph().n_edges(), 0);
    }

    #[test]
    fn nodes_sorted_and_validated() {
        let reps = vec![rep("b", vec![1.0]), rep("a", vec![1.0])];
        let g = build_graph(&reps, 0.5).unwrap();
        assert_eq!(g.graph().nodes(), &["a".to_string(), "b".to_string()]);
        assert!(matches!(build_graph(&[], 0.5), Err(Error::EmptyInput)));
        let mut other = rep("c", vec![1.0]);
        other.kind = RepKind::ShapGlobal;
        assert!(matches!(
            build_graph(&[rep("a", vec![1.0]), other], 0.5),
            Err(Error::MixedKinds)
        ));
        assert!(matches!(
            build_graph(&[rep("a", vec![1.0]), rep("a", vec![2.0])], 0.5),
            Err(Error::DuplicateNode(_))
        ));
    }

    #[test]
    fn edge_export() {
        let reps = vec![rep("a", vec![1.0, 0.0]), rep("b", vec![1.0, 0.0]), rep("c", vec![0.0, 1.0])];
        let g = build_graph(&reps, 0.9).unwrap();
        assert_eq!(g.edges_csv(), "node_a,node_b,similarity\na,b,1\n");
        let h = g.header();
        assert_eq!((h.n_nodes, h.n_edges, h.threshold), (3, 1, 0.9));
    }

    #[test]
    fn edgeless_graph_samplers() {
        let g = Graph::from_edges(names(7), &[]).unwrap();
        assert_eq!(mis_sample(&g, 1).len(), 7);
        assert_eq!(ds_sample(&g, 1).len(), 7);
    }

    #[test]
    fn complete_graph_mis_is_single() {
        let edges: Vec<(usize, usize)> =
            (0..5).flat_map(|a| (a + 1..5).map(move |b| (a, b))).collect();
        let g = Graph::from_edges(names(5), &edges).unwrap();
        for seed in 0..10 {
            assert_eq!(mis_sample(&g, seed).len(), 1);
            assert_eq!(ds_sample(&g, seed).len(), 1);
        }
    }

    #[test]
    fn star_graph_ds_is_hub() {
        let edges: Vec<(usize, usize)> = (1..7).map(|l| (0, l)).collect();
        let g = Graph::from_edges(names(7), &edges).unwrap();
        for seed in 0..10 {
            assert_eq!(ds_sample(&g, seed), vec!["n00".to_string()]);
        }
    }

    #[test]
    fn path_graph_mis_outcomes() {
        let g = Graph::from_edges(vec!["a".into(), "b".into(), "c".into()], &[(0, 1), (1, 2)]).unwrap();
        let mut seen = std::collections::BTreeSet::new();
        for seed in 0..64 {
            let s = mis_sample(&g, seed);
            assert!(s == ["a", "c"] || s == ["b"], "{s:?}");
            seen.insert(s);
        }
        assert_eq!(seen.len(), 2);
    }

    proptest! {
        #[test]
        fn scale_invariance(
            vectors in prop::collection::vec(prop::collection::vec(-5.0f64..5.0, 4), 2..15),
            scale in 0.01f64..100.0,
            threshold in -0.5f64..1.0,
            seed in any::<u64>(),
        ) {
            let reps: Vec<MetaRep> = vectors.iter().enumerate()
                .map(|(i, v)| rep(&format!("a{i:02}"), v.clone())).collect();
            let scaled: Vec<MetaRep> = reps.iter()
                .map(|r| MetaRep { vector: r.vector.iter().map(|x| x * scale).collect(), ..r.clone() })
                .collect();
            let g1 = build_graph(&reps, threshold).unwrap();
            let g2 = build_graph(&scaled, threshold).unwrap();
            prop_assert_eq!(g1.graph(), g2.graph());
            prop_assert_eq!(mis_sample(g1.graph(), seed), mis_sample(g2.graph(), seed));
            prop_assert_eq!(ds_sample(g1.graph(), seed), ds_sample(g2.graph(), seed));
        }

        #[test]
        fn sampler_determinism(n in 1usize..30, density in 0.0f64..1.0, seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let edges: Vec<(usize, usize)> = (0..n)
                .flat_map(|a| (a + 1..n).map(move |b| (a, b)))
                .filter(|_| rng.random::<f64>() < density)
                .collect();
            let g = Graph::from_edges(names(n), &edges).unwrap();
            prop_assert_eq!(mis_sample(&g, seed), mis_sample(&g, seed));
            prop_assert_eq!(ds_sample(&g, seed), ds_sample(&g, seed));
        }
    }
}
