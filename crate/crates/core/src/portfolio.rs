//! Portfolio construction: SELECTOR-based, personalized, greedy baselines,
//! random and full.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{PerformanceTensor, ScenarioKey};
use crate::error::{Error, Result};
use crate::metarep::{MetaRep, RepKind};
use crate::simgraph::{build_graph, Sampler};
use crate::util::{derive_seed, fmt_f64, median};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Method {
    Full,
    P2vSelector,
    ShapSelector,
    Personalized,
    GreedyAuc,
    GreedyPerfunc,
    Random,
}

impl Method {
    pub fn tag(self) -> &'static str {
        match self {
            Method::Full => "full",
            Method::P2vSelector => "p2v",
            Method::ShapSelector => "shap",
            Method::Personalized => "pers",
            Method::GreedyAuc => "greedy_auc",
            Method::GreedyPerfunc => "greedy_perfunc",
            Method::Random => "random",
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.tag())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PortfolioParams {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threshold: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sampler: Option<Sampler>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seeds: Option<Vec<u64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub top: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_problem: Option<usize>,
    /// For random portfolios: the id of the portfolio whose size is mirrored.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub matched: Option<String>,
    /// For random portfolios: method and parameters of the mirrored portfolio.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Portfolio {
    pub method: Method,
    #[serde(flatten)]
    pub scenario: ScenarioKey,
    pub params: PortfolioParams,
    pub members: Vec<String>,
}

impl Portfolio {
    fn new(
        method: Method,
        scenario: ScenarioKey,
        params: PortfolioParams,
        members: impl IntoIterator<Item = String>,
    ) -> Result<Self> {
        let members: Vec<String> = members
            .into_iter()
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        if members.is_empty() {
            return Err(Error::EmptyPortfolio);
        }
        Ok(Self {
            method,
            scenario,
            params,
            members,
        })
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn contains(&self, algorithm: &str) -> bool {
        self.members
            .binary_search_by(|m| m.as_str().cmp(algorithm))
            .is_ok()
    }

    /// Parameter description without the seed, used to group seed replicates.
    pub fn params_label(&self) -> String {
        let p = &self.params;
        let mut parts = Vec::new();
        if let Some(t) = p.threshold {
            parts.push(format!("t={}", fmt_f64(t)));
        }
        if let Some(s) = p.sampler {
            parts.push(format!("sampler={}", s.tag()));
        }
        if let Some(k) = p.top {
            parts.push(format!("top={k}"));
        }
        if let Some(k) = p.per_problem {
            parts.push(format!("per_problem={k}"));
        }
        if let Some(g) = &p.group {
            parts.push(format!("size_of={g}"));
        }
        parts.join(";")
    }

    /// Unique, filesystem-safe identifier.
    pub fn id(&self) -> String {
        let mut id = format!(
            "{}_d{}_b{}",
            self.method.tag(),
            self.scenario.dimension,
            self.scenario.budget
        );
        let p = &self.params;
        if let Some(t) = p.threshold {
            id.push_str(&format!("_t{}", fmt_f64(t)));
        }
        if let Some(s) = p.sampler {
            id.push_str(&format!("_{}", s.tag()));
        }
        if let Some(k) = p.top {
            id.push_str(&format!("_top{k}"));
        }
        if let Some(k) = p.per_problem {
            id.push_str(&format!("_pp{k}"));
        }
        if p.matched.is_some() {
            id.push_str(&format!("_n{}", self.members.len()));
        }
        if let Some(s) = p.seed {
            id.push_str(&format!("_s{s}"));
        }
        id
    }
}

/// Every algorithm in the tensor.
pub fn full_portfolio(t: &PerformanceTensor, s: ScenarioKey) -> Result<Portfolio> {
    t.scenario_index(s)?;
    Portfolio::new(
        Method::Full,
        s,
        PortfolioParams::default(),
        t.algorithms().iter().cloned(),
    )
}

/// Sample a portfolio from the similarity graph over global meta-representations.
pub fn selector_portfolio(
    reps: &[MetaRep],
    threshold: f64,
    sampler: Sampler,
    seed: u64,
) -> Result<Portfolio> {
    let g = build_graph(reps, threshold)?;
    let method = match g.kind {
        RepKind::P2v => Method::P2vSelector,
        RepKind::ShapGlobal => Method::ShapSelector,
        RepKind::ShapLocal => return Err(Error::MixedKinds),
    };
    Portfolio::new(
        method,
        g.scenario,
        PortfolioParams {
            threshold: Some(threshold),
            sampler: Some(sampler),
            seed: Some(seed),
            ..Default::default()
        },
        sampler.sample(g.graph(), seed),
    )
}

/// The 51 precision targets `10^2 … 10^-8`, log-uniformly spaced.
pub fn ecdf_targets() -> Vec<f64> {
    (0..51)
        .map(|i| 10f64.powf((10 - i) as f64 / 5.0))
        .collect()
}

/// Fraction of (problem, instance, run, target) hits, averaged over every
/// recorded budget of `dimension`.
pub fn ecdf_auc(t: &PerformanceTensor, algorithm: &str, dimension: u32) -> Result<f64> {
    let a = t.algorithm_index(algorithm)?;
    let targets = ecdf_targets();
    let checkpoints: Vec<usize> = t
        .scenarios()
        .iter()
        .enumerate()
        .filter(|(_, s)| s.dimension == dimension)
        .map(|(i, _)| i)
        .collect();
    if checkpoints.is_empty() {
        return Err(Error::UnknownScenario {
            dimension,
            budget: 0,
        });
    }
    let (np, ni) = (t.problems().len(), t.instances().len());
    let denom = (np * ni * t.n_runs() * targets.len()) as f64;
    let mut total = 0.0;
    for &s in &checkpoints {
        let mut hits = 0usize;
        for p in 0..np {
            for i in 0..ni {
                for &v in t.runs_at(a, s, p, i) {
                    hits += targets.iter().filter(|&&tau| v <= tau).count();
                }
            }
        }
        total += hits as f64 / denom;
    }
    Ok(total / checkpoints.len() as f64)
}

/// The `top` algorithms by ECDF AUC for the scenario's dimension; the same
/// membership serves every budget of that dimension.
pub fn greedy_auc_portfolio(t: &PerformanceTensor, s: ScenarioKey, top: usize) -> Result<Portfolio> {
    let n = t.algorithms().len();
    if top == 0 || top > n {
        return Err(Error::NotEnoughAlgorithms { need: top, have: n });
    }
    t.scenario_index(s)?;
    let mut scored = t
        .algorithms()
        .iter()
        .map(|a| Ok((a.clone(), ecdf_auc(t, a, s.dimension)?)))
        .collect::<Result<Vec<_>>>()?;
    scored.sort_by(|(a, x), (b, y)| y.total_cmp(x).then_with(|| a.cmp(b)));
    Portfolio::new(
        Method::GreedyAuc,
        s,
        PortfolioParams {
            top: Some(top),
            ..Default::default()
        },
        scored.into_iter().take(top).map(|(a, _)| a),
    )
}

/// Raw-performance score per (problem, algorithm): mean over instances of the
/// median precision over runs. Indexed `[problem][algorithm]`.
pub fn raw_scores(t: &PerformanceTensor, s: ScenarioKey) -> Result<Vec<Vec<f64>>> {
    let si = t.scenario_index(s)?;
    let (np, ni) = (t.problems().len(), t.instances().len());
    Ok((0..np)
        .map(|p| {
            (0..t.algorithms().len())
                .map(|a| (0..ni).map(|i| median(t.runs_at(a, si, p, i))).sum::<f64>() / ni as f64)
                .collect()
        })
        .collect())
}

fn ascending_then_id<'a>(
    scores: &'a [f64],
    names: &'a [String],
) -> impl FnMut(&usize, &usize) -> Ordering + 'a {
    move |&a, &b| scores[a].total_cmp(&scores[b]).then_with(|| names[a].cmp(&names[b]))
}

/// Union over problems of the `per_problem` best algorithms on each problem.
pub fn greedy_perfunc_portfolio(
    t: &PerformanceTensor,
    s: ScenarioKey,
    per_problem: usize,
) -> Result<Portfolio> {
    let names = t.algorithms();
    if per_problem == 0 || per_problem > names.len() {
        return Err(Error::NotEnoughAlgorithms {
            need: per_problem,
            have: names.len(),
        });
    }
    let scores = raw_scores(t, s)?;
    let mut members = BTreeSet::new();
    for row in &scores {
        let mut idx: Vec<usize> = (0..names.len()).collect();
        idx.sort_by(ascending_then_id(row, names));
        members.extend(idx.into_iter().take(per_problem).map(|a| names[a].clone()));
    }
    Portfolio::new(
        Method::GreedyPerfunc,
        s,
        PortfolioParams {
            per_problem: Some(per_problem),
            ..Default::default()
        },
        members,
    )
}

/// Per-problem candidate sets and winners of a personalized portfolio.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PersonalizedTrace {
    pub problem: String,
    pub union: Vec<String>,
    pub winners: Vec<String>,
}

/// Per problem: MIS-sample the local-Shapley graph once per seed, pool the
/// samples, keep the `per_problem` best of the pool by raw performance.
pub fn personalized_portfolio(
    local_reps: &BTreeMap<String, Vec<MetaRep>>,
    t: &PerformanceTensor,
    s: ScenarioKey,
    threshold: f64,
    seeds: &[u64],
    per_problem: usize,
) -> Result<(Portfolio, Vec<PersonalizedTrace>)> {
    if seeds.is_empty() {
        return Err(Error::InvalidConfig("personalized portfolio needs seeds".into()));
    }
    if per_problem == 0 {
        return Err(Error::NotEnoughAlgorithms { need: 0, have: 0 });
    }
    let scores = raw_scores(t, s)?;
    let names = t.algorithms();
    let mut traces = Vec::with_capacity(t.problems().len());
    for (p, problem) in t.problems().iter().enumerate() {
        let reps = local_reps
            .get(problem)
            .filter(|r| !r.is_empty())
            .ok_or_else(|| Error::MissingLocalRep(problem.clone()))?;
        if reps
            .iter()
            .any(|r| r.kind != RepKind::ShapLocal || r.problem.as_deref() != Some(problem.as_str()))
        {
            return Err(Error::MixedKinds);
        }
        let g = build_graph(reps, threshold)?;
        let mut union = BTreeSet::new();
        for &seed in seeds {
            union.extend(Sampler::Mis.sample(g.graph(), seed));
        }
        let mut idx = union
            .iter()
            .map(|a| t.algorithm_index(a))
            .collect::<Result<Vec<_>>>()?;
        idx.sort_by(ascending_then_id(&scores[p], names));
        let winners = idx
            .into_iter()
            .take(per_problem)
            .map(|a| names[a].clone())
            .collect();
        traces.push(PersonalizedTrace {
            problem: problem.clone(),
            union: union.into_iter().collect(),
            winners,
        });
    }
    let portfolio = Portfolio::new(
        Method::Personalized,
        s,
        PortfolioParams {
            threshold: Some(threshold),
            sampler: Some(Sampler::Mis),
            seeds: Some(seeds.to_vec()),
            per_problem: Some(per_problem),
            ..Default::default()
        },
        traces.iter().flat_map(|tr| tr.winners.iter().cloned()),
    )?;
    Ok((portfolio, traces))
}

/// Uniform sample of `size` algorithms without replacement.
pub fn random_portfolio(
    all: &[String],
    size: usize,
    seed: u64,
    s: ScenarioKey,
) -> Result<Portfolio> {
    if size > all.len() {
        return Err(Error::SizeTooLarge {
            size,
            population: all.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picked = rand::seq::index::sample(&mut rng, all.len(), size);
    Portfolio::new(
        Method::Random,
        s,
        PortfolioParams {
            seed: Some(seed),
            ..Default::default()
        },
        picked.into_iter().map(|i| all[i].clone()),
    )
}

/// Random portfolio with the size of `matched`, seeded from its id.
pub fn matched_random(all: &[String], matched: &Portfolio, global_seed: u64) -> Result<Portfolio> {
    let seed = derive_seed(global_seed, &["random", &matched.id()]);
    let mut p = random_portfolio(all, matched.len(), seed, matched.scenario)?;
    p.params.matched = Some(matched.id());
    p.params.group = Some(format!("{}({})", matched.method.tag(), matched.params_label()));
    Ok(p)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s() -> ScenarioKey {
        ScenarioKey::new(5, 500).unwrap()
    }

    /// One run, one instance, one scenario: value[a][p].
    fn tensor(names: &[&str], values: &[Vec<f64>]) -> PerformanceTensor {
        let n_problems = values[0].len();
        PerformanceTensor::from_dense(
            names.iter().map(|s| s.to_string()).collect(),
            vec![s()],
            (0..n_problems).map(|p| format!("p{p:02}")).collect(),
            vec!["1".into()],
            vec!["0".into()],
            values.iter().flatten().copied().collect(),
        )
        .unwrap()
    }

    #[test]
    fn target_grid() {
        let t = ecdf_targets();
        assert_eq!(t.len(), 51);
        assert_eq!(t[0], 100.0);
        assert_eq!(t[10], 1.0);
        assert_eq!(t[50], 1e-8);
        assert!(t.windows(2).all(|w| w[0] > w[1]));
    }

    #[test]
    fn auc_extremes() {
        let t = tensor(&["a", "b"], &[vec![0.0, 0.0], vec![1e3, 1e3]]);
        assert_eq!(ecdf_auc(&t, "a", 5).unwrap(), 1.0);
        assert_eq!(ecdf_auc(&t, "b", 5).unwrap(), 0.0);
        assert!(matches!(ecdf_auc(&t, "c", 5), Err(Error::UnknownAlgorithm(_))));
    }

    #[test]
    fn auc_precision_one() {
        let t = tensor(&["a"], &[vec![1.0]]);
        let hits = ecdf_targets().iter().filter(|&&tau| 1.0 <= tau).count();
        assert_eq!(hits, 11);
        assert_eq!(ecdf_auc(&t, "a", 5).unwrap(), 11.0 / 51.0);
    }

    #[test]
    fn greedy_auc_selection() {
        let names: Vec<String> = (0..10).map(|i| format!("a{i}")).collect();
        let refs: Vec<&str> = names.iter().map(String::as_str).collect();
        let mut values = vec![vec![1e3]; 10];
        values[7] = vec![0.0];
        let t = tensor(&refs, &values);
        assert_eq!(greedy_auc_portfolio(&t, s(), 10).unwrap().members, names);
        assert_eq!(greedy_auc_portfolio(&t, s(), 1).unwrap().members, vec!["a7"]);
        // all tied at zero hits except a7; ties resolve lexicographically
        assert_eq!(
            greedy_auc_portfolio(&t, s(), 3).unwrap().members,
            vec!["a0", "a1", "a7"]
        );
        assert!(matches!(
            greedy_auc_portfolio(&t, s(), 11),
            Err(Error::NotEnoughAlgorithms { need: 11, have: 10 })
        ));
    }

    #[test]
    fn greedy_perfunc_selection() {
        let t = tensor(&["a", "b"], &[vec![1.0, 2.0], vec![3.0, 4.0]]);
        assert_eq!(greedy_perfunc_portfolio(&t, s(), 2).unwrap().members, vec!["a", "b"]);
        assert_eq!(greedy_perfunc_portfolio(&t, s(), 1).unwrap().members, vec!["a"]);
        assert!(greedy_perfunc_portfolio(&t, s(), 3).is_err());
    }

    #[test]
    fn greedy_perfunc_disjoint_winners() {
        // 24 problems; algorithms 2p and 2p+1 are the best two on problem p.
        let n_alg = 60;
        let names: Vec<String> = (0..n_alg).map(|i| format!("a{i:02}")).collect();
        let refs: Vec<&str> = names.iter().map(String::as_str).collect();
        let values: Vec<Vec<f64>> = (0..n_alg)
            .map(|a| (0..24).map(|p| if a / 2 == p { 1e-3 } else { 1.0 }).collect())
            .collect();
        let t = tensor(&refs, &values);
        let pf = greedy_perfunc_portfolio(&t, s(), 2).unwrap();
        assert_eq!(pf.len(), 48);
        assert_eq!(pf.members, names[..48].to_vec());
    }

    #[test]
    fn random_portfolio_bounds() {
        let all: Vec<String> = (0..9).map(|i| format!("a{i}")).collect();
        assert_eq!(random_portfolio(&all, 9, 3, s()).unwrap().members, all);
        assert_eq!(random_portfolio(&all, 1, 3, s()).unwrap().len(), 1);
        let a = random_portfolio(&all, 4, 42, s()).unwrap();
        assert_eq!(a, random_portfolio(&all, 4, 42, s()).unwrap());
        assert!(matches!(
            random_portfolio(&all, 10, 1, s()),
            Err(Error::SizeTooLarge { size: 10, population: 9 })
        ));
    }

    fn local(problem: &str, names: &[&str], vectors: &[Vec<f64>]) -> Vec<MetaRep> {
        names
            .iter()
            .zip(vectors)
            .map(|(a, v)| MetaRep {
                algorithm: a.to_string(),
                kind: RepKind::ShapLocal,
                problem: Some(problem.into()),
                scenario: s(),
                vector: v.clone(),
            })
            .collect()
    }

    #[test]
    fn identical_reps_single_member() {
        let reps: Vec<MetaRep> = ["a", "b", "c"]
            .iter()
            .map(|a| MetaRep {
                algorithm: a.to_string(),
                kind: RepKind::P2v,
                problem: None,
                scenario: s(),
                vector: vec![1.0, 1.0],
            })
            .collect();
        for thr in [0.6, 0.97, 1.0] {
            let p = selector_portfolio(&reps, thr, Sampler::Mis, 3).unwrap();
            assert_eq!(p.len(), 1);
            assert_eq!(p.method, Method::P2vSelector);
        }
    }

    #[test]
    fn personalized_winner_from_union() {
        // On problem p00, algorithm "best" is globally best but its local rep is
        // identical to "twin"; with orthogonal "other", MIS picks one of each cluster.
        let names = ["best", "other", "twin"];
        let t = tensor(&names, &[vec![1e-6], vec![1e-1], vec![1e-3]]);
        let reps = local(
            "p00",
            &names,
            &[vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 0.0]],
        );
        let mut map = BTreeMap::new();
        map.insert("p00".to_string(), reps);
        // single seed: the pool holds "other" plus exactly one of best/twin
        for seed in 0..20u64 {
            let (pf, traces) = personalized_portfolio(&map, &t, s(), 0.9, &[seed], 1).unwrap();
            let union = &traces[0].union;
            assert_eq!(union.len(), 2);
            assert!(union.contains(&"other".to_string()));
            let w = &traces[0].winners[0];
            assert!(union.contains(w));
            if union.contains(&"twin".to_string()) {
                // global best excluded by construction: best of the pool wins
                assert_eq!(w, "twin");
            } else {
                assert_eq!(w, "best");
            }
            assert_eq!(pf.members, vec![w.clone()]);
        }
    }

    #[test]
    fn personalized_requires_every_problem() {
        let t = tensor(&["a", "b"], &[vec![1.0, 1.0], vec![2.0, 2.0]]);
        let mut map = BTreeMap::new();
        map.insert(
            "p00".to_string(),
            local("p00", &["a", "b"], &[vec![1.0], vec![1.0]]),
        );
        assert!(matches!(
            personalized_portfolio(&map, &t, s(), 0.7, &[1, 2, 3, 4, 5], 2),
            Err(Error::MissingLocalRep(p)) if p == "p01"
        ));
    }

    #[test]
    fn ids_and_labels() {
        let base = Portfolio::new(
            Method::P2vSelector,
            s(),
            PortfolioParams {
                threshold: Some(0.95),
                sampler: Some(Sampler::Mis),
                seed: Some(3),
                ..Default::default()
            },
            vec!["a".to_string(), "b".to_string()],
        )
        .unwrap();
        assert_eq!(base.id(), "p2v_d5_b500_t0.95_mis_s3");
        assert_eq!(base.params_label(), "t=0.95;sampler=mis");
        let all: Vec<String> = ["a", "b", "c", "d"].iter().map(|s| s.to_string()).collect();
        let random = matched_random(&all, &base, 7).unwrap();
        assert_eq!(random.len(), 2);
        assert_eq!(random.params_label(), "size_of=p2v(t=0.95;sampler=mis)");
        assert!(random.id().starts_with("random_d5_b500_n2_s"));
        assert_eq!(random, matched_random(&all, &base, 7).unwrap());
        let other = Portfolio {
            params: PortfolioParams {
                seed: Some(4),
                ..base.params.clone()
            },
            ..base.clone()
        };
        // replicates share a label but not an id
        let r2 = matched_random(&all, &other, 7).unwrap();
        assert_eq!(r2.params_label(), random.params_label());
        assert_ne!(r2.id(), random.id());
    }

    #[test]
    fn json_layout() {
        let p = full_portfolio(&tensor(&["x", "y"], &[vec![1.0], vec![2.0]]), s()).unwrap();
        let v: serde_json::Value = serde_json::to_value(&p).unwrap();
        assert_eq!(v["method"], "FULL");
        assert_eq!(v["dimension"], 5);
        assert_eq!(v["budget"], 500);
        assert_eq!(v["members"], serde_json::json!(["x", "y"]));
        let back: Portfolio = serde_json::from_value(v).unwrap();
        assert_eq!(back, p);
    }
}
