//! Synthetic performance and feature data with planted structure: behaviour
//! clusters, per-problem specialists and misleading algorithms.

#![allow(clippy::needless_range_loop)]

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dataset::{FeatureKey, FeatureTable, PerformanceTensor, ScenarioKey};
use crate::error::{Error, Result};
use crate::util::median;

/// A group of algorithms sharing one per-problem precision profile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSpec {
    pub size: usize,
    /// Baseline precision per problem (positive).
    pub profile: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub n_problems: usize,
    pub k_instances: usize,
    pub m_runs: usize,
    pub n_algorithms: usize,
    pub p_features: usize,
    pub clusters: Vec<ClusterSpec>,
    /// Standard deviation of the multiplicative log-normal run noise.
    pub noise_sd: f64,
    /// Problem index → algorithm index that dominates that problem.
    #[serde(default)]
    pub specialists: BTreeMap<usize, usize>,
    /// Specialist precision relative to the best cluster profile on its problem.
    #[serde(default = "default_dominance")]
    pub dominance: f64,
    /// Algorithms that look excellent except on one feature-extreme instance per problem.
    #[serde(default)]
    pub misleading: BTreeSet<usize>,
    /// Precision factor of misleading algorithms on ordinary instances.
    #[serde(default = "default_misleading_gain")]
    pub misleading_gain: f64,
    /// Precision factor of misleading algorithms on their trap instance.
    #[serde(default = "default_misleading_penalty")]
    pub misleading_penalty: f64,
    pub dimensions: Vec<u32>,
    pub budgets: Vec<u64>,
    pub seed: u64,
}

fn default_dominance() -> f64 {
    0.01
}
fn default_misleading_gain() -> f64 {
    0.5
}
fn default_misleading_penalty() -> f64 {
    1e3
}

impl Default for SynthSpec {
    /// Desk-scale spec: 40 algorithms in 4 clusters of 10, 6 problems,
    /// 5 instances, 10 runs, 12 features, one misleading algorithm.
    fn default() -> Self {
        // log10 precision per problem; each cluster owns one or two problems
        let exponents: [[f64; 6]; 4] = [
            [-6.0, -1.0, -2.0, -1.0, -4.0, -0.5],
            [-1.0, -6.0, -1.0, -2.0, -0.5, -4.0],
            [-2.0, -1.0, -6.0, -0.5, -3.0, -1.0],
            [-0.5, -2.0, -1.0, -6.0, -1.0, -3.0],
        ];
        Self {
            n_problems: 6,
            k_instances: 5,
            m_runs: 10,
            n_algorithms: 40,
            p_features: 12,
            clusters: exponents
                .iter()
                .map(|e| ClusterSpec {
                    size: 10,
                    profile: e.iter().map(|x| 10f64.powf(*x)).collect(),
                })
                .collect(),
            noise_sd: 0.01,
            specialists: BTreeMap::new(),
            dominance: default_dominance(),
            misleading: BTreeSet::from([1]),
            misleading_gain: default_misleading_gain(),
            misleading_penalty: default_misleading_penalty(),
            dimensions: vec![5],
            budgets: vec![500, 5000],
            seed: 1,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidSpec(m));
        if self.n_problems == 0
            || self.k_instances == 0
            || self.m_runs == 0
            || self.n_algorithms == 0
        {
            return bad("counts must be positive".into());
        }
        if self.p_features < 2 {
            return bad("need at least 2 features".into());
        }
        if self.clusters.iter().map(|c| c.size).sum::<usize>() != self.n_algorithms {
            return bad("cluster sizes must sum to n_algorithms".into());
        }
        for (c, cl) in self.clusters.iter().enumerate() {
            if cl.size == 0 {
                return bad(format!("cluster {c} is empty"));
            }
            if cl.profile.len() != self.n_problems {
                return bad(format!(
                    "cluster {c} profile has {} entries, expected {}",
                    cl.profile.len(),
                    self.n_problems
                ));
            }
            if cl.profile.iter().any(|v| !v.is_finite() || *v <= 0.0) {
                return bad(format!("cluster {c} profile must be positive"));
            }
        }
        if !self.noise_sd.is_finite() || self.noise_sd < 0.0 {
            return bad("noise_sd must be a non-negative number".into());
        }
        for (&p, &a) in &self.specialists {
            if p >= self.n_problems || a >= self.n_algorithms {
                return bad(format!("specialist {a} on problem {p} out of range"));
            }
        }
        if let Some(&a) = self.misleading.iter().find(|&&a| a >= self.n_algorithms) {
            return bad(format!("misleading algorithm {a} out of range"));
        }
        for (name, v) in [
            ("dominance", self.dominance),
            ("misleading_gain", self.misleading_gain),
            ("misleading_penalty", self.misleading_penalty),
        ] {
            if !v.is_finite() || v <= 0.0 {
                return bad(format!("{name} must be positive"));
            }
        }
        let sorted = |v: &[u64]| !v.is_empty() && v.windows(2).all(|w| w[0] < w[1]) && v[0] > 0;
        let dims: Vec<u64> = self.dimensions.iter().map(|&d| d as u64).collect();
        if !sorted(&dims) || !sorted(&self.budgets) {
            return bad("dimensions and budgets must be positive, sorted and unique".into());
        }
        Ok(())
    }

    fn cluster_of(&self) -> Vec<usize> {
        self.clusters
            .iter()
            .enumerate()
            .flat_map(|(c, cl)| std::iter::repeat_n(c, cl.size))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VbsEntry {
    pub dimension: u32,
    pub budget: u64,
    pub problem: String,
    pub instance: String,
    pub algorithm: String,
    pub precision: f64,
}

/// What the generator planted, for cross-checking downstream results.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub seed: u64,
    /// Cluster label per algorithm id.
    pub clusters: BTreeMap<String, usize>,
    pub specialists: BTreeMap<String, String>,
    pub misleading: Vec<String>,
    /// Per dimension and problem, the instance on which misleading algorithms fail.
    pub trap_instances: BTreeMap<String, String>,
    pub vbs: Vec<VbsEntry>,
}

fn padded(prefix: &str, i: usize, n: usize) -> String {
    let width = n.to_string().len();
    format!("{prefix}{i:0width$}")
}

pub fn algorithm_names(n: usize) -> Vec<String> {
    (0..n).map(|a| padded("a", a, n.saturating_sub(1).max(10))).collect()
}

pub fn problem_names(n: usize) -> Vec<String> {
    (1..=n).map(|p| padded("f", p, n.max(10))).collect()
}

fn instance_names(k: usize) -> Vec<String> {
    (1..=k).map(|i| padded("", i, k)).collect()
}

fn run_names(m: usize) -> Vec<String> {
    (0..m).map(|r| padded("", r, m.saturating_sub(1))).collect()
}

/// Smooth monotone link of the two designated features.
fn link(x: &[f64]) -> f64 {
    10f64.powf(0.3 * x[0] + 0.2 * x[1])
}

/// Common difficulty factor: harder in higher dimension, easier with budget.
fn scenario_factor(s: ScenarioKey) -> f64 {
    (s.dimension as f64 / 5.0).sqrt() * (500.0 / s.budget as f64).sqrt()
}

/// Generate a performance tensor, a feature table and the planted ground truth.
pub fn generate(spec: &SynthSpec) -> Result<(PerformanceTensor, FeatureTable, GroundTruth)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let algorithms = algorithm_names(spec.n_algorithms);
    let problems = problem_names(spec.n_problems);
    let instances = instance_names(spec.k_instances);
    let runs = run_names(spec.m_runs);
    let scenarios: Vec<ScenarioKey> = spec
        .dimensions
        .iter()
        .flat_map(|&d| spec.budgets.iter().map(move |&b| ScenarioKey { dimension: d, budget: b }))
        .collect();
    let (np, k, p) = (spec.n_problems, spec.k_instances, spec.p_features);

    // features: problem-specific centres per dimension, instance-level jitter
    let mut feature_rows = BTreeMap::new();
    let mut features: BTreeMap<u32, Vec<Vec<f64>>> = BTreeMap::new();
    let mut traps: BTreeMap<(u32, usize), usize> = BTreeMap::new();
    for &d in &spec.dimensions {
        let mut rows = Vec::with_capacity(np * k);
        for pi in 0..np {
            let centre: Vec<f64> = (0..p).map(|_| rng.random_range(-1.0..1.0)).collect();
            for ii in 0..k {
                let row: Vec<f64> = centre
                    .iter()
                    .map(|c| c + 0.3 * rng.sample::<f64, _>(StandardNormal))
                    .collect();
                feature_rows.insert(FeatureKey::new(d, &problems[pi], &instances[ii]), row.clone());
                rows.push(row);
            }
            // the trap sits where the second designated feature peaks
            let trap = (0..k)
                .max_by(|&a, &b| rows[pi * k + a][1].total_cmp(&rows[pi * k + b][1]))
                .unwrap_or(0);
            traps.insert((d, pi), trap);
        }
        features.insert(d, rows);
    }
    let feature_names: Vec<String> = (0..p).map(|q| padded("ela_", q, p.saturating_sub(1).max(10))).collect();
    let table = FeatureTable::new(feature_names, feature_rows, false)?;

    let cluster_of = spec.cluster_of();
    let best_profile: Vec<f64> = (0..np)
        .map(|pi| {
            spec.clusters
                .iter()
                .map(|c| c.profile[pi])
                .fold(f64::INFINITY, f64::min)
        })
        .collect();
    let specialist_on: BTreeMap<usize, BTreeSet<usize>> =
        spec.specialists
            .iter()
            .fold(BTreeMap::new(), |mut acc, (&pi, &a)| {
                acc.entry(a).or_insert_with(BTreeSet::new).insert(pi);
                acc
            });

    let mut values = Vec::with_capacity(spec.n_algorithms * scenarios.len() * np * k * spec.m_runs);
    for a in 0..spec.n_algorithms {
        let profile = &spec.clusters[cluster_of[a]].profile;
        for s in &scenarios {
            let rows = &features[&s.dimension];
            for pi in 0..np {
                let base = if specialist_on.get(&a).is_some_and(|ps| ps.contains(&pi)) {
                    spec.dominance * best_profile[pi]
                } else {
                    profile[pi]
                };
                for ii in 0..k {
                    let mut level = base * link(&rows[pi * k + ii]) * scenario_factor(*s);
                    if spec.misleading.contains(&a) {
                        level *= if traps[&(s.dimension, pi)] == ii {
                            spec.misleading_penalty
                        } else {
                            spec.misleading_gain
                        };
                    }
                    for _ in 0..spec.m_runs {
                        let z: f64 = rng.sample(StandardNormal);
                        values.push(level * (spec.noise_sd * z).exp());
                    }
                }
            }
        }
    }

    let truth = ground_truth(spec, &algorithms, &problems, &instances, &scenarios, &values, &traps, &cluster_of);
    let tensor = PerformanceTensor::from_dense(algorithms, scenarios, problems, instances, runs, values)?;
    Ok((tensor, table, truth))
}

#[allow(clippy::too_many_arguments)]
fn ground_truth(
    spec: &SynthSpec,
    algorithms: &[String],
    problems: &[String],
    instances: &[String],
    scenarios: &[ScenarioKey],
    values: &[f64],
    traps: &BTreeMap<(u32, usize), usize>,
    cluster_of: &[usize],
) -> GroundTruth {
    let (ns, np, k, m) = (scenarios.len(), problems.len(), instances.len(), spec.m_runs);
    let cell = |a: usize, s: usize, pi: usize, ii: usize| {
        let at = (((a * ns + s) * np + pi) * k + ii) * m;
        median(&values[at..at + m])
    };
    let mut vbs = Vec::with_capacity(ns * np * k);
    for (si, s) in scenarios.iter().enumerate() {
        for pi in 0..np {
            for ii in 0..k {
                let (best, precision) = (0..algorithms.len())
                    .map(|a| (a, cell(a, si, pi, ii)))
                    .fold((0, f64::INFINITY), |acc, x| if x.1 < acc.1 { x } else { acc });
                vbs.push(VbsEntry {
                    dimension: s.dimension,
                    budget: s.budget,
                    problem: problems[pi].clone(),
                    instance: instances[ii].clone(),
                    algorithm: algorithms[best].clone(),
                    precision,
                });
            }
        }
    }
    GroundTruth {
        seed: spec.seed,
        clusters: algorithms.iter().cloned().zip(cluster_of.iter().copied()).collect(),
        specialists: spec
            .specialists
            .iter()
            .map(|(&pi, &a)| (problems[pi].clone(), algorithms[a].clone()))
            .collect(),
        misleading: spec.misleading.iter().map(|&a| algorithms[a].clone()).collect(),
        trap_instances: traps
            .iter()
            .map(|(&(d, pi), &ii)| (format!("d{d}/{}", problems[pi]), instances[ii].clone()))
            .collect(),
        vbs,
    }
}
