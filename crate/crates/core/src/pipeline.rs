//! End-to-end experiment driver: configuration, stages and reports.
//!
//! Every stage reads its inputs from the artifact store and writes its outputs
//! back, so stages can run one at a time or chained by [`Context::pipeline`].

use std::collections::BTreeMap;
use std::path::PathBuf;

use log::info;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::aas::{
    compare_portfolios, evaluate, per_problem_distribution, write_comparison_csv,
    write_decomposition_csv, write_distribution_csv, write_loss_csv, LossReport, ModelSet,
};
use crate::dataset::{
    load_features, load_performance, read_features, read_performance, write_features_to,
    write_performance_to, FeatureTable, PerformanceTensor, ScenarioKey,
};
use crate::error::{Error, Result};
use crate::forest::{default_grid, nested_cv_train, CvOptions, HyperParams, NestedCvResult, OuterModel};
use crate::metarep::{performance2vec, shap_global, shap_local, MetaRep, RepKind};
use crate::portfolio::{
    full_portfolio, greedy_auc_portfolio, greedy_perfunc_portfolio, matched_random,
    personalized_portfolio, selector_portfolio, Method, PersonalizedTrace, Portfolio,
};
use crate::simgraph::{build_graph, GraphHeader, Sampler, DEFAULT_THRESHOLDS};
use crate::store::{layout, Store};
use crate::synth::{generate, SynthSpec};
use crate::treeshap::{read_shap_csv, shap_test_split, write_shap_csv, ShapContext, ShapVector};
use crate::util::{fmt_f64, sha256_hex};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Performance CSV; when absent the store's `data/performance.csv` is used.
    pub performance: Option<PathBuf>,
    /// Feature CSV; when absent the store's `data/features.csv` is used.
    pub features: Option<PathBuf>,
    /// Require the exact performance header instead of matching columns by name.
    pub strict_schema: bool,
    /// Replace missing feature values by the per-feature median.
    pub impute_features: bool,
    /// Generator spec for the `synth` stage.
    pub synth: Option<SynthSpec>,
    pub scenarios: Vec<ScenarioKey>,
    /// Global meta-representation kinds to build graphs and selectors from.
    pub kinds: Vec<RepKind>,
    pub thresholds: Vec<f64>,
    pub samplers: Vec<Sampler>,
    pub selector_seeds: Vec<u64>,
    pub grid: Vec<HyperParams>,
    pub global_seed: u64,
    /// Train forests on log10 precision.
    pub log10_target: bool,
    /// Build performance2vec from log10 medians.
    pub log10_p2v: bool,
    pub greedy_top: usize,
    pub greedy_per_problem: usize,
    pub personalized_per_problem: usize,
    pub output_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        let scenarios = [5, 30]
            .into_iter()
            .flat_map(|d| {
                [500, 2000, 5000, 10000, 50000]
                    .into_iter()
                    .map(move |b| ScenarioKey { dimension: d, budget: b })
            })
            .collect();
        Self {
            performance: None,
            features: None,
            strict_schema: true,
            impute_features: true,
            synth: None,
            scenarios,
            kinds: vec![RepKind::P2v, RepKind::ShapGlobal],
            thresholds: DEFAULT_THRESHOLDS.to_vec(),
            samplers: vec![Sampler::Mis, Sampler::Ds],
            selector_seeds: vec![1, 2, 3, 4, 5],
            grid: default_grid(),
            global_seed: 42,
            log10_target: false,
            log10_p2v: false,
            greedy_top: 10,
            greedy_per_problem: 2,
            personalized_per_problem: 2,
            output_dir: PathBuf::from("out"),
        }
    }
}

/// Small grid for desk-scale runs: 8 forests of 25 trees.
pub fn desk_grid() -> Vec<HyperParams> {
    let mut grid = Vec::new();
    for max_depth in [4, 16] {
        for min_samples_leaf in [1, 3] {
            for feature_fraction in [0.33, 1.0] {
                grid.push(HyperParams {
                    n_trees: 25,
                    max_depth,
                    min_samples_leaf,
                    feature_fraction,
                    bootstrap_seed: 0,
                });
            }
        }
    }
    grid
}

impl RunConfig {
    /// Synthetic desk configuration: default generator spec, its scenarios,
    /// three thresholds and the small grid.
    pub fn desk(output_dir: impl Into<PathBuf>) -> Self {
        let spec = SynthSpec::default();
        let scenarios = spec
            .dimensions
            .iter()
            .flat_map(|&d| spec.budgets.iter().map(move |&b| ScenarioKey { dimension: d, budget: b }))
            .collect();
        Self {
            synth: Some(spec),
            scenarios,
            thresholds: vec![0.70, 0.90, 0.95],
            grid: desk_grid(),
            output_dir: output_dir.into(),
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.into()));
        if self.scenarios.is_empty() {
            return bad("no scenarios");
        }
        if self.thresholds.is_empty() || self.thresholds.iter().any(|t| !(-1.0..=1.0).contains(t)) {
            return bad("thresholds must be a nonempty list within [-1, 1]");
        }
        if self.selector_seeds.is_empty() {
            return bad("no selector seeds");
        }
        if self.samplers.is_empty() {
            return bad("no samplers");
        }
        if self.kinds.is_empty() || self.kinds.contains(&RepKind::ShapLocal) {
            return bad("kinds must be a nonempty subset of P2V, SHAP_GLOBAL");
        }
        if self.grid.is_empty() {
            return bad("empty hyperparameter grid");
        }
        for hp in &self.grid {
            hp.validate()?;
        }
        if self.greedy_top == 0 || self.greedy_per_problem == 0 || self.personalized_per_problem == 0 {
            return bad("portfolio sizes must be positive");
        }
        for s in &self.scenarios {
            ScenarioKey::new(s.dimension, s.budget)?;
        }
        if let Some(spec) = &self.synth {
            spec.validate()?;
        }
        Ok(())
    }

    /// Hash of every field that influences results (the output directory does not).
    pub fn fingerprint(&self) -> Result<String> {
        let mut c = self.clone();
        c.output_dir = PathBuf::new();
        Ok(sha256_hex(&serde_json::to_vec(&c)?))
    }

    fn sorted_scenarios(&self) -> Vec<ScenarioKey> {
        let mut s = self.scenarios.clone();
        s.sort();
        s.dedup();
        s
    }

    fn sorted_thresholds(&self) -> Vec<f64> {
        let mut t = self.thresholds.clone();
        t.sort_by(f64::total_cmp);
        t.dedup();
        t
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportKind {
    Heatmap,
    Perfunc,
    Decomposition,
    Sizes,
    Lossdist,
}

impl ReportKind {
    pub const ALL: [ReportKind; 5] = [
        ReportKind::Heatmap,
        ReportKind::Perfunc,
        ReportKind::Decomposition,
        ReportKind::Sizes,
        ReportKind::Lossdist,
    ];
}

impl std::str::FromStr for ReportKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "heatmap" => ReportKind::Heatmap,
            "perfunc" => ReportKind::Perfunc,
            "decomposition" => ReportKind::Decomposition,
            "sizes" => ReportKind::Sizes,
            "lossdist" => ReportKind::Lossdist,
            other => return Err(Error::InvalidConfig(format!("unknown report kind `{other}`"))),
        })
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct TrainSummary {
    pub trained: usize,
    pub reused: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct PipelineSummary {
    pub train: TrainSummary,
    pub shap_files: usize,
    pub metarep_files: usize,
    pub graphs: usize,
    pub portfolios: usize,
    pub reports: usize,
    pub report_files: Vec<PathBuf>,
    /// Largest relative local-accuracy error over all explained predictions.
    pub max_local_accuracy_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataSummary {
    pub algorithms: usize,
    pub scenarios: usize,
    pub problems: usize,
    pub instances: usize,
    pub runs: usize,
    pub features: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelArtifact {
    pub algorithm: String,
    pub scenario: ScenarioKey,
    pub log10_target: bool,
    pub model: OuterModel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphArtifact {
    pub graph: GraphHeader,
    pub nodes: Vec<String>,
    pub edges: Vec<(String, String, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PersonalizedArtifact {
    pub portfolio: Portfolio,
    pub traces: Vec<PersonalizedTrace>,
}

/// A validated configuration bound to its artifact store and thread pool.
pub struct Context {
    pub config: RunConfig,
    pub store: Store,
    pool: rayon::ThreadPool,
}

impl Context {
    /// `jobs = None` uses every available core.
    pub fn new(config: RunConfig, jobs: Option<usize>) -> Result<Self> {
        config.validate()?;
        let store = Store::new(config.output_dir.clone(), config.fingerprint()?);
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs.unwrap_or(0))
            .build()
            .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;
        Ok(Self {
            config,
            store,
            pool,
        })
    }

    fn staged<T: Send>(&self, stage: &'static str, f: impl FnOnce() -> Result<T> + Send) -> Result<T> {
        info!("stage {stage}");
        self.pool.install(f).map_err(|e| e.in_stage(stage))
    }

    /// Generate synthetic data into the store.
    pub fn synth(&self) -> Result<DataSummary> {
        self.staged("synth", || {
            let spec = self.config.synth.clone().unwrap_or_default();
            let (t, table, truth) = generate(&spec)?;
            let mut buf = Vec::new();
            write_performance_to(&t, &mut buf)?;
            self.store.write_raw(layout::PERFORMANCE, &buf)?;
            let mut buf = Vec::new();
            write_features_to(&table, &mut buf)?;
            self.store.write_raw(layout::FEATURES, &buf)?;
            self.store.write_json(layout::GROUND_TRUTH, None, &truth)?;
            Ok(summarize(&t, &table))
        })
    }

    /// Load performance and features, checking schemas, alignment and scenarios.
    pub fn load_data(&self) -> Result<(PerformanceTensor, FeatureTable)> {
        let c = &self.config;
        let t = match &c.performance {
            Some(p) => load_performance(p, c.strict_schema)?,
            None => read_performance(self.store.read_raw(layout::PERFORMANCE)?.as_slice(), c.strict_schema)?,
        };
        let table = match &c.features {
            Some(p) => load_features(p, c.impute_features)?,
            None => read_features(self.store.read_raw(layout::FEATURES)?.as_slice(), c.impute_features)?,
        };
        table.check_alignment(&t)?;
        for &s in &c.scenarios {
            t.scenario_index(s)?;
        }
        Ok((t, table))
    }

    pub fn validate_data(&self) -> Result<DataSummary> {
        self.staged("validate", || {
            let (t, table) = self.load_data()?;
            Ok(summarize(&t, &table))
        })
    }

    fn model_fingerprint(
        &self,
        t: &PerformanceTensor,
        table: &FeatureTable,
        algorithm: &str,
        s: ScenarioKey,
    ) -> Result<String> {
        #[derive(Serialize)]
        struct Inputs<'a> {
            version: &'a str,
            algorithm: &'a str,
            scenario: ScenarioKey,
            targets: Vec<f64>,
            features: Vec<&'a [f64]>,
            grid: &'a [HyperParams],
            global_seed: u64,
            log10_target: bool,
        }
        let mut features = Vec::new();
        for p in t.problems() {
            for i in t.instances() {
                features.push(table.row(s.dimension, p, i)?);
            }
        }
        let inputs = Inputs {
            version: crate::store::VERSION,
            algorithm,
            scenario: s,
            targets: t.median_performance(s, algorithm)?,
            features,
            grid: &self.config.grid,
            global_seed: self.config.global_seed,
            log10_target: self.config.log10_target,
        };
        Ok(sha256_hex(&serde_json::to_vec(&inputs)?))
    }

    /// Nested cross-validation for every (algorithm, scenario); unchanged inputs are skipped.
    pub fn train(&self) -> Result<TrainSummary> {
        self.staged("train", || {
            let (t, table) = self.load_data()?;
            let k = t.instances().len();
            let items: Vec<(String, ScenarioKey)> = t
                .algorithms()
                .iter()
                .flat_map(|a| self.config.sorted_scenarios().into_iter().map(move |s| (a.clone(), s)))
                .collect();
            let opts = CvOptions {
                global_seed: self.config.global_seed,
                log10_target: self.config.log10_target,
            };
            let reused: Vec<bool> = items
                .par_iter()
                .map(|(a, s)| {
                    let fp = self.model_fingerprint(&t, &table, a, *s)?;
                    let fresh = (0..k).all(|split| {
                        self.store
                            .peek_header(&layout::model(a, *s, split))
                            .is_some_and(|h| h.inputs.as_deref() == Some(fp.as_str()))
                    });
                    if fresh {
                        return Ok(true);
                    }
                    let result = nested_cv_train(&table, &t, a, *s, &self.config.grid, &opts)?;
                    for m in result.splits {
                        let artifact = ModelArtifact {
                            algorithm: a.clone(),
                            scenario: *s,
                            log10_target: opts.log10_target,
                            model: m,
                        };
                        self.store.write_json(
                            &layout::model(a, *s, artifact.model.split),
                            Some(fp.clone()),
                            &artifact,
                        )?;
                    }
                    Ok(false)
                })
                .collect::<Result<_>>()?;
            let summary = TrainSummary {
                reused: reused.iter().filter(|&&r| r).count(),
                trained: reused.iter().filter(|&&r| !r).count(),
            };
            info!("trained {} model sets, reused {}", summary.trained, summary.reused);
            Ok(summary)
        })
    }

    fn load_models(&self, t: &PerformanceTensor, algorithm: &str, s: ScenarioKey) -> Result<NestedCvResult> {
        let mut splits = Vec::with_capacity(t.instances().len());
        let mut log10_target = false;
        for split in 0..t.instances().len() {
            let (_, m): (_, ModelArtifact) = self.store.read_json(&layout::model(algorithm, s, split))?;
            log10_target = m.log10_target;
            splits.push(m.model);
        }
        Ok(NestedCvResult {
            algorithm: algorithm.to_owned(),
            scenario: s,
            log10_target,
            splits,
        })
    }

    /// Trained models of every algorithm for one scenario.
    pub fn model_set(&self, t: &PerformanceTensor, s: ScenarioKey) -> Result<ModelSet> {
        let results = t
            .algorithms()
            .par_iter()
            .map(|a| self.load_models(t, a, s))
            .collect::<Result<Vec<_>>>()?;
        Ok(ModelSet::new(results))
    }

    /// Shapley values of every outer model on its test instances. Returns the
    /// number of files written and the largest local-accuracy error.
    pub fn shap(&self) -> Result<(usize, f64)> {
        self.staged("shap", || {
            let (t, table) = self.load_data()?;
            let items: Vec<(String, ScenarioKey)> = t
                .algorithms()
                .iter()
                .flat_map(|a| self.config.sorted_scenarios().into_iter().map(move |s| (a.clone(), s)))
                .collect();
            let errors = items
                .par_iter()
                .map(|(a, s)| {
                    let models = self.load_models(&t, a, *s)?;
                    let mut vectors = Vec::new();
                    let mut worst = 0.0f64;
                    for m in &models.splits {
                        let test: Vec<(String, String)> = t
                            .problems()
                            .iter()
                            .map(|p| (p.clone(), m.test_instance.clone()))
                            .collect();
                        let ctx = ShapContext {
                            algorithm: a,
                            scenario: *s,
                            split: m.split,
                        };
                        let vs = shap_test_split(&m.forest, &table, &ctx, &test)?;
                        for v in &vs {
                            let x = table.row(s.dimension, &v.problem, &v.instance)?;
                            let pred = crate::forest::predict(&m.forest, x)?;
                            worst = worst.max(crate::treeshap::local_accuracy_error(&v.phi, v.base_value, pred));
                        }
                        vectors.extend(vs);
                    }
                    let mut buf = Vec::new();
                    write_shap_csv(&vectors, table.feature_names(), &mut buf)?;
                    self.store.write_csv(&layout::shap(a, *s), None, &buf)?;
                    Ok(worst)
                })
                .collect::<Result<Vec<f64>>>()?;
            let worst = errors.iter().copied().fold(0.0, f64::max);
            info!("wrote {} Shapley files, max local-accuracy error {worst:e}", errors.len());
            Ok((errors.len(), worst))
        })
    }

    fn load_shap(&self, t: &PerformanceTensor, s: ScenarioKey) -> Result<Vec<ShapVector>> {
        let per_alg = t
            .algorithms()
            .par_iter()
            .map(|a| {
                let raw = self.store.read_raw(&layout::shap(a, s))?;
                Ok(read_shap_csv(raw.as_slice())?.1)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(per_alg.into_iter().flatten().collect())
    }

    /// performance2vec plus global and per-problem Shapley meta-representations.
    pub fn metarep(&self) -> Result<usize> {
        self.staged("metarep", || {
            let (t, _) = self.load_data()?;
            let k = t.instances().len();
            let mut written = 0;
            for s in self.config.sorted_scenarios() {
                let p2v = t
                    .algorithms()
                    .iter()
                    .map(|a| performance2vec(&t, s, a, self.config.log10_p2v))
                    .collect::<Result<Vec<_>>>()?;
                let values = self.load_shap(&t, s)?;
                let global = t
                    .algorithms()
                    .par_iter()
                    .map(|a| shap_global(&values, a, s, k))
                    .collect::<Result<Vec<_>>>()?;
                let local = t
                    .algorithms()
                    .par_iter()
                    .map(|a| {
                        t.problems()
                            .iter()
                            .map(|p| shap_local(&values, a, p, s, k))
                            .collect::<Result<Vec<_>>>()
                    })
                    .collect::<Result<Vec<_>>>()?
                    .into_iter()
                    .flatten()
                    .collect::<Vec<_>>();
                for (kind, reps) in [
                    (RepKind::P2v, &p2v),
                    (RepKind::ShapGlobal, &global),
                    (RepKind::ShapLocal, &local),
                ] {
                    self.store.write_json(&layout::metareps(kind.tag(), s), None, reps)?;
                    written += 1;
                }
            }
            Ok(written)
        })
    }

    fn load_reps(&self, kind: RepKind, s: ScenarioKey) -> Result<Vec<MetaRep>> {
        let (_, reps): (_, Vec<MetaRep>) = self.store.read_json(&layout::metareps(kind.tag(), s))?;
        for r in &reps {
            r.validate()?;
        }
        Ok(reps)
    }

    /// One similarity graph per kind × scenario × threshold.
    pub fn graph(&self) -> Result<usize> {
        self.staged("graph", || {
            let mut n = 0;
            for s in self.config.sorted_scenarios() {
                for &kind in &self.config.kinds {
                    let reps = self.load_reps(kind, s)?;
                    for thr in self.config.sorted_thresholds() {
                        let g = build_graph(&reps, thr)?;
                        let nodes = g.graph().nodes().to_vec();
                        let edges = g
                            .weighted_edges()
                            .into_iter()
                            .map(|(a, b, w)| (nodes[a].clone(), nodes[b].clone(), w))
                            .collect();
                        let artifact = GraphArtifact {
                            graph: g.header(),
                            nodes,
                            edges,
                        };
                        self.store.write_json(&layout::graph(kind.tag(), s, thr), None, &artifact)?;
                        n += 1;
                    }
                }
            }
            info!("wrote {n} graphs");
            Ok(n)
        })
    }

    /// SELECTOR portfolios for every kind, threshold, sampler and seed, plus
    /// personalized portfolios per threshold.
    pub fn select(&self) -> Result<usize> {
        self.staged("select", || {
            let (t, _) = self.load_data()?;
            let c = &self.config;
            let mut n = 0;
            for s in c.sorted_scenarios() {
                let mut selectors = Vec::new();
                for &kind in &c.kinds {
                    let reps = self.load_reps(kind, s)?;
                    for thr in c.sorted_thresholds() {
                        for &sampler in &c.samplers {
                            for &seed in &c.selector_seeds {
                                selectors.push(selector_portfolio(&reps, thr, sampler, seed)?);
                            }
                        }
                    }
                }
                let local = self.load_reps(RepKind::ShapLocal, s)?;
                let mut by_problem: BTreeMap<String, Vec<MetaRep>> = BTreeMap::new();
                for r in local {
                    by_problem.entry(r.problem.clone().unwrap_or_default()).or_default().push(r);
                }
                let personalized = c
                    .sorted_thresholds()
                    .into_iter()
                    .map(|thr| {
                        let (portfolio, traces) = personalized_portfolio(
                            &by_problem,
                            &t,
                            s,
                            thr,
                            &c.selector_seeds,
                            c.personalized_per_problem,
                        )?;
                        Ok(PersonalizedArtifact { portfolio, traces })
                    })
                    .collect::<Result<Vec<_>>>()?;
                n += selectors.len() + personalized.len();
                self.store.write_json(&layout::selectors(s), None, &selectors)?;
                self.store.write_json(&layout::personalized(s), None, &personalized)?;
            }
            Ok(n)
        })
    }

    fn load_candidates(&self, s: ScenarioKey) -> Result<Vec<Portfolio>> {
        let (_, mut selectors): (_, Vec<Portfolio>) = self.store.read_json(&layout::selectors(s))?;
        let (_, personalized): (_, Vec<PersonalizedArtifact>) =
            self.store.read_json(&layout::personalized(s))?;
        selectors.extend(personalized.into_iter().map(|p| p.portfolio));
        Ok(selectors)
    }

    /// FULL, greedy and size-matched random portfolios.
    pub fn baseline(&self) -> Result<usize> {
        self.staged("baseline", || {
            let (t, _) = self.load_data()?;
            let c = &self.config;
            let mut n = 0;
            for s in c.sorted_scenarios() {
                let mut out = vec![
                    full_portfolio(&t, s)?,
                    greedy_auc_portfolio(&t, s, c.greedy_top)?,
                    greedy_perfunc_portfolio(&t, s, c.greedy_per_problem)?,
                ];
                for p in self.load_candidates(s)? {
                    out.push(matched_random(t.algorithms(), &p, c.global_seed)?);
                }
                n += out.len();
                self.store.write_json(&layout::baselines(s), None, &out)?;
            }
            Ok(n)
        })
    }

    /// Every portfolio of a scenario: baselines first, then selectors and personalized.
    pub fn portfolios(&self, s: ScenarioKey) -> Result<Vec<Portfolio>> {
        let (_, mut all): (_, Vec<Portfolio>) = self.store.read_json(&layout::baselines(s))?;
        all.extend(self.load_candidates(s)?);
        Ok(all)
    }

    /// Loss reports for every portfolio.
    pub fn evaluate(&self) -> Result<usize> {
        self.staged("evaluate", || {
            let (t, table) = self.load_data()?;
            let mut n = 0;
            for s in self.config.sorted_scenarios() {
                let models = self.model_set(&t, s)?;
                let reports = self
                    .portfolios(s)?
                    .par_iter()
                    .map(|p| evaluate(&models, p, &table, &t, s))
                    .collect::<Result<Vec<_>>>()?;
                n += reports.len();
                self.store.write_json(&layout::reports(s), None, &reports)?;
            }
            Ok(n)
        })
    }

    pub fn load_reports(&self, s: ScenarioKey) -> Result<Vec<LossReport>> {
        Ok(self.store.read_json(&layout::reports(s))?.1)
    }

    /// Write one report family; returns the files written.
    pub fn report(&self, kind: ReportKind) -> Result<Vec<PathBuf>> {
        self.staged("report", || {
            let scenarios = self.config.sorted_scenarios();
            let mut files = Vec::new();
            let mut emit = |rel: String, body: Vec<u8>| -> Result<()> {
                self.store.write_csv(&rel, None, &body)?;
                files.push(self.store.path(&rel));
                Ok(())
            };
            match kind {
                ReportKind::Heatmap => {
                    let comparisons = scenarios
                        .iter()
                        .map(|&s| compare_portfolios(&self.load_reports(s)?))
                        .collect::<Result<Vec<_>>>()?;
                    let mut buf = Vec::new();
                    write_comparison_csv(&comparisons, &mut buf)?;
                    emit("reports/heatmap.csv".into(), buf)?;
                }
                ReportKind::Perfunc => {
                    for &s in &scenarios {
                        let selectors: Vec<_> = self
                            .load_reports(s)?
                            .into_iter()
                            .filter(|r| {
                                matches!(
                                    r.method,
                                    Method::Full | Method::Personalized | Method::GreedyAuc | Method::GreedyPerfunc
                                )
                            })
                            .map(|r| (r.portfolio_id, r.selections))
                            .collect();
                        let d = per_problem_distribution(&selectors)?;
                        let mut buf = Vec::new();
                        write_distribution_csv(&d, &mut buf)?;
                        emit(format!("reports/perfunc_{s}.csv"), buf)?;
                    }
                }
                ReportKind::Decomposition => {
                    let mut all = Vec::new();
                    for &s in &scenarios {
                        all.extend(self.load_reports(s)?);
                    }
                    let mut buf = Vec::new();
                    write_decomposition_csv(&all, &mut buf)?;
                    emit("reports/decomposition.csv".into(), buf)?;
                }
                ReportKind::Sizes => {
                    let mut portfolios = Vec::new();
                    for &s in &scenarios {
                        portfolios.extend(self.portfolios(s)?);
                    }
                    let (rows, means) = sizes_tables(&portfolios)?;
                    emit("reports/sizes.csv".into(), rows)?;
                    emit("reports/sizes_mean.csv".into(), means)?;
                }
                ReportKind::Lossdist => {
                    let mut all = Vec::new();
                    for &s in &scenarios {
                        all.extend(self.load_reports(s)?);
                    }
                    let mut buf = Vec::new();
                    write_loss_csv(&all, &mut buf)?;
                    emit("reports/lossdist.csv".into(), buf)?;
                }
            }
            Ok(files)
        })
    }

    /// Run every stage in order. Synthetic data is generated when no input
    /// paths are configured.
    pub fn pipeline(&self) -> Result<PipelineSummary> {
        if self.config.performance.is_none() && self.config.features.is_none() {
            self.synth()?;
        }
        self.validate_data()?;
        let train = self.train()?;
        let (shap_files, max_local_accuracy_error) = self.shap()?;
        let metarep_files = self.metarep()?;
        let graphs = self.graph()?;
        let portfolios = self.select()? + self.baseline()?;
        let reports = self.evaluate()?;
        let mut report_files = Vec::new();
        for kind in ReportKind::ALL {
            report_files.extend(self.report(kind)?);
        }
        Ok(PipelineSummary {
            train,
            shap_files,
            metarep_files,
            graphs,
            portfolios,
            reports,
            report_files,
            max_local_accuracy_error,
        })
    }
}

fn summarize(t: &PerformanceTensor, table: &FeatureTable) -> DataSummary {
    DataSummary {
        algorithms: t.algorithms().len(),
        scenarios: t.scenarios().len(),
        problems: t.problems().len(),
        instances: t.instances().len(),
        runs: t.n_runs(),
        features: table.n_features(),
    }
}

fn method_name(m: Method) -> String {
    serde_json::to_value(m)
        .ok()
        .and_then(|v| v.as_str().map(str::to_owned))
        .unwrap_or_default()
}

/// Per-portfolio sizes and their mean per (scenario, method, params).
pub fn sizes_tables(portfolios: &[Portfolio]) -> Result<(Vec<u8>, Vec<u8>)> {
    let mut rows = csv::Writer::from_writer(Vec::new());
    rows.write_record(["dimension", "budget", "method", "params", "seed", "portfolio_id", "size"])?;
    let mut groups: BTreeMap<(ScenarioKey, Method, String), Vec<usize>> = BTreeMap::new();
    for p in portfolios {
        rows.write_record([
            p.scenario.dimension.to_string(),
            p.scenario.budget.to_string(),
            method_name(p.method),
            p.params_label(),
            p.params.seed.map(|s| s.to_string()).unwrap_or_default(),
            p.id(),
            p.len().to_string(),
        ])?;
        groups
            .entry((p.scenario, p.method, p.params_label()))
            .or_default()
            .push(p.len());
    }
    let mut means = csv::Writer::from_writer(Vec::new());
    means.write_record(["dimension", "budget", "method", "params", "n_portfolios", "mean_size"])?;
    for ((s, m, params), sizes) in groups {
        means.write_record([
            s.dimension.to_string(),
            s.budget.to_string(),
            method_name(m),
            params,
            sizes.len().to_string(),
            fmt_f64(sizes.iter().sum::<usize>() as f64 / sizes.len() as f64),
        ])?;
    }
    let finish = |w: csv::Writer<Vec<u8>>| w.into_inner().map_err(|e| Error::io("<sizes csv>", e.into_error()));
    Ok((finish(rows)?, finish(means)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_shape() {
        let c = RunConfig::default();
        c.validate().unwrap();
        assert_eq!(c.scenarios.len(), 10);
        assert_eq!(c.thresholds.len(), 7);
        assert_eq!(c.selector_seeds.len(), 5);
        assert_eq!(c.kinds.len() * c.scenarios.len() * c.thresholds.len(), 140);
        RunConfig::desk("x").validate().unwrap();
    }

    #[test]
    fn config_json_overrides_defaults() {
        let c: RunConfig = serde_json::from_str(r#"{"global_seed": 7, "thresholds": [0.5]}"#).unwrap();
        assert_eq!(c.global_seed, 7);
        assert_eq!(c.thresholds, vec![0.5]);
        assert_eq!(c.selector_seeds, vec![1, 2, 3, 4, 5]);
        assert!(serde_json::from_str::<RunConfig>(r#"{"bogus": 1}"#).is_err());
    }

    #[test]
    fn invalid_configs() {
        let base = RunConfig::default();
        for c in [
            RunConfig { scenarios: vec![], ..base.clone() },
            RunConfig { thresholds: vec![], ..base.clone() },
            RunConfig { thresholds: vec![1.5], ..base.clone() },
            RunConfig { selector_seeds: vec![], ..base.clone() },
            RunConfig { kinds: vec![RepKind::ShapLocal], ..base.clone() },
            RunConfig { grid: vec![], ..base.clone() },
        ] {
            assert!(matches!(c.validate(), Err(Error::InvalidConfig(_))));
        }
    }

    #[test]
    fn fingerprint_ignores_output_dir() {
        let a = RunConfig::desk("a");
        let b = RunConfig::desk("b");
        assert_eq!(a.fingerprint().unwrap(), b.fingerprint().unwrap());
        let c = RunConfig { global_seed: 1, ..a.clone() };
        assert_ne!(a.fingerprint().unwrap(), c.fingerprint().unwrap());
    }

    #[test]
    fn report_kind_parsing() {
        assert_eq!("sizes".parse::<ReportKind>().unwrap(), ReportKind::Sizes);
        assert!("pie".parse::<ReportKind>().is_err());
    }

    #[test]
    fn missing_artifacts_reported() {
        let dir = tempfile::tempdir().unwrap();
        let ctx = Context::new(RunConfig::desk(dir.path()), Some(1)).unwrap();
        let err = ctx.train().unwrap_err();
        assert!(matches!(err.root(), Error::MissingArtifact(_)));
        assert!(matches!(err, Error::Stage { stage: "train", .. }));
    }
}
