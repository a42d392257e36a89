//! Random-forest regression and nested leave-one-instance-out cross-validation.
//!
//! Trees are CART regressors grown by greedy variance reduction. Every node
//! records its cover (number of training rows reaching it), which the
//! path-dependent TreeSHAP in [`crate::treeshap`] relies on.

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{FeatureTable, PerformanceTensor, ScenarioKey};
use crate::error::{Error, Result};
use crate::util::{derive_seed, mean};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum NodeKind {
    Leaf {
        value: f64,
    },
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Node {
    #[serde(flatten)]
    pub kind: NodeKind,
    pub cover: usize,
}

impl Node {
    pub fn leaf(value: f64, cover: usize) -> Self {
        Self {
            kind: NodeKind::Leaf { value },
            cover,
        }
    }

    pub fn split(feature: usize, threshold: f64, left: usize, right: usize, cover: usize) -> Self {
        Self {
            kind: NodeKind::Split {
                feature,
                threshold,
                left,
                right,
            },
            cover,
        }
    }
}

/// A binary regression tree stored as a flat node array; node 0 is the root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionTree {
    nodes: Vec<Node>,
}

impl RegressionTree {
    /// Build a tree from explicit nodes, checking that child links form a tree
    /// rooted at node 0.
    pub fn from_nodes(nodes: Vec<Node>) -> Result<Self> {
        if nodes.is_empty() {
            return Err(Error::EmptyInput);
        }
        let mut seen = vec![false; nodes.len()];
        let mut stack = vec![0usize];
        while let Some(n) = stack.pop() {
            if n >= nodes.len() || seen[n] {
                return Err(Error::InvalidPlan(format!("malformed tree at node {n}")));
            }
            seen[n] = true;
            if let NodeKind::Split { left, right, .. } = nodes[n].kind {
                stack.push(left);
                stack.push(right);
            }
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::InvalidPlan("unreachable tree nodes".into()));
        }
        Ok(Self { nodes })
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    /// Leaf value reached by routing `x` left when `x[feature] <= threshold`.
    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut n = 0;
        loop {
            match self.nodes[n].kind {
                NodeKind::Leaf { value } => return value,
                NodeKind::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => n = if x[feature] <= threshold { left } else { right },
            }
        }
    }

    /// Verify `cover(parent) = cover(left) + cover(right)` at every split.
    pub fn check_covers(&self) -> Result<()> {
        for (i, node) in self.nodes.iter().enumerate() {
            if node.cover == 0 {
                return Err(Error::CoverViolation(i));
            }
            if let NodeKind::Split { left, right, .. } = node.kind {
                if self.nodes[left].cover + self.nodes[right].cover != node.cover {
                    return Err(Error::CoverViolation(i));
                }
            }
        }
        Ok(())
    }

    pub fn depth(&self) -> usize {
        fn go(t: &RegressionTree, n: usize) -> usize {
            match t.nodes[n].kind {
                NodeKind::Leaf { .. } => 0,
                NodeKind::Split { left, right, .. } => 1 + go(t, left).max(go(t, right)),
            }
        }
        go(self, 0)
    }

    pub fn leaf_values(&self) -> impl Iterator<Item = f64> + '_ {
        self.nodes.iter().filter_map(|n| match n.kind {
            NodeKind::Leaf { value } => Some(value),
            NodeKind::Split { .. } => None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    pub n_trees: usize,
    pub max_depth: usize,
    pub min_samples_leaf: usize,
    pub feature_fraction: f64,
    #[serde(default)]
    pub bootstrap_seed: u64,
}

impl HyperParams {
    pub fn validate(&self) -> Result<()> {
        if self.n_trees == 0 || self.max_depth == 0 || self.min_samples_leaf == 0 {
            return Err(Error::InvalidHyperParams(format!(
                "n_trees, max_depth and min_samples_leaf must be positive: {self:?}"
            )));
        }
        if !(self.feature_fraction > 0.0 && self.feature_fraction <= 1.0) {
            return Err(Error::InvalidHyperParams(format!(
                "feature_fraction must lie in (0, 1], got {}",
                self.feature_fraction
            )));
        }
        Ok(())
    }

    fn n_candidates(&self, p: usize) -> usize {
        ((self.feature_fraction * p as f64).ceil() as usize).clamp(1, p)
    }
}

/// The default search grid, in declaration order.
pub fn default_grid() -> Vec<HyperParams> {
    let mut grid = Vec::with_capacity(16);
    for n_trees in [50, 100] {
        for max_depth in [8, 32] {
            for min_samples_leaf in [1, 5] {
                for feature_fraction in [0.33, 1.0] {
                    grid.push(HyperParams {
                        n_trees,
                        max_depth,
                        min_samples_leaf,
                        feature_fraction,
                        bootstrap_seed: 0,
                    });
                }
            }
        }
    }
    grid
}

fn check_training(x: &[Vec<f64>], y: &[f64]) -> Result<usize> {
    if x.is_empty() || y.is_empty() {
        return Err(Error::EmptyTraining);
    }
    if x.len() != y.len() {
        return Err(Error::LengthMismatch(x.len(), y.len()));
    }
    let p = x[0].len();
    if p == 0 {
        return Err(Error::DimensionMismatch { expected: 1, got: 0 });
    }
    for row in x {
        if row.len() != p {
            return Err(Error::DimensionMismatch {
                expected: p,
                got: row.len(),
            });
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteValue("training feature".into()));
        }
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteValue("training target".into()));
    }
    Ok(p)
}

struct SplitChoice {
    feature: usize,
    threshold: f64,
    gain: f64,
}

struct TreeBuilder<'a, R: Rng> {
    x: &'a [Vec<f64>],
    y: &'a [f64],
    hp: &'a HyperParams,
    rng: &'a mut R,
    n_candidates: usize,
    p: usize,
    nodes: Vec<Node>,
}

impl<R: Rng> TreeBuilder<'_, R> {
    fn build(&mut self, rows: Vec<usize>, depth: usize) -> usize {
        let id = self.nodes.len();
        let cover = rows.len();
        let first = self.y[rows[0]];
        let constant = rows.iter().all(|&r| self.y[r] == first);
        let value = if constant {
            first
        } else {
            rows.iter().map(|&r| self.y[r]).sum::<f64>() / cover as f64
        };
        self.nodes.push(Node::leaf(value, cover));
        if constant || depth >= self.hp.max_depth || cover < 2 * self.hp.min_samples_leaf {
            return id;
        }
        let Some(best) = self.best_split(&rows, value) else {
            return id;
        };
        let (left_rows, right_rows): (Vec<usize>, Vec<usize>) = rows
            .iter()
            .partition(|&&r| self.x[r][best.feature] <= best.threshold);
        let left = self.build(left_rows, depth + 1);
        let right = self.build(right_rows, depth + 1);
        self.nodes[id].kind = NodeKind::Split {
            feature: best.feature,
            threshold: best.threshold,
            left,
            right,
        };
        id
    }

    fn best_split(&mut self, rows: &[usize], node_mean: f64) -> Option<SplitChoice> {
        let n = rows.len();
        let centered_total: f64 = rows.iter().map(|&r| self.y[r] - node_mean).sum();
        let node_sse: f64 = rows.iter().map(|&r| (self.y[r] - node_mean).powi(2)).sum();
        if node_sse <= 0.0 {
            return None;
        }
        let base = centered_total * centered_total / n as f64;
        let candidates: Vec<usize> = if self.n_candidates == self.p {
            (0..self.p).collect()
        } else {
            let mut c = index::sample(self.rng, self.p, self.n_candidates).into_vec();
            c.sort_unstable();
            c
        };
        let min_leaf = self.hp.min_samples_leaf;
        let mut best: Option<SplitChoice> = None;
        let mut order = rows.to_vec();
        for f in candidates {
            order.sort_by(|&a, &b| self.x[a][f].total_cmp(&self.x[b][f]).then(a.cmp(&b)));
            let mut left_sum = 0.0;
            for t in 0..n - 1 {
                left_sum += self.y[order[t]] - node_mean;
                let n_left = t + 1;
                let n_right = n - n_left;
                let lo = self.x[order[t]][f];
                let hi = self.x[order[t + 1]][f];
                if n_left < min_leaf || n_right < min_leaf || lo >= hi {
                    continue;
                }
                let right_sum = centered_total - left_sum;
                let gain = left_sum * left_sum / n_left as f64
                    + right_sum * right_sum / n_right as f64
                    - base;
                if gain > node_sse * 1e-12 && best.as_ref().is_none_or(|b| gain > b.gain) {
                    let mid = lo + (hi - lo) / 2.0;
                    let threshold = if mid < hi { mid } else { lo };
                    best = Some(SplitChoice {
                        feature: f,
                        threshold,
                        gain,
                    });
                }
            }
        }
        best
    }
}

/// Grow one regression tree on all given rows.
pub fn fit_tree<R: Rng>(
    x: &[Vec<f64>],
    y: &[f64],
    hp: &HyperParams,
    rng: &mut R,
) -> Result<RegressionTree> {
    hp.validate()?;
    let p = check_training(x, y)?;
    let mut builder = TreeBuilder {
        x,
        y,
        hp,
        n_candidates: hp.n_candidates(p),
        p,
        rng,
        nodes: Vec::new(),
    };
    builder.build((0..x.len()).collect(), 0);
    Ok(RegressionTree {
        nodes: builder.nodes,
    })
}

/// Row resampling used when growing each tree of a forest.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Resample {
    /// Same-size sample with replacement.
    Bootstrap,
    /// Every tree sees the training rows as given.
    Identity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forest {
    pub trees: Vec<RegressionTree>,
    pub hyperparams: HyperParams,
    pub feature_names: Vec<String>,
}

impl Forest {
    pub fn with_feature_names(mut self, names: Vec<String>) -> Self {
        self.feature_names = names;
        self
    }

    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        predict(self, x)
    }
}

/// Fit `hp.n_trees` trees, tree `t` on a bootstrap resample seeded with
/// `hp.bootstrap_seed + t`.
pub fn fit_forest(x: &[Vec<f64>], y: &[f64], hp: &HyperParams) -> Result<Forest> {
    fit_forest_with(x, y, hp, Resample::Bootstrap)
}

pub fn fit_forest_with(
    x: &[Vec<f64>],
    y: &[f64],
    hp: &HyperParams,
    resample: Resample,
) -> Result<Forest> {
    hp.validate()?;
    let p = check_training(x, y)?;
    let n = x.len();
    let mut trees = Vec::with_capacity(hp.n_trees);
    for t in 0..hp.n_trees {
        let mut rng = ChaCha8Rng::seed_from_u64(hp.bootstrap_seed.wrapping_add(t as u64));
        let tree = match resample {
            Resample::Identity => fit_tree(x, y, hp, &mut rng)?,
            Resample::Bootstrap => {
                let picks: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
                let xb: Vec<Vec<f64>> = picks.iter().map(|&i| x[i].clone()).collect();
                let yb: Vec<f64> = picks.iter().map(|&i| y[i]).collect();
                fit_tree(&xb, &yb, hp, &mut rng)?
            }
        };
        trees.push(tree);
    }
    Ok(Forest {
        trees,
        hyperparams: hp.clone(),
        feature_names: (0..p).map(|q| format!("x{q}")).collect(),
    })
}

/// Mean of the per-tree predictions.
pub fn predict(f: &Forest, x: &[f64]) -> Result<f64> {
    if x.len() != f.n_features() {
        return Err(Error::DimensionMismatch {
            expected: f.n_features(),
            got: x.len(),
        });
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteValue("prediction input".into()));
    }
    Ok(f.trees.iter().map(|t| t.predict(x)).sum::<f64>() / f.trees.len() as f64)
}

/// Coefficient of determination. A constant target yields 1 for a perfect fit
/// and negative infinity otherwise.
pub fn r2_score(y_true: &[f64], y_pred: &[f64]) -> Result<f64> {
    if y_true.len() != y_pred.len() {
        return Err(Error::LengthMismatch(y_true.len(), y_pred.len()));
    }
    if y_true.is_empty() {
        return Err(Error::EmptyInput);
    }
    let m = mean(y_true);
    let ss_tot: f64 = y_true.iter().map(|y| (y - m).powi(2)).sum();
    let ss_res: f64 = y_true
        .iter()
        .zip(y_pred)
        .map(|(y, p)| (y - p).powi(2))
        .sum();
    if ss_tot == 0.0 {
        return Ok(if ss_res == 0.0 { 1.0 } else { f64::NEG_INFINITY });
    }
    Ok(1.0 - ss_res / ss_tot)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InnerSplit {
    pub validation: usize,
    pub train: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OuterSplit {
    pub test: usize,
    pub train: Vec<usize>,
    pub inner: Vec<InnerSplit>,
}

/// Leave-one-instance-out plan over instance indices `0..k`: outer split `j`
/// tests on instance `j` of every problem, and each inner split holds out one
/// of the remaining instances for validation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvPlan {
    pub k: usize,
    pub outer: Vec<OuterSplit>,
}

impl CvPlan {
    pub fn leave_one_instance_out(k: usize) -> Result<Self> {
        if k < 3 {
            return Err(Error::InvalidPlan(format!(
                "need at least 3 instances per problem, got {k}"
            )));
        }
        let outer = (0..k)
            .map(|test| {
                let train: Vec<usize> = (0..k).filter(|&i| i != test).collect();
                let inner = train
                    .iter()
                    .map(|&validation| InnerSplit {
                        validation,
                        train: train.iter().copied().filter(|&i| i != validation).collect(),
                    })
                    .collect();
                OuterSplit { test, train, inner }
            })
            .collect();
        Ok(Self { k, outer })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CvOptions {
    pub global_seed: u64,
    /// Train on log10 of the clamped median precision instead of raw values.
    #[serde(default)]
    pub log10_target: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestPrediction {
    pub problem: String,
    pub instance: String,
    pub target: f64,
    pub predicted: f64,
}

/// Outcome of one outer split: the model refit on the full outer training set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OuterModel {
    pub split: usize,
    pub test_instance: String,
    pub train_instances: Vec<String>,
    pub n_train_rows: usize,
    pub chosen_index: usize,
    pub chosen: HyperParams,
    /// Mean inner-validation R² of every grid candidate, in grid order.
    pub inner_scores: Vec<f64>,
    pub forest: Forest,
    pub test_predictions: Vec<TestPrediction>,
}

impl OuterModel {
    pub fn tests_instance(&self, instance: &str) -> bool {
        self.test_instance == instance
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NestedCvResult {
    pub algorithm: String,
    pub scenario: ScenarioKey,
    pub log10_target: bool,
    pub splits: Vec<OuterModel>,
}

impl NestedCvResult {
    /// The outer model whose test set contains `instance`.
    pub fn model_for_instance(&self, instance: &str) -> Option<&OuterModel> {
        self.splits.iter().find(|m| m.tests_instance(instance))
    }
}

pub(crate) const LOG_FLOOR: f64 = 1e-12;

/// Design matrix and targets for one algorithm and scenario, problem-major.
struct Rows {
    x: Vec<Vec<f64>>,
    y: Vec<f64>,
    n_problems: usize,
    k: usize,
}

impl Rows {
    fn select(&self, instances: &[usize]) -> (Vec<Vec<f64>>, Vec<f64>) {
        let mut xs = Vec::with_capacity(self.n_problems * instances.len());
        let mut ys = Vec::with_capacity(xs.capacity());
        for p in 0..self.n_problems {
            for &i in instances {
                xs.push(self.x[p * self.k + i].clone());
                ys.push(self.y[p * self.k + i]);
            }
        }
        (xs, ys)
    }
}

fn with_seed(hp: &HyperParams, seed: u64) -> HyperParams {
    HyperParams {
        bootstrap_seed: seed,
        ..hp.clone()
    }
}

/// Two-stage nested cross-validation with grid search for one algorithm and scenario.
pub fn nested_cv_train(
    table: &FeatureTable,
    t: &PerformanceTensor,
    algorithm: &str,
    s: ScenarioKey,
    grid: &[HyperParams],
    opts: &CvOptions,
) -> Result<NestedCvResult> {
    if grid.is_empty() {
        return Err(Error::InvalidHyperParams("empty grid".into()));
    }
    for hp in grid {
        hp.validate()?;
    }
    let k = t.instances().len();
    let plan = CvPlan::leave_one_instance_out(k)?;
    let medians = t.median_performance(s, algorithm)?;
    let y: Vec<f64> = if opts.log10_target {
        medians.iter().map(|v| v.max(LOG_FLOOR).log10()).collect()
    } else {
        medians
    };
    let mut x = Vec::with_capacity(y.len());
    for p in t.problems() {
        for i in t.instances() {
            x.push(table.row(s.dimension, p, i)?.to_vec());
        }
    }
    let rows = Rows {
        x,
        y,
        n_problems: t.problems().len(),
        k,
    };
    let dim = s.dimension.to_string();
    let budget = s.budget.to_string();
    let seed_for = |outer: usize, stage: &str, hp: &HyperParams| {
        derive_seed(
            opts.global_seed,
            &[
                algorithm,
                &dim,
                &budget,
                &outer.to_string(),
                stage,
                &hp.bootstrap_seed.to_string(),
            ],
        )
    };

    let mut splits = Vec::with_capacity(plan.outer.len());
    for outer in &plan.outer {
        let mut inner_scores = Vec::with_capacity(grid.len());
        for hp in grid {
            let mut scores = Vec::with_capacity(outer.inner.len());
            for (v, inner) in outer.inner.iter().enumerate() {
                let (xt, yt) = rows.select(&inner.train);
                let (xv, yv) = rows.select(&[inner.validation]);
                let hp_eff = with_seed(hp, seed_for(outer.test, &format!("inner{v}"), hp));
                let forest = fit_forest(&xt, &yt, &hp_eff)?;
                let pred = xv
                    .iter()
                    .map(|row| predict(&forest, row))
                    .collect::<Result<Vec<_>>>()?;
                scores.push(r2_score(&yv, &pred)?);
            }
            inner_scores.push(mean(&scores));
        }
        let mut chosen_index = 0;
        for (c, &score) in inner_scores.iter().enumerate() {
            if score > inner_scores[chosen_index] {
                chosen_index = c;
            }
        }
        let chosen = grid[chosen_index].clone();
        let (xt, yt) = rows.select(&outer.train);
        let hp_eff = with_seed(&chosen, seed_for(outer.test, "final", &chosen));
        let forest =
            fit_forest(&xt, &yt, &hp_eff)?.with_feature_names(table.feature_names().to_vec());
        let instance = &t.instances()[outer.test];
        let test_predictions = t
            .problems()
            .iter()
            .enumerate()
            .map(|(p, problem)| {
                let row = &rows.x[p * k + outer.test];
                Ok(TestPrediction {
                    problem: problem.clone(),
                    instance: instance.clone(),
                    target: rows.y[p * k + outer.test],
                    predicted: predict(&forest, row)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        splits.push(OuterModel {
            split: outer.test,
            test_instance: instance.clone(),
            train_instances: outer.train.iter().map(|&i| t.instances()[i].clone()).collect(),
            n_train_rows: xt.len(),
            chosen_index,
            chosen,
            inner_scores,
            forest,
            test_predictions,
        });
    }
    Ok(NestedCvResult {
        algorithm: algorithm.to_owned(),
        scenario: s,
        log10_target: opts.log10_target,
        splits,
    })
}
