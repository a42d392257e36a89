//! Exact path-dependent TreeSHAP for the regression forests in [`crate::forest`].
//!
//! The conditional expectation of a tree given a feature coalition follows the
//! split for features in the coalition and otherwise averages both children
//! weighted by their training cover. Shapley values of that set function are
//! computed in polynomial time by tracking, along each root-to-leaf path, the
//! proportion of coalitions of every size that reach the leaf.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::dataset::{FeatureTable, ScenarioKey};
use crate::error::{Error, Result};
use crate::forest::{Forest, NodeKind, RegressionTree};
use crate::util::fmt_f64;

/// Per-instance Shapley explanation of one outer-split model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapVector {
    pub algorithm: String,
    pub scenario: ScenarioKey,
    pub split: usize,
    pub problem: String,
    pub instance: String,
    pub phi: Vec<f64>,
    pub base_value: f64,
}

#[derive(Debug, Clone, Copy, Default)]
struct PathElement {
    feature: Option<usize>,
    zero_fraction: f64,
    one_fraction: f64,
    pweight: f64,
}

fn extend_path(
    path: &mut Vec<PathElement>,
    depth: usize,
    zero_fraction: f64,
    one_fraction: f64,
    feature: Option<usize>,
) {
    if path.len() <= depth {
        path.resize(depth + 1, PathElement::default());
    }
    path[depth] = PathElement {
        feature,
        zero_fraction,
        one_fraction,
        pweight: if depth == 0 { 1.0 } else { 0.0 },
    };
    let d1 = (depth + 1) as f64;
    for i in (0..depth).rev() {
        path[i + 1].pweight += one_fraction * path[i].pweight * (i + 1) as f64 / d1;
        path[i].pweight = zero_fraction * path[i].pweight * (depth - i) as f64 / d1;
    }
}

fn unwind_path(path: &mut [PathElement], depth: usize, index: usize) {
    let one = path[index].one_fraction;
    let zero = path[index].zero_fraction;
    let d1 = (depth + 1) as f64;
    let mut next_one_portion = path[depth].pweight;
    for i in (0..depth).rev() {
        if one != 0.0 {
            let tmp = path[i].pweight;
            path[i].pweight = next_one_portion * d1 / ((i + 1) as f64 * one);
            next_one_portion = tmp - path[i].pweight * zero * (depth - i) as f64 / d1;
        } else {
            path[i].pweight = path[i].pweight * d1 / (zero * (depth - i) as f64);
        }
    }
    for i in index..depth {
        path[i].feature = path[i + 1].feature;
        path[i].zero_fraction = path[i + 1].zero_fraction;
        path[i].one_fraction = path[i + 1].one_fraction;
    }
}

/// Total path weight after removing element `index`, without mutating the path.
fn unwound_path_sum(path: &[PathElement], depth: usize, index: usize) -> f64 {
    let one = path[index].one_fraction;
    let zero = path[index].zero_fraction;
    let d1 = (depth + 1) as f64;
    let mut next_one_portion = path[depth].pweight;
    let mut total = 0.0;
    for i in (0..depth).rev() {
        if one != 0.0 {
            let tmp = next_one_portion * d1 / ((i + 1) as f64 * one);
            total += tmp;
            next_one_portion = path[i].pweight - tmp * zero * (depth - i) as f64 / d1;
        } else if zero != 0.0 {
            total += path[i].pweight / zero / ((depth - i) as f64 / d1);
        }
    }
    total
}

struct Walker<'a> {
    tree: &'a RegressionTree,
    x: &'a [f64],
    phi: &'a mut [f64],
}

impl Walker<'_> {
    fn recurse(
        &mut self,
        node: usize,
        mut path: Vec<PathElement>,
        mut depth: usize,
        parent_zero: f64,
        parent_one: f64,
        parent_feature: Option<usize>,
    ) {
        extend_path(&mut path, depth, parent_zero, parent_one, parent_feature);
        let nodes = self.tree.nodes();
        match nodes[node].kind {
            NodeKind::Leaf { value } => {
                for i in 1..=depth {
                    let w = unwound_path_sum(&path, depth, i);
                    let el = path[i];
                    let q = el.feature.expect("only the root sentinel lacks a feature");
                    self.phi[q] += w * (el.one_fraction - el.zero_fraction) * value;
                }
            }
            NodeKind::Split {
                feature,
                threshold,
                left,
                right,
            } => {
                let (hot, cold) = if self.x[feature] <= threshold {
                    (left, right)
                } else {
                    (right, left)
                };
                let cover = nodes[node].cover as f64;
                let mut incoming_zero = 1.0;
                let mut incoming_one = 1.0;
                // A feature seen earlier on this path is merged into one element.
                if let Some(k) = (1..=depth).find(|&k| path[k].feature == Some(feature)) {
                    incoming_zero = path[k].zero_fraction;
                    incoming_one = path[k].one_fraction;
                    unwind_path(&mut path, depth, k);
                    depth -= 1;
                }
                let hot_zero = nodes[hot].cover as f64 / cover;
                let cold_zero = nodes[cold].cover as f64 / cover;
                self.recurse(
                    hot,
                    path.clone(),
                    depth + 1,
                    hot_zero * incoming_zero,
                    incoming_one,
                    Some(feature),
                );
                self.recurse(
                    cold,
                    path,
                    depth + 1,
                    cold_zero * incoming_zero,
                    0.0,
                    Some(feature),
                );
            }
        }
    }
}

/// Cover-weighted mean of the leaf values: the prediction under the empty coalition.
pub fn expected_value(tree: &RegressionTree) -> f64 {
    fn go(tree: &RegressionTree, n: usize) -> f64 {
        let nodes = tree.nodes();
        match nodes[n].kind {
            NodeKind::Leaf { value } => value,
            NodeKind::Split { left, right, .. } => {
                let c = nodes[n].cover as f64;
                (nodes[left].cover as f64 * go(tree, left) + nodes[right].cover as f64 * go(tree, right))
                    / c
            }
        }
    }
    go(tree, 0)
}

fn max_feature(tree: &RegressionTree) -> Option<usize> {
    tree.nodes()
        .iter()
        .filter_map(|n| match n.kind {
            NodeKind::Split { feature, .. } => Some(feature),
            NodeKind::Leaf { .. } => None,
        })
        .max()
}

/// Shapley values and base value of a single tree at `x`.
pub fn shap_tree(tree: &RegressionTree, x: &[f64]) -> Result<(Vec<f64>, f64)> {
    tree.check_covers()?;
    if let Some(q) = max_feature(tree) {
        if q >= x.len() {
            return Err(Error::DimensionMismatch {
                expected: q + 1,
                got: x.len(),
            });
        }
    }
    let mut phi = vec![0.0; x.len()];
    let mut walker = Walker {
        tree,
        x,
        phi: &mut phi,
    };
    walker.recurse(0, Vec::with_capacity(tree.depth() + 2), 0, 1.0, 1.0, None);
    Ok((phi, expected_value(tree)))
}

/// Mean of the per-tree Shapley values and base values.
pub fn shap_forest(f: &Forest, x: &[f64]) -> Result<(Vec<f64>, f64)> {
    if x.len() != f.n_features() {
        return Err(Error::DimensionMismatch {
            expected: f.n_features(),
            got: x.len(),
        });
    }
    let n = f.trees.len() as f64;
    let mut phi = vec![0.0; x.len()];
    let mut base = 0.0;
    for tree in &f.trees {
        let (p, b) = shap_tree(tree, x)?;
        for (acc, v) in phi.iter_mut().zip(p) {
            *acc += v;
        }
        base += b;
    }
    phi.iter_mut().for_each(|v| *v /= n);
    Ok((phi, base / n))
}

/// Identifies the model a batch of explanations belongs to.
#[derive(Debug, Clone)]
pub struct ShapContext<'a> {
    pub algorithm: &'a str,
    pub scenario: ScenarioKey,
    pub split: usize,
}

/// Explain every test instance of one outer split.
pub fn shap_test_split(
    f: &Forest,
    table: &FeatureTable,
    ctx: &ShapContext<'_>,
    test: &[(String, String)],
) -> Result<Vec<ShapVector>> {
    test.iter()
        .map(|(problem, instance)| {
            let x = table.row(ctx.scenario.dimension, problem, instance)?;
            let (phi, base_value) = shap_forest(f, x)?;
            Ok(ShapVector {
                algorithm: ctx.algorithm.to_owned(),
                scenario: ctx.scenario,
                split: ctx.split,
                problem: problem.clone(),
                instance: instance.clone(),
                phi,
                base_value,
            })
        })
        .collect()
}

/// Relative local-accuracy error `|base + Σφ − f(x)| / max(1, |f(x)|)`.
pub fn local_accuracy_error(phi: &[f64], base: f64, prediction: f64) -> f64 {
    let total = base + phi.iter().sum::<f64>();
    (total - prediction).abs() / prediction.abs().max(1.0)
}

const SHAP_KEYS: [&str; 7] = [
    "algorithm",
    "dimension",
    "budget",
    "split",
    "problem",
    "instance",
    "base",
];

pub fn write_shap_csv<W: Write>(
    vectors: &[ShapVector],
    feature_names: &[String],
    w: W,
) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    let mut head: Vec<String> = SHAP_KEYS.iter().map(|s| (*s).to_owned()).collect();
    head.extend(feature_names.iter().map(|f| format!("phi_{f}")));
    wtr.write_record(&head)?;
    for v in vectors {
        if v.phi.len() != feature_names.len() {
            return Err(Error::DimensionMismatch {
                expected: feature_names.len(),
                got: v.phi.len(),
            });
        }
        let mut rec = vec![
            v.algorithm.clone(),
            v.scenario.dimension.to_string(),
            v.scenario.budget.to_string(),
            v.split.to_string(),
            v.problem.clone(),
            v.instance.clone(),
            fmt_f64(v.base_value),
        ];
        rec.extend(v.phi.iter().map(|&x| fmt_f64(x)));
        wtr.write_record(&rec)?;
    }
    wtr.flush().map_err(|e| Error::io("<shap csv>", e))?;
    Ok(())
}

/// Parse a shap CSV; returns feature names (without the `phi_` prefix) and vectors.
pub fn read_shap_csv<R: Read>(r: R) -> Result<(Vec<String>, Vec<ShapVector>)> {
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(r);
    let head = rdr.headers()?.clone();
    if head.len() <= SHAP_KEYS.len() || head.iter().take(SHAP_KEYS.len()).ne(SHAP_KEYS) {
        return Err(Error::Schema("shap CSV header mismatch".into()));
    }
    let features = head
        .iter()
        .skip(SHAP_KEYS.len())
        .map(|h| h.strip_prefix("phi_").unwrap_or(h).to_owned())
        .collect();
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let num = |i: usize| -> Result<f64> {
            rec[i]
                .parse()
                .map_err(|_| Error::Schema(format!("bad number `{}`", &rec[i])))
        };
        let int = |i: usize| -> Result<u64> {
            rec[i]
                .parse()
                .map_err(|_| Error::Schema(format!("bad integer `{}`", &rec[i])))
        };
        out.push(ShapVector {
            algorithm: rec[0].to_owned(),
            scenario: ScenarioKey::new(int(1)? as u32, int(2)?)?,
            split: int(3)? as usize,
            problem: rec[4].to_owned(),
            instance: rec[5].to_owned(),
            base_value: num(6)?,
            phi: (SHAP_KEYS.len()..rec.len()).map(num).collect::<Result<_>>()?,
        });
    }
    Ok((features, out))
}
