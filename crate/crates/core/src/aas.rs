//! Regression-based algorithm selection restricted to a portfolio, loss
//! against the full virtual best solver, and its inner/outer decomposition.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{FeatureTable, PerformanceTensor, ScenarioKey};
use crate::error::{Error, Result};
use crate::forest::{predict, NestedCvResult, OuterModel, LOG_FLOOR};
use crate::portfolio::{Method, Portfolio};
use crate::util::fmt_f64;

/// Anything that predicts the performance of an algorithm on an instance.
pub trait Predictor: Sync {
    fn predict(&self, algorithm: &str, problem: &str, instance: &str, x: &[f64]) -> Result<f64>;
}

/// Trained nested-CV models for one scenario, keyed by algorithm.
#[derive(Debug, Clone, Default)]
pub struct ModelSet {
    models: BTreeMap<String, NestedCvResult>,
}

impl ModelSet {
    pub fn new(results: impl IntoIterator<Item = NestedCvResult>) -> Self {
        Self {
            models: results
                .into_iter()
                .map(|r| (r.algorithm.clone(), r))
                .collect(),
        }
    }

    pub fn algorithms(&self) -> impl Iterator<Item = &str> {
        self.models.keys().map(String::as_str)
    }

    pub fn get(&self, algorithm: &str) -> Option<&NestedCvResult> {
        self.models.get(algorithm)
    }

    /// The outer model whose test set holds `instance`. A model that saw the
    /// instance during training is never returned.
    pub fn model(&self, algorithm: &str, problem: &str, instance: &str) -> Result<&OuterModel> {
        self.models
            .get(algorithm)
            .and_then(|r| r.model_for_instance(instance))
            .filter(|m| !m.train_instances.iter().any(|i| i == instance))
            .ok_or_else(|| Error::MissingModel {
                algorithm: algorithm.to_owned(),
                problem: problem.to_owned(),
                instance: instance.to_owned(),
            })
    }
}

impl Predictor for ModelSet {
    fn predict(&self, algorithm: &str, problem: &str, instance: &str, x: &[f64]) -> Result<f64> {
        predict(&self.model(algorithm, problem, instance)?.forest, x)
    }
}

/// Predicts the true median precision: a perfect selector.
#[derive(Debug, Clone, Copy)]
pub struct OraclePredictor<'a> {
    pub tensor: &'a PerformanceTensor,
    pub scenario: ScenarioKey,
}

impl Predictor for OraclePredictor<'_> {
    fn predict(&self, algorithm: &str, problem: &str, instance: &str, _x: &[f64]) -> Result<f64> {
        let runs = self
            .tensor
            .runs(algorithm, self.scenario, problem, instance)?;
        Ok(crate::util::median(runs))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult {
    pub scenario: ScenarioKey,
    pub problem: String,
    pub instance: String,
    pub chosen: String,
    pub predicted: f64,
    pub achieved_precision: f64,
    pub vbs_full: (String, f64),
    pub vbs_portfolio: (String, f64),
}

/// `log10(max(f_a, 1e-12)) - log10(max(f_star, 1e-12))`.
pub fn loss(f_a: f64, f_star: f64) -> Result<f64> {
    for v in [f_a, f_star] {
        if !v.is_finite() || v < 0.0 {
            return Err(Error::NonFinite(v));
        }
    }
    Ok(log_clamped(f_a) - log_clamped(f_star))
}

fn log_clamped(v: f64) -> f64 {
    v.max(LOG_FLOOR).log10()
}

/// True per-instance medians of every algorithm, indexed `[algorithm][p * k + i]`.
struct Truth<'a> {
    t: &'a PerformanceTensor,
    medians: Vec<Vec<f64>>,
}

impl<'a> Truth<'a> {
    fn new(t: &'a PerformanceTensor, s: ScenarioKey) -> Result<Self> {
        let si = t.scenario_index(s)?;
        let medians = (0..t.algorithms().len())
            .into_par_iter()
            .map(|a| t.median_by_index(a, si))
            .collect();
        Ok(Self { t, medians })
    }

    /// Argmin over `candidates` (sorted ids), first index wins ties.
    fn best<'n>(&self, candidates: impl Iterator<Item = &'n str>, cell: usize) -> Result<(String, f64)> {
        let mut best: Option<(&str, f64)> = None;
        for c in candidates {
            let v = self.medians[self.t.algorithm_index(c)?][cell];
            if best.is_none_or(|(_, b)| v < b) {
                best = Some((c, v));
            }
        }
        let (name, v) = best.ok_or(Error::EmptyPortfolio)?;
        Ok((name.to_owned(), v))
    }
}

fn select_with(
    predictor: &dyn Predictor,
    portfolio: &Portfolio,
    table: &FeatureTable,
    truth: &Truth<'_>,
    s: ScenarioKey,
    p: usize,
    i: usize,
) -> Result<SelectionResult> {
    let t = truth.t;
    let problem = &t.problems()[p];
    let instance = &t.instances()[i];
    let x = table.row(s.dimension, problem, instance)?;
    let mut chosen: Option<(&str, f64)> = None;
    for m in &portfolio.members {
        let pred = predictor.predict(m, problem, instance, x)?;
        if !pred.is_finite() {
            return Err(Error::NonFinite(pred));
        }
        if chosen.is_none_or(|(_, b)| pred < b) {
            chosen = Some((m, pred));
        }
    }
    let (chosen, predicted) = chosen.ok_or(Error::EmptyPortfolio)?;
    let cell = p * t.instances().len() + i;
    Ok(SelectionResult {
        scenario: s,
        problem: problem.clone(),
        instance: instance.clone(),
        chosen: chosen.to_owned(),
        predicted,
        achieved_precision: truth.medians[t.algorithm_index(chosen)?][cell],
        vbs_full: truth.best(t.algorithms().iter().map(String::as_str), cell)?,
        vbs_portfolio: truth.best(portfolio.members.iter().map(String::as_str), cell)?,
    })
}

/// Pick the member with the best (lowest) predicted precision on one instance.
pub fn select(
    predictor: &dyn Predictor,
    portfolio: &Portfolio,
    table: &FeatureTable,
    t: &PerformanceTensor,
    s: ScenarioKey,
    problem: &str,
    instance: &str,
) -> Result<SelectionResult> {
    let p = t.problem_index(problem)?;
    let i = t
        .instance_index(instance)
        .ok_or_else(|| Error::MissingCell(format!("unknown instance `{instance}`")))?;
    select_with(predictor, portfolio, table, &Truth::new(t, s)?, s, p, i)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossRow {
    pub problem: String,
    pub instance: String,
    pub chosen: String,
    pub loss: f64,
    pub inner_loss: f64,
    pub outer_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub portfolio_id: String,
    pub method: Method,
    pub params: String,
    pub scenario: ScenarioKey,
    pub portfolio_size: usize,
    pub per_instance: Vec<LossRow>,
    pub selections: Vec<SelectionResult>,
    pub total_loss: f64,
    pub total_inner: f64,
    pub total_outer: f64,
    pub mean_loss: f64,
    pub mean_inner: f64,
    pub mean_outer: f64,
}

/// Select on every instance and decompose the loss against the full VBS.
///
/// Per row `loss = inner + outer` where `outer` compares the portfolio VBS with
/// the full VBS and `inner` compares the chosen member with the portfolio VBS.
pub fn evaluate(
    predictor: &dyn Predictor,
    portfolio: &Portfolio,
    table: &FeatureTable,
    t: &PerformanceTensor,
    s: ScenarioKey,
) -> Result<LossReport> {
    if portfolio.scenario != s {
        return Err(Error::ScenarioMismatch);
    }
    let truth = Truth::new(t, s)?;
    let (np, k) = (t.problems().len(), t.instances().len());
    let selections = (0..np * k)
        .into_par_iter()
        .map(|cell| select_with(predictor, portfolio, table, &truth, s, cell / k, cell % k))
        .collect::<Result<Vec<_>>>()?;

    let mut rows = Vec::with_capacity(selections.len());
    for r in &selections {
        let inner_loss = loss(r.achieved_precision, r.vbs_portfolio.1)?;
        let outer_loss = loss(r.vbs_portfolio.1, r.vbs_full.1)?;
        let total = inner_loss + outer_loss;
        debug_assert!((total - loss(r.achieved_precision, r.vbs_full.1)?).abs() <= 1e-12);
        rows.push(LossRow {
            problem: r.problem.clone(),
            instance: r.instance.clone(),
            chosen: r.chosen.clone(),
            loss: total,
            inner_loss,
            outer_loss,
        });
    }
    let total_inner: f64 = rows.iter().map(|r| r.inner_loss).sum();
    let total_outer: f64 = rows.iter().map(|r| r.outer_loss).sum();
    let total_loss = total_inner + total_outer;
    let n = rows.len() as f64;
    Ok(LossReport {
        portfolio_id: portfolio.id(),
        method: portfolio.method,
        params: portfolio.params_label(),
        scenario: s,
        portfolio_size: portfolio.len(),
        per_instance: rows,
        selections,
        total_loss,
        total_inner,
        total_outer,
        mean_loss: total_loss / n,
        mean_inner: total_inner / n,
        mean_outer: total_outer / n,
    })
}

/// Δ against the full portfolio for one report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PortfolioDelta {
    pub portfolio_id: String,
    pub method: Method,
    pub params: String,
    pub portfolio_size: usize,
    pub delta_total_loss_vs_full: f64,
}

/// Mean Δ over the seed replicates of one (method, params) configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub dimension: u32,
    pub budget: u64,
    pub method: Method,
    pub params: String,
    pub delta_total_loss_vs_full: f64,
    pub n_portfolios: usize,
    pub mean_portfolio_size: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub scenario: ScenarioKey,
    pub per_portfolio: Vec<PortfolioDelta>,
    pub rows: Vec<ComparisonRow>,
}

/// `Δ = total_loss(FULL) − total_loss(p)`; positive means the portfolio beats FULL.
pub fn compare_portfolios(reports: &[LossReport]) -> Result<Comparison> {
    let first = reports.first().ok_or(Error::EmptyInput)?;
    let scenario = first.scenario;
    if reports.iter().any(|r| r.scenario != scenario) {
        return Err(Error::ScenarioMismatch);
    }
    let full = reports
        .iter()
        .find(|r| r.method == Method::Full)
        .ok_or(Error::MissingFullReport)?
        .total_loss;
    let per_portfolio: Vec<PortfolioDelta> = reports
        .iter()
        .map(|r| PortfolioDelta {
            portfolio_id: r.portfolio_id.clone(),
            method: r.method,
            params: r.params.clone(),
            portfolio_size: r.portfolio_size,
            delta_total_loss_vs_full: full - r.total_loss,
        })
        .collect();
    let mut groups: BTreeMap<(Method, &str), Vec<&PortfolioDelta>> = BTreeMap::new();
    for d in &per_portfolio {
        groups.entry((d.method, d.params.as_str())).or_default().push(d);
    }
    let rows = groups
        .into_iter()
        .map(|((method, params), ds)| {
            let n = ds.len() as f64;
            ComparisonRow {
                dimension: scenario.dimension,
                budget: scenario.budget,
                method,
                params: params.to_owned(),
                delta_total_loss_vs_full: ds.iter().map(|d| d.delta_total_loss_vs_full).sum::<f64>() / n,
                n_portfolios: ds.len(),
                mean_portfolio_size: ds.iter().map(|d| d.portfolio_size as f64).sum::<f64>() / n,
            }
        })
        .collect();
    Ok(Comparison {
        scenario,
        per_portfolio,
        rows,
    })
}

/// Label of the virtual-best row in per-problem distributions.
pub const BEST_LABEL: &str = "Best";

/// Per problem and selector: log10 of the clamped achieved precision per
/// instance, in instance order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Distribution {
    pub scenario: Option<ScenarioKey>,
    pub values: BTreeMap<String, BTreeMap<String, Vec<(String, f64)>>>,
}

impl Distribution {
    pub fn get(&self, problem: &str, selector: &str) -> Option<&[(String, f64)]> {
        self.values.get(problem)?.get(selector).map(Vec::as_slice)
    }
}

/// Group achieved precisions by problem for every selector, adding the
/// virtual best solver as [`BEST_LABEL`].
pub fn per_problem_distribution(selectors: &[(String, Vec<SelectionResult>)]) -> Result<Distribution> {
    let (_, reference) = selectors.first().ok_or(Error::EmptyInput)?;
    let scenario = reference.first().ok_or(Error::EmptyInput)?.scenario;
    let mut out = Distribution {
        scenario: Some(scenario),
        values: BTreeMap::new(),
    };
    let mut push = |problem: &str, selector: &str, instance: &str, v: f64| {
        out.values
            .entry(problem.to_owned())
            .or_default()
            .entry(selector.to_owned())
            .or_default()
            .push((instance.to_owned(), log_clamped(v)));
    };
    for r in reference {
        push(&r.problem, BEST_LABEL, &r.instance, r.vbs_full.1);
    }
    for (label, results) in selectors {
        if results.len() != reference.len() {
            return Err(Error::LengthMismatch(results.len(), reference.len()));
        }
        for r in results {
            if r.scenario != scenario {
                return Err(Error::ScenarioMismatch);
            }
            push(&r.problem, label, &r.instance, r.achieved_precision);
        }
    }
    for per_selector in out.values.values_mut() {
        for v in per_selector.values_mut() {
            v.sort_by(|a, b| a.0.cmp(&b.0));
        }
    }
    Ok(out)
}

fn csv_writer<W: Write>(w: W) -> csv::Writer<W> {
    csv::WriterBuilder::new().from_writer(w)
}

pub fn write_loss_csv<W: Write>(reports: &[LossReport], w: W) -> Result<()> {
    let mut out = csv_writer(w);
    out.write_record([
        "portfolio_id",
        "dimension",
        "budget",
        "problem",
        "instance",
        "chosen",
        "loss",
        "inner_loss",
        "outer_loss",
    ])?;
    for r in reports {
        for row in &r.per_instance {
            out.write_record([
                r.portfolio_id.clone(),
                r.scenario.dimension.to_string(),
                r.scenario.budget.to_string(),
                row.problem.clone(),
                row.instance.clone(),
                row.chosen.clone(),
                fmt_f64(row.loss),
                fmt_f64(row.inner_loss),
                fmt_f64(row.outer_loss),
            ])?;
        }
    }
    out.flush().map_err(|e| Error::io("<loss csv>", e))
}

pub fn write_comparison_csv<W: Write>(comparisons: &[Comparison], w: W) -> Result<()> {
    let mut out = csv_writer(w);
    out.write_record(["dimension", "budget", "method", "params", "delta_total_loss_vs_full"])?;
    for c in comparisons {
        for r in &c.rows {
            out.write_record([
                r.dimension.to_string(),
                r.budget.to_string(),
                method_name(r.method),
                r.params.clone(),
                fmt_f64(r.delta_total_loss_vs_full),
            ])?;
        }
    }
    out.flush().map_err(|e| Error::io("<comparison csv>", e))
}

pub fn write_decomposition_csv<W: Write>(reports: &[LossReport], w: W) -> Result<()> {
    let mut out = csv_writer(w);
    out.write_record(["portfolio_id", "method", "mean_outer_loss", "mean_inner_loss"])?;
    for r in reports {
        out.write_record([
            r.portfolio_id.clone(),
            method_name(r.method),
            fmt_f64(r.mean_outer),
            fmt_f64(r.mean_inner),
        ])?;
    }
    out.flush().map_err(|e| Error::io("<decomposition csv>", e))
}

fn method_name(m: Method) -> String {
    serde_json::to_value(m)
        .ok()
        .and_then(|v| v.as_str().map(str::to_owned))
        .unwrap_or_default()
}

const DISTRIBUTION_HEADER: [&str; 6] = [
    "dimension",
    "budget",
    "problem",
    "selector",
    "instance",
    "log10_precision",
];

pub fn write_distribution_csv<W: Write>(d: &Distribution, w: W) -> Result<()> {
    let s = d.scenario.ok_or(Error::EmptyInput)?;
    let mut out = csv_writer(w);
    out.write_record(DISTRIBUTION_HEADER)?;
    for (problem, selectors) in &d.values {
        for (selector, values) in selectors {
            for (instance, v) in values {
                out.write_record([
                    s.dimension.to_string(),
                    s.budget.to_string(),
                    problem.clone(),
                    selector.clone(),
                    instance.clone(),
                    fmt_f64(*v),
                ])?;
            }
        }
    }
    out.flush().map_err(|e| Error::io("<distribution csv>", e))
}

pub fn read_distribution_csv<R: Read>(r: R) -> Result<Distribution> {
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(r);
    if rdr.headers()?.iter().ne(DISTRIBUTION_HEADER) {
        return Err(Error::Schema("unexpected distribution header".into()));
    }
    let mut d = Distribution::default();
    for rec in rdr.records() {
        let rec = rec?;
        let num = |i: usize| -> Result<f64> {
            rec[i]
                .parse()
                .map_err(|_| Error::Schema(format!("bad number `{}`", &rec[i])))
        };
        let s = ScenarioKey::new(num(0)? as u32, num(1)? as u64)?;
        if d.scenario.is_some_and(|x| x != s) {
            return Err(Error::ScenarioMismatch);
        }
        d.scenario = Some(s);
        d.values
            .entry(rec[2].to_owned())
            .or_default()
            .entry(rec[3].to_owned())
            .or_default()
            .push((rec[4].to_owned(), num(5)?));
    }
    Ok(d)
}
