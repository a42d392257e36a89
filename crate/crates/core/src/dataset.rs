//! Performance data and ELA feature tables.
//!
//! A [`PerformanceTensor`] holds the fixed-budget precision of every algorithm on
//! every (scenario, problem, instance, run) cell, densely. A [`FeatureTable`]
//! holds one landscape feature vector per (dimension, problem, instance).
//! Identifier lists are kept in lexicographic order so that every downstream
//! tie-break is deterministic.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::util::{fmt_f64, median};

pub const PERFORMANCE_HEADER: [&str; 7] = [
    "algorithm",
    "dimension",
    "budget",
    "problem",
    "instance",
    "run",
    "precision",
];

/// Problem dimensionality plus function-evaluation budget.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ScenarioKey {
    pub dimension: u32,
    pub budget: u64,
}

impl ScenarioKey {
    pub fn new(dimension: u32, budget: u64) -> Result<Self> {
        if dimension == 0 || budget == 0 {
            return Err(Error::Schema(format!(
                "dimension and budget must be >= 1 (got {dimension}, {budget})"
            )));
        }
        Ok(Self { dimension, budget })
    }
}

impl std::fmt::Display for ScenarioKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "d{}_b{}", self.dimension, self.budget)
    }
}

/// One row of the performance CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct PerformanceRecord {
    pub algorithm: String,
    pub scenario: ScenarioKey,
    pub problem: String,
    pub instance: String,
    pub run: String,
    pub precision: f64,
}

/// Dense best-so-far precision values indexed by
/// (algorithm, scenario, problem, instance, run).
#[derive(Debug, Clone, PartialEq)]
pub struct PerformanceTensor {
    algorithms: Vec<String>,
    scenarios: Vec<ScenarioKey>,
    problems: Vec<String>,
    instances: Vec<String>,
    runs: Vec<String>,
    values: Vec<f64>,
}

fn check_precision(v: f64, ctx: impl FnOnce() -> String) -> Result<()> {
    if !v.is_finite() {
        return Err(Error::NonFiniteValue(ctx()));
    }
    if v < 0.0 {
        return Err(Error::Schema(format!("negative precision {v} at {}", ctx())));
    }
    Ok(())
}

fn index_of(list: &[String], id: &str) -> Option<usize> {
    list.binary_search_by(|s| s.as_str().cmp(id)).ok()
}

impl PerformanceTensor {
    /// Build a tensor from individual records, checking completeness and uniqueness.
    pub fn from_records(records: &[PerformanceRecord]) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::Schema("no performance rows".into()));
        }
        let sorted = |f: &dyn Fn(&PerformanceRecord) -> &str| -> Vec<String> {
            let set: BTreeSet<&str> = records.iter().map(f).collect();
            set.into_iter().map(str::to_owned).collect()
        };
        let algorithms = sorted(&|r| r.algorithm.as_str());
        let problems = sorted(&|r| r.problem.as_str());
        let instances = sorted(&|r| r.instance.as_str());
        let runs = sorted(&|r| r.run.as_str());
        let scenarios: Vec<ScenarioKey> = records
            .iter()
            .map(|r| r.scenario)
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();

        let mut shell = Self {
            algorithms,
            scenarios,
            problems,
            instances,
            runs,
            values: Vec::new(),
        };
        let mut cells: Vec<Option<f64>> = vec![None; shell.len()];
        let run_index: HashMap<&str, usize> = shell
            .runs
            .iter()
            .enumerate()
            .map(|(i, r)| (r.as_str(), i))
            .collect();
        for r in records {
            let describe = || {
                format!(
                    "{},{},{},{},{},{}",
                    r.algorithm, r.scenario.dimension, r.scenario.budget, r.problem, r.instance, r.run
                )
            };
            check_precision(r.precision, describe)?;
            let a = index_of(&shell.algorithms, &r.algorithm).expect("collected");
            let s = shell.scenarios.binary_search(&r.scenario).expect("collected");
            let p = index_of(&shell.problems, &r.problem).expect("collected");
            let i = index_of(&shell.instances, &r.instance).expect("collected");
            let run = run_index[r.run.as_str()];
            let at = shell.offset(a, s, p, i) + run;
            if cells[at].is_some() {
                return Err(Error::DuplicateRow(describe()));
            }
            cells[at] = Some(r.precision);
        }
        if let Some(missing) = cells.iter().position(Option::is_none) {
            return Err(Error::MissingCell(shell.describe_offset(missing)));
        }
        shell.values = cells.into_iter().map(|c| c.expect("checked")).collect();
        Ok(shell)
    }

    /// Build from identifier lists and a dense value vector laid out as
    /// `[algorithm][scenario][problem][instance][run]`. Lists must be sorted and unique.
    pub fn from_dense(
        algorithms: Vec<String>,
        scenarios: Vec<ScenarioKey>,
        problems: Vec<String>,
        instances: Vec<String>,
        runs: Vec<String>,
        values: Vec<f64>,
    ) -> Result<Self> {
        fn strictly_sorted<T: Ord>(v: &[T]) -> bool {
            v.windows(2).all(|w| w[0] < w[1])
        }
        if !(strictly_sorted(&algorithms)
            && strictly_sorted(&scenarios)
            && strictly_sorted(&problems)
            && strictly_sorted(&instances)
            && strictly_sorted(&runs))
        {
            return Err(Error::Schema(
                "identifier lists must be sorted and free of duplicates".into(),
            ));
        }
        let t = Self {
            algorithms,
            scenarios,
            problems,
            instances,
            runs,
            values,
        };
        let expected = t.algorithms.len()
            * t.scenarios.len()
            * t.problems.len()
            * t.instances.len()
            * t.runs.len();
        if expected == 0 {
            return Err(Error::Schema("empty identifier list".into()));
        }
        if t.values.len() != expected {
            return Err(Error::MissingCell(format!(
                "expected {expected} values, got {}",
                t.values.len()
            )));
        }
        for (at, &v) in t.values.iter().enumerate() {
            check_precision(v, || t.describe_offset(at))?;
        }
        Ok(t)
    }

    fn len(&self) -> usize {
        self.algorithms.len()
            * self.scenarios.len()
            * self.problems.len()
            * self.instances.len()
            * self.runs.len()
    }

    fn offset(&self, a: usize, s: usize, p: usize, i: usize) -> usize {
        let (ns, np, ni, nr) = (
            self.scenarios.len(),
            self.problems.len(),
            self.instances.len(),
            self.runs.len(),
        );
        (((a * ns + s) * np + p) * ni + i) * nr
    }

    fn describe_offset(&self, at: usize) -> String {
        let nr = self.runs.len();
        let ni = self.instances.len();
        let np = self.problems.len();
        let ns = self.scenarios.len();
        let run = at % nr;
        let i = (at / nr) % ni;
        let p = (at / nr / ni) % np;
        let s = (at / nr / ni / np) % ns;
        let a = at / nr / ni / np / ns;
        let sc = self.scenarios[s];
        format!(
            "{},{},{},{},{},{}",
            self.algorithms[a], sc.dimension, sc.budget, self.problems[p], self.instances[i], self.runs[run]
        )
    }

    pub fn algorithms(&self) -> &[String] {
        &self.algorithms
    }
    pub fn scenarios(&self) -> &[ScenarioKey] {
        &self.scenarios
    }
    pub fn problems(&self) -> &[String] {
        &self.problems
    }
    /// Instance identifiers, shared by every problem.
    pub fn instances(&self) -> &[String] {
        &self.instances
    }
    pub fn run_ids(&self) -> &[String] {
        &self.runs
    }
    pub fn n_runs(&self) -> usize {
        self.runs.len()
    }
    pub fn n_values(&self) -> usize {
        self.values.len()
    }

    /// Distinct dimensions, ascending.
    pub fn dimensions(&self) -> Vec<u32> {
        let mut d: Vec<u32> = self.scenarios.iter().map(|s| s.dimension).collect();
        d.dedup();
        d
    }

    pub fn algorithm_index(&self, algorithm: &str) -> Result<usize> {
        index_of(&self.algorithms, algorithm)
            .ok_or_else(|| Error::UnknownAlgorithm(algorithm.to_owned()))
    }
    pub fn scenario_index(&self, s: ScenarioKey) -> Result<usize> {
        self.scenarios
            .binary_search(&s)
            .map_err(|_| Error::UnknownScenario {
                dimension: s.dimension,
                budget: s.budget,
            })
    }
    pub fn problem_index(&self, problem: &str) -> Result<usize> {
        index_of(&self.problems, problem).ok_or_else(|| Error::UnknownProblem(problem.to_owned()))
    }
    pub fn instance_index(&self, instance: &str) -> Option<usize> {
        index_of(&self.instances, instance)
    }

    /// The m run values of one (algorithm, scenario, problem, instance) cell, by index.
    pub fn runs_at(&self, a: usize, s: usize, p: usize, i: usize) -> &[f64] {
        let at = self.offset(a, s, p, i);
        &self.values[at..at + self.runs.len()]
    }

    /// Run values by identifier.
    pub fn runs(
        &self,
        algorithm: &str,
        s: ScenarioKey,
        problem: &str,
        instance: &str,
    ) -> Result<&[f64]> {
        let a = self.algorithm_index(algorithm)?;
        let si = self.scenario_index(s)?;
        let p = self.problem_index(problem)?;
        let i = self
            .instance_index(instance)
            .ok_or_else(|| Error::MissingCell(format!("unknown instance `{instance}`")))?;
        Ok(self.runs_at(a, si, p, i))
    }

    /// Per-instance median over runs, laid out problem-major: entry
    /// `p * k + i` belongs to instance `i` of problem `p`.
    pub fn median_performance(&self, s: ScenarioKey, algorithm: &str) -> Result<Vec<f64>> {
        let a = self.algorithm_index(algorithm)?;
        let si = self.scenario_index(s)?;
        Ok(self.median_by_index(a, si))
    }

    pub(crate) fn median_by_index(&self, a: usize, s: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.problems.len() * self.instances.len());
        for p in 0..self.problems.len() {
            for i in 0..self.instances.len() {
                out.push(median(self.runs_at(a, s, p, i)));
            }
        }
        out
    }

    /// All records, in index order.
    pub fn records(&self) -> impl Iterator<Item = PerformanceRecord> + '_ {
        let nr = self.runs.len();
        self.values.iter().enumerate().map(move |(at, &v)| {
            let ni = self.instances.len();
            let np = self.problems.len();
            let ns = self.scenarios.len();
            let run = at % nr;
            let i = (at / nr) % ni;
            let p = (at / nr / ni) % np;
            let s = (at / nr / ni / np) % ns;
            let a = at / nr / ni / np / ns;
            PerformanceRecord {
                algorithm: self.algorithms[a].clone(),
                scenario: self.scenarios[s],
                problem: self.problems[p].clone(),
                instance: self.instances[i].clone(),
                run: self.runs[run].clone(),
                precision: v,
            }
        })
    }
}

fn csv_reader<R: Read>(reader: R, trim: bool) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(if trim { csv::Trim::All } else { csv::Trim::None })
        .from_reader(reader)
}

fn parse_field<T: std::str::FromStr>(raw: &str, column: &str, line: u64) -> Result<T> {
    raw.parse()
        .map_err(|_| Error::Schema(format!("line {line}: cannot parse {column} from `{raw}`")))
}

/// Read the performance CSV schema from any reader.
///
/// With `strict`, the header must be exactly
/// `algorithm,dimension,budget,problem,instance,run,precision`. Without it,
/// columns are matched by name, surrounding whitespace is trimmed and extra
/// columns are ignored.
pub fn read_performance<R: Read>(reader: R, strict: bool) -> Result<PerformanceTensor> {
    let mut rdr = csv_reader(reader, !strict);
    let headers = rdr.headers()?.clone();
    let columns: Vec<usize> = if strict {
        if headers.iter().collect::<Vec<_>>() != PERFORMANCE_HEADER {
            return Err(Error::Schema(format!(
                "performance header must be `{}`, found `{}`",
                PERFORMANCE_HEADER.join(","),
                headers.iter().collect::<Vec<_>>().join(",")
            )));
        }
        (0..PERFORMANCE_HEADER.len()).collect()
    } else {
        PERFORMANCE_HEADER
            .iter()
            .map(|name| {
                headers
                    .iter()
                    .position(|h| h == *name)
                    .ok_or_else(|| Error::Schema(format!("missing column `{name}`")))
            })
            .collect::<Result<_>>()?
    };
    let mut records = Vec::new();
    for row in rdr.records() {
        let row = row?;
        let line = row.position().map_or(0, |p| p.line());
        let get = |c: usize| -> Result<&str> {
            row.get(columns[c])
                .ok_or_else(|| Error::Schema(format!("line {line}: too few fields")))
        };
        let precision_raw = get(6)?;
        let precision: f64 = parse_field(precision_raw, "precision", line)?;
        records.push(PerformanceRecord {
            algorithm: get(0)?.to_owned(),
            scenario: ScenarioKey::new(
                parse_field(get(1)?, "dimension", line)?,
                parse_field(get(2)?, "budget", line)?,
            )?,
            problem: get(3)?.to_owned(),
            instance: get(4)?.to_owned(),
            run: get(5)?.to_owned(),
            precision,
        });
    }
    PerformanceTensor::from_records(&records)
}

pub fn load_performance(path: &Path, strict: bool) -> Result<PerformanceTensor> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    read_performance(std::io::BufReader::new(f), strict)
}

pub fn write_performance_to<W: Write>(t: &PerformanceTensor, w: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(PERFORMANCE_HEADER)?;
    for r in t.records() {
        wtr.write_record([
            r.algorithm.as_str(),
            &r.scenario.dimension.to_string(),
            &r.scenario.budget.to_string(),
            &r.problem,
            &r.instance,
            &r.run,
            &fmt_f64(r.precision),
        ])?;
    }
    wtr.flush().map_err(|e| Error::io("<performance csv>", e))?;
    Ok(())
}

pub fn write_performance(t: &PerformanceTensor, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    write_performance_to(t, &mut buf)?;
    crate::util::write_atomic(path, &buf)
}

/// Row key of a feature table.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct FeatureKey {
    pub dimension: u32,
    pub problem: String,
    pub instance: String,
}

impl FeatureKey {
    pub fn new(dimension: u32, problem: impl Into<String>, instance: impl Into<String>) -> Self {
        Self {
            dimension,
            problem: problem.into(),
            instance: instance.into(),
        }
    }
}

/// Landscape feature vectors keyed by (dimension, problem, instance).
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTable {
    features: Vec<String>,
    rows: BTreeMap<FeatureKey, Vec<f64>>,
}

impl FeatureTable {
    /// Build a table, optionally imputing non-finite entries with the
    /// per-feature median of the finite values.
    pub fn new(
        features: Vec<String>,
        rows: BTreeMap<FeatureKey, Vec<f64>>,
        impute: bool,
    ) -> Result<Self> {
        if features.is_empty() {
            return Err(Error::Schema("feature table has no feature columns".into()));
        }
        let unique: BTreeSet<&String> = features.iter().collect();
        if unique.len() != features.len() {
            return Err(Error::Schema("duplicate feature names".into()));
        }
        let p = features.len();
        for (k, v) in &rows {
            if v.len() != p {
                return Err(Error::Schema(format!(
                    "row {}/{}/{} has {} entries, expected {p}",
                    k.dimension,
                    k.problem,
                    k.instance,
                    v.len()
                )));
            }
        }
        let mut table = Self { features, rows };
        if impute {
            table.impute_medians()?;
        } else if let Some((k, q)) = table.first_non_finite() {
            return Err(Error::NonFiniteValue(format!(
                "feature `{}` at {}/{}/{}",
                table.features[q], k.dimension, k.problem, k.instance
            )));
        }
        Ok(table)
    }

    fn first_non_finite(&self) -> Option<(&FeatureKey, usize)> {
        self.rows
            .iter()
            .find_map(|(k, v)| v.iter().position(|x| !x.is_finite()).map(|q| (k, q)))
    }

    fn impute_medians(&mut self) -> Result<()> {
        for q in 0..self.features.len() {
            let finite: Vec<f64> = self
                .rows
                .values()
                .map(|v| v[q])
                .filter(|x| x.is_finite())
                .collect();
            if finite.is_empty() {
                return Err(Error::EmptyFeature(self.features[q].clone()));
            }
            if finite.len() == self.rows.len() {
                continue;
            }
            let fill = median(&finite);
            for v in self.rows.values_mut() {
                if !v[q].is_finite() {
                    v[q] = fill;
                }
            }
        }
        Ok(())
    }

    pub fn feature_names(&self) -> &[String] {
        &self.features
    }
    pub fn n_features(&self) -> usize {
        self.features.len()
    }
    pub fn rows(&self) -> &BTreeMap<FeatureKey, Vec<f64>> {
        &self.rows
    }

    pub fn row(&self, dimension: u32, problem: &str, instance: &str) -> Result<&[f64]> {
        self.rows
            .get(&FeatureKey::new(dimension, problem, instance))
            .map(Vec::as_slice)
            .ok_or_else(|| Error::MissingFeatures {
                dimension,
                problem: problem.to_owned(),
                instance: instance.to_owned(),
            })
    }

    /// Check that, for each dimension of `t`, the table covers exactly the
    /// tensor's (problem, instance) grid.
    pub fn check_alignment(&self, t: &PerformanceTensor) -> Result<()> {
        for d in t.dimensions() {
            let have: BTreeSet<(&str, &str)> = self
                .rows
                .keys()
                .filter(|k| k.dimension == d)
                .map(|k| (k.problem.as_str(), k.instance.as_str()))
                .collect();
            let want: BTreeSet<(&str, &str)> = t
                .problems()
                .iter()
                .flat_map(|p| t.instances().iter().map(move |i| (p.as_str(), i.as_str())))
                .collect();
            if have != want {
                let missing = want.difference(&have).next();
                let extra = have.difference(&want).next();
                return Err(Error::FeatureMismatch(format!(
                    "dimension {d}: first missing {missing:?}, first extra {extra:?}"
                )));
            }
        }
        Ok(())
    }
}

fn parse_feature_cell(raw: &str, line: u64, column: &str) -> Result<f64> {
    let s = raw.trim();
    if s.is_empty() || s.eq_ignore_ascii_case("nan") {
        return Ok(f64::NAN);
    }
    parse_field(s, column, line)
}

/// Read the wide feature CSV (`dimension,problem,instance,<features...>`).
pub fn read_features<R: Read>(reader: R, impute: bool) -> Result<FeatureTable> {
    let mut rdr = csv_reader(reader, true);
    let headers = rdr.headers()?.clone();
    let head: Vec<&str> = headers.iter().collect();
    if head.len() < 4 || head[..3] != ["dimension", "problem", "instance"] {
        return Err(Error::Schema(
            "feature header must start with `dimension,problem,instance` and name at least one feature"
                .into(),
        ));
    }
    let features: Vec<String> = head[3..].iter().map(|s| (*s).to_owned()).collect();
    let mut rows = BTreeMap::new();
    for row in rdr.records() {
        let row = row?;
        let line = row.position().map_or(0, |p| p.line());
        if row.len() != head.len() {
            return Err(Error::Schema(format!(
                "line {line}: expected {} fields, found {}",
                head.len(),
                row.len()
            )));
        }
        let key = FeatureKey::new(
            parse_field(&row[0], "dimension", line)?,
            &row[1],
            &row[2],
        );
        let values = (3..row.len())
            .map(|c| parse_feature_cell(&row[c], line, head[c]))
            .collect::<Result<Vec<_>>>()?;
        if rows.contains_key(&key) {
            return Err(Error::DuplicateRow(format!(
                "{},{},{}",
                key.dimension, key.problem, key.instance
            )));
        }
        rows.insert(key, values);
    }
    FeatureTable::new(features, rows, impute)
}

pub fn load_features(path: &Path, impute: bool) -> Result<FeatureTable> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    read_features(std::io::BufReader::new(f), impute)
}

pub fn write_features_to<W: Write>(table: &FeatureTable, w: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    let mut head = vec!["dimension".to_owned(), "problem".into(), "instance".into()];
    head.extend(table.features.iter().cloned());
    wtr.write_record(&head)?;
    for (k, v) in &table.rows {
        let mut rec = vec![k.dimension.to_string(), k.problem.clone(), k.instance.clone()];
        rec.extend(v.iter().map(|&x| fmt_f64(x)));
        wtr.write_record(&rec)?;
    }
    wtr.flush().map_err(|e| Error::io("<features csv>", e))?;
    Ok(())
}

pub fn write_features(table: &FeatureTable, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    write_features_to(table, &mut buf)?;
    crate::util::write_atomic(path, &buf)
}
