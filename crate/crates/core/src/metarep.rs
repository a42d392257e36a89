//! Algorithm meta-representations: performance2vec and Shapley (global and per-problem).

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::dataset::{PerformanceTensor, ScenarioKey};
use crate::error::{Error, Result};
use crate::forest::LOG_FLOOR;
use crate::treeshap::ShapVector;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum RepKind {
    P2v,
    ShapGlobal,
    ShapLocal,
}

impl RepKind {
    pub fn tag(self) -> &'static str {
        match self {
            RepKind::P2v => "p2v",
            RepKind::ShapGlobal => "shap",
            RepKind::ShapLocal => "shap_local",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetaRep {
    pub algorithm: String,
    pub kind: RepKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub problem: Option<String>,
    #[serde(flatten)]
    pub scenario: ScenarioKey,
    pub vector: Vec<f64>,
}

impl MetaRep {
    /// Check the kind/problem pairing and finiteness.
    pub fn validate(&self) -> Result<()> {
        if (self.kind == RepKind::ShapLocal) != self.problem.is_some() {
            return Err(Error::MixedKinds);
        }
        if self.vector.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteValue(format!(
                "meta-representation of `{}`",
                self.algorithm
            )));
        }
        Ok(())
    }
}

/// Mean over instances of the per-instance median precision, one entry per problem.
///
/// With `log10`, medians are mapped to `log10(max(m, 1e-12))` before averaging.
pub fn performance2vec(
    t: &PerformanceTensor,
    s: ScenarioKey,
    algorithm: &str,
    log10: bool,
) -> Result<MetaRep> {
    let medians = t.median_performance(s, algorithm)?;
    let k = t.instances().len();
    let vector = medians
        .chunks(k)
        .map(|per_problem| {
            let sum: f64 = if log10 {
                per_problem.iter().map(|m| m.max(LOG_FLOOR).log10()).sum()
            } else {
                per_problem.iter().sum()
            };
            sum / k as f64
        })
        .collect();
    Ok(MetaRep {
        algorithm: algorithm.to_owned(),
        kind: RepKind::P2v,
        problem: None,
        scenario: s,
        vector,
    })
}

fn mean_vectors<'a>(vs: impl IntoIterator<Item = &'a [f64]>) -> Vec<f64> {
    let mut acc: Vec<f64> = Vec::new();
    let mut n = 0usize;
    for v in vs {
        if acc.is_empty() {
            acc = vec![0.0; v.len()];
        }
        for (a, x) in acc.iter_mut().zip(v) {
            *a += x;
        }
        n += 1;
    }
    acc.iter_mut().for_each(|a| *a /= n as f64);
    acc
}

/// Two-stage average: per split over its vectors, then over splits.
fn split_then_mean<'a>(
    vectors: impl Iterator<Item = &'a ShapVector>,
    expected_splits: usize,
) -> Result<Vec<f64>> {
    let mut by_split: BTreeMap<usize, Vec<&[f64]>> = BTreeMap::new();
    for v in vectors {
        by_split.entry(v.split).or_default().push(&v.phi);
    }
    if by_split.len() < expected_splits || by_split.is_empty() {
        return Err(Error::MissingSplit {
            expected: expected_splits,
            found: by_split.len(),
        });
    }
    let split_means: Vec<Vec<f64>> = by_split
        .values()
        .map(|vs| mean_vectors(vs.iter().copied()))
        .collect();
    Ok(mean_vectors(split_means.iter().map(Vec::as_slice)))
}

/// Global Shapley meta-representation of one algorithm.
pub fn shap_global(
    values: &[ShapVector],
    algorithm: &str,
    s: ScenarioKey,
    expected_splits: usize,
) -> Result<MetaRep> {
    let vector = split_then_mean(
        values
            .iter()
            .filter(|v| v.algorithm == algorithm && v.scenario == s),
        expected_splits,
    )?;
    Ok(MetaRep {
        algorithm: algorithm.to_owned(),
        kind: RepKind::ShapGlobal,
        problem: None,
        scenario: s,
        vector,
    })
}

/// Per-problem Shapley meta-representation of one algorithm.
pub fn shap_local(
    values: &[ShapVector],
    algorithm: &str,
    problem: &str,
    s: ScenarioKey,
    expected_splits: usize,
) -> Result<MetaRep> {
    let mut selected = values
        .iter()
        .filter(|v| v.algorithm == algorithm && v.scenario == s && v.problem == problem)
        .peekable();
    if selected.peek().is_none() {
        return Err(Error::UnknownProblem(problem.to_owned()));
    }
    let vector = split_then_mean(selected, expected_splits)?;
    Ok(MetaRep {
        algorithm: algorithm.to_owned(),
        kind: RepKind::ShapLocal,
        problem: Some(problem.to_owned()),
        scenario: s,
        vector,
    })
}

pub fn to_json(reps: &[MetaRep]) -> Result<String> {
    Ok(serde_json::to_string_pretty(reps)?)
}

pub fn from_json(text: &str) -> Result<Vec<MetaRep>> {
    let reps: Vec<MetaRep> = serde_json::from_str(text)?;
    for r in &reps {
        r.validate()?;
    }
    Ok(reps)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s() -> ScenarioKey {
        ScenarioKey::new(5, 500).unwrap()
    }

    fn sv(split: usize, problem: &str, instance: &str, phi: Vec<f64>) -> ShapVector {
        ShapVector {
            algorithm: "a".into(),
            scenario: s(),
            split,
            problem: problem.into(),
            instance: instance.into(),
            phi,
            base_value: 0.0,
        }
    }

    fn tensor(medians: &[[f64; 2]; 2]) -> PerformanceTensor {
        // one run per cell, so the median is the value itself
        let mut values = Vec::new();
        for p in medians {
            values.extend_from_slice(p);
        }
        PerformanceTensor::from_dense(
            vec!["a".into()],
            vec![s()],
            vec!["p1".into(), "p2".into()],
            vec!["1".into(), "2".into()],
            vec!["0".into()],
            values,
        )
        .unwrap()
    }

    #[test]
    fn p2v_means_of_pairs() {
        let t = tensor(&[[1.0, 3.0], [10.0, 30.0]]);
        let r = performance2vec(&t, s(), "a", false).unwrap();
        assert_eq!(r.vector, vec![2.0, 20.0]);
        assert_eq!(r.kind, RepKind::P2v);
        let r = performance2vec(&t, s(), "a", true).unwrap();
        assert!((r.vector[0] - (0.0 + 3f64.log10()) / 2.0).abs() < 1e-15);
    }

    #[test]
    fn p2v_constant_data() {
        let t = tensor(&[[0.7, 0.7], [0.7, 0.7]]);
        assert_eq!(performance2vec(&t, s(), "a", false).unwrap().vector, vec![0.7, 0.7]);
    }

    #[test]
    fn p2v_errors() {
        let t = tensor(&[[1.0, 1.0], [1.0, 1.0]]);
        assert!(matches!(
            performance2vec(&t, s(), "b", false),
            Err(Error::UnknownAlgorithm(_))
        ));
        assert!(matches!(
            performance2vec(&t, ScenarioKey::new(30, 500).unwrap(), "a", false),
            Err(Error::UnknownScenario { .. })
        ));
    }

    #[test]
    fn global_identical_vectors() {
        let v = vec![0.5, -1.0, 2.0];
        let values: Vec<ShapVector> = (0..5)
            .flat_map(|sp| {
                let v = v.clone();
                ["p1", "p2"].into_iter().map(move |p| sv(sp, p, &sp.to_string(), v.clone()))
            })
            .collect();
        assert_eq!(shap_global(&values, "a", s(), 5).unwrap().vector, v);
    }

    #[test]
    fn global_two_stage_mean() {
        // split 0 mean (1, 0), split 1 mean (3, 2); split 1 has unequal sizes
        let values = vec![
            sv(0, "p1", "1", vec![1.0, 0.0]),
            sv(1, "p1", "2", vec![2.0, 2.0]),
            sv(1, "p2", "2", vec![4.0, 2.0]),
        ];
        let r = shap_global(&values, "a", s(), 2).unwrap();
        assert_eq!(r.vector, vec![2.0, 1.0]);
        // flat mean would be (7/3, 4/3)
        assert_ne!(r.vector, vec![7.0 / 3.0, 4.0 / 3.0]);
    }

    #[test]
    fn missing_split_detected() {
        let values = vec![sv(0, "p1", "1", vec![1.0])];
        assert!(matches!(
            shap_global(&values, "a", s(), 5),
            Err(Error::MissingSplit {
                expected: 5,
                found: 1
            })
        ));
        assert!(matches!(
            shap_global(&values, "zz", s(), 5),
            Err(Error::MissingSplit { found: 0, .. })
        ));
    }

    #[test]
    fn local_single_instance_per_split() {
        let values: Vec<ShapVector> = (0..5)
            .flat_map(|sp| {
                [
                    sv(sp, "p1", &sp.to_string(), vec![sp as f64, 1.0]),
                    sv(sp, "p2", &sp.to_string(), vec![100.0, 100.0]),
                ]
            })
            .collect();
        let r = shap_local(&values, "a", "p1", s(), 5).unwrap();
        assert_eq!(r.vector, vec![2.0, 1.0]);
        assert_eq!(r.problem.as_deref(), Some("p1"));
        assert_eq!(r.kind, RepKind::ShapLocal);
        assert!(matches!(
            shap_local(&values, "a", "p9", s(), 5),
            Err(Error::UnknownProblem(_))
        ));
    }

    #[test]
    fn local_zero_vectors() {
        let values: Vec<ShapVector> = (0..3).map(|sp| sv(sp, "p1", "1", vec![0.0; 4])).collect();
        assert_eq!(
            shap_local(&values, "a", "p1", s(), 3).unwrap().vector,
            vec![0.0; 4]
        );
    }

    #[test]
    fn json_round_trip_and_validation() {
        let reps = vec![
            MetaRep {
                algorithm: "a".into(),
                kind: RepKind::ShapLocal,
                problem: Some("p1".into()),
                scenario: s(),
                vector: vec![1.0, -2.5],
            },
            MetaRep {
                algorithm: "b".into(),
                kind: RepKind::P2v,
                problem: None,
                scenario: s(),
                vector: vec![3.0],
            },
        ];
        let text = to_json(&reps).unwrap();
        assert!(text.contains("\"SHAP_LOCAL\""));
        assert!(text.contains("\"dimension\": 5"));
        assert_eq!(from_json(&text).unwrap(), reps);
        let bad = text.replace("\"SHAP_LOCAL\"", "\"SHAP_GLOBAL\"");
        assert!(matches!(from_json(&bad), Err(Error::MixedKinds)));
    }
}
