//! On-disk artifact store: a plain directory tree of JSON and CSV files,
//! each stamped with the tool version and a configuration fingerprint.

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::{DeserializeOwned, IgnoredAny};
use serde::{Deserialize, Serialize};

use crate::dataset::ScenarioKey;
use crate::error::{Error, Result};
use crate::util::{fmt_f64, write_atomic};

pub const TOOL: &str = "portsel";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtifactHeader {
    pub tool: String,
    pub version: String,
    /// Fingerprint of the run configuration that wrote the artifact.
    pub config: String,
    /// Fingerprint of the inputs the artifact was computed from, when tracked.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inputs: Option<String>,
}

#[derive(Serialize, Deserialize)]
struct Envelope<T> {
    header: ArtifactHeader,
    data: T,
}

#[derive(Deserialize)]
struct HeaderOnly {
    header: ArtifactHeader,
    #[allow(dead_code)]
    data: IgnoredAny,
}

#[derive(Debug, Clone)]
pub struct Store {
    root: PathBuf,
    config: String,
}

impl Store {
    pub fn new(root: impl Into<PathBuf>, config_fingerprint: impl Into<String>) -> Self {
        Self {
            root: root.into(),
            config: config_fingerprint.into(),
        }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    pub fn exists(&self, rel: &str) -> bool {
        self.path(rel).is_file()
    }

    pub fn header(&self, inputs: Option<String>) -> ArtifactHeader {
        ArtifactHeader {
            tool: TOOL.into(),
            version: VERSION.into(),
            config: self.config.clone(),
            inputs,
        }
    }

    pub fn write_json<T: Serialize>(&self, rel: &str, inputs: Option<String>, data: &T) -> Result<()> {
        let env = Envelope {
            header: self.header(inputs),
            data,
        };
        let mut text = serde_json::to_vec_pretty(&env)?;
        text.push(b'\n');
        write_atomic(&self.path(rel), &text)
    }

    fn read_bytes(&self, rel: &str) -> Result<Vec<u8>> {
        let path = self.path(rel);
        match fs::read(&path) {
            Ok(b) => Ok(b),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Err(Error::MissingArtifact(path)),
            Err(e) => Err(Error::io(path, e)),
        }
    }

    pub fn read_json<T: DeserializeOwned>(&self, rel: &str) -> Result<(ArtifactHeader, T)> {
        let env: Envelope<T> = serde_json::from_slice(&self.read_bytes(rel)?)?;
        Ok((env.header, env.data))
    }

    /// Header of a JSON artifact, or `None` if it is absent or unreadable.
    pub fn peek_header(&self, rel: &str) -> Option<ArtifactHeader> {
        let bytes = fs::read(self.path(rel)).ok()?;
        serde_json::from_slice::<HeaderOnly>(&bytes).ok().map(|h| h.header)
    }

    /// Write a CSV body preceded by a `# {header}` comment line.
    pub fn write_csv(&self, rel: &str, inputs: Option<String>, body: &[u8]) -> Result<()> {
        let mut out = b"# ".to_vec();
        out.extend(serde_json::to_vec(&self.header(inputs))?);
        out.push(b'\n');
        out.extend_from_slice(body);
        write_atomic(&self.path(rel), &out)
    }

    /// Write a file verbatim, without a header.
    pub fn write_raw(&self, rel: &str, body: &[u8]) -> Result<()> {
        write_atomic(&self.path(rel), body)
    }

    /// Raw file contents, header comment included.
    pub fn read_raw(&self, rel: &str) -> Result<Vec<u8>> {
        self.read_bytes(rel)
    }
}

/// Relative artifact paths.
pub mod layout {
    use super::*;

    pub const PERFORMANCE: &str = "data/performance.csv";
    pub const FEATURES: &str = "data/features.csv";
    pub const GROUND_TRUTH: &str = "data/ground_truth.json";

    pub fn model(algorithm: &str, s: ScenarioKey, split: usize) -> String {
        format!("models/model_{algorithm}_{}_{}_{split}.json", s.dimension, s.budget)
    }

    pub fn shap(algorithm: &str, s: ScenarioKey) -> String {
        format!("shap/shap_{algorithm}_{s}.csv")
    }

    pub fn metareps(kind_tag: &str, s: ScenarioKey) -> String {
        format!("metareps/{kind_tag}_{s}.json")
    }

    pub fn graph(kind_tag: &str, s: ScenarioKey, threshold: f64) -> String {
        format!("graphs/{kind_tag}_{s}_t{}.json", fmt_f64(threshold))
    }

    pub fn selectors(s: ScenarioKey) -> String {
        format!("portfolios/selectors_{s}.json")
    }

    pub fn personalized(s: ScenarioKey) -> String {
        format!("portfolios/personalized_{s}.json")
    }

    pub fn baselines(s: ScenarioKey) -> String {
        format!("portfolios/baselines_{s}.json")
    }

    pub fn reports(s: ScenarioKey) -> String {
        format!("evaluation/reports_{s}.json")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_round_trip_and_header() {
        let dir = tempfile::tempdir().unwrap();
        let store = Store::new(dir.path(), "abc");
        store.write_json("x/y.json", Some("in".into()), &vec![1.5, 2.0]).unwrap();
        let (h, v): (_, Vec<f64>) = store.read_json("x/y.json").unwrap();
        assert_eq!(v, vec![1.5, 2.0]);
        assert_eq!(h.config, "abc");
        assert_eq!(h.tool, TOOL);
        assert_eq!(store.peek_header("x/y.json").unwrap().inputs.as_deref(), Some("in"));
        assert!(store.peek_header("nope.json").is_none());
        assert!(matches!(
            store.read_json::<Vec<f64>>("nope.json"),
            Err(Error::MissingArtifact(_))
        ));
    }

    #[test]
    fn csv_has_comment_header() {
        let dir = tempfile::tempdir().unwrap();
        let store = Store::new(dir.path(), "abc");
        store.write_csv("r.csv", None, b"a,b\n1,2\n").unwrap();
        let text = String::from_utf8(store.read_raw("r.csv").unwrap()).unwrap();
        let mut lines = text.lines();
        let first = lines.next().unwrap();
        let h: ArtifactHeader = serde_json::from_str(first.strip_prefix("# ").unwrap()).unwrap();
        assert_eq!(h.config, "abc");
        assert_eq!(lines.collect::<Vec<_>>(), vec!["a,b", "1,2"]);
        // no temporary files left behind
        let names: Vec<_> = fs::read_dir(dir.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
        assert_eq!(names.len(), 1);
    }

    #[test]
    fn layout_names() {
        let s = ScenarioKey::new(5, 500).unwrap();
        assert_eq!(layout::model("a01", s, 3), "models/model_a01_5_500_3.json");
        assert_eq!(layout::graph("shap", s, 0.7), "graphs/shap_d5_b500_t0.7.json");
    }
}
