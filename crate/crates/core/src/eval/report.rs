use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::metrics::AlignmentScore;
use crate::canonical::canonical_json;
use crate::dataworld::Setting;
use crate::error::{Error, Result};

/// Where a report came from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunMeta {
    pub seed: u64,
    /// Hash of the canonical JSON of the configuration that produced the run.
    pub config_hash: String,
    pub wall_time_secs: f64,
}

/// One point of the bias-ordered accuracy curve.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BiasPoint {
    pub relation: usize,
    pub bias: f64,
    /// Top-1 accuracy on the test pairs; absent when the relation has no
    /// test pair.
    pub accuracy: Option<f64>,
}

/// Metrics of one trained model on one setting.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsReport {
    pub setting: Setting,
    /// Ablation variant name, when the run came from the harness.
    pub variant: Option<String>,
    pub recall_at_50: f64,
    pub recall_at_100: f64,
    /// Top-1 accuracy keyed by relation id; relations without test pairs
    /// are absent.
    pub per_relation_accuracy: BTreeMap<usize, f64>,
    /// Mean overlap ratio over ground-truth test pairs on the map the
    /// classifier reads.
    pub overlap_ratio: f64,
    /// Absent when no test subject has two candidate objects.
    pub alignment: Option<AlignmentScore>,
    /// Relations in ascending order of training bias.
    pub bias_curve: Vec<BiasPoint>,
    pub meta: RunMeta,
}

impl MetricsReport {
    pub fn to_json(&self) -> Result<String> {
        canonical_json(self)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// Equality of everything except wall time.
    pub fn same_results(&self, other: &MetricsReport) -> bool {
        let mut a = self.clone();
        a.meta.wall_time_secs = other.meta.wall_time_secs;
        &a == other
    }

    pub fn per_relation_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["relation", "accuracy"]).map_err(csv_err)?;
        for (r, a) in &self.per_relation_accuracy {
            w.write_record([r.to_string(), a.to_string()]).map_err(csv_err)?;
        }
        finish(w)
    }

    pub fn bias_curve_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["rank", "relation", "bias", "accuracy"])
            .map_err(csv_err)?;
        for (i, p) in self.bias_curve.iter().enumerate() {
            let acc = p.accuracy.map_or_else(String::new, |a| a.to_string());
            w.write_record([i.to_string(), p.relation.to_string(), p.bias.to_string(), acc])
                .map_err(csv_err)?;
        }
        finish(w)
    }

    /// Writes `metrics.json`, `per_relation.csv` and `bias_curve.csv` into
    /// `dir`, creating it if needed.
    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let files = [
            ("metrics.json", self.to_json()? + "\n"),
            ("per_relation.csv", self.per_relation_csv()?),
            ("bias_curve.csv", self.bias_curve_csv()?),
        ];
        for (name, text) in files {
            let path = dir.join(name);
            std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }

    /// Reads `metrics.json` from a directory written by [`write_dir`](Self::write_dir).
    pub fn read_dir(dir: &Path) -> Result<Self> {
        let path = dir.join("metrics.json");
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        Self::from_json(&text)
    }
}

pub(crate) fn csv_err(e: csv::Error) -> Error {
    Error::Data(format!("csv: {e}"))
}

pub(crate) fn finish(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w.into_inner().map_err(|e| Error::Data(format!("csv: {e}")))?;
    String::from_utf8(bytes).map_err(|e| Error::Data(format!("csv: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn sample() -> MetricsReport {
        MetricsReport {
            setting: Setting::ZeroShot,
            variant: Some("sta".into()),
            recall_at_50: 0.4,
            recall_at_100: 0.55,
            per_relation_accuracy: BTreeMap::from([(0, 0.5), (3, 1.0 / 3.0)]),
            overlap_ratio: 0.123456789012345,
            alignment: Some(AlignmentScore {
                rate: 0.7,
                baseline: 0.3,
                subjects: 40,
            }),
            bias_curve: vec![
                BiasPoint {
                    relation: 3,
                    bias: 1.5,
                    accuracy: Some(1.0 / 3.0),
                },
                BiasPoint {
                    relation: 1,
                    bias: 7.0,
                    accuracy: None,
                },
            ],
            meta: RunMeta {
                seed: 9,
                config_hash: "0badc0de".into(),
                wall_time_secs: 1.25,
            },
        }
    }

    #[test]
    fn json_round_trip_is_lossless() {
        let r = sample();
        let text = r.to_json().unwrap();
        let back = MetricsReport::from_json(&text).unwrap();
        assert_eq!(back, r);
        assert_eq!(back.to_json().unwrap(), text);
        assert!(text.contains("\"config_hash\":\"0badc0de\""));
    }

    #[test]
    fn csv_tables() {
        let r = sample();
        assert_eq!(
            r.per_relation_csv().unwrap(),
            "relation,accuracy\n0,0.5\n3,0.3333333333333333\n"
        );
        assert_eq!(
            r.bias_curve_csv().unwrap(),
            "rank,relation,bias,accuracy\n0,3,1.5,0.3333333333333333\n1,1,7,\n"
        );
    }

    #[test]
    fn wall_time_is_not_a_result() {
        let a = sample();
        let mut b = sample();
        b.meta.wall_time_secs = 99.0;
        assert!(a.same_results(&b));
        b.recall_at_50 = 0.41;
        assert!(!a.same_results(&b));
    }
}
