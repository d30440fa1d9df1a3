//! Run reports: `key = value` lines followed by one JSON block.
//!
//! The JSON block is authoritative. Parsing re-derives the key-value lines
//! from it and rejects the report if they differ from the ones on disk.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::train::CrossValResult;

pub const REPORT_HEADER: &str = "# legs run report";
const JSON_BEGIN: &str = "--- json ---";
const JSON_END: &str = "--- end ---";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub version: String,
    pub command: String,
    pub dataset: String,
    pub graphs: usize,
    pub seed: u64,
    /// Flattened configuration, `section.field` keys.
    pub config: BTreeMap<String, String>,
    pub result: CrossValResult,
    pub wall_clock_secs: f64,
}

impl RunReport {
    /// Flattens any serializable configuration into dotted keys.
    pub fn config_echo<C: Serialize>(cfg: &C) -> Result<BTreeMap<String, String>> {
        let v = serde_json::to_value(cfg).map_err(|e| Error::Report(e.to_string()))?;
        let mut out = BTreeMap::new();
        flatten("", &v, &mut out);
        Ok(out)
    }

    fn key_values(&self) -> Vec<(String, String)> {
        let mut kv = vec![
            ("version".to_string(), self.version.clone()),
            ("command".into(), self.command.clone()),
            ("dataset".into(), self.dataset.clone()),
            ("graphs".into(), self.graphs.to_string()),
            ("seed".into(), self.seed.to_string()),
        ];
        kv.extend(self.config.iter().map(|(k, v)| (format!("config.{k}"), v.clone())));
        let r = &self.result;
        kv.push(("metric".into(), r.metric_name.clone()));
        kv.push(("mean".into(), r.mean.to_string()));
        kv.push(("std".into(), r.std.to_string()));
        for f in &r.folds {
            kv.push((format!("fold.{}.{}", f.fold, r.metric_name), f.metric.to_string()));
            kv.push((format!("fold.{}.epochs", f.fold), f.epochs_run.to_string()));
            if let Some(ok) = f.anchor_range_ok {
                kv.push((format!("fold.{}.anchor_range_ok", f.fold), ok.to_string()));
            }
        }
        kv.push(("wall_clock_secs".into(), self.wall_clock_secs.to_string()));
        kv
    }

    pub fn to_text(&self) -> Result<String> {
        let mut s = String::from(REPORT_HEADER);
        s.push('\n');
        for (k, v) in self.key_values() {
            s.push_str(&format!("{k} = {v}\n"));
        }
        s.push_str(JSON_BEGIN);
        s.push('\n');
        s.push_str(&serde_json::to_string_pretty(self).map_err(|e| Error::Report(e.to_string()))?);
        s.push('\n');
        s.push_str(JSON_END);
        s.push('\n');
        Ok(s)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next() != Some(REPORT_HEADER) {
            return Err(Error::Report("missing report header".into()));
        }
        let mut kv = Vec::new();
        for line in lines.by_ref() {
            if line == JSON_BEGIN {
                break;
            }
            let (k, v) = line
                .split_once(" = ")
                .ok_or_else(|| Error::Report(format!("not a `key = value` line: {line:?}")))?;
            kv.push((k.to_string(), v.to_string()));
        }
        let mut json = String::new();
        let mut closed = false;
        for line in lines.by_ref() {
            if line == JSON_END {
                closed = true;
                break;
            }
            json.push_str(line);
            json.push('\n');
        }
        if !closed {
            return Err(Error::Report("unterminated JSON block".into()));
        }
        if lines.any(|l| !l.trim().is_empty()) {
            return Err(Error::Report("trailing content after the JSON block".into()));
        }
        let report: RunReport = serde_json::from_str(&json).map_err(|e| Error::Report(e.to_string()))?;
        if report.key_values() != kv {
            return Err(Error::Report("key-value lines disagree with the JSON block".into()));
        }
        Ok(report)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_text()?).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }
}

fn flatten(prefix: &str, v: &Value, out: &mut BTreeMap<String, String>) {
    match v {
        Value::Object(map) => {
            for (k, child) in map {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten(&key, child, out);
            }
        }
        Value::String(s) => {
            out.insert(prefix.to_string(), s.clone());
        }
        other => {
            out.insert(prefix.to_string(), other.to_string());
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::train::{FoldResult, TrainConfig};

    fn report() -> RunReport {
        let folds: Vec<FoldResult> = (0..2)
            .map(|f| FoldResult {
                fold: f,
                train_size: 9,
                test_size: 1,
                metric: 0.1 * (f + 7) as f64,
                test_loss: 0.3,
                epochs_run: 12,
                best_epoch: 3,
                anchor_range_ok: Some(true),
                selection: vec![vec![0.25; 4]],
            })
            .collect();
        RunReport {
            version: "0.1.0".into(),
            command: "train".into(),
            dataset: "T".into(),
            graphs: 10,
            seed: 4,
            config: RunReport::config_echo(&TrainConfig::default()).unwrap(),
            result: CrossValResult {
                metric_name: "accuracy".into(),
                folds,
                mean: 0.75,
                std: 0.05,
            },
            wall_clock_secs: 1.25,
        }
    }

    #[test]
    fn round_trip() {
        let r = report();
        let text = r.to_text().unwrap();
        assert!(text.contains("\nconfig.lr = 0.01\n"));
        assert!(text.contains("\nconfig.scatter.q_list = [1,2,3,4]\n"));
        assert!(text.contains("\nfold.1.accuracy = 0.8\n"));
        assert_eq!(RunReport::parse(&text).unwrap(), r);
    }

    #[test]
    fn arbitrary_floats_survive_the_json_block() {
        let mut r = report();
        let mut x = 0.1f64;
        for (i, f) in r.result.folds.iter_mut().enumerate() {
            x = (x * 7.3 + 0.123).fract() / 3.0;
            f.test_loss = x;
            f.selection = vec![(0..16).map(|k| (x * (k + i + 1) as f64).sin().abs() / 7.0).collect()];
        }
        r.result.std = 0.052125572797051135;
        r.wall_clock_secs = 2.7182818284590451e-3;
        assert_eq!(RunReport::parse(&r.to_text().unwrap()).unwrap(), r);
    }

    #[test]
    fn tampering_is_detected() {
        let text = report().to_text().unwrap();
        assert!(RunReport::parse(&text.replace("mean = 0.75", "mean = 0.99")).is_err());
        assert!(RunReport::parse(&text.replace(JSON_END, "")).is_err());
        assert!(RunReport::parse(&text[1..]).is_err());
    }
}
