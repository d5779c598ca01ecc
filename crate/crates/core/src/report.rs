//! Line-delimited JSON run reports.
//!
//! A report is one `run` record, one `scene` record per evaluated scene and
//! a closing `aggregate` record. Missing metrics serialize as `null`.
//! `epe3d` is stored ×100.

use std::fs::OpenOptions;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::metrics::{FlowMetrics, SegMetrics};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Metric fields of one scene or of the aggregate.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub ap: Option<f64>,
    pub pq: Option<f64>,
    pub f1: Option<f64>,
    pub pre: Option<f64>,
    pub rec: Option<f64>,
    pub miou: Option<f64>,
    pub ri: Option<f64>,
    pub epe3d: Option<f64>,
    pub accs: Option<f64>,
    pub accr: Option<f64>,
    pub outlier: Option<f64>,
}

impl MetricRecord {
    pub fn new(seg: Option<&SegMetrics>, flow: Option<&FlowMetrics>) -> Self {
        Self {
            ap: seg.map(|m| m.ap),
            pq: seg.map(|m| m.pq),
            f1: seg.map(|m| m.f1),
            pre: seg.map(|m| m.precision),
            rec: seg.map(|m| m.recall),
            miou: seg.map(|m| m.miou),
            ri: seg.map(|m| m.ri),
            epe3d: flow.map(|m| m.epe3d * 100.0),
            accs: flow.map(|m| m.accs),
            accr: flow.map(|m| m.accr),
            outlier: flow.map(|m| m.outlier),
        }
    }

    fn fields(&self) -> [Option<f64>; 11] {
        [
            self.ap, self.pq, self.f1, self.pre, self.rec, self.miou, self.ri, self.epe3d, self.accs,
            self.accr, self.outlier,
        ]
    }

    fn from_fields(f: [Option<f64>; 11]) -> Self {
        Self {
            ap: f[0],
            pq: f[1],
            f1: f[2],
            pre: f[3],
            rec: f[4],
            miou: f[5],
            ri: f[6],
            epe3d: f[7],
            accs: f[8],
            accr: f[9],
            outlier: f[10],
        }
    }

    /// Field-wise mean over the records that carry that field.
    pub fn mean<'a>(records: impl IntoIterator<Item = &'a MetricRecord>) -> Self {
        let mut sum = [0.0; 11];
        let mut count = [0usize; 11];
        for r in records {
            for (i, v) in r.fields().into_iter().enumerate() {
                if let Some(v) = v {
                    sum[i] += v;
                    count[i] += 1;
                }
            }
        }
        Self::from_fields(std::array::from_fn(|i| (count[i] > 0).then(|| sum[i] / count[i] as f64)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneRecord {
    pub scene_id: String,
    #[serde(flatten)]
    pub metrics: MetricRecord,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureRecord {
    pub scene_id: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
enum Line {
    Run {
        command: String,
        tool_version: String,
        seed: u64,
        config: Value,
    },
    Scene(SceneRecord),
    Failure(FailureRecord),
    Aggregate {
        scenes: usize,
        #[serde(flatten)]
        metrics: MetricRecord,
    },
}

/// Everything one command run reports.
#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub command: String,
    pub tool_version: String,
    pub seed: u64,
    pub config: Value,
    pub scenes: Vec<SceneRecord>,
    pub failures: Vec<FailureRecord>,
}

impl RunReport {
    pub fn new(command: impl Into<String>, seed: u64, config: &impl Serialize) -> Self {
        Self {
            command: command.into(),
            tool_version: TOOL_VERSION.into(),
            seed,
            config: serde_json::to_value(config).unwrap_or(Value::Null),
            scenes: Vec::new(),
            failures: Vec::new(),
        }
    }

    pub fn aggregate(&self) -> MetricRecord {
        MetricRecord::mean(self.scenes.iter().map(|s| &s.metrics))
    }

    pub fn to_jsonl(&self) -> String {
        let mut lines = vec![Line::Run {
            command: self.command.clone(),
            tool_version: self.tool_version.clone(),
            seed: self.seed,
            config: self.config.clone(),
        }];
        lines.extend(self.scenes.iter().cloned().map(Line::Scene));
        lines.extend(self.failures.iter().cloned().map(Line::Failure));
        lines.push(Line::Aggregate {
            scenes: self.scenes.len(),
            metrics: self.aggregate(),
        });
        let mut out = String::new();
        for l in lines {
            out.push_str(&serde_json::to_string(&l).expect("report serializes"));
            out.push('\n');
        }
        out
    }

    /// Appends this run to `path`, creating it if needed.
    pub fn append_to(&self, path: &Path) -> Result<()> {
        let io = |source| Error::Io {
            path: path.to_path_buf(),
            source,
        };
        let mut f = OpenOptions::new().create(true).append(true).open(path).map_err(io)?;
        f.write_all(self.to_jsonl().as_bytes()).map_err(io)
    }

    /// Reads every run stored in `path`.
    pub fn read_all(path: &Path) -> Result<Vec<RunReport>> {
        let f = std::fs::File::open(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut runs: Vec<RunReport> = Vec::new();
        for line in BufReader::new(f).lines() {
            let line = line.map_err(|source| Error::Io {
                path: path.to_path_buf(),
                source,
            })?;
            if line.trim().is_empty() {
                continue;
            }
            let parsed: Line = serde_json::from_str(&line).map_err(|source| Error::Json {
                path: path.to_path_buf(),
                source,
            })?;
            match parsed {
                Line::Run {
                    command,
                    tool_version,
                    seed,
                    config,
                } => runs.push(RunReport {
                    command,
                    tool_version,
                    seed,
                    config,
                    scenes: Vec::new(),
                    failures: Vec::new(),
                }),
                Line::Scene(s) => {
                    if let Some(r) = runs.last_mut() {
                        r.scenes.push(s);
                    }
                }
                Line::Failure(f) => {
                    if let Some(r) = runs.last_mut() {
                        r.failures.push(f);
                    }
                }
                Line::Aggregate { .. } => {}
            }
        }
        Ok(runs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn aggregate_skips_missing_fields() {
        let a = MetricRecord {
            miou: Some(80.0),
            epe3d: Some(2.0),
            ..Default::default()
        };
        let b = MetricRecord {
            miou: Some(90.0),
            ..Default::default()
        };
        let m = MetricRecord::mean([&a, &b]);
        assert_eq!(m.miou, Some(85.0));
        assert_eq!(m.epe3d, Some(2.0));
        assert_eq!(m.ap, None);
    }

    #[test]
    fn jsonl_round_trip() {
        let mut r = RunReport::new("eval", 3, &serde_json::json!({"k": 1}));
        r.scenes.push(SceneRecord {
            scene_id: "s0".into(),
            metrics: MetricRecord {
                f1: Some(100.0),
                ..Default::default()
            },
        });
        r.failures.push(FailureRecord {
            scene_id: "s1".into(),
            error: "bad".into(),
        });
        let text = r.to_jsonl();
        assert_eq!(text.lines().count(), 4);
        assert!(text.lines().nth(1).unwrap().contains("\"ap\":null"));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.jsonl");
        r.append_to(&path).unwrap();
        r.append_to(&path).unwrap();
        let back = RunReport::read_all(&path).unwrap();
        assert_eq!(back, vec![r.clone(), r]);
    }
}
