use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::AgentKind;
use crate::error::{Error, Result};
use crate::evidential::Evidence;
use crate::io::write_atomic;
use crate::timeline::Interval;

#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub t: usize,
    /// Scanner window (ESRL) or current interval (movers) observed at `t`.
    pub region: Interval,
    /// Output boundaries after this step's actions.
    pub output: Interval,
    pub evidence: Evidence,
    pub p_iou: f64,
    pub p_dist: [f64; 2],
    pub p_loc: Vec<f64>,
    pub actions: [usize; 2],
    pub proposed: [f64; 2],
    pub valid: [bool; 2],
    pub log_probs: [f64; 2],
    pub value: f64,
    pub reward: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentTrace {
    pub kind: AgentKind,
    pub episode_id: String,
    pub steps: Vec<StepRecord>,
    pub final_output: Interval,
}

impl AgentTrace {
    pub fn to_record(&self) -> TraceRecord {
        TraceRecord {
            episode_id: self.episode_id.clone(),
            agent: self.kind,
            steps: self
                .steps
                .iter()
                .map(|s| TraceStep {
                    t: s.t,
                    region: s.region,
                    output: s.output,
                    u: s.evidence.uncertainty,
                    p_iou: s.p_iou,
                })
                .collect(),
            final_output: self.final_output,
        }
    }
}

/// One line of a trace dump.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceRecord {
    pub episode_id: String,
    pub agent: AgentKind,
    pub steps: Vec<TraceStep>,
    #[serde(rename = "final")]
    pub final_output: Interval,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceStep {
    pub t: usize,
    pub region: Interval,
    pub output: Interval,
    pub u: f64,
    pub p_iou: f64,
}

pub fn write_traces(path: &Path, records: &[TraceRecord]) -> Result<()> {
    let mut buf = Vec::new();
    for r in records {
        buf.extend_from_slice(serde_json::to_string(r).expect("trace serializes").as_bytes());
        buf.push(b'\n');
    }
    write_atomic(path, &buf)
}

pub fn read_traces(path: &Path) -> Result<Vec<TraceRecord>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (k, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|source| Error::Json { path: path.to_path_buf(), line: k + 1, source })?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dump_roundtrip() {
        let rec = TraceRecord {
            episode_id: "test-00001".into(),
            agent: AgentKind::EDark,
            steps: vec![TraceStep { t: 0, region: Interval::FULL, output: Interval::new(0.16, 1.0), u: 0.4, p_iou: 0.3 }],
            final_output: Interval::new(0.16, 1.0),
        };
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("traces.jsonl");
        write_traces(&p, &[rec.clone(), rec.clone()]).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("{\"episode_id\":\"test-00001\",\"agent\":\"edark\",\"steps\":[{\"t\":0,\"region\":[0.0,1.0]"));
        assert!(text.lines().next().unwrap().ends_with("\"final\":[0.16,1.0]}"));
        assert_eq!(read_traces(&p).unwrap(), vec![rec.clone(), rec]);
    }
}
