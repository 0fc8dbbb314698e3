//! Newline-delimited JSON metrics: one `eval` record per validation pass,
//! then one `summary` record.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::checkpoint::write_atomic;
use crate::error::{Error, Result};
use crate::model::ParamCounts;
use crate::tasks::Rule;
use crate::trainer::{EvalRecord, TrainReport};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub command: String,
    pub task: Rule,
    pub best_accuracy: f64,
    pub best_step: usize,
    pub params: ParamCounts,
    pub wall_clock_secs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Record {
    Eval(EvalRecord),
    Summary(Summary),
}

pub fn to_ndjson(report: &TrainReport, summary: &Summary) -> Result<String> {
    if report.records.is_empty() {
        return Err(Error::Model("no evaluation records to emit".into()));
    }
    let mut out = String::new();
    let records = report.records.iter().cloned().map(Record::Eval);
    for r in records.chain([Record::Summary(summary.clone())]) {
        out.push_str(&serde_json::to_string(&r).expect("records serialize"));
        out.push('\n');
    }
    Ok(out)
}

pub fn write(path: &Path, report: &TrainReport, summary: &Summary) -> Result<()> {
    write_atomic(path, to_ndjson(report, summary)?.as_bytes())
}

pub fn read(path: &Path) -> Result<Vec<Record>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .map(|l| serde_json::from_str(l).map_err(|e| Error::Config(format!("bad metrics line: {e}"))))
        .collect()
}
