//! Report emitters. JSON output has sorted keys and every float printed with
//! six decimals, so equal inputs give byte-identical files.
//!
//! CSV columns:
//!
//! | file      | columns                                                 |
//! |-----------|---------------------------------------------------------|
//! | histogram | class, latency                                          |
//! | probes    | trial, line_index, latency, state                       |
//! | events    | tick, core, event, tid, domain, prefetcher_enabled      |
//! | accesses  | tick, core, task, pc, vaddr, requests_emitted           |
//!
//! `tid` is empty for events without a task. Addresses are written in hex.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::Value;
use thiserror::Error;

use crate::attack::{LeakageReport, TrialTrace};
use crate::config::OutputSpec;
use crate::machine::AccessRecord;
use crate::sched::SchedEvent;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("cannot write {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("cannot serialise report: {0}")]
    Json(#[from] serde_json::Error),
    #[error("report has no latency samples")]
    Empty,
}

/// Canonical JSON text of `value`, newline terminated.
pub fn to_canonical_json<T: Serialize + ?Sized>(value: &T) -> Result<String, ReportError> {
    let value = serde_json::to_value(value)?;
    let mut out = String::new();
    write_value(&mut out, &value, 0);
    out.push('\n');
    Ok(out)
}

fn write_value(out: &mut String, v: &Value, depth: usize) {
    let pad = |out: &mut String, d: usize| out.extend(std::iter::repeat_n("  ", d));
    match v {
        Value::Null | Value::Bool(_) | Value::String(_) => out.push_str(&v.to_string()),
        Value::Number(n) => match (n.as_u64(), n.as_i64(), n.as_f64()) {
            (Some(u), _, _) => {
                let _ = write!(out, "{u}");
            }
            (None, Some(i), _) => {
                let _ = write!(out, "{i}");
            }
            (_, _, Some(f)) => {
                let _ = write!(out, "{f:.6}");
            }
            _ => out.push_str("null"),
        },
        Value::Array(items) if items.is_empty() => out.push_str("[]"),
        Value::Array(items) => {
            out.push_str("[\n");
            for (i, item) in items.iter().enumerate() {
                pad(out, depth + 1);
                write_value(out, item, depth + 1);
                out.push_str(if i + 1 < items.len() { ",\n" } else { "\n" });
            }
            pad(out, depth);
            out.push(']');
        }
        Value::Object(map) if map.is_empty() => out.push_str("{}"),
        Value::Object(map) => {
            let mut keys: Vec<&String> = map.keys().collect();
            keys.sort();
            out.push_str("{\n");
            for (i, k) in keys.iter().enumerate() {
                pad(out, depth + 1);
                out.push_str(&Value::String((*k).clone()).to_string());
                out.push_str(": ");
                write_value(out, &map[*k], depth + 1);
                out.push_str(if i + 1 < keys.len() { ",\n" } else { "\n" });
            }
            pad(out, depth);
            out.push('}');
        }
    }
}

pub fn histogram_csv(report: &LeakageReport) -> Result<String, ReportError> {
    if report.trials == 0 {
        return Err(ReportError::Empty);
    }
    histogram_from_samples(&report.latency_samples)
}

/// Histogram rows from latency samples grouped by class.
pub fn histogram_from_samples(samples: &BTreeMap<String, Vec<u32>>) -> Result<String, ReportError> {
    if samples.values().all(Vec::is_empty) {
        return Err(ReportError::Empty);
    }
    let mut out = String::from("class,latency\n");
    for (class, lats) in samples {
        for lat in lats {
            let _ = writeln!(out, "{class},{lat}");
        }
    }
    Ok(out)
}

pub fn probes_csv(report: &LeakageReport) -> String {
    let mut out = String::from("trial,line_index,latency,state\n");
    for p in &report.probes {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            p.trial,
            p.line_index,
            p.latency,
            p.state.as_str()
        );
    }
    out
}

pub fn events_csv(events: &[SchedEvent]) -> String {
    let mut out = String::from("tick,core,event,tid,domain,prefetcher_enabled\n");
    for e in events {
        let tid = e.tid.map(|t| t.0.to_string()).unwrap_or_default();
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            e.tick,
            e.core.0,
            e.kind.as_str(),
            tid,
            e.domain.0,
            e.prefetcher_enabled
        );
    }
    out
}

pub fn accesses_csv(accesses: &[AccessRecord]) -> String {
    let mut out = String::from("tick,core,task,pc,vaddr,requests_emitted\n");
    for a in accesses {
        let _ = writeln!(
            out,
            "{},{},{},{:#x},{:#x},{}",
            a.tick, a.core.0, a.task.0, a.pc, a.vaddr, a.requests_emitted
        );
    }
    out
}

#[derive(Serialize)]
struct Summary<'a> {
    switch_counter: u64,
    toggle_counter: u64,
    disabled_ticks: &'a [u64],
}

/// Counters of one scheduler trace; `disabled_ticks` is indexed by domain.
pub fn summary_json(trace: &TrialTrace) -> Result<String, ReportError> {
    to_canonical_json(&Summary {
        switch_counter: trace.switch_counter,
        toggle_counter: trace.toggle_counter,
        disabled_ticks: &trace.disabled_ticks,
    })
}

pub fn write_file(path: &Path, contents: &str) -> Result<(), ReportError> {
    let io = |source| ReportError::Io {
        path: path.to_path_buf(),
        source,
    };
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(io)?;
    }
    std::fs::write(path, contents).map_err(io)
}

/// Writes the report, its histogram and probe rows, and the scheduler trace
/// of the first trial. Returns the paths written.
pub fn write_leakage_outputs(
    report: &LeakageReport,
    output: &OutputSpec,
) -> Result<Vec<PathBuf>, ReportError> {
    let files = [
        (&output.report, to_canonical_json(report)?),
        (&output.histogram, histogram_csv(report)?),
        (&output.probes, probes_csv(report)),
        (&output.events, events_csv(&report.first_trial.events)),
        (&output.accesses, accesses_csv(&report.first_trial.accesses)),
        (&output.summary, summary_json(&report.first_trial)?),
    ];
    let mut written = Vec::new();
    for (name, text) in files {
        let path = output.path(name);
        write_file(&path, &text)?;
        written.push(path);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn canonical_json_sorts_and_fixes_floats() {
        let v = json!({"b": 1.5, "a": [1, -2, 0.1], "c": {"z": true, "y": null}});
        let text = to_canonical_json(&v).unwrap();
        assert_eq!(
            text,
            "{\n  \"a\": [\n    1,\n    -2,\n    0.100000\n  ],\n  \"b\": 1.500000,\n  \"c\": {\n    \"y\": null,\n    \"z\": true\n  }\n}\n"
        );
        let parsed: Value = serde_json::from_str(&text).unwrap();
        assert_eq!(parsed["b"], json!(1.5));
    }

    #[test]
    fn whole_floats_keep_decimals() {
        assert_eq!(to_canonical_json(&1.0f64).unwrap(), "1.000000\n");
        assert_eq!(to_canonical_json(&[0.5f64; 0]).unwrap(), "[]\n");
    }
}
