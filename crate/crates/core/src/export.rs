//! Delimited text export of cost records and traces.
//!
//! Records: `interaction_id,component_id,task_id,metric_id,value,unit`, one
//! per line in ledger order, header first. Values are written exactly
//! (`17`, `0.5`, `1/3`). Traces: `time,interaction_id,component_id,task_id,
//! kind,outcome`, entries in trace order.

use std::io;

use thiserror::Error;

use crate::ids::TaskId;
use crate::ledger::CostRecord;
use crate::simkernel::InteractionTrace;
use crate::value::Value;

pub const RECORD_HEADER: [&str; 6] = ["interaction_id", "component_id", "task_id", "metric_id", "value", "unit"];
pub const TRACE_HEADER: [&str; 6] = ["time", "interaction_id", "component_id", "task_id", "kind", "outcome"];

#[derive(Debug, Error)]
pub enum ExportError {
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("line {line}: {message}")]
    Malformed { line: u64, message: String },
}

pub fn write_records<W: io::Write>(out: W, records: &[CostRecord]) -> Result<(), ExportError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(RECORD_HEADER)?;
    for r in records {
        w.write_record([
            r.interaction().as_str(),
            r.component().as_str(),
            r.task().as_str(),
            r.metric().as_str(),
            &r.value().to_string(),
            r.unit().as_str(),
        ])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn records_to_string(records: &[CostRecord]) -> String {
    let mut buf = Vec::new();
    write_records(&mut buf, records).expect("writing to memory cannot fail");
    String::from_utf8(buf).expect("records are UTF-8")
}

/// Reads a records file written by [`write_records`].
pub fn read_records<R: io::Read>(input: R) -> Result<Vec<CostRecord>, ExportError> {
    let mut rd = csv::Reader::from_reader(input);
    let header = rd.headers()?.clone();
    if !header.iter().eq(RECORD_HEADER) {
        return Err(ExportError::Malformed {
            line: 1,
            message: format!("expected header {}", RECORD_HEADER.join(",")),
        });
    }
    let mut out = Vec::new();
    for row in rd.records() {
        let row = row?;
        let line = row.position().map_or(0, |p| p.line());
        let malformed = |message: String| ExportError::Malformed { line, message };
        let value: Value = row[4].parse().map_err(|e| malformed(format!("{e}")))?;
        let record = CostRecord::new(
            row[0].into(),
            row[1].into(),
            row[2].into(),
            row[3].into(),
            value,
            row[5].into(),
        )
        .map_err(|e| malformed(e.to_string()))?;
        out.push(record);
    }
    Ok(out)
}

pub fn write_traces<W: io::Write>(out: W, traces: &[InteractionTrace]) -> Result<(), ExportError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(TRACE_HEADER)?;
    for t in traces {
        for e in &t.entries {
            w.write_record([
                e.time.to_string().as_str(),
                t.interaction.as_str(),
                e.component.as_str(),
                e.task.as_ref().map_or("", TaskId::as_str),
                e.kind.to_string().as_str(),
                e.outcome.as_str(),
            ])?;
        }
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn traces_to_string(traces: &[InteractionTrace]) -> String {
    let mut buf = Vec::new();
    write_traces(&mut buf, traces).expect("writing to memory cannot fail");
    String::from_utf8(buf).expect("traces are UTF-8")
}
