//! Trace and summary files.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

use super::engine::{Metrics, SimTrace, TickRecord};

fn csv_error(e: csv::Error) -> Error {
    Error::TraceMismatch(format!("trace csv: {e}"))
}

/// One row per (tick, core) with a header, LF line endings.
pub fn write_trace_csv<W: Write>(records: &[TickRecord], out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out);
    for r in records {
        w.serialize(r).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_trace_csv<R: Read>(input: R) -> Result<Vec<TickRecord>> {
    csv::Reader::from_reader(input)
        .deserialize()
        .collect::<std::result::Result<_, _>>()
        .map_err(csv_error)
}

pub fn trace_csv_string(records: &[TickRecord]) -> Result<String> {
    let mut buf = Vec::new();
    write_trace_csv(records, &mut buf)?;
    Ok(String::from_utf8(buf).expect("csv output is utf-8"))
}

pub fn metrics_json(metrics: &Metrics) -> Result<String> {
    Ok(serde_json::to_string_pretty(metrics)?)
}

pub fn read_metrics_json(s: &str) -> Result<Metrics> {
    Ok(serde_json::from_str(s)?)
}

/// Writes `<stem>.csv` and `<stem>.json` into `dir`.
pub fn save_trace(trace: &SimTrace, dir: &Path, stem: &str) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let csv = std::fs::File::create(dir.join(format!("{stem}.csv")))?;
    write_trace_csv(&trace.records, std::io::BufWriter::new(csv))?;
    std::fs::write(dir.join(format!("{stem}.json")), metrics_json(&trace.metrics)?)?;
    Ok(())
}
