//! File formats: comma-separated trace and sweep-map files plus JSON
//! documents for fit results and plans.
//!
//! Trace files carry the columns `sweep_index,time_s,detuning_MHz,counts`;
//! sweep-map files prepend a `voltage_V` column. Both are plain text with a
//! header row.

use std::path::Path;

use serde::{de::DeserializeOwned, Serialize};

use crate::error::{Result, StarkError};
use crate::sim::{ScanTrace, SweepMap};

/// Write traces of one session; `bin_time_s` spaces the per-bin timestamps.
pub fn write_traces(path: &Path, traces: &[ScanTrace], bin_time_s: f64) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["sweep_index", "time_s", "detuning_MHz", "counts"])?;
    for t in traces {
        write_trace_rows(&mut w, t, bin_time_s, None)?;
    }
    w.flush()?;
    Ok(())
}

fn write_trace_rows<W: std::io::Write>(
    w: &mut csv::Writer<W>,
    t: &ScanTrace,
    bin_time_s: f64,
    voltage: Option<f64>,
) -> Result<()> {
    for (i, (&d, &c)) in t.detunings_mhz.iter().zip(&t.counts).enumerate() {
        let time = t.start_time_s + i as f64 * bin_time_s;
        let mut rec = Vec::with_capacity(5);
        if let Some(v) = voltage {
            rec.push(format!("{v}"));
        }
        rec.push(format!("{}", t.sweep_index));
        rec.push(format!("{time}"));
        rec.push(format!("{d}"));
        rec.push(format!("{c}"));
        w.write_record(&rec)?;
    }
    Ok(())
}

/// Read a trace file back; rows are grouped by sweep index in file order.
pub fn read_traces(path: &Path) -> Result<Vec<ScanTrace>> {
    let mut r = csv::Reader::from_path(path)?;
    let headers = r.headers()?.clone();
    let expect = ["sweep_index", "time_s", "detuning_MHz", "counts"];
    if headers.iter().collect::<Vec<_>>() != expect {
        return Err(StarkError::Data(format!(
            "unexpected trace header {:?}; expected {expect:?}",
            headers.iter().collect::<Vec<_>>()
        )));
    }
    let mut traces: Vec<ScanTrace> = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        let parse = |i: usize| -> Result<f64> {
            rec.get(i)
                .ok_or_else(|| StarkError::Data(format!("row {}: missing column {i}", line + 2)))?
                .parse()
                .map_err(|e| StarkError::Data(format!("row {}: {e}", line + 2)))
        };
        let sweep = parse(0)? as usize;
        let time = parse(1)?;
        let det = parse(2)?;
        let counts = parse(3)?;
        if counts < 0.0 || counts.fract() != 0.0 {
            return Err(StarkError::Data(format!(
                "row {}: counts must be a non-negative integer",
                line + 2
            )));
        }
        match traces.last_mut() {
            Some(t) if t.sweep_index == sweep => {
                t.detunings_mhz.push(det);
                t.counts.push(counts as u32);
            }
            _ => traces.push(ScanTrace {
                detunings_mhz: vec![det],
                counts: vec![counts as u32],
                start_time_s: time,
                sweep_index: sweep,
            }),
        }
    }
    if traces.is_empty() {
        return Err(StarkError::Data("trace file contains no rows".into()));
    }
    Ok(traces)
}

/// Write a sweep map with the per-voltage sessions concatenated.
pub fn write_sweep_map(path: &Path, map: &SweepMap, bin_time_s: f64) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["voltage_V", "sweep_index", "time_s", "detuning_MHz", "counts"])?;
    for (v, session) in map.voltages.iter().zip(&map.traces) {
        for t in session {
            write_trace_rows(&mut w, t, bin_time_s, Some(*v))?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Read a sweep-map file; sessions are grouped by voltage in file order.
pub fn read_sweep_map(path: &Path) -> Result<SweepMap> {
    let mut r = csv::Reader::from_path(path)?;
    let headers = r.headers()?.clone();
    let expect = ["voltage_V", "sweep_index", "time_s", "detuning_MHz", "counts"];
    if headers.iter().collect::<Vec<_>>() != expect {
        return Err(StarkError::Data(format!(
            "unexpected sweep-map header {:?}; expected {expect:?}",
            headers.iter().collect::<Vec<_>>()
        )));
    }
    let mut voltages: Vec<f64> = Vec::new();
    let mut sessions: Vec<Vec<ScanTrace>> = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        let parse = |i: usize| -> Result<f64> {
            rec.get(i)
                .ok_or_else(|| StarkError::Data(format!("row {}: missing column {i}", line + 2)))?
                .parse()
                .map_err(|e| StarkError::Data(format!("row {}: {e}", line + 2)))
        };
        let v = parse(0)?;
        let sweep = parse(1)? as usize;
        let time = parse(2)?;
        let det = parse(3)?;
        let counts = parse(4)? as u32;
        if voltages.last() != Some(&v) {
            voltages.push(v);
            sessions.push(Vec::new());
        }
        let session = sessions.last_mut().unwrap();
        match session.last_mut() {
            Some(t) if t.sweep_index == sweep => {
                t.detunings_mhz.push(det);
                t.counts.push(counts);
            }
            _ => session.push(ScanTrace {
                detunings_mhz: vec![det],
                counts: vec![counts],
                start_time_s: time,
                sweep_index: sweep,
            }),
        }
    }
    if voltages.is_empty() {
        return Err(StarkError::Data("sweep-map file contains no rows".into()));
    }
    Ok(SweepMap {
        molecule_ids: Vec::new(),
        voltages,
        traces: sessions,
    })
}

/// Pretty-printed JSON document with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| StarkError::Data(format!("serialization failed: {e}")))?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text)
        .map_err(|e| StarkError::Data(format!("{}: {e}", path.display())))
}
