//! Loss traces and metric reports.

use std::io::Write;

use rigidflow_core::losses::LossReport;
use rigidflow_core::metrics::{DepthMetrics, FlowMetrics};

pub const TRACE_HEADER: [&str; 6] = ["iter", "photometric", "smooth", "fb", "cross", "total"];

/// Writes the loss trace as CSV. Numbers use the shortest representation that
/// parses back to the same double.
pub fn write_trace<W: Write>(out: W, trace: &[LossReport]) -> csv::Result<()> {
    let mut writer = csv::Writer::from_writer(out);
    writer.write_record(TRACE_HEADER)?;
    for (i, r) in trace.iter().enumerate() {
        writer.write_record([
            i.to_string(),
            r.photometric.to_string(),
            r.smooth.to_string(),
            r.forward_backward.to_string(),
            r.cross.to_string(),
            r.total.to_string(),
        ])?;
    }
    writer.flush()?;
    Ok(())
}

pub fn read_trace<R: std::io::Read>(input: R) -> csv::Result<Vec<LossReport>> {
    let mut reader = csv::Reader::from_reader(input);
    reader
        .deserialize::<(usize, f64, f64, f64, f64, f64)>()
        .map(|row| {
            row.map(|(_, photometric, smooth, forward_backward, cross, total)| LossReport {
                photometric,
                smooth,
                forward_backward,
                cross,
                total,
            })
        })
        .collect()
}

/// Flat `key = value` lines.
pub fn key_values(pairs: &[(&str, f64)]) -> String {
    pairs.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
}

pub fn loss_report(r: &LossReport) -> String {
    key_values(&[
        ("photometric", r.photometric),
        ("smooth", r.smooth),
        ("fb", r.forward_backward),
        ("cross", r.cross),
        ("total", r.total),
    ])
}

pub fn flow_report(m: &FlowMetrics) -> String {
    key_values(&[("epe", m.epe), ("f1", m.f1)])
}

pub fn depth_report(m: &DepthMetrics) -> String {
    key_values(&[
        ("abs_rel", m.abs_rel),
        ("sq_rel", m.sq_rel),
        ("rmse", m.rmse),
        ("log_rmse", m.log_rmse),
        ("a1", m.a1),
        ("a2", m.a2),
        ("a3", m.a3),
    ])
}
