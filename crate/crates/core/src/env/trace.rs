use std::io::Write;

use serde::Serialize;

use crate::error::Result;

#[derive(Debug, Clone, Serialize)]
pub struct PlacementView {
    pub job_id: u32,
    pub machine: usize,
    pub n: u32,
    pub planned_start: u32,
    pub start: Option<u32>,
    pub actual_end: Option<u32>,
}

/// One line of the JSON-lines episode trace.
#[derive(Debug, Clone, Serialize)]
pub struct TraceRecord {
    pub step: usize,
    pub clock: u32,
    pub action: usize,
    pub valid: bool,
    pub reward: f64,
    pub queue_ids: Vec<u32>,
    pub placements: Vec<PlacementView>,
}

pub fn write_trace<W: Write>(mut out: W, records: &[TraceRecord]) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}
