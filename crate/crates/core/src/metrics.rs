//! Per-round metrics records and their JSON-lines serialization.
//!
//! The serialized stream contains only deterministic fields so that two runs
//! of the same config produce byte-identical metrics files; measured wall
//! time stays in memory and is reported in the run summary instead.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::fed::Phase;

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct MetricsRecord {
    pub round_index: usize,
    pub phase: Phase,
    /// Fraction of held-out samples classified correctly.
    pub eval_accuracy: f64,
    pub eval_loss: f64,
    /// Protocol bytes sent by each participating client this round.
    pub uplink_bytes: u64,
    /// Protocol bytes received by each client this round.
    pub downlink_bytes: u64,
    /// Measured, not replayable; excluded from serialization.
    #[serde(skip)]
    pub wall_time_ms: f64,
}

/// Writes one JSON object per line, in round order.
pub fn write_jsonl(path: &Path, records: &[MetricsRecord]) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    for record in records {
        let line = serde_json::to_string(record)
            .map_err(|e| Error::Config(format!("metrics serialization failed: {e}")))?;
        out.write_all(line.as_bytes())?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_jsonl(path: &Path) -> Result<Vec<MetricsRecord>> {
    let reader = BufReader::new(File::open(path)?);
    let mut records = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: MetricsRecord = serde_json::from_str(&line).map_err(|e| {
            Error::Config(format!("metrics line {}: {e}", lineno + 1))
        })?;
        records.push(record);
    }
    Ok(records)
}

/// Summary row for sweeps: one grid value with mean and standard deviation
/// of final accuracy across seeds.
#[derive(Debug, Clone)]
pub struct SummaryRow {
    pub value: String,
    pub mean_accuracy: f64,
    pub std_accuracy: f64,
    pub runs: usize,
}

pub fn write_summary_csv(path: &Path, rows: &[SummaryRow]) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "value,mean_accuracy,std_accuracy,runs")?;
    for row in rows {
        writeln!(
            out,
            "{},{},{},{}",
            row.value, row.mean_accuracy, row.std_accuracy, row.runs
        )?;
    }
    out.flush()?;
    Ok(())
}

/// Tidy per-round curve point for plotting.
#[derive(Debug, Clone)]
pub struct CurvePoint {
    pub value: String,
    pub seed_index: usize,
    pub round_index: usize,
    pub phase: Phase,
    pub eval_accuracy: f64,
    pub eval_loss: f64,
}

pub fn write_curves_csv(path: &Path, points: &[CurvePoint]) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "value,seed_index,round,phase,eval_accuracy,eval_loss")?;
    for p in points {
        let phase = match p.phase {
            Phase::Warmup => "warmup",
            Phase::Zo => "zo",
        };
        writeln!(
            out,
            "{},{},{},{},{},{}",
            p.value, p.seed_index, p.round_index, phase, p.eval_accuracy, p.eval_loss
        )?;
    }
    out.flush()?;
    Ok(())
}

/// Sample mean and standard deviation (n-1 denominator; zero for n < 2).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
        / (values.len() - 1) as f64;
    (mean, var.sqrt())
}
