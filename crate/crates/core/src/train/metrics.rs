//! Per-step traces (CSV) and run summaries (JSON).

use std::io::Write;

use serde::Serialize;

use super::TrainError;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TraceRow {
    /// Batch index for SGD, phase index for DP.
    pub step: usize,
    pub loss: f64,
    /// Milliseconds since the start of training.
    pub wall_ms: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trace {
    pub rows: Vec<TraceRow>,
}

impl Trace {
    pub fn push(&mut self, step: usize, loss: f64, wall_ms: f64) {
        self.rows.push(TraceRow {
            step,
            loss,
            wall_ms,
        });
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn losses(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.loss).collect()
    }

    /// Mean loss over the first and the last tenth of the trace.
    pub fn decile_means(&self) -> Option<(f64, f64)> {
        let k = self.rows.len() / 10;
        if k == 0 {
            return None;
        }
        let mean = |rs: &[TraceRow]| rs.iter().map(|r| r.loss).sum::<f64>() / rs.len() as f64;
        Some((
            mean(&self.rows[..k]),
            mean(&self.rows[self.rows.len() - k..]),
        ))
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), TrainError> {
        let mut out = csv::Writer::from_writer(w);
        for r in &self.rows {
            out.serialize(r)
                .map_err(|e| TrainError::Io(std::io::Error::other(e)))?;
        }
        out.flush()?;
        Ok(())
    }
}

/// The JSON document printed at the end of a run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub schema_version: u32,
    pub dataset: String,
    pub mode: String,
    pub transport: String,
    pub workers: usize,
    pub seed: u64,
    /// `"mse"` or `"accuracy"`.
    pub metric: String,
    pub value: f64,
    pub steps: usize,
    pub wall_ms: f64,
    pub per_batch_ms: f64,
    pub epsilon: Option<f64>,
    pub delta: Option<f64>,
    pub sigma: Option<f64>,
}

impl RunSummary {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("summary serializes")
    }
}
