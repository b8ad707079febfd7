use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Loss of one optimizer step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub step: usize,
    pub phase: usize,
    pub loss: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LossTrace(pub Vec<TraceEntry>);

impl LossTrace {
    pub fn push(&mut self, step: usize, phase: usize, loss: f64) {
        self.0.push(TraceEntry { step, phase, loss });
    }

    pub fn entries(&self) -> &[TraceEntry] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn last_loss(&self) -> Option<f64> {
        self.0.last().map(|e| e.loss)
    }

    /// `step,phase,loss` with a header row.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,phase,loss\n");
        for e in &self.0 {
            writeln!(out, "{},{},{:e}", e.step, e.phase, e.loss).expect("write to string");
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}
