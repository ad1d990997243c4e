//! Training-curve records collected by the training loops.

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub phase: String,
    pub iteration: usize,
    pub meta_loss: f64,
}

/// Append-only list of per-iteration meta-losses.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub records: Vec<LogRecord>,
}

impl TrainLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, phase: &str, iteration: usize, meta_loss: f64) {
        self.records.push(LogRecord { phase: phase.into(), iteration, meta_loss });
    }

    pub fn phase<'a>(&'a self, phase: &'a str) -> impl Iterator<Item = &'a LogRecord> + 'a {
        self.records.iter().filter(move |r| r.phase == phase)
    }
}
