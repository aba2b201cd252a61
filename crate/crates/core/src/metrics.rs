//! Newline-delimited JSON training log.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::{DiscriminatorLossBreakdown, GeneratorLossBreakdown};

/// One line of the metrics log. Loss records carry the breakdowns;
/// evaluation records carry `fid` and `is`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub iteration: u64,
    pub epoch: f64,
    /// Seconds since the start of the (possibly resumed) run.
    pub wall_time: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d_loss: Option<DiscriminatorLossBreakdown>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub g_loss: Option<GeneratorLossBreakdown>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cutmix: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fid: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub is: Option<f64>,
}

impl MetricsRecord {
    pub fn at(iteration: u64, epoch: f64, wall_time: f64) -> Self {
        Self {
            iteration,
            epoch,
            wall_time,
            d_loss: None,
            g_loss: None,
            cutmix: None,
            fid: None,
            is: None,
        }
    }

    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("metrics records always serialize")
    }
}

/// Appends records, one JSON object per line.
pub fn append_records(path: &Path, records: &[MetricsRecord]) -> Result<()> {
    let mut f = std::fs::OpenOptions::new().create(true).append(true).open(path)?;
    for r in records {
        writeln!(f, "{}", r.to_line())?;
    }
    Ok(())
}

pub fn read_records(path: &Path) -> Result<Vec<MetricsRecord>> {
    let f = std::fs::File::open(path)?;
    BufReader::new(f)
        .lines()
        .enumerate()
        .filter(|(_, l)| l.as_ref().map_or(true, |l| !l.trim().is_empty()))
        .map(|(i, l)| {
            serde_json::from_str(&l?).map_err(|e| Error::Data(format!("{}:{}: {e}", path.display(), i + 1)))
        })
        .collect()
}
