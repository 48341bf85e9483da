//! Line-delimited tuple transcript. Each line is one deduplicated tuple, so a
//! later run can skip the query-heavy collection and go straight to the
//! candidate search.

use std::io::{BufRead, Write};

use hardlabel_core::recovery::RecoveredTuple;
use serde::{Deserialize, Serialize};

use crate::error::CliError;
use crate::format::to_json;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TupleRecord {
    pub point: Vec<f64>,
    /// `null` marks a coordinate that could not be recovered.
    pub gamma: Vec<Option<f64>>,
    pub beta: f64,
    pub anchor: usize,
    pub valid: Vec<bool>,
    pub occurrence_count: usize,
    pub source_points: Vec<usize>,
}

impl From<&RecoveredTuple> for TupleRecord {
    fn from(t: &RecoveredTuple) -> Self {
        Self {
            point: t.point.clone(),
            gamma: t
                .gamma
                .iter()
                .zip(&t.valid)
                .map(|(&g, &ok)| (ok && g.is_finite()).then_some(g))
                .collect(),
            beta: t.beta,
            anchor: t.anchor_index,
            valid: t.valid.clone(),
            occurrence_count: t.occurrence_count,
            source_points: t.source_points.clone(),
        }
    }
}

impl From<TupleRecord> for RecoveredTuple {
    fn from(r: TupleRecord) -> Self {
        RecoveredTuple {
            gamma: r.gamma.iter().map(|g| g.unwrap_or(0.0)).collect(),
            beta: r.beta,
            anchor_index: r.anchor,
            valid: r
                .valid
                .iter()
                .zip(&r.gamma)
                .map(|(&v, g)| v && g.is_some())
                .collect(),
            occurrence_count: r.occurrence_count,
            source_points: r.source_points,
            point: r.point,
        }
    }
}

pub fn write_transcript<W: Write>(mut w: W, tuples: &[RecoveredTuple]) -> Result<(), CliError> {
    for t in tuples {
        let line = to_json(&TupleRecord::from(t))?;
        writeln!(w, "{line}").map_err(CliError::io("transcript"))?;
    }
    Ok(())
}

/// Blank lines are skipped.
pub fn read_transcript<R: BufRead>(r: R) -> Result<Vec<RecoveredTuple>, CliError> {
    let mut out = Vec::new();
    for line in r.lines() {
        let line = line.map_err(CliError::io("transcript"))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str::<TupleRecord>(&line)?.into());
    }
    Ok(out)
}
