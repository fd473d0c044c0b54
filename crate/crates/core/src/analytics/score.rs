use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::panel::ItemId;
use crate::parser::CommandSequence;
use crate::session::{LogRecord, Phase};

use super::accuracy::{normalized_similarity, sequence_accuracy};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub completion_time_s: f64,
    pub accuracy: f64,
    pub parse_accuracy: Option<f64>,
    pub gating_violations: usize,
}

#[derive(Debug, Error)]
pub enum ScoreError {
    #[error("log line {line}: {source}")]
    BadRecord {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("incomplete log: no {0} record")]
    Incomplete(&'static str),
    #[error("log line {line}: bad stored sequence {steps:?}")]
    BadSequence { line: usize, steps: String },
}

pub fn read_log(jsonl: &str) -> Result<Vec<LogRecord>, ScoreError> {
    jsonl
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|source| ScoreError::BadRecord { line: i + 1, source })
        })
        .collect()
}

/// Scores one session log against the task's correct sequence.
///
/// Only the attempt after the last capture counts; completion time runs
/// from that capture to the done record.
pub fn score_session(jsonl: &str, correct: &CommandSequence) -> Result<MetricsReport, ScoreError> {
    let records = read_log(jsonl)?;
    let is_phase = |r: &LogRecord, want: Phase| matches!(r, LogRecord::Phase { phase, .. } if *phase == want);

    let capture_at = records
        .iter()
        .rposition(|r| is_phase(r, Phase::Capturing))
        .ok_or(ScoreError::Incomplete("capture"))?;
    let attempt = &records[capture_at..];
    let t0 = match &attempt[0] {
        LogRecord::Phase { timestamp_ms, .. } => *timestamp_ms,
        _ => unreachable!(),
    };
    let t_end = attempt
        .iter()
        .find_map(|r| match r {
            LogRecord::Phase {
                phase: Phase::Done,
                timestamp_ms,
                ..
            } => Some(*timestamp_ms),
            _ => None,
        })
        .ok_or(ScoreError::Incomplete("done"))?;

    let mut executed = Vec::new();
    let mut violations = 0;
    let mut parsed: Option<Vec<ItemId>> = None;
    for (offset, record) in attempt.iter().enumerate() {
        match record {
            LogRecord::Event { event, .. } => {
                executed.push(event.item);
                violations += usize::from(event.gating_violation);
            }
            LogRecord::Sequence { steps, .. } => {
                let items = steps
                    .split(',')
                    .map(|t| ItemId::parse_token(t).ok())
                    .collect::<Option<Vec<_>>>()
                    .ok_or_else(|| ScoreError::BadSequence {
                        line: capture_at + offset + 1,
                        steps: steps.clone(),
                    })?;
                parsed = Some(items);
            }
            _ => {}
        }
    }

    Ok(MetricsReport {
        completion_time_s: t_end.saturating_sub(t0) as f64 / 1000.0,
        accuracy: sequence_accuracy(&executed, correct),
        parse_accuracy: parsed.map(|p| normalized_similarity(&p, &correct.items())),
        gating_violations: violations,
    })
}
