//! Session scoring and paired-condition significance testing.

mod accuracy;
mod score;
mod wilcoxon;

pub use accuracy::{levenshtein, normalized_similarity, parse_accuracy, sequence_accuracy};
pub use score::{read_log, score_session, MetricsReport, ScoreError};
pub use wilcoxon::{
    wilcoxon_signed_rank, wilcoxon_signed_rank_with, Method, MethodChoice, PairedSamples,
    SignedRanks, StatsError, WilcoxonResult, EXACT_THRESHOLD,
};

use crate::exec::Execution;
use crate::parser::CommandSequence;

/// Scores many session logs against one correct sequence.
pub fn score_logs(
    logs: &[String],
    correct: &CommandSequence,
    exec: Execution,
) -> Vec<Result<MetricsReport, ScoreError>> {
    exec.map(logs, |log| score_session(log, correct))
}

/// Runs the signed-rank test over many independent sample sets.
pub fn wilcoxon_batch(
    samples: &[PairedSamples],
    exec: Execution,
) -> Vec<Result<WilcoxonResult, StatsError>> {
    exec.map(samples, wilcoxon_signed_rank)
}
