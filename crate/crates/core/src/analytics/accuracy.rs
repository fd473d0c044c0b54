use crate::panel::ItemId;
use crate::parser::CommandSequence;

/// Insert/delete/substitute edit distance between two sequences.
pub fn levenshtein<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    if a.is_empty() {
        return b.len();
    }
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, x) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(x != y);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// `1 - levenshtein / max(len)`; two empty lists are identical.
pub fn normalized_similarity<T: PartialEq>(a: &[T], b: &[T]) -> f64 {
    let longest = a.len().max(b.len());
    if longest == 0 {
        return 1.0;
    }
    1.0 - levenshtein(a, b) as f64 / longest as f64
}

/// Operator accuracy: executed interactions against the correct sequence.
pub fn sequence_accuracy(executed: &[ItemId], correct: &CommandSequence) -> f64 {
    normalized_similarity(executed, &correct.items())
}

/// Model accuracy: the parsed sequence against the task's ground truth.
pub fn parse_accuracy(parsed: &CommandSequence, ground_truth: &CommandSequence) -> f64 {
    normalized_similarity(&parsed.items(), &ground_truth.items())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::panel::PanelSchema;
    use crate::parser::{parse_reply, ParseMode};

    fn seq(s: &str) -> CommandSequence {
        parse_reply(s, &PanelSchema::default_panel(), ParseMode::Strict, "t")
            .unwrap()
            .0
    }

    const AR_GPT: &str = "H_00, S_02, T_01, H_00, B_01, K_02, B_02, T_02";

    #[test]
    fn perfect_and_substituted() {
        let correct = seq(AR_GPT);
        assert_eq!(sequence_accuracy(&correct.items(), &correct), 1.0);
        let one_off = seq("H_00, S_02, T_01, H_00, B_03, K_02, B_02, T_02");
        assert_eq!(sequence_accuracy(&one_off.items(), &correct), 0.875);
        assert_eq!(sequence_accuracy(&[], &correct), 0.0);
    }

    #[test]
    fn insertion() {
        let correct = seq(AR_GPT);
        let extra = seq("H_00, S_02, T_01, T_01, H_00, B_01, K_02, B_02, T_02");
        let acc = sequence_accuracy(&extra.items(), &correct);
        assert!((acc - 8.0 / 9.0).abs() < 1e-12);
    }

    #[test]
    fn parse_accuracy_cases() {
        let truth = seq(AR_GPT);
        assert_eq!(parse_accuracy(&truth, &truth), 1.0);
        let truncated = seq("H_00, S_02, T_01, H_00, B_01, K_02, B_02");
        assert_eq!(parse_accuracy(&truncated, &truth), 0.875);
        let swapped = seq("H_00, S_02, H_00, T_01, B_01, K_02, B_02, T_02");
        assert_eq!(parse_accuracy(&swapped, &truth), 0.75);
    }

    #[test]
    fn small_distances() {
        assert_eq!(levenshtein::<u8>(&[], &[]), 0);
        assert_eq!(levenshtein(b"kitten", b"sitting"), 3);
        assert_eq!(levenshtein(b"abc", b""), 3);
    }
}
