use super::{Dialog, QaPair, Role};
use crate::text::TokenSequence;

pub fn question_id(dialog_id: &str, turn_index: usize) -> String {
    format!("{dialog_id}-{turn_index}")
}

/// One pair per customer turn directly followed by a support turn.
///
/// The question is the customer turn with up to `context_turns` preceding
/// turns prepended, trimmed to `max_question`; the answer is trimmed to
/// `max_answer`.
pub fn extract_pairs(
    dialog: &Dialog,
    context_turns: usize,
    max_question: usize,
    max_answer: usize,
) -> Vec<QaPair> {
    dialog
        .turns
        .windows(2)
        .enumerate()
        .filter(|(_, w)| w[0].role == Role::Customer && w[1].role == Role::Support)
        .map(|(i, w)| {
            let first = i.saturating_sub(context_turns);
            let question = TokenSequence::concat(dialog.turns[first..=i].iter().map(|t| &t.tokens));
            QaPair {
                question_id: question_id(&dialog.dialog_id, i),
                dialog_id: dialog.dialog_id.clone(),
                turn_index: i,
                question: question.trim(max_question),
                answer: w[1].tokens.trim(max_answer),
                timestamp: w[1].timestamp,
            }
        })
        .filter(|p| !p.question.is_empty() && !p.answer.is_empty())
        .collect()
}

pub fn extract_all_pairs(
    dialogs: &[Dialog],
    context_turns: usize,
    max_question: usize,
    max_answer: usize,
) -> Vec<QaPair> {
    dialogs
        .iter()
        .flat_map(|d| extract_pairs(d, context_turns, max_question, max_answer))
        .collect()
}
