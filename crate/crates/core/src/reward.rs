//! Rule-based rewards: a binary format reward, a binary accuracy reward,
//! and their weighted combination.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::grammar::{parse_tagged, validate, FormatSpec, ParsedResponse, ReasoningMode};
use crate::vocab::{TagKind, TokenClass, TokenId, Vocab};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AnswerKind {
    Numeric,
    Symbolic,
}

/// The reference answer of a prompt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "canonical", rename_all = "lowercase")]
pub enum GoldAnswer {
    Numeric(i64),
    Symbolic(String),
}

impl GoldAnswer {
    pub fn kind(&self) -> AnswerKind {
        match self {
            GoldAnswer::Numeric(_) => AnswerKind::Numeric,
            GoldAnswer::Symbolic(_) => AnswerKind::Symbolic,
        }
    }
}

impl fmt::Display for GoldAnswer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GoldAnswer::Numeric(v) => write!(f, "{v}"),
            GoldAnswer::Symbolic(s) => f.write_str(s),
        }
    }
}

/// Per-response reward components.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub format: f64,
    pub accuracy: f64,
    pub total: f64,
}

/// Mixing weights of the two components. The default is the plain mean.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardWeights {
    pub format: f64,
    pub accuracy: f64,
}

impl Default for RewardWeights {
    fn default() -> Self {
        RewardWeights { format: 0.5, accuracy: 0.5 }
    }
}

/// 1 iff `response` validates under `spec`.
pub fn format_reward(response: &[TokenId], spec: &FormatSpec, vocab: &Vocab) -> f64 {
    format_reward_parsed(&parse_tagged(response, vocab), spec, vocab)
}

fn format_reward_parsed(parsed: &ParsedResponse, spec: &FormatSpec, vocab: &Vocab) -> f64 {
    if validate(parsed, spec, vocab).0 {
        1.0
    } else {
        0.0
    }
}

/// Locate the predicted answer.
///
/// Deliberate responses must carry exactly one `<answer>` block. Intuitive
/// responses use the last `<answer>` block if there is one, and otherwise the
/// last maximal run of digit, minus and degree tokens.
pub fn extract_answer<'a>(
    parsed: &'a ParsedResponse,
    mode: ReasoningMode,
    vocab: &Vocab,
) -> Option<&'a [TokenId]> {
    let mut answers = parsed.blocks_with(TagKind::Answer);
    match mode {
        ReasoningMode::Deliberate => match (answers.next(), answers.next()) {
            (Some(b), None) => Some(parsed.content(b)),
            _ => None,
        },
        ReasoningMode::Intuitive => {
            if let Some(b) = answers.last() {
                return Some(parsed.content(b));
            }
            let tokens = &parsed.tokens;
            let end = tokens.iter().rposition(|&t| vocab.class(t).is_numeric())? + 1;
            let start = tokens[..end]
                .iter()
                .rposition(|&t| !vocab.class(t).is_numeric())
                .map_or(0, |i| i + 1);
            Some(&tokens[start..end])
        }
    }
}

/// Read a token span as an integer: degree signs are dropped, an optional
/// leading minus is allowed, everything else must be a digit.
pub fn parse_integer(span: &[TokenId], vocab: &Vocab) -> Option<i64> {
    let mut classes = span
        .iter()
        .map(|&t| vocab.class(t))
        .filter(|&c| c != TokenClass::Degree && c != TokenClass::End)
        .peekable();
    let negative = classes.next_if_eq(&TokenClass::Minus).is_some();
    let mut value: i64 = 0;
    let mut digits = 0;
    for c in classes {
        let TokenClass::Digit(d) = c else { return None };
        value = value.checked_mul(10)?.checked_add(d as i64)?;
        digits += 1;
    }
    if digits == 0 {
        return None;
    }
    Some(if negative { -value } else { value })
}

/// 1 iff the normalized prediction equals the gold answer.
pub fn accuracy_reward(predicted: Option<&[TokenId]>, gold: &GoldAnswer, vocab: &Vocab) -> f64 {
    let Some(span) = predicted else { return 0.0 };
    let hit = match gold {
        GoldAnswer::Numeric(g) => parse_integer(span, vocab) == Some(*g),
        GoldAnswer::Symbolic(g) => {
            let text: String = span
                .iter()
                .filter(|&&t| !matches!(vocab.class(t), TokenClass::Degree | TokenClass::End))
                .map(|&t| vocab.token(t))
                .collect();
            let gold: String = g.split_whitespace().collect();
            text.to_lowercase() == gold.to_lowercase()
        }
    };
    if hit {
        1.0
    } else {
        0.0
    }
}

/// Score one response. The two components are computed independently: a
/// malformed response can still earn the accuracy reward.
pub fn combined_reward(
    response: &[TokenId],
    spec: &FormatSpec,
    gold: &GoldAnswer,
    mode: ReasoningMode,
    weights: RewardWeights,
    vocab: &Vocab,
) -> RewardBreakdown {
    let parsed = parse_tagged(response, vocab);
    let format = format_reward_parsed(&parsed, spec, vocab);
    let accuracy = accuracy_reward(extract_answer(&parsed, mode, vocab), gold, vocab);
    RewardBreakdown {
        format,
        accuracy,
        total: weights.format * format + weights.accuracy * accuracy,
    }
}
