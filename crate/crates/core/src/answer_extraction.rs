//! Answer cleaning and correctness comparison.
//!
//! Free-form model output is reduced to a canonical answer string per task
//! family. The rules are deliberately simple and fixture-locked:
//!
//! * numeric: the last number token (optional sign, decimal part, comma
//!   grouping, `$`/`%` decoration), with separators and decoration removed.
//!   A `-` immediately preceded by a digit is treated as an operator, not a
//!   sign.
//! * multiple choice: the last standalone choice letter, preferring one
//!   that follows the final occurrence of the phrase "answer is".
//! * yes/no: the last standalone "yes" or "no", case-insensitive.
//! * string: the contents of the last double-quoted span if any, otherwise
//!   the last whitespace token stripped of surrounding punctuation; all
//!   whitespace removed, lowercased.

use std::collections::BTreeSet;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ExtractError {
    #[error("no answer token found for family {0:?}")]
    NoAnswerFound(TaskFamilyKind),
    #[error("family mismatch: {left:?} vs {right:?}")]
    FamilyMismatch {
        left: TaskFamilyKind,
        right: TaskFamilyKind,
    },
    #[error("choice letters required for multiple_choice and forbidden otherwise")]
    InvalidFamily,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskFamilyKind {
    Numeric,
    MultipleChoice,
    YesNo,
    StringExact,
}

/// Task family: answer shape plus, for multiple choice, the letter set.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskFamily {
    pub kind: TaskFamilyKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub choice_letters: Option<BTreeSet<char>>,
}

impl TaskFamily {
    pub fn numeric() -> Self {
        Self {
            kind: TaskFamilyKind::Numeric,
            choice_letters: None,
        }
    }

    pub fn multiple_choice(letters: impl IntoIterator<Item = char>) -> Self {
        Self {
            kind: TaskFamilyKind::MultipleChoice,
            choice_letters: Some(
                letters
                    .into_iter()
                    .map(|c| c.to_ascii_uppercase())
                    .collect(),
            ),
        }
    }

    pub fn yes_no() -> Self {
        Self {
            kind: TaskFamilyKind::YesNo,
            choice_letters: None,
        }
    }

    pub fn string_exact() -> Self {
        Self {
            kind: TaskFamilyKind::StringExact,
            choice_letters: None,
        }
    }

    pub fn validate(&self) -> Result<(), ExtractError> {
        let has_letters = self.choice_letters.as_ref().is_some_and(|l| !l.is_empty());
        match self.kind {
            TaskFamilyKind::MultipleChoice if !has_letters => Err(ExtractError::InvalidFamily),
            TaskFamilyKind::MultipleChoice => Ok(()),
            _ if self.choice_letters.is_some() => Err(ExtractError::InvalidFamily),
            _ => Ok(()),
        }
    }
}

/// A canonical answer: normalized string plus the family it belongs to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizedAnswer {
    pub value: String,
    pub family: TaskFamily,
}

fn number_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"[-+]?\$?\d[\d,]*(?:\.\d+)?%?").unwrap())
}

fn yes_no_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)\b(yes|no)\b").unwrap())
}

fn quoted_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r#""([^"]*)""#).unwrap())
}

fn answer_is_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)answer is").unwrap())
}

fn extract_numeric(raw: &str) -> Option<String> {
    let mut last: Option<String> = None;
    for m in number_regex().find_iter(raw) {
        let mut token = m.as_str().to_string();
        // A sign directly after a digit is an infix operator ("12-30").
        if (token.starts_with('-') || token.starts_with('+')) && m.start() > 0 {
            let prev = raw[..m.start()].chars().next_back().unwrap();
            if prev.is_ascii_digit() {
                token.remove(0);
            }
        }
        let negative = token.starts_with('-');
        let cleaned: String = token
            .chars()
            .filter(|c| c.is_ascii_digit() || *c == '.')
            .collect();
        let cleaned = cleaned.trim_end_matches('.').to_string();
        if cleaned.is_empty() {
            continue;
        }
        last = Some(if negative {
            format!("-{cleaned}")
        } else {
            cleaned
        });
    }
    last
}

fn is_standalone(raw: &str, start: usize, end: usize) -> bool {
    let before_ok = raw[..start]
        .chars()
        .next_back()
        .is_none_or(|c| !c.is_alphanumeric());
    let after_ok = raw[end..]
        .chars()
        .next()
        .is_none_or(|c| !c.is_alphanumeric());
    before_ok && after_ok
}

fn extract_choice(raw: &str, letters: &BTreeSet<char>) -> Option<String> {
    // Prefer a letter following the last "answer is", skipping punctuation
    // and whitespace between the phrase and the letter.
    if let Some(m) = answer_is_regex().find_iter(raw).last() {
        let tail = &raw[m.end()..];
        for (offset, c) in tail.char_indices() {
            if c.is_whitespace() || !c.is_alphanumeric() {
                continue;
            }
            let upper = c.to_ascii_uppercase();
            if letters.contains(&upper) {
                let abs = m.end() + offset;
                if is_standalone(raw, abs, abs + c.len_utf8()) {
                    return Some(upper.to_string());
                }
            }
            break;
        }
    }
    // Otherwise the last standalone choice letter anywhere in the text.
    let mut last = None;
    for (i, c) in raw.char_indices() {
        let upper = c.to_ascii_uppercase();
        if letters.contains(&upper) && is_standalone(raw, i, i + c.len_utf8()) {
            last = Some(upper.to_string());
        }
    }
    last
}

fn extract_yes_no(raw: &str) -> Option<String> {
    yes_no_regex()
        .find_iter(raw)
        .last()
        .map(|m| m.as_str().to_lowercase())
}

fn strip_string_exact(token: &str) -> String {
    token
        .trim_matches(|c: char| !c.is_alphanumeric())
        .chars()
        .filter(|c| !c.is_whitespace())
        .collect::<String>()
        .to_lowercase()
}

fn extract_string_exact(raw: &str) -> Option<String> {
    if let Some(caps) = quoted_regex().captures_iter(raw).last() {
        let inner: String = caps[1]
            .chars()
            .filter(|c| !c.is_whitespace())
            .collect::<String>()
            .to_lowercase();
        if !inner.is_empty() {
            return Some(inner);
        }
    }
    raw.split_whitespace()
        .rev()
        .map(strip_string_exact)
        .find(|t| !t.is_empty())
}

/// Extracts the canonical answer from free-form text.
pub fn extract(raw: &str, family: &TaskFamily) -> Result<NormalizedAnswer, ExtractError> {
    family.validate()?;
    let value = match family.kind {
        TaskFamilyKind::Numeric => extract_numeric(raw),
        TaskFamilyKind::MultipleChoice => {
            extract_choice(raw, family.choice_letters.as_ref().unwrap())
        }
        TaskFamilyKind::YesNo => extract_yes_no(raw),
        TaskFamilyKind::StringExact => extract_string_exact(raw),
    };
    value
        .map(|value| NormalizedAnswer {
            value,
            family: family.clone(),
        })
        .ok_or(ExtractError::NoAnswerFound(family.kind))
}

/// Compares two canonical answers. Numeric values compare as exact
/// decimals, with a 1e-6 tolerance when either side has a fractional part;
/// every other family compares by string equality.
pub fn is_correct(pred: &NormalizedAnswer, gold: &NormalizedAnswer) -> Result<bool, ExtractError> {
    if pred.family.kind != gold.family.kind {
        return Err(ExtractError::FamilyMismatch {
            left: pred.family.kind,
            right: gold.family.kind,
        });
    }
    if pred.family.kind != TaskFamilyKind::Numeric {
        return Ok(pred.value == gold.value);
    }
    let fractional = pred.value.contains('.') || gold.value.contains('.');
    if fractional {
        match (pred.value.parse::<f64>(), gold.value.parse::<f64>()) {
            (Ok(a), Ok(b)) => Ok((a - b).abs() <= 1e-6),
            _ => Ok(pred.value == gold.value),
        }
    } else {
        match (pred.value.parse::<i128>(), gold.value.parse::<i128>()) {
            (Ok(a), Ok(b)) => Ok(a == b),
            _ => Ok(pred.value == gold.value),
        }
    }
}
