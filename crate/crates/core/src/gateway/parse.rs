use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::dataset::AcuityLevel;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, thiserror::Error)]
#[serde(rename_all = "snake_case")]
pub enum ParseError {
    #[error("no acuity level found in response")]
    Unparseable,
}

fn primary() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)acuity\s*(?:level)?\s*[:=]\s*[*_]*\s*([1-5])\b").expect("valid regex"))
}

fn standalone_digit() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\b([1-5])\b").expect("valid regex"))
}

/// Extracts the predicted acuity from a model response.
///
/// Takes the last `Acuity: N` (case-insensitive, optional whitespace) in
/// the text; failing that, the last standalone digit 1–5 on the final
/// non-empty line. Never panics.
pub fn parse_acuity(raw_text: &str) -> Result<AcuityLevel, ParseError> {
    let from_caps = |m: Option<regex::Match<'_>>| m.and_then(|m| m.as_str().parse::<u8>().ok()).and_then(|l| AcuityLevel::new(l).ok());
    if let Some(level) = primary().captures_iter(raw_text).last().and_then(|c| from_caps(c.get(1))) {
        return Ok(level);
    }
    let last_line = raw_text.lines().rev().map(str::trim).find(|l| !l.is_empty()).unwrap_or("");
    standalone_digit()
        .captures_iter(last_line)
        .last()
        .and_then(|c| from_caps(c.get(1)))
        .ok_or(ParseError::Unparseable)
}

/// Removes answer lines (`Acuity: N`) so a rationale can be re-labelled.
pub fn strip_answer_lines(text: &str) -> String {
    text.lines()
        .filter(|l| !primary().is_match(l))
        .collect::<Vec<_>>()
        .join("\n")
        .trim()
        .to_string()
}
