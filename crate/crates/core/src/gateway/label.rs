use std::sync::OnceLock;

use regex::Regex;
use thiserror::Error;

use crate::corpus::NLILabel;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LabelParseError {
    #[error("no label word found in {0:?}")]
    NoLabelFound(String),
    #[error("two label words start at the same position in {0:?}")]
    AmbiguousLabel(String),
}

fn marker_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)label:").expect("valid regex"))
}

// Left word boundary only: "entailments" still reads as entailment.
fn label_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)\b(entailment|contradiction|neutral)").expect("valid regex"))
}

/// Extract the predicted label from completion text.
///
/// Looks after the last `Label:` marker when one is present, otherwise over
/// the whole text, and returns the earliest label word (case-insensitive).
pub fn parse_label(text: &str) -> Result<NLILabel, LabelParseError> {
    let region = match marker_re().find_iter(text).last() {
        Some(m) => &text[m.end()..],
        None => text,
    };
    let found = label_re()
        .find(region)
        .ok_or_else(|| LabelParseError::NoLabelFound(text.to_string()))?;
    found
        .as_str()
        .parse::<NLILabel>()
        .map_err(|_| LabelParseError::AmbiguousLabel(text.to_string()))
}
