use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Placeholder that replaces a masked event description.
pub const MASK_TOKEN: &str = "[MASK]";

/// Lowercase whitespace tokenization with trailing punctuation stripped.
/// The mask placeholder is kept verbatim.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace()
        .filter_map(|w| {
            if w == MASK_TOKEN {
                return Some(w.to_string());
            }
            let t = w
                .trim_matches(|c: char| matches!(c, '?' | '.' | ',' | '!' | ';' | ':' | '"'))
                .to_lowercase();
            (!t.is_empty()).then_some(t)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuestionRecord {
    pub raw: String,
    pub tokens: Vec<String>,
    pub answer_label: usize,
    pub category: String,
}

impl QuestionRecord {
    pub fn parse(raw: &str, answer_label: usize, category: impl Into<String>) -> Result<Self> {
        let tokens = tokenize(raw);
        if tokens.is_empty() {
            return Err(Error::Input(format!("question {raw:?} has no tokens")));
        }
        Ok(Self {
            raw: raw.to_string(),
            tokens,
            answer_label,
            category: category.into(),
        })
    }

    pub fn from_tokens(tokens: Vec<String>, answer_label: usize, category: impl Into<String>) -> Result<Self> {
        if tokens.is_empty() {
            return Err(Error::Input("question has no tokens".into()));
        }
        Ok(Self {
            raw: tokens.join(" "),
            tokens,
            answer_label,
            category: category.into(),
        })
    }

    /// Space-joined tokens; `tokenize(canonical())` gives back `tokens`.
    pub fn canonical(&self) -> String {
        self.tokens.join(" ")
    }

    /// Same label and category, new tokens.
    pub(crate) fn with_tokens(&self, tokens: Vec<String>) -> Self {
        Self {
            raw: tokens.join(" "),
            tokens,
            answer_label: self.answer_label,
            category: self.category.clone(),
        }
    }
}
