//! Answer normalization shared by voting and accuracy scoring.

use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::dataset::QuestionKind;

static OPTION_LETTER: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^\(?([A-F])(?:$|[.:)])").unwrap());

/// Which equivalences two answers are compared under.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Normalizer {
    pub trim: bool,
    pub casefold: bool,
    pub strip_trailing_period: bool,
    /// For multiple-choice answers, reduce "A. Turn left." to "a".
    pub option_letter: bool,
}

impl Default for Normalizer {
    fn default() -> Self {
        Self {
            trim: true,
            casefold: true,
            strip_trailing_period: true,
            option_letter: true,
        }
    }
}

impl Normalizer {
    pub fn normalize(&self, text: &str, kind: QuestionKind) -> String {
        let mut s = if self.trim { text.trim() } else { text };
        if self.option_letter && kind == QuestionKind::MultipleChoice {
            if let Some(letter) = option_letter(s) {
                return if self.casefold {
                    letter.to_ascii_lowercase().to_string()
                } else {
                    letter.to_string()
                };
            }
        }
        if self.strip_trailing_period {
            s = s.strip_suffix('.').unwrap_or(s);
            if self.trim {
                s = s.trim_end();
            }
        }
        if self.casefold {
            s.to_lowercase()
        } else {
            s.to_string()
        }
    }
}

/// Leading option letter of a multiple-choice answer, if any.
pub fn option_letter(text: &str) -> Option<char> {
    OPTION_LETTER
        .captures(text.trim())
        .and_then(|c| c.get(1))
        .and_then(|m| m.as_str().chars().next())
}

/// `Some(true)` for yes, `Some(false)` for no, under the default rules.
pub fn yes_no(text: &str) -> Option<bool> {
    match Normalizer::default().normalize(text, QuestionKind::YesNo).as_str() {
        "yes" => Some(true),
        "no" => Some(false),
        _ => None,
    }
}
