use std::fmt;

use serde::{Deserialize, Serialize};

use crate::corpus::GoldLabel;

/// Parsed model answer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Spam,
    Ham,
    Unparseable,
}

impl Label {
    pub fn as_gold(self) -> Option<GoldLabel> {
        match self {
            Label::Spam => Some(GoldLabel::Spam),
            Label::Ham => Some(GoldLabel::Ham),
            Label::Unparseable => None,
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Label::Spam => "spam",
            Label::Ham => "ham",
            Label::Unparseable => "unparseable",
        })
    }
}

/// The first standalone `spam` or `ham` word decides; anything else is
/// unparseable. Case and punctuation around words are ignored.
pub fn parse_label(completion: &str) -> Label {
    let lower = completion.to_lowercase();
    for word in lower.split_whitespace() {
        match word.trim_matches(|c: char| !c.is_alphanumeric()) {
            "spam" => return Label::Spam,
            "ham" => return Label::Ham,
            _ => {}
        }
    }
    Label::Unparseable
}
