//! Token-budget truncation and delimiter sanitization of email content.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::EmailContent;

pub const DEFAULT_BUDGET: usize = 512;

/// How far back from a hard cut to look for a whitespace boundary.
const BOUNDARY_LOOKBACK: usize = 20;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PrepError {
    #[error("token budget must be at least 1")]
    ZeroBudget,
    #[error("unknown estimator `{0}` (expected chars_div_4, whitespace_words or exact)")]
    UnknownEstimator(String),
    #[error("the exact estimator needs a tokenizer supplied by the backend; none is registered")]
    NoExactTokenizer,
}

/// Exact token counter a backend may plug in.
pub trait TokenCounter: Send + Sync {
    fn count(&self, text: &str) -> usize;
    fn name(&self) -> &str;
}

#[derive(Clone)]
pub enum Estimator {
    CharsDiv4,
    WhitespaceWords,
    Exact(Arc<dyn TokenCounter>),
}

impl Estimator {
    pub fn estimate(&self, text: &str) -> usize {
        match self {
            Estimator::CharsDiv4 => text.chars().count().div_ceil(4),
            Estimator::WhitespaceWords => text.split_whitespace().count(),
            Estimator::Exact(counter) => counter.count(text),
        }
    }

    pub fn name(&self) -> &str {
        match self {
            Estimator::CharsDiv4 => "chars_div_4",
            Estimator::WhitespaceWords => "whitespace_words",
            Estimator::Exact(counter) => counter.name(),
        }
    }
}

impl fmt::Debug for Estimator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl PartialEq for Estimator {
    fn eq(&self, other: &Self) -> bool {
        self.name() == other.name()
    }
}

impl FromStr for Estimator {
    type Err = PrepError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "chars_div_4" => Ok(Estimator::CharsDiv4),
            "whitespace_words" => Ok(Estimator::WhitespaceWords),
            "exact" | "pluggable_exact" => Err(PrepError::NoExactTokenizer),
            other => Err(PrepError::UnknownEstimator(other.to_string())),
        }
    }
}

pub fn estimate_tokens(text: &str, estimator: &Estimator) -> usize {
    estimator.estimate(text)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TruncationPolicy {
    max_content_tokens: usize,
    estimator: Estimator,
}

impl TruncationPolicy {
    pub fn new(max_content_tokens: usize, estimator: Estimator) -> Result<Self, PrepError> {
        if max_content_tokens == 0 {
            return Err(PrepError::ZeroBudget);
        }
        Ok(Self {
            max_content_tokens,
            estimator,
        })
    }

    pub fn budget(&self) -> usize {
        self.max_content_tokens
    }

    pub fn estimator(&self) -> &Estimator {
        &self.estimator
    }
}

impl Default for TruncationPolicy {
    fn default() -> Self {
        Self {
            max_content_tokens: DEFAULT_BUDGET,
            estimator: Estimator::CharsDiv4,
        }
    }
}

/// Subject plus a sanitized body cut to the token budget.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PreparedContent {
    pub email_id: String,
    pub subject: String,
    pub body: String,
    pub truncated: bool,
}

/// Collapses every run of three or more `#` into exactly `##`.
pub fn sanitize_delimiters(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut run = 0usize;
    let flush = |out: &mut String, run: usize| {
        let keep = if run >= 3 { 2 } else { run };
        out.extend(std::iter::repeat_n('#', keep));
    };
    for ch in text.chars() {
        if ch == '#' {
            run += 1;
            continue;
        }
        flush(&mut out, run);
        run = 0;
        out.push(ch);
    }
    flush(&mut out, run);
    out
}

/// Sanitizes subject and body, then cuts the body so that the estimated
/// tokens of subject and body together fit `policy`'s budget. The subject
/// itself is never cut; if it alone exhausts the budget the body is empty.
pub fn truncate_body(content: &EmailContent, policy: &TruncationPolicy) -> PreparedContent {
    let subject = sanitize_delimiters(&content.subject);
    let body = sanitize_delimiters(&content.body);
    let est = &policy.estimator;
    let remaining = policy
        .max_content_tokens
        .saturating_sub(est.estimate(&subject));

    let (body, truncated) = if est.estimate(&body) <= remaining {
        (body, false)
    } else {
        let cut = cut_point(&body, remaining, est);
        let prefix = &body[..cut];
        (prefix.to_string(), true)
    };
    PreparedContent {
        email_id: content.id.clone(),
        subject,
        body,
        truncated,
    }
}

/// Byte offset of the truncated body's end. Assumes the whole body exceeds
/// `remaining` and that the estimator is monotone in prefix length.
fn cut_point(body: &str, remaining: usize, est: &Estimator) -> usize {
    let bounds: Vec<usize> = body
        .char_indices()
        .map(|(i, _)| i)
        .chain(std::iter::once(body.len()))
        .collect();

    // Largest scalar count `n` with est(body[..n]) <= remaining.
    let (mut lo, mut hi) = (0usize, bounds.len() - 1);
    while lo < hi {
        let mid = (lo + hi).div_ceil(2);
        if est.estimate(&body[..bounds[mid]]) <= remaining {
            lo = mid;
        } else {
            hi = mid - 1;
        }
    }
    let hard = lo;

    let chars: Vec<char> = body.chars().collect();
    let floor = hard.saturating_sub(BOUNDARY_LOOKBACK).max(1);
    let boundary = (floor..=hard)
        .rev()
        .find(|&q| q < chars.len() && chars[q].is_whitespace());
    let mut end = boundary.unwrap_or(hard);
    if boundary.is_some() {
        while end > 0 && chars[end - 1].is_whitespace() {
            end -= 1;
        }
    }
    bounds[end]
}
