//! Deterministic offline backend.
//!
//! Recognizes the shipped task wording. Classification requests answer
//! `spam` when the delimited content mentions one of [`MOCK_SPAM_KEYWORDS`]
//! (case-insensitive), `ham` otherwise. Summarization requests return
//! `Summary: ` followed by the first two sentences of the email body.

use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Instant;

use super::{BackendConfig, BackendError, ChatBackend, ChatExchange, CompletionRequest};
use crate::prompt::{ChatMessages, DELIMITER};

pub const MOCK_SPAM_KEYWORDS: [&str; 5] = [
    "viagra",
    "winner",
    "free money",
    "click here",
    "unsubscribe now",
];

const RAW_CLASSIFY_PHRASE: &str = "Please classify the following email with a one-word answer";
const SUMMARY_CLASSIFY_PHRASE: &str = "Please classify it with a one-word answer";
const SUMMARIZE_PHRASE: &str = "Please summarise it ensuring";

const UNRECOGNIZED: &str = "I am not sure what you are asking.";

pub fn mock_complete(messages: &ChatMessages) -> String {
    let user = messages.user();
    let block = delimited_block(user);
    if user.contains(RAW_CLASSIFY_PHRASE) || user.contains(SUMMARY_CLASSIFY_PHRASE) {
        let lower = block.to_lowercase();
        let spam = MOCK_SPAM_KEYWORDS.iter().any(|k| lower.contains(k));
        return if spam { "spam" } else { "ham" }.to_string();
    }
    if user.contains(SUMMARIZE_PHRASE) {
        let body = match block.split_once("[BODY]") {
            Some((_, body)) => body,
            None => block,
        };
        return format!("Summary: {}", first_sentences(body, 2));
    }
    UNRECOGNIZED.to_string()
}

/// Text between the first two lines that consist of `###`.
fn delimited_block(user: &str) -> &str {
    let mut offset = 0;
    let mut start = None;
    for line in user.split_inclusive('\n') {
        let bare = line.trim_end_matches(['\n', '\r']);
        if bare == DELIMITER {
            match start {
                None => start = Some(offset + line.len()),
                Some(s) => return user[s..offset].trim_matches(['\n', '\r']),
            }
        }
        offset += line.len();
    }
    ""
}

/// Sentences end at `.`, `!` or `?` followed by whitespace or end of text.
fn first_sentences(text: &str, n: usize) -> String {
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    let mut taken = 0;
    let mut end = text.len();
    for (i, &(pos, ch)) in chars.iter().enumerate() {
        if matches!(ch, '.' | '!' | '?')
            && chars
                .get(i + 1)
                .is_none_or(|&(_, next)| next.is_whitespace())
        {
            taken += 1;
            if taken == n {
                end = pos + ch.len_utf8();
                break;
            }
        }
    }
    text[..end].split_whitespace().collect::<Vec<_>>().join(" ")
}

fn approx_tokens(text: &str) -> u64 {
    text.chars().count().div_ceil(4) as u64
}

#[derive(Debug)]
pub struct MockBackend {
    cfg: BackendConfig,
    calls: AtomicU64,
}

impl MockBackend {
    pub fn new(cfg: BackendConfig) -> Self {
        Self {
            cfg,
            calls: AtomicU64::new(0),
        }
    }

    /// Number of completions served so far.
    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::SeqCst)
    }
}

impl ChatBackend for MockBackend {
    fn config(&self) -> &BackendConfig {
        &self.cfg
    }

    fn complete_with_limit(
        &self,
        messages: &ChatMessages,
        max_tokens: u32,
    ) -> Result<ChatExchange, BackendError> {
        let started = Instant::now();
        self.calls.fetch_add(1, Ordering::SeqCst);
        let mut text = mock_complete(messages);
        let limit_chars = max_tokens as usize * 4;
        if text.chars().count() > limit_chars {
            text = text.chars().take(limit_chars).collect();
        }
        Ok(ChatExchange {
            backend_id: self.cfg.backend_id.clone(),
            request: CompletionRequest {
                model: self.cfg.model_name.clone(),
                messages: messages.clone(),
                temperature: self.cfg.temperature,
                max_tokens,
            },
            prompt_tokens: approx_tokens(messages.system()) + approx_tokens(messages.user()),
            completion_tokens: approx_tokens(&text),
            completion_text: text,
            latency_ms: started.elapsed().as_millis() as u64,
            attempt_count: 1,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prep::PreparedContent;
    use crate::prompt::PromptKit;

    fn prepared(subject: &str, body: &str) -> PreparedContent {
        PreparedContent {
            email_id: "e".into(),
            subject: subject.into(),
            body: body.into(),
            truncated: false,
        }
    }

    #[test]
    fn keyword_spam() {
        let kit = PromptKit::builtin();
        let m = kit
            .render_raw_classification(&prepared("Hello", "You are a WINNER, click here"))
            .unwrap();
        assert_eq!(mock_complete(&m), "spam");
    }

    #[test]
    fn benign_ham() {
        let kit = PromptKit::builtin();
        let m = kit
            .render_raw_classification(&prepared("Schedule", "Meeting moved to 3pm"))
            .unwrap();
        assert_eq!(mock_complete(&m), "ham");
    }

    #[test]
    fn keyword_in_subject_counts() {
        let kit = PromptKit::builtin();
        let m = kit
            .render_raw_classification(&prepared("Free Money inside", "hello"))
            .unwrap();
        assert_eq!(mock_complete(&m), "spam");
    }

    #[test]
    fn instruction_text_is_not_content() {
        // the task wording itself mentions "spam"; only the block is scanned
        let kit = PromptKit::builtin();
        let m = kit.render_summary_classification("viagra deals").unwrap();
        assert_eq!(mock_complete(&m), "spam");
        let m = kit
            .render_summary_classification("a note from Bob")
            .unwrap();
        assert_eq!(mock_complete(&m), "ham");
    }

    #[test]
    fn summary_takes_two_sentences() {
        let kit = PromptKit::builtin();
        let body = "First one. Second one! Third? Fourth one. Fifth.";
        let m = kit.render_summarization(&prepared("S", body)).unwrap();
        assert_eq!(mock_complete(&m), "Summary: First one. Second one!");
    }

    #[test]
    fn summary_of_empty_body() {
        let kit = PromptKit::builtin();
        let m = kit
            .render_summarization(&prepared("Subject only", ""))
            .unwrap();
        assert_eq!(mock_complete(&m), "Summary: ");
    }

    #[test]
    fn decimals_do_not_end_sentences() {
        assert_eq!(
            first_sentences("Pay 3.50 now. Then more. Rest.", 2),
            "Pay 3.50 now. Then more."
        );
        assert_eq!(
            first_sentences("no terminator here", 2),
            "no terminator here"
        );
    }

    #[test]
    fn unknown_prompt() {
        let m = ChatMessages::new("s", "what is 2+2?");
        assert_eq!(mock_complete(&m), UNRECOGNIZED);
    }

    #[test]
    fn backend_counts_calls_and_usage() {
        let backend = MockBackend::new(BackendConfig::mock("mock"));
        let m = ChatMessages::new("abcd", "abcdefgh");
        let ex = backend.complete(&m).unwrap();
        assert_eq!(backend.calls(), 1);
        assert_eq!(ex.prompt_tokens, 3);
        assert_eq!(ex.attempt_count, 1);
        assert_eq!(ex.completion_text, UNRECOGNIZED);
        let ex = backend.complete_with_limit(&m, 2).unwrap();
        assert_eq!(ex.completion_text.chars().count(), 8);
        assert_eq!(backend.calls(), 2);
    }
}
