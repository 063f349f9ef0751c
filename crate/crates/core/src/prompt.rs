//! Prompt templates and chat-message rendering.
//!
//! Three bundles are shipped under `prompts/` and compiled in; an alternative
//! directory with the same file names can be loaded at runtime.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::prep::PreparedContent;

pub const DELIMITER: &str = "###";

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("content contains the `###` delimiter; sanitize it first")]
    UnsanitizedContent,
    #[error("template {name}: {reason}")]
    InvalidTemplate { name: &'static str, reason: String },
    #[error("reading template {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BundleName {
    RawClassify,
    Summarize,
    SummaryClassify,
}

impl BundleName {
    pub const ALL: [BundleName; 3] = [
        BundleName::RawClassify,
        BundleName::Summarize,
        BundleName::SummaryClassify,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            BundleName::RawClassify => "raw_classify",
            BundleName::Summarize => "summarize",
            BundleName::SummaryClassify => "summary_classify",
        }
    }

    pub fn file_name(self) -> String {
        format!("{}.txt", self.as_str())
    }

    pub fn slot(self) -> &'static str {
        match self {
            BundleName::RawClassify | BundleName::Summarize => "{email}",
            BundleName::SummaryClassify => "{summary}",
        }
    }

    fn builtin_source(self) -> &'static str {
        match self {
            BundleName::RawClassify => include_str!("../prompts/raw_classify.txt"),
            BundleName::Summarize => include_str!("../prompts/summarize.txt"),
            BundleName::SummaryClassify => include_str!("../prompts/summary_classify.txt"),
        }
    }
}

impl fmt::Display for BundleName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

/// A system message followed by a single user message.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ChatMessages(Vec<ChatMessage>);

impl ChatMessages {
    pub fn new(system: impl Into<String>, user: impl Into<String>) -> Self {
        Self(vec![
            ChatMessage {
                role: Role::System,
                content: system.into(),
            },
            ChatMessage {
                role: Role::User,
                content: user.into(),
            },
        ])
    }

    pub fn system(&self) -> &str {
        &self.0[0].content
    }

    pub fn user(&self) -> &str {
        &self.0[1].content
    }

    pub fn as_slice(&self) -> &[ChatMessage] {
        &self.0
    }

    /// Canonical byte encoding used for cache keys.
    pub fn canonical_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        for msg in &self.0 {
            let role = match msg.role {
                Role::System => b"system".as_slice(),
                Role::User => b"user".as_slice(),
            };
            out.extend_from_slice(&(role.len() as u64).to_le_bytes());
            out.extend_from_slice(role);
            out.extend_from_slice(&(msg.content.len() as u64).to_le_bytes());
            out.extend_from_slice(msg.content.as_bytes());
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptBundle {
    pub name: BundleName,
    pub system_text: String,
    pub task_template: String,
}

impl PromptBundle {
    /// Parses the `[system]` / `[task]` file layout and checks the slot and
    /// delimiter lines.
    pub fn parse(name: BundleName, source: &str) -> Result<Self, PromptError> {
        let invalid = |reason: &str| PromptError::InvalidTemplate {
            name: name.as_str(),
            reason: reason.to_string(),
        };
        let source = source.replace("\r\n", "\n");
        let rest = source
            .strip_prefix("[system]\n")
            .ok_or_else(|| invalid("must start with a `[system]` line"))?;
        let (system, task) = rest
            .split_once("\n[task]\n")
            .ok_or_else(|| invalid("missing `[task]` line"))?;
        let system_text = system.trim_end_matches('\n').to_string();
        let task_template = task.trim_end_matches('\n').to_string();

        let slot = name.slot();
        if task_template.matches(slot).count() != 1 {
            return Err(invalid(&format!("task must contain `{slot}` exactly once")));
        }
        let lines: Vec<&str> = task_template.lines().collect();
        let delims: Vec<usize> = lines
            .iter()
            .enumerate()
            .filter(|(_, l)| **l == DELIMITER)
            .map(|(i, _)| i)
            .collect();
        let slot_line = lines
            .iter()
            .position(|l| l.contains(slot))
            .expect("slot counted above");
        if delims.len() != 2 || !(delims[0] < slot_line && slot_line < delims[1]) {
            return Err(invalid("slot must sit between exactly two `###` lines"));
        }
        Ok(Self {
            name,
            system_text,
            task_template,
        })
    }

    fn fill(&self, block: &str) -> Result<ChatMessages, PromptError> {
        if block.contains(DELIMITER) {
            return Err(PromptError::UnsanitizedContent);
        }
        let user = self.task_template.replacen(self.name.slot(), block, 1);
        Ok(ChatMessages::new(self.system_text.clone(), user))
    }
}

/// The three prompt bundles used by the pipeline.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptKit {
    raw_classify: PromptBundle,
    summarize: PromptBundle,
    summary_classify: PromptBundle,
    digest: String,
}

impl PromptKit {
    pub fn builtin() -> Self {
        Self::from_sources(|name| Ok(name.builtin_source().to_string()))
            .expect("shipped templates are valid")
    }

    /// Loads `raw_classify.txt`, `summarize.txt` and `summary_classify.txt`
    /// from `dir`.
    pub fn load(dir: &Path) -> Result<Self, PromptError> {
        Self::from_sources(|name| {
            let path = dir.join(name.file_name());
            fs::read_to_string(&path).map_err(|source| PromptError::Io { path, source })
        })
    }

    fn from_sources(
        mut read: impl FnMut(BundleName) -> Result<String, PromptError>,
    ) -> Result<Self, PromptError> {
        let mut hasher = Sha256::new();
        let mut bundles = Vec::with_capacity(3);
        for name in BundleName::ALL {
            let source = read(name)?;
            hasher.update(name.as_str().as_bytes());
            hasher.update((source.len() as u64).to_le_bytes());
            hasher.update(source.as_bytes());
            bundles.push(PromptBundle::parse(name, &source)?);
        }
        let mut it = bundles.into_iter();
        Ok(Self {
            raw_classify: it.next().expect("three bundles"),
            summarize: it.next().expect("three bundles"),
            summary_classify: it.next().expect("three bundles"),
            digest: hex::encode(hasher.finalize()),
        })
    }

    pub fn bundle(&self, name: BundleName) -> &PromptBundle {
        match name {
            BundleName::RawClassify => &self.raw_classify,
            BundleName::Summarize => &self.summarize,
            BundleName::SummaryClassify => &self.summary_classify,
        }
    }

    /// SHA-256 over the three template sources.
    pub fn digest(&self) -> &str {
        &self.digest
    }

    pub fn render_raw_classification(
        &self,
        p: &PreparedContent,
    ) -> Result<ChatMessages, PromptError> {
        self.raw_classify.fill(&email_block(p))
    }

    pub fn render_summarization(&self, p: &PreparedContent) -> Result<ChatMessages, PromptError> {
        self.summarize.fill(&email_block(p))
    }

    pub fn render_summary_classification(
        &self,
        summary: &str,
    ) -> Result<ChatMessages, PromptError> {
        self.summary_classify.fill(summary)
    }
}

impl Default for PromptKit {
    fn default() -> Self {
        Self::builtin()
    }
}

/// `[SUBJECT] …` and `[BODY] …` on consecutive lines.
pub fn email_block(p: &PreparedContent) -> String {
    format!("[SUBJECT] {}\n[BODY] {}", p.subject, p.body)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn prepared(subject: &str, body: &str) -> PreparedContent {
        PreparedContent {
            email_id: "e".into(),
            subject: subject.into(),
            body: body.into(),
            truncated: false,
        }
    }

    fn delimiter_lines(text: &str) -> usize {
        text.lines().filter(|l| *l == DELIMITER).count()
    }

    #[test]
    fn raw_rendering_tags_subject_and_body() {
        let kit = PromptKit::builtin();
        let m = kit
            .render_raw_classification(&prepared("Hi", "Test"))
            .unwrap();
        assert!(m
            .system()
            .starts_with("You are an expert email spam classifier"));
        let user = m.user();
        assert!(user.contains("###\n\n[SUBJECT] Hi\n[BODY] Test\n\n###"));
        assert!(user.ends_with("Answer:"));
        assert_eq!(delimiter_lines(user), 2);
    }

    #[test]
    fn empty_slots_still_render() {
        let kit = PromptKit::builtin();
        let m = kit.render_raw_classification(&prepared("", "")).unwrap();
        assert!(m.user().contains("[SUBJECT] \n[BODY] \n"));
        let m = kit
            .render_summarization(&prepared("only subject", ""))
            .unwrap();
        assert!(m.user().contains("[SUBJECT] only subject\n[BODY] \n"));
        let m = kit.render_summary_classification("").unwrap();
        assert!(m.user().contains("###\n\n\n\n###"));
        assert_eq!(delimiter_lines(m.user()), 2);
    }

    #[test]
    fn unsanitized_content_rejected() {
        let kit = PromptKit::builtin();
        assert!(matches!(
            kit.render_raw_classification(&prepared("s", "a ### b")),
            Err(PromptError::UnsanitizedContent)
        ));
        assert!(matches!(
            kit.render_summarization(&prepared("###", "b")),
            Err(PromptError::UnsanitizedContent)
        ));
        assert!(matches!(
            kit.render_summary_classification("x####"),
            Err(PromptError::UnsanitizedContent)
        ));
    }

    #[test]
    fn summarization_keeps_token_instruction() {
        let kit = PromptKit::builtin();
        let m = kit.render_summarization(&prepared("s", "b")).unwrap();
        assert!(m.user().contains(
            "Please summarise it ensuring that your entire answer stays within 500 tokens."
        ));
        assert!(m
            .system()
            .starts_with("Assume the role of an expert email summariser"));
    }

    #[test]
    fn summary_classification_substitutes_summary() {
        let kit = PromptKit::builtin();
        let m = kit
            .render_summary_classification("Marketing blast offering pills.")
            .unwrap();
        assert!(m
            .user()
            .contains("###\n\nMarketing blast offering pills.\n\n###"));
        assert!(m
            .user()
            .contains("classify it with a one-word answer, \"spam\" or \"ham\""));
        assert!(m.user().ends_with("Answer:"));
    }

    #[test]
    fn bad_templates_rejected() {
        let no_slot = "[system]\nS\n[task]\nT\n###\n\n###\n";
        assert!(PromptBundle::parse(BundleName::RawClassify, no_slot).is_err());
        let slot_outside = "[system]\nS\n[task]\n{email}\n###\n\n###\n";
        assert!(PromptBundle::parse(BundleName::RawClassify, slot_outside).is_err());
        let no_system = "[task]\n###\n{email}\n###\n";
        assert!(PromptBundle::parse(BundleName::RawClassify, no_system).is_err());
        let ok = "[system]\nS\n[task]\nT\n###\n{summary}\n###\nAnswer:\n";
        let b = PromptBundle::parse(BundleName::SummaryClassify, ok).unwrap();
        assert_eq!(b.system_text, "S");
        assert_eq!(b.task_template, "T\n###\n{summary}\n###\nAnswer:");
    }

    #[test]
    fn canonical_bytes_separate_fields() {
        let a = ChatMessages::new("ab", "c");
        let b = ChatMessages::new("a", "bc");
        assert_ne!(a.canonical_bytes(), b.canonical_bytes());
    }

    #[test]
    fn wire_shape() {
        let m = ChatMessages::new("sys", "usr");
        let v = serde_json::to_value(&m).unwrap();
        assert_eq!(
            v,
            serde_json::json!([
                {"role": "system", "content": "sys"},
                {"role": "user", "content": "usr"}
            ])
        );
    }
}
