//! SpamAssassin public corpus ingestion.
//!
//! The on-disk layout is `<root>/{spam,spam_2,easy_ham,easy_ham_2,hard_ham}/<files>`,
//! each file holding one raw RFC-822 message. Scanning is deterministic
//! (lexicographic path order) and parsing never aborts on a bad message.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};

use mailparse::{MailHeaderMap, ParsedMail};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("corpus root {0} does not exist")]
    MissingRoot(PathBuf),
    #[error("no recognized category directory under {0} (expected one of spam, spam_2, easy_ham, easy_ham_2, hard_ham)")]
    NoCategories(PathBuf),
    #[error("unknown corpus category `{0}`")]
    UnknownCategory(String),
    #[error("reading {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// SpamAssassin sub-corpus a message was filed under.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    Spam,
    #[serde(rename = "spam_2")]
    Spam2,
    EasyHam,
    #[serde(rename = "easy_ham_2")]
    EasyHam2,
    HardHam,
}

impl Category {
    pub const ALL: [Category; 5] = [
        Category::Spam,
        Category::Spam2,
        Category::EasyHam,
        Category::EasyHam2,
        Category::HardHam,
    ];

    pub fn dir_name(self) -> &'static str {
        match self {
            Category::Spam => "spam",
            Category::Spam2 => "spam_2",
            Category::EasyHam => "easy_ham",
            Category::EasyHam2 => "easy_ham_2",
            Category::HardHam => "hard_ham",
        }
    }

    pub fn gold_label(self) -> GoldLabel {
        match self {
            Category::Spam | Category::Spam2 => GoldLabel::Spam,
            Category::EasyHam | Category::EasyHam2 | Category::HardHam => GoldLabel::Ham,
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.dir_name())
    }
}

impl FromStr for Category {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Category::ALL
            .into_iter()
            .find(|c| c.dir_name() == s)
            .ok_or_else(|| CorpusError::UnknownCategory(s.to_string()))
    }
}

/// Ground-truth class. Spam is the positive class throughout the harness.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GoldLabel {
    Spam,
    Ham,
}

impl fmt::Display for GoldLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GoldLabel::Spam => "spam",
            GoldLabel::Ham => "ham",
        })
    }
}

/// Maps a category directory name onto its gold label.
pub fn label_from_category(name: &str) -> Result<GoldLabel, CorpusError> {
    Ok(name.parse::<Category>()?.gold_label())
}

#[derive(Debug, Clone)]
pub struct RawMessage {
    pub source_path: PathBuf,
    pub category: Category,
    pub bytes: Vec<u8>,
}

/// One labeled corpus message: subject, decoded body and gold label.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmailContent {
    /// Hex SHA-256 of the raw message bytes.
    pub id: String,
    pub category: Category,
    pub subject: String,
    pub body: String,
    pub gold_label: GoldLabel,
}

/// Counts messages that could not be parsed structurally.
#[derive(Debug, Default)]
pub struct ParseWarnings(AtomicUsize);

impl ParseWarnings {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&self) {
        self.0.fetch_add(1, Ordering::Relaxed);
    }

    pub fn count(&self) -> usize {
        self.0.load(Ordering::Relaxed)
    }
}

pub fn content_id(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Lists every message file under the recognized category directories of
/// `root`, sorted by path. `cmds` files, dotfiles and empty files are skipped.
pub fn scan_corpus(root: &Path) -> Result<Vec<RawMessage>, CorpusError> {
    if !root.is_dir() {
        return Err(CorpusError::MissingRoot(root.to_path_buf()));
    }
    let io_err = |path: &Path| {
        let path = path.to_path_buf();
        move |source| CorpusError::Io { path, source }
    };

    let mut found_category = false;
    let mut files: Vec<(PathBuf, Category)> = Vec::new();
    for category in Category::ALL {
        let dir = root.join(category.dir_name());
        if !dir.is_dir() {
            continue;
        }
        found_category = true;
        for entry in fs::read_dir(&dir).map_err(io_err(&dir))? {
            let entry = entry.map_err(io_err(&dir))?;
            let name = entry.file_name();
            let name = name.to_string_lossy();
            if name == "cmds" || name.starts_with('.') {
                continue;
            }
            // follows symlinks, so a linked message file still counts
            let meta = fs::metadata(entry.path()).map_err(io_err(&entry.path()))?;
            if meta.is_file() && meta.len() > 0 {
                files.push((entry.path(), category));
            }
        }
    }
    if !found_category {
        return Err(CorpusError::NoCategories(root.to_path_buf()));
    }

    files.sort_by(|a, b| a.0.cmp(&b.0));
    files
        .into_iter()
        .map(|(path, category)| {
            let bytes = fs::read(&path).map_err(io_err(&path))?;
            Ok(RawMessage {
                source_path: path,
                category,
                bytes,
            })
        })
        .collect()
}

/// Extracts subject and body text from a raw message.
///
/// A message mailparse rejects outright yields an empty subject and the
/// whole payload decoded lossily as the body; `warnings` is bumped.
pub fn parse_message(msg: &RawMessage, warnings: &ParseWarnings) -> EmailContent {
    let id = content_id(&msg.bytes);
    let (subject, body) = match mailparse::parse_mail(&msg.bytes) {
        Ok(mail) => {
            let subject = mail
                .headers
                .get_first_value("Subject")
                .map(|s| s.trim().to_string())
                .unwrap_or_default();
            (subject, select_body(&mail))
        }
        Err(_) => {
            warnings.record();
            (
                String::new(),
                String::from_utf8_lossy(&msg.bytes).into_owned(),
            )
        }
    };
    EmailContent {
        id,
        category: msg.category,
        subject,
        body,
        gold_label: msg.category.gold_label(),
    }
}

/// Scans and parses a corpus in one go, preserving scan order.
pub fn ingest_corpus(root: &Path) -> Result<Ingested, CorpusError> {
    let raw = scan_corpus(root)?;
    let warnings = ParseWarnings::new();
    let emails = parse_all(&raw, &warnings);
    Ok(Ingested {
        emails,
        parse_warnings: warnings.count(),
    })
}

#[derive(Debug, Clone)]
pub struct Ingested {
    pub emails: Vec<EmailContent>,
    pub parse_warnings: usize,
}

fn parse_all(raw: &[RawMessage], warnings: &ParseWarnings) -> Vec<EmailContent> {
    let workers = std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1)
        .min(8);
    if raw.len() < 64 || workers == 1 {
        return raw.iter().map(|m| parse_message(m, warnings)).collect();
    }
    let chunk = raw.len().div_ceil(workers);
    std::thread::scope(|scope| {
        let handles: Vec<_> = raw
            .chunks(chunk)
            .map(|part| {
                scope.spawn(move || {
                    part.iter()
                        .map(|m| parse_message(m, warnings))
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("parser thread panicked"))
            .collect()
    })
}

/// First text/plain part, else the first text/html part stripped to text,
/// else the raw payload.
fn select_body(mail: &ParsedMail<'_>) -> String {
    if let Some(part) = find_part(mail, "text/plain") {
        return decode_part(part);
    }
    if let Some(part) = find_part(mail, "text/html") {
        return html_to_text(&decode_part(part));
    }
    match mail.get_body_raw() {
        Ok(bytes) => String::from_utf8_lossy(&bytes).into_owned(),
        Err(_) => String::from_utf8_lossy(mail.raw_bytes).into_owned(),
    }
}

fn find_part<'a, 'b>(mail: &'a ParsedMail<'b>, mimetype: &str) -> Option<&'a ParsedMail<'b>> {
    if mail.subparts.is_empty() {
        return mail
            .ctype
            .mimetype
            .eq_ignore_ascii_case(mimetype)
            .then_some(mail);
    }
    mail.subparts.iter().find_map(|p| find_part(p, mimetype))
}

fn decode_part(part: &ParsedMail<'_>) -> String {
    let bytes = match part.get_body_raw() {
        Ok(b) => b,
        Err(_) => return String::from_utf8_lossy(part.raw_bytes).into_owned(),
    };
    decode_charset(&bytes, &part.ctype.charset)
}

/// Honors a valid declared charset; falls back to lossy UTF-8. An
/// undeclared (defaulted us-ascii) part that is valid UTF-8 is read as UTF-8.
pub(crate) fn decode_charset(bytes: &[u8], charset: &str) -> String {
    let label = charset.trim();
    let ascii_default = label.is_empty() || label.eq_ignore_ascii_case("us-ascii");
    if ascii_default {
        if let Ok(s) = std::str::from_utf8(bytes) {
            return s.to_string();
        }
    }
    match encoding_rs::Encoding::for_label(label.as_bytes()) {
        Some(enc) if !ascii_default => enc.decode_without_bom_handling(bytes).0.into_owned(),
        _ => String::from_utf8_lossy(bytes).into_owned(),
    }
}

/// Drops tags, script and style blocks, decodes common entities and
/// collapses whitespace.
pub fn html_to_text(html: &str) -> String {
    let mut out = String::with_capacity(html.len() / 2);
    let lower = html.to_ascii_lowercase();
    let mut i = 0;
    while i < html.len() {
        let rest = &lower[i..];
        if rest.starts_with("<script") || rest.starts_with("<style") {
            let close = if rest.starts_with("<script") {
                "</script"
            } else {
                "</style"
            };
            i = match rest.find(close) {
                Some(end) => i + end + close.len(),
                None => html.len(),
            };
            i = skip_past_gt(html, i);
            out.push(' ');
        } else if rest.starts_with("<!--") {
            i = match rest.find("-->") {
                Some(end) => i + end + 3,
                None => html.len(),
            };
        } else if rest.starts_with('<') {
            i = skip_past_gt(html, i);
            out.push(' ');
        } else {
            let ch = html[i..].chars().next().expect("in bounds");
            out.push(ch);
            i += ch.len_utf8();
        }
    }
    decode_entities(&out)
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
}

fn skip_past_gt(s: &str, from: usize) -> usize {
    match s[from..].find('>') {
        Some(pos) => from + pos + 1,
        None => s.len(),
    }
}

fn decode_entities(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut rest = s;
    while let Some(amp) = rest.find('&') {
        out.push_str(&rest[..amp]);
        rest = &rest[amp..];
        let entity_end = rest[..rest.len().min(12)].find(';');
        let decoded = entity_end.and_then(|end| {
            let name = &rest[1..end];
            let ch = match name {
                "nbsp" => Some(' '),
                "amp" => Some('&'),
                "lt" => Some('<'),
                "gt" => Some('>'),
                "quot" => Some('"'),
                "apos" => Some('\''),
                _ => {
                    let num = name.strip_prefix('#')?;
                    let code = match num.strip_prefix(['x', 'X']) {
                        Some(hex) => u32::from_str_radix(hex, 16).ok()?,
                        None => num.parse().ok()?,
                    };
                    char::from_u32(code)
                }
            };
            ch.map(|c| (c, end + 1))
        });
        match decoded {
            Some((c, len)) => {
                out.push(c);
                rest = &rest[len..];
            }
            None => {
                out.push('&');
                rest = &rest[1..];
            }
        }
    }
    out.push_str(rest);
    out
}
