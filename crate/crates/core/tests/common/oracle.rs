//! Brute-force reference for the mock keyword rule. Reads the fixture files
//! directly and shares no code with the crate.

use std::fs;
use std::path::Path;

const KEYWORDS: [&str; 5] = [
    "viagra",
    "winner",
    "free money",
    "click here",
    "unsubscribe now",
];
const SPAM_DIRS: [&str; 2] = ["spam", "spam_2"];
const HAM_DIRS: [&str; 3] = ["easy_ham", "easy_ham_2", "hard_ham"];

#[derive(Debug, Default, Clone, Copy, PartialEq, Eq)]
pub struct Counts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    pub fn_: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scores {
    pub ac: f64,
    pub ba: f64,
    pub pr: f64,
    pub re: f64,
    pub f1: f64,
}

/// Only valid for single-part plain-text fixtures with a one-line Subject.
fn predicts_spam(raw: &str) -> bool {
    let (head, body) = raw.split_once("\n\n").unwrap_or((raw, ""));
    let subject = head
        .lines()
        .find_map(|l| l.strip_prefix("Subject:"))
        .unwrap_or("")
        .trim()
        .to_lowercase();
    let body = body.to_lowercase();
    KEYWORDS
        .iter()
        .any(|k| subject.contains(k) || body.contains(k))
}

pub fn count(root: &Path) -> Counts {
    let mut c = Counts::default();
    for (dirs, spam) in [(&SPAM_DIRS[..], true), (&HAM_DIRS[..], false)] {
        for d in dirs {
            let Ok(entries) = fs::read_dir(root.join(d)) else {
                continue;
            };
            for entry in entries {
                let path = entry.unwrap().path();
                let name = path.file_name().unwrap().to_string_lossy().into_owned();
                if name == "cmds" || name.starts_with('.') {
                    continue;
                }
                let raw = fs::read_to_string(&path).unwrap();
                match (predicts_spam(&raw), spam) {
                    (true, true) => c.tp += 1,
                    (true, false) => c.fp += 1,
                    (false, false) => c.tn += 1,
                    (false, true) => c.fn_ += 1,
                }
            }
        }
    }
    c
}

pub fn scores(c: Counts) -> Scores {
    let (tp, fp, tn, fn_) = (c.tp as f64, c.fp as f64, c.tn as f64, c.fn_ as f64);
    let pr = tp / (tp + fp);
    let re = tp / (tp + fn_);
    Scores {
        ac: (tp + tn) / (tp + tn + fp + fn_),
        ba: 0.5 * (tp / (tp + fn_) + tn / (tn + fp)),
        pr,
        re,
        f1: 2.0 * pr * re / (pr + re),
    }
}
