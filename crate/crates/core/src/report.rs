//! Report rendering: markdown tables, CSV and JSON lines.

use std::fmt::Write as _;
use std::str::FromStr;

use thiserror::Error;

use crate::metrics::MetricsRow;
use crate::pipeline::Scenario;

/// Shown for undefined metrics.
pub const UNDEFINED: &str = "—";

pub const CSV_HEADER: &str = "model,scenario,ac,ba,pr,re,f1,coverage";

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ReportError {
    #[error("nothing to report")]
    EmptyInput,
    #[error("unknown report format `{0}` (expected md, csv or jsonl)")]
    UnknownFormat(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Markdown,
    Csv,
    Jsonl,
}

impl FromStr for Format {
    type Err = ReportError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "md" | "markdown" => Ok(Format::Markdown),
            "csv" => Ok(Format::Csv),
            "jsonl" => Ok(Format::Jsonl),
            other => Err(ReportError::UnknownFormat(other.to_string())),
        }
    }
}

pub fn report(rows: &[MetricsRow], format: Format) -> Result<String, ReportError> {
    if rows.is_empty() {
        return Err(ReportError::EmptyInput);
    }
    Ok(match format {
        Format::Markdown => markdown(rows),
        Format::Csv => csv(rows),
        Format::Jsonl => rows
            .iter()
            .map(|r| serde_json::to_string(r).expect("rows serialize") + "\n")
            .collect(),
    })
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| UNDEFINED.to_string(), |x| format!("{x:.6}"))
}

fn scenario_title(s: Scenario) -> &'static str {
    match s {
        Scenario::Raw => "Prediction from truncated raw content",
        Scenario::Summary => "Prediction from summary",
    }
}

fn markdown(rows: &[MetricsRow]) -> String {
    let mut out = String::new();
    for scenario in [Scenario::Raw, Scenario::Summary] {
        let group: Vec<&MetricsRow> = rows.iter().filter(|r| r.scenario == scenario).collect();
        if group.is_empty() {
            continue;
        }
        if !out.is_empty() {
            out.push('\n');
        }
        let _ = writeln!(out, "## {} ({})\n", scenario_title(scenario), scenario);
        out.push_str("| Model | AC | BA | PR | RE | F1 | Coverage |\n");
        out.push_str("|:--|--:|--:|--:|--:|--:|--:|\n");
        for r in &group {
            let _ = writeln!(
                out,
                "| {} | {} | {} | {} | {} | {} | {:.6} |",
                r.model,
                cell(r.ac),
                cell(r.ba),
                cell(r.pr),
                cell(r.re),
                cell(r.f1),
                r.coverage
            );
        }
        out.push('\n');
        out.push_str("| Model | Emails | TP | FP | TN | FN | Unparseable | Prompt tokens | Completion tokens |\n");
        out.push_str("|:--|--:|--:|--:|--:|--:|--:|--:|--:|\n");
        for r in &group {
            let c = &r.confusion;
            let _ = writeln!(
                out,
                "| {} | {} | {} | {} | {} | {} | {} | {} | {} |",
                r.model,
                r.emails,
                c.tp,
                c.fp,
                c.tn,
                c.fn_,
                c.unparseable,
                r.prompt_tokens,
                r.completion_tokens
            );
        }
    }
    out
}

fn csv(rows: &[MetricsRow]) -> String {
    let opt = |v: Option<f64>| v.map_or_else(String::new, |x| format!("{x:.6}"));
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{:.6}",
            csv_field(&r.model),
            r.scenario,
            opt(r.ac),
            opt(r.ba),
            opt(r.pr),
            opt(r.re),
            opt(r.f1),
            r.coverage
        );
    }
    out
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}
