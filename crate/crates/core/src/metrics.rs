//! Binary classification metrics with spam as the positive class.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::GoldLabel;
use crate::pipeline::{Label, PredictionSet, Scenario};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MetricsError {
    #[error("no gold label for email {0}")]
    MissingGold(String),
    #[error("confusion matrix is empty")]
    EmptyMatrix,
    #[error("balanced accuracy needs both classes present")]
    OneClassAbsent,
    #[error("recall is undefined without positive (spam) examples")]
    NoPositives,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    pub fn_: u64,
    /// Predictions excluded from the four cells above.
    pub unparseable: u64,
}

impl ConfusionMatrix {
    pub fn new(tp: u64, fp: u64, tn: u64, fn_: u64) -> Self {
        Self {
            tp,
            fp,
            tn,
            fn_,
            unparseable: 0,
        }
    }

    /// Gold positives among parsed predictions.
    pub fn positives(&self) -> u64 {
        self.tp + self.fn_
    }

    pub fn negatives(&self) -> u64 {
        self.tn + self.fp
    }

    pub fn parsed(&self) -> u64 {
        self.positives() + self.negatives()
    }

    pub fn total(&self) -> u64 {
        self.parsed() + self.unparseable
    }

    pub fn record(&mut self, predicted: Label, gold: GoldLabel) {
        match (predicted, gold) {
            (Label::Spam, GoldLabel::Spam) => self.tp += 1,
            (Label::Spam, GoldLabel::Ham) => self.fp += 1,
            (Label::Ham, GoldLabel::Ham) => self.tn += 1,
            (Label::Ham, GoldLabel::Spam) => self.fn_ += 1,
            (Label::Unparseable, _) => self.unparseable += 1,
        }
    }
}

pub fn confusion(
    preds: &PredictionSet,
    gold: &HashMap<String, GoldLabel>,
) -> Result<ConfusionMatrix, MetricsError> {
    let mut cm = ConfusionMatrix::default();
    for p in &preds.predictions {
        let g = gold
            .get(&p.email_id)
            .ok_or_else(|| MetricsError::MissingGold(p.email_id.clone()))?;
        cm.record(p.label, *g);
    }
    Ok(cm)
}

/// (TP + TN) / (P + N)
pub fn accuracy(cm: &ConfusionMatrix) -> Result<f64, MetricsError> {
    if cm.parsed() == 0 {
        return Err(MetricsError::EmptyMatrix);
    }
    Ok((cm.tp + cm.tn) as f64 / cm.parsed() as f64)
}

/// ½ (TP / P + TN / N)
pub fn balanced_accuracy(cm: &ConfusionMatrix) -> Result<f64, MetricsError> {
    if cm.positives() == 0 || cm.negatives() == 0 {
        return Err(MetricsError::OneClassAbsent);
    }
    let tpr = cm.tp as f64 / cm.positives() as f64;
    let tnr = cm.tn as f64 / cm.negatives() as f64;
    Ok(0.5 * (tpr + tnr))
}

/// TP / (TP + FP); `None` when nothing was predicted positive.
pub fn precision(cm: &ConfusionMatrix) -> Option<f64> {
    let predicted = cm.tp + cm.fp;
    (predicted > 0).then(|| cm.tp as f64 / predicted as f64)
}

/// TP / (TP + FN)
pub fn recall(cm: &ConfusionMatrix) -> Result<f64, MetricsError> {
    if cm.positives() == 0 {
        return Err(MetricsError::NoPositives);
    }
    Ok(cm.tp as f64 / cm.positives() as f64)
}

/// Harmonic mean of precision and recall; 0 when both are 0.
pub fn f1(pr: f64, re: f64) -> f64 {
    if pr + re == 0.0 {
        0.0
    } else {
        2.0 * pr * re / (pr + re)
    }
}

/// One report line: a backend's scores on one scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub model: String,
    pub scenario: Scenario,
    pub ac: Option<f64>,
    pub ba: Option<f64>,
    pub pr: Option<f64>,
    pub re: Option<f64>,
    pub f1: Option<f64>,
    /// Parsed predictions over all predictions.
    pub coverage: f64,
    pub emails: u64,
    pub confusion: ConfusionMatrix,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

impl MetricsRow {
    pub fn from_matrix(model: &str, scenario: Scenario, cm: ConfusionMatrix) -> Self {
        let pr = precision(&cm);
        let re = recall(&cm).ok();
        let f1 = match (pr, re) {
            (Some(pr), Some(re)) => Some(f1(pr, re)),
            _ => None,
        };
        Self {
            model: model.to_string(),
            scenario,
            ac: accuracy(&cm).ok(),
            ba: balanced_accuracy(&cm).ok(),
            pr,
            re,
            f1,
            coverage: if cm.total() == 0 {
                0.0
            } else {
                cm.parsed() as f64 / cm.total() as f64
            },
            emails: cm.total(),
            confusion: cm,
            prompt_tokens: 0,
            completion_tokens: 0,
        }
    }

    pub fn from_predictions(
        preds: &PredictionSet,
        gold: &HashMap<String, GoldLabel>,
    ) -> Result<Self, MetricsError> {
        let cm = confusion(preds, gold)?;
        let mut row = Self::from_matrix(&preds.backend_id, preds.scenario, cm);
        for p in &preds.predictions {
            row.prompt_tokens += p.usage.prompt_tokens;
            row.completion_tokens += p.usage.completion_tokens;
        }
        Ok(row)
    }
}
