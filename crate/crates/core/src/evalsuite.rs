//! Sentence-level precision/recall/F1, per-subtask scores and the
//! decision audit.
//!
//! A sentence is a predicted positive when any position is flagged by
//! detection or changed by correction. It is a detection true positive when
//! it has errors and the flagged-or-changed positions are exactly its error
//! positions, and a correction true positive when it is additionally
//! corrected to the gold sentence. Empty denominators give 0, except that a
//! run with neither predicted nor gold positives scores 1 across the board.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::charkb::{ConfusionIndex, ConfusionKind};
use crate::error::{CscError, Result};
use crate::model::Prediction;
use crate::train::EncodedPair;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub tp: usize,
    pub predicted: usize,
    pub gold: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Prf {
    pub fn from_counts(tp: usize, predicted: usize, gold: usize) -> Self {
        let (precision, recall) = if predicted == 0 && gold == 0 {
            (1.0, 1.0)
        } else {
            let div = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
            (div(tp, predicted), div(tp, gold))
        };
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        Prf {
            tp,
            predicted,
            gold,
            precision,
            recall,
            f1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Level {
    Detection,
    Correction,
}

fn check_aligned(preds: &[Prediction], gold: &[EncodedPair]) -> Result<()> {
    if preds.len() != gold.len() {
        return Err(CscError::shape(format!(
            "{} predictions for {} sentences",
            preds.len(),
            gold.len()
        )));
    }
    for (k, (p, g)) in preds.iter().zip(gold).enumerate() {
        let t = g.x.len();
        if p.output.len() != t || p.y_d.len() != t || p.y_r.len() != t || g.labels.g.len() != t {
            return Err(CscError::shape(format!("sentence {k}: length mismatch")));
        }
    }
    Ok(())
}

fn error_positions(g: &EncodedPair) -> BTreeSet<usize> {
    (0..g.x.len())
        .filter(|&i| g.x[i] != g.labels.g[i])
        .collect()
}

fn flagged_positions(p: &Prediction, g: &EncodedPair) -> BTreeSet<usize> {
    (0..g.x.len())
        .filter(|&i| p.y_d[i] == 1 || p.output[i] != g.x[i])
        .collect()
}

pub fn sentence_metrics(preds: &[Prediction], gold: &[EncodedPair], level: Level) -> Result<Prf> {
    check_aligned(preds, gold)?;
    let (mut tp, mut predicted, mut positives) = (0, 0, 0);
    for (p, g) in preds.iter().zip(gold) {
        let errors = error_positions(g);
        let flagged = flagged_positions(p, g);
        predicted += usize::from(!flagged.is_empty());
        positives += usize::from(!errors.is_empty());
        let detected = !errors.is_empty() && flagged == errors;
        let hit = match level {
            Level::Detection => detected,
            Level::Correction => detected && p.output == g.labels.g,
        };
        tp += usize::from(hit);
    }
    Ok(Prf::from_counts(tp, predicted, positives))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubtaskReport {
    pub detection: Prf,
    pub reasoning: Prf,
    pub searching: Prf,
}

/// Detection scores `y_d` against the gold error positions; reasoning
/// additionally requires `y_r = g_r` on every error; searching is the
/// correction-level sentence metric.
pub fn subtask_metrics(preds: &[Prediction], gold: &[EncodedPair]) -> Result<SubtaskReport> {
    check_aligned(preds, gold)?;
    let (mut det_tp, mut reason_tp, mut predicted, mut positives) = (0, 0, 0, 0);
    for (p, g) in preds.iter().zip(gold) {
        let errors = error_positions(g);
        let flagged: BTreeSet<usize> = (0..g.x.len()).filter(|&i| p.y_d[i] == 1).collect();
        predicted += usize::from(!flagged.is_empty());
        positives += usize::from(!errors.is_empty());
        if !errors.is_empty() && flagged == errors {
            det_tp += 1;
            if errors.iter().all(|&i| p.y_r[i] == g.labels.g_r[i]) {
                reason_tp += 1;
            }
        }
    }
    Ok(SubtaskReport {
        detection: Prf::from_counts(det_tp, predicted, positives),
        reasoning: Prf::from_counts(reason_tp, predicted, positives),
        searching: sentence_metrics(preds, gold, Level::Correction)?,
    })
}

/// How detected positions were routed through the confusion sets.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditCounts {
    pub predicted_phonological: usize,
    pub predicted_morphological: usize,
    /// Detected phonological positions whose source has no phonological
    /// neighbour besides itself.
    pub not_in_pc: usize,
    pub not_in_vc: usize,
    /// Detected phonological positions whose gold is outside the source's
    /// phonological set.
    pub gold_filtered_out_pc: usize,
    pub gold_filtered_out_vc: usize,
}

pub fn audit(
    preds: &[Prediction],
    gold: &[EncodedPair],
    index: &ConfusionIndex,
) -> Result<AuditCounts> {
    check_aligned(preds, gold)?;
    let mut c = AuditCounts::default();
    for (p, g) in preds.iter().zip(gold) {
        for i in 0..g.x.len() {
            if p.y_d[i] != 1 {
                continue;
            }
            let (src, tgt) = (g.x[i], g.labels.g[i]);
            if p.y_r[i] == 1 {
                c.predicted_phonological += 1;
                c.not_in_pc += usize::from(index.is_trivial(ConfusionKind::Phonological, src));
                c.gold_filtered_out_pc += usize::from(!index.in_pc(src, tgt));
            } else {
                c.predicted_morphological += 1;
                c.not_in_vc += usize::from(index.is_trivial(ConfusionKind::Visual, src));
                c.gold_filtered_out_vc += usize::from(!index.in_vc(src, tgt));
            }
        }
    }
    Ok(c)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub sentences: usize,
    pub detection: Prf,
    pub correction: Prf,
    pub subtasks: SubtaskReport,
    pub audit: AuditCounts,
}

impl EvalReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

pub fn evaluate(
    preds: &[Prediction],
    gold: &[EncodedPair],
    index: &ConfusionIndex,
) -> Result<EvalReport> {
    Ok(EvalReport {
        sentences: gold.len(),
        detection: sentence_metrics(preds, gold, Level::Detection)?,
        correction: sentence_metrics(preds, gold, Level::Correction)?,
        subtasks: subtask_metrics(preds, gold)?,
        audit: audit(preds, gold, index)?,
    })
}
