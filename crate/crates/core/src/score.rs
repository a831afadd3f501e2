//! Judging verdicts against ground truth and scoring the tallies.
//!
//! The positive class is "bug present": a FALSE verdict on a buggy task is a
//! true positive.

use serde::{Deserialize, Serialize};

use crate::types::Verdict;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum OutcomeClass {
    TP,
    FP,
    TN,
    FN,
    UNK,
}

/// `property_holds` is the task's expected verdict.
pub fn judge(verdict: Verdict, property_holds: bool) -> OutcomeClass {
    match (verdict, property_holds) {
        (Verdict::Unknown, _) => OutcomeClass::UNK,
        (Verdict::False, false) => OutcomeClass::TP,
        (Verdict::False, true) => OutcomeClass::FP,
        (Verdict::True, true) => OutcomeClass::TN,
        (Verdict::True, false) => OutcomeClass::FN,
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub unk: u64,
    /// UNK outcomes on tasks whose ground truth is bug-present.
    pub unk_pos: u64,
}

impl ConfusionCounts {
    pub fn new(tp: u64, fp: u64, tn: u64, fn_: u64, unk: u64) -> Self {
        ConfusionCounts { tp, fp, tn, fn_, unk, unk_pos: 0 }
    }

    pub fn add(&mut self, class: OutcomeClass, property_holds: bool) {
        match class {
            OutcomeClass::TP => self.tp += 1,
            OutcomeClass::FP => self.fp += 1,
            OutcomeClass::TN => self.tn += 1,
            OutcomeClass::FN => self.fn_ += 1,
            OutcomeClass::UNK => {
                self.unk += 1;
                if !property_holds {
                    self.unk_pos += 1;
                }
            }
        }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_ + self.unk
    }
}

/// TP +1, TN +2, FP -16, FN -32, UNK 0.
pub fn svcomp_score(c: &ConfusionCounts) -> i64 {
    c.tp as i64 + 2 * c.tn as i64 - 16 * c.fp as i64 - 32 * c.fn_ as i64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: Option<f64>,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
}

/// Accuracy over all tasks (UNK counts as wrong); precision over FALSE
/// verdicts; recall over bug-present tasks including those judged UNK.
pub fn metrics(c: &ConfusionCounts) -> Metrics {
    let ratio = |n: u64, d: u64| if d == 0 { None } else { Some(n as f64 / d as f64) };
    Metrics {
        accuracy: ratio(c.tp + c.tn, c.total()),
        precision: ratio(c.tp, c.tp + c.fp),
        recall: ratio(c.tp, c.tp + c.fn_ + c.unk_pos),
    }
}
