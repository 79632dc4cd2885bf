//! Judge-driven quality filter: rejected records get one regeneration
//! attempt before being reported.

use serde::{Deserialize, Serialize};

use super::templates::match_question;
use super::{QaRecord, Task};
use crate::eval::parse::{parse_bbox, parse_count, parse_detection_output, CountAnswer};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Verdict {
    Accept,
    Reject(String),
}

pub trait Judge {
    fn judge(&self, record: &QaRecord) -> Verdict;
}

pub struct AcceptAll;

impl Judge for AcceptAll {
    fn judge(&self, _: &QaRecord) -> Verdict {
        Verdict::Accept
    }
}

pub struct RejectAll;

impl Judge for RejectAll {
    fn judge(&self, _: &QaRecord) -> Verdict {
        Verdict::Reject("rejected by judge".into())
    }
}

/// Deterministic default judge: rejects empty or over-long answers,
/// questions that instantiate no template, and answers that do not have
/// the shape their task requires.
#[derive(Debug, Clone)]
pub struct RuleJudge {
    pub max_answer_chars: usize,
}

impl Default for RuleJudge {
    fn default() -> Self {
        RuleJudge { max_answer_chars: 2000 }
    }
}

impl Judge for RuleJudge {
    fn judge(&self, r: &QaRecord) -> Verdict {
        let answer = r.answer.trim();
        if answer.is_empty() {
            return Verdict::Reject("empty answer".into());
        }
        if r.answer.chars().count() > self.max_answer_chars {
            return Verdict::Reject(format!("answer longer than {} characters", self.max_answer_chars));
        }
        if r.task != Task::Vqa && match_question(r.task, &r.question).len() != 1 {
            return Verdict::Reject("question does not instantiate exactly one template".into());
        }
        let shape_ok = match r.task {
            Task::Detection => {
                let p = parse_detection_output(answer, None);
                !p.entries.is_empty() && p.diagnostics.is_empty()
            }
            Task::Grounding => parse_bbox(answer, None).is_ok(),
            Task::CountingRegress => answer.bytes().all(|b| b.is_ascii_digit()),
            Task::CountingChoice => {
                answer.len() == 1 && matches!(parse_count(answer), Some(CountAnswer::Letter(_)))
            }
            _ => true,
        };
        if shape_ok {
            Verdict::Accept
        } else {
            Verdict::Reject(format!("answer is not a well-formed {} answer", r.task))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Replacement {
    pub original: QaRecord,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rejection {
    pub record: QaRecord,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterOutcome {
    /// Passing records in input order, replacements in place of originals.
    pub accepted: Vec<QaRecord>,
    pub replaced: Vec<Replacement>,
    pub rejected: Vec<Rejection>,
}

/// Judges every record; a rejected one is regenerated once through
/// `regenerate` (which may decline with `None`) and judged again.
pub fn quality_filter(
    records: Vec<QaRecord>,
    judge: &dyn Judge,
    mut regenerate: impl FnMut(&QaRecord) -> Option<QaRecord>,
) -> FilterOutcome {
    let mut out = FilterOutcome::default();
    for r in records {
        let reason = match judge.judge(&r) {
            Verdict::Accept => {
                out.accepted.push(r);
                continue;
            }
            Verdict::Reject(reason) => reason,
        };
        match regenerate(&r) {
            Some(fresh) => match judge.judge(&fresh) {
                Verdict::Accept => {
                    out.accepted.push(fresh);
                    out.replaced.push(Replacement { original: r, reason });
                }
                Verdict::Reject(again) => out.rejected.push(Rejection { record: fresh, reason: again }),
            },
            None => out.rejected.push(Rejection { record: r, reason }),
        }
    }
    out
}
