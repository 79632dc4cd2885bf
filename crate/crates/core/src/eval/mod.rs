//! Scoring harness: parses model outputs per task and computes every task
//! metric, overall and per condition tag.

pub mod caption;
pub mod detection;
pub mod parse;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::bbox::BBox;
use crate::datagen::templates::match_question;
use crate::datagen::{DetectionEntry, QaRecord, Task, CHOICE_LETTERS};
use crate::error::{Error, Result};
use caption::{caption_metrics, meteor_corpus, tokenize, TOKENIZER_VERSION};
use detection::{detection_metrics, grounding_metrics, ImageBoxes};
use parse::{parse_bbox, parse_count, parse_detection_output, CountAnswer, ImageSize};

/// One line of a prediction file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub id: String,
    pub task: Task,
    pub output_text: String,
    /// Pixel `(width, height)`; lets box parsers accept pixel coordinates.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_size: Option<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CountingScores {
    pub mae: f64,
    pub rmse: f64,
}

/// `(prediction, gold)` counts; unparseable predictions enter as 0.
pub fn counting_regress_metrics(pairs: &[(Option<u64>, u64)]) -> CountingScores {
    if pairs.is_empty() {
        return CountingScores { mae: 0.0, rmse: 0.0 };
    }
    let n = pairs.len() as f64;
    let errs: Vec<f64> = pairs
        .iter()
        .map(|(p, g)| (p.unwrap_or(0) as f64 - *g as f64).abs())
        .collect();
    CountingScores {
        mae: errs.iter().sum::<f64>() / n,
        rmse: (errs.iter().map(|e| e * e).sum::<f64>() / n).sqrt(),
    }
}

pub fn choice_accuracy(pairs: &[(Option<char>, char)]) -> f64 {
    if pairs.is_empty() {
        return 0.0;
    }
    pairs.iter().filter(|(p, g)| *p == Some(*g)).count() as f64 / pairs.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassificationScores {
    pub acc: f64,
    pub precision: f64,
    pub f1: f64,
}

pub fn normalize_label(s: &str) -> String {
    s.trim().to_lowercase()
}

/// Accuracy plus precision and F1 macro-averaged over the gold classes.
/// Labels compare after trimming, case-insensitively.
pub fn classification_metrics(pairs: &[(String, String)]) -> ClassificationScores {
    if pairs.is_empty() {
        return ClassificationScores { acc: 0.0, precision: 0.0, f1: 0.0 };
    }
    let norm: Vec<(String, String)> = pairs
        .iter()
        .map(|(p, g)| (normalize_label(p), normalize_label(g)))
        .collect();
    let classes: BTreeSet<&str> = norm.iter().map(|(_, g)| g.as_str()).collect();
    let correct = norm.iter().filter(|(p, g)| p == g).count();
    let (mut psum, mut fsum) = (0.0, 0.0);
    for c in &classes {
        let tp = norm.iter().filter(|(p, g)| p == c && g == c).count() as f64;
        let predicted = norm.iter().filter(|(p, _)| p == c).count() as f64;
        let actual = norm.iter().filter(|(_, g)| g == c).count() as f64;
        let prec = if predicted > 0.0 { tp / predicted } else { 0.0 };
        let rec = tp / actual;
        psum += prec;
        fsum += if prec + rec > 0.0 { 2.0 * prec * rec / (prec + rec) } else { 0.0 };
    }
    let k = classes.len() as f64;
    ClassificationScores {
        acc: correct as f64 / norm.len() as f64,
        precision: psum / k,
        f1: fsum / k,
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TaskReport {
    pub count: usize,
    pub metrics: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub records: usize,
    pub tasks: BTreeMap<String, TaskReport>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalDiagnostics {
    /// Gold ids with no prediction; scored as empty outputs.
    pub missing_predictions: Vec<String>,
    /// Prediction ids absent from the gold set; ignored.
    pub unmatched_predictions: Vec<String>,
    /// Ids whose prediction carried a different task tag than the gold.
    pub task_mismatches: Vec<String>,
    /// Skipped detection segments, per record id.
    pub skipped_segments: BTreeMap<String, usize>,
    pub grounding_parse_failures: usize,
    pub count_parse_failures: usize,
    pub unknown_detection_classes: BTreeSet<String>,
    pub dropped_detections: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub tokenizer: String,
    pub subset_filter: Option<String>,
    pub overall: MetricReport,
    /// Per condition tag present among the scored records.
    pub subsets: BTreeMap<String, MetricReport>,
    pub diagnostics: EvalDiagnostics,
}

struct Scored<'a> {
    gold: &'a QaRecord,
    text: &'a str,
    size: Option<ImageSize>,
}

fn choice_letter(text: &str, gold: &QaRecord) -> Option<char> {
    match parse_count(text)? {
        CountAnswer::Letter(c) => Some(c),
        // a bare option value selects its letter
        CountAnswer::Number(n) => {
            let m = match_question(Task::CountingChoice, &gold.question);
            let opts = m.first()?.options?;
            opts.iter().position(|&o| o == n).map(|i| CHOICE_LETTERS[i])
        }
    }
}

fn gold_detections(answer: &str) -> Result<Vec<DetectionEntry>> {
    let p = parse_detection_output(answer, None);
    if !p.diagnostics.is_empty() {
        return Err(Error::Parse(format!("malformed gold detection answer `{answer}`")));
    }
    Ok(p.entries
        .into_iter()
        .map(|e| DetectionEntry {
            class_name: e.class_name,
            bbox: e.bbox,
        })
        .collect())
}

fn report_for(items: &[Scored<'_>], diag: &mut EvalDiagnostics) -> Result<MetricReport> {
    let mut by_task: BTreeMap<Task, Vec<&Scored<'_>>> = BTreeMap::new();
    for s in items {
        by_task.entry(s.gold.task).or_default().push(s);
    }
    let mut report = MetricReport {
        records: items.len(),
        tasks: BTreeMap::new(),
    };
    for (task, recs) in by_task {
        let metrics = match task {
            Task::Detection => {
                let mut images = Vec::with_capacity(recs.len());
                for s in &recs {
                    let parsed = parse_detection_output(s.text, s.size);
                    if !parsed.diagnostics.is_empty() {
                        diag.skipped_segments.insert(s.gold.id.clone(), parsed.diagnostics.len());
                    }
                    images.push(ImageBoxes {
                        gold: gold_detections(&s.gold.answer)?,
                        pred: parsed.entries,
                    });
                }
                let scores = detection_metrics(&images);
                diag.dropped_detections += scores.dropped_unknown;
                diag.unknown_detection_classes.extend(scores.unknown_classes.iter().cloned());
                scores.metrics()
            }
            Task::Grounding => {
                let mut pairs: Vec<(Option<BBox>, BBox)> = Vec::with_capacity(recs.len());
                for s in &recs {
                    let gold = parse_bbox(&s.gold.answer, None)?;
                    pairs.push((parse_bbox(s.text, s.size).ok(), gold));
                }
                let scores = grounding_metrics(&pairs);
                diag.grounding_parse_failures += scores.parse_failures;
                scores.metrics()
            }
            Task::CountingRegress => {
                let mut pairs = Vec::with_capacity(recs.len());
                for s in &recs {
                    let gold: u64 = s.gold.answer.trim().parse().map_err(|_| {
                        Error::Parse(format!("{}: gold count `{}` is not an integer", s.gold.id, s.gold.answer))
                    })?;
                    let pred = match parse_count(s.text) {
                        Some(CountAnswer::Number(n)) => Some(n),
                        _ => {
                            diag.count_parse_failures += 1;
                            None
                        }
                    };
                    pairs.push((pred, gold));
                }
                let c = counting_regress_metrics(&pairs);
                BTreeMap::from([("mae".to_string(), c.mae), ("rmse".to_string(), c.rmse)])
            }
            Task::CountingChoice => {
                let mut pairs = Vec::with_capacity(recs.len());
                for s in &recs {
                    let gold = s.gold.answer.trim().chars().next().ok_or_else(|| {
                        Error::Parse(format!("{}: empty gold choice", s.gold.id))
                    })?;
                    let pred = choice_letter(s.text, s.gold);
                    if pred.is_none() {
                        diag.count_parse_failures += 1;
                    }
                    pairs.push((pred, gold));
                }
                BTreeMap::from([("acc".to_string(), choice_accuracy(&pairs))])
            }
            Task::CoarseCls | Task::FineCls => {
                let pairs: Vec<(String, String)> = recs
                    .iter()
                    .map(|s| (s.text.to_string(), s.gold.answer.clone()))
                    .collect();
                let c = classification_metrics(&pairs);
                BTreeMap::from([
                    ("acc".to_string(), c.acc),
                    ("precision".to_string(), c.precision),
                    ("f1".to_string(), c.f1),
                ])
            }
            Task::ImageCaption | Task::RegionCaption => {
                let cands: Vec<String> = recs.iter().map(|s| s.text.to_string()).collect();
                let refs: Vec<Vec<String>> = recs.iter().map(|s| vec![s.gold.answer.clone()]).collect();
                caption_metrics(&cands, &refs)
            }
            Task::Vqa => {
                let cands: Vec<Vec<String>> = recs.iter().map(|s| tokenize(s.text)).collect();
                let refs: Vec<Vec<Vec<String>>> = recs.iter().map(|s| vec![tokenize(&s.gold.answer)]).collect();
                BTreeMap::from([("meteor_lite".to_string(), meteor_corpus(&cands, &refs))])
            }
        };
        report.tasks.insert(
            task.to_string(),
            TaskReport {
                count: recs.len(),
                metrics,
            },
        );
    }
    Ok(report)
}

/// Scores `predictions` against `gold`. With `subset`, only gold records
/// carrying that condition tag are scored. Result is independent of input
/// order.
pub fn evaluate(predictions: &[Prediction], gold: &[QaRecord], subset: Option<&str>) -> Result<Evaluation> {
    if let Some(tag) = subset {
        if !crate::datagen::CONDITION_TAGS.contains(&tag) {
            return Err(Error::Validation(format!(
                "unknown subset tag `{tag}` (expected one of {})",
                crate::datagen::CONDITION_TAGS.join(", ")
            )));
        }
    }
    let mut by_id: BTreeMap<&str, &Prediction> = BTreeMap::new();
    for p in predictions {
        if by_id.insert(&p.id, p).is_some() {
            return Err(Error::Validation(format!("duplicate prediction id `{}`", p.id)));
        }
    }
    let mut golds: Vec<&QaRecord> = gold.iter().collect();
    golds.sort_by(|a, b| a.id.cmp(&b.id));
    if let Some(w) = golds.windows(2).find(|w| w[0].id == w[1].id) {
        return Err(Error::Validation(format!("duplicate gold id `{}`", w[0].id)));
    }
    let gold_ids: BTreeSet<&str> = golds.iter().map(|g| g.id.as_str()).collect();

    let mut diag = EvalDiagnostics {
        unmatched_predictions: by_id
            .keys()
            .filter(|k| !gold_ids.contains(*k))
            .map(|k| k.to_string())
            .collect(),
        ..Default::default()
    };
    let mut items = Vec::new();
    for g in golds {
        if subset.is_some_and(|tag| !g.conditions.iter().any(|c| c == tag)) {
            continue;
        }
        let (text, size) = match by_id.get(g.id.as_str()) {
            Some(p) => {
                if p.task != g.task {
                    diag.task_mismatches.push(g.id.clone());
                }
                (p.output_text.as_str(), p.image_size.map(|[w, h]| (w, h)))
            }
            None => {
                diag.missing_predictions.push(g.id.clone());
                ("", None)
            }
        };
        items.push(Scored { gold: g, text, size });
    }

    let overall = report_for(&items, &mut diag)?;
    let tags: BTreeSet<&str> = items
        .iter()
        .flat_map(|s| s.gold.conditions.iter().map(String::as_str))
        .collect();
    let mut subsets = BTreeMap::new();
    // diagnostics are counted once, on the overall pass
    let mut scratch = EvalDiagnostics::default();
    for tag in tags {
        let part: Vec<Scored<'_>> = items
            .iter()
            .filter(|s| s.gold.conditions.iter().any(|c| c == tag))
            .map(|s| Scored { gold: s.gold, text: s.text, size: s.size })
            .collect();
        subsets.insert(tag.to_string(), report_for(&part, &mut scratch)?);
    }
    Ok(Evaluation {
        tokenizer: TOKENIZER_VERSION.to_string(),
        subset_filter: subset.map(str::to_string),
        overall,
        subsets,
        diagnostics: diag,
    })
}

impl Evaluation {
    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    /// `scope,task,metric,value` rows; `count` rows give record counts.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("scope,task,metric,value\n");
        let mut emit = |scope: &str, r: &MetricReport| {
            for (task, t) in &r.tasks {
                let _ = writeln!(out, "{scope},{task},count,{}", t.count);
                for (m, v) in &t.metrics {
                    let _ = writeln!(out, "{scope},{task},{m},{v}");
                }
            }
        };
        emit("overall", &self.overall);
        for (tag, r) in &self.subsets {
            emit(tag, r);
        }
        out
    }
}
