//! Box metrics: COCO-style detection mAP/AR and single-box grounding scores.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use super::parse::ParsedEntry;
use crate::bbox::BBox;
use crate::datagen::DetectionEntry;

/// IoU thresholds 0.50, 0.55, ..., 0.95.
pub fn iou_thresholds() -> [f64; 10] {
    std::array::from_fn(|i| (50 + 5 * i) as f64 / 100.0)
}

pub const RECALL_POINTS: usize = 101;
pub const MAX_DETS: usize = 100;

/// 101-point interpolated AP from a ranked true/false-positive sequence.
/// Precision at recall level `r` is the best precision at any recall >= r.
pub fn interpolated_ap(hits: &[bool], num_gold: usize) -> f64 {
    if num_gold == 0 {
        return 0.0;
    }
    let mut tp = 0usize;
    let mut recall = Vec::with_capacity(hits.len());
    let mut precision = Vec::with_capacity(hits.len());
    for (i, &h) in hits.iter().enumerate() {
        tp += h as usize;
        recall.push(tp as f64 / num_gold as f64);
        precision.push(tp as f64 / (i + 1) as f64);
    }
    for i in (1..precision.len()).rev() {
        precision[i - 1] = precision[i - 1].max(precision[i]);
    }
    let mut sum = 0.0;
    for k in 0..RECALL_POINTS {
        let r = k as f64 / (RECALL_POINTS - 1) as f64;
        let idx = recall.partition_point(|&x| x < r);
        if idx < precision.len() {
            sum += precision[idx];
        }
    }
    sum / RECALL_POINTS as f64
}

/// Gold boxes and parsed predictions of one image.
#[derive(Debug, Clone, Default)]
pub struct ImageBoxes {
    pub gold: Vec<DetectionEntry>,
    pub pred: Vec<ParsedEntry>,
}

pub fn class_key(name: &str) -> String {
    name.trim().to_lowercase()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DetectionScores {
    pub map: f64,
    pub map_50: f64,
    pub map_75: f64,
    pub ar_100: f64,
    /// Predictions whose class never occurs in the gold set.
    pub dropped_unknown: usize,
    pub unknown_classes: BTreeSet<String>,
}

impl DetectionScores {
    pub fn metrics(&self) -> BTreeMap<String, f64> {
        BTreeMap::from([
            ("map".to_string(), self.map),
            ("map@0.5".to_string(), self.map_50),
            ("map@0.75".to_string(), self.map_75),
            ("ar@100".to_string(), self.ar_100),
        ])
    }
}

/// Greedy matching of ranked predictions: each takes the unmatched gold
/// with the highest IoU at or above `threshold` (lowest index on ties).
/// Returns the hit flag per prediction.
pub fn greedy_match(pred: &[BBox], gold: &[BBox], threshold: f64) -> Vec<bool> {
    let mut used = vec![false; gold.len()];
    pred.iter()
        .map(|p| {
            let mut best: Option<(usize, f64)> = None;
            for (g, gb) in gold.iter().enumerate() {
                if used[g] {
                    continue;
                }
                let iou = p.iou(gb);
                if iou >= threshold && best.is_none_or(|(_, b)| iou > b) {
                    best = Some((g, iou));
                }
            }
            match best {
                Some((g, _)) => {
                    used[g] = true;
                    true
                }
                None => false,
            }
        })
        .collect()
}

/// Gold boxes and `(rank, box)` predictions of one class in one image.
type ClassBoxes = (Vec<BBox>, Vec<(usize, BBox)>);

/// Detection mAP over IoU 0.50:0.95 and gold classes, mAP at 0.50 and
/// 0.75, and AR with at most 100 detections per image and class.
///
/// Predictions all carry confidence 1.0, so ranking is image order then
/// emission order.
pub fn detection_metrics(images: &[ImageBoxes]) -> DetectionScores {
    let classes: BTreeSet<String> = images
        .iter()
        .flat_map(|im| im.gold.iter().map(|g| class_key(&g.class_name)))
        .collect();
    let mut dropped = 0;
    let mut unknown = BTreeSet::new();
    for im in images {
        for p in &im.pred {
            let k = class_key(&p.class_name);
            if !classes.contains(&k) {
                dropped += 1;
                unknown.insert(k);
            }
        }
    }
    if classes.is_empty() {
        return DetectionScores {
            map: 0.0,
            map_50: 0.0,
            map_75: 0.0,
            ar_100: 0.0,
            dropped_unknown: dropped,
            unknown_classes: unknown,
        };
    }

    let taus = iou_thresholds();
    // ap[t][c], rec[t][c]
    let mut ap = vec![Vec::new(); taus.len()];
    let mut rec = vec![Vec::new(); taus.len()];
    for class in &classes {
        let per_image: Vec<ClassBoxes> = images
            .iter()
            .map(|im| {
                let gold = im
                    .gold
                    .iter()
                    .filter(|g| class_key(&g.class_name) == *class)
                    .map(|g| g.bbox)
                    .collect();
                let mut preds: Vec<(usize, BBox)> = im
                    .pred
                    .iter()
                    .enumerate()
                    .filter(|(_, p)| class_key(&p.class_name) == *class)
                    .map(|(i, p)| (i, p.bbox))
                    .collect();
                // stable: equal confidences keep emission order
                preds.sort_by(|a, b| {
                    im.pred[b.0].confidence.total_cmp(&im.pred[a.0].confidence)
                });
                preds.truncate(MAX_DETS);
                (gold, preds)
            })
            .collect();
        let num_gold: usize = per_image.iter().map(|(g, _)| g.len()).sum();

        for (t, &tau) in taus.iter().enumerate() {
            let mut ranked: Vec<(f64, usize, usize, bool)> = Vec::new();
            for (img, (gold, preds)) in per_image.iter().enumerate() {
                let boxes: Vec<BBox> = preds.iter().map(|(_, b)| *b).collect();
                let hits = greedy_match(&boxes, gold, tau);
                for (rank, ((i, _), hit)) in preds.iter().zip(hits).enumerate() {
                    ranked.push((images[img].pred[*i].confidence, img, rank, hit));
                }
            }
            ranked.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
            let hits: Vec<bool> = ranked.iter().map(|r| r.3).collect();
            ap[t].push(interpolated_ap(&hits, num_gold));
            let tp = hits.iter().filter(|&&h| h).count();
            rec[t].push(tp as f64 / num_gold as f64);
        }
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let all_ap: Vec<f64> = ap.iter().flatten().copied().collect();
    let all_rec: Vec<f64> = rec.iter().flatten().copied().collect();
    DetectionScores {
        map: mean(&all_ap),
        map_50: mean(&ap[0]),
        map_75: mean(&ap[5]),
        ar_100: mean(&all_rec),
        dropped_unknown: dropped,
        unknown_classes: unknown,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroundingScores {
    pub miou: f64,
    pub pr_50: f64,
    pub pr_75: f64,
    pub ap_50: f64,
    pub parse_failures: usize,
}

impl GroundingScores {
    pub fn metrics(&self) -> BTreeMap<String, f64> {
        BTreeMap::from([
            ("miou".to_string(), self.miou),
            ("pr@0.5".to_string(), self.pr_50),
            ("pr@0.75".to_string(), self.pr_75),
            ("ap@0.5".to_string(), self.ap_50),
        ])
    }
}

/// `pairs` holds `(prediction, gold)` per record in ranking order; a failed
/// parse (`None`) scores IoU 0 and contributes no ranked prediction.
pub fn grounding_metrics(pairs: &[(Option<BBox>, BBox)]) -> GroundingScores {
    let n = pairs.len();
    if n == 0 {
        return GroundingScores {
            miou: 0.0,
            pr_50: 0.0,
            pr_75: 0.0,
            ap_50: 0.0,
            parse_failures: 0,
        };
    }
    let ious: Vec<Option<f64>> = pairs.iter().map(|(p, g)| p.map(|p| p.iou(g))).collect();
    let frac = |tau: f64| ious.iter().filter(|i| i.is_some_and(|v| v >= tau)).count() as f64 / n as f64;
    let hits: Vec<bool> = ious.iter().flatten().map(|&v| v >= 0.5).collect();
    GroundingScores {
        miou: ious.iter().map(|i| i.unwrap_or(0.0)).sum::<f64>() / n as f64,
        pr_50: frac(0.5),
        pr_75: frac(0.75),
        ap_50: interpolated_ap(&hits, n),
        parse_failures: ious.iter().filter(|i| i.is_none()).count(),
    }
}
