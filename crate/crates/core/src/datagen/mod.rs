//! Instruction-data construction: rule-based QA from annotations, caption
//! integration, free-form VQA through a caption provider, and a quality
//! filter.
//!
//! Every record draws its randomness from an RNG seeded by
//! `sha256(dataset_seed || record_id)`, so output does not depend on the
//! order in which records are produced.

pub mod filter;
pub mod provider;
pub mod stats;
pub mod templates;

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bbox::{format_bbox, BBox};
use crate::error::{Error, Result};
use templates::{render, render_choices, BBOX, CLASS, CLASSES, REGION};

pub use provider::{CaptionProvider, FileProvider, HttpProvider, PromptKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Detection,
    CoarseCls,
    FineCls,
    Grounding,
    CountingRegress,
    CountingChoice,
    ImageCaption,
    RegionCaption,
    Vqa,
}

impl Task {
    pub const ALL: [Task; 9] = [
        Task::Detection,
        Task::CoarseCls,
        Task::FineCls,
        Task::Grounding,
        Task::CountingRegress,
        Task::CountingChoice,
        Task::ImageCaption,
        Task::RegionCaption,
        Task::Vqa,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Task::Detection => "detection",
            Task::CoarseCls => "coarse_cls",
            Task::FineCls => "fine_cls",
            Task::Grounding => "grounding",
            Task::CountingRegress => "counting_regress",
            Task::CountingChoice => "counting_choice",
            Task::ImageCaption => "image_caption",
            Task::RegionCaption => "region_caption",
            Task::Vqa => "vqa",
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Task::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| Error::Validation(format!("unknown task tag `{s}`")))
    }
}

/// Degradation tags used to split evaluation into subsets.
pub const CONDITION_TAGS: [&str; 6] = [
    "low-light",
    "normal-light",
    "green-tinted",
    "blue-tinted",
    "turbid",
    "clear",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionEntry {
    pub class_name: String,
    pub bbox: BBox,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "scope", rename_all = "lowercase")]
pub enum CaptionScope {
    Image,
    Region { bbox: BBox },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaptionRecord {
    #[serde(default)]
    pub image_id: String,
    #[serde(flatten)]
    pub scope: CaptionScope,
    pub text: String,
    #[serde(default)]
    pub provider_id: String,
}

/// One line of the input annotation file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageAnnotation {
    pub image_id: String,
    #[serde(default = "default_source")]
    pub source: String,
    #[serde(default)]
    pub conditions: Vec<String>,
    #[serde(default)]
    pub detections: Vec<DetectionEntry>,
    #[serde(default)]
    pub count: Option<u64>,
    #[serde(default)]
    pub taxonomic_class: Option<String>,
    #[serde(default)]
    pub captions: Vec<CaptionRecord>,
}

fn default_source() -> String {
    "unspecified".to_string()
}

impl ImageAnnotation {
    pub fn validate(&self) -> Result<()> {
        if self.image_id.trim().is_empty() {
            return Err(Error::Validation("empty image_id".into()));
        }
        if let Some(tag) = self.conditions.iter().find(|t| !CONDITION_TAGS.contains(&t.as_str())) {
            return Err(Error::Validation(format!(
                "{}: unknown condition tag `{tag}`",
                self.image_id
            )));
        }
        if self.detections.iter().any(|d| d.class_name.trim().is_empty()) {
            return Err(Error::Validation(format!("{}: empty class name", self.image_id)));
        }
        if matches!(&self.taxonomic_class, Some(c) if c.trim().is_empty()) {
            return Err(Error::Validation(format!("{}: empty taxonomic class", self.image_id)));
        }
        Ok(())
    }

    pub fn context(&self) -> ImageContext {
        ImageContext {
            image_id: self.image_id.clone(),
            source: self.source.clone(),
            conditions: self.conditions.clone(),
        }
    }

    fn captions(&self) -> impl Iterator<Item = CaptionRecord> + '_ {
        self.captions.iter().map(|c| CaptionRecord {
            image_id: self.image_id.clone(),
            ..c.clone()
        })
    }
}

/// Per-image fields copied onto every generated record.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ImageContext {
    pub image_id: String,
    pub source: String,
    pub conditions: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QaRecord {
    pub id: String,
    pub image_id: String,
    pub task: Task,
    pub source: String,
    #[serde(default)]
    pub conditions: Vec<String>,
    pub question: String,
    pub answer: String,
}

impl QaRecord {
    fn new(ctx: &ImageContext, id: &str, task: Task, question: String, answer: String) -> Self {
        QaRecord {
            id: id.to_string(),
            image_id: ctx.image_id.clone(),
            task,
            source: ctx.source.clone(),
            conditions: ctx.conditions.clone(),
            question,
            answer,
        }
    }
}

pub fn record_id(image_id: &str, task: Task, n: usize) -> String {
    format!("{image_id}/{task}/{n}")
}

/// RNG for one record: ChaCha8 keyed by `sha256(seed_le || record_id)`.
pub fn record_rng(seed: u64, record_id: &str) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(record_id.as_bytes());
    ChaCha8Rng::from_seed(h.finalize().into())
}

fn pick<'a>(options: &[&'a str], rng: &mut impl Rng) -> &'a str {
    options.choose(rng).expect("non-empty template table")
}

/// `class:[x1, y1, x2, y2]` segments in annotation order, comma-joined.
pub fn detection_answer(entries: &[DetectionEntry]) -> String {
    entries
        .iter()
        .map(|e| format!("{}:{}", e.class_name, format_bbox(&e.bbox)))
        .collect::<Vec<_>>()
        .join(", ")
}

/// The single-class template is used when every entry shares one class.
pub fn gen_detection_qa(
    ctx: &ImageContext,
    id: &str,
    entries: &[DetectionEntry],
    _rng: &mut impl Rng,
) -> Result<QaRecord> {
    if entries.is_empty() {
        return Err(Error::Contract(format!("{}: no detection entries", ctx.image_id)));
    }
    let mut classes: Vec<&str> = Vec::new();
    for e in entries {
        if !classes.contains(&e.class_name.as_str()) {
            classes.push(&e.class_name);
        }
    }
    let question = if classes.len() == 1 {
        render(templates::DETECTION[0], &[(CLASS, classes[0])])
    } else {
        render(templates::DETECTION[1], &[(CLASSES, &classes.join(", "))])
    };
    Ok(QaRecord::new(ctx, id, Task::Detection, question, detection_answer(entries)))
}

pub fn gen_coarse_cls_qa(
    ctx: &ImageContext,
    id: &str,
    entry: &DetectionEntry,
    rng: &mut impl Rng,
) -> QaRecord {
    let t = pick(&templates::COARSE_CLS, rng);
    let question = render(t, &[(BBOX, &format_bbox(&entry.bbox))]);
    QaRecord::new(ctx, id, Task::CoarseCls, question, entry.class_name.clone())
}

pub fn gen_fine_cls_qa(
    ctx: &ImageContext,
    id: &str,
    taxonomic_class: &str,
    rng: &mut impl Rng,
) -> QaRecord {
    let t = pick(&templates::FINE_CLS, rng);
    QaRecord::new(ctx, id, Task::FineCls, t.to_string(), taxonomic_class.to_string())
}

/// First sentence of a caption with any `description:` label and trailing
/// punctuation removed.
pub fn referring_phrase(text: &str) -> String {
    let text = provider::strip_description_label(text);
    let bytes = text.as_bytes();
    let mut end = text.len();
    for (i, &b) in bytes.iter().enumerate() {
        if matches!(b, b'.' | b'!' | b'?') && bytes.get(i + 1).is_none_or(|c| c.is_ascii_whitespace()) {
            end = i;
            break;
        }
    }
    text[..end]
        .trim()
        .trim_end_matches(|c: char| c.is_ascii_punctuation())
        .trim()
        .to_string()
}

pub fn gen_grounding_qa(
    ctx: &ImageContext,
    id: &str,
    caption: &CaptionRecord,
    rng: &mut impl Rng,
) -> Result<QaRecord> {
    let CaptionScope::Region { bbox } = &caption.scope else {
        return Err(Error::Contract(format!(
            "{}: grounding needs a region caption",
            caption.image_id
        )));
    };
    let region = referring_phrase(&caption.text);
    if region.is_empty() {
        return Err(Error::Contract(format!("{}: empty region caption", caption.image_id)));
    }
    let t = pick(&templates::GROUNDING, rng);
    let question = render(t, &[(REGION, &region)]);
    Ok(QaRecord::new(ctx, id, Task::Grounding, question, format_bbox(bbox)))
}

pub fn gen_counting_regress_qa(ctx: &ImageContext, id: &str, count: u64, rng: &mut impl Rng) -> QaRecord {
    let t = pick(&templates::COUNTING, rng);
    QaRecord::new(ctx, id, Task::CountingRegress, t.to_string(), count.to_string())
}

pub const CHOICE_INTERVALS: [u64; 3] = [5, 50, 100];
pub const CHOICE_LETTERS: [char; 4] = ['A', 'B', 'C', 'D'];

/// Four-term arithmetic sequence containing `count` at a uniformly drawn
/// position `j`; `j` is redrawn while the first term would be negative.
/// Returns `(options, j, interval)`.
pub fn choice_options(count: u64, rng: &mut impl Rng) -> ([u64; 4], usize, u64) {
    let delta = *CHOICE_INTERVALS.choose(rng).expect("intervals");
    let j = loop {
        let j = rng.gen_range(0..4usize);
        if count >= j as u64 * delta {
            break j;
        }
    };
    let first = count - j as u64 * delta;
    let options = [0, 1, 2, 3].map(|i| first + i * delta);
    (options, j, delta)
}

pub fn gen_counting_choice_qa(ctx: &ImageContext, id: &str, count: u64, rng: &mut impl Rng) -> QaRecord {
    let t = pick(&templates::COUNTING, rng);
    let (options, j, _) = choice_options(count, rng);
    let question = format!("{t} {}", render_choices(&options));
    QaRecord::new(ctx, id, Task::CountingChoice, question, CHOICE_LETTERS[j].to_string())
}

pub fn gen_caption_qa(
    ctx: &ImageContext,
    id: &str,
    caption: &CaptionRecord,
    rng: &mut impl Rng,
) -> Result<QaRecord> {
    let text = provider::strip_description_label(&caption.text).trim().to_string();
    if text.is_empty() {
        return Err(Error::Contract(format!("{}: empty caption", caption.image_id)));
    }
    Ok(match &caption.scope {
        CaptionScope::Image => {
            let t = pick(&templates::IMAGE_CAPTION, rng);
            QaRecord::new(ctx, id, Task::ImageCaption, t.to_string(), text)
        }
        CaptionScope::Region { bbox } => {
            let t = pick(&templates::REGION_CAPTION, rng);
            let question = render(t, &[(BBOX, &format_bbox(bbox))]);
            QaRecord::new(ctx, id, Task::RegionCaption, question, text)
        }
    })
}

/// An input item that produced no record, and why.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Skipped {
    pub image_id: String,
    pub task: Task,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Generation {
    /// Sorted by record id.
    pub records: Vec<QaRecord>,
    pub skipped: Vec<Skipped>,
}

impl Generation {
    fn skip(&mut self, image_id: &str, task: Task, reason: impl Into<String>) {
        self.skipped.push(Skipped {
            image_id: image_id.to_string(),
            task,
            reason: reason.into(),
        });
    }
}

/// Rule-based and caption-integrated records for every annotated image.
pub fn generate(annotations: &[ImageAnnotation], seed: u64) -> Result<Generation> {
    generate_with_provider(annotations, seed, None)
}

/// As [`generate`], additionally requesting an image caption (when none is
/// annotated) and a VQA block for each image from `provider`.
pub fn generate_with_provider(
    annotations: &[ImageAnnotation],
    seed: u64,
    mut provider: Option<&mut dyn CaptionProvider>,
) -> Result<Generation> {
    let mut gen = Generation::default();
    let mut seen = std::collections::BTreeSet::new();
    for ann in annotations {
        ann.validate()?;
        if !seen.insert(ann.image_id.as_str()) {
            return Err(Error::Validation(format!("duplicate image_id `{}`", ann.image_id)));
        }
        let ctx = ann.context();
        let id_of = |task, n| record_id(&ann.image_id, task, n);

        // Boxes that collapse at three decimals cannot be written faithfully.
        let mut usable = Vec::new();
        for e in &ann.detections {
            if e.bbox.quantized().is_some() {
                usable.push(e.clone());
            } else {
                gen.skip(&ann.image_id, Task::Detection, format!("box {:?} collapses when serialized", e.bbox.coords()));
            }
        }
        if !usable.is_empty() {
            let id = id_of(Task::Detection, 0);
            gen.records.push(gen_detection_qa(&ctx, &id, &usable, &mut record_rng(seed, &id))?);
            for (n, e) in usable.iter().enumerate() {
                let id = id_of(Task::CoarseCls, n);
                gen.records.push(gen_coarse_cls_qa(&ctx, &id, e, &mut record_rng(seed, &id)));
            }
        }
        if let Some(count) = ann.count {
            let id = id_of(Task::CountingRegress, 0);
            gen.records.push(gen_counting_regress_qa(&ctx, &id, count, &mut record_rng(seed, &id)));
            let id = id_of(Task::CountingChoice, 0);
            gen.records.push(gen_counting_choice_qa(&ctx, &id, count, &mut record_rng(seed, &id)));
        }
        if let Some(class) = &ann.taxonomic_class {
            let id = id_of(Task::FineCls, 0);
            gen.records.push(gen_fine_cls_qa(&ctx, &id, class.trim(), &mut record_rng(seed, &id)));
        }

        let mut captions: Vec<CaptionRecord> = ann.captions().collect();
        if let Some(p) = provider.as_deref_mut() {
            if !captions.iter().any(|c| c.scope == CaptionScope::Image) {
                match provider::request_caption(p, &ann.image_id, &PromptKind::ImageCaption) {
                    Ok(c) => captions.push(c),
                    Err(e) => gen.skip(&ann.image_id, Task::ImageCaption, e.to_string()),
                }
            }
            match provider::request_vqa(p, &ann.image_id) {
                Ok(pairs) => {
                    for (n, (q, a)) in pairs.into_iter().enumerate() {
                        let id = id_of(Task::Vqa, n);
                        gen.records.push(QaRecord::new(&ctx, &id, Task::Vqa, q, a));
                    }
                }
                Err(e) => gen.skip(&ann.image_id, Task::Vqa, e.to_string()),
            }
        }

        let (mut n_image, mut n_region) = (0, 0);
        for c in &captions {
            let (task, n) = match c.scope {
                CaptionScope::Image => (Task::ImageCaption, &mut n_image),
                CaptionScope::Region { .. } => (Task::RegionCaption, &mut n_region),
            };
            let id = id_of(task, *n);
            match gen_caption_qa(&ctx, &id, c, &mut record_rng(seed, &id)) {
                Ok(r) => {
                    *n += 1;
                    gen.records.push(r);
                }
                Err(e) => {
                    gen.skip(&ann.image_id, task, e.to_string());
                    continue;
                }
            }
            if task == Task::RegionCaption {
                let id = id_of(Task::Grounding, *n - 1);
                match gen_grounding_qa(&ctx, &id, c, &mut record_rng(seed, &id)) {
                    Ok(r) => gen.records.push(r),
                    Err(e) => gen.skip(&ann.image_id, Task::Grounding, e.to_string()),
                }
            }
        }
    }
    gen.records.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(gen)
}
