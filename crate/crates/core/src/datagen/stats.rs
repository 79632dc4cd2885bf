//! Distribution of generated records over tasks and source datasets.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{QaRecord, Task};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Share {
    pub count: usize,
    pub proportion: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub total: usize,
    /// Every task is listed, including those with no records.
    pub by_task: BTreeMap<String, Share>,
    pub by_source: BTreeMap<String, Share>,
    pub images_by_source: BTreeMap<String, Share>,
}

fn shares(counts: BTreeMap<String, usize>, total: usize) -> BTreeMap<String, Share> {
    counts
        .into_iter()
        .map(|(k, count)| {
            let proportion = if total == 0 { 0.0 } else { count as f64 / total as f64 };
            (k, Share { count, proportion })
        })
        .collect()
}

pub fn dataset_stats(records: &[QaRecord]) -> DatasetStats {
    let mut by_task: BTreeMap<String, usize> = Task::ALL.iter().map(|t| (t.to_string(), 0)).collect();
    let mut by_source = BTreeMap::new();
    let mut images = BTreeMap::new();
    for r in records {
        *by_task.get_mut(r.task.as_str()).expect("all tasks listed") += 1;
        *by_source.entry(r.source.clone()).or_insert(0) += 1;
        images.insert(r.image_id.as_str(), r.source.as_str());
    }
    let mut images_by_source = BTreeMap::new();
    for source in images.values() {
        *images_by_source.entry(source.to_string()).or_insert(0) += 1;
    }
    DatasetStats {
        total: records.len(),
        by_task: shares(by_task, records.len()),
        by_source: shares(by_source, records.len()),
        images_by_source: shares(images_by_source, images.len()),
    }
}

impl DatasetStats {
    /// Plain-text table with one row per task and per source.
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:<20} {:>10} {:>9}", "task", "records", "share");
        for (k, v) in &self.by_task {
            let _ = writeln!(s, "{k:<20} {:>10} {:>8.2}%", v.count, 100.0 * v.proportion);
        }
        let _ = writeln!(s, "{:<20} {:>10}", "total", self.total);
        let _ = writeln!(s);
        let _ = writeln!(s, "{:<20} {:>10} {:>9} {:>8}", "source", "records", "share", "images");
        for (k, v) in &self.by_source {
            let imgs = self.images_by_source.get(k).map_or(0, |s| s.count);
            let _ = writeln!(s, "{k:<20} {:>10} {:>8.2}% {imgs:>8}", v.count, 100.0 * v.proportion);
        }
        s
    }
}
