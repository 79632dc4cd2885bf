//! Question templates per task and the regex verifier that maps a generated
//! question back to the template it came from.

use std::sync::OnceLock;

use regex::Regex;

use super::Task;

pub const BBOX: &str = "[bbox]";
pub const REGION: &str = "[region]";
pub const CLASS: &str = "[class]";
/// Comma-separated class list, `a, b, c`.
pub const CLASSES: &str = "[classes]";

pub const IMAGE_CAPTION: [&str; 10] = [
    "Write a description for the image.",
    "Offer a concise description of the image.",
    "Give a description of the scene.",
    "Give a short description of the image.",
    "Provide a brief description of the image.",
    "Please give a succinct description of what is shown in this image.",
    "Could you describe the image briefly?",
    "Could you provide a description of the image?",
    "Can you give a brief description of this image?",
    "Could you provide a short overview of the image?",
];

pub const REGION_CAPTION: [&str; 10] = [
    "Please provide a concise description of this region [bbox] in this underwater image.",
    "Please give a brief description of the region [bbox] in this underwater image.",
    "Could you provide a concise description of the region [bbox] in this underwater image?",
    "Please offer a succinct description of the region [bbox].",
    "Please provide a short yet informative description of the region [bbox].",
    "Describe this region [bbox] in the underwater image.",
    "Briefly describe the content of this region [bbox].",
    "In this underwater image, please provide a concise description of the region [bbox].",
    "For this underwater image, concisely describe the content of the region [bbox].",
    "What's in this region [bbox] of the underwater image? Describe it concisely.",
];

pub const GROUNDING: [&str; 5] = [
    "Please locate the bounding box coordinates of the [region].",
    "Find and return the bounding box coordinates of the [region].",
    "Give the bounding box coordinates for the [region].",
    "Extract the precise bounding box coordinates that correspond to the given [region].",
    "Detect and outline the bounding box coordinates enclosing the [region].",
];

/// The first form names a single class, the second lists every class.
pub const DETECTION: [&str; 2] = [
    "Detect all [class] object in the image.",
    "Detect all underwater object in the image, including [classes].",
];

pub const COUNTING: [&str; 10] = [
    "How many fish can you find in this image?",
    "Please count the fish in the image.",
    "Identify the number of fish present in this image.",
    "Count the total number of fish visible in this image.",
    "What is the count of fish in this image?",
    "How many fish can you see in this image?",
    "How many fish are visible in this image?",
    "Please count how many fish are in this image.",
    "Can you determine the number of fish in this image?",
    "What is the total number of fish shown in this image?",
];

pub const COARSE_CLS: [&str; 5] = [
    "Identify the object inside the specified regression box [bbox].",
    "Categorize the object located within the provided regression box [bbox] in the underwater image.",
    "Classify the items found inside the given regression box [bbox].",
    "Determine the category of the object inside the specified regression box [bbox].",
    "Assign a category to the object inside the provided regression box [bbox] in the image.",
];

pub const FINE_CLS: [&str; 5] = [
    "Please identify the biological class of fish depicted in the image.",
    "Can you recognize the fish taxonomic class shown in this image?",
    "Could you determine the taxonomic class of the fish in the image?",
    "What is the biological class of the fish in the image?",
    "You are requested to identify the biological class of fish present in the image.",
];

/// Templates for a task; free-form VQA has none.
pub fn templates(task: Task) -> &'static [&'static str] {
    match task {
        Task::ImageCaption => &IMAGE_CAPTION,
        Task::RegionCaption => &REGION_CAPTION,
        Task::Grounding => &GROUNDING,
        Task::Detection => &DETECTION,
        Task::CountingRegress | Task::CountingChoice => &COUNTING,
        Task::CoarseCls => &COARSE_CLS,
        Task::FineCls => &FINE_CLS,
        Task::Vqa => &[],
    }
}

/// Substitutes every placeholder occurring in `template`.
pub fn render(template: &str, slots: &[(&str, &str)]) -> String {
    let mut out = template.to_string();
    for (key, value) in slots {
        out = out.replace(key, value);
    }
    out
}

/// Renders four options as `A. x  B. y  C. z  D. w`.
pub fn render_choices(options: &[u64; 4]) -> String {
    format!(
        "A. {}  B. {}  C. {}  D. {}",
        options[0], options[1], options[2], options[3]
    )
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TemplateMatch {
    pub index: usize,
    /// Placeholder values in template order.
    pub slots: Vec<String>,
    /// Options of a counting-choice question.
    pub options: Option<[u64; 4]>,
}

const CHOICE_SUFFIX: &str = r" A\. (\d+)  B\. (\d+)  C\. (\d+)  D\. (\d+)";

fn template_regex(template: &str, choice: bool) -> Regex {
    let mut pat = String::from("^");
    let mut rest = template;
    while let Some(start) = rest.find('[') {
        let end = match rest[start..].find(']') {
            Some(e) => start + e + 1,
            None => break,
        };
        pat.push_str(&regex::escape(&rest[..start]));
        pat.push_str(match &rest[start..end] {
            BBOX => r"(\[[^\[\]]*\])",
            _ => r"(.+)",
        });
        rest = &rest[end..];
    }
    pat.push_str(&regex::escape(rest));
    if choice {
        pat.push_str(CHOICE_SUFFIX);
    }
    pat.push('$');
    Regex::new(&pat).expect("template regex")
}

fn compiled(task: Task) -> &'static [Regex] {
    static CELLS: OnceLock<Vec<(Task, Vec<Regex>)>> = OnceLock::new();
    let all = CELLS.get_or_init(|| {
        Task::ALL
            .iter()
            .map(|&t| {
                let choice = t == Task::CountingChoice;
                (t, templates(t).iter().map(|s| template_regex(s, choice)).collect())
            })
            .collect()
    });
    &all.iter().find(|(t, _)| *t == task).expect("task listed").1
}

/// Every template of `task` that `question` instantiates.
pub fn match_question(task: Task, question: &str) -> Vec<TemplateMatch> {
    let n_slots = |i: usize| templates(task)[i].matches('[').count();
    compiled(task)
        .iter()
        .enumerate()
        .filter_map(|(index, re)| {
            let caps = re.captures(question)?;
            let k = n_slots(index);
            let slots = (1..=k).map(|g| caps[g].to_string()).collect();
            let options = (task == Task::CountingChoice).then(|| {
                let mut o = [0u64; 4];
                for (i, v) in o.iter_mut().enumerate() {
                    *v = caps[k + 1 + i].parse().unwrap_or(u64::MAX);
                }
                o
            });
            Some(TemplateMatch { index, slots, options })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_template_matches_only_itself() {
        for &task in Task::ALL.iter().filter(|t| **t != Task::Vqa) {
            for (i, t) in templates(task).iter().enumerate() {
                let q = render(
                    t,
                    &[
                        (BBOX, "[0.100, 0.200, 0.300, 0.400]"),
                        (REGION, "small silver fish"),
                        (CLASS, "fish"),
                        (CLASSES, "fish, turtle"),
                    ],
                );
                let q = if task == Task::CountingChoice {
                    format!("{q} {}", render_choices(&[0, 5, 10, 15]))
                } else {
                    q
                };
                let m = match_question(task, &q);
                assert_eq!(m.len(), 1, "{task:?} #{i}: {q}");
                assert_eq!(m[0].index, i);
            }
        }
    }

    #[test]
    fn captures_slots_and_options() {
        let q = "Give the bounding box coordinates for the dark fish. Really.";
        let m = match_question(Task::Grounding, q);
        assert_eq!(m[0].slots, vec!["dark fish. Really".to_string()]);
        let q = format!("{} {}", COUNTING[6], render_choices(&[3, 8, 13, 18]));
        assert_eq!(match_question(Task::CountingChoice, &q)[0].options, Some([3, 8, 13, 18]));
        assert!(match_question(Task::CountingRegress, &q).is_empty());
        assert!(match_question(Task::ImageCaption, "Describe it.").is_empty());
    }
}
