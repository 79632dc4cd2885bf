//! Caption providers: the prompts sent to a multimodal model, a file-backed
//! stub and an HTTP client, plus parsing of what comes back.

use std::path::PathBuf;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{CaptionRecord, CaptionScope};
use crate::bbox::{format_bbox, BBox};
use crate::error::{Error, Result};

pub const IMAGE_CAPTION_PROMPT: &str = "You are an AI visual assistant analyzing an underwater image.

Task Overview:

Generate a detailed and accurate description of the image in one sentence.

Image caption guidelines:

1. Ensure that **each description is affirmative and can be inferred clearly from the image**.

2. Identify the main targets such as various fish, sea turtles, jellyfish and other marine organisms, shipwrecks and ruins, coral reefs, seagrass, divers, etc. When describing, mention the accurate number of targets and determine their category.

3. Consider the action or state of the objects, relationship between objects, background and environment.";

/// Contains one `{bbox}` placeholder.
pub const REGION_CAPTION_PROMPT: &str = "Given an image, a bounding box (bbox), and additional textual context, generate a high-quality region description. The description must adhere to the following principles:

Input:

bounding box: {bbox}

This bounding box represents the normalized xy-coordinates of the top-left and bottom-right corners of the target region in the image.

Accuracy: Ensure the description precisely reflects the content within the specified bbox without adding speculative or unrelated details.

Specificity: Provide concrete details about the object's attributes (e.g., shape, color, texture) and relevant contextual information.

Objectivity: Avoid any subjective interpretations, emotions, or assumptions about the object's purpose or intent.

Conciseness: Keep the description informative yet succinct, avoiding unnecessary elaboration.

Context Awareness: Consider the surrounding elements only if they are relevant to understanding the object in the bbox.

Output Format:

description: A dark-colored fish with a broad body and a slightly pointed head, swimming near the coral reef.";

pub const VQA_PROMPT: &str = "You are an AI visual assistant analyzing an underwater image. Generate a structured dialogue between yourself and a person asking questions about the image. Your task is to create precise question-answer pairs based purely on the observable visual content of the image. Each answer should be as short as possible, preferably a single word or short phrase, while maintaining accuracy.

Task Overview:
Generate a variety of structured question-answer pairs that reflect the image's content. Questions should cover different aspects of the image and fall into one of the following categories:
Object Recognition Questions: Identifying or detecting object types and categories (e.g., fish species, coral structures).
Attribute Questions: Describing the properties of objects (e.g., color, size, shape, material).
Counting Questions: Asking about the number of specific objects (e.g., number of fish or coral formations).
Spatial Relation Questions: Asking about the relative position or spatial layout of objects (e.g., where objects are located or their relative positions ).

Guidelines:
For \"Spatial Relation Questions\",do not answer them by \"In the ocean\".
Ensure that every question has a definite and clear answer based on what is visually observable in the image.
Avoid speculative or ambiguous questions. Questions should be answerable with confidence and based on visible content.
Include both simple (object identification, counting) and moderate (relative positioning, behaviors) questions.

Format:
Follow this exact format for each question-answer pair and no need to include other content:
Q: [Question]
A: [A single word or phrase]";

#[derive(Debug, Clone, PartialEq)]
pub enum PromptKind {
    ImageCaption,
    RegionCaption(BBox),
    Vqa,
}

impl PromptKind {
    /// Key used in stub file names.
    pub fn key(&self) -> &'static str {
        match self {
            PromptKind::ImageCaption => "image_caption",
            PromptKind::RegionCaption(_) => "region_caption",
            PromptKind::Vqa => "vqa",
        }
    }

    pub fn prompt(&self) -> String {
        match self {
            PromptKind::ImageCaption => IMAGE_CAPTION_PROMPT.to_string(),
            PromptKind::RegionCaption(b) => REGION_CAPTION_PROMPT.replace("{bbox}", &format_bbox(b)),
            PromptKind::Vqa => VQA_PROMPT.to_string(),
        }
    }
}

/// Something that turns a rendered prompt about an image into text.
pub trait CaptionProvider {
    fn id(&self) -> &str;
    fn complete(&mut self, image_id: &str, kind: &PromptKind, prompt: &str) -> Result<String>;
}

/// Serves `<dir>/<image_id>.<prompt_kind>.txt` verbatim.
#[derive(Debug, Clone)]
pub struct FileProvider {
    dir: PathBuf,
    id: String,
}

impl FileProvider {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        FileProvider {
            dir: dir.into(),
            id: "file-stub".to_string(),
        }
    }

    pub fn path_for(&self, image_id: &str, kind: &PromptKind) -> PathBuf {
        self.dir.join(format!("{image_id}.{}.txt", kind.key()))
    }
}

impl CaptionProvider for FileProvider {
    fn id(&self) -> &str {
        &self.id
    }

    fn complete(&mut self, image_id: &str, kind: &PromptKind, _prompt: &str) -> Result<String> {
        let path = self.path_for(image_id, kind);
        std::fs::read_to_string(&path).map_err(|e| Error::Provider {
            retriable: e.kind() != std::io::ErrorKind::NotFound,
            message: format!("{}: {e}", path.display()),
        })
    }
}

#[derive(Serialize)]
struct HttpRequest<'a> {
    prompt: &'a str,
    image: &'a str,
}

#[derive(Deserialize)]
struct HttpResponse {
    text: String,
}

/// POSTs `{prompt, image}` to one endpoint and reads `{text}` back. The
/// bearer token is read from an environment variable at call time.
#[derive(Debug, Clone)]
pub struct HttpProvider {
    endpoint: String,
    token_env: Option<String>,
    image_root: Option<String>,
    id: String,
    timeout: Duration,
}

impl HttpProvider {
    pub fn new(endpoint: impl Into<String>) -> Self {
        let endpoint = endpoint.into();
        HttpProvider {
            id: format!("http:{endpoint}"),
            endpoint,
            token_env: None,
            image_root: None,
            timeout: Duration::from_secs(60),
        }
    }

    pub fn with_token_env(mut self, var: impl Into<String>) -> Self {
        self.token_env = Some(var.into());
        self
    }

    /// Prefix joined to the image id to form the image reference.
    pub fn with_image_root(mut self, root: impl Into<String>) -> Self {
        self.image_root = Some(root.into());
        self
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }
}

impl CaptionProvider for HttpProvider {
    fn id(&self) -> &str {
        &self.id
    }

    fn complete(&mut self, image_id: &str, _kind: &PromptKind, prompt: &str) -> Result<String> {
        let image = match &self.image_root {
            Some(root) => format!("{}/{image_id}", root.trim_end_matches('/')),
            None => image_id.to_string(),
        };
        let mut req = ureq::post(&self.endpoint).timeout(self.timeout);
        if let Some(var) = &self.token_env {
            let token = std::env::var(var).map_err(|_| Error::Provider {
                retriable: false,
                message: format!("credential variable {var} is not set"),
            })?;
            req = req.set("Authorization", &format!("Bearer {token}"));
        }
        let resp = req.send_json(HttpRequest { prompt, image: &image }).map_err(|e| match e {
            ureq::Error::Status(code, _) => Error::Provider {
                retriable: code == 429 || code >= 500,
                message: format!("{} returned HTTP {code}", self.endpoint),
            },
            ureq::Error::Transport(t) => Error::Provider {
                retriable: true,
                message: t.to_string(),
            },
        })?;
        let body: HttpResponse = resp.into_json().map_err(|e| Error::Provider {
            retriable: false,
            message: format!("malformed response body: {e}"),
        })?;
        Ok(body.text)
    }
}

/// Drops a leading `description:` label (any case).
pub fn strip_description_label(text: &str) -> &str {
    let t = text.trim_start();
    match t.get(..12) {
        Some(head) if head.eq_ignore_ascii_case("description:") => t[12..].trim_start(),
        _ => t,
    }
}

/// Parses `Q: ...` / `A: ...` line pairs. Any structural problem rejects
/// the whole block, listing 1-based line numbers.
pub fn parse_vqa_block(text: &str) -> Result<Vec<(String, String)>> {
    let mut pairs = Vec::new();
    let mut problems = Vec::new();
    let mut pending: Option<(usize, String)> = None;
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(q) = strip_tag(line, 'Q') {
            if let Some((at, _)) = pending.take() {
                problems.push(format!("line {at}: question has no answer"));
            }
            if q.is_empty() {
                problems.push(format!("line {line_no}: empty question"));
            } else {
                pending = Some((line_no, q.to_string()));
            }
        } else if let Some(a) = strip_tag(line, 'A') {
            match pending.take() {
                Some(_) if a.is_empty() => problems.push(format!("line {line_no}: empty answer")),
                Some((_, q)) => pairs.push((q, a.to_string())),
                None => problems.push(format!("line {line_no}: answer without a question")),
            }
        } else {
            problems.push(format!("line {line_no}: expected `Q:` or `A:`"));
        }
    }
    if let Some((at, _)) = pending {
        problems.push(format!("line {at}: question has no answer"));
    }
    if problems.is_empty() && pairs.is_empty() {
        problems.push("no question-answer pairs".to_string());
    }
    if problems.is_empty() {
        Ok(pairs)
    } else {
        Err(Error::Parse(format!("VQA block rejected: {}", problems.join("; "))))
    }
}

fn strip_tag(line: &str, tag: char) -> Option<&str> {
    let rest = line.strip_prefix(tag)?;
    Some(rest.trim_start().strip_prefix(':')?.trim())
}

/// A parsed provider reply.
#[derive(Debug, Clone, PartialEq)]
pub enum Freeform {
    Caption(CaptionRecord),
    Vqa(Vec<(String, String)>),
}

pub fn request_freeform(
    provider: &mut dyn CaptionProvider,
    image_id: &str,
    kind: &PromptKind,
) -> Result<Freeform> {
    let text = provider.complete(image_id, kind, &kind.prompt())?;
    Ok(match kind {
        PromptKind::Vqa => Freeform::Vqa(parse_vqa_block(&text)?),
        PromptKind::ImageCaption | PromptKind::RegionCaption(_) => {
            let body = strip_description_label(&text).trim();
            if body.is_empty() {
                return Err(Error::Parse(format!("{image_id}: empty {} reply", kind.key())));
            }
            let scope = match kind {
                PromptKind::RegionCaption(b) => CaptionScope::Region { bbox: *b },
                _ => CaptionScope::Image,
            };
            Freeform::Caption(CaptionRecord {
                image_id: image_id.to_string(),
                scope,
                text: body.to_string(),
                provider_id: provider.id().to_string(),
            })
        }
    })
}

pub(crate) fn request_caption(
    provider: &mut dyn CaptionProvider,
    image_id: &str,
    kind: &PromptKind,
) -> Result<CaptionRecord> {
    match request_freeform(provider, image_id, kind)? {
        Freeform::Caption(c) => Ok(c),
        Freeform::Vqa(_) => Err(Error::Contract("caption prompt produced a VQA reply".into())),
    }
}

pub(crate) fn request_vqa(provider: &mut dyn CaptionProvider, image_id: &str) -> Result<Vec<(String, String)>> {
    match request_freeform(provider, image_id, &PromptKind::Vqa)? {
        Freeform::Vqa(pairs) => Ok(pairs),
        Freeform::Caption(_) => Err(Error::Contract("VQA prompt produced a caption reply".into())),
    }
}
