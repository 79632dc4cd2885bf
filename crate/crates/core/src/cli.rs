//! Command-line front end. Each command writes its outputs plus a JSON
//! summary under `--out` and returns 0 on success, 1 when a check fails and
//! 2 on usage or I/O errors.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::datagen::filter::{quality_filter, AcceptAll, Judge, RuleJudge};
use crate::datagen::stats::dataset_stats;
use crate::datagen::{self, CaptionProvider, FileProvider, HttpProvider, ImageAnnotation, QaRecord, Task};
use crate::error::Error;
use crate::eval::{self, Prediction};
use crate::imaging::io::{read_depth, read_png_rgb, write_png_rgb, BitDepth};
use crate::imaging::{self, AttenuationModel, Backscatter, PatchGrid};
use crate::jsonl;
use crate::selfcheck::{self, SelfCheckOptions, Status};
use crate::tensors::TensorManifest;
use crate::vfe::{VfeDims, VfeParameters, DEFAULT_W_MAX};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CHECK_FAILED: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "aquavis", version, about = "Underwater imaging physics, feature enhancement checks, QA generation and evaluation")]
pub struct Cli {
    /// JSON config file; command-line flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory (created if missing).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Only score gold records carrying this condition tag.
    #[arg(long, global = true)]
    pub subset: Option<String>,
    #[arg(long, global = true, value_enum)]
    pub format: Option<Format>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Json,
    Csv,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render a degraded underwater image from a clean image and depth map.
    Degrade(PhysicsArgs),
    /// Invert the formation model; estimates backscatter from the darkest patch if not given.
    Restore(PhysicsArgs),
    /// Generate QA records from an annotation JSONL file.
    Genqa(GenqaArgs),
    /// Score a prediction JSONL file against gold QA records.
    Eval(EvalArgs),
    /// Verify enhancement-module and pipeline invariants, including gradient checks.
    VfeSelfcheck(SelfcheckArgs),
    /// Task and source distribution of a QA dataset.
    Stats(StatsArgs),
}

#[derive(Debug, Args)]
pub struct PhysicsArgs {
    #[arg(long)]
    pub image: Option<PathBuf>,
    /// 16-bit PNG with `.json` scale sidecar, or raw `UWDM` depth file.
    #[arg(long)]
    pub depth: Option<PathBuf>,
    /// Constant per-channel attenuation `r,g,b`.
    #[arg(long, value_parser = parse_triple)]
    pub beta: Option<[f64; 3]>,
    /// Per-channel backscatter `r,g,b`.
    #[arg(long, value_parser = parse_triple)]
    pub backscatter: Option<[f64; 3]>,
    #[arg(long)]
    pub patch_size: Option<usize>,
    /// Output PNG bit depth; defaults to the input's.
    #[arg(long, value_parser = ["8", "16"])]
    pub bits: Option<String>,
}

#[derive(Debug, Args)]
pub struct GenqaArgs {
    #[arg(long)]
    pub annotations: Option<PathBuf>,
    /// Directory of `<image_id>.<prompt_kind>.txt` provider replies.
    #[arg(long)]
    pub provider_dir: Option<PathBuf>,
    /// HTTP caption endpoint accepting `{prompt, image}`.
    #[arg(long)]
    pub provider_url: Option<String>,
    /// Environment variable holding the provider bearer token.
    #[arg(long)]
    pub provider_token_env: Option<String>,
    #[arg(long, value_enum)]
    pub judge: Option<JudgeKind>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum JudgeKind {
    Rule,
    AcceptAll,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub predictions: Option<PathBuf>,
    #[arg(long)]
    pub gold: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SelfcheckArgs {
    /// VFE tensor manifest to check instead of random parameters.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub d: Option<usize>,
    #[arg(long)]
    pub e: Option<usize>,
    #[arg(long)]
    pub h: Option<usize>,
    #[arg(long)]
    pub w_max: Option<f64>,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    #[arg(long)]
    pub dataset: Option<PathBuf>,
}

fn parse_triple(s: &str) -> Result<[f64; 3], String> {
    let v: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|e| format!("`{p}`: {e}")))
        .collect::<Result<_, _>>()?;
    v.try_into().map_err(|_| "expected three comma-separated numbers".to_string())
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    pub seed: Option<u64>,
    pub paths: PathsConfig,
    pub physics: PhysicsConfig,
    pub vfe: VfeConfig,
    pub genqa: GenqaConfig,
    pub eval: EvalConfig,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsConfig {
    pub image: Option<PathBuf>,
    pub depth: Option<PathBuf>,
    pub annotations: Option<PathBuf>,
    pub predictions: Option<PathBuf>,
    pub gold: Option<PathBuf>,
    pub dataset: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub provider_dir: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhysicsConfig {
    /// Constant `[r, g, b]` or per-channel `[[z, beta], ...]` knots.
    pub beta: Option<AttenuationModel>,
    pub backscatter: Option<[f64; 3]>,
    pub patch_size: Option<usize>,
    pub bits: Option<u8>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VfeConfig {
    pub d: Option<usize>,
    pub e: Option<usize>,
    pub h: Option<usize>,
    pub w_max: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenqaConfig {
    pub provider_url: Option<String>,
    pub provider_token_env: Option<String>,
    pub judge: Option<JudgeKind>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub subset: Option<String>,
    pub format: Option<Format>,
}

impl Config {
    pub fn load(path: &Path) -> crate::Result<Config> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
    }
}

/// Outcome of a command that ran to completion.
enum Outcome {
    Ok,
    CheckFailed(String),
}

enum Failure {
    Usage(String),
    Lib(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

type CmdResult = std::result::Result<Outcome, Failure>;

fn need<T>(value: Option<T>, what: &str) -> std::result::Result<T, Failure> {
    value.ok_or_else(|| Failure::Usage(format!("missing {what}")))
}

fn write_json(path: &Path, value: &impl Serialize) -> crate::Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    fs::write(path, s).map_err(|e| Error::io(path, e))
}

struct Ctx {
    cfg: Config,
    seed: Option<u64>,
    out: Option<PathBuf>,
    subset: Option<String>,
    format: Option<Format>,
}

impl Ctx {
    fn out_dir(&self) -> std::result::Result<PathBuf, Failure> {
        let dir = need(self.out.clone().or_else(|| self.cfg.paths.out.clone()), "--out (or paths.out)")?;
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        Ok(dir)
    }

    fn seed(&self) -> std::result::Result<u64, Failure> {
        need(self.seed.or(self.cfg.seed), "--seed (required by this command)")
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let cfg = match &cli.config {
        Some(p) => match Config::load(p) {
            Ok(c) => c,
            Err(e) => {
                eprintln!("error: {e}");
                return EXIT_USAGE;
            }
        },
        None => Config::default(),
    };
    let ctx = Ctx {
        cfg,
        seed: cli.seed,
        out: cli.out,
        subset: cli.subset,
        format: cli.format,
    };
    let result = match &cli.command {
        Command::Degrade(a) => cmd_degrade(&ctx, a),
        Command::Restore(a) => cmd_restore(&ctx, a),
        Command::Genqa(a) => cmd_genqa(&ctx, a),
        Command::Eval(a) => cmd_eval(&ctx, a),
        Command::VfeSelfcheck(a) => cmd_vfe_selfcheck(&ctx, a),
        Command::Stats(a) => cmd_stats(&ctx, a),
    };
    match result {
        Ok(Outcome::Ok) => EXIT_OK,
        Ok(Outcome::CheckFailed(msg)) => {
            eprintln!("check failed: {msg}");
            EXIT_CHECK_FAILED
        }
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            EXIT_USAGE
        }
        Err(Failure::Lib(e)) => {
            eprintln!("error: {e}");
            EXIT_USAGE
        }
    }
}

struct PhysicsInputs {
    image_path: PathBuf,
    depth_path: PathBuf,
    image: imaging::RgbImage,
    bits: BitDepth,
    depth: imaging::DepthMap,
    atten: AttenuationModel,
}

fn physics_inputs(ctx: &Ctx, a: &PhysicsArgs) -> std::result::Result<PhysicsInputs, Failure> {
    let p = &ctx.cfg.physics;
    let image_path = need(a.image.clone().or_else(|| ctx.cfg.paths.image.clone()), "--image")?;
    let depth_path = need(a.depth.clone().or_else(|| ctx.cfg.paths.depth.clone()), "--depth")?;
    let atten = need(a.beta.map(AttenuationModel::Constant).or_else(|| p.beta.clone()), "--beta")?;
    let (image, in_bits) = read_png_rgb(&image_path)?;
    let depth = read_depth(&depth_path)?;
    let bits = match a.bits.as_deref().map(str::to_string).or_else(|| p.bits.map(|b| b.to_string())).as_deref() {
        None => in_bits,
        Some("8") => BitDepth::Eight,
        Some("16") => BitDepth::Sixteen,
        Some(other) => return Err(Failure::Usage(format!("bits must be 8 or 16, got {other}"))),
    };
    Ok(PhysicsInputs {
        image_path,
        depth_path,
        image,
        bits,
        depth,
        atten,
    })
}

fn cmd_degrade(ctx: &Ctx, a: &PhysicsArgs) -> CmdResult {
    let inp = physics_inputs(ctx, a)?;
    let back = Backscatter(need(a.backscatter.or(ctx.cfg.physics.backscatter), "--backscatter")?);
    let out_dir = ctx.out_dir()?;
    let rendered = imaging::degrade(&inp.image, &inp.depth, &inp.atten, &back)?;
    let out_path = out_dir.join("degraded.png");
    write_png_rgb(&out_path, &rendered.image, inp.bits)?;
    let summary = json!({
        "command": "degrade",
        "image": inp.image_path,
        "depth": inp.depth_path,
        "output": out_path,
        "height": inp.image.height(),
        "width": inp.image.width(),
        "beta": inp.atten,
        "backscatter": back.0,
        "bits": inp.bits,
        "clamped": rendered.clamped,
    });
    write_json(&out_dir.join("degrade_summary.json"), &summary)?;
    println!("wrote {} ({} clamped channel values)", out_path.display(), rendered.clamped);
    Ok(Outcome::Ok)
}

fn cmd_restore(ctx: &Ctx, a: &PhysicsArgs) -> CmdResult {
    let inp = physics_inputs(ctx, a)?;
    let out_dir = ctx.out_dir()?;
    let (back, dark_patch) = match a.backscatter.or(ctx.cfg.physics.backscatter) {
        Some(b) => (Backscatter(b), None),
        None => {
            let p = a.patch_size.or(ctx.cfg.physics.patch_size).unwrap_or(8);
            let grid = PatchGrid::for_image(p, &inp.image)?;
            let k = imaging::select_dark_patch(&inp.image, &grid)?;
            (imaging::estimate_backscatter(&inp.image, &grid)?, Some((k, p)))
        }
    };
    let rendered = imaging::restore(&inp.image, &inp.depth, &inp.atten, &back)?;
    let out_path = out_dir.join("restored.png");
    write_png_rgb(&out_path, &rendered.image, inp.bits)?;
    let summary = json!({
        "command": "restore",
        "image": inp.image_path,
        "depth": inp.depth_path,
        "output": out_path,
        "height": inp.image.height(),
        "width": inp.image.width(),
        "beta": inp.atten,
        "backscatter": back.0,
        "backscatter_estimated": dark_patch.is_some(),
        "dark_patch": dark_patch.map(|(k, _)| k),
        "patch_size": dark_patch.map(|(_, p)| p),
        "bits": inp.bits,
        "clamped": rendered.clamped,
        "saturated": rendered.saturated,
    });
    write_json(&out_dir.join("restore_summary.json"), &summary)?;
    println!(
        "wrote {} ({} clamped, {} below transmission floor)",
        out_path.display(),
        rendered.clamped,
        rendered.saturated
    );
    Ok(Outcome::Ok)
}

fn cmd_genqa(ctx: &Ctx, a: &GenqaArgs) -> CmdResult {
    let seed = ctx.seed()?;
    let ann_path = need(a.annotations.clone().or_else(|| ctx.cfg.paths.annotations.clone()), "--annotations")?;
    let out_dir = ctx.out_dir()?;
    let annotations: Vec<ImageAnnotation> = jsonl::read(&ann_path)?;

    let g = &ctx.cfg.genqa;
    let provider_dir = a.provider_dir.clone().or_else(|| ctx.cfg.paths.provider_dir.clone());
    let provider_url = a.provider_url.clone().or_else(|| g.provider_url.clone());
    let mut provider: Option<Box<dyn CaptionProvider>> = match (provider_dir, provider_url) {
        (Some(_), Some(_)) => return Err(Failure::Usage("give either a provider directory or a provider URL".into())),
        (Some(dir), None) => Some(Box::new(FileProvider::new(dir))),
        (None, Some(url)) => {
            let mut p = HttpProvider::new(url);
            if let Some(var) = a.provider_token_env.clone().or_else(|| g.provider_token_env.clone()) {
                p = p.with_token_env(var);
            }
            Some(Box::new(p))
        }
        (None, None) => None,
    };

    let generation = datagen::generate_with_provider(&annotations, seed, provider.as_mut().map(|p| p.as_mut() as &mut dyn CaptionProvider))?;
    let judge: Box<dyn Judge> = match a.judge.or(g.judge).unwrap_or(JudgeKind::Rule) {
        JudgeKind::Rule => Box::new(RuleJudge::default()),
        JudgeKind::AcceptAll => Box::new(AcceptAll),
    };
    // Rule-based records regenerate deterministically, so a retry only
    // helps provider-backed ones.
    let by_image: std::collections::BTreeMap<&str, &ImageAnnotation> =
        annotations.iter().map(|a| (a.image_id.as_str(), a)).collect();
    let filtered = quality_filter(generation.records, judge.as_ref(), |r| {
        let p: &mut dyn CaptionProvider = provider.as_mut()?.as_mut();
        if r.task != Task::ImageCaption {
            return None;
        }
        let ann = by_image.get(r.image_id.as_str())?;
        if !ann.captions.is_empty() {
            return None;
        }
        let fresh = datagen::generate_with_provider(&[(*ann).clone()], seed, Some(p)).ok()?;
        fresh.records.into_iter().find(|x| x.id == r.id)
    });

    let qa_path = out_dir.join("qa.jsonl");
    jsonl::write(&qa_path, &filtered.accepted)?;
    let stats = dataset_stats(&filtered.accepted);
    write_json(&out_dir.join("stats.json"), &stats)?;
    let summary = json!({
        "command": "genqa",
        "seed": seed,
        "annotations": ann_path,
        "images": annotations.len(),
        "records": filtered.accepted.len(),
        "replaced": filtered.replaced.len(),
        "rejected": filtered.rejected.iter().map(|r| json!({"id": r.record.id, "reason": r.reason})).collect::<Vec<_>>(),
        "skipped": generation.skipped,
        "output": qa_path,
    });
    write_json(&out_dir.join("genqa_summary.json"), &summary)?;
    print!("{}", stats.to_table());
    eprintln!(
        "{} records written to {} ({} skipped inputs, {} rejected)",
        filtered.accepted.len(),
        qa_path.display(),
        generation.skipped.len(),
        filtered.rejected.len()
    );
    Ok(Outcome::Ok)
}

fn cmd_eval(ctx: &Ctx, a: &EvalArgs) -> CmdResult {
    let pred_path = need(a.predictions.clone().or_else(|| ctx.cfg.paths.predictions.clone()), "--predictions")?;
    let gold_path = need(a.gold.clone().or_else(|| ctx.cfg.paths.gold.clone()), "--gold")?;
    let out_dir = ctx.out_dir()?;
    let preds: Vec<Prediction> = jsonl::read(&pred_path)?;
    let gold: Vec<QaRecord> = jsonl::read(&gold_path)?;
    let subset = ctx.subset.clone().or_else(|| ctx.cfg.eval.subset.clone());
    if let Some(tag) = &subset {
        if !datagen::CONDITION_TAGS.contains(&tag.as_str()) {
            return Err(Failure::Usage(format!(
                "unknown subset tag `{tag}` (expected one of {})",
                datagen::CONDITION_TAGS.join(", ")
            )));
        }
    }
    let evaluation = eval::evaluate(&preds, &gold, subset.as_deref())?;
    let json_text = evaluation.to_json()?;
    let json_path = out_dir.join("report.json");
    fs::write(&json_path, &json_text).map_err(|e| Error::io(&json_path, e))?;
    match ctx.format.or(ctx.cfg.eval.format).unwrap_or(Format::Json) {
        Format::Json => print!("{json_text}"),
        Format::Csv => {
            let csv = evaluation.to_csv();
            let csv_path = out_dir.join("report.csv");
            fs::write(&csv_path, &csv).map_err(|e| Error::io(&csv_path, e))?;
            print!("{csv}");
        }
    }
    let missing = &evaluation.diagnostics.missing_predictions;
    if missing.is_empty() {
        Ok(Outcome::Ok)
    } else {
        Ok(Outcome::CheckFailed(format!(
            "{} gold record(s) have no prediction, first: {}",
            missing.len(),
            missing[0]
        )))
    }
}

fn cmd_vfe_selfcheck(ctx: &Ctx, a: &SelfcheckArgs) -> CmdResult {
    let seed = ctx.seed()?;
    let v = &ctx.cfg.vfe;
    let dims = VfeDims {
        d: a.d.or(v.d).unwrap_or(16),
        e: a.e.or(v.e).unwrap_or(8),
        h: a.h.or(v.h).or(a.d.or(v.d)).unwrap_or(16),
    };
    let w_max = a.w_max.or(v.w_max).unwrap_or(DEFAULT_W_MAX);
    let out_dir = ctx.out_dir()?;
    let base = match a.checkpoint.clone().or_else(|| ctx.cfg.paths.checkpoint.clone()) {
        Some(path) => Some(VfeParameters::from_manifest(&TensorManifest::read(&path)?)?),
        None => None,
    };
    let report = selfcheck::run(&SelfCheckOptions::new(seed, dims, w_max), base.as_ref())?;
    for c in &report.checks {
        let tag = match c.status {
            Status::Pass => "PASS",
            Status::Fail => "FAIL",
            Status::Skipped => "SKIP",
        };
        println!("{tag} {:<40} {}", c.name, c.detail);
    }
    println!("max gradient relative error: {:.3e}", report.max_grad_rel_error);
    write_json(&out_dir.join("selfcheck.json"), &report)?;
    if report.passed() {
        Ok(Outcome::Ok)
    } else {
        let failed: Vec<&str> = report.checks.iter().filter(|c| c.status == Status::Fail).map(|c| c.name).collect();
        Ok(Outcome::CheckFailed(failed.join(", ")))
    }
}

fn cmd_stats(ctx: &Ctx, a: &StatsArgs) -> CmdResult {
    let path = need(a.dataset.clone().or_else(|| ctx.cfg.paths.dataset.clone()), "--dataset")?;
    let out_dir = ctx.out_dir()?;
    let records: Vec<QaRecord> = jsonl::read(&path)?;
    let stats = dataset_stats(&records);
    write_json(&out_dir.join("stats.json"), &stats)?;
    print!("{}", stats.to_table());
    Ok(Outcome::Ok)
}
