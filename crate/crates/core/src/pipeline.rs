//! Toy-scale encoder pipeline around the enhancement module.
//!
//! A linear patch-embedding image encoder (with fixed sinusoidal positions)
//! and a linear depth encoder feed [`crate::vfe`]; the original and enhanced
//! token streams then pass through one shared two-layer projector. The
//! scalar test loss `sum(v_hat^2) + sum(v_hat_e^2)` stands in for the
//! language model.

use std::collections::BTreeMap;

use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{Error, Result};
use crate::gradcheck::{self, GradCheckReport, Probe};
use crate::imaging::{select_dark_patch, DepthMap, PatchGrid, RgbImage};
use crate::tensors::{view1, view1_mut, view2, view2_mut, ParamSet, ParamView, ParamViewMut, TensorManifest};
use crate::vfe::{self, DepthFeature, VfeDims, VfeParameters, VisionFeature};

/// Emission order of the two projected streams.
pub const STREAM_ORDER: [&str; 2] = ["original", "enhanced"];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub patch: usize,
    pub depth_patch: usize,
    pub d: usize,
    pub e: usize,
    pub h: usize,
    pub d_l: usize,
    pub w_max: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            patch: 8,
            depth_patch: 8,
            d: 16,
            e: 8,
            h: 16,
            d_l: 32,
            w_max: vfe::DEFAULT_W_MAX,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("patch", self.patch),
            ("depth_patch", self.depth_patch),
            ("d", self.d),
            ("e", self.e),
            ("h", self.h),
            ("d_l", self.d_l),
        ] {
            if v == 0 {
                return Err(Error::Validation(format!("{name} must be positive")));
            }
        }
        if !(self.w_max.is_finite() && self.w_max >= 0.0) {
            return Err(Error::Validation(format!("w_max must be >= 0, got {}", self.w_max)));
        }
        Ok(())
    }

    pub fn vfe_dims(&self) -> VfeDims {
        VfeDims {
            d: self.d,
            e: self.e,
            h: self.h,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyEncoderParams {
    pub patch: usize,
    /// `3 p^2 x d`, rows ordered (y, x, channel) within a patch.
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyDepthEncoderParams {
    pub patch: usize,
    /// `p^2 x e`, rows ordered (y, x) within a patch.
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

/// `relu`-free two-layer projector `gelu(x W1 + b1) W2 + b2`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectorParams {
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineParams {
    pub image: ToyEncoderParams,
    pub depth: ToyDepthEncoderParams,
    pub vfe: VfeParameters,
    pub projector: ProjectorParams,
}

fn normal(shape: (usize, usize), std: f64, rng: &mut impl Rng) -> Array2<f64> {
    Array2::from_shape_simple_fn(shape, || {
        std * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng)
    })
}

fn normal1(len: usize, std: f64, rng: &mut impl Rng) -> Array1<f64> {
    Array1::from_shape_simple_fn(len, || {
        std * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng)
    })
}

fn standard(a: Array2<f64>) -> Array2<f64> {
    if a.is_standard_layout() {
        a
    } else {
        a.as_standard_layout().into_owned()
    }
}

impl PipelineParams {
    /// Default initialisation: Gaussian encoders and projector with zero
    /// biases, and the near-identity VFE start.
    pub fn init(cfg: &PipelineConfig, rng: &mut impl Rng) -> Result<Self> {
        cfg.validate()?;
        let fan_img = 3 * cfg.patch * cfg.patch;
        let fan_depth = cfg.depth_patch * cfg.depth_patch;
        Ok(PipelineParams {
            image: ToyEncoderParams {
                patch: cfg.patch,
                weight: normal((fan_img, cfg.d), 1.0 / (fan_img as f64).sqrt(), rng),
                bias: Array1::zeros(cfg.d),
            },
            depth: ToyDepthEncoderParams {
                patch: cfg.depth_patch,
                weight: normal((fan_depth, cfg.e), 1.0 / (fan_depth as f64).sqrt(), rng),
                bias: Array1::zeros(cfg.e),
            },
            vfe: VfeParameters::init(cfg.vfe_dims(), cfg.w_max, rng),
            projector: ProjectorParams {
                w1: normal((cfg.d, cfg.d_l), 1.0 / (cfg.d as f64).sqrt(), rng),
                b1: Array1::zeros(cfg.d_l),
                w2: normal((cfg.d_l, cfg.d_l), 1.0 / (cfg.d_l as f64).sqrt(), rng),
                b2: Array1::zeros(cfg.d_l),
            },
        })
    }

    /// Every tensor random, including biases and the VFE output layer.
    pub fn random(cfg: &PipelineConfig, rng: &mut impl Rng) -> Result<Self> {
        let mut p = Self::init(cfg, rng)?;
        p.image.bias = normal1(cfg.d, 0.5, rng);
        p.depth.bias = normal1(cfg.e, 0.5, rng);
        p.vfe = VfeParameters::random(cfg.vfe_dims(), cfg.w_max, 1.0, rng);
        p.projector.b1 = normal1(cfg.d_l, 0.5, rng);
        p.projector.b2 = normal1(cfg.d_l, 0.5, rng);
        Ok(p)
    }

    pub fn zeros_like(&self) -> Self {
        let z2 = |a: &Array2<f64>| Array2::zeros(a.raw_dim());
        let z1 = |a: &Array1<f64>| Array1::zeros(a.raw_dim());
        PipelineParams {
            image: ToyEncoderParams {
                patch: self.image.patch,
                weight: z2(&self.image.weight),
                bias: z1(&self.image.bias),
            },
            depth: ToyDepthEncoderParams {
                patch: self.depth.patch,
                weight: z2(&self.depth.weight),
                bias: z1(&self.depth.bias),
            },
            vfe: self.vfe.zeros_like(),
            projector: ProjectorParams {
                w1: z2(&self.projector.w1),
                b1: z1(&self.projector.b1),
                w2: z2(&self.projector.w2),
                b2: z1(&self.projector.b2),
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.image.patch;
        let d = self.vfe.dims().d;
        if p == 0 || self.image.weight.dim() != (3 * p * p, d) || self.image.bias.len() != d {
            return Err(Error::Dimension(format!(
                "image encoder must map {} inputs to VFE dim {d}",
                3 * p * p
            )));
        }
        let pd = self.depth.patch;
        let e = self.vfe.dims().e;
        if pd == 0 || self.depth.weight.dim() != (pd * pd, e) || self.depth.bias.len() != e {
            return Err(Error::Dimension(format!(
                "depth encoder must map {} inputs to VFE depth dim {e}",
                pd * pd
            )));
        }
        let pr = &self.projector;
        let d_l = pr.w1.ncols();
        if pr.w1.nrows() != d || pr.b1.len() != d_l || pr.w2.dim() != (d_l, d_l) || pr.b2.len() != d_l {
            return Err(Error::Dimension("projector shapes are inconsistent".into()));
        }
        self.vfe.validate()?;
        if !self.all_finite() {
            return Err(Error::Validation("pipeline parameters contain non-finite values".into()));
        }
        Ok(())
    }
}

fn prefixed<'a>(prefix: &str, views: Vec<ParamView<'a>>) -> impl Iterator<Item = ParamView<'a>> + 'a {
    let prefix = prefix.to_string();
    views.into_iter().map(move |mut v| {
        v.name = format!("{prefix}.{}", v.name);
        v
    })
}

fn prefixed_mut<'a>(
    prefix: &str,
    views: Vec<ParamViewMut<'a>>,
) -> impl Iterator<Item = ParamViewMut<'a>> + 'a {
    let prefix = prefix.to_string();
    views.into_iter().map(move |mut v| {
        v.name = format!("{prefix}.{}", v.name);
        v
    })
}

impl ParamSet for PipelineParams {
    fn params(&self) -> Vec<ParamView<'_>> {
        let mut out = vec![
            view2("image_encoder.weight", &self.image.weight),
            view1("image_encoder.bias", &self.image.bias),
            view2("depth_encoder.weight", &self.depth.weight),
            view1("depth_encoder.bias", &self.depth.bias),
        ];
        out.extend(prefixed("vfe", self.vfe.params()));
        out.extend([
            view2("projector.w1", &self.projector.w1),
            view1("projector.b1", &self.projector.b1),
            view2("projector.w2", &self.projector.w2),
            view1("projector.b2", &self.projector.b2),
        ]);
        out
    }

    fn params_mut(&mut self) -> Vec<ParamViewMut<'_>> {
        let mut out = vec![
            view2_mut("image_encoder.weight", &mut self.image.weight),
            view1_mut("image_encoder.bias", &mut self.image.bias),
            view2_mut("depth_encoder.weight", &mut self.depth.weight),
            view1_mut("depth_encoder.bias", &mut self.depth.bias),
        ];
        out.extend(prefixed_mut("vfe", self.vfe.params_mut()));
        out.extend([
            view2_mut("projector.w1", &mut self.projector.w1),
            view1_mut("projector.b1", &mut self.projector.b1),
            view2_mut("projector.w2", &mut self.projector.w2),
            view1_mut("projector.b2", &mut self.projector.b2),
        ]);
        out
    }
}

/// Centre crop of a raster to a multiple of the patch size.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Crop {
    pub y0: usize,
    pub x0: usize,
    pub height: usize,
    pub width: usize,
}

pub fn center_crop(height: usize, width: usize, patch: usize) -> Result<Crop> {
    if patch == 0 {
        return Err(Error::Validation("patch size must be positive".into()));
    }
    let ch = (height / patch) * patch;
    let cw = (width / patch) * patch;
    if ch == 0 || cw == 0 {
        return Err(Error::Validation(format!(
            "{height}x{width} raster is smaller than patch size {patch}"
        )));
    }
    Ok(Crop {
        y0: (height - ch) / 2,
        x0: (width - cw) / 2,
        height: ch,
        width: cw,
    })
}

/// Fixed sinusoidal position table: `sin` on even and `cos` on odd columns.
pub fn position_encoding(n: usize, d: usize) -> Array2<f64> {
    Array2::from_shape_fn((n, d), |(i, j)| {
        let freq = 10000f64.powf((2 * (j / 2)) as f64 / d as f64);
        let angle = i as f64 / freq;
        if j % 2 == 0 {
            angle.sin()
        } else {
            angle.cos()
        }
    })
}

fn image_patches(image: &RgbImage, p: usize) -> (Array2<f64>, (usize, usize)) {
    let rows = image.height() / p;
    let cols = image.width() / p;
    let mut m = Array2::zeros((rows * cols, 3 * p * p));
    for r in 0..rows {
        for c in 0..cols {
            let mut row = m.row_mut(r * cols + c);
            for y in 0..p {
                for x in 0..p {
                    for ch in 0..3 {
                        row[(y * p + x) * 3 + ch] = image.get(r * p + y, c * p + x, ch);
                    }
                }
            }
        }
    }
    (m, (rows, cols))
}

fn depth_patches(depth: &DepthMap, p: usize) -> (Array2<f64>, (usize, usize)) {
    let rows = depth.height() / p;
    let cols = depth.width() / p;
    let mut m = Array2::zeros((rows * cols, p * p));
    for r in 0..rows {
        for c in 0..cols {
            let mut row = m.row_mut(r * cols + c);
            for y in 0..p {
                for x in 0..p {
                    row[y * p + x] = depth.get(r * p + y, c * p + x);
                }
            }
        }
    }
    (m, (rows, cols))
}

fn crop_image(image: &RgbImage, p: usize) -> Result<(RgbImage, Crop)> {
    let crop = center_crop(image.height(), image.width(), p)?;
    Ok((image.crop(crop.y0, crop.x0, crop.height, crop.width)?, crop))
}

fn crop_depth(depth: &DepthMap, p: usize) -> Result<(DepthMap, Crop)> {
    let crop = center_crop(depth.height(), depth.width(), p)?;
    Ok((depth.crop(crop.y0, crop.x0, crop.height, crop.width)?, crop))
}

/// Patch-embeds a centre-cropped image: `token_i = flatten(patch_i) W + b + pos_i`.
pub fn encode_image(image: &RgbImage, params: &ToyEncoderParams) -> Result<VisionFeature> {
    let (cropped, _) = crop_image(image, params.patch)?;
    encode_cropped_image(&cropped, params).map(|(v, _)| v)
}

fn encode_cropped_image(
    cropped: &RgbImage,
    params: &ToyEncoderParams,
) -> Result<(VisionFeature, Array2<f64>)> {
    let p = params.patch;
    if params.weight.nrows() != 3 * p * p || params.weight.ncols() != params.bias.len() {
        return Err(Error::Dimension("image encoder weight/bias shapes disagree".into()));
    }
    let (patches, (rows, cols)) = image_patches(cropped, p);
    let tokens = patches.dot(&params.weight) + &params.bias
        + position_encoding(rows * cols, params.bias.len());
    Ok((VisionFeature::new(tokens, rows, cols)?, patches))
}

/// Patch-embeds a centre-cropped depth map (no position term).
pub fn encode_depth(depth: &DepthMap, params: &ToyDepthEncoderParams) -> Result<DepthFeature> {
    let (cropped, _) = crop_depth(depth, params.patch)?;
    encode_cropped_depth(&cropped, params).map(|(f, _)| f)
}

fn encode_cropped_depth(
    cropped: &DepthMap,
    params: &ToyDepthEncoderParams,
) -> Result<(DepthFeature, Array2<f64>)> {
    let p = params.patch;
    if params.weight.nrows() != p * p || params.weight.ncols() != params.bias.len() {
        return Err(Error::Dimension("depth encoder weight/bias shapes disagree".into()));
    }
    let (patches, (rows, cols)) = depth_patches(cropped, p);
    let tokens = patches.dot(&params.weight) + &params.bias;
    Ok((DepthFeature::new(tokens, rows, cols)?, patches))
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + 0.044715 * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
}

#[derive(Debug, Clone)]
struct ProjectorTrace {
    input: Array2<f64>,
    pre: Array2<f64>,
    hidden: Array2<f64>,
}

fn project(x: &Array2<f64>, p: &ProjectorParams) -> (Array2<f64>, ProjectorTrace) {
    let pre = x.dot(&p.w1) + &p.b1;
    let hidden = pre.mapv(gelu);
    let out = hidden.dot(&p.w2) + &p.b2;
    (
        out,
        ProjectorTrace {
            input: x.clone(),
            pre,
            hidden,
        },
    )
}

/// Accumulates projector gradients into `g` and returns `dL/dx`.
fn project_backward(
    trace: &ProjectorTrace,
    p: &ProjectorParams,
    upstream: &Array2<f64>,
    g: &mut ProjectorParams,
) -> Array2<f64> {
    g.w2 += &trace.hidden.t().dot(upstream);
    g.b2 += &upstream.sum_axis(Axis(0));
    let d_hidden = upstream.dot(&p.w2.t());
    let d_pre = d_hidden * &trace.pre.mapv(gelu_grad);
    g.w1 += &trace.input.t().dot(&d_pre);
    g.b1 += &d_pre.sum_axis(Axis(0));
    d_pre.dot(&p.w1.t())
}

/// Provenance of a forward pass, emitted next to the token streams.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineMeta {
    pub dark_patch: usize,
    pub grid: (usize, usize),
    pub depth_grid: (usize, usize),
    pub image_crop: Crop,
    pub depth_crop: Crop,
    pub stream_order: [String; 2],
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub original: Array2<f64>,
    pub enhanced: Array2<f64>,
    pub meta: PipelineMeta,
}

impl PipelineOutput {
    pub fn to_manifest(&self) -> Result<TensorManifest> {
        let mut meta = BTreeMap::new();
        meta.insert("module".into(), json!("pipeline"));
        meta.insert("pipeline".into(), serde_json::to_value(&self.meta)?);
        let mut m = TensorManifest::new(meta);
        m.push_matrix(STREAM_ORDER[0], &self.original);
        m.push_matrix(STREAM_ORDER[1], &self.enhanced);
        Ok(m)
    }
}

/// Cached state for [`backward`].
#[derive(Debug, Clone)]
pub struct PipelineTrace {
    image_patches: Array2<f64>,
    depth_patches: Array2<f64>,
    vfe: vfe::VfeTrace,
    proj_original: ProjectorTrace,
    proj_enhanced: ProjectorTrace,
}

impl PipelineTrace {
    pub fn activation_pattern(&self) -> Vec<bool> {
        self.vfe.activation_pattern()
    }
}

pub fn forward(
    image: &RgbImage,
    depth: &DepthMap,
    params: &PipelineParams,
) -> Result<(PipelineOutput, PipelineTrace)> {
    params.validate()?;
    if image.height() != depth.height() || image.width() != depth.width() {
        return Err(Error::Dimension(format!(
            "image is {}x{} but depth is {}x{}",
            image.height(),
            image.width(),
            depth.height(),
            depth.width()
        )));
    }
    let (img, image_crop) = crop_image(image, params.image.patch)?;
    let (dep, depth_crop) = crop_depth(depth, params.depth.patch)?;
    let (v, image_patches) = encode_cropped_image(&img, &params.image)?;
    let (d_feat, depth_patches) = encode_cropped_depth(&dep, &params.depth)?;
    let grid = PatchGrid::for_image(params.image.patch, &img)?;
    let k = select_dark_patch(&img, &grid)?;
    let (v_e, vfe_trace) = vfe::forward(&v, k, &d_feat, &params.vfe)?;
    let (original, proj_original) = project(v.tokens(), &params.projector);
    let (enhanced, proj_enhanced) = project(v_e.tokens(), &params.projector);
    if original.iter().chain(enhanced.iter()).any(|x| !x.is_finite()) {
        return Err(Error::Numeric { stage: "projector" });
    }
    let meta = PipelineMeta {
        dark_patch: k,
        grid: v.grid(),
        depth_grid: d_feat.grid(),
        image_crop,
        depth_crop,
        stream_order: STREAM_ORDER.map(String::from),
    };
    Ok((
        PipelineOutput {
            original,
            enhanced,
            meta,
        },
        PipelineTrace {
            image_patches,
            depth_patches,
            vfe: vfe_trace,
            proj_original,
            proj_enhanced,
        },
    ))
}

/// Weights of the two stream terms in the sum-of-squares loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub original: f64,
    pub enhanced: f64,
}

impl LossWeights {
    pub const JOINT: LossWeights = LossWeights {
        original: 1.0,
        enhanced: 1.0,
    };
    pub const ORIGINAL_ONLY: LossWeights = LossWeights {
        original: 1.0,
        enhanced: 0.0,
    };
    pub const ENHANCED_ONLY: LossWeights = LossWeights {
        original: 0.0,
        enhanced: 1.0,
    };
}

pub fn loss(out: &PipelineOutput, weights: LossWeights) -> f64 {
    let sq = |a: &Array2<f64>| a.iter().map(|x| x * x).sum::<f64>();
    weights.original * sq(&out.original) + weights.enhanced * sq(&out.enhanced)
}

/// Gradients of [`loss`] with respect to every pipeline parameter.
pub fn backward(
    out: &PipelineOutput,
    trace: &PipelineTrace,
    params: &PipelineParams,
    weights: LossWeights,
) -> PipelineParams {
    let mut g = params.zeros_like();
    let up_orig = &out.original * (2.0 * weights.original);
    let up_enh = &out.enhanced * (2.0 * weights.enhanced);

    // Both streams share one projector; its gradients accumulate.
    let d_v_orig = project_backward(&trace.proj_original, &params.projector, &up_orig, &mut g.projector);
    let d_v_enh = project_backward(&trace.proj_enhanced, &params.projector, &up_enh, &mut g.projector);

    let vg = vfe::backward(&trace.vfe, &params.vfe, &d_v_enh);
    g.vfe = vg.params;
    let d_v = d_v_orig + &vg.vision;

    g.image.weight = standard(trace.image_patches.t().dot(&d_v));
    g.image.bias = d_v.sum_axis(Axis(0));
    g.depth.weight = standard(trace.depth_patches.t().dot(&vg.depth));
    g.depth.bias = vg.depth.sum_axis(Axis(0));
    g.projector.w1 = standard(std::mem::take(&mut g.projector.w1));
    g.projector.w2 = standard(std::mem::take(&mut g.projector.w2));
    g
}

/// Analytic vs central finite-difference gradients of the joint loss over
/// every pipeline parameter.
pub fn end_to_end_grad_check(
    params: &PipelineParams,
    image: &RgbImage,
    depth: &DepthMap,
) -> Result<GradCheckReport> {
    let (out, trace) = forward(image, depth, params)?;
    let analytic = backward(&out, &trace, params, LossWeights::JOINT);
    gradcheck::check(params, &analytic, |p| {
        let (out, trace) = forward(image, depth, p)?;
        Ok(Probe {
            loss: loss(&out, LossWeights::JOINT),
            pattern: trace.activation_pattern(),
        })
    })
}
