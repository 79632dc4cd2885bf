//! Vision feature enhancement.
//!
//! Feature-space analogue of inverting the underwater imaging model:
//!
//! 1. a single-head cross-attention layer aggregates global context into a
//!    learnable query (initialised with the token mean), giving `q`;
//! 2. the backscatter response is the dark token minus that context,
//!    `s = v[k] - q`, and is subtracted from every token;
//! 3. a two-layer MLP over depth tokens, bilinearly aligned to the vision
//!    grid, predicts a clamped log-scale `W` so that
//!    `v_e = (v - s) * exp(W)`.
//!
//! Every stage has a hand-written backward pass ([`backward`]) verified
//! against central finite differences in [`crate::gradcheck`].

mod resample;

use std::collections::BTreeMap;

use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::gradcheck::{self, GradCheckReport, Probe};
use crate::tensors::{view1, view1_mut, view2, view2_mut, ParamSet, ParamView, ParamViewMut, TensorManifest};

pub use resample::BilinearMap;

pub const DEFAULT_W_MAX: f64 = 10.0;

/// `n x d` token matrix laid out on a `rows x cols` patch grid.
#[derive(Debug, Clone, PartialEq)]
pub struct VisionFeature {
    tokens: Array2<f64>,
    grid: (usize, usize),
}

impl VisionFeature {
    pub fn new(tokens: Array2<f64>, rows: usize, cols: usize) -> Result<Self> {
        let (n, d) = tokens.dim();
        if n == 0 || d == 0 {
            return Err(Error::Dimension(format!("vision feature must be non-empty, got {n}x{d}")));
        }
        if rows * cols != n {
            return Err(Error::Dimension(format!(
                "grid {rows}x{cols} does not hold {n} tokens"
            )));
        }
        if tokens.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation("vision feature contains non-finite values".into()));
        }
        Ok(VisionFeature {
            tokens: tokens.as_standard_layout().into_owned(),
            grid: (rows, cols),
        })
    }

    /// Tokens on a square grid; `n` must be a perfect square.
    pub fn square(tokens: Array2<f64>) -> Result<Self> {
        let n = tokens.nrows();
        let side = (n as f64).sqrt().round() as usize;
        if side * side != n {
            return Err(Error::Dimension(format!("{n} tokens do not form a square grid")));
        }
        Self::new(tokens, side, side)
    }

    pub fn tokens(&self) -> &Array2<f64> {
        &self.tokens
    }

    pub fn into_tokens(self) -> Array2<f64> {
        self.tokens
    }

    pub fn grid(&self) -> (usize, usize) {
        self.grid
    }

    pub fn len(&self) -> usize {
        self.tokens.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.tokens.ncols()
    }
}

/// `m x e` depth tokens on a `rows x cols` grid.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthFeature {
    tokens: Array2<f64>,
    grid: (usize, usize),
}

impl DepthFeature {
    pub fn new(tokens: Array2<f64>, rows: usize, cols: usize) -> Result<Self> {
        let (m, e) = tokens.dim();
        if m == 0 || e == 0 {
            return Err(Error::Dimension(format!("depth feature must be non-empty, got {m}x{e}")));
        }
        if rows * cols != m {
            return Err(Error::Dimension(format!(
                "depth grid {rows}x{cols} does not hold {m} tokens"
            )));
        }
        if tokens.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation("depth feature contains non-finite values".into()));
        }
        Ok(DepthFeature {
            tokens: tokens.as_standard_layout().into_owned(),
            grid: (rows, cols),
        })
    }

    pub fn tokens(&self) -> &Array2<f64> {
        &self.tokens
    }

    pub fn grid(&self) -> (usize, usize) {
        self.grid
    }

    pub fn dim(&self) -> usize {
        self.tokens.ncols()
    }
}

/// Learnable state of the enhancement module. Also used as the gradient
/// container, in which case `w_max` is carried along unchanged.
#[derive(Debug, Clone, PartialEq)]
pub struct VfeParameters {
    pub query_init: Array1<f64>,
    pub w_q: Array2<f64>,
    pub w_k: Array2<f64>,
    pub w_v: Array2<f64>,
    pub w_o: Array2<f64>,
    /// `e x h`
    pub mlp_w1: Array2<f64>,
    pub mlp_b1: Array1<f64>,
    /// `h x d`
    pub mlp_w2: Array2<f64>,
    pub mlp_b2: Array1<f64>,
    pub w_max: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VfeDims {
    pub d: usize,
    pub e: usize,
    pub h: usize,
}

fn normal_matrix(rows: usize, cols: usize, std: f64, rng: &mut impl Rng) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || {
        std * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng)
    })
}

fn normal_vector(len: usize, std: f64, rng: &mut impl Rng) -> Array1<f64> {
    Array1::from_shape_simple_fn(len, || {
        std * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng)
    })
}

/// Random orthogonal matrix via modified Gram-Schmidt on Gaussian columns.
fn orthogonal(d: usize, rng: &mut impl Rng) -> Array2<f64> {
    loop {
        let mut m = normal_matrix(d, d, 1.0, rng);
        let mut ok = true;
        for j in 0..d {
            for i in 0..j {
                let proj = m.column(i).dot(&m.column(j));
                let ci = m.column(i).to_owned();
                m.column_mut(j).scaled_add(-proj, &ci);
            }
            let norm = m.column(j).dot(&m.column(j)).sqrt();
            if norm < 1e-8 {
                ok = false;
                break;
            }
            m.column_mut(j).mapv_inplace(|v| v / norm);
        }
        if ok {
            return m;
        }
    }
}

impl VfeParameters {
    pub fn zeros(dims: VfeDims, w_max: f64) -> Self {
        let VfeDims { d, e, h } = dims;
        VfeParameters {
            query_init: Array1::zeros(d),
            w_q: Array2::zeros((d, d)),
            w_k: Array2::zeros((d, d)),
            w_v: Array2::zeros((d, d)),
            w_o: Array2::zeros((d, d)),
            mlp_w1: Array2::zeros((e, h)),
            mlp_b1: Array1::zeros(h),
            mlp_w2: Array2::zeros((h, d)),
            mlp_b2: Array1::zeros(d),
            w_max,
        }
    }

    /// Near-identity start: zero query, orthogonal attention projections,
    /// He-scaled first MLP layer and a zero output layer, so `W = 0`.
    pub fn init(dims: VfeDims, w_max: f64, rng: &mut impl Rng) -> Self {
        let mut p = Self::zeros(dims, w_max);
        p.w_q = orthogonal(dims.d, rng);
        p.w_k = orthogonal(dims.d, rng);
        p.w_v = orthogonal(dims.d, rng);
        p.w_o = orthogonal(dims.d, rng);
        p.mlp_w1 = normal_matrix(dims.e, dims.h, (2.0 / dims.e as f64).sqrt(), rng);
        p
    }

    /// Every tensor drawn from `N(0, scale^2 / fan_in)`; used for checks that
    /// need all paths active.
    pub fn random(dims: VfeDims, w_max: f64, scale: f64, rng: &mut impl Rng) -> Self {
        let VfeDims { d, e, h } = dims;
        let sd = scale / (d as f64).sqrt();
        VfeParameters {
            query_init: normal_vector(d, scale, rng),
            w_q: normal_matrix(d, d, sd, rng),
            w_k: normal_matrix(d, d, sd, rng),
            w_v: normal_matrix(d, d, sd, rng),
            w_o: normal_matrix(d, d, sd, rng),
            mlp_w1: normal_matrix(e, h, scale / (e as f64).sqrt(), rng),
            mlp_b1: normal_vector(h, scale, rng),
            mlp_w2: normal_matrix(h, d, scale / (h as f64).sqrt(), rng),
            mlp_b2: normal_vector(d, scale, rng),
            w_max,
        }
    }

    /// Forces every tensor into row-major layout (matrix products with
    /// transposed operands come back column-major).
    pub(crate) fn standardize(&mut self) {
        for m in [&mut self.w_q, &mut self.w_k, &mut self.w_v, &mut self.w_o, &mut self.mlp_w1, &mut self.mlp_w2] {
            if !m.is_standard_layout() {
                *m = m.as_standard_layout().into_owned();
            }
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.dims(), self.w_max)
    }

    pub fn dims(&self) -> VfeDims {
        VfeDims {
            d: self.query_init.len(),
            e: self.mlp_w1.nrows(),
            h: self.mlp_w1.ncols(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let VfeDims { d, e, h } = self.dims();
        let shapes: [(&str, &[usize], Vec<usize>); 9] = [
            ("query_init", self.query_init.shape(), vec![d]),
            ("w_q", self.w_q.shape(), vec![d, d]),
            ("w_k", self.w_k.shape(), vec![d, d]),
            ("w_v", self.w_v.shape(), vec![d, d]),
            ("w_o", self.w_o.shape(), vec![d, d]),
            ("mlp_w1", self.mlp_w1.shape(), vec![e, h]),
            ("mlp_b1", self.mlp_b1.shape(), vec![h]),
            ("mlp_w2", self.mlp_w2.shape(), vec![h, d]),
            ("mlp_b2", self.mlp_b2.shape(), vec![d]),
        ];
        for (name, got, want) in shapes {
            if got != want.as_slice() {
                return Err(Error::Dimension(format!(
                    "parameter {name} has shape {got:?}, expected {want:?}"
                )));
            }
        }
        if !(self.w_max.is_finite() && self.w_max >= 0.0) {
            return Err(Error::Validation(format!("w_max must be >= 0, got {}", self.w_max)));
        }
        if !self.all_finite() {
            return Err(Error::Validation("VFE parameters contain non-finite values".into()));
        }
        Ok(())
    }

    /// Checkpoint manifest including the architectural choices baked into
    /// the forward pass.
    pub fn to_manifest(&self) -> TensorManifest {
        TensorManifest::from_params(self, self.manifest_meta())
    }

    fn manifest_meta(&self) -> BTreeMap<String, Value> {
        let VfeDims { d, e, h } = self.dims();
        let mut meta = BTreeMap::new();
        meta.insert("module".into(), json!("vfe"));
        meta.insert("d".into(), json!(d));
        meta.insert("e".into(), json!(e));
        meta.insert("h".into(), json!(h));
        meta.insert("w_max".into(), json!(self.w_max));
        meta.insert(
            "attention".into(),
            json!({
                "heads": 1,
                "layers": 1,
                "query": "query_init + mean(v)",
                "output_projection": true,
                "residual": false,
                "dark_token_in_keys": true,
            }),
        );
        meta.insert("mlp_activation".into(), json!("relu"));
        meta.insert("depth_alignment".into(), json!("bilinear, half-pixel centers, edge clamp"));
        meta
    }

    pub fn from_manifest(m: &TensorManifest) -> Result<Self> {
        let dim = |key: &str| -> Result<usize> {
            m.meta
                .get(key)
                .and_then(Value::as_u64)
                .map(|v| v as usize)
                .ok_or_else(|| Error::Checkpoint {
                    param: key.to_string(),
                    message: "missing or invalid dimension in manifest meta".into(),
                })
        };
        let w_max = m
            .meta
            .get("w_max")
            .and_then(Value::as_f64)
            .ok_or_else(|| Error::Checkpoint {
                param: "w_max".into(),
                message: "missing from manifest meta".into(),
            })?;
        let dims = VfeDims {
            d: dim("d")?,
            e: dim("e")?,
            h: dim("h")?,
        };
        let mut p = Self::zeros(dims, w_max);
        m.load_into(&mut p)?;
        p.validate()?;
        Ok(p)
    }
}

impl ParamSet for VfeParameters {
    fn params(&self) -> Vec<ParamView<'_>> {
        vec![
            view1("query_init", &self.query_init),
            view2("w_q", &self.w_q),
            view2("w_k", &self.w_k),
            view2("w_v", &self.w_v),
            view2("w_o", &self.w_o),
            view2("mlp_w1", &self.mlp_w1),
            view1("mlp_b1", &self.mlp_b1),
            view2("mlp_w2", &self.mlp_w2),
            view1("mlp_b2", &self.mlp_b2),
        ]
    }

    fn params_mut(&mut self) -> Vec<ParamViewMut<'_>> {
        vec![
            view1_mut("query_init", &mut self.query_init),
            view2_mut("w_q", &mut self.w_q),
            view2_mut("w_k", &mut self.w_k),
            view2_mut("w_v", &mut self.w_v),
            view2_mut("w_o", &mut self.w_o),
            view2_mut("mlp_w1", &mut self.mlp_w1),
            view1_mut("mlp_b1", &mut self.mlp_b1),
            view2_mut("mlp_w2", &mut self.mlp_w2),
            view1_mut("mlp_b2", &mut self.mlp_b2),
        ]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BackscatterResponse(pub Array1<f64>);

/// Per-token, per-channel log-scale, each entry within `[-w_max, w_max]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AbsorptionWeight(pub Array2<f64>);

fn check_finite1(a: &Array1<f64>, stage: &'static str) -> Result<()> {
    if a.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Numeric { stage })
    }
}

fn check_finite2(a: &Array2<f64>, stage: &'static str) -> Result<()> {
    if a.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Numeric { stage })
    }
}

fn outer(a: &Array1<f64>, b: &Array1<f64>) -> Array2<f64> {
    let a2 = a.view().insert_axis(Axis(1));
    let b2 = b.view().insert_axis(Axis(0));
    a2.dot(&b2)
}

/// Intermediate values of the attention stage.
#[derive(Debug, Clone)]
struct AttentionTrace {
    q_in: Array1<f64>,
    query: Array1<f64>,
    keys: Array2<f64>,
    values: Array2<f64>,
    attn: Array1<f64>,
    ctx: Array1<f64>,
    q: Array1<f64>,
}

fn attention_forward(v: &Array2<f64>, p: &VfeParameters) -> Result<AttentionTrace> {
    let d = v.ncols();
    let mean = v.mean_axis(Axis(0)).expect("non-empty feature");
    let q_in = &p.query_init + &mean;
    let query = q_in.dot(&p.w_q);
    let keys = v.dot(&p.w_k);
    let values = v.dot(&p.w_v);
    let scores = keys.dot(&query) / (d as f64).sqrt();
    check_finite1(&scores, "attention scores")?;
    let max = scores.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let exp = scores.mapv(|s| (s - max).exp());
    let attn = &exp / exp.sum();
    let ctx = attn.dot(&values);
    let q = ctx.dot(&p.w_o);
    check_finite1(&q, "attention output")?;
    Ok(AttentionTrace {
        q_in,
        query,
        keys,
        values,
        attn,
        ctx,
        q,
    })
}

/// Intermediate values of the absorption MLP.
#[derive(Debug, Clone)]
struct AbsorptionTrace {
    map: BilinearMap,
    resampled: Array2<f64>,
    pre: Array2<f64>,
    hidden: Array2<f64>,
    raw: Array2<f64>,
    w: Array2<f64>,
}

fn absorption_forward(
    d_feat: &DepthFeature,
    target: (usize, usize),
    p: &VfeParameters,
) -> Result<AbsorptionTrace> {
    let map = BilinearMap::new(d_feat.grid(), target)?;
    let resampled = map.apply(d_feat.tokens());
    let pre = resampled.dot(&p.mlp_w1) + &p.mlp_b1;
    let hidden = pre.mapv(|v| v.max(0.0));
    let raw = hidden.dot(&p.mlp_w2) + &p.mlp_b2;
    if raw.iter().any(|v| v.is_nan()) {
        return Err(Error::Numeric { stage: "absorption mlp" });
    }
    let w = raw.mapv(|v| v.clamp(-p.w_max, p.w_max));
    Ok(AbsorptionTrace {
        map,
        resampled,
        pre,
        hidden,
        raw,
        w,
    })
}

fn check_vision(v: &VisionFeature, p: &VfeParameters) -> Result<()> {
    if v.dim() != p.dims().d {
        return Err(Error::Dimension(format!(
            "vision feature dim {} does not match VFE dim {}",
            v.dim(),
            p.dims().d
        )));
    }
    Ok(())
}

fn check_depth(d: &DepthFeature, p: &VfeParameters) -> Result<()> {
    if d.dim() != p.dims().e {
        return Err(Error::Dimension(format!(
            "depth feature dim {} does not match VFE depth dim {}",
            d.dim(),
            p.dims().e
        )));
    }
    Ok(())
}

/// Cross-attention of the learnable query (plus the token mean) over all
/// tokens, projected by `W_O`.
pub fn aggregate_global(v: &VisionFeature, params: &VfeParameters) -> Result<Array1<f64>> {
    params.validate()?;
    check_vision(v, params)?;
    Ok(attention_forward(v.tokens(), params)?.q)
}

/// `s = v[k] - q`.
pub fn backscatter_response(
    v: &VisionFeature,
    k: usize,
    q: &Array1<f64>,
) -> Result<BackscatterResponse> {
    if k >= v.len() {
        return Err(Error::Index {
            index: k,
            len: v.len(),
        });
    }
    if q.len() != v.dim() {
        return Err(Error::Dimension(format!(
            "query has dim {}, feature has dim {}",
            q.len(),
            v.dim()
        )));
    }
    Ok(BackscatterResponse(&v.tokens().row(k) - q))
}

/// Subtracts `s` from every token row.
pub fn remove_backscatter(v: &VisionFeature, s: &BackscatterResponse) -> Result<Array2<f64>> {
    if s.0.len() != v.dim() {
        return Err(Error::Dimension(format!(
            "response has dim {}, feature has dim {}",
            s.0.len(),
            v.dim()
        )));
    }
    Ok(v.tokens() - &s.0)
}

/// Depth tokens resampled onto `target_grid`, passed through the MLP and clamped.
pub fn absorption_weights(
    d_feat: &DepthFeature,
    target_grid: (usize, usize),
    params: &VfeParameters,
) -> Result<AbsorptionWeight> {
    params.validate()?;
    check_depth(d_feat, params)?;
    Ok(AbsorptionWeight(absorption_forward(d_feat, target_grid, params)?.w))
}

/// `(v - s) * exp(W)`, elementwise.
pub fn apply_absorption(residual: &Array2<f64>, w: &AbsorptionWeight) -> Result<Array2<f64>> {
    if residual.dim() != w.0.dim() {
        return Err(Error::Dimension(format!(
            "residual {:?} and absorption weight {:?} differ",
            residual.dim(),
            w.0.dim()
        )));
    }
    Ok(residual * &w.0.mapv(f64::exp))
}

/// Enhanced feature `v_e = (v - s) / exp(-W)` for dark-token index `k`.
pub fn enhance(
    v: &VisionFeature,
    k: usize,
    d_feat: &DepthFeature,
    params: &VfeParameters,
) -> Result<VisionFeature> {
    let (out, _) = forward(v, k, d_feat, params)?;
    Ok(out)
}

/// Cached forward state needed by [`backward`].
#[derive(Debug, Clone)]
pub struct VfeTrace {
    v: Array2<f64>,
    k: usize,
    attention: AttentionTrace,
    s: Array1<f64>,
    residual: Array2<f64>,
    absorption: AbsorptionTrace,
    scale: Array2<f64>,
}

impl VfeTrace {
    pub fn backscatter(&self) -> &Array1<f64> {
        &self.s
    }

    pub fn absorption_weight(&self) -> &Array2<f64> {
        &self.absorption.w
    }

    /// Which piecewise-linear branch every ReLU and clamp sits on; a finite
    /// difference that changes this pattern straddles a kink.
    pub fn activation_pattern(&self) -> Vec<bool> {
        let w_max = self
            .absorption
            .w
            .iter()
            .zip(self.absorption.raw.iter())
            .map(|(w, r)| w != r);
        self.absorption
            .pre
            .iter()
            .map(|&v| v > 0.0)
            .chain(w_max)
            .collect()
    }
}

pub fn forward(
    v: &VisionFeature,
    k: usize,
    d_feat: &DepthFeature,
    params: &VfeParameters,
) -> Result<(VisionFeature, VfeTrace)> {
    params.validate()?;
    check_vision(v, params)?;
    check_depth(d_feat, params)?;
    if k >= v.len() {
        return Err(Error::Index {
            index: k,
            len: v.len(),
        });
    }
    let tokens = v.tokens();
    let attention = attention_forward(tokens, params)?;
    let s = &tokens.row(k) - &attention.q;
    let residual = tokens - &s;
    let absorption = absorption_forward(d_feat, v.grid(), params)?;
    let scale = absorption.w.mapv(f64::exp);
    let out = &residual * &scale;
    check_finite2(&out, "enhance")?;
    let (rows, cols) = v.grid();
    let enhanced = VisionFeature::new(out, rows, cols)?;
    Ok((
        enhanced,
        VfeTrace {
            v: tokens.clone(),
            k,
            attention,
            s,
            residual,
            absorption,
            scale,
        },
    ))
}

/// Gradients of a scalar loss given `upstream = dL/dv_e`.
#[derive(Debug, Clone)]
pub struct VfeGradients {
    pub params: VfeParameters,
    pub vision: Array2<f64>,
    pub depth: Array2<f64>,
}

pub fn backward(trace: &VfeTrace, params: &VfeParameters, upstream: &Array2<f64>) -> VfeGradients {
    let n = trace.v.nrows();
    let d = trace.v.ncols();
    let mut g = params.zeros_like();

    // v_e = residual * exp(W)
    let d_residual = upstream * &trace.scale;
    let mut d_w = upstream * &trace.residual * &trace.scale;
    let abs = &trace.absorption;
    ndarray::Zip::from(&mut d_w)
        .and(&abs.raw)
        .and(&abs.w)
        .for_each(|g, raw, w| {
            if raw != w {
                *g = 0.0;
            }
        });

    // raw = relu(resampled W1 + b1) W2 + b2
    g.mlp_w2 = abs.hidden.t().dot(&d_w);
    g.mlp_b2 = d_w.sum_axis(Axis(0));
    let mut d_pre = d_w.dot(&params.mlp_w2.t());
    ndarray::Zip::from(&mut d_pre).and(&abs.pre).for_each(|g, &p| {
        if p <= 0.0 {
            *g = 0.0;
        }
    });
    g.mlp_w1 = abs.resampled.t().dot(&d_pre);
    g.mlp_b1 = d_pre.sum_axis(Axis(0));
    let d_resampled = d_pre.dot(&params.mlp_w1.t());
    let d_depth = abs.map.transpose_apply(&d_resampled);

    // residual = v - s, s = v[k] - q
    let mut d_v = d_residual.clone();
    let d_s = -d_residual.sum_axis(Axis(0));
    {
        let mut row = d_v.row_mut(trace.k);
        row += &d_s;
    }
    let d_q = -&d_s;

    // q = ctx W_O
    let att = &trace.attention;
    g.w_o = outer(&att.ctx, &d_q);
    let d_ctx = params.w_o.dot(&d_q);

    // ctx = attn . values
    let d_values = outer(&att.attn, &d_ctx);
    let d_attn = att.values.dot(&d_ctx);
    let weighted = att.attn.dot(&d_attn);
    let d_scores = &att.attn * &(d_attn - weighted);

    // scores = keys . query / sqrt(d)
    let inv_sqrt_d = 1.0 / (d as f64).sqrt();
    let d_keys = outer(&d_scores, &att.query) * inv_sqrt_d;
    let d_query = att.keys.t().dot(&d_scores) * inv_sqrt_d;

    g.w_k = trace.v.t().dot(&d_keys);
    d_v += &d_keys.dot(&params.w_k.t());
    g.w_v = trace.v.t().dot(&d_values);
    d_v += &d_values.dot(&params.w_v.t());

    // query = q_in W_Q, q_in = query_init + mean(v)
    g.w_q = outer(&att.q_in, &d_query);
    let d_q_in = params.w_q.dot(&d_query);
    d_v += &(&d_q_in / n as f64);
    g.query_init = d_q_in;
    g.standardize();

    VfeGradients {
        params: g,
        vision: d_v,
        depth: d_depth,
    }
}

/// Sum-of-squares loss on the enhanced feature and its gradient.
pub fn sum_of_squares(x: &Array2<f64>) -> (f64, Array2<f64>) {
    (x.iter().map(|v| v * v).sum(), x * 2.0)
}

/// Analytic vs central finite-difference gradients of `sum(v_e^2)` with
/// respect to every VFE parameter.
pub fn grad_check(
    params: &VfeParameters,
    v: &VisionFeature,
    k: usize,
    d_feat: &DepthFeature,
) -> Result<GradCheckReport> {
    let (out, trace) = forward(v, k, d_feat, params)?;
    let (_, upstream) = sum_of_squares(out.tokens());
    let analytic = backward(&trace, params, &upstream).params;
    gradcheck::check(params, &analytic, |p| {
        let (out, trace) = forward(v, k, d_feat, p)?;
        Ok(Probe {
            loss: sum_of_squares(out.tokens()).0,
            pattern: trace.activation_pattern(),
        })
    })
}
