//! Runtime verification of the enhancement module and toy pipeline:
//! algebraic identities, clamp bounds, gradient checks and checkpoint
//! round trips on seeded random instances.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::Result;
use crate::imaging::{DepthMap, RgbImage};
use crate::pipeline::{self, LossWeights, PipelineConfig, PipelineParams};
use crate::tensors::TensorManifest;
use crate::vfe::{
    self, AbsorptionWeight, BackscatterResponse, DepthFeature, VfeDims, VfeParameters, VisionFeature,
};

pub const GRAD_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Pass,
    Fail,
    Skipped,
}

#[derive(Debug, Clone, Serialize)]
pub struct CheckResult {
    pub name: &'static str,
    pub status: Status,
    pub detail: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct SelfCheckReport {
    pub seed: u64,
    pub d: usize,
    pub e: usize,
    pub h: usize,
    pub w_max: f64,
    pub max_grad_rel_error: f64,
    pub checks: Vec<CheckResult>,
}

impl SelfCheckReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.status != Status::Fail)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SelfCheckOptions {
    pub seed: u64,
    pub dims: VfeDims,
    pub w_max: f64,
    /// Random instances per gradient check.
    pub grad_instances: usize,
    /// Random cases for the clamp-bound fuzz.
    pub fuzz_cases: usize,
}

impl SelfCheckOptions {
    pub fn new(seed: u64, dims: VfeDims, w_max: f64) -> Self {
        SelfCheckOptions {
            seed,
            dims,
            w_max,
            grad_instances: 3,
            fuzz_cases: 500,
        }
    }
}

fn random_matrix(rows: usize, cols: usize, scale: f64, rng: &mut impl Rng) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || scale * rng.gen_range(-1.0..1.0))
}

fn instance(dims: VfeDims, rng: &mut impl Rng) -> Result<(VisionFeature, usize, DepthFeature)> {
    let (rows, cols) = (rng.gen_range(1..4), rng.gen_range(1..4));
    let (dr, dc) = (rng.gen_range(1..4), rng.gen_range(1..4));
    let v = VisionFeature::new(random_matrix(rows * cols, dims.d, 1.0, rng), rows, cols)?;
    let d = DepthFeature::new(random_matrix(dr * dc, dims.e, 1.0, rng), dr, dc)?;
    let k = rng.gen_range(0..rows * cols);
    Ok((v, k, d))
}

fn check(name: &'static str, ok: bool, detail: String) -> CheckResult {
    CheckResult {
        name,
        status: if ok { Status::Pass } else { Status::Fail },
        detail,
    }
}

/// Runs every check. `base` replaces the random parameters of the
/// parameter-dependent checks (for example a loaded checkpoint).
pub fn run(opts: &SelfCheckOptions, base: Option<&VfeParameters>) -> Result<SelfCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let dims = base.map_or(opts.dims, |p| p.dims());
    let w_max = base.map_or(opts.w_max, |p| p.w_max);
    let params = match base {
        Some(p) => p.clone(),
        None => VfeParameters::random(dims, w_max, 1.0, &mut rng),
    };
    params.validate()?;
    let mut checks = Vec::new();

    // s = 0 and W = 0 leave the feature untouched
    {
        let (v, _, _) = instance(dims, &mut rng)?;
        let zero_s = BackscatterResponse(ndarray::Array1::zeros(dims.d));
        let residual = vfe::remove_backscatter(&v, &zero_s)?;
        let out = vfe::apply_absorption(&residual, &AbsorptionWeight(Array2::zeros(v.tokens().raw_dim())))?;
        checks.push(check("identity_at_zero_response_and_weight", out == *v.tokens(), "exact equality".into()));
    }

    // W = 0 from a silent output layer (or a zero clamp) scales by exactly 1
    {
        let mut p = params.clone();
        if w_max > 0.0 {
            p.mlp_w2.fill(0.0);
            p.mlp_b2.fill(0.0);
        }
        let (v, k, d) = instance(dims, &mut rng)?;
        let (out, trace) = vfe::forward(&v, k, &d, &p)?;
        let s = BackscatterResponse(trace.backscatter().clone());
        let residual = vfe::remove_backscatter(&v, &s)?;
        let detail = if w_max == 0.0 { "w_max = 0 forces W = 0" } else { "zeroed output layer" };
        checks.push(check("unit_scaling_when_weight_vanishes", *out.tokens() == residual, detail.into()));
    }

    // exp(W) stays within [e^-w_max, e^w_max] for extreme inputs
    {
        let mut worst = 0.0f64;
        let mut ok = true;
        for _ in 0..opts.fuzz_cases {
            let p = VfeParameters::random(dims, w_max, rng.gen_range(1.0..50.0), &mut rng);
            let (v, _, d) = instance(dims, &mut rng)?;
            let big = DepthFeature::new(d.tokens() * rng.gen_range(1.0..1e4), d.grid().0, d.grid().1)?;
            let w = vfe::absorption_weights(&big, v.grid(), &p)?;
            for &x in w.0.iter() {
                worst = worst.max(x.abs());
                let s = x.exp();
                ok &= x.is_finite() && s >= (-w_max).exp() && s <= w_max.exp();
            }
        }
        checks.push(check(
            "absorption_scale_within_clamp",
            ok,
            format!("{} cases, max |W| = {worst}", opts.fuzz_cases),
        ));
    }

    // raising a single W entry grows only that output entry
    if w_max == 0.0 {
        checks.push(CheckResult {
            name: "single_weight_monotonicity",
            status: Status::Skipped,
            detail: "w_max = 0 pins every weight at 0; nothing to vary".into(),
        });
    } else {
        let residual = random_matrix(3, dims.d, 1.0, &mut rng);
        let w = Array2::from_shape_fn(residual.raw_dim(), |_| rng.gen_range(-w_max / 2.0..w_max / 2.0));
        let before = vfe::apply_absorption(&residual, &AbsorptionWeight(w.clone()))?;
        let mut ok = true;
        for ((i, j), r) in residual.indexed_iter() {
            if *r == 0.0 {
                continue;
            }
            let mut w2 = w.clone();
            w2[[i, j]] += w_max / 4.0;
            let after = vfe::apply_absorption(&residual, &AbsorptionWeight(w2))?;
            ok &= after[[i, j]].abs() > before[[i, j]].abs();
            ok &= after.indexed_iter().all(|(ix, x)| ix == (i, j) || *x == before[ix]);
        }
        checks.push(check("single_weight_monotonicity", ok, format!("{} entries", residual.len())));
    }

    // constant W is a global rescale by e^c
    {
        let residual = random_matrix(4, dims.d, 1.0, &mut rng);
        let c = if w_max > 0.0 { rng.gen_range(-w_max..w_max) } else { 0.0 };
        let out = vfe::apply_absorption(&residual, &AbsorptionWeight(Array2::from_elem(residual.raw_dim(), c)))?;
        let scale = c.exp();
        let err = out
            .iter()
            .zip(residual.iter())
            .map(|(o, r)| (o - r * scale).abs() / (r * scale).abs().max(1e-300))
            .fold(0.0, f64::max);
        checks.push(check("constant_weight_rescales", err < 1e-12, format!("max rel err {err:.3e}")));
    }

    // analytic vs finite-difference gradients of the module
    let mut max_grad = 0.0f64;
    {
        let mut report = crate::gradcheck::GradCheckReport::default();
        for i in 0..opts.grad_instances {
            let p = if i == 0 { params.clone() } else { VfeParameters::random(dims, w_max, 1.0, &mut rng) };
            let (v, k, d) = instance(dims, &mut rng)?;
            report.merge(vfe::grad_check(&p, &v, k, &d)?);
        }
        max_grad = max_grad.max(report.max_rel_error);
        checks.push(check(
            "vfe_gradients",
            report.passed(GRAD_TOLERANCE),
            format!(
                "max rel err {:.3e} ({} entries, {} skipped at kinks)",
                report.max_rel_error, report.checked, report.skipped_kinks
            ),
        ));
    }

    // end-to-end pipeline gradients and the shared projector contract
    {
        let cfg = PipelineConfig {
            patch: 4,
            depth_patch: 4,
            d: dims.d,
            e: dims.e,
            h: dims.h,
            d_l: 8,
            w_max,
        };
        let mut report = crate::gradcheck::GradCheckReport::default();
        let mut shared_err = 0.0f64;
        for _ in 0..opts.grad_instances {
            let p = PipelineParams::random(&cfg, &mut rng)?;
            let image = RgbImage::from_fn(8, 12, |_, _, _| rng.gen())?;
            let depth = DepthMap::new(8, 12, (0..96).map(|_| rng.gen_range(0.1..5.0)).collect())?;
            report.merge(pipeline::end_to_end_grad_check(&p, &image, &depth)?);

            let (out, trace) = pipeline::forward(&image, &depth, &p)?;
            let joint = pipeline::backward(&out, &trace, &p, LossWeights::JOINT);
            let a = pipeline::backward(&out, &trace, &p, LossWeights::ORIGINAL_ONLY);
            let b = pipeline::backward(&out, &trace, &p, LossWeights::ENHANCED_ONLY);
            let pairs = [
                (&joint.projector.w1, &a.projector.w1, &b.projector.w1),
                (&joint.projector.w2, &a.projector.w2, &b.projector.w2),
            ];
            for (j, a, b) in pairs {
                let sum = a + b;
                for (x, y) in j.iter().zip(sum.iter()) {
                    shared_err = shared_err.max((x - y).abs() / x.abs().max(1.0));
                }
            }
        }
        max_grad = max_grad.max(report.max_rel_error);
        checks.push(check(
            "pipeline_gradients",
            report.passed(GRAD_TOLERANCE),
            format!(
                "max rel err {:.3e} ({} entries, {} skipped at kinks)",
                report.max_rel_error, report.checked, report.skipped_kinks
            ),
        ));
        checks.push(check(
            "shared_projector_accumulates",
            shared_err < 1e-12,
            format!("max deviation from per-path sum {shared_err:.3e}"),
        ));
    }

    // checkpoint write/read is bit-exact
    {
        let json = params.to_manifest().to_json()?;
        let back = VfeParameters::from_manifest(&TensorManifest::from_json(&json)?)?;
        checks.push(check("checkpoint_round_trip", back == params, "JSON tensor manifest".into()));
    }

    Ok(SelfCheckReport {
        seed: opts.seed,
        d: dims.d,
        e: dims.e,
        h: dims.h,
        w_max,
        max_grad_rel_error: max_grad,
        checks,
    })
}
