//! Physical underwater image formation.
//!
//! An observed channel value is the attenuated scene radiance plus a veiling
//! backscatter term, `I = J * exp(-beta(z) * z) + B`. This module evaluates
//! that model forward ([`degrade`]), inverts it in closed form ([`restore`]),
//! and estimates `B` from the darkest image patch ([`estimate_backscatter`]).
//!
//! Pixel values are linear intensities in `[0, 1]`, stored row-major with
//! interleaved R, G, B channels.

pub mod io;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Floor applied to the attenuation factor before dividing by it in [`restore`].
pub const EPS_DIV: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct RgbImage {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl RgbImage {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::Validation(format!(
                "image must be non-empty, got {height}x{width}"
            )));
        }
        if data.len() != height * width * 3 {
            return Err(Error::Dimension(format!(
                "{height}x{width}x3 image needs {} values, got {}",
                height * width * 3,
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite() || !(0.0..=1.0).contains(v)) {
            return Err(Error::Validation(format!(
                "pixel value {} at flat index {i} is outside [0, 1]",
                data[i]
            )));
        }
        Ok(RgbImage { height, width, data })
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(height * width * 3);
        for y in 0..height {
            for x in 0..width {
                for c in 0..3 {
                    data.push(f(y, x, c));
                }
            }
        }
        Self::new(height, width, data)
    }

    pub fn filled(height: usize, width: usize, rgb: [f64; 3]) -> Result<Self> {
        Self::from_fn(height, width, |_, _, c| rgb[c])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * 3 + c]
    }

    /// Sub-image with top-left corner `(y0, x0)`.
    pub fn crop(&self, y0: usize, x0: usize, height: usize, width: usize) -> Result<Self> {
        if y0 + height > self.height || x0 + width > self.width {
            return Err(Error::Dimension(format!(
                "crop {height}x{width}+{y0}+{x0} exceeds {}x{} image",
                self.height, self.width
            )));
        }
        Self::from_fn(height, width, |y, x, c| self.get(y0 + y, x0 + x, c))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    height: usize,
    width: usize,
    data: Vec<f64>,
    scale: f64,
}

impl DepthMap {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        Self::with_scale(height, width, data, 1.0)
    }

    /// `scale` is the number of distance units per raster level the map was
    /// loaded from; it is carried for provenance and does not rescale `data`.
    pub fn with_scale(height: usize, width: usize, data: Vec<f64>, scale: f64) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::Validation(format!(
                "depth map must be non-empty, got {height}x{width}"
            )));
        }
        if data.len() != height * width {
            return Err(Error::Dimension(format!(
                "{height}x{width} depth map needs {} values, got {}",
                height * width,
                data.len()
            )));
        }
        if !(scale.is_finite() && scale > 0.0) {
            return Err(Error::Validation(format!("depth scale must be > 0, got {scale}")));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Validation(format!(
                "depth value {} at index {i} is negative or non-finite",
                data[i]
            )));
        }
        Ok(DepthMap {
            height,
            width,
            data,
            scale,
        })
    }

    pub fn filled(height: usize, width: usize, z: f64) -> Result<Self> {
        Self::new(height, width, vec![z; height * width])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> f64 {
        self.data[y * self.width + x]
    }

    pub fn crop(&self, y0: usize, x0: usize, height: usize, width: usize) -> Result<Self> {
        if y0 + height > self.height || x0 + width > self.width {
            return Err(Error::Dimension(format!(
                "crop {height}x{width}+{y0}+{x0} exceeds {}x{} depth map",
                self.height, self.width
            )));
        }
        let mut data = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                data.push(self.get(y0 + y, x0 + x));
            }
        }
        Self::with_scale(height, width, data, self.scale)
    }
}

/// Per-channel attenuation coefficient `beta_c(z)`.
///
/// The piecewise-linear form interpolates between `(z, beta)` knots and holds
/// the end values constant outside the knot range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AttenuationModel {
    Constant([f64; 3]),
    PiecewiseLinear([Vec<(f64, f64)>; 3]),
}

impl Default for AttenuationModel {
    fn default() -> Self {
        AttenuationModel::Constant([0.0; 3])
    }
}

impl AttenuationModel {
    pub fn validate(&self) -> Result<()> {
        match self {
            AttenuationModel::Constant(beta) => {
                if let Some(b) = beta.iter().find(|b| !b.is_finite() || **b < 0.0) {
                    return Err(Error::Validation(format!(
                        "attenuation coefficient {b} must be finite and non-negative"
                    )));
                }
            }
            AttenuationModel::PiecewiseLinear(knots) => {
                for (c, ks) in knots.iter().enumerate() {
                    if ks.is_empty() {
                        return Err(Error::Validation(format!("channel {c} has no knots")));
                    }
                    for (z, b) in ks {
                        if !z.is_finite() || !b.is_finite() || *b < 0.0 {
                            return Err(Error::Validation(format!(
                                "channel {c} knot ({z}, {b}) must be finite with beta >= 0"
                            )));
                        }
                    }
                    if ks.windows(2).any(|w| w[1].0 <= w[0].0) {
                        return Err(Error::Validation(format!(
                            "channel {c} knot depths must be strictly increasing"
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    #[inline]
    pub fn beta(&self, channel: usize, z: f64) -> f64 {
        match self {
            AttenuationModel::Constant(beta) => beta[channel],
            AttenuationModel::PiecewiseLinear(knots) => {
                let ks = &knots[channel];
                let first = ks[0];
                let last = ks[ks.len() - 1];
                if z <= first.0 {
                    return first.1;
                }
                if z >= last.0 {
                    return last.1;
                }
                let hi = ks.partition_point(|k| k.0 <= z);
                let (z0, b0) = ks[hi - 1];
                let (z1, b1) = ks[hi];
                b0 + (b1 - b0) * (z - z0) / (z1 - z0)
            }
        }
    }

    /// Transmission `exp(-beta_c(z) * z)`.
    #[inline]
    pub fn transmission(&self, channel: usize, z: f64) -> f64 {
        (-self.beta(channel, z) * z).exp()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Backscatter(pub [f64; 3]);

impl Backscatter {
    pub fn validate(&self) -> Result<()> {
        if let Some(b) = self.0.iter().find(|b| !b.is_finite() || !(0.0..=1.0).contains(*b)) {
            return Err(Error::Validation(format!("backscatter {b} outside [0, 1]")));
        }
        Ok(())
    }
}

/// Non-overlapping square patches tiling the top-left of an image; remainder
/// rows and columns are not covered.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchGrid {
    pub patch_size: usize,
    pub rows: usize,
    pub cols: usize,
}

impl PatchGrid {
    pub fn new(patch_size: usize, height: usize, width: usize) -> Result<Self> {
        if patch_size == 0 {
            return Err(Error::Validation("patch size must be positive".into()));
        }
        if height < patch_size || width < patch_size {
            return Err(Error::Dimension(format!(
                "{height}x{width} image is smaller than patch size {patch_size}"
            )));
        }
        Ok(PatchGrid {
            patch_size,
            rows: height / patch_size,
            cols: width / patch_size,
        })
    }

    pub fn for_image(patch_size: usize, image: &RgbImage) -> Result<Self> {
        Self::new(patch_size, image.height(), image.width())
    }

    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Pixel coordinates of the top-left corner of patch `k` (row-major).
    pub fn origin(&self, k: usize) -> (usize, usize) {
        ((k / self.cols) * self.patch_size, (k % self.cols) * self.patch_size)
    }

    fn check_fits(&self, image: &RgbImage) -> Result<()> {
        if self.patch_size == 0 || self.is_empty() {
            return Err(Error::Validation("patch grid is empty".into()));
        }
        if self.rows * self.patch_size > image.height() || self.cols * self.patch_size > image.width()
        {
            return Err(Error::Dimension(format!(
                "{}x{} grid of {}px patches does not fit a {}x{} image",
                self.rows,
                self.cols,
                self.patch_size,
                image.height(),
                image.width()
            )));
        }
        Ok(())
    }

    fn channel_sums(&self, image: &RgbImage, k: usize) -> [f64; 3] {
        let (y0, x0) = self.origin(k);
        let mut sums = [0.0; 3];
        for y in y0..y0 + self.patch_size {
            for x in x0..x0 + self.patch_size {
                for (c, s) in sums.iter_mut().enumerate() {
                    *s += image.get(y, x, c);
                }
            }
        }
        sums
    }
}

/// Output of [`degrade`] / [`restore`] with the number of channel values that
/// had to be clamped into `[0, 1]` and, for restoration, the number whose
/// transmission fell below [`EPS_DIV`].
#[derive(Debug, Clone, PartialEq)]
pub struct Rendered {
    pub image: RgbImage,
    pub clamped: usize,
    pub saturated: usize,
}

fn check_pair(image: &RgbImage, depth: &DepthMap) -> Result<()> {
    if image.height() != depth.height() || image.width() != depth.width() {
        return Err(Error::Dimension(format!(
            "image is {}x{} but depth is {}x{}",
            image.height(),
            image.width(),
            depth.height(),
            depth.width()
        )));
    }
    Ok(())
}

fn clamp_unit(v: f64, clamped: &mut usize) -> f64 {
    if v < 0.0 {
        *clamped += 1;
        0.0
    } else if v > 1.0 {
        *clamped += 1;
        1.0
    } else {
        v
    }
}

/// Forward image formation: `I_c = J_c * exp(-beta_c(z) z) + B_c`, clamped to `[0, 1]`.
pub fn degrade(
    clean: &RgbImage,
    depth: &DepthMap,
    atten: &AttenuationModel,
    back: &Backscatter,
) -> Result<Rendered> {
    check_pair(clean, depth)?;
    atten.validate()?;
    back.validate()?;
    let mut clamped = 0;
    let mut data = Vec::with_capacity(clean.data.len());
    for (p, rgb) in clean.data.chunks_exact(3).enumerate() {
        let z = depth.data[p];
        for (c, &j) in rgb.iter().enumerate() {
            let v = j * atten.transmission(c, z) + back.0[c];
            if !v.is_finite() {
                return Err(Error::Numeric { stage: "degrade" });
            }
            data.push(clamp_unit(v, &mut clamped));
        }
    }
    Ok(Rendered {
        image: RgbImage::new(clean.height, clean.width, data)?,
        clamped,
        saturated: 0,
    })
}

/// Closed-form inversion: `J_c = (I_c - B_c) / max(exp(-beta_c(z) z), EPS_DIV)`,
/// clamped to `[0, 1]`.
pub fn restore(
    degraded: &RgbImage,
    depth: &DepthMap,
    atten: &AttenuationModel,
    back: &Backscatter,
) -> Result<Rendered> {
    check_pair(degraded, depth)?;
    atten.validate()?;
    back.validate()?;
    let mut clamped = 0;
    let mut saturated = 0;
    let mut data = Vec::with_capacity(degraded.data.len());
    for (p, rgb) in degraded.data.chunks_exact(3).enumerate() {
        let z = depth.data[p];
        for (c, &i) in rgb.iter().enumerate() {
            let mut t = atten.transmission(c, z);
            if t < EPS_DIV {
                saturated += 1;
                t = EPS_DIV;
            }
            let v = (i - back.0[c]) / t;
            if !v.is_finite() {
                return Err(Error::Numeric { stage: "restore" });
            }
            data.push(clamp_unit(v, &mut clamped));
        }
    }
    Ok(Rendered {
        image: RgbImage::new(degraded.height, degraded.width, data)?,
        clamped,
        saturated,
    })
}

/// Row-major index of the patch with the lowest mean RGB value; ties go to
/// the lowest index.
pub fn select_dark_patch(image: &RgbImage, grid: &PatchGrid) -> Result<usize> {
    grid.check_fits(image)?;
    let mut best = 0;
    let mut best_sum = f64::INFINITY;
    for k in 0..grid.len() {
        // Every patch has the same pixel count, so comparing sums is comparing means.
        let s: f64 = grid.channel_sums(image, k).iter().sum();
        if s < best_sum {
            best_sum = s;
            best = k;
        }
    }
    Ok(best)
}

/// Dark-pixel prior: the per-channel mean of the darkest patch.
pub fn estimate_backscatter(image: &RgbImage, grid: &PatchGrid) -> Result<Backscatter> {
    let k = select_dark_patch(image, grid)?;
    let area = (grid.patch_size * grid.patch_size) as f64;
    let sums = grid.channel_sums(image, k);
    Ok(Backscatter(sums.map(|s| (s / area).clamp(0.0, 1.0))))
}

/// Peak signal-to-noise ratio in dB for unit-range images.
pub fn psnr(a: &RgbImage, b: &RgbImage) -> Result<f64> {
    if a.height != b.height || a.width != b.width {
        return Err(Error::Dimension("PSNR needs equally sized images".into()));
    }
    let mse = a
        .data
        .iter()
        .zip(&b.data)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / a.data.len() as f64;
    Ok(if mse == 0.0 {
        f64::INFINITY
    } else {
        -10.0 * mse.log10()
    })
}

/// Parameters for generating a synthetic clean/depth/degraded triple.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub height: usize,
    pub width: usize,
    /// Range of clean pixel values.
    pub value_range: (f64, f64),
    pub depth_range: (f64, f64),
    pub atten: AttenuationModel,
    pub back: Backscatter,
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 {
            return Err(Error::Validation("scene must be non-empty".into()));
        }
        let (lo, hi) = self.value_range;
        if !(0.0..=1.0).contains(&lo) || !(0.0..=1.0).contains(&hi) || lo > hi {
            return Err(Error::Validation(format!(
                "value range ({lo}, {hi}) must be ordered within [0, 1]"
            )));
        }
        let (z0, z1) = self.depth_range;
        if !(z0.is_finite() && z1.is_finite()) || z0 < 0.0 || z0 > z1 {
            return Err(Error::Validation(format!(
                "depth range ({z0}, {z1}) must be ordered and non-negative"
            )));
        }
        self.atten.validate()?;
        self.back.validate()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticScene {
    pub clean: RgbImage,
    pub depth: DepthMap,
    pub degraded: RgbImage,
}

/// Deterministic synthetic scene: uniform random radiance and depth, degraded
/// using the scene's attenuation and backscatter.
pub fn synthesize_pair(seed: u64, spec: &SceneSpec) -> Result<SyntheticScene> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (lo, hi) = spec.value_range;
    let (z0, z1) = spec.depth_range;
    let clean = RgbImage::from_fn(spec.height, spec.width, |_, _, _| {
        lo + (hi - lo) * rng.gen::<f64>()
    })?;
    let depth_data = (0..spec.height * spec.width)
        .map(|_| z0 + (z1 - z0) * rng.gen::<f64>())
        .collect();
    let depth = DepthMap::new(spec.height, spec.width, depth_data)?;
    let degraded = degrade(&clean, &depth, &spec.atten, &spec.back)?.image;
    Ok(SyntheticScene {
        clean,
        depth,
        degraded,
    })
}
