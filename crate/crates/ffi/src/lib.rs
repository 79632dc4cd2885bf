//! C ABI over the `aquavis` library.
//!
//! Objects cross the boundary as opaque handles created by `*_new`/`*_read`
//! functions and released with the matching `*_free`. Every fallible call
//! returns an [`AquavisStatus`]; on failure the message is kept per thread
//! and can be fetched with [`aquavis_last_error_message`]. Strings returned
//! through `char **` out-parameters are owned by the caller and must be
//! released with [`aquavis_string_free`]. Panics never unwind into C; they
//! surface as `AQUAVIS_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use aquavis::datagen::QaRecord;
use aquavis::eval::{self, Prediction};
use aquavis::imaging::io::{self, BitDepth};
use aquavis::imaging::{self, AttenuationModel, Backscatter, DepthMap, PatchGrid, RgbImage};
use aquavis::selfcheck::{self, SelfCheckOptions};
use aquavis::tensors::TensorManifest;
use aquavis::vfe::{self, DepthFeature, VfeDims, VfeParameters, VisionFeature};
use aquavis::{jsonl, Error};
use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AquavisStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Dimension = 3,
    Io = 4,
    Parse = 5,
    Numeric = 6,
    Checkpoint = 7,
    /// A check ran but did not pass (self-check failures).
    CheckFailed = 8,
    Panic = 9,
}

/// RGB image with values in `[0, 1]`, stored row-major and interleaved.
pub struct AquavisImage(RgbImage);

/// Per-pixel depth map.
pub struct AquavisDepth(DepthMap);

/// Parameters of the feature enhancement module.
pub struct AquavisVfeParams(VfeParameters);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn status_of(e: &Error) -> AquavisStatus {
    match e {
        Error::Dimension(_) | Error::Index { .. } => AquavisStatus::Dimension,
        Error::Validation(_) | Error::Contract(_) => AquavisStatus::InvalidArgument,
        Error::Numeric { .. } => AquavisStatus::Numeric,
        Error::Io { .. } | Error::Png { .. } | Error::Provider { .. } => AquavisStatus::Io,
        Error::Parse(_) | Error::Json(_) => AquavisStatus::Parse,
        Error::Checkpoint { .. } => AquavisStatus::Checkpoint,
    }
}

struct Fail(AquavisStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(AquavisStatus::NullPointer, format!("{what} is null"))
}

/// Runs `f`, recording any error or panic as the thread's last error.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> AquavisStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            AquavisStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
            set_last_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| payload.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(format!("panic: {msg}"));
            AquavisStatus::Panic
        }
    }
}

unsafe fn path_arg(p: *const c_char, what: &str) -> Result<PathBuf, Fail> {
    Ok(PathBuf::from(str_arg(p, what)?))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(AquavisStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

unsafe fn slice_arg<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn ref_arg<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn out_arg<T>(out: *mut T, value: T, what: &str) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null(what));
    }
    out.write(value);
    Ok(())
}

fn checked_len(a: usize, b: usize, c: usize) -> Result<usize, Fail> {
    a.checked_mul(b)
        .and_then(|n| n.checked_mul(c))
        .ok_or_else(|| Fail(AquavisStatus::InvalidArgument, "size overflows".into()))
}

fn json_string(text: String) -> Result<*mut c_char, Fail> {
    CString::new(text)
        .map(CString::into_raw)
        .map_err(|_| Fail(AquavisStatus::Parse, "output contains a NUL byte".into()))
}

fn matrix(rows: usize, cols: usize, data: &[f64]) -> Result<Array2<f64>, Fail> {
    Array2::from_shape_vec((rows, cols), data.to_vec()).map_err(|e| Fail(AquavisStatus::Dimension, e.to_string()))
}

// ---------------------------------------------------------------- errors

/// Message of the last failed call on this thread, or NULL if the last
/// call succeeded. The copy must be released with `aquavis_string_free`.
#[no_mangle]
pub extern "C" fn aquavis_last_error_message() -> *mut c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null_mut(), |m| m.clone().into_raw()))
}

/// Releases a string returned by this library. NULL is ignored.
///
/// # Safety
/// `s` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn aquavis_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Static, NUL-terminated library version.
#[no_mangle]
pub extern "C" fn aquavis_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

// ---------------------------------------------------------------- images

/// Creates an image from `height * width * 3` interleaved RGB values.
///
/// # Safety
/// `data` must point to `height * width * 3` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn aquavis_image_new(
    height: usize,
    width: usize,
    data: *const f64,
    out: *mut *mut AquavisImage,
) -> AquavisStatus {
    guard(|| {
        let values = slice_arg(data, checked_len(height, width, 3)?, "data")?;
        let img = RgbImage::new(height, width, values.to_vec())?;
        out_arg(out, Box::into_raw(Box::new(AquavisImage(img))), "out")
    })
}

/// Reads an 8- or 16-bit RGB(A) PNG; `bits` (optional) receives 8 or 16.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn aquavis_image_read_png(
    path: *const c_char,
    out: *mut *mut AquavisImage,
    bits: *mut u32,
) -> AquavisStatus {
    guard(|| {
        let (img, depth) = io::read_png_rgb(&path_arg(path, "path")?)?;
        if !bits.is_null() {
            bits.write(if depth == BitDepth::Eight { 8 } else { 16 });
        }
        out_arg(out, Box::into_raw(Box::new(AquavisImage(img))), "out")
    })
}

/// Writes `image` as an RGB PNG with 8 or 16 bits per channel.
///
/// # Safety
/// `image` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn aquavis_image_write_png(
    image: *const AquavisImage,
    path: *const c_char,
    bits: u32,
) -> AquavisStatus {
    guard(|| {
        let img = ref_arg(image, "image")?;
        let depth = match bits {
            8 => BitDepth::Eight,
            16 => BitDepth::Sixteen,
            other => return Err(Fail(AquavisStatus::InvalidArgument, format!("bits must be 8 or 16, got {other}"))),
        };
        io::write_png_rgb(&path_arg(path, "path")?, &img.0, depth)?;
        Ok(())
    })
}

/// Image height, or 0 for NULL.
///
/// # Safety
/// `image` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn aquavis_image_height(image: *const AquavisImage) -> usize {
    image.as_ref().map_or(0, |i| i.0.height())
}

/// Image width, or 0 for NULL.
///
/// # Safety
/// `image` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn aquavis_image_width(image: *const AquavisImage) -> usize {
    image.as_ref().map_or(0, |i| i.0.width())
}

/// Copies the interleaved pixel values into `buf`, which must hold exactly
/// `height * width * 3` doubles.
///
/// # Safety
/// `image` must be a live handle; `buf` must be writable for `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn aquavis_image_copy_data(
    image: *const AquavisImage,
    buf: *mut f64,
    len: usize,
) -> AquavisStatus {
    guard(|| {
        let data = ref_arg(image, "image")?.0.data();
        if len != data.len() {
            return Err(Fail(AquavisStatus::Dimension, format!("buffer holds {len} values, image has {}", data.len())));
        }
        if buf.is_null() {
            return Err(null("buf"));
        }
        std::slice::from_raw_parts_mut(buf, len).copy_from_slice(data);
        Ok(())
    })
}

/// # Safety
/// `image` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn aquavis_image_free(image: *mut AquavisImage) {
    if !image.is_null() {
        drop(Box::from_raw(image));
    }
}

// ---------------------------------------------------------------- depth

/// Creates a depth map from `height * width` values.
///
/// # Safety
/// `data` must point to `height * width` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn aquavis_depth_new(
    height: usize,
    width: usize,
    data: *const f64,
    out: *mut *mut AquavisDepth,
) -> AquavisStatus {
    guard(|| {
        let values = slice_arg(data, checked_len(height, width, 1)?, "data")?;
        let depth = DepthMap::new(height, width, values.to_vec())?;
        out_arg(out, Box::into_raw(Box::new(AquavisDepth(depth))), "out")
    })
}

/// Reads a depth map: `.png` with a `.json` scale sidecar, anything else
/// as raw `UWDM`.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn aquavis_depth_read(path: *const c_char, out: *mut *mut AquavisDepth) -> AquavisStatus {
    guard(|| {
        let depth = io::read_depth(&path_arg(path, "path")?)?;
        out_arg(out, Box::into_raw(Box::new(AquavisDepth(depth))), "out")
    })
}

/// # Safety
/// `depth` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn aquavis_depth_free(depth: *mut AquavisDepth) {
    if !depth.is_null() {
        drop(Box::from_raw(depth));
    }
}

// ---------------------------------------------------------------- physics

/// Renders `clean * exp(-beta * z) + backscatter`, clamped to `[0, 1]`.
/// `clamped` (optional) receives the number of clamped channel values.
///
/// # Safety
/// Handles must be live; `beta` and `backscatter` must point to 3 doubles.
#[no_mangle]
pub unsafe extern "C" fn aquavis_degrade(
    clean: *const AquavisImage,
    depth: *const AquavisDepth,
    beta: *const f64,
    backscatter: *const f64,
    out: *mut *mut AquavisImage,
    clamped: *mut usize,
) -> AquavisStatus {
    guard(|| {
        let (atten, back) = physics_args(beta, backscatter)?;
        let r = imaging::degrade(&ref_arg(clean, "clean")?.0, &ref_arg(depth, "depth")?.0, &atten, &back)?;
        if !clamped.is_null() {
            clamped.write(r.clamped);
        }
        out_arg(out, Box::into_raw(Box::new(AquavisImage(r.image))), "out")
    })
}

/// Inverts the formation model with a transmission floor of 1e-6.
///
/// # Safety
/// Handles must be live; `beta` and `backscatter` must point to 3 doubles.
#[no_mangle]
pub unsafe extern "C" fn aquavis_restore(
    degraded: *const AquavisImage,
    depth: *const AquavisDepth,
    beta: *const f64,
    backscatter: *const f64,
    out: *mut *mut AquavisImage,
) -> AquavisStatus {
    guard(|| {
        let (atten, back) = physics_args(beta, backscatter)?;
        let r = imaging::restore(&ref_arg(degraded, "degraded")?.0, &ref_arg(depth, "depth")?.0, &atten, &back)?;
        out_arg(out, Box::into_raw(Box::new(AquavisImage(r.image))), "out")
    })
}

unsafe fn physics_args(beta: *const f64, backscatter: *const f64) -> Result<(AttenuationModel, Backscatter), Fail> {
    let b = slice_arg(beta, 3, "beta")?;
    let s = slice_arg(backscatter, 3, "backscatter")?;
    Ok((AttenuationModel::Constant([b[0], b[1], b[2]]), Backscatter([s[0], s[1], s[2]])))
}

/// Backscatter as the per-channel mean of the darkest `patch x patch`
/// patch. `patch_index` (optional) receives its row-major index.
///
/// # Safety
/// `image` must be live; `out_rgb` must be writable for 3 doubles.
#[no_mangle]
pub unsafe extern "C" fn aquavis_estimate_backscatter(
    image: *const AquavisImage,
    patch: usize,
    out_rgb: *mut f64,
    patch_index: *mut usize,
) -> AquavisStatus {
    guard(|| {
        let img = &ref_arg(image, "image")?.0;
        let grid = PatchGrid::for_image(patch, img)?;
        let k = imaging::select_dark_patch(img, &grid)?;
        let b = imaging::estimate_backscatter(img, &grid)?;
        if out_rgb.is_null() {
            return Err(null("out_rgb"));
        }
        std::slice::from_raw_parts_mut(out_rgb, 3).copy_from_slice(&b.0);
        if !patch_index.is_null() {
            patch_index.write(k);
        }
        Ok(())
    })
}

// ---------------------------------------------------------------- vfe

/// Near-identity initialisation (the absorption weights start at zero).
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn aquavis_vfe_params_init(
    d: usize,
    e: usize,
    h: usize,
    w_max: f64,
    seed: u64,
    out: *mut *mut AquavisVfeParams,
) -> AquavisStatus {
    guard(|| {
        if d == 0 || e == 0 || h == 0 {
            return Err(Fail(AquavisStatus::InvalidArgument, "d, e and h must be positive".into()));
        }
        let p = VfeParameters::init(VfeDims { d, e, h }, w_max, &mut ChaCha8Rng::seed_from_u64(seed));
        p.validate()?;
        out_arg(out, Box::into_raw(Box::new(AquavisVfeParams(p))), "out")
    })
}

/// Loads parameters from a JSON tensor manifest.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn aquavis_vfe_params_load(
    path: *const c_char,
    out: *mut *mut AquavisVfeParams,
) -> AquavisStatus {
    guard(|| {
        let m = TensorManifest::read(&path_arg(path, "path")?)?;
        let p = VfeParameters::from_manifest(&m)?;
        out_arg(out, Box::into_raw(Box::new(AquavisVfeParams(p))), "out")
    })
}

/// # Safety
/// `params` must be live and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn aquavis_vfe_params_save(
    params: *const AquavisVfeParams,
    path: *const c_char,
) -> AquavisStatus {
    guard(|| {
        ref_arg(params, "params")?.0.to_manifest().write(&path_arg(path, "path")?)?;
        Ok(())
    })
}

/// # Safety
/// `params` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn aquavis_vfe_params_free(params: *mut AquavisVfeParams) {
    if !params.is_null() {
        drop(Box::from_raw(params));
    }
}

/// Enhances `rows * cols` vision tokens of width `d` (row-major) given the
/// dark-token index `k` and `depth_rows * depth_cols` depth tokens of width
/// `e`. Writes `rows * cols * d` values to `out`.
///
/// # Safety
/// All buffers must hold the stated number of doubles.
#[no_mangle]
pub unsafe extern "C" fn aquavis_vfe_enhance(
    params: *const AquavisVfeParams,
    vision: *const f64,
    rows: usize,
    cols: usize,
    k: usize,
    depth: *const f64,
    depth_rows: usize,
    depth_cols: usize,
    out: *mut f64,
) -> AquavisStatus {
    guard(|| {
        let p = &ref_arg(params, "params")?.0;
        let dims = p.dims();
        let n = checked_len(rows, cols, 1)?;
        let m = checked_len(depth_rows, depth_cols, 1)?;
        let v = slice_arg(vision, checked_len(n, dims.d, 1)?, "vision")?;
        let dep = slice_arg(depth, checked_len(m, dims.e, 1)?, "depth")?;
        let v = VisionFeature::new(matrix(n, dims.d, v)?, rows, cols)?;
        let dep = DepthFeature::new(matrix(m, dims.e, dep)?, depth_rows, depth_cols)?;
        let enhanced = vfe::enhance(&v, k, &dep, p)?;
        if out.is_null() {
            return Err(null("out"));
        }
        let tokens = enhanced.tokens();
        let dst = std::slice::from_raw_parts_mut(out, tokens.len());
        for (d, s) in dst.iter_mut().zip(tokens.iter()) {
            *d = *s;
        }
        Ok(())
    })
}

/// Runs the module self-check. `params` may be NULL to use random
/// parameters of the given dimensions. The JSON report is written to
/// `report_json` (free with `aquavis_string_free`) even when a check fails,
/// in which case `AQUAVIS_STATUS_CHECK_FAILED` is returned.
///
/// # Safety
/// `params` must be NULL or live; `report_json` must be writable.
#[no_mangle]
pub unsafe extern "C" fn aquavis_vfe_selfcheck(
    params: *const AquavisVfeParams,
    seed: u64,
    d: usize,
    e: usize,
    h: usize,
    w_max: f64,
    report_json: *mut *mut c_char,
) -> AquavisStatus {
    guard(|| {
        if report_json.is_null() {
            return Err(null("report_json"));
        }
        let base = params.as_ref().map(|p| &p.0);
        let report = selfcheck::run(&SelfCheckOptions::new(seed, VfeDims { d, e, h }, w_max), base)?;
        let text = serde_json::to_string(&report).map_err(Error::from)?;
        report_json.write(json_string(text)?);
        if report.passed() {
            Ok(())
        } else {
            Err(Fail(AquavisStatus::CheckFailed, "one or more self-checks failed".into()))
        }
    })
}

// ---------------------------------------------------------------- eval

/// Scores a prediction JSONL file against gold QA records. `subset` may be
/// NULL. The JSON report goes to `report_json` (free with
/// `aquavis_string_free`).
///
/// # Safety
/// Paths must be NUL-terminated strings; `report_json` must be writable.
#[no_mangle]
pub unsafe extern "C" fn aquavis_evaluate_files(
    predictions: *const c_char,
    gold: *const c_char,
    subset: *const c_char,
    report_json: *mut *mut c_char,
) -> AquavisStatus {
    guard(|| {
        if report_json.is_null() {
            return Err(null("report_json"));
        }
        let preds: Vec<Prediction> = jsonl::read(&path_arg(predictions, "predictions")?)?;
        let gold: Vec<QaRecord> = jsonl::read(&path_arg(gold, "gold")?)?;
        let subset = if subset.is_null() { None } else { Some(str_arg(subset, "subset")?) };
        let report = eval::evaluate(&preds, &gold, subset)?;
        report_json.write(json_string(report.to_json()?)?);
        Ok(())
    })
}
