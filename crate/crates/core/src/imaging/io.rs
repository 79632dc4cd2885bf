//! PNG and raw depth-map readers and writers.
//!
//! Images: 8- or 16-bit RGB(A) PNG, values mapped to `level / max_level`.
//! Depth: 16-bit grayscale PNG with a `.json` sidecar `{"scale": units_per_level}`,
//! or the raw `UWDM` format: magic `b"UWDM"`, `u16` height, `u16` width (both
//! little-endian), then `height * width` little-endian `f32` values.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{DepthMap, RgbImage};
use crate::error::{Error, Result};

pub const DEPTH_MAGIC: &[u8; 4] = b"UWDM";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BitDepth {
    Eight,
    Sixteen,
}

impl BitDepth {
    fn max_level(self) -> f64 {
        match self {
            BitDepth::Eight => 255.0,
            BitDepth::Sixteen => 65535.0,
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct DepthSidecar {
    scale: f64,
}

fn png_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Png {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| Error::io(path, e))
}

fn create(path: &Path) -> Result<File> {
    File::create(path).map_err(|e| Error::io(path, e))
}

/// Reads an RGB or RGBA PNG (alpha is dropped) and reports its bit depth.
pub fn read_png_rgb(path: &Path) -> Result<(RgbImage, BitDepth)> {
    let decoder = png::Decoder::new(BufReader::new(open(path)?));
    let mut reader = decoder.read_info().map_err(|e| png_err(path, e))?;
    let mut buf = vec![0; reader.output_buffer_size()];
    let info = reader.next_frame(&mut buf).map_err(|e| png_err(path, e))?;
    let channels = match info.color_type {
        png::ColorType::Rgb => 3,
        png::ColorType::Rgba => 4,
        other => {
            return Err(png_err(path, format!("expected RGB image, found {other:?}")));
        }
    };
    let bits = match info.bit_depth {
        png::BitDepth::Eight => BitDepth::Eight,
        png::BitDepth::Sixteen => BitDepth::Sixteen,
        other => return Err(png_err(path, format!("unsupported bit depth {other:?}"))),
    };
    let (w, h) = (info.width as usize, info.height as usize);
    let levels = read_levels(&buf[..info.buffer_size()], bits);
    let max = bits.max_level();
    let data = levels
        .chunks_exact(channels)
        .flat_map(|px| px[..3].iter().map(move |&l| l as f64 / max))
        .collect();
    Ok((RgbImage::new(h, w, data)?, bits))
}

fn read_levels(buf: &[u8], bits: BitDepth) -> Vec<u16> {
    match bits {
        BitDepth::Eight => buf.iter().map(|&b| b as u16).collect(),
        BitDepth::Sixteen => buf
            .chunks_exact(2)
            .map(|b| u16::from_be_bytes([b[0], b[1]]))
            .collect(),
    }
}

fn encode_levels(values: &[f64], bits: BitDepth) -> Vec<u8> {
    let max = bits.max_level();
    match bits {
        BitDepth::Eight => values
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * max).round() as u8)
            .collect(),
        BitDepth::Sixteen => values
            .iter()
            .flat_map(|v| ((v.clamp(0.0, 1.0) * max).round() as u16).to_be_bytes())
            .collect(),
    }
}

fn write_png(
    path: &Path,
    width: usize,
    height: usize,
    color: png::ColorType,
    bits: BitDepth,
    bytes: &[u8],
) -> Result<()> {
    let w = BufWriter::new(create(path)?);
    let mut encoder = png::Encoder::new(w, width as u32, height as u32);
    encoder.set_color(color);
    encoder.set_depth(match bits {
        BitDepth::Eight => png::BitDepth::Eight,
        BitDepth::Sixteen => png::BitDepth::Sixteen,
    });
    let mut writer = encoder.write_header().map_err(|e| png_err(path, e))?;
    writer.write_image_data(bytes).map_err(|e| png_err(path, e))?;
    writer.finish().map_err(|e| png_err(path, e))
}

pub fn write_png_rgb(path: &Path, image: &RgbImage, bits: BitDepth) -> Result<()> {
    let bytes = encode_levels(image.data(), bits);
    write_png(path, image.width(), image.height(), png::ColorType::Rgb, bits, &bytes)
}

/// Sidecar path for a depth PNG: same stem, `.json` extension.
pub fn depth_sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

/// Loads a depth map, dispatching on extension: `.png` reads the 16-bit
/// raster plus sidecar, anything else is parsed as raw `UWDM`.
pub fn read_depth(path: &Path) -> Result<DepthMap> {
    let is_png = path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("png"));
    if is_png {
        read_depth_png(path)
    } else {
        read_depth_raw(path)
    }
}

pub fn read_depth_png(path: &Path) -> Result<DepthMap> {
    let sidecar_path = depth_sidecar_path(path);
    let sidecar: DepthSidecar = {
        let f = open(&sidecar_path)?;
        serde_json::from_reader(BufReader::new(f))?
    };
    let decoder = png::Decoder::new(BufReader::new(open(path)?));
    let mut reader = decoder.read_info().map_err(|e| png_err(path, e))?;
    let mut buf = vec![0; reader.output_buffer_size()];
    let info = reader.next_frame(&mut buf).map_err(|e| png_err(path, e))?;
    if info.color_type != png::ColorType::Grayscale || info.bit_depth != png::BitDepth::Sixteen {
        return Err(png_err(
            path,
            format!(
                "depth must be 16-bit grayscale, found {:?} {:?}",
                info.bit_depth, info.color_type
            ),
        ));
    }
    let levels = read_levels(&buf[..info.buffer_size()], BitDepth::Sixteen);
    let data = levels.iter().map(|&l| l as f64 * sidecar.scale).collect();
    DepthMap::with_scale(info.height as usize, info.width as usize, data, sidecar.scale)
}

/// Writes a 16-bit depth PNG plus sidecar. Values are quantized to
/// `round(z / scale)`.
pub fn write_depth_png(path: &Path, depth: &DepthMap, scale: f64) -> Result<()> {
    if !(scale.is_finite() && scale > 0.0) {
        return Err(Error::Validation(format!("depth scale must be > 0, got {scale}")));
    }
    let bytes: Vec<u8> = depth
        .data()
        .iter()
        .flat_map(|z| ((z / scale).round().min(65535.0) as u16).to_be_bytes())
        .collect();
    write_png(
        path,
        depth.width(),
        depth.height(),
        png::ColorType::Grayscale,
        BitDepth::Sixteen,
        &bytes,
    )?;
    let sidecar = depth_sidecar_path(path);
    let mut f = create(&sidecar)?;
    serde_json::to_writer(&mut f, &DepthSidecar { scale })?;
    f.write_all(b"\n").map_err(|e| Error::io(&sidecar, e))
}

pub fn read_depth_raw(path: &Path) -> Result<DepthMap> {
    let mut bytes = Vec::new();
    open(path)?
        .read_to_end(&mut bytes)
        .map_err(|e| Error::io(path, e))?;
    decode_depth_raw(&bytes).map_err(|e| match e {
        Error::Parse(m) => Error::Parse(format!("{}: {m}", path.display())),
        other => other,
    })
}

pub fn decode_depth_raw(bytes: &[u8]) -> Result<DepthMap> {
    if bytes.len() < 8 || &bytes[..4] != DEPTH_MAGIC {
        return Err(Error::Parse("missing UWDM depth header".into()));
    }
    let h = u16::from_le_bytes([bytes[4], bytes[5]]) as usize;
    let w = u16::from_le_bytes([bytes[6], bytes[7]]) as usize;
    let body = &bytes[8..];
    if body.len() != h * w * 4 {
        return Err(Error::Parse(format!(
            "UWDM body holds {} bytes, expected {} for {h}x{w}",
            body.len(),
            h * w * 4
        )));
    }
    let data = body
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
        .collect();
    DepthMap::new(h, w, data)
}

pub fn encode_depth_raw(depth: &DepthMap) -> Result<Vec<u8>> {
    let (h, w) = (depth.height(), depth.width());
    if h > u16::MAX as usize || w > u16::MAX as usize {
        return Err(Error::Validation(format!("{h}x{w} exceeds the UWDM size limit")));
    }
    let mut out = Vec::with_capacity(8 + h * w * 4);
    out.extend_from_slice(DEPTH_MAGIC);
    out.extend_from_slice(&(h as u16).to_le_bytes());
    out.extend_from_slice(&(w as u16).to_le_bytes());
    for z in depth.data() {
        out.extend_from_slice(&(*z as f32).to_le_bytes());
    }
    Ok(out)
}

pub fn write_depth_raw(path: &Path, depth: &DepthMap) -> Result<()> {
    let bytes = encode_depth_raw(depth)?;
    let mut f = create(path)?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))
}
