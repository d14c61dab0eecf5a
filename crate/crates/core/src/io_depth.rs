//! 16-bit depth PNGs in the KITTI convention, plus sparsity statistics.
//!
//! A stored value `s` decodes to `s / 256` metres and `s = 0` marks an invalid
//! pixel, so the representable range is `(0, 65535/256]` metres with a
//! quantisation step of 1/256 m.

use std::io::Cursor;
use std::path::Path;

use crate::error::{Error, Result};
use crate::image::DepthImage;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DepthPngCodec {
    /// PNG units per metre.
    pub scale: f64,
    pub invalid_code: u16,
}

impl Default for DepthPngCodec {
    fn default() -> Self {
        Self { scale: 256.0, invalid_code: 0 }
    }
}

impl DepthPngCodec {
    /// Stored code for a depth; `(x, y)` only feed the error message.
    pub fn encode_value(&self, depth: f64, x: usize, y: usize) -> Result<u16> {
        if depth <= 0.0 {
            return Ok(self.invalid_code);
        }
        let s = (depth * self.scale).round();
        if s > u16::MAX as f64 {
            return Err(Error::DepthRange { depth, x, y });
        }
        // Tiny depths would round onto the invalid code; keep them valid.
        Ok((s as u16).max(1))
    }

    pub fn decode_value(&self, code: u16) -> f64 {
        if code == self.invalid_code {
            DepthImage::INVALID
        } else {
            code as f64 / self.scale
        }
    }

    /// In-memory 16-bit grayscale PNG.
    pub fn encode(&self, img: &DepthImage) -> Result<Vec<u8>> {
        let (w, h) = img.dims();
        let mut raw = Vec::with_capacity(w * h * 2);
        for y in 0..h {
            for x in 0..w {
                raw.extend_from_slice(&self.encode_value(img.get(x, y), x, y)?.to_be_bytes());
            }
        }
        let mut out = Vec::new();
        {
            let mut enc = png::Encoder::new(&mut out, dim_u32(w)?, dim_u32(h)?);
            enc.set_color(png::ColorType::Grayscale);
            enc.set_depth(png::BitDepth::Sixteen);
            let mut writer = enc.write_header()?;
            writer.write_image_data(&raw)?;
            writer.finish()?;
        }
        Ok(out)
    }

    /// Decodes PNG bytes; `origin` names the source in errors.
    pub fn decode(&self, bytes: &[u8], origin: &Path) -> Result<DepthImage> {
        let fmt = |reason: String| Error::Format { path: origin.to_path_buf(), reason };
        let mut reader = png::Decoder::new(Cursor::new(bytes)).read_info().map_err(|e| fmt(e.to_string()))?;
        let info = reader.info();
        if info.bit_depth != png::BitDepth::Sixteen || info.color_type != png::ColorType::Grayscale {
            return Err(fmt(format!(
                "expected 16-bit single-channel PNG, found {:?} {:?}",
                info.bit_depth, info.color_type
            )));
        }
        let (w, h) = (info.width as usize, info.height as usize);
        let mut buf = vec![0; reader.output_buffer_size().ok_or_else(|| fmt("image too large".into()))?];
        let frame = reader.next_frame(&mut buf).map_err(|e| fmt(e.to_string()))?;
        let bytes = &buf[..frame.buffer_size()];
        let mut data = Vec::with_capacity(w * h);
        for y in 0..h {
            let row = &bytes[y * frame.line_size..y * frame.line_size + 2 * w];
            data.extend(row.chunks_exact(2).map(|c| self.decode_value(u16::from_be_bytes([c[0], c[1]]))));
        }
        Ok(DepthImage::from_vec(w, h, data))
    }
}

fn dim_u32(n: usize) -> Result<u32> {
    u32::try_from(n).map_err(|_| Error::InvalidConfig(format!("image dimension {n} too large for PNG")))
}

pub fn write_depth_png(img: &DepthImage, path: impl AsRef<Path>) -> Result<()> {
    let bytes = DepthPngCodec::default().encode(img)?;
    std::fs::write(path, bytes)?;
    Ok(())
}

pub fn read_depth_png(path: impl AsRef<Path>) -> Result<DepthImage> {
    let path = path.as_ref();
    DepthPngCodec::default().decode(&std::fs::read(path)?, path)
}

/// Valid pixels over total pixels; 0 for an empty image.
pub fn valid_fraction(img: &DepthImage) -> f64 {
    if img.is_empty() {
        0.0
    } else {
        img.valid_count() as f64 / img.len() as f64
    }
}

/// How a depth map is reduced to a smaller grid for the statistics column.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Downsample {
    /// Each target pixel copies the source pixel nearest its centre.
    #[default]
    Nearest,
    /// A target pixel is valid if any source pixel in its footprint is; its
    /// depth is the nearest (minimum) valid depth there.
    AnyValid,
}

fn source_span(i: usize, target: usize, source: usize) -> (usize, usize) {
    let lo = i * source / target;
    let hi = ((i + 1) * source).div_ceil(target).max(lo + 1).min(source);
    (lo, hi)
}

pub fn downsample(img: &DepthImage, width: usize, height: usize, mode: Downsample) -> DepthImage {
    let (sw, sh) = img.dims();
    let mut out = DepthImage::new(width, height);
    if sw == 0 || sh == 0 {
        return out;
    }
    for ty in 0..height {
        for tx in 0..width {
            let v = match mode {
                Downsample::Nearest => {
                    let sx = (((tx as f64 + 0.5) * sw as f64 / width as f64) as usize).min(sw - 1);
                    let sy = (((ty as f64 + 0.5) * sh as f64 / height as f64) as usize).min(sh - 1);
                    img.get(sx, sy)
                }
                Downsample::AnyValid => {
                    let (x0, x1) = source_span(tx, width, sw);
                    let (y0, y1) = source_span(ty, height, sh);
                    let mut best = f64::INFINITY;
                    for y in y0..y1 {
                        for x in x0..x1 {
                            let d = img.get(x, y);
                            if d > 0.0 && d < best {
                                best = d;
                            }
                        }
                    }
                    if best.is_finite() { best } else { DepthImage::INVALID }
                }
            };
            out.set(tx, ty, v);
        }
    }
    out
}

/// Maps `t` in `[0, 1]` to a blue-to-red ramp.
fn colormap(t: f64) -> [u8; 3] {
    let t = t.clamp(0.0, 1.0);
    let ch = |c: f64| (255.0 * (1.5 - (4.0 * t - c).abs()).clamp(0.0, 1.0)).round() as u8;
    [ch(3.0), ch(2.0), ch(1.0)]
}

/// 8-bit RGB visualisation: near is blue, far is red, invalid is black.
pub fn render_colormap(img: &DepthImage, max_depth: f64) -> Result<Vec<u8>> {
    let (w, h) = img.dims();
    let mut raw = Vec::with_capacity(w * h * 3);
    for &d in img.data() {
        raw.extend_from_slice(&if d > 0.0 { colormap(d / max_depth) } else { [0, 0, 0] });
    }
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, dim_u32(w)?, dim_u32(h)?);
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc.write_header()?;
        writer.write_image_data(&raw)?;
        writer.finish()?;
    }
    Ok(out)
}
