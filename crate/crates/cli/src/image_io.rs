//! Linear RGB image files: 8/16-bit sRGB PNG and float OpenEXR.

use std::path::Path;

use image::{DynamicImage, ImageFormat, Rgb32FImage, RgbImage};
use matinfer_core::{Grid, Shape};

#[derive(Debug, thiserror::Error)]
pub enum ImageError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}: unsupported image format (not PNG or OpenEXR) at byte offset 0")]
    Unsupported { path: String },
    #[error("{path}: corrupt {format} data at byte offset {offset}: {reason}")]
    Corrupt { path: String, format: &'static str, offset: usize, reason: String },
    #[error("{path}: {reason}")]
    Encode { path: String, reason: String },
}

const PNG_SIGNATURE: [u8; 8] = [0x89, b'P', b'N', b'G', 0x0d, 0x0a, 0x1a, 0x0a];
const EXR_MAGIC: [u8; 4] = [0x76, 0x2f, 0x31, 0x01];

/// sRGB encoded value in `[0, 1]` to linear.
pub fn srgb_to_linear(c: f64) -> f64 {
    if c <= 0.04045 {
        c / 12.92
    } else {
        ((c + 0.055) / 1.055).powf(2.4)
    }
}

/// Linear value to sRGB encoding, clamped to `[0, 1]`.
pub fn linear_to_srgb(v: f64) -> f64 {
    let v = v.clamp(0.0, 1.0);
    if v <= 0.0031308 {
        v * 12.92
    } else {
        1.055 * v.powf(1.0 / 2.4) - 0.055
    }
}

pub fn encode_srgb8(v: f64) -> u8 {
    (linear_to_srgb(v) * 255.0).round() as u8
}

/// Walk the PNG chunk list, checking lengths and CRCs. Returns the offset of
/// the first image data chunk, or the offset and reason of the first defect.
fn check_png(bytes: &[u8]) -> Result<usize, (usize, String)> {
    let mut pos = PNG_SIGNATURE.len();
    let mut data = None;
    loop {
        if pos + 8 > bytes.len() {
            return Err((pos, "truncated chunk header".into()));
        }
        let len = u32::from_be_bytes(bytes[pos..pos + 4].try_into().unwrap()) as usize;
        let kind = &bytes[pos + 4..pos + 8];
        let end = pos + 8 + len;
        if end + 4 > bytes.len() {
            return Err((pos, format!("chunk {} runs past end of file", String::from_utf8_lossy(kind))));
        }
        let stored = u32::from_be_bytes(bytes[end..end + 4].try_into().unwrap());
        if crc32fast::hash(&bytes[pos + 4..end]) != stored {
            return Err((pos, format!("CRC mismatch in chunk {}", String::from_utf8_lossy(kind))));
        }
        if kind == b"IDAT" && data.is_none() {
            data = Some(pos);
        }
        if kind == b"IEND" {
            return data.ok_or((pos, "no image data".into()));
        }
        pos = end + 4;
    }
}

/// Walk the OpenEXR header attributes and offset table bounds. Returns the
/// offset of the first pixel chunk.
fn check_exr(bytes: &[u8]) -> Result<usize, (usize, String)> {
    let mut pos = 8;
    if bytes.len() < pos {
        return Err((4, "truncated version field".into()));
    }
    let cstr = |pos: usize| -> Result<usize, (usize, String)> {
        bytes[pos..].iter().position(|&b| b == 0).map(|n| pos + n + 1).ok_or((pos, "unterminated header string".into()))
    };
    loop {
        if pos >= bytes.len() {
            return Err((pos, "header runs past end of file".into()));
        }
        if bytes[pos] == 0 {
            pos += 1;
            break;
        }
        let after_name = cstr(pos)?;
        let after_type = cstr(after_name)?;
        if after_type + 4 > bytes.len() {
            return Err((after_type, "truncated attribute size".into()));
        }
        let size = i32::from_le_bytes(bytes[after_type..after_type + 4].try_into().unwrap());
        if size < 0 || after_type + 4 + size as usize > bytes.len() {
            return Err((after_type, "attribute runs past end of file".into()));
        }
        pos = after_type + 4 + size as usize;
    }
    if pos + 8 > bytes.len() {
        return Err((pos, "missing chunk offset table".into()));
    }
    let first = u64::from_le_bytes(bytes[pos..pos + 8].try_into().unwrap());
    if first as usize >= bytes.len() {
        return Err((pos, format!("chunk offset {first} past end of file")));
    }
    Ok(first as usize)
}

fn corrupt(path: &Path, format: &'static str, (offset, reason): (usize, String)) -> ImageError {
    ImageError::Corrupt { path: path.display().to_string(), format, offset, reason }
}

/// Decode an image into linear RGB. PNG values are treated as sRGB encoded;
/// EXR values pass through.
pub fn decode_image(bytes: &[u8], path: &Path) -> Result<Grid, ImageError> {
    let (format, name, srgb, data_offset) = if bytes.starts_with(&PNG_SIGNATURE) {
        let offset = check_png(bytes).map_err(|e| corrupt(path, "PNG", e))?;
        (ImageFormat::Png, "PNG", true, offset)
    } else if bytes.starts_with(&EXR_MAGIC) {
        let offset = check_exr(bytes).map_err(|e| corrupt(path, "OpenEXR", e))?;
        (ImageFormat::OpenExr, "OpenEXR", false, offset)
    } else {
        return Err(ImageError::Unsupported { path: path.display().to_string() });
    };
    let img = image::load_from_memory_with_format(bytes, format)
        .map_err(|e| corrupt(path, name, (data_offset, e.to_string())))?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let shape = Shape::new(h, w, 3);
    let data: Vec<f64> = match &img {
        DynamicImage::ImageLuma8(_) | DynamicImage::ImageLumaA8(_) | DynamicImage::ImageRgb8(_) | DynamicImage::ImageRgba8(_) => {
            let lut: Vec<f64> = (0..256).map(|v| srgb_to_linear(v as f64 / 255.0)).collect();
            img.to_rgb8().into_raw().into_iter().map(|v| lut[v as usize]).collect()
        }
        _ if srgb => img.to_rgb16().into_raw().into_iter().map(|v| srgb_to_linear(v as f64 / 65535.0)).collect(),
        _ => img.to_rgb32f().into_raw().into_iter().map(f64::from).collect(),
    };
    Ok(Grid::new(shape, data))
}

pub fn load_image(path: &Path) -> Result<Grid, ImageError> {
    let bytes = std::fs::read(path).map_err(|source| ImageError::Io { path: path.display().to_string(), source })?;
    decode_image(&bytes, path)
}

fn check_rgb(grid: &Grid, path: &Path) -> Result<(u32, u32), ImageError> {
    let s = grid.shape();
    if s.channels != 3 {
        return Err(ImageError::Encode { path: path.display().to_string(), reason: format!("expected RGB, got {s}") });
    }
    Ok((s.width as u32, s.height as u32))
}

/// 8-bit sRGB PNG bytes.
pub fn encode_png(grid: &Grid) -> Result<Vec<u8>, ImageError> {
    let path = Path::new("<memory>");
    let (w, h) = check_rgb(grid, path)?;
    let raw = grid.data().iter().map(|&v| encode_srgb8(v)).collect();
    let img = RgbImage::from_raw(w, h, raw).expect("buffer matches dimensions");
    let mut out = std::io::Cursor::new(Vec::new());
    img.write_to(&mut out, ImageFormat::Png)
        .map_err(|e| ImageError::Encode { path: path.display().to_string(), reason: e.to_string() })?;
    Ok(out.into_inner())
}

/// Write by extension: `.png` as 8-bit sRGB, `.exr` as linear float.
pub fn save_image(grid: &Grid, path: &Path) -> Result<(), ImageError> {
    let err = |reason: String| ImageError::Encode { path: path.display().to_string(), reason };
    let (w, h) = check_rgb(grid, path)?;
    let ext = path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
    let bytes = match ext.as_deref() {
        Some("png") => encode_png(grid)?,
        Some("exr") => {
            let raw = grid.data().iter().map(|&v| v as f32).collect();
            let img = Rgb32FImage::from_raw(w, h, raw).expect("buffer matches dimensions");
            let mut out = std::io::Cursor::new(Vec::new());
            img.write_to(&mut out, ImageFormat::OpenExr).map_err(|e| err(e.to_string()))?;
            out.into_inner()
        }
        _ => return Err(err("unsupported extension; use .png or .exr".into())),
    };
    std::fs::write(path, bytes).map_err(|source| ImageError::Io { path: path.display().to_string(), source })
}

/// Round a grid through `f32` as an EXR file would store it.
pub fn quantize_f32(grid: &Grid) -> Grid {
    grid.map(|v| v as f32 as f64)
}
