//! Image and tensor file I/O.
//!
//! VSG1 tensor layout (all integers little-endian):
//!
//! ```text
//! bytes 0..4   magic "VSG1"
//! bytes 4..8   u32 rank (always 3)
//! then         rank x u32 dims: height, width, channels
//! then         height*width*channels IEEE-754 f64, row-major, channel-minor
//! ```
//!
//! Writes go to a sibling temporary file that is renamed into place, so a
//! failed write never leaves a partial artifact behind.

use std::fs;
use std::io::Write;
use std::path::Path;

use image::{ColorType, ImageEncoder};

use crate::error::{Error, Result};
use crate::raster::{LabelMap, Raster};

pub const TENSOR_MAGIC: &[u8; 4] = b"VSG1";
const PNG_SIGNATURE: &[u8; 8] = b"\x89PNG\r\n\x1a\n";

/// Writes `bytes` to `path` through a temporary file and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let file_name = path
        .file_name()
        .ok_or_else(|| Error::io(path, std::io::Error::other("path has no file name")))?;
    let mut tmp_name = std::ffi::OsString::from(".");
    tmp_name.push(file_name);
    tmp_name.push(".tmp");
    let tmp = path.with_file_name(tmp_name);
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if let Err(e) = result {
        let _ = fs::remove_file(&tmp);
        return Err(Error::io(path, e));
    }
    Ok(())
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

/// Loads an 8-bit PGM (P5) or PNG (gray or RGB) image with values scaled to `[0, 1]`.
pub fn load_image(path: impl AsRef<Path>) -> Result<Raster> {
    let bytes = read_file(path.as_ref())?;
    decode_image(&bytes)
}

/// Decodes PGM (P5) or PNG bytes; see [`load_image`].
pub fn decode_image(bytes: &[u8]) -> Result<Raster> {
    if bytes.starts_with(b"P5") {
        decode_pgm(bytes)
    } else if bytes.starts_with(PNG_SIGNATURE) {
        decode_png(bytes)
    } else if bytes.len() < 2 {
        Err(Error::UnexpectedEof)
    } else {
        Err(Error::UnsupportedFormat(
            "expected a binary PGM (P5) or PNG file".into(),
        ))
    }
}

fn decode_pgm(bytes: &[u8]) -> Result<Raster> {
    let mut pos = 2;
    let mut header = [0usize; 3];
    for field in header.iter_mut() {
        // whitespace and comments
        loop {
            match bytes.get(pos) {
                None => return Err(Error::UnexpectedEof),
                Some(b'#') => {
                    while let Some(&b) = bytes.get(pos) {
                        pos += 1;
                        if b == b'\n' {
                            break;
                        }
                    }
                }
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(_) => break,
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        if pos == start {
            return match bytes.get(pos) {
                None => Err(Error::UnexpectedEof),
                Some(_) => Err(Error::Decode("malformed PGM header".into())),
            };
        }
        let text = std::str::from_utf8(&bytes[start..pos]).expect("ascii digits");
        *field = text
            .parse()
            .map_err(|_| Error::DimensionOverflow(format!("PGM header value {text}")))?;
    }
    let [width, height, maxval] = header;
    match bytes.get(pos) {
        None => return Err(Error::UnexpectedEof),
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        Some(_) => return Err(Error::Decode("malformed PGM header".into())),
    }
    if width == 0 || height == 0 {
        return Err(Error::ZeroDimension(format!("PGM {width}x{height}")));
    }
    if maxval == 0 || maxval > 255 {
        return Err(Error::UnsupportedFormat(format!(
            "PGM maxval {maxval} (only 8-bit images are supported)"
        )));
    }
    let n = width
        .checked_mul(height)
        .ok_or_else(|| Error::DimensionOverflow(format!("PGM {width}x{height}")))?;
    let pixels = bytes.get(pos..pos + n).ok_or(Error::UnexpectedEof)?;
    let scale = maxval as f64;
    let data = pixels.iter().map(|&b| f64::from(b) / scale).collect();
    Raster::new(height, width, 1, data)
}

fn decode_png(bytes: &[u8]) -> Result<Raster> {
    let img =
        image::load_from_memory_with_format(bytes, image::ImageFormat::Png).map_err(
            |e| match e {
                image::ImageError::IoError(ref io)
                    if io.kind() == std::io::ErrorKind::UnexpectedEof =>
                {
                    Error::UnexpectedEof
                }
                other => Error::Decode(other.to_string()),
            },
        )?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    if w == 0 || h == 0 {
        return Err(Error::ZeroDimension(format!("PNG {w}x{h}")));
    }
    let (channels, raw) = match img.color() {
        ColorType::L8 | ColorType::La8 => (1, img.into_luma8().into_raw()),
        ColorType::Rgb8 | ColorType::Rgba8 => (3, img.into_rgb8().into_raw()),
        other => {
            return Err(Error::UnsupportedFormat(format!(
                "PNG color type {other:?} (only 8-bit gray/RGB are supported)"
            )))
        }
    };
    let data = raw.iter().map(|&b| f64::from(b) / 255.0).collect();
    Raster::new(h, w, channels, data)
}

/// Serializes a raster in the VSG1 layout.
pub fn encode_tensor(raster: &Raster) -> Result<Vec<u8>> {
    let dims = [raster.height(), raster.width(), raster.channels()];
    let mut out = Vec::with_capacity(8 + 12 + raster.data().len() * 8);
    out.extend_from_slice(TENSOR_MAGIC);
    out.extend_from_slice(&3u32.to_le_bytes());
    for d in dims {
        let d = u32::try_from(d)
            .map_err(|_| Error::DimensionOverflow(format!("dimension {d} exceeds u32")))?;
        out.extend_from_slice(&d.to_le_bytes());
    }
    for v in raster.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

/// Parses VSG1 bytes produced by [`encode_tensor`].
pub fn decode_tensor(bytes: &[u8]) -> Result<Raster> {
    let magic = bytes.get(0..4).ok_or(Error::UnexpectedEof)?;
    if magic != TENSOR_MAGIC {
        return Err(Error::BadMagic {
            expected: "VSG1".into(),
            found: String::from_utf8_lossy(magic).into_owned(),
        });
    }
    let read_u32 = |at: usize| -> Result<u32> {
        let b = bytes.get(at..at + 4).ok_or(Error::UnexpectedEof)?;
        Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")))
    };
    let rank = read_u32(4)?;
    if rank != 3 {
        return Err(Error::UnsupportedFormat(format!(
            "tensor rank {rank} (expected 3)"
        )));
    }
    let dims = [read_u32(8)?, read_u32(12)?, read_u32(16)?].map(|d| d as usize);
    let [h, w, c] = dims;
    let count = h
        .checked_mul(w)
        .and_then(|n| n.checked_mul(c))
        .filter(|n| n.checked_mul(8).is_some())
        .ok_or_else(|| Error::DimensionOverflow(format!("{h}x{w}x{c}")))?;
    let payload = &bytes[20..];
    if payload.len() != count * 8 {
        return Err(Error::LengthMismatch {
            expected: count,
            found: payload.len() / 8,
        });
    }
    let data = payload
        .chunks_exact(8)
        .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
        .collect();
    Raster::new(h, w, c, data)
}

pub fn write_tensor(raster: &Raster, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path.as_ref(), &encode_tensor(raster)?)
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<Raster> {
    decode_tensor(&read_file(path.as_ref())?)
}

/// Label map as a single-channel raster of class indices.
pub fn labels_to_raster(labels: &LabelMap) -> Raster {
    Raster::from_parts(
        labels.height(),
        labels.width(),
        1,
        labels.labels().iter().map(|&l| l as f64).collect(),
    )
}

/// Inverse of [`labels_to_raster`]; entries must be integral class indices.
pub fn labels_from_raster(raster: &Raster, classes: usize) -> Result<LabelMap> {
    if raster.channels() != 1 {
        return Err(Error::ShapeMismatch(format!(
            "label raster must have 1 channel, found {}",
            raster.channels()
        )));
    }
    let mut labels = Vec::with_capacity(raster.pixels());
    for (index, &v) in raster.data().iter().enumerate() {
        if v < 0.0 || v.fract() != 0.0 {
            return Err(Error::Decode(format!(
                "label value {v} at index {index} is not a class index"
            )));
        }
        labels.push(v as usize);
    }
    LabelMap::new(raster.height(), raster.width(), classes, labels)
}

/// Fixed overlay color of a class (the PASCAL VOC bit-interleaved colormap:
/// 0 black, 1 dark red, 2 dark green, 3 olive, 4 navy, ...).
pub fn palette_color(class: usize) -> [u8; 3] {
    let mut rgb = [0u8; 3];
    let mut id = class;
    let mut shift = 7i32;
    while id > 0 && shift >= 0 {
        for (ch, slot) in rgb.iter_mut().enumerate() {
            *slot |= (((id >> ch) & 1) as u8) << shift;
        }
        id >>= 3;
        shift -= 1;
    }
    rgb
}

fn encode_png(
    width: usize,
    height: usize,
    color: image::ExtendedColorType,
    raw: &[u8],
) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    image::codecs::png::PngEncoder::new(&mut out)
        .write_image(raw, width as u32, height as u32, color)
        .map_err(|e| Error::Decode(format!("png encode: {e}")))?;
    Ok(out)
}

fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Writes a 1- or 3-channel `[0, 1]` raster as an 8-bit PNG.
pub fn save_png(raster: &Raster, path: impl AsRef<Path>) -> Result<()> {
    let color = match raster.channels() {
        1 => image::ExtendedColorType::L8,
        3 => image::ExtendedColorType::Rgb8,
        c => {
            return Err(Error::UnsupportedFormat(format!(
                "cannot write a {c}-channel PNG"
            )))
        }
    };
    let raw: Vec<u8> = raster.data().iter().map(|&v| to_u8(v)).collect();
    let bytes = encode_png(raster.width(), raster.height(), color, &raw)?;
    write_atomic(path.as_ref(), &bytes)
}

/// Writes a label map as an RGB PNG using [`palette_color`].
pub fn save_label_png(labels: &LabelMap, path: impl AsRef<Path>) -> Result<()> {
    let raw: Vec<u8> = labels
        .labels()
        .iter()
        .flat_map(|&l| palette_color(l))
        .collect();
    let bytes = encode_png(
        labels.width(),
        labels.height(),
        image::ExtendedColorType::Rgb8,
        &raw,
    )?;
    write_atomic(path.as_ref(), &bytes)
}
