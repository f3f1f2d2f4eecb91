//! Middlebury `.flo`, PFM and binary PGM/PPM encoders and decoders.
//!
//! Every format has a byte-level `encode_*`/`decode_*` pair plus path
//! wrappers. Values are stored as 32-bit floats, so a round trip is exact for
//! any field whose samples are representable in `f32`.

use std::fs;
use std::path::Path;

use rigidflow_core::{DepthMap, FlowField, ImageBuffer, ValidMask};
use thiserror::Error;

/// The float 202021.25 whose little-endian bytes spell "PIEH".
pub const FLO_MAGIC: f32 = 202021.25;

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("not a flow file")]
    NotFlowFile,
    #[error("corrupt flow file")]
    CorruptFlowFile,
    #[error("malformed PFM header: {0}")]
    PfmHeader(String),
    #[error("PFM payload has {actual} bytes, expected {expected}")]
    PfmPayload { expected: usize, actual: usize },
    #[error("malformed PNM file: {0}")]
    Pnm(String),
    #[error("unsupported channel count {0}")]
    Channels(usize),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Core(#[from] rigidflow_core::Error),
}

pub type Result<T, E = FormatError> = std::result::Result<T, E>;

pub fn encode_flo(flow: &FlowField) -> Vec<u8> {
    let (w, h) = flow.dims();
    let mut out = Vec::with_capacity(12 + 8 * w * h);
    out.extend_from_slice(&FLO_MAGIC.to_le_bytes());
    out.extend_from_slice(&(w as i32).to_le_bytes());
    out.extend_from_slice(&(h as i32).to_le_bytes());
    for (u, v) in flow.u().iter().zip(flow.v()) {
        out.extend_from_slice(&(*u as f32).to_le_bytes());
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    out
}

pub fn decode_flo(bytes: &[u8]) -> Result<FlowField> {
    if bytes.len() < 4 || f32::from_le_bytes(word(bytes, 0)) != FLO_MAGIC {
        return Err(FormatError::NotFlowFile);
    }
    if bytes.len() < 12 {
        return Err(FormatError::CorruptFlowFile);
    }
    let w = i32::from_le_bytes(word(bytes, 4));
    let h = i32::from_le_bytes(word(bytes, 8));
    if w <= 0 || h <= 0 {
        return Err(FormatError::CorruptFlowFile);
    }
    let (w, h) = (w as usize, h as usize);
    let expected = w
        .checked_mul(h)
        .and_then(|n| n.checked_mul(8))
        .ok_or(FormatError::CorruptFlowFile)?;
    let payload = &bytes[12..];
    if payload.len() != expected {
        return Err(FormatError::CorruptFlowFile);
    }
    let mut u = Vec::with_capacity(w * h);
    let mut v = Vec::with_capacity(w * h);
    for pair in payload.chunks_exact(8) {
        u.push(f32::from_le_bytes(word(pair, 0)) as f64);
        v.push(f32::from_le_bytes(word(pair, 4)) as f64);
    }
    Ok(FlowField::new(w, h, u, v)?)
}

pub fn read_flo(path: impl AsRef<Path>) -> Result<FlowField> {
    decode_flo(&fs::read(path)?)
}

pub fn write_flo(path: impl AsRef<Path>, flow: &FlowField) -> Result<()> {
    Ok(fs::write(path, encode_flo(flow))?)
}

fn word(bytes: &[u8], at: usize) -> [u8; 4] {
    [bytes[at], bytes[at + 1], bytes[at + 2], bytes[at + 3]]
}

/// A PFM raster in top-down row order with interleaved channels.
#[derive(Debug, Clone, PartialEq)]
pub struct Pfm {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f32>,
}

impl Pfm {
    pub fn from_depth(depth: &DepthMap) -> Self {
        let (width, height) = depth.dims();
        Self {
            width,
            height,
            channels: 1,
            data: depth.values().iter().map(|v| *v as f32).collect(),
        }
    }

    pub fn from_image(image: &ImageBuffer) -> Result<Self> {
        let (width, height) = image.dims();
        let channels = image.channels();
        if channels != 1 && channels != 3 {
            return Err(FormatError::Channels(channels));
        }
        Ok(Self {
            width,
            height,
            channels,
            data: image.data().iter().map(|v| *v as f32).collect(),
        })
    }

    pub fn to_depth(&self) -> Result<DepthMap> {
        if self.channels != 1 {
            return Err(FormatError::Channels(self.channels));
        }
        Ok(DepthMap::new(self.width, self.height, self.widened())?)
    }

    pub fn to_image(&self) -> Result<ImageBuffer> {
        Ok(ImageBuffer::new(
            self.width,
            self.height,
            self.channels,
            self.widened(),
        )?)
    }

    pub fn widened(&self) -> Vec<f64> {
        self.data.iter().map(|v| *v as f64).collect()
    }
}

pub fn encode_pfm(pfm: &Pfm) -> Vec<u8> {
    let magic = if pfm.channels == 3 { "PF" } else { "Pf" };
    let mut out = format!("{magic}\n{} {}\n-1.0\n", pfm.width, pfm.height).into_bytes();
    let row = pfm.width * pfm.channels;
    for y in (0..pfm.height).rev() {
        for v in &pfm.data[y * row..(y + 1) * row] {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

/// Splits off whitespace-separated header tokens, returning them and the
/// offset just past the single whitespace byte that ends the last one.
fn header_tokens(bytes: &[u8], count: usize) -> Option<(Vec<&str>, usize)> {
    let mut tokens = Vec::with_capacity(count);
    let mut i = 0;
    while tokens.len() < count {
        while i < bytes.len() && bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        if i < bytes.len() && bytes[i] == b'#' {
            while i < bytes.len() && bytes[i] != b'\n' {
                i += 1;
            }
            continue;
        }
        let start = i;
        while i < bytes.len() && !bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        if start == i {
            return None;
        }
        tokens.push(std::str::from_utf8(&bytes[start..i]).ok()?);
    }
    (i < bytes.len()).then_some((tokens, i + 1))
}

fn dimension(token: &str, what: &str) -> std::result::Result<usize, String> {
    let value: i64 = token
        .parse()
        .map_err(|_| format!("{what} {token:?} is not an integer"))?;
    if value <= 0 {
        return Err(format!("{what} must be positive, got {value}"));
    }
    Ok(value as usize)
}

pub fn decode_pfm(bytes: &[u8]) -> Result<Pfm> {
    let header = |m: String| FormatError::PfmHeader(m);
    let (tokens, start) = header_tokens(bytes, 4).ok_or_else(|| header("incomplete header".into()))?;
    let channels = match tokens[0] {
        "Pf" => 1,
        "PF" => 3,
        other => return Err(header(format!("unknown magic {other:?}"))),
    };
    let width = dimension(tokens[1], "width").map_err(header)?;
    let height = dimension(tokens[2], "height").map_err(header)?;
    let scale: f64 = tokens[3]
        .parse()
        .map_err(|_| header(format!("scale {:?} is not a number", tokens[3])))?;
    if scale == 0.0 || !scale.is_finite() {
        return Err(header(format!("scale must be nonzero and finite, got {scale}")));
    }
    let little_endian = scale < 0.0;
    let row = width * channels;
    let expected = row * height * 4;
    let payload = &bytes[start..];
    if payload.len() != expected {
        return Err(FormatError::PfmPayload {
            expected,
            actual: payload.len(),
        });
    }
    let mut data = vec![0.0f32; row * height];
    for (k, chunk) in payload.chunks_exact(4).enumerate() {
        let bytes = word(chunk, 0);
        let value = if little_endian {
            f32::from_le_bytes(bytes)
        } else {
            f32::from_be_bytes(bytes)
        };
        let (file_row, col) = (k / row, k % row);
        data[(height - 1 - file_row) * row + col] = value;
    }
    Ok(Pfm {
        width,
        height,
        channels,
        data,
    })
}

pub fn read_pfm(path: impl AsRef<Path>) -> Result<Pfm> {
    decode_pfm(&fs::read(path)?)
}

pub fn write_pfm(path: impl AsRef<Path>, pfm: &Pfm) -> Result<()> {
    Ok(fs::write(path, encode_pfm(pfm))?)
}

pub fn read_depth(path: impl AsRef<Path>) -> Result<DepthMap> {
    read_pfm(path)?.to_depth()
}

pub fn write_depth(path: impl AsRef<Path>, depth: &DepthMap) -> Result<()> {
    write_pfm(path, &Pfm::from_depth(depth))
}

pub fn read_image(path: impl AsRef<Path>) -> Result<ImageBuffer> {
    read_pfm(path)?.to_image()
}

pub fn write_image(path: impl AsRef<Path>, image: &ImageBuffer) -> Result<()> {
    write_pfm(path, &Pfm::from_image(image)?)
}

/// Binary PGM with 255 for valid pixels and 0 elsewhere.
pub fn encode_mask(mask: &ValidMask) -> Vec<u8> {
    let (w, h) = mask.dims();
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.extend(mask.bits().iter().map(|&b| if b { 255u8 } else { 0 }));
    out
}

/// Reads an 8-bit binary PGM; samples at or above half the maximum are valid.
pub fn decode_mask(bytes: &[u8]) -> Result<ValidMask> {
    let (tokens, start) = header_tokens(bytes, 4).ok_or_else(|| FormatError::Pnm("incomplete header".into()))?;
    if tokens[0] != "P5" {
        return Err(FormatError::Pnm(format!("expected P5, found {:?}", tokens[0])));
    }
    let w = dimension(tokens[1], "width").map_err(FormatError::Pnm)?;
    let h = dimension(tokens[2], "height").map_err(FormatError::Pnm)?;
    let max: u16 = tokens[3]
        .parse()
        .map_err(|_| FormatError::Pnm("bad maximum value".into()))?;
    if max == 0 || max > 255 {
        return Err(FormatError::Pnm(format!("unsupported maximum value {max}")));
    }
    let payload = &bytes[start..];
    if payload.len() != w * h {
        return Err(FormatError::Pnm(format!(
            "expected {} samples, found {}",
            w * h,
            payload.len()
        )));
    }
    let threshold = max.div_ceil(2);
    Ok(ValidMask::new(
        w,
        h,
        payload.iter().map(|&b| u16::from(b) >= threshold).collect(),
    )?)
}

pub fn read_mask(path: impl AsRef<Path>) -> Result<ValidMask> {
    decode_mask(&fs::read(path)?)
}

pub fn write_mask(path: impl AsRef<Path>, mask: &ValidMask) -> Result<()> {
    Ok(fs::write(path, encode_mask(mask))?)
}

/// Binary PPM from 8-bit RGB triples in row-major order.
pub fn encode_ppm(width: usize, height: usize, rgb: &[[u8; 3]]) -> Vec<u8> {
    let mut out = format!("P6\n{width} {height}\n255\n").into_bytes();
    out.extend(rgb.iter().flatten());
    out
}
