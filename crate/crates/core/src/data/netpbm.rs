//! Binary Netpbm codecs: P6 colour images and P5 grey masks, 8-bit only.

use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Header {
    width: usize,
    height: usize,
    maxval: usize,
    /// Offset of the first payload byte.
    data_start: usize,
}

fn parse_err(offset: usize, detail: impl Into<String>) -> Error {
    Error::Parse {
        offset,
        detail: detail.into(),
    }
}

fn parse_header(bytes: &[u8], magic: &[u8; 2]) -> Result<Header> {
    if bytes.len() < 2 || &bytes[..2] != magic {
        return Err(parse_err(
            0,
            format!("expected magic {}", String::from_utf8_lossy(magic)),
        ));
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for (k, field) in fields.iter_mut().enumerate() {
        // whitespace and comments before each field
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(_) => break,
                None => return Err(parse_err(pos, "header ended early")),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        if start == pos {
            return Err(parse_err(
                start,
                format!("expected a number for header field {k}"),
            ));
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .unwrap()
            .parse()
            .map_err(|_| parse_err(start, "header number out of range"))?;
    }
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => {
            return Err(parse_err(
                pos,
                "expected a single whitespace byte after maxval",
            ))
        }
    }
    let [width, height, maxval] = fields;
    if width == 0 || height == 0 {
        return Err(parse_err(2, "zero image extent"));
    }
    if maxval == 0 || maxval > 255 {
        return Err(parse_err(2, format!("unsupported maxval {maxval}")));
    }
    Ok(Header {
        width,
        height,
        maxval,
        data_start: pos,
    })
}

fn payload<'a>(bytes: &'a [u8], h: &Header, channels: usize) -> Result<&'a [u8]> {
    let need = h.width * h.height * channels;
    let have = bytes.len() - h.data_start;
    if have < need {
        return Err(parse_err(
            bytes.len(),
            format!("truncated payload: expected {need} bytes, found {have}"),
        ));
    }
    Ok(&bytes[h.data_start..h.data_start + need])
}

fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Encodes a `[3, H, W]` image with values in `[0, 1]` as P6.
pub fn write_ppm(image: &Tensor) -> Result<Vec<u8>> {
    let (c, h, w) = image.chw()?;
    if c != 3 {
        return Err(Error::dim(
            "channels",
            format!("PPM needs 3 channels, got {c}"),
        ));
    }
    if let Some(v) = image.values().iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::Precondition(format!(
            "pixel value {v} outside [0, 1]"
        )));
    }
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    let x = image.values();
    out.reserve(3 * h * w);
    for p in 0..h * w {
        for ch in 0..3 {
            out.push(quantize(x[ch * h * w + p]));
        }
    }
    Ok(out)
}

/// Decodes P6 into a `[3, H, W]` tensor scaled to `[0, 1]`.
pub fn read_ppm(bytes: &[u8]) -> Result<Tensor> {
    let header = parse_header(bytes, b"P6")?;
    let data = payload(bytes, &header, 3)?;
    let (h, w) = (header.height, header.width);
    let scale = header.maxval as f64;
    let mut values = vec![0.0; 3 * h * w];
    for (p, px) in data.chunks_exact(3).enumerate() {
        for ch in 0..3 {
            values[ch * h * w + p] = px[ch] as f64 / scale;
        }
    }
    Tensor::new(vec![3, h, w], values)
}

/// Binary mask as P5 with values `{0, 255}`.
pub fn write_pgm(mask: &[bool], height: usize, width: usize) -> Result<Vec<u8>> {
    if mask.len() != height * width {
        return Err(Error::dim(
            "pixels",
            format!("{} mask values for {height}x{width}", mask.len()),
        ));
    }
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend(mask.iter().map(|&m| if m { 255u8 } else { 0 }));
    Ok(out)
}

/// Decoded P5 mask: a pixel is foreground when above half of maxval.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    pub height: usize,
    pub width: usize,
    pub values: Vec<bool>,
}

pub fn read_pgm(bytes: &[u8]) -> Result<Mask> {
    let header = parse_header(bytes, b"P5")?;
    let data = payload(bytes, &header, 1)?;
    let half = header.maxval / 2;
    Ok(Mask {
        height: header.height,
        width: header.width,
        values: data.iter().map(|&v| v as usize > half).collect(),
    })
}

pub fn save(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_ppm(path: &Path) -> Result<Tensor> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    read_ppm(&bytes)
}

pub fn load_pgm(path: &Path) -> Result<Mask> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    read_pgm(&bytes)
}
