//! Binary Netpbm: PPM (`P6`) for images and PGM (`P5`) for label and instance maps.
//! Only 8-bit payloads (maxval ≤ 255) are accepted; files are written with maxval 255.

use std::path::Path;

use super::{LabelMap, SegSample};
use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

const FORMAT: &str = "PNM";
/// Largest accepted width or height.
pub const MAX_EXTENT: usize = 1 << 15;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Pnm {
    pub width: usize,
    pub height: usize,
    /// 1 for PGM, 3 for PPM.
    pub channels: usize,
    pub maxval: u16,
    pub data: Vec<u8>,
}

fn skip_space_and_comments(bytes: &[u8], pos: &mut usize) {
    while *pos < bytes.len() {
        match bytes[*pos] {
            b' ' | b'\t' | b'\n' | b'\r' | 0x0b | 0x0c => *pos += 1,
            b'#' => {
                while *pos < bytes.len() && bytes[*pos] != b'\n' {
                    *pos += 1;
                }
            }
            _ => break,
        }
    }
}

fn header_number(bytes: &[u8], pos: &mut usize, what: &str) -> Result<usize> {
    skip_space_and_comments(bytes, pos);
    let start = *pos;
    while *pos < bytes.len() && bytes[*pos].is_ascii_digit() {
        *pos += 1;
    }
    if start == *pos {
        return Err(Error::format(FORMAT, format!("missing {what}")));
    }
    if *pos - start > 6 {
        return Err(Error::format(FORMAT, format!("{what} too large")));
    }
    let text = std::str::from_utf8(&bytes[start..*pos]).expect("ascii digits");
    text.parse()
        .map_err(|_| Error::format(FORMAT, format!("bad {what}")))
}

pub fn decode(bytes: &[u8]) -> Result<Pnm> {
    let channels = match bytes.get(..2) {
        Some(b"P5") => 1,
        Some(b"P6") => 3,
        _ => return Err(Error::format(FORMAT, "expected magic P5 or P6")),
    };
    let mut pos = 2;
    let width = header_number(bytes, &mut pos, "width")?;
    let height = header_number(bytes, &mut pos, "height")?;
    let maxval = header_number(bytes, &mut pos, "maxval")?;
    if width == 0 || height == 0 || width > MAX_EXTENT || height > MAX_EXTENT {
        return Err(Error::format(FORMAT, format!("unsupported size {width}x{height}")));
    }
    if maxval == 0 || maxval > 255 {
        return Err(Error::format(FORMAT, format!("maxval {maxval} is not 8-bit")));
    }
    match bytes.get(pos) {
        Some(c) if c.is_ascii_whitespace() => pos += 1,
        _ => return Err(Error::format(FORMAT, "header not terminated by whitespace")),
    }
    let len = width * height * channels;
    let payload = &bytes[pos..];
    if payload.len() < len {
        return Err(Error::format(
            FORMAT,
            format!("payload truncated: {} of {len} bytes", payload.len()),
        ));
    }
    if payload.len() > len {
        return Err(Error::format(FORMAT, format!("{} trailing bytes", payload.len() - len)));
    }
    Ok(Pnm {
        width,
        height,
        channels,
        maxval: maxval as u16,
        data: payload.to_vec(),
    })
}

pub fn encode(width: usize, height: usize, channels: usize, data: &[u8]) -> Vec<u8> {
    assert_eq!(data.len(), width * height * channels, "payload size");
    let magic = if channels == 3 { "P6" } else { "P5" };
    let mut out = format!("{magic}\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(data);
    out
}

/// Decodes a `P6` file into a (1, 3, h, w) tensor scaled to [0, 1].
pub fn decode_image(bytes: &[u8]) -> Result<Tensor> {
    let p = decode(bytes)?;
    if p.channels != 3 {
        return Err(Error::format(FORMAT, "expected a P6 color image"));
    }
    let mut t = Tensor::zeros(Shape::new(1, 3, p.height, p.width));
    let scale = p.maxval as f64;
    for y in 0..p.height {
        for x in 0..p.width {
            for c in 0..3 {
                let v = p.data[(y * p.width + x) * 3 + c] as f64 / scale;
                t.set(0, c, y, x, v);
            }
        }
    }
    Ok(t)
}

/// Quantizes a (1, 3, h, w) tensor to 8 bits per channel.
pub fn encode_image(image: &Tensor) -> Vec<u8> {
    let s = image.shape();
    let mut data = Vec::with_capacity(s.h * s.w * 3);
    for y in 0..s.h {
        for x in 0..s.w {
            for c in 0..3 {
                data.push(quantize(image.at(0, c, y, x)));
            }
        }
    }
    encode(s.w, s.h, 3, &data)
}

pub fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn decode_map(bytes: &[u8]) -> Result<LabelMap> {
    let p = decode(bytes)?;
    if p.channels != 1 {
        return Err(Error::format(FORMAT, "expected a P5 grayscale map"));
    }
    Ok(LabelMap {
        height: p.height,
        width: p.width,
        data: p.data,
    })
}

pub fn encode_map(map: &LabelMap) -> Vec<u8> {
    encode(map.width, map.height, 1, &map.data)
}

fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_map(path: &Path) -> Result<LabelMap> {
    decode_map(&read(path)?).map_err(|e| annotate(e, path))
}

pub fn write_map(path: &Path, map: &LabelMap) -> Result<()> {
    write(path, &encode_map(map))
}

fn annotate(e: Error, path: &Path) -> Error {
    match e {
        Error::Format { format, detail } => Error::Format {
            format,
            detail: format!("{}: {detail}", path.display()),
        },
        other => other,
    }
}

/// Reads an image/label pair (plus instances when given) and validates the labels
/// against `classes`; 255 marks ignored pixels.
pub fn read_sample(
    image: &Path,
    label: &Path,
    instances: Option<&Path>,
    classes: usize,
    ignore: u8,
) -> Result<SegSample> {
    let img = decode_image(&read(image)?).map_err(|e| annotate(e, image))?;
    let lab = read_map(label)?;
    let s = img.shape();
    if (lab.height, lab.width) != (s.h, s.w) {
        return Err(Error::format(
            FORMAT,
            format!("{}: label size differs from image", label.display()),
        ));
    }
    if let Some(bad) = lab.data.iter().find(|&&l| l != ignore && l as usize >= classes) {
        return Err(Error::format(
            FORMAT,
            format!("{}: label {bad} outside {classes} classes", label.display()),
        ));
    }
    let inst = match instances {
        Some(p) => {
            let m = read_map(p)?;
            if (m.height, m.width) != (s.h, s.w) {
                return Err(Error::format(
                    FORMAT,
                    format!("{}: instance map size differs from image", p.display()),
                ));
            }
            Some(m)
        }
        None => None,
    };
    Ok(SegSample {
        image: img,
        label: lab,
        instances: inst,
    })
}

pub fn write_sample(sample: &SegSample, image: &Path, label: &Path, instances: Option<&Path>) -> Result<()> {
    write(image, &encode_image(&sample.image))?;
    write_map(label, &sample.label)?;
    if let (Some(path), Some(inst)) = (instances, &sample.instances) {
        write_map(path, inst)?;
    }
    Ok(())
}
