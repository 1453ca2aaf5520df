//! File formats: 8-bit PNG for images and masks, and the weight container
//! (JSON header followed by little-endian `f32` arrays).
//!
//! Container layout:
//!
//! ```text
//! b"PBWC" | u32 LE header length | header JSON | array 0 f32 LE | array 1 ...
//! ```
//!
//! The header lists every array's name and shape in payload order.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{ImageTensor, Mask, Tensor3};

const MAGIC: &[u8; 4] = b"PBWC";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArraySpec {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Header {
    kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
    #[serde(default)]
    meta: serde_json::Value,
    arrays: Vec<ArraySpec>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NamedArray {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

/// In-memory form of the header + float32 container.
#[derive(Clone, Debug, PartialEq)]
pub struct Container {
    pub kind: String,
    pub seed: Option<u64>,
    pub meta: serde_json::Value,
    pub arrays: Vec<NamedArray>,
}

impl Container {
    pub fn new(kind: impl Into<String>) -> Self {
        Self {
            kind: kind.into(),
            seed: None,
            meta: serde_json::Value::Null,
            arrays: Vec::new(),
        }
    }

    pub fn push(&mut self, name: impl Into<String>, shape: Vec<usize>, values: Vec<f64>) {
        self.arrays.push(NamedArray {
            name: name.into(),
            shape,
            values,
        });
    }

    pub fn get(&self, name: &str) -> Result<&NamedArray> {
        self.arrays
            .iter()
            .find(|a| a.name == name)
            .ok_or_else(|| Error::Format(format!("container has no array {name:?}")))
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        for a in &self.arrays {
            if a.shape.iter().product::<usize>() != a.values.len() {
                return Err(Error::dims(format!("array {} shape/length mismatch", a.name)));
            }
        }
        let header = Header {
            kind: self.kind.clone(),
            seed: self.seed,
            meta: self.meta.clone(),
            arrays: self
                .arrays
                .iter()
                .map(|a| ArraySpec {
                    name: a.name.clone(),
                    shape: a.shape.clone(),
                })
                .collect(),
        };
        let json = serde_json::to_vec(&header).map_err(|e| Error::Format(e.to_string()))?;
        w.write_all(MAGIC)?;
        w.write_all(&(json.len() as u32).to_le_bytes())?;
        w.write_all(&json)?;
        for a in &self.arrays {
            let mut buf = Vec::with_capacity(a.values.len() * 4);
            for &v in &a.values {
                buf.extend_from_slice(&(v as f32).to_le_bytes());
            }
            w.write_all(&buf)?;
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        self.write_to(&mut out)?;
        Ok(out)
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format("bad container magic".into()));
        }
        let mut len = [0u8; 4];
        r.read_exact(&mut len)?;
        let mut json = vec![0u8; u32::from_le_bytes(len) as usize];
        r.read_exact(&mut json)?;
        let header: Header = serde_json::from_slice(&json).map_err(|e| Error::Format(e.to_string()))?;
        let mut arrays = Vec::with_capacity(header.arrays.len());
        for spec in header.arrays {
            let n: usize = spec.shape.iter().product();
            let mut raw = vec![0u8; n * 4];
            r.read_exact(&mut raw)?;
            let values = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
                .collect();
            arrays.push(NamedArray {
                name: spec.name,
                shape: spec.shape,
                values,
            });
        }
        Ok(Self {
            kind: header.kind,
            seed: header.seed,
            meta: header.meta,
            arrays,
        })
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        Self::read_from(bytes)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.write_to(std::io::BufWriter::new(file))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::read_from(std::io::BufReader::new(file))
    }
}

/// `[-1, 1]` to `0..=255`.
pub fn to_u8(v: f64) -> u8 {
    (((v.clamp(-1.0, 1.0) + 1.0) * 0.5) * 255.0).round() as u8
}

pub fn from_u8(b: u8) -> f64 {
    b as f64 / 255.0 * 2.0 - 1.0
}

/// Encodes as 8-bit RGB PNG.
pub fn encode_png(img: &ImageTensor) -> Result<Vec<u8>> {
    if img.channels != 3 {
        return Err(Error::dims(format!(
            "PNG export needs 3 channels, got {}",
            img.channels
        )));
    }
    let plane = img.plane();
    let mut rgb = Vec::with_capacity(plane * 3);
    for p in 0..plane {
        for c in 0..3 {
            rgb.push(to_u8(img.data[c * plane + p]));
        }
    }
    write_png(img.width, img.height, png::ColorType::Rgb, &rgb)
}

pub fn decode_png(bytes: &[u8]) -> Result<ImageTensor> {
    let (w, h, channels, buf) = read_png(bytes)?;
    let mut t = Tensor3::zeros(3, h, w);
    let plane = h * w;
    for p in 0..plane {
        for c in 0..3 {
            let src = if channels >= 3 { c } else { 0 };
            t.data[c * plane + p] = from_u8(buf[p * channels + src]);
        }
    }
    ImageTensor::new(t)
}

/// Encodes as 8-bit grayscale PNG (0 or 255).
pub fn encode_mask_png(m: &Mask) -> Result<Vec<u8>> {
    let bytes: Vec<u8> = m.bits().iter().map(|&b| if b { 255 } else { 0 }).collect();
    write_png(m.width, m.height, png::ColorType::Grayscale, &bytes)
}

/// Decodes a mask PNG: a first-channel value `>= 128` selects the pixel.
pub fn decode_mask_png(bytes: &[u8]) -> Result<Mask> {
    let (w, h, channels, buf) = read_png(bytes)?;
    let bits = (0..w * h).map(|p| buf[p * channels] >= 128).collect();
    Mask::from_bits(h, w, bits)
}

fn write_png(width: usize, height: usize, color: png::ColorType, data: &[u8]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, width as u32, height as u32);
        enc.set_color(color);
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc.write_header().map_err(|e| Error::Format(e.to_string()))?;
        writer
            .write_image_data(data)
            .map_err(|e| Error::Format(e.to_string()))?;
    }
    Ok(out)
}

fn read_png(bytes: &[u8]) -> Result<(usize, usize, usize, Vec<u8>)> {
    let mut dec = png::Decoder::new(std::io::Cursor::new(bytes));
    dec.set_transformations(png::Transformations::EXPAND | png::Transformations::STRIP_16);
    let mut reader = dec.read_info().map_err(|e| Error::Format(e.to_string()))?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| Error::Format("PNG too large".into()))?;
    let mut buf = vec![0u8; size];
    let info = reader.next_frame(&mut buf).map_err(|e| Error::Format(e.to_string()))?;
    let channels = info.color_type.samples();
    buf.truncate(info.buffer_size());
    Ok((info.width as usize, info.height as usize, channels, buf))
}

/// Box-filter downscale by an integer factor, used for progress previews.
pub fn downscale(img: &ImageTensor, factor: usize) -> ImageTensor {
    if factor <= 1 {
        return img.clone();
    }
    let (c, h, w) = img.shape();
    let (oh, ow) = (h / factor, w / factor);
    let mut t = Tensor3::zeros(c, oh, ow);
    let norm = (factor * factor) as f64;
    for ch in 0..c {
        for y in 0..oh {
            for x in 0..ow {
                let mut s = 0.0;
                for dy in 0..factor {
                    for dx in 0..factor {
                        s += img.at(ch, y * factor + dy, x * factor + dx);
                    }
                }
                let i = t.idx(ch, y, x);
                t.data[i] = s / norm;
            }
        }
    }
    ImageTensor::clamped(t)
}
