//! File formats: raw tensors (`ROAT`), 8-bit PGM previews, CSV loss curves.
//!
//! A tensor file is the magic `ROAT`, one dtype byte (0 = f32, 1 = f64),
//! one rank byte, `rank` little-endian u32 extents, then the values as
//! little-endian IEEE-754 in row-major order.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{numel, DType, Tensor};

pub const MAGIC: &[u8; 4] = b"ROAT";

pub fn encode_tensor(t: &Tensor) -> Vec<u8> {
    let width = match t.dtype() {
        DType::F32 => 4,
        DType::F64 => 8,
    };
    let mut buf = Vec::with_capacity(6 + 4 * t.rank() + width * t.len());
    buf.extend_from_slice(MAGIC);
    buf.push(t.dtype().code());
    buf.push(t.rank() as u8);
    for &d in t.shape() {
        buf.extend_from_slice(&(d as u32).to_le_bytes());
    }
    match t.dtype() {
        DType::F32 => t
            .data()
            .iter()
            .for_each(|&v| buf.extend_from_slice(&(v as f32).to_le_bytes())),
        DType::F64 => t
            .data()
            .iter()
            .for_each(|&v| buf.extend_from_slice(&v.to_le_bytes())),
    }
    buf
}

pub fn decode_tensor(bytes: &[u8]) -> Result<Tensor> {
    let bad = |m: &str| Error::Format(m.to_string());
    if bytes.len() < 6 || &bytes[..4] != MAGIC {
        return Err(bad("missing ROAT magic"));
    }
    let dtype = DType::from_code(bytes[4]).ok_or_else(|| bad("unknown dtype code"))?;
    let rank = bytes[5] as usize;
    let header = 6 + 4 * rank;
    if bytes.len() < header {
        return Err(bad("truncated header"));
    }
    let shape: Vec<usize> = bytes[6..header]
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes(c.try_into().unwrap()) as usize)
        .collect();
    let count = numel(&shape);
    let payload = &bytes[header..];
    let data: Vec<f64> = match dtype {
        DType::F32 if payload.len() == 4 * count => payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect(),
        DType::F64 if payload.len() == 8 * count => payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect(),
        _ => return Err(bad("payload length does not match shape")),
    };
    Ok(Tensor::new(&shape, data)
        .map_err(|e| Error::Format(e.to_string()))?
        .to_dtype(dtype))
}

pub fn write_tensor(path: &Path, t: &Tensor) -> Result<()> {
    fs::write(path, encode_tensor(t)).map_err(|e| Error::io(path, e))
}

pub fn read_tensor(path: &Path) -> Result<Tensor> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_tensor(&bytes)
}

/// Binary PGM (P5) of a `height × width` map, min-max scaled to 0..=255.
/// A constant map is written as all zeros.
pub fn encode_pgm(values: &[f64], height: usize, width: usize) -> Vec<u8> {
    assert_eq!(values.len(), height * width, "pgm extent mismatch");
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    let mut buf = format!("P5\n{width} {height}\n255\n").into_bytes();
    buf.extend(values.iter().map(|&v| {
        if span > 0.0 {
            ((v - lo) / span * 255.0).round() as u8
        } else {
            0
        }
    }));
    buf
}

pub fn write_pgm(path: &Path, values: &[f64], height: usize, width: usize) -> Result<()> {
    fs::write(path, encode_pgm(values, height, width)).map_err(|e| Error::io(path, e))
}

/// One `step,l_roa,total` row per training step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CurvePoint {
    pub step: usize,
    pub l_roa: f64,
    pub total: f64,
}

pub fn write_curve_csv(path: &Path, curve: &[CurvePoint]) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut body = String::from("step,l_roa,total\n");
    for p in curve {
        body.push_str(&format!("{},{},{}\n", p.step, p.l_roa, p.total));
    }
    f.write_all(body.as_bytes()).map_err(|e| Error::io(path, e))
}

pub fn read_curve_csv(path: &Path) -> Result<Vec<CurvePoint>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    if lines.next() != Some("step,l_roa,total") {
        return Err(Error::Format(format!("{}: bad curve header", path.display())));
    }
    lines
        .enumerate()
        .map(|(i, line)| {
            let bad = || Error::Format(format!("{}: bad row {}", path.display(), i + 2));
            let mut it = line.split(',');
            let step = it.next().and_then(|v| v.parse().ok()).ok_or_else(bad)?;
            let l_roa = it.next().and_then(|v| v.parse().ok()).ok_or_else(bad)?;
            let total = it.next().and_then(|v| v.parse().ok()).ok_or_else(bad)?;
            Ok(CurvePoint { step, l_roa, total })
        })
        .collect()
}
