//! `EMT1` tensor files and PGM export of score maps.
//!
//! Tensor file layout, all integers and floats little-endian:
//!
//! | offset        | size            | content                     |
//! |---------------|-----------------|-----------------------------|
//! | 0             | 4               | ASCII `EMT1`                |
//! | 4             | 1               | rank (2 or 3)               |
//! | 5             | 4 * rank        | dims as `u32`               |
//! | 5 + 4 * rank  | 4 * prod(dims)  | row-major `f32` payload     |

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{Channel, ScoreMap, Tensor};

pub const MAGIC: [u8; 4] = *b"EMT1";

pub fn encode_tensor(t: &Tensor) -> Result<Vec<u8>> {
    if !(2..=3).contains(&t.rank()) {
        return Err(Error::UnsupportedRank(t.rank() as u8));
    }
    let mut out = Vec::with_capacity(5 + 4 * t.rank() + 4 * t.data.len());
    out.extend_from_slice(&MAGIC);
    out.push(t.rank() as u8);
    for &d in &t.dims {
        let d = u32::try_from(d)
            .map_err(|_| Error::InvalidParameter(format!("dimension {d} exceeds u32")))?;
        out.extend_from_slice(&d.to_le_bytes());
    }
    for v in &t.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_tensor(bytes: &[u8]) -> Result<Tensor> {
    if bytes.len() < 5 {
        return Err(Error::Length {
            expected: 5,
            actual: bytes.len(),
        });
    }
    let magic: [u8; 4] = bytes[..4].try_into().unwrap();
    if magic != MAGIC {
        return Err(Error::BadMagic { found: magic });
    }
    let rank = bytes[4];
    if !(2..=3).contains(&rank) {
        return Err(Error::UnsupportedRank(rank));
    }
    let header = 5 + 4 * rank as usize;
    if bytes.len() < header {
        return Err(Error::Length {
            expected: header,
            actual: bytes.len(),
        });
    }
    let dims: Vec<usize> = bytes[5..header]
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes(c.try_into().unwrap()) as usize)
        .collect();
    let count = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .and_then(|n| n.checked_mul(4).map(|b| (n, b)));
    let Some((count, payload)) = count else {
        return Err(Error::InvalidParameter(format!("dims {dims:?} overflow")));
    };
    let expected = header + payload;
    if bytes.len() != expected {
        return Err(Error::Length {
            expected,
            actual: bytes.len(),
        });
    }
    let data: Vec<f32> = bytes[header..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    debug_assert_eq!(data.len(), count);
    Tensor::new(dims, data)
}

pub fn write_tensor(path: impl AsRef<Path>, t: &Tensor) -> Result<()> {
    fs::write(path, encode_tensor(t)?)?;
    Ok(())
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<Tensor> {
    decode_tensor(&fs::read(path)?)
}

/// Min-max normalizes `values` to bytes `0..=255`, rounding half away from
/// zero. A constant input maps to all zeros.
pub fn normalize_to_gray(values: &[f32]) -> Vec<u8> {
    let (min, max) = values
        .iter()
        .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    if max.partial_cmp(&min) != Some(std::cmp::Ordering::Greater) {
        return vec![0; values.len()];
    }
    let (min, range) = (min as f64, max as f64 - min as f64);
    values
        .iter()
        .map(|&v| (255.0 * (v as f64 - min) / range).round().clamp(0.0, 255.0) as u8)
        .collect()
}

/// Binary PGM (`P5`, maxval 255) bytes for a `width x height` gray image.
pub fn encode_pgm(width: usize, height: usize, pixels: &[u8]) -> Vec<u8> {
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(pixels);
    out
}

/// Writes one channel of a score map as a min-max normalized PGM.
pub fn export_score_map_image(
    s: &ScoreMap,
    channel: Channel,
    path: impl AsRef<Path>,
) -> Result<()> {
    let gray = normalize_to_gray(s.channel(channel));
    fs::write(path, encode_pgm(s.width(), s.height(), &gray))?;
    Ok(())
}
