//! On-disk formats: DLT1 tensors and binary PPM/PGM images.
//!
//! DLT1 layout, all little-endian:
//!
//! | bytes          | content                          |
//! |----------------|----------------------------------|
//! | 0..4           | magic `DLT1`                     |
//! | 4..8           | `u32` rank, always 3             |
//! | 8..20          | `u32` dims: height, width, chans |
//! | 20..           | `f32` payload, row-major, channel-last |

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::types::{FeatureMap, LabelMap, RgbImage};

pub const DLT1_MAGIC: &[u8; 4] = b"DLT1";
const DLT1_HEADER_LEN: usize = 20;

/// Serializes a map into DLT1 bytes.
pub fn encode_tensor(map: &FeatureMap) -> Vec<u8> {
    let (h, w, c) = map.shape();
    let mut out = Vec::with_capacity(DLT1_HEADER_LEN + 4 * h * w * c);
    out.extend_from_slice(DLT1_MAGIC);
    out.extend_from_slice(&3u32.to_le_bytes());
    for d in [h, w, c] {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for v in map.as_slice() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Parses DLT1 bytes. Errors carry the byte offset where parsing failed.
pub fn decode_tensor(bytes: &[u8]) -> Result<FeatureMap> {
    let u32_at = |offset: usize| -> Result<u32> {
        bytes
            .get(offset..offset + 4)
            .map(|b| u32::from_le_bytes(b.try_into().unwrap()))
            .ok_or_else(|| Error::format(bytes.len() as u64, "truncated header"))
    };
    if bytes.len() < 4 {
        return Err(Error::format(bytes.len() as u64, "truncated magic"));
    }
    if &bytes[..4] != DLT1_MAGIC {
        return Err(Error::format(0, "bad magic, expected DLT1"));
    }
    let rank = u32_at(4)?;
    if rank != 3 {
        return Err(Error::format(4, format!("rank must be 3, got {rank}")));
    }
    let dims = [u32_at(8)?, u32_at(12)?, u32_at(16)?];
    for (i, &d) in dims.iter().enumerate() {
        if d == 0 {
            return Err(Error::format(8 + 4 * i as u64, "zero dimension"));
        }
    }
    let count = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d as usize))
        .and_then(|n| n.checked_mul(4).map(|_| n))
        .ok_or_else(|| Error::format(8, "dimensions overflow"))?;
    let payload = &bytes[DLT1_HEADER_LEN..];
    if payload.len() != count * 4 {
        let at = if payload.len() < count * 4 {
            bytes.len()
        } else {
            DLT1_HEADER_LEN + count * 4
        };
        return Err(Error::format(
            at as u64,
            format!(
                "payload holds {} bytes, dims require {}",
                payload.len(),
                count * 4
            ),
        ));
    }
    let mut data = Vec::with_capacity(count);
    for (i, chunk) in payload.chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes(chunk.try_into().unwrap());
        if !v.is_finite() {
            return Err(Error::format(
                (DLT1_HEADER_LEN + 4 * i) as u64,
                "non-finite value",
            ));
        }
        data.push(v);
    }
    FeatureMap::new(dims[0] as usize, dims[1] as usize, dims[2] as usize, data)
        .map_err(|e| Error::format(8, e.to_string()))
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<FeatureMap> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_tensor(&bytes)
}

pub fn write_tensor(map: &FeatureMap, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_tensor(map)).map_err(|e| Error::io(path, e))
}

/// Header of a binary netpbm file: magic, width, height and the offset of the
/// first payload byte.
struct PnmHeader {
    width: usize,
    height: usize,
    data_start: usize,
}

fn parse_pnm_header(bytes: &[u8], magic: &[u8; 2]) -> Result<PnmHeader> {
    if bytes.len() < 2 {
        return Err(Error::format(0, "file too short for a netpbm magic"));
    }
    if &bytes[..2] != magic {
        let found = String::from_utf8_lossy(&bytes[..2]).into_owned();
        return Err(Error::format(
            0,
            format!(
                "expected binary {} header, found {found:?}",
                String::from_utf8_lossy(magic)
            ),
        ));
    }
    let mut pos = 2;
    let mut tokens = [0usize; 3];
    for token in tokens.iter_mut() {
        // whitespace and comments between tokens
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(_) => break,
                None => return Err(Error::format(pos as u64, "truncated header")),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        if start == pos {
            return Err(Error::format(pos as u64, "expected a decimal number"));
        }
        *token = std::str::from_utf8(&bytes[start..pos])
            .unwrap()
            .parse()
            .map_err(|_| Error::format(start as u64, "number out of range"))?;
    }
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => {
            return Err(Error::format(
                pos as u64,
                "expected one whitespace byte after maxval",
            ))
        }
    }
    let [width, height, maxval] = tokens;
    if maxval != 255 {
        return Err(Error::format(
            pos as u64,
            format!("maxval must be 255, got {maxval}"),
        ));
    }
    if width == 0 || height == 0 {
        return Err(Error::format(2, "zero image dimension"));
    }
    Ok(PnmHeader {
        width,
        height,
        data_start: pos,
    })
}

fn take_payload(bytes: &[u8], header: &PnmHeader, per_pixel: usize) -> Result<Vec<u8>> {
    let need = header
        .width
        .checked_mul(header.height)
        .and_then(|n| n.checked_mul(per_pixel))
        .ok_or_else(|| Error::format(2, "dimensions overflow"))?;
    let payload = &bytes[header.data_start..];
    if payload.len() < need {
        return Err(Error::format(
            bytes.len() as u64,
            format!("payload holds {} bytes, need {need}", payload.len()),
        ));
    }
    Ok(payload[..need].to_vec())
}

pub fn decode_ppm(bytes: &[u8]) -> Result<RgbImage> {
    let header = parse_pnm_header(bytes, b"P6")?;
    let data = take_payload(bytes, &header, 3)?;
    RgbImage::new(header.height, header.width, data)
}

pub fn decode_pgm(bytes: &[u8]) -> Result<LabelMap> {
    let header = parse_pnm_header(bytes, b"P5")?;
    let data = take_payload(bytes, &header, 1)?;
    LabelMap::new(header.height, header.width, data)
}

pub fn encode_ppm(image: &RgbImage) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", image.width(), image.height()).into_bytes();
    out.extend_from_slice(image.as_bytes());
    out
}

pub fn encode_pgm(labels: &LabelMap) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", labels.width(), labels.height()).into_bytes();
    out.extend_from_slice(labels.as_slice());
    out
}

pub fn read_ppm(path: impl AsRef<Path>) -> Result<RgbImage> {
    let path = path.as_ref();
    decode_ppm(&fs::read(path).map_err(|e| Error::io(path, e))?)
}

pub fn read_pgm(path: impl AsRef<Path>) -> Result<LabelMap> {
    let path = path.as_ref();
    decode_pgm(&fs::read(path).map_err(|e| Error::io(path, e))?)
}

pub fn write_ppm(image: &RgbImage, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_ppm(image)).map_err(|e| Error::io(path, e))
}

pub fn write_pgm(labels: &LabelMap, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_pgm(labels)).map_err(|e| Error::io(path, e))
}
