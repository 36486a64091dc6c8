//! On-disk formats: 8-bit binary PGM images and `DSP1` float maps.

use std::fs;
use std::path::Path;

use crate::error::DataError;
use crate::map::Map;

const DSP_MAGIC: &[u8; 4] = b"DSP1";

fn read_bytes(path: &Path) -> Result<Vec<u8>, DataError> {
    fs::read(path).map_err(|source| {
        if source.kind() == std::io::ErrorKind::NotFound {
            DataError::MissingFile(path.to_path_buf())
        } else {
            DataError::Io { path: path.to_path_buf(), source }
        }
    })
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<(), DataError> {
    fs::write(path, bytes).map_err(|source| DataError::Io { path: path.to_path_buf(), source })
}

/// Encodes a map with values in `[0, 1]` as binary PGM (values are rounded).
pub fn encode_pgm(m: &Map) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", m.width, m.height).into_bytes();
    out.extend(m.data.iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    out
}

pub fn decode_pgm(bytes: &[u8], path: &Path) -> Result<Map, DataError> {
    let bad = |reason: &str| DataError::MalformedHeader { path: path.to_path_buf(), reason: reason.into() };
    if bytes.len() < 2 || &bytes[..2] != b"P5" {
        return Err(bad("missing P5 magic"));
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in &mut fields {
        loop {
            match bytes.get(pos) {
                Some(b'#') => {
                    while pos < bytes.len() && bytes[pos] != b'\n' {
                        pos += 1;
                    }
                }
                Some(c) if c.is_ascii_whitespace() => pos += 1,
                Some(_) => break,
                None => return Err(bad("header ends early")),
            }
        }
        let start = pos;
        while pos < bytes.len() && bytes[pos].is_ascii_digit() {
            pos += 1;
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| bad("expected a decimal number"))?;
    }
    match bytes.get(pos) {
        Some(c) if c.is_ascii_whitespace() => pos += 1,
        _ => return Err(bad("no separator after maxval")),
    }
    let [w, h, maxval] = fields;
    if w == 0 || h == 0 {
        return Err(bad("zero dimension"));
    }
    if maxval != 255 {
        return Err(bad("only maxval 255 is supported"));
    }
    let payload = &bytes[pos..];
    if payload.len() < w * h {
        return Err(DataError::Truncated { path: path.to_path_buf(), expected: w * h, found: payload.len() });
    }
    if payload.len() > w * h {
        return Err(bad("trailing bytes after pixel data"));
    }
    Ok(Map::new(h, w, payload.iter().map(|&b| b as f32 / 255.0).collect()))
}

pub fn write_pgm(path: &Path, m: &Map) -> Result<(), DataError> {
    write_bytes(path, &encode_pgm(m))
}

pub fn read_pgm(path: &Path) -> Result<Map, DataError> {
    decode_pgm(&read_bytes(path)?, path)
}

pub fn encode_dsp(m: &Map) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + 4 * m.data.len());
    out.extend_from_slice(DSP_MAGIC);
    out.extend_from_slice(&(m.height as u32).to_le_bytes());
    out.extend_from_slice(&(m.width as u32).to_le_bytes());
    for v in &m.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_dsp(bytes: &[u8], path: &Path) -> Result<Map, DataError> {
    if bytes.len() < 12 {
        return Err(DataError::MalformedHeader { path: path.to_path_buf(), reason: "header shorter than 12 bytes".into() });
    }
    if &bytes[..4] != DSP_MAGIC {
        return Err(DataError::MalformedHeader { path: path.to_path_buf(), reason: "missing DSP1 magic".into() });
    }
    let h = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let w = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    if h == 0 || w == 0 {
        return Err(DataError::MalformedHeader { path: path.to_path_buf(), reason: "zero dimension".into() });
    }
    let payload = &bytes[12..];
    let expected = 4 * h * w;
    if payload.len() != expected {
        return Err(DataError::Truncated { path: path.to_path_buf(), expected, found: payload.len() });
    }
    let data = payload.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
    Ok(Map::new(h, w, data))
}

pub fn write_dsp(path: &Path, m: &Map) -> Result<(), DataError> {
    write_bytes(path, &encode_dsp(m))
}

pub fn read_dsp(path: &Path) -> Result<Map, DataError> {
    decode_dsp(&read_bytes(path)?, path)
}

/// Fails with [`DataError::DimensionMismatch`] unless `m` is `expected`.
pub fn check_dims(path: &Path, m: &Map, expected: (usize, usize)) -> Result<(), DataError> {
    if m.dims() != expected {
        return Err(DataError::DimensionMismatch { path: path.to_path_buf(), expected, found: m.dims() });
    }
    Ok(())
}
