//! Portable frame tensors: a fixed header followed by little-endian f32 data.
//!
//! Layout: `b"T3TN"`, version u8 (1), dtype u8 (0 = f32), two reserved bytes,
//! then T, H, W, C as u32 LE, then `T·H·W·C` f32 LE values.

use std::fs;
use std::io::{self, Read, Write};
use std::path::Path;

use super::video::Video;
use super::ProbeError;

const MAGIC: &[u8; 4] = b"T3TN";
const VERSION: u8 = 1;
const DTYPE_F32: u8 = 0;
const HEADER_LEN: usize = 24;

pub fn encode_video(video: &Video) -> Vec<u8> {
    let (t, h, w, c) = video.dim();
    let mut out = Vec::with_capacity(HEADER_LEN + video.len() * 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&[VERSION, DTYPE_F32, 0, 0]);
    for d in [t, h, w, c] {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for v in video.iter() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_video(bytes: &[u8]) -> Result<Video, ProbeError> {
    let bad = |m: &str| ProbeError::Tensor(m.to_string());
    if bytes.len() < HEADER_LEN || &bytes[..4] != MAGIC {
        return Err(bad("missing tensor header"));
    }
    if bytes[4] != VERSION {
        return Err(bad(&format!("unsupported version {}", bytes[4])));
    }
    if bytes[5] != DTYPE_F32 {
        return Err(bad(&format!("unsupported dtype {}", bytes[5])));
    }
    let dim = |i: usize| u32::from_le_bytes(bytes[8 + 4 * i..12 + 4 * i].try_into().unwrap()) as usize;
    let shape = (dim(0), dim(1), dim(2), dim(3));
    let n = shape.0 * shape.1 * shape.2 * shape.3;
    let body = &bytes[HEADER_LEN..];
    if body.len() != n * 4 {
        return Err(bad(&format!("{} data bytes for {n} values", body.len())));
    }
    let data: Vec<f32> = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Video::from_shape_vec(shape, data).map_err(|e| bad(&e.to_string()))
}

pub fn write_video(path: &Path, video: &Video) -> Result<(), ProbeError> {
    let mut f = fs::File::create(path).map_err(|e| ProbeError::io(path, e))?;
    f.write_all(&encode_video(video)).map_err(|e| ProbeError::io(path, e))
}

pub fn read_video(path: &Path) -> Result<Video, ProbeError> {
    let mut bytes = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e: io::Error| ProbeError::io(path, e))?;
    decode_video(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_and_rejects() {
        let v = Video::from_shape_fn((2, 3, 4, 3), |(t, y, x, c)| (t + y + x + c) as f32 / 10.0);
        let bytes = encode_video(&v);
        assert_eq!(bytes.len(), 24 + 72 * 4);
        assert_eq!(decode_video(&bytes).unwrap(), v);
        assert!(decode_video(&bytes[..30]).is_err());
        let mut wrong = bytes.clone();
        wrong[5] = 7;
        assert!(decode_video(&wrong).is_err());
    }
}
