//! Binary PGM (P5) and PPM (P6) readers and writers, maxval 255 only.
//!
//! Images load as f32 tensors scaled to [0, 1]; masks load as {0, 1} maps
//! and reject any other pixel value.

use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{Tensor, TensorShape};

/// Single-channel {0,1} label map.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    pub h: usize,
    pub w: usize,
    pub data: Vec<u8>,
}

struct PnmHeader {
    channels: usize,
    w: usize,
    h: usize,
    payload_start: usize,
}

fn parse_header(bytes: &[u8]) -> Result<PnmHeader> {
    if bytes.len() < 2 {
        return Err(Error::Parse("file too short for a PNM header".into()));
    }
    let channels = match &bytes[..2] {
        b"P5" => 1,
        b"P6" => 3,
        b"P2" | b"P3" => {
            return Err(Error::Parse("ASCII PNM variants are not supported; use P5/P6".into()))
        }
        _ => return Err(Error::Parse("not a binary PGM/PPM file".into())),
    };
    // Three whitespace-separated fields follow: width, height, maxval.
    // '#' starts a comment running to end of line.
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in &mut fields {
        // Skip whitespace and comments.
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                break;
            }
        }
        let start = pos;
        while pos < bytes.len() && bytes[pos].is_ascii_digit() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Parse("malformed PNM header field".into()));
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .unwrap()
            .parse()
            .map_err(|_| Error::Parse("PNM header field out of range".into()))?;
    }
    let (w, h, maxval) = (fields[0], fields[1], fields[2]);
    if maxval != 255 {
        return Err(Error::Parse(format!("unsupported maxval {maxval}; only 255 is accepted")));
    }
    if w == 0 || h == 0 {
        return Err(Error::Parse("PNM dimensions must be >= 1".into()));
    }
    // Exactly one whitespace byte separates the header from the payload.
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(Error::Parse("missing separator before PNM payload".into()));
    }
    Ok(PnmHeader { channels, w, h, payload_start: pos + 1 })
}

fn decode(bytes: &[u8]) -> Result<(PnmHeader, &[u8])> {
    let header = parse_header(bytes)?;
    let want = header.channels * header.w * header.h;
    let payload = &bytes[header.payload_start..];
    if payload.len() < want {
        return Err(Error::Parse(format!(
            "truncated PNM payload: {} bytes, expected {want}",
            payload.len()
        )));
    }
    if payload.len() > want {
        return Err(Error::Parse(format!(
            "PNM payload has {} trailing bytes",
            payload.len() - want
        )));
    }
    Ok((header, payload))
}

/// Load a P5 or P6 file as an f32 tensor in [0, 1], shape (1, channels, h, w).
pub fn load_image(path: &Path) -> Result<Tensor> {
    let bytes = std::fs::read(path)?;
    decode_image(&bytes)
}

pub fn decode_image(bytes: &[u8]) -> Result<Tensor> {
    let (header, payload) = decode(bytes)?;
    let shape = TensorShape::new(1, header.channels, header.h, header.w);
    let mut data = vec![0.0f32; shape.num_elements()];
    // Payload is interleaved by pixel; tensors are planar by channel.
    for y in 0..header.h {
        for x in 0..header.w {
            for c in 0..header.channels {
                let v = payload[(y * header.w + x) * header.channels + c];
                data[shape.index(0, c, y, x)] = v as f32 / 255.0;
            }
        }
    }
    Ok(Tensor::from_f32(shape, data))
}

/// Load a P5 mask whose pixels are 0 or 255, mapped to {0, 1}.
pub fn load_mask(path: &Path) -> Result<Mask> {
    let bytes = std::fs::read(path)?;
    decode_mask(&bytes)
}

pub fn decode_mask(bytes: &[u8]) -> Result<Mask> {
    let (header, payload) = decode(bytes)?;
    if header.channels != 1 {
        return Err(Error::Parse("masks must be single-channel PGM".into()));
    }
    let data = payload
        .iter()
        .map(|&v| match v {
            0 => Ok(0u8),
            255 => Ok(1u8),
            other => Err(Error::Parse(format!("mask pixel {other} is neither 0 nor 255"))),
        })
        .collect::<Result<Vec<u8>>>()?;
    Ok(Mask { h: header.h, w: header.w, data })
}

/// Write a single-channel byte image as binary PGM.
pub fn write_pgm(path: &Path, w: usize, h: usize, data: &[u8]) -> Result<()> {
    if data.len() != w * h {
        return Err(Error::Shape(format!("pgm payload {} != {w}x{h}", data.len())));
    }
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.extend_from_slice(data);
    std::fs::write(path, out)?;
    Ok(())
}

/// Write an f32 tensor in [0, 1] as binary PPM (3 channels) or PGM (1).
pub fn write_ppm(path: &Path, image: &Tensor) -> Result<()> {
    let x = image.as_f32()?;
    let s = image.shape;
    if s.n != 1 || (s.c != 1 && s.c != 3) {
        return Err(Error::Shape(format!("expected (1,1|3,h,w) image, got {s}")));
    }
    let tag = if s.c == 3 { "P6" } else { "P5" };
    let mut out = format!("{tag}\n{} {}\n255\n", s.w, s.h).into_bytes();
    for y in 0..s.h {
        for xp in 0..s.w {
            for c in 0..s.c {
                let v = (x[s.index(0, c, y, xp)] * 255.0).round().clamp(0.0, 255.0) as u8;
                out.push(v);
            }
        }
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Write a {0,1} mask as a 0/255 PGM.
pub fn write_mask(path: &Path, mask: &Mask) -> Result<()> {
    let bytes: Vec<u8> = mask.data.iter().map(|&v| if v == 0 { 0 } else { 255 }).collect();
    write_pgm(path, mask.w, mask.h, &bytes)
}
