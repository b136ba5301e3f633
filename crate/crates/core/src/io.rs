//! Netpbm images and attention-map dumps.

use crate::error::{Error, Result};
use crate::excitation::AttentionMap;
use crate::tensor::Tensor;

fn parse_err(msg: impl Into<String>) -> Error {
    Error::Parse(msg.into())
}

struct Header {
    magic: [u8; 2],
    width: usize,
    height: usize,
    maxval: u32,
    comments: Vec<String>,
    data_start: usize,
}

fn read_header(bytes: &[u8]) -> Result<Header> {
    if bytes.len() < 2 || bytes[0] != b'P' {
        return Err(parse_err("not a netpbm file"));
    }
    let magic = [bytes[0], bytes[1]];
    let mut pos = 2;
    let mut fields = Vec::new();
    let mut comments = Vec::new();
    while fields.len() < 3 {
        match bytes.get(pos) {
            None => return Err(parse_err("truncated netpbm header")),
            Some(b'#') => {
                let end = bytes[pos..]
                    .iter()
                    .position(|&b| b == b'\n')
                    .map_or(bytes.len(), |e| pos + e);
                comments.push(String::from_utf8_lossy(&bytes[pos + 1..end]).trim().to_string());
                pos = end;
            }
            Some(b) if b.is_ascii_whitespace() => pos += 1,
            Some(b) if b.is_ascii_digit() => {
                let start = pos;
                while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
                    pos += 1;
                }
                let s = std::str::from_utf8(&bytes[start..pos]).expect("ascii digits");
                fields.push(
                    s.parse::<u32>()
                        .map_err(|e| parse_err(format!("header field {s}: {e}")))?,
                );
            }
            Some(&b) => return Err(parse_err(format!("unexpected byte {b:#04x} in netpbm header"))),
        }
    }
    // exactly one whitespace byte separates the header from the raster
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(parse_err("missing whitespace after netpbm header"));
    }
    let (width, height, maxval) = (fields[0] as usize, fields[1] as usize, fields[2]);
    if width == 0 || height == 0 || maxval == 0 || maxval > 65535 {
        return Err(parse_err(format!("bad netpbm geometry {width}x{height} max {maxval}")));
    }
    Ok(Header {
        magic,
        width,
        height,
        maxval,
        comments,
        data_start: pos + 1,
    })
}

/// (height, width) from a netpbm header.
pub fn pnm_dims(bytes: &[u8]) -> Result<(usize, usize)> {
    let h = read_header(bytes)?;
    Ok((h.height, h.width))
}

fn read_samples(bytes: &[u8], h: &Header, channels: usize) -> Result<Vec<u32>> {
    let wide = h.maxval > 255;
    let n = h.width * h.height * channels;
    let need = n * if wide { 2 } else { 1 };
    let raster = &bytes[h.data_start..];
    if raster.len() < need {
        return Err(parse_err(format!("raster has {} bytes, expected {need}", raster.len())));
    }
    Ok(if wide {
        raster[..need]
            .chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]) as u32)
            .collect()
    } else {
        raster[..n].iter().map(|&b| b as u32).collect()
    })
}

/// Decodes a binary PGM (P5) or PPM (P6) into a C×H×W tensor of raw sample
/// values (0..=maxval).
pub fn read_pnm(bytes: &[u8]) -> Result<Tensor> {
    let h = read_header(bytes)?;
    let channels = match &h.magic {
        b"P5" => 1,
        b"P6" => 3,
        m => {
            return Err(parse_err(format!(
                "unsupported netpbm type {}",
                String::from_utf8_lossy(m)
            )))
        }
    };
    let samples = read_samples(bytes, &h, channels)?;
    let plane = h.width * h.height;
    let mut data = vec![0.0; samples.len()];
    for (i, &s) in samples.iter().enumerate() {
        data[(i % channels) * plane + i / channels] = s as f64;
    }
    Tensor::new(vec![channels, h.height, h.width], data)
}

fn header(magic: &str, w: usize, h: usize, maxval: u32, comment: Option<&str>) -> Vec<u8> {
    let mut out = format!("{magic}\n");
    if let Some(c) = comment {
        out.push_str(&format!("# {c}\n"));
    }
    out.push_str(&format!("{w} {h}\n{maxval}\n"));
    out.into_bytes()
}

/// Encodes a 1- or 3-channel tensor as 8-bit PGM/PPM, rounding and clamping
/// each value to 0..=255.
pub fn write_pnm8(image: &Tensor) -> Result<Vec<u8>> {
    let (c, h, w) = image.dims3()?;
    let magic = match c {
        1 => "P5",
        3 => "P6",
        _ => return Err(Error::shape(format!("cannot write {c}-channel image"))),
    };
    let mut out = header(magic, w, h, 255, None);
    let plane = h * w;
    for p in 0..plane {
        for ch in 0..c {
            out.push(image.data()[ch * plane + p].round().clamp(0.0, 255.0) as u8);
        }
    }
    Ok(out)
}

/// 16-bit PGM with values scaled by the map's maximum, which is recorded
/// in a `# max <value>` comment so the scale can be recovered.
pub fn write_map_pgm(map: &AttentionMap) -> Vec<u8> {
    let max = map.values.max();
    let mut out = header("P5", map.width(), map.height(), 65535, Some(&format!("max {max:e}")));
    for &v in map.values.data() {
        let q = if max > 0.0 { (v / max * 65535.0).round() } else { 0.0 };
        out.extend_from_slice(&(q as u16).to_be_bytes());
    }
    out
}

/// Reads a map written by [`write_map_pgm`], undoing the scaling when the
/// `# max` comment is present.
pub fn read_map_pgm(bytes: &[u8]) -> Result<Tensor> {
    let h = read_header(bytes)?;
    if &h.magic != b"P5" {
        return Err(parse_err("attention map must be a P5 PGM"));
    }
    let scale = h
        .comments
        .iter()
        .find_map(|c| c.strip_prefix("max ").and_then(|v| v.trim().parse::<f64>().ok()))
        .unwrap_or(h.maxval as f64);
    let samples = read_samples(bytes, &h, 1)?;
    let data = samples.iter().map(|&s| s as f64 / h.maxval as f64 * scale).collect();
    Tensor::new(vec![1, h.height, h.width], data)
}

/// Raw dump: `EBMAP <H> <W>\n` followed by little-endian f64 values.
pub fn write_ebmap(map: &AttentionMap) -> Vec<u8> {
    let mut out = format!("EBMAP {} {}\n", map.height(), map.width()).into_bytes();
    for v in map.values.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn read_ebmap(bytes: &[u8]) -> Result<Tensor> {
    let nl = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| parse_err("EBMAP header missing"))?;
    let line = std::str::from_utf8(&bytes[..nl]).map_err(|_| parse_err("EBMAP header is not text"))?;
    let parts: Vec<&str> = line.split_whitespace().collect();
    let dims = match parts.as_slice() {
        ["EBMAP", h, w] => h.parse::<usize>().ok().zip(w.parse::<usize>().ok()),
        _ => None,
    };
    let (h, w) = dims.ok_or_else(|| parse_err(format!("bad EBMAP header `{line}`")))?;
    let body = &bytes[nl + 1..];
    if body.len() != h * w * 8 {
        return Err(parse_err(format!(
            "EBMAP body has {} bytes, expected {}",
            body.len(),
            h * w * 8
        )));
    }
    let data = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    Tensor::new(vec![1, h, w], data)
}

/// Binary mask from a PGM: nonzero samples are inside.
pub fn read_mask(bytes: &[u8]) -> Result<(usize, usize, Vec<bool>)> {
    let t = read_pnm(bytes)?;
    let (c, h, w) = t.dims3()?;
    if c != 1 {
        return Err(parse_err("mask must be a single-channel PGM"));
    }
    Ok((h, w, t.data().iter().map(|&v| v > 0.0).collect()))
}
