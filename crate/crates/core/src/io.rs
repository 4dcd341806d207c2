//! File formats: the `VCRT` tensor container, PFM and PNG images, and the
//! `key = value` text files used for sidecars, manifests and configs.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::colorspace::RgbImage;
use crate::error::{Error, Result};
use crate::tensor::{Tensor, MAX_RANK};

pub const TENSOR_MAGIC: &[u8; 4] = b"VCRT";

/// Serialises a tensor: magic, u32 rank, rank x u64 extents, f64 payload,
/// all little-endian.
pub fn encode_tensor(t: &Tensor) -> Vec<u8> {
    let mut buf = Vec::with_capacity(8 + 8 * t.rank() + 8 * t.len());
    buf.extend_from_slice(TENSOR_MAGIC);
    buf.extend_from_slice(&(t.rank() as u32).to_le_bytes());
    for &d in t.shape() {
        buf.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for v in t.data() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    buf
}

pub fn decode_tensor(bytes: &[u8]) -> std::result::Result<Tensor, String> {
    let mut cur = bytes;
    let mut take = |n: usize| -> std::result::Result<&[u8], String> {
        if cur.len() < n {
            return Err("truncated tensor file".to_string());
        }
        let (head, rest) = cur.split_at(n);
        cur = rest;
        Ok(head)
    };
    if take(4)? != TENSOR_MAGIC {
        return Err("bad magic, expected VCRT".into());
    }
    let rank = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
    if rank == 0 || rank > MAX_RANK {
        return Err(format!("unsupported rank {rank}"));
    }
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        let d = u64::from_le_bytes(take(8)?.try_into().unwrap());
        shape.push(usize::try_from(d).map_err(|_| "extent overflow".to_string())?);
    }
    let n = shape
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or("extent overflow")?;
    let payload = take(n.checked_mul(8).ok_or("extent overflow")?)?;
    let data = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    if !cur.is_empty() {
        return Err(format!("{} trailing bytes", cur.len()));
    }
    Tensor::new(shape, data).map_err(|e| e.to_string())
}

pub fn write_tensor(path: impl AsRef<Path>, t: &Tensor) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_tensor(t)).map_err(|e| Error::io(path, e))
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_tensor(&bytes).map_err(|r| Error::format(path, r))
}

/// Parses `key = value` lines. Blank lines and `#` comments are skipped.
pub fn parse_key_values(text: &str) -> std::result::Result<BTreeMap<String, String>, String> {
    let mut map = BTreeMap::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| format!("line {}: expected key = value", n + 1))?;
        map.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(map)
}

pub fn read_key_values(path: impl AsRef<Path>) -> Result<BTreeMap<String, String>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_key_values(&text).map_err(|r| Error::format(path, r))
}

pub fn write_key_values<'a>(
    path: impl AsRef<Path>,
    pairs: impl IntoIterator<Item = (&'a str, String)>,
) -> Result<()> {
    let path = path.as_ref();
    let mut text = String::new();
    for (k, v) in pairs {
        text.push_str(k);
        text.push_str(" = ");
        text.push_str(&v);
        text.push('\n');
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub(crate) fn parse_f64(map: &BTreeMap<String, String>, key: &str, path: &Path) -> Result<f64> {
    let raw = map
        .get(key)
        .ok_or_else(|| Error::format(path, format!("missing key `{key}`")))?;
    raw.parse()
        .map_err(|_| Error::format(path, format!("`{key}` is not a number: {raw}")))
}

/// Bit depth of the file an image was decoded from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampleDepth {
    Eight,
    Sixteen,
    Float,
}

impl SampleDepth {
    /// Full-scale value of the native sample encoding.
    pub fn dynamic_range(self) -> f64 {
        match self {
            SampleDepth::Eight => 255.0,
            SampleDepth::Sixteen => 65535.0,
            SampleDepth::Float => 1.0,
        }
    }
}

/// Reads a PNG or PFM image into `[0, 1]` RGB planes. Grayscale inputs are
/// replicated across the three channels; alpha is dropped.
pub fn read_image(path: impl AsRef<Path>) -> Result<(RgbImage, SampleDepth)> {
    let path = path.as_ref();
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase());
    match ext.as_deref() {
        Some("pfm") => read_pfm(path).map(|img| (img, SampleDepth::Float)),
        _ => read_png(path),
    }
}

/// Writes PFM for a `.pfm` extension and 16-bit PNG otherwise.
pub fn write_image(path: impl AsRef<Path>, img: &RgbImage) -> Result<()> {
    let path = path.as_ref();
    let is_pfm = path
        .extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("pfm"));
    if is_pfm {
        write_pfm(path, img)
    } else {
        write_png(path, img, SampleDepth::Sixteen)
    }
}

pub fn read_png(path: &Path) -> Result<(RgbImage, SampleDepth)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut decoder = png::Decoder::new(BufReader::new(file));
    decoder.set_transformations(png::Transformations::EXPAND);
    let mut reader = decoder
        .read_info()
        .map_err(|e| Error::format(path, e.to_string()))?;
    let mut buf = vec![
        0;
        reader
            .output_buffer_size()
            .ok_or_else(|| Error::format(path, "image too large"))?
    ];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| Error::format(path, e.to_string()))?;
    let bytes = &buf[..info.buffer_size()];
    let (width, height) = (info.width as usize, info.height as usize);
    let channels = info.color_type.samples();
    let (samples, depth): (Vec<f64>, _) = match info.bit_depth {
        png::BitDepth::Eight => (
            bytes.iter().map(|&b| b as f64 / 255.0).collect(),
            SampleDepth::Eight,
        ),
        png::BitDepth::Sixteen => (
            bytes
                .chunks_exact(2)
                .map(|c| u16::from_be_bytes([c[0], c[1]]) as f64 / 65535.0)
                .collect(),
            SampleDepth::Sixteen,
        ),
        other => {
            return Err(Error::format(path, format!("unsupported bit depth {other:?}")));
        }
    };
    let n = width * height;
    let (mut r, mut g, mut b) = (
        Vec::with_capacity(n),
        Vec::with_capacity(n),
        Vec::with_capacity(n),
    );
    for px in samples.chunks_exact(channels) {
        match channels {
            1 | 2 => {
                r.push(px[0]);
                g.push(px[0]);
                b.push(px[0]);
            }
            _ => {
                r.push(px[0]);
                g.push(px[1]);
                b.push(px[2]);
            }
        }
    }
    let img = RgbImage::new(width, height, r, g, b).map_err(|e| Error::format(path, e.to_string()))?;
    Ok((img, depth))
}

pub fn write_png(path: &Path, img: &RgbImage, depth: SampleDepth) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), img.width() as u32, img.height() as u32);
    enc.set_color(png::ColorType::Rgb);
    let mut bytes = Vec::new();
    match depth {
        SampleDepth::Eight => {
            enc.set_depth(png::BitDepth::Eight);
            for i in 0..img.len() {
                for c in img.pixel(i) {
                    bytes.push((c.clamp(0.0, 1.0) * 255.0).round() as u8);
                }
            }
        }
        _ => {
            enc.set_depth(png::BitDepth::Sixteen);
            for i in 0..img.len() {
                for c in img.pixel(i) {
                    let v = (c.clamp(0.0, 1.0) * 65535.0).round() as u16;
                    bytes.extend_from_slice(&v.to_be_bytes());
                }
            }
        }
    }
    let mut writer = enc
        .write_header()
        .map_err(|e| Error::format(path, e.to_string()))?;
    writer
        .write_image_data(&bytes)
        .map_err(|e| Error::format(path, e.to_string()))?;
    writer
        .finish()
        .map_err(|e| Error::format(path, e.to_string()))
}

/// Reads a colour (`PF`) or grayscale (`Pf`) portable float map.
pub fn read_pfm(path: &Path) -> Result<RgbImage> {
    let mut bytes = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;

    // Header: three whitespace-separated tokens, then exactly one whitespace byte.
    let mut tokens = Vec::new();
    let mut pos = 0;
    while tokens.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::format(path, "truncated PFM header"));
        }
        tokens.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    pos += 1;
    let channels = match tokens[0].as_str() {
        "PF" => 3,
        "Pf" => 1,
        other => return Err(Error::format(path, format!("bad PFM magic {other}"))),
    };
    let parse = |s: &str| -> Result<usize> {
        s.parse()
            .map_err(|_| Error::format(path, format!("bad PFM dimension {s}")))
    };
    let (width, height) = (parse(&tokens[1])?, parse(&tokens[2])?);
    let scale: f64 = tokens[3]
        .parse()
        .map_err(|_| Error::format(path, "bad PFM scale"))?;
    let little = scale < 0.0;
    let need = width * height * channels * 4;
    let payload = bytes
        .get(pos..pos + need)
        .ok_or_else(|| Error::format(path, "truncated PFM payload"))?;
    let vals: Vec<f64> = payload
        .chunks_exact(4)
        .map(|c| {
            let raw = [c[0], c[1], c[2], c[3]];
            (if little {
                f32::from_le_bytes(raw)
            } else {
                f32::from_be_bytes(raw)
            }) as f64
        })
        .collect();

    let n = width * height;
    let (mut r, mut g, mut b) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    // PFM rows run bottom to top.
    for row in 0..height {
        let dst_row = height - 1 - row;
        for x in 0..width {
            let src = (row * width + x) * channels;
            let dst = dst_row * width + x;
            if channels == 3 {
                r[dst] = vals[src];
                g[dst] = vals[src + 1];
                b[dst] = vals[src + 2];
            } else {
                r[dst] = vals[src];
                g[dst] = vals[src];
                b[dst] = vals[src];
            }
        }
    }
    RgbImage::new(width, height, r, g, b).map_err(|e| Error::format(path, e.to_string()))
}

pub fn write_pfm(path: &Path, img: &RgbImage) -> Result<()> {
    let (w, h) = (img.width(), img.height());
    let mut out = format!("PF\n{w} {h}\n-1.0\n").into_bytes();
    for row in (0..h).rev() {
        for x in 0..w {
            for c in img.pixel(row * w + x) {
                out.extend_from_slice(&(c as f32).to_le_bytes());
            }
        }
    }
    let mut f = File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&out).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn tensor_encoding_round_trips(
            shape in proptest::collection::vec(1usize..4, 1..=4),
            seed in any::<u64>(),
        ) {
            let mut s = seed;
            let t = Tensor::from_fn(&shape, |_| {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                (s >> 11) as f64 / (1u64 << 53) as f64 - 0.5
            }).unwrap();
            let back = decode_tensor(&encode_tensor(&t)).unwrap();
            prop_assert_eq!(back, t);
        }
    }

    #[test]
    fn tensor_header_layout() {
        let t = Tensor::new(vec![1, 2], vec![1.0, -2.0]).unwrap();
        let b = encode_tensor(&t);
        assert_eq!(&b[..4], b"VCRT");
        assert_eq!(u32::from_le_bytes(b[4..8].try_into().unwrap()), 2);
        assert_eq!(u64::from_le_bytes(b[8..16].try_into().unwrap()), 1);
        assert_eq!(u64::from_le_bytes(b[16..24].try_into().unwrap()), 2);
        assert_eq!(f64::from_le_bytes(b[32..40].try_into().unwrap()), -2.0);
        assert_eq!(b.len(), 40);
    }

    #[test]
    fn tensor_decode_rejects_garbage() {
        assert!(decode_tensor(b"NOPE").is_err());
        let mut b = encode_tensor(&Tensor::zeros(&[2]).unwrap());
        b.pop();
        assert!(decode_tensor(&b).is_err());
        b.extend_from_slice(&[0, 0]);
        assert!(decode_tensor(&b).is_err());
    }

    #[test]
    fn key_values_skip_comments() {
        let m = parse_key_values("# c\n\n k = 1.5 \nname=x=y\n").unwrap();
        assert_eq!(m["k"], "1.5");
        assert_eq!(m["name"], "x=y");
        assert!(parse_key_values("novalue\n").is_err());
    }

    #[test]
    fn pfm_and_png_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let n = 6 * 4;
        let ramp: Vec<f64> = (0..n).map(|i| i as f64 / (n - 1) as f64).collect();
        let img = RgbImage::new(
            6,
            4,
            ramp.clone(),
            ramp.iter().map(|v| 1.0 - v).collect(),
            ramp.iter().map(|v| v * 0.5).collect(),
        )
        .unwrap();

        let pfm = dir.path().join("a.pfm");
        write_image(&pfm, &img).unwrap();
        let (back, depth) = read_image(&pfm).unwrap();
        assert_eq!(depth, SampleDepth::Float);
        assert!(back.max_abs_diff(&img) < 1e-7);

        let png16 = dir.path().join("a.png");
        write_image(&png16, &img).unwrap();
        let (back, depth) = read_image(&png16).unwrap();
        assert_eq!(depth, SampleDepth::Sixteen);
        assert!(back.max_abs_diff(&img) <= 0.5 / 65535.0 + 1e-12);

        let png8 = dir.path().join("b.png");
        write_png(&png8, &img, SampleDepth::Eight).unwrap();
        let (back, depth) = read_image(&png8).unwrap();
        assert_eq!(depth, SampleDepth::Eight);
        assert!(back.max_abs_diff(&img) <= 0.5 / 255.0 + 1e-12);
    }
}
