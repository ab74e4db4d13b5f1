//! PNG and PFM codecs for views, normal maps and masks.

use std::io::Cursor;

use crate::error::{Error, Result};
use crate::types::{Grid, Vec3};

/// Decoded raster with channels normalised to [0, 1] (PNG) or raw floats (PFM).
#[derive(Clone, Debug, PartialEq)]
pub struct Raster {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

impl Raster {
    pub fn pixel(&self, x: usize, y: usize) -> &[f64] {
        let i = (y * self.width + x) * self.channels;
        &self.data[i..i + self.channels]
    }

    /// Reads channel triples; grayscale is replicated.
    pub fn to_rgb(&self) -> Grid<Vec3> {
        Grid::from_fn(self.width, self.height, |x, y| {
            let p = self.pixel(x, y);
            if self.channels >= 3 {
                Vec3::new(p[0], p[1], p[2])
            } else {
                Vec3::repeat(p[0])
            }
        })
    }

    pub fn to_scalar(&self) -> Grid<f64> {
        Grid::from_fn(self.width, self.height, |x, y| self.pixel(x, y)[0])
    }
}

fn png_err(e: impl std::fmt::Display) -> Error {
    Error::Image(e.to_string())
}

pub fn decode_png(bytes: &[u8]) -> Result<Raster> {
    let mut decoder = png::Decoder::new(Cursor::new(bytes));
    decoder.set_transformations(png::Transformations::EXPAND);
    let mut reader = decoder.read_info().map_err(png_err)?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| Error::Image("image too large".into()))?;
    let mut buf = vec![0u8; size];
    let info = reader.next_frame(&mut buf).map_err(png_err)?;
    let (width, height) = (info.width as usize, info.height as usize);
    let channels = info.color_type.samples();
    let data: Vec<f64> = match info.bit_depth {
        png::BitDepth::Sixteen => buf[..info.buffer_size()]
            .chunks_exact(2)
            .map(|c| f64::from(u16::from_be_bytes([c[0], c[1]])) / 65535.0)
            .collect(),
        png::BitDepth::Eight => buf[..info.buffer_size()].iter().map(|&b| f64::from(b) / 255.0).collect(),
        other => return Err(Error::Image(format!("unexpected bit depth {other:?} after expansion"))),
    };
    if data.len() != width * height * channels {
        return Err(Error::Image("decoded buffer has the wrong size".into()));
    }
    Ok(Raster {
        width,
        height,
        channels,
        data,
    })
}

fn encode_png(width: usize, height: usize, color: png::ColorType, depth: png::BitDepth, data: &[u8]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, width as u32, height as u32);
        enc.set_color(color);
        enc.set_depth(depth);
        let mut writer = enc.write_header().map_err(png_err)?;
        writer.write_image_data(data).map_err(png_err)?;
        writer.finish().map_err(png_err)?;
    }
    Ok(out)
}

fn quantize8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn quantize16(v: f64) -> u16 {
    (v.clamp(0.0, 1.0) * 65535.0).round() as u16
}

pub fn encode_rgb8(image: &Grid<Vec3>) -> Result<Vec<u8>> {
    let data: Vec<u8> = image.data.iter().flat_map(|c| [quantize8(c.x), quantize8(c.y), quantize8(c.z)]).collect();
    encode_png(image.width, image.height, png::ColorType::Rgb, png::BitDepth::Eight, &data)
}

/// RGBA8 buffer (row-major) as used by canvases.
pub fn to_rgba8(image: &Grid<Vec3>) -> Vec<u8> {
    image
        .data
        .iter()
        .flat_map(|c| [quantize8(c.x), quantize8(c.y), quantize8(c.z), 255])
        .collect()
}

/// Unit normals encoded as (n + 1) / 2 in 16-bit RGB.
pub fn encode_normals16(normals: &Grid<Vec3>) -> Result<Vec<u8>> {
    let data: Vec<u8> = normals
        .data
        .iter()
        .flat_map(|n| {
            let e = (n + Vec3::repeat(1.0)) * 0.5;
            [quantize16(e.x), quantize16(e.y), quantize16(e.z)]
        })
        .flat_map(u16::to_be_bytes)
        .collect();
    encode_png(normals.width, normals.height, png::ColorType::Rgb, png::BitDepth::Sixteen, &data)
}

/// Inverse of the (n + 1) / 2 encoding, renormalised to unit length.
/// Zero-length decodes stay zero.
pub fn decode_normals(raster: &Raster) -> Result<Grid<Vec3>> {
    if raster.channels < 3 {
        return Err(Error::Image("normal map needs at least 3 channels".into()));
    }
    Ok(raster.to_rgb().map(|e| renormalize(&(e * 2.0 - Vec3::repeat(1.0)))))
}

pub(crate) fn renormalize(n: &Vec3) -> Vec3 {
    let len = n.norm();
    if len > 1e-12 && len.is_finite() {
        n / len
    } else {
        Vec3::zeros()
    }
}

/// 1-bit grayscale PNG; any value other than 0 is written as 1.
pub fn encode_mask(mask: &Grid<u8>) -> Result<Vec<u8>> {
    let row_bytes = mask.width.div_ceil(8);
    let mut data = vec![0u8; row_bytes * mask.height];
    for y in 0..mask.height {
        for x in 0..mask.width {
            if *mask.get(x, y) != 0 {
                data[y * row_bytes + x / 8] |= 0x80 >> (x % 8);
            }
        }
    }
    encode_png(mask.width, mask.height, png::ColorType::Grayscale, png::BitDepth::One, &data)
}

pub fn decode_mask(bytes: &[u8]) -> Result<Grid<u8>> {
    let r = decode_png(bytes)?;
    Ok(Grid::from_fn(r.width, r.height, |x, y| u8::from(r.pixel(x, y)[0] > 0.5)))
}

/// Little-endian PFM. Rows are stored bottom-to-top as the format requires.
pub fn encode_pfm(width: usize, height: usize, channels: usize, data: &[f64]) -> Result<Vec<u8>> {
    if channels != 1 && channels != 3 {
        return Err(Error::Image(format!("pfm supports 1 or 3 channels, got {channels}")));
    }
    if data.len() != width * height * channels {
        return Err(Error::Image("pfm data has the wrong size".into()));
    }
    let tag = if channels == 3 { "PF" } else { "Pf" };
    let mut out = format!("{tag}\n{width} {height}\n-1.0\n").into_bytes();
    for y in (0..height).rev() {
        for v in &data[y * width * channels..(y + 1) * width * channels] {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
    Ok(out)
}

pub fn encode_pfm_scalar(map: &Grid<f64>) -> Result<Vec<u8>> {
    encode_pfm(map.width, map.height, 1, &map.data)
}

pub fn encode_pfm_rgb(map: &Grid<Vec3>) -> Result<Vec<u8>> {
    let flat: Vec<f64> = map.data.iter().flat_map(|v| [v.x, v.y, v.z]).collect();
    encode_pfm(map.width, map.height, 3, &flat)
}

pub fn decode_pfm(bytes: &[u8]) -> Result<Raster> {
    let mut pos = 0usize;
    let mut tokens = Vec::with_capacity(4);
    while tokens.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::parse(start, "truncated pfm header"));
        }
        tokens.push((start, String::from_utf8_lossy(&bytes[start..pos]).into_owned()));
    }
    // Exactly one whitespace byte separates the header from the data.
    pos += 1;
    let channels = match tokens[0].1.as_str() {
        "PF" => 3,
        "Pf" => 1,
        _ => return Err(Error::parse(tokens[0].0, "not a pfm file")),
    };
    let dim = |i: usize| -> Result<usize> {
        tokens[i]
            .1
            .parse::<usize>()
            .map_err(|_| Error::parse(tokens[i].0, "invalid pfm dimension"))
    };
    let (width, height) = (dim(1)?, dim(2)?);
    let scale: f64 = tokens[3]
        .1
        .parse()
        .map_err(|_| Error::parse(tokens[3].0, "invalid pfm scale"))?;
    let little = scale < 0.0;
    let n = width
        .checked_mul(height)
        .and_then(|v| v.checked_mul(channels))
        .ok_or_else(|| Error::parse(tokens[1].0, "pfm dimensions overflow"))?;
    if bytes.len() < pos || (bytes.len() - pos) / 4 < n {
        return Err(Error::parse(pos.min(bytes.len()), "pfm data shorter than declared"));
    }
    let mut data = vec![0.0; n];
    let row = width * channels;
    for (k, chunk) in bytes[pos..pos + 4 * n].chunks_exact(4).enumerate() {
        let raw = [chunk[0], chunk[1], chunk[2], chunk[3]];
        let v = if little { f32::from_le_bytes(raw) } else { f32::from_be_bytes(raw) };
        let (file_row, col) = (k / row.max(1), k % row.max(1));
        data[(height - 1 - file_row) * row + col] = f64::from(v);
    }
    Ok(Raster {
        width,
        height,
        channels,
        data,
    })
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    #[test]
    fn rgb8_round_trip_within_quantization() {
        let img = Grid::from_fn(5, 3, |x, y| Vec3::new(x as f64 / 4.0, y as f64 / 2.0, 0.3));
        let back = decode_png(&encode_rgb8(&img).unwrap()).unwrap().to_rgb();
        for (a, b) in img.data.iter().zip(&back.data) {
            assert!((a - b).amax() <= 0.5 / 255.0 + 1e-12);
        }
    }

    #[test]
    fn constant_normal_map_decodes_to_plus_z() {
        let map = Grid::filled(4, 4, Vec3::z());
        let raster = decode_png(&encode_rgb8(&map.map(|n| (n + Vec3::repeat(1.0)) * 0.5)).unwrap()).unwrap();
        for n in decode_normals(&raster).unwrap().data {
            assert!((n - Vec3::z()).amax() <= 1.0 / 255.0);
        }
    }

    #[test]
    fn mask_is_one_bit_and_round_trips() {
        let mask = Grid::from_fn(13, 3, |x, y| u8::from((x + y) % 3 == 0));
        let bytes = encode_mask(&mask).unwrap();
        let info = png::Decoder::new(Cursor::new(&bytes)).read_info().unwrap().info().clone();
        assert_eq!(info.bit_depth, png::BitDepth::One);
        assert_eq!(decode_mask(&bytes).unwrap(), mask);
    }

    #[test]
    fn pfm_is_exact_for_f32_values() {
        let map = Grid::from_fn(3, 2, |x, y| f64::from((x * 10 + y) as f32 * 0.125));
        let r = decode_pfm(&encode_pfm_scalar(&map).unwrap()).unwrap();
        assert_eq!(r.to_scalar(), map);
        let rgb = Grid::from_fn(2, 2, |x, y| Vec3::new(x as f64, y as f64, -0.5));
        assert_eq!(decode_pfm(&encode_pfm_rgb(&rgb).unwrap()).unwrap().to_rgb(), rgb);
    }

    proptest! {
        #[test]
        fn pfm_garbage_never_panics(bytes in proptest::collection::vec(any::<u8>(), 0..64)) {
            let mut b = b"Pf\n2 2\n-1\n".to_vec();
            b.extend(bytes);
            let _ = decode_pfm(&b);
        }

        #[test]
        fn png_garbage_never_panics(bytes in proptest::collection::vec(any::<u8>(), 0..128)) {
            let _ = decode_png(&bytes);
        }
    }
}
