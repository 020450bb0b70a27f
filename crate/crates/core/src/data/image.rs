//! 8/16-bit raster images: NetPBM read/write, and PNG read/write with the
//! `png` feature.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// Interleaved samples, row-major, `channels` of 1 (gray) or 3 (RGB).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub maxval: u16,
    pub data: Vec<u16>,
}

impl Image {
    pub fn gray8(width: usize, height: usize, data: Vec<u8>) -> Self {
        assert_eq!(data.len(), width * height);
        Image {
            width,
            height,
            channels: 1,
            maxval: 255,
            data: data.into_iter().map(u16::from).collect(),
        }
    }

    pub fn rgb8(width: usize, height: usize, data: Vec<u8>) -> Self {
        assert_eq!(data.len(), 3 * width * height);
        Image {
            width,
            height,
            channels: 3,
            maxval: 255,
            data: data.into_iter().map(u16::from).collect(),
        }
    }

    /// Samples rescaled to the 0..=255 range.
    pub fn to_u8(&self) -> Vec<u8> {
        if self.maxval == 255 {
            return self.data.iter().map(|&v| v as u8).collect();
        }
        let m = self.maxval as u32;
        self.data
            .iter()
            .map(|&v| ((v as u32 * 255 + m / 2) / m) as u8)
            .collect()
    }

    /// Planar (channel-major) samples scaled to `[0, 1]`.
    pub fn to_planar_unit(&self) -> Vec<f32> {
        let plane = self.width * self.height;
        let mut out = vec![0.0; self.data.len()];
        let m = self.maxval as f32;
        for (i, &v) in self.data.iter().enumerate() {
            out[(i % self.channels) * plane + i / self.channels] = v as f32 / m;
        }
        out
    }
}

fn bad(path: &Path, what: impl std::fmt::Display) -> Error {
    Error::Data(format!("{}: {what}", path.display()))
}

struct Header {
    magic: u8,
    width: usize,
    height: usize,
    maxval: u16,
    offset: usize,
}

fn parse_header(bytes: &[u8], path: &Path) -> Result<Header> {
    if bytes.len() < 2 || bytes[0] != b'P' {
        return Err(bad(path, "not a NetPBM file"));
    }
    let magic = bytes[1];
    if !matches!(magic, b'2' | b'3' | b'5' | b'6') {
        return Err(bad(path, format!("unsupported NetPBM variant P{}", magic as char)));
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for f in &mut fields {
        loop {
            match bytes.get(pos) {
                Some(b'#') => {
                    while pos < bytes.len() && bytes[pos] != b'\n' {
                        pos += 1;
                    }
                }
                Some(c) if c.is_ascii_whitespace() => pos += 1,
                Some(_) => break,
                None => return Err(bad(path, "truncated header")),
            }
        }
        let start = pos;
        while pos < bytes.len() && bytes[pos].is_ascii_digit() {
            pos += 1;
        }
        *f = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| bad(path, "malformed header field"))?;
    }
    let [width, height, maxval] = fields;
    if width == 0 || height == 0 {
        return Err(bad(path, "zero image extent"));
    }
    if maxval == 0 || maxval > 65535 {
        return Err(bad(path, format!("maxval {maxval} out of range")));
    }
    // Exactly one whitespace byte separates the header from binary data.
    if !bytes.get(pos).is_some_and(|c| c.is_ascii_whitespace()) && matches!(magic, b'5' | b'6') {
        return Err(bad(path, "missing whitespace after header"));
    }
    Ok(Header {
        magic,
        width,
        height,
        maxval: maxval as u16,
        offset: pos + 1,
    })
}

pub fn decode_netpbm(bytes: &[u8], path: &Path) -> Result<Image> {
    let h = parse_header(bytes, path)?;
    let channels = if matches!(h.magic, b'3' | b'6') { 3 } else { 1 };
    let count = h.width * h.height * channels;
    let body = bytes.get(h.offset.min(bytes.len())..).unwrap_or(&[]);
    let data: Vec<u16> = match h.magic {
        b'5' | b'6' => {
            let wide = h.maxval > 255;
            let need = count * if wide { 2 } else { 1 };
            if body.len() < need {
                return Err(bad(path, format!("expected {need} data bytes, found {}", body.len())));
            }
            if wide {
                body[..need].chunks_exact(2).map(|b| u16::from_be_bytes([b[0], b[1]])).collect()
            } else {
                body[..need].iter().map(|&b| b as u16).collect()
            }
        }
        _ => {
            let text = std::str::from_utf8(body).map_err(|_| bad(path, "non-text plain data"))?;
            let vals: Vec<u16> = text
                .split_ascii_whitespace()
                .take(count)
                .map(|t| t.parse::<u16>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| bad(path, "malformed sample"))?;
            if vals.len() < count {
                return Err(bad(path, format!("expected {count} samples, found {}", vals.len())));
            }
            vals
        }
    };
    if let Some(v) = data.iter().find(|&&v| v > h.maxval) {
        return Err(bad(path, format!("sample {v} exceeds maxval {}", h.maxval)));
    }
    Ok(Image {
        width: h.width,
        height: h.height,
        channels,
        maxval: h.maxval,
        data,
    })
}

/// Binary P5 (gray) or P6 (RGB).
pub fn encode_netpbm(img: &Image) -> Vec<u8> {
    let magic = if img.channels == 3 { 6 } else { 5 };
    let mut out = format!("P{magic}\n{} {}\n{}\n", img.width, img.height, img.maxval).into_bytes();
    if img.maxval > 255 {
        for &v in &img.data {
            out.extend_from_slice(&v.to_be_bytes());
        }
    } else {
        out.extend(img.data.iter().map(|&v| v as u8));
    }
    out
}

#[cfg(feature = "png")]
pub fn decode_png(bytes: &[u8], path: &Path) -> Result<Image> {
    use png::{ColorType, Transformations};
    let mut dec = png::Decoder::new(std::io::Cursor::new(bytes));
    dec.set_transformations(Transformations::normalize_to_color8());
    let mut reader = dec.read_info().map_err(|e| bad(path, e))?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| bad(path, "image too large"))?;
    let mut buf = vec![0; size];
    let info = reader.next_frame(&mut buf).map_err(|e| bad(path, e))?;
    let (w, h) = (info.width as usize, info.height as usize);
    let src_channels = match info.color_type {
        ColorType::Grayscale => 1,
        ColorType::GrayscaleAlpha => 2,
        ColorType::Rgb => 3,
        ColorType::Rgba => 4,
        ColorType::Indexed => return Err(bad(path, "unexpanded palette image")),
    };
    let channels = if src_channels >= 3 { 3 } else { 1 };
    let mut data = Vec::with_capacity(w * h * channels);
    for row in buf[..info.buffer_size()].chunks_exact(info.line_size) {
        for px in row[..w * src_channels].chunks_exact(src_channels) {
            data.extend(px[..channels].iter().map(|&v| v as u16));
        }
    }
    Ok(Image {
        width: w,
        height: h,
        channels,
        maxval: 255,
        data,
    })
}

#[cfg(feature = "png")]
pub fn encode_png(img: &Image) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, img.width as u32, img.height as u32);
        enc.set_color(if img.channels == 3 {
            png::ColorType::Rgb
        } else {
            png::ColorType::Grayscale
        });
        enc.set_depth(png::BitDepth::Eight);
        let mut w = enc
            .write_header()
            .map_err(|e| Error::Data(format!("png encode: {e}")))?;
        w.write_image_data(&img.to_u8())
            .map_err(|e| Error::Data(format!("png encode: {e}")))?;
    }
    Ok(out)
}

/// File extensions [`read_image`] understands.
pub fn supported_extension(ext: &str) -> bool {
    matches!(ext, "pgm" | "ppm" | "pnm") || (cfg!(feature = "png") && ext == "png")
}

pub fn read_image(path: &Path) -> Result<Image> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase)
        .unwrap_or_default();
    match ext.as_str() {
        #[cfg(feature = "png")]
        "png" => decode_png(&bytes, path),
        "pgm" | "ppm" | "pnm" => decode_netpbm(&bytes, path),
        other => Err(bad(path, format!("unsupported image extension {other:?}"))),
    }
}

/// Writes NetPBM, or PNG when the path ends in `.png`.
pub fn write_image(path: &Path, img: &Image) -> Result<()> {
    let bytes = match path.extension().and_then(|e| e.to_str()) {
        #[cfg(feature = "png")]
        Some("png") => encode_png(img)?,
        _ => encode_netpbm(img),
    };
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}
