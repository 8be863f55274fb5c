use std::fs;
use std::io::BufWriter;
use std::path::Path;

use super::GrayImage;
use crate::error::{AiftError, Result};

/// Loads a PGM (P2/P5) or PNG file as grayscale in `[0, 1]`.
///
/// Color PNGs are converted with luminance weights 0.299/0.587/0.114.
pub fn load_image(path: impl AsRef<Path>) -> Result<GrayImage> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| AiftError::input(path, e.to_string()))?;
    if bytes.starts_with(b"P2") || bytes.starts_with(b"P5") {
        parse_pgm(&bytes).map_err(|detail| AiftError::input(path, detail))
    } else if bytes.starts_with(b"\x89PNG") {
        decode_png(&bytes).map_err(|detail| AiftError::input(path, detail))
    } else {
        Err(AiftError::input(path, "unrecognized image format (expected PGM or PNG)"))
    }
}

struct Tokens<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Tokens<'_> {
    fn next(&mut self) -> Option<&[u8]> {
        loop {
            while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_whitespace() {
                self.pos += 1;
            }
            if self.pos < self.bytes.len() && self.bytes[self.pos] == b'#' {
                while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                    self.pos += 1;
                }
                continue;
            }
            break;
        }
        let start = self.pos;
        while self.pos < self.bytes.len() && !self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        (self.pos > start).then(|| &self.bytes[start..self.pos])
    }

    fn number(&mut self, what: &str) -> std::result::Result<usize, String> {
        let tok = self.next().ok_or_else(|| format!("missing {what}"))?;
        std::str::from_utf8(tok)
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| format!("bad {what} {:?}", String::from_utf8_lossy(tok)))
    }
}

fn parse_pgm(bytes: &[u8]) -> std::result::Result<GrayImage, String> {
    let mut t = Tokens { bytes, pos: 0 };
    let magic = t.next().ok_or("empty file")?.to_vec();
    let width = t.number("width")?;
    let height = t.number("height")?;
    let maxval = t.number("maxval")?;
    if width == 0 || height == 0 {
        return Err(format!("degenerate size {width}x{height}"));
    }
    if maxval == 0 || maxval > 65535 {
        return Err(format!("maxval {maxval} out of range"));
    }
    let n = width * height;
    let scale = maxval as f64;
    let raw: Vec<usize> = if magic == b"P2" {
        (0..n).map(|_| t.number("pixel")).collect::<std::result::Result<_, _>>()?
    } else {
        // Exactly one whitespace byte separates the header from the raster.
        let start = t.pos + 1;
        let wide = maxval > 255;
        let need = n * if wide { 2 } else { 1 };
        let raster = bytes.get(start..start + need).ok_or_else(|| format!("truncated raster: need {need} bytes"))?;
        if wide {
            raster.chunks(2).map(|c| u16::from_be_bytes([c[0], c[1]]) as usize).collect()
        } else {
            raster.iter().map(|&b| b as usize).collect()
        }
    };
    if let Some(v) = raw.iter().find(|&&v| v > maxval) {
        return Err(format!("pixel {v} exceeds maxval {maxval}"));
    }
    GrayImage::new(height, width, raw.into_iter().map(|v| v as f64 / scale).collect()).map_err(|e| e.to_string())
}

fn decode_png(bytes: &[u8]) -> std::result::Result<GrayImage, String> {
    let mut decoder = png::Decoder::new(bytes);
    decoder.set_transformations(png::Transformations::EXPAND);
    let mut reader = decoder.read_info().map_err(|e| e.to_string())?;
    let mut buf = vec![0; reader.output_buffer_size()];
    let info = reader.next_frame(&mut buf).map_err(|e| e.to_string())?;
    let (w, h) = (info.width as usize, info.height as usize);
    let data = &buf[..info.buffer_size()];
    let samples: Vec<f64> = match info.bit_depth {
        png::BitDepth::Sixteen => data.chunks(2).map(|c| u16::from_be_bytes([c[0], c[1]]) as f64 / 65535.0).collect(),
        _ => data.iter().map(|&b| b as f64 / 255.0).collect(),
    };
    let channels = info.color_type.samples();
    let values: Vec<f64> = samples
        .chunks(channels)
        .map(|px| match channels {
            1 | 2 => px[0],
            _ => 0.299 * px[0] + 0.587 * px[1] + 0.114 * px[2],
        })
        .collect();
    GrayImage::new(h, w, values).map_err(|e| e.to_string())
}

fn quantize(v: f64, max: f64) -> f64 {
    (v.clamp(0.0, 1.0) * max).round()
}

/// Writes an 8-bit binary PGM (P5).
pub fn save_pgm(path: impl AsRef<Path>, image: &GrayImage) -> Result<()> {
    let mut out = format!("P5\n{} {}\n255\n", image.width, image.height).into_bytes();
    out.extend(image.values.iter().map(|&v| quantize(v, 255.0) as u8));
    fs::write(path, out)?;
    Ok(())
}

/// Writes a 16-bit binary PGM (P5, big-endian samples).
pub fn save_pgm16(path: impl AsRef<Path>, image: &GrayImage) -> Result<()> {
    let mut out = format!("P5\n{} {}\n65535\n", image.width, image.height).into_bytes();
    for &v in &image.values {
        out.extend_from_slice(&(quantize(v, 65535.0) as u16).to_be_bytes());
    }
    fs::write(path, out)?;
    Ok(())
}

/// Writes a 16-bit grayscale PNG.
pub fn save_png16(path: impl AsRef<Path>, image: &GrayImage) -> Result<()> {
    let file = fs::File::create(path.as_ref())?;
    let mut encoder = png::Encoder::new(BufWriter::new(file), image.width as u32, image.height as u32);
    encoder.set_color(png::ColorType::Grayscale);
    encoder.set_depth(png::BitDepth::Sixteen);
    let to_io = |e: png::EncodingError| std::io::Error::other(e.to_string());
    let mut writer = encoder.write_header().map_err(to_io)?;
    let data: Vec<u8> = image.values.iter().flat_map(|&v| (quantize(v, 65535.0) as u16).to_be_bytes()).collect();
    writer.write_image_data(&data).map_err(to_io)?;
    writer.finish().map_err(to_io)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ascii_pgm_scales_by_maxval() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.pgm");
        fs::write(&p, "P2\n# comment\n2 2\n255\n0 255\n128 64\n").unwrap();
        let img = load_image(&p).unwrap();
        assert_eq!((img.height, img.width), (2, 2));
        let want = [0.0, 1.0, 128.0 / 255.0, 64.0 / 255.0];
        for (a, b) in img.values.iter().zip(want) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!((img.values[2] - 0.502).abs() < 1e-3);
        assert!((img.values[3] - 0.251).abs() < 1e-3);
    }

    #[test]
    fn save_then_load_is_idempotent() {
        let dir = tempfile::tempdir().unwrap();
        let img = GrayImage::new(3, 2, vec![0.0, 0.1, 0.5, 0.77, 0.9, 1.0]).unwrap();
        let p = dir.path().join("x.pgm");
        save_pgm(&p, &img).unwrap();
        let once = load_image(&p).unwrap();
        save_pgm(&p, &once).unwrap();
        let twice = load_image(&p).unwrap();
        assert_eq!(once, twice);

        let p16 = dir.path().join("x16.pgm");
        save_pgm16(&p16, &img).unwrap();
        let wide = load_image(&p16).unwrap();
        assert!(wide.values.iter().zip(&img.values).all(|(a, b)| (a - b).abs() < 1e-4));

        let png = dir.path().join("x.png");
        save_png16(&png, &img).unwrap();
        assert_eq!(load_image(&png).unwrap(), wide);
    }

    #[test]
    fn rgb_png_uses_luminance() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("rgb.png");
        let file = fs::File::create(&p).unwrap();
        let mut enc = png::Encoder::new(BufWriter::new(file), 1, 1);
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Eight);
        let mut w = enc.write_header().unwrap();
        w.write_image_data(&[255, 0, 0]).unwrap();
        w.finish().unwrap();
        let img = load_image(&p).unwrap();
        assert!((img.values[0] - 0.299).abs() < 1e-12);
    }

    #[test]
    fn truncated_and_foreign_files_are_input_errors() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.pgm");
        fs::write(&p, b"P5\n4 4\n255\n\x00\x01\x02").unwrap();
        let err = load_image(&p).unwrap_err();
        assert!(matches!(&err, AiftError::Input { path, .. } if path == &p), "{err}");

        fs::write(&p, "P2\n2 2\n255\n0 1 2\n").unwrap();
        assert!(matches!(load_image(&p), Err(AiftError::Input { .. })));

        let q = dir.path().join("q.bmp");
        fs::write(&q, b"BM....").unwrap();
        assert!(matches!(load_image(&q), Err(AiftError::Input { .. })));
        assert!(matches!(load_image(dir.path().join("missing.pgm")), Err(AiftError::Input { .. })));
    }
}
