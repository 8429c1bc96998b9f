use std::cell::Cell;
use std::fs;
use std::io::{self, BufRead, Cursor, Read, Seek, SeekFrom};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// 8-bit sample for an intensity in `[0, 1]`: `⌊255·v + ½⌋`, clamped.
pub fn quantize(v: f32) -> u8 {
    if v.is_nan() {
        return 0;
    }
    (f64::from(v) * 255.0 + 0.5).floor().clamp(0.0, 255.0) as u8
}

/// Reads an 8-bit PNG or a binary PPM (P6) as a `[3, H, W]` tensor in `[0, 1]`.
///
/// The format is detected from the file signature, not the extension.
pub fn load_image(path: &Path) -> Result<Tensor> {
    let bytes = fs::read(path)?;
    if bytes.starts_with(b"\x89PNG\r\n\x1a\n") {
        decode_png(path, &bytes)
    } else if bytes.starts_with(b"P6") {
        decode_ppm(path, &bytes)
    } else {
        Err(decode_err(path, 0, "not a PNG or binary PPM file"))
    }
}

/// Writes a `[3, H, W]` (or `[1, 3, H, W]`) tensor in `[0, 1]`; PNG unless the
/// extension is `.ppm`.
pub fn save_image(path: &Path, image: &Tensor) -> Result<()> {
    let (h, w, rgb) = to_rgb8(image)?;
    let is_ppm = path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("ppm"));
    let bytes = if is_ppm {
        let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
        out.extend_from_slice(&rgb);
        out
    } else {
        encode_png(w, h, &rgb)?
    };
    fs::write(path, bytes)?;
    Ok(())
}

pub fn encode_png(w: usize, h: usize, rgb: &[u8]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    let mut enc = png::Encoder::new(&mut out, w as u32, h as u32);
    enc.set_color(png::ColorType::Rgb);
    enc.set_depth(png::BitDepth::Eight);
    let png_err = |e: png::EncodingError| Error::Io(io::Error::other(e));
    let mut writer = enc.write_header().map_err(png_err)?;
    writer.write_image_data(rgb).map_err(png_err)?;
    writer.finish().map_err(png_err)?;
    Ok(out)
}

/// Interleaved 8-bit RGB samples of an image tensor.
pub fn to_rgb8(image: &Tensor) -> Result<(usize, usize, Vec<u8>)> {
    let shape = image.shape();
    let (c, h, w) = match *shape {
        [c, h, w] | [1, c, h, w] => (c, h, w),
        _ => return Err(Error::shape("save_image", format!("expected [3, H, W], got {shape:?}"))),
    };
    if c != 3 {
        return Err(Error::dim("save_image", "C", 3, c));
    }
    if h == 0 || w == 0 {
        return Err(Error::shape("save_image", "empty image"));
    }
    let plane = h * w;
    let d = image.data();
    let mut rgb = Vec::with_capacity(3 * plane);
    for i in 0..plane {
        for ch in 0..3 {
            rgb.push(quantize(d[ch * plane + i]));
        }
    }
    Ok((h, w, rgb))
}

fn from_interleaved(h: usize, w: usize, channels: usize, samples: &[u8], scale: f32) -> Tensor {
    let plane = h * w;
    Tensor::from_fn(&[3, h, w], |i| {
        let (ch, p) = (i / plane, i % plane);
        let src = if channels >= 3 { ch } else { 0 };
        f32::from(samples[p * channels + src]) / scale
    })
}

fn decode_err(path: &Path, offset: u64, reason: impl Into<String>) -> Error {
    Error::Decode {
        path: path.to_path_buf(),
        offset,
        reason: reason.into(),
    }
}

/// Cursor that records how far the decoder got.
struct Tracked<'a> {
    inner: Cursor<&'a [u8]>,
    high: &'a Cell<u64>,
}

impl Tracked<'_> {
    fn mark(&self) {
        self.high.set(self.high.get().max(self.inner.position()));
    }
}

impl Read for Tracked<'_> {
    fn read(&mut self, buf: &mut [u8]) -> io::Result<usize> {
        let n = self.inner.read(buf)?;
        self.mark();
        Ok(n)
    }
}

impl BufRead for Tracked<'_> {
    fn fill_buf(&mut self) -> io::Result<&[u8]> {
        self.inner.fill_buf()
    }

    fn consume(&mut self, amt: usize) {
        self.inner.consume(amt);
        self.mark();
    }
}

impl Seek for Tracked<'_> {
    fn seek(&mut self, pos: SeekFrom) -> io::Result<u64> {
        self.inner.seek(pos)
    }
}

fn decode_png(path: &Path, bytes: &[u8]) -> Result<Tensor> {
    let high = Cell::new(0);
    let fail = |e: png::DecodingError| decode_err(path, high.get(), e.to_string());
    let mut decoder = png::Decoder::new(Tracked {
        inner: Cursor::new(bytes),
        high: &high,
    });
    decoder.set_transformations(png::Transformations::EXPAND);
    let mut reader = decoder.read_info().map_err(fail)?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| decode_err(path, high.get(), "image too large"))?;
    let mut buf = vec![0; size];
    let info = reader.next_frame(&mut buf).map_err(fail)?;
    if info.bit_depth != png::BitDepth::Eight {
        return Err(decode_err(path, 24, format!("unsupported bit depth {:?}", info.bit_depth)));
    }
    let channels = info.color_type.samples();
    let (w, h) = (info.width as usize, info.height as usize);
    let rows: Vec<u8> = buf[..info.buffer_size()]
        .chunks(info.line_size)
        .flat_map(|r| &r[..w * channels])
        .copied()
        .collect();
    Ok(from_interleaved(h, w, channels, &rows, 255.0))
}

fn decode_ppm(path: &Path, bytes: &[u8]) -> Result<Tensor> {
    let mut pos = 2;
    let mut field = |name: &str| -> Result<usize> {
        loop {
            match bytes.get(pos) {
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                _ => break,
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| decode_err(path, start as u64, format!("bad PPM {name}")))
    };
    let w = field("width")?;
    let h = field("height")?;
    let maxval = field("maxval")?;
    if maxval == 0 || maxval > 255 {
        return Err(decode_err(path, pos as u64, format!("unsupported PPM maxval {maxval}")));
    }
    if w == 0 || h == 0 {
        return Err(decode_err(path, pos as u64, "empty PPM image"));
    }
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(decode_err(path, pos as u64, "PPM header not terminated by whitespace"));
    }
    let start = pos + 1;
    let need = 3 * w * h;
    let payload = &bytes[start.min(bytes.len())..];
    if payload.len() < need {
        return Err(decode_err(
            path,
            bytes.len() as u64,
            format!("truncated PPM: {} of {need} sample bytes", payload.len()),
        ));
    }
    Ok(from_interleaved(h, w, 3, &payload[..need], maxval as f32))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantize_rounds_half_up() {
        assert_eq!(quantize(0.0), 0);
        assert_eq!(quantize(1.0), 255);
        assert_eq!(quantize(-0.3), 0);
        assert_eq!(quantize(1.7), 255);
        assert_eq!(quantize(0.6 / 255.0), 1);
        assert_eq!(quantize(0.4 / 255.0), 0);
        assert_eq!(quantize(f32::NAN), 0);
    }
}
