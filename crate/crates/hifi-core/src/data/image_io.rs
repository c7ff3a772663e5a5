//! 8-bit RGB image reading and writing.
//!
//! PNG goes through the `image` crate; binary PPM (P6) is implemented here
//! directly and is the zero-dependency interchange format: the encoder emits
//! exactly `P6\n<w> <h>\n255\n` followed by raw RGB bytes.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

/// Maps a `(1, 3, H, W)` tensor in [0,1] to interleaved RGB bytes.
pub fn tensor_to_rgb8(t: &Tensor) -> Result<Vec<u8>> {
    let s = t.shape();
    if s.n != 1 || s.c != 3 {
        return Err(Error::Image(format!("expected a 1x3xHxW tensor, got {s}")));
    }
    let d = t.data();
    let hw = s.h * s.w;
    let mut out = Vec::with_capacity(3 * hw);
    for i in 0..hw {
        for c in 0..3 {
            let v = d[c * hw + i].clamp(0.0, 1.0);
            out.push((v * 255.0).round() as u8);
        }
    }
    Ok(out)
}

fn rgb8_to_tensor(bytes: &[u8], w: usize, h: usize, max_val: f64) -> Result<Tensor> {
    let hw = h * w;
    if bytes.len() != 3 * hw {
        return Err(Error::Image(format!(
            "pixel payload has {} bytes, expected {}",
            bytes.len(),
            3 * hw
        )));
    }
    let mut data = vec![0.0; 3 * hw];
    for i in 0..hw {
        for c in 0..3 {
            data[c * hw + i] = bytes[3 * i + c] as f64 / max_val;
        }
    }
    Tensor::from_vec(Shape::new(1, 3, h, w), data)
}

/// Encodes a `(1, 3, H, W)` tensor as binary PPM (P6, maxval 255).
pub fn encode_ppm(t: &Tensor) -> Result<Vec<u8>> {
    let s = t.shape();
    let pixels = tensor_to_rgb8(t)?;
    let mut out = format!("P6\n{} {}\n255\n", s.w, s.h).into_bytes();
    out.extend_from_slice(&pixels);
    Ok(out)
}

/// Decodes a binary PPM (P6). Handles `#` comments and arbitrary whitespace
/// in the header; maxval up to 255 (samples are scaled by the stated maxval).
pub fn decode_ppm(bytes: &[u8]) -> Result<Tensor> {
    if bytes.len() < 2 || &bytes[0..2] != b"P6" {
        return Err(Error::Image("not a P6 ppm file".to_string()));
    }
    let mut pos = 2usize;
    let mut fields = [0usize; 3];
    for field in fields.iter_mut() {
        // skip whitespace and comments
        loop {
            if pos >= bytes.len() {
                return Err(Error::Image("truncated ppm header".to_string()));
            }
            match bytes[pos] {
                b' ' | b'\t' | b'\r' | b'\n' => pos += 1,
                b'#' => {
                    while pos < bytes.len() && bytes[pos] != b'\n' {
                        pos += 1;
                    }
                }
                _ => break,
            }
        }
        let start = pos;
        while pos < bytes.len() && bytes[pos].is_ascii_digit() {
            pos += 1;
        }
        if pos == start {
            return Err(Error::Image("malformed ppm header field".to_string()));
        }
        let text = std::str::from_utf8(&bytes[start..pos]).expect("ascii digits");
        *field = text
            .parse()
            .map_err(|_| Error::Image(format!("bad ppm header value '{text}'")))?;
    }
    let [w, h, max_val] = fields;
    if w == 0 || h == 0 {
        return Err(Error::Image(format!("ppm has empty dimensions {w}x{h}")));
    }
    if max_val == 0 || max_val > 255 {
        return Err(Error::Image(format!("unsupported ppm maxval {max_val} (expected 1..=255)")));
    }
    // exactly one whitespace byte separates the header from the payload
    if pos >= bytes.len() || !matches!(bytes[pos], b' ' | b'\t' | b'\r' | b'\n') {
        return Err(Error::Image("missing whitespace after ppm header".to_string()));
    }
    pos += 1;
    rgb8_to_tensor(&bytes[pos..], w, h, max_val as f64)
}

fn extension_of(path: &Path) -> String {
    path.extension().and_then(|e| e.to_str()).unwrap_or("").to_ascii_lowercase()
}

/// Loads a PNG or PPM image as a `(1, 3, H, W)` tensor in [0, 1]. Other
/// decodable formats are converted to RGB.
pub fn load_image(path: &Path) -> Result<Tensor> {
    match extension_of(path).as_str() {
        "ppm" => decode_ppm(&fs::read(path)?),
        _ => {
            let img = image::open(path)
                .map_err(|e| Error::Image(format!("{}: {e}", path.display())))?
                .to_rgb8();
            let (w, h) = (img.width() as usize, img.height() as usize);
            rgb8_to_tensor(img.as_raw(), w, h, 255.0)
        }
    }
}

/// Saves a `(1, 3, H, W)` tensor in [0, 1]; the format follows the file
/// extension (`.png` or `.ppm`).
pub fn save_image(t: &Tensor, path: &Path) -> Result<()> {
    match extension_of(path).as_str() {
        "ppm" => Ok(fs::write(path, encode_ppm(t)?)?),
        "png" => {
            let s = t.shape();
            let pixels = tensor_to_rgb8(t)?;
            let img: image::RgbImage =
                image::ImageBuffer::from_raw(s.w as u32, s.h as u32, pixels)
                    .ok_or_else(|| Error::Image("buffer size mismatch".to_string()))?;
            img.save(path).map_err(|e| Error::Image(format!("{}: {e}", path.display())))
        }
        other => Err(Error::Image(format!(
            "unsupported output extension '{other}' (expected png or ppm)"
        ))),
    }
}
