//! Image decoding (portable pixmap family and PNG), PPM writing and bilinear resizing.
//!
//! Images are `[3, H, W]` `f32` tensors with values in `[0, 1]`. Grayscale inputs are
//! replicated to three channels and alpha is dropped.

use crate::error::{input_err, Error, Result};
use crate::tensor::Tensor;
use std::io::Cursor;
use std::path::Path;

pub fn read_image(path: &Path) -> Result<Tensor<f32>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_image(&bytes).map_err(|e| match e {
        Error::Input(msg) => input_err!("{}: {msg}", path.display()),
        other => other,
    })
}

pub fn decode_image(bytes: &[u8]) -> Result<Tensor<f32>> {
    if bytes.starts_with(b"\x89PNG\r\n\x1a\n") {
        decode_png(bytes)
    } else if bytes.len() >= 2 && bytes[0] == b'P' && matches!(bytes[1], b'2' | b'3' | b'5' | b'6') {
        decode_pnm(bytes)
    } else {
        Err(input_err!("unrecognized image format (expected PNG or P2/P3/P5/P6 pixmap)"))
    }
}

/// Header tokens of a pixmap, skipping whitespace and `#` comments. Returns the tokens and
/// the offset just past the single whitespace byte that ends the header.
fn pnm_header(bytes: &[u8], count: usize) -> Result<(Vec<String>, usize)> {
    let mut tokens = Vec::new();
    let mut i = 0;
    while tokens.len() < count {
        while i < bytes.len() && (bytes[i].is_ascii_whitespace() || bytes[i] == b'#') {
            if bytes[i] == b'#' {
                while i < bytes.len() && bytes[i] != b'\n' {
                    i += 1;
                }
            } else {
                i += 1;
            }
        }
        let start = i;
        while i < bytes.len() && !bytes[i].is_ascii_whitespace() && bytes[i] != b'#' {
            i += 1;
        }
        if start == i {
            return Err(input_err!("truncated pixmap header"));
        }
        tokens.push(String::from_utf8_lossy(&bytes[start..i]).into_owned());
    }
    Ok((tokens, i + 1))
}

fn decode_pnm(bytes: &[u8]) -> Result<Tensor<f32>> {
    let (tok, offset) = pnm_header(bytes, 4)?;
    let num = |s: &str, what: &str| s.parse::<usize>().map_err(|_| input_err!("bad pixmap {what} {s:?}"));
    let (w, h, maxval) = (num(&tok[1], "width")?, num(&tok[2], "height")?, num(&tok[3], "maxval")?);
    if w == 0 || h == 0 || maxval == 0 || maxval > 65535 {
        return Err(input_err!("bad pixmap geometry {w}x{h} maxval {maxval}"));
    }
    let color = matches!(tok[0].as_str(), "P3" | "P6");
    let per_pixel = if color { 3 } else { 1 };
    let n = w * h * per_pixel;
    let values: Vec<usize> = match tok[0].as_str() {
        "P2" | "P3" => {
            let body = std::str::from_utf8(bytes.get(offset.min(bytes.len())..).unwrap_or(&[]))
                .map_err(|_| input_err!("ASCII pixmap body is not text"))?;
            let v: Vec<usize> = body
                .split_ascii_whitespace()
                .take(n)
                .map(|s| num(s, "sample"))
                .collect::<Result<_>>()?;
            if v.len() < n {
                return Err(input_err!("pixmap has {} of {n} samples", v.len()));
            }
            v
        }
        _ => {
            let width = if maxval > 255 { 2 } else { 1 };
            let body = bytes.get(offset..).unwrap_or(&[]);
            if body.len() < n * width {
                return Err(input_err!("pixmap payload truncated: {} of {} bytes", body.len(), n * width));
            }
            if width == 1 {
                body[..n].iter().map(|&b| b as usize).collect()
            } else {
                body[..2 * n].chunks(2).map(|c| u16::from_be_bytes([c[0], c[1]]) as usize).collect()
            }
        }
    };
    if let Some(v) = values.iter().find(|&&v| v > maxval) {
        return Err(input_err!("pixmap sample {v} exceeds maxval {maxval}"));
    }
    let scale = 1.0 / maxval as f32;
    Ok(planar(w, h, per_pixel, per_pixel, |i| values[i] as f32 * scale))
}

/// Interleaved samples → `[3, H, W]`. `stride` samples per pixel, of which the first
/// `channels` (1 or 3) are used.
fn planar(w: usize, h: usize, channels: usize, stride: usize, sample: impl Fn(usize) -> f32) -> Tensor<f32> {
    let plane = w * h;
    let mut data = vec![0.0f32; 3 * plane];
    for p in 0..plane {
        for c in 0..3 {
            let src = if channels == 1 { 0 } else { c };
            data[c * plane + p] = sample(p * stride + src);
        }
    }
    Tensor::new(vec![3, h, w], data).expect("non-empty image")
}

fn decode_png(bytes: &[u8]) -> Result<Tensor<f32>> {
    let bad = |e: png::DecodingError| input_err!("corrupt PNG: {e}");
    let mut decoder = png::Decoder::new(Cursor::new(bytes));
    decoder.set_transformations(png::Transformations::normalize_to_color8());
    let mut reader = decoder.read_info().map_err(bad)?;
    let size = reader.output_buffer_size().ok_or_else(|| input_err!("PNG too large"))?;
    let mut buf = vec![0u8; size];
    let info = reader.next_frame(&mut buf).map_err(bad)?;
    let (w, h) = (info.width as usize, info.height as usize);
    let (channels, stride) = match info.color_type {
        png::ColorType::Grayscale => (1, 1),
        png::ColorType::GrayscaleAlpha => (1, 2),
        png::ColorType::Rgb => (3, 3),
        png::ColorType::Rgba => (3, 4),
        png::ColorType::Indexed => return Err(input_err!("unexpanded palette PNG")),
    };
    let rows: Vec<u8> = buf.chunks(info.line_size).take(h).flat_map(|r| r[..w * stride].to_vec()).collect();
    Ok(planar(w, h, channels, stride, |i| rows[i] as f32 / 255.0))
}

fn to_u8(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Binary 8-bit PPM (P6) bytes of a `[3, H, W]` image.
pub fn encode_ppm(img: &Tensor<f32>) -> Result<Vec<u8>> {
    let (h, w) = image_dims(img)?;
    let plane = h * w;
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    let d = img.data();
    for p in 0..plane {
        for c in 0..3 {
            out.push(to_u8(d[c * plane + p]));
        }
    }
    Ok(out)
}

pub fn write_ppm(path: &Path, img: &Tensor<f32>) -> Result<()> {
    std::fs::write(path, encode_ppm(img)?).map_err(|e| Error::io(path, e))
}

/// 8-bit RGB PNG bytes of a `[3, H, W]` image.
pub fn encode_png(img: &Tensor<f32>) -> Result<Vec<u8>> {
    let (h, w) = image_dims(img)?;
    let plane = h * w;
    let d = img.data();
    let rgb: Vec<u8> = (0..plane).flat_map(|p| (0..3).map(move |c| to_u8(d[c * plane + p]))).collect();
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, w as u32, h as u32);
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc.write_header().map_err(|e| Error::Format(e.to_string()))?;
        writer.write_image_data(&rgb).map_err(|e| Error::Format(e.to_string()))?;
    }
    Ok(out)
}

/// `(H, W)` of a `[3, H, W]` image.
pub fn image_dims(img: &Tensor<f32>) -> Result<(usize, usize)> {
    match img.shape() {
        [3, h, w] => Ok((*h, *w)),
        s => Err(input_err!("expected a [3, H, W] image, got {s:?}")),
    }
}

/// Corner-aligned bilinear resize: output pixel `(y, x)` samples source coordinate
/// `(y·(H−1)/(H'−1), x·(W−1)/(W'−1))`, so the four corners map onto each other.
/// Output is clamped to `[0, 1]`.
pub fn resize_bilinear(img: &Tensor<f32>, out_h: usize, out_w: usize) -> Result<Tensor<f32>> {
    let (h, w) = image_dims(img)?;
    if h < 2 || w < 2 {
        return Err(input_err!("cannot resize a degenerate {h}x{w} image"));
    }
    if out_h == 0 || out_w == 0 {
        return Err(input_err!("resize target {out_h}x{out_w} is empty"));
    }
    if (h, w) == (out_h, out_w) {
        let mut same = img.clone();
        same.data_mut().iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
        return Ok(same);
    }
    let coord = |i: usize, n_in: usize, n_out: usize| -> (usize, usize, f32) {
        if n_out == 1 {
            return (0, 0, 0.0);
        }
        let s = i as f64 * (n_in - 1) as f64 / (n_out - 1) as f64;
        let i0 = (s.floor() as usize).min(n_in - 1);
        let i1 = (i0 + 1).min(n_in - 1);
        (i0, i1, (s - i0 as f64) as f32)
    };
    let ys: Vec<_> = (0..out_h).map(|y| coord(y, h, out_h)).collect();
    let xs: Vec<_> = (0..out_w).map(|x| coord(x, w, out_w)).collect();
    let src = img.data();
    let mut out = Vec::with_capacity(3 * out_h * out_w);
    for c in 0..3 {
        let plane = &src[c * h * w..(c + 1) * h * w];
        for &(y0, y1, fy) in &ys {
            for &(x0, x1, fx) in &xs {
                let top = lerp(plane[y0 * w + x0], plane[y0 * w + x1], fx);
                let bottom = lerp(plane[y1 * w + x0], plane[y1 * w + x1], fx);
                out.push(lerp(top, bottom, fy).clamp(0.0, 1.0));
            }
        }
    }
    Tensor::new(vec![3, out_h, out_w], out)
}

/// `a + (b − a)·t`, exact when `a == b`.
pub(crate) fn lerp(a: f32, b: f32, t: f32) -> f32 {
    a + (b - a) * t
}
