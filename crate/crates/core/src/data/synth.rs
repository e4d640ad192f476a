//! Procedural "artist styles" for desk-scale experiments.
//!
//! Each artist owns a palette of three colors, an oriented stroke texture (band
//! angle, frequency, sharpness) and a composition motif. Images of one artist vary in
//! phase, motif placement and noise, so classes are separable but not trivially so.

use super::image::write_ppm;
use super::manifest::{Manifest, Record};
use crate::error::{config_err, Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;
use std::f64::consts::PI;
use std::path::Path;

const STYLE_TAG: u64 = 0x57_1e;
const IMAGE_TAG: u64 = 0x1_3a9e;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Motif {
    Disc,
    Square,
    Ring,
    Diagonal,
}

impl Motif {
    const ALL: [Motif; 4] = [Motif::Disc, Motif::Square, Motif::Ring, Motif::Diagonal];

    pub fn name(self) -> &'static str {
        match self {
            Motif::Disc => "disc",
            Motif::Square => "square",
            Motif::Ring => "ring",
            Motif::Diagonal => "diagonal",
        }
    }

    /// Membership of normalized offset `(dy, dx)` from the motif center, radius 1.
    fn contains(self, dy: f64, dx: f64) -> bool {
        match self {
            Motif::Disc => dy * dy + dx * dx <= 1.0,
            Motif::Square => dy.abs() <= 0.85 && dx.abs() <= 0.85,
            Motif::Ring => (0.55..=1.0).contains(&(dy * dy + dx * dx).sqrt()),
            Motif::Diagonal => (dy - dx).abs() <= 0.35 && dy.abs() <= 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ArtistStyle {
    pub name: String,
    pub palette: [[f64; 3]; 3],
    pub band_angle: f64,
    /// Stripes across the image.
    pub band_freq: f64,
    /// Exponent shaping the stripe profile; larger is crisper.
    pub band_sharpness: f64,
    pub motif: Motif,
}

fn hsv(h: f64, s: f64, v: f64) -> [f64; 3] {
    let h6 = (h.rem_euclid(1.0)) * 6.0;
    let c = v * s;
    let x = c * (1.0 - ((h6 % 2.0) - 1.0).abs());
    let (r, g, b) = match h6 as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [r + m, g + m, b + m]
}

impl ArtistStyle {
    /// Style of artist `a` out of `n`. Hues are spread evenly so palettes differ.
    pub fn new(a: usize, n: usize, seed: u64) -> Self {
        let mut rng = Rng::new(seed).split_path(&[STYLE_TAG, a as u64]);
        let hue = (a as f64 + 0.3 * rng.uniform()) / n as f64;
        let palette = [
            hsv(hue, rng.uniform_range(0.5, 0.8), rng.uniform_range(0.6, 0.9)),
            hsv(hue + 0.08, rng.uniform_range(0.3, 0.6), rng.uniform_range(0.25, 0.5)),
            hsv(hue + 0.5, rng.uniform_range(0.6, 0.9), rng.uniform_range(0.7, 1.0)),
        ];
        ArtistStyle {
            name: format!("artist_{a:02}"),
            palette,
            band_angle: PI * (a as f64 + 0.25 * rng.uniform()) / n as f64,
            band_freq: rng.uniform_range(3.0, 9.0),
            band_sharpness: rng.uniform_range(0.5, 3.0),
            motif: Motif::ALL[a % Motif::ALL.len()],
        }
    }

    /// Renders one `[3, size, size]` image.
    pub fn render(&self, size: usize, rng: &mut Rng) -> Tensor<f32> {
        let phase = rng.uniform_range(0.0, 2.0 * PI);
        let angle = self.band_angle + rng.uniform_range(-0.1, 0.1);
        let (sa, ca) = angle.sin_cos();
        let radius = rng.uniform_range(0.15, 0.3);
        let (my, mx) = (rng.uniform_range(0.3, 0.7), rng.uniform_range(0.3, 0.7));
        let plane = size * size;
        let mut data = vec![0f32; 3 * plane];
        let s = size as f64;
        for y in 0..size {
            for x in 0..size {
                let (fy, fx) = (y as f64 / s, x as f64 / s);
                let t = 2.0 * PI * self.band_freq * (fx * ca + fy * sa) + phase;
                let band = (0.5 + 0.5 * t.sin()).powf(self.band_sharpness);
                let mut c = [0.0; 3];
                for (k, ck) in c.iter_mut().enumerate() {
                    *ck = self.palette[0][k] * (1.0 - band) + self.palette[1][k] * band;
                }
                if self.motif.contains((fy - my) / radius, (fx - mx) / radius) {
                    c = self.palette[2];
                }
                for (k, ck) in c.iter().enumerate() {
                    let v = ck + rng.uniform_range(-0.04, 0.04);
                    data[k * plane + y * size + x] = v.clamp(0.0, 1.0) as f32;
                }
            }
        }
        Tensor::new(vec![3, size, size], data).expect("size > 0")
    }
}

/// Writes `num_artists × per_artist` PPM images under `out_dir/images` and an
/// unsplit `out_dir/manifest.tsv`. Output bytes depend only on the arguments.
pub fn generate_synthetic_dataset(
    num_artists: usize,
    per_artist: usize,
    seed: u64,
    out_dir: &Path,
    size: usize,
) -> Result<Manifest> {
    if num_artists < 2 {
        return Err(config_err!("need at least 2 artists, got {num_artists}"));
    }
    if per_artist == 0 || size < 2 {
        return Err(config_err!("per_artist must be positive and size at least 2"));
    }
    let img_dir = out_dir.join("images");
    std::fs::create_dir_all(&img_dir).map_err(|e| Error::io(&img_dir, e))?;
    let mut records = Vec::with_capacity(num_artists * per_artist);
    for a in 0..num_artists {
        let style = ArtistStyle::new(a, num_artists, seed);
        for i in 0..per_artist {
            let mut rng = Rng::new(seed).split_path(&[IMAGE_TAG, a as u64, i as u64]);
            let img = style.render(size, &mut rng);
            let rel = format!("images/{}_{i:04}.ppm", style.name);
            write_ppm(&out_dir.join(&rel), &img)?;
            records.push(Record { path: rel, artist: style.name.clone(), style: style.motif.name().into(), split: None });
        }
    }
    let m = Manifest::new(out_dir, records)?;
    m.save(&out_dir.join("manifest.tsv"))?;
    Ok(m)
}
