//! Training-time augmentation: rotation, horizontal flip, scale-crop and color jitter,
//! applied in that order to `[3, S, S]` images.

use super::image::{image_dims, lerp};
use crate::error::{config_err, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    pub enabled: bool,
    pub max_rotation_deg: f64,
    pub hflip_prob: f64,
    /// Range of the crop window's area relative to the image; values above 1 zoom out
    /// onto a reflect-padded canvas.
    pub crop_scale_range: [f64; 2],
    pub brightness: f64,
    pub contrast: f64,
    pub saturation: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            enabled: true,
            max_rotation_deg: 15.0,
            hflip_prob: 0.5,
            crop_scale_range: [0.8, 1.2],
            brightness: 0.2,
            contrast: 0.2,
            saturation: 0.2,
        }
    }
}

impl AugmentConfig {
    pub fn disabled() -> Self {
        AugmentConfig { enabled: false, ..AugmentConfig::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let [lo, hi] = self.crop_scale_range;
        if !(lo > 0.0 && lo <= hi) {
            return Err(config_err!("crop_scale_range must satisfy 0 < lo <= hi, got [{lo}, {hi}]"));
        }
        if !(0.0..=180.0).contains(&self.max_rotation_deg) {
            return Err(config_err!("max_rotation_deg must be in [0, 180]"));
        }
        if !(0.0..=1.0).contains(&self.hflip_prob) {
            return Err(config_err!("hflip_prob must be in [0, 1]"));
        }
        for (name, j) in [("brightness", self.brightness), ("contrast", self.contrast), ("saturation", self.saturation)] {
            if !(0.0..1.0).contains(&j) {
                return Err(config_err!("{name} jitter must be in [0, 1), got {j}"));
            }
        }
        Ok(())
    }

    /// Draws one set of augmentation parameters.
    pub fn sample(&self, rng: &mut Rng) -> AugmentParams {
        let r = self.max_rotation_deg;
        let [lo, hi] = self.crop_scale_range;
        AugmentParams {
            rotation_deg: rng.uniform_range(-r, r),
            flip: rng.bernoulli(self.hflip_prob),
            crop_scale: rng.uniform_range(lo, hi),
            crop_offset: [rng.uniform(), rng.uniform()],
            brightness: rng.uniform_range(1.0 - self.brightness, 1.0 + self.brightness),
            contrast: rng.uniform_range(1.0 - self.contrast, 1.0 + self.contrast),
            saturation: rng.uniform_range(1.0 - self.saturation, 1.0 + self.saturation),
        }
    }

    /// Augments `img`; the identity when disabled.
    pub fn apply(&self, img: &Tensor<f32>, rng: &mut Rng) -> Result<Tensor<f32>> {
        if !self.enabled {
            return Ok(img.clone());
        }
        self.sample(rng).apply(img)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AugmentParams {
    pub rotation_deg: f64,
    pub flip: bool,
    /// Crop window area as a fraction of the image area.
    pub crop_scale: f64,
    /// Window position in `[0, 1]²` along the free range (y, x).
    pub crop_offset: [f64; 2],
    pub brightness: f64,
    pub contrast: f64,
    pub saturation: f64,
}

impl AugmentParams {
    pub fn identity() -> Self {
        AugmentParams {
            rotation_deg: 0.0,
            flip: false,
            crop_scale: 1.0,
            crop_offset: [0.0, 0.0],
            brightness: 1.0,
            contrast: 1.0,
            saturation: 1.0,
        }
    }

    pub fn apply(&self, img: &Tensor<f32>) -> Result<Tensor<f32>> {
        let mut out = if self.rotation_deg != 0.0 { rotate(img, self.rotation_deg)? } else { img.clone() };
        if self.flip {
            out = hflip(&out)?;
        }
        if self.crop_scale != 1.0 {
            out = scale_crop(&out, self.crop_scale, self.crop_offset)?;
        }
        color_jitter(&mut out, self.brightness, self.contrast, self.saturation);
        out.data_mut().iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
        Ok(out)
    }
}

/// Mirrors a continuous coordinate into `[0, n−1]` (reflection about the edge pixels).
fn reflect(mut x: f64, n: usize) -> f64 {
    if n == 1 {
        return 0.0;
    }
    let last = (n - 1) as f64;
    let period = 2.0 * last;
    x = x.rem_euclid(period);
    if x > last {
        period - x
    } else {
        x
    }
}

/// Bilinear sample at continuous `(y, x)` with reflect padding.
fn sample(plane: &[f32], h: usize, w: usize, y: f64, x: f64) -> f32 {
    let (y, x) = (reflect(y, h), reflect(x, w));
    let (y0, x0) = (y.floor() as usize, x.floor() as usize);
    let (y1, x1) = ((y0 + 1).min(h - 1), (x0 + 1).min(w - 1));
    let (fy, fx) = ((y - y0 as f64) as f32, (x - x0 as f64) as f32);
    let top = lerp(plane[y0 * w + x0], plane[y0 * w + x1], fx);
    let bottom = lerp(plane[y1 * w + x0], plane[y1 * w + x1], fx);
    lerp(top, bottom, fy)
}

/// Resamples every channel: output pixel `(y, x)` reads source `map(y, x)`.
fn remap(img: &Tensor<f32>, map: impl Fn(f64, f64) -> (f64, f64)) -> Result<Tensor<f32>> {
    let (h, w) = image_dims(img)?;
    let mut out = Vec::with_capacity(img.len());
    for c in 0..3 {
        let plane = &img.data()[c * h * w..(c + 1) * h * w];
        for y in 0..h {
            for x in 0..w {
                let (sy, sx) = map(y as f64, x as f64);
                out.push(sample(plane, h, w, sy, sx));
            }
        }
    }
    Tensor::new(vec![3, h, w], out)
}

/// Counter-clockwise rotation about the image center, bilinear with reflect padding.
pub fn rotate(img: &Tensor<f32>, degrees: f64) -> Result<Tensor<f32>> {
    let (h, w) = image_dims(img)?;
    let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    let (s, c) = degrees.to_radians().sin_cos();
    remap(img, |y, x| {
        let (dy, dx) = (y - cy, x - cx);
        // inverse rotation of the output coordinate (y axis points down)
        (cy + c * dy + s * dx, cx - s * dy + c * dx)
    })
}

pub fn hflip(img: &Tensor<f32>) -> Result<Tensor<f32>> {
    let (h, w) = image_dims(img)?;
    let mut out = img.clone();
    for row in out.data_mut().chunks_mut(w).take(3 * h) {
        row.reverse();
    }
    Ok(out)
}

/// Crops a square window of area `scale · H·W` at `offset` and resizes it back
/// to `H×W`. Windows larger than the image read reflect-padded pixels.
pub fn scale_crop(img: &Tensor<f32>, scale: f64, offset: [f64; 2]) -> Result<Tensor<f32>> {
    let (h, w) = image_dims(img)?;
    let side = scale.sqrt();
    let (wh, ww) = (side * (h as f64 - 1.0), side * (w as f64 - 1.0));
    let oy = offset[0] * (h as f64 - 1.0 - wh);
    let ox = offset[1] * (w as f64 - 1.0 - ww);
    let (sy, sx) = (wh / (h as f64 - 1.0).max(1.0), ww / (w as f64 - 1.0).max(1.0));
    remap(img, |y, x| (oy + y * sy, ox + x * sx))
}

/// Brightness scales all values; contrast scales distance from the image's mean
/// luminance; saturation scales distance from each pixel's luminance.
pub fn color_jitter(img: &mut Tensor<f32>, brightness: f64, contrast: f64, saturation: f64) {
    let plane = img.len() / 3;
    let d = img.data_mut();
    let (b, c, s) = (brightness as f32, contrast as f32, saturation as f32);
    if b != 1.0 {
        d.iter_mut().for_each(|v| *v *= b);
    }
    let luma = |d: &[f32], p: usize| 0.299 * d[p] + 0.587 * d[plane + p] + 0.114 * d[2 * plane + p];
    if c != 1.0 {
        let mean = (0..plane).map(|p| luma(d, p) as f64).sum::<f64>() as f32 / plane as f32;
        d.iter_mut().for_each(|v| *v = mean + (*v - mean) * c);
    }
    if s != 1.0 {
        for p in 0..plane {
            let g = luma(d, p);
            for ch in 0..3 {
                let v = &mut d[ch * plane + p];
                *v = g + (*v - g) * s;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_image(s: usize, seed: u64) -> Tensor<f32> {
        let mut rng = Rng::new(seed);
        Tensor::new(vec![3, s, s], (0..3 * s * s).map(|_| rng.uniform() as f32).collect()).unwrap()
    }

    #[test]
    fn disabled_and_identity_params_are_identity() {
        let img = random_image(16, 1);
        let cfg = AugmentConfig::disabled();
        assert_eq!(cfg.apply(&img, &mut Rng::new(2)).unwrap(), img);
        assert_eq!(AugmentParams::identity().apply(&img).unwrap(), img);
    }

    #[test]
    fn flip_is_an_involution() {
        let img = random_image(9, 3);
        let forced = AugmentParams { flip: true, ..AugmentParams::identity() };
        let once = forced.apply(&img).unwrap();
        assert_ne!(once, img);
        assert_eq!(forced.apply(&once).unwrap(), img);
        assert_eq!(once.data()[0], img.data()[8]);
    }

    #[test]
    fn rotation_quarter_turn_is_exact_permutation() {
        let img = random_image(7, 4);
        let r = rotate(&img, 90.0).unwrap();
        // counter-clockwise: out[y][x] = in[x][w-1-y]
        for y in 0..7 {
            for x in 0..7 {
                let a = r.data()[y * 7 + x];
                let b = img.data()[x * 7 + (6 - y)];
                assert!((a - b).abs() < 1e-5);
            }
        }
        assert!(rotate(&img, 0.0).unwrap().max_abs_diff(&img) < 1e-6);
    }

    #[test]
    fn unit_scale_crop_is_identity_and_zoom_in_magnifies() {
        let img = random_image(11, 5);
        assert!(scale_crop(&img, 1.0, [0.3, 0.8]).unwrap().max_abs_diff(&img) < 1e-6);
        // A constant image stays constant under any geometric op.
        let c = Tensor::full(vec![3, 12, 12], 0.25f32);
        for p in [0.8, 1.2] {
            assert!(scale_crop(&c, p, [0.5, 0.5]).unwrap().data().iter().all(|&v| (v - 0.25).abs() < 1e-7));
        }
        assert!(rotate(&c, 13.0).unwrap().data().iter().all(|&v| (v - 0.25).abs() < 1e-7));
    }

    #[test]
    fn color_jitter_examples() {
        let mut img = Tensor::full(vec![3, 2, 2], 0.5f32);
        color_jitter(&mut img, 1.2, 1.0, 1.0);
        assert!(img.data().iter().all(|&v| (v - 0.6).abs() < 1e-6));
        // Gray pixels are unaffected by saturation.
        let mut g = Tensor::full(vec![3, 2, 2], 0.4f32);
        color_jitter(&mut g, 1.0, 1.0, 0.5);
        assert!(g.data().iter().all(|&v| (v - 0.4).abs() < 1e-6));
        // Contrast keeps a constant image at its mean.
        let mut k = Tensor::full(vec![3, 2, 2], 0.3f32);
        color_jitter(&mut k, 1.0, 1.7, 1.0);
        assert!(k.data().iter().all(|&v| (v - 0.3).abs() < 1e-6));
    }

    #[test]
    fn sampled_params_respect_ranges_and_seed() {
        let cfg = AugmentConfig::default();
        for seed in 0..200 {
            let p = cfg.sample(&mut Rng::new(seed));
            assert!(p.rotation_deg.abs() <= 15.0);
            assert!((0.8..=1.2).contains(&p.crop_scale));
            assert!((0.8..=1.2).contains(&p.brightness));
            assert_eq!(p, cfg.sample(&mut Rng::new(seed)));
        }
        assert!(AugmentConfig { crop_scale_range: [1.2, 0.8], ..cfg.clone() }.validate().is_err());
        assert!(cfg.validate().is_ok());
    }

    #[test]
    fn augmented_images_keep_shape_and_range() {
        let cfg = AugmentConfig::default();
        let img = random_image(32, 6);
        for seed in 0..20 {
            let a = cfg.apply(&img, &mut Rng::new(seed)).unwrap();
            assert_eq!(a.shape(), &[3, 32, 32]);
            assert!(a.data().iter().all(|v| (0.0..=1.0).contains(v)));
            assert_eq!(a, cfg.apply(&img, &mut Rng::new(seed)).unwrap());
        }
    }
}
