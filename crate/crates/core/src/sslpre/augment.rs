use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::synthdata::ImageShape;

/// Random view generation for contrastive pretraining.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugConfig {
    /// Lower bound of the crop area fraction; 1 disables cropping.
    pub crop_min_scale: f64,
    /// Per-channel multiplicative jitter amplitude.
    pub tint_jitter: f64,
    pub gray_prob: f64,
    pub noise_std: f64,
    pub flip_prob: f64,
}

impl AugConfig {
    /// No-op configuration.
    pub fn identity() -> Self {
        Self {
            crop_min_scale: 1.0,
            tint_jitter: 0.0,
            gray_prob: 0.0,
            noise_std: 0.0,
            flip_prob: 0.0,
        }
    }

    /// Frequent grayscale and strong tint jitter: pushes the encoder toward
    /// glyph shape while color stays decodable from the features.
    pub fn color_heavy() -> Self {
        Self {
            tint_jitter: 0.6,
            gray_prob: 0.8,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Config(format!("augmentation {what} out of range")));
        if !(self.crop_min_scale > 0.0 && self.crop_min_scale <= 1.0) {
            return bad("crop_min_scale");
        }
        if !(self.tint_jitter >= 0.0) {
            return bad("tint_jitter");
        }
        if !(0.0..=1.0).contains(&self.gray_prob) {
            return bad("gray_prob");
        }
        if !(self.noise_std >= 0.0) {
            return bad("noise_std");
        }
        if !(0.0..=1.0).contains(&self.flip_prob) {
            return bad("flip_prob");
        }
        Ok(())
    }
}

impl Default for AugConfig {
    /// Mild crops, small tint jitter and rare grayscale: the color attribute
    /// stays linearly decodable from pretrained features.
    fn default() -> Self {
        Self {
            crop_min_scale: 0.6,
            tint_jitter: 0.2,
            gray_prob: 0.1,
            noise_std: 0.05,
            flip_prob: 0.0,
        }
    }
}

fn bilinear(src: &[f32], shape: ImageShape, y: f64, x: f64, c: usize) -> f32 {
    let (h, w, ch) = (shape.height, shape.width, shape.channels);
    let y = y.clamp(0.0, (h - 1) as f64);
    let x = x.clamp(0.0, (w - 1) as f64);
    let (y0, x0) = (y.floor() as usize, x.floor() as usize);
    let (y1, x1) = ((y0 + 1).min(h - 1), (x0 + 1).min(w - 1));
    let (fy, fx) = ((y - y0 as f64) as f32, (x - x0 as f64) as f32);
    let at = |r: usize, q: usize| src[(r * w + q) * ch + c];
    let top = at(y0, x0) * (1.0 - fx) + at(y0, x1) * fx;
    let bot = at(y1, x0) * (1.0 - fx) + at(y1, x1) * fx;
    top * (1.0 - fy) + bot * fy
}

/// One random view of `x` (channel-last image of `shape`).
pub fn augment<R: Rng + ?Sized>(x: &[f32], shape: ImageShape, cfg: &AugConfig, rng: &mut R) -> Vec<f32> {
    let (h, w, ch) = (shape.height, shape.width, shape.channels);
    let mut out = x.to_vec();

    if cfg.crop_min_scale < 1.0 {
        let scale = rng.random_range(cfg.crop_min_scale..=1.0);
        let side_h = scale.sqrt() * h as f64;
        let side_w = scale.sqrt() * w as f64;
        let top = rng.random_range(0.0..=(h as f64 - side_h));
        let left = rng.random_range(0.0..=(w as f64 - side_w));
        for i in 0..h {
            let sy = top + (i as f64 + 0.5) * side_h / h as f64 - 0.5;
            for j in 0..w {
                let sx = left + (j as f64 + 0.5) * side_w / w as f64 - 0.5;
                for c in 0..ch {
                    out[(i * w + j) * ch + c] = bilinear(x, shape, sy, sx, c);
                }
            }
        }
    }

    if cfg.flip_prob > 0.0 && rng.random::<f64>() < cfg.flip_prob {
        let src = out.clone();
        for i in 0..h {
            for j in 0..w {
                let (d, s) = ((i * w + j) * ch, (i * w + (w - 1 - j)) * ch);
                out[d..d + ch].copy_from_slice(&src[s..s + ch]);
            }
        }
    }

    if cfg.tint_jitter > 0.0 {
        let factors: Vec<f32> = (0..ch)
            .map(|_| 1.0 + rng.random_range(-cfg.tint_jitter..=cfg.tint_jitter) as f32)
            .collect();
        for px in out.chunks_exact_mut(ch) {
            for (v, f) in px.iter_mut().zip(&factors) {
                *v *= f;
            }
        }
    }

    if ch == 3 && cfg.gray_prob > 0.0 && rng.random::<f64>() < cfg.gray_prob {
        for px in out.chunks_exact_mut(3) {
            let g = 0.299 * px[0] + 0.587 * px[1] + 0.114 * px[2];
            px.iter_mut().for_each(|v| *v = g);
        }
    }

    if cfg.noise_std > 0.0 {
        let normal = Normal::new(0.0, cfg.noise_std).expect("validated noise_std");
        for v in out.iter_mut() {
            *v += normal.sample(rng) as f32;
        }
    }

    out.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
    out
}
