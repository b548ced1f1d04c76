use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::PixelGrid;
use crate::error::{Error, Result};

/// Crop/flip augmentation for grids and Gaussian jitter for feature payloads.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugConfig {
    /// Extra rows added by the resize before cropping back.
    pub pad_h: usize,
    /// Extra columns added by the resize before cropping back.
    pub pad_w: usize,
    pub flip_prob: f64,
    pub feature_jitter_sigma: f64,
}

impl Default for AugConfig {
    /// 160x80 inputs are resized 30x10 larger; on a 16x8 toy grid that is 3x1.
    fn default() -> Self {
        Self {
            pad_h: 3,
            pad_w: 1,
            flip_prob: 0.5,
            feature_jitter_sigma: 0.0,
        }
    }
}

impl AugConfig {
    /// No augmentation at all.
    pub fn identity() -> Self {
        Self {
            pad_h: 0,
            pad_w: 0,
            flip_prob: 0.0,
            feature_jitter_sigma: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.flip_prob) {
            return Err(Error::InvalidArgument(format!(
                "flip_prob must be in [0, 1], got {}",
                self.flip_prob
            )));
        }
        if !(self.feature_jitter_sigma >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "feature_jitter_sigma must be >= 0, got {}",
                self.feature_jitter_sigma
            )));
        }
        Ok(())
    }
}

/// Nearest-neighbour resize to `(h + pad_h, w + pad_w)`, random crop back to
/// `(h, w)`, then a horizontal flip with probability `flip_prob`.
///
/// Always consumes the same number of random draws so that downstream
/// sampling stays aligned regardless of the configured pads.
pub fn augment<R: Rng + ?Sized>(grid: &PixelGrid, cfg: &AugConfig, rng: &mut R) -> PixelGrid {
    let (h, w, c) = (grid.height(), grid.width(), grid.channels());
    let (big_h, big_w) = (h + cfg.pad_h, w + cfg.pad_w);
    let off_y = rng.random_range(0..=cfg.pad_h);
    let off_x = rng.random_range(0..=cfg.pad_w);
    let flip = rng.random_bool(cfg.flip_prob.clamp(0.0, 1.0));

    let mut values = Vec::with_capacity(h * w * c);
    for r in 0..h {
        let src_r = (r + off_y) * h / big_h;
        for col in 0..w {
            let out_col = if flip { w - 1 - col } else { col };
            let src_c = (out_col + off_x) * w / big_w;
            for ch in 0..c {
                values.push(grid.get(src_r, src_c, ch));
            }
        }
    }
    PixelGrid {
        height: h,
        width: w,
        channels: c,
        values,
    }
}

/// Adds zero-mean Gaussian noise of standard deviation `sigma` to every coordinate.
pub fn jitter_feature<R: Rng + ?Sized>(f: &[f64], sigma: f64, rng: &mut R) -> Result<Vec<f64>> {
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "jitter sigma must be a finite value >= 0, got {sigma}"
        )));
    }
    if sigma == 0.0 {
        return Ok(f.to_vec());
    }
    let normal = Normal::new(0.0, sigma).expect("sigma validated");
    Ok(f.iter().map(|&x| x + normal.sample(rng)).collect())
}
