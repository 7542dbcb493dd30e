//! Virtual training samples built by blending a labeled still with a negative
//! video frame.
//!
//! The blend weight λ is the weight on the *frame*:
//! `x̃ = (1 − λ)·image + λ·frame`, so λ = 0 leaves the still untouched. Labels
//! are never interpolated; the sample keeps the still's boxes verbatim.

use std::fs;
use std::path::Path;

use rand::Rng;
use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pixels::{BoundingBox, LabeledImage, Pixels, VideoFrame};

/// Distribution of the frame weight λ.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "distribution", rename_all = "snake_case", deny_unknown_fields)]
pub enum MixupConfig {
    /// λ ~ Beta(α, α + 1).
    Beta { alpha: f64 },
    /// λ = c·X with X ~ Bernoulli(p).
    Discrete { c: f64, p: f64 },
}

impl Default for MixupConfig {
    fn default() -> Self {
        MixupConfig::Discrete { c: 0.5, p: 0.2 }
    }
}

impl MixupConfig {
    pub fn validate(&self) -> Result<()> {
        match *self {
            MixupConfig::Beta { alpha } => {
                if !(alpha.is_finite() && alpha > 0.0) {
                    return Err(Error::config(format!("beta alpha must be > 0, got {alpha}")));
                }
            }
            MixupConfig::Discrete { c, p } => {
                if !(0.0..=1.0).contains(&c) {
                    return Err(Error::config(format!("discrete c must be in [0, 1], got {c}")));
                }
                if !(0.0..=1.0).contains(&p) {
                    return Err(Error::config(format!("discrete p must be in [0, 1], got {p}")));
                }
            }
        }
        Ok(())
    }

    /// Parse and validate a TOML table such as `distribution = "beta"` plus `alpha = 0.05`.
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    /// Analytic mean of λ.
    pub fn mean(&self) -> f64 {
        match *self {
            MixupConfig::Beta { alpha } => alpha / (2.0 * alpha + 1.0),
            MixupConfig::Discrete { c, p } => c * p,
        }
    }

    /// Short label used in tables and file names.
    pub fn label(&self) -> String {
        match *self {
            MixupConfig::Beta { alpha } => format!("beta(alpha={alpha})"),
            MixupConfig::Discrete { c, p } => format!("discrete(c={c},p={p})"),
        }
    }
}

/// A blended still with the still's boxes.
#[derive(Clone, Debug, PartialEq)]
pub struct MixupSample {
    pub pixels: Pixels,
    pub boxes: Vec<BoundingBox>,
    pub lambda_used: f64,
}

impl MixupSample {
    /// The identity sample (λ = 0) for a still.
    pub fn unmixed(image: LabeledImage) -> Self {
        Self {
            pixels: image.pixels,
            boxes: image.boxes,
            lambda_used: 0.0,
        }
    }
}

pub fn sample_lambda<R: Rng + ?Sized>(config: &MixupConfig, rng: &mut R) -> Result<f64> {
    config.validate()?;
    let lambda = match *config {
        MixupConfig::Beta { alpha } => {
            let beta = Beta::new(alpha, alpha + 1.0)
                .map_err(|e| Error::config(format!("beta distribution: {e}")))?;
            beta.sample(rng)
        }
        MixupConfig::Discrete { c, p } => {
            if rng.random::<f64>() < p {
                c
            } else {
                0.0
            }
        }
    };
    Ok(lambda.clamp(0.0, 1.0))
}

/// Bilinear resize with half-pixel centers and no anti-aliasing.
pub fn resize_pixels(src: &Pixels, target_h: usize, target_w: usize) -> Result<Pixels> {
    if target_h == 0 || target_w == 0 {
        return Err(Error::arg(format!(
            "resize target must be positive, got {target_h}x{target_w}"
        )));
    }
    let (h, w, ch) = src.shape();
    if (h, w) == (target_h, target_w) {
        return Ok(src.clone());
    }
    let axis = |dst: usize, n_in: usize, n_out: usize| -> (usize, usize, f64) {
        let pos = ((dst as f64 + 0.5) * n_in as f64 / n_out as f64 - 0.5).clamp(0.0, (n_in - 1) as f64);
        let lo = pos.floor() as usize;
        let hi = (lo + 1).min(n_in - 1);
        (lo, hi, pos - lo as f64)
    };
    let xs: Vec<_> = (0..target_w).map(|x| axis(x, w, target_w)).collect();
    let mut data = Vec::with_capacity(target_h * target_w * ch);
    for y in 0..target_h {
        let (y0, y1, ty) = axis(y, h, target_h);
        for &(x0, x1, tx) in &xs {
            for c in 0..ch {
                let top = lerp(src.get(y0, x0, c), src.get(y0, x1, c), tx);
                let bottom = lerp(src.get(y1, x0, c), src.get(y1, x1, c), tx);
                data.push(lerp(top, bottom, ty).clamp(0.0, 1.0));
            }
        }
    }
    Pixels::new(target_h, target_w, ch, data)
}

#[inline]
fn lerp(a: f64, b: f64, t: f64) -> f64 {
    a + t * (b - a)
}

pub fn resize_frame(frame: &VideoFrame, target_h: usize, target_w: usize) -> Result<VideoFrame> {
    Ok(VideoFrame {
        pixels: resize_pixels(&frame.pixels, target_h, target_w)?,
        frame_index: frame.frame_index,
        source_video: frame.source_video.clone(),
    })
}

/// Elementwise `(1 − λ)·image + λ·frame`, clamped to the pair's range so the
/// result is a convex combination even under rounding.
pub fn blend_inputs(image: &Pixels, frame: &Pixels, lambda: f64) -> Result<Pixels> {
    if image.shape() != frame.shape() {
        return Err(Error::arg(format!(
            "blend shape mismatch: image {:?} vs frame {:?}",
            image.shape(),
            frame.shape()
        )));
    }
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::arg(format!("lambda must be in [0, 1], got {lambda}")));
    }
    let keep = 1.0 - lambda;
    let data = image
        .data()
        .iter()
        .zip(frame.data())
        .map(|(&a, &b)| (keep * a + lambda * b).clamp(a.min(b), a.max(b)))
        .collect();
    let (h, w, c) = image.shape();
    Pixels::new(h, w, c, data)
}

/// Blend with an already-drawn λ.
pub fn mix_with_lambda(image: &LabeledImage, frame: &VideoFrame, lambda: f64) -> Result<MixupSample> {
    let (h, w, c) = image.pixels.shape();
    if frame.pixels.channels() != c {
        return Err(Error::arg(format!(
            "frame has {} channels, image has {c}",
            frame.pixels.channels()
        )));
    }
    let resized = resize_pixels(&frame.pixels, h, w)?;
    Ok(MixupSample {
        pixels: blend_inputs(&image.pixels, &resized, lambda)?,
        boxes: image.boxes.clone(),
        lambda_used: lambda,
    })
}

pub fn make_virtual_sample<R: Rng + ?Sized>(
    image: &LabeledImage,
    frame: &VideoFrame,
    config: &MixupConfig,
    rng: &mut R,
) -> Result<MixupSample> {
    let lambda = sample_lambda(config, rng)?;
    mix_with_lambda(image, frame, lambda)
}
