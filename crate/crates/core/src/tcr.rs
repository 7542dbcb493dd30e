//! Temporal coherence regularization.
//!
//! For three adjacent frames the middle frame's encoder feature should match
//! the mean of its neighbours' features. The penalty is one minus the cosine
//! similarity over the channel axis, averaged over feature-map locations.

use serde::{Deserialize, Serialize};

use crate::detector::Trainable;
use crate::error::{Error, Result};
use crate::pixels::VideoFrame;

/// Encoder output, stored channel-major: `channels × height × width`.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap {
    channels: usize,
    height: usize,
    width: usize,
    values: Vec<f64>,
}

impl FeatureMap {
    pub fn new(channels: usize, height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        if channels == 0 || height == 0 || width == 0 {
            return Err(Error::arg(format!(
                "empty feature map {channels}x{height}x{width}"
            )));
        }
        if values.len() != channels * height * width {
            return Err(Error::arg(format!(
                "feature buffer has {} values, expected {channels}x{height}x{width}",
                values.len()
            )));
        }
        Ok(Self {
            channels,
            height,
            width,
            values,
        })
    }

    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self::new(channels, height, width, vec![0.0; channels * height * width])
            .expect("nonzero dims")
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.values[(c * self.height + y) * self.width + x]
    }

    fn check_same_shape(&self, other: &Self) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::arg(format!(
                "feature shape mismatch: {:?} vs {:?}",
                self.shape(),
                other.shape()
            )));
        }
        Ok(())
    }

    fn check_finite(&self) -> Result<()> {
        if self.values.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::Numeric("non-finite feature value".into()))
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TcrConfig {
    pub gamma: f64,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
}

fn default_epsilon() -> f64 {
    1e-8
}

impl Default for TcrConfig {
    fn default() -> Self {
        Self {
            gamma: 0.01,
            epsilon: default_epsilon(),
        }
    }
}

impl TcrConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma.is_finite() && self.gamma >= 0.0) {
            return Err(Error::config(format!("gamma must be >= 0, got {}", self.gamma)));
        }
        if !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            return Err(Error::config(format!("epsilon must be > 0, got {}", self.epsilon)));
        }
        Ok(())
    }
}

/// Three temporally adjacent frames `prev`, `mid`, `next`.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameTriple {
    pub prev: VideoFrame,
    pub mid: VideoFrame,
    pub next: VideoFrame,
}

impl FrameTriple {
    pub fn new(prev: VideoFrame, mid: VideoFrame, next: VideoFrame, stride: usize) -> Result<Self> {
        if stride == 0 {
            return Err(Error::arg("triple stride must be >= 1"));
        }
        if prev.pixels.shape() != mid.pixels.shape() || mid.pixels.shape() != next.pixels.shape() {
            return Err(Error::arg("triple frames differ in shape"));
        }
        if prev.source_video != mid.source_video || mid.source_video != next.source_video {
            return Err(Error::arg("triple frames come from different videos"));
        }
        if mid.frame_index != prev.frame_index + stride || next.frame_index != mid.frame_index + stride {
            return Err(Error::arg(format!(
                "triple indices {}, {}, {} are not spaced by {stride}",
                prev.frame_index, mid.frame_index, next.frame_index
            )));
        }
        Ok(Self { prev, mid, next })
    }
}

/// Elementwise mean of the neighbouring features.
pub fn estimate_midframe(f_prev: &FeatureMap, f_next: &FeatureMap) -> Result<FeatureMap> {
    f_prev.check_same_shape(f_next)?;
    let values = f_prev
        .values
        .iter()
        .zip(&f_next.values)
        .map(|(a, b)| 0.5 * (a + b))
        .collect();
    let (c, h, w) = f_prev.shape();
    FeatureMap::new(c, h, w, values)
}

pub fn tcr_loss(f_mid: &FeatureMap, f_hat: &FeatureMap, epsilon: f64) -> Result<f64> {
    cosine_loss(f_mid, f_hat, epsilon, false).map(|(loss, _)| loss)
}

/// Loss plus its gradients with respect to `f_mid` and `f_hat`.
pub fn tcr_loss_grad(
    f_mid: &FeatureMap,
    f_hat: &FeatureMap,
    epsilon: f64,
) -> Result<(f64, FeatureMap, FeatureMap)> {
    let (loss, grads) = cosine_loss(f_mid, f_hat, epsilon, true)?;
    let (g_mid, g_hat) = grads.expect("gradients requested");
    Ok((loss, g_mid, g_hat))
}

fn cosine_loss(
    a: &FeatureMap,
    b: &FeatureMap,
    epsilon: f64,
    with_grad: bool,
) -> Result<(f64, Option<(FeatureMap, FeatureMap)>)> {
    a.check_same_shape(b)?;
    a.check_finite()?;
    b.check_finite()?;
    if !(epsilon > 0.0) {
        return Err(Error::arg(format!("epsilon must be > 0, got {epsilon}")));
    }
    let (c, h, w) = a.shape();
    let plane = h * w;
    let scale = 1.0 / plane as f64;
    let mut grads = with_grad.then(|| (FeatureMap::zeros(c, h, w), FeatureMap::zeros(c, h, w)));
    let mut total = 0.0;
    for p in 0..plane {
        let (mut dot, mut aa, mut bb) = (0.0, 0.0, 0.0);
        for ch in 0..c {
            let (x, y) = (a.values[ch * plane + p], b.values[ch * plane + p]);
            dot += x * y;
            aa += x * x;
            bb += y * y;
        }
        let (na, nb) = (aa.sqrt(), bb.sqrt());
        let denom = na * nb;
        let floored = denom <= epsilon;
        let cos = dot / denom.max(epsilon);
        total += 1.0 - cos;

        if let Some((ga, gb)) = grads.as_mut() {
            // d(1 - cos)/da, d(1 - cos)/db at this location, times the spatial mean.
            for ch in 0..c {
                let i = ch * plane + p;
                let (x, y) = (a.values[i], b.values[i]);
                let (dx, dy) = if floored {
                    (y / epsilon, x / epsilon)
                } else {
                    (y / denom - cos * x / aa, x / denom - cos * y / bb)
                };
                ga.values[i] = -scale * dx;
                gb.values[i] = -scale * dy;
            }
        }
    }
    Ok((total * scale, grads))
}

/// `l_det + gamma · l_reg`.
pub fn combined_loss(l_det: f64, l_reg: f64, gamma: f64) -> Result<f64> {
    if !l_det.is_finite() || !l_reg.is_finite() {
        return Err(Error::Numeric(format!("non-finite loss terms {l_det}, {l_reg}")));
    }
    if !(gamma.is_finite() && gamma >= 0.0) {
        return Err(Error::arg(format!("gamma must be >= 0, got {gamma}")));
    }
    Ok(l_det + gamma * l_reg)
}

/// Regularization loss for one triple, accumulating `scale · ∂loss/∂θ` into
/// `grad`. Gradients flow through all three encodings.
pub fn triple_loss_and_grad<D: Trainable + ?Sized>(
    detector: &D,
    triple: &FrameTriple,
    epsilon: f64,
    scale: f64,
    grad: &mut [f64],
) -> Result<f64> {
    let (f_prev, t_prev) = detector.encode_taped(&triple.prev.pixels)?;
    let (f_mid, t_mid) = detector.encode_taped(&triple.mid.pixels)?;
    let (f_next, t_next) = detector.encode_taped(&triple.next.pixels)?;
    let f_hat = estimate_midframe(&f_prev, &f_next)?;
    let (loss, mut g_mid, mut g_hat) = tcr_loss_grad(&f_mid, &f_hat, epsilon)?;
    g_mid.values.iter_mut().for_each(|v| *v *= scale);
    // f_hat = (f_prev + f_next) / 2
    g_hat.values.iter_mut().for_each(|v| *v *= 0.5 * scale);
    detector.backprop_feature(&t_mid, &g_mid, grad);
    detector.backprop_feature(&t_prev, &g_hat, grad);
    detector.backprop_feature(&t_next, &g_hat, grad);
    Ok(loss)
}

/// Regularization loss for one triple without gradients.
pub fn triple_loss<D: Trainable + ?Sized>(detector: &D, triple: &FrameTriple, epsilon: f64) -> Result<f64> {
    let f_prev = detector.encode(&triple.prev.pixels)?;
    let f_mid = detector.encode(&triple.mid.pixels)?;
    let f_next = detector.encode(&triple.next.pixels)?;
    tcr_loss(&f_mid, &estimate_midframe(&f_prev, &f_next)?, epsilon)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn map(c: usize, h: usize, w: usize, f: impl Fn(usize) -> f64) -> FeatureMap {
        FeatureMap::new(c, h, w, (0..c * h * w).map(f).collect()).unwrap()
    }

    #[test]
    fn midframe_examples() {
        let f = map(3, 2, 2, |i| i as f64 * 0.5 - 1.0);
        assert_eq!(estimate_midframe(&f, &f).unwrap(), f);
        let zero = FeatureMap::zeros(3, 2, 2);
        let twice = map(3, 2, 2, |i| 2.0 * (i as f64 * 0.5 - 1.0));
        assert_eq!(estimate_midframe(&zero, &twice).unwrap(), f);
        assert!(estimate_midframe(&f, &FeatureMap::zeros(3, 2, 3)).is_err());
    }

    #[test]
    fn loss_spot_values() {
        let f = map(4, 3, 3, |i| 1.0 + (i % 7) as f64);
        assert!(tcr_loss(&f, &f, 1e-8).unwrap().abs() < 1e-12);
        let neg = map(4, 3, 3, |i| -(1.0 + (i % 7) as f64));
        assert!((tcr_loss(&f, &neg, 1e-8).unwrap() - 2.0).abs() < 1e-12);
        // channel 0 vs channel 1 one-hot at each location
        let e0 = map(2, 2, 2, |i| if i < 4 { 1.0 } else { 0.0 });
        let e1 = map(2, 2, 2, |i| if i < 4 { 0.0 } else { 3.0 });
        assert!((tcr_loss(&e0, &e1, 1e-8).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_estimate_gives_unit_loss() {
        let f = map(3, 2, 2, |i| 1.0 + i as f64);
        let z = FeatureMap::zeros(3, 2, 2);
        assert!((tcr_loss(&f, &z, 1e-8).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_mismatch_and_nan() {
        let f = FeatureMap::zeros(2, 2, 2);
        assert!(matches!(tcr_loss(&f, &FeatureMap::zeros(2, 2, 1), 1e-8), Err(Error::Argument(_))));
        let nan = map(2, 2, 2, |i| if i == 3 { f64::NAN } else { 1.0 });
        assert!(matches!(tcr_loss(&nan, &nan, 1e-8), Err(Error::Numeric(_))));
    }

    #[test]
    fn combined_examples() {
        assert_eq!(combined_loss(0.73, 5.0, 0.0).unwrap(), 0.73);
        assert!((combined_loss(0.5, 1.0, 0.01).unwrap() - 0.51).abs() < 1e-15);
        assert_eq!(combined_loss(0.5, 0.0, 7.0).unwrap(), 0.5);
        assert!(combined_loss(f64::NAN, 0.0, 1.0).is_err());
    }

    #[test]
    fn loss_gradient_matches_finite_differences() {
        let a = map(3, 2, 3, |i| ((i * 37 % 11) as f64 - 5.0) / 3.0);
        let b = map(3, 2, 3, |i| ((i * 53 % 13) as f64 - 6.0) / 4.0);
        let (_, ga, gb) = tcr_loss_grad(&a, &b, 1e-8).unwrap();
        let h = 1e-6;
        for (which, g) in [(0, &ga), (1, &gb)] {
            for i in 0..a.values.len() {
                let bump = |d: f64| {
                    let (mut x, mut y) = (a.clone(), b.clone());
                    if which == 0 {
                        x.values[i] += d
                    } else {
                        y.values[i] += d
                    }
                    tcr_loss(&x, &y, 1e-8).unwrap()
                };
                let fd = (bump(h) - bump(-h)) / (2.0 * h);
                assert!((fd - g.values[i]).abs() < 1e-7, "{which}/{i}: {fd} vs {}", g.values[i]);
            }
        }
    }
}
