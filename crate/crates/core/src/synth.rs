//! Synthetic corpus with a controllable still-to-video domain gap.
//!
//! Report-style stills show large, centered, sharp, textured elliptical targets
//! on an evenly lit background. Video-style frames look through a slowly
//! panning camera at a scene with smaller, off-center targets, plus
//! target-coloured folds and specular highlights, under directional motion
//! blur and vignetting. Negative videos contain no targets at all.
//!
//! Scenes are procedural, so every frame is rendered analytically at its
//! camera offset: translation introduces no resampling error and identical
//! offsets give bit-identical frames.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::pixels::{BoundingBox, LabeledImage, Pixels, VideoFrame};
use crate::seed;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const MANIFEST_SCHEMA_VERSION: u32 = 1;
pub const GENERATOR_VERSION: &str = "synthgen-1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Style {
    Report,
    Video,
}

/// Low-frequency colour wave in the background.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Wave {
    pub kx: f64,
    pub ky: f64,
    pub phase: f64,
    pub amplitude: [f64; 3],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Background {
    pub base: [f64; 3],
    pub waves: Vec<Wave>,
}

/// A textured elliptical target. Coordinates are in scene pixels.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Target {
    pub cx: f64,
    pub cy: f64,
    /// Semi-axes along the rotated x and y directions.
    pub semi_a: f64,
    pub semi_b: f64,
    pub rotation: f64,
    pub color: [f64; 3],
    pub texture_period: f64,
    pub texture_amplitude: f64,
}

impl Target {
    /// Normalized elliptical radius of a scene point (< 1 inside).
    fn radius(&self, x: f64, y: f64) -> f64 {
        let (s, c) = self.rotation.sin_cos();
        let (dx, dy) = (x - self.cx, y - self.cy);
        let u = (c * dx + s * dy) / self.semi_a;
        let v = (-s * dx + c * dy) / self.semi_b;
        (u * u + v * v).sqrt()
    }

    /// Tight axis-aligned bounding rectangle of the ellipse.
    pub fn tight_box(&self) -> BoundingBox {
        let (s, c) = self.rotation.sin_cos();
        let hx = ((self.semi_a * c).powi(2) + (self.semi_b * s).powi(2)).sqrt();
        let hy = ((self.semi_a * s).powi(2) + (self.semi_b * c).powi(2)).sqrt();
        BoundingBox {
            x_min: self.cx - hx,
            y_min: self.cy - hy,
            x_max: self.cx + hx,
            y_max: self.cy + hy,
            score: None,
        }
    }

    /// True when the pixel centered at `(x + 0.5, y + 0.5)` belongs to the target.
    pub fn covers_pixel(&self, x: usize, y: usize) -> bool {
        self.radius(x as f64 + 0.5, y as f64 + 0.5) < 1.0
    }

    fn shade(&self, x: f64, y: f64) -> Option<([f64; 3], f64)> {
        let d = self.radius(x, y);
        if d >= 1.0 {
            return None;
        }
        let edge = 1.5 / self.semi_a.min(self.semi_b);
        let alpha = ((1.0 - d) / edge).min(1.0);
        let dome = 0.78 + 0.32 * (1.0 - d * d);
        let w = 2.0 * PI / self.texture_period;
        let tex = self.texture_amplitude * (w * (x - self.cx)).sin() * (w * (y - self.cy)).sin();
        let rgb = [0, 1, 2].map(|k| self.color[k] * dome + tex);
        Some((rgb, alpha))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistractorKind {
    /// Elongated target-coloured blob without texture.
    Fold,
    /// Small near-white highlight.
    Specular,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Distractor {
    pub kind: DistractorKind,
    pub cx: f64,
    pub cy: f64,
    pub semi_a: f64,
    pub semi_b: f64,
    pub rotation: f64,
    pub color: [f64; 3],
}

impl Distractor {
    fn shade(&self, x: f64, y: f64) -> Option<([f64; 3], f64)> {
        let (s, c) = self.rotation.sin_cos();
        let (dx, dy) = (x - self.cx, y - self.cy);
        let u = (c * dx + s * dy) / self.semi_a;
        let v = (-s * dx + c * dy) / self.semi_b;
        let d = (u * u + v * v).sqrt();
        if d >= 1.0 {
            return None;
        }
        let edge = 1.5 / self.semi_a.min(self.semi_b);
        let alpha = ((1.0 - d) / edge).min(1.0);
        let rgb = match self.kind {
            DistractorKind::Fold => {
                let trough = 0.85 + 0.15 * d * d;
                self.color.map(|v| v * trough)
            }
            DistractorKind::Specular => self.color,
        };
        Some((rgb, alpha))
    }
}

/// One scene: a report still or a video's world plus camera and optics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub seed: u64,
    pub height: usize,
    pub width: usize,
    pub style: Style,
    pub background: Background,
    pub targets: Vec<Target>,
    pub distractors: Vec<Distractor>,
    /// Darkening at the frame corners, 0 = none.
    pub vignette: f64,
    /// Global brightness multiplier.
    pub illumination: f64,
    /// Motion-blur streak length in pixels and its direction.
    pub blur_length: f64,
    pub blur_angle: f64,
    /// Video only: frame count.
    pub length: usize,
    /// Video only: maximum camera translation per frame, in pixels.
    pub jitter: f64,
    /// Video only: maximum camera distance from its start position.
    pub pan_radius: f64,
}

/// Knobs controlling how different video frames look from report stills.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GapConfig {
    /// Semi-axis range of report-style targets, in pixels.
    pub report_target_size: (f64, f64),
    /// Maximum offset of report targets from the image center.
    pub report_center_jitter: f64,
    pub video_target_size: (f64, f64),
    /// Range of distances of video targets from the frame center.
    pub video_target_offset: (f64, f64),
    pub folds_per_video: (usize, usize),
    pub speculars_per_video: (usize, usize),
    pub blur_length: f64,
    pub vignette: f64,
    pub illumination: f64,
    pub jitter: f64,
    pub pan_radius: f64,
}

impl Default for GapConfig {
    fn default() -> Self {
        Self {
            report_target_size: (9.0, 16.0),
            report_center_jitter: 8.0,
            video_target_size: (6.0, 11.0),
            video_target_offset: (6.0, 14.0),
            folds_per_video: (4, 7),
            speculars_per_video: (3, 6),
            blur_length: 3.0,
            vignette: 0.35,
            illumination: 0.9,
            jitter: 1.0,
            pan_radius: 10.0,
        }
    }
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

fn count<R: Rng + ?Sized>(rng: &mut R, (lo, hi): (usize, usize)) -> usize {
    if hi > lo {
        rng.random_range(lo..=hi)
    } else {
        lo
    }
}

fn random_background<R: Rng + ?Sized>(rng: &mut R, style: Style) -> Background {
    let base = match style {
        Style::Report => [0.86, 0.58, 0.52],
        Style::Video => [0.80, 0.52, 0.47],
    }
    .map(|v: f64| v + rng.random_range(-0.04..0.04));
    let waves = (0..4)
        .map(|_| {
            let wavelength = rng.random_range(20.0..48.0);
            let angle = rng.random_range(0.0..2.0 * PI);
            let k = 2.0 * PI / wavelength;
            let amp = rng.random_range(0.02..0.05);
            Wave {
                kx: k * angle.cos(),
                ky: k * angle.sin(),
                phase: rng.random_range(0.0..2.0 * PI),
                amplitude: [amp, amp * 0.8, amp * 0.8],
            }
        })
        .collect();
    Background { base, waves }
}

fn random_target<R: Rng + ?Sized>(rng: &mut R, cx: f64, cy: f64, size: (f64, f64)) -> Target {
    let a = uniform(rng, size);
    let b = a * rng.random_range(0.7..1.0);
    Target {
        cx,
        cy,
        semi_a: a,
        semi_b: b,
        rotation: rng.random_range(0.0..PI),
        color: [0.74, 0.30, 0.28].map(|v: f64| v + rng.random_range(-0.05..0.05)),
        texture_period: rng.random_range(4.0..6.0),
        texture_amplitude: rng.random_range(0.05..0.09),
    }
}

impl SceneSpec {
    /// A randomized report-style still with `k` targets fully inside the image.
    pub fn random_report(seed: u64, height: usize, width: usize, k: usize, gap: &GapConfig) -> Self {
        let mut rng = seed::stream(seed, &[seed::tag::SCENE]);
        let background = random_background(&mut rng, Style::Report);
        let mut targets = Vec::with_capacity(k);
        let (h, w) = (height as f64, width as f64);
        for i in 0..k {
            // Additional targets sit away from the first to limit overlap.
            let spread = if i == 0 { gap.report_center_jitter } else { 0.3 * w.min(h) };
            let cx = w / 2.0 + rng.random_range(-spread..=spread);
            let cy = h / 2.0 + rng.random_range(-spread..=spread);
            let mut t = random_target(&mut rng, cx, cy, gap.report_target_size);
            let b = t.tight_box();
            t.cx += (0.5 - b.x_min).max(0.0) - (b.x_max - (w - 0.5)).max(0.0);
            t.cy += (0.5 - b.y_min).max(0.0) - (b.y_max - (h - 0.5)).max(0.0);
            targets.push(t);
        }
        Self {
            seed,
            height,
            width,
            style: Style::Report,
            background,
            targets,
            distractors: Vec::new(),
            vignette: 0.0,
            illumination: 1.0,
            blur_length: 0.0,
            blur_angle: 0.0,
            length: 0,
            jitter: 0.0,
            pan_radius: 0.0,
        }
    }

    /// A randomized video scene with `k` targets (0 for a negative video).
    pub fn random_video(seed: u64, height: usize, width: usize, k: usize, length: usize, gap: &GapConfig) -> Self {
        let mut rng = seed::stream(seed, &[seed::tag::SCENE]);
        let background = random_background(&mut rng, Style::Video);
        let (h, w) = (height as f64, width as f64);
        let targets = (0..k)
            .map(|_| {
                let r = uniform(&mut rng, gap.video_target_offset);
                let phi = rng.random_range(0.0..2.0 * PI);
                random_target(
                    &mut rng,
                    w / 2.0 + r * phi.cos(),
                    h / 2.0 + r * phi.sin(),
                    gap.video_target_size,
                )
            })
            .collect();
        let margin = gap.pan_radius;
        let mut distractors = Vec::new();
        for _ in 0..count(&mut rng, gap.folds_per_video) {
            let a = rng.random_range(7.0..13.0);
            distractors.push(Distractor {
                kind: DistractorKind::Fold,
                cx: rng.random_range(-margin..w + margin),
                cy: rng.random_range(-margin..h + margin),
                semi_a: a,
                semi_b: a * rng.random_range(0.35..0.6),
                rotation: rng.random_range(0.0..PI),
                color: [0.70, 0.33, 0.31].map(|v: f64| v + rng.random_range(-0.05..0.05)),
            });
        }
        for _ in 0..count(&mut rng, gap.speculars_per_video) {
            let a = rng.random_range(1.5..3.0);
            distractors.push(Distractor {
                kind: DistractorKind::Specular,
                cx: rng.random_range(-margin..w + margin),
                cy: rng.random_range(-margin..h + margin),
                semi_a: a,
                semi_b: a * rng.random_range(0.6..1.0),
                rotation: rng.random_range(0.0..PI),
                color: [0.98, 0.96, 0.95],
            });
        }
        Self {
            seed,
            height,
            width,
            style: Style::Video,
            background,
            targets,
            distractors,
            vignette: gap.vignette,
            illumination: gap.illumination,
            blur_length: gap.blur_length,
            blur_angle: rng.random_range(0.0..PI),
            length,
            jitter: gap.jitter,
            pan_radius: gap.pan_radius,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 {
            return Err(Error::config("scene size must be positive"));
        }
        if !(self.jitter >= 0.0 && self.pan_radius >= 0.0 && self.blur_length >= 0.0) {
            return Err(Error::config("jitter, pan radius and blur must be >= 0"));
        }
        for t in &self.targets {
            if !(t.semi_a > 0.0 && t.semi_b > 0.0 && t.texture_period > 0.0) {
                return Err(Error::config("target axes and texture period must be positive"));
            }
        }
        Ok(())
    }

    /// Scene colour at a scene point, before optics.
    fn radiance(&self, x: f64, y: f64) -> [f64; 3] {
        let bg = &self.background;
        let mut rgb = bg.base;
        for wave in &bg.waves {
            let s = (wave.kx * x + wave.ky * y + wave.phase).sin();
            for k in 0..3 {
                rgb[k] += wave.amplitude[k] * s;
            }
        }
        let layers = self
            .distractors
            .iter()
            .filter_map(|d| d.shade(x, y))
            .chain(self.targets.iter().filter_map(|t| t.shade(x, y)));
        for (c, alpha) in layers {
            for k in 0..3 {
                rgb[k] = rgb[k] * (1.0 - alpha) + c[k] * alpha;
            }
        }
        rgb
    }

    /// Render the view with the camera translated by `(ox, oy)` scene pixels.
    pub fn render(&self, ox: f64, oy: f64) -> Pixels {
        const BLUR_TAPS: [f64; 5] = [-0.5, -0.25, 0.0, 0.25, 0.5];
        let (h, w) = (self.height as f64, self.width as f64);
        let (bs, bc) = self.blur_angle.sin_cos();
        let taps: Vec<(f64, f64)> = if self.blur_length > 0.0 {
            BLUR_TAPS
                .iter()
                .map(|t| (t * self.blur_length * bc, t * self.blur_length * bs))
                .collect()
        } else {
            vec![(0.0, 0.0)]
        };
        let half_diag2 = (h * h + w * w) / 4.0;
        let mut data = Vec::with_capacity(self.height * self.width * 3);
        for y in 0..self.height {
            for x in 0..self.width {
                let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
                let mut acc = [0.0; 3];
                for &(tx, ty) in &taps {
                    let c = self.radiance(px + ox + tx, py + oy + ty);
                    for k in 0..3 {
                        acc[k] += c[k];
                    }
                }
                let r2 = ((px - w / 2.0).powi(2) + (py - h / 2.0).powi(2)) / half_diag2;
                let gain = self.illumination * (1.0 - self.vignette * r2);
                let n = taps.len() as f64;
                for a in acc {
                    data.push((a / n * gain).clamp(0.0, 1.0));
                }
            }
        }
        Pixels::new(self.height, self.width, 3, data).expect("dimensions checked")
    }

    /// Target boxes visible with the camera at `(ox, oy)`, clamped to the frame.
    pub fn boxes_at(&self, ox: f64, oy: f64) -> Vec<BoundingBox> {
        self.targets
            .iter()
            .filter_map(|t| {
                let b = t.tight_box();
                BoundingBox {
                    x_min: b.x_min - ox,
                    y_min: b.y_min - oy,
                    x_max: b.x_max - ox,
                    y_max: b.y_max - oy,
                    score: None,
                }
                .clamped(self.width, self.height)
            })
            .collect()
    }

    /// Camera offsets for every frame: a smooth random walk whose per-frame
    /// step never exceeds `jitter` and which stays within `pan_radius`.
    pub fn camera_path(&self) -> Vec<(f64, f64)> {
        let mut rng = seed::stream(self.seed, &[seed::tag::SCENE, 1]);
        let (mut ox, mut oy, mut vx, mut vy) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
        let mut path = Vec::with_capacity(self.length);
        for i in 0..self.length {
            if i > 0 && self.jitter > 0.0 {
                vx = 0.85 * vx + 0.5 * self.jitter * rng.random_range(-1.0..1.0);
                vy = 0.85 * vy + 0.5 * self.jitter * rng.random_range(-1.0..1.0);
                let speed = (vx * vx + vy * vy).sqrt();
                if speed > self.jitter {
                    vx *= self.jitter / speed;
                    vy *= self.jitter / speed;
                }
                // Turn back before leaving the pan disc.
                let (nx, ny) = (ox + vx, oy + vy);
                if (nx * nx + ny * ny).sqrt() > self.pan_radius {
                    vx = -vx;
                    vy = -vy;
                }
                let (nx, ny) = (ox + vx, oy + vy);
                if (nx * nx + ny * ny).sqrt() <= self.pan_radius {
                    ox = nx;
                    oy = ny;
                } else {
                    vx = 0.0;
                    vy = 0.0;
                }
            }
            path.push((ox, oy));
        }
        path
    }
}

pub fn gen_report_image(spec: &SceneSpec) -> Result<LabeledImage> {
    if spec.style != Style::Report {
        return Err(Error::config("gen_report_image needs a report-style scene"));
    }
    spec.validate()?;
    let boxes = spec
        .targets
        .iter()
        .map(|t| {
            let b = t.tight_box();
            b.validate_within(spec.width, spec.height)
                .map_err(|_| Error::config(format!("report target {b:?} leaves the image")))?;
            Ok(b)
        })
        .collect::<Result<Vec<_>>>()?;
    LabeledImage::new(spec.render(0.0, 0.0), boxes)
}

/// A generated video: frames plus per-frame boxes.
#[derive(Clone, Debug, PartialEq)]
pub struct GeneratedVideo {
    pub frames: Vec<VideoFrame>,
    pub boxes: Vec<Vec<BoundingBox>>,
}

pub fn gen_video(spec: &SceneSpec, video_id: &str) -> Result<GeneratedVideo> {
    if spec.style != Style::Video {
        return Err(Error::config("gen_video needs a video-style scene"));
    }
    if spec.length < 3 {
        return Err(Error::arg(format!(
            "videos need at least 3 frames for triples, got {}",
            spec.length
        )));
    }
    spec.validate()?;
    let path = spec.camera_path();
    let rendered: Vec<(Pixels, Vec<BoundingBox>)> = path
        .par_iter()
        .map(|&(ox, oy)| (spec.render(ox, oy), spec.boxes_at(ox, oy)))
        .collect();
    let mut frames = Vec::with_capacity(rendered.len());
    let mut boxes = Vec::with_capacity(rendered.len());
    for (i, (pixels, b)) in rendered.into_iter().enumerate() {
        frames.push(VideoFrame {
            pixels,
            frame_index: i,
            source_video: video_id.to_string(),
        });
        boxes.push(b);
    }
    Ok(GeneratedVideo { frames, boxes })
}

/// Corpus-wide generation settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusConfig {
    pub seed: u64,
    pub image_size: usize,
    pub frame_size: usize,
    pub images: usize,
    pub negative_videos: usize,
    pub negative_frames: usize,
    pub positive_videos: usize,
    pub positive_frames: usize,
    /// Test share as `test_parts / total_parts` of the labeled images.
    pub test_parts: usize,
    pub total_parts: usize,
    /// Probability that a report still shows a second target.
    pub second_target_probability: f64,
    pub gap: GapConfig,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            image_size: 64,
            frame_size: 64,
            images: 2000,
            negative_videos: 10,
            negative_frames: 600,
            positive_videos: 5,
            positive_frames: 200,
            test_parts: 600,
            total_parts: 3056,
            second_target_probability: 0.15,
            gap: GapConfig::default(),
        }
    }
}

impl CorpusConfig {
    pub fn test_images(&self) -> usize {
        self.images * self.test_parts / self.total_parts
    }

    pub fn validate(&self) -> Result<()> {
        if self.total_parts == 0 || self.test_parts > self.total_parts {
            return Err(Error::config("test_parts must be within total_parts"));
        }
        if self.images - self.test_images() < 10 {
            return Err(Error::config("need at least 10 image-train stills"));
        }
        if self.test_images() == 0 {
            return Err(Error::config("split leaves no image-test stills"));
        }
        if self.negative_videos == 0 || self.positive_videos == 0 {
            return Err(Error::config("need at least one negative and one positive video"));
        }
        if self.negative_frames < 3 || self.positive_frames < 3 {
            return Err(Error::config("videos need at least 3 frames"));
        }
        if self.image_size == 0 || self.frame_size == 0 {
            return Err(Error::config("image and frame sizes must be positive"));
        }
        if !(0.0..=1.0).contains(&self.second_target_probability) {
            return Err(Error::config("second_target_probability must be in [0, 1]"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SplitTag {
    #[serde(rename = "image-train")]
    ImageTrain,
    #[serde(rename = "image-test")]
    ImageTest,
    #[serde(rename = "video-train")]
    VideoTrain,
    #[serde(rename = "video-test")]
    VideoTest,
}

impl SplitTag {
    pub const ALL: [SplitTag; 4] = [
        SplitTag::ImageTrain,
        SplitTag::ImageTest,
        SplitTag::VideoTrain,
        SplitTag::VideoTest,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            SplitTag::ImageTrain => "image-train",
            SplitTag::ImageTest => "image-test",
            SplitTag::VideoTrain => "video-train",
            SplitTag::VideoTest => "video-test",
        }
    }
}

impl std::str::FromStr for SplitTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SplitTag::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| Error::arg(format!("unknown split `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImageEntry {
    pub id: String,
    pub path: String,
    pub split: SplitTag,
    pub boxes: Vec<BoundingBox>,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameEntry {
    pub index: usize,
    pub path: String,
    pub boxes: Vec<BoundingBox>,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VideoEntry {
    pub id: String,
    pub split: SplitTag,
    pub positive: bool,
    pub frames: Vec<FrameEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusManifest {
    pub schema_version: u32,
    pub generator_version: String,
    pub config: CorpusConfig,
    pub images: Vec<ImageEntry>,
    pub videos: Vec<VideoEntry>,
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn write_png(root: &Path, rel: &str, pixels: &Pixels) -> Result<String> {
    let path = root.join(rel);
    pixels.save_png(&path)?;
    let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    Ok(sha256_hex(&bytes))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

/// Generate the whole corpus under `root` and write its manifest.
pub fn gen_corpus(config: &CorpusConfig, root: &Path) -> Result<CorpusManifest> {
    config.validate()?;
    create_dir(&root.join("images/train"))?;
    create_dir(&root.join("images/test"))?;

    let mut order: Vec<usize> = (0..config.images).collect();
    order.shuffle(&mut seed::stream(config.seed, &[seed::tag::SHUFFLE]));
    let mut is_test = vec![false; config.images];
    for &i in &order[..config.test_images()] {
        is_test[i] = true;
    }

    let size = config.image_size;
    let images = (0..config.images)
        .into_par_iter()
        .map(|i| {
            let item_seed = seed::derive(config.seed, &[seed::tag::SCENE, 0, i as u64]);
            let mut rng = seed::stream(item_seed, &[1]);
            let k = if rng.random::<f64>() < config.second_target_probability { 2 } else { 1 };
            let spec = SceneSpec::random_report(item_seed, size, size, k, &config.gap);
            let img = gen_report_image(&spec)?;
            let (dir, split) = if is_test[i] {
                ("test", SplitTag::ImageTest)
            } else {
                ("train", SplitTag::ImageTrain)
            };
            let id = format!("img_{i:06}");
            let rel = format!("images/{dir}/{id}.png");
            let sha256 = write_png(root, &rel, &img.pixels)?;
            Ok(ImageEntry {
                id,
                path: rel,
                split,
                boxes: quantize_boxes(&img.boxes),
                sha256,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut plans = Vec::new();
    for v in 0..config.negative_videos {
        plans.push((format!("neg_{v:03}"), false, config.negative_frames, v));
    }
    for v in 0..config.positive_videos {
        plans.push((format!("pos_{v:03}"), true, config.positive_frames, v));
    }
    let mut videos = Vec::with_capacity(plans.len());
    for (id, positive, length, v) in plans {
        let kind = if positive { 2 } else { 1 };
        let vseed = seed::derive(config.seed, &[seed::tag::SCENE, kind, v as u64]);
        let k = usize::from(positive);
        let spec = SceneSpec::random_video(vseed, config.frame_size, config.frame_size, k, length, &config.gap);
        let generated = gen_video(&spec, &id)?;
        create_dir(&root.join("videos").join(&id))?;
        let frames = generated
            .frames
            .par_iter()
            .zip(generated.boxes.par_iter())
            .map(|(f, b)| {
                let rel = format!("videos/{id}/frame_{:06}.png", f.frame_index);
                Ok(FrameEntry {
                    index: f.frame_index,
                    sha256: write_png(root, &rel, &f.pixels)?,
                    path: rel,
                    boxes: quantize_boxes(b),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        videos.push(VideoEntry {
            id,
            split: if positive { SplitTag::VideoTest } else { SplitTag::VideoTrain },
            positive,
            frames,
        });
    }

    let manifest = CorpusManifest {
        schema_version: MANIFEST_SCHEMA_VERSION,
        generator_version: GENERATOR_VERSION.into(),
        config: config.clone(),
        images,
        videos,
    };
    manifest.validate(root)?;
    manifest.save(&root.join(MANIFEST_FILE))?;
    Ok(manifest)
}

/// Round box coordinates to 1/1024 px so the manifest text stays short and
/// exactly representable.
fn quantize_boxes(boxes: &[BoundingBox]) -> Vec<BoundingBox> {
    let q = |v: f64| (v * 1024.0).round() / 1024.0;
    boxes
        .iter()
        .map(|b| BoundingBox {
            x_min: q(b.x_min),
            y_min: q(b.y_min),
            x_max: q(b.x_max),
            y_max: q(b.y_max),
            score: b.score,
        })
        .collect()
}

impl CorpusManifest {
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Serde(e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    /// SHA-256 of the manifest text, which itself records every file's hash.
    pub fn checksum(&self) -> Result<String> {
        Ok(sha256_hex(self.to_json()?.as_bytes()))
    }

    /// Structural invariants; also checks referenced files exist under `root`.
    pub fn validate(&self, root: &Path) -> Result<()> {
        let missing = |rel: &str| -> Result<()> {
            let p: PathBuf = root.join(rel);
            if p.is_file() {
                Ok(())
            } else {
                Err(Error::load(p, "referenced file does not exist"))
            }
        };
        for img in &self.images {
            if !matches!(img.split, SplitTag::ImageTrain | SplitTag::ImageTest) {
                return Err(Error::arg(format!("image {} has split {:?}", img.id, img.split)));
            }
            if img.boxes.is_empty() {
                return Err(Error::arg(format!("positive image {} has no boxes", img.id)));
            }
            missing(&img.path)?;
        }
        for v in &self.videos {
            let expected = if v.positive { SplitTag::VideoTest } else { SplitTag::VideoTrain };
            if v.split != expected {
                return Err(Error::arg(format!("video {} has split {:?}", v.id, v.split)));
            }
            for (i, f) in v.frames.iter().enumerate() {
                if f.index != i {
                    return Err(Error::arg(format!("video {} frame {} has index {}", v.id, i, f.index)));
                }
                if v.positive == f.boxes.is_empty() {
                    return Err(Error::arg(format!(
                        "video {} frame {} box list contradicts positive={}",
                        v.id, i, v.positive
                    )));
                }
                missing(&f.path)?;
            }
        }
        Ok(())
    }

    pub fn split_counts(&self) -> [(SplitTag, usize); 4] {
        let img = |t| self.images.iter().filter(|i| i.split == t).count();
        let vid = |t| {
            self.videos
                .iter()
                .filter(|v| v.split == t)
                .map(|v| v.frames.len())
                .sum()
        };
        [
            (SplitTag::ImageTrain, img(SplitTag::ImageTrain)),
            (SplitTag::ImageTest, img(SplitTag::ImageTest)),
            (SplitTag::VideoTrain, vid(SplitTag::VideoTrain)),
            (SplitTag::VideoTest, vid(SplitTag::VideoTest)),
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_report_has_no_boxes() {
        let spec = SceneSpec::random_report(1, 64, 64, 0, &GapConfig::default());
        let img = gen_report_image(&spec).unwrap();
        assert!(img.boxes.is_empty());
        assert!(img.pixels.is_unit_range());
    }

    #[test]
    fn report_is_deterministic() {
        let g = GapConfig::default();
        let a = gen_report_image(&SceneSpec::random_report(5, 64, 64, 2, &g)).unwrap();
        let b = gen_report_image(&SceneSpec::random_report(5, 64, 64, 2, &g)).unwrap();
        assert_eq!(a, b);
        let c = gen_report_image(&SceneSpec::random_report(6, 64, 64, 2, &g)).unwrap();
        assert_ne!(a.pixels, c.pixels);
    }

    #[test]
    fn style_mismatch_rejected() {
        let g = GapConfig::default();
        let video = SceneSpec::random_video(1, 64, 64, 1, 10, &g);
        assert!(gen_report_image(&video).is_err());
        let report = SceneSpec::random_report(1, 64, 64, 1, &g);
        assert!(gen_video(&report, "x").is_err());
        let short = SceneSpec::random_video(1, 64, 64, 1, 2, &g);
        assert!(matches!(gen_video(&short, "x"), Err(Error::Argument(_))));
    }

    #[test]
    fn camera_steps_respect_jitter_and_radius() {
        let g = GapConfig { jitter: 1.5, pan_radius: 6.0, ..GapConfig::default() };
        let spec = SceneSpec::random_video(9, 32, 32, 1, 2000, &g);
        let path = spec.camera_path();
        for w in path.windows(2) {
            let d = ((w[1].0 - w[0].0).powi(2) + (w[1].1 - w[0].1).powi(2)).sqrt();
            assert!(d <= 1.5 + 1e-12);
        }
        assert!(path.iter().all(|(x, y)| (x * x + y * y).sqrt() <= 6.0 + 1e-12));
        assert!(path.iter().any(|&(x, y)| x != 0.0 || y != 0.0));
    }

    #[test]
    fn split_tags_parse() {
        for t in SplitTag::ALL {
            assert_eq!(t.as_str().parse::<SplitTag>().unwrap(), t);
        }
        assert!("video".parse::<SplitTag>().is_err());
    }

    #[test]
    fn default_split_proportion() {
        let c = CorpusConfig::default();
        assert_eq!(c.test_images(), 392);
    }
}
