//! Pixel grids, boxes and the labeled-still / video-frame carriers.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Real-valued raster stored row-major as `height × width × channels`.
#[derive(Clone, Debug, PartialEq)]
pub struct Pixels {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl Pixels {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 || channels == 0 {
            return Err(Error::arg(format!(
                "empty pixel grid {height}x{width}x{channels}"
            )));
        }
        if data.len() != height * width * channels {
            return Err(Error::arg(format!(
                "pixel buffer has {} values, expected {height}x{width}x{channels}",
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f64) -> Self {
        assert!(height > 0 && width > 0 && channels > 0);
        Self {
            height,
            width,
            channels,
            data: vec![value; height * width * channels],
        }
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Self {
        let mut data = Vec::with_capacity(height * width * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data.push(f(y, x, c));
                }
            }
        }
        assert!(!data.is_empty(), "empty pixel grid");
        Self {
            height,
            width,
            channels,
            data,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, c: usize, v: f64) {
        self.data[(y * self.width + x) * self.channels + c] = v;
    }

    /// True when every value lies in `[0, 1]`.
    pub fn is_unit_range(&self) -> bool {
        self.data.iter().all(|v| (0.0..=1.0).contains(v))
    }

    pub fn check_unit_range(&self) -> Result<()> {
        if self.is_unit_range() {
            Ok(())
        } else {
            Err(Error::arg("pixel values must lie in [0, 1]"))
        }
    }

    /// Mirror about the vertical axis.
    pub fn flip_horizontal(&self) -> Self {
        let (h, w, c) = self.shape();
        let mut out = self.data.clone();
        for y in 0..h {
            for x in 0..w {
                let src = (y * w + (w - 1 - x)) * c;
                let dst = (y * w + x) * c;
                out[dst..dst + c].copy_from_slice(&self.data[src..src + c]);
            }
        }
        Self {
            data: out,
            ..*self
        }
    }

    /// Quantize to 8 bits (round to nearest) for lossless PNG storage.
    pub fn to_rgb8(&self) -> Result<image::RgbImage> {
        if self.channels != 3 {
            return Err(Error::arg(format!(
                "RGB export needs 3 channels, got {}",
                self.channels
            )));
        }
        let bytes = self
            .data
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect();
        Ok(image::RgbImage::from_raw(self.width as u32, self.height as u32, bytes)
            .expect("buffer length matches dimensions"))
    }

    pub fn from_rgb8(img: &image::RgbImage) -> Self {
        let data = img.as_raw().iter().map(|&b| b as f64 / 255.0).collect();
        Self {
            height: img.height() as usize,
            width: img.width() as usize,
            channels: 3,
            data,
        }
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        self.to_rgb8()?
            .save_with_format(path, image::ImageFormat::Png)
            .map_err(|source| Error::Image {
                path: path.to_path_buf(),
                source,
            })
    }

    pub fn load_png(path: &Path) -> Result<Self> {
        let img = image::open(path).map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })?;
        Ok(Self::from_rgb8(&img.to_rgb8()))
    }
}

/// Axis-aligned box in pixel coordinates. `score` is only set on predictions.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
}

impl BoundingBox {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Result<Self> {
        let b = Self {
            x_min,
            y_min,
            x_max,
            y_max,
            score: None,
        };
        b.validate()?;
        Ok(b)
    }

    pub fn with_score(mut self, score: f64) -> Self {
        self.score = Some(score);
        self
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.x_min, self.y_min, self.x_max, self.y_max]
            .iter()
            .all(|v| v.is_finite());
        if !finite || !(self.x_min < self.x_max) || !(self.y_min < self.y_max) {
            return Err(Error::arg(format!("degenerate box {self:?}")));
        }
        if let Some(s) = self.score {
            if !(0.0..=1.0).contains(&s) {
                return Err(Error::arg(format!("box score {s} outside [0, 1]")));
            }
        }
        Ok(())
    }

    /// Validate and check the box lies inside a `width × height` image.
    pub fn validate_within(&self, width: usize, height: usize) -> Result<()> {
        self.validate()?;
        if self.x_min < 0.0
            || self.y_min < 0.0
            || self.x_max > width as f64
            || self.y_max > height as f64
        {
            return Err(Error::arg(format!(
                "box {self:?} exceeds {width}x{height} image"
            )));
        }
        Ok(())
    }

    /// Clamp to the image; `None` if nothing with positive area remains.
    pub fn clamped(&self, width: usize, height: usize) -> Option<Self> {
        let b = Self {
            x_min: self.x_min.clamp(0.0, width as f64),
            y_min: self.y_min.clamp(0.0, height as f64),
            x_max: self.x_max.clamp(0.0, width as f64),
            y_max: self.y_max.clamp(0.0, height as f64),
            score: self.score,
        };
        (b.x_min < b.x_max && b.y_min < b.y_max).then_some(b)
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> (f64, f64) {
        (
            0.5 * (self.x_min + self.x_max),
            0.5 * (self.y_min + self.y_max),
        )
    }

    /// Mirror about the vertical axis of an image `width` pixels wide.
    pub fn flip_horizontal(&self, width: usize) -> Self {
        let w = width as f64;
        Self {
            x_min: w - self.x_max,
            x_max: w - self.x_min,
            ..*self
        }
    }
}

/// A report-style still with its box labels.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledImage {
    pub pixels: Pixels,
    pub boxes: Vec<BoundingBox>,
}

impl LabeledImage {
    pub fn new(pixels: Pixels, boxes: Vec<BoundingBox>) -> Result<Self> {
        pixels.check_unit_range()?;
        for b in &boxes {
            b.validate_within(pixels.width(), pixels.height())?;
        }
        Ok(Self { pixels, boxes })
    }
}

/// An unlabeled video frame.
#[derive(Clone, Debug, PartialEq)]
pub struct VideoFrame {
    pub pixels: Pixels,
    pub frame_index: usize,
    pub source_video: String,
}
