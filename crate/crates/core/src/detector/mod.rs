//! Detector contract and the reference anchor-based detector.
//!
//! The reference model is a small convolutional encoder (`log2(stride)`
//! stride-2 stages followed by one stride-1 stage, each conv → frozen
//! normalization → ReLU) and a 1×1 head predicting, per anchor, an objectness
//! logit and four box offsets. Gradients are computed by hand.

mod anchors;
pub mod checkpoint;
mod conv;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pixels::{BoundingBox, Pixels};
use crate::seed;
use crate::tcr::FeatureMap;

pub use self::anchors::{anchor_grid, assign, decode, encode, nms_sorted, Anchor, AnchorLabel, NEGATIVE_IOU, POSITIVE_IOU};
use self::conv::ConvShape;

const NORM_EPS: f64 = 1e-5;
const SMOOTH_L1_BETA: f64 = 1.0 / 9.0;
const PRIOR_PROBABILITY: f64 = 0.01;

/// A scored prediction.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub bbox: BoundingBox,
    pub score: f64,
}

/// Single-frame detector: an encoder exposing one designated regularization
/// feature, a detection loss and an inference path.
pub trait Detector: Sync {
    /// The regularization feature for an input image.
    fn encode(&self, image: &Pixels) -> Result<FeatureMap>;

    fn detection_loss(&self, image: &Pixels, boxes: &[BoundingBox]) -> Result<f64>;

    /// Detections above the score threshold after suppression, best first.
    fn predict(&self, image: &Pixels) -> Result<Vec<Detection>>;
}

/// Detection loss split into its two terms.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossParts {
    pub classification: f64,
    pub regression: f64,
}

impl LossParts {
    pub fn total(&self) -> f64 {
        self.classification + self.regression
    }
}

/// Gradient access needed by the training loop.
pub trait Trainable: Detector {
    /// Saved activations for backpropagating through one encoding.
    type Tape: Send;

    fn params(&self) -> &[f64];

    fn params_mut(&mut self) -> &mut [f64];

    /// `false` for parameters the optimizer must leave untouched.
    fn trainable_mask(&self) -> Vec<bool>;

    /// Detection loss, accumulating `scale · ∂loss/∂θ` into `grad`.
    fn detection_loss_grad(
        &self,
        image: &Pixels,
        boxes: &[BoundingBox],
        scale: f64,
        grad: &mut [f64],
    ) -> Result<LossParts>;

    fn encode_taped(&self, image: &Pixels) -> Result<(FeatureMap, Self::Tape)>;

    /// Accumulate `∂/∂θ ⟨grad_feature, encode(x)⟩` into `grad`.
    fn backprop_feature(&self, tape: &Self::Tape, grad_feature: &FeatureMap, grad: &mut [f64]);
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectorConfig {
    pub input_channels: usize,
    pub feature_channels: usize,
    /// Input pixels per feature cell; a power of two.
    pub feature_stride: usize,
    /// Anchor `(width, height)` in pixels, one set per feature cell.
    pub anchor_sizes: Vec<(f64, f64)>,
    pub score_threshold: f64,
    pub nms_iou: f64,
    #[serde(default = "default_true")]
    pub frozen_norm: bool,
    #[serde(default = "default_max_detections")]
    pub max_detections: usize,
}

fn default_true() -> bool {
    true
}

fn default_max_detections() -> usize {
    100
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            input_channels: 3,
            feature_channels: 32,
            feature_stride: 8,
            anchor_sizes: vec![(24.0, 24.0)],
            score_threshold: 0.05,
            nms_iou: 0.5,
            frozen_norm: true,
            max_detections: default_max_detections(),
        }
    }
}

impl DetectorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input_channels == 0 || self.feature_channels == 0 {
            return Err(Error::config("channel counts must be >= 1"));
        }
        if !self.feature_stride.is_power_of_two() {
            return Err(Error::config(format!(
                "feature_stride must be a power of two, got {}",
                self.feature_stride
            )));
        }
        if self.anchor_sizes.is_empty() {
            return Err(Error::config("at least one anchor size is required"));
        }
        if self
            .anchor_sizes
            .iter()
            .any(|&(w, h)| !(w.is_finite() && h.is_finite() && w > 0.0 && h > 0.0))
        {
            return Err(Error::config("anchor sizes must be positive"));
        }
        if !(0.0..=1.0).contains(&self.score_threshold) {
            return Err(Error::config("score_threshold must be in [0, 1]"));
        }
        if !(self.nms_iou > 0.0 && self.nms_iou <= 1.0) {
            return Err(Error::config("nms_iou must be in (0, 1]"));
        }
        Ok(())
    }

    /// Output widths of the encoder stages.
    pub fn stage_widths(&self) -> Vec<usize> {
        let downs = self.feature_stride.trailing_zeros() as usize;
        let floor = self.feature_channels.min(8);
        let mut widths: Vec<usize> = (0..downs)
            .map(|i| (self.feature_channels >> (downs - 1 - i)).max(floor))
            .collect();
        widths.push(self.feature_channels);
        widths
    }

    fn stage_strides(&self) -> Vec<usize> {
        let downs = self.feature_stride.trailing_zeros() as usize;
        let mut s = vec![2; downs];
        s.push(1);
        s
    }

    fn head_outputs(&self) -> usize {
        5 * self.anchor_sizes.len()
    }
}

#[derive(Clone, Debug)]
struct StageLayout {
    cin: usize,
    cout: usize,
    stride: usize,
    weight: usize,
    bias: usize,
    gamma: usize,
    beta: usize,
    /// Offsets into the buffer vector.
    mean: usize,
    var: usize,
}

/// Parameter and buffer offsets derived from a config.
#[derive(Clone, Debug)]
struct Layout {
    stages: Vec<StageLayout>,
    head_weight: usize,
    head_bias: usize,
    n_params: usize,
    n_buffers: usize,
}

impl Layout {
    fn new(config: &DetectorConfig) -> Self {
        let mut off = 0;
        let mut boff = 0;
        let mut take = |n: usize| {
            let o = off;
            off += n;
            o
        };
        let mut stages = Vec::new();
        let mut cin = config.input_channels;
        for (cout, stride) in config.stage_widths().into_iter().zip(config.stage_strides()) {
            let weight = take(cout * cin * 9);
            let bias = take(cout);
            let gamma = take(cout);
            let beta = take(cout);
            stages.push(StageLayout {
                cin,
                cout,
                stride,
                weight,
                bias,
                gamma,
                beta,
                mean: boff,
                var: boff + cout,
            });
            boff += 2 * cout;
            cin = cout;
        }
        let head_weight = take(config.head_outputs() * cin);
        let head_bias = take(config.head_outputs());
        Self {
            stages,
            head_weight,
            head_bias,
            n_params: off,
            n_buffers: boff,
        }
    }
}

/// A named parameter or buffer view, in checkpoint order.
#[derive(Clone, Debug, PartialEq)]
pub struct NamedSlot {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
    pub len: usize,
}

/// Parameters, frozen buffers and counters of the reference detector.
#[derive(Clone, Debug)]
pub struct DetectorState {
    config: DetectorConfig,
    layout: Layout,
    params: Vec<f64>,
    buffers: Vec<f64>,
    pub epoch: usize,
    pub step: u64,
}

impl PartialEq for DetectorState {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config
            && self.params == other.params
            && self.buffers == other.buffers
            && self.epoch == other.epoch
            && self.step == other.step
    }
}

/// Activations of one encoder pass.
pub struct EncoderTape {
    stages: Vec<StageTape>,
}

struct StageTape {
    shape: ConvShape,
    col: Vec<f64>,
    normalized: Vec<f64>,
    activation: Vec<f64>,
}

pub fn build_detector(config: DetectorConfig, seed: u64) -> Result<DetectorState> {
    DetectorState::new(config, seed)
}

impl DetectorState {
    /// Deterministic initialization: He-normal convolutions, small head weights
    /// and an objectness bias matching a 1% foreground prior.
    pub fn new(config: DetectorConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(&config);
        let mut rng = seed::stream(seed, &[seed::tag::INIT]);
        let mut params = vec![0.0; layout.n_params];
        let mut buffers = vec![0.0; layout.n_buffers];
        for st in &layout.stages {
            let fan_in = (st.cin * 9) as f64;
            let normal = Normal::new(0.0, (2.0 / fan_in).sqrt()).expect("positive std");
            for v in &mut params[st.weight..st.weight + st.cout * st.cin * 9] {
                *v = normal.sample(&mut rng);
            }
            params[st.gamma..st.gamma + st.cout].fill(1.0);
            buffers[st.var..st.var + st.cout].fill(1.0);
        }
        let outputs = config.head_outputs();
        let cfeat = config.feature_channels;
        let normal = Normal::new(0.0, 0.01).expect("positive std");
        for v in &mut params[layout.head_weight..layout.head_weight + outputs * cfeat] {
            *v = normal.sample(&mut rng);
        }
        let prior = -((1.0 - PRIOR_PROBABILITY) / PRIOR_PROBABILITY).ln();
        for a in 0..config.anchor_sizes.len() {
            params[layout.head_bias + 5 * a] = prior;
        }
        Ok(Self {
            config,
            layout,
            params,
            buffers,
            epoch: 0,
            step: 0,
        })
    }

    pub fn config(&self) -> &DetectorConfig {
        &self.config
    }

    pub fn buffers(&self) -> &[f64] {
        &self.buffers
    }

    /// Trainable parameter slots, in a fixed order.
    pub fn parameter_slots(&self) -> Vec<NamedSlot> {
        let mut out = Vec::new();
        for (i, st) in self.layout.stages.iter().enumerate() {
            out.push(slot(format!("encoder.{i}.conv.weight"), vec![st.cout, st.cin, 3, 3], st.weight));
            out.push(slot(format!("encoder.{i}.conv.bias"), vec![st.cout], st.bias));
            out.push(slot(format!("encoder.{i}.norm.weight"), vec![st.cout], st.gamma));
            out.push(slot(format!("encoder.{i}.norm.bias"), vec![st.cout], st.beta));
        }
        let outputs = self.config.head_outputs();
        out.push(slot(
            "head.weight".into(),
            vec![outputs, self.config.feature_channels, 1, 1],
            self.layout.head_weight,
        ));
        out.push(slot("head.bias".into(), vec![outputs], self.layout.head_bias));
        out
    }

    /// Non-trainable buffer slots (normalization statistics).
    pub fn buffer_slots(&self) -> Vec<NamedSlot> {
        let mut out = Vec::new();
        for (i, st) in self.layout.stages.iter().enumerate() {
            out.push(slot(format!("encoder.{i}.norm.running_mean"), vec![st.cout], st.mean));
            out.push(slot(format!("encoder.{i}.norm.running_var"), vec![st.cout], st.var));
        }
        out
    }

    /// Replace parameters and buffers wholesale (used by checkpoint loading).
    pub(crate) fn from_parts(
        config: DetectorConfig,
        params: Vec<f64>,
        buffers: Vec<f64>,
        epoch: usize,
        step: u64,
    ) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(&config);
        if params.len() != layout.n_params || buffers.len() != layout.n_buffers {
            return Err(Error::arg(format!(
                "parameter count {}/{} does not match config ({}/{})",
                params.len(),
                buffers.len(),
                layout.n_params,
                layout.n_buffers
            )));
        }
        Ok(Self {
            config,
            layout,
            params,
            buffers,
            epoch,
            step,
        })
    }

    fn check_input(&self, image: &Pixels) -> Result<()> {
        let (h, w, c) = image.shape();
        if c != self.config.input_channels {
            return Err(Error::arg(format!(
                "input has {c} channels, detector expects {}",
                self.config.input_channels
            )));
        }
        let s = self.config.feature_stride;
        if h % s != 0 || w % s != 0 {
            return Err(Error::arg(format!(
                "input {h}x{w} is not divisible by stride {s}"
            )));
        }
        Ok(())
    }

    /// Centered channel-major input.
    fn to_chw(image: &Pixels) -> Vec<f64> {
        let (h, w, c) = image.shape();
        let src = image.data();
        let mut out = vec![0.0; c * h * w];
        for p in 0..h * w {
            for ch in 0..c {
                out[ch * h * w + p] = src[p * c + ch] - 0.5;
            }
        }
        out
    }

    fn run_encoder(&self, image: &Pixels, keep_tape: bool) -> Result<(FeatureMap, Option<EncoderTape>)> {
        self.check_input(image)?;
        let (mut h, mut w, _) = image.shape();
        let mut x = Self::to_chw(image);
        let mut tapes = Vec::new();
        for st in &self.layout.stages {
            let shape = ConvShape::new(st.cin, st.cout, 3, st.stride, h, w);
            let col = conv::im2col(&x, &shape);
            let p = &self.params;
            let z = conv::forward(
                &p[st.weight..st.weight + shape.weight_len()],
                &p[st.bias..st.bias + st.cout],
                &col,
                &shape,
            );
            let plane = shape.out_plane();
            let mut normalized = z;
            let mut act = vec![0.0; normalized.len()];
            for c in 0..st.cout {
                let mean = self.buffers[st.mean + c];
                let inv_std = 1.0 / (self.buffers[st.var + c] + NORM_EPS).sqrt();
                let (g, b) = (p[st.gamma + c], p[st.beta + c]);
                for i in c * plane..(c + 1) * plane {
                    let zhat = (normalized[i] - mean) * inv_std;
                    normalized[i] = zhat;
                    act[i] = (zhat * g + b).max(0.0);
                }
            }
            h = shape.out_h;
            w = shape.out_w;
            if keep_tape {
                x = act.clone();
                tapes.push(StageTape {
                    shape,
                    col,
                    normalized,
                    activation: act,
                });
            } else {
                x = act;
            }
        }
        let feature = FeatureMap::new(self.config.feature_channels, h, w, x)?;
        Ok((feature, keep_tape.then_some(EncoderTape { stages: tapes })))
    }

    fn head_shape(&self, feature: &FeatureMap) -> ConvShape {
        ConvShape::new(
            self.config.feature_channels,
            self.config.head_outputs(),
            1,
            1,
            feature.height(),
            feature.width(),
        )
    }

    /// Head outputs, `(5 · anchors) × (feat_h · feat_w)`.
    fn run_head(&self, feature: &FeatureMap) -> Vec<f64> {
        let shape = self.head_shape(feature);
        let p = &self.params;
        conv::forward(
            &p[self.layout.head_weight..self.layout.head_weight + shape.weight_len()],
            &p[self.layout.head_bias..self.layout.head_bias + shape.cout],
            feature.values(),
            &shape,
        )
    }

    fn anchors_for(&self, feature: &FeatureMap) -> Vec<Anchor> {
        anchor_grid(
            feature.height(),
            feature.width(),
            self.config.feature_stride,
            &self.config.anchor_sizes,
        )
    }

    fn check_boxes(image: &Pixels, boxes: &[BoundingBox]) -> Result<()> {
        for b in boxes {
            b.validate_within(image.width(), image.height())?;
        }
        Ok(())
    }

    /// Loss and `∂loss/∂logits` for the head outputs.
    fn head_loss(&self, logits: &[f64], anchors: &[Anchor], boxes: &[BoundingBox]) -> (LossParts, Vec<f64>) {
        let n_anchor = self.config.anchor_sizes.len();
        let plane = logits.len() / (5 * n_anchor);
        let labels = assign(anchors, boxes);
        let n_pos = labels.iter().filter(|l| matches!(l, AnchorLabel::Positive(_))).count();
        let norm = 1.0 / n_pos.max(1) as f64;
        let mut grad = vec![0.0; logits.len()];
        let mut parts = LossParts::default();
        for (idx, (label, anchor)) in labels.iter().zip(anchors).enumerate() {
            let (p, a) = (idx / n_anchor, idx % n_anchor);
            let obj = (5 * a) * plane + p;
            let target = match label {
                AnchorLabel::Ignore => continue,
                AnchorLabel::Negative => 0.0,
                AnchorLabel::Positive(_) => 1.0,
            };
            let x = logits[obj];
            parts.classification += norm * (x.max(0.0) - x * target + (-x.abs()).exp().ln_1p());
            grad[obj] = norm * (sigmoid(x) - target);
            if let AnchorLabel::Positive(ti) = *label {
                let t = encode(anchor, &boxes[ti]);
                for k in 0..4 {
                    let i = (5 * a + 1 + k) * plane + p;
                    let (l, g) = smooth_l1(logits[i] - t[k]);
                    parts.regression += norm * l;
                    grad[i] = norm * g;
                }
            }
        }
        (parts, grad)
    }
}

fn slot(name: String, shape: Vec<usize>, offset: usize) -> NamedSlot {
    let len = shape.iter().product();
    NamedSlot {
        name,
        shape,
        offset,
        len,
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Smooth-L1 value and derivative.
fn smooth_l1(d: f64) -> (f64, f64) {
    if d.abs() < SMOOTH_L1_BETA {
        (0.5 * d * d / SMOOTH_L1_BETA, d / SMOOTH_L1_BETA)
    } else {
        (d.abs() - 0.5 * SMOOTH_L1_BETA, d.signum())
    }
}

impl Detector for DetectorState {
    fn encode(&self, image: &Pixels) -> Result<FeatureMap> {
        self.run_encoder(image, false).map(|(f, _)| f)
    }

    fn detection_loss(&self, image: &Pixels, boxes: &[BoundingBox]) -> Result<f64> {
        Self::check_boxes(image, boxes)?;
        let feature = self.encode(image)?;
        let logits = self.run_head(&feature);
        let (parts, _) = self.head_loss(&logits, &self.anchors_for(&feature), boxes);
        Ok(parts.total())
    }

    fn predict(&self, image: &Pixels) -> Result<Vec<Detection>> {
        let feature = self.encode(image)?;
        let logits = self.run_head(&feature);
        let anchors = self.anchors_for(&feature);
        let n_anchor = self.config.anchor_sizes.len();
        let plane = feature.height() * feature.width();
        let (w, h) = (image.width(), image.height());
        let mut candidates: Vec<Detection> = Vec::new();
        for (idx, anchor) in anchors.iter().enumerate() {
            let (p, a) = (idx / n_anchor, idx % n_anchor);
            let score = sigmoid(logits[(5 * a) * plane + p]);
            if !(score > self.config.score_threshold) {
                continue;
            }
            let delta = [1, 2, 3, 4].map(|k| logits[(5 * a + k) * plane + p]);
            if let Some(b) = decode(anchor, delta).clamped(w, h) {
                candidates.push(Detection {
                    bbox: b.with_score(score),
                    score,
                });
            }
        }
        // stable: equal scores keep anchor order
        candidates.sort_by(|a, b| b.score.total_cmp(&a.score));
        let boxes: Vec<BoundingBox> = candidates.iter().map(|d| d.bbox).collect();
        let mut out: Vec<Detection> = nms_sorted(&boxes, self.config.nms_iou)
            .into_iter()
            .map(|i| candidates[i])
            .collect();
        out.truncate(self.config.max_detections);
        Ok(out)
    }
}

impl Trainable for DetectorState {
    type Tape = EncoderTape;

    fn params(&self) -> &[f64] {
        &self.params
    }

    fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn trainable_mask(&self) -> Vec<bool> {
        let mut mask = vec![true; self.params.len()];
        if self.config.frozen_norm {
            for st in &self.layout.stages {
                mask[st.gamma..st.gamma + st.cout].fill(false);
                mask[st.beta..st.beta + st.cout].fill(false);
            }
        }
        mask
    }

    fn detection_loss_grad(
        &self,
        image: &Pixels,
        boxes: &[BoundingBox],
        scale: f64,
        grad: &mut [f64],
    ) -> Result<LossParts> {
        Self::check_boxes(image, boxes)?;
        let (feature, tape) = self.encode_taped(image)?;
        let logits = self.run_head(&feature);
        let (parts, mut g_logits) = self.head_loss(&logits, &self.anchors_for(&feature), boxes);
        g_logits.iter_mut().for_each(|g| *g *= scale);

        let shape = self.head_shape(&feature);
        let (hw, hb) = (self.layout.head_weight, self.layout.head_bias);
        {
            let (gw, rest) = grad[hw..].split_at_mut(shape.weight_len());
            let gb = &mut rest[hb - hw - shape.weight_len()..][..shape.cout];
            conv::backward_params(&g_logits, feature.values(), &shape, gw, gb);
        }
        let g_feature = conv::backward_col(&self.params[hw..hw + shape.weight_len()], &g_logits, &shape);
        let (c, fh, fw) = feature.shape();
        self.backprop_feature(&tape, &FeatureMap::new(c, fh, fw, g_feature)?, grad);
        Ok(parts)
    }

    fn encode_taped(&self, image: &Pixels) -> Result<(FeatureMap, EncoderTape)> {
        let (f, tape) = self.run_encoder(image, true)?;
        Ok((f, tape.expect("tape requested")))
    }

    fn backprop_feature(&self, tape: &EncoderTape, grad_feature: &FeatureMap, grad: &mut [f64]) {
        let mut g = grad_feature.values().to_vec();
        for (i, (st, t)) in self.layout.stages.iter().zip(&tape.stages).enumerate().rev() {
            let plane = t.shape.out_plane();
            for c in 0..st.cout {
                let inv_std = 1.0 / (self.buffers[st.var + c] + NORM_EPS).sqrt();
                let gamma = self.params[st.gamma + c];
                let (mut g_gamma, mut g_beta) = (0.0, 0.0);
                for j in c * plane..(c + 1) * plane {
                    let gy = if t.activation[j] > 0.0 { g[j] } else { 0.0 };
                    g_gamma += gy * t.normalized[j];
                    g_beta += gy;
                    g[j] = gy * gamma * inv_std;
                }
                grad[st.gamma + c] += g_gamma;
                grad[st.beta + c] += g_beta;
            }
            let wlen = t.shape.weight_len();
            {
                let (gw, rest) = grad[st.weight..].split_at_mut(wlen);
                let gb = &mut rest[st.bias - st.weight - wlen..][..st.cout];
                conv::backward_params(&g, &t.col, &t.shape, gw, gb);
            }
            if i > 0 {
                let gcol = conv::backward_col(&self.params[st.weight..st.weight + wlen], &g, &t.shape);
                let mut gx = vec![0.0; st.cin * t.shape.in_h * t.shape.in_w];
                conv::col2im(&gcol, &t.shape, &mut gx);
                g = gx;
            }
        }
    }
}
