//! Training and evaluation toolkit for single-frame object detectors that learn
//! jointly from labeled still images and unlabeled, negative video.
//!
//! The pieces:
//!
//! * [`mixup`] blends labeled stills with negative video frames, keeping the
//!   still's boxes.
//! * [`tcr`] measures temporal coherence of encoder features over frame triples.
//! * [`detector`] is the pluggable detector contract plus a small anchor-based
//!   reference model with hand-written backpropagation.
//! * [`synth`] manufactures a still/video corpus with a controllable domain gap.
//! * [`data`] loads corpora and emits joint training batches.
//! * [`eval`] computes IoU, matching and AP@0.5.
//! * [`train`] runs the four training arms, checkpoints and the comparison matrix.

pub mod data;
pub mod detector;
pub mod error;
pub mod eval;
pub mod mixup;
pub mod pixels;
pub mod seed;
pub mod synth;
pub mod tcr;
pub mod train;

pub use crate::detector::{Detection, Detector, DetectorConfig, DetectorState, Trainable};
pub use crate::error::{Error, Result};
pub use crate::eval::ApReport;
pub use crate::mixup::{MixupConfig, MixupSample};
pub use crate::pixels::{BoundingBox, LabeledImage, Pixels, VideoFrame};
pub use crate::tcr::{FeatureMap, FrameTriple, TcrConfig};
pub use crate::train::{Arm, RunRecord, TrainingConfig};
