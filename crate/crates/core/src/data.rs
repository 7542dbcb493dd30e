//! Corpus loading and joint batch construction.
//!
//! A [`JointBatch`] carries the supervised stream (stills, flipped and then
//! optionally blended with a random negative frame) and, when temporal
//! regularization is on, frame triples drawn from negative videos.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::mixup::{self, MixupConfig, MixupSample};
use crate::pixels::{BoundingBox, LabeledImage, Pixels, VideoFrame};
use crate::seed::{self, tag};
use crate::synth::{CorpusManifest, SplitTag, MANIFEST_FILE, MANIFEST_SCHEMA_VERSION};
use crate::tcr::FrameTriple;

#[derive(Clone, Debug)]
struct ItemRef {
    id: String,
    path: PathBuf,
    boxes: Vec<BoundingBox>,
}

/// Labeled items (stills or annotated frames); pixels are read on demand.
#[derive(Clone, Debug)]
pub struct Split {
    tag: SplitTag,
    items: Vec<ItemRef>,
}

impl Split {
    pub fn tag(&self) -> SplitTag {
        self.tag
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn id(&self, i: usize) -> &str {
        &self.items[i].id
    }

    pub fn boxes(&self, i: usize) -> &[BoundingBox] {
        &self.items[i].boxes
    }

    pub fn load(&self, i: usize) -> Result<LabeledImage> {
        let item = &self.items[i];
        let pixels = Pixels::load_png(&item.path)?;
        LabeledImage::new(pixels, item.boxes.clone())
            .map_err(|e| Error::load(&item.path, e.to_string()))
    }
}

#[derive(Clone, Debug)]
struct VideoRef {
    id: String,
    frames: Vec<PathBuf>,
}

/// Unlabeled (negative) training videos.
#[derive(Clone, Debug, Default)]
pub struct VideoSet {
    videos: Vec<VideoRef>,
}

impl VideoSet {
    pub fn num_videos(&self) -> usize {
        self.videos.len()
    }

    pub fn total_frames(&self) -> usize {
        self.videos.iter().map(|v| v.frames.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.total_frames() == 0
    }

    pub fn video_len(&self, video: usize) -> usize {
        self.videos[video].frames.len()
    }

    pub fn load_frame(&self, video: usize, index: usize) -> Result<VideoFrame> {
        let v = &self.videos[video];
        let path = v.frames.get(index).ok_or_else(|| {
            Error::arg(format!("video {} has no frame {index}", v.id))
        })?;
        Ok(VideoFrame {
            pixels: Pixels::load_png(path)?,
            frame_index: index,
            source_video: v.id.clone(),
        })
    }

    /// Frame by position in the concatenation of all videos.
    pub fn load_global(&self, mut k: usize) -> Result<VideoFrame> {
        for (vi, v) in self.videos.iter().enumerate() {
            if k < v.frames.len() {
                return self.load_frame(vi, k);
            }
            k -= v.frames.len();
        }
        Err(Error::arg("global frame index out of range"))
    }

    pub fn load_triple(&self, video: usize, mid: usize, stride: usize) -> Result<FrameTriple> {
        if mid < stride {
            return Err(Error::arg("triple would start before frame 0"));
        }
        FrameTriple::new(
            self.load_frame(video, mid - stride)?,
            self.load_frame(video, mid)?,
            self.load_frame(video, mid + stride)?,
            stride,
        )
    }
}

/// Every split of a corpus.
#[derive(Clone, Debug)]
pub struct Splits {
    pub root: PathBuf,
    pub manifest: CorpusManifest,
    pub image_train: Split,
    pub image_test: Split,
    pub video_train: VideoSet,
    pub video_test: Split,
}

impl Splits {
    /// A labeled split by tag; `video-train` is unlabeled and has none.
    pub fn labeled(&self, tag: SplitTag) -> Result<&Split> {
        match tag {
            SplitTag::ImageTrain => Ok(&self.image_train),
            SplitTag::ImageTest => Ok(&self.image_test),
            SplitTag::VideoTest => Ok(&self.video_test),
            SplitTag::VideoTrain => Err(Error::arg("video-train has no labels to evaluate")),
        }
    }
}

/// Load a corpus from its manifest (or the directory holding it).
pub fn load_manifest(path: &Path) -> Result<Splits> {
    let file = if path.is_dir() { path.join(MANIFEST_FILE) } else { path.to_path_buf() };
    let root = file.parent().map(Path::to_path_buf).unwrap_or_default();
    let text = fs::read_to_string(&file).map_err(|e| Error::io(&file, e))?;
    let manifest: CorpusManifest =
        serde_json::from_str(&text).map_err(|e| Error::load(&file, e.to_string()))?;
    if manifest.schema_version != MANIFEST_SCHEMA_VERSION {
        return Err(Error::load(
            &file,
            format!(
                "unsupported schema version {} (expected {MANIFEST_SCHEMA_VERSION})",
                manifest.schema_version
            ),
        ));
    }
    manifest.validate(&root).map_err(|e| match e {
        Error::Load { .. } => e,
        other => Error::load(&file, other.to_string()),
    })?;

    let image_split = |t: SplitTag| Split {
        tag: t,
        items: manifest
            .images
            .iter()
            .filter(|i| i.split == t)
            .map(|i| ItemRef {
                id: i.id.clone(),
                path: root.join(&i.path),
                boxes: i.boxes.clone(),
            })
            .collect(),
    };
    let video_train = VideoSet {
        videos: manifest
            .videos
            .iter()
            .filter(|v| v.split == SplitTag::VideoTrain)
            .map(|v| VideoRef {
                id: v.id.clone(),
                frames: v.frames.iter().map(|f| root.join(&f.path)).collect(),
            })
            .collect(),
    };
    let video_test = Split {
        tag: SplitTag::VideoTest,
        items: manifest
            .videos
            .iter()
            .filter(|v| v.split == SplitTag::VideoTest)
            .flat_map(|v| {
                v.frames.iter().map(|f| ItemRef {
                    id: format!("{}/{}", v.id, f.index),
                    path: root.join(&f.path),
                    boxes: f.boxes.clone(),
                })
            })
            .collect(),
    };
    Ok(Splits {
        image_train: image_split(SplitTag::ImageTrain),
        image_test: image_split(SplitTag::ImageTest),
        video_train,
        video_test,
        root,
        manifest,
    })
}

/// Mirror with the given probability. Always consumes exactly one draw.
pub fn horizontal_flip<R: Rng + ?Sized>(image: LabeledImage, rng: &mut R, probability: f64) -> LabeledImage {
    let flip = rng.random::<f64>() < probability;
    if flip {
        force_flip(&image)
    } else {
        image
    }
}

pub fn force_flip(image: &LabeledImage) -> LabeledImage {
    let w = image.pixels.width();
    LabeledImage {
        pixels: image.pixels.flip_horizontal(),
        boxes: image.boxes.iter().map(|b| b.flip_horizontal(w)).collect(),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BatchConfig {
    pub batch_size: usize,
    /// Triples per batch; 0 disables temporal regularization input.
    pub triples_per_batch: usize,
    pub flip_probability: f64,
    /// `None` feeds raw (flipped) stills.
    pub mixup: Option<MixupConfig>,
    pub triple_stride: usize,
    pub seed: u64,
}

impl BatchConfig {
    pub fn validate(&self, splits: &Splits) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be >= 1"));
        }
        if !(0.0..=1.0).contains(&self.flip_probability) {
            return Err(Error::config("flip_probability must be in [0, 1]"));
        }
        if let Some(m) = &self.mixup {
            m.validate()?;
        }
        if self.triple_stride == 0 {
            return Err(Error::config("triple_stride must be >= 1"));
        }
        if splits.image_train.is_empty() {
            return Err(Error::config("image-train split is empty"));
        }
        if self.mixup.is_some() && splits.video_train.is_empty() {
            return Err(Error::config("mixup needs negative frames but video-train is empty"));
        }
        if self.triples_per_batch > 0 {
            let usable = (0..splits.video_train.num_videos())
                .any(|v| splits.video_train.video_len(v) > 2 * self.triple_stride);
            if !usable {
                return Err(Error::config("temporal regularization needs a video-train clip long enough for a triple"));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct JointBatch {
    pub epoch: usize,
    pub step: usize,
    /// Manifest ids of the stills, aligned with `mixup_samples`.
    pub image_ids: Vec<String>,
    pub mixup_samples: Vec<MixupSample>,
    pub triples: Vec<FrameTriple>,
}

/// Seeded permutation of still indices for one epoch.
pub fn epoch_order(num_images: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..num_images).collect();
    order.shuffle(&mut seed::stream(seed, &[tag::SHUFFLE, epoch as u64]));
    order
}

pub fn batches_per_epoch(num_images: usize, batch_size: usize) -> usize {
    num_images.div_ceil(batch_size)
}

/// Build batch `step` of `epoch`. Each sample's randomness depends only on
/// `(seed, epoch, position)`, so batches can be built in any order.
pub fn build_batch(splits: &Splits, cfg: &BatchConfig, epoch: usize, step: usize) -> Result<JointBatch> {
    let n = splits.image_train.len();
    let order = epoch_order(n, cfg.seed, epoch);
    let start = step * cfg.batch_size;
    if start >= n {
        return Err(Error::arg(format!("epoch has no batch {step}")));
    }
    let slots: Vec<(usize, usize)> = (start..(start + cfg.batch_size).min(n)).map(|k| (k, order[k])).collect();
    let (e, s) = (epoch as u64, step as u64);

    let samples = slots
        .par_iter()
        .map(|&(k, idx)| {
            let k = k as u64;
            let image = splits.image_train.load(idx)?;
            let image = horizontal_flip(image, &mut seed::stream(cfg.seed, &[tag::FLIP, e, k]), cfg.flip_probability);
            match &cfg.mixup {
                None => Ok(MixupSample::unmixed(image)),
                Some(m) => {
                    let total = splits.video_train.total_frames();
                    let pick = seed::stream(cfg.seed, &[tag::FRAME, e, k]).random_range(0..total);
                    let frame = splits.video_train.load_global(pick)?;
                    let lambda = mixup::sample_lambda(m, &mut seed::stream(cfg.seed, &[tag::LAMBDA, e, k]))?;
                    mixup::mix_with_lambda(&image, &frame, lambda)
                }
            }
        })
        .collect::<Result<Vec<_>>>()?;

    let triples = (0..cfg.triples_per_batch as u64)
        .into_par_iter()
        .map(|t| {
            let mut rng = seed::stream(cfg.seed, &[tag::TRIPLE, e, s, t]);
            // Uniform over all valid middle frames across videos.
            let vt = &splits.video_train;
            let span = |v: usize| vt.video_len(v).saturating_sub(2 * cfg.triple_stride);
            let total: usize = (0..vt.num_videos()).map(span).sum();
            let mut pick = rng.random_range(0..total);
            for v in 0..vt.num_videos() {
                if pick < span(v) {
                    return vt.load_triple(v, pick + cfg.triple_stride, cfg.triple_stride);
                }
                pick -= span(v);
            }
            unreachable!("pick is below the total span")
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(JointBatch {
        epoch,
        step,
        image_ids: slots.iter().map(|&(_, i)| splits.image_train.id(i).to_string()).collect(),
        mixup_samples: samples,
        triples,
    })
}

/// All batches of the given epochs in order.
pub fn joint_batches<'a>(
    splits: &'a Splits,
    cfg: &'a BatchConfig,
    epochs: std::ops::Range<usize>,
) -> Result<impl Iterator<Item = Result<JointBatch>> + 'a> {
    cfg.validate(splits)?;
    let per_epoch = batches_per_epoch(splits.image_train.len(), cfg.batch_size);
    Ok(epochs.flat_map(move |e| (0..per_epoch).map(move |s| build_batch(splits, cfg, e, s))))
}
