#![allow(dead_code)]

pub mod one_conv;
pub mod oracles;

use std::path::Path;

use framemix::data::{self, Splits};
use framemix::synth::{self, CorpusConfig};

/// A corpus small enough to generate and train on in seconds.
pub fn small_config(seed: u64) -> CorpusConfig {
    CorpusConfig {
        seed,
        images: 120,
        negative_videos: 2,
        negative_frames: 40,
        positive_videos: 1,
        positive_frames: 20,
        ..CorpusConfig::default()
    }
}

pub fn small_corpus(root: &Path) -> Splits {
    synth::gen_corpus(&small_config(0), root).unwrap();
    data::load_manifest(root).unwrap()
}

pub fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1e-12)
}
