//! Deterministic inputs shared by the benchmarks.

use framemix::eval::ScoredFlag;
use framemix::tcr::FrameTriple;
use framemix::{BoundingBox, Pixels, VideoFrame};

/// Pseudo-random pixels in [0, 1] from a cheap integer hash.
pub fn noise(h: usize, w: usize, salt: u64) -> Pixels {
    Pixels::from_fn(h, w, 3, |y, x, c| {
        let mut z = (y as u64 * 73_856_093) ^ (x as u64 * 19_349_663) ^ (c as u64 * 83_492_791) ^ salt;
        z = z.wrapping_mul(0x9e37_79b9_7f4a_7c15);
        (z >> 40) as f64 / (1u64 << 24) as f64
    })
}

pub fn triple(h: usize, w: usize) -> FrameTriple {
    let frame = |i: usize| VideoFrame { pixels: noise(h, w, i as u64), frame_index: i, source_video: "bench".into() };
    FrameTriple::new(frame(0), frame(1), frame(2), 1).expect("consecutive frames")
}

pub fn centered_box(size: f64) -> BoundingBox {
    BoundingBox::new(32.0 - size / 2.0, 32.0 - size / 2.0, 32.0 + size / 2.0, 32.0 + size / 2.0).expect("valid box")
}

/// `n` detections with alternating hits and scattered scores.
pub fn flags(n: usize) -> Vec<ScoredFlag> {
    (0..n)
        .map(|i| ScoredFlag { score: ((i * 7919) % 1000) as f64 / 1000.0, true_positive: i % 3 != 0 })
        .collect()
}
