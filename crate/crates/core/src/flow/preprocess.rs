use super::{estimate_flow, flow_to_color, FlowParams};
use crate::data::VideoClip;
use crate::error::{Error, Result};
use crate::image::RgbImage;

/// A retained frame and the color-coded flow from its predecessor.
#[derive(Clone, Debug, PartialEq)]
pub struct FramePair {
    pub frame: RgbImage,
    pub flow: RgbImage,
}

/// `target` evenly spaced indices into `0..n`, always including both ends:
/// `round(i·(n−1)/(target−1))`.
pub fn subsample_indices(n: usize, target: usize) -> Vec<usize> {
    assert!(n >= 1 && target >= 2, "need n ≥ 1 and target ≥ 2");
    let span = n - 1;
    let steps = target - 1;
    (0..target)
        .map(|i| (2 * i * span + steps) / (2 * steps))
        .collect()
}

/// Subsamples a clip to `target_frames`, resizes to `height × width`,
/// estimates flow between consecutive retained frames and returns
/// `target_frames − 1` (frame, flow image) pairs. The first frame has no
/// predecessor and is dropped.
pub fn preprocess_clip(
    clip: &VideoClip,
    target_frames: usize,
    target_size: (usize, usize),
    params: &FlowParams,
) -> Result<Vec<FramePair>> {
    if clip.frames.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "clip {} has {} frame(s), need at least 2",
            clip.id,
            clip.frames.len()
        )));
    }
    if target_frames < 2 {
        return Err(Error::InvalidArgument(format!(
            "target frame count must be ≥ 2, got {target_frames}"
        )));
    }
    let (height, width) = target_size;
    let frames: Vec<RgbImage> = subsample_indices(clip.frames.len(), target_frames)
        .into_iter()
        .map(|i| clip.frames[i].resize(width, height))
        .collect();
    let grays: Vec<_> = frames.iter().map(RgbImage::to_gray).collect();

    let mut pairs = Vec::with_capacity(target_frames - 1);
    for t in 1..frames.len() {
        let flow = estimate_flow(&grays[t - 1], &grays[t], params)?;
        pairs.push(FramePair {
            frame: frames[t].clone(),
            flow: flow_to_color(&flow, None),
        });
    }
    Ok(pairs)
}
