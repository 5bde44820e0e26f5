use serde::{Deserialize, Serialize};

use super::{resize_bilinear, resize_nearest, InteractionSequence, RgbdFrame};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::flow::{colorize_flow, estimate_scene_flow, CameraIntrinsics, FlowImage, ZERO_MOTION_CODE};
use crate::model::{FlowDim, FrameInput, ModelConfig, SequenceBatch};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PreprocessConfig {
    pub height: usize,
    pub width: usize,
    pub target_fps: u32,
    pub use_depth: bool,
    pub flow_dim: FlowDim,
    /// When false every frame gets the zero-motion image and no flow is estimated.
    pub compute_flow: bool,
}

impl PreprocessConfig {
    pub fn from_model(config: &ModelConfig) -> Self {
        PreprocessConfig {
            height: config.height,
            width: config.width,
            target_fps: 10,
            use_depth: config.use_depth,
            flow_dim: config.flow_dim,
            compute_flow: config.use_flow_stream,
        }
    }
}

/// Every `floor(source/target)`-th frame starting at 0, plus the last frame.
pub fn kept_frame_indices(frames: usize, source_fps: u32, target_fps: u32) -> Result<Vec<usize>> {
    if target_fps == 0 || source_fps == 0 {
        return Err(Error::Config("frame rates must be positive".into()));
    }
    if target_fps > source_fps {
        return Err(Error::Config(format!("target fps {target_fps} exceeds source fps {source_fps}")));
    }
    if frames == 0 {
        return Err(Error::Empty("sequence has no frames"));
    }
    let stride = (source_fps / target_fps) as usize;
    let mut kept: Vec<usize> = (0..frames).step_by(stride).collect();
    if kept.last() != Some(&(frames - 1)) {
        kept.push(frames - 1);
    }
    Ok(kept)
}

fn resize_frame(frame: &RgbdFrame, h: usize, w: usize) -> RgbdFrame {
    let (sh, sw) = (frame.height(), frame.width());
    let rgb = resize_bilinear(frame.rgb.data(), 3, sh, sw, h, w);
    let depth = resize_bilinear(frame.depth.data(), 1, sh, sw, h, w);
    RgbdFrame {
        rgb: Tensor::from_parts(vec![3, h, w], rgb),
        depth: Tensor::from_parts(vec![1, h, w], depth),
    }
}

fn resize_flow(flow: &FlowImage, h: usize, w: usize) -> FlowImage {
    if (flow.height, flow.width) == (h, w) {
        return flow.clone();
    }
    let src: Vec<f64> = flow.data.iter().map(|&v| f64::from(v)).collect();
    let data = resize_bilinear(&src, 3, flow.height, flow.width, h, w)
        .into_iter()
        .map(|v| v.round().clamp(0.0, 255.0) as u8)
        .collect();
    FlowImage { height: h, width: w, data }
}

/// Subsamples, resizes and stacks a sequence into network input. Each kept
/// frame is paired with the flow from the preceding kept frame; a cached
/// flow image for that frame index is used when present.
pub fn preprocess(seq: &InteractionSequence, config: &PreprocessConfig) -> Result<SequenceBatch> {
    seq.validate()?;
    let (h, w) = (config.height, config.width);
    if h == 0 || w == 0 || h % 8 != 0 || w % 8 != 0 {
        return Err(Error::Config(format!("target size {h}×{w} must be positive and divisible by 8")));
    }
    let kept = kept_frame_indices(seq.frames.len(), seq.fps, config.target_fps)?;
    let frames: Vec<RgbdFrame> = kept.iter().map(|&i| resize_frame(&seq.frames[i], h, w)).collect();
    let intrinsics = CameraIntrinsics::for_image(h, w);

    let mut inputs = Vec::with_capacity(frames.len());
    for (k, frame) in frames.iter().enumerate() {
        let flow = if k == 0 || !config.compute_flow {
            FlowImage::uniform(h, w, ZERO_MOTION_CODE)
        } else if let Some(cached) = seq.cached_flow.get(&kept[k]) {
            resize_flow(cached, h, w)
        } else {
            colorize_flow(&estimate_scene_flow(&frames[k - 1], frame, &intrinsics)?)
        };
        let appearance = if config.use_depth {
            frame.stacked()
        } else {
            frame.rgb.clone()
        };
        inputs.push(FrameInput {
            appearance,
            flow: flow.to_tensor(config.flow_dim),
        });
    }

    let mask = resize_nearest(&seq.affordance_mask, 1, seq.height(), seq.width(), h, w);
    Ok(SequenceBatch {
        frames: inputs,
        label_mask: mask.into_iter().map(usize::from).collect(),
        action: seq.action,
    })
}

/// Colorized flow for every kept frame after the first, keyed by frame index,
/// computed at the sequence's native resolution.
pub fn compute_flow_cache(seq: &InteractionSequence, target_fps: u32) -> Result<Vec<(usize, FlowImage)>> {
    let kept = kept_frame_indices(seq.frames.len(), seq.fps, target_fps)?;
    let intrinsics = CameraIntrinsics::for_image(seq.height(), seq.width());
    kept.windows(2)
        .map(|pair| {
            let field = estimate_scene_flow(&seq.frames[pair[0]], &seq.frames[pair[1]], &intrinsics)?;
            Ok((pair[1], colorize_flow(&field)))
        })
        .collect()
}
