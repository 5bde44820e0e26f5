//! Interaction sequences: taxonomy, synthetic generation, on-disk layout,
//! and preprocessing into network-ready [`SequenceBatch`](crate::model::SequenceBatch)es.

mod io;
mod preprocess;
mod resize;
mod synth;

pub use io::{list_sequences, load_dataset, load_sequence, save_flow_image, save_sequence, SequenceMeta, DEPTH_MM_PER_UNIT};
pub use preprocess::{compute_flow_cache, kept_frame_indices, preprocess, PreprocessConfig};
pub use resize::{resize_bilinear, resize_nearest};
pub use synth::{generate_synthetic_sequence, SyntheticSpec, TrajectoryParams, OBJECTS};

use std::collections::BTreeMap;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::flow::FlowImage;

/// Maximum sensor range in depth units; stored depth is divided by it.
pub const DEPTH_RANGE: f64 = 4.5;

/// Segmentation classes in label order; index 0 is background.
pub const AFFORDANCES: [&str; 10] = [
    "background",
    "grasp",
    "cut",
    "lift",
    "push",
    "rotate",
    "hammer",
    "squeeze",
    "paint",
    "type",
];

/// Action classes; action `i` complements affordance `i + 1`.
pub const ACTIONS: [&str; 9] = [
    "grasping",
    "cutting",
    "lifting",
    "pushing",
    "rotating",
    "hammering",
    "squeezing",
    "painting",
    "typing",
];

pub const NUM_AFFORDANCES: usize = AFFORDANCES.len() - 1;
pub const NUM_ACTIONS: usize = ACTIONS.len();

pub fn affordance_index(name: &str) -> Result<usize> {
    AFFORDANCES[1..]
        .iter()
        .position(|&a| a == name)
        .map(|i| i + 1)
        .ok_or_else(|| Error::UnknownAffordance(name.to_string()))
}

pub fn action_index(name: &str) -> Result<usize> {
    ACTIONS
        .iter()
        .position(|&a| a == name)
        .ok_or_else(|| Error::UnknownAction(name.to_string()))
}

/// Action label complementary to a (non-background) affordance label.
pub fn action_for_affordance(affordance: usize) -> usize {
    assert!((1..AFFORDANCES.len()).contains(&affordance), "affordance {affordance} has no action");
    affordance - 1
}

/// One registered color + depth capture.
#[derive(Clone, Debug, PartialEq)]
pub struct RgbdFrame {
    /// `3×H×W` in `[0, 1]`.
    pub rgb: Tensor,
    /// `1×H×W` in `[0, 1]`, normalized by [`DEPTH_RANGE`]; 0 marks invalid depth.
    pub depth: Tensor,
}

impl RgbdFrame {
    pub fn new(rgb: Tensor, depth: Tensor) -> Result<Self> {
        let (c, h, w) = rgb.dims3("rgbd frame")?;
        let (dc, dh, dw) = depth.dims3("rgbd frame")?;
        if c != 3 || dc != 1 || (h, w) != (dh, dw) {
            return Err(Error::shape(
                "rgbd frame",
                format!("rgb {:?} and depth {:?} must be 3×H×W and 1×H×W", rgb.shape(), depth.shape()),
            ));
        }
        Ok(RgbdFrame { rgb, depth })
    }

    pub fn height(&self) -> usize {
        self.rgb.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.rgb.shape()[2]
    }

    pub fn depth_at(&self, y: usize, x: usize) -> f64 {
        self.depth.data()[y * self.width() + x]
    }

    /// Luma (BT.601 weights) per pixel.
    pub fn intensity(&self) -> Vec<f64> {
        let n = self.height() * self.width();
        let d = self.rgb.data();
        (0..n).map(|i| 0.299 * d[i] + 0.587 * d[n + i] + 0.114 * d[2 * n + i]).collect()
    }

    /// RGB planes followed by the depth plane.
    pub fn stacked(&self) -> Tensor {
        let mut data = self.rgb.data().to_vec();
        data.extend_from_slice(self.depth.data());
        Tensor::from_parts(vec![4, self.height(), self.width()], data)
    }
}

/// A recorded interaction: frames in time order, the final frame's
/// affordance mask and the action label.
#[derive(Clone, Debug, PartialEq)]
pub struct InteractionSequence {
    pub frames: Vec<RgbdFrame>,
    /// Row-major labels of the final frame, in `[0, AFFORDANCES.len())`.
    pub affordance_mask: Vec<u8>,
    pub action: usize,
    pub object: String,
    pub fps: u32,
    /// Colorized flow keyed by the index of the later frame of each pair.
    pub cached_flow: BTreeMap<usize, FlowImage>,
}

impl InteractionSequence {
    pub fn height(&self) -> usize {
        self.frames[0].height()
    }

    pub fn width(&self) -> usize {
        self.frames[0].width()
    }

    pub fn validate(&self) -> Result<()> {
        let first = self.frames.first().ok_or(Error::Empty("sequence has no frames"))?;
        let (h, w) = (first.height(), first.width());
        if self.frames.iter().any(|f| (f.height(), f.width()) != (h, w)) {
            return Err(Error::shape("sequence", "frames differ in extent"));
        }
        if self.affordance_mask.len() != h * w {
            return Err(Error::shape("sequence", format!("mask has {} pixels for {h}×{w} frames", self.affordance_mask.len())));
        }
        if let Some(&l) = self.affordance_mask.iter().find(|&&l| l as usize >= AFFORDANCES.len()) {
            return Err(Error::LabelOutOfRange {
                label: l as usize,
                classes: AFFORDANCES.len(),
            });
        }
        if self.action >= NUM_ACTIONS {
            return Err(Error::LabelOutOfRange {
                label: self.action,
                classes: NUM_ACTIONS,
            });
        }
        Ok(())
    }
}
