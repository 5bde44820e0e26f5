use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dimensionality of the motion stream input.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum FlowDim {
    #[serde(rename = "2d")]
    TwoD,
    #[serde(rename = "3d")]
    ThreeD,
}

/// How the excitation mask weights decoder activations.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaskScale {
    /// Multiply by `M` itself (entries sum to 1).
    Sum,
    /// Multiply by `h·w·M` (entries average 1); a uniform mask is the identity.
    #[default]
    Mean,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub height: usize,
    pub width: usize,
    /// Encoder width of the first stage; the latent width is `8 * base_width`.
    pub base_width: usize,
    pub num_affordance_classes: usize,
    pub num_actions: usize,
    pub use_depth: bool,
    pub use_flow_stream: bool,
    pub use_attention: bool,
    pub flow_dim: FlowDim,
    #[serde(default)]
    pub mask_scale: MaskScale,
}

impl Default for ModelConfig {
    /// Desk-scale full model: 48×48 input, base width 8, RGB-D + attention + 3D flow.
    fn default() -> Self {
        ModelConfig {
            height: 48,
            width: 48,
            base_width: 8,
            num_affordance_classes: 9,
            num_actions: 9,
            use_depth: true,
            use_flow_stream: true,
            use_attention: true,
            flow_dim: FlowDim::ThreeD,
            mask_scale: MaskScale::Mean,
        }
    }
}

impl ModelConfig {
    /// The published configuration: 300×300 input and a 512-channel latent.
    pub fn paper_scale() -> Self {
        ModelConfig {
            height: 300,
            width: 300,
            base_width: 64,
            ..Self::default()
        }
    }

    pub fn with_variant(mut self, variant: Variant) -> Self {
        variant.apply(&mut self);
        self
    }

    /// Segmentation channels: the affordances plus background.
    pub fn seg_channels(&self) -> usize {
        self.num_affordance_classes + 1
    }

    /// Latent channel count `d`.
    pub fn latent_channels(&self) -> usize {
        8 * self.base_width
    }

    pub fn appearance_channels(&self) -> usize {
        if self.use_depth {
            4
        } else {
            3
        }
    }

    pub fn latent_size(&self) -> (usize, usize) {
        (self.height / 8, self.width / 8)
    }

    pub fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 || self.height % 8 != 0 || self.width % 8 != 0 {
            return Err(Error::Config(format!(
                "input size {}×{} must be positive and divisible by 8",
                self.height, self.width
            )));
        }
        if self.base_width == 0 {
            return Err(Error::Config("base_width must be positive".into()));
        }
        if self.num_affordance_classes == 0 || self.num_actions == 0 {
            return Err(Error::Config("class and action counts must be positive".into()));
        }
        Ok(())
    }

    /// The ablation row this config corresponds to, if any.
    pub fn variant(&self) -> Option<Variant> {
        Variant::ALL.into_iter().find(|v| self.clone().with_variant(*v) == *self)
    }
}

/// The six ablation configurations: appearance modality × attention × motion stream.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Variant {
    Rgb,
    RgbAttn,
    RgbAttn2dFlow,
    Rgbd,
    RgbdAttn,
    RgbdAttn3dFlow,
}

impl Variant {
    pub const ALL: [Variant; 6] = [
        Variant::Rgb,
        Variant::RgbAttn,
        Variant::RgbAttn2dFlow,
        Variant::Rgbd,
        Variant::RgbdAttn,
        Variant::RgbdAttn3dFlow,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Rgb => "rgb",
            Variant::RgbAttn => "rgb-attn",
            Variant::RgbAttn2dFlow => "rgb-attn-2dflow",
            Variant::Rgbd => "rgbd",
            Variant::RgbdAttn => "rgbd-attn",
            Variant::RgbdAttn3dFlow => "rgbd-attn-3dflow",
        }
    }

    /// Row label in the ablation table.
    pub fn label(self) -> &'static str {
        match self {
            Variant::Rgb => "RGB",
            Variant::RgbAttn => "RGB + attention",
            Variant::RgbAttn2dFlow => "RGB + attention + 2D flow",
            Variant::Rgbd => "RGB-D",
            Variant::RgbdAttn => "RGB-D + attention",
            Variant::RgbdAttn3dFlow => "RGB-D + attention + 3D flow",
        }
    }

    pub fn apply(self, config: &mut ModelConfig) {
        let (depth, attention, flow) = match self {
            Variant::Rgb => (false, false, false),
            Variant::RgbAttn => (false, true, false),
            Variant::RgbAttn2dFlow => (false, true, true),
            Variant::Rgbd => (true, false, false),
            Variant::RgbdAttn => (true, true, false),
            Variant::RgbdAttn3dFlow => (true, true, true),
        };
        config.use_depth = depth;
        config.use_attention = attention;
        config.use_flow_stream = flow;
        config.flow_dim = if depth { FlowDim::ThreeD } else { FlowDim::TwoD };
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| {
                let known: Vec<_> = Variant::ALL.iter().map(|v| v.name()).collect();
                Error::Config(format!("unknown variant `{s}` (expected one of {})", known.join(", ")))
            })
    }
}
