//! The two-stream spatio-temporal autoencoder.
//!
//! Each frame's appearance (RGB or RGB-D) and colorized motion image go
//! through their own VGG encoder; the two latents are fused by a 1×1 conv,
//! passed through a pre-activation residual block and two ConvLSTMs. After
//! the last frame a spatial-softmax excitation mask is computed from the
//! residual and recurrent features, and a skip-connected decoder predicts
//! per-pixel affordance logits with the mask re-applied at every stage. An
//! MLP on the recurrent feature predicts the action.

mod config;
mod network;

pub use config::{FlowDim, MaskScale, ModelConfig, Variant};
pub use network::{
    centered, check_loss_weights, pixel_argmax, total_loss, Encoded, ForwardOutput, Latent, LatentState, LossVars, Network,
    INPUT_CENTER,
};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Graph, Tensor};
use crate::error::{Error, Result};
use crate::flow::ZERO_MOTION_CODE;
use crate::layers::ParamSet;
use crate::trainer::init_params;

/// Network input for one frame.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameInput {
    /// `4×H×W` (RGB-D) or `3×H×W` (RGB) in `[0, 1]`.
    pub appearance: Tensor,
    /// Colorized motion image, `3×H×W` in `[0, 1]`.
    pub flow: Tensor,
}

/// A preprocessed interaction sequence. Only the final frame carries labels.
#[derive(Clone, Debug, PartialEq)]
pub struct SequenceBatch {
    pub frames: Vec<FrameInput>,
    /// Row-major `H×W` affordance labels of the final frame.
    pub label_mask: Vec<usize>,
    pub action: usize,
}

/// Uniform mid-gray image: the colorization of a motionless scene.
pub fn zero_motion_image(height: usize, width: usize) -> Tensor {
    Tensor::full(&[3, height, width], f64::from(ZERO_MOTION_CODE) / 255.0)
}

impl SequenceBatch {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn validate(&self, config: &ModelConfig) -> Result<()> {
        if self.frames.is_empty() {
            return Err(Error::Empty("sequence has no frames"));
        }
        let app = [config.appearance_channels(), config.height, config.width];
        let flow = [3, config.height, config.width];
        for (i, f) in self.frames.iter().enumerate() {
            if f.appearance.shape() != app {
                return Err(Error::shape(
                    "sequence",
                    format!("frame {i}: appearance {:?}, model expects {app:?}", f.appearance.shape()),
                ));
            }
            if f.flow.shape() != flow {
                return Err(Error::shape(
                    "sequence",
                    format!("frame {i}: flow image {:?}, model expects {flow:?}", f.flow.shape()),
                ));
            }
        }
        if self.label_mask.len() != config.height * config.width {
            return Err(Error::shape(
                "sequence",
                format!("label mask has {} pixels, expected {}", self.label_mask.len(), config.height * config.width),
            ));
        }
        if let Some(&bad) = self.label_mask.iter().find(|&&l| l >= config.seg_channels()) {
            return Err(Error::LabelOutOfRange {
                label: bad,
                classes: config.seg_channels(),
            });
        }
        if self.action >= config.num_actions {
            return Err(Error::LabelOutOfRange {
                label: self.action,
                classes: config.num_actions,
            });
        }
        Ok(())
    }

    /// The single-image view of this sequence: final appearance frame with a
    /// zero-motion flow image.
    pub fn last_frame_only(&self) -> SequenceBatch {
        let last = self.frames.last().expect("non-empty sequence");
        let (h, w) = (last.appearance.shape()[1], last.appearance.shape()[2]);
        SequenceBatch {
            frames: vec![FrameInput {
                appearance: last.appearance.clone(),
                flow: zero_motion_image(h, w),
            }],
            label_mask: self.label_mask.clone(),
            action: self.action,
        }
    }

    /// Drops the depth channel from every appearance tensor (RGB variants).
    pub fn without_depth(&self) -> SequenceBatch {
        let mut out = self.clone();
        for f in &mut out.frames {
            if f.appearance.shape()[0] == 4 {
                let (h, w) = (f.appearance.shape()[1], f.appearance.shape()[2]);
                let rgb = f.appearance.data()[..3 * h * w].to_vec();
                f.appearance = Tensor::from_parts(vec![3, h, w], rgb);
            }
        }
        out
    }
}

/// Scalar values of the three loss terms.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossValues {
    pub total: f64,
    pub seg: f64,
    pub action: f64,
}

/// Inference result for one sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub labels: Vec<usize>,
    pub confidence: Vec<f64>,
    pub action: usize,
    pub action_probs: Vec<f64>,
    pub mask: Option<Tensor>,
}

/// Architecture plus learned parameters.
#[derive(Clone, Debug)]
pub struct AffordanceModel {
    network: Network,
    params: ParamSet,
}

impl AffordanceModel {
    /// Xavier-initialized model; deterministic per seed.
    pub fn new(config: &ModelConfig, seed: u64) -> Result<Self> {
        let network = Network::new(config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = init_params(&network.param_specs(), &mut rng)?;
        Ok(AffordanceModel { network, params })
    }

    pub fn from_params(config: &ModelConfig, params: ParamSet) -> Result<Self> {
        let network = Network::new(config)?;
        let specs = network.param_specs();
        let layout_ok = specs.len() == params.len()
            && specs
                .iter()
                .zip(params.iter())
                .all(|(s, (name, t))| s.name == name && s.shape == t.shape());
        if !layout_ok {
            return Err(Error::CheckpointMismatch(
                "parameter names or shapes do not match the model configuration".into(),
            ));
        }
        Ok(AffordanceModel { network, params })
    }

    pub fn config(&self) -> &ModelConfig {
        self.network.config()
    }

    pub fn network(&self) -> &Network {
        &self.network
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    /// Forward and backward on one sequence; returns the loss terms and the
    /// gradient of `total` with respect to every parameter.
    pub fn loss_and_grads(&self, batch: &SequenceBatch, lambda_seg: f64, lambda_action: f64) -> Result<(LossValues, ParamSet)> {
        let mut g = Graph::new();
        let p = self.params.bind(&mut g);
        let out = self.network.forward_sequence(&mut g, &p, batch)?;
        let loss = total_loss(&mut g, out.seg_logits, out.action_logits, &batch.label_mask, batch.action, lambda_seg, lambda_action)?;
        let values = LossValues {
            total: g.value(loss.total).item(),
            seg: g.value(loss.seg).item(),
            action: g.value(loss.action).item(),
        };
        g.backward(loss.total)?;
        Ok((values, p.grads(&g)))
    }

    /// Loss terms without a backward pass.
    pub fn loss(&self, batch: &SequenceBatch, lambda_seg: f64, lambda_action: f64) -> Result<LossValues> {
        let mut g = Graph::new();
        let p = self.params.bind(&mut g);
        let out = self.network.forward_sequence(&mut g, &p, batch)?;
        let loss = total_loss(&mut g, out.seg_logits, out.action_logits, &batch.label_mask, batch.action, lambda_seg, lambda_action)?;
        Ok(LossValues {
            total: g.value(loss.total).item(),
            seg: g.value(loss.seg).item(),
            action: g.value(loss.action).item(),
        })
    }

    /// Video inference over the whole sequence.
    pub fn predict(&self, batch: &SequenceBatch) -> Result<Prediction> {
        let mut g = Graph::new();
        let p = self.params.bind(&mut g);
        let out = self.network.forward_sequence(&mut g, &p, batch)?;
        let (labels, confidence) = pixel_argmax(g.value(out.seg_logits));
        let action_probs = crate::autodiff::softmax_vec(g.value(out.action_logits).data());
        let action = argmax(&action_probs);
        Ok(Prediction {
            labels,
            confidence,
            action,
            action_probs,
            mask: out.mask.map(|m| g.value(m).clone()),
        })
    }

    /// Single-image inference: one frame with zero-motion flow. Pixels whose
    /// top class probability does not exceed `confidence_threshold` are
    /// reported as background.
    pub fn infer_static(&self, appearance: &Tensor, confidence_threshold: f64) -> Result<(Vec<usize>, Vec<f64>)> {
        let cfg = self.config();
        let (_, h, w) = appearance.dims3("infer_static")?;
        let batch = SequenceBatch {
            frames: vec![FrameInput {
                appearance: appearance.clone(),
                flow: zero_motion_image(h, w),
            }],
            label_mask: vec![0; cfg.height * cfg.width],
            action: 0,
        };
        let pred = self.predict(&batch)?;
        Ok(apply_threshold(pred.labels, pred.confidence, confidence_threshold))
    }
}

/// Background (0) wherever confidence does not exceed the threshold.
pub fn apply_threshold(mut labels: Vec<usize>, confidence: Vec<f64>, threshold: f64) -> (Vec<usize>, Vec<f64>) {
    for (l, &c) in labels.iter_mut().zip(&confidence) {
        if c <= threshold {
            *l = 0;
        }
    }
    (labels, confidence)
}

fn argmax(values: &[f64]) -> usize {
    values
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc })
        .0
}
