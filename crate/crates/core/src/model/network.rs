use crate::autodiff::{Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::layers::{Bound, Conv, ConvLstmCell, ConvLstmState, MlpHead, ParamSpec, ResidualBlock, VggEncoder};

use super::{MaskScale, ModelConfig, SequenceBatch};

/// One decoder stage: upsample → conv3×3 → (mask) → concat skip → conv1×1 → 2× conv3×3.
#[derive(Clone, Debug, PartialEq)]
struct DecoderStage {
    up: Conv,
    fuse: Conv,
    conv_a: Conv,
    conv_b: Conv,
}

/// Layer descriptors of the autoencoder, derived from a [`ModelConfig`].
#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    config: ModelConfig,
    appearance_encoder: VggEncoder,
    flow_encoder: Option<VggEncoder>,
    fusion: Conv,
    residual: ResidualBlock,
    lstm1: ConvLstmCell,
    lstm2: ConvLstmCell,
    attention: Option<Conv>,
    stages: Vec<DecoderStage>,
    final_conv: Conv,
    classifier: Conv,
    head: MlpHead,
}

/// Recurrent state carried between frames.
#[derive(Clone, Copy, Debug)]
pub struct LatentState {
    pub lstm1: ConvLstmState,
    pub lstm2: ConvLstmState,
}

/// Per-frame encoder result.
#[derive(Clone, Copy, Debug)]
pub struct Encoded {
    pub fused: Var,
    pub skips: [Var; 3],
}

/// Latent result for one frame: `X` after the residual block and `X̄`
/// after the second ConvLSTM.
#[derive(Clone, Copy, Debug)]
pub struct Latent {
    pub spatial: Var,
    pub temporal: Var,
}

#[derive(Clone, Copy, Debug)]
pub struct ForwardOutput {
    pub seg_logits: Var,
    pub action_logits: Var,
    /// Excitation mask, present when attention is enabled.
    pub mask: Option<Var>,
    /// `X̄` of the final frame.
    pub temporal: Var,
}

impl Network {
    pub fn new(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let b = config.base_width;
        let d = config.latent_channels();
        let appearance_encoder = VggEncoder::new("encoder.appearance", config.appearance_channels(), b);
        let flow_encoder = config.use_flow_stream.then(|| VggEncoder::new("encoder.flow", 3, b));
        let fused_in = if config.use_flow_stream { 2 * d } else { d };
        let stages = (0..3)
            .map(|s| {
                let c_in = d >> s;
                let c_out = c_in / 2;
                let name = |part: &str| format!("decoder.stage{}.{part}", s + 1);
                DecoderStage {
                    up: Conv::new(name("up"), c_in, c_out, 3),
                    fuse: Conv::new(name("fuse"), 2 * c_out, c_out, 1),
                    conv_a: Conv::new(name("conv_a"), c_out, c_out, 3),
                    conv_b: Conv::new(name("conv_b"), c_out, c_out, 3),
                }
            })
            .collect();
        Ok(Network {
            config: config.clone(),
            appearance_encoder,
            flow_encoder,
            fusion: Conv::new("fusion", fused_in, d, 1),
            residual: ResidualBlock::new("latent.residual", d),
            lstm1: ConvLstmCell::new("latent.lstm1", d, d),
            lstm2: ConvLstmCell::new("latent.lstm2", d, d),
            attention: config.use_attention.then(|| Conv::new("attention", 2 * d, 1, 1)),
            stages,
            final_conv: Conv::new("decoder.final", b, b, 3),
            classifier: Conv::new("decoder.classifier", b, config.seg_channels(), 1),
            head: MlpHead::new("head", d, config.num_actions)?,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    /// Every learned tensor in a fixed declaration order.
    pub fn param_specs(&self) -> Vec<ParamSpec> {
        let mut specs = self.appearance_encoder.specs();
        if let Some(flow) = &self.flow_encoder {
            specs.extend(flow.specs());
        }
        specs.extend(self.fusion.specs());
        specs.extend(self.residual.specs());
        specs.extend(self.lstm1.specs());
        specs.extend(self.lstm2.specs());
        if let Some(att) = &self.attention {
            specs.extend(att.specs());
        }
        for s in &self.stages {
            for conv in [&s.up, &s.fuse, &s.conv_a, &s.conv_b] {
                specs.extend(conv.specs());
            }
        }
        specs.extend(self.final_conv.specs());
        specs.extend(self.classifier.specs());
        specs.extend(self.head.specs());
        specs
    }

    /// Zero ConvLSTM states for a new sequence.
    pub fn initial_state(&self, g: &mut Graph) -> LatentState {
        let d = self.config.latent_channels();
        let (h, w) = self.config.latent_size();
        LatentState {
            lstm1: ConvLstmState::zeros(g, d, h, w),
            lstm2: ConvLstmState::zeros(g, d, h, w),
        }
    }

    /// Runs both encoder streams and fuses them with the 1×1 `d`-kernel conv.
    /// Skips come from the appearance stream.
    pub fn encode_frame(&self, g: &mut Graph, p: &Bound, appearance: Var, flow: Option<Var>) -> Result<Encoded> {
        let (_, ah, aw) = g.value(appearance).dims3("encode_frame")?;
        g.set_scope("encoder.appearance");
        let app = self.appearance_encoder.forward(g, p, appearance)?;
        let stacked = match (&self.flow_encoder, flow) {
            (Some(enc), Some(flow)) => {
                let (_, fh, fw) = g.value(flow).dims3("encode_frame")?;
                if (fh, fw) != (ah, aw) {
                    return Err(Error::shape(
                        "encode_frame",
                        format!("appearance is {ah}×{aw} but flow image is {fh}×{fw}"),
                    ));
                }
                g.set_scope("encoder.flow");
                let mot = enc.forward(g, p, flow)?;
                g.set_scope("fusion");
                g.concat_channels(app.feature, mot.feature)?
            }
            (Some(_), None) => {
                return Err(Error::shape("encode_frame", "flow stream enabled but no flow image given"));
            }
            (None, _) => app.feature,
        };
        g.set_scope("fusion");
        let fused = self.fusion.forward_relu(g, p, stacked)?;
        Ok(Encoded {
            fused,
            skips: app.skips,
        })
    }

    /// Residual block followed by the two stacked ConvLSTMs.
    pub fn latent_step(&self, g: &mut Graph, p: &Bound, encoded: Var, state: LatentState) -> Result<(Latent, LatentState)> {
        g.set_scope("latent.residual");
        let spatial = self.residual.forward(g, p, encoded)?;
        g.set_scope("latent.lstm1");
        let s1 = self.lstm1.forward(g, p, spatial, state.lstm1)?;
        g.set_scope("latent.lstm2");
        let s2 = self.lstm2.forward(g, p, s1.hidden, state.lstm2)?;
        Ok((
            Latent {
                spatial,
                temporal: s2.hidden,
            },
            LatentState { lstm1: s1, lstm2: s2 },
        ))
    }

    /// Excitation mask `softmax_spatial(conv1×1(concat(X, X̄)))`.
    pub fn attention_mask(&self, g: &mut Graph, p: &Bound, latent: Latent) -> Result<Var> {
        let logits = self.attention_logits(g, p, latent)?;
        g.softmax_spatial(logits)
    }

    /// Pre-softmax attention map.
    pub fn attention_logits(&self, g: &mut Graph, p: &Bound, latent: Latent) -> Result<Var> {
        let conv = self
            .attention
            .as_ref()
            .ok_or_else(|| Error::Config("attention is disabled for this model".into()))?;
        g.set_scope("attention");
        let stacked = g.concat_channels(latent.spatial, latent.temporal)?;
        conv.forward(g, p, stacked)
    }

    /// Skip-connected decoder. With a mask, the latent input and the
    /// post-upsample activations of every stage are multiplied by the
    /// (nearest-upsampled) mask.
    pub fn decode(&self, g: &mut Graph, p: &Bound, temporal: Var, mask: Option<Var>, skips: [Var; 3]) -> Result<Var> {
        if mask.is_some() != self.config.use_attention {
            return Err(Error::shape(
                "decode",
                format!("mask presence ({}) disagrees with use_attention", mask.is_some()),
            ));
        }
        g.set_scope("decoder.mask");
        let mask = match (mask, self.config.mask_scale) {
            (Some(m), MaskScale::Mean) => {
                let area = g.value(m).len() as f64;
                Some(g.scale(m, area)?)
            }
            (m, _) => m,
        };
        let mut x = match mask {
            Some(m) => g.mul_broadcast_mask(m, temporal)?,
            None => temporal,
        };
        let mut stage_mask = mask;
        for (stage, skip) in self.stages.iter().zip(skips.iter().rev()) {
            g.set_scope("decoder.stage");
            let u = g.upsample_nearest2x(x)?;
            let mut u = stage.up.forward_relu(g, p, u)?;
            if let Some(m) = stage_mask {
                g.set_scope("attention.upsample");
                let m = g.upsample_nearest2x(m)?;
                g.set_scope("decoder.mask");
                u = g.mul_broadcast_mask(m, u)?;
                stage_mask = Some(m);
            }
            g.set_scope("decoder.stage");
            let (_, uh, uw) = g.value(u).dims3("decode")?;
            let (_, sh, sw) = g.value(*skip).dims3("decode")?;
            if (uh, uw) != (sh, sw) {
                return Err(Error::shape("decode", format!("skip is {sh}×{sw} but stage output is {uh}×{uw}")));
            }
            let c = g.concat_channels(u, *skip)?;
            let c = stage.fuse.forward_relu(g, p, c)?;
            let c = stage.conv_a.forward_relu(g, p, c)?;
            x = stage.conv_b.forward_relu(g, p, c)?;
        }
        g.set_scope("decoder.head");
        let x = self.final_conv.forward_relu(g, p, x)?;
        self.classifier.forward(g, p, x)
    }

    pub fn action_logits(&self, g: &mut Graph, p: &Bound, temporal: Var) -> Result<Var> {
        g.set_scope("head");
        self.head.forward(g, p, temporal)
    }

    /// Runs a whole sequence: frames update the recurrent state in order;
    /// mask, segmentation and action logits come from the final frame.
    pub fn forward_sequence(&self, g: &mut Graph, p: &Bound, batch: &SequenceBatch) -> Result<ForwardOutput> {
        batch.validate(&self.config)?;
        let mut state = self.initial_state(g);
        let mut last = None;
        for frame in &batch.frames {
            let appearance = g.constant(centered(&frame.appearance));
            let flow = match self.flow_encoder {
                Some(_) => Some(g.constant(centered(&frame.flow))),
                None => None,
            };
            let encoded = self.encode_frame(g, p, appearance, flow)?;
            let (latent, next) = self.latent_step(g, p, encoded.fused, state)?;
            state = next;
            last = Some((encoded, latent));
        }
        let (encoded, latent) = last.ok_or(Error::Empty("sequence has no frames"))?;
        let mask = match self.attention {
            Some(_) => Some(self.attention_mask(g, p, latent)?),
            None => None,
        };
        let seg_logits = self.decode(g, p, latent.temporal, mask, encoded.skips)?;
        let action_logits = self.action_logits(g, p, latent.temporal)?;
        Ok(ForwardOutput {
            seg_logits,
            action_logits,
            mask,
            temporal: latent.temporal,
        })
    }
}

/// Shifts `[0, 1]` inputs to `[-0.5, 0.5]`; the zero-motion flow image maps
/// to (almost exactly) zero.
pub fn centered(x: &Tensor) -> Tensor {
    let mut out = x.clone();
    out.data_mut().iter_mut().for_each(|v| *v -= INPUT_CENTER);
    out
}

/// Value subtracted from every network input.
pub const INPUT_CENTER: f64 = 0.5;

/// `λ1 · L_seg + λ2 · L_action` on the final frame's labels.
#[allow(clippy::too_many_arguments)]
pub fn total_loss(
    g: &mut Graph,
    seg_logits: Var,
    action_logits: Var,
    mask_target: &[usize],
    action_target: usize,
    lambda_seg: f64,
    lambda_action: f64,
) -> Result<LossVars> {
    check_loss_weights(lambda_seg, lambda_action)?;
    g.set_scope("loss");
    let seg = g.pixelwise_cross_entropy(seg_logits, mask_target)?;
    let action = g.cross_entropy(action_logits, action_target)?;
    let a = g.scale(seg, lambda_seg)?;
    let b = g.scale(action, lambda_action)?;
    let total = g.add(a, b)?;
    Ok(LossVars { total, seg, action })
}

#[derive(Clone, Copy, Debug)]
pub struct LossVars {
    pub total: Var,
    pub seg: Var,
    pub action: Var,
}

pub fn check_loss_weights(lambda_seg: f64, lambda_action: f64) -> Result<()> {
    let in_unit = |v: f64| (0.0..=1.0).contains(&v);
    if !in_unit(lambda_seg) || !in_unit(lambda_action) || (lambda_seg + lambda_action - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!(
            "loss weights ({lambda_seg}, {lambda_action}) must lie in [0, 1] and sum to 1"
        )));
    }
    Ok(())
}

/// Per-pixel softmax over the class channels: `(argmax label, max probability)`.
pub fn pixel_argmax(logits: &Tensor) -> (Vec<usize>, Vec<f64>) {
    let (c, h, w) = (logits.shape()[0], logits.shape()[1], logits.shape()[2]);
    let npix = h * w;
    let x = logits.data();
    let mut labels = Vec::with_capacity(npix);
    let mut confidence = Vec::with_capacity(npix);
    for p in 0..npix {
        let column = (0..c).map(|ch| x[ch * npix + p]);
        let (best, max) = column
            .clone()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |acc, (i, v)| if v > acc.1 { (i, v) } else { acc });
        let denom: f64 = column.map(|v| (v - max).exp()).sum();
        labels.push(best);
        confidence.push(1.0 / denom);
    }
    (labels, confidence)
}
