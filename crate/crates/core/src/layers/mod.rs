//! Composite blocks built on [`Graph`] ops.
//!
//! Each block is a small descriptor (names and widths) that can list its
//! [`ParamSpec`]s and run a forward pass against [`Bound`] parameters.

mod params;

pub use params::{Bound, ParamSet, ParamSpec};

use crate::autodiff::{Graph, Tensor, Var};
use crate::error::{Error, Result};

/// A square convolution with "same" padding for odd kernels.
#[derive(Clone, Debug, PartialEq)]
pub struct Conv {
    pub name: String,
    pub c_in: usize,
    pub c_out: usize,
    pub k: usize,
}

impl Conv {
    pub fn new(name: impl Into<String>, c_in: usize, c_out: usize, k: usize) -> Self {
        Conv {
            name: name.into(),
            c_in,
            c_out,
            k,
        }
    }

    pub fn weight_name(&self) -> String {
        format!("{}.weight", self.name)
    }

    pub fn bias_name(&self) -> String {
        format!("{}.bias", self.name)
    }

    pub fn specs(&self) -> Vec<ParamSpec> {
        let kk = self.k * self.k;
        vec![
            ParamSpec::weight(
                self.weight_name(),
                vec![self.c_out, self.c_in, self.k, self.k],
                self.c_in * kk,
                self.c_out * kk,
            ),
            ParamSpec::bias(self.bias_name(), self.c_out),
        ]
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var) -> Result<Var> {
        g.conv2d(x, p.get(&self.weight_name()), p.get(&self.bias_name()), 1, self.k / 2)
    }

    pub fn forward_relu(&self, g: &mut Graph, p: &Bound, x: Var) -> Result<Var> {
        let y = self.forward(g, p, x)?;
        g.relu(y)
    }
}

/// VGG-style encoder: stage widths `(b, 2b, 4b, 8b)` with `(2, 2, 3, 4)`
/// 3×3 convs each, ReLU after every conv, 2×2 max pooling after stages 1–3.
#[derive(Clone, Debug, PartialEq)]
pub struct VggEncoder {
    convs: Vec<Conv>,
    base_width: usize,
}

/// Encoder result: the `8b×H/8×W/8` feature and the pre-pool activations
/// at full, 1/2 and 1/4 resolution.
#[derive(Clone, Copy, Debug)]
pub struct EncoderOutput {
    pub feature: Var,
    pub skips: [Var; 3],
}

pub const ENCODER_STAGE_CONVS: [usize; 4] = [2, 2, 3, 4];

impl VggEncoder {
    pub fn new(prefix: &str, in_channels: usize, base_width: usize) -> Self {
        let mut convs = Vec::new();
        let mut c_in = in_channels;
        for (stage, &n) in ENCODER_STAGE_CONVS.iter().enumerate() {
            let width = base_width << stage;
            for _ in 0..n {
                convs.push(Conv::new(format!("{prefix}.conv{}", convs.len() + 1), c_in, width, 3));
                c_in = width;
            }
        }
        VggEncoder { convs, base_width }
    }

    pub fn out_channels(&self) -> usize {
        self.base_width * 8
    }

    pub fn specs(&self) -> Vec<ParamSpec> {
        self.convs.iter().flat_map(Conv::specs).collect()
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, input: Var) -> Result<EncoderOutput> {
        let (_, h, w) = g.value(input).dims3("vgg_encoder")?;
        if h % 8 != 0 || w % 8 != 0 {
            return Err(Error::shape("vgg_encoder", format!("input {h}×{w} is not divisible by 8")));
        }
        let mut x = input;
        let mut skips = Vec::with_capacity(3);
        let mut convs = self.convs.iter();
        for (stage, &n) in ENCODER_STAGE_CONVS.iter().enumerate() {
            for conv in convs.by_ref().take(n) {
                x = conv.forward_relu(g, p, x)?;
            }
            if stage < 3 {
                skips.push(x);
                x = g.maxpool2x2(x)?;
            }
        }
        Ok(EncoderOutput {
            feature: x,
            skips: [skips[0], skips[1], skips[2]],
        })
    }
}

/// Pre-activation residual block: `x + conv(relu(conv(relu(x))))`.
#[derive(Clone, Debug, PartialEq)]
pub struct ResidualBlock {
    conv1: Conv,
    conv2: Conv,
}

impl ResidualBlock {
    pub fn new(prefix: &str, channels: usize) -> Self {
        ResidualBlock {
            conv1: Conv::new(format!("{prefix}.conv1"), channels, channels, 3),
            conv2: Conv::new(format!("{prefix}.conv2"), channels, channels, 3),
        }
    }

    pub fn specs(&self) -> Vec<ParamSpec> {
        [self.conv1.specs(), self.conv2.specs()].concat()
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var) -> Result<Var> {
        g.mark("residual_block");
        let a = g.relu(x)?;
        let a = self.conv1.forward(g, p, a)?;
        let a = g.relu(a)?;
        let a = self.conv2.forward(g, p, a)?;
        g.add(x, a)
    }
}

/// Recurrent state of one ConvLSTM layer.
#[derive(Clone, Copy, Debug)]
pub struct ConvLstmState {
    pub hidden: Var,
    pub cell: Var,
}

impl ConvLstmState {
    /// All-zero state recorded as constants.
    pub fn zeros(g: &mut Graph, channels: usize, h: usize, w: usize) -> Self {
        ConvLstmState {
            hidden: g.constant(Tensor::zeros(&[channels, h, w])),
            cell: g.constant(Tensor::zeros(&[channels, h, w])),
        }
    }
}

/// Convolutional LSTM cell without peepholes.
///
/// The four gate convolutions over `x` and `h` are stored as a single 3×3
/// kernel over `concat(x, h)` with output channels ordered `i, f, o, g`.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvLstmCell {
    gates: Conv,
    hidden: usize,
}

impl ConvLstmCell {
    pub fn new(prefix: &str, in_channels: usize, hidden: usize) -> Self {
        ConvLstmCell {
            gates: Conv::new(format!("{prefix}.gates"), in_channels + hidden, 4 * hidden, 3),
            hidden,
        }
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn specs(&self) -> Vec<ParamSpec> {
        // Xavier fans are those of one gate's pair of convolutions.
        let mut specs = self.gates.specs();
        specs[0].fans = Some((self.gates.c_in * 9, self.hidden * 9));
        specs
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var, state: ConvLstmState) -> Result<ConvLstmState> {
        let (_, xh, xw) = g.value(x).dims3("convlstm_step")?;
        let (hc, hh, hw) = g.value(state.hidden).dims3("convlstm_step")?;
        if (xh, xw) != (hh, hw) || hc != self.hidden || g.shape(state.cell) != g.shape(state.hidden) {
            return Err(Error::shape(
                "convlstm_step",
                format!(
                    "input {xh}×{xw} vs state {:?}/{:?} (hidden width {})",
                    g.shape(state.hidden),
                    g.shape(state.cell),
                    self.hidden
                ),
            ));
        }
        g.mark("convlstm_step");
        let d = self.hidden;
        let xh = g.concat_channels(x, state.hidden)?;
        let pre = self.gates.forward(g, p, xh)?;
        let i = g.slice_channels(pre, 0, d)?;
        let i = g.sigmoid(i)?;
        let f = g.slice_channels(pre, d, d)?;
        let f = g.sigmoid(f)?;
        let o = g.slice_channels(pre, 2 * d, d)?;
        let o = g.sigmoid(o)?;
        let c = g.slice_channels(pre, 3 * d, d)?;
        let c = g.tanh(c)?;
        let keep = g.mul(f, state.cell)?;
        let write = g.mul(i, c)?;
        let cell = g.add(keep, write)?;
        let squashed = g.tanh(cell)?;
        let hidden = g.mul(o, squashed)?;
        Ok(ConvLstmState { hidden, cell })
    }
}

/// Action classifier: global average pooling then `d → d/2 → d/4 → A`
/// fully connected layers with ReLU between them.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpHead {
    prefix: String,
    dims: [usize; 4],
}

impl MlpHead {
    pub fn new(prefix: &str, in_dim: usize, num_actions: usize) -> Result<Self> {
        if in_dim < 4 {
            return Err(Error::Config(format!(
                "MLP head needs at least 4 input channels to halve twice, got {in_dim}"
            )));
        }
        Ok(MlpHead {
            prefix: prefix.to_string(),
            dims: [in_dim, in_dim / 2, in_dim / 4, num_actions],
        })
    }

    fn layer_name(&self, i: usize, part: &str) -> String {
        format!("{}.fc{}.{part}", self.prefix, i + 1)
    }

    pub fn specs(&self) -> Vec<ParamSpec> {
        (0..3)
            .flat_map(|i| {
                let (n, m) = (self.dims[i], self.dims[i + 1]);
                [
                    ParamSpec::weight(self.layer_name(i, "weight"), vec![m, n], n, m),
                    ParamSpec::bias(self.layer_name(i, "bias"), m),
                ]
            })
            .collect()
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var) -> Result<Var> {
        let mut h = g.global_avg_pool(x)?;
        for i in 0..3 {
            h = g.linear(h, p.get(&self.layer_name(i, "weight")), p.get(&self.layer_name(i, "bias")))?;
            if i < 2 {
                h = g.relu(h)?;
            }
        }
        Ok(h)
    }
}

#[cfg(test)]
mod tests;
