use super::graph::{Activation, Op};
use super::kernels::{self, ConvGeom};
use super::{Graph, Tensor, Var};
use crate::error::{Error, Result};

impl Graph {
    /// 2-D cross-correlation of a `C_in×H×W` input with a `C_out×C_in×k×k` kernel.
    pub fn conv2d(&mut self, input: Var, weight: Var, bias: Var, stride: usize, padding: usize) -> Result<Var> {
        const OP: &str = "conv2d";
        let (c_in, h, w) = self.value(input).dims3(OP)?;
        let (c_out, wc_in, k) = match *self.shape(weight) {
            [co, ci, kh, kw] if kh == kw => (co, ci, kh),
            ref s => return Err(Error::shape(OP, format!("weight must be C_out×C_in×k×k, got {s:?}"))),
        };
        if wc_in != c_in {
            return Err(Error::shape(
                OP,
                format!("input channels: input has {c_in}, weight expects {wc_in}"),
            ));
        }
        if self.shape(bias) != [c_out] {
            return Err(Error::shape(
                OP,
                format!("bias length: expected [{c_out}], got {:?}", self.shape(bias)),
            ));
        }
        if stride == 0 {
            return Err(Error::shape(OP, "stride must be positive"));
        }
        if k > h + 2 * padding {
            return Err(Error::shape(OP, format!("height: kernel {k} exceeds padded height {}", h + 2 * padding)));
        }
        if k > w + 2 * padding {
            return Err(Error::shape(OP, format!("width: kernel {k} exceeds padded width {}", w + 2 * padding)));
        }
        let geom = ConvGeom {
            c_in,
            h,
            w,
            c_out,
            k,
            stride,
            pad: padding,
        };
        let out = kernels::conv2d_forward(
            self.value(input).data(),
            self.value(weight).data(),
            self.value(bias).data(),
            &geom,
        );
        let value = Tensor::from_parts(vec![c_out, geom.out_h(), geom.out_w()], out);
        self.push(value, Op::Conv2d { input, weight, bias, geom })
    }

    /// 2×2 max pooling with stride 2. Ties go to the first element in
    /// row-major window order.
    pub fn maxpool2x2(&mut self, input: Var) -> Result<Var> {
        let (c, h, w) = self.value(input).dims3("maxpool2x2")?;
        if h % 2 != 0 || w % 2 != 0 {
            return Err(Error::shape("maxpool2x2", format!("spatial extents {h}×{w} must be even")));
        }
        let (oh, ow) = (h / 2, w / 2);
        let x = self.value(input).data();
        let mut out = Vec::with_capacity(c * oh * ow);
        let mut argmax = Vec::with_capacity(c * oh * ow);
        for ch in 0..c {
            let base = ch * h * w;
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = base + 2 * oy * w + 2 * ox;
                    for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                        let idx = base + (2 * oy + dy) * w + 2 * ox + dx;
                        if x[idx] > x[best] {
                            best = idx;
                        }
                    }
                    out.push(x[best]);
                    argmax.push(best);
                }
            }
        }
        self.push(Tensor::from_parts(vec![c, oh, ow], out), Op::MaxPool { input, argmax })
    }

    /// Nearest-neighbour 2× upsampling: every element becomes a 2×2 block.
    pub fn upsample_nearest2x(&mut self, input: Var) -> Result<Var> {
        let (c, h, w) = self.value(input).dims3("upsample_nearest2x")?;
        let x = self.value(input).data();
        let (oh, ow) = (2 * h, 2 * w);
        let mut out = vec![0.0; c * oh * ow];
        for ch in 0..c {
            for oy in 0..oh {
                let src = &x[(ch * h + oy / 2) * w..(ch * h + oy / 2 + 1) * w];
                let dst = &mut out[(ch * oh + oy) * ow..(ch * oh + oy + 1) * ow];
                for (ox, d) in dst.iter_mut().enumerate() {
                    *d = src[ox / 2];
                }
            }
        }
        self.push(Tensor::from_parts(vec![c, oh, ow], out), Op::Upsample { input })
    }

    pub fn activation(&mut self, input: Var, kind: Activation) -> Result<Var> {
        let x = self.value(input);
        let f: fn(f64) -> f64 = match kind {
            Activation::Relu => |v| if v > 0.0 { v } else { 0.0 },
            Activation::Sigmoid => |v| {
                if v >= 0.0 {
                    1.0 / (1.0 + (-v).exp())
                } else {
                    let e = v.exp();
                    e / (1.0 + e)
                }
            },
            Activation::Tanh => f64::tanh,
        };
        let value = Tensor::from_parts(x.shape().to_vec(), x.data().iter().map(|&v| f(v)).collect());
        self.push(value, Op::Activation { input, kind })
    }

    pub fn relu(&mut self, input: Var) -> Result<Var> {
        self.activation(input, Activation::Relu)
    }

    pub fn sigmoid(&mut self, input: Var) -> Result<Var> {
        self.activation(input, Activation::Sigmoid)
    }

    pub fn tanh(&mut self, input: Var) -> Result<Var> {
        self.activation(input, Activation::Tanh)
    }

    /// Softmax over all `h·w` positions of a single-channel map.
    pub fn softmax_spatial(&mut self, input: Var) -> Result<Var> {
        let (c, _, _) = self.value(input).dims3("softmax_spatial")?;
        if c != 1 {
            return Err(Error::shape("softmax_spatial", format!("expected 1 channel, got {c}")));
        }
        let x = self.value(input);
        let value = Tensor::from_parts(x.shape().to_vec(), kernels::softmax(x.data()));
        self.push(value, Op::SoftmaxSpatial { input })
    }

    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ca, ha, wa) = self.value(a).dims3("concat_channels")?;
        let (cb, hb, wb) = self.value(b).dims3("concat_channels")?;
        if (ha, wa) != (hb, wb) {
            return Err(Error::shape(
                "concat_channels",
                format!("spatial extents differ: {ha}×{wa} vs {hb}×{wb}"),
            ));
        }
        let mut data = Vec::with_capacity((ca + cb) * ha * wa);
        data.extend_from_slice(self.value(a).data());
        data.extend_from_slice(self.value(b).data());
        self.push(Tensor::from_parts(vec![ca + cb, ha, wa], data), Op::Concat { a, b })
    }

    /// Channels `[start, start + len)` of a `C×H×W` tensor.
    pub fn slice_channels(&mut self, input: Var, start: usize, len: usize) -> Result<Var> {
        let (c, h, w) = self.value(input).dims3("slice_channels")?;
        if len == 0 || start + len > c {
            return Err(Error::shape(
                "slice_channels",
                format!("channels [{start}, {}) out of range for {c}", start + len),
            ));
        }
        let plane = h * w;
        let data = self.value(input).data()[start * plane..(start + len) * plane].to_vec();
        self.push(Tensor::from_parts(vec![len, h, w], data), Op::SliceChannels { input, start })
    }

    /// `out[c,i,j] = mask[0,i,j] · x[c,i,j]`.
    pub fn mul_broadcast_mask(&mut self, mask: Var, x: Var) -> Result<Var> {
        let (mc, mh, mw) = self.value(mask).dims3("mul_broadcast_mask")?;
        let (c, h, w) = self.value(x).dims3("mul_broadcast_mask")?;
        if mc != 1 {
            return Err(Error::shape("mul_broadcast_mask", format!("mask must have 1 channel, got {mc}")));
        }
        if (mh, mw) != (h, w) {
            return Err(Error::shape(
                "mul_broadcast_mask",
                format!("spatial extents differ: mask {mh}×{mw} vs input {h}×{w}"),
            ));
        }
        let m = self.value(mask).data();
        let data = self
            .value(x)
            .data()
            .chunks(h * w)
            .flat_map(|plane| plane.iter().zip(m).map(|(v, s)| v * s))
            .collect();
        self.push(Tensor::from_parts(vec![c, h, w], data), Op::MulMask { mask, x })
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(op, format!("{:?} vs {:?}", self.shape(a), self.shape(b))));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let (x, y) = (self.value(a), self.value(b));
        let data = x.data().iter().zip(y.data()).map(|(p, q)| p + q).collect();
        let value = Tensor::from_parts(x.shape().to_vec(), data);
        self.push(value, Op::Add { a, b })
    }

    /// Elementwise product of equally shaped tensors.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let (x, y) = (self.value(a), self.value(b));
        let data = x.data().iter().zip(y.data()).map(|(p, q)| p * q).collect();
        let value = Tensor::from_parts(x.shape().to_vec(), data);
        self.push(value, Op::Mul { a, b })
    }

    pub fn scale(&mut self, input: Var, factor: f64) -> Result<Var> {
        let x = self.value(input);
        let value = Tensor::from_parts(x.shape().to_vec(), x.data().iter().map(|v| v * factor).collect());
        self.push(value, Op::Scale { input, factor })
    }

    pub fn sum(&mut self, input: Var) -> Result<Var> {
        let s = self.value(input).sum();
        self.push(Tensor::scalar(s), Op::Sum { input })
    }

    /// `weight·x + bias` for an `m×n` weight and `n`-vector input.
    pub fn linear(&mut self, x: Var, weight: Var, bias: Var) -> Result<Var> {
        let (m, n) = match *self.shape(weight) {
            [m, n] => (m, n),
            ref s => return Err(Error::shape("linear", format!("weight must be m×n, got {s:?}"))),
        };
        if self.value(x).len() != n || self.shape(x).len() != 1 {
            return Err(Error::shape(
                "linear",
                format!("input: expected [{n}], got {:?}", self.shape(x)),
            ));
        }
        if self.shape(bias) != [m] {
            return Err(Error::shape("linear", format!("bias: expected [{m}], got {:?}", self.shape(bias))));
        }
        let mut out = kernels::matvec(self.value(weight).data(), self.value(x).data(), m, n);
        out.iter_mut().zip(self.value(bias).data()).for_each(|(o, b)| *o += b);
        self.push(Tensor::from_parts(vec![m], out), Op::Linear { x, weight, bias })
    }

    /// Mean over the spatial extent of each channel: `C×H×W → [C]`.
    pub fn global_avg_pool(&mut self, input: Var) -> Result<Var> {
        let (c, h, w) = self.value(input).dims3("global_avg_pool")?;
        let n = (h * w) as f64;
        let data = self.value(input).data().chunks(h * w).map(|p| p.iter().sum::<f64>() / n).collect();
        self.push(Tensor::from_parts(vec![c], data), Op::GlobalAvgPool { input })
    }

    /// Mean over pixels of `-log softmax_c(logits)[target]`.
    pub fn pixelwise_cross_entropy(&mut self, logits: Var, target: &[usize]) -> Result<Var> {
        let (c, h, w) = self.value(logits).dims3("pixelwise_cross_entropy")?;
        if target.len() != h * w {
            return Err(Error::shape(
                "pixelwise_cross_entropy",
                format!("target has {} labels for a {h}×{w} map", target.len()),
            ));
        }
        if let Some(p) = target.iter().position(|&t| t >= c) {
            return Err(Error::PixelLabelOutOfRange {
                row: p / w,
                col: p % w,
                label: target[p],
                classes: c,
            });
        }
        let x = self.value(logits).data();
        let npix = h * w;
        let mut probs = vec![0.0; c * npix];
        let mut total = 0.0;
        let mut column = vec![0.0; c];
        for p in 0..npix {
            for ch in 0..c {
                column[ch] = x[ch * npix + p];
            }
            let lse = kernels::log_sum_exp(column.iter().copied());
            total += lse - column[target[p]];
            for ch in 0..c {
                probs[ch * npix + p] = (column[ch] - lse).exp();
            }
        }
        let loss = Tensor::scalar(total / npix as f64);
        self.push(
            loss,
            Op::PixelCrossEntropy {
                logits,
                target: target.to_vec(),
                probs,
            },
        )
    }

    /// `-log softmax(logits)[target]` for a logit vector.
    pub fn cross_entropy(&mut self, logits: Var, target: usize) -> Result<Var> {
        let x = self.value(logits);
        if x.shape().len() != 1 {
            return Err(Error::shape("cross_entropy", format!("logits must be a vector, got {:?}", x.shape())));
        }
        if target >= x.len() {
            return Err(Error::LabelOutOfRange {
                label: target,
                classes: x.len(),
            });
        }
        let lse = kernels::log_sum_exp(x.data().iter().copied());
        let loss = Tensor::scalar(lse - x.data()[target]);
        let probs = kernels::softmax(x.data());
        self.push(loss, Op::CrossEntropy { logits, target, probs })
    }

    /// Gradients flowing from node `id` (with output gradient `g`) to its inputs.
    pub(crate) fn backward_op(&self, id: usize, g: &[f64]) -> Vec<(Var, Vec<f64>)> {
        let node = &self.nodes[id];
        let needs = |v: Var| self.nodes[v.0].requires_grad;
        match &node.op {
            Op::Leaf => vec![],
            &Op::Conv2d { input, weight, bias, ref geom } => {
                let need_params = needs(weight) || needs(bias);
                let (gi, gw, gb) = kernels::conv2d_backward(
                    g,
                    self.value(input).data(),
                    self.value(weight).data(),
                    geom,
                    needs(input),
                    need_params,
                );
                let mut out = Vec::with_capacity(3);
                if let Some(gi) = gi {
                    out.push((input, gi));
                }
                if let (Some(gw), Some(gb)) = (gw, gb) {
                    out.push((weight, gw));
                    out.push((bias, gb));
                }
                out
            }
            Op::MaxPool { input, argmax } => {
                let mut gi = vec![0.0; self.value(*input).len()];
                for (&src, &go) in argmax.iter().zip(g) {
                    gi[src] += go;
                }
                vec![(*input, gi)]
            }
            &Op::Upsample { input } => {
                let (c, h, w) = self.value(input).dims3("upsample").expect("recorded rank-3");
                let ow = 2 * w;
                let mut gi = vec![0.0; c * h * w];
                for ch in 0..c {
                    for oy in 0..2 * h {
                        let row = &g[(ch * 2 * h + oy) * ow..(ch * 2 * h + oy + 1) * ow];
                        let dst = &mut gi[(ch * h + oy / 2) * w..(ch * h + oy / 2 + 1) * w];
                        for (ox, v) in row.iter().enumerate() {
                            dst[ox / 2] += v;
                        }
                    }
                }
                vec![(input, gi)]
            }
            &Op::Activation { input, kind } => {
                let y = node.value.data();
                let gi = match kind {
                    Activation::Relu => self
                        .value(input)
                        .data()
                        .iter()
                        .zip(g)
                        .map(|(&x, &go)| if x > 0.0 { go } else { 0.0 })
                        .collect(),
                    Activation::Sigmoid => y.iter().zip(g).map(|(&s, &go)| go * s * (1.0 - s)).collect(),
                    Activation::Tanh => y.iter().zip(g).map(|(&t, &go)| go * (1.0 - t * t)).collect(),
                };
                vec![(input, gi)]
            }
            &Op::SoftmaxSpatial { input } => {
                let y = node.value.data();
                let dot: f64 = y.iter().zip(g).map(|(a, b)| a * b).sum();
                vec![(input, y.iter().zip(g).map(|(&s, &go)| s * (go - dot)).collect())]
            }
            &Op::Concat { a, b } => {
                let split = self.value(a).len();
                vec![(a, g[..split].to_vec()), (b, g[split..].to_vec())]
            }
            &Op::SliceChannels { input, start } => {
                let x = self.value(input);
                let plane: usize = x.shape()[1..].iter().product();
                let mut gi = vec![0.0; x.len()];
                gi[start * plane..start * plane + g.len()].copy_from_slice(g);
                vec![(input, gi)]
            }
            &Op::MulMask { mask, x } => {
                let m = self.value(mask).data();
                let xv = self.value(x).data();
                let plane = m.len();
                let mut out = Vec::with_capacity(2);
                if needs(mask) {
                    let mut gm = vec![0.0; plane];
                    for (gp, xp) in g.chunks(plane).zip(xv.chunks(plane)) {
                        for ((acc, go), xe) in gm.iter_mut().zip(gp).zip(xp) {
                            *acc += go * xe;
                        }
                    }
                    out.push((mask, gm));
                }
                if needs(x) {
                    let gx = g.chunks(plane).flat_map(|gp| gp.iter().zip(m).map(|(go, s)| go * s)).collect();
                    out.push((x, gx));
                }
                out
            }
            &Op::Add { a, b } => vec![(a, g.to_vec()), (b, g.to_vec())],
            &Op::Mul { a, b } => {
                let (x, y) = (self.value(a).data(), self.value(b).data());
                vec![
                    (a, g.iter().zip(y).map(|(go, v)| go * v).collect()),
                    (b, g.iter().zip(x).map(|(go, v)| go * v).collect()),
                ]
            }
            &Op::Scale { input, factor } => vec![(input, g.iter().map(|v| v * factor).collect())],
            &Op::Sum { input } => vec![(input, vec![g[0]; self.value(input).len()])],
            &Op::Linear { x, weight, bias } => {
                let xv = self.value(x).data();
                let wv = self.value(weight).data();
                let (m, n) = (g.len(), xv.len());
                let mut gx = vec![0.0; n];
                for (row, &go) in wv.chunks(n).zip(g) {
                    gx.iter_mut().zip(row).for_each(|(a, w)| *a += go * w);
                }
                let mut gw = Vec::with_capacity(m * n);
                for &go in g {
                    gw.extend(xv.iter().map(|v| go * v));
                }
                vec![(x, gx), (weight, gw), (bias, g.to_vec())]
            }
            &Op::GlobalAvgPool { input } => {
                let x = self.value(input);
                let plane = x.len() / g.len();
                let gi = g.iter().flat_map(|&go| std::iter::repeat_n(go / plane as f64, plane)).collect();
                vec![(input, gi)]
            }
            Op::PixelCrossEntropy { logits, target, probs } => {
                let npix = target.len();
                let scale = g[0] / npix as f64;
                let mut gi: Vec<f64> = probs.iter().map(|p| p * scale).collect();
                for (p, &t) in target.iter().enumerate() {
                    gi[t * npix + p] -= scale;
                }
                vec![(*logits, gi)]
            }
            Op::CrossEntropy { logits, target, probs } => {
                let mut gi: Vec<f64> = probs.iter().map(|p| p * g[0]).collect();
                gi[*target] -= g[0];
                vec![(*logits, gi)]
            }
        }
    }
}
