#![allow(dead_code)]

use affseg::model::{AffordanceModel, FrameInput, ModelConfig, SequenceBatch};
use affseg::{Graph, Result, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const REL_TOL: f64 = 1e-4;
pub const REL_FLOOR: f64 = 1e-6;
pub const FD_STEP: f64 = 1e-6;
pub const CASES_PER_OP: usize = 50;

pub type Build = Box<dyn Fn(&mut Graph, &[Var]) -> Result<Var>>;

pub struct OpCase {
    pub inputs: Vec<Tensor>,
    pub build: Build,
}

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

pub fn uniform(shape: &[usize], rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> Tensor {
    Tensor::from_fn(shape, |_| rng.random_range(lo..hi))
}

/// Uniform values pushed at least `gap` away from zero.
fn away_from_zero(shape: &[usize], rng: &mut ChaCha8Rng, gap: f64) -> Tensor {
    Tensor::from_fn(shape, |_| {
        let v: f64 = rng.random_range(-1.0..1.0);
        v + gap * v.signum()
    })
}

/// Distinct values spaced `0.05` apart in random order, so no 2×2 window has a near tie.
fn distinct(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n: usize = shape.iter().product();
    let mut order: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        order.swap(i, rng.random_range(0..=i));
    }
    Tensor::from_fn(shape, |i| order[i] as f64 * 0.05 + rng.random_range(0.0..0.01))
}

fn loss_of(build: &Build, inputs: &[Tensor], probe: &Tensor) -> Result<f64> {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.constant(t.clone())).collect();
    let out = build(&mut g, &vars)?;
    let r = g.constant(probe.clone());
    let weighted = g.mul(out, r)?;
    let total = g.sum(weighted)?;
    Ok(g.value(total).item())
}

/// Worst relative error between backprop and central differences of
/// `sum(op(inputs) ⊙ R)` over every input entry, for a random probe `R`.
pub fn check_case(case: &OpCase, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut g = Graph::new();
    let vars: Vec<Var> = case.inputs.iter().map(|t| g.param(t.clone())).collect();
    let out = (case.build)(&mut g, &vars)?;
    let probe = uniform(g.shape(out), &mut rng, -1.0, 1.0);
    let r = g.constant(probe.clone());
    let weighted = g.mul(out, r)?;
    let loss = g.sum(weighted)?;
    g.backward(loss)?;

    let mut worst: f64 = 0.0;
    for (i, v) in vars.iter().enumerate() {
        let analytic = g.grad(*v).unwrap_or_else(|| Tensor::zeros(case.inputs[i].shape()));
        for k in 0..case.inputs[i].len() {
            let mut plus = case.inputs.clone();
            plus[i].data_mut()[k] += FD_STEP;
            let mut minus = case.inputs.clone();
            minus[i].data_mut()[k] -= FD_STEP;
            let numeric = (loss_of(&case.build, &plus, &probe)? - loss_of(&case.build, &minus, &probe)?) / (2.0 * FD_STEP);
            worst = worst.max(rel_err(analytic.data()[k], numeric));
        }
    }
    Ok(worst)
}

pub const OPS: [&str; 18] = [
    "conv2d",
    "maxpool2x2",
    "upsample_nearest2x",
    "relu",
    "sigmoid",
    "tanh",
    "softmax_spatial",
    "concat_channels",
    "slice_channels",
    "mul_broadcast_mask",
    "add",
    "mul",
    "scale",
    "sum",
    "linear",
    "global_avg_pool",
    "pixelwise_cross_entropy",
    "cross_entropy",
];

/// One random, kink-free instance of `op`.
pub fn op_case(op: &str, rng: &mut ChaCha8Rng) -> OpCase {
    let c = rng.random_range(1..4);
    let h = rng.random_range(2..6);
    let w = rng.random_range(2..6);
    let chw = [c, h, w];
    let one = |inputs: Vec<Tensor>, build: Build| OpCase { inputs, build };
    match op {
        "conv2d" => {
            let k = if rng.random_bool(0.5) { 3 } else { 1 };
            let stride = rng.random_range(1..3);
            let padding = rng.random_range(0..2);
            let (hh, ww) = (h + k, w + k);
            let o = rng.random_range(1..4);
            let inputs = vec![
                uniform(&[c, hh, ww], rng, -1.0, 1.0),
                uniform(&[o, c, k, k], rng, -1.0, 1.0),
                uniform(&[o], rng, -1.0, 1.0),
            ];
            one(inputs, Box::new(move |g, v| g.conv2d(v[0], v[1], v[2], stride, padding)))
        }
        "maxpool2x2" => one(vec![distinct(&[c, 2 * h, 2 * w], rng)], Box::new(|g, v| g.maxpool2x2(v[0]))),
        "upsample_nearest2x" => one(vec![uniform(&chw, rng, -1.0, 1.0)], Box::new(|g, v| g.upsample_nearest2x(v[0]))),
        "relu" => one(vec![away_from_zero(&chw, rng, 0.05)], Box::new(|g, v| g.relu(v[0]))),
        "sigmoid" => one(vec![uniform(&chw, rng, -4.0, 4.0)], Box::new(|g, v| g.sigmoid(v[0]))),
        "tanh" => one(vec![uniform(&chw, rng, -3.0, 3.0)], Box::new(|g, v| g.tanh(v[0]))),
        "softmax_spatial" => one(vec![uniform(&[1, h, w], rng, -3.0, 3.0)], Box::new(|g, v| g.softmax_spatial(v[0]))),
        "concat_channels" => {
            let c2 = rng.random_range(1..4);
            let inputs = vec![uniform(&chw, rng, -1.0, 1.0), uniform(&[c2, h, w], rng, -1.0, 1.0)];
            one(inputs, Box::new(|g, v| g.concat_channels(v[0], v[1])))
        }
        "slice_channels" => {
            let total = c + 2;
            let start = rng.random_range(0..total);
            let len = rng.random_range(1..=total - start);
            one(vec![uniform(&[total, h, w], rng, -1.0, 1.0)], Box::new(move |g, v| g.slice_channels(v[0], start, len)))
        }
        "mul_broadcast_mask" => {
            let inputs = vec![uniform(&[1, h, w], rng, 0.0, 1.0), uniform(&chw, rng, -1.0, 1.0)];
            one(inputs, Box::new(|g, v| g.mul_broadcast_mask(v[0], v[1])))
        }
        "add" => one(
            vec![uniform(&chw, rng, -1.0, 1.0), uniform(&chw, rng, -1.0, 1.0)],
            Box::new(|g, v| g.add(v[0], v[1])),
        ),
        "mul" => one(
            vec![uniform(&chw, rng, -1.0, 1.0), uniform(&chw, rng, -1.0, 1.0)],
            Box::new(|g, v| g.mul(v[0], v[1])),
        ),
        "scale" => {
            let f = rng.random_range(-3.0..3.0);
            one(vec![uniform(&chw, rng, -1.0, 1.0)], Box::new(move |g, v| g.scale(v[0], f)))
        }
        "sum" => one(vec![uniform(&chw, rng, -1.0, 1.0)], Box::new(|g, v| g.sum(v[0]))),
        "linear" => {
            let (m, n) = (rng.random_range(1..6), rng.random_range(1..8));
            let inputs = vec![
                uniform(&[n], rng, -1.0, 1.0),
                uniform(&[m, n], rng, -1.0, 1.0),
                uniform(&[m], rng, -1.0, 1.0),
            ];
            one(inputs, Box::new(|g, v| g.linear(v[0], v[1], v[2])))
        }
        "global_avg_pool" => one(vec![uniform(&chw, rng, -1.0, 1.0)], Box::new(|g, v| g.global_avg_pool(v[0]))),
        "pixelwise_cross_entropy" => {
            let classes = rng.random_range(2..5);
            let target: Vec<usize> = (0..h * w).map(|_| rng.random_range(0..classes)).collect();
            one(
                vec![uniform(&[classes, h, w], rng, -3.0, 3.0)],
                Box::new(move |g, v| g.pixelwise_cross_entropy(v[0], &target)),
            )
        }
        "cross_entropy" => {
            let classes = rng.random_range(2..8);
            let target = rng.random_range(0..classes);
            one(vec![uniform(&[classes], rng, -3.0, 3.0)], Box::new(move |g, v| g.cross_entropy(v[0], target)))
        }
        other => panic!("no generator for {other}"),
    }
}

/// Worst relative error of `op` over `CASES_PER_OP` random cases.
pub fn check_op(op: &str, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for i in 0..CASES_PER_OP {
        let case = op_case(op, &mut rng);
        worst = worst.max(check_case(&case, seed.wrapping_mul(1000) + i as u64)?);
    }
    Ok(worst)
}

pub fn gradcheck_model_config() -> ModelConfig {
    let mut cfg = ModelConfig::default();
    cfg.height = 24;
    cfg.width = 24;
    cfg.base_width = 4;
    cfg
}

/// Model with every bias drawn from `±0.1`, so no pre-activation sits on a ReLU kink.
pub fn jittered_model(cfg: &ModelConfig, seed: u64) -> AffordanceModel {
    let mut model = AffordanceModel::new(cfg, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let names: Vec<String> = model.params().names().to_vec();
    for (name, t) in names.iter().zip(model.params_mut().tensors_mut()) {
        if name.ends_with("bias") {
            t.data_mut().iter_mut().for_each(|b| *b = rng.random_range(-0.1..0.1));
        }
    }
    model
}

/// Random-valued frames (no flat regions, hence no max-pool ties).
pub fn random_batch(cfg: &ModelConfig, frames: usize, seed: u64) -> SequenceBatch {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (h, w) = (cfg.height, cfg.width);
    SequenceBatch {
        frames: (0..frames)
            .map(|_| FrameInput {
                appearance: uniform(&[cfg.appearance_channels(), h, w], &mut rng, 0.0, 1.0),
                flow: uniform(&[3, h, w], &mut rng, 0.0, 1.0),
            })
            .collect(),
        label_mask: (0..h * w).map(|_| rng.random_range(0..cfg.num_affordance_classes)).collect(),
        action: rng.random_range(0..cfg.num_actions),
    }
}

pub struct ModelGradReport {
    pub worst: f64,
    pub worst_param: String,
    pub checked: usize,
    pub kinked: usize,
}

/// Central difference at the largest step whose one-sided differences agree,
/// i.e. whose interval does not straddle a ReLU or max-pool kink.
fn smooth_central(loss: impl Fn(f64) -> Result<f64>) -> Result<Option<f64>> {
    let l0 = loss(0.0)?;
    for h in [1e-5, 1e-6, 1e-7] {
        let (lp, lm) = (loss(h)?, loss(-h)?);
        let (fwd, bwd) = ((lp - l0) / h, (l0 - lm) / h);
        if rel_err(fwd, bwd) < 1e-3 {
            return Ok(Some((lp - lm) / (2.0 * h)));
        }
    }
    Ok(None)
}

/// Central differences on `per_tensor` random entries of every parameter tensor
/// of the full model, against backprop.
pub fn check_model(per_tensor: usize, seed: u64) -> Result<ModelGradReport> {
    let cfg = gradcheck_model_config();
    let model = jittered_model(&cfg, seed);
    let batch = random_batch(&cfg, 2, seed + 1);
    let (ls, la) = (0.2, 0.8);
    let (_, grads) = model.loss_and_grads(&batch, ls, la)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 2);
    let mut report = ModelGradReport {
        worst: 0.0,
        worst_param: String::new(),
        checked: 0,
        kinked: 0,
    };
    for (pi, name) in model.params().names().iter().enumerate() {
        let n = model.params().tensors()[pi].len();
        for _ in 0..per_tensor.min(n) {
            let k = rng.random_range(0..n);
            let numeric = smooth_central(|h| {
                let mut m = model.clone();
                m.params_mut().tensors_mut()[pi].data_mut()[k] += h;
                Ok(m.loss(&batch, ls, la)?.total)
            })?;
            let Some(numeric) = numeric else {
                report.kinked += 1;
                continue;
            };
            let e = rel_err(grads.tensors()[pi].data()[k], numeric);
            if e > report.worst {
                report.worst = e;
                report.worst_param = name.clone();
            }
            report.checked += 1;
        }
    }
    Ok(report)
}

/// Preprocessed synthetic sequences; specs are drawn from `seed`, sequence `i` renders with `seed + i`.
pub fn synthetic_batches(cfg: &ModelConfig, n: usize, seed: u64) -> Vec<SequenceBatch> {
    use affseg::data::{generate_synthetic_sequence, preprocess, PreprocessConfig, SyntheticSpec};
    let pc = PreprocessConfig::from_model(cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n as u64)
        .map(|i| {
            let spec = SyntheticSpec::sample(&mut rng);
            preprocess(&generate_synthetic_sequence(&spec, seed + 1000 + i).unwrap(), &pc).unwrap()
        })
        .collect()
}

/// Smooth random texture sampled from a padded canvas, so shifted copies agree.
pub fn texture(h: usize, w: usize, seed: u64) -> impl Fn(isize, isize) -> f64 {
    let pad = 16;
    let (ch, cw) = (h + 2 * pad, w + 2 * pad);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let raw: Vec<f64> = (0..ch * cw).map(|_| rng.random::<f64>()).collect();
    let mut smooth = vec![0.0; ch * cw];
    for y in 1..ch - 1 {
        for x in 1..cw - 1 {
            let mut s = 0.0;
            for dy in 0..3 {
                for dx in 0..3 {
                    s += raw[(y + dy - 1) * cw + x + dx - 1];
                }
            }
            smooth[y * cw + x] = s / 9.0;
        }
    }
    move |y, x| {
        let yy = (y + pad as isize).clamp(1, ch as isize - 2) as usize;
        let xx = (x + pad as isize).clamp(1, cw as isize - 2) as usize;
        smooth[yy * cw + xx]
    }
}

/// Textured square over a flat background, shifted by `(dx, dy)`, at constant depth.
pub fn square_frame(h: usize, w: usize, seed: u64, dx: isize, dy: isize) -> affseg::data::RgbdFrame {
    let tex = texture(h, w, seed);
    let (y0, y1, x0, x1) = (h as isize / 4, 3 * h as isize / 4, w as isize / 4, 3 * w as isize / 4);
    let n = h * w;
    let rgb = Tensor::from_fn(&[3, h, w], |i| {
        let p = i % n;
        let (sy, sx) = ((p / w) as isize - dy, (p % w) as isize - dx);
        if (y0..y1).contains(&sy) && (x0..x1).contains(&sx) {
            tex(sy, sx)
        } else {
            0.5
        }
    });
    affseg::data::RgbdFrame::new(rgb, Tensor::full(&[1, h, w], 0.5)).unwrap()
}

pub fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.total_cmp(b));
    v[v.len() / 2]
}
