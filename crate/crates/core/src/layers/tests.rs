use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::autodiff::OpKind;

fn random_params(specs: &[ParamSpec], seed: u64, scale: f64) -> ParamSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ParamSet::from_specs(specs, |s| Tensor::from_fn(&s.shape, |_| scale * rng.random_range(-1.0..1.0))).unwrap()
}

fn zero_params(specs: &[ParamSpec]) -> ParamSet {
    ParamSet::from_specs(specs, |s| Tensor::zeros(&s.shape)).unwrap()
}

fn random_tensor(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

#[test]
fn encoder_shapes_and_conv_count() {
    let enc = VggEncoder::new("enc", 4, 8);
    let params = random_params(&enc.specs(), 1, 0.1);
    let mut g = Graph::new();
    let p = params.bind(&mut g);
    let x = g.constant(random_tensor(&[4, 48, 48], 2));
    g.set_scope("enc");
    let out = enc.forward(&mut g, &p, x).unwrap();
    assert_eq!(g.shape(out.feature), &[64, 6, 6]);
    assert_eq!(g.shape(out.skips[0]), &[8, 48, 48]);
    assert_eq!(g.shape(out.skips[1]), &[16, 24, 24]);
    assert_eq!(g.shape(out.skips[2]), &[32, 12, 12]);
    assert_eq!(g.op_count("enc", OpKind::Conv2d), 11);
    assert_eq!(g.op_count("enc", OpKind::Relu), 11);
    assert_eq!(g.op_count("enc", OpKind::MaxPool), 3);
    assert_eq!(enc.out_channels(), 64);
}

#[test]
fn encoder_rejects_indivisible_input() {
    let enc = VggEncoder::new("enc", 3, 2);
    let params = zero_params(&enc.specs());
    let mut g = Graph::new();
    let p = params.bind(&mut g);
    let x = g.constant(Tensor::zeros(&[3, 20, 16]));
    assert!(enc.forward(&mut g, &p, x).is_err());
}

#[test]
fn encoder_zero_input_zero_bias_gives_zero_feature() {
    let enc = VggEncoder::new("enc", 4, 4);
    let mut params = random_params(&enc.specs(), 3, 0.5);
    for (name, t) in params.names().to_vec().iter().zip(params.tensors_mut()) {
        if name.ends_with(".bias") {
            t.data_mut().fill(0.0);
        }
    }
    let mut g = Graph::new();
    let p = params.bind(&mut g);
    let x = g.constant(Tensor::zeros(&[4, 16, 16]));
    let out = enc.forward(&mut g, &p, x).unwrap();
    assert!(g.value(out.feature).data().iter().all(|&v| v == 0.0));
}

#[test]
fn residual_with_zero_convs_is_identity() {
    let block = ResidualBlock::new("res", 5);
    let params = zero_params(&block.specs());
    let mut g = Graph::new();
    let p = params.bind(&mut g);
    let xs = random_tensor(&[5, 4, 3], 7);
    let x = g.constant(xs.clone());
    let y = block.forward(&mut g, &p, x).unwrap();
    assert_eq!(g.value(y), &xs);
    assert_eq!(g.event_count("residual_block"), 1);
}

#[test]
fn residual_preserves_shape() {
    let block = ResidualBlock::new("res", 3);
    let params = random_params(&block.specs(), 8, 0.3);
    let mut g = Graph::new();
    let p = params.bind(&mut g);
    let x = g.constant(random_tensor(&[3, 5, 6], 9));
    let y = block.forward(&mut g, &p, x).unwrap();
    assert_eq!(g.shape(y), &[3, 5, 6]);
}

#[test]
fn convlstm_zero_params_halves_cell() {
    let cell = ConvLstmCell::new("lstm", 2, 3);
    let params = zero_params(&cell.specs());
    let mut g = Graph::new();
    let p = params.bind(&mut g);
    let c0 = random_tensor(&[3, 2, 2], 11);
    let state = ConvLstmState {
        hidden: g.constant(random_tensor(&[3, 2, 2], 12)),
        cell: g.constant(c0.clone()),
    };
    let x = g.constant(random_tensor(&[2, 2, 2], 13));
    let next = cell.forward(&mut g, &p, x, state).unwrap();
    for (i, &c) in c0.data().iter().enumerate() {
        assert!((g.value(next.cell).data()[i] - 0.5 * c).abs() < 1e-15);
        assert!((g.value(next.hidden).data()[i] - 0.5 * (0.5 * c).tanh()).abs() < 1e-15);
    }
}

#[test]
fn convlstm_zero_input_zero_state_zero_bias_gives_zero_hidden() {
    let cell = ConvLstmCell::new("lstm", 2, 2);
    let mut params = random_params(&cell.specs(), 4, 0.5);
    params.get_mut("lstm.gates.bias").unwrap().data_mut().fill(0.0);
    let mut g = Graph::new();
    let p = params.bind(&mut g);
    let state = ConvLstmState::zeros(&mut g, 2, 3, 3);
    let x = g.constant(Tensor::zeros(&[2, 3, 3]));
    let next = cell.forward(&mut g, &p, x, state).unwrap();
    assert!(g.value(next.hidden).data().iter().all(|&v| v == 0.0));
}

#[test]
fn convlstm_rejects_mismatched_state() {
    let cell = ConvLstmCell::new("lstm", 2, 2);
    let params = zero_params(&cell.specs());
    let mut g = Graph::new();
    let p = params.bind(&mut g);
    let state = ConvLstmState::zeros(&mut g, 2, 3, 3);
    let x = g.constant(Tensor::zeros(&[2, 4, 3]));
    assert!(cell.forward(&mut g, &p, x, state).is_err());
}

/// Hand-unrolled ConvLSTM recursion on plain arrays.
fn lstm_oracle(xs: &[Tensor], w: &Tensor, b: &Tensor, d: usize) -> Vec<(Vec<f64>, Vec<f64>)> {
    let (h, wd) = (xs[0].shape()[1], xs[0].shape()[2]);
    let cin = xs[0].shape()[0];
    let mut hidden = vec![0.0; d * h * wd];
    let mut cell = vec![0.0; d * h * wd];
    let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
    let mut out = Vec::new();
    for x in xs {
        let input = |c: usize, y: isize, xx: isize| -> f64 {
            if y < 0 || xx < 0 || y >= h as isize || xx >= wd as isize {
                return 0.0;
            }
            let (y, xx) = (y as usize, xx as usize);
            if c < cin {
                x.get(&[c, y, xx])
            } else {
                hidden[((c - cin) * h + y) * wd + xx]
            }
        };
        let mut pre = vec![0.0; 4 * d * h * wd];
        for o in 0..4 * d {
            for y in 0..h {
                for xx in 0..wd {
                    let mut acc = b.data()[o];
                    for c in 0..cin + d {
                        for ky in 0..3 {
                            for kx in 0..3 {
                                acc += w.get(&[o, c, ky, kx])
                                    * input(c, y as isize + ky as isize - 1, xx as isize + kx as isize - 1);
                            }
                        }
                    }
                    pre[(o * h + y) * wd + xx] = acc;
                }
            }
        }
        let n = d * h * wd;
        let mut new_h = vec![0.0; n];
        let mut new_c = vec![0.0; n];
        for k in 0..n {
            let (i, f, o, gg) = (sig(pre[k]), sig(pre[n + k]), sig(pre[2 * n + k]), pre[3 * n + k].tanh());
            new_c[k] = f * cell[k] + i * gg;
            new_h[k] = o * new_c[k].tanh();
        }
        hidden = new_h;
        cell = new_c;
        out.push((hidden.clone(), cell.clone()));
    }
    out
}

#[test]
fn convlstm_two_steps_match_unrolled_oracle() {
    let cell = ConvLstmCell::new("lstm", 2, 3);
    let params = random_params(&cell.specs(), 21, 0.4);
    let xs = [random_tensor(&[2, 4, 5], 22), random_tensor(&[2, 4, 5], 23)];
    let expected = lstm_oracle(&xs, params.get("lstm.gates.weight").unwrap(), params.get("lstm.gates.bias").unwrap(), 3);

    let mut g = Graph::new();
    let p = params.bind(&mut g);
    let mut state = ConvLstmState::zeros(&mut g, 3, 4, 5);
    for (x, (eh, ec)) in xs.iter().zip(&expected) {
        let xv = g.constant(x.clone());
        state = cell.forward(&mut g, &p, xv, state).unwrap();
        for (a, b) in g.value(state.hidden).data().iter().zip(eh) {
            assert!((a - b).abs() < 1e-12);
        }
        for (a, b) in g.value(state.cell).data().iter().zip(ec) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

#[test]
fn convlstm_is_bitwise_deterministic() {
    let cell = ConvLstmCell::new("lstm", 3, 3);
    let params = random_params(&cell.specs(), 5, 0.3);
    let run = || {
        let mut g = Graph::new();
        let p = params.bind(&mut g);
        let s = ConvLstmState::zeros(&mut g, 3, 4, 4);
        let x = g.constant(random_tensor(&[3, 4, 4], 6));
        let s = cell.forward(&mut g, &p, x, s).unwrap();
        (g.value(s.hidden).clone(), g.value(s.cell).clone())
    };
    assert_eq!(run(), run());
}

#[test]
fn mlp_pooling_and_bias_only() {
    let head = MlpHead::new("head", 8, 9).unwrap();
    let mut params = zero_params(&head.specs());
    let bias: Vec<f64> = (0..9).map(|i| i as f64 * 0.1 - 0.3).collect();
    params.get_mut("head.fc3.bias").unwrap().data_mut().copy_from_slice(&bias);
    let mut g = Graph::new();
    let p = params.bind(&mut g);
    let x = g.constant(random_tensor(&[8, 3, 3], 1));
    let y = head.forward(&mut g, &p, x).unwrap();
    assert_eq!(g.value(y).data(), &bias[..]);

    let consts = Tensor::from_fn(&[4, 2, 2], |i| (i / 4) as f64 + 0.5);
    let x = g.constant(consts);
    let pooled = g.global_avg_pool(x).unwrap();
    assert_eq!(g.value(pooled).data(), &[0.5, 1.5, 2.5, 3.5]);

    assert!(MlpHead::new("head", 3, 9).is_err());
}

#[test]
fn mlp_is_invariant_to_spatial_permutation() {
    let head = MlpHead::new("head", 8, 5).unwrap();
    let params = random_params(&head.specs(), 30, 0.5);
    let x = random_tensor(&[8, 3, 4], 31);
    let mut rng = ChaCha8Rng::seed_from_u64(32);
    for _ in 0..5 {
        let mut perm: Vec<usize> = (0..12).collect();
        for i in (1..12).rev() {
            perm.swap(i, rng.random_range(0..=i));
        }
        let permuted = Tensor::from_fn(&[8, 3, 4], |i| x.data()[(i / 12) * 12 + perm[i % 12]]);
        let mut g = Graph::new();
        let p = params.bind(&mut g);
        let a = g.constant(x.clone());
        let b = g.constant(permuted);
        let ya = head.forward(&mut g, &p, a).unwrap();
        let yb = head.forward(&mut g, &p, b).unwrap();
        assert!(g.value(ya).max_abs_diff(g.value(yb)) < 1e-12);
    }
}
