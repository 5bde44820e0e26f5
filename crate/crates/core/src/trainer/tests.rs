use super::*;

use rand::Rng;

use crate::autodiff::Tensor;
use crate::model::FrameInput;

fn tiny_config() -> ModelConfig {
    ModelConfig {
        height: 16,
        width: 16,
        base_width: 2,
        ..ModelConfig::default()
    }
}

fn tiny_dataset(config: &ModelConfig, n: usize, frames: usize, seed: u64) -> Vec<SequenceBatch> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (h, w) = (config.height, config.width);
    (0..n)
        .map(|_| SequenceBatch {
            frames: (0..frames)
                .map(|_| FrameInput {
                    appearance: Tensor::from_fn(&[config.appearance_channels(), h, w], |_| rng.random()),
                    flow: Tensor::from_fn(&[3, h, w], |_| rng.random()),
                })
                .collect(),
            label_mask: (0..h * w).map(|i| if i % 7 == 0 { 1 + i % 9 } else { 0 }).collect(),
            action: rng.random_range(0..config.num_actions),
        })
        .collect()
}

fn tiny_train(epochs: usize, batch_size: usize) -> TrainConfig {
    TrainConfig {
        batch_size,
        seed: 5,
        ..TrainConfig::desk().with_epochs(epochs)
    }
}

#[test]
fn xavier_support_and_variance() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let (fan_in, fan_out) = (30, 70);
    let t = xavier_init(&[100_000], fan_in, fan_out, &mut rng);
    let bound = xavier_bound(fan_in, fan_out);
    assert!((bound - (6.0f64 / 100.0).sqrt()).abs() < 1e-15);
    assert!(t.data().iter().all(|v| v.abs() <= bound));
    let n = t.len() as f64;
    let mean = t.sum() / n;
    let var = t.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let expected = 2.0 / (fan_in + fan_out) as f64;
    assert!((var - expected).abs() < 0.1 * expected, "variance {var} vs {expected}");

    let a = xavier_init(&[7, 3], 4, 5, &mut ChaCha8Rng::seed_from_u64(9));
    let b = xavier_init(&[7, 3], 4, 5, &mut ChaCha8Rng::seed_from_u64(9));
    assert_eq!(a, b);
}

#[test]
fn init_zeroes_biases() {
    let model = AffordanceModel::new(&tiny_config(), 1).unwrap();
    for (name, t) in model.params().iter() {
        if name.ends_with("bias") {
            assert!(t.data().iter().all(|&v| v == 0.0), "{name}");
        } else {
            assert!(t.data().iter().any(|&v| v != 0.0), "{name}");
        }
    }
}

#[test]
fn adam_first_step_moves_by_lr_against_the_sign() {
    let mut p = vec![1.0, -2.0, 0.5];
    let g = vec![3.0, -0.2, 0.0];
    let (mut m, mut v) = (vec![0.0; 3], vec![0.0; 3]);
    adam_update(&mut p, &g, &mut m, &mut v, 0.01, 1, AdamParams::default());
    assert!((p[0] - 0.99).abs() < 1e-8);
    assert!((p[1] + 1.99).abs() < 1e-8);
    assert_eq!(p[2], 0.5);
}

#[test]
fn adam_zero_grad_decays_moments_only() {
    let mut p = vec![1.0];
    let (mut m, mut v) = (vec![0.4], vec![0.09]);
    adam_update(&mut p, &[0.0], &mut m, &mut v, 0.1, 5, AdamParams::default());
    assert!((m[0] - 0.36).abs() < 1e-15);
    assert!((v[0] - 0.09 * 0.999).abs() < 1e-15);
    let hp = AdamParams::default();
    let expected = 1.0 - 0.1 * (0.36 / (1.0 - hp.beta1.powi(5))) / ((0.08991 / (1.0 - hp.beta2.powi(5))).sqrt() + hp.eps);
    assert!((p[0] - expected).abs() < 1e-12);
}

#[test]
fn adam_three_steps_on_a_quadratic() {
    // f(x) = 1.5 x², gradient 3x, starting at x = 2 with lr 0.1.
    let (lr, b1, b2, eps) = (0.1f64, 0.9f64, 0.999f64, 1e-8f64);
    let mut x_ref = 2.0f64;
    let (mut m_ref, mut v_ref) = (0.0f64, 0.0f64);
    let mut trajectory = Vec::new();
    for t in 1..=3 {
        let g = 3.0 * x_ref;
        m_ref = b1 * m_ref + (1.0 - b1) * g;
        v_ref = b2 * v_ref + (1.0 - b2) * g * g;
        let step = lr * (m_ref / (1.0 - b1.powi(t))) / ((v_ref / (1.0 - b2.powi(t))).sqrt() + eps);
        x_ref -= step;
        trajectory.push(x_ref);
    }
    // Hand-evaluated: step 1 moves by exactly lr; later steps shrink slightly.
    assert!((trajectory[0] - 1.9).abs() < 1e-8);

    let mut params = ParamSet::new();
    params.insert("x", Tensor::scalar(2.0)).unwrap();
    let mut state = AdamState::new(&params);
    for &expected in &trajectory {
        let x = params.get("x").unwrap().item();
        let mut grads = ParamSet::new();
        grads.insert("x", Tensor::scalar(3.0 * x)).unwrap();
        adam_step(&mut params, &grads, &mut state, lr).unwrap();
        assert!((params.get("x").unwrap().item() - expected).abs() < 1e-12);
    }
    assert_eq!(state.t, 3);
}

#[test]
fn adam_step_touches_exactly_the_nonzero_gradients() {
    let model = AffordanceModel::new(&tiny_config(), 2).unwrap();
    let mut params = model.params().clone();
    let mut grads = params.zeros_like();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for t in grads.tensors_mut().iter_mut().step_by(2) {
        t.data_mut().iter_mut().for_each(|v| *v = rng.random_range(-1.0..1.0));
    }
    let before = params.clone();
    let mut state = AdamState::new(&params);
    adam_step(&mut params, &grads, &mut state, 1e-3).unwrap();
    for ((a, b), g) in before.tensors().iter().zip(params.tensors()).zip(grads.tensors()) {
        for ((x, y), d) in a.data().iter().zip(b.data()).zip(g.data()) {
            assert_eq!(*d != 0.0, x != y);
        }
    }
    let mut wrong = ParamSet::new();
    wrong.insert("x", Tensor::scalar(0.0)).unwrap();
    assert!(adam_step(&mut params, &wrong, &mut state, 1e-3).is_err());
}

#[test]
fn lambda_schedule_boundaries() {
    let paper = TrainConfig::paper();
    assert_eq!(lambda_schedule(0, &paper).unwrap(), (0.2, 0.8));
    assert_eq!(lambda_schedule(149, &paper).unwrap(), (0.2, 0.8));
    assert_eq!(lambda_schedule(150, &paper).unwrap(), (0.5, 0.5));
    assert_eq!(lambda_schedule(199, &paper).unwrap(), (0.5, 0.5));
    assert!(lambda_schedule(200, &paper).is_err());
    assert_eq!(switch_epoch_for(200), 150);
    assert_eq!(switch_epoch_for(300), 225);
    assert_eq!(switch_epoch_for(40), 30);
    let desk = TrainConfig::desk();
    assert_eq!(desk.schedule_switch_epoch, desk.epochs * 3 / 4);
    assert_eq!(switch_epoch_for(150), 112);
}

#[test]
fn config_validation() {
    assert!(TrainConfig::paper().validate().is_ok());
    assert!(TrainConfig::default().validate().is_ok());
    let bad = [
        TrainConfig { epochs: 0, ..TrainConfig::paper() },
        TrainConfig { schedule_switch_epoch: 200, ..TrainConfig::paper() },
        TrainConfig { lambda_early: (0.3, 0.3), ..TrainConfig::paper() },
        TrainConfig { learning_rate: 0.0, ..TrainConfig::paper() },
        TrainConfig { batch_size: 0, ..TrainConfig::paper() },
    ];
    for c in bad {
        assert!(matches!(c.validate(), Err(Error::Config(_))), "{c:?}");
    }
    let json = serde_json::to_string(&TrainConfig::paper()).unwrap();
    assert_eq!(serde_json::from_str::<TrainConfig>(&json).unwrap(), TrainConfig::paper());
    assert!(serde_json::from_str::<TrainConfig>(r#"{"epochs": 3, "bogus": 1}"#).is_err());
}

#[test]
fn history_follows_schedule_and_is_deterministic() {
    let config = tiny_config();
    let data = tiny_dataset(&config, 3, 2, 4);
    let tc = tiny_train(4, 2);
    let a = train(&config, &tc, &data).unwrap();
    let b = train(&config, &tc, &data).unwrap();
    assert_eq!(a.history.len(), 4);
    for (r, s) in a.history.iter().zip(&b.history) {
        assert_eq!(r.l_total.to_bits(), s.l_total.to_bits());
        assert_eq!((r.lambda1, r.lambda2), lambda_schedule(r.epoch, &tc).unwrap());
        assert!((r.l_total - (r.lambda1 * r.l_seg + r.lambda2 * r.l_action)).abs() < 1e-12);
    }
    assert_eq!(a.history[2].lambda1, 0.2);
    assert_eq!(a.history[3].lambda1, 0.5);
    assert_eq!(a.model.params(), b.model.params());
    let csv = history_csv(&a.history);
    assert!(csv.starts_with("epoch,lambda1,lambda2,l_total,l_seg,l_action\n"));
    assert_eq!(csv.lines().count(), 5);
}

#[test]
fn batch_gradient_is_the_mean_of_sequence_gradients() {
    let config = tiny_config();
    let data = tiny_dataset(&config, 2, 2, 6);
    let tc = tiny_train(4, 2);
    let mut state = TrainState::new(&config, &tc).unwrap();
    let start = state.model.clone();
    state.run_epoch(&data).unwrap();

    let (l1, l2) = lambda_schedule(0, &tc).unwrap();
    let (_, ga) = start.loss_and_grads(&data[0], l1, l2).unwrap();
    let (_, gb) = start.loss_and_grads(&data[1], l1, l2).unwrap();
    let mut mean = ga.clone();
    for (m, b) in mean.tensors_mut().iter_mut().zip(gb.tensors()) {
        m.data_mut().iter_mut().zip(b.data()).for_each(|(x, y)| *x = (*x + y) / 2.0);
    }
    let mut expected = start.params().clone();
    let mut adam = AdamState::new(&expected);
    adam_step(&mut expected, &mean, &mut adam, tc.learning_rate).unwrap();
    for (a, b) in expected.tensors().iter().zip(state.model.params().tensors()) {
        assert!(a.max_abs_diff(b) < 1e-10);
    }
}

#[test]
fn earlier_frames_act_only_through_recurrent_state() {
    let config = tiny_config();
    let mut model = AffordanceModel::new(&config, 7).unwrap();
    let data = tiny_dataset(&config, 1, 3, 8);
    let mut perturbed = data[0].clone();
    for f in &mut perturbed.frames[..2] {
        f.appearance.data_mut().iter_mut().for_each(|v| *v = 1.0 - *v);
    }
    let a = model.loss(&data[0], 0.5, 0.5).unwrap();
    let b = model.loss(&perturbed, 0.5, 0.5).unwrap();
    assert_ne!(a.total, b.total);

    let names = model.params().names().to_vec();
    for (name, t) in names.iter().zip(model.params_mut().tensors_mut()) {
        if name.starts_with("latent.lstm1") {
            t.data_mut().fill(0.0);
        }
    }
    let a = model.loss(&data[0], 0.5, 0.5).unwrap();
    let b = model.loss(&perturbed, 0.5, 0.5).unwrap();
    assert_eq!(a.total.to_bits(), b.total.to_bits());
}

#[test]
fn divergence_reports_epoch_and_batch() {
    let config = tiny_config();
    let data = tiny_dataset(&config, 2, 1, 9);
    let mut state = TrainState::new(&config, &tiny_train(2, 1)).unwrap();
    state.model.params_mut().get_mut("head.fc3.bias").unwrap().data_mut()[0] = f64::NAN;
    match state.run_epoch(&data) {
        Err(Error::Divergence { epoch: 0, batch: 0 }) => {}
        other => panic!("unexpected {other:?}"),
    }
    let mut state = TrainState::new(&config, &tiny_train(2, 1)).unwrap();
    assert!(matches!(state.run_epoch(&[]), Err(Error::Empty(_))));
}

#[test]
fn checkpoint_round_trip_is_byte_identical() {
    let config = tiny_config();
    let data = tiny_dataset(&config, 2, 2, 10);
    let mut state = TrainState::new(&config, &tiny_train(3, 1)).unwrap();
    state.run_epoch(&data).unwrap();
    let bytes = encode_checkpoint(&state).unwrap();
    assert_eq!(&bytes[..8], CHECKPOINT_MAGIC);
    let back = decode_checkpoint(&bytes).unwrap();
    assert_eq!(encode_checkpoint(&back).unwrap(), bytes);
    assert_eq!(back.epoch, 1);
    assert_eq!(back.adam, state.adam);
    assert_eq!(back.history, state.history);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ck.bin");
    save_checkpoint(&state, &path).unwrap();
    let loaded = load_checkpoint(&path).unwrap();
    save_checkpoint(&loaded, &dir.path().join("ck2.bin")).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(dir.path().join("ck2.bin")).unwrap());
}

#[test]
fn checkpoint_corruption_is_diagnosed() {
    let config = tiny_config();
    let state = TrainState::new(&config, &tiny_train(2, 1)).unwrap();
    let bytes = encode_checkpoint(&state).unwrap();

    let mut magic = bytes.clone();
    magic[0] = b'X';
    assert!(matches!(decode_checkpoint(&magic), Err(Error::CheckpointMagic)));
    assert!(matches!(decode_checkpoint(&bytes[..4]), Err(Error::CheckpointMagic)));

    let mut version = bytes.clone();
    version[8..12].copy_from_slice(&2u32.to_le_bytes());
    assert!(matches!(
        decode_checkpoint(&version),
        Err(Error::CheckpointVersion { found: 2, expected: 1 })
    ));

    for cut in [10, 20, bytes.len() / 2, bytes.len() - 1] {
        assert!(matches!(decode_checkpoint(&bytes[..cut]), Err(Error::CheckpointTruncated(_))), "cut at {cut}");
    }
    let mut trailing = bytes.clone();
    trailing.push(0);
    assert!(matches!(decode_checkpoint(&trailing), Err(Error::CheckpointMismatch(_))));
}

#[test]
fn checkpoint_config_mismatch_is_an_error() {
    let config = tiny_config();
    let state = TrainState::new(&config, &tiny_train(2, 1)).unwrap();
    let back = decode_checkpoint(&encode_checkpoint(&state).unwrap()).unwrap();
    assert!(back.ensure_model_config(&config).is_ok());
    let other = config.clone().with_variant(crate::model::Variant::Rgb);
    assert!(matches!(back.ensure_model_config(&other), Err(Error::CheckpointMismatch(_))));
    let wider = ModelConfig { base_width: 4, ..config };
    assert!(AffordanceModel::from_params(&wider, back.model.params().clone()).is_err());
}

#[test]
fn resume_equals_uninterrupted_training() {
    let config = tiny_config();
    let data = tiny_dataset(&config, 3, 2, 11);
    let tc = tiny_train(4, 2);
    let full = train(&config, &tc, &data).unwrap();

    let mut first = TrainState::new(&config, &tc).unwrap();
    first.run_epoch(&data).unwrap();
    first.run_epoch(&data).unwrap();
    let mut resumed = decode_checkpoint(&encode_checkpoint(&first).unwrap()).unwrap();
    drop(first);
    resumed.run(&data, |_| Ok(())).unwrap();
    assert!(resumed.is_finished());
    assert_eq!(resumed.history, full.history);
    assert_eq!(resumed.model.params(), full.model.params());
    assert_eq!(resumed.adam, full.adam);
}
