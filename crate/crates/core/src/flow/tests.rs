use super::*;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Smooth random texture: uniform noise blurred by a 3×3 box, sampled at
/// `(y, x)` from a larger canvas so shifted copies stay consistent.
fn texture(h: usize, w: usize, seed: u64) -> impl Fn(isize, isize) -> f64 {
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

fn frame_from(h: usize, w: usize, lum: impl Fn(usize, usize) -> f64, depth: impl Fn(usize, usize) -> f64) -> RgbdFrame {
    let n = h * w;
    let rgb = Tensor::from_fn(&[3, h, w], |i| {
        let p = i % n;
        lum(p / w, p % w)
    });
    let d = Tensor::from_fn(&[1, h, w], |p| depth(p / w, p % w));
    RgbdFrame::new(rgb, d).unwrap()
}

/// Textured square on a flat background, with the square shifted by `(dx, dy)`.
fn square_frame(h: usize, w: usize, seed: u64, dx: isize, dy: isize) -> RgbdFrame {
    let tex = texture(h, w, seed);
    let (y0, y1, x0, x1) = (h as isize / 4, 3 * h as isize / 4, w as isize / 4, 3 * w as isize / 4);
    frame_from(
        h,
        w,
        |y, x| {
            let (sy, sx) = (y as isize - dy, x as isize - dx);
            if (y0..y1).contains(&sy) && (x0..x1).contains(&sx) {
                tex(sy, sx)
            } else {
                0.5
            }
        },
        |_, _| 0.5,
    )
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    v[v.len() / 2]
}

/// Flow components over the square's interior (margin keeps patches inside).
fn interior(field: &FlowField, axis: usize, margin: usize) -> Vec<f64> {
    let (h, w) = (field.height(), field.width());
    let mut out = Vec::new();
    for y in h / 4 + margin..3 * h / 4 - margin {
        for x in w / 4 + margin..3 * w / 4 - margin {
            out.push(field.vector(y, x)[axis]);
        }
    }
    out
}

#[test]
fn identical_frames_give_zero_field() {
    let f = square_frame(32, 32, 1, 0, 0);
    let field = estimate_scene_flow(&f, &f, &CameraIntrinsics::for_image(32, 32)).unwrap();
    assert!(field.planes().iter().all(|&v| v == 0.0));
}

#[test]
fn translated_square_is_recovered() {
    let (h, w) = (48, 48);
    let k = CameraIntrinsics::for_image(h, w);
    let a = square_frame(h, w, 3, 0, 0);
    let b = square_frame(h, w, 3, 2, 0);
    let field = estimate_scene_flow(&a, &b, &k).unwrap();
    let mx = median(interior(&field, 0, 4));
    let my = median(interior(&field, 1, 4));
    assert!((mx - 2.0).abs() <= 0.5, "median vx {mx}");
    assert!(my.abs() <= 0.5, "median vy {my}");
}

#[test]
fn diagonal_translation_is_recovered() {
    let (h, w) = (48, 48);
    let k = CameraIntrinsics::for_image(h, w);
    let a = square_frame(h, w, 5, 0, 0);
    let b = square_frame(h, w, 5, -3, 2);
    let field = estimate_scene_flow(&a, &b, &k).unwrap();
    assert!((median(interior(&field, 0, 4)) + 3.0).abs() <= 0.5);
    assert!((median(interior(&field, 1, 4)) - 2.0).abs() <= 0.5);
}

#[test]
fn translation_flow_is_antisymmetric() {
    let (h, w) = (48, 48);
    let k = CameraIntrinsics::for_image(h, w);
    let a = square_frame(h, w, 9, 0, 0);
    let b = square_frame(h, w, 9, 2, -1);
    let fwd = estimate_scene_flow(&a, &b, &k).unwrap();
    let bwd = estimate_scene_flow(&b, &a, &k).unwrap();
    for axis in 0..2 {
        let f = median(interior(&fwd, axis, 5));
        let r = median(interior(&bwd, axis, 5));
        assert!((f + r).abs() <= 0.5, "axis {axis}: forward {f} backward {r}");
    }
}

#[test]
fn uniform_depth_decrease_gives_vz() {
    let (h, w) = (32, 32);
    let tex = texture(h, w, 2);
    let a = frame_from(h, w, |y, x| tex(y as isize, x as isize), |_, _| 0.6);
    let b = frame_from(h, w, |y, x| tex(y as isize, x as isize), |_, _| 0.5);
    let field = estimate_scene_flow(&a, &b, &CameraIntrinsics::for_image(h, w)).unwrap();
    for &vz in field.axis(2) {
        assert!((vz + 0.1).abs() <= 1e-3, "vz {vz}");
    }
}

#[test]
fn invalid_depth_gives_zero_vector() {
    let (h, w) = (32, 32);
    let tex = texture(h, w, 4);
    let hole = |y: usize, x: usize| if (10..14).contains(&y) && (10..14).contains(&x) { 0.0 } else { 0.5 };
    let a = frame_from(h, w, |y, x| tex(y as isize, x as isize), hole);
    let b = frame_from(h, w, |y, x| tex(y as isize, x as isize - 1), |_, _| 0.4);
    let field = estimate_scene_flow(&a, &b, &CameraIntrinsics::for_image(h, w)).unwrap();
    for y in 10..14 {
        for x in 10..14 {
            assert_eq!(field.vector(y, x), [0.0; 3]);
        }
    }
    let b_hole = frame_from(h, w, |y, x| tex(y as isize, x as isize), hole);
    let a_full = frame_from(h, w, |y, x| tex(y as isize, x as isize), |_, _| 0.5);
    let field = estimate_scene_flow(&a_full, &b_hole, &CameraIntrinsics::for_image(h, w)).unwrap();
    assert_eq!(field.vector(12, 12), [0.0; 3]);
}

#[test]
fn extent_mismatch_errors() {
    let a = square_frame(16, 16, 0, 0, 0);
    let b = square_frame(16, 24, 0, 0, 0);
    let err = estimate_scene_flow(&a, &b, &CameraIntrinsics::for_image(16, 16)).unwrap_err();
    assert!(matches!(err, Error::Shape { .. }), "{err}");
}

#[test]
fn bad_intrinsics_error() {
    let a = square_frame(16, 16, 0, 0, 0);
    let k = CameraIntrinsics {
        fx: 0.0,
        fy: 1.0,
        cx: 0.0,
        cy: 0.0,
    };
    assert!(matches!(estimate_scene_flow(&a, &a, &k), Err(Error::Config(_))));
}

#[test]
fn zero_field_colorizes_to_mid_gray() {
    let img = colorize_flow(&FlowField::zeros(5, 7));
    assert!(img.data.iter().all(|&c| c == ZERO_MOTION_CODE));
}

#[test]
fn three_values_colorize_with_half_up_rounding() {
    let mut v = vec![-1.0, 0.0, 1.0];
    v.extend([0.0; 3]);
    v.extend([2.0, 2.0, 2.0]);
    let img = colorize_flow(&FlowField::from_planes(1, 3, v).unwrap());
    assert_eq!(img.channel(0), &[0, 128, 255]);
    assert_eq!(img.channel(1), &[128, 128, 128]);
    assert_eq!(img.channel(2), &[128, 128, 128]);
}

#[test]
fn two_d_tensor_replaces_depth_axis() {
    let mut v: Vec<f64> = (0..12).map(|i| i as f64).collect();
    v.extend((0..12).map(|i| -(i as f64)));
    v.extend((0..12).map(|i| (i * i) as f64));
    let img = colorize_flow(&FlowField::from_planes(3, 4, v).unwrap());
    let t3 = img.to_tensor(FlowDim::ThreeD);
    let t2 = img.to_tensor(FlowDim::TwoD);
    assert_eq!(&t3.data()[..24], &t2.data()[..24]);
    assert!(t2.data()[24..].iter().all(|&x| x == 128.0 / 255.0));
    assert_eq!(t3.data()[35], 1.0);
}

#[test]
fn from_planes_rejects_bad_input() {
    assert!(FlowField::from_planes(2, 2, vec![0.0; 11]).is_err());
    let mut v = vec![0.0; 12];
    v[3] = f64::NAN;
    assert!(FlowField::from_planes(2, 2, v).is_err());
}

#[test]
fn metric_motion_of_pure_depth_change() {
    let (h, w) = (4, 4);
    let prev = frame_from(h, w, |_, _| 0.5, |_, _| 0.5);
    let mut v = vec![0.0; 3 * h * w];
    v[2 * h * w..].iter_mut().for_each(|x| *x = -0.1);
    let field = FlowField::from_planes(h, w, v).unwrap();
    let k = CameraIntrinsics::for_image(h, w);
    let m = field.metric_motion(&prev, &k, 4.5);
    for (i, d) in m.iter().enumerate() {
        assert!((d[2] + 0.45).abs() < 1e-12);
        let (y, x) = ((i / w) as f64, (i % w) as f64);
        assert!((d[0] - (x - k.cx) * -0.45 / k.fx).abs() < 1e-12);
        assert!((d[1] - (y - k.cy) * -0.45 / k.fy).abs() < 1e-12);
    }
}

fn field_strategy() -> impl Strategy<Value = (usize, usize, Vec<f64>)> {
    (1usize..6, 1usize..6).prop_flat_map(|(h, w)| (Just(h), Just(w), prop::collection::vec(-20.0f64..20.0, 3 * h * w)))
}

proptest! {
    #[test]
    fn colorize_endpoints((h, w, v) in field_strategy()) {
        let field = FlowField::from_planes(h, w, v).unwrap();
        let img = colorize_flow(&field);
        for axis in 0..3 {
            let vals = field.axis(axis);
            let ch = img.channel(axis);
            let (lo, hi) = vals.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
            if hi > lo {
                let imin = vals.iter().position(|&x| x == lo).unwrap();
                let imax = vals.iter().position(|&x| x == hi).unwrap();
                prop_assert_eq!(ch[imin], 0);
                prop_assert_eq!(ch[imax], 255);
            } else {
                prop_assert!(ch.iter().all(|&c| c == ZERO_MOTION_CODE));
            }
        }
    }

    #[test]
    fn colorize_invariant_to_positive_affine((h, w, v) in field_strategy(), scale in 0.1f64..10.0, shift in -5.0f64..5.0) {
        let a = colorize_flow(&FlowField::from_planes(h, w, v.clone()).unwrap());
        let scaled: Vec<f64> = v.iter().map(|x| x * scale + shift).collect();
        let b = colorize_flow(&FlowField::from_planes(h, w, scaled).unwrap());
        for (x, y) in a.data.iter().zip(&b.data) {
            prop_assert!((*x as i32 - *y as i32).abs() <= 1);
        }
    }
}

