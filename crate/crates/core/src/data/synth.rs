use std::collections::BTreeMap;
use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI, TAU};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{action_for_affordance, affordance_index, InteractionSequence, RgbdFrame, AFFORDANCES};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// Household objects and the affordances each can present.
pub const OBJECTS: [(&str, &[&str]); 10] = [
    ("mug", &["grasp", "lift"]),
    ("pitcher", &["grasp", "lift"]),
    ("knife", &["grasp", "cut"]),
    ("hammer", &["grasp", "hammer"]),
    ("brush", &["grasp", "paint"]),
    ("bottle", &["lift", "rotate"]),
    ("jar", &["rotate"]),
    ("stapler", &["push"]),
    ("spray", &["push", "squeeze"]),
    ("keyboard", &["type"]),
];

/// Hand path parameters; drawn from the seed when not given.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryParams {
    /// Offset (radians) added to the affordance's canonical approach direction.
    pub approach_jitter: f64,
    /// Extent of the interaction motion in pixels at 64×64.
    pub amplitude: f64,
}

/// What to render.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub affordance: String,
    pub object: Option<String>,
    pub trajectory: Option<TrajectoryParams>,
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub fps: u32,
}

impl SyntheticSpec {
    pub fn new(affordance: &str) -> Self {
        SyntheticSpec {
            affordance: affordance.to_string(),
            object: None,
            trajectory: None,
            frames: 12,
            height: 64,
            width: 64,
            fps: 30,
        }
    }

    /// Uniformly random affordance with default geometry.
    pub fn sample<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let idx = rng.random_range(1..AFFORDANCES.len());
        Self::new(AFFORDANCES[idx])
    }
}

#[derive(Clone, Copy, Debug)]
enum Shape {
    Rect,
    Ellipse,
}

/// Appearance and motion signature of one affordance.
struct Style {
    color: [f64; 3],
    shape: Shape,
    half: (f64, f64),
    approach: f64,
}

fn style(affordance: usize) -> Style {
    let (color, shape, half, approach) = match affordance {
        1 => ([0.55, 0.35, 0.15], Shape::Rect, (3.0, 7.0), 0.0),
        2 => ([0.85, 0.85, 0.92], Shape::Rect, (9.0, 2.5), PI),
        3 => ([0.20, 0.45, 0.85], Shape::Ellipse, (7.0, 4.0), FRAC_PI_2),
        4 => ([0.90, 0.15, 0.15], Shape::Rect, (3.5, 3.5), -FRAC_PI_2),
        5 => ([0.95, 0.80, 0.10], Shape::Ellipse, (4.5, 4.5), -FRAC_PI_4),
        6 => ([0.12, 0.12, 0.12], Shape::Rect, (6.0, 4.0), -FRAC_PI_2),
        7 => ([0.20, 0.75, 0.30], Shape::Ellipse, (3.5, 6.0), FRAC_PI_4),
        8 => ([0.70, 0.30, 0.75], Shape::Rect, (2.5, 6.0), 3.0 * FRAC_PI_4),
        9 => ([0.95, 0.55, 0.10], Shape::Rect, (8.0, 4.0), -3.0 * FRAC_PI_4),
        _ => unreachable!("background has no style"),
    };
    Style {
        color,
        shape,
        half,
        approach,
    }
}

const SKIN: [f64; 3] = [0.92, 0.72, 0.60];

struct Blob {
    cx: f64,
    cy: f64,
    hx: f64,
    hy: f64,
    shape: Shape,
}

impl Blob {
    fn contains(&self, x: f64, y: f64) -> bool {
        let (dx, dy) = ((x - self.cx) / self.hx, (y - self.cy) / self.hy);
        match self.shape {
            Shape::Rect => dx.abs() <= 1.0 && dy.abs() <= 1.0,
            Shape::Ellipse => dx * dx + dy * dy <= 1.0,
        }
    }
}

/// Hand offset from the part centre and (depth delta, radius scale) during
/// the interaction phase, `v ∈ [0, 1]`.
fn interaction_motion(affordance: usize, v: f64, amp: f64) -> ((f64, f64), f64, f64) {
    match affordance {
        1 => ((0.0, 0.0), 0.04 * v, 1.0),
        2 => ((amp * (TAU * 1.5 * v).sin(), 0.0), 0.0, 1.0),
        3 => ((0.0, -amp * v), -0.05 * v, 1.0),
        4 => ((0.0, 0.3 * amp * v), 0.08 * v, 1.0),
        5 => {
            let r = 0.6 * amp;
            ((r * (TAU * v).cos() - r, r * (TAU * v).sin()), 0.0, 1.0)
        }
        6 => ((0.0, -amp * (TAU * 1.5 * v).sin().abs()), 0.0, 1.0),
        7 => ((0.0, 0.0), 0.0, 1.0 - 0.35 * (TAU * v).sin().abs()),
        8 => {
            let tri = 2.0 * ((3.0 * v) % 1.0 - 0.5).abs() * 2.0 - 1.0;
            ((0.8 * amp * tri, 0.6 * amp * v - 0.3 * amp), 0.0, 1.0)
        }
        9 => ((0.25 * amp * (2.0 * TAU * v).sin(), 0.0), 0.06 * (2.0 * TAU * v).sin().abs(), 1.0),
        _ => unreachable!(),
    }
}

fn smoothstep(t: f64) -> f64 {
    let t = t.clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

/// Smooth value noise in roughly `[-1, 1]`: bilinear interpolation of a coarse random grid.
fn value_noise<R: Rng>(rng: &mut R, h: usize, w: usize, cells: usize) -> Vec<f64> {
    let g = cells + 1;
    let grid: Vec<f64> = (0..g * g).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mut out = Vec::with_capacity(h * w);
    for y in 0..h {
        let fy = y as f64 / h as f64 * cells as f64;
        let (y0, ty) = (fy.floor() as usize, fy - fy.floor());
        for x in 0..w {
            let fx = x as f64 / w as f64 * cells as f64;
            let (x0, tx) = (fx.floor() as usize, fx - fx.floor());
            let at = |yy: usize, xx: usize| grid[yy * g + xx];
            let top = at(y0, x0) * (1.0 - tx) + at(y0, x0 + 1) * tx;
            let bot = at(y0 + 1, x0) * (1.0 - tx) + at(y0 + 1, x0 + 1) * tx;
            out.push(top * (1.0 - ty) + bot * ty);
        }
    }
    out
}

/// Renders a procedural interaction: a static two-part object and a hand
/// blob that approaches the affordance part, performs the affordance's
/// characteristic motion and leaves before the final (annotated) frame.
pub fn generate_synthetic_sequence(spec: &SyntheticSpec, seed: u64) -> Result<InteractionSequence> {
    let affordance = affordance_index(&spec.affordance)?;
    if spec.frames < 2 {
        return Err(Error::Config("a synthetic sequence needs at least 2 frames".into()));
    }
    if spec.height < 16 || spec.width < 16 {
        return Err(Error::Config("synthetic frames must be at least 16×16".into()));
    }
    let object = match &spec.object {
        Some(o) => {
            let (_, supported) = OBJECTS
                .iter()
                .find(|(name, _)| name == o)
                .ok_or_else(|| Error::Config(format!("unknown object `{o}`")))?;
            if !supported.contains(&spec.affordance.as_str()) {
                return Err(Error::Config(format!("object `{o}` does not afford `{}`", spec.affordance)));
            }
            o.clone()
        }
        None => String::new(),
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let object = if object.is_empty() {
        let candidates: Vec<&str> = OBJECTS
            .iter()
            .filter(|(_, affs)| affs.contains(&spec.affordance.as_str()))
            .map(|(name, _)| *name)
            .collect();
        candidates[rng.random_range(0..candidates.len())].to_string()
    } else {
        object
    };
    let traj = spec.trajectory.unwrap_or_else(|| TrajectoryParams {
        approach_jitter: rng.random_range(-0.4..0.4),
        amplitude: rng.random_range(5.0..8.0),
    });

    let (h, w) = (spec.height, spec.width);
    let s = w.min(h) as f64 / 64.0;
    let st = style(affordance);

    // Static scene.
    let noise = value_noise(&mut rng, h, w, 8);
    let bg = [0.78, 0.72, 0.62];
    let mut rgb = vec![0.0; 3 * h * w];
    let mut depth = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let n = 0.08 * noise[i] + rng.random_range(-0.02..0.02);
            for c in 0..3 {
                rgb[c * h * w + i] = bg[c] + n;
            }
            depth[i] = 0.8 + 0.05 * y as f64 / h as f64;
        }
    }

    // The object's geometry depends only on the object and the seed, never
    // on which of its affordances is being demonstrated: a two-affordance
    // object shows both parts and only the interaction tells them apart.
    let affs: Vec<usize> = OBJECTS
        .iter()
        .find(|(name, _)| *name == object)
        .map(|(_, a)| a.iter().map(|n| affordance_index(n).expect("taxonomy name")).collect())
        .unwrap_or_default();
    let jitter = |rng: &mut ChaCha8Rng, base: [f64; 3]| -> [f64; 3] { std::array::from_fn(|c| base[c] + rng.random_range(-0.06..0.06)) };
    let (anchor_aff, attached_aff) = match affs.as_slice() {
        [a, b] => (Some(*a), *b),
        _ => (None, affordance),
    };
    let (cx, cy) = (
        w as f64 / 2.0 + rng.random_range(-6.0..6.0) * s,
        h as f64 / 2.0 + rng.random_range(-4.0..8.0) * s,
    );
    let (anchor, anchor_color) = match anchor_aff {
        Some(a) => {
            let sa = style(a);
            let size = rng.random_range(0.85..1.15);
            let blob = Blob {
                cx,
                cy,
                hx: 1.5 * sa.half.0 * size * s,
                hy: 1.5 * sa.half.1 * size * s,
                shape: sa.shape,
            };
            (blob, jitter(&mut rng, sa.color))
        }
        None => {
            let gray = rng.random_range(0.3..0.55);
            let color: [f64; 3] = std::array::from_fn(|_| gray + rng.random_range(-0.05..0.05));
            let blob = Blob {
                cx,
                cy,
                hx: rng.random_range(7.0..10.0) * s,
                hy: rng.random_range(5.0..7.0) * s,
                shape: if rng.random_bool(0.5) { Shape::Rect } else { Shape::Ellipse },
            };
            (blob, color)
        }
    };
    let sb = style(attached_aff);
    let size = rng.random_range(0.85..1.15);
    let (phx, phy) = (1.5 * sb.half.0 * size * s, 1.5 * sb.half.1 * size * s);
    let (mut pcx, mut pcy) = match rng.random_range(0..3) {
        0 => (anchor.cx, anchor.cy - anchor.hy - phy + 1.0),
        1 => (anchor.cx - anchor.hx - phx + 1.0, anchor.cy),
        _ => (anchor.cx + anchor.hx + phx - 1.0, anchor.cy),
    };
    pcx = pcx.clamp(phx + 1.0, w as f64 - phx - 2.0);
    pcy = pcy.clamp(phy + 1.0, h as f64 - phy - 2.0);
    let attached = Blob {
        cx: pcx,
        cy: pcy,
        hx: phx,
        hy: phy,
        shape: sb.shape,
    };
    let attached_color = jitter(&mut rng, sb.color);
    let anchor_label = anchor_aff.filter(|&a| a == affordance).map_or(0, |a| a as u8);
    let attached_label = if attached_aff == affordance { affordance as u8 } else { 0 };

    let mut mask = vec![0u8; h * w];
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let (fx, fy) = (x as f64 + 0.5, y as f64 + 0.5);
            let tex = rng.random_range(-0.03..0.03);
            if attached.contains(fx, fy) {
                for c in 0..3 {
                    rgb[c * h * w + i] = attached_color[c] + tex;
                }
                depth[i] = 0.58;
                mask[i] = attached_label;
            } else if anchor.contains(fx, fy) {
                for c in 0..3 {
                    rgb[c * h * w + i] = anchor_color[c] + tex;
                }
                depth[i] = 0.62;
                mask[i] = anchor_label;
            } else if rng.random_bool(0.002) {
                depth[i] = 0.0;
            }
        }
    }
    let part = if attached_label != 0 { &attached } else { &anchor };

    // Hand path.
    let angle = st.approach + traj.approach_jitter;
    let reach = 26.0 * s;
    let start = (part.cx + reach * angle.cos(), part.cy + reach * angle.sin());
    let skin: [f64; 3] = std::array::from_fn(|c| SKIN[c] + rng.random_range(-0.04..0.04));
    let hand_radius = rng.random_range(4.5..6.0) * s;
    let hand_tex: Vec<f64> = (0..h * w).map(|_| rng.random_range(-0.03..0.03)).collect();
    let active = spec.frames - 1;

    let mut frames = Vec::with_capacity(spec.frames);
    for t in 0..spec.frames {
        let mut frame_rgb = rgb.clone();
        let mut frame_depth = depth.clone();
        if t < active {
            let u = if active > 1 { t as f64 / (active - 1) as f64 } else { 1.0 };
            let (pos, dz, rscale) = if u <= 0.5 {
                let k = smoothstep(u / 0.5);
                ((start.0 + (part.cx - start.0) * k, start.1 + (part.cy - start.1) * k), 0.0, 1.0)
            } else {
                let v = (u - 0.5) / 0.5;
                let ((ox, oy), dz, r) = interaction_motion(affordance, v, traj.amplitude * s);
                ((part.cx + ox, part.cy + oy), dz, r)
            };
            let hand = Blob {
                cx: pos.0,
                cy: pos.1,
                hx: hand_radius * rscale,
                hy: hand_radius * rscale * 1.2,
                shape: Shape::Ellipse,
            };
            for y in 0..h {
                for x in 0..w {
                    if hand.contains(x as f64 + 0.5, y as f64 + 0.5) {
                        let i = y * w + x;
                        for c in 0..3 {
                            frame_rgb[c * h * w + i] = skin[c] + hand_tex[i];
                        }
                        frame_depth[i] = 0.45 + dz;
                    }
                }
            }
        }
        frame_rgb.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
        frame_depth.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
        frames.push(RgbdFrame::new(
            Tensor::new(vec![3, h, w], frame_rgb)?,
            Tensor::new(vec![1, h, w], frame_depth)?,
        )?);
    }

    Ok(InteractionSequence {
        frames,
        affordance_mask: mask,
        action: action_for_affordance(affordance),
        object,
        fps: spec.fps,
        cached_flow: BTreeMap::new(),
    })
}
