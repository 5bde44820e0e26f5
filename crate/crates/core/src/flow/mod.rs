//! Dense RGB-D scene flow between consecutive frames and its colorization
//! into a 3-channel 8-bit image.
//!
//! Image-plane motion comes from coarse-to-fine block matching (sum of
//! absolute differences over grayscale patches, quadratic sub-pixel
//! refinement). Each level searches around both zero motion and the
//! median-filtered estimate propagated from the coarser level. The depth
//! component is the change in depth along the matched correspondence.

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::data::RgbdFrame;
use crate::error::{Error, Result};
use crate::model::FlowDim;

/// Code written for an axis with no spread (e.g. a motionless scene).
pub const ZERO_MOTION_CODE: u8 = 128;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl CameraIntrinsics {
    /// Pinhole camera with a focal length equal to the image width and the
    /// principal point at the image centre.
    pub fn for_image(height: usize, width: usize) -> Self {
        CameraIntrinsics {
            fx: width as f64,
            fy: width as f64,
            cx: (width as f64 - 1.0) / 2.0,
            cy: (height as f64 - 1.0) / 2.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.fx > 0.0 && self.fy > 0.0 && self.cx.is_finite() && self.cy.is_finite();
        if !ok {
            return Err(Error::Config(format!("invalid camera intrinsics {self:?}")));
        }
        Ok(())
    }

    /// Back-projects pixel `(x, y)` at metric depth `z` to camera coordinates.
    pub fn backproject(&self, x: f64, y: f64, z: f64) -> [f64; 3] {
        [(x - self.cx) * z / self.fx, (y - self.cy) * z / self.fy, z]
    }
}

/// Block-matching parameters.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MatchParams {
    pub levels: usize,
    pub patch: usize,
    pub radius: usize,
}

impl Default for MatchParams {
    fn default() -> Self {
        MatchParams {
            levels: 3,
            patch: 7,
            radius: 4,
        }
    }
}

/// Per-pixel motion `(vx, vy, vz)`: image motion in pixels and the depth
/// change in the frames' depth units, stored as three `H×W` planes.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowField {
    height: usize,
    width: usize,
    vectors: Vec<f64>,
}

impl FlowField {
    pub fn zeros(height: usize, width: usize) -> Self {
        FlowField {
            height,
            width,
            vectors: vec![0.0; 3 * height * width],
        }
    }

    pub fn from_planes(height: usize, width: usize, vectors: Vec<f64>) -> Result<Self> {
        if vectors.len() != 3 * height * width {
            return Err(Error::shape("flow field", format!("{} values for 3×{height}×{width}", vectors.len())));
        }
        if vectors.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { op: "flow field" });
        }
        Ok(FlowField { height, width, vectors })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// Plane `axis` (0 = x, 1 = y, 2 = z).
    pub fn axis(&self, axis: usize) -> &[f64] {
        let n = self.height * self.width;
        &self.vectors[axis * n..(axis + 1) * n]
    }

    pub fn vector(&self, y: usize, x: usize) -> [f64; 3] {
        let i = y * self.width + x;
        let n = self.height * self.width;
        [self.vectors[i], self.vectors[n + i], self.vectors[2 * n + i]]
    }

    pub fn planes(&self) -> &[f64] {
        &self.vectors
    }

    /// Metric 3-D displacement of every pixel, back-projecting through the
    /// camera with depth values scaled by `depth_range`.
    pub fn metric_motion(&self, prev: &RgbdFrame, intrinsics: &CameraIntrinsics, depth_range: f64) -> Vec<[f64; 3]> {
        let mut out = Vec::with_capacity(self.height * self.width);
        for y in 0..self.height {
            for x in 0..self.width {
                let [vx, vy, vz] = self.vector(y, x);
                let z0 = prev.depth_at(y, x) * depth_range;
                if z0 <= 0.0 {
                    out.push([0.0; 3]);
                    continue;
                }
                let p0 = intrinsics.backproject(x as f64, y as f64, z0);
                let p1 = intrinsics.backproject(x as f64 + vx, y as f64 + vy, z0 + vz * depth_range);
                out.push([p1[0] - p0[0], p1[1] - p0[1], p1[2] - p0[2]]);
            }
        }
        out
    }
}

/// Colorized flow: three `H×W` planes of 8-bit codes (x, y, z axes).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FlowImage {
    pub height: usize,
    pub width: usize,
    pub data: Vec<u8>,
}

impl FlowImage {
    pub fn uniform(height: usize, width: usize, code: u8) -> Self {
        FlowImage {
            height,
            width,
            data: vec![code; 3 * height * width],
        }
    }

    pub fn channel(&self, c: usize) -> &[u8] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }

    /// Network input in `[0, 1]`. The 2-D variant replaces the depth axis by
    /// the zero-motion code.
    pub fn to_tensor(&self, dim: FlowDim) -> Tensor {
        let n = self.height * self.width;
        Tensor::from_fn(&[3, self.height, self.width], |i| {
            let code = if dim == FlowDim::TwoD && i >= 2 * n {
                ZERO_MOTION_CODE
            } else {
                self.data[i]
            };
            f64::from(code) / 255.0
        })
    }
}

/// Normalizes each axis independently to `[0, 255]` (round half up); an
/// axis whose values are all equal maps to [`ZERO_MOTION_CODE`].
pub fn colorize_flow(field: &FlowField) -> FlowImage {
    let mut data = Vec::with_capacity(field.vectors.len());
    for axis in 0..3 {
        let values = field.axis(axis);
        let (min, max) = values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        if max > min {
            let span = max - min;
            data.extend(values.iter().map(|&v| (255.0 * (v - min) / span + 0.5).floor().clamp(0.0, 255.0) as u8));
        } else {
            data.extend(std::iter::repeat_n(ZERO_MOTION_CODE, values.len()));
        }
    }
    FlowImage {
        height: field.height,
        width: field.width,
        data,
    }
}

/// Scene flow from `prev` to `next` with default matching parameters.
pub fn estimate_scene_flow(prev: &RgbdFrame, next: &RgbdFrame, intrinsics: &CameraIntrinsics) -> Result<FlowField> {
    estimate_scene_flow_with(prev, next, intrinsics, MatchParams::default())
}

pub fn estimate_scene_flow_with(
    prev: &RgbdFrame,
    next: &RgbdFrame,
    intrinsics: &CameraIntrinsics,
    params: MatchParams,
) -> Result<FlowField> {
    intrinsics.validate()?;
    let (h, w) = (prev.height(), prev.width());
    if (next.height(), next.width()) != (h, w) {
        return Err(Error::shape(
            "estimate_scene_flow",
            format!("frames differ in extent: {h}×{w} vs {}×{}", next.height(), next.width()),
        ));
    }
    if params.levels == 0 || params.patch % 2 == 0 {
        return Err(Error::Config("matching needs ≥1 pyramid level and an odd patch size".into()));
    }

    let prev_pyr = pyramid(Plane::new(h, w, prev.intensity()), params.levels);
    let next_pyr = pyramid(Plane::new(h, w, next.intensity()), params.levels);

    let mut flow: Option<(Plane, Plane)> = None;
    for level in (0..prev_pyr.len()).rev() {
        let (a, b) = (&prev_pyr[level], &next_pyr[level]);
        let (gx, gy) = match flow.take() {
            Some((fx, fy)) => (fx.upsample_to(a.h, a.w, 2.0), fy.upsample_to(a.h, a.w, 2.0)),
            None => (Plane::zeros(a.h, a.w), Plane::zeros(a.h, a.w)),
        };
        let (fx, fy) = match_level(a, b, &gx, &gy, params);
        flow = Some(if level > 0 { (fx.median3(), fy.median3()) } else { (fx, fy) });
    }
    let (fx, fy) = flow.expect("at least one level");

    let n = h * w;
    let mut vectors = vec![0.0; 3 * n];
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let (vx, vy) = (fx.data[i], fy.data[i]);
            let d0 = prev.depth_at(y, x);
            let d1 = sample_depth(next, y as f64 + vy, x as f64 + vx);
            match d1 {
                Some(d1) if d0 > 0.0 => {
                    vectors[i] = vx;
                    vectors[n + i] = vy;
                    vectors[2 * n + i] = d1 - d0;
                }
                _ => {}
            }
        }
    }
    FlowField::from_planes(h, w, vectors)
}

/// Bilinear depth lookup; `None` if any contributing sample is invalid.
fn sample_depth(frame: &RgbdFrame, y: f64, x: f64) -> Option<f64> {
    let (h, w) = (frame.height(), frame.width());
    let y = y.clamp(0.0, (h - 1) as f64);
    let x = x.clamp(0.0, (w - 1) as f64);
    let (y0, x0) = (y.floor() as usize, x.floor() as usize);
    let (y1, x1) = ((y0 + 1).min(h - 1), (x0 + 1).min(w - 1));
    let (ty, tx) = (y - y0 as f64, x - x0 as f64);
    let mut acc = 0.0;
    for (yy, wy) in [(y0, 1.0 - ty), (y1, ty)] {
        for (xx, wx) in [(x0, 1.0 - tx), (x1, tx)] {
            let weight = wy * wx;
            if weight == 0.0 {
                continue;
            }
            let d = frame.depth_at(yy, xx);
            if d <= 0.0 {
                return None;
            }
            acc += weight * d;
        }
    }
    Some(acc)
}

#[derive(Clone, Debug)]
struct Plane {
    h: usize,
    w: usize,
    data: Vec<f64>,
}

impl Plane {
    fn new(h: usize, w: usize, data: Vec<f64>) -> Self {
        Plane { h, w, data }
    }

    fn zeros(h: usize, w: usize) -> Self {
        Plane::new(h, w, vec![0.0; h * w])
    }

    fn at_clamped(&self, y: isize, x: isize) -> f64 {
        let y = y.clamp(0, self.h as isize - 1) as usize;
        let x = x.clamp(0, self.w as isize - 1) as usize;
        self.data[y * self.w + x]
    }

    /// 2×2 box downsampling (odd trailing rows/columns are dropped).
    fn downsample(&self) -> Plane {
        let (h, w) = (self.h / 2, self.w / 2);
        let mut data = Vec::with_capacity(h * w);
        for y in 0..h {
            for x in 0..w {
                let s = self.data[2 * y * self.w + 2 * x]
                    + self.data[2 * y * self.w + 2 * x + 1]
                    + self.data[(2 * y + 1) * self.w + 2 * x]
                    + self.data[(2 * y + 1) * self.w + 2 * x + 1];
                data.push(s / 4.0);
            }
        }
        Plane::new(h, w, data)
    }

    /// 3×3 median filter with clamped borders.
    fn median3(&self) -> Plane {
        let mut data = Vec::with_capacity(self.h * self.w);
        let mut win = [0.0; 9];
        for y in 0..self.h as isize {
            for x in 0..self.w as isize {
                for (k, slot) in win.iter_mut().enumerate() {
                    *slot = self.at_clamped(y + k as isize / 3 - 1, x + k as isize % 3 - 1);
                }
                win.sort_by(|a, b| a.total_cmp(b));
                data.push(win[4]);
            }
        }
        Plane::new(self.h, self.w, data)
    }

    /// Nearest upsampling to `h×w`, multiplying values by `scale`.
    fn upsample_to(&self, h: usize, w: usize, scale: f64) -> Plane {
        let mut data = Vec::with_capacity(h * w);
        for y in 0..h {
            for x in 0..w {
                data.push(scale * self.at_clamped((y / 2) as isize, (x / 2) as isize));
            }
        }
        Plane::new(h, w, data)
    }
}

fn pyramid(base: Plane, levels: usize) -> Vec<Plane> {
    let mut out = vec![base];
    while out.len() < levels {
        let last = out.last().expect("non-empty");
        if last.h < 2 || last.w < 2 {
            break;
        }
        out.push(last.downsample());
    }
    out
}

/// Search offsets ordered by distance from the centre so that exact ties
/// resolve toward the predicted motion.
fn search_offsets(radius: usize) -> Vec<(isize, isize)> {
    let r = radius as isize;
    let mut offsets: Vec<(isize, isize)> = (-r..=r).flat_map(|dy| (-r..=r).map(move |dx| (dx, dy))).collect();
    offsets.sort_by_key(|&(dx, dy)| (dx * dx + dy * dy, dy, dx));
    offsets
}

fn sad(a: &Plane, b: &Plane, y: isize, x: isize, ty: isize, tx: isize, half: isize) -> f64 {
    let mut acc = 0.0;
    for py in -half..=half {
        for px in -half..=half {
            acc += (a.at_clamped(y + py, x + px) - b.at_clamped(ty + py, tx + px)).abs();
        }
    }
    acc
}

/// Parabola vertex offset through three equally spaced costs, in `[-0.5, 0.5]`.
fn subpixel(minus: f64, centre: f64, plus: f64) -> f64 {
    let curvature = minus - 2.0 * centre + plus;
    if curvature <= 0.0 {
        return 0.0;
    }
    (0.5 * (minus - plus) / curvature).clamp(-0.5, 0.5)
}

fn match_level(a: &Plane, b: &Plane, guess_x: &Plane, guess_y: &Plane, params: MatchParams) -> (Plane, Plane) {
    let half = (params.patch / 2) as isize;
    let offsets = search_offsets(params.radius);
    let mut fx = Plane::zeros(a.h, a.w);
    let mut fy = Plane::zeros(a.h, a.w);
    for y in 0..a.h {
        for x in 0..a.w {
            let i = y * a.w + x;
            let gx = guess_x.data[i].round() as isize;
            let gy = guess_y.data[i].round() as isize;
            let (yi, xi) = (y as isize, x as isize);
            let mut best = (0, 0);
            let mut best_cost = f64::INFINITY;
            let centres = if (gx, gy) == (0, 0) { &[(0, 0)][..] } else { &[(0, 0), (gx, gy)][..] };
            for &(cx, cy) in centres {
                for &(dx, dy) in &offsets {
                    let c = sad(a, b, yi, xi, yi + cy + dy, xi + cx + dx, half);
                    if c < best_cost {
                        best_cost = c;
                        best = (cx + dx, cy + dy);
                    }
                }
            }
            let (tx, ty) = (xi + best.0, yi + best.1);
            let (mut sx, mut sy) = (0.0, 0.0);
            if best_cost > 1e-12 {
                let cost = |ox: isize, oy: isize| sad(a, b, yi, xi, ty + oy, tx + ox, half);
                sx = subpixel(cost(-1, 0), best_cost, cost(1, 0));
                sy = subpixel(cost(0, -1), best_cost, cost(0, 1));
            }
            fx.data[i] = (tx - xi) as f64 + sx;
            fy.data[i] = (ty - yi) as f64 + sy;
        }
    }
    (fx, fy)
}

#[cfg(test)]
mod tests;
