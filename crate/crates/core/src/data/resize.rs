/// Bilinear resampling of `C` planes of `h×w` to `oh×ow` (pixel-centre aligned).
pub fn resize_bilinear(src: &[f64], channels: usize, h: usize, w: usize, oh: usize, ow: usize) -> Vec<f64> {
    assert_eq!(src.len(), channels * h * w);
    if (h, w) == (oh, ow) {
        return src.to_vec();
    }
    let sy = h as f64 / oh as f64;
    let sx = w as f64 / ow as f64;
    let taps = |o: usize, scale: f64, n: usize| {
        let p = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (n - 1) as f64);
        let i0 = p.floor() as usize;
        (i0, (i0 + 1).min(n - 1), p - i0 as f64)
    };
    let mut out = Vec::with_capacity(channels * oh * ow);
    for c in 0..channels {
        let plane = &src[c * h * w..(c + 1) * h * w];
        for y in 0..oh {
            let (y0, y1, ty) = taps(y, sy, h);
            for x in 0..ow {
                let (x0, x1, tx) = taps(x, sx, w);
                let top = plane[y0 * w + x0] * (1.0 - tx) + plane[y0 * w + x1] * tx;
                let bottom = plane[y1 * w + x0] * (1.0 - tx) + plane[y1 * w + x1] * tx;
                out.push(top * (1.0 - ty) + bottom * ty);
            }
        }
    }
    out
}

/// Nearest-neighbour resampling; never creates values absent from `src`.
pub fn resize_nearest<T: Copy>(src: &[T], channels: usize, h: usize, w: usize, oh: usize, ow: usize) -> Vec<T> {
    assert_eq!(src.len(), channels * h * w);
    let pick = |o: usize, n: usize, on: usize| (((o as f64 + 0.5) * n as f64 / on as f64) as usize).min(n - 1);
    let mut out = Vec::with_capacity(channels * oh * ow);
    for c in 0..channels {
        for y in 0..oh {
            let sy = pick(y, h, oh);
            for x in 0..ow {
                out.push(src[c * h * w + sy * w + pick(x, w, ow)]);
            }
        }
    }
    out
}
