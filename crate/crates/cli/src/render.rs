//! Overlay rendering with a fixed taxonomy palette.

use std::path::Path;

use affseg::data::AFFORDANCES;
use affseg::Tensor;
use image::{GrayImage, RgbImage};

use crate::CliError;

/// RGB color per taxonomy index; background is never painted.
pub const PALETTE: [[u8; 3]; 10] = [
    [0, 0, 0],       // background
    [144, 238, 144], // grasp: light green
    [255, 165, 0],   // cut: orange
    [0, 128, 0],     // lift: green
    [0, 255, 255],   // push: cyan
    [255, 0, 0],     // rotate: red
    [0, 0, 255],     // hammer: blue
    [255, 0, 255],   // squeeze: magenta
    [255, 255, 0],   // paint: yellow
    [128, 0, 128],   // type: purple
];

/// Weight of the class color in a painted pixel.
pub const OVERLAY_ALPHA: f64 = 0.5;

pub fn palette_entry(name: &str) -> Option<[u8; 3]> {
    AFFORDANCES.iter().position(|&a| a == name).map(|i| PALETTE[i])
}

/// Inverse lookup of a pure palette color.
pub fn palette_label(rgb: [u8; 3]) -> Option<usize> {
    PALETTE.iter().skip(1).position(|&c| c == rgb).map(|i| i + 1)
}

fn to_u8(v: f64) -> u8 {
    (v * 255.0).round().clamp(0.0, 255.0) as u8
}

/// The first three channels of a `C×H×W` image in `[0, 1]` as 8-bit RGB.
pub fn rgb_image(image: &Tensor) -> Result<RgbImage, CliError> {
    let (c, h, w) = image.dims3("rgb_image")?;
    if c < 3 {
        return Err(CliError::Usage(format!("expected at least 3 channels, got {c}")));
    }
    let d = image.data();
    let n = h * w;
    Ok(RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let i = y as usize * w + x as usize;
        image::Rgb([to_u8(d[i]), to_u8(d[n + i]), to_u8(d[2 * n + i])])
    }))
}

/// Blends the palette color of every non-background label into `base`.
pub fn overlay(base: &RgbImage, labels: &[usize]) -> Result<RgbImage, CliError> {
    if labels.len() != (base.width() * base.height()) as usize {
        return Err(CliError::Usage(format!(
            "label map has {} entries for a {}×{} image",
            labels.len(),
            base.width(),
            base.height()
        )));
    }
    let mut out = base.clone();
    for (px, &l) in out.pixels_mut().zip(labels) {
        if l == 0 {
            continue;
        }
        let color = PALETTE.get(l).ok_or_else(|| CliError::Usage(format!("label {l} has no palette color")))?;
        for c in 0..3 {
            let v = (1.0 - OVERLAY_ALPHA) * f64::from(px.0[c]) + OVERLAY_ALPHA * f64::from(color[c]);
            px.0[c] = v.round() as u8;
        }
    }
    Ok(out)
}

pub fn label_image(labels: &[usize], height: usize, width: usize) -> Result<GrayImage, CliError> {
    let raw: Vec<u8> = labels
        .iter()
        .map(|&l| u8::try_from(l).map_err(|_| CliError::Usage(format!("label {l} does not fit in 8 bits"))))
        .collect::<Result<_, _>>()?;
    GrayImage::from_raw(width as u32, height as u32, raw)
        .ok_or_else(|| CliError::Usage(format!("label map does not match {height}×{width}")))
}

pub fn save_png(img: &image::DynamicImage, path: &Path) -> Result<(), CliError> {
    img.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| CliError::Data(format!("cannot write {}: {e}", path.display())))
}

/// Palette as a Markdown table, for documentation.
pub fn palette_table() -> String {
    let mut s = String::from("| index | affordance | RGB |\n|---|---|---|\n");
    for (i, (name, c)) in AFFORDANCES.iter().zip(PALETTE).enumerate().skip(1) {
        s.push_str(&format!("| {i} | {name} | {}, {}, {} |\n", c[0], c[1], c[2]));
    }
    s
}
