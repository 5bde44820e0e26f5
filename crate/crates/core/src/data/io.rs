use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use image::{DynamicImage, GrayImage, ImageBuffer, Luma, RgbImage};
use serde::{Deserialize, Serialize};

use super::{action_index, resize_bilinear, InteractionSequence, RgbdFrame, ACTIONS, AFFORDANCES, DEPTH_RANGE};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::flow::FlowImage;

/// Stored depth integers per depth unit.
pub const DEPTH_MM_PER_UNIT: f64 = 1000.0;

/// Contents of `meta.json`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SequenceMeta {
    pub action: String,
    pub object: String,
    pub fps: u32,
}

fn frame_name(idx: usize) -> String {
    format!("{idx:04}.png")
}

fn write_png(path: &Path, img: DynamicImage) -> Result<()> {
    img.save_with_format(path, image::ImageFormat::Png).map_err(|e| Error::image(path, e))
}

fn read_png(path: &Path) -> Result<DynamicImage> {
    image::open(path).map_err(|e| Error::image(path, e))
}

fn to_u8(v: f64) -> u8 {
    (v * 255.0).round().clamp(0.0, 255.0) as u8
}

/// Writes a sequence in the dataset layout under `dir` (created if needed).
pub fn save_sequence(seq: &InteractionSequence, dir: &Path) -> Result<()> {
    seq.validate()?;
    let (h, w) = (seq.height(), seq.width());
    let n = h * w;
    for sub in ["rgb", "depth"] {
        fs::create_dir_all(dir.join(sub)).map_err(|e| Error::io(dir.join(sub), e))?;
    }
    for (idx, frame) in seq.frames.iter().enumerate() {
        let rgb = frame.rgb.data();
        let img = RgbImage::from_fn(w as u32, h as u32, |x, y| {
            let i = y as usize * w + x as usize;
            image::Rgb([to_u8(rgb[i]), to_u8(rgb[n + i]), to_u8(rgb[2 * n + i])])
        });
        write_png(&dir.join("rgb").join(frame_name(idx)), DynamicImage::ImageRgb8(img))?;

        let depth = frame.depth.data();
        let scale = DEPTH_RANGE * DEPTH_MM_PER_UNIT;
        let img: ImageBuffer<Luma<u16>, Vec<u16>> = ImageBuffer::from_fn(w as u32, h as u32, |x, y| {
            let d = depth[y as usize * w + x as usize];
            Luma([(d * scale).round().clamp(0.0, f64::from(u16::MAX)) as u16])
        });
        write_png(&dir.join("depth").join(frame_name(idx)), DynamicImage::ImageLuma16(img))?;
    }
    if !seq.cached_flow.is_empty() {
        fs::create_dir_all(dir.join("flow")).map_err(|e| Error::io(dir.join("flow"), e))?;
        for (&idx, flow) in &seq.cached_flow {
            save_flow_image(flow, &dir.join("flow").join(frame_name(idx)))?;
        }
    }
    let mask = GrayImage::from_raw(w as u32, h as u32, seq.affordance_mask.clone())
        .ok_or_else(|| Error::shape("save_sequence", "mask size"))?;
    write_png(&dir.join("mask.png"), DynamicImage::ImageLuma8(mask))?;
    let meta = SequenceMeta {
        action: ACTIONS[seq.action].to_string(),
        object: seq.object.clone(),
        fps: seq.fps,
    };
    let path = dir.join("meta.json");
    fs::write(&path, serde_json::to_string_pretty(&meta)?).map_err(|e| Error::io(&path, e))
}

/// Writes a colorized flow image as an 8-bit RGB PNG (x, y, z → R, G, B).
pub fn save_flow_image(flow: &FlowImage, path: &Path) -> Result<()> {
    let (h, w) = (flow.height, flow.width);
    let img = RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let i = y as usize * w + x as usize;
        image::Rgb([flow.channel(0)[i], flow.channel(1)[i], flow.channel(2)[i]])
    });
    write_png(path, DynamicImage::ImageRgb8(img))
}

fn load_flow_image(path: &Path) -> Result<FlowImage> {
    let img = read_png(path)?.to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut data = vec![0u8; 3 * h * w];
    for (i, px) in img.pixels().enumerate() {
        for c in 0..3 {
            data[c * h * w + i] = px.0[c];
        }
    }
    Ok(FlowImage { height: h, width: w, data })
}

/// Frame indices and paths in `dir`, in filename order.
fn indexed_pngs(dir: &Path) -> Result<Vec<(usize, PathBuf)>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut files = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.extension().and_then(|e| e.to_str()) != Some("png") {
            continue;
        }
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
        files.push((stem, path));
    }
    files.sort();
    let mut out: Vec<(usize, PathBuf)> = Vec::with_capacity(files.len());
    for (stem, path) in files {
        let idx: usize = stem.parse().map_err(|_| Error::Dataset {
            path: path.clone(),
            detail: "frame file name is not an integer index".into(),
        })?;
        if let Some((prev, _)) = out.last() {
            if idx <= *prev {
                return Err(Error::NonMonotonicFrames {
                    dir: dir.to_path_buf(),
                    detail: format!("index {idx} follows {prev}"),
                });
            }
        }
        out.push((idx, path));
    }
    Ok(out)
}

/// Reads one sequence directory.
pub fn load_sequence(dir: &Path) -> Result<InteractionSequence> {
    if !dir.is_dir() {
        return Err(Error::Dataset {
            path: dir.to_path_buf(),
            detail: "not a directory".into(),
        });
    }
    let mask_path = dir.join("mask.png");
    if !mask_path.is_file() {
        return Err(Error::MissingAnnotation(mask_path));
    }
    let meta_path = dir.join("meta.json");
    let meta: SequenceMeta = serde_json::from_str(&fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?)?;
    let action = action_index(&meta.action)?;

    let rgb_files = indexed_pngs(&dir.join("rgb"))?;
    let depth_files = indexed_pngs(&dir.join("depth"))?;
    if rgb_files.is_empty() {
        return Err(Error::Dataset {
            path: dir.to_path_buf(),
            detail: "no frames".into(),
        });
    }
    let rgb_idx: Vec<usize> = rgb_files.iter().map(|(i, _)| *i).collect();
    let depth_idx: Vec<usize> = depth_files.iter().map(|(i, _)| *i).collect();
    if rgb_idx != depth_idx {
        return Err(Error::Dataset {
            path: dir.to_path_buf(),
            detail: "rgb and depth frame indices differ".into(),
        });
    }

    let mut frames = Vec::with_capacity(rgb_files.len());
    let scale = DEPTH_RANGE * DEPTH_MM_PER_UNIT;
    for ((_, rgb_path), (_, depth_path)) in rgb_files.iter().zip(&depth_files) {
        let depth_img = match read_png(depth_path)? {
            DynamicImage::ImageLuma16(img) => img,
            _ => {
                return Err(Error::Dataset {
                    path: depth_path.clone(),
                    detail: "depth must be a 16-bit single-channel PNG".into(),
                })
            }
        };
        let (dw, dh) = (depth_img.width() as usize, depth_img.height() as usize);
        let depth: Vec<f64> = depth_img.pixels().map(|p| (f64::from(p.0[0]) / scale).min(1.0)).collect();

        let rgb_img = read_png(rgb_path)?.to_rgb8();
        let (rw, rh) = (rgb_img.width() as usize, rgb_img.height() as usize);
        let mut rgb = vec![0.0; 3 * rh * rw];
        for (i, px) in rgb_img.pixels().enumerate() {
            for c in 0..3 {
                rgb[c * rh * rw + i] = f64::from(px.0[c]) / 255.0;
            }
        }
        let rgb = resize_bilinear(&rgb, 3, rh, rw, dh, dw);
        frames.push(RgbdFrame::new(Tensor::new(vec![3, dh, dw], rgb)?, Tensor::new(vec![1, dh, dw], depth)?)?);
    }
    let (h, w) = (frames[0].height(), frames[0].width());

    let mask_img = match read_png(&mask_path)? {
        DynamicImage::ImageLuma8(img) => img,
        _ => {
            return Err(Error::Dataset {
                path: mask_path,
                detail: "mask must be an 8-bit single-channel PNG".into(),
            })
        }
    };
    if (mask_img.width() as usize, mask_img.height() as usize) != (w, h) {
        return Err(Error::Dataset {
            path: mask_path,
            detail: format!("mask is {}×{}, frames are {w}×{h}", mask_img.width(), mask_img.height()),
        });
    }
    let affordance_mask = mask_img.into_raw();
    if let Some(&bad) = affordance_mask.iter().find(|&&l| l as usize >= AFFORDANCES.len()) {
        return Err(Error::UnknownLabel {
            path: mask_path,
            index: bad,
        });
    }

    let mut cached_flow = BTreeMap::new();
    let flow_dir = dir.join("flow");
    if flow_dir.is_dir() {
        for (idx, path) in indexed_pngs(&flow_dir)? {
            if let Some(pos) = rgb_idx.iter().position(|&i| i == idx) {
                let flow = load_flow_image(&path)?;
                if (flow.height, flow.width) == (h, w) {
                    cached_flow.insert(pos, flow);
                }
            }
        }
    }

    let seq = InteractionSequence {
        frames,
        affordance_mask,
        action,
        object: meta.object,
        fps: meta.fps,
        cached_flow,
    };
    seq.validate()?;
    Ok(seq)
}

/// Sequence directories of `<root>/<split>`, sorted by name.
pub fn list_sequences(root: &Path, split: &str) -> Result<Vec<PathBuf>> {
    let dir = root.join(split);
    let entries = fs::read_dir(&dir).map_err(|e| Error::io(&dir, e))?;
    let mut out = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(&dir, e))?.path();
        if path.is_dir() {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

pub fn load_dataset(root: &Path, split: &str) -> Result<Vec<InteractionSequence>> {
    list_sequences(root, split)?.iter().map(|p| load_sequence(p)).collect()
}
