use std::fs;
use std::path::{Path, PathBuf};

use affseg::data::{
    compute_flow_cache, generate_synthetic_sequence, kept_frame_indices, list_sequences, load_sequence, preprocess,
    resize_bilinear, save_flow_image, save_sequence, SyntheticSpec, DEPTH_MM_PER_UNIT, DEPTH_RANGE,
};
use affseg::metrics::{evaluate, EvalMode, MetricsReport};
use affseg::model::{apply_threshold, SequenceBatch};
use affseg::trainer::{history_csv, load_checkpoint, save_checkpoint, TrainState};
use affseg::Tensor;
use image::DynamicImage;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{preprocess_for, run_dir, RunConfig};
use crate::render::{label_image, overlay, rgb_image, save_png};
use crate::CliError;

/// Paper split: 962 training and 239 validation sequences.
pub const DEFAULT_SPLIT_RATIO: f64 = 962.0 / 1201.0;

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Data(format!("{}: {e}", path.display()))
}

/// Validation count: `floor(count · (1 − ratio))`, guarded against round-off.
pub fn val_count(count: usize, ratio: f64) -> usize {
    ((count as f64 * (1.0 - ratio)) + 1e-9).floor() as usize
}

pub struct SynthArgs {
    pub count: usize,
    pub out: PathBuf,
    pub seed: u64,
    pub split_ratio: f64,
    pub frames: usize,
    pub size: usize,
}

/// Writes `count` synthetic sequences as `<out>/{train,val}/seq_NNNN`.
pub fn synth(args: &SynthArgs) -> Result<(usize, usize), CliError> {
    if !(0.0..=1.0).contains(&args.split_ratio) {
        return Err(CliError::Usage(format!("split ratio {} must lie in [0, 1]", args.split_ratio)));
    }
    if args.count == 0 {
        return Err(CliError::Usage("count must be positive".into()));
    }
    let n_val = val_count(args.count, args.split_ratio);
    let n_train = args.count - n_val;
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    for i in 0..args.count {
        let mut spec = SyntheticSpec::sample(&mut rng);
        spec.frames = args.frames;
        spec.height = args.size;
        spec.width = args.size;
        let seq = generate_synthetic_sequence(&spec, rng.random())?;
        let split = if i < n_train { "train" } else { "val" };
        let dir = args.out.join(split).join(format!("seq_{i:04}"));
        save_sequence(&seq, &dir)?;
    }
    Ok((n_train, n_val))
}

/// Sequence directories under a dataset root: `<root>/<split>/<seq>`, or
/// `root` itself when it is a sequence.
fn sequence_dirs(root: &Path) -> Result<Vec<PathBuf>, CliError> {
    if root.join("meta.json").is_file() {
        return Ok(vec![root.to_path_buf()]);
    }
    let entries = fs::read_dir(root).map_err(|e| io_err(root, e))?;
    let mut splits: Vec<PathBuf> = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| io_err(root, e))?.path();
        if path.is_dir() {
            splits.push(path);
        }
    }
    splits.sort();
    let mut out = Vec::new();
    for split in splits {
        let name = split.file_name().and_then(|n| n.to_str()).unwrap_or_default().to_string();
        out.extend(list_sequences(root, &name)?);
    }
    Ok(out)
}

#[derive(Debug, Default, PartialEq, Eq)]
pub struct FlowSummary {
    pub written: usize,
    pub skipped: usize,
    pub failed: Vec<(PathBuf, String)>,
}

/// Caches colorized flow for every sequence; existing caches are kept unless `force`.
pub fn flow(root: &Path, target_fps: u32, force: bool) -> Result<FlowSummary, CliError> {
    let mut summary = FlowSummary::default();
    for dir in sequence_dirs(root)? {
        match flow_one(&dir, target_fps, force) {
            Ok(true) => summary.written += 1,
            Ok(false) => summary.skipped += 1,
            Err(e) => summary.failed.push((dir, e.to_string())),
        }
    }
    Ok(summary)
}

fn flow_one(dir: &Path, target_fps: u32, force: bool) -> Result<bool, CliError> {
    let seq = load_sequence(dir)?;
    let kept = kept_frame_indices(seq.frames.len(), seq.fps, target_fps)?;
    let flow_dir = dir.join("flow");
    let path_of = |idx: usize| flow_dir.join(format!("{idx:04}.png"));
    if !force && kept[1..].iter().all(|&i| path_of(i).is_file()) {
        return Ok(false);
    }
    let cache = compute_flow_cache(&seq, target_fps)?;
    fs::create_dir_all(&flow_dir).map_err(|e| io_err(&flow_dir, e))?;
    for (idx, img) in cache {
        save_flow_image(&img, &path_of(idx))?;
    }
    Ok(true)
}

fn load_split(root: &Path, split: &str, config: &affseg::data::PreprocessConfig) -> Result<Vec<SequenceBatch>, CliError> {
    let dirs = list_sequences(root, split)
        .map_err(|e| CliError::Data(format!("dataset split `{split}` under {}: {e}", root.display())))?;
    if dirs.is_empty() {
        return Err(CliError::Data(format!("no sequences in {}", root.join(split).display())));
    }
    dirs.iter()
        .map(|d| Ok(preprocess(&load_sequence(d)?, config)?))
        .collect()
}

pub struct TrainOutcome {
    pub run_dir: PathBuf,
    pub state: TrainState,
}

/// Trains per `config`, printing one line per epoch through `log`, and writes
/// `config.json`, `history.csv` and `checkpoint.bin` to the run directory.
pub fn train(config: &RunConfig, resume: Option<&Path>, mut log: impl FnMut(&str)) -> Result<TrainOutcome, CliError> {
    let data = load_split(&config.data.root, &config.data.train_split, &config.preprocess())?;
    let mut state = match resume {
        Some(path) => {
            let s = load_checkpoint(path)?;
            s.ensure_model_config(&config.model)?;
            if s.train_config != config.train {
                return Err(CliError::Usage(format!(
                    "checkpoint {} was trained with a different train configuration",
                    path.display()
                )));
            }
            s
        }
        None => TrainState::new(&config.model, &config.train)?,
    };
    let dir = run_dir(&config.run_name);
    fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
    let cfg_path = dir.join("config.json");
    fs::write(&cfg_path, serde_json::to_string_pretty(config).expect("config serializes")).map_err(|e| io_err(&cfg_path, e))?;
    let ckpt = dir.join("checkpoint.bin");
    let hist = dir.join("history.csv");
    let every = config.train.checkpoint_every;
    state.run(&data, |s| {
        let r = s.history.last().expect("an epoch just finished");
        log(&format!(
            "epoch {:>4}  lambda ({:.2}, {:.2})  loss {:.6}  seg {:.6}  action {:.6}",
            r.epoch, r.lambda1, r.lambda2, r.l_total, r.l_seg, r.l_action
        ));
        if every > 0 && s.epoch % every == 0 {
            save_checkpoint(s, &ckpt)?;
            fs::write(&hist, history_csv(&s.history)).map_err(|source| affseg::Error::Io {
                path: hist.clone(),
                source,
            })?;
        }
        Ok(())
    })?;
    save_checkpoint(&state, &ckpt)?;
    fs::write(&hist, history_csv(&state.history)).map_err(|e| io_err(&hist, e))?;
    Ok(TrainOutcome { run_dir: dir, state })
}

pub fn parse_mode(mode: &str) -> Result<EvalMode, CliError> {
    match mode {
        "video" => Ok(EvalMode::Video),
        "static" => Ok(EvalMode::Static),
        other => Err(CliError::Usage(format!("unknown mode `{other}` (expected video or static)"))),
    }
}

pub fn eval(checkpoint: &Path, data_root: &Path, split: &str, mode: EvalMode, target_fps: u32) -> Result<MetricsReport, CliError> {
    let state = load_checkpoint(checkpoint)?;
    let config = state.model.config().clone();
    let data = load_split(data_root, split, &preprocess_for(&config, target_fps))?;
    Ok(evaluate(&state.model, &data, mode)?)
}

/// Largest centered square of a `C×H×W` tensor.
pub fn center_crop(t: &Tensor) -> Result<Tensor, CliError> {
    let (c, h, w) = t.dims3("center_crop")?;
    let s = h.min(w);
    let (y0, x0) = ((h - s) / 2, (w - s) / 2);
    Ok(Tensor::from_fn(&[c, s, s], |i| {
        let (ch, rest) = (i / (s * s), i % (s * s));
        t.get(&[ch, y0 + rest / s, x0 + rest % s])
    }))
}

fn read_image(path: &Path) -> Result<DynamicImage, CliError> {
    image::open(path).map_err(|e| CliError::Data(format!("cannot read {}: {e}", path.display())))
}

fn rgb_tensor(img: &DynamicImage) -> Tensor {
    let rgb = img.to_rgb8();
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    let n = h * w;
    Tensor::from_fn(&[3, h, w], |i| f64::from(rgb.as_raw()[(i % n) * 3 + i / n]) / 255.0)
}

fn depth_tensor(img: &DynamicImage) -> Tensor {
    let d = img.to_luma16();
    let (w, h) = (d.width() as usize, d.height() as usize);
    let scale = DEPTH_RANGE * DEPTH_MM_PER_UNIT;
    Tensor::from_fn(&[1, h, w], |i| (f64::from(d.as_raw()[i]) / scale).min(1.0))
}

fn resized(t: &Tensor, h: usize, w: usize) -> Result<Tensor, CliError> {
    let (c, sh, sw) = t.dims3("resize")?;
    Ok(Tensor::new(vec![c, h, w], resize_bilinear(t.data(), c, sh, sw, h, w))?)
}

pub struct InferArgs<'a> {
    pub checkpoint: &'a Path,
    pub input: &'a Path,
    pub depth: Option<&'a Path>,
    pub threshold: f64,
    pub out: &'a Path,
    pub target_fps: u32,
}

/// Labels after thresholding, plus the `overlay.png` / `labels.png` paths written.
pub fn infer(args: &InferArgs) -> Result<(Vec<usize>, PathBuf, PathBuf), CliError> {
    if !(0.0..=1.0).contains(&args.threshold) {
        return Err(CliError::Usage(format!("threshold {} must lie in [0, 1]", args.threshold)));
    }
    let state = load_checkpoint(args.checkpoint)?;
    let model = &state.model;
    let config = model.config().clone();
    let (h, w) = (config.height, config.width);
    let (labels, base) = if args.input.is_dir() {
        let seq = load_sequence(args.input)?;
        let batch = preprocess(&seq, &preprocess_for(&config, args.target_fps))?;
        let pred = model.predict(&batch)?;
        let base = batch.frames.last().expect("preprocess keeps the last frame").appearance.clone();
        (apply_threshold(pred.labels, pred.confidence, args.threshold).0, base)
    } else {
        let rgb = resized(&center_crop(&rgb_tensor(&read_image(args.input)?))?, h, w)?;
        let appearance = match (config.use_depth, args.depth) {
            (false, _) => rgb.clone(),
            (true, Some(path)) => {
                let depth = resized(&center_crop(&depth_tensor(&read_image(path)?))?, h, w)?;
                let mut data = rgb.data().to_vec();
                data.extend_from_slice(depth.data());
                Tensor::new(vec![4, h, w], data)?
            }
            (true, None) => {
                return Err(CliError::Usage("this checkpoint uses depth; pass --depth with a 16-bit depth PNG".into()))
            }
        };
        let (labels, _) = model.infer_static(&appearance, args.threshold)?;
        (labels, rgb)
    };
    fs::create_dir_all(args.out).map_err(|e| io_err(args.out, e))?;
    let over = args.out.join("overlay.png");
    let lab = args.out.join("labels.png");
    save_png(&DynamicImage::ImageRgb8(overlay(&rgb_image(&base)?, &labels)?), &over)?;
    save_png(&DynamicImage::ImageLuma8(label_image(&labels, h, w)?), &lab)?;
    Ok((labels, over, lab))
}
