//! Run configuration: a JSON file merged over defaults, then dotted-path overrides.
//!
//! ```json
//! {
//!   "variant": "rgbd-attn",
//!   "model": { "height": 48, "width": 48, "base_width": 8 },
//!   "train": { "epochs": 300, "learning_rate": 0.0003 },
//!   "data": { "root": "data", "train_split": "train", "eval_split": "val", "target_fps": 10 },
//!   "run_name": "rgbd-attn"
//! }
//! ```
//!
//! Every key is optional; missing keys take the desk-scale defaults. Unknown
//! keys are rejected. `--set train.learning_rate=1e-4` overrides one field;
//! the value is parsed as JSON and falls back to a plain string.

use std::path::{Path, PathBuf};

use affseg::data::PreprocessConfig;
use affseg::model::{ModelConfig, Variant};
use affseg::trainer::TrainConfig;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub root: PathBuf,
    pub train_split: String,
    pub eval_split: String,
    pub target_fps: u32,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            root: PathBuf::from("data"),
            train_split: "train".into(),
            eval_split: "val".into(),
            target_fps: 10,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Ablation row applied on top of `model`; `null` keeps `model` as written.
    pub variant: Option<String>,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub data: DataConfig,
    pub run_name: String,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            variant: None,
            model: ModelConfig::default(),
            train: TrainConfig::desk(),
            data: DataConfig::default(),
            run_name: "run".into(),
        }
    }
}

fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

fn set_path(root: &mut Value, path: &str, value: Value) -> Result<(), CliError> {
    let mut node = root;
    let keys: Vec<&str> = path.split('.').collect();
    for (i, key) in keys.iter().enumerate() {
        let Value::Object(map) = node else {
            return Err(CliError::Usage(format!("override `{path}`: `{}` is not a section", keys[..i].join("."))));
        };
        if i + 1 == keys.len() {
            if !map.contains_key(*key) {
                return Err(CliError::Usage(format!("override `{path}`: unknown field `{key}`")));
            }
            map.insert(key.to_string(), value);
            return Ok(());
        }
        node = map
            .get_mut(*key)
            .ok_or_else(|| CliError::Usage(format!("override `{path}`: unknown section `{key}`")))?;
    }
    unreachable!("split yields at least one key")
}

/// Parses `key=value`; the value is JSON when it parses as JSON, else a string.
pub fn parse_override(spec: &str) -> Result<(String, Value), CliError> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| CliError::Usage(format!("override `{spec}` must look like key=value")))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    Ok((key.trim().to_string(), value))
}

impl RunConfig {
    /// Defaults, then the file (if any), then overrides, then validation.
    pub fn resolve(file: Option<&Path>, overrides: &[(String, Value)]) -> Result<Self, CliError> {
        let mut value = serde_json::to_value(RunConfig::default()).expect("default config serializes");
        let mut switch_given = overrides.iter().any(|(k, _)| k == "train.schedule_switch_epoch");
        if let Some(path) = file {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
            let parsed: Value = serde_json::from_str(&text)
                .map_err(|e| CliError::Usage(format!("config {} is not valid JSON: {e}", path.display())))?;
            if !parsed.is_object() {
                return Err(CliError::Usage(format!("config {} must be a JSON object", path.display())));
            }
            switch_given |= parsed.pointer("/train/schedule_switch_epoch").is_some();
            merge(&mut value, parsed);
        }
        for (key, v) in overrides {
            set_path(&mut value, key, v.clone())?;
        }
        let mut config: RunConfig =
            serde_json::from_value(value).map_err(|e| CliError::Usage(format!("invalid configuration: {e}")))?;
        if !switch_given {
            config.train = config.train.clone().with_epochs(config.train.epochs);
        }
        config.validated()
    }

    fn validated(mut self) -> Result<Self, CliError> {
        if let Some(name) = &self.variant {
            let v: Variant = name.parse()?;
            self.model = self.model.with_variant(v);
        }
        self.model.validate()?;
        self.train.validate()?;
        if self.run_name.is_empty() || self.run_name.contains(['/', '\\']) {
            return Err(CliError::Usage(format!("run_name `{}` must be a plain directory name", self.run_name)));
        }
        if self.data.target_fps == 0 {
            return Err(CliError::Usage("data.target_fps must be positive".into()));
        }
        Ok(self)
    }

    pub fn preprocess(&self) -> PreprocessConfig {
        preprocess_for(&self.model, self.data.target_fps)
    }
}

pub fn preprocess_for(model: &ModelConfig, target_fps: u32) -> PreprocessConfig {
    PreprocessConfig {
        target_fps,
        ..PreprocessConfig::from_model(model)
    }
}

pub const RUN_ROOT_ENV: &str = "AFFSEG_RUN_ROOT";

/// `$AFFSEG_RUN_ROOT/<run_name>`, or `runs/<run_name>` when unset.
pub fn run_dir(run_name: &str) -> PathBuf {
    let root = std::env::var_os(RUN_ROOT_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("runs"));
    root.join(run_name)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn over(specs: &[&str]) -> Vec<(String, Value)> {
        specs.iter().map(|s| parse_override(s).unwrap()).collect()
    }

    #[test]
    fn defaults_resolve() {
        let c = RunConfig::resolve(None, &[]).unwrap();
        assert_eq!(c.model, ModelConfig::default());
        assert_eq!(c.train, TrainConfig::desk());
    }

    #[test]
    fn overrides_by_dotted_path() {
        let c = RunConfig::resolve(None, &over(&["train.learning_rate=1e-4", "data.root=/tmp/x", "model.base_width=4"]))
            .unwrap();
        assert_eq!(c.train.learning_rate, 1e-4);
        assert_eq!(c.data.root, PathBuf::from("/tmp/x"));
        assert_eq!(c.model.base_width, 4);
    }

    #[test]
    fn every_variant_is_expressible() {
        for v in Variant::ALL {
            let c = RunConfig::resolve(None, &over(&[&format!("variant={}", v.name())])).unwrap();
            assert_eq!(c.model.variant(), Some(v));
        }
    }

    #[test]
    fn validation_messages_are_distinct() {
        let lambda = RunConfig::resolve(None, &over(&["train.lambda_early=[0.3,0.3]"])).unwrap_err().to_string();
        let size = RunConfig::resolve(None, &over(&["model.height=44"])).unwrap_err().to_string();
        let variant = RunConfig::resolve(None, &over(&["variant=rgb-lidar"])).unwrap_err().to_string();
        assert!(lambda.contains("sum to 1"), "{lambda}");
        assert!(size.contains("divisible by 8"), "{size}");
        assert!(variant.contains("unknown variant"), "{variant}");
        assert!(lambda != size && size != variant && lambda != variant);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfig::resolve(None, &over(&["train.momentum=0.9"])).is_err());
        assert!(RunConfig::resolve(None, &over(&["optimizer.lr=0.1"])).is_err());
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        std::fs::write(&path, r#"{"model": {"height": 48, "depth_layers": 3}}"#).unwrap();
        assert!(RunConfig::resolve(Some(&path), &[]).is_err());
    }

    #[test]
    fn file_merges_over_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        std::fs::write(&path, r#"{"variant": "rgb", "train": {"epochs": 8}, "run_name": "small"}"#).unwrap();
        let c = RunConfig::resolve(Some(&path), &over(&["train.epochs=12"])).unwrap();
        assert_eq!(c.train.epochs, 12);
        assert_eq!(c.train.schedule_switch_epoch, 9);
        assert_eq!(c.run_name, "small");
        assert!(!c.model.use_depth);
        assert_eq!(c.model.height, 48);
    }

    #[test]
    fn override_syntax_errors() {
        assert!(parse_override("train.epochs").is_err());
        assert_eq!(parse_override("run_name=abc").unwrap().1, Value::String("abc".into()));
    }
}
