//! Line-oriented `key = value` training configuration files.
//!
//! Keys mirror the training-config fields; unknown keys are rejected so a
//! typo cannot silently fall back to a default. `#` starts a comment.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::trainer::TrainConfig;

fn bad_line(lineno: usize, what: impl std::fmt::Display) -> Error {
    Error::InvalidArgument(format!("config line {lineno}: {what}"))
}

fn parse_into<T: std::str::FromStr>(lineno: usize, key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| bad_line(lineno, format!("cannot parse `{value}` for key `{key}`")))
}

/// Apply `key = value` overrides from `text` on top of `base`.
pub fn parse_config(text: &str, base: TrainConfig) -> Result<TrainConfig> {
    let mut config = base;
    for (idx, raw) in text.lines().enumerate() {
        let lineno = idx + 1;
        let line = match raw.split_once('#') {
            Some((before, _)) => before.trim(),
            None => raw.trim(),
        };
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| bad_line(lineno, format!("expected `key = value`, got `{line}`")))?;
        let (key, value) = (key.trim(), value.trim());
        match key {
            "epochs" => config.epochs = parse_into(lineno, key, value)?,
            "batch_size" => config.batch_size = parse_into(lineno, key, value)?,
            "lr0" => config.lr0 = parse_into(lineno, key, value)?,
            "lr_decay_factor" => config.lr_decay_factor = parse_into(lineno, key, value)?,
            "lr_decay_every" => config.lr_decay_every = parse_into(lineno, key, value)?,
            "seed" => config.seed = parse_into(lineno, key, value)?,
            "alpha1" => config.loss_weights.alpha1 = parse_into(lineno, key, value)?,
            "alpha2" => config.loss_weights.alpha2 = parse_into(lineno, key, value)?,
            "alpha3" => config.loss_weights.alpha3 = parse_into(lineno, key, value)?,
            "alpha4" => config.loss_weights.alpha4 = parse_into(lineno, key, value)?,
            "lambda" => config.loss_weights.lambda = parse_into(lineno, key, value)?,
            "crop_h" => config.crop.0 = parse_into(lineno, key, value)?,
            "crop_w" => config.crop.1 = parse_into(lineno, key, value)?,
            _ => return Err(bad_line(lineno, format!("unknown key `{key}`"))),
        }
    }
    Ok(config)
}

/// `parse_config` over a file's contents.
pub fn load_config_file(path: &Path, base: TrainConfig) -> Result<TrainConfig> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config(&text, base)
}
