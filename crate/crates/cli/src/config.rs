//! Flat key=value configuration files. Keys match the model/trainer field
//! names exactly; an unknown key is an error, so typos cannot silently fall
//! back to defaults. Precedence is flags > file > defaults.

use std::path::Path;

use dioptra_core::model::{ModelConfig, Target};
use dioptra_core::train::TrainConfig;

use crate::error::CliError;

/// Flag-level overrides collected from the command line.
#[derive(Debug, Default, Clone)]
pub struct Overrides {
    pub learning_rate: Option<f64>,
    pub momentum: Option<f64>,
    pub batch_size: Option<usize>,
    pub max_epochs: Option<usize>,
    pub patience: Option<usize>,
    pub min_delta: Option<f64>,
    pub ensemble_size: Option<usize>,
    pub seed: Option<u64>,
    pub input_resolution: Option<usize>,
}

/// Resolved (model, train) configuration for one target.
pub fn resolve_configs(
    target: Target,
    config_path: Option<&Path>,
    overrides: &Overrides,
) -> Result<(ModelConfig, TrainConfig), CliError> {
    let mut model = ModelConfig::new(target, 0);
    let mut train = TrainConfig::default();

    if let Some(path) = config_path {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Io(format!("config {}: {e}", path.display())))?;
        apply_file(&text, &mut model, &mut train)?;
    }

    let o = overrides;
    if let Some(v) = o.learning_rate {
        train.learning_rate = v;
    }
    if let Some(v) = o.momentum {
        train.momentum = v;
    }
    if let Some(v) = o.batch_size {
        train.batch_size = v;
    }
    if let Some(v) = o.max_epochs {
        train.max_epochs = v;
    }
    if let Some(v) = o.patience {
        train.patience = v;
    }
    if let Some(v) = o.min_delta {
        train.min_delta = v;
    }
    if let Some(v) = o.ensemble_size {
        train.ensemble_size = v;
    }
    if let Some(v) = o.seed {
        train.seed = v;
        model.seed = v;
    }
    if let Some(v) = o.input_resolution {
        model.input_resolution = v;
    }

    model.target = target;
    model
        .validate()
        .map_err(|e| CliError::Usage(e.to_string()))?;
    train
        .validate()
        .map_err(|e| CliError::Usage(e.to_string()))?;
    Ok((model, train))
}

fn apply_file(
    text: &str,
    model: &mut ModelConfig,
    train: &mut TrainConfig,
) -> Result<(), CliError> {
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            CliError::Usage(format!("config line {}: expected key=value", lineno + 1))
        })?;
        let (key, value) = (key.trim(), value.trim());
        let bad = |what: &str| {
            CliError::Usage(format!(
                "config line {}: bad {what} value {value:?}",
                lineno + 1
            ))
        };
        match key {
            "learning_rate" => train.learning_rate = value.parse().map_err(|_| bad(key))?,
            "momentum" => train.momentum = value.parse().map_err(|_| bad(key))?,
            "batch_size" => train.batch_size = value.parse().map_err(|_| bad(key))?,
            "max_epochs" => train.max_epochs = value.parse().map_err(|_| bad(key))?,
            "patience" => train.patience = value.parse().map_err(|_| bad(key))?,
            "min_delta" => train.min_delta = value.parse().map_err(|_| bad(key))?,
            "ensemble_size" => train.ensemble_size = value.parse().map_err(|_| bad(key))?,
            "seed" => {
                let seed: u64 = value.parse().map_err(|_| bad(key))?;
                train.seed = seed;
                model.seed = seed;
            }
            "input_resolution" => model.input_resolution = value.parse().map_err(|_| bad(key))?,
            "stem_channels" => model.stem_channels = parse_array(value).ok_or_else(|| bad(key))?,
            "block_channels" => {
                model.block_channels = parse_array(value).ok_or_else(|| bad(key))?
            }
            "block_strides" => model.block_strides = parse_array(value).ok_or_else(|| bad(key))?,
            "fc_widths" => model.fc_widths = parse_array(value).ok_or_else(|| bad(key))?,
            "target" => {
                model.target = Target::parse(value).ok_or_else(|| bad(key))?;
            }
            unknown => {
                return Err(CliError::Usage(format!(
                    "config line {}: unknown key {unknown:?}",
                    lineno + 1
                )))
            }
        }
    }
    Ok(())
}

fn parse_array<const N: usize>(value: &str) -> Option<[usize; N]> {
    let parts: Vec<usize> = value
        .split(',')
        .map(|p| p.trim().parse().ok())
        .collect::<Option<_>>()?;
    parts.try_into().ok()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_overrides_defaults_and_flags_override_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.cfg");
        std::fs::write(&path, "learning_rate=0.5\nbatch_size=16\nseed=9\n").unwrap();
        let overrides = Overrides {
            batch_size: Some(4),
            ..Default::default()
        };
        let (model, train) =
            resolve_configs(Target::SphericalEquivalent, Some(&path), &overrides).unwrap();
        assert_eq!(train.learning_rate, 0.5); // file beats default
        assert_eq!(train.batch_size, 4); // flag beats file
        assert_eq!(train.seed, 9);
        assert_eq!(model.seed, 9);
    }

    #[test]
    fn unknown_key_is_a_usage_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.cfg");
        std::fs::write(&path, "learning_rte=0.5\n").unwrap();
        let err = resolve_configs(
            Target::SphericalEquivalent,
            Some(&path),
            &Overrides::default(),
        )
        .unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(err.to_string().contains("learning_rte"));
    }

    #[test]
    fn array_keys_parse() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.cfg");
        std::fs::write(&path, "block_channels=8, 16, 24\nstem_channels=4,8\n").unwrap();
        let (model, _) = resolve_configs(
            Target::SphericalEquivalent,
            Some(&path),
            &Overrides::default(),
        )
        .unwrap();
        assert_eq!(model.block_channels, [8, 16, 24]);
        assert_eq!(model.stem_channels, [4, 8]);
    }
}
