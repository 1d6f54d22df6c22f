//! Experiment configuration: named presets plus a key=value file format.
//!
//! A config names a complete experiment — architecture and optimization —
//! so a paper-default run is one flag (`--config modelnet40-default`).
//! Files are plain text, one `key = value` per line, `#` comments; every
//! key has a preset default, and a `base = <preset>` line picks which
//! preset the file starts from. Unknown keys are rejected, never ignored.

use crate::Failure;
use mrfgat_core::dataset::AugmentConfig;
use mrfgat_core::model::MrfgatConfig;
use mrfgat_core::train::{LrDecay, TrainConfig};
use std::path::Path;

/// Everything a run needs besides the cache itself.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub model: MrfgatConfig,
    pub train: TrainConfig,
    /// Points per cloud the experiment is tuned for; `prepare --points`
    /// should match. Training only warns on mismatch.
    pub points: usize,
}

pub const PRESET_NAMES: [&str; 4] = [
    "modelnet40-default",
    "modelnet10-default",
    "modelnet10-desk",
    "reduced-test",
];

/// Returns the named preset, or `None` for unknown names.
pub fn preset(name: &str) -> Option<Experiment> {
    match name {
        // Full published configuration: 1024 points, 250 epochs.
        "modelnet40-default" => Some(Experiment {
            model: MrfgatConfig::modelnet_default(40),
            train: TrainConfig::default(),
            points: 1024,
        }),
        "modelnet10-default" => Some(Experiment {
            model: MrfgatConfig::modelnet_default(10),
            train: TrainConfig::default(),
            points: 1024,
        }),
        // Desk-scale learning-signal run: 10% stratified subset, 256-point
        // clouds, 50 epochs — hours on one CPU core instead of days.
        "modelnet10-desk" => Some(Experiment {
            model: MrfgatConfig::modelnet_default(10),
            train: TrainConfig {
                epochs: 50,
                subset_fraction: Some(0.1),
                ..TrainConfig::default()
            },
            points: 256,
        }),
        // Two-scale miniature for smoke tests and gradient checking.
        "reduced-test" => Some(Experiment {
            model: MrfgatConfig::reduced_test(),
            train: TrainConfig {
                epochs: 20,
                batch_size: 8,
                augment: None,
                ..TrainConfig::default()
            },
            points: 16,
        }),
        _ => None,
    }
}

fn usage(msg: String) -> Failure {
    Failure::Usage(msg)
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, Failure> {
    value
        .parse()
        .map_err(|_| usage(format!("config key {key}: cannot parse {value:?}")))
}

fn parse_list(key: &str, value: &str) -> Result<Vec<usize>, Failure> {
    value
        .split(',')
        .map(|part| parse(key, part.trim()))
        .collect()
}

fn parse_switch(key: &str, value: &str) -> Result<bool, Failure> {
    match value {
        "on" | "true" | "yes" => Ok(true),
        "off" | "false" | "no" => Ok(false),
        _ => Err(usage(format!(
            "config key {key}: expected on/off, got {value:?}"
        ))),
    }
}

/// Parses a config file's text. `base = <preset>` (default
/// `modelnet40-default`) must precede any other key it would reset.
pub fn parse_experiment(text: &str) -> Result<Experiment, Failure> {
    let mut exp = preset("modelnet40-default").expect("default preset exists");
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| usage(format!("config line {}: expected key = value", lineno + 1)))?;
        let (key, value) = (key.trim(), value.trim());
        apply_key(&mut exp, key, value)?;
    }
    exp.model
        .validate()
        .map_err(|e| usage(format!("config model section: {e}")))?;
    exp.train
        .validate()
        .map_err(|e| usage(format!("config train section: {e}")))?;
    Ok(exp)
}

/// Augment edits re-enable the default augmentation when it is off.
fn augment(exp: &mut Experiment) -> &mut AugmentConfig {
    exp.train
        .augment
        .get_or_insert_with(AugmentConfig::default)
}

fn decay(exp: &mut Experiment) -> &mut LrDecay {
    exp.train.lr_decay.get_or_insert(LrDecay {
        factor: 0.7,
        every: 20,
    })
}

fn apply_key(exp: &mut Experiment, key: &str, value: &str) -> Result<(), Failure> {
    match key {
        "base" => {
            *exp = preset(value).ok_or_else(|| {
                usage(format!(
                    "config key base: unknown preset {value:?} (available: {})",
                    PRESET_NAMES.join(", ")
                ))
            })?
        }
        "points" => exp.points = parse(key, value)?,

        "num_classes" => exp.model.num_classes = parse(key, value)?,
        "neighbor_counts" => {
            exp.model.neighbor_counts = parse_list(key, value)?;
            exp.model.num_scales = exp.model.neighbor_counts.len();
        }
        "scale_channels" => exp.model.scale_channels = parse_list(key, value)?,
        "mlp_widths" => exp.model.mlp_widths = parse_list(key, value)?,
        "global_width" => exp.model.global_width = parse(key, value)?,
        "head_widths" => exp.model.head_widths = parse_list(key, value)?,
        "leaky_slope" => exp.model.leaky_slope = parse(key, value)?,
        "dropout_keep" => exp.model.dropout_keep = parse(key, value)?,

        "epochs" => exp.train.epochs = parse(key, value)?,
        "batch_size" => exp.train.batch_size = parse(key, value)?,
        "learning_rate" => exp.train.learning_rate = parse(key, value)?,
        "lr_decay" => {
            if parse_switch(key, value)? {
                decay(exp);
            } else {
                exp.train.lr_decay = None;
            }
        }
        "lr_decay_factor" => decay(exp).factor = parse(key, value)?,
        "lr_decay_every" => decay(exp).every = parse(key, value)?,
        "seed" => exp.train.seed = parse(key, value)?,
        "eval_every" => exp.train.eval_every = parse(key, value)?,
        "eval_chunk" => exp.train.eval_chunk = parse(key, value)?,
        "subset_fraction" => {
            exp.train.subset_fraction = match value {
                "all" => None,
                _ => Some(parse(key, value)?),
            }
        }

        "augment" => {
            if parse_switch(key, value)? {
                augment(exp);
            } else {
                exp.train.augment = None;
            }
        }
        "rotate" => augment(exp).rotate = parse_switch(key, value)?,
        "scale_low" => augment(exp).scale_low = parse(key, value)?,
        "scale_high" => augment(exp).scale_high = parse(key, value)?,
        "jitter_sigma" => augment(exp).jitter_sigma = parse(key, value)?,
        "jitter_clip" => augment(exp).jitter_clip = parse(key, value)?,

        _ => return Err(usage(format!("config: unknown key {key:?}"))),
    }
    Ok(())
}

/// Resolves `--config`: a preset name, else a path to a config file.
pub fn resolve(arg: Option<&str>) -> Result<Experiment, Failure> {
    let Some(arg) = arg else {
        return Ok(preset("modelnet40-default").expect("default preset exists"));
    };
    if let Some(exp) = preset(arg) {
        return Ok(exp);
    }
    let path = Path::new(arg);
    if !path.is_file() {
        return Err(usage(format!(
            "--config {arg:?} is neither a preset ({}) nor a readable file",
            PRESET_NAMES.join(", ")
        )));
    }
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::Runtime(format!("reading config {arg:?}: {e}")))?;
    parse_experiment(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_resolve_and_validate() {
        for name in PRESET_NAMES {
            let exp = preset(name).unwrap();
            exp.model.validate().unwrap();
            exp.train.validate().unwrap();
        }
        assert!(preset("modelnet99").is_none());
        assert_eq!(preset("modelnet10-desk").unwrap().train.epochs, 50);
        assert_eq!(preset("modelnet10-desk").unwrap().points, 256);
    }

    #[test]
    fn file_overrides_start_from_base() {
        let exp = parse_experiment(
            "# comment\n\
             base = modelnet10-desk\n\
             epochs = 7        # inline comment\n\
             neighbor_counts = 4, 8, 12\n\
             scale_channels = 4,4,8\n\
             mlp_widths = 16,8\n\
             head_widths = 16,8\n\
             global_width = 32\n\
             jitter_sigma = 0.02\n\
             lr_decay = off\n",
        )
        .unwrap();
        assert_eq!(exp.train.epochs, 7);
        assert_eq!(exp.train.subset_fraction, Some(0.1));
        assert_eq!(exp.model.num_scales, 3);
        assert_eq!(exp.model.neighbor_counts, vec![4, 8, 12]);
        assert_eq!(exp.train.augment.as_ref().unwrap().jitter_sigma, 0.02);
        assert!(exp.train.lr_decay.is_none());
    }

    #[test]
    fn bad_keys_and_values_are_usage_errors() {
        for text in [
            "epoch = 5",
            "epochs = soon",
            "augment = maybe",
            "base = nonsense",
            "epochs 5",
        ] {
            match parse_experiment(text) {
                Err(Failure::Usage(_)) => {}
                other => panic!("{text:?} gave {other:?}"),
            }
        }
    }

    #[test]
    fn invalid_combinations_fail_validation() {
        // Three neighbor counts but the base's four channel widths.
        let err = parse_experiment("neighbor_counts = 4, 8, 12\n").unwrap_err();
        assert!(matches!(err, Failure::Usage(_)));
    }
}
