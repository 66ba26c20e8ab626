//! Configuration layering: built-in defaults, then a `key=value` file,
//! then command-line flags.

use std::path::Path;

use hlnet::config::parse_kv_strict;
use hlnet::model::HlnetConfig;
use hlnet::simdata::DegradeConfig;
use hlnet::training::TrainConfig;

use crate::error::{usage, CliResult, IoContext};

/// Ordered overrides; later entries win.
#[derive(Debug, Clone, Default)]
pub struct Overrides(pub Vec<(String, String)>);

impl Overrides {
    pub fn set(&mut self, key: &str, value: Option<impl ToString>) {
        if let Some(v) = value {
            self.0.push((key.to_string(), v.to_string()));
        }
    }

    pub fn pairs(&self) -> impl Iterator<Item = (&str, &str)> {
        self.0.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.0.iter().rev().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn extend(&mut self, other: Overrides) {
        self.0.extend(other.0);
    }
}

/// Keys accepted by the command-line front end beyond the library configs.
const EXTRA_KEYS: &[&str] = &["scenes", "height", "width_px", "channels", "frames"];

fn known_keys() -> Vec<String> {
    let mut keys: Vec<String> = [
        DegradeConfig::default().to_kv(),
        TrainConfig::default().to_kv(),
        HlnetConfig::default().to_kv(),
    ]
    .iter()
    .flat_map(|t| t.lines().filter_map(|l| l.split_once('=').map(|(k, _)| k.to_string())).collect::<Vec<_>>())
    .collect();
    keys.extend(EXTRA_KEYS.iter().map(|k| k.to_string()));
    keys
}

/// Reads a config file; unknown keys are usage errors.
pub fn load_file(path: &Path) -> CliResult<Overrides> {
    let text = std::fs::read_to_string(path).ctx(|| format!("reading config {}", path.display()))?;
    let pairs = parse_kv_strict(&text).map_err(|e| usage(format!("{}: {e}", path.display())))?;
    let known = known_keys();
    if let Some((k, _)) = pairs.iter().find(|(k, _)| !known.contains(k)) {
        return Err(usage(format!("{}: unknown config key `{k}`", path.display())));
    }
    Ok(Overrides(pairs))
}

/// File layer followed by the flag layer.
pub fn layered(file: Option<&Path>, flags: Overrides) -> CliResult<Overrides> {
    let mut all = match file {
        Some(p) => load_file(p)?,
        None => Overrides::default(),
    };
    all.extend(flags);
    Ok(all)
}

pub fn degrade_config(o: &Overrides) -> CliResult<DegradeConfig> {
    let mut cfg = DegradeConfig::default();
    cfg.apply_kv(o.pairs()).map_err(|e| usage(e.to_string()))?;
    Ok(cfg)
}

pub fn train_config(o: &Overrides) -> CliResult<TrainConfig> {
    let mut cfg = TrainConfig::default();
    cfg.apply_kv(o.pairs()).map_err(|e| usage(e.to_string()))?;
    Ok(cfg)
}

/// Model config from `base` with overrides applied.
pub fn model_config(base: HlnetConfig, o: &Overrides) -> CliResult<HlnetConfig> {
    let mut cfg = base;
    cfg.apply_kv(o.pairs()).map_err(|e| match e {
        hlnet::Error::UnsupportedVariant { .. } => crate::error::CliError::Core(e),
        other => usage(other.to_string()),
    })?;
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    Ok(cfg)
}

pub fn parse<T: std::str::FromStr>(o: &Overrides, key: &str) -> CliResult<Option<T>> {
    o.get(key)
        .map(|v| v.parse().map_err(|_| usage(format!("bad value for {key}: `{v}`"))))
        .transpose()
}
