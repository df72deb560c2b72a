//! Flat `key = value` configuration files.
//!
//! ```text
//! # comment
//! arch = fau_net, unet
//! epochs = 30
//! ```

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::models::{Arch, ModelConfig, Upsample};
use crate::train::TrainConfig;

/// Ordered key-value pairs; keys are unique.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct KeyValues {
    entries: Vec<(String, String)>,
}

impl KeyValues {
    pub fn parse(text: &str) -> Result<Self> {
        let mut kv = KeyValues::default();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!(
                    "line {}: expected 'key = value', got '{line}'",
                    i + 1
                ))
            })?;
            let k = k.trim();
            if k.is_empty() {
                return Err(Error::Config(format!("line {}: empty key", i + 1)));
            }
            if kv.get_raw(k).is_some() {
                return Err(Error::Config(format!(
                    "line {}: duplicate key '{k}'",
                    i + 1
                )));
            }
            kv.entries.push((k.to_owned(), v.trim().to_owned()));
        }
        Ok(kv)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn set(&mut self, key: &str, value: impl fmt::Display) {
        let value = value.to_string();
        match self.entries.iter_mut().find(|(k, _)| k == key) {
            Some((_, v)) => *v = value,
            None => self.entries.push((key.to_owned(), value)),
        }
    }

    pub fn get_raw(&self, key: &str) -> Option<&str> {
        self.entries
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: fmt::Display,
    {
        self.get_raw(key)
            .map(|v| {
                v.parse::<T>()
                    .map_err(|e| Error::Config(format!("bad value '{v}' for '{key}': {e}")))
            })
            .transpose()
    }

    pub fn require<T: FromStr>(&self, key: &str) -> Result<T>
    where
        T::Err: fmt::Display,
    {
        self.get(key)?
            .ok_or_else(|| Error::Config(format!("missing key '{key}'")))
    }

    /// Fails on keys outside `known`.
    pub fn check_keys(&self, known: &[&str]) -> Result<()> {
        match self
            .entries
            .iter()
            .find(|(k, _)| !known.contains(&k.as_str()))
        {
            Some((k, _)) => Err(Error::Config(format!("unknown key '{k}'"))),
            None => Ok(()),
        }
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(k, _)| k.as_str())
    }
}

impl fmt::Display for KeyValues {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, v) in &self.entries {
            writeln!(f, "{k} = {v}")?;
        }
        Ok(())
    }
}

impl ModelConfig {
    pub fn to_key_values(&self) -> KeyValues {
        let mut kv = KeyValues::default();
        kv.set("arch", self.arch.name());
        kv.set("in_channels", self.in_channels);
        kv.set("num_classes", self.num_classes);
        kv.set("depth", self.depth);
        kv.set("base_channels", self.base_channels);
        kv.set(
            "upsample",
            match self.upsample {
                Upsample::TransposedConv => "transposed_conv",
            },
        );
        kv
    }

    pub fn from_key_values(kv: &KeyValues) -> Result<Self> {
        kv.check_keys(&[
            "arch",
            "in_channels",
            "num_classes",
            "depth",
            "base_channels",
            "upsample",
        ])?;
        let mut c = ModelConfig::new(kv.require("arch")?);
        c.in_channels = kv.get("in_channels")?.unwrap_or(c.in_channels);
        c.num_classes = kv.get("num_classes")?.unwrap_or(c.num_classes);
        c.depth = kv.get("depth")?.unwrap_or(c.depth);
        c.base_channels = kv.get("base_channels")?.unwrap_or(c.base_channels);
        match kv.get_raw("upsample") {
            None | Some("transposed_conv") => {}
            Some(other) => return Err(Error::Config(format!("unsupported upsampling '{other}'"))),
        }
        c.validate()?;
        Ok(c)
    }
}

/// Comma-separated architecture list; `all` expands to every architecture.
pub fn parse_arch_list(s: &str) -> Result<Vec<Arch>> {
    let mut out = Vec::new();
    for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        if part.eq_ignore_ascii_case("all") {
            out.extend(Arch::ALL);
        } else {
            out.push(part.parse()?);
        }
    }
    if out.is_empty() {
        return Err(Error::Config("empty architecture list".into()));
    }
    out.dedup();
    Ok(out)
}

/// Everything a command-line run needs.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub data_dir: PathBuf,
    pub out_dir: PathBuf,
    pub archs: Vec<Arch>,
    pub train: TrainConfig,
    /// Samples generated by `synth`.
    pub total: usize,
    /// Canvas edge length used by `synth`.
    pub image_size: usize,
    pub train_fraction: f64,
    pub base_channels: usize,
    pub boxplot: bool,
    pub prediction_grid: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            data_dir: PathBuf::from("data"),
            out_dir: PathBuf::from("runs"),
            archs: Arch::ALL.to_vec(),
            train: TrainConfig::default(),
            total: 205,
            image_size: crate::data::CANVAS,
            train_fraction: 0.85,
            base_channels: 16,
            boxplot: true,
            prediction_grid: true,
        }
    }
}

const EXPERIMENT_KEYS: [&str; 13] = [
    "data_dir",
    "out_dir",
    "arch",
    "epochs",
    "learning_rate",
    "batch_size",
    "seed",
    "total",
    "image_size",
    "train_fraction",
    "base_channels",
    "boxplot",
    "prediction_grid",
];

impl ExperimentConfig {
    /// Defaults overridden by the keys present in `kv`.
    pub fn from_key_values(kv: &KeyValues) -> Result<Self> {
        kv.check_keys(&EXPERIMENT_KEYS)?;
        let mut c = ExperimentConfig::default();
        if let Some(v) = kv.get_raw("data_dir") {
            c.data_dir = v.into();
        }
        if let Some(v) = kv.get_raw("out_dir") {
            c.out_dir = v.into();
        }
        if let Some(v) = kv.get_raw("arch") {
            c.archs = parse_arch_list(v)?;
        }
        c.train.epochs = kv.get("epochs")?.unwrap_or(c.train.epochs);
        c.train.learning_rate = kv.get("learning_rate")?.unwrap_or(c.train.learning_rate);
        c.train.batch_size = kv.get("batch_size")?.unwrap_or(c.train.batch_size);
        c.train.seed = kv.get("seed")?.unwrap_or(c.train.seed);
        c.total = kv.get("total")?.unwrap_or(c.total);
        c.image_size = kv.get("image_size")?.unwrap_or(c.image_size);
        c.train_fraction = kv.get("train_fraction")?.unwrap_or(c.train_fraction);
        c.base_channels = kv.get("base_channels")?.unwrap_or(c.base_channels);
        c.boxplot = kv.get("boxplot")?.unwrap_or(c.boxplot);
        c.prediction_grid = kv.get("prediction_grid")?.unwrap_or(c.prediction_grid);
        c.validate()?;
        Ok(c)
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_key_values(&KeyValues::read(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if !(0.0..=1.0).contains(&self.train_fraction) {
            return Err(Error::Config(format!(
                "train_fraction must lie in [0, 1], got {}",
                self.train_fraction
            )));
        }
        if self.base_channels == 0 {
            return Err(Error::Config("base_channels must be positive".into()));
        }
        Ok(())
    }

    pub fn model_config(&self, arch: Arch) -> ModelConfig {
        ModelConfig::new(arch).with_base_channels(self.base_channels)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_whitespace() {
        let kv = KeyValues::parse("# run\n epochs = 3 \n\narch=unet,fau_net\n").unwrap();
        assert_eq!(kv.get::<usize>("epochs").unwrap(), Some(3));
        let c = ExperimentConfig::from_key_values(&kv).unwrap();
        assert_eq!(c.archs, vec![Arch::Unet, Arch::FauNet]);
        assert_eq!(c.train.epochs, 3);
        assert_eq!(c.train.batch_size, 6);
    }

    #[test]
    fn rejects_malformed_lines() {
        assert!(KeyValues::parse("epochs 3").is_err());
        assert!(KeyValues::parse("a = 1\na = 2").is_err());
        let kv = KeyValues::parse("epochs = three").unwrap();
        assert!(matches!(
            ExperimentConfig::from_key_values(&kv),
            Err(Error::Config(_))
        ));
        let kv = KeyValues::parse("colour = red").unwrap();
        assert!(ExperimentConfig::from_key_values(&kv).is_err());
    }

    #[test]
    fn model_config_round_trips() {
        let c = ModelConfig::new(Arch::AttR2Unet).with_base_channels(4);
        let text = c.to_key_values().to_string();
        let back = ModelConfig::from_key_values(&KeyValues::parse(&text).unwrap()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn all_expands() {
        assert_eq!(parse_arch_list("all").unwrap().len(), 7);
        assert!(parse_arch_list(" , ").is_err());
    }
}
