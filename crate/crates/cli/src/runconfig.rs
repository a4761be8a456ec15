//! Flat `key = value` run configuration: model preset and overrides, data
//! sizes, optimizer settings, and seeds.

use std::fmt::Write as _;
use std::path::Path;

use dolphin_core::config::ModelConfig;
use dolphin_core::error::{Error, Result};
use dolphin_core::pipeline::{PretrainConfig, ToyData, TrainConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct BenchSettings {
    pub seconds: f64,
    pub runs: usize,
    pub warmups: usize,
}

impl Default for BenchSettings {
    fn default() -> Self {
        Self {
            seconds: 2.0,
            runs: 5,
            warmups: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub data: ToyData,
    pub train: TrainConfig,
    pub pretrain: PretrainConfig,
    /// Seed for separator parameter initialization.
    pub init_seed: u64,
    pub bench: BenchSettings,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::toy(),
            data: ToyData::default(),
            train: TrainConfig::default(),
            pretrain: PretrainConfig::default(),
            init_seed: 0,
            bench: BenchSettings::default(),
        }
    }
}

fn parse<V: std::str::FromStr>(key: &str, value: &str) -> Result<V> {
    value
        .parse()
        .map_err(|_| config_err!("invalid value {value:?} for {key}"))
}

impl RunConfig {
    /// Applies one key. `preset` resets the model, so it should come first.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let t = &mut self.train;
        let p = &mut self.pretrain;
        let d = &mut self.data;
        let b = &mut self.bench;
        match key {
            "seed" => self.init_seed = parse(key, value)?,
            "data.n_train" => d.n_train = parse(key, value)?,
            "data.n_val" => d.n_val = parse(key, value)?,
            "data.n_test" => d.n_test = parse(key, value)?,
            "data.duration_s" => d.duration_s = parse(key, value)?,
            "data.base_seed" => d.base_seed = parse(key, value)?,
            "train.steps" => t.steps = parse(key, value)?,
            "train.batch_size" => t.batch_size = parse(key, value)?,
            "train.lr" => t.lr = parse(key, value)?,
            "train.clip_norm" => t.clip_norm = parse(key, value)?,
            "train.crop_frames" => t.crop_frames = parse(key, value)?,
            "train.min_crop_energy" => t.min_crop_energy = parse(key, value)?,
            "train.seed" => t.seed = parse(key, value)?,
            "train.patience" => t.plateau_patience = parse(key, value)?,
            "train.early_stop" => t.early_stop = parse(key, value)?,
            "pretrain.steps" => p.steps = parse(key, value)?,
            "pretrain.batch_size" => p.batch_size = parse(key, value)?,
            "pretrain.lr" => p.lr = parse(key, value)?,
            "pretrain.crop_frames" => p.crop_frames = parse(key, value)?,
            "pretrain.seed" => p.seed = parse(key, value)?,
            "pretrain.teacher_seed" => p.teacher_seed = parse(key, value)?,
            "pretrain.kmeans_restarts" => p.kmeans_restarts = parse(key, value)?,
            "bench.seconds" => b.seconds = parse(key, value)?,
            "bench.runs" => b.runs = parse(key, value)?,
            "bench.warmups" => b.warmups = parse(key, value)?,
            _ => self.model.set(key, value)?,
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| config_err!("line {}: expected `key = value`", no + 1))?;
            cfg.set(k.trim(), v.trim())
                .map_err(|e| config_err!("line {}: {e}", no + 1))?;
        }
        cfg.model.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Loads `path` when given, otherwise the defaults.
    pub fn load_or_default(path: Option<&Path>) -> Result<Self> {
        path.map_or_else(|| Ok(Self::default()), Self::load)
    }

    /// Model keys in canonical form; parsing the result reproduces the model.
    pub fn model_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.model.to_kv() {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_overrides() {
        let c = RunConfig::parse(
            "# toy run\npreset = micro\n\nseparator.use_ga = false  # ablation\ntrain.steps = 12\nseed=4\n",
        )
        .unwrap();
        assert_eq!(c.model.audio.channels, 8);
        assert!(!c.model.separator.use_ga);
        assert_eq!((c.train.steps, c.init_seed), (12, 4));
    }

    #[test]
    fn rejects_unknown_and_malformed() {
        for bad in [
            "train.step = 3",
            "separator.chanels = 4",
            "just words",
            "train.lr = fast",
        ] {
            let e = RunConfig::parse(bad).unwrap_err();
            assert!(e.is_input_error());
            assert!(e.to_string().contains("line 1"), "{e}");
        }
    }

    #[test]
    fn model_text_round_trip() {
        let mut c = RunConfig::default();
        c.model.separator.mask_mode = true;
        c.model.lipcoder.widths = vec![4, 8, 32];
        let back = RunConfig::parse(&c.model_text()).unwrap();
        assert_eq!(back.model, c.model);
    }
}
