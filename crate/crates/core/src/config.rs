//! Model hyperparameters with full-scale, toy, and micro presets, plus a flat
//! `key = value` representation used by run-config files.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use crate::error::{config_err, Error, Result};

/// Local mixer inside an LA block.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LocalKind {
    Hda,
    /// Single depthwise convolution with a long kernel.
    LargeKernel,
}

/// Separator level at which the fused audio-visual features enter.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FusionPosition {
    F0,
    F1,
    F2,
    F3,
}

impl FusionPosition {
    pub fn level(self) -> usize {
        match self {
            FusionPosition::F0 => 0,
            FusionPosition::F1 => 1,
            FusionPosition::F2 => 2,
            FusionPosition::F3 => 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AudioConfig {
    pub sample_rate: usize,
    pub channels: usize,
    pub kernel: usize,
    pub stride: usize,
}

impl AudioConfig {
    pub fn padding(&self) -> usize {
        (self.kernel - self.stride) / 2
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeparatorConfig {
    pub channels: usize,
    pub levels: usize,
    pub heads: usize,
    pub head_dim: usize,
    pub ffn_dim: usize,
    pub enc_blocks: usize,
    pub dec_blocks: usize,
    pub use_ga: bool,
    pub use_la: bool,
    pub local: LocalKind,
    pub large_kernel: usize,
    pub hda_init_k: f64,
    pub mask_mode: bool,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AvfConfig {
    pub fuse_dim: usize,
    pub unet_depth: usize,
    pub sub_features: usize,
    pub position: FusionPosition,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LipcoderConfig {
    pub frame_size: usize,
    /// Channel width of the stem followed by each downsampling stage.
    pub widths: Vec<usize>,
    pub embed_dim: usize,
    pub token_channels: usize,
    pub codebook_size: usize,
    pub beta: f64,
    pub temperature: f64,
    pub attn_heads: usize,
    pub attn_head_dim: usize,
    pub teacher_dim: usize,
    pub reconstruction_path: bool,
    pub stem_kernel: usize,
}

impl LipcoderConfig {
    pub fn stages(&self) -> usize {
        self.widths.len() - 1
    }

    pub fn latent_size(&self) -> usize {
        self.frame_size >> self.stages()
    }

    /// Length of the flattened per-frame visual token.
    pub fn token_dim(&self) -> usize {
        self.token_channels * self.latent_size() * self.latent_size()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub audio: AudioConfig,
    pub separator: SeparatorConfig,
    pub avf: AvfConfig,
    pub lipcoder: LipcoderConfig,
    pub video_fps: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::full()
    }
}

impl ModelConfig {
    /// Full-scale configuration.
    pub fn full() -> Self {
        Self {
            audio: AudioConfig {
                sample_rate: 16000,
                channels: 256,
                kernel: 16,
                stride: 4,
            },
            separator: SeparatorConfig {
                channels: 256,
                levels: 4,
                heads: 8,
                head_dim: 128,
                ffn_dim: 512,
                enc_blocks: 2,
                dec_blocks: 3,
                use_ga: true,
                use_la: true,
                local: LocalKind::Hda,
                large_kernel: 31,
                hda_init_k: 0.1,
                mask_mode: false,
                iterations: 1,
            },
            avf: AvfConfig {
                fuse_dim: 64,
                unet_depth: 4,
                sub_features: 4,
                position: FusionPosition::F0,
            },
            lipcoder: LipcoderConfig {
                frame_size: 88,
                widths: vec![4, 16, 32],
                embed_dim: 64,
                token_channels: 8,
                codebook_size: 256,
                beta: 1.0,
                temperature: 0.1,
                attn_heads: 8,
                attn_head_dim: 32,
                teacher_dim: 32,
                reconstruction_path: true,
                stem_kernel: 7,
            },
            video_fps: 25,
        }
    }

    /// Desk-scale configuration used for synthetic training.
    pub fn toy() -> Self {
        let mut c = Self::full();
        c.audio.channels = 32;
        c.separator = SeparatorConfig {
            channels: 32,
            levels: 3,
            heads: 2,
            head_dim: 16,
            ffn_dim: 64,
            ..c.separator
        };
        c.avf.fuse_dim = 32;
        c.avf.unet_depth = 2;
        c.avf.sub_features = 2;
        c.lipcoder = LipcoderConfig {
            frame_size: 16,
            widths: vec![4, 8, 16],
            embed_dim: 16,
            token_channels: 4,
            codebook_size: 64,
            attn_heads: 2,
            attn_head_dim: 8,
            ..c.lipcoder
        };
        c
    }

    /// Smallest configuration, used by whole-model gradient checks.
    pub fn micro() -> Self {
        let mut c = Self::toy();
        c.audio.channels = 8;
        c.separator = SeparatorConfig {
            channels: 8,
            levels: 2,
            heads: 2,
            head_dim: 4,
            ffn_dim: 8,
            ..c.separator
        };
        c.avf.fuse_dim = 8;
        c.avf.unet_depth = 1;
        c.lipcoder = LipcoderConfig {
            frame_size: 8,
            widths: vec![2, 4],
            embed_dim: 4,
            token_channels: 2,
            codebook_size: 8,
            attn_heads: 1,
            attn_head_dim: 4,
            teacher_dim: 4,
            stem_kernel: 3,
            ..c.lipcoder
        };
        c
    }

    pub fn validate(&self) -> Result<()> {
        let s = &self.separator;
        let a = &self.audio;
        let l = &self.lipcoder;
        let check = |ok: bool, msg: &str| {
            if ok {
                Ok(())
            } else {
                Err(config_err!("{}", msg))
            }
        };
        check(
            a.channels == s.channels,
            "audio and separator widths differ",
        )?;
        check(
            a.kernel >= a.stride && (a.kernel - a.stride) % 2 == 0,
            "audio kernel/stride must leave even padding",
        )?;
        check(
            a.sample_rate % self.video_fps == 0,
            "sample rate must be a multiple of the frame rate",
        )?;
        check(
            a.sample_rate / self.video_fps % a.stride == 0,
            "audio frames per video frame must be integral",
        )?;
        check(
            s.channels > 0 && s.heads > 0 && s.head_dim > 0,
            "separator widths must be positive",
        )?;
        check(
            s.ffn_dim >= s.channels,
            "FFN width must be at least the model width",
        )?;
        check(
            s.enc_blocks > 0 && s.dec_blocks > 0,
            "each separator layer needs at least one block",
        )?;
        check(s.iterations >= 1, "iterations must be at least 1")?;
        check(s.large_kernel % 2 == 1, "large kernel must be odd")?;
        check(
            s.hda_init_k > 0.0,
            "initial diffusion coefficient must be positive",
        )?;
        check(
            self.avf.sub_features >= 1,
            "sub-feature count must be at least 1",
        )?;
        check(
            self.avf.position.level() <= s.levels,
            "fusion position deeper than the encoder",
        )?;
        check(
            l.widths.len() >= 2,
            "the video codec needs at least one stage",
        )?;
        check(
            l.widths.iter().all(|&w| w > 0),
            "video widths must be positive",
        )?;
        check(
            l.frame_size % (1 << l.stages()) == 0,
            "frame size must be divisible by 2^stages",
        )?;
        check(l.codebook_size > 0, "codebook must not be empty")?;
        check(l.stem_kernel % 2 == 1, "stem kernel must be odd")?;
        check(
            l.beta >= 0.0 && l.temperature >= 0.0,
            "beta and temperature must be nonnegative",
        )?;
        Ok(())
    }

    /// Audio samples per video frame.
    pub fn samples_per_frame(&self) -> usize {
        self.audio.sample_rate / self.video_fps
    }

    /// Waveform length granularity: whole video frames and `2^Q` feature frames.
    pub fn length_quantum(&self) -> usize {
        let feat = self.audio.stride << self.separator.levels;
        lcm(feat, self.samples_per_frame())
    }

    /// Flat key-value form; every field appears exactly once.
    pub fn to_kv(&self) -> BTreeMap<String, String> {
        let mut m = BTreeMap::new();
        let mut put = |k: &str, v: String| {
            m.insert(k.to_string(), v);
        };
        let a = &self.audio;
        put("audio.sample_rate", a.sample_rate.to_string());
        put("audio.channels", a.channels.to_string());
        put("audio.kernel", a.kernel.to_string());
        put("audio.stride", a.stride.to_string());
        let s = &self.separator;
        put("separator.channels", s.channels.to_string());
        put("separator.levels", s.levels.to_string());
        put("separator.heads", s.heads.to_string());
        put("separator.head_dim", s.head_dim.to_string());
        put("separator.ffn_dim", s.ffn_dim.to_string());
        put("separator.enc_blocks", s.enc_blocks.to_string());
        put("separator.dec_blocks", s.dec_blocks.to_string());
        put("separator.use_ga", s.use_ga.to_string());
        put("separator.use_la", s.use_la.to_string());
        put("separator.local", s.local.to_string());
        put("separator.large_kernel", s.large_kernel.to_string());
        put("separator.hda_init_k", s.hda_init_k.to_string());
        put("separator.mask_mode", s.mask_mode.to_string());
        put("separator.iterations", s.iterations.to_string());
        let v = &self.avf;
        put("avf.fuse_dim", v.fuse_dim.to_string());
        put("avf.unet_depth", v.unet_depth.to_string());
        put("avf.sub_features", v.sub_features.to_string());
        put("avf.position", v.position.to_string());
        let l = &self.lipcoder;
        put("lipcoder.frame_size", l.frame_size.to_string());
        put(
            "lipcoder.widths",
            l.widths
                .iter()
                .map(|w| w.to_string())
                .collect::<Vec<_>>()
                .join(","),
        );
        put("lipcoder.embed_dim", l.embed_dim.to_string());
        put("lipcoder.token_channels", l.token_channels.to_string());
        put("lipcoder.codebook_size", l.codebook_size.to_string());
        put("lipcoder.beta", l.beta.to_string());
        put("lipcoder.temperature", l.temperature.to_string());
        put("lipcoder.attn_heads", l.attn_heads.to_string());
        put("lipcoder.attn_head_dim", l.attn_head_dim.to_string());
        put("lipcoder.teacher_dim", l.teacher_dim.to_string());
        put(
            "lipcoder.reconstruction_path",
            l.reconstruction_path.to_string(),
        );
        put("lipcoder.stem_kernel", l.stem_kernel.to_string());
        put("video_fps", self.video_fps.to_string());
        m
    }

    /// Sets one field from its flat key. Unknown keys are rejected.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let a = &mut self.audio;
        let s = &mut self.separator;
        let v = &mut self.avf;
        let l = &mut self.lipcoder;
        match key {
            "preset" => {
                *self = match value {
                    "full" => Self::full(),
                    "toy" => Self::toy(),
                    "micro" => Self::micro(),
                    _ => return Err(config_err!("unknown preset {value:?}")),
                }
            }
            "audio.sample_rate" => a.sample_rate = parse(key, value)?,
            "audio.channels" => a.channels = parse(key, value)?,
            "audio.kernel" => a.kernel = parse(key, value)?,
            "audio.stride" => a.stride = parse(key, value)?,
            "separator.channels" => s.channels = parse(key, value)?,
            "separator.levels" => s.levels = parse(key, value)?,
            "separator.heads" => s.heads = parse(key, value)?,
            "separator.head_dim" => s.head_dim = parse(key, value)?,
            "separator.ffn_dim" => s.ffn_dim = parse(key, value)?,
            "separator.enc_blocks" => s.enc_blocks = parse(key, value)?,
            "separator.dec_blocks" => s.dec_blocks = parse(key, value)?,
            "separator.use_ga" => s.use_ga = parse(key, value)?,
            "separator.use_la" => s.use_la = parse(key, value)?,
            "separator.local" => s.local = parse(key, value)?,
            "separator.large_kernel" => s.large_kernel = parse(key, value)?,
            "separator.hda_init_k" => s.hda_init_k = parse(key, value)?,
            "separator.mask_mode" => s.mask_mode = parse(key, value)?,
            "separator.iterations" => s.iterations = parse(key, value)?,
            "avf.fuse_dim" => v.fuse_dim = parse(key, value)?,
            "avf.unet_depth" => v.unet_depth = parse(key, value)?,
            "avf.sub_features" => v.sub_features = parse(key, value)?,
            "avf.position" => v.position = parse(key, value)?,
            "lipcoder.frame_size" => l.frame_size = parse(key, value)?,
            "lipcoder.widths" => {
                l.widths = value
                    .split(',')
                    .map(|w| parse(key, w.trim()))
                    .collect::<Result<_>>()?
            }
            "lipcoder.embed_dim" => l.embed_dim = parse(key, value)?,
            "lipcoder.token_channels" => l.token_channels = parse(key, value)?,
            "lipcoder.codebook_size" => l.codebook_size = parse(key, value)?,
            "lipcoder.beta" => l.beta = parse(key, value)?,
            "lipcoder.temperature" => l.temperature = parse(key, value)?,
            "lipcoder.attn_heads" => l.attn_heads = parse(key, value)?,
            "lipcoder.attn_head_dim" => l.attn_head_dim = parse(key, value)?,
            "lipcoder.teacher_dim" => l.teacher_dim = parse(key, value)?,
            "lipcoder.reconstruction_path" => l.reconstruction_path = parse(key, value)?,
            "lipcoder.stem_kernel" => l.stem_kernel = parse(key, value)?,
            "video_fps" => self.video_fps = parse(key, value)?,
            _ => return Err(config_err!("unknown config key {key:?}")),
        }
        Ok(())
    }
}

fn parse<V: FromStr>(key: &str, value: &str) -> Result<V> {
    value
        .parse()
        .map_err(|_| config_err!("invalid value {value:?} for {key}"))
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

fn lcm(a: usize, b: usize) -> usize {
    a / gcd(a, b) * b
}

impl fmt::Display for LocalKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LocalKind::Hda => "hda",
            LocalKind::LargeKernel => "large_kernel",
        })
    }
}

impl FromStr for LocalKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hda" => Ok(LocalKind::Hda),
            "large_kernel" => Ok(LocalKind::LargeKernel),
            _ => Err(config_err!("unknown local mixer {s:?}")),
        }
    }
}

impl fmt::Display for FusionPosition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "F{}", self.level())
    }
}

impl FromStr for FusionPosition {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "F0" => Ok(FusionPosition::F0),
            "F1" => Ok(FusionPosition::F1),
            "F2" => Ok(FusionPosition::F2),
            "F3" => Ok(FusionPosition::F3),
            _ => Err(config_err!("unknown fusion position {s:?}")),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        for c in [
            ModelConfig::full(),
            ModelConfig::toy(),
            ModelConfig::micro(),
        ] {
            c.validate().unwrap();
        }
        assert_eq!(ModelConfig::full().lipcoder.token_dim(), 3872);
        assert_eq!(ModelConfig::full().audio.padding(), 6);
    }

    #[test]
    fn kv_round_trip() {
        let c = ModelConfig::toy();
        let mut d = ModelConfig::full();
        for (k, v) in c.to_kv() {
            d.set(&k, &v).unwrap();
        }
        assert_eq!(c, d);
        assert!(d.set("separator.level", "3").is_err());
        assert!(d.set("separator.levels", "x").is_err());
    }

    #[test]
    fn invalid_configs_rejected() {
        let mut c = ModelConfig::toy();
        c.separator.ffn_dim = 8;
        assert!(c.validate().is_err());
        let mut c = ModelConfig::toy();
        c.lipcoder.frame_size = 18;
        assert!(c.validate().is_err());
    }

    #[test]
    fn length_quantum() {
        let c = ModelConfig::full();
        // 640 samples per frame, 64 samples per 2^Q feature frames
        assert_eq!(c.length_quantum(), 640);
        assert_eq!(ModelConfig::toy().length_quantum(), 640);
    }
}
