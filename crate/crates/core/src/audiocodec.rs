//! Waveform to feature transforms: a strided convolution encoder with ReLU
//! and its transposed-convolution mirror.

use crate::config::AudioConfig;
use crate::error::{config_err, input_err, Result};
use crate::graph::Var;
use crate::layers::{join, Conv1d, ConvTranspose1d};
use crate::numerics::ConvSpec;
use crate::params::{Init, ParamStore, Session};
use crate::scalar::Scalar;

#[derive(Debug, Clone)]
pub struct AudioCodec {
    pub cfg: AudioConfig,
    pub encoder: Conv1d,
    pub decoder: ConvTranspose1d,
}

impl AudioCodec {
    pub fn new(name: &str, cfg: &AudioConfig) -> Self {
        let p = cfg.padding();
        Self {
            cfg: cfg.clone(),
            encoder: Conv1d::new(
                join(name, "enc"),
                ConvSpec::new(1, cfg.channels, cfg.kernel)
                    .stride(cfg.stride)
                    .padding(p, p),
            ),
            decoder: ConvTranspose1d::new(
                join(name, "dec"),
                ConvSpec::new(cfg.channels, 1, cfg.kernel)
                    .stride(cfg.stride)
                    .padding(p, p),
            ),
        }
    }

    pub fn init<T: Scalar>(&self, store: &mut ParamStore<T>, init: &mut Init) -> Result<()> {
        if self.cfg.kernel < self.cfg.stride || (self.cfg.kernel - self.cfg.stride) % 2 != 0 {
            return Err(config_err!(
                "kernel {} and stride {} do not give symmetric padding",
                self.cfg.kernel,
                self.cfg.stride
            ));
        }
        self.encoder.init(store, init)?;
        self.decoder.init(store, init)
    }

    /// `[1 × L] → [N × L/stride]`.
    pub fn encode<T: Scalar>(&self, s: &Session<T>, wave: Var) -> Result<Var> {
        let sh = s.shape(wave);
        if sh.len() != 2 || sh[0] != 1 {
            return Err(input_err!("waveform must be [1 × L], got {:?}", sh));
        }
        if sh[1] % self.cfg.stride != 0 {
            return Err(input_err!(
                "waveform length {} is not a multiple of {}",
                sh[1],
                self.cfg.stride
            ));
        }
        let _scope = s.scope("audio_enc");
        let x = self.encoder.forward(s, wave)?;
        Ok(s.relu(x))
    }

    /// `[N × T] → [1 × T·stride]`, trimmed to `len` samples when given.
    pub fn decode<T: Scalar>(&self, s: &Session<T>, feats: Var, len: Option<usize>) -> Result<Var> {
        let _scope = s.scope("audio_dec");
        let y = self.decoder.forward(s, feats)?;
        match len {
            Some(l) if l < s.shape(y)[1] => s.slice(y, 1, 0, l),
            Some(l) if l > s.shape(y)[1] => {
                Err(input_err!("cannot trim {} samples to {}", s.shape(y)[1], l))
            }
            _ => Ok(y),
        }
    }
}

/// Zero-pads a waveform on the right to a multiple of `quantum`.
pub fn pad_to_multiple<T: Scalar>(wave: &[T], quantum: usize) -> Vec<T> {
    let q = quantum.max(1);
    let len = wave.len().div_ceil(q) * q;
    let mut out = wave.to_vec();
    out.resize(len.max(q), T::zero());
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ModelConfig;
    use crate::graph::Mode;
    use crate::tensor::Tensor;

    fn codec() -> (AudioCodec, ParamStore<f32>) {
        let c = AudioCodec::new("audio", &ModelConfig::full().audio);
        let mut store = ParamStore::new();
        c.init(&mut store, &mut Init::new(1)).unwrap();
        (c, store)
    }

    #[test]
    fn lengths_and_counts() {
        let (c, store) = codec();
        assert_eq!(store.count("audio.enc."), 4352);
        let s = Session::new(&store, Mode::Inference);
        let a = s.constant(Init::new(2).uniform(&[1, 16000], 1));
        let x = c.encode(&s, a).unwrap();
        assert_eq!(s.shape(x), vec![256, 4000]);
        let y = c.decode(&s, x, None).unwrap();
        assert_eq!(s.shape(y), vec![1, 16000]);
        let y = c.decode(&s, x, Some(15998)).unwrap();
        assert_eq!(s.shape(y), vec![1, 15998]);
        let odd = s.constant(Tensor::zeros(&[1, 15999]));
        assert!(c.encode(&s, odd).unwrap_err().is_input_error());
    }

    #[test]
    fn zero_inputs_give_bias_responses() {
        let (c, mut store) = codec();
        let b = Init::new(3).uniform::<f32>(&[256], 1);
        store.set("audio.enc.bias", b.clone()).unwrap();
        store
            .set("audio.dec.bias", Tensor::full(&[1], 0.25))
            .unwrap();
        let s = Session::new(&store, Mode::Inference);
        let x = s.value(c.encode(&s, s.constant(Tensor::zeros(&[1, 64]))).unwrap());
        for (ch, row) in x.data().chunks(16).enumerate() {
            assert!(row.iter().all(|&v| v == b.data()[ch].max(0.0)));
        }
        let y = s.value(
            c.decode(&s, s.constant(Tensor::zeros(&[256, 16])), None)
                .unwrap(),
        );
        assert!(y.data().iter().all(|&v| v == 0.25));
    }

    #[test]
    fn padding_round_trip() {
        let (c, store) = codec();
        let s = Session::new(&store, Mode::Inference);
        for len in [1usize, 5, 63, 64, 130] {
            let w: Vec<f32> = (0..len).map(|i| (i as f32).sin()).collect();
            let p = pad_to_multiple(&w, 4);
            assert_eq!(p.len() % 4, 0);
            assert_eq!(&p[..len], &w[..]);
            let a = s.constant(Tensor::new(&[1, p.len()], p).unwrap());
            let y = c.decode(&s, c.encode(&s, a).unwrap(), Some(len)).unwrap();
            assert_eq!(s.shape(y), vec![1, len]);
        }
    }
}
