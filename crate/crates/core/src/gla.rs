//! LA block (local mixer plus FFN) and the GLA composition of GA and LA blocks.

use crate::attention::{Ffn, GaBlock};
use crate::config::{LocalKind, SeparatorConfig};
use crate::error::Result;
use crate::graph::Var;
use crate::hda::HdaLayer;
use crate::layers::{join, Conv1d, LayerNorm};
use crate::params::{Init, ParamStore, Session};
use crate::scalar::Scalar;

#[derive(Debug, Clone)]
pub enum LocalMixer {
    Hda(HdaLayer),
    Conv(Conv1d),
}

/// `ffn(x + mixer(LN(x)))`.
#[derive(Debug, Clone)]
pub struct LaBlock {
    pub name: String,
    pub norm: LayerNorm,
    pub mixer: LocalMixer,
    pub ffn: Ffn,
}

impl LaBlock {
    pub fn new(name: &str, cfg: &SeparatorConfig) -> Self {
        let n = cfg.channels;
        let mixer = match cfg.local {
            LocalKind::Hda => LocalMixer::Hda(HdaLayer::new(&join(name, "hda"), n, cfg.hda_init_k)),
            LocalKind::LargeKernel => {
                LocalMixer::Conv(Conv1d::depthwise(join(name, "conv"), n, cfg.large_kernel))
            }
        };
        Self {
            name: name.to_string(),
            norm: LayerNorm::new(join(name, "norm"), n),
            mixer,
            ffn: Ffn::new(&join(name, "ffn"), n, cfg.ffn_dim),
        }
    }

    pub fn init<T: Scalar>(&self, store: &mut ParamStore<T>, init: &mut Init) -> Result<()> {
        self.norm.init(store)?;
        match &self.mixer {
            LocalMixer::Hda(h) => h.init(store, init)?,
            LocalMixer::Conv(c) => c.init(store, init)?,
        }
        self.ffn.init(store, init)
    }

    pub fn mix<T: Scalar>(&self, s: &Session<T>, x: Var) -> Result<Var> {
        let h = self.norm.forward(s, x)?;
        let h = match &self.mixer {
            LocalMixer::Hda(l) => l.forward(s, h)?,
            LocalMixer::Conv(c) => c.forward(s, h)?,
        };
        s.add(x, h)
    }

    pub fn forward<T: Scalar>(&self, s: &Session<T>, x: Var) -> Result<Var> {
        let _scope = s.scope("la");
        let h = self.mix(s, x)?;
        self.ffn.forward(s, h)
    }
}

/// `x + dw3(x)`, substituted for a disabled sub-block.
#[derive(Debug, Clone)]
pub struct DwResidual {
    pub conv: Conv1d,
}

impl DwResidual {
    pub fn new(name: &str, channels: usize) -> Self {
        Self {
            conv: Conv1d::depthwise(name, channels, 3),
        }
    }

    pub fn forward<T: Scalar>(&self, s: &Session<T>, x: Var) -> Result<Var> {
        let h = self.conv.forward(s, x)?;
        s.add(x, h)
    }
}

#[derive(Debug, Clone)]
pub enum GlobalPart {
    Ga(GaBlock),
    Substitute(DwResidual),
}

#[derive(Debug, Clone)]
pub enum LocalPart {
    La(LaBlock),
    Substitute(DwResidual),
}

#[derive(Debug, Clone)]
pub struct GlaBlock {
    pub name: String,
    pub global: GlobalPart,
    pub local: LocalPart,
}

impl GlaBlock {
    /// `pool_exp` sets the coarse-attention pooling for this block's level.
    pub fn new(name: &str, cfg: &SeparatorConfig, pool_exp: usize) -> Self {
        let n = cfg.channels;
        let global = if cfg.use_ga {
            GlobalPart::Ga(GaBlock::new(
                &join(name, "ga"),
                n,
                cfg.heads,
                cfg.head_dim,
                cfg.ffn_dim,
                pool_exp,
            ))
        } else {
            GlobalPart::Substitute(DwResidual::new(&join(name, "ga_sub"), n))
        };
        let local = if cfg.use_la {
            LocalPart::La(LaBlock::new(&join(name, "la"), cfg))
        } else {
            LocalPart::Substitute(DwResidual::new(&join(name, "la_sub"), n))
        };
        Self {
            name: name.to_string(),
            global,
            local,
        }
    }

    pub fn init<T: Scalar>(&self, store: &mut ParamStore<T>, init: &mut Init) -> Result<()> {
        match &self.global {
            GlobalPart::Ga(g) => g.init(store, init)?,
            GlobalPart::Substitute(d) => d.conv.init(store, init)?,
        }
        match &self.local {
            LocalPart::La(l) => l.init(store, init),
            LocalPart::Substitute(d) => d.conv.init(store, init),
        }
    }

    pub fn forward<T: Scalar>(&self, s: &Session<T>, x: Var) -> Result<Var> {
        let h = match &self.global {
            GlobalPart::Ga(g) => g.forward(s, x)?,
            GlobalPart::Substitute(d) => d.forward(s, x)?,
        };
        match &self.local {
            LocalPart::La(l) => l.forward(s, h),
            LocalPart::Substitute(d) => d.forward(s, h),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ModelConfig;
    use crate::graph::Mode;
    use crate::tensor::Tensor;

    fn cfg(ga: bool, la: bool) -> SeparatorConfig {
        let mut c = ModelConfig::micro().separator;
        c.use_ga = ga;
        c.use_la = la;
        c
    }

    #[test]
    fn shapes_for_all_ablations() {
        for (ga, la) in [(true, true), (true, false), (false, true), (false, false)] {
            let b = GlaBlock::new("b", &cfg(ga, la), 2);
            let mut store = ParamStore::<f64>::new();
            b.init(&mut store, &mut Init::new(1)).unwrap();
            let s = Session::new(&store, Mode::Inference);
            for t in [4, 9, 32] {
                let x = s.constant(Init::new(2).uniform(&[8, t], 1));
                assert_eq!(s.shape(b.forward(&s, x).unwrap()), vec![8, t]);
            }
        }
    }

    #[test]
    fn both_disabled_is_two_depthwise_convs() {
        let b = GlaBlock::new("b", &cfg(false, false), 2);
        let mut store = ParamStore::<f64>::new();
        b.init(&mut store, &mut Init::new(1)).unwrap();
        assert_eq!(store.len(), 4);
        assert_eq!(store.count(""), 2 * (8 * 3 + 8));
    }

    #[test]
    fn zero_ffn_leaves_mixer_output() {
        let la = LaBlock::new("la", &cfg(true, true));
        let mut store = ParamStore::<f64>::new();
        la.init(&mut store, &mut Init::new(4)).unwrap();
        for n in ["la.ffn.contract.weight", "la.ffn.contract.bias"] {
            let shape = store.value(n).unwrap().shape().to_vec();
            store.set(n, Tensor::zeros(&shape)).unwrap();
        }
        let s = Session::new(&store, Mode::Inference);
        let x = s.constant(Init::new(6).uniform(&[8, 12], 1));
        let y = la.forward(&s, x).unwrap();
        let m = la.mix(&s, x).unwrap();
        assert_eq!(*s.value(y), *s.value(m));
    }

    #[test]
    fn large_kernel_variant() {
        let mut c = cfg(true, true);
        c.local = LocalKind::LargeKernel;
        let la = LaBlock::new("la", &c);
        let mut store = ParamStore::<f64>::new();
        la.init(&mut store, &mut Init::new(4)).unwrap();
        assert_eq!(store.value("la.conv.weight").unwrap().shape(), &[8, 1, 31]);
        let s = Session::new(&store, Mode::Inference);
        let x = s.constant(Init::new(6).uniform(&[8, 12], 1));
        assert_eq!(s.shape(la.forward(&s, x).unwrap()), vec![8, 12]);
    }
}
