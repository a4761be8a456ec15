//! Audio-visual fusion: merges the two visual token streams, then combines
//! them with audio features through a gated pathway and a multi-space
//! channel-attention pathway.

use crate::config::{AvfConfig, ModelConfig};
use crate::error::{config_err, shape_err, Result};
use crate::graph::Var;
use crate::layers::{join, Conv1d};
use crate::numerics::{ConvSpec, Interp};
use crate::params::{Init, ParamStore, Session};
use crate::scalar::Scalar;

/// `x + pw(SiLU(dw3(x)))`.
#[derive(Debug, Clone)]
pub struct ConvBlock {
    pub dw: Conv1d,
    pub pw: Conv1d,
}

impl ConvBlock {
    pub fn new(name: &str, channels: usize) -> Self {
        Self {
            dw: Conv1d::depthwise(join(name, "dw"), channels, 3),
            pw: Conv1d::pointwise(join(name, "pw"), channels, channels),
        }
    }

    pub fn init<T: Scalar>(&self, store: &mut ParamStore<T>, init: &mut Init) -> Result<()> {
        self.dw.init(store, init)?;
        self.pw.init(store, init)
    }

    pub fn forward<T: Scalar>(&self, s: &Session<T>, x: Var) -> Result<Var> {
        let h = self.dw.forward(s, x)?;
        let h = s.silu(h);
        let h = self.pw.forward(s, h)?;
        s.add(x, h)
    }
}

/// Temporal U-shaped network: pool ×2 per level on the way down, linear
/// upsampling with additive skips on the way up.
#[derive(Debug, Clone)]
pub struct TemporalUnet {
    pub down: Vec<ConvBlock>,
    pub up: Vec<ConvBlock>,
}

impl TemporalUnet {
    pub fn new(name: &str, channels: usize, depth: usize) -> Self {
        Self {
            down: (0..=depth)
                .map(|l| ConvBlock::new(&join(name, &format!("down{l}")), channels))
                .collect(),
            up: (0..depth)
                .map(|l| ConvBlock::new(&join(name, &format!("up{l}")), channels))
                .collect(),
        }
    }

    pub fn init<T: Scalar>(&self, store: &mut ParamStore<T>, init: &mut Init) -> Result<()> {
        for b in self.down.iter().chain(&self.up) {
            b.init(store, init)?;
        }
        Ok(())
    }

    pub fn forward<T: Scalar>(&self, s: &Session<T>, x: Var) -> Result<Var> {
        let mut skips = Vec::with_capacity(self.down.len());
        let mut h = x;
        for (l, b) in self.down.iter().enumerate() {
            if l > 0 {
                h = s.pool(h, 2)?;
            }
            h = b.forward(s, h)?;
            skips.push(h);
        }
        for l in (0..self.up.len()).rev() {
            let t = s.shape(skips[l])[1];
            let u = s.interpolate(h, t, Interp::Linear)?;
            let m = s.add(skips[l], u)?;
            h = self.up[l].forward(s, m)?;
        }
        Ok(h)
    }
}

#[derive(Debug, Clone)]
pub struct Avf {
    pub name: String,
    pub cfg: AvfConfig,
    pub channels: usize,
    pub token_dim: usize,
    pub proj_in: Conv1d,
    pub unet: TemporalUnet,
    pub proj_out: Conv1d,
    pub w1: Conv1d,
    pub w2: Conv1d,
    pub w3: Conv1d,
    pub w4: Conv1d,
}

impl Avf {
    pub fn new(name: &str, cfg: &ModelConfig) -> Self {
        let n = cfg.audio.channels;
        let a = &cfg.avf;
        let dv = cfg.lipcoder.token_dim();
        let p = |k: &str| join(name, k);
        let k = a.sub_features;
        Self {
            name: name.to_string(),
            cfg: a.clone(),
            channels: n,
            token_dim: dv,
            proj_in: Conv1d::pointwise(p("proj_in"), dv, a.fuse_dim),
            unet: TemporalUnet::new(&p("unet"), a.fuse_dim, a.unet_depth),
            proj_out: Conv1d::pointwise(p("proj_out"), a.fuse_dim, n),
            w1: Conv1d::depthwise(p("w1"), n, 1),
            w2: Conv1d::depthwise(p("w2"), n, 1),
            w3: Conv1d::new(p("w3"), ConvSpec::new(n, n * k, 1).groups(n)),
            w4: Conv1d::depthwise(p("w4"), n, 1),
        }
    }

    pub fn init<T: Scalar>(&self, store: &mut ParamStore<T>, init: &mut Init) -> Result<()> {
        if self.cfg.sub_features == 0 {
            return Err(config_err!("sub-feature count must be at least 1"));
        }
        self.proj_in.init(store, init)?;
        self.unet.init(store, init)?;
        self.proj_out.init(store, init)?;
        for w in [&self.w1, &self.w2, &self.w3, &self.w4] {
            w.init(store, init)?;
        }
        Ok(())
    }

    /// `(V_r + V_s)` through projection, U-net, and output projection: `[N × T_v]`.
    pub fn merge_visual_tokens<T: Scalar>(&self, s: &Session<T>, vr: Var, vs: Var) -> Result<Var> {
        if s.shape(vr) != s.shape(vs) {
            return Err(shape_err!(
                "visual token streams {:?} and {:?} differ",
                s.shape(vr),
                s.shape(vs)
            ));
        }
        let v = s.add(vr, vs)?;
        let h = self.proj_in.forward(s, v)?;
        let h = self.unet.forward(s, h)?;
        self.proj_out.forward(s, h)
    }

    /// `φ(W₁ Ṽ) ⊙ W₂ X`.
    pub fn gated_fusion<T: Scalar>(&self, s: &Session<T>, v: Var, x: Var) -> Result<Var> {
        let t = s.shape(x)[1];
        let g = self.w1.forward(s, v)?;
        let g = s.interpolate(g, t, Interp::Nearest)?;
        let a = self.w2.forward(s, x)?;
        s.mul(g, a)
    }

    /// `φ(softmax_c(mean_k W₃ Ṽ)) ⊙ W₄ X`.
    pub fn multispace_fusion<T: Scalar>(&self, s: &Session<T>, v: Var, x: Var) -> Result<Var> {
        let (n, k) = (self.channels, self.cfg.sub_features);
        let tv = s.shape(v)[1];
        let t = s.shape(x)[1];
        let vh = self.w3.forward(s, v)?;
        let parts = s.reshape(vh, &[n, k, tv])?;
        let mean = s.mean_axis(parts, 1)?;
        let mean = s.reshape(mean, &[n, tv])?;
        let att = s.softmax(mean, 0)?;
        let att = s.interpolate(att, t, Interp::Nearest)?;
        let a = self.w4.forward(s, x)?;
        s.mul(att, a)
    }

    /// `F = F₁ + F₂` at the audio feature length.
    pub fn forward<T: Scalar>(&self, s: &Session<T>, vr: Var, vs: Var, x: Var) -> Result<Var> {
        let _scope = s.scope(&self.name);
        let v = self.merge_visual_tokens(s, vr, vs)?;
        let f1 = self.gated_fusion(s, v, x)?;
        let f2 = self.multispace_fusion(s, v, x)?;
        s.add(f1, f2)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Mode;
    use crate::tensor::Tensor;

    fn build(k: usize) -> (Avf, ParamStore<f64>) {
        let mut cfg = ModelConfig::micro();
        cfg.avf.sub_features = k;
        let avf = Avf::new("avf", &cfg);
        let mut store = ParamStore::new();
        avf.init(&mut store, &mut Init::new(5)).unwrap();
        (avf, store)
    }

    #[test]
    fn opposite_streams_give_bias_response() {
        let (avf, mut store) = build(2);
        store
            .set("avf.proj_out.bias", Tensor::full(&[8], 0.3))
            .unwrap();
        let s = Session::new(&store, Mode::Inference);
        let d = avf.token_dim;
        let vr = Init::new(1).uniform::<f64>(&[d, 6], 1);
        let a = s.constant(vr.clone());
        let b = s.constant(vr.map(|v| -v));
        let m = avf.merge_visual_tokens(&s, a, b).unwrap();
        let zero = s.constant(Tensor::zeros(&[d, 6]));
        let z = avf.merge_visual_tokens(&s, zero, zero).unwrap();
        assert_eq!(s.shape(m), vec![8, 6]);
        assert!(s.value(m).max_abs_diff(&s.value(z)) < 1e-15);
    }

    #[test]
    fn gated_fusion_limits() {
        let (avf, mut store) = build(2);
        store
            .set("avf.w1.weight", Tensor::zeros(&[8, 1, 1]))
            .unwrap();
        store.set("avf.w1.bias", Tensor::full(&[8], 1.0)).unwrap();
        let s = Session::new(&store, Mode::Inference);
        let v = s.constant(Init::new(1).uniform(&[8, 3], 1));
        let x = s.constant(Init::new(2).uniform(&[8, 12], 1));
        let f1 = avf.gated_fusion(&s, v, x).unwrap();
        let w2x = avf.w2.forward(&s, x).unwrap();
        assert!(s.value(f1).max_abs_diff(&s.value(w2x)) < 1e-15);
        drop(s);
        store
            .set("avf.w2.weight", Tensor::zeros(&[8, 1, 1]))
            .unwrap();
        let s = Session::new(&store, Mode::Inference);
        let v = s.constant(Init::new(1).uniform(&[8, 3], 1));
        let x = s.constant(Init::new(2).uniform(&[8, 12], 1));
        let f1 = avf.gated_fusion(&s, v, x).unwrap();
        assert!(s.value(f1).data().iter().all(|&y| y == 0.0));
    }

    #[test]
    fn channel_attention_sums_to_one() {
        for k in [1, 4] {
            let (avf, mut store) = build(k);
            store
                .set("avf.w4.weight", Tensor::ones(&[8, 1, 1]))
                .unwrap();
            let s = Session::new(&store, Mode::Inference);
            let v = s.constant(Init::new(1).uniform(&[8, 3], 1));
            let x = s.constant(Tensor::ones(&[8, 12]));
            let f2 = s.value(avf.multispace_fusion(&s, v, x).unwrap());
            for j in 0..12 {
                let col: f64 = (0..8).map(|c| f2.data()[c * 12 + j]).sum();
                assert!((col - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn single_subfeature_uses_it_directly() {
        let (avf, mut store) = build(1);
        store
            .set("avf.w4.weight", Tensor::ones(&[8, 1, 1]))
            .unwrap();
        let s = Session::new(&store, Mode::Inference);
        let v = s.constant(Init::new(1).uniform(&[8, 3], 1));
        let x = s.constant(Tensor::ones(&[8, 3]));
        let f2 = avf.multispace_fusion(&s, v, x).unwrap();
        let w3 = avf.w3.forward(&s, v).unwrap();
        let e = s.softmax(w3, 0).unwrap();
        assert!(s.value(f2).max_abs_diff(&s.value(e)) < 1e-15);
    }

    #[test]
    fn forward_is_sum_of_pathways() {
        let (avf, store) = build(2);
        let s = Session::new(&store, Mode::Inference);
        let d = avf.token_dim;
        let vr = s.constant(Init::new(1).uniform(&[d, 4], 1));
        let vs = s.constant(Init::new(2).uniform(&[d, 4], 1));
        let x = s.constant(Init::new(3).uniform(&[8, 16], 1));
        let f = avf.forward(&s, vr, vs, x).unwrap();
        let v = avf.merge_visual_tokens(&s, vr, vs).unwrap();
        let f1 = avf.gated_fusion(&s, v, x).unwrap();
        let f2 = avf.multispace_fusion(&s, v, x).unwrap();
        let e = s.add(f1, f2).unwrap();
        assert_eq!(*s.value(f), *s.value(e));
        assert_eq!(s.shape(f), vec![8, 16]);
    }
}
