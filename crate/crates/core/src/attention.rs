//! Multi-head self-attention over time, coarse self-attention at pooled
//! resolution, the convolutional feed-forward block, and the GA block.

use crate::error::{input_err, Result};
use crate::graph::Var;
use crate::layers::{join, Conv1d, LayerNorm};
use crate::numerics::Interp;
use crate::params::{Init, ParamStore, Session};
use crate::scalar::Scalar;

/// Scope name wrapping the score, softmax, and weighted-sum stages.
pub const ATTN_CORE: &str = "attn_core";

#[derive(Debug, Clone)]
pub struct Mhsa {
    pub name: String,
    pub channels: usize,
    pub heads: usize,
    pub head_dim: usize,
    pub wq: Conv1d,
    pub wk: Conv1d,
    pub wv: Conv1d,
    pub wo: Conv1d,
}

impl Mhsa {
    pub fn new(name: &str, channels: usize, heads: usize, head_dim: usize) -> Self {
        let inner = heads * head_dim;
        Self {
            name: name.to_string(),
            channels,
            heads,
            head_dim,
            wq: Conv1d::pointwise(join(name, "wq"), channels, inner),
            wk: Conv1d::pointwise(join(name, "wk"), channels, inner),
            wv: Conv1d::pointwise(join(name, "wv"), channels, inner),
            wo: Conv1d::pointwise(join(name, "wo"), inner, channels),
        }
    }

    pub fn init<T: Scalar>(&self, store: &mut ParamStore<T>, init: &mut Init) -> Result<()> {
        for l in [&self.wq, &self.wk, &self.wv, &self.wo] {
            l.init(store, init)?;
        }
        Ok(())
    }

    fn project<T: Scalar>(&self, s: &Session<T>, x: Var) -> Result<[Var; 3]> {
        let t = s.shape(x)[1];
        let split = |v: Var| s.reshape(v, &[self.heads, self.head_dim, t]);
        Ok([
            split(self.wq.forward(s, x)?)?,
            split(self.wk.forward(s, x)?)?,
            split(self.wv.forward(s, x)?)?,
        ])
    }

    fn scores<T: Scalar>(&self, s: &Session<T>, q: Var, k: Var) -> Result<Var> {
        let scores = s.matmul(q, k, true, false)?;
        let scores = s.scale(scores, 1.0 / (self.head_dim as f64).sqrt());
        s.softmax(scores, 2)
    }

    /// Attention weights `[H, T, T]`; row `i` holds the weights of query `i`.
    pub fn weights<T: Scalar>(&self, s: &Session<T>, x: Var) -> Result<Var> {
        let [q, k, _] = self.project(s, x)?;
        let _core = s.scope(ATTN_CORE);
        self.scores(s, q, k)
    }

    /// `x: [N × T]` to `[N × T]`.
    pub fn forward<T: Scalar>(&self, s: &Session<T>, x: Var) -> Result<Var> {
        let _scope = s.scope("mhsa");
        let t = s.shape(x)[1];
        let [q, k, v] = self.project(s, x)?;
        let out = {
            let _core = s.scope(ATTN_CORE);
            let attn = self.scores(s, q, k)?;
            s.matmul(v, attn, false, true)?
        };
        let out = s.reshape(out, &[self.heads * self.head_dim, t])?;
        self.wo.forward(s, out)
    }
}

/// Pre-norm attention at `T / 2^pool_exp` resolution with a residual path.
#[derive(Debug, Clone)]
pub struct Csa {
    pub name: String,
    pub pool_exp: usize,
    pub norm: LayerNorm,
    pub mhsa: Mhsa,
}

impl Csa {
    pub fn new(
        name: &str,
        channels: usize,
        heads: usize,
        head_dim: usize,
        pool_exp: usize,
    ) -> Self {
        Self {
            name: name.to_string(),
            pool_exp,
            norm: LayerNorm::new(join(name, "norm"), channels),
            mhsa: Mhsa::new(&join(name, "mhsa"), channels, heads, head_dim),
        }
    }

    pub fn init<T: Scalar>(&self, store: &mut ParamStore<T>, init: &mut Init) -> Result<()> {
        self.norm.init(store)?;
        self.mhsa.init(store, init)
    }

    pub fn forward<T: Scalar>(&self, s: &Session<T>, x: Var) -> Result<Var> {
        let _scope = s.scope("csa");
        let t = s.shape(x)[1];
        let factor = 1usize << self.pool_exp;
        if t < factor {
            return Err(input_err!(
                "coarse attention needs at least {} frames, got {}",
                factor,
                t
            ));
        }
        let h = self.norm.forward(s, x)?;
        let p = s.pool(h, factor)?;
        let a = self.mhsa.forward(s, p)?;
        let up = s.interpolate(a, t, Interp::Linear)?;
        s.add(x, up)
    }
}

/// `x + pw(SiLU(dw3(SiLU(pw(LN(x))))))`.
#[derive(Debug, Clone)]
pub struct Ffn {
    pub name: String,
    pub norm: LayerNorm,
    pub expand: Conv1d,
    pub dw: Conv1d,
    pub contract: Conv1d,
}

impl Ffn {
    pub fn new(name: &str, channels: usize, hidden: usize) -> Self {
        Self {
            name: name.to_string(),
            norm: LayerNorm::new(join(name, "norm"), channels),
            expand: Conv1d::pointwise(join(name, "expand"), channels, hidden),
            dw: Conv1d::depthwise(join(name, "dw"), hidden, 3),
            contract: Conv1d::pointwise(join(name, "contract"), hidden, channels),
        }
    }

    pub fn init<T: Scalar>(&self, store: &mut ParamStore<T>, init: &mut Init) -> Result<()> {
        self.norm.init(store)?;
        self.expand.init(store, init)?;
        self.dw.init(store, init)?;
        self.contract.init(store, init)
    }

    pub fn forward<T: Scalar>(&self, s: &Session<T>, x: Var) -> Result<Var> {
        let _scope = s.scope("ffn");
        let h = self.norm.forward(s, x)?;
        let h = self.expand.forward(s, h)?;
        let h = s.silu(h);
        let h = self.dw.forward(s, h)?;
        let h = s.silu(h);
        let h = self.contract.forward(s, h)?;
        s.add(x, h)
    }
}

#[derive(Debug, Clone)]
pub struct GaBlock {
    pub name: String,
    pub csa: Csa,
    pub ffn: Ffn,
}

impl GaBlock {
    pub fn new(
        name: &str,
        channels: usize,
        heads: usize,
        head_dim: usize,
        ffn_dim: usize,
        pool_exp: usize,
    ) -> Self {
        Self {
            name: name.to_string(),
            csa: Csa::new(&join(name, "csa"), channels, heads, head_dim, pool_exp),
            ffn: Ffn::new(&join(name, "ffn"), channels, ffn_dim),
        }
    }

    pub fn init<T: Scalar>(&self, store: &mut ParamStore<T>, init: &mut Init) -> Result<()> {
        self.csa.init(store, init)?;
        self.ffn.init(store, init)
    }

    pub fn forward<T: Scalar>(&self, s: &Session<T>, x: Var) -> Result<Var> {
        let _scope = s.scope("ga");
        let h = self.csa.forward(s, x)?;
        self.ffn.forward(s, h)
    }
}
