//! Encoder, bottleneck, top-down injection, decoder, and output heads.

use crate::attention::GaBlock;
use crate::config::SeparatorConfig;
use crate::error::{config_err, input_err, Result};
use crate::gla::GlaBlock;
use crate::graph::Var;
use crate::layers::{glu, join, Conv1d};
use crate::numerics::{ConvSpec, Interp};
use crate::params::{Init, ParamStore, Session};
use crate::scalar::Scalar;

/// Decoder level whose state feeds the auxiliary head.
pub const AUX_LEVEL: usize = 3;

/// Gated injection `m ⊙ σ(φ(W_a g)) + φ(W_b g)` with φ a resize to `m`'s length.
#[derive(Debug, Clone)]
pub struct Injection {
    pub gate: Conv1d,
    pub shift: Conv1d,
    pub resize: Interp,
}

impl Injection {
    pub fn new(name: &str, channels: usize, resize: Interp) -> Self {
        Self {
            gate: Conv1d::pointwise(join(name, "gate"), channels, channels),
            shift: Conv1d::pointwise(join(name, "shift"), channels, channels),
            resize,
        }
    }

    pub fn init<T: Scalar>(&self, store: &mut ParamStore<T>, init: &mut Init) -> Result<()> {
        self.gate.init(store, init)?;
        self.shift.init(store, init)
    }

    pub fn forward<T: Scalar>(&self, s: &Session<T>, m: Var, g: Var) -> Result<Var> {
        let t = s.shape(m)[1];
        let a = self.gate.forward(s, g)?;
        let a = s.interpolate(a, t, self.resize)?;
        let a = s.sigmoid(a);
        let b = self.shift.forward(s, g)?;
        let b = s.interpolate(b, t, self.resize)?;
        let gated = s.mul(m, a)?;
        s.add(gated, b)
    }
}

#[derive(Debug, Clone)]
pub struct SeparatorOutput {
    /// Estimated target features `[N × T]`.
    pub estimate: Var,
    /// Final decoder state at full resolution.
    pub decoded: Var,
    /// Decoder state at `T / 8`, when the hierarchy is deep enough.
    pub aux_state: Option<Var>,
}

#[derive(Debug, Clone)]
pub struct Separator {
    pub name: String,
    pub cfg: SeparatorConfig,
    pub enc: Vec<Vec<GlaBlock>>,
    pub down: Vec<Conv1d>,
    pub top: GaBlock,
    pub tda: Vec<Injection>,
    pub fuse: Vec<Injection>,
    pub dec: Vec<Vec<GlaBlock>>,
    pub head_in: Conv1d,
    pub head_out: Conv1d,
    pub aux: Conv1d,
}

impl Separator {
    pub fn new(name: &str, cfg: &SeparatorConfig) -> Self {
        let n = cfg.channels;
        let q = cfg.levels;
        let p = |k: &str| join(name, k);
        let blocks = |prefix: String, count: usize, level: usize| -> Vec<GlaBlock> {
            (0..count)
                .map(|i| GlaBlock::new(&join(&prefix, &format!("gla{i}")), cfg, q - level))
                .collect()
        };
        Self {
            name: name.to_string(),
            cfg: cfg.clone(),
            enc: (0..=q)
                .map(|l| blocks(p(&format!("enc{l}")), cfg.enc_blocks, l))
                .collect(),
            down: (1..=q)
                .map(|l| {
                    Conv1d::new(
                        p(&format!("down{l}")),
                        ConvSpec::new(n, n, 4).groups(n).stride(2).padding(1, 1),
                    )
                })
                .collect(),
            top: GaBlock::new(&p("top"), n, cfg.heads, cfg.head_dim, cfg.ffn_dim, 0),
            tda: (0..=q)
                .map(|l| Injection::new(&p(&format!("tda{l}")), n, Interp::Nearest))
                .collect(),
            fuse: (0..q)
                .map(|l| Injection::new(&p(&format!("dec{l}.fuse")), n, Interp::Linear))
                .collect(),
            dec: (0..q)
                .map(|l| blocks(p(&format!("dec{l}")), cfg.dec_blocks, l))
                .collect(),
            head_in: Conv1d::pointwise(p("head.in"), n, 2 * n),
            head_out: Conv1d::pointwise(p("head.out"), n, n),
            aux: Conv1d::pointwise(p("aux"), n, n),
        }
    }

    pub fn init<T: Scalar>(&self, store: &mut ParamStore<T>, init: &mut Init) -> Result<()> {
        for b in self.enc.iter().flatten() {
            b.init(store, init)?;
        }
        for d in &self.down {
            d.init(store, init)?;
        }
        self.top.init(store, init)?;
        for t in self.tda.iter().chain(&self.fuse) {
            t.init(store, init)?;
        }
        for b in self.dec.iter().flatten() {
            b.init(store, init)?;
        }
        self.head_in.init(store, init)?;
        self.head_out.init(store, init)?;
        self.aux.init(store, init)
    }

    pub fn levels(&self) -> usize {
        self.cfg.levels
    }

    fn run_blocks<T: Scalar>(s: &Session<T>, blocks: &[GlaBlock], mut x: Var) -> Result<Var> {
        for (i, b) in blocks.iter().enumerate() {
            let _scope = s.scope(&format!("gla{i}"));
            x = b.forward(s, x)?;
        }
        Ok(x)
    }

    /// Multi-scale features `F_0..F_Q`. `inject` adds a tensor pooled to the
    /// given level right after that level is formed.
    pub fn encode<T: Scalar>(
        &self,
        s: &Session<T>,
        x: Var,
        inject: Option<(usize, Var)>,
    ) -> Result<Vec<Var>> {
        let q = self.levels();
        let t = s.shape(x)[1];
        if t % (1 << q) != 0 {
            return Err(input_err!(
                "feature length {} is not divisible by 2^{}",
                t,
                q
            ));
        }
        let mut levels = Vec::with_capacity(q + 1);
        let mut h = x;
        for l in 0..=q {
            let _scope = s.scope(&format!("enc{l}"));
            if l > 0 {
                h = self.down[l - 1].forward(s, h)?;
            }
            if let Some((at, f)) = inject {
                if at == l && l > 0 {
                    let pooled = s.pool(f, 1 << l)?;
                    h = s.add(h, pooled)?;
                }
            }
            h = Self::run_blocks(s, &self.enc[l], h)?;
            levels.push(h);
        }
        Ok(levels)
    }

    /// Sum of all levels pooled to the coarsest length, through the top GA block.
    pub fn bottleneck<T: Scalar>(&self, s: &Session<T>, levels: &[Var]) -> Result<Var> {
        let _scope = s.scope("bottleneck");
        let q = levels.len() - 1;
        let mut acc = levels[q];
        for (l, &f) in levels.iter().enumerate().take(q) {
            let p = s.pool(f, 1 << (q - l))?;
            acc = s.add(acc, p)?;
        }
        self.top.forward(s, acc)
    }

    pub fn tda_inject<T: Scalar>(
        &self,
        s: &Session<T>,
        level: usize,
        f: Var,
        g: Var,
    ) -> Result<Var> {
        let _scope = s.scope(&format!("tda{level}"));
        self.tda[level].forward(s, f, g)
    }

    /// Coarse-to-fine decoding; returns the full-resolution state and the
    /// state at level 3 when present.
    pub fn decode<T: Scalar>(&self, s: &Session<T>, m: &[Var]) -> Result<(Var, Option<Var>)> {
        let q = self.levels();
        let mut state = m[q];
        let mut aux = (q == AUX_LEVEL).then_some(state);
        for l in (0..q).rev() {
            let _scope = s.scope(&format!("dec{l}"));
            let fused = self.fuse[l].forward(s, m[l], state)?;
            state = Self::run_blocks(s, &self.dec[l], fused)?;
            if l == AUX_LEVEL {
                aux = Some(state);
            }
        }
        Ok((state, aux))
    }

    /// Direct mapping `pw(GLU(pw(d)))`, or `ReLU(·) ⊙ x` in mask mode.
    pub fn output_head<T: Scalar>(&self, s: &Session<T>, d: Var, x: Var) -> Result<Var> {
        let _scope = s.scope("head");
        let h = self.head_in.forward(s, d)?;
        let h = glu(s, h)?;
        let h = self.head_out.forward(s, h)?;
        if self.cfg.mask_mode {
            let m = s.relu(h);
            s.mul(m, x)
        } else {
            Ok(h)
        }
    }

    /// `ReLU(pw(interp(d3))) ⊙ x` at the length of `x`.
    pub fn aux_head<T: Scalar>(&self, s: &Session<T>, d3: Var, x: Var) -> Result<Var> {
        let _scope = s.scope("aux");
        let t = s.shape(x)[1];
        let up = s.interpolate(d3, t, Interp::Linear)?;
        let h = self.aux.forward(s, up)?;
        let h = s.relu(h);
        s.mul(h, x)
    }

    /// One pass (or `iterations` weight-shared passes) over the hierarchy.
    /// `x` is the audio encoding; `fused` enters at level `position`.
    pub fn forward<T: Scalar>(
        &self,
        s: &Session<T>,
        x: Var,
        fused: Var,
        position: usize,
    ) -> Result<SeparatorOutput> {
        let _scope = s.scope(&self.name);
        if position > self.levels() {
            return Err(config_err!(
                "fusion level {} exceeds separator depth {}",
                position,
                self.levels()
            ));
        }
        let base = if position == 0 { fused } else { x };
        let inject = (position > 0).then_some((position, fused));
        let mut input = base;
        let mut result = None;
        for it in 0..self.cfg.iterations {
            let _iter = (self.cfg.iterations > 1).then(|| s.scope(&format!("iter{it}")));
            let levels = self.encode(s, input, inject)?;
            let g = self.bottleneck(s, &levels)?;
            let m = levels
                .iter()
                .enumerate()
                .map(|(l, &f)| self.tda_inject(s, l, f, g))
                .collect::<Result<Vec<_>>>()?;
            let (d0, d3) = self.decode(s, &m)?;
            input = s.add(base, d0)?;
            result = Some((d0, d3));
        }
        let (d0, d3) = result.expect("at least one iteration");
        let estimate = self.output_head(s, d0, x)?;
        Ok(SeparatorOutput {
            estimate,
            decoded: d0,
            aux_state: d3,
        })
    }
}
