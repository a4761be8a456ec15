//! Parameterized building blocks. Each layer owns its parameter names; `init`
//! registers them in a [`ParamStore`] and `forward` reads them from a [`Session`].

use crate::error::Result;
use crate::graph::Var;
use crate::numerics::{Conv3dSpec, ConvSpec};
use crate::params::{Init, ParamStore, Session};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

#[derive(Debug, Clone)]
pub struct Conv1d {
    pub name: String,
    pub spec: ConvSpec,
    pub bias: bool,
}

impl Conv1d {
    pub fn new(name: impl Into<String>, spec: ConvSpec) -> Self {
        Self {
            name: name.into(),
            spec,
            bias: true,
        }
    }

    pub fn pointwise(name: impl Into<String>, cin: usize, cout: usize) -> Self {
        Self::new(name, ConvSpec::pointwise(cin, cout))
    }

    pub fn depthwise(name: impl Into<String>, channels: usize, kernel: usize) -> Self {
        Self::new(name, ConvSpec::depthwise(channels, kernel))
    }

    pub fn weight_name(&self) -> String {
        join(&self.name, "weight")
    }

    pub fn bias_name(&self) -> String {
        join(&self.name, "bias")
    }

    pub fn init<T: Scalar>(&self, store: &mut ParamStore<T>, init: &mut Init) -> Result<()> {
        self.spec.validate()?;
        let ws = self.spec.weight_shape();
        let fan_in = ws[1] * ws[2];
        store.insert(&self.weight_name(), init.uniform(&ws, fan_in), true)?;
        if self.bias {
            store.insert(
                &self.bias_name(),
                Tensor::zeros(&[self.spec.out_channels]),
                true,
            )?;
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        self.spec.weight_shape().iter().product::<usize>()
            + if self.bias { self.spec.out_channels } else { 0 }
    }

    /// `x: [C_in × T]`.
    pub fn forward<T: Scalar>(&self, s: &Session<T>, x: Var) -> Result<Var> {
        let w = s.param(&self.weight_name())?;
        let b = if self.bias {
            Some(s.param(&self.bias_name())?)
        } else {
            None
        };
        s.conv1d(x, w, b, &self.spec)
    }

    /// Kernel-1 convolution over the leading axis of an arbitrary-rank tensor.
    pub fn forward_flat<T: Scalar>(&self, s: &Session<T>, x: Var) -> Result<Var> {
        let shape = s.shape(x);
        let rest: usize = shape[1..].iter().product();
        let x2 = s.reshape(x, &[shape[0], rest])?;
        let y = self.forward(s, x2)?;
        let mut out = shape.clone();
        out[0] = self.spec.out_channels;
        s.reshape(y, &out)
    }
}

#[derive(Debug, Clone)]
pub struct ConvTranspose1d {
    pub name: String,
    pub spec: ConvSpec,
}

impl ConvTranspose1d {
    pub fn new(name: impl Into<String>, spec: ConvSpec) -> Self {
        Self {
            name: name.into(),
            spec,
        }
    }

    pub fn init<T: Scalar>(&self, store: &mut ParamStore<T>, init: &mut Init) -> Result<()> {
        self.spec.validate()?;
        let ws = self.spec.transposed_weight_shape();
        store.insert(
            &join(&self.name, "weight"),
            init.uniform(&ws, ws[1] * ws[2]),
            true,
        )?;
        store.insert(
            &join(&self.name, "bias"),
            Tensor::zeros(&[self.spec.out_channels]),
            true,
        )
    }

    pub fn forward<T: Scalar>(&self, s: &Session<T>, x: Var) -> Result<Var> {
        let w = s.param(&join(&self.name, "weight"))?;
        let b = s.param(&join(&self.name, "bias"))?;
        s.conv_transpose1d(x, w, Some(b), &self.spec)
    }
}

#[derive(Debug, Clone)]
pub struct Conv3d {
    pub name: String,
    pub spec: Conv3dSpec,
}

impl Conv3d {
    pub fn new(name: impl Into<String>, spec: Conv3dSpec) -> Self {
        Self {
            name: name.into(),
            spec,
        }
    }

    pub fn init<T: Scalar>(&self, store: &mut ParamStore<T>, init: &mut Init) -> Result<()> {
        let ws = self.spec.weight_shape();
        let fan_in = ws[1] * ws[2] * ws[3] * ws[4];
        store.insert(&join(&self.name, "weight"), init.uniform(&ws, fan_in), true)?;
        store.insert(
            &join(&self.name, "bias"),
            Tensor::zeros(&[self.spec.out_channels]),
            true,
        )
    }

    /// `x: [C_in, H, W, T]`.
    pub fn forward<T: Scalar>(&self, s: &Session<T>, x: Var) -> Result<Var> {
        let w = s.param(&join(&self.name, "weight"))?;
        let b = s.param(&join(&self.name, "bias"))?;
        s.conv3d(x, w, Some(b), &self.spec)
    }
}

/// Channel-axis layer normalization with learnable gain and bias.
#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub name: String,
    pub channels: usize,
}

impl LayerNorm {
    pub fn new(name: impl Into<String>, channels: usize) -> Self {
        Self {
            name: name.into(),
            channels,
        }
    }

    pub fn init<T: Scalar>(&self, store: &mut ParamStore<T>) -> Result<()> {
        store.insert(
            &join(&self.name, "gain"),
            Tensor::ones(&[self.channels]),
            true,
        )?;
        store.insert(
            &join(&self.name, "bias"),
            Tensor::zeros(&[self.channels]),
            true,
        )
    }

    pub fn forward<T: Scalar>(&self, s: &Session<T>, x: Var) -> Result<Var> {
        let g = s.param(&join(&self.name, "gain"))?;
        let b = s.param(&join(&self.name, "bias"))?;
        s.layer_norm(x, g, b)
    }
}

/// Channel-axis RMS normalization with learnable gain.
#[derive(Debug, Clone)]
pub struct RmsNorm {
    pub name: String,
    pub channels: usize,
}

impl RmsNorm {
    pub fn new(name: impl Into<String>, channels: usize) -> Self {
        Self {
            name: name.into(),
            channels,
        }
    }

    pub fn init<T: Scalar>(&self, store: &mut ParamStore<T>) -> Result<()> {
        store.insert(
            &join(&self.name, "gain"),
            Tensor::ones(&[self.channels]),
            true,
        )
    }

    pub fn forward<T: Scalar>(&self, s: &Session<T>, x: Var) -> Result<Var> {
        let g = s.param(&join(&self.name, "gain"))?;
        s.rms_norm(x, g)
    }
}

/// Splits axis 0 in half and returns `a ⊙ σ(b)`.
pub fn glu<T: Scalar>(s: &Session<T>, x: Var) -> Result<Var> {
    let c = s.shape(x)[0] / 2;
    let a = s.slice(x, 0, 0, c)?;
    let b = s.slice(x, 0, c, c)?;
    let gate = s.sigmoid(b);
    s.mul(a, gate)
}

/// Splits axis 0 in half and returns `a ⊙ GELU(b)`.
pub fn geglu<T: Scalar>(s: &Session<T>, x: Var) -> Result<Var> {
    let c = s.shape(x)[0] / 2;
    let a = s.slice(x, 0, 0, c)?;
    let b = s.slice(x, 0, c, c)?;
    let gate = s.gelu(b);
    s.mul(a, gate)
}

/// Reshapes a length-`C` vector variable to `[C, 1, …]` with `rank` axes.
pub fn column<T: Scalar>(s: &Session<T>, v: Var, rank: usize) -> Result<Var> {
    let c = s.shape(v).iter().product::<usize>();
    let mut shape = vec![1; rank];
    shape[0] = c;
    s.reshape(v, &shape)
}
