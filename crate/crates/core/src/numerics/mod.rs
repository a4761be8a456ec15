//! Numerical kernels and their tensor-level entry points.
//!
//! The submodules operate on raw row-major buffers and are shared with the
//! autodiff graph; the functions here validate shapes, wrap results in
//! [`Tensor`]s, and reject non-finite output.

pub mod conv;
pub mod dct;
pub mod gradcheck;
pub mod norm;
pub mod resample;
pub mod spectral;

pub use conv::{Conv3dSpec, ConvSpec};
pub use gradcheck::{grad_check, GradCheckOptions, GradReport};
pub use resample::Interp;
pub use spectral::{StftConfig, Window};

use crate::error::{shape_err, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

fn finite<T: Scalar>(t: Tensor<T>, what: &str) -> Result<Tensor<T>> {
    t.check_finite(what)?;
    Ok(t)
}

fn last_axis<T: Scalar>(x: &Tensor<T>) -> Result<usize> {
    x.shape()
        .last()
        .copied()
        .ok_or_else(|| shape_err!("tensor has no axes"))
}

pub fn conv1d<T: Scalar>(
    x: &Tensor<T>,
    spec: &ConvSpec,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
) -> Result<Tensor<T>> {
    let out = conv::conv1d_out_shape(spec, x.shape(), weight.shape(), bias.map(|b| b.len()))?;
    let y = conv::conv1d_forward(
        spec,
        x.data(),
        x.shape()[1],
        weight.data(),
        bias.map(|b| b.data()),
        out[1],
    );
    finite(Tensor::from_parts_unchecked(out.to_vec(), y), "conv1d")
}

pub fn transposed_conv1d<T: Scalar>(
    x: &Tensor<T>,
    spec: &ConvSpec,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
) -> Result<Tensor<T>> {
    let out =
        conv::conv_transpose1d_out_shape(spec, x.shape(), weight.shape(), bias.map(|b| b.len()))?;
    let y = conv::conv_transpose1d_forward(
        spec,
        x.data(),
        x.shape()[1],
        weight.data(),
        bias.map(|b| b.data()),
        out[1],
    );
    finite(
        Tensor::from_parts_unchecked(out.to_vec(), y),
        "transposed_conv1d",
    )
}

/// Orthonormal DCT-II along the last axis.
pub fn dct2<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let t = last_axis(x)?;
    finite(
        Tensor::from_parts_unchecked(x.shape().to_vec(), dct::dct2(x.data(), t)),
        "dct2",
    )
}

/// Inverse of [`dct2`].
pub fn idct2<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let t = last_axis(x)?;
    finite(
        Tensor::from_parts_unchecked(x.shape().to_vec(), dct::idct2(x.data(), t)),
        "idct2",
    )
}

/// `[bins × frames]` magnitudes of a single-channel signal.
pub fn stft_mag<T: Scalar>(s: &Tensor<T>, cfg: &StftConfig) -> Result<Tensor<T>> {
    let frames = cfg.frames(s.len())?;
    let m = spectral::stft_mag(s.data(), cfg)?;
    finite(
        Tensor::from_parts_unchecked(vec![cfg.bins(), frames], m),
        "stft_mag",
    )
}

pub fn interpolate_time<T: Scalar>(
    x: &Tensor<T>,
    target: usize,
    mode: Interp,
) -> Result<Tensor<T>> {
    let t = last_axis(x)?;
    if target == 0 {
        return Err(shape_err!("interpolation target must be positive"));
    }
    let mut shape = x.shape().to_vec();
    *shape.last_mut().unwrap() = target;
    Ok(Tensor::from_parts_unchecked(
        shape,
        resample::interpolate_time(x.data(), t, target, mode),
    ))
}

/// Mean pooling along the last axis; a ragged tail is padded with the edge value.
pub fn pool_time<T: Scalar>(x: &Tensor<T>, factor: usize) -> Result<Tensor<T>> {
    let t = last_axis(x)?;
    if factor == 0 {
        return Err(shape_err!("pooling factor must be positive"));
    }
    let (y, to) = resample::pool_time(x.data(), t, factor);
    let mut shape = x.shape().to_vec();
    *shape.last_mut().unwrap() = to;
    Ok(Tensor::from_parts_unchecked(shape, y))
}

pub fn softmax<T: Scalar>(x: &Tensor<T>, axis: usize) -> Result<Tensor<T>> {
    if axis >= x.rank() {
        return Err(shape_err!("softmax axis {} for {:?}", axis, x.shape()));
    }
    finite(
        Tensor::from_parts_unchecked(x.shape().to_vec(), norm::softmax(x.data(), x.shape(), axis)),
        "softmax",
    )
}

/// Per-column normalization over axis 0 followed by per-channel affine.
pub fn layer_norm_channels<T: Scalar>(
    x: &Tensor<T>,
    gain: &Tensor<T>,
    bias: &Tensor<T>,
) -> Result<Tensor<T>> {
    let c = x.shape()[0];
    if gain.len() != c || bias.len() != c {
        return Err(shape_err!(
            "layer norm affine params must have {} entries",
            c
        ));
    }
    let (mut y, _) = norm::layer_norm_channels(x.data(), c);
    let n = y.len() / c;
    for (ch, row) in y.chunks_mut(n).enumerate() {
        for v in row {
            *v = *v * gain.data()[ch] + bias.data()[ch];
        }
    }
    finite(
        Tensor::from_parts_unchecked(x.shape().to_vec(), y),
        "layer_norm_channels",
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], d: &[f64]) -> Tensor<f64> {
        Tensor::new(shape, d.to_vec()).unwrap()
    }

    #[test]
    fn conv_examples() {
        let x = t(&[1, 5], &[1.0, -2.0, 3.5, 0.0, 7.0]);
        let id = conv1d(&x, &ConvSpec::pointwise(1, 1), &t(&[1, 1, 1], &[1.0]), None).unwrap();
        assert_eq!(id.data(), x.data());
        let y = conv1d(
            &t(&[1, 3], &[1.0, 2.0, 3.0]),
            &ConvSpec::new(1, 1, 2),
            &t(&[1, 1, 2], &[1.0, 1.0]),
            Some(&t(&[1], &[0.0])),
        )
        .unwrap();
        assert_eq!(y.data(), &[3.0, 5.0]);
        let spec = ConvSpec::new(1, 1, 16).stride(4).padding(6, 6);
        assert_eq!(spec.out_len(16000).unwrap(), 4000);
        assert_eq!(spec.transposed_out_len(4000).unwrap(), 16000);
        let bad = conv1d(
            &x,
            &ConvSpec::pointwise(2, 1),
            &t(&[1, 2, 1], &[1.0, 1.0]),
            None,
        );
        assert!(bad.is_err());
        assert!(ConvSpec::new(3, 4, 1).groups(2).validate().is_err());
    }

    #[test]
    fn transposed_examples() {
        let x = t(&[1, 4], &[1.0, 2.0, 3.0, 4.0]);
        let y = transposed_conv1d(&x, &ConvSpec::pointwise(1, 1), &t(&[1, 1, 1], &[1.0]), None)
            .unwrap();
        assert_eq!(y.data(), x.data());
        let y = transposed_conv1d(
            &t(&[1, 2], &[1.0, 0.0]),
            &ConvSpec::new(1, 1, 2).stride(2),
            &t(&[1, 1, 2], &[1.0, 1.0]),
            None,
        )
        .unwrap();
        assert_eq!(y.data(), &[1.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn pooling_and_interpolation_identities() {
        let x = t(&[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(pool_time(&x, 1).unwrap(), x);
        for m in [Interp::Nearest, Interp::Linear] {
            assert_eq!(interpolate_time(&x, 3, m).unwrap(), x);
        }
        let c = t(&[1, 6], &[4.0; 6]);
        assert!(pool_time(&c, 4).unwrap().data().iter().all(|&v| v == 4.0));
    }

    #[test]
    fn layer_norm_invariant_to_affine_input() {
        let x = t(&[3, 2], &[1.0, 5.0, 2.0, -1.0, 0.5, 3.0]);
        let g = t(&[3], &[1.0; 3]);
        let b = t(&[3], &[0.0; 3]);
        let y1 = layer_norm_channels(&x, &g, &b).unwrap();
        let y2 = layer_norm_channels(&x.map(|v| 2.5 * v + 7.0), &g, &b).unwrap();
        assert!(y1.max_abs_diff(&y2) < 1e-4);
        for j in 0..2 {
            let m: f64 = (0..3).map(|c| y1.data()[c * 2 + j]).sum::<f64>() / 3.0;
            assert!(m.abs() < 1e-6);
        }
    }
}
