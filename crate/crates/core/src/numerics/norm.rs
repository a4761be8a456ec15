//! Softmax and channel normalizations.

use crate::scalar::Scalar;

pub const NORM_EPS: f64 = 1e-5;

/// Splits a shape around `axis` into `(outer, axis_len, inner)`.
pub fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

pub fn softmax<T: Scalar>(x: &[T], shape: &[usize], axis: usize) -> Vec<T> {
    let (outer, n, inner) = axis_split(shape, axis);
    let mut y = vec![T::zero(); x.len()];
    for o in 0..outer {
        for i in 0..inner {
            let base = o * n * inner + i;
            let mut m = T::neg_infinity();
            for a in 0..n {
                m = m.max(x[base + a * inner]);
            }
            let mut s = T::zero();
            for a in 0..n {
                let e = (x[base + a * inner] - m).exp();
                y[base + a * inner] = e;
                s += e;
            }
            let inv = T::one() / s;
            for a in 0..n {
                y[base + a * inner] *= inv;
            }
        }
    }
    y
}

pub fn softmax_backward<T: Scalar>(y: &[T], dy: &[T], shape: &[usize], axis: usize) -> Vec<T> {
    let (outer, n, inner) = axis_split(shape, axis);
    let mut dx = vec![T::zero(); y.len()];
    for o in 0..outer {
        for i in 0..inner {
            let base = o * n * inner + i;
            let mut dot = T::zero();
            for a in 0..n {
                dot += y[base + a * inner] * dy[base + a * inner];
            }
            for a in 0..n {
                let j = base + a * inner;
                dx[j] = y[j] * (dy[j] - dot);
            }
        }
    }
    dx
}

/// Normalizes each column of a `[C × N]` buffer over its `C` channels.
/// Returns `(normalized, inverse std per column)`.
pub fn layer_norm_channels<T: Scalar>(x: &[T], c: usize) -> (Vec<T>, Vec<T>) {
    let n = x.len() / c;
    let inv_c = T::c(1.0 / c as f64);
    let mut mean = vec![T::zero(); n];
    for row in x.chunks(n) {
        for (m, &v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m *= inv_c);
    let mut var = vec![T::zero(); n];
    for row in x.chunks(n) {
        for ((s, &v), &m) in var.iter_mut().zip(row).zip(&mean) {
            let d = v - m;
            *s += d * d;
        }
    }
    let eps = T::c(NORM_EPS);
    let rstd: Vec<T> = var
        .iter()
        .map(|&s| (s * inv_c + eps).sqrt().recip())
        .collect();
    let mut y = vec![T::zero(); x.len()];
    for (yr, xr) in y.chunks_mut(n).zip(x.chunks(n)) {
        for j in 0..n {
            yr[j] = (xr[j] - mean[j]) * rstd[j];
        }
    }
    (y, rstd)
}

/// Backward of the unit-affine normalization: `xhat` and `rstd` from the forward pass,
/// `dxhat` the gradient with respect to the normalized values.
pub fn layer_norm_channels_backward<T: Scalar>(
    xhat: &[T],
    rstd: &[T],
    dxhat: &[T],
    c: usize,
) -> Vec<T> {
    let n = xhat.len() / c;
    let inv_c = T::c(1.0 / c as f64);
    let mut m1 = vec![T::zero(); n];
    let mut m2 = vec![T::zero(); n];
    for (hr, gr) in xhat.chunks(n).zip(dxhat.chunks(n)) {
        for j in 0..n {
            m1[j] += gr[j];
            m2[j] += gr[j] * hr[j];
        }
    }
    let mut dx = vec![T::zero(); xhat.len()];
    for ((dr, hr), gr) in dx.chunks_mut(n).zip(xhat.chunks(n)).zip(dxhat.chunks(n)) {
        for j in 0..n {
            dr[j] = rstd[j] * (gr[j] - m1[j] * inv_c - hr[j] * m2[j] * inv_c);
        }
    }
    dx
}

/// `x / sqrt(mean_c x² + eps)` per column. Returns `(y, inverse rms per column)`.
pub fn rms_norm_channels<T: Scalar>(x: &[T], c: usize) -> (Vec<T>, Vec<T>) {
    let n = x.len() / c;
    let mut ms = vec![T::zero(); n];
    for row in x.chunks(n) {
        for (m, &v) in ms.iter_mut().zip(row) {
            *m += v * v;
        }
    }
    let inv_c = T::c(1.0 / c as f64);
    let eps = T::c(NORM_EPS);
    let r: Vec<T> = ms
        .iter()
        .map(|&m| (m * inv_c + eps).sqrt().recip())
        .collect();
    let mut y = vec![T::zero(); x.len()];
    for (yr, xr) in y.chunks_mut(n).zip(x.chunks(n)) {
        for j in 0..n {
            yr[j] = xr[j] * r[j];
        }
    }
    (y, r)
}

pub fn rms_norm_channels_backward<T: Scalar>(x: &[T], r: &[T], dy: &[T], c: usize) -> Vec<T> {
    let n = x.len() / c;
    let inv_c = T::c(1.0 / c as f64);
    let mut dot = vec![T::zero(); n];
    for (xr, gr) in x.chunks(n).zip(dy.chunks(n)) {
        for j in 0..n {
            dot[j] += xr[j] * gr[j];
        }
    }
    let mut dx = vec![T::zero(); x.len()];
    for ((dr, xr), gr) in dx.chunks_mut(n).zip(x.chunks(n)).zip(dy.chunks(n)) {
        for j in 0..n {
            let r3 = r[j] * r[j] * r[j];
            dr[j] = gr[j] * r[j] - xr[j] * dot[j] * r3 * inv_c;
        }
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_examples() {
        let y = softmax(&[0.0f64, 0.0], &[2], 0);
        assert_eq!(y, vec![0.5, 0.5]);
        let y = softmax(&[0.0f64, 3f64.ln()], &[2], 0);
        assert!((y[0] - 0.25).abs() < 1e-15 && (y[1] - 0.75).abs() < 1e-15);
        let y = softmax(&[1000.0f64, 1000.0, 1001.0, 999.0], &[2, 2], 0);
        assert!(y.iter().all(|v| v.is_finite()));
        assert!((y[0] + y[2] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn layer_norm_column_example() {
        let (y, _) = layer_norm_channels(&[1.0f64, 3.0], 2);
        assert!((y[0] + 1.0).abs() < 1e-4 && (y[1] - 1.0).abs() < 1e-4);
        let (y, _) = layer_norm_channels(&[2.0f64, 2.0, 2.0], 3);
        assert!(y.iter().all(|v| v.abs() < 1e-12));
    }
}
