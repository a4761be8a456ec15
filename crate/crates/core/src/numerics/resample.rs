//! Temporal pooling and interpolation along the last axis.

use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Interp {
    /// Source index `⌊i·T/target⌋`.
    Nearest,
    /// Endpoint-aligned linear interpolation.
    Linear,
}

/// Non-overlapping mean over windows of `factor`; the tail is padded with the last value.
pub fn pool_time<T: Scalar>(x: &[T], t: usize, factor: usize) -> (Vec<T>, usize) {
    let to = t.div_ceil(factor);
    let inv = T::c(1.0 / factor as f64);
    let mut y = vec![T::zero(); (x.len() / t) * to];
    for (xr, yr) in x.chunks(t).zip(y.chunks_mut(to)) {
        for (o, v) in yr.iter_mut().enumerate() {
            let mut acc = T::zero();
            for j in 0..factor {
                acc += xr[(o * factor + j).min(t - 1)];
            }
            *v = acc * inv;
        }
    }
    (y, to)
}

pub fn pool_time_backward<T: Scalar>(dy: &[T], t: usize, factor: usize) -> Vec<T> {
    let to = t.div_ceil(factor);
    let inv = T::c(1.0 / factor as f64);
    let mut dx = vec![T::zero(); (dy.len() / to) * t];
    for (dr, gr) in dx.chunks_mut(t).zip(dy.chunks(to)) {
        for (o, &g) in gr.iter().enumerate() {
            for j in 0..factor {
                dr[(o * factor + j).min(t - 1)] += g * inv;
            }
        }
    }
    dx
}

/// Source positions and weights: output `i` = `(1−w)·x[a] + w·x[b]`.
fn taps(t: usize, target: usize, mode: Interp) -> Vec<(usize, usize, f64)> {
    (0..target)
        .map(|i| match mode {
            Interp::Nearest => {
                let s = ((i * t) / target).min(t - 1);
                (s, s, 0.0)
            }
            Interp::Linear => {
                if target == 1 || t == 1 {
                    return (0, 0, 0.0);
                }
                let pos = i as f64 * (t - 1) as f64 / (target - 1) as f64;
                let a = (pos.floor() as usize).min(t - 1);
                let b = (a + 1).min(t - 1);
                (a, b, pos - a as f64)
            }
        })
        .collect()
}

pub fn interpolate_time<T: Scalar>(x: &[T], t: usize, target: usize, mode: Interp) -> Vec<T> {
    if target == t {
        return x.to_vec();
    }
    let tp: Vec<(usize, usize, T, T)> = taps(t, target, mode)
        .into_iter()
        .map(|(a, b, w)| (a, b, T::c(1.0 - w), T::c(w)))
        .collect();
    let mut y = vec![T::zero(); (x.len() / t) * target];
    for (xr, yr) in x.chunks(t).zip(y.chunks_mut(target)) {
        for (v, &(a, b, wa, wb)) in yr.iter_mut().zip(&tp) {
            *v = wa * xr[a] + wb * xr[b];
        }
    }
    y
}

pub fn interpolate_time_backward<T: Scalar>(
    dy: &[T],
    t: usize,
    target: usize,
    mode: Interp,
) -> Vec<T> {
    if target == t {
        return dy.to_vec();
    }
    let tp: Vec<(usize, usize, T, T)> = taps(t, target, mode)
        .into_iter()
        .map(|(a, b, w)| (a, b, T::c(1.0 - w), T::c(w)))
        .collect();
    let mut dx = vec![T::zero(); (dy.len() / target) * t];
    for (dr, gr) in dx.chunks_mut(t).zip(dy.chunks(target)) {
        for (&g, &(a, b, wa, wb)) in gr.iter().zip(&tp) {
            dr[a] += wa * g;
            dr[b] += wb * g;
        }
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn examples() {
        assert_eq!(pool_time(&[1.0, 3.0, 5.0, 7.0], 4, 2).0, vec![2.0, 6.0]);
        assert_eq!(pool_time(&[1.0, 3.0, 5.0], 3, 2).0, vec![2.0, 5.0]);
        let y = interpolate_time(&[0.0f64, 2.0], 2, 4, Interp::Linear);
        let e = [0.0, 2.0 / 3.0, 4.0 / 3.0, 2.0];
        for (a, b) in y.iter().zip(e) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(
            interpolate_time(&[5.0], 1, 3, Interp::Nearest),
            vec![5.0; 3]
        );
        assert_eq!(
            interpolate_time(&[1.0, 2.0], 2, 4, Interp::Nearest),
            vec![1.0, 1.0, 2.0, 2.0]
        );
    }

    #[test]
    fn backward_is_adjoint() {
        for mode in [Interp::Nearest, Interp::Linear] {
            let x: Vec<f64> = (0..14).map(|i| (i as f64 * 0.9).sin()).collect();
            let g: Vec<f64> = (0..22).map(|i| (i as f64 * 0.4).cos()).collect();
            let y = interpolate_time(&x, 7, 11, mode);
            let dx = interpolate_time_backward(&g, 7, 11, mode);
            let l: f64 = y.iter().zip(&g).map(|(a, b)| a * b).sum();
            let r: f64 = x.iter().zip(&dx).map(|(a, b)| a * b).sum();
            assert!((l - r).abs() < 1e-12);
        }
        let x: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let g = [1.0, -2.0, 0.5, 3.0, 1.0, 2.0];
        let (y, to) = pool_time(&x, 5, 2);
        assert_eq!(to, 3);
        let dx = pool_time_backward(&g, 5, 2);
        let l: f64 = y.iter().zip(&g).map(|(a, b)| a * b).sum();
        let r: f64 = x.iter().zip(&dx).map(|(a, b)| a * b).sum();
        assert!((l - r).abs() < 1e-12);
    }
}
