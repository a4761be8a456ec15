//! Orthonormal DCT-II / DCT-III along the last axis, and the heat-kernel filter.
//!
//! Short rows use a cached cosine matrix; longer rows use the FFT-based
//! reordering (one complex FFT of length `T` per row).

use std::any::{Any, TypeId};
use std::cell::RefCell;
use std::collections::HashMap;
use std::f64::consts::PI;
use std::rc::Rc;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::scalar::Scalar;

/// Rows at or below this length use the direct matrix product.
pub const DIRECT_MAX_LEN: usize = 32;

thread_local! {
    static BASIS: RefCell<HashMap<usize, Rc<Vec<f64>>>> = RefCell::new(HashMap::new());
    static PLANNERS: RefCell<HashMap<TypeId, Box<dyn Any>>> = RefCell::new(HashMap::new());
}

/// Row-major `T×T` matrix `B[p][t] = s_p cos(π p (t + ½) / T)`.
pub fn dct_basis(t: usize) -> Rc<Vec<f64>> {
    BASIS.with(|cache| {
        cache
            .borrow_mut()
            .entry(t)
            .or_insert_with(|| {
                let n = t as f64;
                let mut b = vec![0.0; t * t];
                for p in 0..t {
                    let s = if p == 0 {
                        (1.0 / n).sqrt()
                    } else {
                        (2.0 / n).sqrt()
                    };
                    for i in 0..t {
                        b[p * t + i] = s * (PI * p as f64 * (i as f64 + 0.5) / n).cos();
                    }
                }
                Rc::new(b)
            })
            .clone()
    })
}

pub(crate) fn plan<T: Scalar>(len: usize, inverse: bool) -> Arc<dyn Fft<T>> {
    PLANNERS.with(|p| {
        let mut map = p.borrow_mut();
        let planner = map
            .entry(TypeId::of::<T>())
            .or_insert_with(|| Box::new(FftPlanner::<T>::new()))
            .downcast_mut::<FftPlanner<T>>()
            .expect("planner type keyed by TypeId");
        if inverse {
            planner.plan_fft_inverse(len)
        } else {
            planner.plan_fft_forward(len)
        }
    })
}

fn direct<T: Scalar>(x: &[T], t: usize, inverse: bool) -> Vec<T> {
    let b64 = dct_basis(t);
    let b: Vec<T> = b64.iter().map(|&v| T::c(v)).collect();
    let rows = x.len() / t;
    let mut y = vec![T::zero(); x.len()];
    // forward: Y = X·Bᵀ ; inverse: Y = X·B
    crate::scalar::gemm(rows, t, t, x, false, &b, !inverse, T::zero(), &mut y);
    y
}

fn scales(t: usize) -> (f64, f64) {
    let n = t as f64;
    ((1.0 / n).sqrt(), (2.0 / n).sqrt())
}

fn twiddles<T: Scalar>(t: usize, sign: f64) -> Vec<Complex<T>> {
    (0..t)
        .map(|k| {
            let a = sign * PI * k as f64 / (2.0 * t as f64);
            Complex::new(T::c(a.cos()), T::c(a.sin()))
        })
        .collect()
}

/// DCT-II of every length-`t` row via the even/odd reordering trick.
pub fn dct2_fft<T: Scalar>(x: &[T], t: usize) -> Vec<T> {
    let fft = plan::<T>(t, false);
    let tw = twiddles::<T>(t, -1.0);
    let (s0, s1) = scales(t);
    let (s0, s1) = (T::c(s0), T::c(s1));
    let mut buf = vec![Complex::new(T::zero(), T::zero()); t];
    let mut scratch = vec![Complex::new(T::zero(), T::zero()); fft.get_inplace_scratch_len()];
    let mut y = vec![T::zero(); x.len()];
    for (xr, yr) in x.chunks(t).zip(y.chunks_mut(t)) {
        for n in 0..(t + 1) / 2 {
            buf[n] = Complex::new(xr[2 * n], T::zero());
        }
        for n in 0..t / 2 {
            buf[t - 1 - n] = Complex::new(xr[2 * n + 1], T::zero());
        }
        fft.process_with_scratch(&mut buf, &mut scratch);
        for k in 0..t {
            let v = (buf[k] * tw[k]).re;
            yr[k] = v * if k == 0 { s0 } else { s1 };
        }
    }
    y
}

/// DCT-III (inverse of the orthonormal DCT-II) of every length-`t` row.
pub fn idct2_fft<T: Scalar>(x: &[T], t: usize) -> Vec<T> {
    let fft = plan::<T>(t, true);
    let tw = twiddles::<T>(t, 1.0);
    let (s0, s1) = scales(t);
    let (s0, s1) = (T::c(s0), T::c(s1));
    let inv_n = T::c(1.0 / t as f64);
    let mut c = vec![T::zero(); t];
    let mut buf = vec![Complex::new(T::zero(), T::zero()); t];
    let mut scratch = vec![Complex::new(T::zero(), T::zero()); fft.get_inplace_scratch_len()];
    let mut y = vec![T::zero(); x.len()];
    for (xr, yr) in x.chunks(t).zip(y.chunks_mut(t)) {
        c[0] = xr[0] / s0;
        for k in 1..t {
            c[k] = xr[k] / s1;
        }
        buf[0] = Complex::new(c[0], T::zero());
        for k in 1..t {
            buf[k] = Complex::new(c[k], -c[t - k]) * tw[k];
        }
        fft.process_with_scratch(&mut buf, &mut scratch);
        for n in 0..(t + 1) / 2 {
            yr[2 * n] = buf[n].re * inv_n;
        }
        for n in 0..t / 2 {
            yr[2 * n + 1] = buf[t - 1 - n].re * inv_n;
        }
    }
    y
}

pub fn dct2_direct<T: Scalar>(x: &[T], t: usize) -> Vec<T> {
    direct(x, t, false)
}

pub fn idct2_direct<T: Scalar>(x: &[T], t: usize) -> Vec<T> {
    direct(x, t, true)
}

/// Orthonormal DCT-II of each length-`t` row of `x`.
pub fn dct2<T: Scalar>(x: &[T], t: usize) -> Vec<T> {
    if t <= DIRECT_MAX_LEN {
        dct2_direct(x, t)
    } else {
        dct2_fft(x, t)
    }
}

/// Inverse of [`dct2`].
pub fn idct2<T: Scalar>(x: &[T], t: usize) -> Vec<T> {
    if t <= DIRECT_MAX_LEN {
        idct2_direct(x, t)
    } else {
        idct2_fft(x, t)
    }
}

/// `exp(−k (pπ/T)²)` for `p = 0..T`, at unit `k`: the squared frequencies.
pub fn heat_frequencies(t: usize) -> Vec<f64> {
    (0..t)
        .map(|p| {
            let w = p as f64 * PI / t as f64;
            w * w
        })
        .collect()
}

/// Multiplies row `c` of a spectrum by `exp(−k[c]·ω_p²)`.
pub fn heat_filter<T: Scalar>(spec: &[T], t: usize, k: &[T]) -> Vec<T> {
    let w2 = heat_frequencies(t);
    let mut y = spec.to_vec();
    for (c, row) in y.chunks_mut(t).enumerate() {
        let kc = k[c].f64();
        for (p, v) in row.iter_mut().enumerate() {
            *v *= T::c((-kc * w2[p]).exp());
        }
    }
    y
}

/// `idct2(dct2(x) ⊙ exp(−k ω²))` for a `[C×T]` buffer.
pub fn heat_diffuse<T: Scalar>(x: &[T], t: usize, k: &[T]) -> Vec<T> {
    idct2(&heat_filter(&dct2(x, t), t, k), t)
}
