//! Short-time Fourier magnitudes.

use std::f64::consts::PI;

use rustfft::num_complex::Complex;

use super::dct::plan;
use crate::error::{input_err, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Window {
    /// Periodic Hann, `0.5 − 0.5 cos(2πn/N)`.
    Hann,
    Rectangular,
}

impl Window {
    pub fn coefficients(self, n: usize) -> Vec<f64> {
        match self {
            Window::Rectangular => vec![1.0; n],
            Window::Hann => (0..n)
                .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos())
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StftConfig {
    pub win_len: usize,
    pub hop: usize,
    pub window: Window,
}

impl Default for StftConfig {
    fn default() -> Self {
        Self {
            win_len: 512,
            hop: 128,
            window: Window::Hann,
        }
    }
}

impl StftConfig {
    pub fn bins(&self) -> usize {
        self.win_len / 2 + 1
    }

    pub fn frames(&self, len: usize) -> Result<usize> {
        if self.win_len == 0 || self.hop == 0 {
            return Err(input_err!("STFT window and hop must be positive"));
        }
        if len < self.win_len {
            return Err(input_err!(
                "signal length {} shorter than STFT window {}",
                len,
                self.win_len
            ));
        }
        Ok((len - self.win_len) / self.hop + 1)
    }
}

/// Complex spectra, frame-major: `out[frame * bins + f]`.
fn spectra<T: Scalar>(x: &[T], cfg: &StftConfig, frames: usize) -> Vec<Complex<T>> {
    let n = cfg.win_len;
    let bins = cfg.bins();
    let w: Vec<T> = cfg.window.coefficients(n).into_iter().map(T::c).collect();
    let fft = plan::<T>(n, false);
    let mut buf = vec![Complex::new(T::zero(), T::zero()); n];
    let mut scratch = vec![Complex::new(T::zero(), T::zero()); fft.get_inplace_scratch_len()];
    let mut out = Vec::with_capacity(frames * bins);
    for f in 0..frames {
        let seg = &x[f * cfg.hop..f * cfg.hop + n];
        for i in 0..n {
            buf[i] = Complex::new(seg[i] * w[i], T::zero());
        }
        fft.process_with_scratch(&mut buf, &mut scratch);
        out.extend_from_slice(&buf[..bins]);
    }
    out
}

/// Magnitudes laid out `[bins × frames]`.
pub fn stft_mag<T: Scalar>(x: &[T], cfg: &StftConfig) -> Result<Vec<T>> {
    let frames = cfg.frames(x.len())?;
    let bins = cfg.bins();
    let s = spectra(x, cfg, frames);
    let mut m = vec![T::zero(); bins * frames];
    for fr in 0..frames {
        for b in 0..bins {
            m[b * frames + fr] = s[fr * bins + b].norm();
        }
    }
    Ok(m)
}

/// Gradient of `Σ g ⊙ |STFT(x)|` with respect to `x`. Zero-magnitude bins
/// contribute nothing.
pub fn stft_mag_backward<T: Scalar>(x: &[T], cfg: &StftConfig, g: &[T]) -> Vec<T> {
    let n = cfg.win_len;
    let bins = cfg.bins();
    let frames = cfg.frames(x.len()).expect("validated in forward");
    let s = spectra(x, cfg, frames);
    let w: Vec<T> = cfg.window.coefficients(n).into_iter().map(T::c).collect();
    let ifft = plan::<T>(n, true);
    let mut buf = vec![Complex::new(T::zero(), T::zero()); n];
    let mut scratch = vec![Complex::new(T::zero(), T::zero()); ifft.get_inplace_scratch_len()];
    let half = T::c(0.5);
    let mut dx = vec![T::zero(); x.len()];
    for fr in 0..frames {
        buf.fill(Complex::new(T::zero(), T::zero()));
        for b in 0..bins {
            let z = s[fr * bins + b];
            let mag = z.norm();
            if mag == T::zero() {
                continue;
            }
            let gz = z * (g[b * frames + fr] / mag);
            if b == 0 || 2 * b == n {
                buf[b] = buf[b] + gz;
            } else {
                buf[b] = buf[b] + gz * half;
                buf[n - b] = buf[n - b] + gz.conj() * half;
            }
        }
        ifft.process_with_scratch(&mut buf, &mut scratch);
        let seg = &mut dx[fr * cfg.hop..fr * cfg.hop + n];
        for i in 0..n {
            seg[i] += w[i] * buf[i].re;
        }
    }
    dx
}
