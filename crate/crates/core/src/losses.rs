//! Training objectives and evaluation metrics: time- and frequency-domain
//! SI-SNR, the frequency-weight schedule, SDR, and improvements over the
//! mixture.

use std::f64::consts::LN_10;

use crate::error::{input_err, shape_err, Result};
use crate::graph::Var;
use crate::numerics::{spectral, StftConfig};
use crate::params::Session;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig {
    pub stft: StftConfig,
    pub eps: f64,
    pub base: f64,
    pub pivot_epoch: usize,
    pub decay: f64,
    pub period: usize,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            stft: StftConfig::default(),
            eps: 1e-8,
            base: 0.4,
            pivot_epoch: 80,
            decay: 0.8,
            period: 5,
        }
    }
}

impl LossConfig {
    /// Frequency-term weight: `base` through the pivot epoch, then decayed
    /// once per `period` epochs.
    pub fn lambda(&self, epoch: usize) -> Result<f64> {
        if epoch == 0 {
            return Err(input_err!("epochs are counted from 1"));
        }
        if epoch <= self.pivot_epoch {
            return Ok(self.base);
        }
        let steps = (epoch - self.pivot_epoch) / self.period.max(1);
        Ok(self.base * self.decay.powi(steps as i32))
    }
}

/// Frequency-term weight under the default schedule.
pub fn lambda_schedule(epoch: usize) -> Result<f64> {
    LossConfig::default().lambda(epoch)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn check_pair(reference: &[f64], estimate: &[f64]) -> Result<()> {
    if reference.len() != estimate.len() {
        return Err(shape_err!(
            "reference has {} samples, estimate {}",
            reference.len(),
            estimate.len()
        ));
    }
    if dot(reference, reference) == 0.0 {
        return Err(input_err!("reference signal has zero energy"));
    }
    Ok(())
}

/// Scale-invariant ratio in dB between `estimate` and its projection on `reference`.
pub fn si_ratio(reference: &[f64], estimate: &[f64], eps: f64) -> Result<f64> {
    check_pair(reference, estimate)?;
    let energy = dot(reference, reference);
    let w = dot(estimate, reference) / (energy + eps);
    let target = w * w * energy;
    let residual: f64 = estimate
        .iter()
        .zip(reference)
        .map(|(e, r)| (e - w * r) * (e - w * r))
        .sum();
    Ok(10.0 * ((target + eps) / (residual + eps)).log10())
}

pub fn sisnr_t(reference: &[f64], estimate: &[f64]) -> Result<f64> {
    si_ratio(reference, estimate, LossConfig::default().eps)
}

pub fn sisnr_f(reference: &[f64], estimate: &[f64], cfg: &LossConfig) -> Result<f64> {
    check_pair(reference, estimate)?;
    let m = spectral::stft_mag(reference, &cfg.stft)?;
    let mh = spectral::stft_mag(estimate, &cfg.stft)?;
    si_ratio(&m, &mh, cfg.eps)
}

/// `10·log₁₀(‖S‖² / ‖Ŝ − S‖²)`.
pub fn sdr(reference: &[f64], estimate: &[f64]) -> Result<f64> {
    check_pair(reference, estimate)?;
    let eps = LossConfig::default().eps;
    let err: f64 = estimate
        .iter()
        .zip(reference)
        .map(|(e, r)| (e - r) * (e - r))
        .sum();
    Ok(10.0 * ((dot(reference, reference) + eps) / (err + eps)).log10())
}

pub fn sisnri(reference: &[f64], estimate: &[f64], mixture: &[f64]) -> Result<f64> {
    Ok(sisnr_t(reference, estimate)? - sisnr_t(reference, mixture)?)
}

pub fn sdri(reference: &[f64], estimate: &[f64], mixture: &[f64]) -> Result<f64> {
    Ok(sdr(reference, estimate)? - sdr(reference, mixture)?)
}

/// Differentiable scale-invariant ratio between two same-shape variables.
pub fn si_ratio_graph<T: Scalar>(
    s: &Session<T>,
    reference: Var,
    estimate: Var,
    eps: f64,
) -> Result<Var> {
    if s.shape(reference) != s.shape(estimate) {
        return Err(shape_err!(
            "reference {:?} vs estimate {:?}",
            s.shape(reference),
            s.shape(estimate)
        ));
    }
    if !s.is_dry() && s.value(reference).sq_norm().f64() == 0.0 {
        return Err(input_err!("reference signal has zero energy"));
    }
    let energy = s.sum_all(s.square(reference));
    let cross = s.sum_all(s.mul(estimate, reference)?);
    let w = s.div(cross, s.add_scalar(energy, eps))?;
    let proj = s.mul(reference, w)?;
    let res = s.sub(estimate, proj)?;
    let num = s.add_scalar(s.sum_all(s.square(proj)), eps);
    let den = s.add_scalar(s.sum_all(s.square(res)), eps);
    let ratio = s.div(num, den)?;
    Ok(s.scale(s.log(ratio), 10.0 / LN_10))
}

fn flatten<T: Scalar>(s: &Session<T>, x: Var) -> Result<Var> {
    let n = s.shape(x).iter().product();
    s.reshape(x, &[n])
}

pub fn sisnr_t_graph<T: Scalar>(
    s: &Session<T>,
    reference: Var,
    estimate: Var,
    cfg: &LossConfig,
) -> Result<Var> {
    si_ratio_graph(s, reference, estimate, cfg.eps)
}

pub fn sisnr_f_graph<T: Scalar>(
    s: &Session<T>,
    reference: Var,
    estimate: Var,
    cfg: &LossConfig,
) -> Result<Var> {
    let m = s.stft_mag(flatten(s, reference)?, &cfg.stft)?;
    let mh = s.stft_mag(flatten(s, estimate)?, &cfg.stft)?;
    si_ratio_graph(s, m, mh, cfg.eps)
}

/// `−[(1−λ)·SI-SNR_t(S, Ŝ) + λ·SI-SNR_f(S, Ŝ₃)]`; the frequency branch is
/// skipped when `λ = 0` or no auxiliary estimate is given.
pub fn total_loss<T: Scalar>(
    s: &Session<T>,
    reference: Var,
    estimate: Var,
    aux: Option<Var>,
    lambda: f64,
    cfg: &LossConfig,
) -> Result<Var> {
    let t = sisnr_t_graph(s, reference, estimate, cfg)?;
    match aux {
        Some(a) if lambda != 0.0 => {
            let f = sisnr_f_graph(s, reference, a, cfg)?;
            let sum = s.add(s.scale(t, 1.0 - lambda), s.scale(f, lambda))?;
            Ok(s.neg(sum))
        }
        _ => Ok(s.scale(t, -(1.0 - lambda))),
    }
}
