//! Central finite-difference verification of graph gradients.

use std::collections::BTreeMap;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{config_err, Result};
use crate::graph::{Mode, Var};
use crate::params::{ParamStore, Session};

#[derive(Debug, Clone)]
pub struct GradReport {
    pub max_relative_error: f64,
    pub per_parameter_errors: BTreeMap<String, f64>,
    pub tolerance: f64,
}

impl GradReport {
    pub fn passed(&self) -> bool {
        self.max_relative_error < self.tolerance
    }

    /// Parameters whose error reaches the tolerance.
    pub fn failures(&self) -> Vec<(&str, f64)> {
        self.per_parameter_errors
            .iter()
            .filter(|(_, &e)| e >= self.tolerance)
            .map(|(k, &e)| (k.as_str(), e))
            .collect()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct GradCheckOptions {
    pub step: f64,
    pub tolerance: f64,
    /// Elements checked per parameter; larger tensors are subsampled.
    pub max_elements: usize,
    pub seed: u64,
    /// Lower bound on the error denominator, so gradients that are zero
    /// analytically are judged by absolute error.
    pub floor: f64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            step: 1e-4,
            tolerance: 1e-4,
            max_elements: 24,
            seed: 0,
            floor: 1e-6,
        }
    }
}

impl GradCheckOptions {
    pub fn tolerance(mut self, tol: f64) -> Self {
        self.tolerance = tol;
        self
    }

    pub fn max_elements(mut self, n: usize) -> Self {
        self.max_elements = n;
        self
    }
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compares reverse-mode gradients of the scalar built by `f` against
/// central differences for every parameter `f` touches.
///
/// Frozen parameters must come back with an all-zero gradient; any nonzero
/// entry is reported as an infinite error.
pub fn grad_check<F>(store: &ParamStore<f64>, f: F, opts: GradCheckOptions) -> Result<GradReport>
where
    F: Fn(&Session<f64>) -> Result<Var>,
{
    let (grads, used) = {
        let sess = Session::new(store, Mode::Train);
        let loss = f(&sess)?;
        if sess.value(loss).len() != 1 {
            return Err(config_err!("grad_check closure must return a scalar"));
        }
        (sess.param_grads(loss)?, sess.used_params())
    };
    let eval = |s: &ParamStore<f64>| -> Result<f64> {
        let sess = Session::new(s, Mode::Inference);
        let l = f(&sess)?;
        Ok(sess.scalar(l))
    };
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut work = store.clone();
    let mut per = BTreeMap::new();
    let mut worst = 0.0f64;
    for name in used {
        let analytic = &grads[&name];
        let param = store.get(&name).expect("used params are registered");
        let err = if !param.trainable {
            if analytic.data().iter().all(|&v| v == 0.0) {
                0.0
            } else {
                f64::INFINITY
            }
        } else {
            let n = analytic.len();
            let idx: Vec<usize> = if n <= opts.max_elements {
                (0..n).collect()
            } else {
                let mut v = sample(&mut rng, n, opts.max_elements).into_vec();
                v.sort_unstable();
                v
            };
            let mut e = 0.0f64;
            for i in idx {
                let orig = work.value(&name)?.data()[i];
                work.value_mut(&name)?.data_mut()[i] = orig + opts.step;
                let lp = eval(&work)?;
                work.value_mut(&name)?.data_mut()[i] = orig - opts.step;
                let lm = eval(&work)?;
                work.value_mut(&name)?.data_mut()[i] = orig;
                let num = (lp - lm) / (2.0 * opts.step);
                e = e.max(relative_error(analytic.data()[i], num, opts.floor));
            }
            e
        };
        worst = worst.max(err);
        per.insert(name, err);
    }
    Ok(GradReport {
        max_relative_error: worst,
        per_parameter_errors: per,
        tolerance: opts.tolerance,
    })
}
