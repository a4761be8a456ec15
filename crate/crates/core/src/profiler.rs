//! Parameter, MAC, and latency accounting.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::time::Instant;

use crate::error::{input_err, Result};
use crate::graph::{Mode, Var};
use crate::params::{ParamStore, Session};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct ParamCounts {
    pub trainable: usize,
    pub frozen: usize,
    /// Scalars per top-level module (text before the first `.`).
    pub by_module: BTreeMap<String, usize>,
}

impl ParamCounts {
    pub fn total(&self) -> usize {
        self.trainable + self.frozen
    }
}

pub fn count_params<T: Scalar>(store: &ParamStore<T>) -> ParamCounts {
    let mut by_module = BTreeMap::new();
    let (mut trainable, mut frozen) = (0, 0);
    for (name, p) in store.iter() {
        let n = p.value.len();
        let module = name.split('.').next().unwrap_or(name).to_string();
        *by_module.entry(module).or_insert(0) += n;
        if p.trainable {
            trainable += n;
        } else {
            frozen += n;
        }
    }
    ParamCounts {
        trainable,
        frozen,
        by_module,
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MacReport {
    pub total: u64,
    pub by_scope: BTreeMap<String, u64>,
}

impl MacReport {
    pub fn matching(&self, pred: impl Fn(&str) -> bool) -> u64 {
        self.by_scope
            .iter()
            .filter(|(k, _)| pred(k))
            .map(|(_, v)| v)
            .sum()
    }
}

/// Runs `forward` shape-only and collects the analytic MAC counts.
pub fn count_macs<T, F>(store: &ParamStore<T>, forward: F) -> Result<MacReport>
where
    T: Scalar,
    F: FnOnce(&Session<T>) -> Result<Var>,
{
    let s = Session::new(store, Mode::DryRun);
    forward(&s)?;
    Ok(MacReport {
        total: s.graph().macs_total(),
        by_scope: s.graph().macs_by_scope(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatencyStats {
    pub runs: usize,
    pub mean_ms: f64,
    pub p50_ms: f64,
    pub p95_ms: f64,
}

impl LatencyStats {
    /// Nearest-rank percentiles over the given samples.
    pub fn from_samples(samples_ms: &[f64]) -> Result<Self> {
        if samples_ms.is_empty() {
            return Err(input_err!("latency needs at least one run"));
        }
        let mut v = samples_ms.to_vec();
        v.sort_by(f64::total_cmp);
        let rank = |p: f64| v[((p * v.len() as f64).ceil() as usize).clamp(1, v.len()) - 1];
        Ok(Self {
            runs: v.len(),
            mean_ms: v.iter().sum::<f64>() / v.len() as f64,
            p50_ms: rank(0.5),
            p95_ms: rank(0.95),
        })
    }
}

/// Wall-clock timing of `f` on the calling thread.
pub fn time_inference<F>(mut f: F, runs: usize, warmups: usize) -> Result<LatencyStats>
where
    F: FnMut() -> Result<()>,
{
    for _ in 0..warmups {
        f()?;
    }
    let mut samples = Vec::with_capacity(runs);
    for _ in 0..runs {
        let t0 = Instant::now();
        f()?;
        samples.push(t0.elapsed().as_secs_f64() * 1e3);
    }
    LatencyStats::from_samples(&samples)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EfficiencyReport {
    pub params: ParamCounts,
    pub input_seconds: f64,
    pub macs: u64,
    pub latency: Option<LatencyStats>,
}

impl EfficiencyReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("metric,value\n");
        let _ = writeln!(out, "params_total,{}", self.params.total());
        let _ = writeln!(out, "params_trainable,{}", self.params.trainable);
        let _ = writeln!(out, "params_frozen,{}", self.params.frozen);
        for (m, n) in &self.params.by_module {
            let _ = writeln!(out, "params_{m},{n}");
        }
        let _ = writeln!(out, "input_seconds,{}", self.input_seconds);
        let _ = writeln!(out, "macs_total,{}", self.macs);
        if let Some(l) = &self.latency {
            let _ = writeln!(out, "latency_runs,{}", l.runs);
            let _ = writeln!(out, "latency_mean_ms,{:.3}", l.mean_ms);
            let _ = writeln!(out, "latency_p50_ms,{:.3}", l.p50_ms);
            let _ = writeln!(out, "latency_p95_ms,{:.3}", l.p95_ms);
        }
        out
    }

    pub fn to_markdown(&self) -> String {
        let mut out = String::from("| metric | value |\n|---|---|\n");
        for line in self.to_csv().lines().skip(1) {
            if let Some((k, v)) = line.split_once(',') {
                let _ = writeln!(out, "| {k} | {v} |");
            }
        }
        out
    }
}
