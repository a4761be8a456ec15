//! Full model assembly, visual-token caching, the separation and codec
//! pretraining loops, evaluation, and multi-speaker inference.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::audiocodec::AudioCodec;
use crate::avf::Avf;
use crate::config::ModelConfig;
use crate::datagen::{Manifest, MixSpec, Split};
use crate::error::{config_err, input_err, Error, Result};
use crate::graph::{Mode, Var};
use crate::io::{save_weights, write_atomic};
use crate::lipcoder::{kmeans, pretrain_losses, Lipcoder, PretrainWeights, ToyTeacher};
use crate::losses::{sdri, sisnri, total_loss, LossConfig};
use crate::numerics::gradcheck::{grad_check, GradCheckOptions, GradReport};
use crate::params::{Init, ParamStore, Session};
use crate::profiler::{count_macs, count_params, time_inference, EfficiencyReport};
use crate::scalar::Scalar;
use crate::separator::Separator;
use crate::tensor::Tensor;

pub const AUDIO_PREFIX: &str = "audio";
pub const LIP_PREFIX: &str = "lip";
pub const AVF_PREFIX: &str = "avf";
pub const SEP_PREFIX: &str = "sep";
const TEACHER_PREFIX: &str = "teacher";

/// Frozen visual token streams `(V_r, V_s)`, each `[d_v × T_v]`.
#[derive(Debug, Clone, PartialEq)]
pub struct VisualTokens<T> {
    pub rec: Tensor<T>,
    pub sem: Tensor<T>,
}

/// Columns `[start, start + len)` of a `[rows × cols]` tensor.
pub fn slice_cols<T: Scalar>(t: &Tensor<T>, start: usize, len: usize) -> Result<Tensor<T>> {
    let (rows, cols) = t.rows_cols();
    if start + len > cols {
        return Err(input_err!("columns {start}..{} exceed {cols}", start + len));
    }
    let mut data = Vec::with_capacity(rows * len);
    for r in 0..rows {
        data.extend_from_slice(&t.row(r)[start..start + len]);
    }
    Tensor::new(&[rows, len], data)
}

/// Extends a `[rows × cols]` tensor to `len` columns by repeating the last one.
fn pad_cols<T: Scalar>(t: &Tensor<T>, len: usize) -> Result<Tensor<T>> {
    let (rows, cols) = t.rows_cols();
    if len <= cols {
        return slice_cols(t, 0, len);
    }
    let mut data = Vec::with_capacity(rows * len);
    for r in 0..rows {
        let row = t.row(r);
        data.extend_from_slice(row);
        data.extend(std::iter::repeat(row[cols - 1]).take(len - cols));
    }
    Tensor::new(&[rows, len], data)
}

/// Frames `[start, start + len)` of a `[1, H, W, T]` video.
pub fn slice_frames<T: Scalar>(v: &Tensor<T>, start: usize, len: usize) -> Result<Tensor<T>> {
    let s = v.shape();
    let flat = v.clone().reshape(&[s[0] * s[1] * s[2], s[3]])?;
    slice_cols(&flat, start, len)?.reshape(&[s[0], s[1], s[2], len])
}

impl<T: Scalar> VisualTokens<T> {
    pub fn frames(&self) -> usize {
        self.sem.dim(1)
    }

    pub fn crop(&self, start: usize, len: usize) -> Result<Self> {
        Ok(Self {
            rec: slice_cols(&self.rec, start, len)?,
            sem: slice_cols(&self.sem, start, len)?,
        })
    }

    fn padded(&self, len: usize) -> Result<Self> {
        Ok(Self {
            rec: pad_cols(&self.rec, len)?,
            sem: pad_cols(&self.sem, len)?,
        })
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ModelOutput {
    /// Waveform estimate `[1 × L]`.
    pub estimate: Var,
    /// Auxiliary estimate from the `T/8` decoder state, when present.
    pub aux: Option<Var>,
}

/// Audio encoder, frozen video codec, fusion, separator, and audio decoder.
#[derive(Debug, Clone)]
pub struct DolphinModel {
    pub cfg: ModelConfig,
    pub codec: AudioCodec,
    pub lip: Lipcoder,
    pub avf: Avf,
    pub sep: Separator,
}

impl DolphinModel {
    pub fn new(cfg: &ModelConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            cfg: cfg.clone(),
            codec: AudioCodec::new(AUDIO_PREFIX, &cfg.audio),
            lip: Lipcoder::new(LIP_PREFIX, &cfg.lipcoder),
            avf: Avf::new(AVF_PREFIX, cfg),
            sep: Separator::new(SEP_PREFIX, &cfg.separator),
        })
    }

    /// Fresh parameters; the video codec is registered frozen.
    pub fn init<T: Scalar>(&self, seed: u64) -> Result<ParamStore<T>> {
        let mut store = ParamStore::new();
        let mut init = Init::new(seed);
        self.codec.init(&mut store, &mut init)?;
        self.lip.init(&mut store, &mut init)?;
        self.avf.init(&mut store, &mut init)?;
        self.sep.init(&mut store, &mut init)?;
        store.set_trainable(&format!("{LIP_PREFIX}."), false);
        Ok(store)
    }

    pub fn check_sync(&self, audio_len: usize, frames: usize) -> Result<()> {
        if audio_len != frames * self.cfg.samples_per_frame() {
            return Err(input_err!(
                "audio has {} samples but video has {} frames ({} samples each)",
                audio_len,
                frames,
                self.cfg.samples_per_frame()
            ));
        }
        Ok(())
    }

    pub fn visual_tokens<T: Scalar>(
        &self,
        store: &ParamStore<T>,
        video: &Tensor<T>,
    ) -> Result<VisualTokens<T>> {
        let s = Session::new(store, Mode::Inference);
        let v = s.constant(video.clone());
        let (vr, vs) = self.lip.tokens(&s, v)?;
        Ok(VisualTokens {
            rec: (*s.value(vr)).clone(),
            sem: (*s.value(vs)).clone(),
        })
    }

    /// Graph forward from a waveform `[1 × L]` and token streams.
    pub fn forward_graph<T: Scalar>(
        &self,
        s: &Session<T>,
        wave: Var,
        vr: Var,
        vs: Var,
    ) -> Result<ModelOutput> {
        let len = s.shape(wave)[1];
        let x = self.codec.encode(s, wave)?;
        let f = self.avf.forward(s, vr, vs, x)?;
        let out = self.sep.forward(s, x, f, self.cfg.avf.position.level())?;
        let estimate = self.codec.decode(s, out.estimate, Some(len))?;
        let aux = match out.aux_state {
            Some(d3) => {
                let a = self.sep.aux_head(s, d3, x)?;
                Some(self.codec.decode(s, a, Some(len))?)
            }
            None => None,
        };
        Ok(ModelOutput { estimate, aux })
    }

    /// Separates with precomputed tokens, padding to the length quantum and
    /// trimming the result back.
    pub fn forward_tokens<T: Scalar>(
        &self,
        store: &ParamStore<T>,
        wave: &[T],
        tokens: &VisualTokens<T>,
    ) -> Result<(Vec<T>, Option<Vec<T>>)> {
        self.check_sync(wave.len(), tokens.frames())?;
        let q = self.cfg.length_quantum();
        let padded_len = wave.len().div_ceil(q).max(1) * q;
        let mut padded = wave.to_vec();
        padded.resize(padded_len, T::zero());
        let tok = tokens.padded(padded_len / self.cfg.samples_per_frame())?;
        let s = Session::new(store, Mode::Inference);
        let w = s.constant(Tensor::new(&[1, padded_len], padded)?);
        let vr = s.constant(tok.rec);
        let vs = s.constant(tok.sem);
        let out = self.forward_graph(&s, w, vr, vs)?;
        let take = |v: Var| s.value(v).data()[..wave.len()].to_vec();
        Ok((take(out.estimate), out.aux.map(take)))
    }

    /// `(Ŝ, Ŝ₃)` for one mixture and one target video.
    pub fn forward<T: Scalar>(
        &self,
        store: &ParamStore<T>,
        wave: &[T],
        video: &Tensor<T>,
    ) -> Result<(Vec<T>, Option<Vec<T>>)> {
        self.lip.check_video(video.shape())?;
        self.check_sync(wave.len(), video.dim(3))?;
        let tokens = self.visual_tokens(store, video)?;
        self.forward_tokens(store, wave, &tokens)
    }

    /// One extraction per target video.
    pub fn separate_multi<T: Scalar>(
        &self,
        store: &ParamStore<T>,
        wave: &[T],
        videos: &[Tensor<T>],
    ) -> Result<Vec<Vec<T>>> {
        if videos.is_empty() {
            return Err(input_err!("at least one target video is required"));
        }
        videos
            .iter()
            .map(|v| self.forward(store, wave, v).map(|(e, _)| e))
            .collect()
    }
}

/// L2 norm over every gradient; rescales them to `max_norm` when above it.
pub fn clip_grad_norm<T: Scalar>(grads: &mut BTreeMap<String, Tensor<T>>, max_norm: f64) -> f64 {
    let norm = grads
        .values()
        .map(|g| g.data().iter().map(|v| v.f64() * v.f64()).sum::<f64>())
        .sum::<f64>()
        .sqrt();
    if norm > max_norm && norm > 0.0 {
        let k = T::c(max_norm / norm);
        for g in grads.values_mut() {
            g.data_mut().iter_mut().for_each(|v| *v *= k);
        }
    }
    norm
}

/// Adam with bias correction; frozen parameters are skipped.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: i32,
    m: BTreeMap<String, Vec<f64>>,
    v: BTreeMap<String, Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }

    pub fn step<T: Scalar>(
        &mut self,
        store: &mut ParamStore<T>,
        grads: &BTreeMap<String, Tensor<T>>,
    ) -> Result<()> {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for (name, g) in grads {
            if !store.get(name).is_some_and(|p| p.trainable) {
                continue;
            }
            let n = g.len();
            let m = self.m.entry(name.clone()).or_insert_with(|| vec![0.0; n]);
            let v = self.v.entry(name.clone()).or_insert_with(|| vec![0.0; n]);
            let p = store.value_mut(name)?;
            for (i, (w, gi)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                let gi = gi.f64();
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * gi;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * gi * gi;
                let upd = self.lr * (m[i] / c1) / ((v[i] / c2).sqrt() + self.eps);
                *w = T::c(w.f64() - upd);
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlateauAction {
    Improved,
    Stalled,
    HalveLr,
    Stop,
}

/// Validation-loss plateau tracking: halve the rate every `patience`
/// non-improving epochs, stop after `stop_after`.
#[derive(Debug, Clone)]
pub struct Plateau {
    pub patience: usize,
    pub stop_after: usize,
    pub best: f64,
    pub bad_epochs: usize,
}

impl Plateau {
    pub fn new(patience: usize, stop_after: usize) -> Self {
        Self {
            patience,
            stop_after,
            best: f64::INFINITY,
            bad_epochs: 0,
        }
    }

    pub fn observe(&mut self, loss: f64) -> PlateauAction {
        if loss < self.best {
            self.best = loss;
            self.bad_epochs = 0;
            return PlateauAction::Improved;
        }
        self.bad_epochs += 1;
        if self.bad_epochs >= self.stop_after {
            PlateauAction::Stop
        } else if self.patience > 0 && self.bad_epochs % self.patience == 0 {
            PlateauAction::HalveLr
        } else {
            PlateauAction::Stalled
        }
    }
}

/// A training or evaluation item with cached visual tokens.
#[derive(Debug, Clone)]
pub struct Example<T> {
    pub mixture: Vec<T>,
    pub target: Vec<T>,
    pub tokens: VisualTokens<T>,
    /// Speaker seeds, target first.
    pub seeds: Vec<u64>,
}

pub fn build_examples<T: Scalar>(
    model: &DolphinModel,
    store: &ParamStore<T>,
    manifest: &Manifest,
    split: Split,
) -> Result<Vec<Example<T>>> {
    (0..manifest.len(split))
        .map(|i| {
            let s = manifest.sample(split, i)?;
            let video: Tensor<T> = s.target.video.cast();
            let cast = |x: &[f64]| x.iter().map(|&v| T::c(v)).collect::<Vec<T>>();
            Ok(Example {
                mixture: cast(&s.mix.mixture),
                target: cast(&s.mix.sources[0]),
                tokens: model.visual_tokens(store, &video)?,
                seeds: s.seeds,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub clip_norm: f64,
    /// Training crop in video frames; 0 trains on whole clips.
    pub crop_frames: usize,
    /// Crops whose target energy per sample falls below this fraction of the
    /// whole clip's are redrawn; after a fixed number of attempts the most
    /// energetic candidate is used.
    pub min_crop_energy: f64,
    pub seed: u64,
    pub loss: LossConfig,
    pub plateau_patience: usize,
    pub early_stop: usize,
    /// Written after every epoch when set.
    pub checkpoint: Option<PathBuf>,
    pub trace: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 600,
            batch_size: 2,
            lr: 1e-3,
            clip_norm: 5.0,
            crop_frames: 8,
            min_crop_energy: 0.25,
            seed: 0,
            loss: LossConfig::default(),
            plateau_patience: 15,
            early_stop: 30,
            checkpoint: None,
            trace: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub step: usize,
    pub epoch: usize,
    pub train_loss: f64,
    pub grad_norm: f64,
    pub lr: f64,
    /// Present on the last step of each epoch.
    pub val_loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub trace: Vec<TraceRow>,
    pub epochs: usize,
    pub best_val: f64,
    pub final_lr: f64,
    pub stopped_early: bool,
}

impl TrainReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,epoch,train_loss,grad_norm,lr,val_loss\n");
        for r in &self.trace {
            let val = r.val_loss.map_or(String::new(), |v| format!("{v:.6}"));
            let _ = writeln!(
                out,
                "{},{},{:.6},{:.6},{:e},{}",
                r.step, r.epoch, r.train_loss, r.grad_norm, r.lr, val
            );
        }
        out
    }
}

struct Crop<T> {
    mixture: Vec<T>,
    target: Vec<T>,
    tokens: VisualTokens<T>,
}

fn crop<T: Scalar>(ex: &Example<T>, start: usize, frames: usize, spf: usize) -> Result<Crop<T>> {
    let total = ex.tokens.frames();
    let frames = if frames == 0 {
        total
    } else {
        frames.min(total)
    };
    let (a, b) = (start * spf, (start + frames) * spf);
    Ok(Crop {
        mixture: ex.mixture[a..b].to_vec(),
        target: ex.target[a..b].to_vec(),
        tokens: ex.tokens.crop(start, frames)?,
    })
}

const CROP_ATTEMPTS: usize = 8;

fn pick_crop<T: Scalar>(
    ex: &Example<T>,
    n: usize,
    spf: usize,
    min_energy: f64,
    rng: &mut ChaCha8Rng,
) -> usize {
    let frames = ex.tokens.frames();
    let power = |a: usize, b: usize| {
        ex.target[a..b]
            .iter()
            .map(|v| v.f64() * v.f64())
            .sum::<f64>()
            / (b - a) as f64
    };
    let clip = power(0, ex.target.len());
    let mut best = (f64::NEG_INFINITY, 0);
    for _ in 0..CROP_ATTEMPTS {
        let start = rng.gen_range(0..=frames - n);
        let p = power(start * spf, (start + n) * spf);
        if p >= min_energy * clip {
            return start;
        }
        if p > best.0 {
            best = (p, start);
        }
    }
    best.1
}

fn crop_loss<T: Scalar>(
    model: &DolphinModel,
    s: &Session<T>,
    c: &Crop<T>,
    lambda: f64,
    cfg: &LossConfig,
) -> Result<Var> {
    let len = c.mixture.len();
    let w = s.constant(Tensor::new(&[1, len], c.mixture.clone())?);
    let t = s.constant(Tensor::new(&[1, len], c.target.clone())?);
    let vr = s.constant(c.tokens.rec.clone());
    let vs = s.constant(c.tokens.sem.clone());
    let out = model.forward_graph(s, w, vr, vs)?;
    total_loss(s, t, out.estimate, out.aux, lambda, cfg)
}

/// Mean loss over central crops of `examples`.
pub fn validation_loss<T: Scalar>(
    model: &DolphinModel,
    store: &ParamStore<T>,
    examples: &[Example<T>],
    crop_frames: usize,
    lambda: f64,
    cfg: &LossConfig,
) -> Result<f64> {
    if examples.is_empty() {
        return Ok(f64::NAN);
    }
    let spf = model.cfg.samples_per_frame();
    let mut total = 0.0;
    for ex in examples {
        let n = if crop_frames == 0 {
            ex.tokens.frames()
        } else {
            crop_frames.min(ex.tokens.frames())
        };
        let start = (ex.tokens.frames() - n) / 2;
        let c = crop(ex, start, n, spf)?;
        let s = Session::new(store, Mode::Inference);
        total += s.scalar(crop_loss(model, &s, &c, lambda, cfg)?).f64();
    }
    Ok(total / examples.len() as f64)
}

/// Trains every trainable parameter on random frame-aligned crops.
pub fn train_separation<T: Scalar>(
    model: &DolphinModel,
    store: &mut ParamStore<T>,
    train: &[Example<T>],
    val: &[Example<T>],
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    if train.is_empty() || cfg.batch_size == 0 {
        return Err(input_err!(
            "training needs examples and a positive batch size"
        ));
    }
    let spf = model.cfg.samples_per_frame();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::new(cfg.lr);
    let mut plateau = Plateau::new(cfg.plateau_patience, cfg.early_stop);
    let mut trace = Vec::with_capacity(cfg.steps);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut step = 0;
    let mut epoch = 0;
    let mut stopped_early = false;
    let batches = train.len().div_ceil(cfg.batch_size);
    'outer: while step < cfg.steps {
        epoch += 1;
        let lambda = cfg.loss.lambda(epoch)?;
        order.shuffle(&mut rng);
        for b in 0..batches {
            if step >= cfg.steps {
                break 'outer;
            }
            let idx = &order[b * cfg.batch_size..((b + 1) * cfg.batch_size).min(train.len())];
            let s = Session::new(&*store, Mode::Train);
            let mut losses = Vec::with_capacity(idx.len());
            for &i in idx {
                let ex = &train[i];
                let frames = ex.tokens.frames();
                let n = if cfg.crop_frames == 0 {
                    frames
                } else {
                    cfg.crop_frames.min(frames)
                };
                let start = pick_crop(ex, n, spf, cfg.min_crop_energy, &mut rng);
                let c = crop(ex, start, n, spf)?;
                losses.push(crop_loss(model, &s, &c, lambda, &cfg.loss)?);
            }
            let mut loss = losses[0];
            for &l in &losses[1..] {
                loss = s.add(loss, l)?;
            }
            let loss = s.scale(loss, 1.0 / idx.len() as f64);
            let value = s.scalar(loss).f64();
            if !value.is_finite() {
                let seeds: Vec<Vec<u64>> = idx.iter().map(|&i| train[i].seeds.clone()).collect();
                return Err(Error::NonFinite(format!(
                    "training loss at step {step} (batch seeds {seeds:?})"
                )));
            }
            let mut grads = s.param_grads(loss)?;
            drop(s);
            let norm = clip_grad_norm(&mut grads, cfg.clip_norm);
            adam.step(store, &grads)?;
            trace.push(TraceRow {
                step,
                epoch,
                train_loss: value,
                grad_norm: norm,
                lr: adam.lr,
                val_loss: None,
            });
            step += 1;
        }
        let v = validation_loss(model, store, val, cfg.crop_frames, lambda, &cfg.loss)?;
        if let Some(last) = trace.last_mut() {
            last.val_loss = Some(v);
        }
        if let Some(p) = &cfg.checkpoint {
            save_weights(store, p)?;
        }
        if let Some(p) = &cfg.trace {
            let partial = TrainReport {
                trace: trace.clone(),
                epochs: epoch,
                best_val: plateau.best,
                final_lr: adam.lr,
                stopped_early: false,
            };
            write_atomic(p, partial.to_csv().as_bytes())?;
        }
        if v.is_finite() {
            match plateau.observe(v) {
                PlateauAction::HalveLr => adam.lr *= 0.5,
                PlateauAction::Stop => {
                    stopped_early = true;
                    break;
                }
                _ => {}
            }
        }
    }
    Ok(TrainReport {
        trace,
        epochs: epoch,
        best_val: plateau.best,
        final_lr: adam.lr,
        stopped_early,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalRow {
    pub seeds: Vec<u64>,
    pub sisnri: f64,
    pub sdri: f64,
}

/// Whole-clip SI-SNRi and SDRi per example.
pub fn evaluate<T: Scalar>(
    model: &DolphinModel,
    store: &ParamStore<T>,
    examples: &[Example<T>],
) -> Result<Vec<EvalRow>> {
    examples
        .iter()
        .map(|ex| {
            let (est, _) = model.forward_tokens(store, &ex.mixture, &ex.tokens)?;
            let f = |x: &[T]| x.iter().map(|v| v.f64()).collect::<Vec<f64>>();
            let (s, e, a) = (f(&ex.target), f(&est), f(&ex.mixture));
            Ok(EvalRow {
                seeds: ex.seeds.clone(),
                sisnri: sisnri(&s, &e, &a)?,
                sdri: sdri(&s, &e, &a)?,
            })
        })
        .collect()
}

pub fn mean_sisnri(rows: &[EvalRow]) -> f64 {
    rows.iter().map(|r| r.sisnri).sum::<f64>() / rows.len().max(1) as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct PretrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub clip_norm: f64,
    pub crop_frames: usize,
    pub seed: u64,
    pub weights: PretrainWeights,
    pub kmeans_restarts: usize,
    /// Cap on latent vectors used for codebook seeding.
    pub kmeans_points: usize,
    pub teacher_seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            steps: 200,
            batch_size: 2,
            lr: 1e-3,
            clip_norm: 5.0,
            crop_frames: 8,
            seed: 0,
            weights: PretrainWeights::default(),
            kmeans_restarts: 10,
            kmeans_points: 2048,
            teacher_seed: 1234,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum PretrainEvent {
    CodebookInit { points: usize, inertia: f64 },
    Step { step: usize, loss: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct PretrainReport {
    pub events: Vec<PretrainEvent>,
}

impl PretrainReport {
    pub fn losses(&self) -> Vec<f64> {
        self.events
            .iter()
            .filter_map(|e| match e {
                PretrainEvent::Step { loss, .. } => Some(*loss),
                _ => None,
            })
            .collect()
    }
}

/// Seeds the codebook by k-means over semantic-path latents of `videos`.
pub fn init_codebook<T: Scalar>(
    model: &DolphinModel,
    store: &mut ParamStore<T>,
    videos: &[Tensor<T>],
    cfg: &PretrainConfig,
) -> Result<PretrainEvent> {
    let d = model.cfg.lipcoder.embed_dim;
    let mut points = Vec::new();
    for v in videos {
        {
            let s = Session::new(&*store, Mode::Inference);
            let z = model.lip.sem.forward(&s, s.constant(v.clone()))?;
            let flat = model.lip.sem_vectors(&s, z)?;
            let zv = s.value(flat);
            let m = zv.dim(1);
            for j in 0..m {
                points.extend((0..d).map(|r| zv.data()[r * m + j].f64()));
            }
        }
    }
    let n = points.len() / d;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed);
    let chosen: Vec<f64> = if n > cfg.kmeans_points {
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut rng);
        idx[..cfg.kmeans_points]
            .iter()
            .flat_map(|&i| points[i * d..(i + 1) * d].to_vec())
            .collect()
    } else {
        points
    };
    let k = model.cfg.lipcoder.codebook_size;
    let r = kmeans(&chosen, d, k, cfg.kmeans_restarts, cfg.seed)?;
    let cb = Tensor::new(&[k, d], r.centers.iter().map(|&v| T::c(v)).collect())?;
    store.set(&model.lip.codebook_name(), cb)?;
    Ok(PretrainEvent::CodebookInit {
        points: chosen.len() / d,
        inertia: r.inertia,
    })
}

/// Trains the video codec with commitment, distillation, and reconstruction
/// losses against a frozen random teacher; the codebook is seeded first.
pub fn pretrain_lipcoder<T: Scalar>(
    model: &DolphinModel,
    store: &mut ParamStore<T>,
    videos: &[Tensor<T>],
    cfg: &PretrainConfig,
) -> Result<PretrainReport> {
    if videos.is_empty() {
        return Err(input_err!("pretraining needs at least one video"));
    }
    let lc = &model.lip.cfg;
    let teacher = ToyTeacher::new(TEACHER_PREFIX, lc.teacher_dim);
    let mut tstore = ParamStore::<T>::new();
    teacher.init(&mut tstore, cfg.teacher_seed)?;
    let targets = videos
        .iter()
        .map(|v| {
            let s = Session::new(&tstore, Mode::Inference);
            let y = teacher.forward(&s, s.constant(v.clone()))?;
            Ok((*s.value(y)).clone())
        })
        .collect::<Result<Vec<_>>>()?;

    let mut events = vec![init_codebook(model, store, videos, cfg)?];
    let prefix = format!("{LIP_PREFIX}.");
    store.set_trainable(&prefix, true);
    let mut adam = Adam::new(cfg.lr);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let result = (|| -> Result<()> {
        for step in 0..cfg.steps {
            let s = Session::new(&*store, Mode::Train).with_rng(cfg.seed.wrapping_add(step as u64));
            let mut total: Option<Var> = None;
            for _ in 0..cfg.batch_size.max(1) {
                let i = rng.gen_range(0..videos.len());
                let frames = videos[i].dim(3);
                let n = if cfg.crop_frames == 0 {
                    frames
                } else {
                    cfg.crop_frames.min(frames)
                };
                let start = rng.gen_range(0..=frames - n);
                let v = s.constant(slice_frames(&videos[i], start, n)?);
                let t = s.constant(slice_cols(&targets[i], start, n)?);
                let out = model.lip.encode(&s, v, lc.temperature)?;
                let tok = model.lip.token_sum(&s, &out)?;
                let recon = model.lip.decode(&s, tok)?;
                let dist = model.lip.distill(&s, out.z_sem)?;
                let l = pretrain_losses(&s, v, recon, dist, t, out.vq.commit, cfg.weights)?;
                total = Some(match total {
                    Some(acc) => s.add(acc, l.total)?,
                    None => l.total,
                });
            }
            let loss = s.scale(
                total.expect("nonempty batch"),
                1.0 / cfg.batch_size.max(1) as f64,
            );
            let value = s.scalar(loss).f64();
            if !value.is_finite() {
                return Err(Error::NonFinite(format!(
                    "codec pretraining loss at step {step} (seed {})",
                    cfg.seed
                )));
            }
            let mut grads = s.param_grads(loss)?;
            drop(s);
            clip_grad_norm(&mut grads, cfg.clip_norm);
            adam.step(store, &grads)?;
            events.push(PretrainEvent::Step { step, loss: value });
        }
        Ok(())
    })();
    store.set_trainable(&prefix, false);
    result?;
    Ok(PretrainReport { events })
}

/// Copies every `lip.*` value from `source` into `target`.
pub fn transplant_lipcoder<T: Scalar>(
    target: &mut ParamStore<T>,
    source: &ParamStore<T>,
) -> Result<()> {
    let prefix = format!("{LIP_PREFIX}.");
    for (name, p) in source.iter().filter(|(n, _)| n.starts_with(&prefix)) {
        target.set(name, p.value.clone())?;
    }
    Ok(())
}

/// Central-difference check of every parameter the full model touches, from
/// raw video through the codec, fusion, separator, and combined loss.
pub fn model_grad_check(
    cfg: &ModelConfig,
    seed: u64,
    frames: usize,
    opts: GradCheckOptions,
) -> Result<GradReport> {
    let model = DolphinModel::new(cfg)?;
    let store = model.init::<f64>(seed)?;
    let len = frames * cfg.samples_per_frame();
    if len % cfg.length_quantum() != 0 {
        return Err(input_err!(
            "{frames} frames do not fill whole length quanta"
        ));
    }
    let mut init = Init::new(seed ^ 0xfeed);
    let wave = init.uniform::<f64>(&[1, len], 1).map(|v| 0.5 * v);
    let target = init.uniform::<f64>(&[1, len], 1).map(|v| 0.5 * v);
    let fsz = cfg.lipcoder.frame_size;
    let video = init
        .uniform::<f64>(&[1, fsz, fsz, frames], 1)
        .map(|v| v.abs());
    let loss_cfg = LossConfig::default();
    grad_check(
        &store,
        |s| {
            let (vr, vs) = model.lip.tokens(s, s.constant(video.clone()))?;
            let w = s.constant(wave.clone());
            let out = model.forward_graph(s, w, vr, vs)?;
            total_loss(
                s,
                s.constant(target.clone()),
                out.estimate,
                out.aux,
                0.4,
                &loss_cfg,
            )
        },
        opts,
    )
}

/// Parameters, MACs for `seconds` of input (rounded up to the length
/// quantum), and optional latency of the whole model including the video codec.
pub fn efficiency_report(
    cfg: &ModelConfig,
    seconds: f64,
    latency_runs: usize,
    warmups: usize,
) -> Result<EfficiencyReport> {
    let model = DolphinModel::new(cfg)?;
    let store = model.init::<f32>(0)?;
    let spf = cfg.samples_per_frame();
    let q = cfg.length_quantum();
    let want = (seconds * cfg.audio.sample_rate as f64).ceil().max(1.0) as usize;
    let len = want.div_ceil(q) * q;
    let frames = len / spf;
    let fsz = cfg.lipcoder.frame_size;
    let wave = Tensor::<f32>::zeros(&[1, len]);
    let video = Tensor::<f32>::zeros(&[1, fsz, fsz, frames]);
    let macs = count_macs(&store, |s| {
        let (vr, vs) = model.lip.tokens(s, s.constant(video.clone()))?;
        Ok(model
            .forward_graph(s, s.constant(wave.clone()), vr, vs)?
            .estimate)
    })?;
    let latency = if latency_runs > 0 {
        let mut init = Init::new(1);
        let w: Vec<f32> = init
            .uniform::<f32>(&[len], 1)
            .data()
            .iter()
            .map(|v| 0.1 * v)
            .collect();
        let v = init
            .uniform::<f32>(&[1, fsz, fsz, frames], 1)
            .map(|x| x.abs());
        Some(time_inference(
            || model.forward(&store, &w, &v).map(|_| ()),
            latency_runs,
            warmups,
        )?)
    } else {
        None
    };
    Ok(EfficiencyReport {
        params: count_params(&store),
        input_seconds: len as f64 / cfg.audio.sample_rate as f64,
        macs: macs.total,
        latency,
    })
}

/// Synthetic toy dataset sizes and mixture settings.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyData {
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub duration_s: f64,
    pub base_seed: u64,
}

impl Default for ToyData {
    fn default() -> Self {
        Self {
            n_train: 64,
            n_val: 16,
            n_test: 16,
            duration_s: 2.0,
            base_seed: 1000,
        }
    }
}

/// Pretrains a fresh video codec on the target videos of the toy training
/// split; returns only the `lip.*` parameters.
pub fn pretrain_toy_lipcoder(
    cfg: &ModelConfig,
    data: &ToyData,
    pretrain: &PretrainConfig,
) -> Result<(ParamStore<f32>, PretrainReport)> {
    let model = DolphinModel::new(cfg)?;
    let manifest = ToyExperiment::manifest(cfg, data)?;
    let mut lip_store = model
        .init::<f32>(pretrain.seed)?
        .subset(&format!("{LIP_PREFIX}."));
    let videos = (0..manifest.len(Split::Train))
        .map(|i| Ok(manifest.sample(Split::Train, i)?.target.video.cast::<f32>()))
        .collect::<Result<Vec<_>>>()?;
    let report = pretrain_lipcoder(&model, &mut lip_store, &videos, pretrain)?;
    Ok((lip_store, report))
}

/// Pretrained video codec plus cached token streams for every split, shared
/// by separator runs whose codec configuration matches.
#[derive(Debug, Clone)]
pub struct ToyExperiment {
    pub cfg: ModelConfig,
    pub manifest: Manifest,
    pub lip_store: ParamStore<f32>,
    pub pretrain: PretrainReport,
    pub train: Vec<Example<f32>>,
    pub val: Vec<Example<f32>>,
    pub test: Vec<Example<f32>>,
}

#[derive(Debug, Clone)]
pub struct ToyRun {
    pub store: ParamStore<f32>,
    pub report: TrainReport,
    pub rows: Vec<EvalRow>,
    pub mean_sisnri: f64,
}

impl ToyExperiment {
    pub fn manifest(cfg: &ModelConfig, data: &ToyData) -> Result<Manifest> {
        let spec = MixSpec {
            num_speakers: 2,
            noise_snr_db: None,
            duration_s: data.duration_s,
            frame_size: cfg.lipcoder.frame_size,
        };
        Manifest::new(spec, data.n_train, data.n_val, data.n_test, data.base_seed)
    }

    /// Pretrains the video codec on the training targets, then caches tokens.
    pub fn prepare(cfg: &ModelConfig, data: &ToyData, pretrain: &PretrainConfig) -> Result<Self> {
        let (lip_store, report) = pretrain_toy_lipcoder(cfg, data, pretrain)?;
        Self::with_lipcoder(cfg, data, lip_store, report)
    }

    /// Caches tokens from an already pretrained video codec.
    pub fn with_lipcoder(
        cfg: &ModelConfig,
        data: &ToyData,
        lip_store: ParamStore<f32>,
        pretrain: PretrainReport,
    ) -> Result<Self> {
        let model = DolphinModel::new(cfg)?;
        let manifest = Self::manifest(cfg, data)?;
        let train = build_examples(&model, &lip_store, &manifest, Split::Train)?;
        let val = build_examples(&model, &lip_store, &manifest, Split::Val)?;
        let test = build_examples(&model, &lip_store, &manifest, Split::Test)?;
        Ok(Self {
            cfg: cfg.clone(),
            manifest,
            lip_store,
            pretrain,
            train,
            val,
            test,
        })
    }

    /// Trains a fresh separator of configuration `cfg` (codec settings must
    /// match) and scores it on the test split.
    pub fn run(&self, cfg: &ModelConfig, init_seed: u64, train: &TrainConfig) -> Result<ToyRun> {
        if cfg.lipcoder != self.cfg.lipcoder {
            return Err(config_err!(
                "video codec configuration differs from the prepared experiment"
            ));
        }
        let model = DolphinModel::new(cfg)?;
        let mut store = model.init::<f32>(init_seed)?;
        transplant_lipcoder(&mut store, &self.lip_store)?;
        let report = train_separation(&model, &mut store, &self.train, &self.val, train)?;
        let rows = evaluate(&model, &store, &self.test)?;
        Ok(ToyRun {
            mean_sisnri: mean_sisnri(&rows),
            store,
            report,
            rows,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn micro() -> (DolphinModel, ParamStore<f32>) {
        let m = DolphinModel::new(&ModelConfig::micro()).unwrap();
        let s = m.init::<f32>(3).unwrap();
        (m, s)
    }

    fn video(frames: usize, seed: u64) -> Tensor<f32> {
        Init::new(seed)
            .uniform::<f32>(&[1, 8, 8, frames], 1)
            .map(|v| v.abs())
    }

    #[test]
    fn forward_lengths_and_determinism() {
        let (m, store) = micro();
        let wave: Vec<f32> = (0..1280).map(|i| (i as f32 * 0.05).sin() * 0.3).collect();
        let v = video(2, 1);
        let (a, aux) = m.forward(&store, &wave, &v).unwrap();
        assert_eq!(a.len(), 1280);
        assert!(aux.is_none());
        assert_eq!(a, m.forward(&store, &wave, &v).unwrap().0);
        assert!(m
            .forward(&store, &wave[..1000], &v)
            .unwrap_err()
            .is_input_error());
    }

    #[test]
    fn multi_speaker_permutes() {
        let (m, store) = micro();
        let wave: Vec<f32> = (0..1920).map(|i| (i as f32 * 0.03).cos() * 0.2).collect();
        let vids = [video(3, 1), video(3, 2), video(3, 3)];
        let outs = m.separate_multi(&store, &wave, &vids).unwrap();
        assert_eq!(outs.len(), 3);
        assert!(outs.iter().all(|o| o.len() == 1920));
        assert_eq!(outs[0], m.forward(&store, &wave, &vids[0]).unwrap().0);
        let rev = m
            .separate_multi(
                &store,
                &wave,
                &[vids[2].clone(), vids[1].clone(), vids[0].clone()],
            )
            .unwrap();
        assert_eq!(rev[0], outs[2]);
        assert_eq!(rev[2], outs[0]);
        assert!(m.separate_multi(&store, &wave, &[]).is_err());
    }

    #[test]
    fn micro_model_gradients() {
        let r = model_grad_check(
            &ModelConfig::micro(),
            0,
            1,
            GradCheckOptions::default().max_elements(2),
        )
        .unwrap();
        assert!(r.passed(), "{:?}", r.failures());
        assert!(r.per_parameter_errors.keys().any(|k| k.starts_with("lip.")));
    }

    #[test]
    fn efficiency_matches_profiler() {
        let cfg = ModelConfig::micro();
        let r = efficiency_report(&cfg, 0.01, 1, 0).unwrap();
        assert_eq!(r.input_seconds, 0.04);
        let m = DolphinModel::new(&cfg).unwrap();
        assert_eq!(r.params, count_params(&m.init::<f32>(5).unwrap()));
        assert!(r.macs > 0 && r.latency.is_some());
        assert!(r.params.frozen > 0 && r.params.by_module.contains_key("lip"));
    }

    #[test]
    fn clip_and_plateau() {
        let mut g = BTreeMap::new();
        g.insert(
            "a".to_string(),
            Tensor::<f64>::from_f64(&[2], &[30.0, 40.0]).unwrap(),
        );
        let n = clip_grad_norm(&mut g, 5.0);
        assert_eq!(n, 50.0);
        assert!((g["a"].data()[0] - 3.0).abs() < 1e-12 && (g["a"].data()[1] - 4.0).abs() < 1e-12);
        let mut p = Plateau::new(15, 30);
        let mut lr = 1e-3;
        assert_eq!(p.observe(1.0), PlateauAction::Improved);
        for e in 1..=30 {
            match p.observe(1.0) {
                PlateauAction::HalveLr => lr *= 0.5,
                PlateauAction::Stop => {
                    assert_eq!(e, 30);
                }
                a => assert_eq!(a, PlateauAction::Stalled),
            }
            if e == 15 {
                assert_eq!(lr, 5e-4);
            }
        }
    }

    #[test]
    fn adam_skips_frozen_and_moves_trainable() {
        let mut store = ParamStore::<f64>::new();
        store
            .insert("a", Tensor::from_f64(&[1], &[1.0]).unwrap(), true)
            .unwrap();
        store
            .insert("b", Tensor::from_f64(&[1], &[1.0]).unwrap(), false)
            .unwrap();
        let mut g = BTreeMap::new();
        g.insert("a".to_string(), Tensor::from_f64(&[1], &[2.0]).unwrap());
        g.insert("b".to_string(), Tensor::from_f64(&[1], &[2.0]).unwrap());
        let mut adam = Adam::new(0.1);
        adam.step(&mut store, &g).unwrap();
        assert!((store.value("a").unwrap().data()[0] - 0.9).abs() < 1e-6);
        assert_eq!(store.value("b").unwrap().data()[0], 1.0);
    }

    #[test]
    fn separation_training_keeps_codec_frozen() {
        let (m, mut store) = micro();
        let spec = MixSpec {
            num_speakers: 2,
            noise_snr_db: None,
            duration_s: 0.16,
            frame_size: 8,
        };
        let man = Manifest::new(spec, 4, 2, 0, 0).unwrap();
        let train = build_examples(&m, &store, &man, Split::Train).unwrap();
        let val = build_examples(&m, &store, &man, Split::Val).unwrap();
        let lip_before = store.subset("lip.");
        let sep_before = store.subset("sep.");
        let cfg = TrainConfig {
            steps: 3,
            crop_frames: 2,
            ..TrainConfig::default()
        };
        let r = train_separation(&m, &mut store, &train, &val, &cfg).unwrap();
        assert_eq!(r.trace.len(), 3);
        assert_eq!(store.subset("lip."), lip_before);
        assert_ne!(store.subset("sep."), sep_before);
        assert!(r.trace[1].val_loss.is_some());
        assert!(r.to_csv().lines().count() == 4);
    }

    #[test]
    fn pretraining_seeds_codebook_first() {
        let (m, mut store) = micro();
        let vids: Vec<Tensor<f32>> = (0..2).map(|i| video(4, i)).collect();
        let cfg = PretrainConfig {
            steps: 2,
            crop_frames: 2,
            ..PretrainConfig::default()
        };
        let before = store.value(&m.lip.codebook_name()).unwrap().clone();
        let r = pretrain_lipcoder(&m, &mut store, &vids, &cfg).unwrap();
        assert!(matches!(r.events[0], PretrainEvent::CodebookInit { .. }));
        assert_eq!(r.losses().len(), 2);
        assert_ne!(*store.value(&m.lip.codebook_name()).unwrap(), before);
        assert_eq!(store.count_frozen(), store.count("lip."));
    }
}
