//! Synthetic audio-visual corpus: harmonic voices whose syllable envelope
//! drives both the waveform amplitude and a rendered mouth opening, mixed
//! with equal-energy interferers and optional Gaussian noise.

use std::f64::consts::PI;
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{config_err, input_err, Error, Result};
use crate::tensor::Tensor;

pub const SAMPLE_RATE: usize = 16_000;
pub const VIDEO_FPS: usize = 25;
pub const SAMPLES_PER_FRAME: usize = SAMPLE_RATE / VIDEO_FPS;
const PEAK_LIMIT: f64 = 0.99;
const HARMONICS: usize = 8;
const CARRIER_RMS: f64 = 0.1;

/// One speaker's utterance with its synchronized mouth video.
#[derive(Debug, Clone, PartialEq)]
pub struct AvSample {
    pub audio: Vec<f64>,
    /// `[1, F, F, T_v]`.
    pub video: Tensor<f64>,
    /// Per-frame syllable envelope in `[0, 1]`.
    pub envelope: Vec<f64>,
    pub speaker_id: u64,
    pub seed: u64,
}

impl AvSample {
    pub fn frames(&self) -> usize {
        self.envelope.len()
    }

    /// Audio duration in samples equals frames times samples per frame.
    pub fn is_synchronized(&self) -> bool {
        self.audio.len() * VIDEO_FPS == self.video.dim(3) * SAMPLE_RATE
    }
}

/// Number of video frames in `duration_s`, which must be a whole number of frames.
pub fn frames_in(duration_s: f64) -> Result<usize> {
    let f = duration_s * VIDEO_FPS as f64;
    let r = f.round();
    if !(duration_s > 0.0) || (f - r).abs() > 1e-6 {
        return Err(input_err!(
            "duration {duration_s} s is not a positive multiple of one video frame"
        ));
    }
    Ok(r as usize)
}

/// Random syllable bumps: `sin²` pulses separated by short pauses.
fn syllable_envelope(rng: &mut ChaCha8Rng, frames: usize) -> Vec<f64> {
    let mut env = vec![0.0; frames];
    let mut t = rng.gen_range(0..4);
    while t < frames {
        let len = rng.gen_range(3..9);
        let amp = rng.gen_range(0.5..1.0);
        for i in 0..len {
            if t + i < frames {
                let phase = PI * (i as f64 + 0.5) / len as f64;
                env[t + i] = amp * phase.sin().powi(2);
            }
        }
        t += len + rng.gen_range(1..5);
    }
    env
}

/// Frame-rate envelope linearly interpolated at frame centers.
pub fn envelope_to_audio(env: &[f64]) -> Vec<f64> {
    let n = env.len() * SAMPLES_PER_FRAME;
    let spf = SAMPLES_PER_FRAME as f64;
    (0..n)
        .map(|i| {
            let pos = (i as f64 + 0.5) / spf - 0.5;
            if pos <= 0.0 {
                return env[0];
            }
            let j = pos.floor() as usize;
            if j + 1 >= env.len() {
                return env[env.len() - 1];
            }
            let f = pos - j as f64;
            env[j] * (1.0 - f) + env[j + 1] * f
        })
        .collect()
}

/// Soft-edged ellipse whose half-height grows with the envelope.
pub fn render_mouth(env: &[f64], frame_size: usize, width: f64) -> Tensor<f64> {
    let f = frame_size;
    let t = env.len();
    let mut data = vec![0.0; f * f * t];
    let c = (f as f64 - 1.0) / 2.0;
    let a = width * f as f64 / 2.0;
    for (k, &e) in env.iter().enumerate() {
        let b = f as f64 * (0.04 + 0.3 * e.clamp(0.0, 1.0));
        for y in 0..f {
            for x in 0..f {
                let dx = (x as f64 - c) / a;
                let dy = (y as f64 - c) / b;
                let r = (dx * dx + dy * dy).sqrt();
                data[(y * f + x) * t + k] = 1.0 / (1.0 + (6.0 * (r - 1.0)).exp());
            }
        }
    }
    Tensor::new(&[1, f, f, t], data).expect("shape matches data")
}

/// Mean pixel value per frame (grows monotonically with mouth opening).
pub fn aperture_trace(video: &Tensor<f64>) -> Vec<f64> {
    let t = video.dim(3);
    let pix = video.len() / t;
    let mut out = vec![0.0; t];
    for (i, &v) in video.data().iter().enumerate() {
        out[i % t] += v / pix as f64;
    }
    out
}

/// RMS of the waveform over each video frame.
pub fn frame_rms(audio: &[f64]) -> Vec<f64> {
    audio
        .chunks(SAMPLES_PER_FRAME)
        .map(|c| (c.iter().map(|v| v * v).sum::<f64>() / c.len() as f64).sqrt())
        .collect()
}

pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len()) as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    sab / (saa * sbb).sqrt()
}

/// Speaker traits drawn from the seed: pitch, harmonic weights, mouth width.
struct Voice {
    f0: f64,
    vibrato_hz: f64,
    vibrato_depth: f64,
    drift: f64,
    harmonics: [f64; HARMONICS],
    width: f64,
}

impl Voice {
    fn draw(rng: &mut ChaCha8Rng) -> Self {
        let mut harmonics = [0.0; HARMONICS];
        for (h, w) in harmonics.iter_mut().enumerate() {
            *w = rng.gen_range(0.3..1.0) / (h + 1) as f64;
        }
        Self {
            f0: rng.gen_range(100.0..260.0),
            vibrato_hz: rng.gen_range(2.0..6.0),
            vibrato_depth: rng.gen_range(0.02..0.08),
            drift: rng.gen_range(-0.15..0.15),
            harmonics,
            width: rng.gen_range(0.45..0.7),
        }
    }

    fn carrier(&self, rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        let dur = n as f64 / SAMPLE_RATE as f64;
        let vib_phase = rng.gen_range(0.0..2.0 * PI);
        let mut phases: Vec<f64> = (0..HARMONICS)
            .map(|_| rng.gen_range(0.0..2.0 * PI))
            .collect();
        let mut out = Vec::with_capacity(n);
        for i in 0..n {
            let t = i as f64 / SAMPLE_RATE as f64;
            let f = self.f0
                * (1.0 + self.drift * t / dur.max(1e-9))
                * (1.0 + self.vibrato_depth * (2.0 * PI * self.vibrato_hz * t + vib_phase).sin());
            let mut v = 0.0;
            for (h, (p, w)) in phases.iter_mut().zip(&self.harmonics).enumerate() {
                let fh = f * (h + 1) as f64;
                if fh < 0.45 * SAMPLE_RATE as f64 {
                    v += w * p.sin();
                }
                *p += 2.0 * PI * fh / SAMPLE_RATE as f64;
            }
            out.push(v);
        }
        let rms = (out.iter().map(|v| v * v).sum::<f64>() / n as f64).sqrt();
        out.iter().map(|v| v * CARRIER_RMS / rms).collect()
    }
}

/// Deterministic utterance of `duration_s` seconds with `frame_size`² video.
pub fn synth_utterance(seed: u64, duration_s: f64, frame_size: usize) -> Result<AvSample> {
    let frames = frames_in(duration_s)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let voice = Voice::draw(&mut rng);
    let env = syllable_envelope(&mut rng, frames);
    synth_with(seed, &voice, &mut rng, env, frame_size)
}

/// Utterance from `seed`'s voice with a caller-chosen frame envelope.
pub fn synth_with_envelope(seed: u64, envelope: Vec<f64>, frame_size: usize) -> Result<AvSample> {
    if envelope.is_empty() {
        return Err(input_err!("envelope needs at least one frame"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let voice = Voice::draw(&mut rng);
    let _ = syllable_envelope(&mut rng, envelope.len());
    synth_with(seed, &voice, &mut rng, envelope, frame_size)
}

fn synth_with(
    seed: u64,
    voice: &Voice,
    rng: &mut ChaCha8Rng,
    env: Vec<f64>,
    frame_size: usize,
) -> Result<AvSample> {
    if frame_size == 0 {
        return Err(config_err!("frame size must be positive"));
    }
    let n = env.len() * SAMPLES_PER_FRAME;
    let carrier = voice.carrier(rng, n);
    let amp = envelope_to_audio(&env);
    let audio = carrier.iter().zip(&amp).map(|(c, a)| c * a).collect();
    Ok(AvSample {
        audio,
        video: render_mouth(&env, frame_size, voice.width),
        envelope: env,
        speaker_id: seed,
        seed,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mixture {
    pub mixture: Vec<f64>,
    /// Sources after the shared normalization scale, target first.
    pub sources: Vec<Vec<f64>>,
    pub noise: Vec<f64>,
    /// Factor applied to everything for peak normalization (1 if none was needed).
    pub scale: f64,
}

fn energy(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

/// `A = Σ S_i + n`, with `n` Gaussian at `noise_snr_db` relative to the
/// first source, peak-normalized to `|A| ≤ 0.99` when needed.
pub fn mix(sources: &[Vec<f64>], noise_snr_db: Option<f64>, seed: u64) -> Result<Mixture> {
    let first = sources
        .first()
        .ok_or_else(|| input_err!("mix needs at least one source"))?;
    let n = first.len();
    if let Some(bad) = sources.iter().find(|s| s.len() != n) {
        return Err(input_err!("source lengths {} and {} differ", n, bad.len()));
    }
    let mut noise = vec![0.0; n];
    if let Some(snr) = noise_snr_db {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for v in noise.iter_mut() {
            *v = StandardNormal.sample(&mut rng);
        }
        let ne = energy(&noise);
        let target = energy(first) / 10f64.powf(snr / 10.0);
        let k = if ne > 0.0 { (target / ne).sqrt() } else { 0.0 };
        noise.iter_mut().for_each(|v| *v *= k);
    }
    let mut mixture = noise.clone();
    for s in sources {
        mixture.iter_mut().zip(s).for_each(|(m, v)| *m += v);
    }
    let peak = mixture.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let scale = if peak > PEAK_LIMIT {
        PEAK_LIMIT / peak
    } else {
        1.0
    };
    let apply = |x: &[f64]| -> Vec<f64> { x.iter().map(|v| v * scale).collect() };
    Ok(Mixture {
        mixture: apply(&mixture),
        sources: sources.iter().map(|s| apply(s)).collect(),
        noise: apply(&noise),
        scale,
    })
}

/// Removes from `x` its projection onto `reference`.
pub fn orthogonalize(x: &[f64], reference: &[f64]) -> Vec<f64> {
    let er = energy(reference);
    if er == 0.0 {
        return x.to_vec();
    }
    let w = x.iter().zip(reference).map(|(a, b)| a * b).sum::<f64>() / er;
    x.iter().zip(reference).map(|(a, b)| a - w * b).collect()
}

/// Rescales `x` to the energy of `reference` (silent `x` stays silent).
pub fn match_energy(x: &[f64], reference: &[f64]) -> Vec<f64> {
    let ex = energy(x);
    if ex == 0.0 {
        return x.to_vec();
    }
    let k = (energy(reference) / ex).sqrt();
    x.iter().map(|v| v * k).collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MixSpec {
    /// Target plus interferers.
    pub num_speakers: usize,
    pub noise_snr_db: Option<f64>,
    pub duration_s: f64,
    pub frame_size: usize,
}

impl MixSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_speakers < 2 {
            return Err(config_err!("separation needs at least one interferer"));
        }
        if self.frame_size == 0 {
            return Err(config_err!("frame size must be positive"));
        }
        frames_in(self.duration_s).map(|_| ())
    }
}

/// A seed range `[start, start + count·num_speakers)` for one split.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SplitRange {
    pub start: u64,
    pub count: usize,
}

impl SplitRange {
    fn end(&self, per_sample: usize) -> u64 {
        self.start + (self.count * per_sample) as u64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            _ => Err(input_err!("unknown split {s:?}")),
        }
    }
}

/// One mixture example: target (with video), interferers, and mixture.
#[derive(Debug, Clone, PartialEq)]
pub struct MixedSample {
    pub target: AvSample,
    pub interferers: Vec<AvSample>,
    pub mix: Mixture,
    /// Seeds of every speaker, target first.
    pub seeds: Vec<u64>,
}

/// Seeded index of the three splits.
#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub spec: MixSpec,
    pub train: SplitRange,
    pub val: SplitRange,
    pub test: SplitRange,
}

const MANIFEST_HEADER: &str = "# synthetic av manifest v1";

impl Manifest {
    /// Consecutive, disjoint ranges starting at `base_seed`.
    pub fn new(
        spec: MixSpec,
        n_train: usize,
        n_val: usize,
        n_test: usize,
        base_seed: u64,
    ) -> Result<Self> {
        let per = spec.num_speakers;
        let train = SplitRange {
            start: base_seed,
            count: n_train,
        };
        let val = SplitRange {
            start: train.end(per),
            count: n_val,
        };
        let test = SplitRange {
            start: val.end(per),
            count: n_test,
        };
        Self::with_ranges(spec, train, val, test)
    }

    pub fn with_ranges(
        spec: MixSpec,
        train: SplitRange,
        val: SplitRange,
        test: SplitRange,
    ) -> Result<Self> {
        spec.validate()?;
        let m = Self {
            spec,
            train,
            val,
            test,
        };
        let per = spec.num_speakers;
        let r = [train, val, test];
        for i in 0..3 {
            for j in i + 1..3 {
                let (a, b) = (r[i], r[j]);
                if a.count > 0 && b.count > 0 && a.start < b.end(per) && b.start < a.end(per) {
                    return Err(config_err!(
                        "{} and {} seed ranges overlap",
                        Split::ALL[i].name(),
                        Split::ALL[j].name()
                    ));
                }
            }
        }
        Ok(m)
    }

    pub fn range(&self, split: Split) -> SplitRange {
        match split {
            Split::Train => self.train,
            Split::Val => self.val,
            Split::Test => self.test,
        }
    }

    pub fn len(&self, split: Split) -> usize {
        self.range(split).count
    }

    /// Speaker seeds of sample `index`, target first.
    pub fn seeds(&self, split: Split, index: usize) -> Result<Vec<u64>> {
        let r = self.range(split);
        if index >= r.count {
            return Err(input_err!(
                "{} has {} samples, asked for {}",
                split.name(),
                r.count,
                index
            ));
        }
        let per = self.spec.num_speakers;
        let base = r.start + (index * per) as u64;
        Ok((0..per as u64).map(|k| base + k).collect())
    }

    /// Regenerates a sample: interferers are made orthogonal to the target
    /// and rescaled to its energy, so the mixture sits at 0 dB.
    pub fn sample(&self, split: Split, index: usize) -> Result<MixedSample> {
        let seeds = self.seeds(split, index)?;
        let spec = &self.spec;
        let target = synth_utterance(seeds[0], spec.duration_s, spec.frame_size)?;
        let interferers = seeds[1..]
            .iter()
            .map(|&s| synth_utterance(s, spec.duration_s, spec.frame_size))
            .collect::<Result<Vec<_>>>()?;
        let mut sources = vec![target.audio.clone()];
        for i in &interferers {
            sources.push(match_energy(
                &orthogonalize(&i.audio, &target.audio),
                &target.audio,
            ));
        }
        let mix = mix(
            &sources,
            spec.noise_snr_db,
            seeds[0] ^ 0x9e37_79b9_7f4a_7c15,
        )?;
        Ok(MixedSample {
            target,
            interferers,
            mix,
            seeds,
        })
    }

    /// Every seed used by a split.
    pub fn split_seeds(&self, split: Split) -> Vec<u64> {
        let r = self.range(split);
        (r.start..r.end(self.spec.num_speakers)).collect()
    }

    pub fn to_text(&self) -> String {
        let mut out = String::from(MANIFEST_HEADER);
        out.push('\n');
        let s = &self.spec;
        let _ = writeln!(out, "num_speakers = {}", s.num_speakers);
        let _ = writeln!(
            out,
            "noise_snr_db = {}",
            s.noise_snr_db.map_or("none".to_string(), |v| v.to_string())
        );
        let _ = writeln!(out, "duration_s = {}", s.duration_s);
        let _ = writeln!(out, "frame_size = {}", s.frame_size);
        for split in Split::ALL {
            let r = self.range(split);
            let _ = writeln!(out, "{}_start = {}", split.name(), r.start);
            let _ = writeln!(out, "{}_count = {}", split.name(), r.count);
        }
        for split in Split::ALL {
            for i in 0..self.len(split) {
                let seeds = self.seeds(split, i).expect("index in range");
                let list: Vec<String> = seeds.iter().map(u64::to_string).collect();
                let _ = writeln!(out, "{} {} {}", split.name(), i, list.join(" "));
            }
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next().map(str::trim) != Some(MANIFEST_HEADER) {
            return Err(Error::Format("missing manifest header".into()));
        }
        let mut kv = std::collections::BTreeMap::new();
        let mut rows = Vec::new();
        for line in lines {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some((k, v)) = line.split_once('=') {
                kv.insert(k.trim().to_string(), v.trim().to_string());
            } else {
                rows.push(line.to_string());
            }
        }
        let get = |k: &str| -> Result<&String> {
            kv.get(k)
                .ok_or_else(|| Error::Format(format!("manifest lacks {k}")))
        };
        fn num<V: std::str::FromStr>(k: &str, v: &str) -> Result<V> {
            v.parse()
                .map_err(|_| Error::Format(format!("bad value {v:?} for {k}")))
        }
        let noise = match get("noise_snr_db")?.as_str() {
            "none" => None,
            v => Some(num::<f64>("noise_snr_db", v)?),
        };
        let spec = MixSpec {
            num_speakers: num("num_speakers", get("num_speakers")?)?,
            noise_snr_db: noise,
            duration_s: num("duration_s", get("duration_s")?)?,
            frame_size: num("frame_size", get("frame_size")?)?,
        };
        let range = |split: Split| -> Result<SplitRange> {
            let sk = format!("{}_start", split.name());
            let ck = format!("{}_count", split.name());
            Ok(SplitRange {
                start: num(&sk, get(&sk)?)?,
                count: num(&ck, get(&ck)?)?,
            })
        };
        let m = Self::with_ranges(
            spec,
            range(Split::Train)?,
            range(Split::Val)?,
            range(Split::Test)?,
        )?;
        for row in rows {
            let mut it = row.split_whitespace();
            let split: Split = it.next().unwrap_or_default().parse()?;
            let idx: usize = num("index", it.next().unwrap_or_default())?;
            let listed: Vec<u64> = it.map(|v| num("seed", v)).collect::<Result<_>>()?;
            if m.seeds(split, idx)? != listed {
                return Err(Error::Format(format!(
                    "row {row:?} disagrees with the seed ranges"
                )));
            }
        }
        Ok(m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses::sisnr_t;

    fn spec() -> MixSpec {
        MixSpec {
            num_speakers: 2,
            noise_snr_db: None,
            duration_s: 2.0,
            frame_size: 16,
        }
    }

    #[test]
    fn utterance_examples() {
        let a = synth_utterance(7, 2.0, 16).unwrap();
        assert_eq!(a, synth_utterance(7, 2.0, 16).unwrap());
        assert_eq!(a.audio.len(), 32000);
        assert_eq!(a.video.shape(), &[1, 16, 16, 50]);
        assert!(a.is_synchronized());
        assert!(synth_utterance(7, 0.05, 16).unwrap_err().is_input_error());
        let z = synth_with_envelope(7, vec![0.0; 10], 16).unwrap();
        assert!(z.audio.iter().all(|&v| v == 0.0));
        let closed = aperture_trace(&z.video);
        assert!(closed.iter().all(|&v| v == closed[0]));
        let open = aperture_trace(&synth_with_envelope(7, vec![1.0; 10], 16).unwrap().video);
        assert!(open[0] > 2.0 * closed[0]);
    }

    #[test]
    fn audio_and_lips_correlate() {
        for seed in 0..20 {
            let a = synth_utterance(seed, 2.0, 16).unwrap();
            let r = pearson(&frame_rms(&a.audio), &aperture_trace(&a.video));
            assert!(r > 0.9, "seed {seed}: {r}");
        }
    }

    #[test]
    fn mix_examples() {
        let a = synth_utterance(1, 0.4, 8).unwrap();
        let m = mix(&[a.audio.clone()], None, 0).unwrap();
        assert_eq!(m.mixture, m.sources[0]);
        assert!(m.noise.iter().all(|&v| v == 0.0));
        let loud: Vec<f64> = a.audio.iter().map(|v| v * 50.0).collect();
        let m = mix(&[loud.clone()], None, 0).unwrap();
        assert!(m.scale < 1.0);
        let peak = m.mixture.iter().fold(0.0f64, |p, v| p.max(v.abs()));
        assert!((peak - 0.99).abs() < 1e-12);
        assert!(mix(&[a.audio.clone(), a.audio[..10].to_vec()], None, 0)
            .unwrap_err()
            .is_input_error());
        let noisy = mix(&[a.audio.clone()], Some(10.0), 3).unwrap();
        let snr = 10.0 * (energy(&noisy.sources[0]) / energy(&noisy.noise)).log10();
        assert!((snr - 10.0).abs() < 1e-9);
    }

    #[test]
    fn mixture_linearity_before_normalization() {
        let a = synth_utterance(1, 0.4, 8).unwrap().audio;
        let b = synth_utterance(2, 0.4, 8).unwrap().audio;
        let m = mix(&[a.clone(), b.clone()], Some(5.0), 9).unwrap();
        let a2: Vec<f64> = a.iter().map(|v| 0.5 * v).collect();
        let b2: Vec<f64> = b.iter().map(|v| 0.5 * v).collect();
        let m2 = mix(&[a2, b2], Some(5.0), 9).unwrap();
        assert_eq!(m.scale, 1.0);
        for (x, y) in m.mixture.iter().zip(&m2.mixture) {
            assert!((0.5 * x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn equal_energy_mixtures_are_near_zero_db() {
        let man = Manifest::new(spec(), 100, 0, 0, 0).unwrap();
        let mut worst = 0.0f64;
        for i in 0..100 {
            let raw = man.sample(Split::Train, i).unwrap();
            let b = match_energy(&raw.interferers[0].audio, &raw.target.audio);
            let direct: Vec<f64> = raw
                .target
                .audio
                .iter()
                .zip(&b)
                .map(|(x, y)| x + y)
                .collect();
            let v = sisnr_t(&raw.target.audio, &direct).unwrap();
            assert!(v.abs() < 1.0, "{v}");
            let s = raw;
            let v = sisnr_t(&s.mix.sources[0], &s.mix.mixture).unwrap();
            worst = worst.max(v.abs());
        }
        assert!(worst < 1e-6, "{worst}");
    }

    #[test]
    fn manifest_examples() {
        let m = Manifest::new(spec(), 64, 16, 16, 1000).unwrap();
        let mut all: Vec<u64> = Vec::new();
        for s in Split::ALL {
            all.extend(m.split_seeds(s));
        }
        let n = all.len();
        all.sort();
        all.dedup();
        assert_eq!(all.len(), n);
        let text = m.to_text();
        assert_eq!(text.lines().filter(|l| l.starts_with("train ")).count(), 64);
        let back = Manifest::from_text(&text).unwrap();
        assert_eq!(back, m);
        assert_eq!(
            back.sample(Split::Val, 3).unwrap(),
            m.sample(Split::Val, 3).unwrap()
        );
        let r = SplitRange {
            start: 0,
            count: 10,
        };
        let o = SplitRange {
            start: 20,
            count: 4,
        };
        assert!(Manifest::with_ranges(
            spec(),
            r,
            o,
            SplitRange {
                start: 30,
                count: 1
            }
        )
        .is_ok());
        let clash = SplitRange {
            start: 19,
            count: 2,
        };
        assert!(matches!(
            Manifest::with_ranges(
                spec(),
                r,
                clash,
                SplitRange {
                    start: 40,
                    count: 1
                }
            ),
            Err(Error::Config(_))
        ));
        assert!(Manifest::from_text("nonsense").is_err());
        let tampered = text.replace("train 0 1000 1001", "train 0 1000 5");
        assert!(Manifest::from_text(&tampered).is_err());
    }
}
