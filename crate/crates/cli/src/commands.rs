//! Subcommand arguments and implementations.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::Args;
use dolphin_core::config::ModelConfig;
use dolphin_core::datagen::Split;
use dolphin_core::error::{Error, Result};
use dolphin_core::hda::{edge_demo, EdgeDemoConfig};
use dolphin_core::io::{
    load_weights, read_video, read_wav, save_weights, write_atomic, write_video, write_wav,
};
use dolphin_core::losses::{sdri, sisnri};
use dolphin_core::numerics::GradCheckOptions;
use dolphin_core::pipeline::{
    efficiency_report, mean_sisnri, model_grad_check, pretrain_toy_lipcoder, DolphinModel,
    PretrainReport, ToyExperiment, LIP_PREFIX,
};

use crate::runconfig::RunConfig;

fn write_text(path: &Path, text: &str) -> Result<()> {
    write_atomic(path, text.as_bytes())
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn sample_rate(cfg: &ModelConfig) -> u32 {
    cfg.audio.sample_rate as u32
}

#[derive(Debug, Args)]
pub struct SeparateArgs {
    /// Mixture WAV file.
    #[arg(long)]
    pub mix: PathBuf,
    /// Comma-separated target video tensor files, one per speaker.
    #[arg(long, value_delimiter = ',', required = true)]
    pub video: Vec<PathBuf>,
    /// Model weights (DLPH container).
    #[arg(long)]
    pub weights: PathBuf,
    /// Output directory for one WAV per target video.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

pub fn separate(a: &SeparateArgs) -> Result<()> {
    let cfg = RunConfig::load_or_default(a.config.as_deref())?;
    let model = DolphinModel::new(&cfg.model)?;
    let mut store = model.init::<f32>(0)?;
    load_weights(&mut store, &a.weights, true)?;
    let wav = read_wav(&a.mix, sample_rate(&cfg.model))?;
    let videos = a
        .video
        .iter()
        .map(|p| read_video::<f32>(p))
        .collect::<Result<Vec<_>>>()?;
    let estimates = model.separate_multi(&store, &wav.samples, &videos)?;
    create_dir(&a.out)?;
    for (i, est) in estimates.iter().enumerate() {
        let path = a.out.join(format!("speaker{i}.wav"));
        write_wav(&path, est, sample_rate(&cfg.model))?;
        println!("{}", path.display());
    }
    Ok(())
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory for weights, checkpoint, trace, and test scores.
    #[arg(long)]
    pub out: PathBuf,
    /// Reuse pretrained video codec weights instead of pretraining.
    #[arg(long)]
    pub lipcoder: Option<PathBuf>,
}

pub fn train_toy(a: &TrainArgs) -> Result<()> {
    let cfg = RunConfig::load_or_default(a.config.as_deref())?;
    create_dir(&a.out)?;
    write_text(&a.out.join("model.cfg"), &cfg.model_text())?;
    let exp = match &a.lipcoder {
        Some(path) => {
            let model = DolphinModel::new(&cfg.model)?;
            let mut lip = model.init::<f32>(0)?.subset(&format!("{LIP_PREFIX}."));
            load_weights(&mut lip, path, true)?;
            ToyExperiment::with_lipcoder(
                &cfg.model,
                &cfg.data,
                lip,
                PretrainReport { events: Vec::new() },
            )?
        }
        None => {
            let exp = ToyExperiment::prepare(&cfg.model, &cfg.data, &cfg.pretrain)?;
            save_weights(&exp.lip_store, &a.out.join("lipcoder.dlph"))?;
            exp
        }
    };
    let mut train = cfg.train.clone();
    train.checkpoint = Some(a.out.join("checkpoint.dlph"));
    train.trace = Some(a.out.join("trace.csv"));
    let run = exp.run(&cfg.model, cfg.init_seed, &train)?;
    save_weights(&run.store, &a.out.join("weights.dlph"))?;
    write_text(&a.out.join("trace.csv"), &run.report.to_csv())?;
    let mut csv = String::from("seeds,sisnri,sdri\n");
    for r in &run.rows {
        let seeds: Vec<String> = r.seeds.iter().map(|s| s.to_string()).collect();
        let _ = writeln!(csv, "{},{:.4},{:.4}", seeds.join(" "), r.sisnri, r.sdri);
    }
    write_text(&a.out.join("eval.csv"), &csv)?;
    println!(
        "steps {} epochs {} mean test SI-SNRi {:.3} dB",
        run.report.trace.len(),
        run.report.epochs,
        mean_sisnri(&run.rows)
    );
    Ok(())
}

#[derive(Debug, Args)]
pub struct PretrainArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output weights file holding only the video codec.
    #[arg(long)]
    pub out: PathBuf,
    /// Per-step loss CSV.
    #[arg(long)]
    pub trace: Option<PathBuf>,
}

pub fn pretrain_video_toy(a: &PretrainArgs) -> Result<()> {
    let cfg = RunConfig::load_or_default(a.config.as_deref())?;
    let (lip, report) = pretrain_toy_lipcoder(&cfg.model, &cfg.data, &cfg.pretrain)?;
    save_weights(&lip, &a.out)?;
    let losses = report.losses();
    if let Some(path) = &a.trace {
        let mut csv = String::from("step,loss\n");
        for (i, l) in losses.iter().enumerate() {
            let _ = writeln!(csv, "{i},{l:.6}");
        }
        write_text(path, &csv)?;
    }
    if let (Some(first), Some(last)) = (losses.first(), losses.last()) {
        println!("steps {} loss {first:.5} -> {last:.5}", losses.len());
    }
    Ok(())
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// CSV report path; the Markdown table is printed either way.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn bench(a: &BenchArgs) -> Result<()> {
    let cfg = RunConfig::load_or_default(a.config.as_deref())?;
    let b = &cfg.bench;
    let report = efficiency_report(&cfg.model, b.seconds, b.runs, b.warmups)?;
    if let Some(path) = &a.out {
        write_text(path, &report.to_csv())?;
    }
    print!("{}", report.to_markdown());
    Ok(())
}

#[derive(Debug, Args)]
pub struct HdaDemoArgs {
    /// Signal length.
    #[arg(long = "T", default_value_t = 256)]
    pub length: usize,
    /// Diffusion time.
    #[arg(long, default_value_t = 1.2)]
    pub k: f64,
    /// Gaussian standard deviation in samples.
    #[arg(long, default_value_t = 2.0)]
    pub sigma: f64,
    /// Weight of the diffused signal against the input.
    #[arg(long, default_value_t = 1.0)]
    pub alpha: f64,
    #[arg(long, default_value_t = 0.1)]
    pub noise: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// CSV with columns position, input, heat_diffusion, gaussian.
    #[arg(long)]
    pub out: PathBuf,
    /// Text file for the retention summary.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

pub fn hda_demo(a: &HdaDemoArgs) -> Result<()> {
    let demo = edge_demo(&EdgeDemoConfig {
        length: a.length,
        k: a.k,
        sigma: a.sigma,
        alpha: a.alpha,
        noise_std: a.noise,
        seed: a.seed,
    })?;
    write_text(&a.out, &demo.to_csv())?;
    let summary = demo.summary();
    if let Some(path) = &a.report {
        write_text(path, &summary)?;
    }
    print!("{summary}");
    Ok(())
}

#[derive(Debug, Args)]
pub struct GradCheckArgs {
    /// Model configuration; the micro preset when absent.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Video frames of input.
    #[arg(long, default_value_t = 1)]
    pub frames: usize,
    /// Elements sampled per parameter tensor.
    #[arg(long, default_value_t = 4)]
    pub max_elements: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub tolerance: f64,
}

pub fn grad_check(a: &GradCheckArgs) -> Result<()> {
    let model = match &a.config {
        Some(p) => RunConfig::load(p)?.model,
        None => ModelConfig::micro(),
    };
    let opts = GradCheckOptions {
        tolerance: a.tolerance,
        max_elements: a.max_elements,
        seed: a.seed,
        ..GradCheckOptions::default()
    };
    let report = model_grad_check(&model, a.seed, a.frames, opts)?;
    for (name, err) in &report.per_parameter_errors {
        println!("{name},{err:.3e}");
    }
    println!(
        "max relative error {:.3e} over {} tensors (tolerance {:.0e})",
        report.max_relative_error,
        report.per_parameter_errors.len(),
        report.tolerance
    );
    if report.passed() {
        Ok(())
    } else {
        Err(Error::Check(format!(
            "{} parameter tensors exceed tolerance",
            report.failures().len()
        )))
    }
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Splits to write; all when absent.
    #[arg(long, value_delimiter = ',')]
    pub split: Vec<Split>,
}

pub fn gen_data(a: &GenDataArgs) -> Result<()> {
    let cfg = RunConfig::load_or_default(a.config.as_deref())?;
    let manifest = ToyExperiment::manifest(&cfg.model, &cfg.data)?;
    create_dir(&a.out)?;
    write_text(&a.out.join("manifest.txt"), &manifest.to_text())?;
    let splits: Vec<Split> = if a.split.is_empty() {
        Split::ALL.to_vec()
    } else {
        a.split.clone()
    };
    let rate = sample_rate(&cfg.model);
    let f32s = |x: &[f64]| x.iter().map(|&v| v as f32).collect::<Vec<f32>>();
    for split in splits {
        let mut index = String::from("mixture,reference,video\n");
        for i in 0..manifest.len(split) {
            let s = manifest.sample(split, i)?;
            let rel = PathBuf::from(split.name()).join(format!("{i:04}"));
            let dir = a.out.join(&rel);
            create_dir(&dir)?;
            write_wav(&dir.join("mix.wav"), &f32s(&s.mix.mixture), rate)?;
            write_wav(&dir.join("target.wav"), &f32s(&s.mix.sources[0]), rate)?;
            write_video(&dir.join("video.bin"), &s.target.video.cast::<f32>())?;
            for (j, (src, other)) in s.mix.sources[1..].iter().zip(&s.interferers).enumerate() {
                write_wav(&dir.join(format!("interferer{j}.wav")), &f32s(src), rate)?;
                write_video(
                    &dir.join(format!("interferer{j}.bin")),
                    &other.video.cast::<f32>(),
                )?;
            }
            let p = |f: &str| rel.join(f).display().to_string();
            let _ = writeln!(
                index,
                "{},{},{}",
                p("mix.wav"),
                p("target.wav"),
                p("video.bin")
            );
        }
        write_text(&a.out.join(format!("{}.csv", split.name())), &index)?;
    }
    println!("wrote corpus to {}", a.out.display());
    Ok(())
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// CSV with `mixture,reference,estimate` WAV paths, relative to its directory.
    #[arg(long)]
    pub manifest: PathBuf,
    /// Per-row score CSV.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = 16000)]
    pub sample_rate: u32,
}

/// `(mixture, reference, estimate)` paths from an evaluation manifest.
pub fn parse_eval_manifest(text: &str, base: &Path) -> Result<Vec<[PathBuf; 3]>> {
    let mut rows = Vec::new();
    for (no, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() || (no == 0 && line.starts_with("mixture")) {
            continue;
        }
        let cols: Vec<&str> = line.split(',').map(str::trim).collect();
        if cols.len() != 3 {
            return Err(input_err!(
                "manifest line {}: expected 3 columns, found {}",
                no + 1,
                cols.len()
            ));
        }
        rows.push([base.join(cols[0]), base.join(cols[1]), base.join(cols[2])]);
    }
    if rows.is_empty() {
        return Err(input_err!("manifest has no rows"));
    }
    Ok(rows)
}

pub fn eval(a: &EvalArgs) -> Result<()> {
    let text = std::fs::read_to_string(&a.manifest).map_err(|e| Error::io(&a.manifest, e))?;
    let base = a.manifest.parent().unwrap_or(Path::new("."));
    let rows = parse_eval_manifest(&text, base)?;
    let mut csv = String::from("mixture,sisnri,sdri\n");
    let (mut si_sum, mut sd_sum) = (0.0, 0.0);
    for [mix, reference, estimate] in &rows {
        let load = |p: &Path| -> Result<Vec<f64>> {
            Ok(read_wav(p, a.sample_rate)?
                .samples
                .iter()
                .map(|&v| v as f64)
                .collect())
        };
        let (m, r, e) = (load(mix)?, load(reference)?, load(estimate)?);
        if m.len() != r.len() || e.len() != r.len() {
            return Err(input_err!(
                "length mismatch for {}: mixture {}, reference {}, estimate {}",
                mix.display(),
                m.len(),
                r.len(),
                e.len()
            ));
        }
        let (si, sd) = (sisnri(&r, &e, &m)?, sdri(&r, &e, &m)?);
        si_sum += si;
        sd_sum += sd;
        let _ = writeln!(csv, "{},{si:.4},{sd:.4}", mix.display());
    }
    let n = rows.len() as f64;
    let _ = writeln!(csv, "mean,{:.4},{:.4}", si_sum / n, sd_sum / n);
    if let Some(path) = &a.out {
        write_text(path, &csv)?;
    }
    print!("{csv}");
    Ok(())
}
