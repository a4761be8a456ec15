//! Shared fixtures for the integration tests.

#![allow(dead_code)]

use dolphin_core::attention::{Csa, Ffn, GaBlock, Mhsa};
use dolphin_core::audiocodec::AudioCodec;
use dolphin_core::avf::Avf;
use dolphin_core::config::ModelConfig;
use dolphin_core::gla::{GlaBlock, LaBlock};
use dolphin_core::graph::Var;
use dolphin_core::hda::HdaLayer;
use dolphin_core::layers::{geglu, glu, Conv1d, Conv3d, ConvTranspose1d, LayerNorm, RmsNorm};
use dolphin_core::lipcoder::{pretrain_losses, vq_quantize, Lipcoder, PretrainWeights, ToyTeacher};
use dolphin_core::losses::{sisnr_f_graph, sisnr_t_graph, total_loss, LossConfig};
use dolphin_core::numerics::{
    grad_check, Conv3dSpec, ConvSpec, GradCheckOptions, GradReport, Interp,
};
use dolphin_core::pipeline::model_grad_check;
use dolphin_core::separator::{Injection, Separator};
use dolphin_core::{Init, ParamStore, Result, Session, Tensor};

pub const LAYER_TOL: f64 = 1e-4;
pub const MODEL_TOL: f64 = 1e-3;

const INPUT: &str = "input";

fn rand(shape: &[usize], seed: u64) -> Tensor<f64> {
    Init::new(seed).uniform(shape, 1)
}

/// Projects the output onto a fixed random direction so every element
/// contributes with a distinct weight.
fn readout(s: &Session<f64>, y: Var) -> Result<Var> {
    let r = s.constant(rand(&s.shape(y), 777));
    Ok(s.sum_all(s.mul(y, r)?))
}

fn opts() -> GradCheckOptions {
    GradCheckOptions::default()
        .tolerance(LAYER_TOL)
        .max_elements(6)
}

/// Registers `x` as a trainable tensor named `input`, so its gradient is
/// checked alongside the layer parameters.
fn with_input(mut store: ParamStore<f64>, x: Tensor<f64>) -> ParamStore<f64> {
    store.insert(INPUT, x, true).unwrap();
    store
}

fn check<F>(name: &str, store: &ParamStore<f64>, f: F) -> (String, GradReport)
where
    F: Fn(&Session<f64>) -> Result<Var>,
{
    let report = grad_check(store, |s| readout(s, f(s)?), opts()).unwrap();
    (name.to_string(), report)
}

fn layer_store(
    init: impl FnOnce(&mut ParamStore<f64>, &mut Init) -> Result<()>,
) -> ParamStore<f64> {
    let mut store = ParamStore::new();
    init(&mut store, &mut Init::new(11)).unwrap();
    store
}

fn sep_cfg() -> dolphin_core::config::SeparatorConfig {
    ModelConfig::micro().separator
}

/// Finite-difference checks for every layer family, in 64-bit.
pub fn layer_suite() -> Vec<(String, GradReport)> {
    let mut out = Vec::new();
    let x16 = rand(&[4, 16], 1);

    let conv = Conv1d::new("c", ConvSpec::new(4, 3, 3).stride(2).padding(1, 1));
    let st = with_input(layer_store(|s, i| conv.init(s, i)), x16.clone());
    out.push(check("conv1d strided", &st, |s| {
        conv.forward(s, s.param(INPUT)?)
    }));

    let dil = Conv1d::new(
        "c",
        ConvSpec::new(4, 4, 3).dilation(2).groups(2).padding(2, 2),
    );
    let st = with_input(layer_store(|s, i| dil.init(s, i)), x16.clone());
    out.push(check("conv1d grouped dilated", &st, |s| {
        dil.forward(s, s.param(INPUT)?)
    }));

    let dw = Conv1d::depthwise("c", 4, 5);
    let st = with_input(layer_store(|s, i| dw.init(s, i)), x16.clone());
    out.push(check("conv1d depthwise", &st, |s| {
        dw.forward(s, s.param(INPUT)?)
    }));

    let tr = ConvTranspose1d::new("c", ConvSpec::new(4, 2, 4).stride(2).padding(1, 1));
    let st = with_input(layer_store(|s, i| tr.init(s, i)), x16.clone());
    out.push(check("conv transpose 1d", &st, |s| {
        tr.forward(s, s.param(INPUT)?)
    }));

    let c3 = Conv3d::new(
        "c",
        Conv3dSpec {
            in_channels: 2,
            out_channels: 3,
            kernel: [3, 3, 3],
            stride: [2, 2, 1],
            padding: [1, 1, 1],
        },
    );
    let st = with_input(layer_store(|s, i| c3.init(s, i)), rand(&[2, 4, 4, 3], 2));
    out.push(check("conv3d", &st, |s| c3.forward(s, s.param(INPUT)?)));

    let ln = LayerNorm::new("n", 4);
    let mut st = with_input(layer_store(|s, _| ln.init(s)), x16.clone());
    for n in ["n.gamma", "n.beta"] {
        if st.contains(n) {
            let v = rand(st.value(n).unwrap().shape(), 3);
            st.set(n, v).unwrap();
        }
    }
    out.push(check("layer norm", &st, |s| ln.forward(s, s.param(INPUT)?)));

    let rms = RmsNorm::new("n", 4);
    let st = with_input(layer_store(|s, _| rms.init(s)), x16.clone());
    out.push(check("rms norm", &st, |s| rms.forward(s, s.param(INPUT)?)));

    let st = with_input(ParamStore::new(), x16.clone());
    out.push(check("glu", &st, |s| glu(s, s.param(INPUT)?)));
    out.push(check("geglu", &st, |s| geglu(s, s.param(INPUT)?)));

    let hda = HdaLayer::new("h", 4, 0.3);
    let st = with_input(layer_store(|s, i| hda.init(s, i)), x16.clone());
    out.push(check("hda layer", &st, |s| hda.forward(s, s.param(INPUT)?)));

    let mhsa = Mhsa::new("m", 4, 2, 3);
    let st = with_input(layer_store(|s, i| mhsa.init(s, i)), rand(&[4, 8], 4));
    out.push(check("mhsa", &st, |s| mhsa.forward(s, s.param(INPUT)?)));

    let csa = Csa::new("a", 4, 2, 3, 2);
    let st = with_input(layer_store(|s, i| csa.init(s, i)), x16.clone());
    out.push(check("csa", &st, |s| csa.forward(s, s.param(INPUT)?)));

    let ffn = Ffn::new("f", 4, 6);
    let st = with_input(layer_store(|s, i| ffn.init(s, i)), x16.clone());
    out.push(check("ffn", &st, |s| ffn.forward(s, s.param(INPUT)?)));

    let ga = GaBlock::new("g", 4, 2, 3, 6, 1);
    let st = with_input(layer_store(|s, i| ga.init(s, i)), x16.clone());
    out.push(check("ga block", &st, |s| ga.forward(s, s.param(INPUT)?)));

    let mut cfg = sep_cfg();
    cfg.channels = 4;
    let la = LaBlock::new("l", &cfg);
    let st = with_input(layer_store(|s, i| la.init(s, i)), x16.clone());
    out.push(check("la block", &st, |s| la.forward(s, s.param(INPUT)?)));

    let gla = GlaBlock::new("b", &cfg, 1);
    let st = with_input(layer_store(|s, i| gla.init(s, i)), x16.clone());
    out.push(check("gla block", &st, |s| gla.forward(s, s.param(INPUT)?)));

    let inj = Injection::new("t", 4, Interp::Nearest);
    let mut st = with_input(layer_store(|s, i| inj.init(s, i)), x16.clone());
    st.insert("global", rand(&[4, 4], 5), true).unwrap();
    out.push(check("tda injection", &st, |s| {
        inj.forward(s, s.param(INPUT)?, s.param("global")?)
    }));

    let sep = Separator::new("sep", &cfg);
    let mut st = with_input(layer_store(|s, i| sep.init(s, i)), x16.clone());
    st.insert("mix", rand(&[4, 16], 6), true).unwrap();
    st.insert("d3", rand(&[4, 2], 7), true).unwrap();
    out.push(check("output head", &st, |s| {
        sep.output_head(s, s.param(INPUT)?, s.param("mix")?)
    }));
    out.push(check("aux head", &st, |s| {
        sep.aux_head(s, s.param("d3")?, s.param("mix")?)
    }));
    let mut mask_cfg = cfg.clone();
    mask_cfg.mask_mode = true;
    let masked = Separator::new("sep", &mask_cfg);
    out.push(check("output head mask", &st, |s| {
        masked.output_head(s, s.param(INPUT)?, s.param("mix")?)
    }));

    let model_cfg = ModelConfig::micro();
    let avf = Avf::new("avf", &model_cfg);
    let dv = avf.token_dim;
    let na = model_cfg.audio.channels;
    let mut st = with_input(layer_store(|s, i| avf.init(s, i)), rand(&[na, 16], 8));
    st.insert("vr", rand(&[dv, 2], 9), true).unwrap();
    st.insert("vs", rand(&[dv, 2], 10), true).unwrap();
    out.push(check("avf", &st, |s| {
        avf.forward(s, s.param("vr")?, s.param("vs")?, s.param(INPUT)?)
    }));

    let codec = AudioCodec::new("audio", &model_cfg.audio);
    let st = with_input(layer_store(|s, i| codec.init(s, i)), rand(&[1, 64], 12));
    out.push(check("audio codec", &st, |s| {
        let f = codec.encode(s, s.param(INPUT)?)?;
        codec.decode(s, f, Some(64))
    }));

    let mut st = ParamStore::new();
    st.insert("codebook", rand(&[6, 3], 14), true).unwrap();
    let z = rand(&[3, 5], 13);
    out.push(check("vq codebook rows", &st, |s| {
        Ok(vq_quantize(s, s.constant(z.clone()), s.param("codebook")?, 0.0, 0.25)?.codes)
    }));

    out.push(lipcoder_check());
    out.extend(loss_checks());
    out
}

fn lipcoder_check() -> (String, GradReport) {
    let cfg = ModelConfig::micro().lipcoder;
    let lip = Lipcoder::new("lip", &cfg);
    let teacher = ToyTeacher::new("teacher", cfg.teacher_dim);
    let mut st = layer_store(|s, i| lip.init(s, i));
    let mut tstore = ParamStore::<f64>::new();
    teacher.init(&mut tstore, 3).unwrap();
    let f = cfg.frame_size;
    let video = rand(&[1, f, f, 2], 16).map(|v| v.abs());
    let target = {
        let s = Session::new(&tstore, dolphin_core::Mode::Inference);
        let y = teacher.forward(&s, s.constant(video.clone())).unwrap();
        (*s.value(y)).clone()
    };
    st.set_trainable("lip.", true);
    let report = grad_check(
        &st,
        |s| {
            let v = s.constant(video.clone());
            let z_sem = lip.sem.forward(s, v)?;
            let sh = s.shape(z_sem);
            let cb = s.param(&lip.codebook_name())?;
            let vq = vq_quantize(s, lip.sem_vectors(s, z_sem)?, cb, 0.0, cfg.beta)?;
            let tok_sem = lip.sem_token.forward(s, s.reshape(vq.codes, &sh)?)?;
            let z_rec = lip.rec.as_ref().unwrap().forward(s, v)?;
            let tok_rec = lip.rec_token.as_ref().unwrap().forward(s, z_rec)?;
            let rec = lip.decode(s, s.add(tok_rec, tok_sem)?)?;
            let dist = lip.distill(s, z_sem)?;
            let t = s.constant(target.clone());
            let l = pretrain_losses(s, v, rec, dist, t, vq.commit, PretrainWeights::default())?;
            s.add(l.distill, l.recon)
        },
        GradCheckOptions {
            step: 2e-6,
            ..GradCheckOptions::default()
                .tolerance(LAYER_TOL)
                .max_elements(2)
        },
    )
    .unwrap();
    (
        "video codec, straight-through path detached".to_string(),
        report,
    )
}

fn loss_checks() -> Vec<(String, GradReport)> {
    let cfg = LossConfig::default();
    let mut st = ParamStore::new();
    st.insert("est", rand(&[1, 1024], 20), true).unwrap();
    st.insert("aux", rand(&[1, 1024], 21), true).unwrap();
    let target = rand(&[1, 1024], 22);
    let o = GradCheckOptions::default()
        .tolerance(LAYER_TOL)
        .max_elements(12);
    let run = |name: &str, f: &dyn Fn(&Session<f64>) -> Result<Var>| {
        (name.to_string(), grad_check(&st, f, o).unwrap())
    };
    vec![
        run("sisnr time", &|s| {
            sisnr_t_graph(s, s.constant(target.clone()), s.param("est")?, &cfg)
        }),
        run("sisnr frequency", &|s| {
            sisnr_f_graph(s, s.constant(target.clone()), s.param("est")?, &cfg)
        }),
        run("total loss", &|s| {
            total_loss(
                s,
                s.constant(target.clone()),
                s.param("est")?,
                Some(s.param("aux")?),
                0.32,
                &cfg,
            )
        }),
    ]
}

/// Largest deviation of the quantizer's stop-gradient rules from their
/// closed forms: the straight-through output passes the upstream gradient
/// to `z` unchanged, and the commitment term sends `2β(z − e)/M` to `z`
/// and `2(e − z)/M` to the selected codebook row.
pub fn straight_through_error() -> f64 {
    const BETA: f64 = 0.25;
    let (d, m, k) = (3, 5, 6);
    let store = ParamStore::<f64>::new();
    let s = Session::new(&store, dolphin_core::Mode::Train);
    let zt = rand(&[d, m], 13);
    let cbt = rand(&[k, d], 14);
    let z = s.leaf(zt.clone(), true);
    let cb = s.leaf(cbt.clone(), true);
    let w = rand(&[d, m], 15);
    let v = vq_quantize(&s, z, cb, 0.0, BETA).unwrap();
    let l = s.sum_all(s.mul(v.quantized, s.constant(w.clone())).unwrap());
    let g = s.backward(l).unwrap();
    let mut err = g.get(z).unwrap().max_abs_diff(&w);
    let g = s.backward(v.commit).unwrap();
    let (gz, gc) = (g.get(z).unwrap().data(), g.get(cb).unwrap().data());
    let mut want_c = vec![0.0; k * d];
    for (j, &i) in v.indices.iter().enumerate() {
        for c in 0..d {
            let diff = zt.data()[c * m + j] - cbt.data()[i * d + c];
            err = err.max((gz[c * m + j] - 2.0 * BETA * diff / m as f64).abs());
            want_c[i * d + c] -= 2.0 * diff / m as f64;
        }
    }
    gc.iter()
        .zip(&want_c)
        .fold(err, |e, (a, b)| e.max((a - b).abs()))
}

/// Whole micro model from raw video to the combined loss.
pub fn model_check() -> GradReport {
    model_grad_check(
        &ModelConfig::micro(),
        0,
        1,
        GradCheckOptions::default()
            .tolerance(MODEL_TOL)
            .max_elements(2),
    )
    .unwrap()
}

pub const GOLDEN_TOL: f64 = 1e-5;

fn golden_dir() -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests")
        .join("golden")
}

/// Reference computations replayed at either precision. Inputs and
/// parameters come from fixed seeds, drawn in 64-bit and rounded.
pub fn golden_cases<T: dolphin_core::Scalar>() -> Vec<(&'static str, Vec<f64>)> {
    let to64 = |t: &Tensor<T>| t.data().iter().map(|v| v.f64()).collect::<Vec<_>>();
    let mut out = Vec::new();

    let x: Tensor<T> = Init::new(100).uniform(&[32], 1);
    let y = dolphin_core::numerics::dct::dct2(x.data(), 32);
    out.push(("dct2_t32", y.iter().map(|v| v.f64()).collect()));

    let run = |store: &ParamStore<T>, f: &dyn Fn(&Session<T>) -> Result<Var>| -> Vec<f64> {
        let s = Session::new(store, dolphin_core::Mode::Inference);
        let y = f(&s).unwrap();
        to64(&s.value(y))
    };

    let hda = HdaLayer::new("h", 8, 0.3);
    let mut st = ParamStore::new();
    hda.init(&mut st, &mut Init::new(101)).unwrap();
    let x: Tensor<T> = Init::new(102).uniform(&[8, 32], 1);
    out.push((
        "hda_c8_t32",
        run(&st, &|s| hda.forward(s, s.constant(x.clone()))),
    ));

    let ga = GaBlock::new("g", 8, 2, 4, 16, 1);
    let mut st = ParamStore::new();
    ga.init(&mut st, &mut Init::new(103)).unwrap();
    let x: Tensor<T> = Init::new(104).uniform(&[8, 16], 1);
    out.push((
        "ga_c8_t16",
        run(&st, &|s| ga.forward(s, s.constant(x.clone()))),
    ));

    let cfg = ModelConfig::micro();
    let model = dolphin_core::pipeline::DolphinModel::new(&cfg).unwrap();
    let store = model.init::<T>(105).unwrap();
    let len = cfg.length_quantum();
    let frames = len / cfg.samples_per_frame();
    let f = cfg.lipcoder.frame_size;
    let wave: Tensor<T> = Init::new(106).uniform(&[len], 1);
    let video: Tensor<T> = Init::new(107)
        .uniform::<T>(&[1, f, f, frames], 1)
        .map(|v| v.abs());
    let (est, _) = model.forward(&store, wave.data(), &video).unwrap();
    out.push(("micro_model", est.iter().map(|v| v.f64()).collect()));
    out
}

pub fn write_golden() {
    std::fs::create_dir_all(golden_dir()).unwrap();
    for (name, values) in golden_cases::<f64>() {
        let text: String = values.iter().map(|v| format!("{v:e}\n")).collect();
        std::fs::write(golden_dir().join(format!("{name}.txt")), text).unwrap();
    }
}

/// Largest deviation of the 32-bit replay from the stored 64-bit values,
/// relative to `max(1, |reference|)`.
pub fn golden_error() -> f64 {
    let mut worst = 0.0f64;
    for (name, values) in golden_cases::<f32>() {
        let text = std::fs::read_to_string(golden_dir().join(format!("{name}.txt"))).unwrap();
        let want: Vec<f64> = text.lines().map(|l| l.parse().unwrap()).collect();
        assert_eq!(want.len(), values.len(), "{name}");
        for (a, b) in values.iter().zip(&want) {
            worst = worst.max((a - b).abs() / b.abs().max(1.0));
        }
    }
    worst
}
