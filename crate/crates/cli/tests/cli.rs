use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use dolphin_core::config::ModelConfig;
use dolphin_core::io::save_weights;
use dolphin_core::pipeline::{efficiency_report, DolphinModel};
use dolphin_core::profiler::count_params;

const MICRO: &str = "\
# tiny corpus and model
preset = micro
data.n_train = 2
data.n_val = 1
data.n_test = 1
data.duration_s = 0.4
train.steps = 2
pretrain.steps = 2
pretrain.kmeans_restarts = 2
bench.seconds = 0.04
bench.runs = 1
bench.warmups = 0
";

fn dolphin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dolphin"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = dolphin(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn write_config(dir: &Path) -> String {
    let p = dir.join("micro.cfg");
    fs::write(&p, MICRO).unwrap();
    p.display().to_string()
}

fn s(p: &Path) -> String {
    p.display().to_string()
}

#[test]
fn unknown_flag_prints_usage_and_exits_one() {
    let out = dolphin(&["hda-demo", "--bogus", "1"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
    assert_eq!(dolphin(&["no-such-command"]).status.code(), Some(1));
    assert_eq!(dolphin(&["--help"]).status.code(), Some(0));
}

#[test]
fn input_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.cfg");
    fs::write(&cfg, "preset = micro\nseparator.chanels = 3\n").unwrap();
    let out = dolphin(&["bench", "--config", &s(&cfg)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("chanels"));
    let missing = dir.path().join("missing.csv");
    assert_eq!(
        dolphin(&["eval", "--manifest", &s(&missing)]).status.code(),
        Some(1)
    );
    let bad_demo = dolphin(&[
        "hda-demo",
        "--alpha",
        "3",
        "--out",
        &s(&dir.path().join("x.csv")),
    ]);
    assert_eq!(bad_demo.status.code(), Some(1));
}

#[test]
fn hda_demo_writes_four_columns_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
    let report = dir.path().join("report.txt");
    let args = ["hda-demo", "--T", "256", "--k", "1.2", "--sigma", "2"];
    let stdout = ok(&[&args[..], &["--out", &s(&a), "--report", &s(&report)]].concat());
    ok(&[&args[..], &["--out", &s(&b)]].concat());
    let csv = fs::read_to_string(&a).unwrap();
    assert_eq!(
        csv.lines().next().unwrap(),
        "position,input,heat_diffusion,gaussian"
    );
    assert_eq!(csv.lines().count(), 257);
    assert!(csv.lines().all(|l| l.split(',').count() == 4));
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    assert!(stdout.contains("impulse retention"));
    assert_eq!(fs::read_to_string(&report).unwrap(), stdout);
}

#[test]
fn eval_perfect_oracle_scores_above_40_db() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let data = dir.path().join("data");
    ok(&[
        "gen-data",
        "--config",
        &cfg,
        "--out",
        &s(&data),
        "--split",
        "test",
    ]);
    assert!(data.join("manifest.txt").exists());
    let index = fs::read_to_string(data.join("test.csv")).unwrap();
    let mut manifest = String::from("mixture,reference,estimate\n");
    for line in index.lines().skip(1) {
        let c: Vec<&str> = line.split(',').collect();
        manifest.push_str(&format!("{},{},{}\n", c[0], c[1], c[1]));
    }
    let mpath = data.join("oracle.csv");
    fs::write(&mpath, manifest).unwrap();
    let scores = data.join("scores.csv");
    ok(&["eval", "--manifest", &s(&mpath), "--out", &s(&scores)]);
    let text = fs::read_to_string(&scores).unwrap();
    let mean = text.lines().last().unwrap();
    let si: f64 = mean.split(',').nth(1).unwrap().parse().unwrap();
    assert!(mean.starts_with("mean,") && si >= 40.0, "{text}");
}

#[test]
fn bench_matches_profiler() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let csv = dir.path().join("bench.csv");
    let md = ok(&["bench", "--config", &cfg, "--out", &s(&csv)]);
    assert!(md.starts_with("| metric | value |"));
    let text = fs::read_to_string(&csv).unwrap();
    let get = |k: &str| -> String {
        text.lines()
            .find_map(|l| l.strip_prefix(&format!("{k},")).map(str::to_string))
            .unwrap()
    };
    let model = ModelConfig::micro();
    let params = count_params(&DolphinModel::new(&model).unwrap().init::<f32>(0).unwrap());
    let expected = efficiency_report(&model, 0.04, 0, 0).unwrap();
    assert_eq!(get("params_total"), params.total().to_string());
    assert_eq!(get("params_frozen"), params.frozen.to_string());
    assert_eq!(get("macs_total"), expected.macs.to_string());
}

#[test]
fn separate_writes_one_file_per_video() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let data = dir.path().join("data");
    ok(&[
        "gen-data",
        "--config",
        &cfg,
        "--out",
        &s(&data),
        "--split",
        "test",
    ]);
    let model = DolphinModel::new(&ModelConfig::micro()).unwrap();
    let weights = dir.path().join("w.dlph");
    save_weights(&model.init::<f32>(9).unwrap(), &weights).unwrap();
    let sample = data.join("test").join("0000");
    let videos = format!(
        "{},{}",
        s(&sample.join("video.bin")),
        s(&sample.join("interferer0.bin"))
    );
    let out = dir.path().join("sep");
    let args = [
        "separate",
        "--config",
        &cfg,
        "--mix",
        &s(&sample.join("mix.wav")),
        "--video",
        &videos,
        "--weights",
        &s(&weights),
        "--out",
        &s(&out),
    ];
    ok(&args);
    let mix_len = fs::metadata(sample.join("mix.wav")).unwrap().len();
    for i in 0..2 {
        let f = out.join(format!("speaker{i}.wav"));
        assert_eq!(fs::metadata(&f).unwrap().len(), mix_len);
    }
    let other = dir.path().join("other.dlph");
    let mut wrong = model.init::<f32>(9).unwrap();
    wrong
        .insert("extra.tensor", dolphin_core::Tensor::zeros(&[1]), true)
        .unwrap();
    save_weights(&wrong, &other).unwrap();
    let mut bad = args.to_vec();
    let other_s = s(&other);
    bad[8] = &other_s;
    let res = dolphin(&bad);
    assert_eq!(res.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&res.stderr).contains("extra.tensor"));
}

#[test]
fn train_and_pretrain_are_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    ok(&["train-toy", "--config", &cfg, "--out", &s(&a)]);
    for f in [
        "weights.dlph",
        "checkpoint.dlph",
        "trace.csv",
        "eval.csv",
        "lipcoder.dlph",
        "model.cfg",
    ] {
        assert!(a.join(f).exists(), "{f}");
    }
    let lip = dir.path().join("lip.dlph");
    let trace = dir.path().join("lip.csv");
    ok(&[
        "pretrain-video-toy",
        "--config",
        &cfg,
        "--out",
        &s(&lip),
        "--trace",
        &s(&trace),
    ]);
    assert_eq!(
        fs::read(&lip).unwrap(),
        fs::read(a.join("lipcoder.dlph")).unwrap()
    );
    assert_eq!(fs::read_to_string(&trace).unwrap().lines().count(), 3);
    ok(&[
        "train-toy",
        "--config",
        &cfg,
        "--out",
        &s(&b),
        "--lipcoder",
        &s(&lip),
    ]);
    assert_eq!(
        fs::read(a.join("weights.dlph")).unwrap(),
        fs::read(b.join("weights.dlph")).unwrap()
    );
    assert_eq!(
        fs::read(a.join("eval.csv")).unwrap(),
        fs::read(b.join("eval.csv")).unwrap()
    );
}

#[test]
fn grad_check_passes_on_micro_model() {
    let out = ok(&["grad-check", "--max-elements", "1"]);
    assert!(out.contains("max relative error"));
}
