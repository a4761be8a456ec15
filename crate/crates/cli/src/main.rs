//! `dolphin` command-line interface.

macro_rules! input_err {
    ($($t:tt)*) => { dolphin_core::Error::Input(format!($($t)*)) };
}

macro_rules! config_err {
    ($($t:tt)*) => { dolphin_core::Error::Config(format!($($t)*)) };
}

mod commands;
mod runconfig;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::{
    BenchArgs, EvalArgs, GenDataArgs, GradCheckArgs, HdaDemoArgs, PretrainArgs, SeparateArgs,
    TrainArgs,
};

#[derive(Debug, Parser)]
#[command(
    name = "dolphin",
    version,
    about = "Audio-visual target speech separation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Extract one speaker per target video from a mixture.
    Separate(SeparateArgs),
    /// Pretrain the video codec on the synthetic corpus, then train the separator.
    TrainToy(TrainArgs),
    /// Pretrain the video codec on the synthetic corpus.
    PretrainVideoToy(PretrainArgs),
    /// Parameter, MAC, and latency report.
    Bench(BenchArgs),
    /// Heat diffusion versus Gaussian smoothing on an impulse test signal.
    HdaDemo(HdaDemoArgs),
    /// Finite-difference gradient check of the whole model.
    GradCheck(GradCheckArgs),
    /// Write the synthetic corpus as WAV and video files.
    GenData(GenDataArgs),
    /// SI-SNRi and SDRi over a manifest of mixture, reference, and estimate files.
    Eval(EvalArgs),
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Separate(a) => commands::separate(&a),
        Command::TrainToy(a) => commands::train_toy(&a),
        Command::PretrainVideoToy(a) => commands::pretrain_video_toy(&a),
        Command::Bench(a) => commands::bench(&a),
        Command::HdaDemo(a) => commands::hda_demo(&a),
        Command::GradCheck(a) => commands::grad_check(&a),
        Command::GenData(a) => commands::gen_data(&a),
        Command::Eval(a) => commands::eval(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_input_error() { 1 } else { 2 })
        }
    }
}
