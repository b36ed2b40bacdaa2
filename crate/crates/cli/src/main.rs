//! `tgcnn`: featurize, synthesize, train, evaluate, gradient-check and ablate.
//!
//! Exit codes: 0 success, 1 verification failure, 2 input or config error,
//! 3 dimension mismatch, 4 numeric failure, 5 corrupt model file.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use tgcnn::features::{
    compute_indices, load_csv, load_csv_unassigned, normalize, save_csv, synth, BandManifest, FeatureConfig,
    SynthTask,
};
use tgcnn::io::{ModelFile, RunConfig};
use tgcnn::model::TgcnnModel;
use tgcnn::train::{ablate, evaluate, split_and_normalize, train};
use tgcnn::verify::{gradient_suite, GRADCHECK_TOLERANCE};
use tgcnn::Error;

#[derive(Parser)]
#[command(name = "tgcnn", version, about = "Time-gated CNN for multivariate time-series classification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Append the eight vegetation-index channels to a dataset.
    Featurize {
        #[arg(long)]
        input: PathBuf,
        /// Band manifest: `name,column,wavelength_nm,role` lines.
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// Use the red-edge band in NDRE and RECI.
        #[arg(long)]
        corrected_indices: bool,
        #[arg(long, default_value_t = 0.5)]
        savi_l: f64,
    },
    /// Write a seeded synthetic dataset.
    Synth {
        #[arg(long)]
        task: String,
        #[arg(long)]
        n: usize,
        #[arg(long)]
        t: usize,
        #[arg(long)]
        c: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        output: PathBuf,
    },
    /// Train a model and write it with its per-epoch history.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        val: PathBuf,
        #[arg(long)]
        out_model: PathBuf,
        #[arg(long)]
        history: PathBuf,
    },
    /// Score a trained model on a dataset.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        report: PathBuf,
        #[arg(long, default_value_t = 0.5)]
        threshold: f64,
    },
    /// Finite-difference check of every layer and a small end-to-end model.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1e-5)]
        eps: f64,
    },
    /// Compare full, step-wise-only and channel-wise-only models on a synthetic task.
    Ablate {
        #[arg(long)]
        task: String,
        /// Number of seeds; seeds 1..=N are used.
        #[arg(long, default_value_t = 3)]
        seeds: u64,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        report: PathBuf,
        #[arg(long, default_value_t = 1000)]
        n: usize,
        #[arg(long, default_value_t = 12)]
        t: usize,
        #[arg(long, default_value_t = 6)]
        c: usize,
        /// Seed of the generated dataset.
        #[arg(long, default_value_t = 2024)]
        data_seed: u64,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Parse { .. } | Error::InvalidArgument(_) | Error::Io(_) => 2,
        Error::Shape(_) => 3,
        Error::NonFinite(_)
        | Error::DivisionByZero(_)
        | Error::Numeric(_)
        | Error::DanglingNode(_)
        | Error::NonScalarLoss(_) => 4,
        Error::CorruptModel(_) => 5,
    }
}

enum Outcome {
    Ok,
    VerificationFailed,
}

fn write(path: &Path, text: &str) -> tgcnn::Result<()> {
    Ok(std::fs::write(path, text)?)
}

fn run(command: Command) -> tgcnn::Result<Outcome> {
    match command {
        Command::Featurize {
            input,
            manifest,
            output,
            corrected_indices,
            savi_l,
        } => {
            let manifest = BandManifest::load(&manifest)?;
            let set = load_csv(&input, &manifest)?;
            let cfg = FeatureConfig {
                savi_l,
                corrected_red_edge: corrected_indices,
                ..FeatureConfig::default()
            };
            let out = compute_indices(&set, &cfg)?;
            save_csv(&out, &output)?;
            println!(
                "wrote {} samples x {} steps x {} channels to {}",
                out.samples(),
                out.steps(),
                out.channels(),
                output.display()
            );
        }
        Command::Synth {
            task,
            n,
            t,
            c,
            seed,
            output,
        } => {
            let set = synth(task.parse::<SynthTask>()?, n, t, c, seed)?;
            save_csv(&set, &output)?;
            println!("wrote {} rows to {}", n * t, output.display());
        }
        Command::Train {
            config,
            train: train_path,
            val,
            out_model,
            history,
        } => {
            let run_cfg = RunConfig::load(&config).map_err(|e| match e {
                Error::Io(io) => Error::Config(format!("{}: {io}", config.display())),
                other => other,
            })?;
            let train_raw = load_csv_unassigned(&train_path)?;
            let val_raw = load_csv_unassigned(&val)?;
            if (val_raw.steps(), val_raw.channels()) != (train_raw.steps(), train_raw.channels()) {
                return Err(Error::Shape(format!(
                    "validation data is [N, {}, {}], training data [N, {}, {}]",
                    val_raw.steps(),
                    val_raw.channels(),
                    train_raw.steps(),
                    train_raw.channels()
                )));
            }
            let model_cfg = run_cfg.model_config(train_raw.steps(), train_raw.channels())?;
            let (train_set, stats) = normalize(&train_raw, None)?;
            let (val_set, _) = normalize(&val_raw, Some(&stats))?;
            let mut model = TgcnnModel::<f64>::build(model_cfg)?;
            let hist = train(&mut model, &train_set, &val_set, &run_cfg.train)?;
            ModelFile::from_model(&model, Some(&stats))?.save(&out_model)?;
            write(&history, &hist.to_csv())?;
            match hist.last() {
                Some(r) => println!(
                    "trained {} epochs: train_loss={} val_loss={} val_f1={}",
                    r.epoch, r.train_loss, r.val_loss, r.val_f1
                ),
                None => println!("no epochs run"),
            }
        }
        Command::Eval {
            model,
            data,
            report,
            threshold,
        } => {
            let (model, stats) = ModelFile::load(&model)
                .map_err(|e| match e {
                    Error::Io(io) if io.kind() != std::io::ErrorKind::NotFound => Error::CorruptModel(io.to_string()),
                    other => other,
                })?
                .to_model()?;
            let raw = load_csv_unassigned(&data)?;
            let set = match &stats {
                Some(st) if st.channels() != raw.channels() => {
                    return Err(Error::Shape(format!(
                        "data has {} channels, the model expects {}",
                        raw.channels(),
                        st.channels()
                    )))
                }
                Some(st) => normalize(&raw, Some(st))?.0,
                None => raw,
            };
            let metrics = evaluate(&model, &set, threshold)?;
            write(&report, &metrics.to_text())?;
            print!("{}", metrics.to_text());
        }
        Command::Gradcheck { seed, eps } => {
            let checks = gradient_suite(seed, eps)?;
            let mut failed = Vec::new();
            for c in &checks {
                let status = if c.passed() { "ok" } else { "FAIL" };
                println!("{:<24} {:.3e} {status}", c.name, c.max_relative_error);
                if !c.passed() {
                    failed.push(c.name.as_str());
                }
            }
            if !failed.is_empty() {
                eprintln!(
                    "gradient check failed (tolerance {GRADCHECK_TOLERANCE:e}): {}",
                    failed.join(", ")
                );
                return Ok(Outcome::VerificationFailed);
            }
        }
        Command::Ablate {
            task,
            seeds,
            config,
            report,
            n,
            t,
            c,
            data_seed,
        } => {
            let task: SynthTask = task.parse()?;
            if seeds == 0 {
                return Err(Error::InvalidArgument("--seeds must be positive".into()));
            }
            let run_cfg = match &config {
                Some(p) => RunConfig::load(p)?,
                None => RunConfig::default(),
            };
            let t = run_cfg.time_steps.unwrap_or(t);
            let c = run_cfg.channels.unwrap_or(c);
            let base = run_cfg.model_config(t, c)?;
            let data = synth(task, n, t, c, data_seed)?;
            let (train_set, test_set, _) = split_and_normalize(&data, 0.8)?;
            let seed_list: Vec<u64> = (1..=seeds).collect();
            let result = ablate(&train_set, &test_set, &base, &run_cfg.train, &seed_list)?;
            write(&report, &result.to_text())?;
            print!("{}", result.to_text());
        }
    }
    Ok(Outcome::Ok)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(Outcome::Ok) => ExitCode::SUCCESS,
        Ok(Outcome::VerificationFailed) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
