//! `dagf` — train, run and check deep atrous guided filter models.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::thread;

use clap::{Parser, Subcommand, ValueEnum};
use dagf_core::checkpoint::Checkpoint;
use dagf_core::config::RunConfig;
use dagf_core::data::{
    denormalize, images_by_stem, load_image, normalize, pair_stems, save_image, synth_pairs, DegradeProfile,
    PairedDataset,
};
use dagf_core::metrics::{psnr, ssim, SsimConfig};
use dagf_core::simulate::{simulate_pairs, simulate_train, SimulateConfig};
use dagf_core::train::{fmt_metric, model_from_checkpoint, Trainer};
use dagf_core::verify::{corrupted_gradient_detected, run_scope, Scope};
use dagf_core::{Error, Tensor};
use log::{info, warn};
use serde_json::json;

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_VERIFY: u8 = 3;

#[derive(Parser)]
#[command(name = "dagf", version, about = "Deep atrous guided filter image restoration")]
struct Cli {
    /// Seed overriding the configured one.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model from a JSON run configuration.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Continue from a checkpoint written by a previous run.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Restore every image of a directory.
    Infer {
        checkpoint: PathBuf,
        input_dir: PathBuf,
        output_dir: PathBuf,
        /// Average over the eight flips/transposes of each input.
        #[arg(long)]
        ensemble: bool,
    },
    /// Per-image PSNR/SSIM of predictions against ground truth, as CSV.
    Eval { pred_dir: PathBuf, gt_dir: PathBuf },
    /// Finite-difference gradient checks.
    Gradcheck {
        #[arg(long, value_enum, default_value_t = ScopeArg::All)]
        scope: ScopeArg,
    },
    /// Train a measurement simulator and write simulated training pairs.
    Simulate {
        clean_dir: PathBuf,
        measured_dir: PathBuf,
        out_dir: PathBuf,
        #[arg(long, default_value_t = 0.5)]
        gamma: f64,
        #[arg(long, default_value_t = 200)]
        steps: usize,
    },
    /// Write a synthetic paired dataset (`degraded/`, `clean/`).
    Synth {
        out_dir: PathBuf,
        #[arg(long, default_value_t = 4)]
        count: usize,
        #[arg(long, default_value_t = 64)]
        height: usize,
        #[arg(long, default_value_t = 128)]
        width: usize,
        #[arg(long, value_enum, default_value_t = ProfileArg::Toled)]
        profile: ProfileArg,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ScopeArg {
    Ops,
    Blocks,
    E2e,
    All,
}

#[derive(Clone, Copy, ValueEnum)]
enum ProfileArg {
    Toled,
    Poled,
}

/// A failure and the exit code it maps to.
struct Failure {
    code: u8,
    msg: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Config(_) | Error::ConfigField { .. } => EXIT_USAGE,
            _ => EXIT_DATA,
        };
        Failure { code, msg: e.to_string() }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Error::from(e).into()
    }
}

fn data_err(msg: impl Into<String>) -> Failure {
    Failure {
        code: EXIT_DATA,
        msg: msg.into(),
    }
}

type CmdResult = Result<(), Failure>;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = match cli.command {
        Command::Train { config, resume } => train(&config, resume.as_deref(), cli.seed),
        Command::Infer {
            checkpoint,
            input_dir,
            output_dir,
            ensemble,
        } => infer(&checkpoint, &input_dir, &output_dir, ensemble),
        Command::Eval { pred_dir, gt_dir } => eval(&pred_dir, &gt_dir),
        Command::Gradcheck { scope } => gradcheck(scope, cli.seed.unwrap_or(0)),
        Command::Simulate {
            clean_dir,
            measured_dir,
            out_dir,
            gamma,
            steps,
        } => simulate(&clean_dir, &measured_dir, &out_dir, gamma, steps, cli.seed.unwrap_or(0)),
        Command::Synth {
            out_dir,
            count,
            height,
            width,
            profile,
        } => synth(&out_dir, count, height, width, profile, cli.seed.unwrap_or(0)),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.msg);
            ExitCode::from(f.code)
        }
    }
}

/// Worker count from `DAGF_THREADS`; 1 when unset.
fn threads() -> Result<usize, Failure> {
    match std::env::var("DAGF_THREADS") {
        Err(_) => Ok(1),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(n),
            _ => Err(Failure {
                code: EXIT_USAGE,
                msg: format!("DAGF_THREADS must be a positive integer, got `{v}`"),
            }),
        },
    }
}

fn train(config: &Path, resume: Option<&Path>, seed: Option<u64>) -> CmdResult {
    let mut cfg = RunConfig::load(config)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let train = PairedDataset::open(&cfg.data_root)?.pairs;
    if train.is_empty() {
        return Err(data_err(format!("no training pairs in {}", cfg.data_root.display())));
    }
    let val = match &cfg.val_root {
        Some(root) => PairedDataset::open(root)?.pairs,
        None => Vec::new(),
    };
    info!("{} training pairs, {} validation pairs", train.len(), val.len());
    let out = cfg.output_dir.clone();
    let mut trainer = match resume {
        Some(path) => {
            let ck = Checkpoint::load(path)?;
            let t = Trainer::resume(cfg, &ck, train, val)?;
            info!("resuming after epoch {}", t.epoch);
            t
        }
        None => Trainer::new(cfg, train, val)?,
    };
    let (stats, last) = trainer.fit(&out)?;
    info!("ran {} epochs; final checkpoint {}", stats.len(), last.display());
    Ok(())
}

fn infer(checkpoint: &Path, input_dir: &Path, output_dir: &Path, ensemble: bool) -> CmdResult {
    let ck = Checkpoint::load(checkpoint)?;
    let (model, store) = model_from_checkpoint(&ck)?;
    let inputs: Vec<(String, PathBuf)> = images_by_stem(input_dir)?.into_iter().collect();
    if inputs.is_empty() {
        return Err(data_err(format!("no images in {}", input_dir.display())));
    }
    fs::create_dir_all(output_dir)?;
    let workers = threads()?.min(inputs.len());
    let chunk = inputs.len().div_ceil(workers);
    let restore = |(stem, path): &(String, PathBuf)| -> Result<(), Error> {
        let x = normalize(&load_image(path)?);
        let (h, w) = (x.shape()[1], x.shape()[2]);
        model.config.check_input(h, w)?;
        let y = model.infer(&store, &x.unsqueeze0(), ensemble)?;
        save_image(&output_dir.join(format!("{stem}.png")), &denormalize(&y))
    };
    let outcomes: Vec<Result<(), Error>> = thread::scope(|s| {
        let handles: Vec<_> = inputs
            .chunks(chunk)
            .map(|part| s.spawn(move || part.iter().map(restore).collect::<Vec<_>>()))
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("inference worker panicked"))
            .collect()
    });
    let mut ok = 0;
    for ((stem, _), outcome) in inputs.iter().zip(outcomes) {
        match outcome {
            Ok(()) => ok += 1,
            Err(e) => warn!("skipping {stem}: {e}"),
        }
    }
    info!("restored {ok} of {} images", inputs.len());
    if ok == 0 {
        return Err(data_err("no image could be restored"));
    }
    Ok(())
}

fn eval(pred_dir: &Path, gt_dir: &Path) -> CmdResult {
    let pairs = pair_stems(pred_dir, gt_dir)?;
    let cfg = SsimConfig::default();
    let mut rows = Vec::with_capacity(pairs.len());
    for (stem, pred, gt) in &pairs {
        let (p, g) = (load_image(pred)?.unsqueeze0(), load_image(gt)?.unsqueeze0());
        if p.shape() != g.shape() {
            return Err(data_err(format!("{stem}: sizes differ ({:?} vs {:?})", &p.shape()[1..], &g.shape()[1..])));
        }
        rows.push((stem.clone(), psnr(&p, &g, 1.0)?, ssim(&p, &g, &cfg)?));
    }
    let n = rows.len() as f64;
    let mean_psnr = rows.iter().map(|r| r.1).sum::<f64>() / n;
    let mean_ssim = rows.iter().map(|r| r.2).sum::<f64>() / n;
    println!("name,psnr,ssim");
    for (name, p, s) in &rows {
        println!("{},{},{}", csv_field(name), fmt_metric(*p), fmt_metric(*s));
    }
    println!("MEAN,{},{}", fmt_metric(mean_psnr), fmt_metric(mean_ssim));
    Ok(())
}

/// Quotes a CSV field when it holds a separator, quote or line break.
fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_owned()
    }
}

fn gradcheck(scope: ScopeArg, seed: u64) -> CmdResult {
    let scopes: Vec<Scope> = match scope {
        ScopeArg::Ops => vec![Scope::Ops],
        ScopeArg::Blocks => vec![Scope::Blocks],
        ScopeArg::E2e => vec![Scope::E2e],
        ScopeArg::All => Scope::ALL.to_vec(),
    };
    let mut failed = 0;
    if corrupted_gradient_detected(seed)? {
        println!("PASS self-test: a doubled gradient is rejected");
    } else {
        println!("FAIL self-test: a doubled gradient went unnoticed");
        failed += 1;
    }
    for s in scopes {
        for r in run_scope(s, seed)? {
            println!("{}", r.summary());
            if !r.passed() {
                failed += 1;
            }
        }
    }
    if failed > 0 {
        return Err(Failure {
            code: EXIT_VERIFY,
            msg: format!("{failed} gradient checks failed"),
        });
    }
    Ok(())
}

fn load_dir(dir: &Path) -> Result<Vec<(String, Tensor)>, Failure> {
    let files = images_by_stem(dir)?;
    if files.is_empty() {
        return Err(data_err(format!("no images in {}", dir.display())));
    }
    files
        .into_iter()
        .map(|(stem, path)| Ok((stem, normalize(&load_image(&path)?))))
        .collect()
}

fn simulate(clean_dir: &Path, measured_dir: &Path, out_dir: &Path, gamma: f64, steps: usize, seed: u64) -> CmdResult {
    let clean = load_dir(clean_dir)?;
    let measured = load_dir(measured_dir)?;
    if clean.len() != measured.len() {
        return Err(data_err(format!(
            "{} clean images but {} measurements",
            clean.len(),
            measured.len()
        )));
    }
    let mut cfg = SimulateConfig {
        steps,
        seed,
        ..SimulateConfig::default()
    };
    cfg.cobi.gamma = gamma;
    let xs: Vec<Tensor> = clean.iter().map(|(_, t)| t.clone()).collect();
    let ys: Vec<Tensor> = measured.iter().map(|(_, t)| t.clone()).collect();
    let (sim, report) = simulate_train(&xs, &ys, cfg.clone())?;
    info!("CoBi {:.5} -> {:.5}", report.initial_loss, report.final_loss);
    let pairs = simulate_pairs(&sim, &clean)?;
    PairedDataset { pairs }.save(out_dir)?;
    sim.to_checkpoint().save(&out_dir.join("simulator.dagf"))?;
    let manifest = json!({
        "clean_dir": clean_dir,
        "measured_dir": measured_dir,
        "pairs": clean.len(),
        "gamma": gamma,
        "steps": steps,
        "seed": seed,
        "config": cfg,
        "initial_cobi": report.initial_loss,
        "final_cobi": report.final_loss,
    });
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| data_err(e.to_string()))?;
    fs::write(out_dir.join("manifest.json"), text + "\n")?;
    Ok(())
}

fn synth(out_dir: &Path, count: usize, h: usize, w: usize, profile: ProfileArg, seed: u64) -> CmdResult {
    if count == 0 || h == 0 || w == 0 {
        return Err(Failure {
            code: EXIT_USAGE,
            msg: "count, height and width must be positive".into(),
        });
    }
    let p = match profile {
        ProfileArg::Toled => DegradeProfile::toled_like(),
        ProfileArg::Poled => DegradeProfile::poled_like(),
    };
    PairedDataset {
        pairs: synth_pairs(count, h, w, &p, seed)?,
    }
    .save(out_dir)?;
    info!("wrote {count} pairs to {}", out_dir.display());
    Ok(())
}
