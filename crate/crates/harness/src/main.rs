use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};

use mvdit::config::{ConfigError, RunConfig, Variant};
use mvdit::formats::FormatError;
use mvdit::{eval, overfit, sample, scene, sweep, train};

#[derive(Parser)]
#[command(name = "mvdit", version, about = "Multi-view diffusion toy harness")]
struct Cli {
    /// Flat key = value run configuration; repeat to layer files in order.
    #[arg(long, global = true)]
    config: Vec<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Extra `key=value` overrides applied after the config file.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a toy scene (or `n_scenes` of them) into the output directory.
    GenScene,
    /// Train a model on every scene under `dataset`, writing a checkpoint and loss log.
    Train,
    /// Overfit control variants on one scene from a mid-trained checkpoint.
    Overfit {
        #[arg(long)]
        variant: Vec<Variant>,
    },
    /// Sample novel views of the `dataset` scene from `checkpoint`.
    Sample,
    /// PSNR between matching PNGs of two directories.
    EvalPsnr {
        generated: PathBuf,
        truth: PathBuf,
    },
    /// Mean reprojection error of pairwise correspondences.
    EvalRe {
        /// Directory with `matches_<a>_<b>.txt` files, or a scene directory.
        dir: PathBuf,
        #[arg(long)]
        cameras: Option<PathBuf>,
        #[arg(long)]
        points: Option<PathBuf>,
    },
    /// Attention entropy over token counts and logit scalings.
    EntropySweep,
}

fn load_config(cli: &Cli) -> anyhow::Result<RunConfig> {
    let mut cfg = RunConfig::default();
    for p in &cli.config {
        cfg.apply_file(p)?;
    }
    for kv in &cli.set {
        let (k, v) = kv.split_once('=').ok_or(ConfigError::Syntax { line: 0 })?;
        cfg.set(k.trim(), v.trim())?;
    }
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let mut cfg = load_config(&cli)?;
    let out = &cli.out;
    match cli.command {
        Command::GenScene => {
            let dirs = scene::gen_scenes(out, &scene::SceneParams::from_config(&cfg), cfg.n_scenes)?;
            println!("wrote {} scene(s) under {}", dirs.len(), out.display());
        }
        Command::Train => {
            let r = train::train(&cfg, out)?;
            if let Some(last) = r.rows.last() {
                println!("step {} loss {:.6}", r.step, last.loss);
            }
        }
        Command::Overfit { variant } => {
            if !variant.is_empty() {
                cfg.variants = variant;
            }
            for r in overfit::overfit(&cfg, out)? {
                println!("{} train {:.3} dB val {:.3} dB", r.variant.name(), r.psnr_train, r.psnr_val);
            }
        }
        Command::Sample => {
            let r = sample::sample(&cfg, out)?;
            println!(
                "sampled {} views ({} tokens, lambda {:.6}, mean entropy {:.4})",
                r.images.len(),
                r.tokens,
                r.lambda,
                r.mean_entropy().unwrap_or(f64::NAN)
            );
        }
        Command::EvalPsnr { generated, truth } => {
            let r = eval::eval_psnr_cmd(&generated, &truth, out)?;
            println!("mean PSNR {:.3} dB over {} views", r.mean, r.per_view.len());
        }
        Command::EvalRe { dir, cameras, points } => {
            let r = eval::eval_re_cmd(&cfg, &dir, cameras.as_deref(), points.as_deref(), out)
                .with_context(|| format!("evaluating {}", dir.display()))?;
            println!("mean RE {:.6e} over {} pairs ({} rejected)", r.mean_re, r.pairs_used(), r.n_rejected_pairs());
        }
        Command::EntropySweep => {
            let rows = sweep::entropy_sweep_cmd(&cfg, out)?;
            println!("wrote {} rows", rows.len());
        }
    }
    Ok(())
}

/// Short machine-readable category for the first recognised cause.
fn error_kind(e: &anyhow::Error) -> &'static str {
    for cause in e.chain() {
        if cause.is::<ConfigError>() {
            return "config";
        }
        if cause.is::<FormatError>() {
            return "format";
        }
        if cause.is::<train::TrainError>() {
            return "nonfinite";
        }
        if cause.is::<sample::ResourceError>() {
            return "resource";
        }
        if cause.is::<overfit::IncompatibleVariant>() {
            return "incompatible";
        }
        if cause.is::<scene::SceneError>() {
            return "scene";
        }
        if cause.is::<mvdit_core::Error>() {
            return "model";
        }
        if cause.is::<std::io::Error>() {
            return "io";
        }
    }
    "failed"
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = format!("{e:#}").replace('\n', " ");
            eprintln!("error: {}: {msg}", error_kind(&e));
            ExitCode::FAILURE
        }
    }
}
