//! `ridnet train`: fit a denoiser on a directory of volume pairs.

use std::path::PathBuf;

use clap::Parser;
use ridnet_core::data::{extract_patches, list_volume_pairs, PatchConfig, PatchSample, Volume, WindowSpec};
use ridnet_core::error::{Error, Result};
use ridnet_core::train::{train, LossMode, TrainConfig};

use crate::config::RunConfig;

#[derive(Parser)]
pub struct Args {
    /// Directory of `*_clean` / `*_low` volume pairs.
    #[arg(long)]
    pub data: PathBuf,
    /// Output directory for checkpoints, logs and the resolved config.
    #[arg(long)]
    pub out: PathBuf,
    /// Preset: paper (full scale) or desk (minutes on a laptop).
    #[arg(long)]
    pub preset: Option<String>,
    /// Loss mode: mse_only or gan_perceptual.
    #[arg(long)]
    pub loss: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Patch extent; preset default (paper 64, desk 32).
    #[arg(long)]
    pub patch: Option<usize>,
    /// Fraction of patches held out for validation tracking.
    #[arg(long)]
    pub val_fraction: Option<f64>,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

pub fn run(args: Args) -> Result<()> {
    let mut cfg = RunConfig::new();
    cfg.set("preset", "desk");
    cfg.set("val_fraction", 0.1);
    if let Some(file) = &args.config {
        cfg.merge_file(file)?;
    }
    cfg.set_opt("preset", args.preset.clone());
    let preset = cfg.require("preset")?.to_string();
    let mut train_config = match preset.as_str() {
        "paper" => TrainConfig::paper(),
        "desk" => TrainConfig::desk(),
        other => return Err(Error::arg(format!("unknown preset {other:?}"))),
    };
    if cfg.get("patch").is_none() {
        cfg.set("patch", if preset == "paper" { 64 } else { 32 });
    }
    if let Some(loss) = cfg.get("loss") {
        train_config.loss = parse_loss(loss)?;
    }
    if let Some(seed) = cfg.get("seed") {
        train_config.seed = seed
            .parse()
            .map_err(|_| Error::arg(format!("bad seed {seed:?}")))?;
    }
    cfg.set_opt("loss", args.loss.clone());
    cfg.set_opt("seed", args.seed);
    cfg.set_opt("epochs", args.epochs);
    cfg.set_opt("batch_size", args.batch_size);
    cfg.set_opt("patch", args.patch);
    cfg.set_opt("val_fraction", args.val_fraction);
    if let Some(loss) = args.loss.as_deref() {
        train_config.loss = parse_loss(loss)?;
    }
    if let Some(seed) = args.seed {
        train_config.seed = seed;
    }
    if let Some(epochs) = cfg.get("epochs") {
        train_config.epochs = epochs
            .parse()
            .map_err(|_| Error::arg(format!("bad epochs {epochs:?}")))?;
    }
    if let Some(batch) = cfg.get("batch_size") {
        train_config.batch_size = batch
            .parse()
            .map_err(|_| Error::arg(format!("bad batch_size {batch:?}")))?;
    }
    let patch: usize = cfg.parse("patch")?;
    let val_fraction: f64 = cfg.parse("val_fraction")?;
    if !(0.0..0.9).contains(&val_fraction) {
        return Err(Error::arg(format!("val_fraction {val_fraction} not in [0, 0.9)")));
    }

    // echo the fully resolved training parameters
    cfg.set("data", args.data.display());
    cfg.set("out", args.out.display());
    cfg.set("seed", train_config.seed);
    cfg.set("loss", loss_name(train_config.loss));
    cfg.set("epochs", train_config.epochs);
    cfg.set("batch_size", train_config.batch_size);
    cfg.set("lr_g", train_config.lr_g);
    cfg.set("lr_d", train_config.lr_d);
    cfg.set("lambda_perceptual", train_config.lambda_perceptual);
    cfg.set("lambda_gp", train_config.lambda_gp);
    cfg.set("decay_gamma", train_config.decay_gamma);
    cfg.set("blocks", train_config.model.blocks);
    cfg.set("k", train_config.model.graph.k);
    cfg.set("phi_seed", train_config.phi_seed);
    cfg.write_resolved(&args.out)?;

    let samples = load_patches::<f32>(&args.data, patch)?;
    if samples.is_empty() {
        return Err(Error::arg(format!(
            "no training patches found under {}",
            args.data.display()
        )));
    }
    let val_count = ((samples.len() as f64) * val_fraction) as usize;
    let (val_set, train_set) = samples.split_at(val_count);
    println!(
        "training on {} patches ({} held out), preset {preset}, loss {}",
        train_set.len(),
        val_set.len(),
        loss_name(train_config.loss)
    );
    let outcome = train(&train_config, train_set, val_set, &args.out)?;
    println!(
        "done: {} steps, train MSE {:.6} -> {:.6}, checkpoint {}",
        outcome.steps,
        outcome.initial_train_mse,
        outcome.final_train_mse,
        outcome.final_checkpoint.display()
    );
    if let Some(best) = outcome.best_val_mse {
        println!("best validation MSE {best:.6}");
    }
    Ok(())
}

fn parse_loss(raw: &str) -> Result<LossMode> {
    match raw {
        "mse_only" => Ok(LossMode::MseOnly),
        "gan_perceptual" => Ok(LossMode::GanPerceptual),
        other => Err(Error::arg(format!(
            "unknown loss {other:?}, expected mse_only or gan_perceptual"
        ))),
    }
}

fn loss_name(mode: LossMode) -> &'static str {
    match mode {
        LossMode::MseOnly => "mse_only",
        LossMode::GanPerceptual => "gan_perceptual",
    }
}

/// Extracts patches from every volume pair in the directory, using each
/// pair's window hint.
pub fn load_patches<T: ridnet_core::scalar::Scalar>(
    data_dir: &std::path::Path,
    patch: usize,
) -> Result<Vec<PatchSample<T>>> {
    let pairs = list_volume_pairs(data_dir)?;
    if pairs.is_empty() {
        return Err(Error::arg(format!(
            "no *_clean/*_low volume pairs under {}",
            data_dir.display()
        )));
    }
    let mut samples = Vec::new();
    for (clean_path, low_path) in pairs {
        let (clean, window_hint) = Volume::load(&clean_path)?;
        let (low, _) = Volume::load(&low_path)?;
        let window = window_hint.unwrap_or_else(WindowSpec::abdomen);
        samples.extend(extract_patches::<T>(
            &low,
            &clean,
            window,
            &PatchConfig {
                patch,
                ..PatchConfig::default()
            },
        )?);
    }
    Ok(samples)
}
