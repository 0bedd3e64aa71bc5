//! `ridnet denoise`: run a checkpoint over a volume.

use std::path::PathBuf;

use clap::Parser;
use ridnet_core::data::{Volume, WindowSpec};
use ridnet_core::error::{Error, Result};
use ridnet_core::pipeline::denoise_volume;
use ridnet_core::train::generator_from_checkpoint;

use crate::config::RunConfig;

#[derive(Parser)]
pub struct Args {
    /// Checkpoint base path (without extension).
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Input volume base path.
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Output volume base path.
    #[arg(long)]
    pub out: PathBuf,
    /// Process slices in tiles of this extent instead of whole-slice
    /// graphs.
    #[arg(long)]
    pub tile: Option<usize>,
    /// Window width override (defaults to the input's sidecar hint).
    #[arg(long)]
    pub window_width: Option<f64>,
    /// Window level override.
    #[arg(long)]
    pub window_level: Option<f64>,
}

pub fn run(args: Args) -> Result<()> {
    let (volume, window_hint) = Volume::load(&args.input)?;
    let window = match (args.window_width, args.window_level) {
        (Some(width), Some(level)) => WindowSpec { width, level },
        (None, None) => window_hint.ok_or_else(|| {
            Error::arg("input has no window hint; pass --window-width and --window-level")
        })?,
        _ => {
            return Err(Error::arg(
                "--window-width and --window-level must be given together",
            ))
        }
    };
    let (generator, manifest) = generator_from_checkpoint::<f32>(&args.ckpt)?;

    let mut cfg = RunConfig::new();
    cfg.set("ckpt", args.ckpt.display());
    cfg.set("in", args.input.display());
    cfg.set("out", args.out.display());
    cfg.set("window_width", window.width);
    cfg.set("window_level", window.level);
    cfg.set("tile", args.tile.map_or("whole-slice".to_string(), |t| t.to_string()));
    cfg.set("checkpoint_seed", manifest.train.seed);
    let out_dir = args
        .out
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("."));
    cfg.write_resolved(&out_dir)?;

    let denoised = denoise_volume(&generator, &volume, window, args.tile)?;
    denoised.save(&args.out, Some(window))?;
    println!(
        "denoised {} ({}x{}x{}) -> {}",
        args.input.display(),
        volume.dims.0,
        volume.dims.1,
        volume.dims.2,
        args.out.display()
    );
    Ok(())
}
