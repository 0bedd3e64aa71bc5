//! `ridnet eval`: score `{stem}_denoised` volumes against their
//! `{stem}_clean` references, slice by slice.

use std::fs;
use std::path::PathBuf;

use clap::Parser;
use ridnet_core::data::{Volume, WindowSpec};
use ridnet_core::error::{Error, Result};
use ridnet_core::graph::ThetaMode;
use ridnet_core::metrics::{
    psnr, radiomics_loss, ssim, ConfigEcho, GlcmConfig, MetricReport, MetricRow, SsimConfig,
};
use ridnet_core::tensor::Tensor;
use ridnet_core::train::load_checkpoint;

use crate::config::RunConfig;

#[derive(Parser)]
pub struct Args {
    /// Directory holding `{stem}_clean` / `{stem}_denoised` volume pairs.
    #[arg(long)]
    pub pairs: PathBuf,
    /// Output directory for metrics.csv / metrics.json.
    #[arg(long)]
    pub out: PathBuf,
    /// Checkpoint whose configuration is echoed into the report.
    #[arg(long)]
    pub ckpt: Option<PathBuf>,
    #[arg(long)]
    pub window_width: Option<f64>,
    #[arg(long)]
    pub window_level: Option<f64>,
}

pub fn run(args: Args) -> Result<()> {
    let mut pairs = Vec::new();
    for entry in fs::read_dir(&args.pairs)? {
        let path = entry?.path();
        if let Some(name) = path.file_name().and_then(|n| n.to_str()) {
            if let Some(stem) = name.strip_suffix("_clean.json") {
                let denoised = args.pairs.join(format!("{stem}_denoised.json"));
                if denoised.exists() {
                    pairs.push((stem.to_string(), path.clone(), denoised));
                }
            }
        }
    }
    pairs.sort();
    if pairs.is_empty() {
        return Err(Error::arg(format!(
            "no *_clean/*_denoised pairs under {}",
            args.pairs.display()
        )));
    }

    let echo = match &args.ckpt {
        Some(base) => {
            let (manifest, _, _) = load_checkpoint::<f32>(base)?;
            ConfigEcho {
                k: manifest.train.model.graph.k,
                block_count: manifest.train.model.blocks,
                seed: manifest.train.seed,
                phi_seed: manifest.train.phi_seed,
                theta_mode: manifest.train.model.graph.theta,
            }
        }
        None => ConfigEcho {
            k: 0,
            block_count: 0,
            seed: 0,
            phi_seed: 0,
            theta_mode: ThetaMode::Full,
        },
    };

    let ssim_cfg = SsimConfig::default();
    let glcm_cfg = GlcmConfig::default();
    let mut rows = Vec::new();
    for (stem, clean_path, denoised_path) in &pairs {
        let (clean, hint) = Volume::load(clean_path)?;
        let (denoised, _) = Volume::load(denoised_path)?;
        if clean.dims != denoised.dims {
            return Err(Error::shape(format!(
                "{stem}: clean {:?} vs denoised {:?}",
                clean.dims, denoised.dims
            )));
        }
        let window = match (args.window_width, args.window_level) {
            (Some(width), Some(level)) => WindowSpec { width, level },
            _ => hint.ok_or_else(|| {
                Error::arg(format!(
                    "{stem}: no window hint; pass --window-width/--window-level"
                ))
            })?,
        };
        let (slices, h, w) = clean.dims;
        for s in 0..slices {
            let norm = |vol: &Volume| -> Result<Tensor<f64>> {
                Tensor::from_vec(
                    &[h, w],
                    vol.slice_data(s)
                        .iter()
                        .map(|&hu| window.normalize(hu as f64))
                        .collect(),
                )
            };
            let a = norm(&denoised)?;
            let b = norm(&clean)?;
            let loss = radiomics_loss(&a, &b, &glcm_cfg)?;
            rows.push(MetricRow {
                image: format!("{stem}/slice{s:03}"),
                psnr_db: psnr(&a, &b, 1.0)?,
                ssim: ssim(&a, &b, &ssim_cfg)?,
                glcm_contrast_loss: loss.contrast,
                glcm_correlation_loss: loss.correlation,
                glcm_dissimilarity_loss: loss.dissimilarity,
            });
        }
    }
    let report = MetricReport::new(echo, rows)?;

    let mut cfg = RunConfig::new();
    cfg.set("pairs", args.pairs.display());
    cfg.set("out", args.out.display());
    cfg.set_opt("ckpt", args.ckpt.as_ref().map(|p| p.display().to_string()));
    cfg.write_resolved(&args.out)?;
    fs::write(args.out.join("metrics.csv"), report.to_csv())?;
    fs::write(args.out.join("metrics.json"), report.to_json()?)?;
    println!(
        "scored {} slices over {} volume pairs: mean PSNR {:.3} dB, mean SSIM {:.4}",
        report.rows.len(),
        pairs.len(),
        report.aggregate.psnr_db,
        report.aggregate.ssim
    );
    Ok(())
}
