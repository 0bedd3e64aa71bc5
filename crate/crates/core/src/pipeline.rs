//! Operational compositions: denoising whole volumes and scoring
//! denoised patches.

use rayon::prelude::*;

use crate::data::{PatchSample, Volume, WindowSpec};
use crate::error::{Error, Result};
use crate::metrics::{
    glcm_features, psnr, radiomics_loss, ssim, ConfigEcho, GlcmConfig, MetricReport, MetricRow,
    SsimConfig,
};
use crate::model::GeneratorParams;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Denoises every slice of a volume. Each slice is windowed, stacked
/// with its two neighbors (boundary slices reuse the nearest existing
/// neighbor), passed through the generator and mapped back to HU.
///
/// `tile`: when set, slices are processed in `tile x tile` blocks instead
/// of whole-slice graph construction. Blocks at the borders shrink.
pub fn denoise_volume<T: Scalar>(
    generator: &GeneratorParams<T>,
    volume: &Volume,
    window: WindowSpec,
    tile: Option<usize>,
) -> Result<Volume> {
    window.validate()?;
    let (slices, rows, cols) = volume.dims;
    if let Some(t) = tile {
        if t < 16 {
            return Err(Error::arg(format!("tile extent {t} too small, need >= 16")));
        }
    }
    let plane = rows * cols;
    let slice_results: Vec<Result<Vec<f32>>> = (0..slices)
        .into_par_iter()
        .map(|i| {
            let prev = i.saturating_sub(1);
            let next = (i + 1).min(slices - 1);
            let mut stack = Vec::with_capacity(3 * plane);
            for s in [prev, i, next] {
                stack.extend(
                    volume
                        .slice_data(s)
                        .iter()
                        .map(|&hu| T::from_f64_lit(window.normalize(hu as f64))),
                );
            }
            let stack = Tensor::from_vec(&[3, rows, cols], stack)?;
            let denoised = match tile {
                None => generator.denoise_patch(&stack, true)?,
                Some(t) => denoise_tiled(generator, &stack, t)?,
            };
            Ok(denoised
                .data()
                .iter()
                .map(|&v| window.denormalize(v.to_f64_lit()) as f32)
                .collect())
        })
        .collect();
    let mut data = Vec::with_capacity(slices * plane);
    for r in slice_results {
        data.extend(r?);
    }
    let mut provenance = volume.provenance.clone();
    provenance.generator_version = format!("{}+denoised", provenance.generator_version);
    Volume::new(volume.dims, volume.spacing, data, provenance)
}

fn denoise_tiled<T: Scalar>(
    generator: &GeneratorParams<T>,
    stack: &Tensor<T>,
    tile: usize,
) -> Result<Tensor<T>> {
    let s = stack.shape();
    let (rows, cols) = (s[1], s[2]);
    let mut out = vec![T::zero(); rows * cols];
    let mut r0 = 0;
    while r0 < rows {
        let rh = tile.min(rows - r0);
        let mut c0 = 0;
        while c0 < cols {
            let cw = tile.min(cols - c0);
            let mut block = Vec::with_capacity(3 * rh * cw);
            for d in 0..3 {
                for r in r0..r0 + rh {
                    for c in c0..c0 + cw {
                        block.push(stack.data()[(d * rows + r) * cols + c]);
                    }
                }
            }
            let block = Tensor::from_vec(&[3, rh, cw], block)?;
            let den = generator.denoise_patch(&block, true)?;
            for r in 0..rh {
                for c in 0..cw {
                    out[(r0 + r) * cols + c0 + c] = den.data()[r * cw + c];
                }
            }
            c0 += cw;
        }
        r0 += rh;
    }
    Tensor::from_vec(&[rows, cols], out)
}

/// Denoises held-out patches and reports PSNR/SSIM/texture losses of the
/// result against the clean targets.
pub fn evaluate_patches<T: Scalar>(
    generator: &GeneratorParams<T>,
    samples: &[PatchSample<T>],
    echo: ConfigEcho,
) -> Result<MetricReport> {
    if samples.is_empty() {
        return Err(Error::arg("evaluate_patches: empty sample list"));
    }
    let ssim_cfg = SsimConfig::default();
    let glcm_cfg = GlcmConfig::default();
    let rows: Vec<Result<MetricRow>> = samples
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            let denoised = generator.denoise_patch(&s.low_stack, true)?;
            let loss = radiomics_loss(&denoised, &s.target, &glcm_cfg)?;
            Ok(MetricRow {
                image: format!("patch{i:04}"),
                psnr_db: psnr(&denoised, &s.target, 1.0)?,
                ssim: ssim(&denoised, &s.target, &ssim_cfg)?,
                glcm_contrast_loss: loss.contrast,
                glcm_correlation_loss: loss.correlation,
                glcm_dissimilarity_loss: loss.dissimilarity,
            })
        })
        .collect();
    let mut collected = Vec::with_capacity(rows.len());
    for r in rows {
        collected.push(r?);
    }
    MetricReport::new(echo, collected)
}

/// PSNR/SSIM/texture losses of the noisy inputs themselves against the
/// clean targets; the no-op baseline a denoiser has to beat. The center
/// slice of each input stack is the noisy image.
pub fn noisy_baseline<T: Scalar>(samples: &[PatchSample<T>], echo: ConfigEcho) -> Result<MetricReport> {
    if samples.is_empty() {
        return Err(Error::arg("noisy_baseline: empty sample list"));
    }
    let ssim_cfg = SsimConfig::default();
    let glcm_cfg = GlcmConfig::default();
    let rows: Vec<Result<MetricRow>> = samples
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            let shape = s.target.shape();
            let plane = shape[0] * shape[1];
            let noisy = Tensor::from_vec(
                shape,
                s.low_stack.data()[plane..2 * plane].to_vec(),
            )?;
            let loss = radiomics_loss(&noisy, &s.target, &glcm_cfg)?;
            Ok(MetricRow {
                image: format!("patch{i:04}"),
                psnr_db: psnr(&noisy, &s.target, 1.0)?,
                ssim: ssim(&noisy, &s.target, &ssim_cfg)?,
                glcm_contrast_loss: loss.contrast,
                glcm_correlation_loss: loss.correlation,
                glcm_dissimilarity_loss: loss.dissimilarity,
            })
        })
        .collect();
    let mut collected = Vec::with_capacity(rows.len());
    for r in rows {
        collected.push(r?);
    }
    MetricReport::new(echo, collected)
}

/// GLCM contrast of an image, convenience for the acceptance checks.
pub fn glcm_contrast<T: Scalar>(image: &Tensor<T>) -> Result<f64> {
    Ok(glcm_features(image, &GlcmConfig::default())?.contrast)
}
