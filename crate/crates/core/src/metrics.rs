//! Image-quality metrics: PSNR, SSIM and gray-level co-occurrence
//! texture features with their absolute-difference losses.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::ThetaMode;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// PSNR is capped here; identical images report exactly this value.
pub const PSNR_CAP_DB: f64 = 99.0;

/// Peak signal-to-noise ratio in dB, `10 * log10(peak^2 / MSE)`, capped
/// at [`PSNR_CAP_DB`].
pub fn psnr<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, peak: f64) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::shape(format!(
            "psnr: shapes {:?} and {:?} differ",
            a.shape(),
            b.shape()
        )));
    }
    let mse = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| (x.to_f64_lit() - y.to_f64_lit()).powi(2))
        .sum::<f64>()
        / a.numel() as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (peak * peak / mse).log10()).min(PSNR_CAP_DB))
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct SsimConfig {
    pub window: usize,
    pub k1: f64,
    pub k2: f64,
    pub peak: f64,
}

impl Default for SsimConfig {
    fn default() -> Self {
        Self {
            window: 8,
            k1: 0.01,
            k2: 0.03,
            peak: 1.0,
        }
    }
}

/// Mean local structural similarity over a sliding uniform window.
pub fn ssim<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, config: &SsimConfig) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::shape(format!(
            "ssim: shapes {:?} and {:?} differ",
            a.shape(),
            b.shape()
        )));
    }
    let s = a.shape();
    if s.len() != 2 {
        return Err(Error::shape(format!("ssim expects [H,W] images, got {s:?}")));
    }
    let (h, w) = (s[0], s[1]);
    let win = config.window;
    if h < win || w < win {
        return Err(Error::shape(format!(
            "ssim: image {h}x{w} smaller than window {win}"
        )));
    }
    let c1 = (config.k1 * config.peak).powi(2);
    let c2 = (config.k2 * config.peak).powi(2);
    let n = (win * win) as f64;
    let av = a.data();
    let bv = b.data();
    let mut total = 0.0;
    let mut count = 0usize;
    for y0 in 0..=h - win {
        for x0 in 0..=w - win {
            let (mut sa, mut sb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for y in y0..y0 + win {
                for x in x0..x0 + win {
                    let va = av[y * w + x].to_f64_lit();
                    let vb = bv[y * w + x].to_f64_lit();
                    sa += va;
                    sb += vb;
                    saa += va * va;
                    sbb += vb * vb;
                    sab += va * vb;
                }
            }
            let (mu_a, mu_b) = (sa / n, sb / n);
            let var_a = saa / n - mu_a * mu_a;
            let var_b = sbb / n - mu_b * mu_b;
            let cov = sab / n - mu_a * mu_b;
            let val = ((2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2))
                / ((mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2));
            total += val;
            count += 1;
        }
    }
    Ok(total / count as f64)
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct GlcmConfig {
    /// Gray levels after uniform quantization of [0, 1].
    pub levels: usize,
    /// Pixel offset `(d_row, d_col)` of co-occurring pairs.
    pub offset: (isize, isize),
    /// Count each pair in both directions.
    pub symmetric: bool,
}

impl Default for GlcmConfig {
    fn default() -> Self {
        Self {
            levels: 64,
            offset: (0, 1),
            symmetric: true,
        }
    }
}

/// GLCM texture features. Correlation is `None` when either marginal is
/// degenerate (constant image).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GlcmFeatures {
    pub contrast: f64,
    pub dissimilarity: f64,
    pub correlation: Option<f64>,
}

/// Contrast, dissimilarity and correlation of the normalized
/// co-occurrence matrix of a `[H, W]` image in [0, 1].
pub fn glcm_features<T: Scalar>(image: &Tensor<T>, config: &GlcmConfig) -> Result<GlcmFeatures> {
    let s = image.shape();
    if s.len() != 2 {
        return Err(Error::shape(format!("glcm expects [H,W] images, got {s:?}")));
    }
    if config.levels < 2 {
        return Err(Error::arg(format!("glcm needs >= 2 levels, got {}", config.levels)));
    }
    let (h, w) = (s[0], s[1]);
    let levels = config.levels;
    let quant = |v: T| -> usize {
        let x = v.to_f64_lit().clamp(0.0, 1.0);
        ((x * levels as f64) as usize).min(levels - 1)
    };
    let data = image.data();
    let (dr, dc) = config.offset;
    let mut counts = vec![0.0f64; levels * levels];
    let mut total = 0.0f64;
    for r in 0..h as isize {
        for c in 0..w as isize {
            let (r2, c2) = (r + dr, c + dc);
            if r2 < 0 || r2 >= h as isize || c2 < 0 || c2 >= w as isize {
                continue;
            }
            let i = quant(data[r as usize * w + c as usize]);
            let j = quant(data[r2 as usize * w + c2 as usize]);
            counts[i * levels + j] += 1.0;
            total += 1.0;
            if config.symmetric {
                counts[j * levels + i] += 1.0;
                total += 1.0;
            }
        }
    }
    if total == 0.0 {
        return Err(Error::arg(format!(
            "glcm: offset {:?} leaves no co-occurring pairs in a {h}x{w} image",
            config.offset
        )));
    }
    for v in &mut counts {
        *v /= total;
    }

    let mut contrast = 0.0;
    let mut dissimilarity = 0.0;
    let mut mu_i = 0.0;
    let mut mu_j = 0.0;
    for i in 0..levels {
        for j in 0..levels {
            let p = counts[i * levels + j];
            let d = i as f64 - j as f64;
            contrast += p * d * d;
            dissimilarity += p * d.abs();
            mu_i += p * i as f64;
            mu_j += p * j as f64;
        }
    }
    let mut var_i = 0.0;
    let mut var_j = 0.0;
    let mut cov = 0.0;
    for i in 0..levels {
        for j in 0..levels {
            let p = counts[i * levels + j];
            var_i += p * (i as f64 - mu_i).powi(2);
            var_j += p * (j as f64 - mu_j).powi(2);
            cov += p * (i as f64 - mu_i) * (j as f64 - mu_j);
        }
    }
    let correlation = if var_i <= 1e-12 || var_j <= 1e-12 {
        None
    } else {
        Some(cov / (var_i.sqrt() * var_j.sqrt()))
    };
    Ok(GlcmFeatures {
        contrast,
        dissimilarity,
        correlation,
    })
}

/// Absolute per-feature differences between two images' GLCM features.
/// A degenerate correlation on either side propagates as `None`.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct RadiomicsLoss {
    pub contrast: f64,
    pub dissimilarity: f64,
    pub correlation: Option<f64>,
}

pub fn radiomics_loss<T: Scalar>(
    denoised: &Tensor<T>,
    reference: &Tensor<T>,
    config: &GlcmConfig,
) -> Result<RadiomicsLoss> {
    if denoised.shape() != reference.shape() {
        return Err(Error::shape(format!(
            "radiomics_loss: shapes {:?} and {:?} differ",
            denoised.shape(),
            reference.shape()
        )));
    }
    let a = glcm_features(denoised, config)?;
    let b = glcm_features(reference, config)?;
    Ok(RadiomicsLoss {
        contrast: (a.contrast - b.contrast).abs(),
        dissimilarity: (a.dissimilarity - b.dissimilarity).abs(),
        correlation: match (a.correlation, b.correlation) {
            (Some(x), Some(y)) => Some((x - y).abs()),
            _ => None,
        },
    })
}

/// Run configuration echoed into every report.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct ConfigEcho {
    pub k: usize,
    pub block_count: usize,
    pub seed: u64,
    pub phi_seed: u64,
    pub theta_mode: ThetaMode,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MetricRow {
    pub image: String,
    pub psnr_db: f64,
    pub ssim: f64,
    pub glcm_contrast_loss: f64,
    pub glcm_correlation_loss: Option<f64>,
    pub glcm_dissimilarity_loss: f64,
}

/// Per-image metric rows plus their aggregate, with the configuration
/// that produced them.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MetricReport {
    pub config: ConfigEcho,
    pub rows: Vec<MetricRow>,
    pub aggregate: MetricRow,
}

impl MetricReport {
    /// Builds the aggregate row (means; degenerate correlations are
    /// averaged over the defined entries only).
    pub fn new(config: ConfigEcho, rows: Vec<MetricRow>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::arg("metric report needs at least one row"));
        }
        let n = rows.len() as f64;
        let corr: Vec<f64> = rows.iter().filter_map(|r| r.glcm_correlation_loss).collect();
        let aggregate = MetricRow {
            image: "aggregate".into(),
            psnr_db: rows.iter().map(|r| r.psnr_db).sum::<f64>() / n,
            ssim: rows.iter().map(|r| r.ssim).sum::<f64>() / n,
            glcm_contrast_loss: rows.iter().map(|r| r.glcm_contrast_loss).sum::<f64>() / n,
            glcm_correlation_loss: if corr.is_empty() {
                None
            } else {
                Some(corr.iter().sum::<f64>() / corr.len() as f64)
            },
            glcm_dissimilarity_loss: rows.iter().map(|r| r.glcm_dissimilarity_loss).sum::<f64>()
                / n,
        };
        Ok(Self {
            config,
            rows,
            aggregate,
        })
    }

    /// One row per image plus the aggregate row. Degenerate correlation
    /// losses print as `degenerate`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "image,psnr_db,ssim,glcm_contrast_loss,glcm_correlation_loss,glcm_dissimilarity_loss\n",
        );
        for row in self.rows.iter().chain(std::iter::once(&self.aggregate)) {
            let corr = match row.glcm_correlation_loss {
                Some(v) => format!("{v:.9}"),
                None => "degenerate".to_string(),
            };
            out.push_str(&format!(
                "{},{:.9},{:.9},{:.9},{},{:.9}\n",
                row.image,
                row.psnr_db,
                row.ssim,
                row.glcm_contrast_loss,
                corr,
                row.glcm_dissimilarity_loss
            ));
        }
        out
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}
