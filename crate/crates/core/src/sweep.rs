//! Hyperparameter sweeps over graph size and block depth.
//!
//! One model is trained per axis value with a shared seed and scored on
//! held-out patches; results are emitted as a CSV table. A failed
//! training run records an error marker in its row instead of aborting
//! the sweep.

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::{extract_patches, generate_phantom, insert_poisson_noise, NoiseConfig, PatchConfig, PatchSample, WindowSpec};
use crate::error::{Error, Result};
use crate::metrics::ConfigEcho;
use crate::pipeline::evaluate_patches;
use crate::scalar::Scalar;
use crate::train::{train, TrainConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    KNeighbors,
    BlockCount,
}

impl SweepAxis {
    pub fn as_str(self) -> &'static str {
        match self {
            SweepAxis::KNeighbors => "k_neighbors",
            SweepAxis::BlockCount => "block_count",
        }
    }
}

impl std::str::FromStr for SweepAxis {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "k_neighbors" => Ok(SweepAxis::KNeighbors),
            "block_count" => Ok(SweepAxis::BlockCount),
            other => Err(Error::arg(format!(
                "unknown sweep axis {other:?}, expected k_neighbors or block_count"
            ))),
        }
    }
}

#[derive(Clone, Debug)]
pub struct SweepSpec {
    pub axis: SweepAxis,
    pub values: Vec<usize>,
    /// Training preset applied to every value (seed shared).
    pub train: TrainConfig,
    /// Seed of the synthetic data both training and evaluation use.
    pub data_seed: u64,
    pub dims: (usize, usize, usize),
    pub dose_fraction: f64,
    pub patch: usize,
    /// Patches held out for scoring.
    pub eval_fraction: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct SweepRow {
    pub axis: String,
    pub value: usize,
    pub psnr_db: Option<f64>,
    pub ssim: Option<f64>,
    pub glcm_contrast_loss: Option<f64>,
    pub glcm_correlation_loss: Option<f64>,
    pub glcm_dissimilarity_loss: Option<f64>,
    pub wall_time_s: f64,
    pub error: Option<String>,
}

#[derive(Clone, Debug, Serialize)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
}

impl SweepTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "axis,value,psnr_db,ssim,glcm_contrast_loss,glcm_correlation_loss,glcm_dissimilarity_loss,wall_time_s,error\n",
        );
        for r in &self.rows {
            let fmt = |v: Option<f64>| match v {
                Some(x) => format!("{x:.9}"),
                None => String::new(),
            };
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{:.3},{}",
                r.axis,
                r.value,
                fmt(r.psnr_db),
                fmt(r.ssim),
                fmt(r.glcm_contrast_loss),
                fmt(r.glcm_correlation_loss),
                fmt(r.glcm_dissimilarity_loss),
                r.wall_time_s,
                r.error.as_deref().unwrap_or("")
            );
        }
        out
    }
}

/// Runs the sweep, training one model per value. `work_dir` receives one
/// subdirectory per value with that run's checkpoints and logs.
pub fn run_sweep<T: Scalar>(spec: &SweepSpec, work_dir: &Path) -> Result<SweepTable> {
    if spec.values.is_empty() {
        return Err(Error::arg("sweep needs at least one value"));
    }
    if !(spec.eval_fraction > 0.0 && spec.eval_fraction < 1.0) {
        return Err(Error::arg("eval fraction must be in (0, 1)"));
    }
    let clean = generate_phantom(spec.data_seed, spec.dims)?;
    let noisy = insert_poisson_noise(
        &clean,
        spec.dose_fraction,
        &NoiseConfig::default(),
        derive_data_seed(spec.data_seed),
    )?;
    let samples: Vec<PatchSample<T>> = extract_patches(
        &noisy,
        &clean,
        WindowSpec::abdomen(),
        &PatchConfig {
            patch: spec.patch,
            ..PatchConfig::default()
        },
    )?;
    let eval_count = ((samples.len() as f64) * spec.eval_fraction).ceil() as usize;
    if eval_count == 0 || eval_count >= samples.len() {
        return Err(Error::arg(format!(
            "eval fraction {} leaves no usable split of {} samples",
            spec.eval_fraction,
            samples.len()
        )));
    }
    let (eval_set, train_set) = samples.split_at(eval_count);

    let mut rows = Vec::with_capacity(spec.values.len());
    for &value in &spec.values {
        let started = Instant::now();
        let mut config = spec.train.clone();
        match spec.axis {
            SweepAxis::KNeighbors => config.model.graph.k = value,
            SweepAxis::BlockCount => config.model.blocks = value,
        }
        let run_dir = work_dir.join(format!("{}_{value}", spec.axis.as_str()));
        let result = train::<T>(&config, train_set, &[], &run_dir).and_then(|outcome| {
            evaluate_patches(
                &outcome.generator,
                eval_set,
                ConfigEcho {
                    k: config.model.graph.k,
                    block_count: config.model.blocks,
                    seed: config.seed,
                    phi_seed: config.phi_seed,
                    theta_mode: config.model.graph.theta,
                },
            )
        });
        let wall_time_s = started.elapsed().as_secs_f64();
        rows.push(match result {
            Ok(report) => SweepRow {
                axis: spec.axis.as_str().to_string(),
                value,
                psnr_db: Some(report.aggregate.psnr_db),
                ssim: Some(report.aggregate.ssim),
                glcm_contrast_loss: Some(report.aggregate.glcm_contrast_loss),
                glcm_correlation_loss: report.aggregate.glcm_correlation_loss,
                glcm_dissimilarity_loss: Some(report.aggregate.glcm_dissimilarity_loss),
                wall_time_s,
                error: None,
            },
            Err(e) => SweepRow {
                axis: spec.axis.as_str().to_string(),
                value,
                psnr_db: None,
                ssim: None,
                glcm_contrast_loss: None,
                glcm_correlation_loss: None,
                glcm_dissimilarity_loss: None,
                wall_time_s,
                error: Some(e.to_string()),
            },
        });
    }
    Ok(SweepTable { rows })
}

fn derive_data_seed(seed: u64) -> u64 {
    crate::rng::derive(seed, 0x5d, 0)
}
