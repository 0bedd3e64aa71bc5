//! Transmission-domain low-dose noise simulation.
//!
//! Each voxel's HU value is mapped to a linear attenuation coefficient,
//! attenuated photon counts are drawn from a Poisson distribution at the
//! requested dose fraction, and the noisy count is log-converted back to
//! HU. Counts are clamped to >= 1 to avoid log(0); clamped voxels are
//! counted in the provenance record.

use rand_distr::{Distribution, Poisson};

use crate::data::volume::{Volume, HU_MAX, HU_MIN};
use crate::error::{Error, Result};
use crate::rng::{derive, seeded};

#[derive(Clone, Copy, Debug)]
pub struct NoiseConfig {
    /// Incident photon count at full dose.
    pub i0: f64,
    /// Linear attenuation of water at the effective energy, 1/mm.
    pub mu_water_per_mm: f64,
    /// Effective path length scale, mm.
    pub path_mm: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            i0: 2.0e5,
            mu_water_per_mm: 0.02,
            path_mm: 10.0,
        }
    }
}

fn hu_to_attenuation(hu: f64, mu_water: f64) -> f64 {
    mu_water * (1.0 + hu / 1000.0)
}

fn attenuation_to_hu(mu: f64, mu_water: f64) -> f64 {
    1000.0 * (mu / mu_water - 1.0)
}

/// Returns a noisy copy of `volume` at the given dose fraction.
/// Deterministic per seed.
pub fn insert_poisson_noise(
    volume: &Volume,
    dose_fraction: f64,
    config: &NoiseConfig,
    seed: u64,
) -> Result<Volume> {
    if !(dose_fraction > 0.0 && dose_fraction <= 1.0) {
        return Err(Error::arg(format!(
            "dose fraction {dose_fraction} not in (0, 1]"
        )));
    }
    if config.i0 <= 0.0 || !config.i0.is_finite() {
        return Err(Error::arg(format!("incident count I0 {} must be > 0", config.i0)));
    }
    let mut rng = seeded(derive(seed, 0x4e, 0));
    let incident = dose_fraction * config.i0;
    let mut clamped: u64 = 0;
    let mut data = Vec::with_capacity(volume.numel());
    for &hu in &volume.data {
        let mu = hu_to_attenuation(hu as f64, config.mu_water_per_mm);
        let mut lambda = incident * (-mu * config.path_mm).exp();
        if !lambda.is_finite() || lambda > 1e12 {
            lambda = 1e12;
            clamped += 1;
        } else if lambda < 1e-12 {
            lambda = 1e-12;
            clamped += 1;
        }
        let poisson = Poisson::new(lambda).expect("lambda is positive and finite");
        let mut count = poisson.sample(&mut rng);
        if count < 1.0 {
            count = 1.0;
            clamped += 1;
        }
        let mu_noisy = -(count / incident).ln() / config.path_mm;
        let hu_noisy = attenuation_to_hu(mu_noisy, config.mu_water_per_mm);
        data.push((hu_noisy as f32).clamp(HU_MIN, HU_MAX));
    }
    let mut provenance = volume.provenance.clone();
    provenance.seed = seed;
    provenance.dose_fraction = dose_fraction;
    provenance.clamped_voxels = clamped;
    Volume::new(volume.dims, volume.spacing, data, provenance)
}
