//! Deterministic synthetic phantom volumes.
//!
//! A phantom is a soft-tissue body ellipse on an air background,
//! containing randomized ellipsoidal organs, low-contrast lesion spheres
//! and thin high-contrast vessels. All structures extend across several
//! slices so inter-slice context carries signal.

use rand::Rng;

use crate::data::volume::{Provenance, Volume, HU_MAX, HU_MIN};
use crate::error::{Error, Result};
use crate::rng::{derive, seeded};

pub const GENERATOR_VERSION: &str = "phantom-v1";

const HU_AIR: f64 = -1000.0;
const HU_SOFT_TISSUE: f64 = 40.0;
const HU_VESSEL: f64 = 200.0;
const LESION_CONTRAST: f64 = 20.0;

/// An explicitly requested lesion sphere.
#[derive(Clone, Debug)]
pub struct LesionSpec {
    /// (slice, row, col) center.
    pub center: (usize, usize, usize),
    pub radius: f64,
    /// Additive HU contrast against whatever lies beneath.
    pub contrast_hu: f64,
}

#[derive(Clone, Debug)]
pub struct OrganSpec {
    pub center: (f64, f64, f64),
    pub semi_axes: (f64, f64, f64),
    pub hu: f64,
}

#[derive(Clone, Debug)]
pub struct PhantomConfig {
    pub organ_count: (usize, usize),
    pub lesion_count: (usize, usize),
    pub vessel_count: (usize, usize),
    /// Painted last, after all randomized structures, so adding one does
    /// not shift the random draws.
    pub explicit_lesions: Vec<LesionSpec>,
}

impl Default for PhantomConfig {
    fn default() -> Self {
        Self {
            organ_count: (4, 7),
            lesion_count: (2, 4),
            vessel_count: (2, 4),
            explicit_lesions: Vec::new(),
        }
    }
}

/// What was painted where; drives the region-mean oracles.
#[derive(Clone, Debug, Default)]
pub struct PhantomLayout {
    pub body_semi_axes: (f64, f64),
    pub organs: Vec<OrganSpec>,
    pub lesions: Vec<LesionSpec>,
}

pub fn generate_phantom(seed: u64, dims: (usize, usize, usize)) -> Result<Volume> {
    generate_phantom_with(seed, dims, &PhantomConfig::default()).map(|(v, _)| v)
}

pub fn generate_phantom_with(
    seed: u64,
    dims: (usize, usize, usize),
    config: &PhantomConfig,
) -> Result<(Volume, PhantomLayout)> {
    let (slices, rows, cols) = dims;
    if slices < 9 || rows < 64 || cols < 64 {
        return Err(Error::arg(format!(
            "phantom dims {dims:?} below minimum (9, 64, 64)"
        )));
    }
    for l in &config.explicit_lesions {
        if l.center.0 >= slices || l.center.1 >= rows || l.center.2 >= cols {
            return Err(Error::arg(format!(
                "explicit lesion center {:?} outside dims {dims:?}",
                l.center
            )));
        }
    }
    let mut rng = seeded(derive(seed, 0x70, 0));
    let mut hu = vec![HU_AIR; slices * rows * cols];
    let mut layout = PhantomLayout::default();

    // body ellipse, constant across slices
    let (cy, cx) = (rows as f64 / 2.0, cols as f64 / 2.0);
    let body_ry = rows as f64 * rng.gen_range(0.38..0.43);
    let body_rx = cols as f64 * rng.gen_range(0.42..0.47);
    layout.body_semi_axes = (body_ry, body_rx);
    let inside_body = |r: f64, c: f64| -> bool {
        let dy = (r - cy) / body_ry;
        let dx = (c - cx) / body_rx;
        dy * dy + dx * dx <= 1.0
    };
    for s in 0..slices {
        for r in 0..rows {
            for c in 0..cols {
                if inside_body(r as f64, c as f64) {
                    hu[(s * rows + r) * cols + c] = HU_SOFT_TISSUE;
                }
            }
        }
    }

    // ellipsoidal organs
    let organ_count = rng.gen_range(config.organ_count.0..=config.organ_count.1);
    for _ in 0..organ_count {
        let organ = OrganSpec {
            center: (
                rng.gen_range(1.0..slices as f64 - 1.0),
                cy + rng.gen_range(-0.55..0.55) * body_ry,
                cx + rng.gen_range(-0.55..0.55) * body_rx,
            ),
            semi_axes: (
                rng.gen_range(1.5..(slices as f64 / 2.5).max(2.5)),
                rng.gen_range(0.05..0.18) * rows as f64,
                rng.gen_range(0.05..0.18) * cols as f64,
            ),
            hu: rng.gen_range(-100.0..100.0),
        };
        paint_ellipsoid(&mut hu, dims, &organ, &inside_body);
        layout.organs.push(organ);
    }

    // thin vessels drifting through the slices
    let vessel_count = rng.gen_range(config.vessel_count.0..=config.vessel_count.1);
    for _ in 0..vessel_count {
        let mut y = cy + rng.gen_range(-0.5..0.5) * body_ry;
        let mut x = cx + rng.gen_range(-0.5..0.5) * body_rx;
        let radius = rng.gen_range(0.9..1.6);
        let (dy, dx) = (rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0));
        for s in 0..slices {
            paint_disc(&mut hu, dims, s, (y, x), radius, HU_VESSEL, &inside_body);
            y += dy + rng.gen_range(-0.8..0.8);
            x += dx + rng.gen_range(-0.8..0.8);
        }
    }

    // randomized lesions, then explicit ones
    let lesion_count = rng.gen_range(config.lesion_count.0..=config.lesion_count.1);
    for _ in 0..lesion_count {
        let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
        let lesion = LesionSpec {
            center: (
                rng.gen_range(1..slices - 1),
                (cy + rng.gen_range(-0.45..0.45) * body_ry) as usize,
                (cx + rng.gen_range(-0.45..0.45) * body_rx) as usize,
            ),
            radius: rng.gen_range(2.0..4.5),
            contrast_hu: sign * LESION_CONTRAST,
        };
        paint_lesion(&mut hu, dims, &lesion, &inside_body);
        layout.lesions.push(lesion);
    }
    for lesion in &config.explicit_lesions {
        paint_lesion(&mut hu, dims, lesion, &inside_body);
        layout.lesions.push(lesion.clone());
    }

    let data = hu
        .into_iter()
        .map(|v| (v as f32).clamp(HU_MIN, HU_MAX))
        .collect();
    let volume = Volume::new(
        dims,
        (3.0, 0.7, 0.7),
        data,
        Provenance {
            seed,
            generator_version: GENERATOR_VERSION.to_string(),
            dose_fraction: 1.0,
            clamped_voxels: 0,
        },
    )?;
    Ok((volume, layout))
}

/// Voxels inside a lesion sphere, for the region-mean oracle.
pub fn lesion_mask(dims: (usize, usize, usize), lesion: &LesionSpec) -> Vec<usize> {
    let (slices, rows, cols) = dims;
    let (cs, cr, cc) = (
        lesion.center.0 as f64,
        lesion.center.1 as f64,
        lesion.center.2 as f64,
    );
    // slices are thicker than pixels; weight z distance accordingly
    let mut mask = Vec::new();
    for s in 0..slices {
        for r in 0..rows {
            for c in 0..cols {
                let dz = (s as f64 - cs) * 2.0;
                let dy = r as f64 - cr;
                let dx = c as f64 - cc;
                if (dz * dz + dy * dy + dx * dx).sqrt() <= lesion.radius {
                    mask.push((s * rows + r) * cols + c);
                }
            }
        }
    }
    mask
}

fn paint_lesion(
    hu: &mut [f64],
    dims: (usize, usize, usize),
    lesion: &LesionSpec,
    inside_body: &impl Fn(f64, f64) -> bool,
) {
    for idx in lesion_mask(dims, lesion) {
        let r = (idx / dims.2) % dims.1;
        let c = idx % dims.2;
        if inside_body(r as f64, c as f64) {
            hu[idx] += lesion.contrast_hu;
        }
    }
}

fn paint_ellipsoid(
    hu: &mut [f64],
    dims: (usize, usize, usize),
    organ: &OrganSpec,
    inside_body: &impl Fn(f64, f64) -> bool,
) {
    let (slices, rows, cols) = dims;
    for s in 0..slices {
        let dz = (s as f64 - organ.center.0) / organ.semi_axes.0;
        if dz.abs() > 1.0 {
            continue;
        }
        for r in 0..rows {
            let dy = (r as f64 - organ.center.1) / organ.semi_axes.1;
            for c in 0..cols {
                let dx = (c as f64 - organ.center.2) / organ.semi_axes.2;
                if dz * dz + dy * dy + dx * dx <= 1.0 && inside_body(r as f64, c as f64) {
                    hu[(s * rows + r) * cols + c] = organ.hu;
                }
            }
        }
    }
}

fn paint_disc(
    hu: &mut [f64],
    dims: (usize, usize, usize),
    slice: usize,
    center: (f64, f64),
    radius: f64,
    value: f64,
    inside_body: &impl Fn(f64, f64) -> bool,
) {
    let (y, x) = center;
    let (_, rows, cols) = dims;
    let r0 = ((y - radius).floor().max(0.0)) as usize;
    let r1 = ((y + radius).ceil().min(rows as f64 - 1.0)) as usize;
    let c0 = ((x - radius).floor().max(0.0)) as usize;
    let c1 = ((x + radius).ceil().min(cols as f64 - 1.0)) as usize;
    for r in r0..=r1 {
        for c in c0..=c1 {
            let dy = r as f64 - y;
            let dx = c as f64 - x;
            if (dy * dy + dx * dx).sqrt() <= radius && inside_body(r as f64, c as f64) {
                hu[(slice * rows + r) * cols + c] = value;
            }
        }
    }
}
