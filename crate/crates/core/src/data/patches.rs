//! Training sample extraction: non-overlapping windowed patches pairing a
//! 3-slice low-dose stack with the center normal-dose patch.

use rand::Rng;

use crate::data::volume::Volume;
use crate::data::window::WindowSpec;
use crate::error::{Error, Result};
use crate::rng::{derive, seeded};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// One training item with its source coordinates.
#[derive(Clone, Debug)]
pub struct PatchSample<T> {
    /// `[3, p, p]`, window-normalized low-dose slices (i-1, i, i+1).
    pub low_stack: Tensor<T>,
    /// `[p, p]`, window-normalized normal-dose center patch.
    pub target: Tensor<T>,
    pub slice: usize,
    pub row0: usize,
    pub col0: usize,
}

#[derive(Clone, Copy, Debug)]
pub struct PatchConfig {
    pub patch: usize,
    /// Half slice window; the stack holds `2s + 1` slices. Training
    /// supports s = 1 only.
    pub slice_half_window: usize,
    /// Jitter the tile grid origin per slice (seeded) instead of the
    /// fixed 0-origin grid.
    pub random_offset: bool,
    pub seed: u64,
}

impl Default for PatchConfig {
    fn default() -> Self {
        Self {
            patch: 64,
            slice_half_window: 1,
            random_offset: false,
            seed: 0,
        }
    }
}

/// Tiles every interior slice of an aligned low/normal volume pair into
/// non-overlapping patches. Boundary slices (without both neighbors) are
/// skipped. Values are normalized into [0, 1] through `window`.
pub fn extract_patches<T: Scalar>(
    low: &Volume,
    normal: &Volume,
    window: WindowSpec,
    config: &PatchConfig,
) -> Result<Vec<PatchSample<T>>> {
    window.validate()?;
    if low.dims != normal.dims {
        return Err(Error::shape(format!(
            "misaligned volumes: low {:?} vs normal {:?}",
            low.dims, normal.dims
        )));
    }
    if config.slice_half_window != 1 {
        return Err(Error::arg(format!(
            "only a 3-slice window (s=1) is supported, got s={}",
            config.slice_half_window
        )));
    }
    let (slices, rows, cols) = low.dims;
    let p = config.patch;
    if p == 0 || p > rows || p > cols {
        return Err(Error::arg(format!(
            "patch size {p} does not fit into {rows}x{cols} slices"
        )));
    }
    if slices < 3 {
        return Err(Error::arg(format!("need at least 3 slices, got {slices}")));
    }

    let mut rng = seeded(derive(config.seed, 0x50, 0));
    let mut samples = Vec::new();
    for i in 1..slices - 1 {
        let (off_r, off_c) = if config.random_offset {
            (rng.gen_range(0..p), rng.gen_range(0..p))
        } else {
            (0, 0)
        };
        let tiles_r = (rows - off_r) / p;
        let tiles_c = (cols - off_c) / p;
        for tr in 0..tiles_r {
            for tc in 0..tiles_c {
                let r0 = off_r + tr * p;
                let c0 = off_c + tc * p;
                let mut stack = Vec::with_capacity(3 * p * p);
                for s in [i - 1, i, i + 1] {
                    copy_patch(&mut stack, low, s, r0, c0, p, window);
                }
                let mut target = Vec::with_capacity(p * p);
                copy_patch(&mut target, normal, i, r0, c0, p, window);
                samples.push(PatchSample {
                    low_stack: Tensor::from_vec(&[3, p, p], stack)?,
                    target: Tensor::from_vec(&[p, p], target)?,
                    slice: i,
                    row0: r0,
                    col0: c0,
                });
            }
        }
    }
    Ok(samples)
}

fn copy_patch<T: Scalar>(
    out: &mut Vec<T>,
    vol: &Volume,
    slice: usize,
    r0: usize,
    c0: usize,
    p: usize,
    window: WindowSpec,
) {
    for r in r0..r0 + p {
        for c in c0..c0 + p {
            out.push(T::from_f64_lit(window.normalize(vol.voxel(slice, r, c) as f64)));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::noise::{insert_poisson_noise, NoiseConfig};
    use crate::data::phantom::generate_phantom;

    fn volumes(dims: (usize, usize, usize)) -> (Volume, Volume) {
        let clean = generate_phantom(1, dims).unwrap();
        let low = insert_poisson_noise(&clean, 0.25, &NoiseConfig::default(), 2).unwrap();
        (low, clean)
    }

    #[test]
    fn patch_count_and_shapes() {
        let (low, clean) = volumes((9, 128, 128));
        let cfg = PatchConfig::default();
        let samples: Vec<PatchSample<f32>> = extract_patches(&low, &clean, WindowSpec::abdomen(), &cfg).unwrap();
        // (slices - 2) * tiles = 7 * 4
        assert_eq!(samples.len(), 7 * 4);
        for s in &samples {
            assert_eq!(s.low_stack.shape(), &[3, 64, 64]);
            assert_eq!(s.target.shape(), &[64, 64]);
            assert!(s.low_stack.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
            assert!(s.target.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }

    #[test]
    fn misaligned_volumes_rejected() {
        let (low, _) = volumes((9, 64, 64));
        let other = generate_phantom(9, (10, 64, 64)).unwrap();
        let cfg = PatchConfig::default();
        assert!(extract_patches::<f32>(&low, &other, WindowSpec::abdomen(), &cfg).is_err());
    }

    #[test]
    fn only_three_slice_window_supported() {
        let (low, clean) = volumes((9, 64, 64));
        let cfg = PatchConfig {
            slice_half_window: 2,
            ..PatchConfig::default()
        };
        assert!(extract_patches::<f32>(&low, &clean, WindowSpec::abdomen(), &cfg).is_err());
    }

    #[test]
    fn deterministic_including_jitter() {
        let (low, clean) = volumes((9, 96, 96));
        let cfg = PatchConfig {
            patch: 32,
            random_offset: true,
            seed: 5,
            ..PatchConfig::default()
        };
        let a: Vec<PatchSample<f32>> = extract_patches(&low, &clean, WindowSpec::abdomen(), &cfg).unwrap();
        let b: Vec<PatchSample<f32>> = extract_patches(&low, &clean, WindowSpec::abdomen(), &cfg).unwrap();
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.low_stack.data(), y.low_stack.data());
            assert_eq!((x.slice, x.row0, x.col0), (y.slice, y.row0, y.col0));
        }
    }

    #[test]
    fn stack_pairs_neighbor_slices_with_center_target() {
        let (low, clean) = volumes((9, 64, 64));
        let cfg = PatchConfig::default();
        let samples: Vec<PatchSample<f64>> = extract_patches(&low, &clean, WindowSpec::abdomen(), &cfg).unwrap();
        let s = &samples[0];
        assert_eq!(s.slice, 1);
        let w = WindowSpec::abdomen();
        // first voxel of each stack slice comes from slices 0,1,2 of the low volume
        for (d, src_slice) in [(0usize, 0usize), (1, 1), (2, 2)] {
            let expect = w.normalize(low.voxel(src_slice, 0, 0) as f64);
            assert!((s.low_stack.at(&[d, 0, 0]) - expect).abs() < 1e-12);
        }
        let expect_t = w.normalize(clean.voxel(1, 0, 0) as f64);
        assert!((s.target.at(&[0, 0]) - expect_t).abs() < 1e-12);
    }
}
