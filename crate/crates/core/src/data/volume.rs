//! CT volumes in Hounsfield units, with sidecar-plus-blob file I/O.
//!
//! On disk a volume is a JSON sidecar (`<base>.json`: dims, spacing,
//! dtype, window hint, provenance) next to a raw little-endian f32 blob
//! (`<base>.raw`, row-major slice/row/col). Slices can additionally be
//! exported as 16-bit PGM for eyeballing.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::window::WindowSpec;
use crate::error::{Error, Result};

pub const HU_MIN: f32 = -1024.0;
pub const HU_MAX: f32 = 3071.0;

/// Where a volume came from and how it was degraded.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub seed: u64,
    pub generator_version: String,
    /// 1.0 for clean volumes.
    pub dose_fraction: f64,
    /// Voxels whose simulated counts were clamped during noise insertion.
    pub clamped_voxels: u64,
}

#[derive(Clone, Debug)]
pub struct Volume {
    /// (slices, rows, cols)
    pub dims: (usize, usize, usize),
    /// mm per axis, same order as `dims`.
    pub spacing: (f64, f64, f64),
    /// HU values, row-major slice/row/col.
    pub data: Vec<f32>,
    pub provenance: Provenance,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct VolumeSidecar {
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    pub dtype: String,
    pub window: Option<WindowSpec>,
    pub provenance: Provenance,
}

impl Volume {
    pub fn new(
        dims: (usize, usize, usize),
        spacing: (f64, f64, f64),
        data: Vec<f32>,
        provenance: Provenance,
    ) -> Result<Self> {
        let numel = dims.0 * dims.1 * dims.2;
        if data.len() != numel {
            return Err(Error::shape(format!(
                "volume dims {dims:?} imply {numel} voxels, got {}",
                data.len()
            )));
        }
        Ok(Self {
            dims,
            spacing,
            data,
            provenance,
        })
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn voxel(&self, slice: usize, row: usize, col: usize) -> f32 {
        self.data[(slice * self.dims.1 + row) * self.dims.2 + col]
    }

    pub fn slice_data(&self, slice: usize) -> &[f32] {
        let plane = self.dims.1 * self.dims.2;
        &self.data[slice * plane..(slice + 1) * plane]
    }

    pub fn hu_in_range(&self) -> bool {
        self.data.iter().all(|&v| (HU_MIN..=HU_MAX).contains(&v))
    }

    /// Writes `<base>.json` and `<base>.raw`.
    pub fn save(&self, base: &Path, window_hint: Option<WindowSpec>) -> Result<()> {
        let sidecar = VolumeSidecar {
            dims: [self.dims.0, self.dims.1, self.dims.2],
            spacing: [self.spacing.0, self.spacing.1, self.spacing.2],
            dtype: "f32le".to_string(),
            window: window_hint,
            provenance: self.provenance.clone(),
        };
        fs::write(
            base.with_extension("json"),
            serde_json::to_string_pretty(&sidecar)?,
        )?;
        let mut blob = Vec::with_capacity(self.data.len() * 4);
        for v in &self.data {
            blob.extend_from_slice(&v.to_le_bytes());
        }
        fs::write(base.with_extension("raw"), blob)?;
        Ok(())
    }

    /// Loads from `<base>.json` + `<base>.raw` (accepts either path).
    pub fn load(path: &Path) -> Result<(Self, Option<WindowSpec>)> {
        let base = path.with_extension("");
        let sidecar: VolumeSidecar =
            serde_json::from_str(&fs::read_to_string(base.with_extension("json"))?)?;
        if sidecar.dtype != "f32le" {
            return Err(Error::CorruptFile(format!(
                "unsupported dtype {:?} in {}",
                sidecar.dtype,
                base.display()
            )));
        }
        let blob = fs::read(base.with_extension("raw"))?;
        let numel: usize = sidecar.dims.iter().product();
        if blob.len() != numel * 4 {
            return Err(Error::CorruptFile(format!(
                "{}: blob holds {} bytes, sidecar implies {}",
                base.display(),
                blob.len(),
                numel * 4
            )));
        }
        let data: Vec<f32> = blob
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::CorruptFile(format!(
                "{}: non-finite voxel",
                base.display()
            )));
        }
        let volume = Self {
            dims: (sidecar.dims[0], sidecar.dims[1], sidecar.dims[2]),
            spacing: (sidecar.spacing[0], sidecar.spacing[1], sidecar.spacing[2]),
            data,
            provenance: sidecar.provenance.clone(),
        };
        Ok((volume, sidecar.window))
    }

    /// Exports one slice as a 16-bit PGM, mapping the window to 0..65535.
    pub fn write_pgm_slice(&self, slice: usize, window: WindowSpec, path: &Path) -> Result<()> {
        if slice >= self.dims.0 {
            return Err(Error::arg(format!(
                "slice {slice} out of range for {} slices",
                self.dims.0
            )));
        }
        let (rows, cols) = (self.dims.1, self.dims.2);
        let mut f = fs::File::create(path)?;
        write!(f, "P5\n{cols} {rows}\n65535\n")?;
        let mut body = Vec::with_capacity(rows * cols * 2);
        for &hu in self.slice_data(slice) {
            let v = (window.normalize(hu as f64) * 65535.0).round() as u16;
            body.extend_from_slice(&v.to_be_bytes());
        }
        f.write_all(&body)?;
        Ok(())
    }
}

/// Scans a directory for `<stem>_clean.json` / `<stem>_low.json` volume
/// pairs, sorted by stem.
pub fn list_volume_pairs(dir: &Path) -> Result<Vec<(PathBuf, PathBuf)>> {
    let mut pairs = Vec::new();
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        let name = match path.file_name().and_then(|n| n.to_str()) {
            Some(n) => n,
            None => continue,
        };
        if let Some(stem) = name.strip_suffix("_clean.json") {
            let low = dir.join(format!("{stem}_low.json"));
            if low.exists() {
                pairs.push((path.clone(), low));
            }
        }
    }
    pairs.sort();
    Ok(pairs)
}
