//! Synthetic CT data pipeline: phantom volumes, low-dose noise
//! simulation, HU windowing and patch extraction.

mod noise;
mod patches;
mod phantom;
mod volume;
mod window;

pub use noise::{insert_poisson_noise, NoiseConfig};
pub use patches::{extract_patches, PatchConfig, PatchSample};
pub use phantom::{generate_phantom, generate_phantom_with, LesionSpec, PhantomConfig, PhantomLayout};
pub use volume::{list_volume_pairs, Provenance, Volume, VolumeSidecar, HU_MAX, HU_MIN};
pub use window::WindowSpec;
