//! `ridnet gen-data`: paired clean/low-dose synthetic volumes.

use std::path::PathBuf;

use clap::Parser;
use ridnet_core::data::{generate_phantom, insert_poisson_noise, NoiseConfig, WindowSpec};
use ridnet_core::error::{Error, Result};
use ridnet_core::rng::derive;

use crate::config::RunConfig;

#[derive(Parser)]
pub struct Args {
    /// Output directory for volume files and sidecars.
    #[arg(long)]
    pub out: PathBuf,
    /// Base seed; volume i derives its own stream from it.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Number of clean/low pairs to generate.
    #[arg(long)]
    pub volumes: Option<usize>,
    /// Volume dims as slices,rows,cols.
    #[arg(long)]
    pub dims: Option<String>,
    /// Dose fraction in (0, 1]; defaults per protocol.
    #[arg(long)]
    pub dose: Option<f64>,
    /// Windowing protocol: abdomen (dose 0.25) or chest (dose 0.10).
    #[arg(long)]
    pub protocol: Option<String>,
    /// Key-value config file merged between defaults and flags.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

pub fn run(args: Args) -> Result<()> {
    let mut cfg = RunConfig::new();
    cfg.set("seed", 0);
    cfg.set("volumes", 4);
    cfg.set("dims", "9,128,128");
    cfg.set("protocol", "abdomen");
    if let Some(file) = &args.config {
        cfg.merge_file(file)?;
    }
    cfg.set_opt("seed", args.seed);
    cfg.set_opt("volumes", args.volumes);
    cfg.set_opt("dims", args.dims.clone());
    cfg.set_opt("protocol", args.protocol.clone());
    let protocol = cfg.require("protocol")?.to_string();
    let (window, default_dose) = match protocol.as_str() {
        "abdomen" => (WindowSpec::abdomen(), 0.25),
        "chest" => (WindowSpec::chest(), 0.10),
        other => return Err(Error::arg(format!("unknown protocol {other:?}"))),
    };
    if args.dose.is_none() && cfg.get("dose").is_none() {
        cfg.set("dose", default_dose);
    }
    cfg.set_opt("dose", args.dose);
    cfg.set("out", args.out.display());

    let seed: u64 = cfg.parse("seed")?;
    let volumes: usize = cfg.parse("volumes")?;
    let dose: f64 = cfg.parse("dose")?;
    let dims = parse_dims(cfg.require("dims")?)?;
    if !(dose > 0.0 && dose <= 1.0) {
        return Err(Error::arg(format!("dose {dose} not in (0, 1]")));
    }

    cfg.write_resolved(&args.out)?;
    let noise = NoiseConfig::default();
    for i in 0..volumes {
        let clean = generate_phantom(derive(seed, 0x01, i as u64), dims)?;
        let low = insert_poisson_noise(&clean, dose, &noise, derive(seed, 0x02, i as u64))?;
        clean.save(&args.out.join(format!("vol{i:03}_clean")), Some(window))?;
        low.save(&args.out.join(format!("vol{i:03}_low")), Some(window))?;
        println!(
            "vol{i:03}: {}x{}x{} HU, dose {dose}, {} clamped voxels",
            dims.0, dims.1, dims.2, low.provenance.clamped_voxels
        );
    }
    Ok(())
}

pub fn parse_dims(raw: &str) -> Result<(usize, usize, usize)> {
    let parts: Vec<&str> = raw.split(',').map(str::trim).collect();
    if parts.len() != 3 {
        return Err(Error::arg(format!("dims {raw:?} must be slices,rows,cols")));
    }
    let mut out = [0usize; 3];
    for (o, p) in out.iter_mut().zip(&parts) {
        *o = p
            .parse()
            .map_err(|_| Error::arg(format!("bad dims component {p:?}")))?;
    }
    Ok((out[0], out[1], out[2]))
}
