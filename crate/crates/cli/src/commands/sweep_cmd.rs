//! `ridnet sweep`: one micro training run per hyperparameter value.

use std::fs;
use std::path::PathBuf;

use clap::Parser;
use ridnet_core::error::{Error, Result};
use ridnet_core::graph::{GraphConfig, ThetaMode};
use ridnet_core::model::ModelConfig;
use ridnet_core::sweep::{run_sweep, SweepAxis, SweepSpec};
use ridnet_core::train::TrainConfig;

use crate::config::RunConfig;

#[derive(Parser)]
pub struct Args {
    /// k_neighbors or block_count.
    #[arg(long)]
    pub axis: String,
    /// Comma-separated values, e.g. 2,4,8,12.
    #[arg(long)]
    pub values: String,
    /// Output directory for the CSV table and per-value run artifacts.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

pub fn run(args: Args) -> Result<()> {
    let axis: SweepAxis = args.axis.parse()?;
    let values: Vec<usize> = args
        .values
        .split(',')
        .map(|v| {
            v.trim()
                .parse()
                .map_err(|_| Error::arg(format!("bad sweep value {v:?}")))
        })
        .collect::<Result<_>>()?;
    if values.is_empty() {
        return Err(Error::arg("sweep needs at least one value"));
    }

    // micro training preset shared by every value
    let train = TrainConfig {
        seed: args.seed,
        epochs: 1,
        batch_size: 4,
        model: ModelConfig {
            graph: GraphConfig {
                k: 4,
                theta: ThetaMode::Diagonal,
                ..GraphConfig::default()
            },
            blocks: 1,
            embed_channels: 6,
            feature_channels: 3,
            tail_channels: 2,
            ecc_hidden: 4,
        },
        ..TrainConfig::desk()
    };
    let spec = SweepSpec {
        axis,
        values: values.clone(),
        train,
        data_seed: args.seed,
        dims: (9, 64, 64),
        dose_fraction: 0.25,
        patch: 16,
        eval_fraction: 0.25,
    };

    let mut cfg = RunConfig::new();
    cfg.set("axis", axis.as_str());
    cfg.set(
        "values",
        values
            .iter()
            .map(|v| v.to_string())
            .collect::<Vec<_>>()
            .join(","),
    );
    cfg.set("seed", args.seed);
    cfg.set("out", args.out.display());
    cfg.write_resolved(&args.out)?;

    let table = run_sweep::<f32>(&spec, &args.out)?;
    let csv_path = args.out.join("sweep.csv");
    fs::write(&csv_path, table.to_csv())?;
    print!("{}", table.to_csv());
    println!("wrote {}", csv_path.display());
    Ok(())
}
