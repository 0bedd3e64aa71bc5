//! Per-step loss CSV.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::Result;

pub const LOSS_LOG_HEADER: &str = "step,epoch,mse,perceptual,adversarial_G,critic_loss,gp,lr_G,lr_D";

#[derive(Clone, Copy, Debug)]
pub struct LossRow {
    pub step: usize,
    pub epoch: usize,
    pub mse: f64,
    pub perceptual: f64,
    pub adversarial_g: f64,
    pub critic_loss: f64,
    pub gp: f64,
    pub lr_g: f64,
    pub lr_d: f64,
}

pub struct LossLogger {
    out: BufWriter<File>,
    rows: usize,
}

impl LossLogger {
    pub fn create(path: &Path) -> Result<Self> {
        let mut out = BufWriter::new(File::create(path)?);
        writeln!(out, "{LOSS_LOG_HEADER}")?;
        out.flush()?;
        Ok(Self { out, rows: 0 })
    }

    /// Appends one row and flushes, so aborted runs keep their history.
    pub fn log(&mut self, row: &LossRow) -> Result<()> {
        writeln!(
            self.out,
            "{},{},{:.9e},{:.9e},{:.9e},{:.9e},{:.9e},{:.9e},{:.9e}",
            row.step,
            row.epoch,
            row.mse,
            row.perceptual,
            row.adversarial_g,
            row.critic_loss,
            row.gp,
            row.lr_g,
            row.lr_d
        )?;
        self.out.flush()?;
        self.rows += 1;
        Ok(())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }
}
