//! `ridnet gradcheck`: finite-difference audits. Exits nonzero when any
//! check exceeds its tolerance.

use clap::Parser;
use ridnet_core::audit::{audit_blocks, audit_model, audit_ops, format_table, AuditResult};
use ridnet_core::error::{Error, Result};

#[derive(Parser)]
pub struct Args {
    /// ops: every differentiable operation; blocks: graph branches,
    /// embedding, critic paths; model: the full generator end to end.
    #[arg(long)]
    pub scope: String,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    /// Number of seeds for the ops scope.
    #[arg(long, default_value_t = 3)]
    pub repeats: u64,
}

pub fn run(args: Args) -> Result<()> {
    let mut results: Vec<AuditResult> = Vec::new();
    match args.scope.as_str() {
        "ops" => {
            for s in 0..args.repeats {
                results.extend(audit_ops(args.seed + s)?);
            }
        }
        "blocks" => results.extend(audit_blocks(args.seed)?),
        "model" => results.extend(audit_model(args.seed)?),
        other => {
            return Err(Error::arg(format!(
                "unknown scope {other:?}, expected ops, blocks or model"
            )))
        }
    }
    print!("{}", format_table(&results));
    let failures = results.iter().filter(|r| !r.passed()).count();
    if failures > 0 {
        return Err(Error::GradCheck(format!(
            "{failures} of {} checks exceeded tolerance",
            results.len()
        )));
    }
    println!("all {} checks within tolerance", results.len());
    Ok(())
}
