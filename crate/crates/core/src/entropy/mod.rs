//! Entropy pairs, boundary-adapted test functions and discrete entropy residuals.

pub mod chain;
pub mod cutoff;
pub mod eta;
pub mod residual;

use std::io::Write;

pub use chain::check_chain_rule;
pub use cutoff::{build_partition, CutoffKind, PartitionOfUnity, ShiftedMollifier, SpatialCutoff, TimeProfile, TimeShape};
pub use eta::{make_eta, EntropyFunction, Orientation};
pub use residual::{
    entropy_residual, DissipationForm, EntropyTestPair, ResidualEvaluator, ResidualOptions, ResidualTerms, TestClass,
};

use crate::error::Result;
use crate::model::BoxDomain;

/// Overlap used for the default partition of unity.
pub const DEFAULT_OVERLAP: f64 = 0.25;

/// Default battery: `delta in {0.05, 0.2}`, `z in {0, q/4, q/2, 3q/4}` with `q = max xi`,
/// both orientations, three time profiles and every partition member, keeping
/// only admissible combinations.
pub fn default_battery(domain: &BoxDomain, horizon: f64, xi_max: f64) -> Result<Vec<EntropyTestPair>> {
    let partition = build_partition(domain, DEFAULT_OVERLAP)?;
    let mut out = Vec::new();
    for delta in [0.05, 0.2] {
        for q in 0..4 {
            let z = xi_max * q as f64 / 4.0;
            for orientation in [Orientation::Plus, Orientation::Minus] {
                let eta = make_eta(delta, z, orientation)?;
                for member in &partition.members {
                    if !member.cutoff.is_interior() && !eta.vanishes_at_zero() {
                        continue;
                    }
                    for time in TimeProfile::all(horizon) {
                        out.push(EntropyTestPair::new(eta, time, member.cutoff.clone())?);
                    }
                }
            }
        }
    }
    Ok(out)
}

/// One CSV row of a residual report.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualRow {
    pub pair: String,
    pub path: usize,
    pub residual: f64,
    pub tolerance: f64,
    pub pass: bool,
}

pub fn write_residual_csv<W: Write>(rows: &[ResidualRow], mut w: W) -> Result<()> {
    writeln!(w, "pair,path,residual,tolerance,verdict")?;
    for r in rows {
        writeln!(w, "{},{},{:e},{:e},{}", r.pair, r.path, r.residual, r.tolerance, if r.pass { "pass" } else { "fail" })?;
    }
    Ok(())
}
