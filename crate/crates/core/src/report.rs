//! CSV bodies shared by the command-line tool and the tests.
//!
//! Every file starts with a `# format_version=… config_digest=…` line followed
//! by a header row. Floats use Rust's shortest round-trip formatting, so equal
//! values always produce equal bytes.

use std::fmt::Write as _;

use crate::config::{RunConfig, FORMAT_VERSION};
use crate::error::Result;
use crate::sim::replicate_outcomes;
use crate::statistic::{model_params, r_statistic};
use crate::suites::SuiteOutcome;

pub const SIMULATE_CSV_HEADER: &str = "replication,logZ1,logZ2,r";
pub const VERIFY_CSV_HEADER: &str = "diagnostic,x,value,envelope_lo,envelope_hi,pass";

pub fn csv_preamble(cfg: &RunConfig) -> String {
    format!(
        "# format_version={FORMAT_VERSION} config_digest={}\n",
        cfg.digest()
    )
}

/// One row `(replication, logZ1, logZ2, r)` per replication of `cfg`.
pub fn simulation_csv(cfg: &RunConfig, workers: usize) -> Result<String> {
    let sim = cfg.sim_config()?;
    let params = model_params(&sim, cfg.quad_order)?;
    let outcomes = replicate_outcomes(&sim, workers)?;
    let mut out = csv_preamble(cfg);
    out.push_str(SIMULATE_CSV_HEADER);
    out.push('\n');
    for (i, o) in outcomes.iter().enumerate() {
        let r = r_statistic(o.log_z1, sim.n, o.log_z2, sim.m, &params)?.r;
        let _ = writeln!(out, "{i},{},{},{r}", o.log_z1, o.log_z2);
    }
    Ok(out)
}

/// One row per check of every suite; `x` is empty for scalar checks.
pub fn verify_csv(cfg: &RunConfig, outcomes: &[SuiteOutcome]) -> String {
    let mut out = csv_preamble(cfg);
    out.push_str(VERIFY_CSV_HEADER);
    out.push('\n');
    for row in outcomes.iter().flat_map(|o| &o.rows) {
        let x = row.x.map_or_else(String::new, |v| v.to_string());
        let _ = writeln!(
            out,
            "{},{x},{},{},{},{}",
            row.diagnostic, row.value, row.envelope_lo, row.envelope_hi, row.pass
        );
    }
    out
}
