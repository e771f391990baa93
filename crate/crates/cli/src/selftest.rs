use longsv::grad::op_suite;
use longsv::model::{adapter_identity_suite, composition_suite};
use longsv::trials::eer_oracle_suite;

use crate::config::Config;
use crate::{CliError, Result};

/// Maximum relative gradient error accepted by the finite-difference checks.
pub const GRAD_TOLERANCE: f64 = 1e-5;
pub const GRAD_SHAPES: usize = 10;
pub const ORACLE_SETS: usize = 200;

/// Prints one line per check and fails if any check fails.
pub fn run(seed: u64, cfg: &Config) -> Result<()> {
    let mut failed = Vec::new();
    let mut line = |name: &str, ok: bool, detail: String| {
        println!("{} {name}: {detail}", if ok { "PASS" } else { "FAIL" });
        if !ok {
            failed.push(name.to_string());
        }
    };

    let ops = op_suite(seed, GRAD_SHAPES).map_err(|e| CliError::Selftest(e.to_string()))?;
    for c in ops {
        line(
            &format!("grad {}", c.name),
            c.worst < GRAD_TOLERANCE,
            format!("{} shapes, max rel err {:.2e}", c.shapes, c.worst),
        );
    }
    for c in composition_suite(seed, GRAD_SHAPES)? {
        line(
            &format!("composition {}", c.name),
            c.worst < GRAD_TOLERANCE,
            format!("{} shapes, max rel err {:.2e}", c.shapes, c.worst),
        );
    }

    let o = eer_oracle_suite(seed, ORACLE_SETS)?;
    line(
        "eer oracle",
        o.passed(),
        format!(
            "{} sets, {} outside gap (worst {:.2e} of gap), {} transform mismatches, hand case {:.2}",
            o.sets, o.failures, o.worst_ratio, o.transform_failures, o.hand_case
        ),
    );

    let id = adapter_identity_suite(&cfg.model, seed, 5)?;
    line(
        "adapter identity",
        id.passed(),
        format!(
            "{} inputs, fta exact {}, ra exact {}, embedding exact {}",
            id.inputs, id.fta_forward, id.ra_forward, id.embedding
        ),
    );

    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Selftest(failed.join(", ")))
    }
}
