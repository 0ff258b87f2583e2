use std::fmt::Write as _;

use polypseg_core::checks::{gradient_suite, CheckResult, SuiteOptions};

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};

pub fn table(results: &[CheckResult]) -> String {
    let mut out = format!("{:<20}{:>14}{:>9}{:>9}  status\n", "check", "max_rel_err", "checked", "skipped");
    for r in results {
        let _ = writeln!(
            out,
            "{:<20}{:>14.3e}{:>9}{:>9}  {}",
            r.name,
            r.max_error,
            r.checked,
            r.skipped,
            if r.passed { "pass" } else { "FAIL" }
        );
    }
    out
}

/// Runs the finite-difference suite and writes `gradcheck.txt`. Any
/// failing check is an error naming it.
pub fn cmd_gradcheck(cfg: &RunConfig, flip_sign: bool) -> CliResult<Vec<CheckResult>> {
    let opts = SuiteOptions {
        seed: cfg.seed,
        flip_sign,
        ..Default::default()
    };
    let results = gradient_suite(&opts)?;
    let text = table(&results);
    print!("{text}");
    cfg.echo()?;
    let path = cfg.output.join("gradcheck.txt");
    std::fs::write(&path, &text).map_err(|e| CliError::io(&path, e))?;
    let failed: Vec<&str> = results.iter().filter(|r| !r.passed).map(|r| r.name.as_str()).collect();
    if failed.is_empty() {
        Ok(results)
    } else {
        Err(CliError::CheckFailed(format!("gradient check failed for {}", failed.join(", "))))
    }
}
