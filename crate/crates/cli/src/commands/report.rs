use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use polypseg_core::dataset::{synth_dataset, write_sample};
use polypseg_core::metrics::{summary_table, MetricsReport};

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::figures;

/// Parses a `loss.csv` written by `train`.
pub fn read_losses(path: &Path) -> CliResult<Vec<(u64, f64)>> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    text.lines()
        .skip(1)
        .filter(|l| !l.is_empty())
        .map(|l| {
            let bad = || CliError::Data(format!("{}: malformed line {l:?}", path.display()));
            let (it, loss) = l.split_once(',').ok_or_else(bad)?;
            Ok((it.parse().map_err(|_| bad())?, loss.parse().map_err(|_| bad())?))
        })
        .collect()
}

/// First iteration at which the trailing `window`-iteration mean loss is at
/// or below `threshold`.
pub fn first_below(losses: &[(u64, f64)], window: usize, threshold: f64) -> Option<u64> {
    if window == 0 || losses.len() < window {
        return None;
    }
    losses
        .windows(window)
        .find(|w| w.iter().map(|p| p.1).sum::<f64>() / window as f64 <= threshold)
        .map(|w| w[window - 1].0)
}

/// Collects loss traces and metric summaries from run directories into
/// `<output>/report.txt`, redrawing each run's loss figure.
pub fn cmd_report(cfg: &RunConfig, runs: &[PathBuf]) -> CliResult<String> {
    if runs.is_empty() {
        return Err(CliError::Config("report needs at least one run directory".into()));
    }
    let mut out = String::new();
    for run in runs {
        let _ = writeln!(out, "== {}", run.display());
        let loss_path = run.join("loss.csv");
        let metrics_path = run.join("metrics.json");
        let mut found = false;
        if loss_path.exists() {
            found = true;
            let losses = read_losses(&loss_path)?;
            let values: Vec<f64> = losses.iter().map(|p| p.1).collect();
            figures::loss_curve(&values, &run.join("loss.png"))?;
            if let Some(&(it, last)) = losses.last() {
                let tail = &values[values.len().saturating_sub(50)..];
                let mean = tail.iter().sum::<f64>() / tail.len() as f64;
                let _ = writeln!(out, "iterations {it}, last loss {last:.5}, mean of last {} {mean:.5}", tail.len());
            } else {
                let _ = writeln!(out, "no training iterations");
            }
        }
        if metrics_path.exists() {
            found = true;
            let text = std::fs::read_to_string(&metrics_path).map_err(|e| CliError::io(&metrics_path, e))?;
            let report: MetricsReport = serde_json::from_str(&text)
                .map_err(|e| CliError::Data(format!("{}: {e}", metrics_path.display())))?;
            out.push_str(&summary_table(&run.display().to_string(), &report));
        }
        if !found {
            return Err(CliError::Data(format!("{} holds neither loss.csv nor metrics.json", run.display())));
        }
    }
    print!("{out}");
    std::fs::create_dir_all(&cfg.output).map_err(|e| CliError::io(&cfg.output, e))?;
    let path = cfg.output.join("report.txt");
    std::fs::write(&path, &out).map_err(|e| CliError::io(&path, e))?;
    Ok(out)
}

/// Writes the configured synthetic corpus as images, masks and depth maps
/// under `<output>`.
pub fn cmd_synth(cfg: &RunConfig) -> CliResult<usize> {
    let synth = cfg.data.synthetic.unwrap_or_default();
    let samples = synth_dataset(&synth)?;
    cfg.echo()?;
    for s in &samples {
        write_sample(s, &cfg.output)?;
    }
    println!("wrote {} frames to {}", samples.len(), cfg.output.display());
    Ok(samples.len())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn threshold_crossing_uses_trailing_mean() {
        let l: Vec<(u64, f64)> = (1..=6).map(|i| (i, [1.0, 1.0, 0.1, 0.1, 0.1, 0.1][i as usize - 1])).collect();
        assert_eq!(first_below(&l, 2, 0.1), Some(4));
        assert_eq!(first_below(&l, 1, 0.1), Some(3));
        assert_eq!(first_below(&l, 3, 0.01), None);
        assert_eq!(first_below(&l, 10, 1.0), None);
    }
}
