//! Small IO helpers shared by the subcommands.

use std::path::PathBuf;

use anyhow::{Context, Result};
use ske::gp::FitReport;

/// 17 significant digits: enough to round-trip any f64 exactly.
pub fn fmt17(v: f64) -> String {
    format!("{v:.16e}")
}

/// Write to the path, or stdout when none is given.
pub fn write_text(out: &Option<PathBuf>, text: &str) -> Result<()> {
    match out {
        Some(p) => std::fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            print!("{text}");
            use std::io::Write;
            std::io::stdout().flush()?;
            Ok(())
        }
    }
}

/// Read the first numeric column of a CSV-ish file, skipping header lines.
pub fn read_column(path: &PathBuf) -> Result<Vec<f64>> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut vals = Vec::new();
    for line in text.lines() {
        let field = line.split(',').next().unwrap_or("").trim();
        if field.is_empty() {
            continue;
        }
        match field.parse::<f64>() {
            Ok(v) => vals.push(v),
            Err(_) => continue, // header
        }
    }
    if vals.is_empty() {
        anyhow::bail!("no numeric values found in {}", path.display());
    }
    Ok(vals)
}

/// Read `x,y` pairs (CSV with optional header).
pub fn read_xy(path: &PathBuf) -> Result<(Vec<f64>, Vec<f64>)> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for line in text.lines() {
        let mut it = line.split(',');
        let (Some(a), Some(b)) = (it.next(), it.next()) else {
            continue;
        };
        if let (Ok(x), Ok(y)) = (a.trim().parse::<f64>(), b.trim().parse::<f64>()) {
            xs.push(x);
            ys.push(y);
        }
    }
    if xs.is_empty() {
        anyhow::bail!("no numeric x,y rows found in {}", path.display());
    }
    Ok((xs, ys))
}

/// FitReport rendered as JSON.
pub fn fit_report_json(report: &FitReport) -> serde_json::Value {
    let p = report.params.len();
    let fisher: Vec<Vec<f64>> = (0..p)
        .map(|j| (0..p).map(|k| report.fisher[(j, k)]).collect())
        .collect();
    serde_json::json!({
        "params": report
            .param_names
            .iter()
            .zip(&report.params)
            .map(|(n, v)| serde_json::json!({"name": n, "value": v}))
            .collect::<Vec<_>>(),
        "nll": report.nll,
        "fisher": fisher,
        "implied_sd": report.implied_sd,
        "converged": report.converged,
        "hit_iteration_cap": report.hit_iteration_cap,
        "trace": report
            .trace
            .iter()
            .map(|t| serde_json::json!({
                "nll": t.nll,
                "grad_norm": t.grad_norm,
                "step_norm": t.step_norm,
                "step_scale": t.step_scale,
            }))
            .collect::<Vec<_>>(),
    })
}
