//! Results CSV and the best-configuration summary.

use std::io::Write;

use ktune_core::tuner::ResultRow;
use ktune_core::{SearchSpace, TuningResult};

pub const RESULTS_HEADER: [&str; 8] = [
    "step",
    "config",
    "status",
    "time_ms",
    "global",
    "local",
    "best_so_far",
    "verified",
];

pub fn join_sizes(sizes: &[u64]) -> String {
    sizes.iter().map(u64::to_string).collect::<Vec<_>>().join("x")
}

fn optional(value: Option<f64>) -> String {
    value.map(|v| v.to_string()).unwrap_or_default()
}

/// One row per unique evaluation, in evaluation order.
pub fn write_results(result: &TuningResult, writer: impl Write) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(RESULTS_HEADER)?;
    for row in &result.rows {
        w.write_record([
            row.step.to_string(),
            row.canonical.clone(),
            row.status.to_string(),
            optional(row.time_ms),
            join_sizes(&row.sizes.global),
            join_sizes(&row.sizes.local),
            optional(row.best_so_far),
            row.verification.as_str().to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// `name=label` pairs in parameter order, using display labels.
pub fn describe(space: &SearchSpace, row: &ResultRow) -> String {
    space
        .parameters()
        .iter()
        .zip(row.config.values())
        .map(|(p, v)| format!("{}={}", p.name, p.label(*v)))
        .collect::<Vec<_>>()
        .join(" ")
}

/// Human-readable run summary ending with the best configuration.
pub fn write_summary(result: &TuningResult, space: &SearchSpace, mut out: impl Write) -> std::io::Result<()> {
    let m = &result.metadata;
    writeln!(out, "kernel: {} on {}", m.kernel, m.device)?;
    writeln!(out, "strategy: {} (seed {})", m.strategy, m.seed)?;
    writeln!(
        out,
        "explored {} of {} valid configurations (budget {}, {} failed)",
        result.rows.len(),
        m.valid_configurations,
        m.budget,
        m.failures
    )?;
    match result.best_row() {
        Some(best) => writeln!(
            out,
            "best: {} time_ms={} global={} local={}",
            describe(space, best),
            best.time_ms.map_or_else(String::new, |t| t.to_string()),
            join_sizes(&best.sizes.global),
            join_sizes(&best.sizes.local)
        ),
        None => writeln!(out, "best: none (every evaluated configuration failed)"),
    }
}
