//! CSV and JSON report emission with stable formatting.

use std::path::Path;

use omnitraj_core::metrics::{MetricsReport, SetupMetrics};
use omnitraj_core::train::LossPoint;

use crate::CliError;

pub const METRICS_HEADER: &str = "protocol,setup,variant,seed,ade,fde,min_ade_k,min_fde_k,n";

/// One metrics CSV row; floats use fixed 6-decimal formatting so identical
/// runs produce byte-identical files.
pub fn metrics_row(
    protocol: &str,
    setup: &str,
    variant: &str,
    seed: u64,
    m: &SetupMetrics,
) -> String {
    format!(
        "{protocol},{setup},{variant},{seed},{:.6},{:.6},{:.6},{:.6},{}",
        m.ade, m.fde, m.min_ade_k, m.min_fde_k, m.n_samples
    )
}

pub fn write_metrics_csv(path: &Path, rows: &[String]) -> Result<(), CliError> {
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    for row in rows {
        out.push_str(row);
        out.push('\n');
    }
    std::fs::write(path, out)
        .map_err(|e| CliError::runtime(format!("cannot write {}: {e}", path.display())))
}

pub fn write_metrics_json(path: &Path, reports: &[MetricsReport]) -> Result<(), CliError> {
    let json = serde_json::to_string_pretty(reports).expect("reports serialize");
    std::fs::write(path, json)
        .map_err(|e| CliError::runtime(format!("cannot write {}: {e}", path.display())))
}

pub fn write_loss_csv(path: &Path, curve: &[LossPoint]) -> Result<(), CliError> {
    let mut out = String::from("epoch,split,loss\n");
    for p in curve {
        out.push_str(&format!("{},{},{:.8}\n", p.epoch, p.split, p.loss));
    }
    std::fs::write(path, out)
        .map_err(|e| CliError::runtime(format!("cannot write {}: {e}", path.display())))
}

pub fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text)
        .map_err(|e| CliError::runtime(format!("cannot write {}: {e}", path.display())))
}
