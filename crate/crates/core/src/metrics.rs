//! Displacement metrics and aggregated reports.
//!
//! ADE is the mean Euclidean distance over the prediction horizon, FDE the
//! distance at the final frame, both in meters. `min_ade_k` / `min_fde_k`
//! minimize each metric independently over K predicted modes.

use serde::{Deserialize, Serialize};

/// Mean Euclidean distance between one predicted mode and ground truth.
pub fn ade(pred_mode: &[[f64; 2]], gt: &[[f64; 2]]) -> f64 {
    assert_eq!(
        pred_mode.len(),
        gt.len(),
        "ade horizon mismatch: {} vs {}",
        pred_mode.len(),
        gt.len()
    );
    assert!(!gt.is_empty(), "ade over empty horizon");
    let sum: f64 = pred_mode
        .iter()
        .zip(gt)
        .map(|(p, g)| dist(p, g))
        .sum();
    sum / gt.len() as f64
}

/// Euclidean distance at the final predicted frame.
pub fn fde(pred_mode: &[[f64; 2]], gt: &[[f64; 2]]) -> f64 {
    assert_eq!(
        pred_mode.len(),
        gt.len(),
        "fde horizon mismatch: {} vs {}",
        pred_mode.len(),
        gt.len()
    );
    assert!(!gt.is_empty(), "fde over empty horizon");
    dist(pred_mode.last().unwrap(), gt.last().unwrap())
}

/// Minimum ADE over K modes.
pub fn min_ade_k(modes: &[Vec<[f64; 2]>], gt: &[[f64; 2]]) -> f64 {
    assert!(!modes.is_empty(), "min_ade_k over zero modes");
    modes
        .iter()
        .map(|m| ade(m, gt))
        .fold(f64::INFINITY, f64::min)
}

/// Minimum FDE over K modes (selected independently of min_ade_k).
pub fn min_fde_k(modes: &[Vec<[f64; 2]>], gt: &[[f64; 2]]) -> f64 {
    assert!(!modes.is_empty(), "min_fde_k over zero modes");
    modes
        .iter()
        .map(|m| fde(m, gt))
        .fold(f64::INFINITY, f64::min)
}

fn dist(a: &[f64; 2], b: &[f64; 2]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    (dx * dx + dy * dy).sqrt()
}

/// Aggregate metrics for one evaluation setup, in meters.
///
/// For K-mode predictions, `ade`/`fde` average the per-mode metric over
/// modes (the expected error of an undistinguished mode), while
/// `min_ade_k`/`min_fde_k` take the best mode per sample.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SetupMetrics {
    pub ade: f64,
    pub fde: f64,
    pub min_ade_k: f64,
    pub min_fde_k: f64,
    pub n_samples: usize,
}

/// Metrics keyed by protocol and setup.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct MetricsReport {
    pub protocol: String,
    pub setup: String,
    pub metrics: SetupMetrics,
    pub config_digest: String,
    pub seed: u64,
}

/// Accumulates per-sample metrics into a setup aggregate.
#[derive(Debug, Default, Clone)]
pub struct MetricsAccum {
    ade_sum: f64,
    fde_sum: f64,
    min_ade_sum: f64,
    min_fde_sum: f64,
    n: usize,
}

impl MetricsAccum {
    pub fn push(&mut self, modes: &[Vec<[f64; 2]>], gt: &[[f64; 2]]) {
        let k = modes.len() as f64;
        self.ade_sum += modes.iter().map(|m| ade(m, gt)).sum::<f64>() / k;
        self.fde_sum += modes.iter().map(|m| fde(m, gt)).sum::<f64>() / k;
        self.min_ade_sum += min_ade_k(modes, gt);
        self.min_fde_sum += min_fde_k(modes, gt);
        self.n += 1;
    }

    pub fn merge(&mut self, other: &MetricsAccum) {
        self.ade_sum += other.ade_sum;
        self.fde_sum += other.fde_sum;
        self.min_ade_sum += other.min_ade_sum;
        self.min_fde_sum += other.min_fde_sum;
        self.n += other.n;
    }

    pub fn finish(&self) -> SetupMetrics {
        assert!(self.n > 0, "metrics over zero samples");
        SetupMetrics {
            ade: self.ade_sum / self.n as f64,
            fde: self.fde_sum / self.n as f64,
            min_ade_k: self.min_ade_sum / self.n as f64,
            min_fde_k: self.min_fde_sum / self.n as f64,
            n_samples: self.n,
        }
    }
}

/// Median of a small sample (exact middle for odd lengths).
pub fn median(values: &[f64]) -> f64 {
    assert!(!values.is_empty());
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mid = v.len() / 2;
    if v.len() % 2 == 1 {
        v[mid]
    } else {
        0.5 * (v[mid - 1] + v[mid])
    }
}
