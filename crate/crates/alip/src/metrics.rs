//! Accuracy scoring.
//!
//! AC_i = 1 - sum_k |s_k[i] - est_k[i]| / (2 sum_k |s_k[i]|), per appliance,
//! and ACC with both sums also running over appliances. Values can go
//! negative when the estimate's error mass exceeds twice the truth mass.

use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("ground truth and estimate lengths differ ({gt} vs {est})")]
    LengthMismatch { gt: usize, est: usize },
    #[error("ground truth has zero total mass; accuracy undefined")]
    ZeroGroundTruth,
}

/// Per-appliance accuracy. Errors when the ground-truth series is all zero.
pub fn ac(gt: &[f64], est: &[f64]) -> Result<f64, MetricsError> {
    if gt.len() != est.len() {
        return Err(MetricsError::LengthMismatch {
            gt: gt.len(),
            est: est.len(),
        });
    }
    let truth_mass: f64 = gt.iter().map(|v| v.abs()).sum();
    if truth_mass == 0.0 {
        return Err(MetricsError::ZeroGroundTruth);
    }
    let err_mass: f64 = gt.iter().zip(est).map(|(g, e)| (g - e).abs()).sum();
    Ok(1.0 - err_mass / (2.0 * truth_mass))
}

/// Overall accuracy over a T x n ground truth and estimate, both stored as
/// per-timestep rows.
pub fn acc(gt: &[Vec<f64>], est: &[Vec<f64>]) -> Result<f64, MetricsError> {
    if gt.len() != est.len() {
        return Err(MetricsError::LengthMismatch {
            gt: gt.len(),
            est: est.len(),
        });
    }
    let mut truth_mass = 0.0;
    let mut err_mass = 0.0;
    for (grow, erow) in gt.iter().zip(est) {
        if grow.len() != erow.len() {
            return Err(MetricsError::LengthMismatch {
                gt: grow.len(),
                est: erow.len(),
            });
        }
        for (g, e) in grow.iter().zip(erow) {
            truth_mass += g.abs();
            err_mass += (g - e).abs();
        }
    }
    if truth_mass == 0.0 {
        return Err(MetricsError::ZeroGroundTruth);
    }
    Ok(1.0 - err_mass / (2.0 * truth_mass))
}

/// One block of the per-block accuracy series.
#[derive(Debug, Clone, Serialize)]
pub struct BlockScore {
    pub block: usize,
    /// Timestep range [start, end).
    pub start: usize,
    pub end: usize,
    /// Shorter than the nominal block size (series tail).
    pub partial: bool,
    /// Per-appliance AC; None where the block's truth mass is zero.
    pub ac: Vec<Option<f64>>,
    pub acc: Option<f64>,
}

/// Full report: whole-series AC/ACC plus the per-block series.
#[derive(Debug, Clone, Serialize)]
pub struct AccuracyReport {
    /// None for appliances whose ground truth is all zero.
    pub ac: Vec<Option<f64>>,
    pub acc: Option<f64>,
    pub blocks: Vec<BlockScore>,
    pub block_size: usize,
}

/// Scores an estimate against ground truth, whole-series and per block of
/// `block_size` samples. A short final block is reported with its actual
/// length and flagged partial.
pub fn score(
    gt: &[Vec<f64>],
    est: &[Vec<f64>],
    block_size: usize,
) -> Result<AccuracyReport, MetricsError> {
    assert!(block_size >= 1);
    if gt.len() != est.len() {
        return Err(MetricsError::LengthMismatch {
            gt: gt.len(),
            est: est.len(),
        });
    }
    let n = gt.first().map_or(0, Vec::len);
    let column = |rows: &[Vec<f64>], i: usize| -> Vec<f64> { rows.iter().map(|r| r[i]).collect() };

    let ac_all: Vec<Option<f64>> = (0..n)
        .map(|i| ac(&column(gt, i), &column(est, i)).ok())
        .collect();
    let acc_all = acc(gt, est).ok();

    let mut blocks = Vec::new();
    let mut start = 0;
    let mut index = 0;
    while start < gt.len() {
        let end = (start + block_size).min(gt.len());
        let gblock = &gt[start..end];
        let eblock = &est[start..end];
        blocks.push(BlockScore {
            block: index,
            start,
            end,
            partial: end - start < block_size,
            ac: (0..n)
                .map(|i| ac(&column(gblock, i), &column(eblock, i)).ok())
                .collect(),
            acc: acc(gblock, eblock).ok(),
        });
        start = end;
        index += 1;
    }

    Ok(AccuracyReport {
        ac: ac_all,
        acc: acc_all,
        blocks,
        block_size,
    })
}
