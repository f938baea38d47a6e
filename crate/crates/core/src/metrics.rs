//! Evaluation metrics against ground truth, and trace aggregation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::point_segment_distance;
use crate::tracker::StageTimings;
use crate::types::Point;

/// Frames excluded from aggregates by default (unoccluded start-up phase).
pub const DEFAULT_WARMUP: usize = 120;

/// Distance from `p` to the piecewise-linear curve through `chain`.
pub fn point_to_pwl(p: &Point, chain: &[Point]) -> f64 {
    match chain {
        [] => f64::INFINITY,
        [only] => (p - only).norm(),
        _ => chain
            .windows(2)
            .map(|w| point_segment_distance(p, &w[0], &w[1]))
            .fold(f64::INFINITY, f64::min),
    }
}

/// Mean distance from the nodes of `est` to the curve through `truth`.
pub fn per_node_error(est: &[Point], truth: &[Point]) -> f64 {
    est.iter().map(|y| point_to_pwl(y, truth)).sum::<f64>() / est.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameError {
    /// Estimate nodes against the truth curve.
    pub forward: f64,
    /// Truth nodes against the estimate curve.
    pub backward: f64,
    pub symmetric: f64,
}

pub fn frame_error(est: &[Point], truth: &[Point]) -> FrameError {
    let forward = per_node_error(est, truth);
    let backward = per_node_error(truth, est);
    FrameError {
        forward,
        backward,
        symmetric: 0.5 * (forward + backward),
    }
}

/// Linear-interpolation ("inclusive") percentile of sorted data, `p` in
/// `[0, 1]`.
pub fn percentile(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = p * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    /// Sample standard deviation; 0 for a single value.
    pub std: f64,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len();
        if n == 0 {
            return Self { mean: f64::NAN, std: f64::NAN };
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = if n > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Self { mean, std }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimingSummary {
    pub visibility: MeanStd,
    pub em: MeanStd,
    pub upe: MeanStd,
    pub resample: MeanStd,
    pub total: MeanStd,
}

impl TimingSummary {
    pub fn of(timings: &[StageTimings]) -> Self {
        let pick = |f: fn(&StageTimings) -> f64| MeanStd::of(&timings.iter().map(f).collect::<Vec<_>>());
        Self {
            visibility: pick(|t| t.visibility),
            em: pick(|t| t.em),
            upe: pick(|t| t.upe),
            resample: pick(|t| t.resample),
            total: pick(|t| t.total()),
        }
    }
}

/// Per-frame row used by [`aggregate`]; what a trace CSV holds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameStats {
    pub frame: usize,
    pub error: Option<f64>,
    pub timings: Option<StageTimings>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub frames: usize,
    pub warmup: usize,
    pub scored_frames: usize,
    pub mean_error: f64,
    pub q1_error: f64,
    pub median_error: f64,
    pub q3_error: f64,
    pub max_error: f64,
    /// Seconds per frame, over frames after the warm-up window. Absent when
    /// any kept frame lacks timings.
    pub timing: Option<TimingSummary>,
}

/// Error statistics and per-stage timing over frames with index
/// `>= warmup`. Frames without an error value are skipped for the error
/// statistics.
pub fn aggregate(rows: &[FrameStats], warmup: usize) -> Result<Summary> {
    if rows.is_empty() {
        return Err(Error::EmptyTrace);
    }
    let kept: Vec<&FrameStats> = rows.iter().filter(|r| r.frame >= warmup).collect();
    let mut errors: Vec<f64> = kept.iter().filter_map(|r| r.error).collect();
    if errors.is_empty() {
        return Err(Error::Trace(format!("no scored frames after warm-up of {warmup}")));
    }
    errors.sort_by(f64::total_cmp);
    let timings: Option<Vec<StageTimings>> = kept.iter().map(|r| r.timings).collect();
    Ok(Summary {
        frames: rows.len(),
        warmup,
        scored_frames: errors.len(),
        mean_error: errors.iter().sum::<f64>() / errors.len() as f64,
        q1_error: percentile(&errors, 0.25),
        median_error: percentile(&errors, 0.5),
        q3_error: percentile(&errors, 0.75),
        max_error: *errors.last().unwrap(),
        timing: timings.map(|t| TimingSummary::of(&t)),
    })
}
