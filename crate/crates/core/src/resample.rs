//! Uniform geodesic resampling of a node chain.

use crate::error::{Error, Result};
use crate::types::Point;

/// Cumulative arc length along a raw chain.
#[derive(Debug, Clone, PartialEq)]
pub struct GeodesicProfile {
    cumulative: Vec<f64>,
}

impl GeodesicProfile {
    /// `cumulative()[j]` is the arc length from the first node to node `j`.
    pub fn cumulative(&self) -> &[f64] {
        &self.cumulative
    }

    pub fn total(&self) -> f64 {
        *self.cumulative.last().unwrap()
    }

    /// Target spacing `L / (M - 1)`.
    pub fn target_gap(&self) -> f64 {
        self.total() / (self.cumulative.len() - 1) as f64
    }
}

pub fn geodesic_profile(chain: &[Point]) -> Result<GeodesicProfile> {
    if chain.len() < 2 {
        return Err(Error::InvalidChain(format!("{} nodes, need at least 2", chain.len())));
    }
    let mut cumulative = Vec::with_capacity(chain.len());
    let mut acc = 0.0;
    cumulative.push(0.0);
    for w in chain.windows(2) {
        acc += (w[0] - w[1]).norm();
        cumulative.push(acc);
    }
    if !(acc > 0.0) || !acc.is_finite() {
        return Err(Error::DegenerateChain);
    }
    Ok(GeodesicProfile { cumulative })
}

/// Places node `m` at arc length `m * L / (M - 1)` along `chain`, by linear
/// interpolation inside the segment that contains it. The first and last
/// nodes are copied unchanged.
pub fn uniform_resample(chain: &[Point], profile: &GeodesicProfile) -> Vec<Point> {
    let cum = profile.cumulative();
    let m = chain.len();
    debug_assert_eq!(cum.len(), m);
    let gap = profile.target_gap();
    let mut out = Vec::with_capacity(m);
    out.push(chain[0]);
    let mut q = 0;
    for k in 1..m - 1 {
        let target = k as f64 * gap;
        // First segment with cum[q] <= target < cum[q + 1]. Zero-length
        // segments never satisfy this and are skipped.
        while q + 2 < m && !(target - cum[q] >= 0.0 && target - cum[q + 1] < 0.0) {
            q += 1;
        }
        let seg = chain[q] - chain[q + 1];
        let len = seg.norm();
        let along = target - cum[q];
        let p = if len > 0.0 { chain[q] - seg * (along / len) } else { chain[q + 1] };
        out.push(p);
    }
    out.push(chain[m - 1]);
    out
}

/// Convenience wrapper: profile then resample.
pub fn resample(chain: &[Point]) -> Result<Vec<Point>> {
    let profile = geodesic_profile(chain)?;
    Ok(uniform_resample(chain, &profile))
}
