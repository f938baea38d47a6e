//! Node visibility from radius counts against the current point cloud.
//!
//! A node is visible when at least `v_lim` observation points lie strictly
//! within `r_vis` of its previous-frame position.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::types::{NodeChain, Point, PointCloud};

/// Clouds larger than this are counted through a uniform grid.
pub const GRID_THRESHOLD: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SegmentKind {
    /// Run touches the first or last node.
    Tip,
    /// Run bounded by visible nodes on both sides.
    Mid,
}

/// Maximal run of occluded nodes, `start..=end` (0-based).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OcclusionSegment {
    pub start: usize,
    pub end: usize,
    pub kind: SegmentKind,
}

impl OcclusionSegment {
    pub fn len(&self) -> usize {
        self.end - self.start + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn indices(&self) -> std::ops::RangeInclusive<usize> {
        self.start..=self.end
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VisibilityMask {
    flags: Vec<bool>,
    segments: Vec<OcclusionSegment>,
}

impl VisibilityMask {
    pub fn from_flags(flags: Vec<bool>) -> Self {
        let segments = find_segments(&flags);
        Self { flags, segments }
    }

    pub fn all_visible(m: usize) -> Self {
        Self::from_flags(vec![true; m])
    }

    pub fn flags(&self) -> &[bool] {
        &self.flags
    }

    pub fn segments(&self) -> &[OcclusionSegment] {
        &self.segments
    }

    pub fn len(&self) -> usize {
        self.flags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.flags.is_empty()
    }

    pub fn visible_count(&self) -> usize {
        self.flags.iter().filter(|&&v| v).count()
    }

    pub fn visible_indices(&self) -> Vec<usize> {
        (0..self.flags.len()).filter(|&i| self.flags[i]).collect()
    }

    pub fn is_fully_occluded(&self) -> bool {
        !self.flags.iter().any(|&v| v)
    }

    /// Length of the longest run of consecutive visible nodes.
    pub fn longest_visible_run(&self) -> usize {
        let mut best = 0;
        let mut run = 0;
        for &v in &self.flags {
            run = if v { run + 1 } else { 0 };
            best = best.max(run);
        }
        best
    }
}

/// Maximal occluded runs of `mask`, tagged tip or mid.
pub fn segment_occlusions(mask: &VisibilityMask) -> Vec<OcclusionSegment> {
    mask.segments.clone()
}

fn find_segments(flags: &[bool]) -> Vec<OcclusionSegment> {
    let m = flags.len();
    let mut out = Vec::new();
    let mut i = 0;
    while i < m {
        if flags[i] {
            i += 1;
            continue;
        }
        let start = i;
        while i < m && !flags[i] {
            i += 1;
        }
        let end = i - 1;
        let kind = if start == 0 || end == m - 1 {
            SegmentKind::Tip
        } else {
            SegmentKind::Mid
        };
        out.push(OcclusionSegment { start, end, kind });
    }
    out
}

/// Classifies every node of `prev_chain` against `cloud`.
pub fn classify(
    prev_chain: &NodeChain,
    cloud: &PointCloud,
    r_vis: f64,
    v_lim: usize,
) -> Result<VisibilityMask> {
    if prev_chain.dim() != cloud.dim() {
        return Err(Error::DimensionMismatch {
            expected: prev_chain.dim().get(),
            found: cloud.dim().get(),
        });
    }
    let counts = if cloud.len() > GRID_THRESHOLD {
        count_grid(prev_chain.nodes(), cloud.points(), r_vis, v_lim)
    } else {
        count_brute(prev_chain.nodes(), cloud.points(), r_vis, v_lim)
    };
    Ok(VisibilityMask::from_flags(
        counts.into_iter().map(|q| q >= v_lim).collect(),
    ))
}

#[inline]
fn within(p: &Point, node: &Point, r2: f64) -> bool {
    (p - node).norm_squared() < r2
}

/// Neighbour counts, saturated at `cap`.
pub(crate) fn count_brute(nodes: &[Point], points: &[Point], r_vis: f64, cap: usize) -> Vec<usize> {
    let r2 = r_vis * r_vis;
    nodes
        .iter()
        .map(|y| {
            let mut q = 0;
            for x in points {
                if within(x, y, r2) {
                    q += 1;
                    if q >= cap {
                        break;
                    }
                }
            }
            q
        })
        .collect()
}

type Cell = (i64, i64, i64);

fn cell_of(p: &Point, size: f64) -> Cell {
    (
        (p.x / size).floor() as i64,
        (p.y / size).floor() as i64,
        (p.z / size).floor() as i64,
    )
}

/// Same counts as [`count_brute`] using a hash grid with cell size `r_vis`.
/// Candidate points are filtered with the identical strict test, so the two
/// paths agree exactly.
pub(crate) fn count_grid(nodes: &[Point], points: &[Point], r_vis: f64, cap: usize) -> Vec<usize> {
    let r2 = r_vis * r_vis;
    // Slightly oversized cells keep every in-radius neighbour within one
    // cell of the node despite rounding in the division.
    let size = r_vis * (1.0 + 1e-9);
    let mut grid: HashMap<Cell, Vec<usize>> = HashMap::new();
    for (i, p) in points.iter().enumerate() {
        grid.entry(cell_of(p, size)).or_default().push(i);
    }
    nodes
        .iter()
        .map(|y| {
            let (cx, cy, cz) = cell_of(y, size);
            let mut q = 0;
            for dx in -1..=1 {
                for dy in -1..=1 {
                    for dz in -1..=1 {
                        let Some(bucket) = grid.get(&(cx + dx, cy + dy, cz + dz)) else {
                            continue;
                        };
                        for &i in bucket {
                            if within(&points[i], y, r2) {
                                q += 1;
                                if q >= cap {
                                    return q;
                                }
                            }
                        }
                    }
                }
            }
            q
        })
        .collect()
}
