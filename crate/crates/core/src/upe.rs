//! Closed-form placement of occluded nodes.
//!
//! Each occluded node is estimated from the three nearest continuous
//! visible nodes on one side of its occlusion run. Two estimates are
//! blended:
//!
//! * a displacement estimate, moving the node's previous position by a
//!   gamma-attenuated average of the supports' frame-to-frame displacements;
//! * a geometric estimate, extending the last supporting segment by the
//!   node's previous gap (scaled by `b`) and adding the node's previous
//!   bending vector (scaled by `a`).
//!
//! Estimated nodes immediately serve as supports for the next node, so a
//! run is filled one node at a time moving away from the visible side.
//! Runs bounded by visible nodes on both sides are filled from both ends
//! and the two passes are averaged.

use crate::error::{Error, Result};
use crate::types::{Point, TrackerConfig};
use crate::visibility::{OcclusionSegment, VisibilityMask};

/// Number of continuous supporting nodes.
pub const SUPPORT: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UpeParams {
    pub gamma: f64,
    pub a: f64,
    pub b: f64,
    pub alpha: f64,
}

impl From<&TrackerConfig> for UpeParams {
    fn from(cfg: &TrackerConfig) -> Self {
        Self {
            gamma: cfg.gamma,
            a: cfg.a,
            b: cfg.b,
            alpha: cfg.alpha,
        }
    }
}

/// Everything one frame of occlusion inference reads.
#[derive(Debug, Clone, Copy)]
pub struct UpeInputs<'a> {
    /// All M nodes at the previous frame.
    pub prev: &'a [Point],
    /// Current positions; only entries flagged visible in `mask` are used.
    pub current: &'a [Point],
    pub mask: &'a VisibilityMask,
    pub params: UpeParams,
}

/// Gamma-attenuated average of the three supports' displacements,
/// nearest first.
pub fn local_displacement(d1: &Point, d2: &Point, d3: &Point, gamma: f64) -> Point {
    (d1 + d2 * gamma + d3 * (gamma * gamma)) / (1.0 + gamma + gamma * gamma)
}

pub fn displacement_estimate(prev_pos: &Point, delta: &Point) -> Point {
    prev_pos + delta
}

/// Extends the segment `from -> anchor` past `anchor` by `b * prev_gap`.
///
/// When `from` and `anchor` coincide the direction falls back to
/// `fallback_dir` (the node's previous-frame offset from its neighbour);
/// if that is degenerate too, `anchor` is returned.
pub fn proximal_constraint(anchor: &Point, prev_gap: f64, from: &Point, b: f64, fallback_dir: &Point) -> Point {
    let dir = anchor - from;
    let n = dir.norm();
    if n > 0.0 && n.is_finite() {
        return anchor + dir * (b * prev_gap / n);
    }
    let n = fallback_dir.norm();
    if n > 0.0 && n.is_finite() {
        return anchor + fallback_dir * (b * prev_gap / n);
    }
    *anchor
}

/// Bending vector at the target node from previous-frame positions:
/// `(y[m-1] - y[m]) - (y[m-2] - y[m-1])`.
pub fn historical_curvature(near: &Point, target: &Point, far: &Point) -> Point {
    (near - target) - (far - near)
}

pub fn curvature_estimate(proximal: &Point, his: &Point, a: f64) -> Point {
    proximal + his * a
}

pub fn blend(displaced: &Point, geometric: &Point, alpha: f64) -> Point {
    displaced * alpha + geometric * (1.0 - alpha)
}

/// Which side of a run the supports sit on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PassDirection {
    /// Supports at lower indices; the pass walks upward.
    Ascending,
    /// Supports at higher indices; the pass walks downward.
    Descending,
}

impl PassDirection {
    fn offset(self, m: usize, k: usize) -> usize {
        match self {
            PassDirection::Ascending => m - k,
            PassDirection::Descending => m + k,
        }
    }
}

/// True when the `SUPPORT` nodes adjacent to `seg` on the given side exist
/// and are visible.
pub fn has_support(mask: &VisibilityMask, seg: &OcclusionSegment, dir: PassDirection) -> bool {
    let flags = mask.flags();
    match dir {
        PassDirection::Ascending => seg.start >= SUPPORT && flags[seg.start - SUPPORT..seg.start].iter().all(|&v| v),
        PassDirection::Descending => {
            seg.end + SUPPORT < flags.len() && flags[seg.end + 1..=seg.end + SUPPORT].iter().all(|&v| v)
        }
    }
}

/// One unidirectional pass over `seg`. Returns estimates in index order.
pub fn directional_pass(inputs: &UpeInputs, seg: &OcclusionSegment, dir: PassDirection) -> Vec<Point> {
    let UpeParams { gamma, a, b, alpha } = inputs.params;
    let prev = inputs.prev;
    let mut cur = inputs.current.to_vec();
    let order: Vec<usize> = match dir {
        PassDirection::Ascending => seg.indices().collect(),
        PassDirection::Descending => seg.indices().rev().collect(),
    };
    for &m in &order {
        let s1 = dir.offset(m, 1);
        let s2 = dir.offset(m, 2);
        let s3 = dir.offset(m, 3);
        let disp = |i: usize| cur[i] - prev[i];
        let delta = local_displacement(&disp(s1), &disp(s2), &disp(s3), gamma);
        let displaced = displacement_estimate(&prev[m], &delta);

        let prev_gap = (prev[m] - prev[s1]).norm();
        let proximal = proximal_constraint(&cur[s1], prev_gap, &cur[s2], b, &(prev[m] - prev[s1]));
        let his = historical_curvature(&prev[s1], &prev[m], &prev[s2]);
        let geometric = curvature_estimate(&proximal, &his, a);

        cur[m] = blend(&displaced, &geometric, alpha);
    }
    cur[seg.start..=seg.end].to_vec()
}

/// Positions for every index of `seg`.
///
/// Tip runs get a single pass from their visible side; mid runs get both
/// passes averaged, or a single pass when only one side has enough support.
pub fn estimate_segment(inputs: &UpeInputs, seg: &OcclusionSegment) -> Result<Vec<Point>> {
    let asc = has_support(inputs.mask, seg, PassDirection::Ascending);
    let desc = has_support(inputs.mask, seg, PassDirection::Descending);
    match (asc, desc) {
        (true, true) => {
            let up = directional_pass(inputs, seg, PassDirection::Ascending);
            let down = directional_pass(inputs, seg, PassDirection::Descending);
            Ok(up.iter().zip(&down).map(|(u, d)| (u + d) * 0.5).collect())
        }
        (true, false) => Ok(directional_pass(inputs, seg, PassDirection::Ascending)),
        (false, true) => Ok(directional_pass(inputs, seg, PassDirection::Descending)),
        (false, false) => Err(Error::InsufficientSupport {
            start: seg.start,
            end: seg.end,
        }),
    }
}

/// Result of filling every occlusion run in a frame.
#[derive(Debug, Clone)]
pub struct UpeOutcome {
    /// Full chain: visible entries copied from `current`, occluded entries
    /// estimated, unsupported entries left at `current`.
    pub positions: Vec<Point>,
    pub unsupported: Vec<OcclusionSegment>,
}

pub fn estimate_all(inputs: &UpeInputs) -> UpeOutcome {
    let mut positions = inputs.current.to_vec();
    let mut unsupported = Vec::new();
    for seg in inputs.mask.segments() {
        match estimate_segment(inputs, seg) {
            Ok(est) => positions[seg.start..=seg.end].copy_from_slice(&est),
            Err(_) => unsupported.push(*seg),
        }
    }
    UpeOutcome { positions, unsupported }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::visibility::SegmentKind;
    use nalgebra::{Rotation3, Vector3};
    use proptest::prelude::*;

    fn p2(x: f64, y: f64) -> Point {
        Point::new(x, y, 0.0)
    }

    fn close(a: &Point, b: &Point, tol: f64) -> bool {
        (a - b).norm() <= tol
    }

    #[test]
    fn local_displacement_cases() {
        let d = Point::new(1.0, 0.0, 0.0);
        for g in [0.0, 0.3, 0.8, 1.0] {
            assert!(close(&local_displacement(&d, &d, &d, g), &d, 1e-15));
        }
        let d1 = p2(0.3, -2.0);
        assert_eq!(local_displacement(&d1, &p2(9.0, 9.0), &p2(-4.0, 1.0), 0.0), d1);
        let r = local_displacement(&p2(3.0, 0.0), &p2(0.0, 3.0), &p2(0.0, 0.0), 0.5);
        assert!(close(&r, &p2(12.0 / 7.0, 6.0 / 7.0), 1e-15));
    }

    #[test]
    fn displacement_estimate_cases() {
        assert_eq!(displacement_estimate(&p2(0.0, 0.0), &p2(0.0, 0.0)), p2(0.0, 0.0));
        assert_eq!(displacement_estimate(&p2(1.0, 2.0), &p2(0.5, -1.0)), p2(1.5, 1.0));
    }

    #[test]
    fn proximal_constraint_cases() {
        let fb = p2(1.0, 0.0);
        assert_eq!(proximal_constraint(&p2(1.0, 0.0), 1.0, &p2(0.0, 0.0), 1.0, &fb), p2(2.0, 0.0));
        assert_eq!(proximal_constraint(&p2(1.0, 0.0), 1.0, &p2(0.0, 0.0), 0.0, &fb), p2(1.0, 0.0));
        // Straight, equally spaced, static chain: the extension hits the true node.
        let chain: Vec<Point> = (0..5).map(|i| Point::new(2.0 * i as f64, -1.0 * i as f64, 0.5)).collect();
        let gap = (chain[4] - chain[3]).norm();
        let est = proximal_constraint(&chain[3], gap, &chain[2], 1.0, &(chain[4] - chain[3]));
        assert!(close(&est, &chain[4], 1e-12));
    }

    #[test]
    fn proximal_constraint_degenerate() {
        let anchor = p2(1.0, 1.0);
        let est = proximal_constraint(&anchor, 2.0, &anchor, 1.0, &p2(0.0, 3.0));
        assert_eq!(est, p2(1.0, 3.0));
        assert_eq!(proximal_constraint(&anchor, 2.0, &anchor, 1.0, &Point::zeros()), anchor);
    }

    #[test]
    fn historical_curvature_cases() {
        let line: Vec<Point> = (0..3).map(|i| p2(i as f64 * 1.5, i as f64 * 0.5)).collect();
        assert!(close(&historical_curvature(&line[1], &line[2], &line[0]), &Point::zeros(), 1e-15));
        let his = historical_curvature(&p2(1.0, 0.0), &p2(2.0, 1.0), &p2(0.0, 0.0));
        assert_eq!(his, p2(0.0, -1.0));
        let s = 3.25;
        let scaled = historical_curvature(&p2(s, 0.0), &p2(2.0 * s, s), &p2(0.0, 0.0));
        assert!(close(&scaled, &(his * s), 1e-15));
    }

    #[test]
    fn curvature_and_blend_cases() {
        let y = p2(2.0, 0.0);
        assert_eq!(curvature_estimate(&y, &p2(5.0, 5.0), 0.0), y);
        assert_eq!(curvature_estimate(&y, &Point::zeros(), 0.6), y);
        assert!(close(&curvature_estimate(&y, &p2(0.0, -1.0), 0.6), &p2(2.0, -0.6), 1e-15));
        let (u, v) = (p2(0.0, 0.0), p2(4.0, 0.0));
        assert_eq!(blend(&u, &v, 1.0), u);
        assert_eq!(blend(&u, &v, 0.0), v);
        assert_eq!(blend(&u, &v, 0.75), p2(1.0, 0.0));
    }

    fn straight(m: usize) -> Vec<Point> {
        (0..m).map(|i| Point::new(10.0 * i as f64, 5.0 * i as f64, -2.0 * i as f64)).collect()
    }

    fn params(b: f64) -> UpeParams {
        UpeParams {
            gamma: 0.8,
            a: 0.6,
            b,
            alpha: 0.75,
        }
    }

    #[test]
    fn rigid_translation_tip_is_exact() {
        let prev = straight(12);
        let v = Point::new(3.0, -1.5, 0.25);
        let truth: Vec<Point> = prev.iter().map(|p| p + v).collect();
        let mut flags = vec![true; 12];
        for f in &mut flags[8..] {
            *f = false;
        }
        let mask = VisibilityMask::from_flags(flags);
        let mut current = truth.clone();
        for c in &mut current[8..] {
            *c = Point::new(f64::NAN, f64::NAN, f64::NAN);
        }
        for a in [0.0, 0.6, 2.0] {
            let inputs = UpeInputs {
                prev: &prev,
                current: &current,
                mask: &mask,
                params: UpeParams { a, ..params(1.0) },
            };
            let seg = mask.segments()[0];
            assert_eq!(seg.kind, SegmentKind::Tip);
            let est = estimate_segment(&inputs, &seg).unwrap();
            for (e, t) in est.iter().zip(&truth[8..]) {
                assert!(close(e, t, 1e-9), "{e:?} vs {t:?}");
            }
        }
    }

    #[test]
    fn static_mid_segment_with_alpha_one() {
        let prev: Vec<Point> = (0..16).map(|i| p2(i as f64 * 5.0, (i as f64 * 0.4).sin() * 8.0)).collect();
        let mut flags = vec![true; 16];
        for f in &mut flags[6..10] {
            *f = false;
        }
        let mask = VisibilityMask::from_flags(flags);
        let inputs = UpeInputs {
            prev: &prev,
            current: &prev,
            mask: &mask,
            params: UpeParams { alpha: 1.0, ..params(0.8) },
        };
        let seg = mask.segments()[0];
        assert_eq!(seg.kind, SegmentKind::Mid);
        let est = estimate_segment(&inputs, &seg).unwrap();
        for (e, p) in est.iter().zip(&prev[6..10]) {
            assert!(close(e, p, 1e-12));
        }
    }

    #[test]
    fn all_visible_leaves_chain_unchanged() {
        let prev = straight(8);
        let current: Vec<Point> = prev.iter().map(|p| p + p2(1.0, 1.0)).collect();
        let mask = VisibilityMask::all_visible(8);
        let out = estimate_all(&UpeInputs {
            prev: &prev,
            current: &current,
            mask: &mask,
            params: params(0.8),
        });
        assert_eq!(out.positions, current);
        assert!(out.unsupported.is_empty());
    }

    #[test]
    fn insufficient_support() {
        let prev = straight(8);
        let mut flags = vec![false; 8];
        flags[0] = true;
        flags[1] = true;
        flags[6] = true;
        flags[7] = true;
        let mask = VisibilityMask::from_flags(flags);
        let inputs = UpeInputs {
            prev: &prev,
            current: &prev,
            mask: &mask,
            params: params(0.8),
        };
        let err = estimate_segment(&inputs, &mask.segments()[0]).unwrap_err();
        assert!(matches!(err, Error::InsufficientSupport { start: 2, end: 5 }));
        let out = estimate_all(&inputs);
        assert_eq!(out.unsupported.len(), 1);
        assert_eq!(out.positions, prev);
    }

    #[test]
    fn one_sided_mid_segment_falls_back() {
        let prev = straight(10);
        let v = p2(1.0, 2.0);
        let current: Vec<Point> = prev.iter().map(|p| p + v).collect();
        let mut flags = vec![true; 10];
        flags[2] = false;
        flags[3] = false;
        let mask = VisibilityMask::from_flags(flags);
        let inputs = UpeInputs {
            prev: &prev,
            current: &current,
            mask: &mask,
            params: params(1.0),
        };
        let seg = mask.segments()[0];
        assert_eq!(seg.kind, SegmentKind::Mid);
        assert!(!has_support(&mask, &seg, PassDirection::Ascending));
        let est = estimate_segment(&inputs, &seg).unwrap();
        let single = directional_pass(&inputs, &seg, PassDirection::Descending);
        assert_eq!(est, single);
        assert!(close(&est[0], &current[2], 1e-9));
    }

    fn arb_chain(m: usize) -> impl Strategy<Value = Vec<Point>> {
        prop::collection::vec((-30.0..30.0f64, -30.0..30.0f64, -30.0..30.0f64), m)
            .prop_map(|v| v.into_iter().map(|(x, y, z)| Point::new(x, y, z)).collect())
    }

    fn arb_case() -> impl Strategy<Value = (Vec<Point>, Vec<Point>, Vec<bool>, UpeParams)> {
        (
            arb_chain(14),
            arb_chain(14),
            prop::collection::vec(any::<bool>(), 14),
            (0.0..=1.0f64, 0.0..2.0f64, 0.0..2.0f64, 0.0..=1.0f64),
        )
            .prop_map(|(prev, cur, flags, (gamma, a, b, alpha))| (prev, cur, flags, UpeParams { gamma, a, b, alpha }))
    }

    proptest! {
        #[test]
        fn rigid_equivariance((prev, cur, flags, params) in arb_case(), ax in -1.0..1.0f64, ay in -1.0..1.0f64, angle in -3.0..3.0f64) {
            let mask = VisibilityMask::from_flags(flags);
            let axis = Vector3::new(ax, ay, 0.7).normalize();
            let rot = Rotation3::from_axis_angle(&nalgebra::Unit::new_normalize(axis), angle);
            let t = Point::new(4.0, -7.0, 1.5);
            let tf = |v: &[Point]| v.iter().map(|p| rot * p + t).collect::<Vec<_>>();
            let base = estimate_all(&UpeInputs { prev: &prev, current: &cur, mask: &mask, params });
            let (prev2, cur2) = (tf(&prev), tf(&cur));
            let moved = estimate_all(&UpeInputs { prev: &prev2, current: &cur2, mask: &mask, params });
            prop_assert_eq!(&base.unsupported, &moved.unsupported);
            for (p, q) in base.positions.iter().zip(&moved.positions) {
                prop_assert!((rot * p + t - q).norm() < 1e-9);
            }
        }

        #[test]
        fn alpha_one_ignores_a_and_b((prev, cur, flags, params) in arb_case(), a2 in 0.0..3.0f64, b2 in 0.0..3.0f64) {
            let mask = VisibilityMask::from_flags(flags);
            let p1 = UpeParams { alpha: 1.0, ..params };
            let p2 = UpeParams { alpha: 1.0, a: a2, b: b2, ..params };
            let x = estimate_all(&UpeInputs { prev: &prev, current: &cur, mask: &mask, params: p1 });
            let y = estimate_all(&UpeInputs { prev: &prev, current: &cur, mask: &mask, params: p2 });
            prop_assert_eq!(x.positions, y.positions);
        }

        #[test]
        fn reversal_symmetry((prev, cur, flags, params) in arb_case()) {
            let mask = VisibilityMask::from_flags(flags.clone());
            let rev = |v: &[Point]| v.iter().rev().copied().collect::<Vec<_>>();
            let rmask = VisibilityMask::from_flags(flags.into_iter().rev().collect());
            let a = estimate_all(&UpeInputs { prev: &prev, current: &cur, mask: &mask, params });
            let (rp, rc) = (rev(&prev), rev(&cur));
            let b = estimate_all(&UpeInputs { prev: &rp, current: &rc, mask: &rmask, params });
            prop_assert_eq!(rev(&a.positions), b.positions);
        }

        #[test]
        fn deterministic((prev, cur, flags, params) in arb_case()) {
            let mask = VisibilityMask::from_flags(flags);
            let inputs = UpeInputs { prev: &prev, current: &cur, mask: &mask, params };
            let a = estimate_all(&inputs);
            let b = estimate_all(&inputs);
            let bits = |v: &[Point]| v.iter().flat_map(|p| p.iter().map(|c| c.to_bits()).collect::<Vec<_>>()).collect::<Vec<_>>();
            prop_assert_eq!(bits(&a.positions), bits(&b.positions));
        }
    }
}
