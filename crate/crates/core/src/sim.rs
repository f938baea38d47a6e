//! Synthetic rope sequences with analytic ground truth.
//!
//! The rope is a Catmull-Rom spline through time-interpolated control
//! points, rescaled about its first point to a fixed length every frame.
//! Observations are evenly spaced samples along the curve with Gaussian
//! noise and uniform outliers; points inside an active occluder box are
//! deleted.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{polyline_length, sample_uniform};
use crate::types::{Dim, Point, PointCloud};

/// Dense polyline vertices per spline span.
const SPAN_SAMPLES: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Keyframe {
    pub frame: usize,
    pub control_points: Vec<[f64; 3]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OccluderKey {
    pub frame: usize,
    pub center: [f64; 3],
}

/// Axis-aligned box moving along a keyframed path, active for frames in
/// `active_from..active_until`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Occluder {
    pub half_extents: [f64; 3],
    pub path: Vec<OccluderKey>,
    pub active_from: usize,
    #[serde(default)]
    pub active_until: Option<usize>,
}

impl Occluder {
    pub fn is_active(&self, frame: usize) -> bool {
        frame >= self.active_from && self.active_until.is_none_or(|end| frame < end)
    }

    pub fn region_at(&self, frame: usize) -> BoxRegion {
        let keys: Vec<(usize, Point)> = self.path.iter().map(|k| (k.frame, to_point(k.center))).collect();
        let c = interpolate_keys(&keys, frame, |a, b, t| a + (b - a) * t);
        let h = to_point(self.half_extents);
        BoxRegion {
            min: (c - h).into(),
            max: (c + h).into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxRegion {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl BoxRegion {
    pub fn contains(&self, p: &Point) -> bool {
        (0..3).all(|i| p[i] >= self.min[i] && p[i] <= self.max[i])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    /// Number of frames.
    pub duration: usize,
    pub dim: Dim,
    pub node_count: usize,
    pub rope_length: f64,
    pub keyframes: Vec<Keyframe>,
    /// Observation points per unit length.
    pub sample_density: f64,
    pub noise_sigma: f64,
    /// Fraction of emitted points (before occlusion) that are outliers.
    pub outlier_rate: f64,
    pub occluder: Option<Occluder>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameRecord {
    pub frame_index: usize,
    pub cloud: PointCloud,
    /// Node positions uniformly spaced in arc length along the true curve.
    pub ground_truth: Vec<Point>,
    pub occluded_region: Option<BoxRegion>,
}

fn to_point(a: [f64; 3]) -> Point {
    Point::new(a[0], a[1], a[2])
}

fn interpolate_keys<T: Clone>(keys: &[(usize, T)], frame: usize, lerp: impl Fn(&T, &T, f64) -> T) -> T {
    if frame <= keys[0].0 {
        return keys[0].1.clone();
    }
    for w in keys.windows(2) {
        let (f0, ref a) = w[0];
        let (f1, ref b) = w[1];
        if frame <= f1 {
            let t = (frame - f0) as f64 / (f1 - f0) as f64;
            return lerp(a, b, t);
        }
    }
    keys.last().unwrap().1.clone()
}

/// Dense Catmull-Rom polyline through `ctrl`, with mirrored end tangents.
fn catmull_rom(ctrl: &[Point]) -> Vec<Point> {
    let n = ctrl.len();
    if n == 2 {
        return (0..=SPAN_SAMPLES)
            .map(|k| ctrl[0] + (ctrl[1] - ctrl[0]) * (k as f64 / SPAN_SAMPLES as f64))
            .collect();
    }
    let get = |i: isize| -> Point {
        if i < 0 {
            ctrl[0] * 2.0 - ctrl[1]
        } else if i as usize >= n {
            ctrl[n - 1] * 2.0 - ctrl[n - 2]
        } else {
            ctrl[i as usize]
        }
    };
    let mut out = Vec::with_capacity((n - 1) * SPAN_SAMPLES + 1);
    for i in 0..n - 1 {
        let (p0, p1, p2, p3) = (get(i as isize - 1), get(i as isize), get(i as isize + 1), get(i as isize + 2));
        for k in 0..SPAN_SAMPLES {
            let t = k as f64 / SPAN_SAMPLES as f64;
            let (t2, t3) = (t * t, t * t * t);
            out.push(
                (p1 * 2.0 + (p2 - p0) * t + (p0 * 2.0 - p1 * 5.0 + p2 * 4.0 - p3) * t2 + (p1 * 3.0 - p0 - p2 * 3.0 + p3) * t3)
                    * 0.5,
            );
        }
    }
    out.push(ctrl[n - 1]);
    out
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Scenario(format!("{}: {m}", self.name)));
        if self.duration == 0 {
            return fail("duration must be positive");
        }
        if self.node_count < crate::types::MIN_NODES {
            return fail("node_count below minimum 4");
        }
        if !(self.rope_length > 0.0 && self.rope_length.is_finite()) {
            return fail("rope_length must be positive");
        }
        if !(self.sample_density > 0.0 && self.sample_density.is_finite()) {
            return fail("sample_density must be positive");
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return fail("noise_sigma must be >= 0");
        }
        if !(0.0..0.5).contains(&self.outlier_rate) {
            return fail("outlier_rate out of [0,0.5)");
        }
        let Some(first) = self.keyframes.first() else {
            return fail("no keyframes");
        };
        let count = first.control_points.len();
        if count < 2 {
            return fail("need at least 2 control points");
        }
        for w in self.keyframes.windows(2) {
            if w[1].frame <= w[0].frame {
                return fail("keyframes must be strictly increasing");
            }
        }
        for k in &self.keyframes {
            if k.control_points.len() != count {
                return fail("keyframes disagree on control point count");
            }
            if k.control_points.iter().flatten().any(|c| !c.is_finite()) {
                return fail("non-finite control point");
            }
            if self.dim == Dim::Two && k.control_points.iter().any(|c| c[2] != 0.0) {
                return fail("planar scenario with non-zero z");
            }
        }
        if let Some(occ) = &self.occluder {
            if occ.path.is_empty() {
                return fail("occluder without path");
            }
            for w in occ.path.windows(2) {
                if w[1].frame <= w[0].frame {
                    return fail("occluder path must be strictly increasing");
                }
            }
        }
        Ok(())
    }

    /// True curve at `frame` as a dense polyline of length `rope_length`.
    pub fn curve_at(&self, frame: usize) -> Vec<Point> {
        let keys: Vec<(usize, Vec<Point>)> = self
            .keyframes
            .iter()
            .map(|k| (k.frame, k.control_points.iter().copied().map(to_point).collect()))
            .collect();
        let ctrl = interpolate_keys(&keys, frame, |a, b, t| {
            a.iter().zip(b).map(|(p, q)| p + (q - p) * t).collect()
        });
        let mut dense = catmull_rom(&ctrl);
        let scale = self.rope_length / polyline_length(&dense);
        let origin = dense[0];
        for p in &mut dense {
            *p = origin + (*p - origin) * scale;
        }
        dense
    }

    pub fn frame(&self, frame: usize) -> FrameRecord {
        let curve = self.curve_at(frame);
        let ground_truth = sample_uniform(&curve, self.node_count);
        let count = ((self.rope_length * self.sample_density).round() as usize).max(2);
        let mut points = sample_uniform(&curve, count);

        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(frame as u64);
        let planar = self.dim == Dim::Two;
        if self.noise_sigma > 0.0 {
            let normal = Normal::new(0.0, self.noise_sigma).expect("sigma validated");
            for p in &mut points {
                p.x += normal.sample(&mut rng);
                p.y += normal.sample(&mut rng);
                if !planar {
                    p.z += normal.sample(&mut rng);
                }
            }
        }

        if self.outlier_rate > 0.0 {
            let extra = (count as f64 * self.outlier_rate / (1.0 - self.outlier_rate)).round() as usize;
            let (mut lo, mut hi) = (curve[0], curve[0]);
            for p in &curve {
                lo = lo.inf(p);
                hi = hi.sup(p);
            }
            let margin = 0.1 * (hi - lo).max();
            lo.add_scalar_mut(-margin);
            hi.add_scalar_mut(margin);
            if planar {
                lo.z = 0.0;
                hi.z = 0.0;
            }
            for _ in 0..extra {
                let mut p = Point::zeros();
                for i in 0..3 {
                    p[i] = if hi[i] > lo[i] { rng.random_range(lo[i]..hi[i]) } else { lo[i] };
                }
                points.push(p);
            }
        }

        let occluded_region = self
            .occluder
            .as_ref()
            .filter(|o| o.is_active(frame))
            .map(|o| o.region_at(frame));
        if let Some(region) = &occluded_region {
            points.retain(|p| !region.contains(p));
        }

        FrameRecord {
            frame_index: frame,
            cloud: PointCloud::new(self.dim, points).expect("generated points are finite"),
            ground_truth,
            occluded_region,
        }
    }
}

/// Generates every frame of `scenario`. Frames are independent (each has
/// its own RNG stream), so parallel generation matches sequential output.
pub fn generate(scenario: &Scenario) -> Result<Vec<FrameRecord>> {
    scenario.validate()?;
    if let Some(occ) = &scenario.occluder {
        if occ.is_active(0) {
            let region = occ.region_at(0);
            if scenario.curve_at(0).iter().all(|p| region.contains(p)) {
                return Err(Error::Scenario(format!(
                    "{}: occluder covers the whole rope at frame 0",
                    scenario.name
                )));
            }
        }
    }
    Ok((0..scenario.duration).into_par_iter().map(|f| scenario.frame(f)).collect())
}

fn kf(frame: usize, pts: &[[f64; 3]]) -> Keyframe {
    Keyframe {
        frame,
        control_points: pts.to_vec(),
    }
}

/// S-shaped control polygon: one sine period of amplitude `amp` over
/// `width`, in the xy-plane.
fn s_curve(width: f64, amp: f64, count: usize) -> Vec<[f64; 3]> {
    (0..count)
        .map(|i| {
            let u = i as f64 / (count - 1) as f64;
            [u * width, amp * (std::f64::consts::TAU * u).sin(), 0.0]
        })
        .collect()
}

fn base(name: &str, duration: usize, keyframes: Vec<Keyframe>, occluder: Option<Occluder>, seed: u64) -> Scenario {
    Scenario {
        name: name.to_string(),
        duration,
        dim: Dim::Three,
        node_count: 24,
        rope_length: 800.0,
        keyframes,
        sample_density: 1.0,
        noise_sigma: 1.0,
        outlier_rate: 0.02,
        occluder,
        seed,
    }
}

fn static_box(center: [f64; 3], half: [f64; 3], from: usize, until: Option<usize>) -> Occluder {
    Occluder {
        half_extents: half,
        path: vec![OccluderKey { frame: 0, center }],
        active_from: from,
        active_until: until,
    }
}

pub fn straight_static() -> Scenario {
    base("straight_static", 200, vec![kf(0, &[[0.0, 0.0, 0.0], [800.0, 0.0, 0.0]])], None, 1)
}

/// Static S-shaped rope; from frame 120 a box hides part of the lower bend.
pub fn s_static() -> Scenario {
    let ctrl = s_curve(640.0, 70.0, 13);
    base(
        "s_static",
        320,
        vec![kf(0, &ctrl)],
        Some(static_box([480.0, -60.0, 0.0], [60.0, 60.0, 60.0], 120, None)),
        2,
    )
}

/// Straight near half and one bend in the far half, which swings about the
/// middle of the rope. Rotating by `theta` keeps the far half rigid.
fn swung_bend(amp: f64, theta: f64) -> Vec<[f64; 3]> {
    let (sin, cos) = theta.sin_cos();
    (0..13)
        .map(|i| {
            let u = i as f64 / 12.0;
            let x = u * 640.0;
            if u <= 0.5 {
                return [x, 0.0, 0.0];
            }
            let y = -amp * (std::f64::consts::TAU * (u - 0.5)).sin().powi(2);
            let dx = x - 320.0;
            [320.0 + dx * cos - y * sin, dx * sin + y * cos, 0.0]
        })
        .collect()
}

/// The far end is pulled sideways from frame 100, swinging the far half
/// through 30 degrees while its bend sits behind a box that appears at
/// frame 120.
pub fn dynamic() -> Scenario {
    let mut keyframes = vec![kf(0, &swung_bend(90.0, 0.0))];
    for f in (100..=320).step_by(20) {
        let theta = 30f64.to_radians() * (f - 100) as f64 / 220.0;
        keyframes.push(kf(f, &swung_bend(90.0, theta)));
    }
    base(
        "dynamic",
        320,
        keyframes,
        Some(static_box([490.0, -60.0, 0.0], [60.0, 60.0, 60.0], 120, None)),
        3,
    )
}

/// A gently curving rope sliding sideways with its far tip hidden.
pub fn tip_occlusion() -> Scenario {
    let a = [[0.0, 0.0, 0.0], [270.0, 30.0, 0.0], [540.0, 20.0, 0.0], [790.0, -20.0, 0.0]];
    let b = a.map(|p| [p[0], p[1] + 80.0, p[2] + 10.0]);
    base(
        "tip_occlusion",
        240,
        vec![kf(0, &a), kf(240, &b)],
        Some(static_box([760.0, 30.0, 0.0], [70.0, 150.0, 80.0], 40, None)),
        4,
    )
}

/// Every point disappears for a stretch of frames, then returns.
pub fn full_dropout() -> Scenario {
    let ctrl = s_curve(640.0, 80.0, 9);
    base(
        "full_dropout",
        200,
        vec![kf(0, &ctrl)],
        Some(static_box([320.0, 0.0, 0.0], [500.0, 500.0, 500.0], 60, Some(90))),
        5,
    )
}

pub fn builtin_scenarios() -> Vec<Scenario> {
    vec![straight_static(), s_static(), dynamic(), tip_occlusion(), full_dropout()]
}

pub fn builtin(name: &str) -> Option<Scenario> {
    builtin_scenarios().into_iter().find(|s| s.name == name)
}
