//! Small polyline helpers shared by resampling, metrics and the simulator.

use crate::types::Point;

/// Euclidean distance from `p` to the closed segment `a`–`b`.
pub fn point_segment_distance(p: &Point, a: &Point, b: &Point) -> f64 {
    let ab = b - a;
    let len2 = ab.norm_squared();
    if len2 == 0.0 {
        return (p - a).norm();
    }
    let t = (p - a).dot(&ab) / len2;
    if t <= 0.0 {
        (p - a).norm()
    } else if t >= 1.0 {
        (p - b).norm()
    } else {
        (p - (a + ab * t)).norm()
    }
}

/// Sum of segment lengths.
pub fn polyline_length(pts: &[Point]) -> f64 {
    pts.windows(2).map(|w| (w[1] - w[0]).norm()).sum()
}

/// Point at arc length `s` along `pts`, clamped to the endpoints.
pub fn point_at_arc_length(pts: &[Point], s: f64) -> Point {
    let mut acc = 0.0;
    for w in pts.windows(2) {
        let len = (w[1] - w[0]).norm();
        if len > 0.0 && acc + len >= s {
            let t = ((s - acc) / len).clamp(0.0, 1.0);
            return w[0] + (w[1] - w[0]) * t;
        }
        acc += len;
    }
    *pts.last().expect("non-empty polyline")
}

/// Samples `count` points uniformly in arc length, first and last included.
pub fn sample_uniform(pts: &[Point], count: usize) -> Vec<Point> {
    let total = polyline_length(pts);
    if count == 1 {
        return vec![pts[0]];
    }
    let mut out = Vec::with_capacity(count);
    let mut seg = 0;
    let mut acc = 0.0;
    for k in 0..count {
        if k == count - 1 {
            out.push(*pts.last().unwrap());
            break;
        }
        let s = total * k as f64 / (count - 1) as f64;
        loop {
            let len = (pts[seg + 1] - pts[seg]).norm();
            if acc + len >= s || seg + 2 == pts.len() {
                let t = if len > 0.0 { ((s - acc) / len).clamp(0.0, 1.0) } else { 0.0 };
                out.push(pts[seg] + (pts[seg + 1] - pts[seg]) * t);
                break;
            }
            acc += len;
            seg += 1;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn segment_distance_cases() {
        let a = Point::new(-1.0, 0.0, 0.0);
        let b = Point::new(1.0, 0.0, 0.0);
        assert_eq!(point_segment_distance(&Point::new(0.0, 1.0, 0.0), &a, &b), 1.0);
        let d = point_segment_distance(&Point::new(2.0, 1.0, 0.0), &a, &b);
        assert!((d - 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(point_segment_distance(&Point::new(3.0, 4.0, 0.0), &a, &a), (16.0f64 + 16.0).sqrt());
    }

    #[test]
    fn uniform_samples_on_right_angle() {
        let pts = [Point::new(0., 0., 0.), Point::new(1., 0., 0.), Point::new(1., 1., 0.)];
        let s = sample_uniform(&pts, 5);
        let expect = [(0., 0.), (0.5, 0.), (1., 0.), (1., 0.5), (1., 1.)];
        for (p, (x, y)) in s.iter().zip(expect) {
            assert!((p.x - x).abs() < 1e-12 && (p.y - y).abs() < 1e-12);
        }
        assert!((point_at_arc_length(&pts, 1.5) - Point::new(1., 0.5, 0.)).norm() < 1e-12);
    }
}
