//! EM registration of visible nodes to a point cloud.
//!
//! The mixture has one isotropic Gaussian per visible node, all sharing
//! variance `sigma2` and prior weight `(1 - omega) / M`, plus a uniform
//! outlier component of weight `omega` and density `1 / N`.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::types::{Dim, Point, PointCloud, TrackerConfig};

/// Lower bound on the mixture variance (squared length units).
pub const SIGMA2_FLOOR: f64 = 1e-10;

/// Below this many matrix entries the E-step runs on one thread.
const PAR_MIN_ENTRIES: usize = 1 << 16;

#[derive(Debug, Clone, PartialEq)]
pub struct GmmState {
    pub means: Vec<Point>,
    pub sigma2: f64,
    pub omega: f64,
    pub dim: Dim,
    pub n_points: usize,
    pub iteration: usize,
    pub converged: bool,
}

impl GmmState {
    /// Starts a fit at `means`. The variance is warm-started from the
    /// residual of each point to its nearest mean,
    /// `sum_n min_m ||x_n - y_m||^2 / (D N)`.
    pub fn init(means: Vec<Point>, cloud: &PointCloud, omega: f64) -> Self {
        let dim = cloud.dim();
        let n = cloud.len();
        let mut total = 0.0;
        for x in cloud.points() {
            total += means
                .iter()
                .map(|y| (x - y).norm_squared())
                .fold(f64::INFINITY, f64::min);
        }
        let sigma2 = if means.is_empty() || n == 0 {
            1.0
        } else {
            (total / (dim.as_f64() * n as f64)).max(SIGMA2_FLOOR)
        };
        Self {
            means,
            sigma2,
            omega,
            dim,
            n_points: n,
            iteration: 0,
            converged: false,
        }
    }

    /// Starts a fit with the variance averaged over every point/mean pair,
    /// `sum_m sum_n ||x_n - y_m||^2 / (D M N)`.
    pub fn init_all_pairs(means: Vec<Point>, cloud: &PointCloud, omega: f64) -> Self {
        let mut state = Self::init(means, cloud, omega);
        let (m, n) = (state.means.len(), cloud.len());
        if m > 0 && n > 0 {
            let total: f64 = state
                .means
                .iter()
                .map(|y| cloud.points().iter().map(|x| (x - y).norm_squared()).sum::<f64>())
                .sum();
            state.sigma2 = (total / (state.dim.as_f64() * (m * n) as f64)).max(SIGMA2_FLOOR);
        }
        state
    }

    /// Constant `mu` of the posterior denominator.
    fn outlier_ratio(&self, n: usize) -> f64 {
        if self.omega == 0.0 {
            return 0.0;
        }
        let d = self.dim.as_f64();
        let m = self.means.len() as f64;
        (2.0 * std::f64::consts::PI * self.sigma2).powf(d / 2.0) * self.omega * m
            / ((1.0 - self.omega) * n as f64)
    }
}

/// Posterior responsibilities, stored point-major: entry `(m, n)` lives at
/// `n * components + m`.
#[derive(Debug, Clone, PartialEq)]
pub struct Posterior {
    components: usize,
    points: usize,
    probs: Vec<f64>,
    outlier: Vec<f64>,
}

impl Posterior {
    pub fn components(&self) -> usize {
        self.components
    }

    pub fn points(&self) -> usize {
        self.points
    }

    pub fn get(&self, m: usize, n: usize) -> f64 {
        self.probs[n * self.components + m]
    }

    /// Responsibilities of all Gaussian components for point `n`.
    pub fn column(&self, n: usize) -> &[f64] {
        &self.probs[n * self.components..(n + 1) * self.components]
    }

    /// Posterior of the uniform outlier component for point `n`.
    pub fn outlier(&self, n: usize) -> f64 {
        self.outlier[n]
    }
}

fn posterior_column(state: &GmmState, mu: f64, x: &Point, out: &mut [f64]) -> f64 {
    let inv = 1.0 / (2.0 * state.sigma2);
    let mut min_delta = f64::INFINITY;
    for (o, y) in out.iter_mut().zip(&state.means) {
        let delta = (x - y).norm_squared() * inv;
        *o = delta;
        min_delta = min_delta.min(delta);
    }
    let mut sum = 0.0;
    for o in out.iter_mut() {
        *o = (-(*o - min_delta)).exp();
        sum += *o;
    }
    // mu rescaled by the same shift; may overflow to +inf for far points.
    let shifted_mu = if mu == 0.0 { 0.0 } else { mu * min_delta.exp() };
    let denom = sum + shifted_mu;
    if shifted_mu.is_infinite() {
        out.iter_mut().for_each(|o| *o = 0.0);
        return 1.0;
    }
    for o in out.iter_mut() {
        *o /= denom;
    }
    shifted_mu / denom
}

/// Posterior of every component for every point.
pub fn e_step(state: &GmmState, cloud: &PointCloud) -> Posterior {
    let m = state.means.len();
    let n = cloud.len();
    let mu = state.outlier_ratio(n);
    let mut probs = vec![0.0; m * n];
    let mut outlier = vec![0.0; n];
    if m == 0 {
        outlier.iter_mut().for_each(|o| *o = 1.0);
    } else if m * n >= PAR_MIN_ENTRIES {
        probs
            .par_chunks_mut(m)
            .zip(outlier.par_iter_mut())
            .zip(cloud.points().par_iter())
            .for_each(|((col, o), x)| *o = posterior_column(state, mu, x, col));
    } else {
        for ((col, o), x) in probs.chunks_mut(m).zip(outlier.iter_mut()).zip(cloud.points()) {
            *o = posterior_column(state, mu, x, col);
        }
    }
    Posterior {
        components: m,
        points: n,
        probs,
        outlier,
    }
}

/// Closed-form maximizer of the expected complete-data log-likelihood.
///
/// Components with zero total responsibility keep their mean and are left
/// out of the variance update.
pub fn m_step(post: &Posterior, cloud: &PointCloud, state: &GmmState) -> GmmState {
    let m = state.means.len();
    let pts = cloud.points();
    let mut means = state.means.clone();
    let mut weights = vec![0.0; m];
    let mut sums = vec![Point::zeros(); m];
    for (n, x) in pts.iter().enumerate() {
        for (k, &p) in post.column(n).iter().enumerate() {
            weights[k] += p;
            sums[k] += x * p;
        }
    }
    for k in 0..m {
        if weights[k] > 0.0 {
            means[k] = sums[k] / weights[k];
        }
    }

    let mut resid = 0.0;
    let mut total = 0.0;
    for (n, x) in pts.iter().enumerate() {
        for (k, &p) in post.column(n).iter().enumerate() {
            if weights[k] > 0.0 {
                resid += p * (x - means[k]).norm_squared();
                total += p;
            }
        }
    }
    let sigma2 = if total > 0.0 {
        (resid / (state.dim.as_f64() * total)).max(SIGMA2_FLOOR)
    } else {
        state.sigma2
    };

    GmmState {
        means,
        sigma2,
        omega: state.omega,
        dim: state.dim,
        n_points: pts.len(),
        iteration: state.iteration + 1,
        converged: false,
    }
}

/// Expected complete-data log-likelihood over the Gaussian components,
/// dropping terms constant in `(means, sigma2)`.
pub fn expected_log_likelihood(post: &Posterior, cloud: &PointCloud, means: &[Point], sigma2: f64, dim: Dim) -> f64 {
    let d = dim.as_f64();
    let mut q = 0.0;
    for (n, x) in cloud.points().iter().enumerate() {
        for (k, &p) in post.column(n).iter().enumerate() {
            q += p * (-0.5 * d * sigma2.ln() - (x - means[k]).norm_squared() / (2.0 * sigma2));
        }
    }
    q
}

/// Log-likelihood of the full mixture, outlier component included.
pub fn log_likelihood(state: &GmmState, cloud: &PointCloud) -> f64 {
    let n = cloud.len();
    let m = state.means.len() as f64;
    let d = state.dim.as_f64();
    let log_norm = -0.5 * d * (2.0 * std::f64::consts::PI * state.sigma2).ln();
    let log_gauss_w = if state.omega < 1.0 { (1.0 - state.omega).ln() - m.ln() } else { f64::NEG_INFINITY };
    let log_out = if state.omega > 0.0 { state.omega.ln() - (n as f64).ln() } else { f64::NEG_INFINITY };
    let mut terms = Vec::with_capacity(state.means.len() + 1);
    let mut total = 0.0;
    let mut comp = 0.0;
    for x in cloud.points() {
        terms.clear();
        for y in &state.means {
            terms.push(log_gauss_w + log_norm - (x - y).norm_squared() / (2.0 * state.sigma2));
        }
        terms.push(log_out);
        let top = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let s: f64 = terms.iter().map(|t| (t - top).exp()).sum();
        // Kahan summation keeps the total reproducible to ~1 ulp.
        let v = top + s.ln() - comp;
        let t = total + v;
        comp = (t - total) - v;
        total = t;
    }
    total
}

#[derive(Debug, Clone)]
pub struct Registration {
    /// Refined positions, in the order of the initial nodes.
    pub positions: Vec<Point>,
    pub state: GmmState,
    pub iterations: usize,
}

/// Alternates E and M steps from `init` until the relative change of
/// `sigma2` drops below `cfg.em_tol` or `cfg.em_max_iters` is reached.
pub fn register(init: &[Point], cloud: &PointCloud, cfg: &TrackerConfig) -> Result<Registration> {
    register_observed(init, None, cloud, cfg, |_| {})
}

/// Like [`register`], but starts EM from the given variance instead of the
/// nearest-node estimate. Trackers pass the previous frame's converged value.
pub fn register_warm(init: &[Point], sigma2: f64, cloud: &PointCloud, cfg: &TrackerConfig) -> Result<Registration> {
    register_observed(init, Some(sigma2), cloud, cfg, |_| {})
}

/// Runs EM from `init` (and `sigma2` when given), calling `on_iter` with the
/// initial state and after every M-step.
pub fn register_observed(
    init: &[Point],
    sigma2: Option<f64>,
    cloud: &PointCloud,
    cfg: &TrackerConfig,
    mut on_iter: impl FnMut(&GmmState),
) -> Result<Registration> {
    if cloud.is_empty() {
        return Err(Error::NoObservations);
    }
    if init.is_empty() {
        return Err(Error::InvalidChain("no visible nodes to register".into()));
    }
    let mut state = GmmState::init(init.to_vec(), cloud, cfg.omega);
    if let Some(s2) = sigma2.filter(|s| s.is_finite() && *s > 0.0) {
        state.sigma2 = s2.max(SIGMA2_FLOOR);
    }
    on_iter(&state);
    while state.iteration < cfg.em_max_iters {
        let post = e_step(&state, cloud);
        let next = m_step(&post, cloud, &state);
        let rel = (next.sigma2 - state.sigma2).abs() / state.sigma2;
        state = next;
        on_iter(&state);
        if rel < cfg.em_tol {
            state.converged = true;
            break;
        }
    }
    Ok(Registration {
        positions: state.means.clone(),
        iterations: state.iteration,
        state,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cloud2(pts: &[(f64, f64)]) -> PointCloud {
        PointCloud::new(Dim::Two, pts.iter().map(|&(x, y)| Point::new(x, y, 0.0)).collect()).unwrap()
    }

    fn state(means: Vec<Point>, sigma2: f64, omega: f64, dim: Dim, n: usize) -> GmmState {
        GmmState {
            means,
            sigma2,
            omega,
            dim,
            n_points: n,
            iteration: 0,
            converged: false,
        }
    }

    #[test]
    fn single_component_takes_everything() {
        let cloud = cloud2(&[(0.0, 0.0), (5.0, 1.0), (-300.0, 2.0)]);
        let s = state(vec![Point::new(1.0, 1.0, 0.0)], 0.3, 0.0, Dim::Two, 3);
        let p = e_step(&s, &cloud);
        for n in 0..3 {
            assert_eq!(p.get(0, n), 1.0);
            assert_eq!(p.outlier(n), 0.0);
        }
    }

    #[test]
    fn equidistant_split() {
        let cloud = cloud2(&[(0.0, 1.0)]);
        let s = state(
            vec![Point::new(-1.0, 0.0, 0.0), Point::new(1.0, 0.0, 0.0)],
            0.7,
            0.0,
            Dim::Two,
            1,
        );
        let p = e_step(&s, &cloud);
        assert_eq!(p.get(0, 0), 0.5);
        assert_eq!(p.get(1, 0), 0.5);
    }

    #[test]
    fn scalar_posterior_matches_high_precision() {
        // e^-1 / (e^-1 + 2 pi sigma^2), evaluated at 40 digits.
        let cases = [
            (0.05, 0.539382058010857821995261596188463697381),
            (1.0, 0.05531136067539399048308422963884655823211),
            (2.5, 0.02288399108077432074588649532089119300905),
        ];
        for (s2, expect) in cases {
            let r = (2.0f64 * s2).sqrt();
            let cloud = cloud2(&[(r, 0.0)]);
            let s = state(vec![Point::zeros()], s2, 0.5, Dim::Two, 1);
            let p = e_step(&s, &cloud);
            assert!((p.get(0, 0) - expect).abs() < 1e-14, "{} vs {expect}", p.get(0, 0));
            assert!((p.get(0, 0) + p.outlier(0) - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn far_points_go_to_outlier() {
        let cloud = cloud2(&[(1e6, 0.0)]);
        let s = state(vec![Point::zeros(), Point::new(1.0, 0.0, 0.0)], 1e-3, 0.1, Dim::Two, 1);
        let p = e_step(&s, &cloud);
        assert_eq!(p.outlier(0), 1.0);
        assert_eq!(p.column(0), &[0.0, 0.0]);
    }

    #[test]
    fn m_step_centroid() {
        let cloud = cloud2(&[(0.0, 0.0), (2.0, 0.0)]);
        let s = state(vec![Point::new(5.0, 5.0, 0.0)], 1.0, 0.0, Dim::Two, 2);
        let post = Posterior {
            components: 1,
            points: 2,
            probs: vec![1.0, 1.0],
            outlier: vec![0.0, 0.0],
        };
        let next = m_step(&post, &cloud, &s);
        assert_eq!(next.means[0], Point::new(1.0, 0.0, 0.0));
        // residual 1 + 1 over D * total = 2 * 2
        assert_eq!(next.sigma2, 0.5);
    }

    #[test]
    fn zero_residual_hits_floor() {
        let cloud = cloud2(&[(0.0, 0.0), (10.0, 0.0)]);
        let means = vec![Point::zeros(), Point::new(10.0, 0.0, 0.0)];
        let s = state(means.clone(), 1.0, 0.0, Dim::Two, 2);
        let post = e_step(&s, &cloud);
        let next = m_step(&post, &cloud, &s);
        assert_eq!(next.sigma2, SIGMA2_FLOOR);
        assert!((next.means[0] - means[0]).norm() < 1e-9);
    }

    #[test]
    fn zero_responsibility_keeps_mean() {
        let cloud = cloud2(&[(0.0, 0.0), (1.0, 0.0)]);
        let s = state(vec![Point::zeros(), Point::new(7.0, 7.0, 0.0)], 1.0, 0.0, Dim::Two, 2);
        let post = Posterior {
            components: 2,
            points: 2,
            probs: vec![1.0, 0.0, 1.0, 0.0],
            outlier: vec![0.0, 0.0],
        };
        let next = m_step(&post, &cloud, &s);
        assert_eq!(next.means[1], Point::new(7.0, 7.0, 0.0));
        assert_eq!(next.means[0], Point::new(0.5, 0.0, 0.0));
        assert_eq!(next.sigma2, 0.125);
    }

    fn random_instance(rng: &mut ChaCha8Rng, m: usize, n: usize, dim: Dim) -> (Vec<Point>, PointCloud) {
        let z = |r: &mut ChaCha8Rng| if dim == Dim::Three { r.random_range(-5.0..5.0) } else { 0.0 };
        let means: Vec<Point> = (0..m)
            .map(|_| Point::new(rng.random_range(-20.0..20.0), rng.random_range(-20.0..20.0), z(rng)))
            .collect();
        let pts: Vec<Point> = (0..n)
            .map(|_| Point::new(rng.random_range(-25.0..25.0), rng.random_range(-25.0..25.0), z(rng)))
            .collect();
        (means, PointCloud::new(dim, pts).unwrap())
    }

    #[test]
    fn m_step_increases_expected_log_likelihood() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let (means, cloud) = random_instance(&mut rng, 5, 40, Dim::Two);
            let s = GmmState::init(means, &cloud, 0.1);
            let post = e_step(&s, &cloud);
            let next = m_step(&post, &cloud, &s);
            let q_new = expected_log_likelihood(&post, &cloud, &next.means, next.sigma2, Dim::Two);
            let q_old = expected_log_likelihood(&post, &cloud, &s.means, next.sigma2, Dim::Two);
            assert!(q_new >= q_old - 1e-9, "{q_new} < {q_old}");
            // sigma2 update is the maximizer given the new means.
            for f in [0.9, 1.1] {
                let q_alt = expected_log_likelihood(&post, &cloud, &next.means, next.sigma2 * f, Dim::Two);
                assert!(q_new >= q_alt - 1e-9);
            }
        }
    }

    #[test]
    fn fixed_point_when_cloud_equals_nodes() {
        let nodes: Vec<Point> = (0..10).map(|i| Point::new(i as f64 * 3.0, (i as f64).sin(), 0.0)).collect();
        let cloud = PointCloud::new(Dim::Two, nodes.clone()).unwrap();
        let cfg = TrackerConfig {
            omega: 0.05,
            ..Default::default()
        };
        let reg = register(&nodes, &cloud, &cfg).unwrap();
        for (a, b) in reg.positions.iter().zip(&nodes) {
            assert!((a - b).norm() < 1e-6);
        }
    }

    fn translated_line_case(outliers: bool) -> f64 {
        let init: Vec<Point> = (0..10).map(|i| Point::new(i as f64 * 10.0, 0.0, 0.0)).collect();
        let mut pts: Vec<Point> = (0..=900).map(|k| Point::new(1.0 + k as f64 * 0.1, 0.0, 0.0)).collect();
        let omega = if outliers {
            let mut rng = ChaCha8Rng::seed_from_u64(3);
            let extra = pts.len() / 10;
            for _ in 0..extra {
                pts.push(Point::new(rng.random_range(-20.0..110.0), rng.random_range(-30.0..30.0), 0.0));
            }
            0.1
        } else {
            0.05
        };
        let cloud = PointCloud::new(Dim::Two, pts).unwrap();
        let cfg = TrackerConfig {
            omega,
            ..Default::default()
        };
        let reg = register(&init, &cloud, &cfg).unwrap();
        // Oracle: distance from each refined node to a dense sampling of the
        // translated line x in [1, 91], y = 0.
        let dense: Vec<Point> = (0..=90_000).map(|k| Point::new(1.0 + k as f64 * 1e-3, 0.0, 0.0)).collect();
        reg.positions
            .iter()
            .map(|p| dense.iter().map(|q| (p - q).norm()).fold(f64::INFINITY, f64::min))
            .fold(0.0, f64::max)
    }

    #[test]
    fn registers_translated_line() {
        let worst = translated_line_case(false);
        assert!(worst < 0.1, "{worst}");
    }

    #[test]
    fn registers_translated_line_with_outliers() {
        let worst = translated_line_case(true);
        assert!(worst < 0.2, "{worst}");
    }

    #[test]
    fn empty_cloud_errors() {
        let err = register(&[Point::zeros()], &PointCloud::empty(Dim::Two), &TrackerConfig::default());
        assert!(matches!(err, Err(Error::NoObservations)));
    }

    #[test]
    fn single_node_converges_to_centroid() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (_, cloud) = random_instance(&mut rng, 1, 60, Dim::Three);
        let centroid = cloud.points().iter().sum::<Point>() / cloud.len() as f64;
        let cfg = TrackerConfig {
            omega: 0.0,
            ..Default::default()
        };
        for start in [Point::new(100.0, -40.0, 3.0), Point::zeros()] {
            let reg = register(&[start], &cloud, &cfg).unwrap();
            assert!((reg.positions[0] - centroid).norm() < 1e-9);
        }
    }

    #[test]
    fn translation_equivariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (means, cloud) = random_instance(&mut rng, 6, 80, Dim::Three);
        let v = Point::new(3.5, -2.25, 0.75);
        let moved = PointCloud::new(Dim::Three, cloud.points().iter().map(|p| p + v).collect()).unwrap();
        let s0 = GmmState::init(means.clone(), &cloud, 0.1);
        let s1 = GmmState::init(means.iter().map(|p| p + v).collect(), &moved, 0.1);
        let a = m_step(&e_step(&s0, &cloud), &cloud, &s0);
        let b = m_step(&e_step(&s1, &moved), &moved, &s1);
        for (p, q) in a.means.iter().zip(&b.means) {
            assert!((p + v - q).norm() < 1e-9);
        }
    }

    #[test]
    fn parallel_e_step_matches_sequential() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let (means, cloud) = random_instance(&mut rng, 24, 4000, Dim::Three);
        let s = GmmState::init(means, &cloud, 0.05);
        let par = e_step(&s, &cloud);
        let mut probs = vec![0.0; 24 * 4000];
        let mu = s.outlier_ratio(4000);
        for (n, col) in probs.chunks_mut(24).enumerate() {
            let o = posterior_column(&s, mu, &cloud.points()[n], col);
            assert_eq!(o.to_bits(), par.outlier(n).to_bits());
        }
        assert_eq!(probs, par.probs);
    }
}
