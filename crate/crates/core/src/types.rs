//! Core domain types: node chains, point clouds and tracker configuration.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A position in 2-D or 3-D space.
///
/// Planar data is stored with `z = 0`; the active dimension is carried
/// separately by [`Dim`] wherever it matters (mixture normalization and the
/// variance update).
pub type Point = nalgebra::Vector3<f64>;

/// Minimum chain length: three continuous supports plus one target node.
pub const MIN_NODES: usize = 4;

/// Spatial dimension of a tracking session.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "usize", into = "usize")]
pub enum Dim {
    Two,
    Three,
}

impl Dim {
    pub fn get(self) -> usize {
        match self {
            Dim::Two => 2,
            Dim::Three => 3,
        }
    }

    pub fn as_f64(self) -> f64 {
        self.get() as f64
    }

    /// Builds a point from `coords`, which must hold exactly `self.get()`
    /// finite components.
    pub fn point(self, coords: &[f64]) -> Result<Point> {
        if coords.len() != self.get() {
            return Err(Error::DimensionMismatch {
                expected: self.get(),
                found: coords.len(),
            });
        }
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(Error::NonFinite("point"));
        }
        Ok(match self {
            Dim::Two => Point::new(coords[0], coords[1], 0.0),
            Dim::Three => Point::new(coords[0], coords[1], coords[2]),
        })
    }

    /// Parses a flat `[x0, y0, (z0,) x1, ...]` array.
    pub fn points_from_flat(self, flat: &[f64]) -> Result<Vec<Point>> {
        let d = self.get();
        if flat.len() % d != 0 {
            return Err(Error::InvalidChain(format!(
                "flat array of length {} is not a multiple of D={d}",
                flat.len()
            )));
        }
        flat.chunks_exact(d).map(|c| self.point(c)).collect()
    }

    pub fn flatten(self, points: &[Point]) -> Vec<f64> {
        let d = self.get();
        points
            .iter()
            .flat_map(|p| p.iter().take(d).copied().collect::<Vec<_>>())
            .collect()
    }
}

impl TryFrom<usize> for Dim {
    type Error = Error;

    fn try_from(d: usize) -> Result<Self> {
        match d {
            2 => Ok(Dim::Two),
            3 => Ok(Dim::Three),
            other => Err(Error::UnsupportedDim(other)),
        }
    }
}

impl From<Dim> for usize {
    fn from(d: Dim) -> usize {
        d.get()
    }
}

/// Ordered DLO state nodes with per-node visibility.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeChain {
    dim: Dim,
    nodes: Vec<Point>,
    visibility: Vec<bool>,
}

impl NodeChain {
    /// Creates a chain with every node marked visible.
    pub fn new(dim: Dim, nodes: Vec<Point>) -> Result<Self> {
        let m = nodes.len();
        Self::with_visibility(dim, nodes, vec![true; m])
    }

    pub fn with_visibility(dim: Dim, nodes: Vec<Point>, visibility: Vec<bool>) -> Result<Self> {
        if nodes.len() < MIN_NODES {
            return Err(Error::InvalidChain(format!(
                "{} nodes, need at least {MIN_NODES}",
                nodes.len()
            )));
        }
        if visibility.len() != nodes.len() {
            return Err(Error::InvalidChain(format!(
                "{} visibility flags for {} nodes",
                visibility.len(),
                nodes.len()
            )));
        }
        check_points(dim, &nodes, "node chain")?;
        Ok(Self {
            dim,
            nodes,
            visibility,
        })
    }

    pub fn from_flat(dim: Dim, flat: &[f64]) -> Result<Self> {
        Self::new(dim, dim.points_from_flat(flat)?)
    }

    pub fn dim(&self) -> Dim {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[Point] {
        &self.nodes
    }

    pub fn visibility(&self) -> &[bool] {
        &self.visibility
    }

    pub fn into_nodes(self) -> Vec<Point> {
        self.nodes
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.dim.flatten(&self.nodes)
    }
}

/// One frame of unordered observations. May be empty.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    dim: Dim,
    points: Vec<Point>,
}

impl PointCloud {
    pub fn new(dim: Dim, points: Vec<Point>) -> Result<Self> {
        check_points(dim, &points, "point cloud")?;
        Ok(Self { dim, points })
    }

    pub fn empty(dim: Dim) -> Self {
        Self {
            dim,
            points: Vec::new(),
        }
    }

    pub fn from_flat(dim: Dim, flat: &[f64]) -> Result<Self> {
        Self::new(dim, dim.points_from_flat(flat)?)
    }

    pub fn dim(&self) -> Dim {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.dim.flatten(&self.points)
    }
}

fn check_points(dim: Dim, points: &[Point], what: &'static str) -> Result<()> {
    for p in points {
        if p.iter().any(|c| !c.is_finite()) {
            return Err(Error::NonFinite(what));
        }
        if dim == Dim::Two && p.z != 0.0 {
            return Err(Error::DimensionMismatch {
                expected: 2,
                found: 3,
            });
        }
    }
    Ok(())
}

/// Scalar parameters of the tracker. Serializes to a flat JSON object.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrackerConfig {
    /// Number of state nodes M.
    pub node_count: usize,
    /// Distance attenuation factor for neighbour displacements.
    pub gamma: f64,
    /// Historical-curvature retention coefficient.
    pub a: f64,
    /// Bending resistance coefficient.
    pub b: f64,
    /// Blend weight between the displacement and geometric estimates.
    pub alpha: f64,
    /// Visibility radius, in point-cloud length units.
    pub r_vis: f64,
    /// Minimum neighbour count for a node to be visible.
    pub v_lim: usize,
    /// Weight of the uniform outlier component.
    pub omega: f64,
    pub em_max_iters: usize,
    /// Relative change of sigma^2 below which EM stops.
    pub em_tol: f64,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            node_count: 24,
            gamma: 0.8,
            a: 0.6,
            b: 0.8,
            alpha: 0.75,
            r_vis: 20.0,
            v_lim: 3,
            omega: 0.05,
            em_max_iters: 50,
            em_tol: 1e-5,
        }
    }
}

impl TrackerConfig {
    pub fn validate(self) -> Result<Self> {
        validate_config(self)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        validate_config(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config is always serializable")
    }
}

/// Returns `cfg` unchanged if every field is in range, otherwise an error
/// naming the first offending field.
pub fn validate_config(cfg: TrackerConfig) -> Result<TrackerConfig> {
    let fail = |msg: &str| Err(Error::Config(msg.to_string()));
    let unit = 0.0..=1.0;
    if cfg.node_count < MIN_NODES {
        return fail("node_count below minimum 4");
    }
    if !unit.contains(&cfg.gamma) {
        return fail("gamma out of [0,1]");
    }
    if !(cfg.a >= 0.0 && cfg.a.is_finite()) {
        return fail("a must be finite and >= 0");
    }
    if !(cfg.b >= 0.0 && cfg.b.is_finite()) {
        return fail("b must be finite and >= 0");
    }
    if !unit.contains(&cfg.alpha) {
        return fail("alpha out of [0,1]");
    }
    if !(cfg.r_vis > 0.0 && cfg.r_vis.is_finite()) {
        return fail("r_vis must be finite and > 0");
    }
    if cfg.v_lim < 1 {
        return fail("v_lim must be at least 1");
    }
    if !(0.0..1.0).contains(&cfg.omega) {
        return fail("omega out of [0,1)");
    }
    if cfg.em_max_iters < 1 {
        return fail("em_max_iters must be at least 1");
    }
    if !(cfg.em_tol > 0.0 && cfg.em_tol.is_finite()) {
        return fail("em_tol must be finite and > 0");
    }
    Ok(cfg)
}
