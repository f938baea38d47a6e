//! Real-time state tracking of deformable linear objects (ropes, cables,
//! threads) under partial occlusion.
//!
//! Each frame the tracker
//!
//! 1. classifies every node of the previous chain as visible or occluded by
//!    counting nearby observation points ([`visibility`]),
//! 2. registers the visible nodes to the point cloud with EM on an isotropic
//!    Gaussian mixture that carries a uniform outlier component ([`gmm`]),
//! 3. places occluded nodes in closed form from the three nearest
//!    continuous visible nodes, propagating one node at a time ([`upe`]),
//! 4. redistributes all nodes uniformly along the resulting polyline
//!    ([`resample`]).
//!
//! [`sim`] generates synthetic rope sequences with analytic ground truth,
//! [`metrics`] scores estimates against it, and [`io`] / [`cli`] provide the
//! dataset format and the `dlotrack` command line tool.

pub mod cli;
pub mod error;
pub mod geom;
pub mod gmm;
pub mod io;
pub mod metrics;
pub mod resample;
pub mod sim;
pub mod tracker;
pub mod types;
pub mod upe;
pub mod visibility;

pub use error::{Error, Result};
pub use types::{Dim, NodeChain, Point, PointCloud, TrackerConfig};
