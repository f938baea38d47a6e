//! Per-frame tracking pipeline: visibility, EM registration of visible
//! nodes, closed-form placement of occluded nodes, uniform resampling.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gmm;
use crate::metrics::{frame_error, FrameError, FrameStats};
use crate::resample::{geodesic_profile, uniform_resample};
use crate::sim::FrameRecord;
use crate::types::{validate_config, Dim, NodeChain, Point, PointCloud, TrackerConfig};
use crate::upe::{self, UpeInputs, UpeParams};
use crate::visibility::{self, VisibilityMask};

/// Continuous visible nodes needed anywhere in the chain to track a frame.
const MIN_VISIBLE_RUN: usize = upe::SUPPORT;

/// Wall-clock seconds spent in each stage of one frame.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTimings {
    pub visibility: f64,
    pub em: f64,
    pub upe: f64,
    pub resample: f64,
}

impl StageTimings {
    pub fn total(&self) -> f64 {
        self.visibility + self.em + self.upe + self.resample
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SessionStatus {
    Tracking,
    /// Frame lacked usable observations; chain carried forward unchanged.
    Coasting,
    Failed,
}

impl SessionStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            SessionStatus::Tracking => "tracking",
            SessionStatus::Coasting => "coasting",
            SessionStatus::Failed => "failed",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "tracking" => Some(SessionStatus::Tracking),
            "coasting" => Some(SessionStatus::Coasting),
            "failed" => Some(SessionStatus::Failed),
            _ => None,
        }
    }
}

/// What happens to occluded nodes.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum OcclusionPolicy {
    /// Closed-form unidirectional estimation.
    #[default]
    Estimate,
    /// Occluded nodes stay at their previous positions (ablation baseline).
    Freeze,
}

#[derive(Debug, Clone)]
pub struct TraceEntry {
    pub frame: usize,
    pub status: SessionStatus,
    /// Chain after resampling; visibility holds this frame's mask.
    pub chain: NodeChain,
    /// Merged EM + occlusion estimates before resampling.
    pub pre_resample: Vec<Point>,
    pub mask: VisibilityMask,
    pub em_iterations: usize,
    /// Occluded nodes left in place for lack of support.
    pub unsupported_nodes: usize,
    pub timings: StageTimings,
    pub error: Option<FrameError>,
}

impl TraceEntry {
    pub fn stats(&self) -> FrameStats {
        FrameStats {
            frame: self.frame,
            error: self.error.map(|e| e.symmetric),
            timings: Some(self.timings),
        }
    }
}

/// Per-frame outputs, strictly increasing in frame index.
#[derive(Debug, Clone, Default)]
pub struct TrackTrace {
    entries: Vec<TraceEntry>,
}

impl TrackTrace {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, entry: TraceEntry) -> Result<()> {
        if let Some(last) = self.entries.last() {
            if entry.frame <= last.frame {
                return Err(Error::Trace(format!(
                    "frame {} does not follow frame {}",
                    entry.frame, last.frame
                )));
            }
        }
        self.entries.push(entry);
        Ok(())
    }

    pub fn entries(&self) -> &[TraceEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn stats(&self) -> Vec<FrameStats> {
        self.entries.iter().map(TraceEntry::stats).collect()
    }
}

#[derive(Debug, Clone)]
pub struct TrackerSession {
    config: TrackerConfig,
    policy: OcclusionPolicy,
    chain: NodeChain,
    prev_chain: NodeChain,
    frame_index: usize,
    status: SessionStatus,
    // Converged EM variance of the last registered frame.
    sigma2: Option<f64>,
}


impl TrackerSession {
    /// Starts a session from ground-truth node positions of an unoccluded
    /// frame. The stored chain is their uniform resampling.
    pub fn initialize(config: TrackerConfig, dim: Dim, nodes: &[Point]) -> Result<Self> {
        let config = validate_config(config)?;
        if nodes.len() != config.node_count {
            return Err(Error::InvalidChain(format!(
                "{} initial nodes, config expects {}",
                nodes.len(),
                config.node_count
            )));
        }
        let profile = geodesic_profile(nodes)?;
        let chain = NodeChain::new(dim, uniform_resample(nodes, &profile))?;
        Ok(Self {
            config,
            policy: OcclusionPolicy::default(),
            prev_chain: chain.clone(),
            chain,
            frame_index: 0,
            status: SessionStatus::Tracking,
            sigma2: None,
        })
    }

    pub fn with_policy(mut self, policy: OcclusionPolicy) -> Self {
        self.policy = policy;
        self
    }

    pub fn config(&self) -> &TrackerConfig {
        &self.config
    }

    pub fn chain(&self) -> &NodeChain {
        &self.chain
    }

    pub fn prev_chain(&self) -> &NodeChain {
        &self.prev_chain
    }

    pub fn frame_index(&self) -> usize {
        self.frame_index
    }

    pub fn status(&self) -> SessionStatus {
        self.status
    }

    /// Trace entry describing the initialized chain.
    pub fn initial_entry(&self) -> TraceEntry {
        TraceEntry {
            frame: self.frame_index,
            status: self.status,
            chain: self.chain.clone(),
            pre_resample: self.chain.nodes().to_vec(),
            mask: VisibilityMask::all_visible(self.chain.len()),
            em_iterations: 0,
            unsupported_nodes: 0,
            timings: StageTimings::default(),
            error: None,
        }
    }

    fn fail(&mut self, msg: String) -> Error {
        self.status = SessionStatus::Failed;
        Error::SessionFailed(format!("frame {}: {msg}", self.frame_index + 1))
    }

    /// Processes the next frame.
    pub fn step(&mut self, cloud: &PointCloud) -> Result<TraceEntry> {
        if self.status == SessionStatus::Failed {
            return Err(Error::SessionFailed("session already failed".into()));
        }
        if cloud.dim() != self.chain.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.chain.dim().get(),
                found: cloud.dim().get(),
            });
        }
        let frame = self.frame_index + 1;
        let cfg = self.config;
        let mut timings = StageTimings::default();

        let t = Instant::now();
        let mask = visibility::classify(&self.chain, cloud, cfg.r_vis, cfg.v_lim)?;
        timings.visibility = t.elapsed().as_secs_f64();

        if cloud.is_empty() || mask.longest_visible_run() < MIN_VISIBLE_RUN {
            self.frame_index = frame;
            self.status = SessionStatus::Coasting;
            return Ok(TraceEntry {
                frame,
                status: SessionStatus::Coasting,
                chain: self.chain.clone(),
                pre_resample: self.chain.nodes().to_vec(),
                mask,
                em_iterations: 0,
                unsupported_nodes: 0,
                timings,
                error: None,
            });
        }

        let prev = self.chain.nodes();
        let visible = mask.visible_indices();
        let t = Instant::now();
        let init: Vec<Point> = visible.iter().map(|&i| prev[i]).collect();
        // Variance carries over between frames; re-estimating it from scratch
        // lets outliers inflate it and drags the tips inward.
        let reg = match self.sigma2 {
            Some(s2) => gmm::register_warm(&init, s2, cloud, &cfg)?,
            None => gmm::register(&init, cloud, &cfg)?,
        };
        self.sigma2 = Some(reg.state.sigma2);
        let mut current = prev.to_vec();
        for (&i, p) in visible.iter().zip(&reg.positions) {
            current[i] = *p;
        }
        timings.em = t.elapsed().as_secs_f64();

        let t = Instant::now();
        let mut unsupported_nodes = 0;
        if self.policy == OcclusionPolicy::Estimate && !mask.segments().is_empty() {
            let out = upe::estimate_all(&UpeInputs {
                prev,
                current: &current,
                mask: &mask,
                params: UpeParams::from(&cfg),
            });
            unsupported_nodes = out.unsupported.iter().map(|s| s.len()).sum();
            current = out.positions;
        }
        timings.upe = t.elapsed().as_secs_f64();

        if current.iter().any(|p| p.iter().any(|c| !c.is_finite())) {
            return Err(self.fail("non-finite node estimate".into()));
        }

        let t = Instant::now();
        let resampled = match geodesic_profile(&current) {
            Ok(profile) => uniform_resample(&current, &profile),
            Err(e) => return Err(self.fail(e.to_string())),
        };
        timings.resample = t.elapsed().as_secs_f64();

        let chain = match NodeChain::with_visibility(self.chain.dim(), resampled, mask.flags().to_vec()) {
            Ok(c) => c,
            Err(e) => return Err(self.fail(e.to_string())),
        };
        self.prev_chain = std::mem::replace(&mut self.chain, chain);
        self.frame_index = frame;
        self.status = SessionStatus::Tracking;
        Ok(TraceEntry {
            frame,
            status: SessionStatus::Tracking,
            chain: self.chain.clone(),
            pre_resample: current,
            mask,
            em_iterations: reg.iterations,
            unsupported_nodes,
            timings,
            error: None,
        })
    }
}

/// Runs a session over `frames`, initializing from the ground truth of the
/// first record and scoring every frame against its ground truth.
///
/// A frame that fails ends the run; it is recorded with status `failed` and
/// the last good chain, and its error is returned next to the trace.
pub fn run_records(
    config: TrackerConfig,
    policy: OcclusionPolicy,
    frames: &[FrameRecord],
) -> Result<(TrackTrace, Option<Error>)> {
    let first = frames.first().ok_or(Error::EmptyTrace)?;
    let mut session = TrackerSession::initialize(config, first.cloud.dim(), &first.ground_truth)?.with_policy(policy);
    let mut trace = TrackTrace::new();
    let mut entry = session.initial_entry();
    entry.frame = first.frame_index;
    entry.error = Some(frame_error(entry.chain.nodes(), &first.ground_truth));
    trace.push(entry)?;
    for rec in &frames[1..] {
        let mut entry = match session.step(&rec.cloud) {
            Ok(e) => e,
            Err(err) => {
                let chain = session.chain().clone();
                trace.push(TraceEntry {
                    frame: rec.frame_index,
                    status: SessionStatus::Failed,
                    pre_resample: chain.nodes().to_vec(),
                    mask: VisibilityMask::from_flags(vec![false; chain.len()]),
                    chain,
                    em_iterations: 0,
                    unsupported_nodes: 0,
                    timings: StageTimings::default(),
                    error: None,
                })?;
                return Ok((trace, Some(err)));
            }
        };
        entry.frame = rec.frame_index;
        entry.error = Some(frame_error(entry.chain.nodes(), &rec.ground_truth));
        trace.push(entry)?;
    }
    Ok((trace, None))
}

/// Like [`run_records`], but a failing frame is an error.
pub fn track_records(config: TrackerConfig, policy: OcclusionPolicy, frames: &[FrameRecord]) -> Result<TrackTrace> {
    match run_records(config, policy, frames)? {
        (trace, None) => Ok(trace),
        (_, Some(err)) => Err(err),
    }
}
