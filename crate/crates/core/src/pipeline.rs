//! The three stages chained together: norm matching (N), consensus pruning
//! (O) and quaternion refinement (R).

use std::time::Instant;

use serde::Serialize;

use crate::consensus::{prune, ConsensusResult, PairList, PruneConfig};
use crate::error::Result;
use crate::geom::{quat_to_rotation, rotation_to_quat, RotationMatrix, UnitQuaternion};
use crate::matching::{arcs_n_match, CorrespondenceSet, PointCloud};
use crate::refine::{build_all, refine, RefineConfig, RefineOutput};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PipelineConfig {
    pub prune: PruneConfig,
    pub refine: RefineConfig,
}

impl PipelineConfig {
    /// Thresholds `c = 5.54σ`, `c̄ = 4.9σ`, 90 samples, default refinement.
    pub fn from_sigma(sigma: f64) -> Result<Self> {
        Ok(Self { prune: PruneConfig::from_sigma(sigma)?, refine: RefineConfig::default() })
    }
}

/// Wall-clock time of each stage that ran, in milliseconds.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct StageTimings {
    pub match_ms: Option<f64>,
    pub prune_ms: Option<f64>,
    pub refine_ms: Option<f64>,
}

impl StageTimings {
    pub fn total_ms(&self) -> f64 {
        [self.match_ms, self.prune_ms, self.refine_ms].iter().flatten().sum()
    }
}

/// Result of pruning followed by refinement on the consensus set.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RobustEstimate {
    /// Pruning output; its rotation is the pre-refinement estimate.
    pub consensus: ConsensusResult,
    pub refined: RefineOutput,
    pub rotation: RotationMatrix,
    pub quaternion: UnitQuaternion,
    pub timings: StageTimings,
}

/// Prune, then refine on the pruned consensus starting from the pruned
/// rotation.
pub fn solve_pairs(pairs: &PairList, cfg: &PipelineConfig) -> Result<RobustEstimate> {
    let t = Instant::now();
    let consensus = prune(pairs, &cfg.prune)?;
    let prune_ms = ms(t);

    let t = Instant::now();
    let ds = build_all(&pairs.subset(&consensus.consensus));
    let w0 = rotation_to_quat(&consensus.rotation);
    let refined = refine(&ds, &w0, &cfg.refine)?;
    let refine_ms = ms(t);

    let quaternion = refined.w.canonical();
    Ok(RobustEstimate {
        rotation: quat_to_rotation(&quaternion),
        quaternion,
        consensus,
        refined,
        timings: StageTimings { match_ms: None, prune_ms: Some(prune_ms), refine_ms: Some(refine_ms) },
    })
}

/// Full pipeline on two clouds. The consensus indices of the result refer to
/// the returned candidate correspondences.
pub fn solve_clouds(
    q: &PointCloud,
    p: &PointCloud,
    cfg: &PipelineConfig,
) -> Result<(CorrespondenceSet, RobustEstimate)> {
    let t = Instant::now();
    let candidates = arcs_n_match(q, p, cfg.prune.c)?;
    let match_ms = ms(t);
    if candidates.is_empty() {
        return Err(crate::Error::Degenerate("norm matching produced no candidate pairs".into()));
    }
    let pairs = PairList::from_correspondences(q, p, &candidates);
    let mut est = solve_pairs(&pairs, cfg)?;
    est.timings.match_ms = Some(match_ms);
    Ok((candidates, est))
}

pub(crate) fn ms(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}
