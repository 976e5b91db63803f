//! Approximate consensus maximization over SO(3) by repeated interval stabbing.
//!
//! For an inlier pair `y = R* x + ε` and `v = y − x`, the rotation axis `b*`
//! of `R*` satisfies `|vᵀb*| = |εᵀb*|`, independently of the rotation angle.
//! Writing the axis as `b(θ, φ)` and fixing `φ`, the set of `θ ∈ [0, π]` with
//! `|vᵀb| ≤ c̄` is a union of at most two intervals, so the best `θ` for a
//! given `φ` is a stabbing problem. Once the axis is fixed, the set of angles
//! `ω ∈ [0, 2π]` with `‖y − R(b, ω) x‖ ≤ c` is again a union of at most three
//! intervals, and the best angle is another stabbing problem.
//!
//! [`prune`] samples `s` values `φ_j = (2j − 1)π / (2s)`, stabs `θ` and then
//! `ω` for each, and keeps the candidate with the largest consensus. There is
//! no optimality guarantee for the sampled search; `s` is exposed so its
//! effect can be measured.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{invalid, Result};
use crate::geom::{axis_from_angles, rodrigues_unchecked, AxisAngle, Point3, RotationMatrix};
use crate::matching::{CorrespondenceSet, PointCloud};
use crate::stabbing::{stab_max, sweep, Interval, IntervalUnion};

const TWO_PI: f64 = 2.0 * PI;

/// Inlier threshold on `‖y − Rx‖` as a multiple of the noise level σ.
pub const RESIDUAL_SIGMAS: f64 = 5.54;
/// Threshold on `|vᵀb|` as a multiple of σ.
pub const AXIS_SIGMAS: f64 = 4.9;
/// Default number of `φ` samples.
pub const DEFAULT_SAMPLES: usize = 90;

/// A measurement pair; an inlier satisfies `y ≈ R x`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pair {
    pub y: Point3,
    pub x: Point3,
}

/// The measurements of a robust rotation search problem.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PairList {
    pairs: Vec<Pair>,
}

impl PairList {
    pub fn new(pairs: Vec<Pair>) -> Result<Self> {
        if let Some(i) = pairs
            .iter()
            .position(|p| p.y.iter().chain(p.x.iter()).any(|c| !c.is_finite()))
        {
            return Err(invalid(format!("pair {i} has a non-finite coordinate")));
        }
        Ok(Self { pairs })
    }

    /// Pairs `(q_i, p_j)` for every correspondence `(i, j)`.
    pub fn from_correspondences(q: &PointCloud, p: &PointCloud, c: &CorrespondenceSet) -> Self {
        let pairs = c
            .pairs()
            .iter()
            .map(|&(i, j)| Pair { y: q.points()[i], x: p.points()[j] })
            .collect();
        Self { pairs }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn pairs(&self) -> &[Pair] {
        &self.pairs
    }

    pub fn get(&self, i: usize) -> &Pair {
        &self.pairs[i]
    }

    /// The sub-list selected by `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> PairList {
        Self { pairs: indices.iter().map(|&i| self.pairs[i]).collect() }
    }

    pub fn residual(&self, i: usize, r: &RotationMatrix) -> f64 {
        let p = &self.pairs[i];
        (p.y - r.apply(&p.x)).norm()
    }

    pub fn as_tuples(&self) -> Vec<(Point3, Point3)> {
        self.pairs.iter().map(|p| (p.y, p.x)).collect()
    }
}

/// Output of [`prune`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConsensusResult {
    pub rotation: RotationMatrix,
    pub axis_angle: AxisAngle,
    /// Indices into the input pairs, ascending. Every member satisfies
    /// `‖y − R x‖ ≤ c` for the returned rotation.
    pub consensus: Vec<usize>,
    /// 1-based index `j` of the winning `φ_j` sample.
    pub sample: usize,
}

impl ConsensusResult {
    pub fn cardinality(&self) -> usize {
        self.consensus.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PruneConfig {
    /// Residual threshold `c` on `‖y − Rx‖`.
    pub c: f64,
    /// Axis threshold `c̄` on `|vᵀb|`.
    pub c_bar: f64,
    /// Number of `φ` samples `s`.
    pub samples: usize,
}

impl PruneConfig {
    pub fn new(c: f64, c_bar: f64, samples: usize) -> Result<Self> {
        let cfg = Self { c, c_bar, samples };
        cfg.validate()?;
        Ok(cfg)
    }

    /// `c = 5.54σ`, `c̄ = 4.9σ`, `s = 90`.
    pub fn from_sigma(sigma: f64) -> Result<Self> {
        Self::new(RESIDUAL_SIGMAS * sigma, AXIS_SIGMAS * sigma, DEFAULT_SAMPLES)
    }

    pub fn with_samples(mut self, samples: usize) -> Self {
        self.samples = samples;
        self
    }

    fn validate(&self) -> Result<()> {
        if !(self.c > 0.0 && self.c.is_finite()) {
            return Err(invalid(format!("residual threshold c must be > 0, got {}", self.c)));
        }
        if !(self.c_bar > 0.0 && self.c_bar.is_finite()) {
            return Err(invalid(format!("axis threshold c̄ must be > 0, got {}", self.c_bar)));
        }
        if self.samples == 0 {
            return Err(invalid("number of φ samples must be ≥ 1"));
        }
        Ok(())
    }

    /// `φ_j = (2j − 1)π / (2s)` for `j = 1..=s`.
    pub fn phi_grid(&self) -> Vec<f64> {
        phi_grid(self.samples)
    }
}

pub fn phi_grid(s: usize) -> Vec<f64> {
    (1..=s).map(|j| (2 * j - 1) as f64 * PI / (2 * s) as f64).collect()
}

/// Up to `N` closed intervals, sorted and merged.
#[derive(Debug, Clone, Copy)]
struct Pieces<const N: usize> {
    buf: [(f64, f64); N],
    len: usize,
}

impl<const N: usize> Pieces<N> {
    fn empty() -> Self {
        Self { buf: [(0.0, 0.0); N], len: 0 }
    }

    fn full(lo: f64, hi: f64) -> Self {
        let mut p = Self::empty();
        p.buf[0] = (lo, hi);
        p.len = 1;
        p
    }

    /// Adds `[lo, hi]` clipped to `[min, max]`, dropping it if empty.
    fn push_clipped(&mut self, lo: f64, hi: f64, min: f64, max: f64) {
        let (lo, hi) = (lo.max(min), hi.min(max));
        if lo <= hi {
            self.buf[self.len] = (lo + 0.0, hi + 0.0);
            self.len += 1;
        }
    }

    fn merge(mut self) -> Self {
        let s = &mut self.buf[..self.len];
        s.sort_unstable_by(|a, b| a.0.total_cmp(&b.0));
        let mut out = Self::empty();
        for &(lo, hi) in s.iter() {
            if out.len > 0 && lo <= out.buf[out.len - 1].1 {
                let last = &mut out.buf[out.len - 1].1;
                *last = last.max(hi);
            } else {
                out.buf[out.len] = (lo, hi);
                out.len += 1;
            }
        }
        out
    }

    fn as_slice(&self) -> &[(f64, f64)] {
        &self.buf[..self.len]
    }

    fn contains(&self, t: f64) -> bool {
        self.as_slice().iter().any(|&(lo, hi)| lo <= t && t <= hi)
    }

    fn to_union(self, owner: usize) -> IntervalUnion {
        IntervalUnion::new(
            owner,
            self.as_slice().iter().map(|&(lo, hi)| Interval { lo, hi }).collect(),
        )
    }
}

/// `θ`-intervals of `|vᵀb(θ, φ)| ≤ c̄`, given `cos φ` and `sin φ`.
fn axis_pieces(v: &Point3, cos_phi: f64, sin_phi: f64, c_bar: f64) -> Pieces<2> {
    let a1 = v.x * cos_phi + v.y * sin_phi;
    // |a1 sin θ + v3 cos θ| is unchanged when both coefficients flip sign
    let (a1, v3) = if a1.is_sign_negative() { (-a1, -v.z) } else { (a1, v.z) };
    let r = a1.hypot(v3);
    if v.norm() < 1e-12 || r == 0.0 {
        return Pieces::full(0.0, PI);
    }
    let ci = (c_bar / r).min(1.0);
    if ci >= 1.0 {
        return Pieces::full(0.0, PI);
    }
    let a2 = a1.atan2(v3);
    let a3 = (-ci).acos();
    let a4 = ci.acos();
    let mut p = Pieces::empty();
    p.push_clipped(a2 - a3, a2 - a4, 0.0, PI);
    p.push_clipped(a2 + a4, a2 + a3, 0.0, PI);
    p
}

/// The set of `θ ∈ [0, π]` for which `|vᵀb(θ, φ)| ≤ c̄`, where
/// `b(θ, φ) = [sin θ cos φ, sin θ sin φ, cos θ]`.
///
/// A vanishing `v` (norm below 1e-12) constrains nothing and yields `[0, π]`.
pub fn axis_intervals(v: &Point3, phi: f64, c_bar: f64) -> Result<IntervalUnion> {
    if !(0.0..=PI).contains(&phi) {
        return Err(invalid(format!("φ must lie in [0, π], got {phi}")));
    }
    if !(c_bar > 0.0 && c_bar.is_finite()) {
        return Err(invalid(format!("c̄ must be > 0, got {c_bar}")));
    }
    let (s, c) = phi.sin_cos();
    Ok(axis_pieces(v, c, s, c_bar).merge().to_union(0))
}

/// `ω`-intervals of `‖y − R(b, ω) x‖ ≤ c`.
fn angle_pieces(y: &Point3, x: &Point3, b: &Point3, c: f64) -> Pieces<3> {
    let a9 = y.dot(b) * b.dot(x);
    let a10 = y.dot(&b.cross(x));
    let a11 = y.dot(x) - a9;
    let a12 = (y.norm_squared() + x.norm_squared() - c * c) / 2.0 - a9;
    let rho2 = a10 * a10 + a11 * a11;
    if rho2 < 1e-24 {
        return if a12 <= 0.0 { Pieces::full(0.0, TWO_PI) } else { Pieces::empty() };
    }
    let rho = rho2.sqrt();
    let mut a13 = a10.atan2(a11);
    if a13 < 0.0 {
        a13 += TWO_PI;
    }
    let a14 = (a12 / rho).max(-1.0);
    if a14 > 1.0 {
        return Pieces::empty();
    }
    let a15 = a14.acos();
    let mut p = Pieces::empty();
    p.push_clipped(a13 - a15, a13 + a15, 0.0, TWO_PI);
    p.push_clipped(a13 - a15 + TWO_PI, TWO_PI, 0.0, TWO_PI);
    p.push_clipped(0.0, a13 + a15 - TWO_PI, 0.0, TWO_PI);
    p.merge()
}

/// The set of `ω ∈ [0, 2π]` for which `‖y − R(b, ω) x‖ ≤ c`, where `R(b, ω)`
/// is the rotation by `ω` about the unit axis `b`.
pub fn angle_intervals(y: &Point3, x: &Point3, b: &Point3, c: f64) -> Result<IntervalUnion> {
    check_axis(b)?;
    if !(c > 0.0 && c.is_finite()) {
        return Err(invalid(format!("c must be > 0, got {c}")));
    }
    Ok(angle_pieces(y, x, b, c).to_union(0))
}

fn check_axis(b: &Point3) -> Result<()> {
    if (b.norm() - 1.0).abs() > 1e-9 {
        return Err(invalid(format!("axis must be a unit vector, got norm {}", b.norm())));
    }
    Ok(())
}

/// Reusable buffers for the `θ` sweep.
#[derive(Default)]
struct Scratch {
    starts: Vec<f64>,
    ends: Vec<f64>,
}

/// Best `θ` for one `φ` and its depth.
fn stab_theta(vs: &[Point3], phi: f64, c_bar: f64, scratch: &mut Scratch) -> (f64, usize) {
    let (sin_phi, cos_phi) = phi.sin_cos();
    scratch.starts.clear();
    scratch.ends.clear();
    for v in vs {
        let p = axis_pieces(v, cos_phi, sin_phi, c_bar);
        for &(lo, hi) in p.as_slice() {
            scratch.starts.push(lo);
            scratch.ends.push(hi);
        }
    }
    sweep(&mut scratch.starts, &mut scratch.ends).unwrap_or((0.0, 0))
}

/// Maximizes `#{i : |v_iᵀ b(θ, φ)| ≤ c̄}` over `θ` for fixed `φ`, with
/// `v_i = y_i − x_i`. Returns the leftmost optimal `θ` and its consensus.
pub fn solve_theta_given_phi(pairs: &PairList, phi: f64, c_bar: f64) -> Result<(f64, Vec<usize>)> {
    if !(0.0..=PI).contains(&phi) {
        return Err(invalid(format!("φ must lie in [0, π], got {phi}")));
    }
    if !(c_bar > 0.0 && c_bar.is_finite()) {
        return Err(invalid(format!("c̄ must be > 0, got {c_bar}")));
    }
    let vs = differences(pairs);
    let (theta, _) = stab_theta(&vs, phi, c_bar, &mut Scratch::default());
    let (s, c) = phi.sin_cos();
    let consensus = vs
        .iter()
        .enumerate()
        .filter(|(_, v)| axis_pieces(v, c, s, c_bar).contains(theta))
        .map(|(i, _)| i)
        .collect();
    Ok((theta, consensus))
}

/// Maximizes `#{i : ‖y_i − R(b, ω) x_i‖ ≤ c}` over `ω ∈ [0, 2π]` for a fixed
/// unit axis `b`. All feasible sets empty gives `(0, ∅)`.
pub fn solve_omega_given_axis(pairs: &PairList, b: &Point3, c: f64) -> Result<(f64, Vec<usize>)> {
    check_axis(b)?;
    if !(c > 0.0 && c.is_finite()) {
        return Err(invalid(format!("c must be > 0, got {c}")));
    }
    let s = stab_omega(pairs.pairs(), b, c);
    Ok((s.point, s.owners))
}

fn stab_omega(pairs: &[Pair], b: &Point3, c: f64) -> crate::stabbing::Stab {
    // ‖y − Rx‖ ≤ c forces |(y − x)ᵀb| = |(y − Rx)ᵀb| ≤ c, so pairs failing the
    // (slightly relaxed) axis test have an empty feasible set.
    let slack = c * (1.0 + 1e-9) + 1e-12;
    let unions: Vec<IntervalUnion> = pairs
        .iter()
        .enumerate()
        .filter(|(_, p)| (p.y - p.x).dot(b).abs() <= slack)
        .map(|(i, p)| angle_pieces(&p.y, &p.x, b, c).to_union(i))
        .filter(|u| !u.is_empty())
        .collect();
    stab_max(&unions)
}

fn differences(pairs: &PairList) -> Vec<Point3> {
    pairs.pairs().iter().map(|p| p.y - p.x).collect()
}

/// Sampled three-stage consensus search; see the module docs.
pub fn prune(pairs: &PairList, cfg: &PruneConfig) -> Result<ConsensusResult> {
    cfg.validate()?;
    prune_over(pairs, cfg.c, cfg.c_bar, &cfg.phi_grid())
}

/// [`prune`] over an explicit list of `φ` samples. Ties in consensus size go
/// to the earliest sample.
pub fn prune_over(pairs: &PairList, c: f64, c_bar: f64, phis: &[f64]) -> Result<ConsensusResult> {
    if pairs.is_empty() {
        return Err(invalid("prune needs at least one pair"));
    }
    if phis.is_empty() {
        return Err(invalid("prune needs at least one φ sample"));
    }
    if let Some(phi) = phis.iter().find(|p| !(0.0..=PI).contains(*p)) {
        return Err(invalid(format!("φ sample {phi} outside [0, π]")));
    }
    if !(c > 0.0 && c.is_finite() && c_bar > 0.0 && c_bar.is_finite()) {
        return Err(invalid(format!("thresholds must be > 0, got c = {c}, c̄ = {c_bar}")));
    }
    let vs = differences(pairs);

    let candidates: Vec<ConsensusResult> = phis
        .par_iter()
        .enumerate()
        .map_init(Scratch::default, |scratch, (j, &phi)| {
            let (theta, _) = stab_theta(&vs, phi, c_bar, scratch);
            let b = axis_from_angles(theta, phi);
            let stab = stab_omega(pairs.pairs(), &b, c);
            let omega = stab.point;
            let rotation = rodrigues_unchecked(&b, omega);
            let consensus = stab
                .owners
                .into_iter()
                .filter(|&i| pairs.residual(i, &rotation) <= c)
                .collect();
            ConsensusResult {
                rotation,
                axis_angle: AxisAngle { theta, phi, omega },
                consensus,
                sample: j + 1,
            }
        })
        .collect();

    let mut best: Option<ConsensusResult> = None;
    for cand in candidates {
        if best.as_ref().map_or(true, |b| cand.cardinality() > b.cardinality()) {
            best = Some(cand);
        }
    }
    Ok(best.expect("at least one φ sample"))
}
