//! Norm-based correspondence search.
//!
//! A rotation preserves norms, so an inlier pair `(q_i, p_j)` must satisfy
//! `‖q_i‖ ≈ ‖p_j‖`. Sorting both clouds by norm turns the search for such
//! pairs into a merge-like scan.
//!
//! * [`arcs_match`] is the noiseless matcher: two monotone cursors, each match
//!   consumes one point from each side, so the output is a partial matching.
//! * [`arcs_n_match`] is the noisy variant: it returns *every* pair whose norm
//!   difference is within `c`, so indices may repeat.
//! * [`arcs_solve`] chains exact matching with [`kabsch`].
//!
//! Indices are 0-based and always refer to the caller's original point order.

use crate::error::{invalid, Error, Result};
use crate::geom::{kabsch, Point3, RotationMatrix};

/// An ordered point set with norms cached at construction.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    points: Vec<Point3>,
    norms: Vec<f64>,
}

impl PointCloud {
    pub fn new(points: Vec<Point3>) -> Result<Self> {
        if let Some(i) = points.iter().position(|p| p.iter().any(|c| !c.is_finite())) {
            return Err(invalid(format!("point {i} has a non-finite coordinate")));
        }
        let norms = points.iter().map(|p| p.norm()).collect();
        Ok(Self { points, norms })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Point3] {
        &self.points
    }

    pub fn norms(&self) -> &[f64] {
        &self.norms
    }

    /// Indices sorted by increasing norm, ties broken by index.
    pub fn order_by_norm(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.sort_unstable_by(|&a, &b| self.norms[a].total_cmp(&self.norms[b]).then(a.cmp(&b)));
        idx
    }
}

/// A list of `(i, j)` index pairs linking a cloud `Q` (index `i`) to a cloud
/// `P` (index `j`), kept in lexicographic order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CorrespondenceSet {
    pairs: Vec<(usize, usize)>,
}

impl CorrespondenceSet {
    /// Sorts and deduplicates `pairs`.
    pub fn new(mut pairs: Vec<(usize, usize)>) -> Self {
        pairs.sort_unstable();
        pairs.dedup();
        Self { pairs }
    }

    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn contains(&self, pair: (usize, usize)) -> bool {
        self.pairs.binary_search(&pair).is_ok()
    }

    /// True if no `i` and no `j` appears twice.
    pub fn is_partial_matching(&self) -> bool {
        let mut is: Vec<usize> = self.pairs.iter().map(|p| p.0).collect();
        let mut js: Vec<usize> = self.pairs.iter().map(|p| p.1).collect();
        is.sort_unstable();
        js.sort_unstable();
        is.windows(2).all(|w| w[0] != w[1]) && js.windows(2).all(|w| w[0] != w[1])
    }

    pub fn into_pairs(self) -> Vec<(usize, usize)> {
        self.pairs
    }
}

/// Rounding slack used by [`arcs_match`], in ulps of the larger norm.
pub const NORM_ULPS: f64 = 8.0;

/// Two-cursor norm matching. With `c = 0` and clouds in general position the
/// output is exactly the planted correspondence set.
///
/// Norms are compared with a slack of [`NORM_ULPS`] units in the last place
/// on top of `c`, since rotating a point changes its computed norm by a few
/// rounding errors.
///
/// Runs in `O(m log m)`; empty clouds give an empty result.
pub fn arcs_match(q: &PointCloud, p: &PointCloud, c: f64) -> Result<CorrespondenceSet> {
    if !(c >= 0.0 && c.is_finite()) {
        return Err(invalid(format!("threshold c must be finite and ≥ 0, got {c}")));
    }
    let qo = q.order_by_norm();
    let po = p.order_by_norm();
    let (qn, pn) = (q.norms(), p.norms());

    let (mut i, mut j) = (0, 0);
    let mut out = Vec::new();
    while i < qo.len() && j < po.len() {
        let (a, b) = (qn[qo[i]], pn[po[j]]);
        let d = a - b;
        let slack = c + NORM_ULPS * f64::EPSILON * a.max(b);
        if d > slack {
            j += 1;
        } else if d < -slack {
            i += 1;
        } else {
            out.push((qo[i], po[j]));
            i += 1;
            j += 1;
        }
    }
    Ok(CorrespondenceSet::new(out))
}

/// Every pair with `|‖q_i‖ − ‖p_j‖| ≤ c`.
///
/// Both clouds are sorted by norm; a sliding window over the sorted `P` norms
/// is advanced once per point of `Q` in norm order, so the scan is
/// `O(ℓ + m log m)` for an output of size `ℓ`. Pairs are emitted in
/// lexicographic `(i, j)` order; that order is a presentation choice and not
/// part of the algorithm.
pub fn arcs_n_match(q: &PointCloud, p: &PointCloud, c: f64) -> Result<CorrespondenceSet> {
    if !(c > 0.0 && c.is_finite()) {
        return Err(invalid(format!("threshold c must be finite and > 0, got {c}")));
    }
    let qo = q.order_by_norm();
    let po = p.order_by_norm();
    let (qn, pn) = (q.norms(), p.norms());

    // window[i] = range of positions in `po` matching q_i
    let mut window = vec![(0usize, 0usize); q.len()];
    let (mut lo, mut hi) = (0, 0);
    for &i in &qo {
        let n = qn[i];
        while lo < po.len() && pn[po[lo]] < n - c {
            lo += 1;
        }
        hi = hi.max(lo);
        while hi < po.len() && pn[po[hi]] <= n + c {
            hi += 1;
        }
        window[i] = (lo, hi);
    }

    let total: usize = window.iter().map(|(a, b)| b - a).sum();
    let mut pairs = Vec::with_capacity(total);
    let mut js = Vec::new();
    for (i, &(a, b)) in window.iter().enumerate() {
        js.clear();
        js.extend_from_slice(&po[a..b]);
        js.sort_unstable();
        pairs.extend(js.iter().map(|&j| (i, j)));
    }
    Ok(CorrespondenceSet { pairs })
}

/// Noiseless solver: exact norm matching followed by a least-squares fit over
/// all matched pairs.
pub fn arcs_solve(q: &PointCloud, p: &PointCloud) -> Result<(RotationMatrix, CorrespondenceSet)> {
    let matches = arcs_match(q, p, 0.0)?;
    if matches.len() < 2 {
        return Err(Error::Degenerate(format!(
            "exact norm matching found {} pair(s); at least 2 are needed",
            matches.len()
        )));
    }
    let pairs: Vec<(Point3, Point3)> = matches
        .pairs()
        .iter()
        .map(|&(i, j)| (q.points()[i], p.points()[j]))
        .collect();
    let r = kabsch(&pairs)?;
    Ok((r, matches))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Vector3;
    use proptest::prelude::*;

    fn cloud(pts: &[[f64; 3]]) -> PointCloud {
        PointCloud::new(pts.iter().map(|p| Vector3::from(*p)).collect()).unwrap()
    }

    fn brute_force(q: &PointCloud, p: &PointCloud, c: f64) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for (i, a) in q.norms().iter().enumerate() {
            for (j, b) in p.norms().iter().enumerate() {
                if (a - b).abs() <= c {
                    out.push((i, j));
                }
            }
        }
        out
    }

    #[test]
    fn exact_match_small_example() {
        let q = cloud(&[[1.0, 0.0, 0.0], [0.0, 2.0, 0.0], [5.0, 5.0, 5.0]]);
        let p = cloud(&[[0.0, 0.0, 1.0], [2.0, 0.0, 0.0]]);
        assert_eq!(arcs_match(&q, &p, 0.0).unwrap().pairs(), &[(0, 0), (1, 1)]);
    }

    #[test]
    fn exact_match_identical_clouds() {
        let q = cloud(&[[3.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 2.0], [1.0, 1.0, 1.0]]);
        let got = arcs_match(&q, &q, 0.0).unwrap();
        assert_eq!(got.pairs(), &[(0, 0), (1, 1), (2, 2), (3, 3)]);
        let (r, _) = arcs_solve(&q, &q).unwrap();
        assert!((r.matrix() - nalgebra::Matrix3::identity()).amax() < 1e-12);
    }

    #[test]
    fn empty_clouds_match_nothing() {
        let e = PointCloud::new(vec![]).unwrap();
        let q = cloud(&[[1.0, 0.0, 0.0]]);
        assert!(arcs_match(&e, &q, 0.0).unwrap().is_empty());
        assert!(arcs_n_match(&q, &e, 0.1).unwrap().is_empty());
    }

    #[test]
    fn window_match_small_example() {
        let q = cloud(&[[1.0, 0.0, 0.0]]);
        let p = cloud(&[[0.95, 0.0, 0.0], [1.04, 0.0, 0.0], [2.0, 0.0, 0.0]]);
        assert_eq!(arcs_n_match(&q, &p, 0.05).unwrap().pairs(), &[(0, 0), (0, 1)]);
    }

    #[test]
    fn threshold_preconditions() {
        let q = cloud(&[[1.0, 0.0, 0.0]]);
        assert!(arcs_match(&q, &q, -1.0).is_err());
        assert!(arcs_n_match(&q, &q, 0.0).is_err());
        assert!(arcs_n_match(&q, &q, f64::NAN).is_err());
    }

    #[test]
    fn solve_needs_two_matches() {
        let q = cloud(&[[1.0, 0.0, 0.0], [0.0, 3.0, 0.0]]);
        let p = cloud(&[[0.0, 1.0, 0.0], [0.0, 0.0, 7.0]]);
        assert!(matches!(arcs_solve(&q, &p), Err(Error::Degenerate(_))));
    }

    #[test]
    fn non_finite_points_rejected() {
        assert!(PointCloud::new(vec![Vector3::new(f64::NAN, 0.0, 0.0)]).is_err());
    }

    fn arb_cloud(max: usize) -> impl Strategy<Value = PointCloud> {
        prop::collection::vec(prop::array::uniform3(-3.0f64..3.0), 0..max)
            .prop_map(|pts| cloud(&pts))
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]

        #[test]
        fn window_match_equals_brute_force(q in arb_cloud(200), p in arb_cloud(200), c in 0.001f64..0.5) {
            let got = arcs_n_match(&q, &p, c).unwrap();
            let want = brute_force(&q, &p, c);
            prop_assert_eq!(got.pairs(), want.as_slice());
        }

        #[test]
        fn exact_match_is_partial_matching(q in arb_cloud(100), p in arb_cloud(100), c in 0.0f64..0.3) {
            let got = arcs_match(&q, &p, c).unwrap();
            prop_assert!(got.is_partial_matching());
            for &(i, j) in got.pairs() {
                prop_assert!((q.norms()[i] - p.norms()[j]).abs() <= c);
            }
        }

        #[test]
        fn window_match_invariant_to_input_order(q in arb_cloud(60), p in arb_cloud(60), c in 0.01f64..0.5) {
            let got = arcs_n_match(&q, &p, c).unwrap();
            let qr = PointCloud::new(q.points().iter().rev().copied().collect()).unwrap();
            let pr = PointCloud::new(p.points().iter().rev().copied().collect()).unwrap();
            let (m, n) = (q.len(), p.len());
            let back = CorrespondenceSet::new(
                arcs_n_match(&qr, &pr, c).unwrap().pairs().iter().map(|&(i, j)| (m - 1 - i, n - 1 - j)).collect(),
            );
            prop_assert_eq!(got, back);
        }
    }
}
