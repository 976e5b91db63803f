//! Maximum interval stabbing by sort-and-sweep.
//!
//! Given closed intervals, or finite unions of them tagged with an owner, find
//! a point covered by the largest number of owners. The optimum is always
//! attained at some left endpoint, so it suffices to sort the left and right
//! endpoints separately and sweep: the depth just at a left endpoint `x` is
//! `#{starts ≤ x} − #{ends < x}`. Starts therefore win ties against ends and
//! touching closed intervals count as overlapping. The reported point is the
//! leftmost optimal one.
//!
//! Each owner's pieces are merged into disjoint, non-touching intervals at
//! construction, so an owner contributes at most one to the depth anywhere.

use serde::Serialize;

use crate::error::{invalid, Result};

/// Closed interval `[lo, hi]` with finite endpoints, `lo ≤ hi`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite()) {
            return Err(invalid(format!("interval [{lo}, {hi}] has a non-finite endpoint")));
        }
        if lo > hi {
            return Err(invalid(format!("interval [{lo}, {hi}] has lo > hi")));
        }
        Ok(Self { lo, hi })
    }

    pub fn contains(&self, x: f64) -> bool {
        self.lo <= x && x <= self.hi
    }
}

/// The feasible set of one measurement: a union of closed intervals, stored
/// sorted and pairwise disjoint.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IntervalUnion {
    owner: usize,
    pieces: Vec<Interval>,
}

impl IntervalUnion {
    /// Sorts `pieces` and merges any that overlap or touch.
    pub fn new(owner: usize, mut pieces: Vec<Interval>) -> Self {
        pieces.sort_unstable_by(|a, b| a.lo.total_cmp(&b.lo).then(a.hi.total_cmp(&b.hi)));
        let mut merged: Vec<Interval> = Vec::with_capacity(pieces.len());
        for p in pieces {
            match merged.last_mut() {
                Some(last) if p.lo <= last.hi => last.hi = last.hi.max(p.hi),
                _ => merged.push(p),
            }
        }
        Self { owner, pieces: merged }
    }

    pub fn empty(owner: usize) -> Self {
        Self { owner, pieces: Vec::new() }
    }

    pub fn single(owner: usize, interval: Interval) -> Self {
        Self { owner, pieces: vec![interval] }
    }

    pub fn owner(&self) -> usize {
        self.owner
    }

    pub fn pieces(&self) -> &[Interval] {
        &self.pieces
    }

    pub fn is_empty(&self) -> bool {
        self.pieces.is_empty()
    }

    pub fn contains(&self, x: f64) -> bool {
        self.pieces.iter().any(|p| p.contains(x))
    }

    /// Total length of the union.
    pub fn measure(&self) -> f64 {
        self.pieces.iter().map(|p| p.hi - p.lo).sum()
    }
}

/// A maximizing point and the owners whose unions contain it, ascending.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Stab {
    pub point: f64,
    pub owners: Vec<usize>,
}

impl Stab {
    pub fn count(&self) -> usize {
        self.owners.len()
    }
}

/// Finds the leftmost point covered by the most owners. Empty input (or only
/// empty unions) yields point 0 and no owners.
pub fn stab_max(items: &[IntervalUnion]) -> Stab {
    let n: usize = items.iter().map(|u| u.pieces.len()).sum();
    let mut starts = Vec::with_capacity(n);
    let mut ends = Vec::with_capacity(n);
    for p in items.iter().flat_map(|u| &u.pieces) {
        starts.push(p.lo);
        ends.push(p.hi);
    }
    let Some((point, _)) = sweep(&mut starts, &mut ends) else {
        return Stab { point: 0.0, owners: Vec::new() };
    };
    let mut owners: Vec<usize> = items
        .iter()
        .filter(|u| u.contains(point))
        .map(|u| u.owner)
        .collect();
    owners.sort_unstable();
    owners.dedup();
    Stab { point, owners }
}

/// Number of owners whose union contains `x`.
pub fn stab_count_at(items: &[IntervalUnion], x: f64) -> usize {
    items.iter().filter(|u| u.contains(x)).count()
}

/// Sweep over raw endpoint arrays. `starts[k]` and `ends[k]` need not stay
/// paired: both are sorted in place. The caller guarantees that no two
/// intervals of the same owner overlap.
///
/// Returns the leftmost maximizing point and its depth.
pub(crate) fn sweep(starts: &mut [f64], ends: &mut [f64]) -> Option<(f64, usize)> {
    debug_assert_eq!(starts.len(), ends.len());
    if starts.is_empty() {
        return None;
    }
    radsort::sort(starts);
    radsort::sort(ends);

    let n = starts.len();
    let mut best = (starts[0], 0usize);
    let (mut i, mut j) = (0, 0);
    while i < n {
        let x = starts[i];
        let mut k = i + 1;
        while k < n && starts[k] == x {
            k += 1;
        }
        while j < n && ends[j] < x {
            j += 1;
        }
        let depth = k - j;
        if depth > best.1 {
            best = (x, depth);
        }
        i = k;
    }
    // normalizes -0.0
    Some((best.0 + 0.0, best.1))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn iv(lo: f64, hi: f64) -> Interval {
        Interval::new(lo, hi).unwrap()
    }

    fn unions(list: &[&[(f64, f64)]]) -> Vec<IntervalUnion> {
        list.iter()
            .enumerate()
            .map(|(k, ps)| IntervalUnion::new(k, ps.iter().map(|&(a, b)| iv(a, b)).collect()))
            .collect()
    }

    /// Evaluates the depth at every endpoint; returns the leftmost best.
    pub(crate) fn brute_force(items: &[IntervalUnion]) -> (f64, usize) {
        let mut xs: Vec<f64> = items
            .iter()
            .flat_map(|u| u.pieces().iter().flat_map(|p| [p.lo, p.hi]))
            .collect();
        xs.sort_by(f64::total_cmp);
        let mut best = (0.0, 0);
        for x in xs {
            let c = stab_count_at(items, x);
            if c > best.1 {
                best = (x, c);
            }
        }
        best
    }

    #[test]
    fn three_intervals() {
        let items = unions(&[&[(0.0, 1.0)], &[(0.5, 2.0)], &[(3.0, 4.0)]]);
        let s = stab_max(&items);
        assert_eq!(s.point, 0.5);
        assert_eq!(s.owners, vec![0, 1]);
        assert_eq!(stab_count_at(&items, 0.75), 2);
        assert_eq!(stab_count_at(&items, 10.0), 0);
        assert_eq!(brute_force(&items), (0.5, 2));
    }

    #[test]
    fn single_interval() {
        let s = stab_max(&unions(&[&[(-2.5, 7.0)]]));
        assert_eq!((s.point, s.owners), (-2.5, vec![0]));
    }

    #[test]
    fn touching_endpoints_count() {
        let s = stab_max(&unions(&[&[(0.0, 1.0)], &[(1.0, 2.0)]]));
        assert_eq!((s.point, s.owners), (1.0, vec![0, 1]));
    }

    #[test]
    fn empty_input() {
        let s = stab_max(&[]);
        assert_eq!((s.point, s.count()), (0.0, 0));
        let s = stab_max(&[IntervalUnion::empty(3)]);
        assert_eq!((s.point, s.count()), (0.0, 0));
    }

    #[test]
    fn degenerate_point_intervals() {
        let s = stab_max(&unions(&[&[(1.0, 1.0)], &[(0.0, 2.0)], &[(1.0, 1.0)]]));
        assert_eq!((s.point, s.owners), (1.0, vec![0, 1, 2]));
    }

    #[test]
    fn owner_counted_once() {
        // touching pieces of the same owner are merged
        let items = unions(&[&[(0.0, 1.0), (1.0, 2.0)], &[(1.0, 3.0)]]);
        assert_eq!(items[0].pieces().len(), 1);
        let s = stab_max(&items);
        assert_eq!((s.point, s.owners), (1.0, vec![0, 1]));
        // overlapping pieces likewise
        let items = unions(&[&[(0.0, 2.0), (0.5, 1.0), (5.0, 6.0)]]);
        assert_eq!(items[0].pieces(), &[iv(0.0, 2.0), iv(5.0, 6.0)]);
        assert_eq!(stab_max(&items).count(), 1);
    }

    #[test]
    fn rejects_bad_intervals() {
        assert!(Interval::new(1.0, 0.0).is_err());
        assert!(Interval::new(f64::NAN, 0.0).is_err());
        assert!(Interval::new(0.0, f64::INFINITY).is_err());
    }

    #[test]
    fn negative_zero_endpoint() {
        let s = stab_max(&unions(&[&[(-0.0, 1.0)], &[(0.0, 1.0)]]));
        assert_eq!(s.count(), 2);
        assert!(s.point.is_sign_positive());
    }

    fn random_instance(rng: &mut impl Rng, l: usize, grid: bool) -> Vec<IntervalUnion> {
        (0..l)
            .map(|k| {
                let pieces = rng.gen_range(1..=3);
                let ps = (0..pieces)
                    .map(|_| {
                        // a coarse grid forces many exact endpoint ties
                        let (a, w) = if grid {
                            (rng.gen_range(0..20) as f64 * 0.5, rng.gen_range(0..6) as f64 * 0.5)
                        } else {
                            (rng.gen_range(-10.0..10.0), rng.gen_range(0.0..3.0))
                        };
                        iv(a, a + w)
                    })
                    .collect();
                IntervalUnion::new(k, ps)
            })
            .collect()
    }

    #[test]
    fn sweep_matches_brute_force_on_random_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(20);
        for trial in 0..1000 {
            let l = rng.gen_range(1..=100);
            let items = random_instance(&mut rng, l, trial % 2 == 0);
            let s = stab_max(&items);
            let (x, c) = brute_force(&items);
            assert_eq!(s.count(), c, "trial {trial}");
            assert_eq!(s.point, x, "trial {trial}");
            assert_eq!(stab_count_at(&items, s.point), s.count());
        }
    }

    proptest! {
        #[test]
        fn enlarging_an_interval_never_hurts(
            raw in prop::collection::vec((-5.0f64..5.0, 0.0f64..2.0), 1..40),
            pick in any::<prop::sample::Index>(),
            grow in 0.0f64..3.0,
        ) {
            let mut items: Vec<IntervalUnion> = raw
                .iter()
                .enumerate()
                .map(|(k, &(a, w))| IntervalUnion::single(k, iv(a, a + w)))
                .collect();
            let before = stab_max(&items).count();
            let k = pick.index(items.len());
            let p = items[k].pieces()[0];
            items[k] = IntervalUnion::single(k, iv(p.lo - grow, p.hi + grow));
            prop_assert!(stab_max(&items).count() >= before);
        }
    }
}
