//! Seeded synthetic instances and the metrics used to score solvers on them.
//!
//! Every generator is a pure function of its parameters and a `u64` seed,
//! which initializes a ChaCha8 stream. Points are standard Gaussian in R³,
//! rotations have a uniformly random axis and an angle uniform in `[0, 2π)`,
//! and noise is isotropic Gaussian with standard deviation `σ` per axis.

use nalgebra::{Matrix4, Vector3, Vector4};
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::consensus::{Pair, PairList, RESIDUAL_SIGMAS};
use crate::error::{invalid, Result};
use crate::geom::{axis_from_angles, rodrigues_unchecked, Point3, RotationMatrix, UnitQuaternion};
use crate::matching::{CorrespondenceSet, PointCloud};
use crate::refine::{gauss4, QuadForm};

/// Name of the generator behind every seeded stream.
pub const RNG_NAME: &str = "ChaCha8";

/// Robust rotation search instance: pairs `y ≈ R x` at `inliers`, unrelated
/// pairs elsewhere.
#[derive(Debug, Clone, PartialEq)]
pub struct RrsInstance {
    pub pairs: PairList,
    pub rotation: RotationMatrix,
    /// Ascending.
    pub inliers: Vec<usize>,
    pub sigma: f64,
    pub seed: u64,
    pub norm_constrained: bool,
}

/// Two clouds with `k` planted correspondences `q_i = R p_j + ε`.
#[derive(Debug, Clone, PartialEq)]
pub struct SrcsInstance {
    pub q: PointCloud,
    pub p: PointCloud,
    pub rotation: RotationMatrix,
    pub correspondences: CorrespondenceSet,
    pub sigma: f64,
    pub seed: u64,
}

/// Ground-truth rotation for a generator. Unset angles are drawn at random:
/// the axis uniformly on S² and `ω` uniformly in `[0, 2π)`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct RotationSpec {
    pub theta: Option<f64>,
    pub phi: Option<f64>,
    pub omega: Option<f64>,
}

impl RotationSpec {
    pub fn random() -> Self {
        Self::default()
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> RotationMatrix {
        let axis = match (self.theta, self.phi) {
            (None, None) => unit3(rng),
            (theta, phi) => {
                let theta = theta.unwrap_or_else(|| rng.gen_range(-1.0f64..=1.0).acos());
                let phi = phi.unwrap_or_else(|| rng.gen_range(0.0..std::f64::consts::TAU));
                axis_from_angles(theta, phi)
            }
        };
        let omega = self.omega.unwrap_or_else(|| rng.gen_range(0.0..std::f64::consts::TAU));
        rodrigues_unchecked(&axis, omega)
    }
}

/// Parameters of [`gen_rrs_spec`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RrsSpec {
    pub l: usize,
    pub k: usize,
    pub sigma: f64,
    pub norm_constrained: bool,
    #[serde(default)]
    pub rotation: RotationSpec,
}

fn gauss3(rng: &mut impl Rng) -> Point3 {
    Vector3::from_fn(|_, _| rng.sample(StandardNormal))
}

fn unit3(rng: &mut impl Rng) -> Point3 {
    loop {
        let v = gauss3(rng);
        let n = v.norm();
        if n > 1e-12 {
            return v / n;
        }
    }
}

/// [`gen_rrs_spec`] with a random rotation.
pub fn gen_rrs(l: usize, k: usize, sigma: f64, seed: u64, norm_constrained: bool) -> Result<RrsInstance> {
    gen_rrs_spec(&RrsSpec { l, k, sigma, norm_constrained, rotation: RotationSpec::random() }, seed)
}

/// `ℓ` pairs of which `k` (at random positions) are inliers
/// `y = R x + ε`, `x ~ N(0, I)`, `ε ~ N(0, σ²I)`; the rest are independent
/// Gaussian pairs. With `norm_constrained`, each outlier pair is redrawn until
/// `|‖y‖ − ‖x‖| ≤ 5.54σ`, so norms alone cannot expose it.
pub fn gen_rrs_spec(spec: &RrsSpec, seed: u64) -> Result<RrsInstance> {
    let RrsSpec { l, k, sigma, norm_constrained, rotation } = *spec;
    if k == 0 || k > l {
        return Err(invalid(format!("need 1 ≤ k ≤ ℓ, got k = {k}, ℓ = {l}")));
    }
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(invalid(format!("σ must be finite and ≥ 0, got {sigma}")));
    }
    if norm_constrained && sigma == 0.0 && k < l {
        return Err(invalid("the outlier norm constraint needs σ > 0 (the band |‖y‖ − ‖x‖| ≤ 5.54σ is empty)"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = rotation.sample(&mut rng);
    let mut inliers = index::sample(&mut rng, l, k).into_vec();
    inliers.sort_unstable();
    let mut is_inlier = vec![false; l];
    for &i in &inliers {
        is_inlier[i] = true;
    }
    let band = RESIDUAL_SIGMAS * sigma;
    let pairs = is_inlier
        .iter()
        .map(|&inlier| {
            if inlier {
                let x = gauss3(&mut rng);
                Pair { y: r.apply(&x) + sigma * gauss3(&mut rng), x }
            } else {
                loop {
                    let (y, x) = (gauss3(&mut rng), gauss3(&mut rng));
                    if !norm_constrained || (y.norm() - x.norm()).abs() <= band {
                        break Pair { y, x };
                    }
                }
            }
        })
        .collect();
    Ok(RrsInstance { pairs: PairList::new(pairs)?, rotation: r, inliers, sigma, seed, norm_constrained })
}

/// Clouds `Q` (`m` points) and `P` (`n` points) from `N(0, I)` with `k`
/// planted pairs `q_i = R p_j + ε` at random, distinct `i` and `j`.
pub fn gen_srcs(m: usize, n: usize, k: usize, sigma: f64, seed: u64) -> Result<SrcsInstance> {
    if k > n || n > m {
        return Err(invalid(format!("need k ≤ n ≤ m, got k = {k}, n = {n}, m = {m}")));
    }
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(invalid(format!("σ must be finite and ≥ 0, got {sigma}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = RotationSpec::random().sample(&mut rng);
    let p: Vec<Point3> = (0..n).map(|_| gauss3(&mut rng)).collect();
    let mut q: Vec<Point3> = (0..m).map(|_| gauss3(&mut rng)).collect();
    let js = index::sample(&mut rng, n, k).into_vec();
    let is = index::sample(&mut rng, m, k).into_vec();
    let mut truth = Vec::with_capacity(k);
    for (&i, &j) in is.iter().zip(&js) {
        q[i] = r.apply(&p[j]) + sigma * gauss3(&mut rng);
        truth.push((i, j));
    }
    Ok(SrcsInstance {
        q: PointCloud::new(q)?,
        p: PointCloud::new(p)?,
        rotation: r,
        correspondences: CorrespondenceSet::new(truth),
        sigma,
        seed,
    })
}

/// Quadratic forms `D = ZZᵀ` drawn from the idealized model used to reason
/// about sharpness: each of the two columns of an inlier `Z` is uniform on
/// the unit sphere of the hyperplane `⊥ w*`, each column of an outlier `Z` is
/// uniform on S³.
#[derive(Debug, Clone, PartialEq)]
pub struct SharpnessInstance {
    pub forms: Vec<QuadForm>,
    pub inliers: Vec<usize>,
    pub w_true: UnitQuaternion,
}

pub fn gen_sharpness_model(l: usize, k: usize, seed: u64) -> Result<SharpnessInstance> {
    if k == 0 || k > l {
        return Err(invalid(format!("need 1 ≤ k ≤ ℓ, got k = {k}, ℓ = {l}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = loop {
        let v = gauss4(&mut rng);
        if v.norm() > 1e-12 {
            break v.normalize();
        }
    };
    let column = |rng: &mut ChaCha8Rng, inlier: bool| -> Vector4<f64> {
        loop {
            let mut v = gauss4(rng);
            if inlier {
                v -= w * w.dot(&v);
            }
            let n = v.norm();
            if n > 1e-12 {
                return v / n;
            }
        }
    };
    let forms = (0..l)
        .map(|i| {
            let inlier = i < k;
            let (a, b) = (column(&mut rng, inlier), column(&mut rng, inlier));
            let m: Matrix4<f64> = a * a.transpose() + b * b.transpose();
            QuadForm::from_matrix_unchecked(m)
        })
        .collect();
    Ok(SharpnessInstance {
        forms,
        inliers: (0..k).collect(),
        w_true: UnitQuaternion::from_vector_unchecked(w),
    })
}

/// Fraction of errors strictly below `threshold` (degrees).
pub fn success_rate(errors: &[f64], threshold: f64) -> Result<f64> {
    if errors.is_empty() {
        return Err(invalid("success rate of an empty list"));
    }
    if !(threshold > 0.0) {
        return Err(invalid(format!("threshold must be > 0, got {threshold}")));
    }
    Ok(errors.iter().filter(|&&e| e < threshold).count() as f64 / errors.len() as f64)
}

/// Fraction of `consensus` that are true inliers; `None` for an empty set.
pub fn purity(consensus: &[usize], is_inlier: impl Fn(usize) -> bool) -> Option<f64> {
    if consensus.is_empty() {
        return None;
    }
    Some(consensus.iter().filter(|&&i| is_inlier(i)).count() as f64 / consensus.len() as f64)
}
