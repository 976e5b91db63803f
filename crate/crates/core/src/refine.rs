//! Robust rotation refinement over unit quaternions.
//!
//! A pair `(y, x)` induces a 4×4 positive semi-definite matrix `D` with
//! `wᵀDw = ‖y − R(w)x‖²` for every unit quaternion `w`. The robust objective
//! `h(w) = Σᵢ √(wᵀDᵢw)` is minimized on the sphere S³ by Riemannian
//! subgradient descent with geometrically shrinking steps `γ_t = βᵗγ₀`:
//!
//! ```text
//! w ← normalize(w − γ_t (I − wwᵀ) Σᵢ Dᵢw / √(wᵀDᵢw))
//! ```
//!
//! Inside the [`refine`] loop `h` is divided by the number of terms, which
//! does not move its minimizers but keeps the step size meaningful across
//! problem sizes.

use nalgebra::{Matrix4, SymmetricEigen, Vector4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::consensus::PairList;
use crate::error::{invalid, Error, Result};
use crate::geom::{Point3, UnitQuaternion};

/// Terms with `wᵀDw` at or below this contribute nothing to the subgradient.
const SMOOTH_FLOOR: f64 = 1e-18;
/// Relative kink threshold. Evaluating `wᵀDw` in floating point leaves an
/// error of order `ε·tr(D)`, so a residual that is exactly zero in theory
/// typically comes out near 1e-16 times the data scale.
const SMOOTH_FLOOR_REL: f64 = 1e-13;

/// Symmetric PSD matrix `D` of a squared residual `wᵀDw`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadForm {
    m: Matrix4<f64>,
    /// Values of `wᵀDw` at or below this are treated as zero.
    floor: f64,
}

impl QuadForm {
    /// Checks symmetry (1e-12) and positive semi-definiteness (eigenvalues
    /// ≥ −1e-9).
    pub fn new(m: Matrix4<f64>) -> Result<Self> {
        if m.iter().any(|v| !v.is_finite()) {
            return Err(invalid("quadratic form has a non-finite entry"));
        }
        if (m - m.transpose()).amax() > 1e-12 {
            return Err(invalid("quadratic form is not symmetric"));
        }
        let min = SymmetricEigen::new(m).eigenvalues.min();
        if min < -1e-9 {
            return Err(invalid(format!("quadratic form is not PSD (eigenvalue {min})")));
        }
        Ok(Self::from_matrix(m))
    }

    fn from_matrix(m: Matrix4<f64>) -> Self {
        let floor = SMOOTH_FLOOR.max(SMOOTH_FLOOR_REL * m.trace() / 4.0);
        Self { m, floor }
    }

    pub fn matrix(&self) -> &Matrix4<f64> {
        &self.m
    }

    pub fn eval(&self, w: &Vector4<f64>) -> f64 {
        w.dot(&(self.m * w))
    }

    /// Eigenvalues in ascending order.
    pub fn eigenvalues(&self) -> Vector4<f64> {
        let mut e: Vec<f64> = SymmetricEigen::new(self.m).eigenvalues.iter().copied().collect();
        e.sort_by(f64::total_cmp);
        Vector4::from_vec(e)
    }

    /// `λ D`, for `λ ≥ 0`.
    pub fn scaled(&self, lambda: f64) -> Self {
        Self::from_matrix(self.m * lambda)
    }

    pub(crate) fn from_matrix_unchecked(m: Matrix4<f64>) -> Self {
        Self::from_matrix(m)
    }
}

/// `D = (‖y‖² + ‖x‖²)I₄ − 2C` with `C = y₁X₁ + y₂X₂ + y₃X₃`, where `wᵀXₖw` is
/// the k-th entry of `R(w)x`.
pub fn build_d(y: &Point3, x: &Point3) -> QuadForm {
    let (x1, x2, x3) = (x[0], x[1], x[2]);
    #[rustfmt::skip]
    let xm1 = Matrix4::new(
        x1,  0.0, x3,  -x2,
        0.0, x1,  x2,   x3,
        x3,  x2, -x1,   0.0,
        -x2, x3,  0.0, -x1,
    );
    #[rustfmt::skip]
    let xm2 = Matrix4::new(
        x2, -x3,  0.0,  x1,
        -x3, -x2, x1,   0.0,
        0.0, x1,  x2,   x3,
        x1,  0.0, x3,  -x2,
    );
    #[rustfmt::skip]
    let xm3 = Matrix4::new(
        x3,  x2, -x1,  0.0,
        x2, -x3,  0.0, x1,
        -x1, 0.0, -x3, x2,
        0.0, x1,  x2,  x3,
    );
    let c = xm1 * y[0] + xm2 * y[1] + xm3 * y[2];
    QuadForm::from_matrix(Matrix4::identity() * (y.norm_squared() + x.norm_squared()) - c * 2.0)
}

/// One quadratic form per pair.
pub fn build_all(pairs: &PairList) -> Vec<QuadForm> {
    pairs.pairs().iter().map(|p| build_d(&p.y, &p.x)).collect()
}

/// `h(w) = Σᵢ √max(wᵀDᵢw, 0)`.
pub fn h_value(w: &UnitQuaternion, ds: &[QuadForm]) -> f64 {
    h_raw(w.as_vector(), ds)
}

fn h_raw(w: &Vector4<f64>, ds: &[QuadForm]) -> f64 {
    ds.iter().map(|d| d.eval(w).max(0.0).sqrt()).sum()
}

fn euclidean_subgradient(w: &Vector4<f64>, ds: &[QuadForm]) -> Vector4<f64> {
    let mut g = Vector4::zeros();
    for d in ds {
        let dw = d.m * w;
        let q = w.dot(&dw);
        if q > d.floor {
            g += dw / q.sqrt();
        }
    }
    g
}

fn project_tangent(w: &Vector4<f64>, g: &Vector4<f64>) -> Vector4<f64> {
    g - w * w.dot(g)
}

/// Riemannian subgradient `(I − wwᵀ) Σᵢ Dᵢw / √(wᵀDᵢw)`. Terms at a kink
/// contribute the zero vector, which lies in their subdifferential. A term
/// counts as a kink when `wᵀDᵢw ≤ max(1e-18, 1e-13·tr(Dᵢ)/4)`.
pub fn riemannian_subgradient(w: &UnitQuaternion, ds: &[QuadForm]) -> Vector4<f64> {
    let w = w.as_vector();
    project_tangent(w, &euclidean_subgradient(w, ds))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RefineConfig {
    /// Initial step `γ₀ > 0`.
    pub gamma0: f64,
    /// Step decay `β ∈ (0, 1)`.
    pub beta: f64,
    /// Iteration cap `T ≥ 1`.
    pub max_iter: usize,
    /// Stop once `γ_t‖g‖` falls below this.
    pub tol: f64,
}

impl Default for RefineConfig {
    fn default() -> Self {
        Self { gamma0: 0.05, beta: 0.92, max_iter: 300, tol: 1e-10 }
    }
}

impl RefineConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma0 > 0.0 && self.gamma0.is_finite()) {
            return Err(invalid(format!("γ₀ must be > 0, got {}", self.gamma0)));
        }
        if !(self.beta > 0.0 && self.beta < 1.0) {
            return Err(invalid(format!("β must lie in (0, 1), got {}", self.beta)));
        }
        if self.max_iter == 0 {
            return Err(invalid("iteration cap must be ≥ 1"));
        }
        if !(self.tol >= 0.0) {
            return Err(invalid(format!("tolerance must be ≥ 0, got {}", self.tol)));
        }
        Ok(())
    }
}

/// State after one update.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RefineStep {
    pub w: UnitQuaternion,
    /// Normalized objective `h(w)/ℓ` at `w`.
    pub h: f64,
    /// `‖w_new − w_old‖`.
    pub moved: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RefineOutput {
    pub w: UnitQuaternion,
    /// One entry per update actually taken.
    pub history: Vec<RefineStep>,
    /// Normalized objective at the starting point.
    pub h0: f64,
}

impl RefineOutput {
    pub fn iterations(&self) -> usize {
        self.history.len()
    }
}

/// Riemannian subgradient descent from `w0`; see the module docs.
///
/// Local linear convergence to `±w*` needs a start inside a basin whose
/// radius depends on unobservable sharpness constants, so the start is not
/// checked; any unit `w0` is accepted.
pub fn refine(ds: &[QuadForm], w0: &UnitQuaternion, cfg: &RefineConfig) -> Result<RefineOutput> {
    cfg.validate()?;
    let scale = if ds.is_empty() { 1.0 } else { 1.0 / ds.len() as f64 };
    let mut w = *w0.as_vector();
    let h0 = h_raw(&w, ds) * scale;
    let mut history = Vec::new();
    let mut gamma = cfg.gamma0;
    for _ in 0..cfg.max_iter {
        let g = project_tangent(&w, &euclidean_subgradient(&w, ds)) * scale;
        let gn = g.norm();
        if gn * gamma < cfg.tol {
            break;
        }
        let z = w - g * gamma;
        let zn = z.norm();
        // g ⊥ w, so ‖w − γg‖² = 1 + γ²‖g‖² ≥ 1
        if !(zn >= 1.0 - 1e-9) {
            return Err(Error::Internal(format!(
                "pre-projection norm {zn} < 1 in refinement step"
            )));
        }
        let next = z / zn;
        let moved = (next - w).norm();
        w = next;
        history.push(RefineStep {
            w: UnitQuaternion::from_vector_unchecked(w),
            h: h_raw(&w, ds) * scale,
            moved,
        });
        gamma *= cfg.beta;
    }
    Ok(RefineOutput { w: UnitQuaternion::from_vector_unchecked(w), history, h0 })
}

/// Monte-Carlo estimates of the sharpness constants of `h` at `±w_true`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SharpnessReport {
    /// Upper estimate of `η_min = (1/k) min_{w ⊥ w*, ‖w‖=1} Σ_{inliers} √(wᵀDw)`.
    pub eta_min: f64,
    /// Lower estimate of `η_max = (1/(ℓ−k)) max_{‖w‖=1} Σ_{outliers} √(wᵀDw)`.
    pub eta_max: f64,
    /// `α* = k·η_min/√2 − (ℓ−k)·η_max`; positive means `±w*` is sharp.
    pub alpha: f64,
    /// `Σᵢ √λ_max(Dᵢ)`, a Lipschitz constant of `h`.
    pub lipschitz: f64,
    pub samples: usize,
}

/// Estimates `η_min`, `η_max` and `α*` by sampling followed by local search.
///
/// Both extrema are nonconvex problems, so the estimates are one-sided: the
/// reported `η_min` is an upper bound on the true minimum and `η_max` a lower
/// bound on the true maximum.
pub fn estimate_sharpness(
    ds: &[QuadForm],
    inliers: &[usize],
    w_true: &UnitQuaternion,
    n_samples: usize,
    seed: u64,
) -> Result<SharpnessReport> {
    let mut is_inlier = vec![false; ds.len()];
    for &i in inliers {
        if i >= ds.len() {
            return Err(invalid(format!("inlier index {i} out of range for {} forms", ds.len())));
        }
        is_inlier[i] = true;
    }
    let inl: Vec<QuadForm> = ds.iter().zip(&is_inlier).filter(|(_, &f)| f).map(|(d, _)| *d).collect();
    let out: Vec<QuadForm> = ds.iter().zip(&is_inlier).filter(|(_, &f)| !f).map(|(d, _)| *d).collect();
    if inl.is_empty() || out.is_empty() {
        return Err(invalid("inliers must be a nonempty proper subset"));
    }
    if n_samples == 0 {
        return Err(invalid("need at least one sample"));
    }
    let (k, o) = (inl.len() as f64, out.len() as f64);
    let wt = *w_true.as_vector();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let in_plane = |v: Vector4<f64>| -> Vector4<f64> { v - wt * wt.dot(&v) };
    let mean_in = |w: &Vector4<f64>| h_raw(w, &inl) / k;
    let mean_out = |w: &Vector4<f64>| h_raw(w, &out) / o;

    let mut mins: Vec<(f64, Vector4<f64>)> = (0..n_samples)
        .filter_map(|_| {
            let w = in_plane(gauss4(&mut rng));
            let n = w.norm();
            (n > 1e-12).then(|| (mean_in(&(w / n)), w / n))
        })
        .collect();
    mins.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut eta_min = f64::INFINITY;
    for &(_, start) in mins.iter().take(LOCAL_STARTS) {
        let w = local_search(start, -1.0, |w| euclidean_subgradient(w, &inl) / k, &in_plane);
        eta_min = eta_min.min(mean_in(&w)).min(mean_in(&start));
    }

    let mut maxs: Vec<(f64, Vector4<f64>)> = (0..n_samples)
        .map(|_| {
            let w = gauss4(&mut rng).normalize();
            (mean_out(&w), w)
        })
        .collect();
    maxs.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut eta_max = 0.0f64;
    for &(_, start) in maxs.iter().take(LOCAL_STARTS) {
        let w = local_search(start, 1.0, |w| euclidean_subgradient(w, &out) / o, &|v| v);
        eta_max = eta_max.max(mean_out(&w)).max(mean_out(&start));
    }

    let lipschitz = ds
        .iter()
        .map(|d| d.eigenvalues()[3].max(0.0).sqrt())
        .sum();
    Ok(SharpnessReport {
        eta_min,
        eta_max,
        alpha: k * eta_min / std::f64::consts::SQRT_2 - o * eta_max,
        lipschitz,
        samples: n_samples,
    })
}

const LOCAL_STARTS: usize = 5;
const LOCAL_ITERS: usize = 200;

/// Projected subgradient steps on the unit sphere of the subspace given by
/// `project`; `sign` is −1 to descend and +1 to ascend.
fn local_search(
    mut w: Vector4<f64>,
    sign: f64,
    grad: impl Fn(&Vector4<f64>) -> Vector4<f64>,
    project: &dyn Fn(Vector4<f64>) -> Vector4<f64>,
) -> Vector4<f64> {
    let mut step = 0.1;
    for _ in 0..LOCAL_ITERS {
        let g = project(grad(&w));
        let g = g - w * w.dot(&g);
        let z = project(w + g * (sign * step));
        let n = z.norm();
        if n < 1e-12 {
            break;
        }
        w = z / n;
        step *= 0.97;
    }
    w
}

pub(crate) fn gauss4(rng: &mut impl Rng) -> Vector4<f64> {
    Vector4::from_fn(|_, _| rng.sample(StandardNormal))
}
