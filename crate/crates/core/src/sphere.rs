//! Geometry on the unit circle and unit sphere.
//!
//! Spins of both models are stored as `[f64; 3]`. XY spins live in the
//! `z = 0` plane and every operation here maps planar inputs to planar
//! outputs, so the two models share one code path.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::lattice::Model;

pub type Vec3 = [f64; 3];

/// Norm tolerance for inputs that are supposed to be unit vectors.
pub const UNIT_TOL: f64 = 1e-9;
/// Relative tolerance on `|v . sigma|` for a vector to count as tangent.
pub const TANGENT_TOL: f64 = 1e-9;
/// Below this length a tangent vector is treated as zero by [`exp_map`].
pub const ZERO_ARC: f64 = 1e-15;

#[inline]
pub fn dot(a: &Vec3, b: &Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
pub fn norm_sq(a: &Vec3) -> f64 {
    dot(a, a)
}

#[inline]
pub fn norm(a: &Vec3) -> f64 {
    norm_sq(a).sqrt()
}

#[inline]
pub fn add(a: &Vec3, b: &Vec3) -> Vec3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

#[inline]
pub fn sub(a: &Vec3, b: &Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
pub fn scale(s: f64, a: &Vec3) -> Vec3 {
    [s * a[0], s * a[1], s * a[2]]
}

#[inline]
pub fn cross(a: &Vec3, b: &Vec3) -> Vec3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

/// `v - (v . sigma) sigma` without any checks on `sigma`.
#[inline]
pub fn project(sigma: &Vec3, v: &Vec3) -> Vec3 {
    let c = dot(v, sigma);
    [v[0] - c * sigma[0], v[1] - c * sigma[1], v[2] - c * sigma[2]]
}

/// A unit vector on S^1 (planar, `z = 0`) or S^2.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[repr(transparent)]
#[serde(transparent)]
pub struct SpinVector(Vec3);

impl SpinVector {
    /// Wraps `v`, which must already have unit norm.
    pub fn new(v: Vec3) -> Result<Self> {
        let n = norm(&v);
        if !n.is_finite() || (n - 1.0).abs() > UNIT_TOL {
            return Err(invalid(format!("spin has norm {n}, expected 1")));
        }
        Ok(SpinVector(v))
    }

    /// Scales `v` onto the sphere.
    pub fn normalize(v: Vec3) -> Result<Self> {
        let n = norm(&v);
        if !(n > 1e-12) || !n.is_finite() {
            return Err(Error::DegenerateStep(n));
        }
        Ok(SpinVector(scale(1.0 / n, &v)))
    }

    pub(crate) fn from_unit_unchecked(v: Vec3) -> Self {
        SpinVector(v)
    }

    /// Planar spin at angle `theta` from the x axis.
    pub fn planar(theta: f64) -> Self {
        SpinVector([theta.cos(), theta.sin(), 0.0])
    }

    /// Spin with polar angle `theta` (from +z) and azimuth `phi`.
    pub fn spherical(theta: f64, phi: f64) -> Self {
        let s = theta.sin();
        SpinVector([s * phi.cos(), s * phi.sin(), theta.cos()])
    }

    pub fn e1() -> Self {
        SpinVector([1.0, 0.0, 0.0])
    }

    #[inline]
    pub fn as_array(&self) -> &Vec3 {
        &self.0
    }

    #[inline]
    pub fn into_array(self) -> Vec3 {
        self.0
    }

    pub fn norm(&self) -> f64 {
        norm(&self.0)
    }

    pub fn angle(&self) -> f64 {
        self.0[1].atan2(self.0[0])
    }
}

impl std::ops::Index<usize> for SpinVector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

fn check_unit(sigma: &SpinVector) -> Result<()> {
    let n = sigma.norm();
    if (n - 1.0).abs() > UNIT_TOL {
        return Err(invalid(format!("base point has norm {n}, expected 1")));
    }
    Ok(())
}

fn check_tangent(sigma: &SpinVector, v: &Vec3) -> Result<()> {
    let nv = norm(v);
    let d = dot(v, sigma.as_array()).abs();
    if d > TANGENT_TOL * nv {
        return Err(invalid(format!(
            "vector is not tangent: |v.sigma| = {d:e}, |v| = {nv:e}"
        )));
    }
    Ok(())
}

/// Orthogonal projection of `v` onto the tangent plane at `sigma`.
pub fn tangent_project(sigma: &SpinVector, v: &Vec3) -> Result<Vec3> {
    check_unit(sigma)?;
    Ok(project(sigma.as_array(), v))
}

/// `sigma x v`, the alternative tangent projection for the Heisenberg model.
pub fn cross_project(model: Model, sigma: &SpinVector, v: &Vec3) -> Result<Vec3> {
    if model != Model::Heisenberg {
        return Err(Error::UnsupportedModel(model.name()));
    }
    check_unit(sigma)?;
    Ok(cross(sigma.as_array(), v))
}

/// How raw Gaussian noise is mapped into the tangent plane.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Projection {
    /// `(I - sigma sigma^T) v`
    Orthogonal,
    /// `sigma x v` (S^2 only)
    Cross,
}

impl Projection {
    #[inline]
    pub fn apply(self, sigma: &Vec3, v: &Vec3) -> Vec3 {
        match self {
            Projection::Orthogonal => project(sigma, v),
            Projection::Cross => cross(sigma, v),
        }
    }
}

#[inline]
pub(crate) fn exp_map_unchecked(sigma: &Vec3, v: &Vec3) -> Vec3 {
    let len = norm(v);
    if len < ZERO_ARC {
        return *sigma;
    }
    let (s, c) = len.sin_cos();
    let k = s / len;
    [
        c * sigma[0] + k * v[0],
        c * sigma[1] + k * v[1],
        c * sigma[2] + k * v[2],
    ]
}

/// Great-circle step of arc length `|v|` from `sigma` in direction `v`.
///
/// `v` must be tangent at `sigma` up to [`TANGENT_TOL`]; the residual normal
/// component is stripped before stepping so the result stays on the sphere.
pub fn exp_map(sigma: &SpinVector, v: &Vec3) -> Result<SpinVector> {
    check_unit(sigma)?;
    check_tangent(sigma, v)?;
    if norm(v) < ZERO_ARC {
        return Ok(*sigma);
    }
    let t = project(sigma.as_array(), v);
    Ok(SpinVector(exp_map_unchecked(sigma.as_array(), &t)))
}

#[inline]
pub(crate) fn normalized_step_unchecked(sigma: &Vec3, w: &Vec3) -> Result<Vec3> {
    let s = add(sigma, w);
    let n = norm(&s);
    if !(n > 1e-12) {
        return Err(Error::DegenerateStep(n));
    }
    Ok(scale(1.0 / n, &s))
}

/// `(sigma + w) / |sigma + w|`.
pub fn normalized_step(sigma: &SpinVector, w: &Vec3) -> Result<SpinVector> {
    normalized_step_unchecked(sigma.as_array(), w).map(SpinVector)
}

/// Differences between the exponential-map proposal and its cheaper
/// approximations.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TaylorResiduals {
    /// exp map minus normalized step
    pub a: Vec3,
    /// exp map minus the linear step `sigma + v`
    pub c: Vec3,
    /// exp map minus `sigma + v - |v|^2 sigma / 2`
    pub d: Vec3,
}

pub fn taylor_residuals(sigma: &SpinVector, v: &Vec3) -> Result<TaylorResiduals> {
    let e = exp_map(sigma, v)?.into_array();
    let s = sigma.as_array();
    let nrm = normalized_step(sigma, v)?.into_array();
    let lin = add(s, v);
    let quad = sub(&lin, &scale(0.5 * norm_sq(v), s));
    Ok(TaylorResiduals {
        a: sub(&e, &nrm),
        c: sub(&e, &lin),
        d: sub(&e, &quad),
    })
}
