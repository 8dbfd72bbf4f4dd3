//! The embedded submanifold of d×l matrices of rank exactly r.
//!
//! A point is stored as `W = U·diag(s)·Vᵀ`. A tangent vector at `W` is the
//! triple `(M, Up, Vp)` standing for `U·M·Vᵀ + Up·Vᵀ + U·Vpᵀ` with
//! `Uᵀ·Up = 0` and `Vᵀ·Vp = 0`. Ambient matrices are only ever touched through
//! products with thin factors, so nothing d×l is formed.

use nalgebra::DVector;
use rand::Rng;
use rand_distr::StandardNormal;

use super::{Geometry, SpectralPenalty, RANK_EPS};
use crate::error::{Error, Result};
use crate::linalg::{at_mul, canonicalize_signs, thin_qr, thin_svd, DenseMatrix};

/// A d×l matrix accessed only through products with thin matrices.
pub trait AmbientMatrix {
    fn shape(&self) -> (usize, usize);
    /// `A · b` for b of shape l×k.
    fn mul(&self, b: &DenseMatrix) -> DenseMatrix;
    /// `Aᵀ · b` for b of shape d×k.
    fn tmul(&self, b: &DenseMatrix) -> DenseMatrix;
}

impl AmbientMatrix for DenseMatrix {
    fn shape(&self) -> (usize, usize) {
        (self.nrows(), self.ncols())
    }

    fn mul(&self, b: &DenseMatrix) -> DenseMatrix {
        self * b
    }

    fn tmul(&self, b: &DenseMatrix) -> DenseMatrix {
        at_mul(self, b)
    }
}

/// `left · rightᵀ`.
#[derive(Clone, Debug)]
pub struct LowRank {
    pub left: DenseMatrix,
    pub right: DenseMatrix,
}

impl AmbientMatrix for LowRank {
    fn shape(&self) -> (usize, usize) {
        (self.left.nrows(), self.right.nrows())
    }

    fn mul(&self, b: &DenseMatrix) -> DenseMatrix {
        &self.left * at_mul(&self.right, b)
    }

    fn tmul(&self, b: &DenseMatrix) -> DenseMatrix {
        &self.right * at_mul(&self.left, b)
    }
}

impl LowRank {
    pub fn to_dense(&self) -> DenseMatrix {
        &self.left * self.right.transpose()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FixedRankPoint {
    u: DenseMatrix,
    s: DVector<f64>,
    v: DenseMatrix,
}

impl FixedRankPoint {
    /// Validates orthonormality of the factors and positivity of `s`.
    pub fn new(u: DenseMatrix, s: Vec<f64>, v: DenseMatrix) -> Result<Self> {
        let r = s.len();
        if r == 0 || u.ncols() != r || v.ncols() != r {
            return Err(Error::invalid("fixed-rank point: factor widths must equal len(s) > 0"));
        }
        let tol = 1e-10 * r as f64;
        let eye = DenseMatrix::identity(r, r);
        if (at_mul(&u, &u) - &eye).norm() > tol || (at_mul(&v, &v) - &eye).norm() > tol {
            return Err(Error::invalid("fixed-rank point: factors are not orthonormal"));
        }
        if s.iter().any(|&x| !(x > 0.0) || !x.is_finite()) {
            return Err(Error::RankDeficient(
                "fixed-rank point: singular values must be positive".into(),
            ));
        }
        Ok(Self {
            u,
            s: DVector::from_vec(s),
            v,
        })
    }

    /// Best rank-r approximation of a dense matrix.
    pub fn from_dense(a: &DenseMatrix, r: usize) -> Result<Self> {
        let svd = thin_svd(a, r)?;
        if svd.s[r - 1] <= RANK_EPS * svd.s[0] {
            return Err(Error::RankDeficient(format!("matrix has numerical rank below {r}")));
        }
        Self::new(svd.u, svd.s, svd.v)
    }

    /// Random point with Haar-like factors and singular values in [1, 2).
    pub fn random<R: Rng + ?Sized>(d: usize, l: usize, r: usize, rng: &mut R) -> Self {
        let gu = DenseMatrix::from_fn(d, r, |_, _| rng.sample(StandardNormal));
        let gv = DenseMatrix::from_fn(l, r, |_, _| rng.sample(StandardNormal));
        let (u, _) = thin_qr(&gu);
        let (v, _) = thin_qr(&gv);
        let mut s: Vec<f64> = (0..r).map(|_| 1.0 + rng.random::<f64>()).collect();
        s.sort_by(|a, b| b.total_cmp(a));
        Self {
            u,
            s: DVector::from_vec(s),
            v,
        }
    }

    pub fn u(&self) -> &DenseMatrix {
        &self.u
    }

    pub fn s(&self) -> &DVector<f64> {
        &self.s
    }

    pub fn v(&self) -> &DenseMatrix {
        &self.v
    }

    pub fn rank(&self) -> usize {
        self.s.len()
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.u.nrows(), self.v.nrows())
    }

    /// `U·diag(s)` (d×r).
    pub fn u_scaled(&self) -> DenseMatrix {
        let mut us = self.u.clone();
        for (j, &s) in self.s.iter().enumerate() {
            us.column_mut(j).scale_mut(s);
        }
        us
    }

    pub fn to_dense(&self) -> DenseMatrix {
        self.u_scaled() * self.v.transpose()
    }

    pub fn as_low_rank(&self) -> LowRank {
        LowRank {
            left: self.u_scaled(),
            right: self.v.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FixedRankTangent {
    pub m: DenseMatrix,
    pub up: DenseMatrix,
    pub vp: DenseMatrix,
}

impl FixedRankTangent {
    pub fn zeros(d: usize, l: usize, r: usize) -> Self {
        Self {
            m: DenseMatrix::zeros(r, r),
            up: DenseMatrix::zeros(d, r),
            vp: DenseMatrix::zeros(l, r),
        }
    }

    /// The ambient matrix `U·M·Vᵀ + Up·Vᵀ + U·Vpᵀ` as `[U·M + Up, U]·[V, Vp]ᵀ`.
    pub fn ambient(&self, at: &FixedRankPoint) -> LowRank {
        let r = at.rank();
        let (d, l) = at.shape();
        let mut left = DenseMatrix::zeros(d, 2 * r);
        left.columns_mut(0, r).copy_from(&(&at.u * &self.m + &self.up));
        left.columns_mut(r, r).copy_from(&at.u);
        let mut right = DenseMatrix::zeros(l, 2 * r);
        right.columns_mut(0, r).copy_from(&at.v);
        right.columns_mut(r, r).copy_from(&self.vp);
        LowRank { left, right }
    }

    pub fn to_dense(&self, at: &FixedRankPoint) -> DenseMatrix {
        self.ambient(at).to_dense()
    }

    /// Checks `‖Uᵀ·Up‖ ≤ tol·s` and `‖Vᵀ·Vp‖ ≤ tol·s` with `s` the norm of the
    /// whole tangent vector. Scaling by `‖Up‖` alone would fail when `Up` is
    /// pure roundoff, as happens for `r = d`.
    pub fn is_tangent_at(&self, at: &FixedRankPoint, tol: f64) -> bool {
        let r = at.rank();
        let (d, l) = at.shape();
        if self.m.shape() != (r, r) || self.up.shape() != (d, r) || self.vp.shape() != (l, r) {
            return false;
        }
        let scale = (self.m.norm_squared() + self.up.norm_squared() + self.vp.norm_squared()).sqrt();
        let bound = tol * scale.max(f64::MIN_POSITIVE);
        at_mul(&at.u, &self.up).norm() <= bound && at_mul(&at.v, &self.vp).norm() <= bound
    }
}

/// Orthogonal projection of an ambient matrix onto the tangent space at `w`.
pub fn project_to_tangent<A: AmbientMatrix + ?Sized>(w: &FixedRankPoint, z: &A) -> Result<FixedRankTangent> {
    if z.shape() != w.shape() {
        return Err(Error::invalid(format!(
            "project_to_tangent: ambient shape {:?} does not match point shape {:?}",
            z.shape(),
            w.shape()
        )));
    }
    let zv = z.mul(&w.v);
    let ztu = z.tmul(&w.u);
    let m = at_mul(&w.u, &zv);
    let up = zv - &w.u * &m;
    let vp = ztu - &w.v * m.transpose();
    Ok(FixedRankTangent { m, up, vp })
}

pub fn metric(_w: &FixedRankPoint, a: &FixedRankTangent, b: &FixedRankTangent) -> f64 {
    a.m.dot(&b.m) + a.up.dot(&b.up) + a.vp.dot(&b.vp)
}

/// Truncated-SVD retraction of `W + t·ξ`, computed through a 2r×2r core.
pub fn retract(w: &FixedRankPoint, xi: &FixedRankTangent, t: f64) -> Result<FixedRankPoint> {
    if t == 0.0 {
        return Ok(w.clone());
    }
    let r = w.rank();
    let (d, l) = w.shape();
    // W + tξ = [U, Up]·K·[V, Vp]ᵀ with K = [[Σ + tM, tI], [tI, 0]]
    let mut a = DenseMatrix::zeros(d, 2 * r);
    a.columns_mut(0, r).copy_from(&w.u);
    a.columns_mut(r, r).copy_from(&xi.up);
    let mut b = DenseMatrix::zeros(l, 2 * r);
    b.columns_mut(0, r).copy_from(&w.v);
    b.columns_mut(r, r).copy_from(&xi.vp);
    let mut k = DenseMatrix::zeros(2 * r, 2 * r);
    k.view_mut((0, 0), (r, r)).copy_from(&(&xi.m * t));
    for i in 0..r {
        k[(i, i)] += w.s[i];
        k[(i, r + i)] = t;
        k[(r + i, i)] = t;
    }
    let (qa, ra) = thin_qr(&a);
    let (qb, rb) = thin_qr(&b);
    let core = ra * k * rb.transpose();
    let svd = thin_svd(&core, r)?;
    let ratio = svd.s[r - 1] / svd.s[0];
    if !(ratio > RANK_EPS) {
        return Err(Error::RankDrop { rank: r, ratio });
    }
    let mut u = qa * svd.u;
    let mut v = qb * svd.v;
    canonicalize_signs(&mut u, Some(&mut v));
    Ok(FixedRankPoint {
        u,
        s: DVector::from_vec(svd.s),
        v,
    })
}

pub fn vector_transport(from: &FixedRankPoint, to: &FixedRankPoint, s: &FixedRankTangent) -> FixedRankTangent {
    project_to_tangent(to, &s.ambient(from)).expect("points on the same manifold share a shape")
}

pub fn riemannian_gradient<A: AmbientMatrix + ?Sized>(w: &FixedRankPoint, euclid_grad: &A) -> Result<FixedRankTangent> {
    project_to_tangent(w, euclid_grad)
}

/// The manifold of d×l matrices of rank r.
#[derive(Clone, Copy, Debug)]
pub struct FixedRank {
    pub d: usize,
    pub l: usize,
    pub r: usize,
}

impl FixedRank {
    pub fn new(d: usize, l: usize, r: usize) -> Result<Self> {
        if r == 0 || r > d.min(l) {
            return Err(Error::invalid(format!("rank {r} must lie in 1..={}", d.min(l))));
        }
        Ok(Self { d, l, r })
    }

    pub fn dimension(&self) -> usize {
        self.r * (self.d + self.l - self.r)
    }
}

impl Geometry for FixedRank {
    type Point = FixedRankPoint;
    type Tangent = FixedRankTangent;

    fn inner(&self, x: &FixedRankPoint, a: &FixedRankTangent, b: &FixedRankTangent) -> f64 {
        metric(x, a, b)
    }

    fn retract(&self, x: &FixedRankPoint, v: &FixedRankTangent, t: f64) -> Result<FixedRankPoint> {
        retract(x, v, t)
    }

    fn transport(&self, from: &FixedRankPoint, to: &FixedRankPoint, v: &FixedRankTangent) -> FixedRankTangent {
        vector_transport(from, to, v)
    }

    fn lincomb(
        &self,
        _x: &FixedRankPoint,
        a: f64,
        u: &FixedRankTangent,
        b: f64,
        v: &FixedRankTangent,
    ) -> FixedRankTangent {
        FixedRankTangent {
            m: &u.m * a + &v.m * b,
            up: &u.up * a + &v.up * b,
            vp: &u.vp * a + &v.vp * b,
        }
    }
}

impl SpectralPenalty for FixedRank {
    fn penalty(&self, x: &FixedRankPoint) -> Result<f64> {
        check_spectrum(x.s.as_slice())?;
        Ok(x.s.iter().map(|s| s * s + 1.0 / (s * s)).sum())
    }

    /// ∇(‖X‖² + ‖X†‖²) = 2X − 2·U·Σ⁻³·Vᵀ, which already lies in the tangent space.
    fn penalty_gradient(&self, x: &FixedRankPoint) -> Result<FixedRankTangent> {
        check_spectrum(x.s.as_slice())?;
        let r = x.rank();
        let diag = DVector::from_iterator(r, x.s.iter().map(|&s| 2.0 * s - 2.0 / (s * s * s)));
        Ok(FixedRankTangent {
            m: DenseMatrix::from_diagonal(&diag),
            up: DenseMatrix::zeros(self.d, r),
            vp: DenseMatrix::zeros(self.l, r),
        })
    }
}

pub(crate) fn check_spectrum(s: &[f64]) -> Result<()> {
    let max = s.iter().cloned().fold(0.0, f64::max);
    let min = s.iter().cloned().fold(f64::INFINITY, f64::min);
    if !(min > RANK_EPS * max) {
        return Err(Error::RankDeficient(format!(
            "smallest singular value {min:e} is below {RANK_EPS:e} relative"
        )));
    }
    Ok(())
}
