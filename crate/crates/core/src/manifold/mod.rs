//! Manifold geometries and the contract the conjugate-gradient solver needs
//! from them.

pub mod fixed_rank;
pub mod psd;

use crate::error::Result;

pub use fixed_rank::{AmbientMatrix, FixedRank, FixedRankPoint, FixedRankTangent, LowRank};
pub use psd::{HorizontalVector, PsdFixedRank, PsdPoint};

/// Relative singular-value floor below which a factor counts as rank deficient.
pub const RANK_EPS: f64 = 1e-12;

/// Operations a Riemannian optimizer needs from a manifold.
pub trait Geometry {
    type Point: Clone;
    type Tangent: Clone;

    fn inner(&self, x: &Self::Point, a: &Self::Tangent, b: &Self::Tangent) -> f64;

    fn norm(&self, x: &Self::Point, a: &Self::Tangent) -> f64 {
        self.inner(x, a, a).max(0.0).sqrt()
    }

    /// Moves from `x` along `t·v`. Fails with [`crate::Error::RankDrop`] when
    /// the result leaves the manifold.
    fn retract(&self, x: &Self::Point, v: &Self::Tangent, t: f64) -> Result<Self::Point>;

    fn transport(&self, from: &Self::Point, to: &Self::Point, v: &Self::Tangent) -> Self::Tangent;

    /// `a·u + b·v`, both anchored at `x`.
    fn lincomb(&self, x: &Self::Point, a: f64, u: &Self::Tangent, b: f64, v: &Self::Tangent) -> Self::Tangent;

    fn scale(&self, x: &Self::Point, a: f64, u: &Self::Tangent) -> Self::Tangent {
        self.lincomb(x, a, u, 0.0, u)
    }
}

/// Geometries whose points expose singular values, so the penalty
/// `‖X†‖²_F + ‖X‖²_F` and its Riemannian gradient can be evaluated.
pub trait SpectralPenalty: Geometry {
    fn penalty(&self, x: &Self::Point) -> Result<f64>;
    fn penalty_gradient(&self, x: &Self::Point) -> Result<Self::Tangent>;
}
