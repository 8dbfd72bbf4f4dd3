//! Quotient geometry of n×n PSD matrices of rank r, represented by full-rank
//! factors `Z` (n×r) with `M = Z·Zᵀ`. Two factors related by a right
//! orthogonal transformation represent the same point.

use super::{Geometry, SpectralPenalty, RANK_EPS};
use crate::error::{Error, Result};
use crate::linalg::{at_mul, singular_values_tall, solve_sylvester_sym, DenseMatrix};

#[derive(Clone, Debug, PartialEq)]
pub struct PsdPoint {
    z: DenseMatrix,
}

impl PsdPoint {
    pub fn new(z: DenseMatrix) -> Result<Self> {
        if z.ncols() == 0 || z.ncols() > z.nrows() {
            return Err(Error::invalid(format!(
                "PSD factor must be n×r with 1 ≤ r ≤ n, got {}×{}",
                z.nrows(),
                z.ncols()
            )));
        }
        if !crate::linalg::all_finite(&z) {
            return Err(Error::invalid("PSD factor has non-finite entries"));
        }
        let ratio = rank_ratio(&z);
        if !(ratio > RANK_EPS) {
            return Err(Error::RankDeficient(format!(
                "PSD factor has sigma_min / sigma_max = {ratio:e}"
            )));
        }
        Ok(Self { z })
    }

    pub fn z(&self) -> &DenseMatrix {
        &self.z
    }

    pub fn into_inner(self) -> DenseMatrix {
        self.z
    }

    pub fn n(&self) -> usize {
        self.z.nrows()
    }

    pub fn r(&self) -> usize {
        self.z.ncols()
    }

    /// `Zᵀ·Z` (r×r).
    pub fn factor_gram(&self) -> DenseMatrix {
        at_mul(&self.z, &self.z)
    }

    /// `Z·Zᵀ` (n×n); for tests and small problems only.
    pub fn to_dense(&self) -> DenseMatrix {
        &self.z * self.z.transpose()
    }
}

/// `σ_min / σ_max` of `z`. The eigenvalues of `ZᵀZ` resolve the ratio down to
/// about 1e-6; closer to singular it is recomputed from a QR factorization.
fn rank_ratio(z: &DenseMatrix) -> f64 {
    let eig = at_mul(z, z).symmetric_eigenvalues();
    let max = eig.max();
    if max > 0.0 {
        let ratio = (eig.min().max(0.0) / max).sqrt();
        if ratio > 1e-6 {
            return ratio;
        }
    }
    let sv = singular_values_tall(z);
    let max = sv.max();
    if max > 0.0 {
        sv.min() / max
    } else {
        0.0
    }
}

/// A direction `U` (n×r) in the horizontal space at `Z`: `Uᵀ·Z` symmetric.
#[derive(Clone, Debug, PartialEq)]
pub struct HorizontalVector {
    pub u: DenseMatrix,
}

impl HorizontalVector {
    pub fn zeros(n: usize, r: usize) -> Self {
        Self {
            u: DenseMatrix::zeros(n, r),
        }
    }

    /// `‖Uᵀ·Z − Zᵀ·U‖_F`.
    pub fn symmetry_residual(&self, at: &PsdPoint) -> f64 {
        let utz = at_mul(&self.u, &at.z);
        (&utz - utz.transpose()).norm()
    }

    pub fn is_horizontal_at(&self, at: &PsdPoint, tol: f64) -> bool {
        self.u.shape() == at.z.shape() && self.symmetry_residual(at) <= tol * self.u.norm() * at.z.norm()
    }
}

/// The skew-symmetric `E` solving `E·ZᵀZ + ZᵀZ·E = Zᵀ·H − Hᵀ·Z`.
pub fn vertical_component(z: &PsdPoint, h: &DenseMatrix) -> Result<DenseMatrix> {
    if h.shape() != z.z.shape() {
        return Err(Error::invalid(
            "project_horizontal: direction shape does not match the factor",
        ));
    }
    let zth = at_mul(&z.z, h);
    let rhs = &zth - zth.transpose();
    solve_sylvester_sym(&z.factor_gram(), &rhs)
}

pub fn project_horizontal(z: &PsdPoint, h: &DenseMatrix) -> Result<HorizontalVector> {
    let e = vertical_component(z, h)?;
    Ok(HorizontalVector { u: h - &z.z * e })
}

pub fn metric_psd(_z: &PsdPoint, a: &HorizontalVector, b: &HorizontalVector) -> f64 {
    a.u.dot(&b.u)
}

/// `Z + t·U`, failing when the result loses rank.
pub fn retract_psd(z: &PsdPoint, u: &HorizontalVector, t: f64) -> Result<PsdPoint> {
    if t == 0.0 {
        return Ok(z.clone());
    }
    let next = &z.z + &u.u * t;
    let ratio = rank_ratio(&next);
    if !(ratio > RANK_EPS) || !crate::linalg::all_finite(&next) {
        return Err(Error::RankDrop { rank: z.r(), ratio });
    }
    Ok(PsdPoint { z: next })
}

pub fn transport_psd(_from: &PsdPoint, to: &PsdPoint, u: &HorizontalVector) -> Result<HorizontalVector> {
    project_horizontal(to, &u.u)
}

/// The Euclidean gradient of an orthogonally invariant lift is horizontal up to
/// round-off; the projection removes that drift.
pub fn riemannian_gradient_psd(z: &PsdPoint, euclid_grad: &DenseMatrix) -> Result<HorizontalVector> {
    project_horizontal(z, euclid_grad)
}

#[derive(Clone, Copy, Debug)]
pub struct PsdFixedRank {
    pub n: usize,
    pub r: usize,
}

impl PsdFixedRank {
    pub fn new(n: usize, r: usize) -> Result<Self> {
        if r == 0 || r > n {
            return Err(Error::invalid(format!("rank {r} must lie in 1..={n}")));
        }
        Ok(Self { n, r })
    }

    pub fn dimension(&self) -> usize {
        self.n * self.r - self.r * (self.r - 1) / 2
    }
}

impl Geometry for PsdFixedRank {
    type Point = PsdPoint;
    type Tangent = HorizontalVector;

    fn inner(&self, x: &PsdPoint, a: &HorizontalVector, b: &HorizontalVector) -> f64 {
        metric_psd(x, a, b)
    }

    fn retract(&self, x: &PsdPoint, v: &HorizontalVector, t: f64) -> Result<PsdPoint> {
        retract_psd(x, v, t)
    }

    fn transport(&self, from: &PsdPoint, to: &PsdPoint, v: &HorizontalVector) -> HorizontalVector {
        transport_psd(from, to, v).expect("retracted points are full rank")
    }

    fn lincomb(&self, _x: &PsdPoint, a: f64, u: &HorizontalVector, b: f64, v: &HorizontalVector) -> HorizontalVector {
        HorizontalVector { u: &u.u * a + &v.u * b }
    }
}

impl SpectralPenalty for PsdFixedRank {
    /// With `M = Z·Zᵀ` and `S = Zᵀ·Z`: `‖M‖² = ‖S‖²` and `‖M†‖² = ‖S⁻¹‖²`.
    fn penalty(&self, x: &PsdPoint) -> Result<f64> {
        let (s, s_inv) = gram_and_inverse(x)?;
        Ok(s.norm_squared() + s_inv.norm_squared())
    }

    /// `4·Z·S − 4·Z·S⁻³`.
    fn penalty_gradient(&self, x: &PsdPoint) -> Result<HorizontalVector> {
        let (s, s_inv) = gram_and_inverse(x)?;
        let s_inv3 = &s_inv * &s_inv * &s_inv;
        let g = (&x.z * (s - s_inv3)) * 4.0;
        project_horizontal(x, &g)
    }
}

fn gram_and_inverse(x: &PsdPoint) -> Result<(DenseMatrix, DenseMatrix)> {
    let sv = singular_values_tall(&x.z);
    super::fixed_rank::check_spectrum(sv.as_slice())?;
    let s = x.factor_gram();
    let s_inv = s
        .clone()
        .cholesky()
        .ok_or_else(|| Error::RankDeficient("Zᵀ·Z is not positive definite".into()))?
        .inverse();
    Ok((s, s_inv))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn gaussian(n: usize, r: usize, rng: &mut ChaCha8Rng) -> DenseMatrix {
        DenseMatrix::from_fn(n, r, |_, _| rng.sample(StandardNormal))
    }

    #[test]
    fn horizontal_input_is_unchanged() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let z = PsdPoint::new(gaussian(10, 3, &mut rng)).unwrap();
        // Z·A with A symmetric is horizontal: (ZA)ᵀZ = A·ZᵀZ is symmetric only when A
        // commutes with ZᵀZ, so project a random direction first.
        let h = project_horizontal(&z, &gaussian(10, 3, &mut rng)).unwrap();
        let e = vertical_component(&z, &h.u).unwrap();
        assert!(e.norm() < 1e-12);
        let again = project_horizontal(&z, &h.u).unwrap();
        assert!((again.u - &h.u).norm() < 1e-12);
    }

    #[test]
    fn vertical_directions_are_annihilated() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let (q, _) = crate::linalg::thin_qr(&gaussian(7, 3, &mut rng));
        let z = PsdPoint::new(q).unwrap();
        let b = gaussian(3, 3, &mut rng);
        let skew = &b - b.transpose();
        let h = z.z() * &skew;
        let e = vertical_component(&z, &h).unwrap();
        assert!((e - &skew).norm() < 1e-12);
        assert!(project_horizontal(&z, &h).unwrap().u.norm() < 1e-12);
    }

    #[test]
    fn retraction_examples() {
        let mut e1 = DenseMatrix::zeros(3, 1);
        e1[(0, 0)] = 1.0;
        let mut e2 = DenseMatrix::zeros(3, 1);
        e2[(1, 0)] = 1.0;
        let z = PsdPoint::new(e1.clone()).unwrap();
        let u = HorizontalVector { u: e2.clone() };
        assert_eq!(retract_psd(&z, &u, 0.0).unwrap(), z);
        assert_eq!(retract_psd(&z, &u, 1.0).unwrap().z(), &(e1 + e2));

        let z = PsdPoint::new(DenseMatrix::from_column_slice(2, 1, &[1.0, 0.0])).unwrap();
        let u = HorizontalVector {
            u: DenseMatrix::from_column_slice(2, 1, &[-1.0, 0.0]),
        };
        assert!(matches!(retract_psd(&z, &u, 1.0), Err(Error::RankDrop { .. })));
    }

    #[test]
    fn rank_deficient_factor_rejected() {
        let z = DenseMatrix::from_row_slice(3, 2, &[1.0, 2.0, 2.0, 4.0, 3.0, 6.0]);
        assert!(matches!(PsdPoint::new(z), Err(Error::RankDeficient(_))));
    }

    #[test]
    fn transport_to_self_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let z = PsdPoint::new(gaussian(6, 2, &mut rng)).unwrap();
        let u = project_horizontal(&z, &gaussian(6, 2, &mut rng)).unwrap();
        let t = transport_psd(&z, &z, &u).unwrap();
        assert!((t.u - &u.u).norm() < 1e-10);
        let zero = transport_psd(&z, &z, &HorizontalVector::zeros(6, 2)).unwrap();
        assert_eq!(zero.u.norm(), 0.0);
    }

    #[test]
    fn dimension_formula() {
        assert_eq!(PsdFixedRank::new(8, 3).unwrap().dimension(), 21);
    }
}
