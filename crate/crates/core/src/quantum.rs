//! Dense small-dimension complex linear algebra: kets, operators and
//! density matrices.
//!
//! Everything is stored densely in row-major order. Dimensions are tiny
//! (the dephasing qubit is dim 2) and capped at [`tol::MAX_DIM`].

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tol;

pub type Complex = Complex64;

pub const ZERO: Complex = Complex::new(0.0, 0.0);
pub const ONE: Complex = Complex::new(1.0, 0.0);
pub const I: Complex = Complex::new(0.0, 1.0);

/// Builds a complex number, rejecting NaN and infinities.
pub fn complex(re: f64, im: f64) -> Result<Complex> {
    if re.is_finite() && im.is_finite() {
        Ok(Complex::new(re, im))
    } else {
        Err(Error::NonFinite("complex"))
    }
}

fn check_dim(dim: usize) -> Result<()> {
    if (2..=tol::MAX_DIM).contains(&dim) {
        Ok(())
    } else {
        Err(Error::InvalidDimension(dim))
    }
}

fn check_finite(values: &[Complex], what: &'static str) -> Result<()> {
    if values.iter().all(|z| z.re.is_finite() && z.im.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what))
    }
}

fn same_dim(expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, found })
    }
}

/// A ket. Solutions of the nonlinear equation are tracked as normalized,
/// solutions of the linear equation as free-norm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateVector {
    amps: Vec<Complex>,
    normalized: bool,
}

impl StateVector {
    /// A free-norm state.
    pub fn new(amps: Vec<Complex>) -> Result<Self> {
        check_dim(amps.len())?;
        check_finite(&amps, "state vector")?;
        Ok(Self { amps, normalized: false })
    }

    /// A state asserted to be normalized; fails if `|<psi|psi> - 1| > 1e-9`.
    pub fn normalized(amps: Vec<Complex>) -> Result<Self> {
        let mut psi = Self::new(amps)?;
        let n = psi.norm_sqr();
        if (n - 1.0).abs() > tol::NORMALIZATION {
            return Err(Error::NotNormalized { norm_sqr: n });
        }
        psi.normalized = true;
        Ok(psi)
    }

    /// Rescales arbitrary amplitudes onto the unit sphere.
    pub fn normalize(amps: Vec<Complex>) -> Result<Self> {
        let psi = Self::new(amps)?;
        psi.to_normalized()
    }

    pub fn basis(dim: usize, k: usize) -> Result<Self> {
        check_dim(dim)?;
        if k >= dim {
            return Err(Error::param(format!("basis index {k} out of range for dim {dim}")));
        }
        let mut amps = vec![ZERO; dim];
        amps[k] = ONE;
        Ok(Self { amps, normalized: true })
    }

    pub(crate) fn from_parts(amps: Vec<Complex>, normalized: bool) -> Self {
        Self { amps, normalized }
    }

    pub fn dim(&self) -> usize {
        self.amps.len()
    }

    pub fn amplitudes(&self) -> &[Complex] {
        &self.amps
    }

    pub fn into_amplitudes(self) -> Vec<Complex> {
        self.amps
    }

    /// Whether this value was constructed as a normalized state.
    pub fn is_asserted_normalized(&self) -> bool {
        self.normalized
    }

    pub fn norm_sqr(&self) -> f64 {
        norm_sqr(&self.amps)
    }

    pub fn norm(&self) -> f64 {
        self.norm_sqr().sqrt()
    }

    /// Checks the normalization tolerance numerically, regardless of how the
    /// state was built.
    pub fn require_normalized(&self) -> Result<()> {
        let n = self.norm_sqr();
        if (n - 1.0).abs() > tol::NORMALIZATION {
            Err(Error::NotNormalized { norm_sqr: n })
        } else {
            Ok(())
        }
    }

    pub fn to_normalized(&self) -> Result<Self> {
        let norm = self.norm();
        if !(norm > tol::DEGENERATE_NORM) {
            return Err(Error::DegenerateState { norm });
        }
        let amps = self.amps.iter().map(|a| a / norm).collect();
        Ok(Self { amps, normalized: true })
    }

    pub fn scale(&self, factor: Complex) -> Result<Self> {
        Self::new(self.amps.iter().map(|a| a * factor).collect())
    }

    /// Euclidean distance `|| self - other ||`.
    pub fn distance(&self, other: &Self) -> Result<f64> {
        same_dim(self.dim(), other.dim())?;
        Ok(self.amps.iter().zip(&other.amps).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>().sqrt())
    }
}

pub(crate) fn norm_sqr(amps: &[Complex]) -> f64 {
    amps.iter().map(|a| a.norm_sqr()).sum()
}

pub(crate) fn dot(a: &[Complex], b: &[Complex]) -> Complex {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

/// `<a|b>`, conjugate-linear in `a`.
pub fn inner(a: &StateVector, b: &StateVector) -> Result<Complex> {
    same_dim(a.dim(), b.dim())?;
    Ok(dot(&a.amps, &b.amps))
}

/// Dense square complex matrix, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    dim: usize,
    entries: Vec<Complex>,
}

impl Matrix {
    pub fn new(dim: usize, entries: Vec<Complex>) -> Result<Self> {
        check_dim(dim)?;
        same_dim(dim * dim, entries.len())?;
        check_finite(&entries, "matrix")?;
        Ok(Self { dim, entries })
    }

    pub fn from_rows(rows: &[&[Complex]]) -> Result<Self> {
        let dim = rows.len();
        let mut entries = Vec::with_capacity(dim * dim);
        for row in rows {
            same_dim(dim, row.len())?;
            entries.extend_from_slice(row);
        }
        Self::new(dim, entries)
    }

    pub fn zeros(dim: usize) -> Result<Self> {
        Self::new(dim, vec![ZERO; dim * dim])
    }

    pub fn identity(dim: usize) -> Result<Self> {
        let mut m = Self::zeros(dim)?;
        for k in 0..dim {
            m.entries[k * dim + k] = ONE;
        }
        Ok(m)
    }

    pub fn diagonal(values: &[Complex]) -> Result<Self> {
        let mut m = Self::zeros(values.len())?;
        for (k, v) in values.iter().enumerate() {
            m.entries[k * values.len() + k] = *v;
        }
        check_finite(&m.entries, "matrix")?;
        Ok(m)
    }

    pub(crate) fn from_raw(dim: usize, entries: Vec<Complex>) -> Self {
        debug_assert_eq!(entries.len(), dim * dim);
        Self { dim, entries }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn entries(&self) -> &[Complex] {
        &self.entries
    }

    pub fn get(&self, row: usize, col: usize) -> Complex {
        self.entries[row * self.dim + col]
    }

    pub fn trace(&self) -> Complex {
        (0..self.dim).map(|k| self.get(k, k)).sum()
    }

    pub fn adjoint(&self) -> Self {
        let d = self.dim;
        let mut out = vec![ZERO; d * d];
        for r in 0..d {
            for c in 0..d {
                out[c * d + r] = self.entries[r * d + c].conj();
            }
        }
        Self::from_raw(d, out)
    }

    pub fn scale(&self, factor: Complex) -> Self {
        Self::from_raw(self.dim, self.entries.iter().map(|z| z * factor).collect())
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        same_dim(self.dim, other.dim)?;
        Ok(Self::from_raw(self.dim, self.entries.iter().zip(&other.entries).map(|(a, b)| a + b).collect()))
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.add(&other.scale(-ONE))
    }

    pub fn matmul(&self, other: &Self) -> Result<Self> {
        same_dim(self.dim, other.dim)?;
        let d = self.dim;
        let mut out = vec![ZERO; d * d];
        for r in 0..d {
            for k in 0..d {
                let a = self.entries[r * d + k];
                if a == ZERO {
                    continue;
                }
                for c in 0..d {
                    out[r * d + c] += a * other.entries[k * d + c];
                }
            }
        }
        Ok(Self::from_raw(d, out))
    }

    /// `[self, other]`
    pub fn commutator(&self, other: &Self) -> Result<Self> {
        self.matmul(other)?.sub(&other.matmul(self)?)
    }

    /// Writes `self * v` into `out`.
    pub(crate) fn apply_into(&self, v: &[Complex], out: &mut [Complex]) {
        let d = self.dim;
        for (r, o) in out.iter_mut().enumerate().take(d) {
            let row = &self.entries[r * d..(r + 1) * d];
            *o = row.iter().zip(v).map(|(a, b)| a * b).sum();
        }
    }

    pub fn apply(&self, psi: &StateVector) -> Result<Vec<Complex>> {
        same_dim(self.dim, psi.dim())?;
        let mut out = vec![ZERO; self.dim];
        self.apply_into(psi.amplitudes(), &mut out);
        Ok(out)
    }

    /// Largest entrywise modulus of `self - other`.
    pub fn max_abs_diff(&self, other: &Self) -> Result<f64> {
        same_dim(self.dim, other.dim)?;
        Ok(self.entries.iter().zip(&other.entries).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max))
    }

    pub fn max_abs(&self) -> f64 {
        self.entries.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    pub fn is_hermitian(&self, tol: f64) -> bool {
        let d = self.dim;
        (0..d).all(|r| (r..d).all(|c| (self.get(r, c) - self.get(c, r).conj()).norm() <= tol))
    }

    pub fn is_identity(&self, tol: f64) -> bool {
        let d = self.dim;
        (0..d).all(|r| {
            (0..d).all(|c| {
                let target = if r == c { ONE } else { ZERO };
                (self.get(r, c) - target).norm() <= tol
            })
        })
    }

    pub fn is_diagonal(&self, tol: f64) -> bool {
        let d = self.dim;
        (0..d).all(|r| (0..d).all(|c| r == c || self.get(r, c).norm() <= tol))
    }

    /// Whether `self + shift * I` admits a Cholesky factorization, i.e. all
    /// eigenvalues of the Hermitian part exceed `-shift`.
    pub(crate) fn is_positive_with_shift(&self, shift: f64) -> bool {
        let d = self.dim;
        let mut l = vec![ZERO; d * d];
        for j in 0..d {
            let mut diag = self.get(j, j).re + shift;
            for k in 0..j {
                diag -= l[j * d + k].norm_sqr();
            }
            if !(diag > 0.0) {
                return false;
            }
            let ljj = diag.sqrt();
            l[j * d + j] = Complex::new(ljj, 0.0);
            for i in (j + 1)..d {
                let mut s = 0.5 * (self.get(i, j) + self.get(j, i).conj());
                for k in 0..j {
                    s -= l[i * d + k] * l[j * d + k].conj();
                }
                l[i * d + j] = s / ljj;
            }
        }
        true
    }
}

/// An operator on the system Hilbert space (Hamiltonian, Lindblad operator,
/// observable).
pub type Operator = Matrix;

/// A density matrix: Hermitian, unit trace and positive up to numerical slack.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DensityMatrix(Matrix);

impl DensityMatrix {
    pub fn new(m: Matrix) -> Result<Self> {
        validate_density(&m)?;
        Ok(Self(m))
    }

    pub fn from_entries(dim: usize, entries: Vec<Complex>) -> Result<Self> {
        Self::new(Matrix::new(dim, entries)?)
    }

    pub fn maximally_mixed(dim: usize) -> Result<Self> {
        Ok(Self(Matrix::identity(dim)?.scale(Complex::new(1.0 / dim as f64, 0.0))))
    }

    /// Wraps a matrix without validation (Monte-Carlo averages carry
    /// statistical noise beyond the strict slack).
    pub(crate) fn unchecked(m: Matrix) -> Self {
        Self(m)
    }

    pub fn matrix(&self) -> &Matrix {
        &self.0
    }

    pub fn into_matrix(self) -> Matrix {
        self.0
    }

    pub fn dim(&self) -> usize {
        self.0.dim()
    }

    pub fn get(&self, row: usize, col: usize) -> Complex {
        self.0.get(row, col)
    }

    pub fn trace(&self) -> f64 {
        self.0.trace().re
    }

    /// `tr(op rho)`
    pub fn expectation(&self, op: &Operator) -> Result<Complex> {
        Ok(op.matmul(&self.0)?.trace())
    }

    pub fn max_abs_diff(&self, other: &Self) -> Result<f64> {
        self.0.max_abs_diff(&other.0)
    }
}

/// Checks the density-matrix invariants, describing the first violation.
pub fn validate_density(m: &Matrix) -> Result<()> {
    if !m.is_hermitian(tol::DENSITY_HERMITIAN) {
        return Err(Error::InvalidDensity("not Hermitian".into()));
    }
    let tr = m.trace();
    if (tr.re - 1.0).abs() > tol::DENSITY_TRACE {
        return Err(Error::InvalidDensity(format!("trace {} != 1", tr.re)));
    }
    if !m.is_positive_with_shift(tol::DENSITY_POSITIVITY) {
        return Err(Error::InvalidDensity("negative eigenvalue".into()));
    }
    Ok(())
}

/// `<psi|op|psi>` for a normalized state.
pub fn expectation(op: &Operator, psi: &StateVector) -> Result<Complex> {
    same_dim(op.dim(), psi.dim())?;
    psi.require_normalized()?;
    let mut tmp = vec![ZERO; psi.dim()];
    op.apply_into(psi.amplitudes(), &mut tmp);
    Ok(dot(psi.amplitudes(), &tmp))
}

/// `|psi><psi|`
pub fn pure_density(psi: &StateVector) -> Result<DensityMatrix> {
    psi.require_normalized()?;
    Ok(DensityMatrix(outer(psi.amplitudes())))
}

pub(crate) fn outer(amps: &[Complex]) -> Matrix {
    let d = amps.len();
    let mut entries = Vec::with_capacity(d * d);
    for a in amps {
        for b in amps {
            entries.push(a * b.conj());
        }
    }
    Matrix::from_raw(d, entries)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlochVector {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl BlochVector {
    pub fn radius(&self) -> f64 {
        (self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }
}

/// Bloch coordinates of a normalized qubit state, basis `(|+>, |->)`.
pub fn bloch(psi: &StateVector) -> Result<BlochVector> {
    same_dim(2, psi.dim())?;
    psi.require_normalized()?;
    let [a, b] = [psi.amps[0], psi.amps[1]];
    let coherence = a.conj() * b;
    Ok(BlochVector { x: 2.0 * coherence.re, y: 2.0 * coherence.im, z: a.norm_sqr() - b.norm_sqr() })
}

/// Pauli matrices and the spin states used by the dephasing model. Index 0
/// is `|+>` (sigma_z = +1), index 1 is `|->`.
pub mod pauli {
    use super::*;

    pub fn sigma_x() -> Operator {
        Matrix::from_raw(2, vec![ZERO, ONE, ONE, ZERO])
    }

    pub fn sigma_y() -> Operator {
        Matrix::from_raw(2, vec![ZERO, -I, I, ZERO])
    }

    pub fn sigma_z() -> Operator {
        Matrix::from_raw(2, vec![ONE, ZERO, ZERO, -ONE])
    }

    pub fn identity() -> Operator {
        Matrix::from_raw(2, vec![ONE, ZERO, ZERO, ONE])
    }

    pub fn plus() -> StateVector {
        StateVector::from_parts(vec![ONE, ZERO], true)
    }

    pub fn minus() -> StateVector {
        StateVector::from_parts(vec![ZERO, ONE], true)
    }

    /// `cos(theta/2)|+> + sin(theta/2)|->`
    pub fn polar_state(theta: f64) -> StateVector {
        let (s, c) = (0.5 * theta).sin_cos();
        StateVector::from_parts(vec![Complex::new(c, 0.0), Complex::new(s, 0.0)], true)
    }
}

#[cfg(test)]
mod tests {
    use super::pauli::*;
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use std::f64::consts::{FRAC_1_SQRT_2, FRAC_PI_2, PI};

    fn c(re: f64, im: f64) -> Complex {
        Complex::new(re, im)
    }

    #[test]
    fn inner_on_basis() {
        let e0 = StateVector::basis(2, 0).unwrap();
        let e1 = StateVector::basis(2, 1).unwrap();
        assert_eq!(inner(&e0, &e0).unwrap(), ONE);
        assert_eq!(inner(&e0, &e1).unwrap(), ZERO);
        let v = inner(&polar_state(FRAC_PI_2), &e0).unwrap();
        assert_abs_diff_eq!(v.re, FRAC_1_SQRT_2, epsilon = 1e-15);
        assert_abs_diff_eq!(v.im, 0.0);
    }

    #[test]
    fn inner_rejects_dimension_mismatch() {
        let a = StateVector::basis(2, 0).unwrap();
        let b = StateVector::basis(3, 0).unwrap();
        assert_eq!(inner(&a, &b), Err(Error::DimensionMismatch { expected: 2, found: 3 }));
    }

    #[test]
    fn constructors_reject_bad_input() {
        assert!(matches!(StateVector::new(vec![ONE]), Err(Error::InvalidDimension(1))));
        assert!(matches!(StateVector::new(vec![ONE; 17]), Err(Error::InvalidDimension(17))));
        assert!(matches!(StateVector::new(vec![ONE, c(f64::NAN, 0.0)]), Err(Error::NonFinite(_))));
        assert!(matches!(StateVector::normalized(vec![ONE, ONE]), Err(Error::NotNormalized { .. })));
        assert!(complex(f64::INFINITY, 0.0).is_err());
        assert!(Matrix::new(2, vec![ONE; 3]).is_err());
    }

    #[test]
    fn expectation_examples() {
        assert_abs_diff_eq!(expectation(&sigma_z(), &plus()).unwrap().re, 1.0);
        // cos(t/2)|+> + sin(t/2)|-> has <sigma_z> = cos t
        for theta in [0.1, 0.9, 2.0, 3.0] {
            let e = expectation(&sigma_z(), &polar_state(theta)).unwrap();
            assert_abs_diff_eq!(e.re, theta.cos(), epsilon = 1e-14);
            assert_abs_diff_eq!(e.im, 0.0);
        }
        let psi = StateVector::normalize(vec![c(0.3, -0.2), c(0.1, 0.8)]).unwrap();
        assert_abs_diff_eq!(expectation(&identity(), &psi).unwrap().re, 1.0, epsilon = 1e-15);
    }

    #[test]
    fn expectation_requires_normalized_state() {
        let psi = StateVector::new(vec![ONE, ONE]).unwrap();
        assert!(matches!(expectation(&sigma_z(), &psi), Err(Error::NotNormalized { .. })));
    }

    #[test]
    fn pure_density_examples() {
        let rho = pure_density(&plus()).unwrap();
        assert_eq!(rho.matrix().entries(), &[ONE, ZERO, ZERO, ZERO]);
        let rho = pure_density(&polar_state(FRAC_PI_2)).unwrap();
        for z in rho.matrix().entries() {
            assert_abs_diff_eq!(z.re, 0.5, epsilon = 1e-15);
            assert_abs_diff_eq!(z.im, 0.0);
        }
        let bad = StateVector::new(vec![ONE, ONE]).unwrap();
        assert!(pure_density(&bad).is_err());
    }

    #[test]
    fn bloch_examples() {
        let b = bloch(&plus()).unwrap();
        assert_eq!((b.x, b.y, b.z), (0.0, 0.0, 1.0));
        let b = bloch(&minus()).unwrap();
        assert_eq!((b.x, b.y, b.z), (0.0, 0.0, -1.0));
        let psi = StateVector::normalize(vec![ONE, I]).unwrap();
        let b = bloch(&psi).unwrap();
        assert_abs_diff_eq!(b.x, 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(b.y, 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(b.z, 0.0, epsilon = 1e-15);
        assert!(bloch(&StateVector::basis(3, 0).unwrap()).is_err());
    }

    #[test]
    fn operator_predicates() {
        assert!(sigma_y().is_hermitian(tol::OPERATOR));
        assert!(!Matrix::from_rows(&[&[ONE, I], &[I, ONE]]).unwrap().is_hermitian(tol::OPERATOR));
        assert!(identity().is_identity(tol::OPERATOR));
        assert!(!sigma_z().is_identity(tol::OPERATOR));
        // Pauli algebra: sx sy = i sz
        let lhs = sigma_x().matmul(&sigma_y()).unwrap();
        assert!(lhs.max_abs_diff(&sigma_z().scale(I)).unwrap() < 1e-15);
    }

    #[test]
    fn density_validation() {
        assert!(DensityMatrix::maximally_mixed(2).is_ok());
        let not_unit = Matrix::identity(2).unwrap();
        assert!(DensityMatrix::new(not_unit).is_err());
        let negative = Matrix::diagonal(&[c(1.5, 0.0), c(-0.5, 0.0)]).unwrap();
        assert!(DensityMatrix::new(negative).is_err());
        let coherent_too_big = Matrix::from_rows(&[&[c(0.5, 0.0), c(0.6, 0.0)], &[c(0.6, 0.0), c(0.5, 0.0)]]).unwrap();
        assert!(DensityMatrix::new(coherent_too_big).is_err());
        assert!(DensityMatrix::new(pure_density(&polar_state(1.0)).unwrap().into_matrix()).is_ok());
    }

    fn arb_state(dim: usize) -> impl Strategy<Value = StateVector> {
        prop::collection::vec((-1.0..1.0f64, -1.0..1.0f64), dim)
            .prop_filter("nonzero", |v| v.iter().map(|(a, b)| a * a + b * b).sum::<f64>() > 1e-3)
            .prop_map(|v| StateVector::normalize(v.into_iter().map(|(a, b)| c(a, b)).collect()).unwrap())
    }

    fn arb_hermitian(dim: usize) -> impl Strategy<Value = Operator> {
        prop::collection::vec((-2.0..2.0f64, -2.0..2.0f64), dim * dim).prop_map(move |v| {
            let m = Matrix::new(dim, v.into_iter().map(|(a, b)| c(a, b)).collect()).unwrap();
            m.add(&m.adjoint()).unwrap().scale(c(0.5, 0.0))
        })
    }

    proptest! {
        #[test]
        fn hermitian_expectations_are_real((psi, op) in (2usize..6).prop_flat_map(|d| (arb_state(d), arb_hermitian(d)))) {
            let e = expectation(&op, &psi).unwrap();
            prop_assert!(e.im.abs() <= tol::HERMITIAN_EXPECTATION);
        }

        #[test]
        fn pure_density_is_a_valid_projector(psi in (2usize..8).prop_flat_map(arb_state)) {
            let rho = pure_density(&psi).unwrap();
            prop_assert!((rho.trace() - 1.0).abs() < 1e-12);
            prop_assert!(validate_density(rho.matrix()).is_ok());
            let sq = rho.matrix().matmul(rho.matrix()).unwrap();
            prop_assert!(sq.max_abs_diff(rho.matrix()).unwrap() < 1e-9);
        }

        #[test]
        fn inner_is_conjugate_symmetric((a, b) in (2usize..8).prop_flat_map(|d| (arb_state(d), arb_state(d)))) {
            prop_assert_eq!(inner(&a, &b).unwrap(), inner(&b, &a).unwrap().conj());
        }

        #[test]
        fn bloch_vector_is_on_the_sphere(psi in arb_state(2)) {
            let b = bloch(&psi).unwrap();
            prop_assert!((b.radius() - 1.0).abs() <= tol::BLOCH_RADIUS);
            prop_assert!((b.z - expectation(&sigma_z(), &psi).unwrap().re).abs() <= 1e-10);
        }
    }

    #[test]
    fn polar_state_angles() {
        assert_eq!(polar_state(0.0).amplitudes(), plus().amplitudes());
        let b = bloch(&polar_state(PI)).unwrap();
        assert_abs_diff_eq!(b.z, -1.0, epsilon = 1e-15);
    }
}
