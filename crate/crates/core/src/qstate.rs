//! Dense pure states and unitaries over C^d.
//!
//! Dimensions are small (d <= 64 at desk scale), so everything is a dense
//! `nalgebra` vector or matrix of `Complex64`.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Result, SsmlError};

/// Squared-norm tolerance for [`StateVector`].
pub const NORM_TOL: f64 = 1e-12;
/// Entrywise tolerance on `U^dagger U - I` for [`UnitaryMatrix`].
pub const UNITARITY_TOL: f64 = 1e-10;
/// How far a computed probability may drift outside [0, 1] before it is an error.
pub const CLAMP_TOL: f64 = 1e-12;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const ONE: Complex64 = Complex64::new(1.0, 0.0);

/// A unit vector in C^d.
#[derive(Debug, Clone, PartialEq)]
pub struct StateVector(DVector<Complex64>);

impl StateVector {
    /// Wraps amplitudes that are already normalized to within [`NORM_TOL`].
    pub fn new(amplitudes: Vec<Complex64>) -> Result<Self> {
        if amplitudes.is_empty() {
            return Err(SsmlError::InvalidDimension(0));
        }
        let v = DVector::from_vec(amplitudes);
        let norm_sq = v.norm_squared();
        if (norm_sq - 1.0).abs() > NORM_TOL {
            return Err(SsmlError::NumericIntegrity(format!(
                "state squared-norm {norm_sq} deviates from 1"
            )));
        }
        Ok(Self(v))
    }

    /// Normalizes arbitrary nonzero amplitudes.
    pub fn normalized(amplitudes: Vec<Complex64>) -> Result<Self> {
        if amplitudes.is_empty() {
            return Err(SsmlError::InvalidDimension(0));
        }
        let v = DVector::from_vec(amplitudes);
        let norm = v.norm();
        if !norm.is_finite() || norm == 0.0 {
            return Err(SsmlError::NumericIntegrity("cannot normalize a zero vector".into()));
        }
        Ok(Self(v.unscale(norm)))
    }

    /// The computational basis vector `e_index`.
    pub fn basis(d: usize, index: usize) -> Result<Self> {
        if d == 0 {
            return Err(SsmlError::InvalidDimension(0));
        }
        if index >= d {
            return Err(SsmlError::Index { k: index, max: d - 1 });
        }
        let mut v = DVector::from_element(d, ZERO);
        v[index] = ONE;
        Ok(Self(v))
    }

    /// Real amplitudes `sqrt(F) e_0 + sqrt(1 - F) e_1` in dimension `d >= 2`.
    ///
    /// With the identity as control this state has success probability exactly `F`.
    pub fn with_fidelity(d: usize, fidelity: f64) -> Result<Self> {
        if d < 2 {
            return Err(SsmlError::InvalidDimension(d));
        }
        if !(0.0..=1.0).contains(&fidelity) {
            return Err(SsmlError::param(format!("fidelity {fidelity} outside [0, 1]")));
        }
        let mut amps = vec![ZERO; d];
        amps[0] = Complex64::new(fidelity.sqrt(), 0.0);
        amps[1] = Complex64::new((1.0 - fidelity).sqrt(), 0.0);
        Self::normalized(amps)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn amplitudes(&self) -> &DVector<Complex64> {
        &self.0
    }

    pub fn norm_squared(&self) -> f64 {
        self.0.norm_squared()
    }

    /// Multiplies by a global phase `e^{i theta}`.
    pub fn with_global_phase(&self, theta: f64) -> Self {
        Self(self.0.map(|a| a * Complex64::from_polar(1.0, theta)))
    }
}

/// A d x d unitary matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitaryMatrix(DMatrix<Complex64>);

impl UnitaryMatrix {
    /// Wraps a matrix after checking `U^dagger U = I` to [`UNITARITY_TOL`].
    pub fn new(entries: DMatrix<Complex64>) -> Result<Self> {
        if !entries.is_square() {
            return Err(SsmlError::Shape {
                expected: entries.nrows(),
                actual: entries.ncols(),
            });
        }
        if entries.nrows() == 0 {
            return Err(SsmlError::InvalidDimension(0));
        }
        let u = Self(entries);
        let dev = u.unitarity_deviation();
        if dev > UNITARITY_TOL {
            return Err(SsmlError::NumericIntegrity(format!(
                "matrix is not unitary (max |U^dagger U - I| = {dev:e})"
            )));
        }
        Ok(u)
    }

    pub fn identity(d: usize) -> Self {
        Self(DMatrix::identity(d, d))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn entries(&self) -> &DMatrix<Complex64> {
        &self.0
    }

    pub fn adjoint(&self) -> Self {
        Self(self.0.adjoint())
    }

    /// Largest entrywise modulus of `U^dagger U - I`.
    pub fn unitarity_deviation(&self) -> f64 {
        let d = self.dim();
        let gram = self.0.adjoint() * &self.0;
        let mut worst = 0.0_f64;
        for i in 0..d {
            for j in 0..d {
                let target = if i == j { ONE } else { ZERO };
                worst = worst.max((gram[(i, j)] - target).norm());
            }
        }
        worst
    }

    /// `U psi`.
    pub fn apply(&self, psi: &StateVector) -> Result<DVector<Complex64>> {
        check_dims(self.dim(), psi.dim())?;
        Ok(&self.0 * psi.amplitudes())
    }

    /// Matrix product `self * rhs`.
    pub fn compose(&self, rhs: &UnitaryMatrix) -> Result<UnitaryMatrix> {
        check_dims(self.dim(), rhs.dim())?;
        Ok(Self(&self.0 * &rhs.0))
    }

    fn rows_mut(&mut self) -> &mut DMatrix<Complex64> {
        &mut self.0
    }
}

fn check_dims(expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        return Err(SsmlError::Shape { expected, actual });
    }
    Ok(())
}

fn complex_gaussian<R: Rng + ?Sized>(rng: &mut R) -> Complex64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(re, im)
}

/// Haar-random pure state: a normalized vector of i.i.d. standard complex Gaussians.
pub fn haar_random_state<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Result<StateVector> {
    if d == 0 {
        return Err(SsmlError::InvalidDimension(0));
    }
    loop {
        let amps: Vec<Complex64> = (0..d).map(|_| complex_gaussian(rng)).collect();
        // A zero draw has probability zero; retry rather than divide by it.
        if amps.iter().any(|a| a.norm_sqr() > 0.0) {
            return StateVector::normalized(amps);
        }
    }
}

/// Haar-random unitary from the QR decomposition of a complex Ginibre matrix,
/// with the phases of `diag(R)` moved into `Q`.
pub fn haar_random_unitary<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Result<UnitaryMatrix> {
    if d == 0 {
        return Err(SsmlError::InvalidDimension(0));
    }
    let z = DMatrix::from_fn(d, d, |_, _| complex_gaussian(rng));
    let (mut q, r) = z.qr().unpack();
    for j in 0..d {
        let rjj = r[(j, j)];
        let phase = if rjj.norm() > 0.0 { rjj / rjj.norm() } else { ONE };
        for i in 0..d {
            q[(i, j)] *= phase;
        }
    }
    UnitaryMatrix::new(q)
}

/// `|<f|U|psi>|^2`, clamped to [0, 1] when rounding pushes it out by at most [`CLAMP_TOL`].
pub fn fidelity(u: &UnitaryMatrix, psi: &StateVector, f: &StateVector) -> Result<f64> {
    check_dims(u.dim(), f.dim())?;
    let image = u.apply(psi)?;
    let overlap = f.amplitudes().dotc(&image);
    clamp_probability(overlap.norm_sqr())
}

pub(crate) fn clamp_probability(p: f64) -> Result<f64> {
    if !p.is_finite() || !(-CLAMP_TOL..=1.0 + CLAMP_TOL).contains(&p) {
        return Err(SsmlError::NumericIntegrity(format!(
            "probability {p} outside [0, 1] beyond tolerance"
        )));
    }
    Ok(p.clamp(0.0, 1.0))
}

/// An SU(2) element acting on span{e_0, e_k}, identity elsewhere.
///
/// The block is `cos(omega) I - i sin(omega) (n . sigma)` for a unit axis `n`,
/// which sits at geodesic distance `omega` from the identity on SU(2) = S^3.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SubspaceRotation {
    pub k: usize,
    pub block: [[Complex64; 2]; 2],
}

impl SubspaceRotation {
    pub fn from_axis(k: usize, omega: f64, axis: [f64; 3]) -> Self {
        let (s, c) = omega.sin_cos();
        let [nx, ny, nz] = axis;
        let i = Complex64::i();
        let block = [
            [
                Complex64::new(c, 0.0) - i * (s * nz),
                -i * s * Complex64::new(nx, -ny),
            ],
            [
                -i * s * Complex64::new(nx, ny),
                Complex64::new(c, 0.0) + i * (s * nz),
            ],
        ];
        Self { k, block }
    }

    /// Draws a uniformly distributed axis on the unit sphere.
    pub fn random<R: Rng + ?Sized>(k: usize, omega: f64, rng: &mut R) -> Self {
        let z: f64 = 2.0 * rng.random::<f64>() - 1.0;
        let phi: f64 = std::f64::consts::TAU * rng.random::<f64>();
        let rho = (1.0 - z * z).max(0.0).sqrt();
        Self::from_axis(k, omega, [rho * phi.cos(), rho * phi.sin(), z])
    }

    /// The full d x d matrix.
    pub fn embed(&self, d: usize) -> Result<UnitaryMatrix> {
        check_subspace(d, self.k)?;
        let mut m = DMatrix::identity(d, d);
        let k = self.k;
        m[(0, 0)] = self.block[0][0];
        m[(0, k)] = self.block[0][1];
        m[(k, 0)] = self.block[1][0];
        m[(k, k)] = self.block[1][1];
        Ok(UnitaryMatrix(m))
    }

    /// `U <- V U`, touching only rows 0 and k.
    pub fn apply_left(&self, u: &mut UnitaryMatrix) -> Result<()> {
        let d = u.dim();
        check_subspace(d, self.k)?;
        let k = self.k;
        let [[a, b], [c, e]] = self.block;
        let m = u.rows_mut();
        for col in 0..d {
            let top = m[(0, col)];
            let bottom = m[(k, col)];
            m[(0, col)] = a * top + b * bottom;
            m[(k, col)] = c * top + e * bottom;
        }
        Ok(())
    }
}

fn check_subspace(d: usize, k: usize) -> Result<()> {
    if d < 2 || k == 0 || k >= d {
        return Err(SsmlError::Index {
            k,
            max: d.saturating_sub(1),
        });
    }
    Ok(())
}

/// Random SU(2) rotation of geodesic angle `omega` on span{e_0, e_k}, embedded in dimension `d`.
pub fn embed_su2_rotation<R: Rng + ?Sized>(
    d: usize,
    k: usize,
    omega: f64,
    rng: &mut R,
) -> Result<UnitaryMatrix> {
    if d == 0 {
        return Err(SsmlError::InvalidDimension(0));
    }
    check_subspace(d, k)?;
    if !(omega >= 0.0 && omega.is_finite()) {
        return Err(SsmlError::param(format!("rotation angle {omega} must be finite and >= 0")));
    }
    SubspaceRotation::random(k, omega, rng).embed(d)
}
