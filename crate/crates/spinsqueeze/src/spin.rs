//! Collective spin algebra in the Dicke basis |J, m>, m = J, J-1, ..., -J.
//!
//! The total spin J is stored exactly as the integer 2J, so half-integer
//! spins never suffer float comparison issues. Operators are dense complex
//! matrices; matrix elements come from
//!
//!   <J, m±1 | J_± | J, m> = sqrt(J(J+1) - m(m±1)),
//!
//! which in integer form is sqrt((k+1)(2J-k)) for the ladder band between
//! basis indices k and k+1.

use nalgebra::{DMatrix, DVector};

use crate::error::Error;
use crate::{Result, C64};

/// Largest Hilbert-space dimension the operator builders accept (2J + 1).
pub const MAX_DIM: usize = 4001;

/// Tolerance for Hermiticity / unit-trace validation of density matrices.
pub const STATE_TOL: f64 = 1e-9;

/// Total spin quantum number, stored exactly as 2J.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Spin {
    two_j: u32,
}

impl Spin {
    /// Build from 2J; requires 2J >= 1.
    pub fn new(two_j: u32) -> Result<Self> {
        if two_j == 0 {
            return Err(Error::InvalidSpin { two_j });
        }
        Ok(Spin { two_j })
    }

    /// Build from J itself; J must be a positive integer or half-integer.
    pub fn from_j(j: f64) -> Result<Self> {
        let two_j = 2.0 * j;
        if !two_j.is_finite() || two_j < 1.0 || two_j.fract() != 0.0 || two_j > u32::MAX as f64 {
            return Err(Error::InvalidParameter {
                reason: format!("J must be a positive integer or half-integer, got {j}"),
            });
        }
        Spin::new(two_j as u32)
    }

    /// Infer the spin from a Hilbert-space dimension d = 2J + 1.
    pub fn from_dim(dim: usize) -> Result<Self> {
        if dim < 2 {
            return Err(Error::InvalidSpin { two_j: 0 });
        }
        if dim > MAX_DIM {
            return Err(Error::DimensionOverflow { dim, max: MAX_DIM });
        }
        Spin::new((dim - 1) as u32)
    }

    pub fn two_j(&self) -> u32 {
        self.two_j
    }

    pub fn j(&self) -> f64 {
        self.two_j as f64 / 2.0
    }

    /// Hilbert-space dimension 2J + 1.
    pub fn dim(&self) -> usize {
        self.two_j as usize + 1
    }

    /// m value of basis index i (descending from +J).
    pub fn m(&self, i: usize) -> f64 {
        self.j() - i as f64
    }
}

/// Ladder band a_k = <k| J_+ |k+1> = sqrt((k+1)(2J - k)), k = 0..2J-1.
pub(crate) fn ladder_band(spin: Spin) -> Vec<f64> {
    let n = spin.two_j() as usize;
    (0..n)
        .map(|k| (((k + 1) * (n - k)) as f64).sqrt())
        .collect()
}

/// One collective spin component as a dense matrix, tagged with its spin.
#[derive(Clone, Debug, PartialEq)]
pub struct SpinOperator {
    spin: Spin,
    mat: DMatrix<C64>,
}

impl SpinOperator {
    /// Wrap an explicit matrix; the dimension must match 2J + 1.
    pub fn from_matrix(spin: Spin, mat: DMatrix<C64>) -> Result<Self> {
        if mat.nrows() != spin.dim() || mat.ncols() != spin.dim() {
            return Err(Error::DimensionMismatch {
                expected: spin.dim(),
                got: mat.nrows().max(mat.ncols()),
            });
        }
        Ok(SpinOperator { spin, mat })
    }

    pub fn spin(&self) -> Spin {
        self.spin
    }

    pub fn dim(&self) -> usize {
        self.spin.dim()
    }

    pub fn mat(&self) -> &DMatrix<C64> {
        &self.mat
    }
}

impl std::ops::Deref for SpinOperator {
    type Target = DMatrix<C64>;

    fn deref(&self) -> &Self::Target {
        &self.mat
    }
}

/// Build (J_x, J_y, J_z) for the given spin.
///
/// J_z is diagonal with entries m = J..-J; J_x and J_y are the tridiagonal
/// combinations (J_+ + J_-)/2 and (J_+ - J_-)/(2i).
pub fn spin_operators(spin: Spin) -> Result<(SpinOperator, SpinOperator, SpinOperator)> {
    let d = spin.dim();
    if d > MAX_DIM {
        return Err(Error::DimensionOverflow {
            dim: d,
            max: MAX_DIM,
        });
    }
    let band = ladder_band(spin);

    let mut jx = DMatrix::<C64>::zeros(d, d);
    let mut jy = DMatrix::<C64>::zeros(d, d);
    let mut jz = DMatrix::<C64>::zeros(d, d);

    for i in 0..d {
        jz[(i, i)] = C64::new(spin.m(i), 0.0);
    }
    for (k, &a) in band.iter().enumerate() {
        // J_+ contributes a at (k, k+1); J_- contributes a at (k+1, k).
        jx[(k, k + 1)] = C64::new(a / 2.0, 0.0);
        jx[(k + 1, k)] = C64::new(a / 2.0, 0.0);
        jy[(k, k + 1)] = C64::new(0.0, -a / 2.0);
        jy[(k + 1, k)] = C64::new(0.0, a / 2.0);
    }

    Ok((
        SpinOperator { spin, mat: jx },
        SpinOperator { spin, mat: jy },
        SpinOperator { spin, mat: jz },
    ))
}

/// [a, b] = ab - ba.
pub fn commutator(a: &DMatrix<C64>, b: &DMatrix<C64>) -> DMatrix<C64> {
    a * b - b * a
}

/// Collective density matrix with validated invariants.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityMatrix {
    spin: Spin,
    mat: DMatrix<C64>,
}

impl DensityMatrix {
    /// Validate Hermiticity and unit trace (both to `STATE_TOL`) and wrap.
    pub fn new(mat: DMatrix<C64>) -> Result<Self> {
        if mat.nrows() != mat.ncols() {
            return Err(Error::DimensionMismatch {
                expected: mat.nrows(),
                got: mat.ncols(),
            });
        }
        let spin = Spin::from_dim(mat.nrows())?;
        let herm = hermitian_deviation(&mat);
        if !(herm <= STATE_TOL) {
            return Err(Error::NotHermitian {
                deviation: herm,
                tolerance: STATE_TOL,
            });
        }
        let tr = mat.trace();
        let tr_dev = (tr - C64::new(1.0, 0.0)).norm();
        if !(tr_dev <= STATE_TOL) {
            return Err(Error::TraceNotOne {
                deviation: tr_dev,
                tolerance: STATE_TOL,
            });
        }
        Ok(DensityMatrix { spin, mat })
    }

    /// Projector onto a (normalized copy of a) pure state vector.
    pub fn from_pure(psi: &DVector<C64>) -> Result<Self> {
        let spin = Spin::from_dim(psi.len())?;
        let norm = psi.norm();
        if norm == 0.0 || !norm.is_finite() {
            return Err(Error::InvalidParameter {
                reason: "pure state vector must be nonzero and finite".into(),
            });
        }
        let psi = psi / C64::new(norm, 0.0);
        let mat = &psi * psi.adjoint();
        Ok(DensityMatrix { spin, mat })
    }

    /// Wrap a matrix whose invariants are maintained by the caller
    /// (integrators re-Hermitize and renormalize every step).
    pub(crate) fn from_raw_unchecked(spin: Spin, mat: DMatrix<C64>) -> Self {
        DensityMatrix { spin, mat }
    }

    pub fn spin(&self) -> Spin {
        self.spin
    }

    pub fn dim(&self) -> usize {
        self.spin.dim()
    }

    pub fn mat(&self) -> &DMatrix<C64> {
        &self.mat
    }

    /// Tr rho^2; equals sum |rho_ij|^2 for Hermitian rho.
    pub fn purity(&self) -> f64 {
        self.mat.iter().map(|z| z.norm_sqr()).sum()
    }

    /// Smallest eigenvalue (exact Hermitian eigensolve); the positivity probe.
    pub fn min_eigenvalue(&self) -> f64 {
        self.mat
            .clone()
            .symmetric_eigen()
            .eigenvalues
            .iter()
            .fold(f64::INFINITY, |acc, &x| acc.min(x))
    }

    /// Trace distance (1/2) || rho - other ||_1 via the Hermitian spectrum
    /// of the difference.
    pub fn trace_distance(&self, other: &DensityMatrix) -> Result<f64> {
        if self.dim() != other.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: other.dim(),
            });
        }
        let diff = &self.mat - &other.mat;
        let eig = diff.symmetric_eigen();
        Ok(0.5 * eig.eigenvalues.iter().map(|x| x.abs()).sum::<f64>())
    }
}

/// Coherent spin state fully polarized along +x: every constituent two-level
/// system in the equal superposition of up and down.
///
/// In the Dicke basis the amplitudes are 2^{-J} sqrt(C(2J, J-m)); they are
/// accumulated from the central (largest) coefficient outward so no binomial
/// ever overflows, then normalized.
pub fn css_x(spin: Spin) -> Result<DensityMatrix> {
    let d = spin.dim();
    if d > MAX_DIM {
        return Err(Error::DimensionOverflow {
            dim: d,
            max: MAX_DIM,
        });
    }
    let n = spin.two_j() as usize;
    let mut amp = vec![0.0_f64; d];
    let k0 = n / 2;
    amp[k0] = 1.0;
    // C(n, k+1)/C(n, k) = (n - k)/(k + 1), moving right from the center;
    // the mirror ratio applies moving left. Amplitudes only shrink outward.
    for k in k0..n {
        amp[k + 1] = amp[k] * (((n - k) as f64) / ((k + 1) as f64)).sqrt();
    }
    for k in (1..=k0).rev() {
        amp[k - 1] = amp[k] * ((k as f64) / ((n - k + 1) as f64)).sqrt();
    }
    let norm = amp.iter().map(|a| a * a).sum::<f64>().sqrt();
    let psi = DVector::from_iterator(d, amp.iter().map(|&a| C64::new(a / norm, 0.0)));
    DensityMatrix::from_pure(&psi)
}

/// Re Tr[op rho] for a Hermitian operator.
///
/// The imaginary residue of the trace must vanish to 1e-9 (debug-asserted);
/// a non-Hermitian `op` violates the contract.
pub fn expectation(op: &DMatrix<C64>, rho: &DensityMatrix) -> Result<f64> {
    if op.nrows() != rho.dim() || op.ncols() != rho.dim() {
        return Err(Error::DimensionMismatch {
            expected: rho.dim(),
            got: op.nrows().max(op.ncols()),
        });
    }
    // Tr[op rho] = sum_{ij} op_ij rho_ji without materializing the product.
    let mut tr = C64::new(0.0, 0.0);
    for i in 0..op.nrows() {
        for j in 0..op.ncols() {
            tr += op[(i, j)] * rho.mat()[(j, i)];
        }
    }
    debug_assert!(
        tr.im.abs() <= 1e-9,
        "imaginary residue {:.3e} in expectation of a supposedly Hermitian operator",
        tr.im
    );
    Ok(tr.re)
}

/// Tr rho^2.
pub fn purity(rho: &DensityMatrix) -> f64 {
    rho.purity()
}

/// Max-norm deviation from Hermiticity, ||A - A^dag||_max.
pub(crate) fn hermitian_deviation(mat: &DMatrix<C64>) -> f64 {
    let mut dev = 0.0_f64;
    for i in 0..mat.nrows() {
        for j in i..mat.ncols() {
            dev = dev.max((mat[(i, j)] - mat[(j, i)].conj()).norm());
        }
    }
    dev
}
