use nalgebra::DMatrix;

use super::matrix::{max_asymmetry, HermitianOperator};
use super::{QuantumState, StateVector};
use crate::error::{Error, Result};
use crate::scalar::{creal, is_finite_c, Real, C};

/// Density matrix: Hermitian within 1e-10, unit trace within 1e-10, and
/// smallest eigenvalue ≥ −1e-8.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix<T: Real> {
    matrix: DMatrix<C<T>>,
}

impl<T: Real> DensityMatrix<T> {
    pub fn new(matrix: DMatrix<C<T>>) -> Result<Self> {
        let rho = Self::from_matrix_unchecked(matrix)?;
        rho.check_valid()?;
        Ok(rho)
    }

    /// Wraps a square finite matrix without the physical-state checks.
    pub fn from_matrix_unchecked(matrix: DMatrix<C<T>>) -> Result<Self> {
        if matrix.nrows() != matrix.ncols() {
            return Err(Error::DimensionMismatch {
                expected: matrix.nrows(),
                found: matrix.ncols(),
            });
        }
        if !matrix.iter().all(is_finite_c) {
            return Err(Error::InvalidDensityMatrix("non-finite entry".into()));
        }
        Ok(Self { matrix })
    }

    /// `|ψ⟩⟨ψ| / ⟨ψ|ψ⟩`.
    pub fn from_pure(state: &StateVector<T>) -> Result<Self> {
        let psi = state.normalized()?;
        let v = psi.amplitudes();
        Ok(Self {
            matrix: v * v.adjoint(),
        })
    }

    pub fn maximally_mixed(dim: usize) -> Self {
        let s = T::one() / T::lit(dim as f64);
        Self {
            matrix: DMatrix::from_diagonal_element(dim, dim, creal(s)),
        }
    }

    pub fn check_valid(&self) -> Result<()> {
        let (row, col, asym) = max_asymmetry(&self.matrix);
        if asym > T::tol(1e-10) {
            return Err(Error::InvalidDensityMatrix(format!(
                "not Hermitian: asymmetry {asym} at ({row}, {col})"
            )));
        }
        let tr = self.trace();
        if (tr - T::one()).abs() > T::tol(1e-10) {
            return Err(Error::InvalidDensityMatrix(format!(
                "trace {tr} differs from 1"
            )));
        }
        let min = self.min_eigenvalue();
        if min < -T::tol(1e-8) {
            return Err(Error::InvalidDensityMatrix(format!(
                "negative eigenvalue {min}"
            )));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<C<T>> {
        &self.matrix
    }

    pub fn into_matrix(self) -> DMatrix<C<T>> {
        self.matrix
    }

    pub fn trace(&self) -> T {
        self.matrix.trace().re
    }

    /// `Tr ρ²`.
    pub fn purity(&self) -> T {
        self.matrix
            .iter()
            .fold(T::zero(), |acc, z| acc + z.re * z.re + z.im * z.im)
    }

    /// Eigenvalues of the Hermitian part, ascending.
    pub fn eigenvalues(&self) -> Vec<T> {
        hermitian_eigenvalues(&self.matrix)
    }

    pub fn min_eigenvalue(&self) -> T {
        self.eigenvalues()[0]
    }

    /// `½ Σ|λ_i(ρ − σ)|`.
    pub fn trace_distance(&self, other: &Self) -> Result<T> {
        if self.dim() != other.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: other.dim(),
            });
        }
        let diff = &self.matrix - &other.matrix;
        let sum = hermitian_eigenvalues(&diff)
            .into_iter()
            .fold(T::zero(), |a, l| a + l.abs());
        Ok(sum / T::lit(2.0))
    }

    /// `⟨ψ|ρ|ψ⟩` for normalized ψ.
    pub fn overlap(&self, state: &StateVector<T>) -> Result<T> {
        let psi = state.normalized()?;
        let v = psi.amplitudes();
        Ok(v.dotc(&(&self.matrix * v)).re)
    }
}

fn hermitian_eigenvalues<T: Real>(m: &DMatrix<C<T>>) -> Vec<T> {
    let herm = (m + m.adjoint()).scale(T::lit(0.5));
    let mut vals: Vec<T> = nalgebra::SymmetricEigen::new(herm)
        .eigenvalues
        .iter()
        .copied()
        .collect();
    vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
    vals
}

/// `[A, [A, ρ]]`. In the eigenbasis of A its entries are `(a_m − a_n)² ρ_mn`.
pub fn double_commutator<T: Real>(
    a: &HermitianOperator<T>,
    rho: &DensityMatrix<T>,
) -> Result<DMatrix<C<T>>> {
    if a.dim() != rho.dim() {
        return Err(Error::DimensionMismatch {
            expected: a.dim(),
            found: rho.dim(),
        });
    }
    Ok(commutator(
        a.matrix(),
        &commutator(a.matrix(), rho.matrix()),
    ))
}

pub(crate) fn commutator<T: Real>(x: &DMatrix<C<T>>, y: &DMatrix<C<T>>) -> DMatrix<C<T>> {
    x * y - y * x
}
