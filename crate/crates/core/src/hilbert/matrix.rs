use nalgebra::{DMatrix, DVector};

use super::{clip_variance, Observable, QuantumState};
use crate::error::{Error, Result};
use crate::scalar::{abs2, cplx, creal, is_finite_c, Real, C};

/// Pure state in a finite basis of dimension `d ≥ 2`. May be unnormalized.
#[derive(Debug, Clone, PartialEq)]
pub struct StateVector<T: Real> {
    amps: DVector<C<T>>,
}

impl<T: Real> StateVector<T> {
    pub fn new(amplitudes: Vec<C<T>>) -> Result<Self> {
        if amplitudes.len() < 2 {
            return Err(Error::InvalidState(format!(
                "basis dimension must be at least 2, got {}",
                amplitudes.len()
            )));
        }
        if !amplitudes.iter().all(is_finite_c) {
            return Err(Error::InvalidState("non-finite amplitude".into()));
        }
        Ok(Self {
            amps: DVector::from_vec(amplitudes),
        })
    }

    pub fn from_real(amplitudes: &[T]) -> Result<Self> {
        Self::new(amplitudes.iter().map(|&x| creal(x)).collect())
    }

    /// Basis state `|index⟩`.
    pub fn basis(dim: usize, index: usize) -> Result<Self> {
        if index >= dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: index + 1,
            });
        }
        let mut v = vec![C::new(T::zero(), T::zero()); dim];
        v[index] = creal(T::one());
        Self::new(v)
    }

    pub(crate) fn from_dvector(amps: DVector<C<T>>) -> Self {
        Self { amps }
    }

    pub fn amplitudes(&self) -> &DVector<C<T>> {
        &self.amps
    }

    pub fn into_amplitudes(self) -> DVector<C<T>> {
        self.amps
    }

    pub fn is_normalized(&self) -> bool {
        (self.norm2() - T::one()).abs() < T::tol(1e-12)
    }
}

impl<T: Real> QuantumState<T> for StateVector<T> {
    fn norm2(&self) -> T {
        self.amps.iter().fold(T::zero(), |acc, z| acc + abs2(z))
    }

    fn inner(&self, other: &Self) -> C<T> {
        self.amps.dotc(&other.amps)
    }

    fn scale_mut(&mut self, s: C<T>) {
        self.amps *= s;
    }

    fn axpy(&mut self, alpha: C<T>, x: &Self) {
        self.amps.axpy(alpha, &x.amps, creal(T::one()));
    }

    fn is_finite(&self) -> bool {
        self.amps.iter().all(is_finite_c)
    }

    fn dim(&self) -> usize {
        self.amps.len()
    }
}

/// Dense Hermitian matrix together with its spectral decomposition.
///
/// Eigenvalues are sorted ascending. Diagonal inputs keep the exact identity
/// as eigenbasis so that functions of the operator act exactly on basis states.
#[derive(Debug, Clone)]
pub struct HermitianOperator<T: Real> {
    matrix: DMatrix<C<T>>,
    eigenvalues: DVector<T>,
    eigenvectors: DMatrix<C<T>>,
    diagonal: bool,
}

impl<T: Real> HermitianOperator<T> {
    /// Validates Hermiticity to 1e-12 (max-entry norm); never symmetrizes.
    pub fn new(matrix: DMatrix<C<T>>) -> Result<Self> {
        let (r, c) = matrix.shape();
        if r != c {
            return Err(Error::DimensionMismatch {
                expected: r,
                found: c,
            });
        }
        if r < 1 {
            return Err(Error::InvalidState("empty operator".into()));
        }
        if !matrix.iter().all(is_finite_c) {
            return Err(Error::InvalidState("non-finite operator entry".into()));
        }
        let (row, col, asym) = max_asymmetry(&matrix);
        if asym >= T::tol(1e-12) {
            return Err(Error::NotHermitian {
                row,
                col,
                asymmetry: asym.to_f64_lossy(),
            });
        }
        let diagonal = (0..r)
            .all(|i| (0..r).all(|j| i == j || matrix[(i, j)] == C::new(T::zero(), T::zero())));
        let (eigenvalues, eigenvectors) = if diagonal {
            let mut idx: Vec<usize> = (0..r).collect();
            idx.sort_by(|&a, &b| matrix[(a, a)].re.partial_cmp(&matrix[(b, b)].re).unwrap());
            let vals = DVector::from_iterator(r, idx.iter().map(|&i| matrix[(i, i)].re));
            let mut vecs = DMatrix::zeros(r, r);
            for (k, &i) in idx.iter().enumerate() {
                vecs[(i, k)] = creal(T::one());
            }
            (vals, vecs)
        } else {
            let eig = nalgebra::SymmetricEigen::new(matrix.clone());
            let mut idx: Vec<usize> = (0..r).collect();
            idx.sort_by(|&a, &b| eig.eigenvalues[a].partial_cmp(&eig.eigenvalues[b]).unwrap());
            let vals = DVector::from_iterator(r, idx.iter().map(|&i| eig.eigenvalues[i]));
            let vecs = DMatrix::from_columns(
                &idx.iter()
                    .map(|&i| eig.eigenvectors.column(i).into_owned())
                    .collect::<Vec<_>>(),
            );
            (vals, vecs)
        };
        Ok(Self {
            matrix,
            eigenvalues,
            eigenvectors,
            diagonal,
        })
    }

    pub fn from_real_diagonal(values: &[T]) -> Result<Self> {
        let d = values.len();
        Self::new(DMatrix::from_fn(d, d, |i, j| {
            if i == j {
                creal(values[i])
            } else {
                creal(T::zero())
            }
        }))
    }

    pub fn identity(dim: usize) -> Self {
        Self::new(DMatrix::identity(dim, dim)).expect("identity is Hermitian")
    }

    pub fn zero(dim: usize) -> Self {
        Self::new(DMatrix::zeros(dim, dim)).expect("zero is Hermitian")
    }

    pub fn sigma_x() -> Self {
        let (o, l) = (creal(T::zero()), creal(T::one()));
        Self::new(DMatrix::from_row_slice(2, 2, &[o, l, l, o])).expect("σx is Hermitian")
    }

    pub fn sigma_y() -> Self {
        let o = creal(T::zero());
        let i = cplx(T::zero(), T::one());
        Self::new(DMatrix::from_row_slice(2, 2, &[o, -i, i, o])).expect("σy is Hermitian")
    }

    pub fn sigma_z() -> Self {
        Self::from_real_diagonal(&[T::one(), -T::one()]).expect("σz is Hermitian")
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<C<T>> {
        &self.matrix
    }

    pub fn eigenvalues(&self) -> &DVector<T> {
        &self.eigenvalues
    }

    /// Columns are orthonormal eigenvectors matching [`Self::eigenvalues`].
    pub fn eigenvectors(&self) -> &DMatrix<C<T>> {
        &self.eigenvectors
    }

    pub fn is_diagonal(&self) -> bool {
        self.diagonal
    }

    /// `λ_max − λ_min`.
    pub fn spectral_range(&self) -> T {
        let n = self.eigenvalues.len();
        self.eigenvalues[n - 1] - self.eigenvalues[0]
    }

    /// `f(A)` for a scalar function of the eigenvalues.
    pub fn function_matrix(&self, f: impl Fn(T) -> C<T>) -> DMatrix<C<T>> {
        let d = self.dim();
        if self.diagonal {
            let mut m = DMatrix::zeros(d, d);
            for k in 0..d {
                // eigenvectors of a diagonal operator are permuted basis vectors
                let i = (0..d)
                    .find(|&i| self.eigenvectors[(i, k)].re == T::one())
                    .unwrap();
                m[(i, i)] = f(self.eigenvalues[k]);
            }
            return m;
        }
        let mut scaled = self.eigenvectors.clone();
        for k in 0..d {
            let fk = f(self.eigenvalues[k]);
            for i in 0..d {
                scaled[(i, k)] *= fk;
            }
        }
        &scaled * self.eigenvectors.adjoint()
    }

    /// `f(A)ψ` evaluated in the eigenbasis without forming `f(A)`.
    pub fn apply_function(
        &self,
        state: &StateVector<T>,
        f: impl Fn(T) -> C<T>,
    ) -> Result<StateVector<T>> {
        self.check_dim(state)?;
        let d = self.dim();
        if self.diagonal {
            let mut out = state.amps.clone();
            for i in 0..d {
                out[i] *= f(self.matrix[(i, i)].re);
            }
            return Ok(StateVector::from_dvector(out));
        }
        let mut coeffs = self.eigenvectors.adjoint() * &state.amps;
        for k in 0..d {
            coeffs[k] *= f(self.eigenvalues[k]);
        }
        Ok(StateVector::from_dvector(&self.eigenvectors * coeffs))
    }

    /// `(A − shift)ψ`.
    pub fn apply_shifted(&self, state: &StateVector<T>, shift: T) -> Result<StateVector<T>> {
        self.check_dim(state)?;
        let mut out = &self.matrix * &state.amps;
        out.axpy(creal(-shift), &state.amps, creal(T::one()));
        Ok(StateVector::from_dvector(out))
    }

    fn check_dim(&self, state: &StateVector<T>) -> Result<()> {
        if state.dim() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: state.dim(),
            });
        }
        Ok(())
    }
}

/// Largest `|M_ij − conj(M_ji)|` and its position.
pub(crate) fn max_asymmetry<T: Real>(m: &DMatrix<C<T>>) -> (usize, usize, T) {
    let mut best = (0, 0, T::zero());
    for i in 0..m.nrows() {
        for j in i..m.ncols() {
            let diff = m[(i, j)] - m[(j, i)].conj();
            let a = abs2(&diff).sqrt();
            if a > best.2 {
                best = (i, j, a);
            }
        }
    }
    best
}

impl<T: Real> Observable<T, StateVector<T>> for HermitianOperator<T> {
    fn apply(&self, state: &StateVector<T>) -> Result<StateVector<T>> {
        self.check_dim(state)?;
        Ok(StateVector::from_dvector(&self.matrix * &state.amps))
    }

    fn expectation(&self, state: &StateVector<T>) -> Result<T> {
        self.check_dim(state)?;
        let n2 = state.validate()?;
        let av = &self.matrix * &state.amps;
        Ok(state.amps.dotc(&av).re / n2)
    }

    fn variance(&self, state: &StateVector<T>) -> Result<T> {
        self.check_dim(state)?;
        let n2 = state.validate()?;
        let av = &self.matrix * &state.amps;
        let mean = state.amps.dotc(&av).re / n2;
        let mut centered = av;
        centered.axpy(creal(-mean), &state.amps, creal(T::one()));
        Ok(clip_variance(centered.dotc(&centered).re / n2))
    }
}
