//! State and operator representations.
//!
//! Two representations are supported: finite-dimensional column vectors with
//! dense Hermitian matrices, and one-dimensional periodic position grids with
//! operators that are diagonal either in position or in momentum. Unnormalized
//! states are valid inputs everywhere; functionals that need a normalized state
//! divide by the norm internally.

mod density;
mod grid;
mod matrix;

pub(crate) use density::commutator;
pub use density::{double_commutator, DensityMatrix};
pub use grid::{GaussianPacket, Grid, GridOperator, GridWavefunction, SpectralTransform};
pub use matrix::{HermitianOperator, StateVector};

use crate::error::{Error, Result};
use crate::scalar::{Real, C};

/// Vector-space operations on a (possibly unnormalized) pure state.
pub trait QuantumState<T: Real>: Clone + Send + Sync {
    /// Squared norm, including the grid measure Δq where applicable.
    fn norm2(&self) -> T;

    /// `⟨self|other⟩` including the grid measure.
    fn inner(&self, other: &Self) -> C<T>;

    fn scale_mut(&mut self, s: C<T>);

    /// `self += alpha · x`.
    fn axpy(&mut self, alpha: C<T>, x: &Self);

    fn is_finite(&self) -> bool;

    fn dim(&self) -> usize;

    /// Checks finiteness and strictly positive norm.
    fn validate(&self) -> Result<T> {
        if !self.is_finite() {
            return Err(Error::InvalidState("non-finite amplitude".into()));
        }
        let n2 = self.norm2();
        if n2 <= T::zero() {
            return Err(Error::DegenerateState);
        }
        Ok(n2)
    }

    fn normalized(&self) -> Result<Self> {
        let n2 = self.validate()?;
        let mut out = self.clone();
        out.scale_mut(crate::scalar::creal(T::one() / n2.sqrt()));
        Ok(out)
    }

    fn normalize_mut(&mut self) -> Result<T> {
        let n2 = self.validate()?;
        self.scale_mut(crate::scalar::creal(T::one() / n2.sqrt()));
        Ok(n2)
    }
}

/// A Hermitian observable acting on states of type `S`.
pub trait Observable<T: Real, S: QuantumState<T>>: Send + Sync {
    fn apply(&self, state: &S) -> Result<S>;

    /// `⟨ψ|A|ψ⟩ / ⟨ψ|ψ⟩`.
    fn expectation(&self, state: &S) -> Result<T>;

    /// `⟨ψ|A²|ψ⟩/⟨ψ|ψ⟩ − ⟨A⟩²`, clipped to zero when within −1e-12 of it.
    fn variance(&self, state: &S) -> Result<T>;
}

pub fn norm2<T: Real, S: QuantumState<T>>(state: &S) -> Result<T> {
    if !state.is_finite() {
        return Err(Error::InvalidState("non-finite amplitude".into()));
    }
    Ok(state.norm2())
}

pub fn expectation<T: Real, S: QuantumState<T>, O: Observable<T, S>>(
    op: &O,
    state: &S,
) -> Result<T> {
    op.expectation(state)
}

pub fn variance<T: Real, S: QuantumState<T>, O: Observable<T, S>>(op: &O, state: &S) -> Result<T> {
    op.variance(state)
}

pub fn apply<T: Real, S: QuantumState<T>, O: Observable<T, S>>(op: &O, state: &S) -> Result<S> {
    op.apply(state)
}

/// `|⟨ψ₁|ψ₂⟩|² / (‖ψ₁‖²‖ψ₂‖²)`, clamped into `[0, 1]`.
pub fn fidelity<T: Real, S: QuantumState<T>>(a: &S, b: &S) -> Result<T> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            expected: a.dim(),
            found: b.dim(),
        });
    }
    let na = a.validate()?;
    let nb = b.validate()?;
    let ov = a.inner(b);
    let f = crate::scalar::abs2(&ov) / (na * nb);
    Ok(f.clamp(T::zero(), T::one()))
}

pub(crate) fn clip_variance<T: Real>(v: T) -> T {
    if v < T::zero() && v > -T::tol(1e-12) {
        T::zero()
    } else {
        v
    }
}

#[cfg(test)]
mod tests;
