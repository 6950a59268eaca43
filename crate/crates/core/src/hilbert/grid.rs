use std::fmt;
use std::sync::Arc;

use rustfft::{Fft, FftDirection, FftPlanner};

use super::{clip_variance, Observable, QuantumState};
use crate::error::{Error, Result};
use crate::scalar::{abs2, cis, creal, is_finite_c, Real, C};

/// Uniform periodic position grid with `n` points on `[q_min, q_max)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid<T: Real> {
    n: usize,
    q_min: T,
    q_max: T,
}

impl<T: Real> Grid<T> {
    pub fn new(n: usize, q_min: T, q_max: T) -> Result<Self> {
        if n < 2 || !n.is_power_of_two() {
            return Err(Error::config("grid_points", "a power of two ≥ 2"));
        }
        if !(q_max > q_min) || !q_min.is_finite() || !q_max.is_finite() {
            return Err(Error::config("box", "a finite interval with q_max > q_min"));
        }
        Ok(Self { n, q_min, q_max })
    }

    /// Grid of length `box_len` centred on the origin.
    pub fn centered(n: usize, box_len: T) -> Result<Self> {
        let half = box_len / T::lit(2.0);
        Self::new(n, -half, half)
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn q_min(&self) -> T {
        self.q_min
    }

    pub fn q_max(&self) -> T {
        self.q_max
    }

    pub fn box_len(&self) -> T {
        self.q_max - self.q_min
    }

    /// `Δq = (q_max − q_min)/n`.
    pub fn spacing(&self) -> T {
        self.box_len() / T::lit(self.n as f64)
    }

    pub fn position(&self, j: usize) -> T {
        self.q_min + T::lit(j as f64) * self.spacing()
    }

    pub fn positions(&self) -> Vec<T> {
        (0..self.n).map(|j| self.position(j)).collect()
    }

    /// Momentum of FFT bin `k` (standard FFT ordering, negative frequencies in the upper half).
    pub fn momentum(&self, k: usize, hbar: T) -> T {
        let n = self.n as i64;
        let signed = if (k as i64) < n / 2 {
            k as i64
        } else {
            k as i64 - n
        };
        hbar * T::two_pi() * T::lit(signed as f64) / self.box_len()
    }

    pub fn momenta(&self, hbar: T) -> Vec<T> {
        (0..self.n).map(|k| self.momentum(k, hbar)).collect()
    }
}

/// Forward/inverse FFT pair of fixed length; the inverse includes the `1/n` factor.
#[derive(Clone)]
pub struct SpectralTransform<T: Real> {
    n: usize,
    fwd: Arc<dyn Fft<T>>,
    inv: Arc<dyn Fft<T>>,
}

impl<T: Real> fmt::Debug for SpectralTransform<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SpectralTransform")
            .field("n", &self.n)
            .finish()
    }
}

impl<T: Real> SpectralTransform<T> {
    pub fn new(n: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            n,
            fwd: planner.plan_fft(n, FftDirection::Forward),
            inv: planner.plan_fft(n, FftDirection::Inverse),
        }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn forward(&self, data: &mut [C<T>]) {
        self.fwd.process(data);
    }

    pub fn inverse(&self, data: &mut [C<T>]) {
        self.inv.process(data);
        let s = T::one() / T::lit(self.n as f64);
        for z in data.iter_mut() {
            *z = z.scale(s);
        }
    }

    /// Multiplies by `values[k]` in momentum space.
    pub fn apply_diagonal(&self, data: &mut [C<T>], values: impl Fn(usize) -> C<T>) {
        self.forward(data);
        for (k, z) in data.iter_mut().enumerate() {
            *z *= values(k);
        }
        self.inverse(data);
    }
}

/// Parameters of a pure Gaussian wave packet.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianPacket<T> {
    pub center: T,
    pub momentum: T,
    /// Position variance σ_qq.
    pub var_q: T,
    /// Symmetrized position-momentum covariance σ_qp.
    pub cov_qp: T,
}

/// Wavefunction sampled on a periodic [`Grid`]. May be unnormalized.
#[derive(Debug, Clone, PartialEq)]
pub struct GridWavefunction<T: Real> {
    grid: Grid<T>,
    samples: Vec<C<T>>,
}

impl<T: Real> GridWavefunction<T> {
    pub fn new(grid: Grid<T>, samples: Vec<C<T>>) -> Result<Self> {
        if samples.len() != grid.len() {
            return Err(Error::DimensionMismatch {
                expected: grid.len(),
                found: samples.len(),
            });
        }
        if !samples.iter().all(is_finite_c) {
            return Err(Error::InvalidState("non-finite amplitude".into()));
        }
        Ok(Self { grid, samples })
    }

    /// Samples `exp(−(q−q₀)²(1/(4σ_qq) − iσ_qp/(2ħσ_qq)) + ip₀q/ħ)` and normalizes.
    ///
    /// The chirp term reproduces the requested covariance σ_qp; the momentum
    /// variance follows from purity, `σ_pp = (ħ²/4 + σ_qp²)/σ_qq`.
    pub fn gaussian(grid: Grid<T>, packet: GaussianPacket<T>, hbar: T) -> Result<Self> {
        if !(packet.var_q > T::zero()) {
            return Err(Error::config("var_q", "positive"));
        }
        let a = T::one() / (T::lit(4.0) * packet.var_q);
        let b = packet.cov_qp / (T::lit(2.0) * hbar * packet.var_q);
        let samples = grid
            .positions()
            .into_iter()
            .map(|q| {
                let x = q - packet.center;
                let envelope = (-a * x * x).exp();
                cis(b * x * x + packet.momentum * q / hbar).scale(envelope)
            })
            .collect();
        let mut psi = Self::new(grid, samples)?;
        psi.normalize_mut()?;
        Ok(psi)
    }

    pub fn grid(&self) -> &Grid<T> {
        &self.grid
    }

    pub fn samples(&self) -> &[C<T>] {
        &self.samples
    }

    /// Probability mass within `width` of either end of the box.
    pub fn edge_mass(&self, width: T) -> T {
        let dq = self.grid.spacing();
        let total = self.norm2();
        let mut edge = T::zero();
        for (j, z) in self.samples.iter().enumerate() {
            let q = self.grid.position(j);
            if q - self.grid.q_min() < width || self.grid.q_max() - q < width {
                edge += abs2(z) * dq;
            }
        }
        edge / total
    }
}

impl<T: Real> QuantumState<T> for GridWavefunction<T> {
    fn norm2(&self) -> T {
        self.grid.spacing() * self.samples.iter().fold(T::zero(), |acc, z| acc + abs2(z))
    }

    fn inner(&self, other: &Self) -> C<T> {
        let s = self
            .samples
            .iter()
            .zip(&other.samples)
            .fold(creal(T::zero()), |acc, (a, b)| acc + a.conj() * b);
        s.scale(self.grid.spacing())
    }

    fn scale_mut(&mut self, s: C<T>) {
        for z in &mut self.samples {
            *z *= s;
        }
    }

    fn axpy(&mut self, alpha: C<T>, x: &Self) {
        for (z, xz) in self.samples.iter_mut().zip(&x.samples) {
            *z += alpha * xz;
        }
    }

    fn is_finite(&self) -> bool {
        self.samples.iter().all(is_finite_c)
    }

    fn dim(&self) -> usize {
        self.samples.len()
    }
}

/// Grid observable, Hermitian by construction: real and diagonal either in
/// position or in momentum.
#[derive(Debug, Clone)]
pub enum GridOperator<T: Real> {
    Position {
        values: Vec<T>,
    },
    Momentum {
        values: Vec<T>,
        transform: SpectralTransform<T>,
    },
}

impl<T: Real> GridOperator<T> {
    /// The position operator `q`.
    pub fn position(grid: &Grid<T>) -> Self {
        Self::Position {
            values: grid.positions(),
        }
    }

    /// `f(q)`, e.g. a potential.
    pub fn position_fn(grid: &Grid<T>, f: impl Fn(T) -> T) -> Self {
        Self::Position {
            values: grid.positions().into_iter().map(f).collect(),
        }
    }

    /// The momentum operator `p = −iħ∂_q`.
    pub fn momentum(grid: &Grid<T>, hbar: T) -> Self {
        Self::momentum_fn(grid, hbar, |p| p)
    }

    /// `p²/2m`.
    pub fn kinetic(grid: &Grid<T>, mass: T, hbar: T) -> Self {
        let two_m = T::lit(2.0) * mass;
        Self::momentum_fn(grid, hbar, move |p| p * p / two_m)
    }

    pub fn momentum_fn(grid: &Grid<T>, hbar: T, f: impl Fn(T) -> T) -> Self {
        Self::Momentum {
            values: grid.momenta(hbar).into_iter().map(f).collect(),
            transform: SpectralTransform::new(grid.len()),
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Self::Position { values } | Self::Momentum { values, .. } => values.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn values(&self) -> &[T] {
        match self {
            Self::Position { values } | Self::Momentum { values, .. } => values,
        }
    }

    pub fn spectral_range(&self) -> T {
        let v = self.values();
        let (lo, hi) = v
            .iter()
            .fold((v[0], v[0]), |(lo, hi), &x| (lo.min(x), hi.max(x)));
        hi - lo
    }

    /// `f(O)ψ` evaluated in the operator's diagonal basis.
    pub fn apply_function(
        &self,
        state: &GridWavefunction<T>,
        f: impl Fn(T) -> C<T>,
    ) -> Result<GridWavefunction<T>> {
        self.check_dim(state)?;
        let mut out = state.clone();
        match self {
            Self::Position { values } => {
                for (z, &v) in out.samples.iter_mut().zip(values) {
                    *z *= f(v);
                }
            }
            Self::Momentum { values, transform } => {
                transform.apply_diagonal(&mut out.samples, |k| f(values[k]));
            }
        }
        Ok(out)
    }

    /// Weights `|ψ(x)|²` in the operator's diagonal basis together with their total.
    fn diagonal_weights(&self, state: &GridWavefunction<T>) -> Vec<T> {
        match self {
            Self::Position { .. } => state.samples.iter().map(abs2).collect(),
            Self::Momentum { transform, .. } => {
                let mut buf = state.samples.clone();
                transform.forward(&mut buf);
                buf.iter().map(abs2).collect()
            }
        }
    }

    fn check_dim(&self, state: &GridWavefunction<T>) -> Result<()> {
        if state.dim() != self.len() {
            return Err(Error::DimensionMismatch {
                expected: self.len(),
                found: state.dim(),
            });
        }
        Ok(())
    }

    fn moments(&self, state: &GridWavefunction<T>) -> Result<(T, T)> {
        self.check_dim(state)?;
        state.validate()?;
        let w = self.diagonal_weights(state);
        let total = w.iter().fold(T::zero(), |a, &x| a + x);
        let values = self.values();
        let mean = w
            .iter()
            .zip(values)
            .fold(T::zero(), |a, (&wi, &v)| a + wi * v)
            / total;
        let var = w
            .iter()
            .zip(values)
            .fold(T::zero(), |a, (&wi, &v)| a + wi * (v - mean) * (v - mean))
            / total;
        Ok((mean, clip_variance(var)))
    }
}

impl<T: Real> Observable<T, GridWavefunction<T>> for GridOperator<T> {
    fn apply(&self, state: &GridWavefunction<T>) -> Result<GridWavefunction<T>> {
        self.apply_function(state, creal)
    }

    fn expectation(&self, state: &GridWavefunction<T>) -> Result<T> {
        self.moments(state).map(|m| m.0)
    }

    fn variance(&self, state: &GridWavefunction<T>) -> Result<T> {
        self.moments(state).map(|m| m.1)
    }
}
