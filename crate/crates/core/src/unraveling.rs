//! Selective measurement dynamics.
//!
//! Nonlinear picture (normalized state, Ito form):
//!
//! ```text
//! dψ = [−(i/ħ)H − (κ/2)(A − ⟨A⟩)²] ψ dt + √κ (A − ⟨A⟩) ψ dW
//! a(t) dt = ⟨A⟩ dt + dW / (2√κ)
//! ```
//!
//! Linear picture (unnormalized state driven by a given record):
//!
//! ```text
//! ∂ψ/∂t = [−(i/ħ)H − κ(A − a(t))²] ψ,      P[a] = ‖ψ_t‖²
//! ```
//!
//! The record noise coefficient is `1/(2√κ)`. With κ in units of
//! `1/([A]²·time)` this is the only choice that gives the record units of `A`
//! and that makes the two pictures agree: completing the square in
//! `exp(−κΔt(A − a)²)` with `a = ⟨A⟩ + ΔW/(2√κΔt)` reproduces the noise term
//! `√κ(A − ⟨A⟩)ΔW` of the nonlinear equation. The literal `1/(2κ)` variant is
//! kept selectable ([`RecordCoefficient::LiteralInverseTwoKappa`]) so the
//! mismatch can be demonstrated.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::hilbert::{
    Grid, GridOperator, GridWavefunction, HermitianOperator, Observable, QuantumState, StateVector,
};
use crate::scalar::{cis, cplx, creal, Real};
use crate::stochastic::NoiseStream;

/// Measurement strength κ ≥ 0; zero means the measurement is switched off.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct MeasurementStrength<T>(T);

impl<T: Real> MeasurementStrength<T> {
    pub fn new(kappa: T) -> Result<Self> {
        if kappa > T::zero() && kappa.is_finite() {
            Ok(Self(kappa))
        } else {
            Err(Error::config("kappa", "positive"))
        }
    }

    pub fn off() -> Self {
        Self(T::zero())
    }

    pub fn value(self) -> T {
        self.0
    }

    pub fn is_off(self) -> bool {
        self.0 == T::zero()
    }
}

/// Record values `a_k` on consecutive slices `[kΔt, (k+1)Δt)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementRecord<T> {
    dt: T,
    values: Vec<T>,
}

impl<T: Real> MeasurementRecord<T> {
    pub fn new(dt: T, values: Vec<T>) -> Result<Self> {
        if !(dt > T::zero()) || !dt.is_finite() {
            return Err(Error::config("dt", "positive"));
        }
        if let Some(k) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::config(&format!("record[{k}]"), "finite"));
        }
        Ok(Self { dt, values })
    }

    pub fn empty(dt: T) -> Result<Self> {
        Self::new(dt, Vec::new())
    }

    pub fn dt(&self) -> T {
        self.dt
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Start time of slice `k`.
    pub fn time(&self, k: usize) -> T {
        T::lit(k as f64) * self.dt
    }

    fn push(&mut self, a: T) {
        self.values.push(a);
    }
}

/// Coefficient multiplying the white noise in the record equation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RecordCoefficient {
    /// `1/(2√κ)`.
    #[default]
    InverseTwoSqrtKappa,
    /// `1/(2κ)`; dimensionally inconsistent, kept to demonstrate the mismatch.
    LiteralInverseTwoKappa,
}

impl RecordCoefficient {
    /// Factor converting `ΔW` into the record deviation `a_k − ⟨A⟩`.
    pub fn noise_scale<T: Real>(self, kappa: T, dt: T) -> T {
        let two = T::lit(2.0);
        match self {
            Self::InverseTwoSqrtKappa => T::one() / (two * kappa.sqrt() * dt),
            Self::LiteralInverseTwoKappa => T::one() / (two * kappa * dt),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NormMode {
    /// Renormalize after every step.
    #[default]
    Renormalize,
    /// Keep the raw Euler–Maruyama iterate (norm-martingale diagnostics).
    Raw,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NonlinearScheme {
    /// Explicit Euler–Maruyama update of the Ito equation.
    #[default]
    EulerMaruyama,
    /// Emit the record first, then apply the exact Gaussian factor and the
    /// unitary step and renormalize. Agrees with Euler–Maruyama to first order
    /// and stays stable for stiff grid Hamiltonians.
    KrausSplit,
}

/// A Hamiltonian plus monitored observable in a concrete representation.
pub trait MonitoredSystem<T: Real>: Send + Sync {
    type State: QuantumState<T>;

    fn hbar(&self) -> T;

    fn check_state(&self, psi: &Self::State) -> Result<()>;

    fn mean_a(&self, psi: &Self::State) -> Result<T>;

    fn var_a(&self, psi: &Self::State) -> Result<T>;

    /// `(A − shift)ψ`.
    fn a_shifted(&self, psi: &Self::State, shift: T) -> Result<Self::State>;

    /// `Hψ`.
    fn h_apply(&self, psi: &Self::State) -> Result<Self::State>;

    /// `exp(−κΔt(A − a)²)ψ`, applied exactly in the eigenbasis of A.
    fn gaussian_factor(&self, psi: &Self::State, kappa_dt: T, a: T) -> Result<Self::State>;

    /// `exp(−iHΔt/ħ)ψ`.
    fn unitary(&self, psi: &Self::State, dt: T) -> Result<Self::State>;

    /// Spread of A values relevant for the step-size guard.
    fn guard_range(&self, psi: &Self::State) -> Result<T>;

    /// Projects onto the spectral window `[lo, hi]` of A. The flag is false when
    /// the window contains no point of the spectrum.
    fn window_projection(&self, psi: &Self::State, lo: T, hi: T) -> Result<(Self::State, bool)>;
}

/// Finite-dimensional system with dense `H` and `A`.
#[derive(Debug, Clone)]
pub struct MatrixSystem<T: Real> {
    h: HermitianOperator<T>,
    a: HermitianOperator<T>,
    hbar: T,
}

impl<T: Real> MatrixSystem<T> {
    pub fn new(h: HermitianOperator<T>, a: HermitianOperator<T>, hbar: T) -> Result<Self> {
        if h.dim() != a.dim() {
            return Err(Error::DimensionMismatch {
                expected: h.dim(),
                found: a.dim(),
            });
        }
        if !(hbar > T::zero()) || !hbar.is_finite() {
            return Err(Error::config("hbar", "positive"));
        }
        Ok(Self { h, a, hbar })
    }

    pub fn dim(&self) -> usize {
        self.h.dim()
    }

    pub fn hamiltonian(&self) -> &HermitianOperator<T> {
        &self.h
    }

    pub fn observable(&self) -> &HermitianOperator<T> {
        &self.a
    }
}

impl<T: Real> MonitoredSystem<T> for MatrixSystem<T> {
    type State = StateVector<T>;

    fn hbar(&self) -> T {
        self.hbar
    }

    fn check_state(&self, psi: &StateVector<T>) -> Result<()> {
        if psi.dim() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: psi.dim(),
            });
        }
        Ok(())
    }

    fn mean_a(&self, psi: &StateVector<T>) -> Result<T> {
        self.a.expectation(psi)
    }

    fn var_a(&self, psi: &StateVector<T>) -> Result<T> {
        self.a.variance(psi)
    }

    fn a_shifted(&self, psi: &StateVector<T>, shift: T) -> Result<StateVector<T>> {
        self.a.apply_shifted(psi, shift)
    }

    fn h_apply(&self, psi: &StateVector<T>) -> Result<StateVector<T>> {
        self.h.apply(psi)
    }

    fn gaussian_factor(&self, psi: &StateVector<T>, kappa_dt: T, a: T) -> Result<StateVector<T>> {
        self.a
            .apply_function(psi, |l| creal((-(kappa_dt * (l - a) * (l - a))).exp()))
    }

    fn unitary(&self, psi: &StateVector<T>, dt: T) -> Result<StateVector<T>> {
        let w = dt / self.hbar;
        self.h.apply_function(psi, |l| cis(-l * w))
    }

    fn guard_range(&self, _psi: &StateVector<T>) -> Result<T> {
        Ok(self.a.spectral_range())
    }

    fn window_projection(
        &self,
        psi: &StateVector<T>,
        lo: T,
        hi: T,
    ) -> Result<(StateVector<T>, bool)> {
        let inside = |l: T| l >= lo && l <= hi;
        let any = self.a.eigenvalues().iter().any(|&l| inside(l));
        let out = self
            .a
            .apply_function(psi, |l| creal(if inside(l) { T::one() } else { T::zero() }))?;
        Ok((out, any))
    }
}

/// Particle on a periodic 1D grid with `H = p²/2m + V(q)` and a position-diagonal `A`.
#[derive(Debug, Clone)]
pub struct GridSystem<T: Real> {
    grid: Grid<T>,
    mass: T,
    hbar: T,
    kinetic: GridOperator<T>,
    potential: Option<GridOperator<T>>,
    observable: GridOperator<T>,
}

impl<T: Real> GridSystem<T> {
    /// Free particle monitored in position: `H = p²/2m`, `A = q`.
    pub fn free_particle(grid: Grid<T>, mass: T, hbar: T) -> Result<Self> {
        if !(mass > T::zero()) || !mass.is_finite() {
            return Err(Error::config("mass", "positive"));
        }
        if !(hbar > T::zero()) || !hbar.is_finite() {
            return Err(Error::config("hbar", "positive"));
        }
        Ok(Self {
            grid,
            mass,
            hbar,
            kinetic: GridOperator::kinetic(&grid, mass, hbar),
            potential: None,
            observable: GridOperator::position(&grid),
        })
    }

    /// Adds a potential `V(q)`; the unitary step becomes a symmetric Strang split.
    pub fn with_potential(mut self, v: impl Fn(T) -> T) -> Self {
        self.potential = Some(GridOperator::position_fn(&self.grid, v));
        self
    }

    pub fn grid(&self) -> &Grid<T> {
        &self.grid
    }

    pub fn mass(&self) -> T {
        self.mass
    }

    pub fn momentum_operator(&self) -> GridOperator<T> {
        GridOperator::momentum(&self.grid, self.hbar)
    }

    pub fn observable(&self) -> &GridOperator<T> {
        &self.observable
    }
}

impl<T: Real> MonitoredSystem<T> for GridSystem<T> {
    type State = GridWavefunction<T>;

    fn hbar(&self) -> T {
        self.hbar
    }

    fn check_state(&self, psi: &GridWavefunction<T>) -> Result<()> {
        if psi.grid() != &self.grid {
            return Err(Error::DimensionMismatch {
                expected: self.grid.len(),
                found: psi.dim(),
            });
        }
        Ok(())
    }

    fn mean_a(&self, psi: &GridWavefunction<T>) -> Result<T> {
        self.observable.expectation(psi)
    }

    fn var_a(&self, psi: &GridWavefunction<T>) -> Result<T> {
        self.observable.variance(psi)
    }

    fn a_shifted(&self, psi: &GridWavefunction<T>, shift: T) -> Result<GridWavefunction<T>> {
        self.observable.apply_function(psi, |x| creal(x - shift))
    }

    fn h_apply(&self, psi: &GridWavefunction<T>) -> Result<GridWavefunction<T>> {
        let mut out = self.kinetic.apply(psi)?;
        if let Some(v) = &self.potential {
            out.axpy(creal(T::one()), &v.apply(psi)?);
        }
        Ok(out)
    }

    fn gaussian_factor(
        &self,
        psi: &GridWavefunction<T>,
        kappa_dt: T,
        a: T,
    ) -> Result<GridWavefunction<T>> {
        self.observable
            .apply_function(psi, |x| creal((-(kappa_dt * (x - a) * (x - a))).exp()))
    }

    fn unitary(&self, psi: &GridWavefunction<T>, dt: T) -> Result<GridWavefunction<T>> {
        let w = dt / self.hbar;
        match &self.potential {
            None => self.kinetic.apply_function(psi, |e| cis(-e * w)),
            Some(v) => {
                let half = w / T::lit(2.0);
                let out = v.apply_function(psi, |e| cis(-e * half))?;
                let out = self.kinetic.apply_function(&out, |e| cis(-e * w))?;
                v.apply_function(&out, |e| cis(-e * half))
            }
        }
    }

    /// Four standard deviations of A in the current state; the box size is irrelevant
    /// because the packet stays localized.
    fn guard_range(&self, psi: &GridWavefunction<T>) -> Result<T> {
        Ok(T::lit(4.0) * self.var_a(psi)?.sqrt())
    }

    fn window_projection(
        &self,
        psi: &GridWavefunction<T>,
        lo: T,
        hi: T,
    ) -> Result<(GridWavefunction<T>, bool)> {
        let inside = |x: T| x >= lo && x <= hi;
        let any = self.observable.values().iter().any(|&x| inside(x));
        let out = self
            .observable
            .apply_function(psi, |x| creal(if inside(x) { T::one() } else { T::zero() }))?;
        Ok((out, any))
    }
}

/// Result of the step-size guard `κ·Δt·range(A)²`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepGuard {
    Ok,
    /// Above 0.1: results are usable but the time step is coarse.
    Warn(f64),
}

pub fn check_step_size<T: Real>(
    kappa: MeasurementStrength<T>,
    dt: T,
    range: T,
) -> Result<StepGuard> {
    if !(dt > T::zero()) || !dt.is_finite() {
        return Err(Error::config("dt", "positive"));
    }
    let g = (kappa.value() * dt * range * range).to_f64_lossy();
    if g > 1.0 {
        Err(Error::StepSize(format!("κ·Δt·range(A)² = {g} exceeds 1")))
    } else if g > 0.1 {
        Ok(StepGuard::Warn(g))
    } else {
        Ok(StepGuard::Ok)
    }
}

fn ensure_finite<T: Real, S: QuantumState<T>>(psi: &S) -> Result<()> {
    if psi.is_finite() {
        Ok(())
    } else {
        Err(Error::StepSize("non-finite state after step".into()))
    }
}

/// One Euler–Maruyama step of the nonlinear equation.
///
/// In [`NormMode::Renormalize`] the input must be normalized (within 1e-9) and
/// the output is renormalized; in [`NormMode::Raw`] neither holds and ⟨A⟩ is
/// taken on the normalized copy.
pub fn step_nonlinear<T: Real, Sys: MonitoredSystem<T>>(
    sys: &Sys,
    psi: &Sys::State,
    kappa: MeasurementStrength<T>,
    dt: T,
    dw: T,
    norm: NormMode,
) -> Result<Sys::State> {
    sys.check_state(psi)?;
    let n2 = psi.validate()?;
    if norm == NormMode::Renormalize && (n2 - T::one()).abs() > T::tol(1e-9) {
        return Err(Error::NotNormalized {
            norm2: n2.to_f64_lossy(),
        });
    }
    let mut out = psi.clone();
    let hpsi = sys.h_apply(psi)?;
    out.axpy(cplx(T::zero(), -dt / sys.hbar()), &hpsi);
    if !kappa.is_off() {
        let k = kappa.value();
        let mean = sys.mean_a(psi)?;
        let d1 = sys.a_shifted(psi, mean)?;
        let d2 = sys.a_shifted(&d1, mean)?;
        out.axpy(creal(-k * dt / T::lit(2.0)), &d2);
        out.axpy(creal(k.sqrt() * dw), &d1);
    }
    ensure_finite(&out)?;
    if norm == NormMode::Renormalize {
        out.normalize_mut()?;
    }
    Ok(out)
}

/// Record value for the slice that starts in state ψ: `⟨A⟩ + ΔW·coefficient/Δt`.
pub fn emit_record<T: Real, Sys: MonitoredSystem<T>>(
    sys: &Sys,
    psi: &Sys::State,
    kappa: MeasurementStrength<T>,
    dt: T,
    dw: T,
    coefficient: RecordCoefficient,
) -> Result<T> {
    if kappa.is_off() {
        return Err(Error::NoMeasurement);
    }
    let mean = sys.mean_a(psi)?;
    Ok(mean + dw * coefficient.noise_scale(kappa.value(), dt))
}

/// Record value from an already computed mean.
pub fn record_from_mean<T: Real>(
    mean: T,
    kappa: MeasurementStrength<T>,
    dt: T,
    dw: T,
    coefficient: RecordCoefficient,
) -> T {
    mean + dw * coefficient.noise_scale(kappa.value(), dt)
}

/// One split step of the linear equation: `exp(−iHΔt/ħ)·exp(−κΔt(A − a)²)ψ`.
///
/// The state is never renormalized. A squared norm below 1e-150 is reported as
/// [`Error::WeightUnderflow`]; trajectory runners avoid it by carrying the
/// weight as a logarithm.
pub fn step_linear<T: Real, Sys: MonitoredSystem<T>>(
    sys: &Sys,
    psi: &Sys::State,
    kappa: MeasurementStrength<T>,
    dt: T,
    a: T,
) -> Result<Sys::State> {
    sys.check_state(psi)?;
    if !a.is_finite() {
        return Err(Error::config("record", "finite"));
    }
    if !psi.is_finite() {
        return Err(Error::InvalidState("non-finite amplitude".into()));
    }
    let damped = if kappa.is_off() {
        psi.clone()
    } else {
        sys.gaussian_factor(psi, kappa.value() * dt, a)?
    };
    let out = sys.unitary(&damped, dt)?;
    ensure_finite(&out)?;
    let n2 = out.norm2();
    if n2 < T::lit(1e-150) {
        return Err(Error::WeightUnderflow {
            log_norm2: n2.to_f64_lossy().ln(),
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunConfig<T> {
    pub kappa: MeasurementStrength<T>,
    pub dt: T,
    pub n_steps: usize,
    pub save_stride: usize,
}

impl<T: Real> RunConfig<T> {
    pub fn new(kappa: MeasurementStrength<T>, dt: T, n_steps: usize) -> Result<Self> {
        if !(dt > T::zero()) || !dt.is_finite() {
            return Err(Error::config("dt", "positive"));
        }
        Ok(Self {
            kappa,
            dt,
            n_steps,
            save_stride: 1,
        })
    }

    pub fn with_save_stride(mut self, stride: usize) -> Result<Self> {
        if stride == 0 {
            return Err(Error::config("save_stride", "at least 1"));
        }
        self.save_stride = stride;
        Ok(self)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Mode<T> {
    Nonlinear {
        scheme: NonlinearScheme,
        norm: NormMode,
        coefficient: RecordCoefficient,
    },
    /// Linear propagation driven by the given record.
    LinearWithRecord(MeasurementRecord<T>),
}

impl<T> Mode<T> {
    pub fn nonlinear() -> Self {
        Mode::Nonlinear {
            scheme: NonlinearScheme::EulerMaruyama,
            norm: NormMode::Renormalize,
            coefficient: RecordCoefficient::InverseTwoSqrtKappa,
        }
    }

    pub fn raw() -> Self {
        Mode::Nonlinear {
            scheme: NonlinearScheme::EulerMaruyama,
            norm: NormMode::Raw,
            coefficient: RecordCoefficient::InverseTwoSqrtKappa,
        }
    }

    pub fn kraus_split() -> Self {
        Mode::Nonlinear {
            scheme: NonlinearScheme::KrausSplit,
            norm: NormMode::Renormalize,
            coefficient: RecordCoefficient::InverseTwoSqrtKappa,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SavedPoint<S, T> {
    pub step: usize,
    pub t: T,
    /// State at this step. Linear runs store `ψ/‖ψ‖`; the weight is in `log_weight`.
    pub state: S,
    /// Record value of the slice ending at this step (none at step 0).
    pub record: Option<T>,
    pub mean_a: T,
    pub var_a: T,
    pub norm2: T,
    /// `ln‖ψ_t‖²` for linear runs.
    pub log_weight: Option<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryResult<S, T> {
    pub points: Vec<SavedPoint<S, T>>,
    /// Emitted (nonlinear) or consumed (linear) record; absent when κ = 0 in nonlinear mode.
    pub record: Option<MeasurementRecord<T>>,
    pub final_state: S,
    pub log_weight: Option<T>,
    pub warnings: Vec<String>,
}

impl<S, T: Real> TrajectoryResult<S, T> {
    pub fn is_linear(&self) -> bool {
        self.log_weight.is_some()
    }
}

/// `P[a] = ‖ψ_t‖²` of a linear trajectory.
///
/// This is a density with respect to the record measure `Π_k c² da_k`,
/// `c = (2κΔt/π)^{1/4}` (see [`crate::instrument`]).
pub fn record_weight<S, T: Real>(traj: &TrajectoryResult<S, T>) -> Result<T> {
    match traj.log_weight {
        Some(lw) => Ok(lw.exp()),
        None => Err(Error::Mode(
            "record weight is defined for linear trajectories only".into(),
        )),
    }
}

/// Runs one trajectory, drawing increments from `stream`.
pub fn run_selective<T: Real, Sys: MonitoredSystem<T>>(
    sys: &Sys,
    psi0: &Sys::State,
    cfg: &RunConfig<T>,
    mode: &Mode<T>,
    stream: &mut NoiseStream,
) -> Result<TrajectoryResult<Sys::State, T>> {
    let dt = cfg.dt;
    run_with_noise(sys, psi0, cfg, mode, &mut || stream.next_increment(dt))
}

/// Runs one trajectory with explicitly supplied Wiener increments.
pub fn run_selective_with_increments<T: Real, Sys: MonitoredSystem<T>>(
    sys: &Sys,
    psi0: &Sys::State,
    cfg: &RunConfig<T>,
    mode: &Mode<T>,
    increments: &[T],
) -> Result<TrajectoryResult<Sys::State, T>> {
    if matches!(mode, Mode::Nonlinear { .. }) && increments.len() < cfg.n_steps {
        return Err(Error::DimensionMismatch {
            expected: cfg.n_steps,
            found: increments.len(),
        });
    }
    let mut it = increments.iter().copied();
    run_with_noise(sys, psi0, cfg, mode, &mut || {
        Ok(it.next().unwrap_or_else(T::zero))
    })
}

fn run_with_noise<T: Real, Sys: MonitoredSystem<T>>(
    sys: &Sys,
    psi0: &Sys::State,
    cfg: &RunConfig<T>,
    mode: &Mode<T>,
    noise: &mut dyn FnMut() -> Result<T>,
) -> Result<TrajectoryResult<Sys::State, T>> {
    sys.check_state(psi0)?;
    let mut warnings = Vec::new();
    if !cfg.kappa.is_off() {
        if let StepGuard::Warn(g) = check_step_size(cfg.kappa, cfg.dt, sys.guard_range(psi0)?)? {
            warnings.push(format!("coarse time step: κ·Δt·range(A)² = {g}"));
        }
    }
    let stride = cfg.save_stride.max(1);
    let dt = cfg.dt;
    let save = |step: usize,
                psi: &Sys::State,
                record: Option<T>,
                log_weight: Option<T>|
     -> Result<SavedPoint<Sys::State, T>> {
        let norm2 = match log_weight {
            Some(lw) => lw.exp(),
            None => psi.norm2(),
        };
        Ok(SavedPoint {
            step,
            t: T::lit(step as f64) * dt,
            state: psi.clone(),
            record,
            mean_a: sys.mean_a(psi)?,
            var_a: sys.var_a(psi)?,
            norm2,
            log_weight,
        })
    };

    match mode {
        Mode::Nonlinear {
            scheme,
            norm,
            coefficient,
        } => {
            let mut psi = psi0.normalized()?;
            let mut record = if cfg.kappa.is_off() {
                None
            } else {
                Some(MeasurementRecord::empty(dt)?)
            };
            let mut points = vec![save(0, &psi, None, None)?];
            for step in 1..=cfg.n_steps {
                let dw = noise()?;
                let a = match record {
                    Some(ref mut rec) => {
                        let a = emit_record(sys, &psi, cfg.kappa, dt, dw, *coefficient)?;
                        rec.push(a);
                        Some(a)
                    }
                    None => None,
                };
                psi = match (scheme, a) {
                    (NonlinearScheme::KrausSplit, Some(a)) => {
                        let mut next = step_linear(sys, &psi, cfg.kappa, dt, a)?;
                        next.normalize_mut()?;
                        next
                    }
                    (NonlinearScheme::KrausSplit, None) => {
                        let mut next = sys.unitary(&psi, dt)?;
                        next.normalize_mut()?;
                        next
                    }
                    (NonlinearScheme::EulerMaruyama, _) => {
                        step_nonlinear(sys, &psi, cfg.kappa, dt, dw, *norm)?
                    }
                };
                if step % stride == 0 {
                    points.push(save(step, &psi, a, None)?);
                }
            }
            Ok(TrajectoryResult {
                points,
                record,
                final_state: psi,
                log_weight: None,
                warnings,
            })
        }
        Mode::LinearWithRecord(record) => {
            if record.len() < cfg.n_steps {
                return Err(Error::DimensionMismatch {
                    expected: cfg.n_steps,
                    found: record.len(),
                });
            }
            if (record.dt() - dt).abs() > T::tol(1e-12) * dt {
                return Err(Error::config("record.dt", "equal to the run time step"));
            }
            // state kept normalized; the norm is carried in log form
            let n2 = psi0.validate()?;
            let mut log_weight = n2.ln();
            let mut psi = psi0.normalized()?;
            let mut points = vec![save(0, &psi, None, Some(log_weight))?];
            let values = &record.values()[..cfg.n_steps];
            for (k, &a) in values.iter().enumerate() {
                let step = k + 1;
                let mut next = step_linear(sys, &psi, cfg.kappa, dt, a)?;
                log_weight += next.normalize_mut()?.ln();
                psi = next;
                if step % stride == 0 {
                    points.push(save(step, &psi, Some(a), Some(log_weight))?);
                }
            }
            let consumed = MeasurementRecord::new(dt, values.to_vec())?;
            Ok(TrajectoryResult {
                points,
                record: Some(consumed),
                final_state: psi,
                log_weight: Some(log_weight),
                warnings,
            })
        }
    }
}

/// Runs the nonlinear equation with the given increments, replays the emitted
/// record through the linear equation from the same ψ₀ and returns
/// `1 − fidelity` of the two final states.
pub fn replay_infidelity_with_increments<T: Real, Sys: MonitoredSystem<T>>(
    sys: &Sys,
    psi0: &Sys::State,
    cfg: &RunConfig<T>,
    coefficient: RecordCoefficient,
    increments: &[T],
) -> Result<T> {
    if cfg.n_steps == 0 {
        return Ok(T::zero());
    }
    if cfg.kappa.is_off() {
        return Err(Error::NoMeasurement);
    }
    let mut quiet = *cfg;
    quiet.save_stride = cfg.n_steps;
    let mode = Mode::Nonlinear {
        scheme: NonlinearScheme::EulerMaruyama,
        norm: NormMode::Renormalize,
        coefficient,
    };
    let nonlinear = run_selective_with_increments(sys, psi0, &quiet, &mode, increments)?;
    let record = nonlinear.record.clone().ok_or(Error::NoMeasurement)?;
    let linear =
        run_selective_with_increments(sys, psi0, &quiet, &Mode::LinearWithRecord(record), &[])?;
    Ok(T::one() - crate::hilbert::fidelity(&nonlinear.final_state, &linear.final_state)?)
}

/// [`replay_infidelity_with_increments`] with increments drawn from `stream`.
pub fn replay_equivalence<T: Real, Sys: MonitoredSystem<T>>(
    sys: &Sys,
    psi0: &Sys::State,
    cfg: &RunConfig<T>,
    stream: &mut NoiseStream,
) -> Result<T> {
    let increments = stream.increments(cfg.n_steps, cfg.dt)?;
    replay_infidelity_with_increments(
        sys,
        psi0,
        cfg,
        RecordCoefficient::InverseTwoSqrtKappa,
        &increments,
    )
}

/// Trajectories `0..n_traj` under `master_seed`, run in parallel and returned
/// in index order.
pub fn run_ensemble<T: Real, Sys: MonitoredSystem<T>>(
    sys: &Sys,
    psi0: &Sys::State,
    cfg: &RunConfig<T>,
    mode: &Mode<T>,
    master_seed: u64,
    n_traj: usize,
) -> Result<Vec<TrajectoryResult<Sys::State, T>>> {
    (0..n_traj as u64)
        .into_par_iter()
        .map(|k| run_selective(sys, psi0, cfg, mode, &mut NoiseStream::new(master_seed, k)))
        .collect()
}

/// Mean of [`replay_equivalence`] over trajectories `0..n_traj`.
pub fn mean_replay_infidelity<T: Real, Sys: MonitoredSystem<T>>(
    sys: &Sys,
    psi0: &Sys::State,
    cfg: &RunConfig<T>,
    master_seed: u64,
    n_traj: usize,
) -> Result<T> {
    let vals: Vec<T> = (0..n_traj as u64)
        .into_par_iter()
        .map(|k| replay_equivalence(sys, psi0, cfg, &mut NoiseStream::new(master_seed, k)))
        .collect::<Result<_>>()?;
    Ok(vals.iter().fold(T::zero(), |a, &v| a + v) / T::lit(n_traj.max(1) as f64))
}

#[cfg(test)]
mod tests;
