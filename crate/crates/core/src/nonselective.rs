//! Record-averaged dynamics.
//!
//! Averaging one slice of the Gaussian instrument over all readings,
//! `∫ da M(a) ρ M(a)†`, multiplies the A-eigenbasis entries by
//! `exp(−(κΔt/2)(a_m − a_n)²)`. To first order in Δt that is the generator
//! `−(κ/2)[A,[A,ρ]]`, so the non-selective state obeys
//!
//! ```text
//! dρ/dt = −(i/ħ)[H, ρ] − (κ/2)[A, [A, ρ]]
//! ```
//!
//! integrated here with classical fourth-order Runge–Kutta.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::hilbert::{commutator, DensityMatrix, HermitianOperator, QuantumState, StateVector};
use crate::scalar::{abs2, cplx, Real, C};
use crate::unraveling::{MeasurementStrength, TrajectoryResult};

#[derive(Debug, Clone)]
pub struct MasterEqConfig<T: Real> {
    h: HermitianOperator<T>,
    a: HermitianOperator<T>,
    kappa: MeasurementStrength<T>,
    hbar: T,
    dt: T,
}

impl<T: Real> MasterEqConfig<T> {
    /// Requires `‖generator‖·Δt < 0.1` with the bound
    /// `‖generator‖ ≤ range(H)/ħ + (κ/2)·range(A)²`.
    pub fn new(
        h: HermitianOperator<T>,
        a: HermitianOperator<T>,
        kappa: MeasurementStrength<T>,
        hbar: T,
        dt: T,
    ) -> Result<Self> {
        if h.dim() != a.dim() {
            return Err(Error::DimensionMismatch {
                expected: h.dim(),
                found: a.dim(),
            });
        }
        if !(hbar > T::zero()) {
            return Err(Error::config("hbar", "positive"));
        }
        if !(dt > T::zero()) || !dt.is_finite() {
            return Err(Error::config("me_dt", "positive"));
        }
        let cfg = Self {
            h,
            a,
            kappa,
            hbar,
            dt,
        };
        if cfg.generator_bound() * dt >= T::lit(0.1) {
            return Err(Error::config(
                "me_dt",
                "small enough that ‖generator‖·Δt < 0.1",
            ));
        }
        Ok(cfg)
    }

    /// Picks the largest step with `‖generator‖·Δt ≤ 0.01`, capped at `max_dt`.
    pub fn with_auto_step(
        h: HermitianOperator<T>,
        a: HermitianOperator<T>,
        kappa: MeasurementStrength<T>,
        hbar: T,
        max_dt: T,
    ) -> Result<Self> {
        let probe = Self {
            h,
            a,
            kappa,
            hbar,
            dt: max_dt,
        };
        let bound = probe.generator_bound();
        let dt = if bound > T::zero() {
            max_dt.min(T::lit(0.01) / bound)
        } else {
            max_dt
        };
        Self::new(probe.h, probe.a, kappa, hbar, dt)
    }

    pub fn generator_bound(&self) -> T {
        let ra = self.a.spectral_range();
        self.h.spectral_range() / self.hbar + self.kappa.value() / T::lit(2.0) * ra * ra
    }

    pub fn dt(&self) -> T {
        self.dt
    }

    pub fn dim(&self) -> usize {
        self.h.dim()
    }
}

/// `−(i/ħ)[H, ρ] − (κ/2)[A, [A, ρ]]`.
pub fn me_derivative<T: Real>(
    rho: &DMatrix<C<T>>,
    cfg: &MasterEqConfig<T>,
) -> Result<DMatrix<C<T>>> {
    if rho.nrows() != cfg.dim() || rho.ncols() != cfg.dim() {
        return Err(Error::DimensionMismatch {
            expected: cfg.dim(),
            found: rho.nrows(),
        });
    }
    let h = cfg.h.matrix();
    let a = cfg.a.matrix();
    let unitary = commutator(h, rho) * cplx(T::zero(), -T::one() / cfg.hbar);
    let mut out = unitary;
    if !cfg.kappa.is_off() {
        let dc = commutator(a, &commutator(a, rho));
        out -= dc.scale(cfg.kappa.value() / T::lit(2.0));
    }
    Ok(out)
}

/// Density matrices on the integration grid `t_k = kΔt`.
#[derive(Debug, Clone)]
pub struct MeSolution<T: Real> {
    pub times: Vec<T>,
    pub states: Vec<DensityMatrix<T>>,
}

impl<T: Real> MeSolution<T> {
    /// Sample closest to `t`.
    pub fn at(&self, t: T) -> &DensityMatrix<T> {
        let idx = self
            .times
            .iter()
            .enumerate()
            .min_by(|(_, a), (_, b)| (**a - t).abs().partial_cmp(&(**b - t).abs()).unwrap())
            .map(|(i, _)| i)
            .unwrap_or(0);
        &self.states[idx]
    }
}

/// Integrates to `t_final`. The step is shrunk so that an integer number of
/// steps lands on `t_final` exactly; trace and positivity are checked every step.
pub fn run_me<T: Real>(
    rho0: &DensityMatrix<T>,
    cfg: &MasterEqConfig<T>,
    t_final: T,
) -> Result<MeSolution<T>> {
    if rho0.dim() != cfg.dim() {
        return Err(Error::DimensionMismatch {
            expected: cfg.dim(),
            found: rho0.dim(),
        });
    }
    if !(t_final >= T::zero()) {
        return Err(Error::config("t_final", "non-negative"));
    }
    let n = (t_final / cfg.dt).ceil().to_f64_lossy() as usize;
    let dt = if n > 0 {
        t_final / T::lit(n as f64)
    } else {
        cfg.dt
    };
    let half = dt / T::lit(2.0);
    let sixth = dt / T::lit(6.0);

    let mut times = vec![T::zero()];
    let mut states = vec![rho0.clone()];
    let mut rho = rho0.matrix().clone();
    for k in 1..=n {
        let k1 = me_derivative(&rho, cfg)?;
        let k2 = me_derivative(&(&rho + k1.scale(half)), cfg)?;
        let k3 = me_derivative(&(&rho + k2.scale(half)), cfg)?;
        let k4 = me_derivative(&(&rho + k3.scale(dt)), cfg)?;
        rho += (k1 + k2.scale(T::lit(2.0)) + k3.scale(T::lit(2.0)) + k4).scale(sixth);
        let state = DensityMatrix::from_matrix_unchecked(rho.clone())
            .map_err(|e| Error::StepSize(format!("master equation diverged: {e}")))?;
        let tr = state.trace();
        if (tr - T::one()).abs() > T::tol(1e-9) {
            return Err(Error::StepSize(format!(
                "trace drifted to {tr} at step {k}"
            )));
        }
        let min = state.min_eigenvalue();
        if min < -T::tol(1e-8) {
            return Err(Error::StepSize(format!(
                "negative eigenvalue {min} at step {k}"
            )));
        }
        times.push(T::lit(k as f64) * dt);
        states.push(state);
    }
    Ok(MeSolution { times, states })
}

/// Mean of `|ψ⟩⟨ψ|` over trajectories, with per-entry standard errors.
#[derive(Debug, Clone)]
pub struct EnsembleAverage<T: Real> {
    pub times: Vec<T>,
    pub mean: Vec<DensityMatrix<T>>,
    /// `sqrt((Var Re ρ_mn + Var Im ρ_mn)/N)`.
    pub std_error: Vec<DMatrix<T>>,
    pub n_traj: usize,
}

/// Averages trajectories saved on a common time grid.
pub fn ensemble_average<T: Real>(
    trajectories: &[TrajectoryResult<StateVector<T>, T>],
) -> Result<EnsembleAverage<T>> {
    let first = trajectories
        .first()
        .ok_or_else(|| Error::config("trajectories", "at least 2"))?;
    let times: Vec<T> = first.points.iter().map(|p| p.t).collect();
    let series: Vec<Vec<StateVector<T>>> = trajectories
        .iter()
        .map(|tr| tr.points.iter().map(|p| p.state.clone()).collect())
        .collect();
    for tr in trajectories {
        if tr.points.len() != times.len() || tr.points.iter().zip(&times).any(|(p, &t)| p.t != t) {
            return Err(Error::config("trajectories", "saved on a common time grid"));
        }
    }
    ensemble_average_series(&times, &series)
}

/// `series[trajectory][time]`; every trajectory must have one state per entry of `times`.
pub fn ensemble_average_series<T: Real>(
    times: &[T],
    series: &[Vec<StateVector<T>>],
) -> Result<EnsembleAverage<T>> {
    let n = series.len();
    if n < 2 {
        return Err(Error::config("trajectories", "at least 2"));
    }
    if let Some(bad) = series.iter().find(|s| s.len() != times.len()) {
        return Err(Error::DimensionMismatch {
            expected: times.len(),
            found: bad.len(),
        });
    }
    let d = series[0].first().map(|s| s.dim()).unwrap_or(0);
    let inv_n = T::one() / T::lit(n as f64);
    let mut mean = Vec::with_capacity(times.len());
    let mut std_error = Vec::with_capacity(times.len());
    for ti in 0..times.len() {
        let mut sum = DMatrix::<C<T>>::zeros(d, d);
        let mut sum_sq = DMatrix::<T>::zeros(d, d);
        for traj in series {
            let rho = DensityMatrix::from_pure(&traj[ti])?;
            if rho.dim() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    found: rho.dim(),
                });
            }
            for (s2, z) in sum_sq.iter_mut().zip(rho.matrix().iter()) {
                *s2 += abs2(z);
            }
            sum += rho.matrix();
        }
        let m = sum.scale(inv_n);
        let se = DMatrix::from_fn(d, d, |i, j| {
            let var = (sum_sq[(i, j)] * inv_n - abs2(&m[(i, j)])).max(T::zero());
            (var * T::lit(n as f64) / T::lit((n - 1) as f64) * inv_n).sqrt()
        });
        mean.push(DensityMatrix::from_matrix_unchecked(m)?);
        std_error.push(se);
    }
    Ok(EnsembleAverage {
        times: times.to_vec(),
        mean,
        std_error,
        n_traj: n,
    })
}
