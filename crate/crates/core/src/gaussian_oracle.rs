//! Gaussian moment equations for a free particle under continuous position
//! measurement (`H = p²/2m`, `A = q`).
//!
//! For any observable X the normalized nonlinear equation gives
//!
//! ```text
//! d⟨X⟩ = (i/ħ)⟨[H, X]⟩ dt − (κ/2)⟨[q, [q, X]]⟩ dt + √κ ⟨{q − ⟨q⟩, X}⟩ dW.
//! ```
//!
//! Gaussian states stay Gaussian (quadratic H, linear A). Taking X = q, p,
//! q², (qp + pq)/2, p² and using vanishing third cumulants, the noise drops
//! out of the covariances (Itô corrections `−(d⟨q⟩)²` etc. included):
//!
//! ```text
//! d⟨q⟩ = ⟨p⟩/m dt + 2√κ σ_qq dW          dσ_qq/dt = 2σ_qp/m − 4κσ_qq²
//! d⟨p⟩ =            2√κ σ_qp dW          dσ_qp/dt = σ_pp/m − 4κσ_qq σ_qp
//!                                         dσ_pp/dt = κħ² − 4κσ_qp²
//! ```
//!
//! The determinant `D = σ_qqσ_pp − σ_qp²` obeys `dD/dt = −4κσ_qq(D − ħ²/4)`,
//! so pure states (`D = ħ²/4`) stay pure. With κ = 0 the flow is free
//! spreading, `σ_qq(t) = σ_qq + 2tσ_qp/m + t²σ_pp/m²`.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::hilbert::{GaussianPacket, Grid, GridWavefunction, Observable};
use crate::scalar::Real;
use crate::stochastic::NoiseStream;
use crate::unraveling::{
    run_selective_with_increments, GridSystem, MeasurementStrength, Mode, RunConfig,
};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FreeParticleParams<T> {
    pub mass: T,
    pub kappa: MeasurementStrength<T>,
    pub hbar: T,
}

impl<T: Real> FreeParticleParams<T> {
    pub fn new(mass: T, kappa: MeasurementStrength<T>, hbar: T) -> Result<Self> {
        if !(mass > T::zero()) || !mass.is_finite() {
            return Err(Error::config("mass", "positive"));
        }
        if !(hbar > T::zero()) || !hbar.is_finite() {
            return Err(Error::config("hbar", "positive"));
        }
        Ok(Self { mass, kappa, hbar })
    }
}

/// Covariance triple `(σ_qq, σ_qp, σ_pp)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Covariance<T> {
    pub qq: T,
    pub qp: T,
    pub pp: T,
}

impl<T: Real> Covariance<T> {
    /// `σ_qq σ_pp − σ_qp²`.
    pub fn determinant(&self) -> T {
        self.qq * self.pp - self.qp * self.qp
    }

    fn axpy(self, h: T, d: Self) -> Self {
        Self {
            qq: self.qq + h * d.qq,
            qp: self.qp + h * d.qp,
            pp: self.pp + h * d.pp,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianState<T> {
    pub mean_q: T,
    pub mean_p: T,
    pub cov: Covariance<T>,
}

impl<T: Real> GaussianState<T> {
    pub fn new(mean_q: T, mean_p: T, cov: Covariance<T>, hbar: T) -> Result<Self> {
        if !(cov.qq > T::zero()) || !(cov.pp > T::zero()) {
            return Err(Error::InvalidState(
                "Gaussian variances must be positive".into(),
            ));
        }
        if cov.determinant() < hbar * hbar / T::lit(4.0) - T::tol(1e-9) {
            return Err(Error::InvalidState(
                "covariance violates the uncertainty relation".into(),
            ));
        }
        Ok(Self {
            mean_q,
            mean_p,
            cov,
        })
    }

    /// Pure state with the given position variance and correlation.
    pub fn pure(mean_q: T, mean_p: T, var_q: T, cov_qp: T, hbar: T) -> Result<Self> {
        if !(var_q > T::zero()) {
            return Err(Error::InvalidState(
                "Gaussian variances must be positive".into(),
            ));
        }
        let pp = (hbar * hbar / T::lit(4.0) + cov_qp * cov_qp) / var_q;
        Self::new(
            mean_q,
            mean_p,
            Covariance {
                qq: var_q,
                qp: cov_qp,
                pp,
            },
            hbar,
        )
    }

    pub fn packet(&self) -> GaussianPacket<T> {
        GaussianPacket {
            center: self.mean_q,
            momentum: self.mean_p,
            var_q: self.cov.qq,
            cov_qp: self.cov.qp,
        }
    }
}

/// Right-hand side of the deterministic covariance flow.
pub fn covariance_flow<T: Real>(params: &FreeParticleParams<T>, c: Covariance<T>) -> Covariance<T> {
    let k = params.kappa.value();
    let m = params.mass;
    let four_k = T::lit(4.0) * k;
    Covariance {
        qq: T::lit(2.0) * c.qp / m - four_k * c.qq * c.qq,
        qp: c.pp / m - four_k * c.qq * c.qp,
        pp: k * params.hbar * params.hbar - four_k * c.qp * c.qp,
    }
}

/// Fourth-order Runge–Kutta step of the covariance flow.
pub fn covariance_step<T: Real>(
    params: &FreeParticleParams<T>,
    c: Covariance<T>,
    dt: T,
) -> Covariance<T> {
    let half = dt / T::lit(2.0);
    let k1 = covariance_flow(params, c);
    let k2 = covariance_flow(params, c.axpy(half, k1));
    let k3 = covariance_flow(params, c.axpy(half, k2));
    let k4 = covariance_flow(params, c.axpy(dt, k3));
    let sixth = dt / T::lit(6.0);
    let two = T::lit(2.0);
    Covariance {
        qq: c.qq + sixth * (k1.qq + two * k2.qq + two * k3.qq + k4.qq),
        qp: c.qp + sixth * (k1.qp + two * k2.qp + two * k3.qp + k4.qp),
        pp: c.pp + sixth * (k1.pp + two * k2.pp + two * k3.pp + k4.pp),
    }
}

/// One step: Euler–Maruyama for the means (noise coupling through the
/// start-of-step covariances), RK4 for the covariances.
pub fn moment_step<T: Real>(
    g: &GaussianState<T>,
    params: &FreeParticleParams<T>,
    dt: T,
    dw: T,
) -> Result<GaussianState<T>> {
    if !(dt > T::zero()) {
        return Err(Error::config("dt", "positive"));
    }
    let root_k = params.kappa.value().sqrt();
    let two = T::lit(2.0);
    let mean_q = g.mean_q + g.mean_p / params.mass * dt + two * root_k * g.cov.qq * dw;
    let mean_p = g.mean_p + two * root_k * g.cov.qp * dw;
    let cov = covariance_step(params, g.cov, dt);
    let finite = [mean_q, mean_p, cov.qq, cov.qp, cov.pp]
        .iter()
        .all(|x| x.is_finite());
    if !finite || !(cov.qq > T::zero()) || !(cov.pp > T::zero()) {
        return Err(Error::StepSize(
            "moment update left the Gaussian family".into(),
        ));
    }
    Ok(GaussianState {
        mean_q,
        mean_p,
        cov,
    })
}

/// Fixed point of the covariance flow with its relative residual.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StationaryCovariance<T> {
    pub cov: Covariance<T>,
    /// Largest `|F_i|` relative to the largest term of equation `i`.
    pub residual: T,
    pub iterations: usize,
}

/// Finds the localized fixed point by Newton iteration on the flow.
///
/// The start point uses the natural variance scales `√(ħ/mκ)` and `ħ√(ħmκ)`
/// and is pre-relaxed along the noise-free flow, which is attracting for σ_qq > 0.
pub fn stationary_covariance<T: Real>(
    params: &FreeParticleParams<T>,
) -> Result<StationaryCovariance<T>> {
    if params.kappa.is_off() {
        return Err(Error::Oracle(
            "no stationary covariance without measurement".into(),
        ));
    }
    let (m, k, hbar) = (params.mass, params.kappa.value(), params.hbar);
    let length2 = (hbar / (m * k)).sqrt();
    let momentum2 = hbar * (hbar * m * k).sqrt();
    let mut c = Covariance {
        qq: length2,
        qp: hbar,
        pp: momentum2,
    };

    // relax along the flow for a few time scales
    let time_scale = T::one() / (k * length2);
    let h = time_scale / T::lit(50.0);
    for _ in 0..500 {
        c = covariance_step(params, c, h);
    }

    let four_k = T::lit(4.0) * k;
    let two = T::lit(2.0);
    let mut iterations = 0;
    for it in 0..100 {
        iterations = it + 1;
        let f = covariance_flow(params, c);
        // Jacobian rows: d/d(qq, qp, pp)
        let j = [
            [-two * four_k * c.qq, two / m, T::zero()],
            [-four_k * c.qp, -four_k * c.qq, T::one() / m],
            [T::zero(), -two * four_k * c.qp, T::zero()],
        ];
        let delta = solve3(j, [-f.qq, -f.qp, -f.pp])
            .ok_or_else(|| Error::Oracle("singular Jacobian in fixed-point search".into()))?;
        c = Covariance {
            qq: c.qq + delta[0],
            qp: c.qp + delta[1],
            pp: c.pp + delta[2],
        };
        let step = delta[0].abs() / c.qq.abs()
            + delta[1].abs() / c.qp.abs().max(hbar)
            + delta[2].abs() / c.pp.abs();
        if step < T::tol(1e-15) {
            break;
        }
    }
    let residual = relative_residual(params, c);
    if !(c.qq > T::zero()) || !(c.pp > T::zero()) || !(residual < T::tol(1e-12)) {
        return Err(Error::Oracle(format!(
            "fixed-point search did not converge (residual {residual})"
        )));
    }
    Ok(StationaryCovariance {
        cov: c,
        residual,
        iterations,
    })
}

fn relative_residual<T: Real>(params: &FreeParticleParams<T>, c: Covariance<T>) -> T {
    let f = covariance_flow(params, c);
    let (m, k, hbar) = (params.mass, params.kappa.value(), params.hbar);
    let four_k = T::lit(4.0) * k;
    let s_qq = (T::lit(2.0) * c.qp / m)
        .abs()
        .max((four_k * c.qq * c.qq).abs());
    let s_qp = (c.pp / m).abs().max((four_k * c.qq * c.qp).abs());
    let s_pp = (k * hbar * hbar).abs().max((four_k * c.qp * c.qp).abs());
    (f.qq.abs() / s_qq)
        .max(f.qp.abs() / s_qp)
        .max(f.pp.abs() / s_pp)
}

fn solve3<T: Real>(a: [[T; 3]; 3], b: [T; 3]) -> Option<[T; 3]> {
    let m = nalgebra::Matrix3::from_fn(|i, j| a[i][j]);
    let x = m.lu().solve(&nalgebra::Vector3::from(b))?;
    Some([x[0], x[1], x[2]])
}

/// `4κσ_qq*`, the relaxation rate of the position variance near the fixed point.
pub fn localization_rate<T: Real>(params: &FreeParticleParams<T>) -> Result<T> {
    let s = stationary_covariance(params)?;
    Ok(T::lit(4.0) * params.kappa.value() * s.cov.qq)
}

/// Moments of a grid wavefunction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridMoments<T> {
    pub mean_q: T,
    pub mean_p: T,
    pub var_q: T,
    pub var_p: T,
}

pub fn grid_moments<T: Real>(
    sys: &GridSystem<T>,
    psi: &GridWavefunction<T>,
) -> Result<GridMoments<T>> {
    let q = sys.observable();
    let p = sys.momentum_operator();
    Ok(GridMoments {
        mean_q: q.expectation(psi)?,
        mean_p: p.expectation(psi)?,
        var_q: q.variance(psi)?,
        var_p: p.variance(psi)?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridConfig<T> {
    pub points: usize,
    pub box_len: T,
}

/// One row of the grid-versus-oracle comparison.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ComparisonRow<T> {
    pub seed_index: u64,
    pub step: usize,
    pub t: T,
    pub grid: GridMoments<T>,
    pub oracle: GaussianState<T>,
    /// `|Δ⟨q⟩|/√σ_qq`, `|Δ⟨p⟩|/√σ_pp` (oracle widths) and relative variance deviations.
    pub dev_mean_q: T,
    pub dev_mean_p: T,
    pub dev_var_q: T,
    pub dev_var_p: T,
    /// Probability within 8σ_q of the periodic seam.
    pub edge_mass: T,
}

#[derive(Debug, Clone)]
pub struct ComparisonReport<T> {
    pub rows: Vec<ComparisonRow<T>>,
    pub stationary: Option<StationaryCovariance<T>>,
}

impl<T: Real> ComparisonReport<T> {
    pub fn max_edge_mass(&self) -> T {
        self.rows.iter().fold(T::zero(), |a, r| a.max(r.edge_mass))
    }
}

/// Runs the grid unraveling (Kraus-split scheme, `A = q`, `H = p²/2m`) and the
/// moment oracle with identical Wiener increments for every seed index.
#[allow(clippy::too_many_arguments)]
pub fn grid_vs_oracle<T: Real>(
    params: &FreeParticleParams<T>,
    grid_cfg: GridConfig<T>,
    initial: &GaussianState<T>,
    dt: T,
    n_steps: usize,
    master_seed: u64,
    seeds: &[u64],
    save_stride: usize,
) -> Result<ComparisonReport<T>> {
    let grid = Grid::centered(grid_cfg.points, grid_cfg.box_len)?;
    let stationary = if params.kappa.is_off() {
        None
    } else {
        Some(stationary_covariance(params)?)
    };
    let sigma = match stationary {
        Some(s) => s.cov.qq.sqrt().min(initial.cov.qq.sqrt()),
        None => initial.cov.qq.sqrt(),
    };
    if grid.spacing() > sigma / T::lit(8.0) {
        return Err(Error::GridResolution(format!(
            "Δq = {} exceeds σ_q/8 = {}",
            grid.spacing(),
            sigma / T::lit(8.0)
        )));
    }
    let width = match stationary {
        Some(s) => s.cov.qq.sqrt().max(initial.cov.qq.sqrt()),
        None => initial.cov.qq.sqrt(),
    };
    if grid.box_len() < T::lit(16.0) * width {
        return Err(Error::GridResolution(format!(
            "box {} is shorter than 16σ_q = {}",
            grid.box_len(),
            T::lit(16.0) * width
        )));
    }

    let sys = GridSystem::free_particle(grid, params.mass, params.hbar)?;
    let psi0 = GridWavefunction::gaussian(grid, initial.packet(), params.hbar)?;
    let cfg = RunConfig::new(params.kappa, dt, n_steps)?.with_save_stride(save_stride)?;
    let mode = Mode::kraus_split();

    let per_seed: Vec<Vec<ComparisonRow<T>>> = seeds
        .par_iter()
        .map(|&seed_index| -> Result<Vec<ComparisonRow<T>>> {
            let mut stream = NoiseStream::new(master_seed, seed_index);
            let increments = stream.increments(n_steps, dt)?;
            let traj = run_selective_with_increments(&sys, &psi0, &cfg, &mode, &increments)?;

            let mut oracle = *initial;
            let mut oracle_at = vec![oracle];
            for &dw in &increments {
                oracle = moment_step(&oracle, params, dt, dw)?;
                oracle_at.push(oracle);
            }
            traj.points
                .iter()
                .map(|pt| {
                    let g = grid_moments(&sys, &pt.state)?;
                    let o = oracle_at[pt.step];
                    let edge = pt.state.edge_mass(T::lit(8.0) * o.cov.qq.sqrt());
                    Ok(ComparisonRow {
                        seed_index,
                        step: pt.step,
                        t: pt.t,
                        grid: g,
                        oracle: o,
                        dev_mean_q: (g.mean_q - o.mean_q).abs() / o.cov.qq.sqrt(),
                        dev_mean_p: (g.mean_p - o.mean_p).abs() / o.cov.pp.sqrt(),
                        dev_var_q: (g.var_q - o.cov.qq).abs() / o.cov.qq,
                        dev_var_p: (g.var_p - o.cov.pp).abs() / o.cov.pp,
                        edge_mass: edge,
                    })
                })
                .collect()
        })
        .collect::<Result<_>>()?;

    Ok(ComparisonReport {
        rows: per_seed.into_iter().flatten().collect(),
        stationary,
    })
}
