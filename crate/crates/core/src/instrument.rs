//! Time-sliced path-integral picture of continuous measurement.
//!
//! Each time slice of length Δt contributes the Kraus operator
//!
//! ```text
//! M(a) = c · exp(−κΔt (A − a)²),      c = (2κΔt/π)^{1/4}
//! ```
//!
//! so that `∫ da M(a)†M(a) = 1`: record values carry the plain Lebesgue
//! measure `da` per slice and the probability of a record `α = (a_1..a_n)` is
//! `‖U^α ψ₀‖² Π da_k` with `U^α = Π_k e^{−iHΔt/ħ} M(a_k)` (time ordered).
//! The linear wave equation of [`crate::unraveling`] omits `c`; its weight
//! `‖ψ_t‖²` is therefore a density against `Π_k c² da_k`.
//!
//! A sharp variant replaces the Gaussian factor by a projector onto a window
//! `[ā_k − Δ, ā_k + Δ]` of the spectrum ([`corridor_probability`]).

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::hilbert::{HermitianOperator, QuantumState, StateVector};
use crate::scalar::{abs2, cis, creal, Real, C};
use crate::stochastic::NoiseStream;
use crate::unraveling::{MeasurementRecord, MeasurementStrength, MonitoredSystem};

/// Largest number of records [`enumerate_record_distribution`] will visit.
pub const ENUMERATION_LIMIT: u64 = 10_000_000;

#[derive(Debug, Clone)]
pub struct GaussianInstrument<T: Real> {
    a: HermitianOperator<T>,
    kappa: T,
    dt: T,
    c: T,
}

impl<T: Real> GaussianInstrument<T> {
    pub fn new(a: HermitianOperator<T>, kappa: MeasurementStrength<T>, dt: T) -> Result<Self> {
        if kappa.is_off() {
            return Err(Error::config("kappa", "positive"));
        }
        if !(dt > T::zero()) || !dt.is_finite() {
            return Err(Error::config("dt", "positive"));
        }
        let kappa = kappa.value();
        let c = (T::lit(2.0) * kappa * dt / T::pi()).sqrt().sqrt();
        Ok(Self { a, kappa, dt, c })
    }

    pub fn observable(&self) -> &HermitianOperator<T> {
        &self.a
    }

    pub fn kappa(&self) -> T {
        self.kappa
    }

    pub fn dt(&self) -> T {
        self.dt
    }

    /// `c = (2κΔt/π)^{1/4}`.
    pub fn normalization(&self) -> T {
        self.c
    }

    /// Standard deviation `1/(2√(κΔt))` of the single-slice record around an eigenvalue.
    pub fn record_sigma(&self) -> T {
        T::one() / (T::lit(2.0) * (self.kappa * self.dt).sqrt())
    }

    fn kraus_value(&self, lambda: T, a: T) -> T {
        self.c * (-(self.kappa * self.dt * (lambda - a) * (lambda - a))).exp()
    }

    /// `M(a)` in the original basis.
    pub fn kraus(&self, a: T) -> DMatrix<C<T>> {
        self.a.function_matrix(|l| creal(self.kraus_value(l, a)))
    }

    pub fn apply_kraus(&self, psi: &StateVector<T>, a: T) -> Result<StateVector<T>> {
        self.a
            .apply_function(psi, |l| creal(self.kraus_value(l, a)))
    }

    /// `‖∫ da M(a)†M(a) − 1‖_max` from the closed-form Gaussian integral.
    ///
    /// In the eigenbasis every diagonal entry is
    /// `c² ∫ exp(−2κΔt(λ − a)²) da = (s/√π)·(√π/s)` with `s = √(2κΔt)`,
    /// independent of λ.
    pub fn analytic_completeness_defect(&self) -> T {
        let s = (T::lit(2.0) * self.kappa * self.dt).sqrt();
        let sqrt_pi = T::pi().sqrt();
        // c² · ∫ = (s/√π)(√π/s), the same for every eigenvalue
        let entry = (s * sqrt_pi) / (sqrt_pi * s);
        (entry - T::one()).abs()
    }
}

/// Uniform lattice of record values `a_j = a_min + j·δa`, `j = 0..n`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RecordLattice<T> {
    a_min: T,
    delta: T,
    n: usize,
}

impl<T: Real> RecordLattice<T> {
    pub fn new(a_min: T, delta: T, n: usize) -> Result<Self> {
        if !(delta > T::zero()) || !delta.is_finite() {
            return Err(Error::config("lattice.delta", "positive"));
        }
        if n < 2 {
            return Err(Error::config("lattice_points", "at least 2"));
        }
        if !a_min.is_finite() {
            return Err(Error::config("lattice.a_min", "finite"));
        }
        Ok(Self { a_min, delta, n })
    }

    /// `points` values from `λ_min − span·σ` to `λ_max + span·σ`, σ the single-slice record width.
    pub fn covering(inst: &GaussianInstrument<T>, span_sigmas: T, points: usize) -> Result<Self> {
        if !(span_sigmas > T::zero()) {
            return Err(Error::config("lattice_span", "positive"));
        }
        if points < 2 {
            return Err(Error::config("lattice_points", "at least 2"));
        }
        let (lo, hi) = Self::spectrum_bounds(inst, span_sigmas);
        Self::new(lo, (hi - lo) / T::lit((points - 1) as f64), points)
    }

    /// Lattice with spacing `delta` covering `λ ± span·σ` (rounded outward).
    pub fn with_spacing(inst: &GaussianInstrument<T>, span_sigmas: T, delta: T) -> Result<Self> {
        if !(delta > T::zero()) {
            return Err(Error::config("lattice.delta", "positive"));
        }
        let (lo, hi) = Self::spectrum_bounds(inst, span_sigmas);
        let n = ((hi - lo) / delta).ceil().to_f64_lossy() as usize + 1;
        Self::new(lo, delta, n)
    }

    fn spectrum_bounds(inst: &GaussianInstrument<T>, span_sigmas: T) -> (T, T) {
        let ev = inst.observable().eigenvalues();
        let sigma = inst.record_sigma();
        (
            ev[0] - span_sigmas * sigma,
            ev[ev.len() - 1] + span_sigmas * sigma,
        )
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn spacing(&self) -> T {
        self.delta
    }

    pub fn value(&self, j: usize) -> T {
        self.a_min + T::lit(j as f64) * self.delta
    }

    pub fn values(&self) -> Vec<T> {
        (0..self.n).map(|j| self.value(j)).collect()
    }

    /// Measure weight per lattice point for Kraus operators that include `c`.
    pub fn weight(&self) -> T {
        self.delta
    }

    /// Measure weight `δa·c²` for the un-normalized factors of the linear wave equation.
    pub fn gaussian_measure_weight(&self, inst: &GaussianInstrument<T>) -> T {
        let c = inst.normalization();
        self.delta * c * c
    }

    /// Smallest distance, in units of σ, from an eigenvalue to the lattice ends.
    pub fn span_in_sigmas(&self, inst: &GaussianInstrument<T>) -> T {
        let ev = inst.observable().eigenvalues();
        let sigma = inst.record_sigma();
        let lo = (ev[0] - self.a_min) / sigma;
        let hi = (self.value(self.n - 1) - ev[ev.len() - 1]) / sigma;
        lo.min(hi)
    }
}

/// `‖Σ_j δa M(a_j)†M(a_j) − 1‖_max`.
pub fn completeness_defect<T: Real>(inst: &GaussianInstrument<T>, lattice: &RecordLattice<T>) -> T {
    let w = lattice.weight();
    let values = lattice.values();
    let povm = inst.observable().function_matrix(|l| {
        let s = values.iter().fold(T::zero(), |acc, &a| {
            let m = inst.kraus_value(l, a);
            acc + w * m * m
        });
        creal(s)
    });
    let d = povm.nrows();
    let defect = povm - DMatrix::<C<T>>::identity(d, d);
    defect
        .iter()
        .fold(T::zero(), |acc, z| acc.max(abs2(z).sqrt()))
}

/// `Σ_j δa M(a_j) ρ M(a_j)†`, the record-averaged effect of one slice.
pub fn average_channel<T: Real>(
    inst: &GaussianInstrument<T>,
    lattice: &RecordLattice<T>,
    rho: &DMatrix<C<T>>,
) -> DMatrix<C<T>> {
    let d = rho.nrows();
    let mut out = DMatrix::zeros(d, d);
    for a in lattice.values() {
        let m = inst.kraus(a);
        out += (&m * rho * m.adjoint()).scale(lattice.weight());
    }
    out
}

/// Closed form of the slice average in the A-eigenbasis:
/// `ρ_mn → ρ_mn · exp(−(κΔt/2)(a_m − a_n)²)`, returned in the original basis.
pub fn average_channel_exact<T: Real>(
    inst: &GaussianInstrument<T>,
    rho: &DMatrix<C<T>>,
) -> DMatrix<C<T>> {
    let v = inst.observable().eigenvectors();
    let ev = inst.observable().eigenvalues();
    let mut r = v.adjoint() * rho * v;
    let half = inst.kappa() * inst.dt() / T::lit(2.0);
    for m in 0..r.nrows() {
        for n in 0..r.ncols() {
            let gap = ev[m] - ev[n];
            r[(m, n)] = r[(m, n)].scale((-(half * gap * gap)).exp());
        }
    }
    v * r * v.adjoint()
}

/// Time-ordered product `Π_k e^{−iHΔt/ħ} M(a_k)` (later slices on the left).
///
/// `U^α ψ₀` equals the linear-equation replay of the same record multiplied by `cⁿ`.
pub fn propagator_for_record<T: Real>(
    inst: &GaussianInstrument<T>,
    h: &HermitianOperator<T>,
    hbar: T,
    record: &MeasurementRecord<T>,
) -> Result<DMatrix<C<T>>> {
    if h.dim() != inst.observable().dim() {
        return Err(Error::DimensionMismatch {
            expected: inst.observable().dim(),
            found: h.dim(),
        });
    }
    if (record.dt() - inst.dt()).abs() > T::tol(1e-12) * inst.dt() {
        return Err(Error::config(
            "record.dt",
            "equal to the instrument time step",
        ));
    }
    let unitary = slice_unitary(h, inst.dt(), hbar);
    let d = h.dim();
    let mut u = DMatrix::<C<T>>::identity(d, d);
    for &a in record.values() {
        u = &unitary * inst.kraus(a) * u;
    }
    Ok(u)
}

fn slice_unitary<T: Real>(h: &HermitianOperator<T>, dt: T, hbar: T) -> DMatrix<C<T>> {
    let w = dt / hbar;
    h.function_matrix(|l| cis(-l * w))
}

/// Probabilities of every lattice record of length `n_steps`.
#[derive(Debug, Clone)]
pub struct RecordDistribution<T: Real> {
    pub lattice: RecordLattice<T>,
    pub n_steps: usize,
    /// `P(α)` in row-major order, first slice most significant.
    pub probabilities: Vec<T>,
    /// `marginals[k][j]`: probability that slice `k` reads `a_j`.
    pub marginals: Vec<Vec<T>>,
    pub total: T,
}

impl<T: Real> RecordDistribution<T> {
    /// Record values of table row `index`.
    pub fn record(&self, index: usize) -> Vec<T> {
        let l = self.lattice.len();
        let mut digits = vec![0usize; self.n_steps];
        let mut rest = index;
        for k in (0..self.n_steps).rev() {
            digits[k] = rest % l;
            rest /= l;
        }
        digits.into_iter().map(|j| self.lattice.value(j)).collect()
    }

    /// Mean and variance of slice `k`, conditioned on the lattice (normalized by the marginal total).
    pub fn marginal_moments(&self, k: usize) -> (T, T) {
        let p = &self.marginals[k];
        let total = p.iter().fold(T::zero(), |a, &x| a + x);
        let mean = p
            .iter()
            .enumerate()
            .fold(T::zero(), |a, (j, &x)| a + x * self.lattice.value(j))
            / total;
        let var = p.iter().enumerate().fold(T::zero(), |a, (j, &x)| {
            let d = self.lattice.value(j) - mean;
            a + x * d * d
        }) / total;
        (mean, var)
    }

    /// CDF of slice `k`, treating each lattice value as a uniform cell of width δa.
    pub fn marginal_cdf(&self, k: usize, x: T) -> T {
        let p = &self.marginals[k];
        let total = p.iter().fold(T::zero(), |a, &v| a + v);
        let delta = self.lattice.spacing();
        let half = delta / T::lit(2.0);
        let lower_edge = self.lattice.value(0) - half;
        let pos = (x - lower_edge) / delta;
        if pos <= T::zero() {
            return T::zero();
        }
        let cell = pos.floor().to_f64_lossy() as usize;
        if cell >= p.len() {
            return T::one();
        }
        let below = p[..cell].iter().fold(T::zero(), |a, &v| a + v);
        let frac = pos - T::lit(cell as f64);
        (below + frac * p[cell]) / total
    }
}

/// Enumerates `P(α) = ‖U^α ψ₀‖² (δa)ⁿ` over every lattice record.
///
/// Work is split by the first-slice value and reduced in lattice order, so the
/// result does not depend on the thread count.
pub fn enumerate_record_distribution<T: Real>(
    psi0: &StateVector<T>,
    inst: &GaussianInstrument<T>,
    h: &HermitianOperator<T>,
    hbar: T,
    n_steps: usize,
    lattice: &RecordLattice<T>,
) -> Result<RecordDistribution<T>> {
    let d = inst.observable().dim();
    if psi0.dim() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            found: psi0.dim(),
        });
    }
    if h.dim() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            found: h.dim(),
        });
    }
    let l = lattice.len();
    let records = (l as f64).powi(n_steps as i32);
    if records > ENUMERATION_LIMIT as f64 {
        return Err(Error::EnumerationGuard {
            records,
            limit: ENUMERATION_LIMIT,
        });
    }
    let psi = psi0.normalized()?;
    let psi: Vec<C<T>> = psi.amplitudes().iter().copied().collect();
    if n_steps == 0 {
        return Ok(RecordDistribution {
            lattice: *lattice,
            n_steps,
            probabilities: vec![T::one()],
            marginals: Vec::new(),
            total: T::one(),
        });
    }

    // slice operators K_j = U·M(a_j), row-major
    let unitary = slice_unitary(h, inst.dt(), hbar);
    let slices: Vec<Vec<C<T>>> = lattice
        .values()
        .into_iter()
        .map(|a| {
            let k = &unitary * inst.kraus(a);
            (0..d * d).map(|idx| k[(idx / d, idx % d)]).collect()
        })
        .collect();
    let measure = lattice.weight().powi(n_steps as i32);
    let block = l.pow(n_steps as u32 - 1);

    let blocks: Vec<(Vec<T>, Vec<Vec<T>>)> = (0..l)
        .into_par_iter()
        .map(|j0| {
            let mut probs = Vec::with_capacity(block);
            let mut marg = vec![vec![T::zero(); l]; n_steps];
            let mut stack = vec![vec![creal(T::zero()); d]; n_steps];
            matvec(&slices[j0], &psi, &mut stack[0], d);
            let mut digits = vec![0usize; n_steps];
            digits[0] = j0;
            descend(
                &slices,
                &mut stack,
                &mut digits,
                1,
                d,
                measure,
                &mut probs,
                &mut marg,
            );
            (probs, marg)
        })
        .collect();

    let mut probabilities = Vec::with_capacity(block * l);
    let mut marginals = vec![vec![T::zero(); l]; n_steps];
    for (probs, marg) in blocks {
        probabilities.extend(probs);
        for (acc, m) in marginals.iter_mut().zip(marg) {
            for (a, v) in acc.iter_mut().zip(m) {
                *a += v;
            }
        }
    }
    let total = marginals[0].iter().fold(T::zero(), |a, &v| a + v);
    Ok(RecordDistribution {
        lattice: *lattice,
        n_steps,
        probabilities,
        marginals,
        total,
    })
}

fn matvec<T: Real>(m: &[C<T>], v: &[C<T>], out: &mut [C<T>], d: usize) {
    for i in 0..d {
        let mut s = creal(T::zero());
        for j in 0..d {
            s += m[i * d + j] * v[j];
        }
        out[i] = s;
    }
}

#[allow(clippy::too_many_arguments)]
fn descend<T: Real>(
    slices: &[Vec<C<T>>],
    stack: &mut [Vec<C<T>>],
    digits: &mut [usize],
    depth: usize,
    d: usize,
    measure: T,
    probs: &mut Vec<T>,
    marg: &mut [Vec<T>],
) {
    let n = stack.len();
    if depth == n {
        let p = stack[n - 1].iter().fold(T::zero(), |a, z| a + abs2(z)) * measure;
        probs.push(p);
        for (k, &j) in digits.iter().enumerate() {
            marg[k][j] += p;
        }
        return;
    }
    for (j, k) in slices.iter().enumerate() {
        let (head, tail) = stack.split_at_mut(depth);
        matvec(k, &head[depth - 1], &mut tail[0], d);
        digits[depth] = j;
        descend(slices, stack, digits, depth + 1, d, measure, probs, marg);
    }
}

/// Monte-Carlo estimate of the record distribution used past the enumeration limit.
#[derive(Debug, Clone, PartialEq)]
pub struct ImportanceEstimate<T> {
    /// Estimate of `Σ_α P(α)`; 1 up to sampling error.
    pub total: T,
    pub means: Vec<T>,
    pub variances: Vec<T>,
    pub samples: usize,
}

/// Importance sampling of records from i.i.d. Gaussian proposals
/// `N(⟨A⟩₀, σ² + range(A)²)` per slice, weighted by `‖U^α ψ₀‖² / Π q(a_k)`.
pub fn importance_sample_records<T: Real>(
    psi0: &StateVector<T>,
    inst: &GaussianInstrument<T>,
    h: &HermitianOperator<T>,
    hbar: T,
    n_steps: usize,
    n_samples: usize,
    stream: &mut NoiseStream,
) -> Result<ImportanceEstimate<T>> {
    use crate::hilbert::Observable;
    if n_samples == 0 {
        return Err(Error::config("samples", "at least 1"));
    }
    let psi = psi0.normalized()?;
    let a = inst.observable();
    let center = a.expectation(&psi)?;
    let sigma = inst.record_sigma();
    let range = a.spectral_range();
    let s = (sigma * sigma + range * range).sqrt();
    let norm_q = T::one() / (s * T::two_pi().sqrt());
    let unitary = slice_unitary(h, inst.dt(), hbar);

    let mut w_sum = T::zero();
    let mut m1 = vec![T::zero(); n_steps];
    let mut m2 = vec![T::zero(); n_steps];
    for _ in 0..n_samples {
        let mut phi = psi.amplitudes().clone();
        let mut weight = T::one();
        let mut rec = Vec::with_capacity(n_steps);
        for _ in 0..n_steps {
            let z = T::lit(stream.standard_normal());
            let val = center + s * z;
            weight /= norm_q * (-(z * z) / T::lit(2.0)).exp();
            phi = &unitary * inst.kraus(val) * phi;
            rec.push(val);
        }
        let w = weight * phi.iter().fold(T::zero(), |acc, z| acc + abs2(z));
        w_sum += w;
        for (k, &v) in rec.iter().enumerate() {
            m1[k] += w * v;
            m2[k] += w * v * v;
        }
    }
    let n = T::lit(n_samples as f64);
    let means: Vec<T> = m1.iter().map(|&x| x / w_sum).collect();
    let variances = m2
        .iter()
        .zip(&means)
        .map(|(&x, &m)| x / w_sum - m * m)
        .collect();
    Ok(ImportanceEstimate {
        total: w_sum / n,
        means,
        variances,
        samples: n_samples,
    })
}

/// Corridor around a nominal record path: `ā_k ± Δ` on slice `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct CorridorSpec<T> {
    centers: Vec<T>,
    half_width: T,
}

impl<T: Real> CorridorSpec<T> {
    pub fn new(centers: Vec<T>, half_width: T) -> Result<Self> {
        if !(half_width > T::zero()) {
            return Err(Error::config("half_width", "positive"));
        }
        if centers.iter().any(|c| !c.is_finite()) {
            return Err(Error::config("corridor.centers", "finite"));
        }
        Ok(Self {
            centers,
            half_width,
        })
    }

    /// Constant center over `n_steps` slices.
    pub fn constant(center: T, half_width: T, n_steps: usize) -> Result<Self> {
        Self::new(vec![center; n_steps], half_width)
    }

    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct CorridorOutcome<S, T> {
    pub probability: T,
    /// Set when some slice window contained no point of the spectrum.
    pub empty_corridor: bool,
    pub final_state: S,
}

/// Probability that every slice reading falls inside the corridor, in the sharp
/// (projective) reading: `ψ ← e^{−iHΔt/ħ} P_k ψ` per slice.
pub fn corridor_probability<T: Real, Sys: MonitoredSystem<T>>(
    sys: &Sys,
    psi0: &Sys::State,
    spec: &CorridorSpec<T>,
    dt: T,
) -> Result<CorridorOutcome<Sys::State, T>> {
    sys.check_state(psi0)?;
    if !(dt > T::zero()) {
        return Err(Error::config("dt", "positive"));
    }
    let mut psi = psi0.normalized()?;
    for &center in &spec.centers {
        let (projected, any) =
            sys.window_projection(&psi, center - spec.half_width, center + spec.half_width)?;
        if !any {
            return Ok(CorridorOutcome {
                probability: T::zero(),
                empty_corridor: true,
                final_state: projected,
            });
        }
        psi = sys.unitary(&projected, dt)?;
    }
    Ok(CorridorOutcome {
        probability: psi.norm2(),
        empty_corridor: false,
        final_state: psi,
    })
}
