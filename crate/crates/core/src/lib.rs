//! Selective continuous quantum measurement.
//!
//! The crate simulates a quantum system whose observable `A` is monitored
//! continuously with strength `κ`, in two equivalent formulations:
//!
//! * the linear picture, where an output record `a(t)` drives an unnormalized
//!   state through `∂ψ/∂t = (−iH/ħ − κ(A − a)²)ψ` and the record probability is
//!   `‖ψ_t‖²` ([`unraveling::step_linear`], [`instrument`]);
//! * the nonlinear Ito picture, where a normalized state and its record are
//!   generated jointly from one Wiener process ([`unraveling::step_nonlinear`],
//!   [`unraveling::emit_record`]).
//!
//! Record averages are checked against the dephasing master equation
//! ([`nonselective`]) and the free-particle position case against Gaussian
//! moment equations ([`gaussian_oracle`]).
//!
//! All numerical code is generic over the [`Real`] scalar; the aliases below
//! fix it to `f64` (the precision every tolerance in the test-suite assumes)
//! or `f32`.

// `!(x > 0)` is used on purpose so that NaN is rejected
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod gaussian_oracle;
pub mod hilbert;
pub mod instrument;
pub mod nonselective;
pub mod scalar;
pub mod stochastic;
pub mod unraveling;

pub use error::{Error, Result};
pub use scalar::Real;

pub type StateVector = hilbert::StateVector<f64>;
pub type GridWavefunction = hilbert::GridWavefunction<f64>;
pub type HermitianOperator = hilbert::HermitianOperator<f64>;
pub type GridOperator = hilbert::GridOperator<f64>;
pub type DensityMatrix = hilbert::DensityMatrix<f64>;
pub type Grid = hilbert::Grid<f64>;
pub type MeasurementRecord = unraveling::MeasurementRecord<f64>;
pub type MeasurementStrength = unraveling::MeasurementStrength<f64>;
pub type MatrixSystem = unraveling::MatrixSystem<f64>;
pub type GridSystem = unraveling::GridSystem<f64>;
pub type GaussianInstrument = instrument::GaussianInstrument<f64>;
pub type RecordLattice = instrument::RecordLattice<f64>;
pub type GaussianState = gaussian_oracle::GaussianState<f64>;
pub type FreeParticleParams = gaussian_oracle::FreeParticleParams<f64>;

pub type StateVectorF32 = hilbert::StateVector<f32>;
pub type HermitianOperatorF32 = hilbert::HermitianOperator<f32>;
pub type GridWavefunctionF32 = hilbert::GridWavefunction<f32>;
pub type MatrixSystemF32 = unraveling::MatrixSystem<f32>;
