//! Scalar abstraction shared by every numerical module.

use nalgebra as na;
use num_complex::Complex;
use num_traits as nt;

/// Real floating-point type the simulation is generic over (`f32` or `f64`).
///
/// Transcendental functions come from [`na::ComplexField`]/[`na::RealField`].
pub trait Real:
    na::RealField
    + Copy
    + std::fmt::Display
    + nt::FromPrimitive
    + nt::ToPrimitive
    + rustfft::FftNum
    + 'static
{
    /// Converts an `f64` constant into `Self`.
    #[inline]
    fn lit(x: f64) -> Self {
        <Self as nt::FromPrimitive>::from_f64(x).expect("f64 literal representable")
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        nt::ToPrimitive::to_f64(&self).unwrap_or(f64::NAN)
    }

    /// Maps a tolerance stated for double precision onto this type's precision.
    ///
    /// For `f64` the value is returned unchanged; narrower types scale it by the
    /// ratio of machine epsilons.
    #[inline]
    fn tol(f64_tol: f64) -> Self {
        let ratio = Self::default_epsilon().to_f64_lossy() / f64::EPSILON;
        Self::lit(f64_tol * ratio.max(1.0))
    }
}

impl Real for f32 {}
impl Real for f64 {}

pub type C<T> = Complex<T>;

#[inline]
pub(crate) fn cplx<T: Real>(re: T, im: T) -> C<T> {
    Complex::new(re, im)
}

#[inline]
pub(crate) fn creal<T: Real>(re: T) -> C<T> {
    Complex::new(re, T::zero())
}

/// `exp(i·phase)`.
#[inline]
pub(crate) fn cis<T: Real>(phase: T) -> C<T> {
    Complex::new(phase.cos(), phase.sin())
}

#[inline]
pub(crate) fn is_finite_c<T: Real>(z: &C<T>) -> bool {
    z.re.is_finite() && z.im.is_finite()
}

#[inline]
pub(crate) fn abs2<T: Real>(z: &C<T>) -> T {
    z.re * z.re + z.im * z.im
}
