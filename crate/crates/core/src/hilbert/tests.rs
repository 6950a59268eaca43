use approx::assert_abs_diff_eq;
use nalgebra::DMatrix;
use proptest::prelude::*;

use super::*;
use crate::scalar::{cis, cplx, creal, C};

fn sv(re_im: &[(f64, f64)]) -> StateVector<f64> {
    StateVector::new(re_im.iter().map(|&(r, i)| cplx(r, i)).collect()).unwrap()
}

#[test]
fn norm2_examples() {
    assert_eq!(norm2(&sv(&[(1.0, 0.0), (0.0, 0.0)])).unwrap(), 1.0);
    assert_abs_diff_eq!(
        norm2(&sv(&[(0.6, 0.0), (0.0, 0.8)])).unwrap(),
        1.0,
        epsilon = 1e-15
    );
    assert_eq!(norm2(&sv(&[(1.0, 0.0), (1.0, 0.0)])).unwrap(), 2.0);
}

#[test]
fn non_finite_amplitudes_are_rejected() {
    let err = StateVector::new(vec![cplx(f64::NAN, 0.0), creal(1.0)]).unwrap_err();
    assert!(matches!(err, Error::InvalidState(_)));
    assert!(StateVector::new(vec![creal(1.0f64)]).is_err());
}

#[test]
fn expectation_examples() {
    let z = HermitianOperator::<f64>::sigma_z();
    let x = HermitianOperator::<f64>::sigma_x();
    let h = 1.0 / 2f64.sqrt();
    assert_eq!(
        expectation(&z, &StateVector::basis(2, 0).unwrap()).unwrap(),
        1.0
    );
    assert_abs_diff_eq!(
        expectation(&z, &sv(&[(h, 0.0), (h, 0.0)])).unwrap(),
        0.0,
        epsilon = 1e-15
    );
    assert_abs_diff_eq!(
        expectation(&x, &sv(&[(h, 0.0), (h, 0.0)])).unwrap(),
        1.0,
        epsilon = 1e-15
    );
}

#[test]
fn zero_state_is_degenerate() {
    let z = HermitianOperator::<f64>::sigma_z();
    let zero = sv(&[(0.0, 0.0), (0.0, 0.0)]);
    assert_eq!(expectation(&z, &zero).unwrap_err(), Error::DegenerateState);
    assert_eq!(variance(&z, &zero).unwrap_err(), Error::DegenerateState);
    assert_eq!(fidelity(&zero, &zero).unwrap_err(), Error::DegenerateState);
}

#[test]
fn variance_examples() {
    let z = HermitianOperator::<f64>::sigma_z();
    let shifted = HermitianOperator::from_real_diagonal(&[2.0, 0.0]).unwrap();
    let h = 1.0 / 2f64.sqrt();
    let plus = sv(&[(h, 0.0), (h, 0.0)]);
    assert_eq!(
        variance(&z, &StateVector::basis(2, 0).unwrap()).unwrap(),
        0.0
    );
    assert_abs_diff_eq!(variance(&z, &plus).unwrap(), 1.0, epsilon = 1e-14);
    assert_abs_diff_eq!(variance(&shifted, &plus).unwrap(), 1.0, epsilon = 1e-14);
}

#[test]
fn apply_examples() {
    let psi = sv(&[(0.3, 0.1), (-0.2, 0.7)]);
    assert_eq!(apply(&HermitianOperator::identity(2), &psi).unwrap(), psi);
    let d = HermitianOperator::from_real_diagonal(&[1.0, 2.0]).unwrap();
    let out = apply(&d, &sv(&[(1.0, 0.0), (1.0, 0.0)])).unwrap();
    assert_eq!(out, sv(&[(1.0, 0.0), (2.0, 0.0)]));
    let err = apply(&HermitianOperator::<f64>::identity(3), &psi).unwrap_err();
    assert!(matches!(err, Error::DimensionMismatch { .. }));
}

#[test]
fn non_hermitian_operator_is_rejected_not_symmetrized() {
    let m = DMatrix::from_row_slice(2, 2, &[creal(1.0), creal(0.5), creal(0.2), creal(-1.0)]);
    match HermitianOperator::new(m).unwrap_err() {
        Error::NotHermitian {
            row,
            col,
            asymmetry,
        } => {
            assert_eq!((row, col), (0, 1));
            assert_abs_diff_eq!(asymmetry, 0.3, epsilon = 1e-15);
        }
        e => panic!("unexpected {e:?}"),
    }
}

#[test]
fn eigen_decomposition_reconstructs_operator() {
    let y = HermitianOperator::<f64>::sigma_y();
    let m = y.function_matrix(creal);
    assert!((m - y.matrix()).iter().all(|z| z.norm() < 1e-14));
    assert_eq!(y.eigenvalues().as_slice().len(), 2);
    assert_abs_diff_eq!(y.spectral_range(), 2.0, epsilon = 1e-14);
}

#[test]
fn double_commutator_examples() {
    let z = HermitianOperator::<f64>::sigma_z();
    let diag = DensityMatrix::new(DMatrix::from_row_slice(
        2,
        2,
        &[creal(0.3), creal(0.0), creal(0.0), creal(0.7)],
    ))
    .unwrap();
    assert!(double_commutator(&z, &diag)
        .unwrap()
        .iter()
        .all(|v| v.norm() == 0.0));

    // ρ = (I + σx)/2: off-diagonals scale by (a_m − a_n)² = 4
    let half = creal(0.5);
    let rho = DensityMatrix::new(DMatrix::from_row_slice(2, 2, &[half, half, half, half])).unwrap();
    let dc = double_commutator(&z, &rho).unwrap();
    assert_abs_diff_eq!(dc[(0, 1)].re, 2.0, epsilon = 1e-15);
    assert_abs_diff_eq!(dc[(1, 0)].re, 2.0, epsilon = 1e-15);
    assert_eq!(dc[(0, 0)], creal(0.0));

    let id = HermitianOperator::<f64>::identity(2);
    assert!(double_commutator(&id, &rho)
        .unwrap()
        .iter()
        .all(|v| v.norm() == 0.0));
    assert!(double_commutator(&HermitianOperator::identity(3), &rho).is_err());
}

#[test]
fn fidelity_examples() {
    let psi = sv(&[(0.3, 0.4), (0.1, -0.5)]);
    assert_abs_diff_eq!(fidelity(&psi, &psi).unwrap(), 1.0, epsilon = 1e-15);
    let e0 = StateVector::<f64>::basis(2, 0).unwrap();
    let e1 = StateVector::<f64>::basis(2, 1).unwrap();
    assert_eq!(fidelity(&e0, &e1).unwrap(), 0.0);
    let mut phased = psi.clone();
    phased.scale_mut(cis(0.77));
    assert_abs_diff_eq!(fidelity(&psi, &phased).unwrap(), 1.0, epsilon = 1e-15);
}

#[test]
fn density_matrix_validation() {
    let bad_trace =
        DMatrix::from_row_slice(2, 2, &[creal(0.6), creal(0.0), creal(0.0), creal(0.6)]);
    assert!(matches!(
        DensityMatrix::<f64>::new(bad_trace),
        Err(Error::InvalidDensityMatrix(_))
    ));
    let negative =
        DMatrix::from_row_slice(2, 2, &[creal(1.1), creal(0.0), creal(0.0), creal(-0.1)]);
    assert!(DensityMatrix::<f64>::new(negative).is_err());
    let mixed = DensityMatrix::<f64>::maximally_mixed(2);
    assert_abs_diff_eq!(mixed.purity(), 0.5, epsilon = 1e-15);
    let pure = DensityMatrix::from_pure(&sv(&[(1.0, 0.0), (1.0, 1.0)])).unwrap();
    assert_abs_diff_eq!(pure.purity(), 1.0, epsilon = 1e-14);
    assert_abs_diff_eq!(pure.trace_distance(&pure).unwrap(), 0.0, epsilon = 1e-14);
    let e0 = DensityMatrix::<f64>::from_pure(&StateVector::basis(2, 0).unwrap()).unwrap();
    let e1 = DensityMatrix::<f64>::from_pure(&StateVector::basis(2, 1).unwrap()).unwrap();
    assert_abs_diff_eq!(e0.trace_distance(&e1).unwrap(), 1.0, epsilon = 1e-14);
}

#[test]
fn works_in_single_precision() {
    let z = HermitianOperator::<f32>::sigma_z();
    let psi = StateVector::<f32>::from_real(&[0.6, 0.8]).unwrap();
    assert!((expectation(&z, &psi).unwrap() - (0.36 - 0.64)).abs() < 1e-6);
}

fn grid_gaussian(q0: f64, p0: f64, var_q: f64, cov_qp: f64) -> (Grid<f64>, GridWavefunction<f64>) {
    // Δq = 40/2048 ≈ 0.0195 ≤ σ/8 for σ ≥ 0.16; packet ≥ 8σ from the seam
    let grid = Grid::centered(2048, 40.0).unwrap();
    let psi = GridWavefunction::gaussian(
        grid,
        GaussianPacket {
            center: q0,
            momentum: p0,
            var_q,
            cov_qp,
        },
        1.0,
    )
    .unwrap();
    (grid, psi)
}

#[test]
fn grid_validates_shape() {
    assert!(Grid::<f64>::new(1000, -1.0, 1.0).is_err());
    assert!(Grid::<f64>::new(1024, 1.0, 1.0).is_err());
    let g = Grid::<f64>::new(8, 0.0, 8.0).unwrap();
    assert_eq!(g.spacing(), 1.0);
    assert_eq!(g.positions(), vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0]);
    let hbar = 1.0;
    let two_pi_over_l = std::f64::consts::TAU / 8.0;
    assert_abs_diff_eq!(g.momentum(1, hbar), two_pi_over_l, epsilon = 1e-15);
    assert_abs_diff_eq!(g.momentum(7, hbar), -two_pi_over_l, epsilon = 1e-15);
}

#[test]
fn grid_norm_includes_spacing() {
    let grid = Grid::<f64>::new(4, 0.0, 2.0).unwrap();
    let psi = GridWavefunction::new(grid, vec![creal(1.0); 4]).unwrap();
    assert_eq!(psi.norm2(), 2.0);
}

#[test]
fn grid_position_expectation_of_gaussian() {
    let (grid, psi) = grid_gaussian(1.3, 0.0, 0.5, 0.0);
    let q = GridOperator::position(&grid);
    assert!((expectation(&q, &psi).unwrap() - 1.3).abs() < grid.spacing());
    let applied = apply(&q, &psi).unwrap();
    assert_eq!(applied.dim(), psi.dim());
}

/// Closed-form moments of the sampled Gaussian: ⟨q⟩ = q₀, ⟨p⟩ = p₀,
/// Var q = σ_qq, Var p = (ħ²/4 + σ_qp²)/σ_qq.
#[test]
fn grid_gaussian_moments_match_closed_form() {
    for &(q0, p0, vq, c) in &[
        (0.0, 0.0, 1.0, 0.0),
        (-2.0, 1.5, 0.5, 0.5),
        (3.0, -0.7, 2.0, -0.8),
    ] {
        let (grid, psi) = grid_gaussian(q0, p0, vq, c);
        let q = GridOperator::position(&grid);
        let p = GridOperator::momentum(&grid, 1.0);
        let vp = (0.25 + c * c) / vq;
        let rel = |a: f64, b: f64| (a - b).abs() / b.abs().max(1.0);
        assert!(rel(expectation(&q, &psi).unwrap(), q0) < 1e-6);
        assert!(rel(expectation(&p, &psi).unwrap(), p0) < 1e-6);
        assert!(rel(variance(&q, &psi).unwrap(), vq) < 1e-6);
        assert!(rel(variance(&p, &psi).unwrap(), vp) < 1e-6);
    }
}

#[test]
fn kinetic_operator_is_spectral() {
    let (grid, psi) = grid_gaussian(0.0, 2.0, 1.0, 0.0);
    let t = GridOperator::kinetic(&grid, 1.0, 1.0);
    // ⟨p²/2⟩ = (p₀² + Var p)/2 with Var p = 1/4
    assert!((expectation(&t, &psi).unwrap() - (4.0 + 0.25) / 2.0).abs() < 1e-8);
}

proptest! {
    #[test]
    fn expectation_is_scale_invariant(
        a in -2.0f64..2.0, b in -2.0f64..2.0, c in -2.0f64..2.0, d in -2.0f64..2.0,
        lr in 0.1f64..10.0, phase in 0.0f64..6.3,
    ) {
        prop_assume!(a * a + b * b + c * c + d * d > 1e-3);
        let psi = sv(&[(a, b), (c, d)]);
        let mut scaled = psi.clone();
        scaled.scale_mut(cis(phase) * lr);
        let x = HermitianOperator::<f64>::sigma_x();
        let e1 = expectation(&x, &psi).unwrap();
        let e2 = expectation(&x, &scaled).unwrap();
        prop_assert!((e1 - e2).abs() < 1e-12);
    }

    #[test]
    fn fidelity_symmetric_and_rescaling_invariant(
        v in proptest::collection::vec(-1.0f64..1.0, 6),
        w in proptest::collection::vec(-1.0f64..1.0, 6),
        s in 0.1f64..5.0, phase in 0.0f64..6.3,
    ) {
        let to_state = |x: &[f64]| StateVector::new(vec![cplx(x[0], x[1]), cplx(x[2], x[3]), cplx(x[4], x[5])]).unwrap();
        let p = to_state(&v);
        let q = to_state(&w);
        prop_assume!(p.norm2() > 1e-3 && q.norm2() > 1e-3);
        let f_pq = fidelity(&p, &q).unwrap();
        let f_qp = fidelity(&q, &p).unwrap();
        let mut q2 = q.clone();
        q2.scale_mut(cis(phase) * s);
        prop_assert!((f_pq - f_qp).abs() < 1e-12);
        prop_assert!((f_pq - fidelity(&p, &q2).unwrap()).abs() < 1e-12);
        prop_assert!((0.0..=1.0).contains(&f_pq));
    }

    #[test]
    fn variance_is_nonnegative(a in -2.0f64..2.0, b in -2.0f64..2.0, c in -2.0f64..2.0, d in -2.0f64..2.0) {
        prop_assume!(a * a + b * b + c * c + d * d > 1e-3);
        let psi = sv(&[(a, b), (c, d)]);
        for op in [HermitianOperator::<f64>::sigma_x(), HermitianOperator::sigma_y(), HermitianOperator::sigma_z()] {
            prop_assert!(variance(&op, &psi).unwrap() >= 0.0);
        }
    }
}

#[test]
fn complex_type_alias_is_num_complex() {
    let z: C<f64> = cplx(1.0, 2.0);
    assert_eq!(z.conj(), cplx(1.0, -2.0));
}
