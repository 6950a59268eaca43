use approx::assert_abs_diff_eq;
use proptest::prelude::*;

use super::*;
use crate::hilbert::{fidelity, GaussianPacket, HermitianOperator, StateVector};
use crate::scalar::cis;

fn qubit(h: HermitianOperator<f64>) -> MatrixSystem<f64> {
    MatrixSystem::new(h, HermitianOperator::sigma_z(), 1.0).unwrap()
}

fn kappa(k: f64) -> MeasurementStrength<f64> {
    MeasurementStrength::new(k).unwrap()
}

fn plus() -> StateVector<f64> {
    StateVector::from_real(&[1.0, 1.0])
        .unwrap()
        .normalized()
        .unwrap()
}

#[test]
fn measurement_strength_must_be_positive() {
    match MeasurementStrength::new(-1.0f64).unwrap_err() {
        Error::Config { field, constraint } => {
            assert_eq!(field, "kappa");
            assert_eq!(constraint, "positive");
        }
        e => panic!("unexpected {e:?}"),
    }
    assert!(MeasurementStrength::<f64>::off().is_off());
}

#[test]
fn record_examples() {
    let sys = qubit(HermitianOperator::zero(2));
    let up = StateVector::basis(2, 0).unwrap();
    let zero_mean = plus();
    let c = RecordCoefficient::default();
    assert_eq!(
        emit_record(&sys, &zero_mean, kappa(1.0), 1e-3, 0.0, c).unwrap(),
        0.0
    );
    assert_eq!(
        emit_record(&sys, &up, kappa(1.0), 1.0, 0.5, c).unwrap(),
        1.25
    );
    assert_eq!(
        emit_record(&sys, &up, MeasurementStrength::off(), 1.0, 0.5, c).unwrap_err(),
        Error::NoMeasurement
    );
}

#[test]
fn literal_coefficient_differs_by_sqrt_kappa() {
    let good = RecordCoefficient::InverseTwoSqrtKappa.noise_scale(4.0, 1e-3);
    let literal = RecordCoefficient::LiteralInverseTwoKappa.noise_scale(4.0, 1e-3);
    assert_abs_diff_eq!(literal / good, 0.5, epsilon = 1e-15);
    assert_eq!(
        RecordCoefficient::InverseTwoSqrtKappa.noise_scale(1.0, 0.1),
        RecordCoefficient::LiteralInverseTwoKappa.noise_scale(1.0, 0.1)
    );
}

#[test]
fn eigenstate_is_a_fixed_point_of_both_equations() {
    let sys = qubit(HermitianOperator::zero(2));
    let up = StateVector::basis(2, 0).unwrap();
    for dw in [-0.3, 0.0, 0.1] {
        let next = step_nonlinear(&sys, &up, kappa(2.0), 1e-2, dw, NormMode::Renormalize).unwrap();
        assert_eq!(next, up);
    }
    assert_eq!(step_linear(&sys, &up, kappa(2.0), 1e-2, 1.0).unwrap(), up);
}

#[test]
fn nonlinear_step_rejects_unnormalized_input_in_renorm_mode() {
    let sys = qubit(HermitianOperator::sigma_x());
    let psi = StateVector::from_real(&[1.0, 1.0]).unwrap();
    assert!(matches!(
        step_nonlinear(&sys, &psi, kappa(1.0), 1e-3, 0.0, NormMode::Renormalize),
        Err(Error::NotNormalized { .. })
    ));
    assert!(step_nonlinear(&sys, &psi, kappa(1.0), 1e-3, 0.0, NormMode::Raw).is_ok());
}

#[test]
fn measurement_off_reduces_to_schroedinger_euler_step() {
    let sys = qubit(HermitianOperator::sigma_x());
    let psi = StateVector::basis(2, 0).unwrap();
    let dt = 1e-3;
    let euler = step_nonlinear(
        &sys,
        &psi,
        MeasurementStrength::off(),
        dt,
        0.7,
        NormMode::Renormalize,
    )
    .unwrap();
    let exact = sys.unitary(&psi, dt).unwrap();
    assert!(1.0 - fidelity(&euler, &exact).unwrap() < dt * dt);
}

#[test]
fn linear_step_examples() {
    let sys = qubit(HermitianOperator::sigma_x());
    let psi = StateVector::from_real(&[0.6, 0.8]).unwrap();
    let next = step_linear(&sys, &psi, MeasurementStrength::off(), 1e-2, 0.3).unwrap();
    assert_abs_diff_eq!(next.norm2(), 1.0, epsilon = 1e-12);

    // two-level damping: weights 1 and e^{−κΔt·(−1−1)²}
    let free = qubit(HermitianOperator::zero(2));
    let next = step_linear(&free, &plus(), kappa(0.5), 1.0, 1.0).unwrap();
    assert_abs_diff_eq!(next.norm2(), (1.0 + (-4.0f64).exp()) / 2.0, epsilon = 1e-15);
}

#[test]
fn linear_step_reports_underflow() {
    let sys = qubit(HermitianOperator::zero(2));
    let up = StateVector::basis(2, 0).unwrap();
    assert!(matches!(
        step_linear(&sys, &up, kappa(1.0), 1.0, 30.0),
        Err(Error::WeightUnderflow { .. })
    ));
    assert!(step_linear(&sys, &up, kappa(1.0), 1.0, f64::NAN).is_err());
}

#[test]
fn step_size_guard() {
    assert_eq!(
        check_step_size(kappa(1.0), 1e-3, 2.0).unwrap(),
        StepGuard::Ok
    );
    assert!(matches!(
        check_step_size(kappa(1.0), 0.05, 2.0).unwrap(),
        StepGuard::Warn(_)
    ));
    assert!(matches!(
        check_step_size(kappa(1.0), 0.5, 2.0),
        Err(Error::StepSize(_))
    ));
    assert!(check_step_size(kappa(1.0), 0.0, 2.0).is_err());
}

#[test]
fn zero_steps_returns_initial_state_only() {
    let sys = qubit(HermitianOperator::sigma_x());
    let cfg = RunConfig::new(kappa(1.0), 1e-3, 0).unwrap();
    let mut s = NoiseStream::new(1, 0);
    let out = run_selective(&sys, &plus(), &cfg, &Mode::nonlinear(), &mut s).unwrap();
    assert_eq!(out.points.len(), 1);
    assert_abs_diff_eq!(
        fidelity(&out.final_state, &plus()).unwrap(),
        1.0,
        epsilon = 1e-15
    );
    assert_eq!(out.record.unwrap().len(), 0);
    assert_eq!(
        replay_equivalence(&sys, &plus(), &cfg, &mut s).unwrap(),
        0.0
    );
}

#[test]
fn empty_record_has_unit_weight() {
    let sys = qubit(HermitianOperator::sigma_x());
    let cfg = RunConfig::new(kappa(1.0), 1e-3, 0).unwrap();
    let mode = Mode::LinearWithRecord(MeasurementRecord::empty(1e-3).unwrap());
    let out = run_selective(&sys, &plus(), &cfg, &mode, &mut NoiseStream::new(0, 0)).unwrap();
    assert_abs_diff_eq!(record_weight(&out).unwrap(), 1.0, epsilon = 1e-15);
}

#[test]
fn on_resonance_record_keeps_unit_weight() {
    let sys = qubit(HermitianOperator::zero(2));
    let up = StateVector::basis(2, 0).unwrap();
    let cfg = RunConfig::new(kappa(1.0), 1e-2, 5).unwrap();
    let mode = Mode::LinearWithRecord(MeasurementRecord::new(1e-2, vec![1.0; 5]).unwrap());
    let out = run_selective(&sys, &up, &cfg, &mode, &mut NoiseStream::new(0, 0)).unwrap();
    assert_eq!(record_weight(&out).unwrap(), 1.0);
    assert_eq!(out.final_state, up);
}

#[test]
fn record_weight_rejects_nonlinear_trajectories() {
    let sys = qubit(HermitianOperator::sigma_x());
    let cfg = RunConfig::new(kappa(1.0), 1e-3, 3).unwrap();
    let out = run_selective(
        &sys,
        &plus(),
        &cfg,
        &Mode::nonlinear(),
        &mut NoiseStream::new(0, 0),
    )
    .unwrap();
    assert!(matches!(record_weight(&out), Err(Error::Mode(_))));
}

#[test]
fn linear_run_tracks_log_weight() {
    let sys = qubit(HermitianOperator::sigma_x());
    let record = MeasurementRecord::new(1e-2, vec![0.3, -0.2, 0.9, 0.1]).unwrap();
    let cfg = RunConfig::new(kappa(1.5), 1e-2, 4).unwrap();
    let out = run_selective(
        &sys,
        &plus(),
        &cfg,
        &Mode::LinearWithRecord(record.clone()),
        &mut NoiseStream::new(0, 0),
    )
    .unwrap();
    let mut direct = plus();
    for &a in record.values() {
        direct = step_linear(&sys, &direct, kappa(1.5), 1e-2, a).unwrap();
    }
    assert_abs_diff_eq!(
        record_weight(&out).unwrap(),
        direct.norm2(),
        epsilon = 1e-14
    );
    assert_abs_diff_eq!(
        fidelity(&out.final_state, &direct).unwrap(),
        1.0,
        epsilon = 1e-14
    );
}

#[test]
fn nonlinear_saved_states_are_normalized() {
    let sys = qubit(HermitianOperator::sigma_x());
    let cfg = RunConfig::new(kappa(1.0), 1e-3, 500)
        .unwrap()
        .with_save_stride(7)
        .unwrap();
    for seed in 0..5 {
        for mode in [Mode::nonlinear(), Mode::kraus_split()] {
            let out =
                run_selective(&sys, &plus(), &cfg, &mode, &mut NoiseStream::new(seed, 3)).unwrap();
            assert!(out.points.iter().all(|p| (p.norm2 - 1.0).abs() < 1e-9));
            assert_eq!(out.points.len(), 1 + 500 / 7);
            assert_eq!(out.record.as_ref().unwrap().len(), 500);
        }
    }
}

#[test]
fn rabi_flip_without_measurement() {
    let sys = qubit(HermitianOperator::sigma_x());
    let n = 4000;
    let dt = std::f64::consts::FRAC_PI_2 / n as f64;
    let cfg = RunConfig::new(MeasurementStrength::off(), dt, n).unwrap();
    let up = StateVector::basis(2, 0).unwrap();
    let down = StateVector::basis(2, 1).unwrap();
    let em = run_selective(
        &sys,
        &up,
        &cfg,
        &Mode::nonlinear(),
        &mut NoiseStream::new(0, 0),
    )
    .unwrap();
    assert!(em.record.is_none());
    assert!(1.0 - fidelity(&em.final_state, &down).unwrap() < 10.0 * dt);
    let split = run_selective(
        &sys,
        &up,
        &cfg,
        &Mode::kraus_split(),
        &mut NoiseStream::new(0, 0),
    )
    .unwrap();
    assert!(1.0 - fidelity(&split.final_state, &down).unwrap() < 1e-12);
}

#[test]
fn eigenstate_replay_is_exact() {
    let sys = qubit(HermitianOperator::zero(2));
    let cfg = RunConfig::new(kappa(1.0), 1e-3, 200).unwrap();
    let up = StateVector::basis(2, 0).unwrap();
    let inf = replay_equivalence(&sys, &up, &cfg, &mut NoiseStream::new(5, 0)).unwrap();
    assert!(inf.abs() < 1e-15);
}

#[test]
fn replay_infidelity_is_small_and_coefficient_sensitive() {
    let sys = qubit(HermitianOperator::sigma_x());
    let cfg = RunConfig::new(kappa(4.0), 1e-3, 1000).unwrap();
    let inc = NoiseStream::new(11, 0).increments(1000, 1e-3).unwrap();
    let good = replay_infidelity_with_increments(
        &sys,
        &plus(),
        &cfg,
        RecordCoefficient::InverseTwoSqrtKappa,
        &inc,
    )
    .unwrap();
    let bad = replay_infidelity_with_increments(
        &sys,
        &plus(),
        &cfg,
        RecordCoefficient::LiteralInverseTwoKappa,
        &inc,
    )
    .unwrap();
    assert!(good < 1e-2, "{good}");
    assert!(bad > good);
}

#[test]
fn ensembles_are_schedule_independent() {
    let sys = qubit(HermitianOperator::sigma_x());
    let cfg = RunConfig::new(kappa(1.0), 1e-3, 100)
        .unwrap()
        .with_save_stride(50)
        .unwrap();
    let par = run_ensemble(&sys, &plus(), &cfg, &Mode::nonlinear(), 42, 16).unwrap();
    let serial: Vec<_> = (0..16)
        .map(|k| {
            run_selective(
                &sys,
                &plus(),
                &cfg,
                &Mode::nonlinear(),
                &mut NoiseStream::new(42, k),
            )
            .unwrap()
        })
        .collect();
    assert_eq!(par, serial);
}

#[test]
fn grid_system_validates_wavefunction_grid() {
    let g1 = Grid::centered(64, 10.0).unwrap();
    let g2 = Grid::centered(64, 12.0).unwrap();
    let sys = GridSystem::free_particle(g1, 1.0, 1.0).unwrap();
    let packet = GaussianPacket {
        center: 0.0,
        momentum: 0.0,
        var_q: 1.0,
        cov_qp: 0.0,
    };
    let psi = GridWavefunction::gaussian(g2, packet, 1.0).unwrap();
    assert!(sys.check_state(&psi).is_err());
    assert!(GridSystem::free_particle(g1, -1.0, 1.0).is_err());
}

#[test]
fn grid_linear_step_with_potential_preserves_norm_when_unmeasured() {
    let grid = Grid::centered(256, 20.0).unwrap();
    let sys = GridSystem::free_particle(grid, 1.0, 1.0)
        .unwrap()
        .with_potential(|q| 0.5 * q * q);
    let packet = GaussianPacket {
        center: 1.0,
        momentum: 0.5,
        var_q: 0.5,
        cov_qp: 0.0,
    };
    let psi = GridWavefunction::gaussian(grid, packet, 1.0).unwrap();
    let next = step_linear(&sys, &psi, MeasurementStrength::off(), 0.01, 0.0).unwrap();
    assert_abs_diff_eq!(next.norm2(), 1.0, epsilon = 1e-12);
}

#[test]
fn single_precision_trajectory_runs() {
    let sys = MatrixSystem::<f32>::new(
        HermitianOperator::sigma_x(),
        HermitianOperator::sigma_z(),
        1.0,
    )
    .unwrap();
    let psi = StateVector::<f32>::from_real(&[1.0, 0.0]).unwrap();
    let cfg = RunConfig::new(MeasurementStrength::new(1.0f32).unwrap(), 1e-3, 100).unwrap();
    let out = run_selective(
        &sys,
        &psi,
        &cfg,
        &Mode::nonlinear(),
        &mut NoiseStream::new(0, 0),
    )
    .unwrap();
    assert!((out.final_state.norm2() - 1.0).abs() < 1e-5);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// With H = 0 the Gaussian factor is a contraction, with equality only on resonance.
    #[test]
    fn linear_damping_never_increases_norm(
        re in proptest::collection::vec(-1.0f64..1.0, 3),
        im in proptest::collection::vec(-1.0f64..1.0, 3),
        a in -3.0f64..3.0, kdt in 1e-4f64..1.0,
    ) {
        let psi = StateVector::new((0..3).map(|i| crate::scalar::cplx(re[i], im[i])).collect()).unwrap();
        prop_assume!(psi.norm2() > 1e-3);
        let sys = MatrixSystem::new(
            HermitianOperator::zero(3),
            HermitianOperator::from_real_diagonal(&[-1.0, 0.5, 2.0]).unwrap(),
            1.0,
        ).unwrap();
        let next = step_linear(&sys, &psi, kappa(1.0), kdt, a).unwrap();
        prop_assert!(next.norm2() <= psi.norm2() * (1.0 + 1e-14));
    }

    #[test]
    fn global_phase_commutes_with_nonlinear_step(phase in 0.0f64..std::f64::consts::TAU, dw in -0.1f64..0.1) {
        let sys = qubit(HermitianOperator::sigma_x());
        let psi = StateVector::from_real(&[0.6, 0.8]).unwrap();
        let mut rotated = psi.clone();
        rotated.scale_mut(cis(phase));
        let a = step_nonlinear(&sys, &psi, kappa(1.0), 1e-3, dw, NormMode::Renormalize).unwrap();
        let b = step_nonlinear(&sys, &rotated, kappa(1.0), 1e-3, dw, NormMode::Renormalize).unwrap();
        prop_assert!((1.0 - fidelity(&a, &b).unwrap()).abs() < 1e-12);
    }
}
