use contmeas::hilbert::{DensityMatrix, HermitianOperator, QuantumState, StateVector};
use contmeas::nonselective::{ensemble_average, run_me, MasterEqConfig};
use contmeas::stochastic::NoiseStream;
use contmeas::unraveling::{
    run_ensemble, run_selective, MatrixSystem, MeasurementStrength, Mode, RunConfig,
};

fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    (
        m,
        xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0),
    )
}

fn correlation(x: &[f64], y: &[f64]) -> f64 {
    let (mx, vx) = mean_var(x);
    let (my, vy) = mean_var(y);
    let c = x
        .iter()
        .zip(y)
        .map(|(a, b)| (a - mx) * (b - my))
        .sum::<f64>()
        / (x.len() as f64 - 1.0);
    c / (vx * vy).sqrt()
}

fn kappa(k: f64) -> MeasurementStrength<f64> {
    MeasurementStrength::new(k).unwrap()
}

#[test]
fn increments_have_mean_zero_and_variance_dt() {
    let dt = 1e-3;
    let n = 1_000_000;
    let dw = NoiseStream::new(11, 0).increments(n, dt).unwrap();
    let (m, v) = mean_var(&dw);
    assert!(m.abs() < 4.0 * (dt / n as f64).sqrt(), "mean {m}");
    assert!((v / dt - 1.0).abs() < 0.01, "variance {v}");
}

#[test]
fn wiener_endpoint_variance() {
    let (dt, n) = (1e-2, 100);
    let ends: Vec<f64> = (0..10_000u64)
        .map(|id| {
            *NoiseStream::new(12, id)
                .wiener_path(n, dt)
                .unwrap()
                .last()
                .unwrap()
        })
        .collect();
    let (_, v) = mean_var(&ends);
    assert!((v / (n as f64 * dt) - 1.0).abs() < 0.05, "variance {v}");
}

#[test]
fn distinct_streams_are_uncorrelated() {
    let n = 10_000;
    let a = NoiseStream::new(13, 0).increments(n, 1e-3).unwrap();
    let b = NoiseStream::new(13, 1).increments(n, 1e-3).unwrap();
    let r = correlation(&a, &b);
    assert!(r.abs() < 0.02, "r = {r}");
}

#[test]
fn record_residual_is_white_with_expected_variance() {
    let sys = MatrixSystem::new(
        HermitianOperator::sigma_x(),
        HermitianOperator::sigma_z(),
        1.0,
    )
    .unwrap();
    let (k, dt, n) = (1.0, 1e-3, 100_000);
    let cfg = RunConfig::new(kappa(k), dt, n).unwrap();
    let psi0 = StateVector::basis(2, 0).unwrap();
    let tr = run_selective(
        &sys,
        &psi0,
        &cfg,
        &Mode::nonlinear(),
        &mut NoiseStream::new(14, 0),
    )
    .unwrap();
    let rec = tr.record.as_ref().unwrap().values();
    let resid: Vec<f64> = rec
        .iter()
        .zip(&tr.points)
        .map(|(a, p)| a - p.mean_a)
        .collect();

    let (_, v) = mean_var(&resid);
    let expected = 1.0 / (4.0 * k * dt);
    assert!(
        (v / expected - 1.0).abs() < 0.01,
        "variance {v} vs {expected}"
    );
    for lag in 1..=5 {
        let r = correlation(&resid[..n - lag], &resid[lag..]);
        assert!(r.abs() < 0.02, "lag {lag}: r = {r}");
    }
}

#[test]
fn observable_mean_is_a_martingale_when_it_commutes_with_h() {
    let sys = MatrixSystem::new(
        HermitianOperator::zero(2),
        HermitianOperator::sigma_z(),
        1.0,
    )
    .unwrap();
    let psi0 = StateVector::from_real(&[0.3f64.sqrt(), 0.7f64.sqrt()]).unwrap();
    let cfg = RunConfig::new(kappa(1.0), 1e-3, 1000)
        .unwrap()
        .with_save_stride(100)
        .unwrap();
    let trajs = run_ensemble(&sys, &psi0, &cfg, &Mode::nonlinear(), 15, 10_000).unwrap();
    for i in 0..trajs[0].points.len() {
        let xs: Vec<f64> = trajs.iter().map(|t| t.points[i].mean_a).collect();
        let (m, v) = mean_var(&xs);
        let se = (v / xs.len() as f64).sqrt();
        assert!(
            (m + 0.4).abs() <= 4.0 * se.max(1e-12),
            "t = {}: {m}",
            trajs[0].points[i].t
        );
    }
}

#[test]
fn ensemble_purity_does_not_increase() {
    let sys = MatrixSystem::new(
        HermitianOperator::sigma_x(),
        HermitianOperator::sigma_z(),
        1.0,
    )
    .unwrap();
    let psi0 = StateVector::basis(2, 0).unwrap();
    let cfg = RunConfig::new(kappa(1.0), 1e-3, 2000)
        .unwrap()
        .with_save_stride(200)
        .unwrap();
    let trajs = run_ensemble(&sys, &psi0, &cfg, &Mode::nonlinear(), 16, 5000).unwrap();
    let avg = ensemble_average(&trajs).unwrap();
    let purity: Vec<f64> = avg.mean.iter().map(|r| r.purity()).collect();

    let me_cfg = MasterEqConfig::new(
        HermitianOperator::sigma_x(),
        HermitianOperator::sigma_z(),
        kappa(1.0),
        1.0,
        1e-3,
    )
    .unwrap();
    let me = run_me(&DensityMatrix::from_pure(&psi0).unwrap(), &me_cfg, 2.0).unwrap();
    let me_purity: Vec<f64> = me.states.iter().map(|r| r.purity()).collect();
    assert!(me_purity.windows(2).all(|w| w[1] <= w[0] + 1e-12));
    for (i, p) in purity.iter().enumerate() {
        assert!(
            (p - me.at(avg.times[i]).purity()).abs() < 0.02,
            "t = {}",
            avg.times[i]
        );
        if i > 0 {
            // sampling noise only
            assert!(
                *p <= purity[i - 1] + 0.02,
                "purity rose at t = {}",
                avg.times[i]
            );
        }
    }
    assert!(purity.last().unwrap() < &purity[0]);
    assert!(trajs
        .iter()
        .all(|t| (t.final_state.norm2() - 1.0).abs() < 1e-12));
}
