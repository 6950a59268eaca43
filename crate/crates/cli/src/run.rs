//! Subcommand implementations.

use std::fmt;
use std::io;
use std::path::Path;

use contmeas::gaussian_oracle::{
    grid_vs_oracle, localization_rate, FreeParticleParams, GaussianState, GridConfig,
};
use contmeas::hilbert::{
    DensityMatrix, GaussianPacket, Grid, GridWavefunction, QuantumState, StateVector,
};
use contmeas::instrument::{
    completeness_defect, enumerate_record_distribution, GaussianInstrument, RecordLattice,
};
use contmeas::nonselective::{ensemble_average, run_me, MasterEqConfig};
use contmeas::stochastic::NoiseStream;
use contmeas::unraveling::{
    run_ensemble, run_selective, GridSystem, MatrixSystem, MeasurementRecord, MeasurementStrength,
    Mode, RunConfig, TrajectoryResult,
};
use nalgebra::DMatrix;
use serde_json::{json, Value};

use crate::config::{GridSpec, Issue, MatrixSpec, RunMode, SimConfig, SystemSpec};
use crate::output::{fmt_f64, read_csv, OutputDir, Table};

#[derive(Debug)]
pub enum CliError {
    Config(Vec<Issue>),
    Core(contmeas::Error),
    Io(io::Error),
}

impl CliError {
    /// 2 for configuration problems, 3 for numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Core(e) if e.is_numeric() => 3,
            CliError::Config(_) | CliError::Core(_) | CliError::Io(_) => 2,
        }
    }

    pub fn config(path: &str, message: impl Into<String>) -> Self {
        CliError::Config(vec![Issue {
            path: path.into(),
            message: message.into(),
        }])
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(issues) => {
                write!(f, "configuration error")?;
                for i in issues {
                    write!(f, "\n  {i}")?;
                }
                Ok(())
            }
            CliError::Core(e) => write!(f, "{e}"),
            CliError::Io(e) => write!(f, "i/o error: {e}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<contmeas::Error> for CliError {
    fn from(e: contmeas::Error) -> Self {
        CliError::Core(e)
    }
}

impl From<io::Error> for CliError {
    fn from(e: io::Error) -> Self {
        CliError::Io(e)
    }
}

pub type CliResult<T> = Result<T, CliError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    RunTrajectory,
    RunEnsemble,
    RunMe,
    RpiEnumerate,
    FreeParticle,
    CompareEnsemble,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::RunTrajectory => "run-trajectory",
            Command::RunEnsemble => "run-ensemble",
            Command::RunMe => "run-me",
            Command::RpiEnumerate => "rpi-enumerate",
            Command::FreeParticle => "free-particle",
            Command::CompareEnsemble => "compare-ensemble",
        }
    }

    pub fn mode_hint(self) -> RunMode {
        match self {
            Command::RunTrajectory | Command::RunEnsemble => RunMode::Nonlinear,
            Command::RunMe => RunMode::Me,
            Command::RpiEnumerate => RunMode::RpiEnumerate,
            Command::FreeParticle => RunMode::FreeParticle,
            Command::CompareEnsemble => RunMode::Compare,
        }
    }
}

fn strength(kappa: f64) -> contmeas::Result<MeasurementStrength<f64>> {
    if kappa == 0.0 {
        Ok(MeasurementStrength::off())
    } else {
        MeasurementStrength::new(kappa)
    }
}

fn matrix_system(cfg: &SimConfig) -> CliResult<(&MatrixSpec, MatrixSystem<f64>)> {
    match &cfg.system {
        SystemSpec::Matrix(m) => {
            let sys = MatrixSystem::new(m.hamiltonian.clone(), m.observable.clone(), cfg.hbar)?;
            Ok((m, sys))
        }
        SystemSpec::Grid(_) => Err(CliError::config(
            "system",
            "this subcommand needs a finite-dimensional system",
        )),
    }
}

fn run_config(cfg: &SimConfig) -> CliResult<RunConfig<f64>> {
    Ok(RunConfig::new(strength(cfg.kappa)?, cfg.dt, cfg.n_steps)?
        .with_save_stride(cfg.save_stride)?)
}

fn nonlinear_mode(cfg: &SimConfig) -> Mode<f64> {
    Mode::Nonlinear {
        scheme: cfg.scheme,
        norm: cfg.norm,
        coefficient: cfg.coefficient,
    }
}

fn read_record(path: &Path, dt: f64) -> CliResult<MeasurementRecord<f64>> {
    let (columns, rows) =
        read_csv(path).map_err(|e| CliError::config("record_file", e.to_string()))?;
    let col = columns
        .iter()
        .position(|c| c == "a")
        .ok_or_else(|| CliError::config("record_file", "no column named `a`"))?;
    let values = rows
        .iter()
        .enumerate()
        .map(|(i, r)| {
            r.get(col)
                .and_then(|s| s.parse::<f64>().ok())
                .ok_or_else(|| {
                    CliError::config("record_file", format!("row {i}: unreadable record value"))
                })
        })
        .collect::<CliResult<Vec<f64>>>()?;
    Ok(MeasurementRecord::new(dt, values)?)
}

fn opt(x: Option<f64>) -> String {
    x.map(fmt_f64).unwrap_or_default()
}

fn amplitude_columns(d: usize) -> Vec<String> {
    (0..d)
        .flat_map(|i| [format!("re_{i}"), format!("im_{i}")])
        .collect()
}

fn amplitude_cells(psi: &StateVector<f64>) -> Vec<String> {
    psi.amplitudes()
        .iter()
        .flat_map(|z| [fmt_f64(z.re), fmt_f64(z.im)])
        .collect()
}

#[allow(clippy::type_complexity)]
fn trajectory_table<S>(
    traj_index: Option<usize>,
    trajectories: &[TrajectoryResult<S, f64>],
    amps: Option<(usize, &dyn Fn(&S) -> Vec<String>)>,
) -> Table {
    let mut cols: Vec<String> = Vec::new();
    if traj_index.is_some() {
        cols.push("traj".into());
    }
    cols.extend(
        [
            "step",
            "t",
            "mean_a",
            "var_a",
            "norm2",
            "log_weight",
            "record",
        ]
        .map(String::from),
    );
    if let Some((d, _)) = amps {
        cols.extend(amplitude_columns(d));
    }
    let mut table = Table::new(cols);
    for (k, tr) in trajectories.iter().enumerate() {
        for p in &tr.points {
            let mut row = Vec::new();
            if traj_index.is_some() {
                row.push(k.to_string());
            }
            row.extend([
                p.step.to_string(),
                fmt_f64(p.t),
                fmt_f64(p.mean_a),
                fmt_f64(p.var_a),
                fmt_f64(p.norm2),
                opt(p.log_weight),
                opt(p.record),
            ]);
            if let Some((_, f)) = amps {
                row.extend(f(&p.state));
            }
            table.push(row);
        }
    }
    table
}

fn record_table(record: &MeasurementRecord<f64>) -> Table {
    let mut t = Table::new(vec!["k".into(), "t".into(), "a".into()]);
    for (k, &a) in record.values().iter().enumerate() {
        t.push(vec![
            (k + 1).to_string(),
            fmt_f64(record.time(k + 1)),
            fmt_f64(a),
        ]);
    }
    t
}

fn report_warnings<S>(tr: &TrajectoryResult<S, f64>) {
    for w in &tr.warnings {
        eprintln!("warning: {w}");
    }
}

fn grid_state(g: &GridSpec, hbar: f64) -> CliResult<(GridSystem<f64>, GridWavefunction<f64>)> {
    let grid = Grid::centered(g.points, g.box_len)?;
    let sys = GridSystem::free_particle(grid, g.mass, hbar)?;
    let packet = GaussianPacket {
        center: g.mean_q,
        momentum: g.mean_p,
        var_q: g.var_q,
        cov_qp: g.cov_qp,
    };
    let psi = GridWavefunction::gaussian(grid, packet, hbar)?;
    Ok((sys, psi))
}

pub fn run_trajectory(cfg: &SimConfig, out: &mut OutputDir) -> CliResult<()> {
    let rc = run_config(cfg)?;
    let mode = match cfg.mode {
        RunMode::LinearReplay => {
            let path = cfg.record_file.as_ref().expect("validated");
            Mode::LinearWithRecord(read_record(path, cfg.dt)?)
        }
        RunMode::Nonlinear => nonlinear_mode(cfg),
        m => {
            return Err(CliError::config(
                "mode",
                format!("run-trajectory does not run mode {}", m.name()),
            ))
        }
    };
    let mut stream = NoiseStream::new(cfg.master_seed, 0);
    let (table, record) = match &cfg.system {
        SystemSpec::Matrix(m) => {
            let (_, sys) = matrix_system(cfg)?;
            let tr = run_selective(&sys, &m.initial_state, &rc, &mode, &mut stream)?;
            report_warnings(&tr);
            let f: &dyn Fn(&StateVector<f64>) -> Vec<String> = &amplitude_cells;
            (
                trajectory_table(
                    None,
                    std::slice::from_ref(&tr),
                    Some((m.initial_state.dim(), f)),
                ),
                tr.record,
            )
        }
        SystemSpec::Grid(g) => {
            let (sys, psi0) = grid_state(g, cfg.hbar)?;
            let tr = run_selective(&sys, &psi0, &rc, &mode, &mut stream)?;
            report_warnings(&tr);
            (
                trajectory_table(None, std::slice::from_ref(&tr), None),
                tr.record,
            )
        }
    };
    out.write_csv("trajectory.csv", &table)?;
    if let Some(r) = record {
        out.write_csv("record.csv", &record_table(&r))?;
    }
    Ok(())
}

type Ensemble = Vec<TrajectoryResult<StateVector<f64>, f64>>;

fn ensemble(cfg: &SimConfig) -> CliResult<(usize, Ensemble)> {
    if cfg.mode == RunMode::LinearReplay {
        return Err(CliError::config(
            "mode",
            "ensembles are generated in nonlinear mode",
        ));
    }
    let (m, sys) = matrix_system(cfg)?;
    let rc = run_config(cfg)?;
    let trajs = run_ensemble(
        &sys,
        &m.initial_state,
        &rc,
        &nonlinear_mode(cfg),
        cfg.master_seed,
        cfg.n_trajectories,
    )?;
    if let Some(first) = trajs.first() {
        report_warnings(first);
    }
    Ok((m.initial_state.dim(), trajs))
}

fn rho_columns(d: usize, with_se: bool) -> Vec<String> {
    let mut cols = vec!["t".to_owned()];
    for m in 0..d {
        for n in 0..d {
            cols.push(format!("rho_{m}_{n}_re"));
            cols.push(format!("rho_{m}_{n}_im"));
            if with_se {
                cols.push(format!("se_{m}_{n}"));
            }
        }
    }
    cols.push("purity".into());
    cols
}

fn rho_row(t: f64, rho: &DensityMatrix<f64>, se: Option<&DMatrix<f64>>) -> Vec<String> {
    let d = rho.dim();
    let mut row = vec![fmt_f64(t)];
    for m in 0..d {
        for n in 0..d {
            let z = rho.matrix()[(m, n)];
            row.push(fmt_f64(z.re));
            row.push(fmt_f64(z.im));
            if let Some(se) = se {
                row.push(fmt_f64(se[(m, n)]));
            }
        }
    }
    row.push(fmt_f64(rho.purity()));
    row
}

fn write_ensemble(
    out: &mut OutputDir,
    d: usize,
    trajs: &[TrajectoryResult<StateVector<f64>, f64>],
) -> CliResult<()> {
    let avg = ensemble_average(trajs)?;
    let mut table = Table::new(rho_columns(d, true));
    for ((t, rho), se) in avg.times.iter().zip(&avg.mean).zip(&avg.std_error) {
        table.push(rho_row(*t, rho, Some(se)));
    }
    out.write_csv("ensemble.csv", &table)?;
    Ok(())
}

pub fn run_ensemble_cmd(cfg: &SimConfig, out: &mut OutputDir) -> CliResult<()> {
    let (d, trajs) = ensemble(cfg)?;
    let f: &dyn Fn(&StateVector<f64>) -> Vec<String> = &amplitude_cells;
    out.write_csv(
        "trajectories.csv",
        &trajectory_table(Some(0), &trajs, Some((d, f))),
    )?;
    if trajs.len() >= 2 {
        write_ensemble(out, d, &trajs)?;
    }
    Ok(())
}

fn me_series(cfg: &SimConfig) -> CliResult<Vec<(f64, DensityMatrix<f64>)>> {
    let (m, _) = matrix_system(cfg)?;
    let kappa = strength(cfg.kappa)?;
    let me = match cfg.me_dt {
        Some(dt) => MasterEqConfig::new(
            m.hamiltonian.clone(),
            m.observable.clone(),
            kappa,
            cfg.hbar,
            dt,
        )?,
        None => MasterEqConfig::with_auto_step(
            m.hamiltonian.clone(),
            m.observable.clone(),
            kappa,
            cfg.hbar,
            cfg.dt,
        )?,
    };
    let mut rho = DensityMatrix::from_pure(&m.initial_state)?;
    let mut series = vec![(0.0, rho.clone())];
    let stride = cfg.save_stride;
    let mut step = 0;
    while step + stride <= cfg.n_steps {
        let sol = run_me(&rho, &me, cfg.dt * stride as f64)?;
        rho = sol.states.last().expect("non-empty").clone();
        step += stride;
        series.push((step as f64 * cfg.dt, rho.clone()));
    }
    Ok(series)
}

fn write_me(out: &mut OutputDir, series: &[(f64, DensityMatrix<f64>)]) -> CliResult<()> {
    let d = series[0].1.dim();
    let mut table = Table::new(rho_columns(d, false));
    for (t, rho) in series {
        table.push(rho_row(*t, rho, None));
    }
    out.write_csv("me.csv", &table)?;
    Ok(())
}

pub fn run_me_cmd(cfg: &SimConfig, out: &mut OutputDir) -> CliResult<()> {
    let series = me_series(cfg)?;
    write_me(out, &series)
}

fn read_rho_series(path: &Path) -> CliResult<Vec<(f64, DensityMatrix<f64>)>> {
    let bad = |msg: String| CliError::config("compare", format!("{}: {msg}", path.display()));
    let (columns, rows) = read_csv(path).map_err(|e| bad(e.to_string()))?;
    let n_rho = columns
        .iter()
        .filter(|c| c.starts_with("rho_") && c.ends_with("_re"))
        .count();
    let d = (n_rho as f64).sqrt().round() as usize;
    if d * d != n_rho || d < 2 {
        return Err(bad("density-matrix columns are incomplete".into()));
    }
    let find = |name: String| {
        columns
            .iter()
            .position(|c| *c == name)
            .ok_or_else(|| bad(format!("missing column {name}")))
    };
    let t_col = find("t".into())?;
    let mut idx = Vec::with_capacity(d * d);
    for m in 0..d {
        for n in 0..d {
            idx.push((
                find(format!("rho_{m}_{n}_re"))?,
                find(format!("rho_{m}_{n}_im"))?,
            ));
        }
    }
    rows.iter()
        .map(|r| {
            let num = |c: usize| {
                r.get(c)
                    .and_then(|s| s.parse::<f64>().ok())
                    .ok_or_else(|| bad("unreadable number".into()))
            };
            let t = num(t_col)?;
            let mut mat = DMatrix::zeros(d, d);
            for (k, &(re, im)) in idx.iter().enumerate() {
                mat[(k / d, k % d)] = num_complex::Complex::new(num(re)?, num(im)?);
            }
            Ok((t, DensityMatrix::from_matrix_unchecked(mat)?))
        })
        .collect()
}

/// Trace distance between ensemble and master-equation files, matched by time.
pub fn compare_files(ensemble_csv: &Path, me_csv: &Path) -> CliResult<Table> {
    let ens = read_rho_series(ensemble_csv)?;
    let me = read_rho_series(me_csv)?;
    let mut table = Table::new(
        ["t", "trace_distance", "purity_ensemble", "purity_me"]
            .map(String::from)
            .to_vec(),
    );
    for (t, rho) in &ens {
        let Some((_, reference)) = me
            .iter()
            .find(|(tm, _)| (tm - t).abs() <= 1e-9 * t.abs().max(1.0))
        else {
            return Err(CliError::config(
                "compare",
                format!("no master-equation sample at t = {t}"),
            ));
        };
        table.push(vec![
            fmt_f64(*t),
            fmt_f64(rho.trace_distance(reference)?),
            fmt_f64(rho.purity()),
            fmt_f64(reference.purity()),
        ]);
    }
    Ok(table)
}

pub fn compare_ensemble(cfg: &SimConfig, out: &mut OutputDir) -> CliResult<()> {
    if cfg.n_trajectories < 2 {
        return Err(CliError::config(
            "n_trajectories",
            "at least 2 for a comparison",
        ));
    }
    let (d, trajs) = ensemble(cfg)?;
    write_ensemble(out, d, &trajs)?;
    write_me(out, &me_series(cfg)?)?;
    let table = compare_files(&out.path("ensemble.csv"), &out.path("me.csv"))?;
    out.write_csv("compare.csv", &table)?;
    Ok(())
}

pub fn rpi_enumerate(cfg: &SimConfig, out: &mut OutputDir) -> CliResult<()> {
    let (m, _) = matrix_system(cfg)?;
    let inst = GaussianInstrument::new(m.observable.clone(), strength(cfg.kappa)?, cfg.dt)?;
    let lattice = RecordLattice::covering(&inst, cfg.lattice.span_sigmas, cfg.lattice.points)?;
    let dist = enumerate_record_distribution(
        &m.initial_state,
        &inst,
        &m.hamiltonian,
        cfg.hbar,
        cfg.n_steps,
        &lattice,
    )?;

    let mut marg = Table::new(["slice", "a", "probability"].map(String::from).to_vec());
    for (k, p) in dist.marginals.iter().enumerate() {
        for (j, &pj) in p.iter().enumerate() {
            marg.push(vec![
                (k + 1).to_string(),
                fmt_f64(lattice.value(j)),
                fmt_f64(pj),
            ]);
        }
    }
    out.write_csv("marginals.csv", &marg)?;

    if cfg.write_table {
        let mut cols: Vec<String> = vec!["index".into()];
        cols.extend((1..=cfg.n_steps).map(|k| format!("a_{k}")));
        cols.push("probability".into());
        let mut table = Table::new(cols);
        for (i, &p) in dist.probabilities.iter().enumerate() {
            let mut row = vec![i.to_string()];
            row.extend(dist.record(i).into_iter().map(fmt_f64));
            row.push(fmt_f64(p));
            table.push(row);
        }
        out.write_csv("records.csv", &table)?;
    }

    let moments: Vec<Value> = (0..cfg.n_steps)
        .map(|k| {
            let (mean, var) = dist.marginal_moments(k);
            json!({"slice": k + 1, "mean": mean, "variance": var})
        })
        .collect();
    out.write_json(
        "summary.json",
        json!({
            "total_probability": dist.total,
            "completeness_defect": completeness_defect(&inst, &lattice),
            "record_sigma": inst.record_sigma(),
            "lattice": {
                "a_min": lattice.value(0),
                "spacing": lattice.spacing(),
                "points": lattice.len(),
                "span_sigmas": lattice.span_in_sigmas(&inst),
            },
            "moments": moments,
        }),
    )?;
    Ok(())
}

pub fn free_particle(cfg: &SimConfig, out: &mut OutputDir) -> CliResult<()> {
    let SystemSpec::Grid(g) = &cfg.system else {
        return Err(CliError::config(
            "system",
            "mode free-particle needs a grid system",
        ));
    };
    let params = FreeParticleParams::new(g.mass, strength(cfg.kappa)?, cfg.hbar)?;
    let initial = GaussianState::pure(g.mean_q, g.mean_p, g.var_q, g.cov_qp, cfg.hbar)?;
    let report = grid_vs_oracle(
        &params,
        GridConfig {
            points: g.points,
            box_len: g.box_len,
        },
        &initial,
        cfg.dt,
        cfg.n_steps,
        cfg.master_seed,
        &cfg.seeds,
        cfg.save_stride,
    )?;

    let cols = [
        "seed",
        "step",
        "t",
        "grid_mean_q",
        "grid_mean_p",
        "grid_var_q",
        "grid_var_p",
        "oracle_mean_q",
        "oracle_mean_p",
        "oracle_var_q",
        "oracle_cov_qp",
        "oracle_var_p",
        "dev_mean_q",
        "dev_mean_p",
        "dev_var_q",
        "dev_var_p",
        "edge_mass",
    ];
    let mut table = Table::new(cols.map(String::from).to_vec());
    for r in &report.rows {
        table.push(vec![
            r.seed_index.to_string(),
            r.step.to_string(),
            fmt_f64(r.t),
            fmt_f64(r.grid.mean_q),
            fmt_f64(r.grid.mean_p),
            fmt_f64(r.grid.var_q),
            fmt_f64(r.grid.var_p),
            fmt_f64(r.oracle.mean_q),
            fmt_f64(r.oracle.mean_p),
            fmt_f64(r.oracle.cov.qq),
            fmt_f64(r.oracle.cov.qp),
            fmt_f64(r.oracle.cov.pp),
            fmt_f64(r.dev_mean_q),
            fmt_f64(r.dev_mean_p),
            fmt_f64(r.dev_var_q),
            fmt_f64(r.dev_var_p),
            fmt_f64(r.edge_mass),
        ]);
    }
    out.write_csv("report.csv", &table)?;

    let max = |f: fn(&contmeas::gaussian_oracle::ComparisonRow<f64>) -> f64| {
        report.rows.iter().map(f).fold(0.0, f64::max)
    };
    let stationary = match report.stationary {
        Some(s) => json!({
            "var_q": s.cov.qq,
            "cov_qp": s.cov.qp,
            "var_p": s.cov.pp,
            "residual": s.residual,
            "localization_rate": localization_rate(&params)?,
        }),
        None => Value::Null,
    };
    out.write_json(
        "summary.json",
        json!({
            "stationary": stationary,
            "max_dev_mean_q": max(|r| r.dev_mean_q),
            "max_dev_mean_p": max(|r| r.dev_mean_p),
            "max_dev_var_q": max(|r| r.dev_var_q),
            "max_dev_var_p": max(|r| r.dev_var_p),
            "max_edge_mass": report.max_edge_mass(),
        }),
    )?;
    Ok(())
}

pub fn dispatch(command: Command, cfg: &SimConfig, out: &mut OutputDir) -> CliResult<()> {
    match command {
        Command::RunTrajectory => run_trajectory(cfg, out),
        Command::RunEnsemble => run_ensemble_cmd(cfg, out),
        Command::RunMe => run_me_cmd(cfg, out),
        Command::RpiEnumerate => rpi_enumerate(cfg, out),
        Command::FreeParticle => free_particle(cfg, out),
        Command::CompareEnsemble => compare_ensemble(cfg, out),
    }
}
