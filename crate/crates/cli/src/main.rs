use std::path::PathBuf;
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Parser, Subcommand};
use contmeas_cli::output::{OutputDir, RunHeader};
use contmeas_cli::run::dispatch;
use contmeas_cli::{load_config, CliError, Command, Overrides};
use serde_json::{json, Value};

#[derive(Parser, Debug)]
#[command(
    name = "contmeas",
    version,
    about = "Selective continuous measurement simulations"
)]
struct Cli {
    /// JSON run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; overrides `master_seed` in the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; overrides `output` in the configuration.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Worker threads. Outputs do not depend on this value.
    #[arg(long, global = true, default_value_t = default_jobs())]
    jobs: usize,
    /// Record wall-clock start and end times in the manifest.
    #[arg(long, global = true)]
    timestamps: bool,
    #[command(subcommand)]
    command: Sub,
}

fn default_jobs() -> usize {
    std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1)
}

#[derive(Subcommand, Debug)]
enum Sub {
    /// One trajectory (nonlinear, or linear replay of a record file).
    RunTrajectory,
    /// Many nonlinear trajectories and their average density matrix.
    RunEnsemble,
    /// Master-equation solution on the trajectory save grid.
    RunMe,
    /// Exhaustive record distribution on a lattice.
    RpiEnumerate,
    /// Grid simulation of a monitored free particle against the moment equations.
    FreeParticle {
        #[arg(long)]
        mass: Option<f64>,
        #[arg(long)]
        kappa: Option<f64>,
        #[arg(long)]
        hbar: Option<f64>,
        #[arg(long)]
        grid_points: Option<u64>,
        #[arg(long = "box")]
        box_len: Option<f64>,
        #[arg(long)]
        dt: Option<f64>,
        #[arg(long)]
        steps: Option<u64>,
        /// Comma-separated stream indices.
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
        /// Initial position variance.
        #[arg(long)]
        initial_var: Option<f64>,
        #[arg(long)]
        save_stride: Option<u64>,
    },
    /// Ensemble average against the master equation, as a trace-distance series.
    CompareEnsemble,
}

fn unix_now() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let mut overrides = Overrides {
        seed: cli.seed,
        out_dir: cli.out_dir.clone(),
        fields: Vec::new(),
    };
    let command = match &cli.command {
        Sub::RunTrajectory => Command::RunTrajectory,
        Sub::RunEnsemble => Command::RunEnsemble,
        Sub::RunMe => Command::RunMe,
        Sub::RpiEnumerate => Command::RpiEnumerate,
        Sub::CompareEnsemble => Command::CompareEnsemble,
        Sub::FreeParticle {
            mass,
            kappa,
            hbar,
            grid_points,
            box_len,
            dt,
            steps,
            seeds,
            initial_var,
            save_stride,
        } => {
            let f = &mut overrides.fields;
            let mut put = |k: &str, v: Option<Value>| {
                if let Some(v) = v {
                    f.push((k.to_owned(), v));
                }
            };
            put("system.mass", mass.map(Value::from));
            put("kappa", kappa.map(Value::from));
            put("hbar", hbar.map(Value::from));
            put("system.grid.points", grid_points.map(Value::from));
            put("system.grid.box", box_len.map(Value::from));
            put("dt", dt.map(Value::from));
            put("n_steps", steps.map(Value::from));
            put("seeds", seeds.clone().map(Value::from));
            put("system.initial.var_q", initial_var.map(Value::from));
            put("save_stride", save_stride.map(Value::from));
            Command::FreeParticle
        }
    };

    let cfg = match load_config(command, cli.config.as_deref(), &overrides) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    if cli.jobs == 0 {
        eprintln!("error: --jobs must be at least 1");
        return ExitCode::from(2);
    }

    let header = RunHeader {
        command: command.name().to_owned(),
        master_seed: cfg.master_seed,
        config: cfg.echo(),
    };
    let mut out = match OutputDir::create(&cfg.output, header) {
        Ok(o) => o,
        Err(e) => {
            eprintln!("error: cannot create {}: {e}", cfg.output.display());
            return ExitCode::from(2);
        }
    };
    let started = unix_now();
    let pool = match rayon::ThreadPoolBuilder::new()
        .num_threads(cli.jobs)
        .build()
    {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: thread pool: {e}");
            return ExitCode::from(3);
        }
    };
    let result: Result<(), CliError> = pool.install(|| dispatch(command, &cfg, &mut out));
    let timestamps = cli
        .timestamps
        .then(|| json!({"started_unix": started, "finished_unix": unix_now()}));

    let code = match &result {
        Ok(()) => 0,
        Err(e) => e.exit_code(),
    };
    let message = result.as_ref().err().map(|e| e.to_string());
    if let Err(e) = out.finish(message.as_deref().map(|m| (m, code)), timestamps) {
        eprintln!("error: cannot write manifest: {e}");
        return ExitCode::from(2);
    }
    if let Some(m) = message {
        eprintln!("error: {m}");
    }
    ExitCode::from(code as u8)
}
