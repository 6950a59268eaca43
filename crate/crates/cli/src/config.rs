//! JSON run configuration.
//!
//! Validation collects every problem before failing, each tagged with the
//! dotted path of the offending field.

use std::fmt;
use std::path::{Path, PathBuf};

use contmeas::hilbert::{HermitianOperator, QuantumState, StateVector};
use contmeas::scalar::C;
use contmeas::unraveling::{NonlinearScheme, NormMode, RecordCoefficient};
use nalgebra::DMatrix;
use num_complex::Complex;
use serde_json::{json, Map, Value};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Issue {
    pub path: String,
    pub message: String,
}

impl fmt::Display for Issue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunMode {
    Nonlinear,
    LinearReplay,
    RpiEnumerate,
    Me,
    FreeParticle,
    Compare,
}

impl RunMode {
    pub const ALL: [RunMode; 6] = [
        RunMode::Nonlinear,
        RunMode::LinearReplay,
        RunMode::RpiEnumerate,
        RunMode::Me,
        RunMode::FreeParticle,
        RunMode::Compare,
    ];

    pub fn name(self) -> &'static str {
        match self {
            RunMode::Nonlinear => "nonlinear",
            RunMode::LinearReplay => "linear-replay",
            RunMode::RpiEnumerate => "rpi-enumerate",
            RunMode::Me => "me",
            RunMode::FreeParticle => "free-particle",
            RunMode::Compare => "compare",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.name() == s)
    }
}

#[derive(Debug, Clone)]
pub struct MatrixSpec {
    pub hamiltonian: HermitianOperator<f64>,
    pub observable: HermitianOperator<f64>,
    pub initial_state: StateVector<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub points: usize,
    pub box_len: f64,
    pub mass: f64,
    pub mean_q: f64,
    pub mean_p: f64,
    pub var_q: f64,
    pub cov_qp: f64,
}

#[derive(Debug, Clone)]
#[allow(clippy::large_enum_variant)]
pub enum SystemSpec {
    Matrix(MatrixSpec),
    Grid(GridSpec),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatticeSpec {
    pub span_sigmas: f64,
    pub points: usize,
}

#[derive(Debug, Clone)]
pub struct SimConfig {
    pub mode: RunMode,
    pub system: SystemSpec,
    /// Zero switches the measurement off.
    pub kappa: f64,
    pub hbar: f64,
    pub dt: f64,
    pub n_steps: usize,
    pub n_trajectories: usize,
    pub master_seed: u64,
    pub save_stride: usize,
    pub output: PathBuf,
    pub norm: NormMode,
    pub scheme: NonlinearScheme,
    pub coefficient: RecordCoefficient,
    pub record_file: Option<PathBuf>,
    pub lattice: LatticeSpec,
    pub write_table: bool,
    pub me_dt: Option<f64>,
    pub seeds: Vec<u64>,
}

const TOP_KEYS: &[&str] = &[
    "mode",
    "system",
    "kappa",
    "hbar",
    "dt",
    "n_steps",
    "n_trajectories",
    "master_seed",
    "save_stride",
    "output",
    "norm",
    "scheme",
    "coefficient",
    "record_file",
    "lattice",
    "write_table",
    "me_dt",
    "seeds",
];

/// Field reader that records issues instead of returning early.
struct Reader<'a> {
    obj: &'a Map<String, Value>,
    prefix: String,
    issues: &'a mut Vec<Issue>,
}

impl<'a> Reader<'a> {
    fn path(&self, key: &str) -> String {
        if self.prefix.is_empty() {
            key.to_owned()
        } else {
            format!("{}.{key}", self.prefix)
        }
    }

    fn issue(&mut self, key: &str, message: impl Into<String>) {
        let path = self.path(key);
        self.issues.push(Issue {
            path,
            message: message.into(),
        });
    }

    fn unknown_keys(&mut self, allowed: &[&str]) {
        let extra: Vec<String> = self
            .obj
            .keys()
            .filter(|k| !allowed.contains(&k.as_str()))
            .cloned()
            .collect();
        for k in extra {
            self.issue(&k, "unknown field");
        }
    }

    fn number(&mut self, key: &str) -> Option<Option<f64>> {
        match self.obj.get(key) {
            None | Some(Value::Null) => Some(None),
            Some(Value::Number(n)) => Some(n.as_f64()),
            Some(_) => {
                self.issue(key, "type mismatch: expected a number");
                None
            }
        }
    }

    fn real(
        &mut self,
        key: &str,
        default: Option<f64>,
        check: fn(f64) -> bool,
        constraint: &str,
    ) -> f64 {
        match self.number(key) {
            Some(Some(v)) if v.is_finite() && check(v) => v,
            Some(Some(_)) => {
                self.issue(key, format!("must be {constraint}"));
                f64::NAN
            }
            Some(None) => match default {
                Some(d) => d,
                None => {
                    self.issue(key, "missing field");
                    f64::NAN
                }
            },
            None => f64::NAN,
        }
    }

    fn count(&mut self, key: &str, default: Option<u64>, min: u64) -> u64 {
        match self.obj.get(key) {
            None | Some(Value::Null) => default.unwrap_or_else(|| {
                self.issue(key, "missing field");
                0
            }),
            Some(Value::Number(n)) => match n.as_u64() {
                Some(v) if v >= min => v,
                _ => {
                    let c = if min == 0 {
                        "a non-negative integer".to_owned()
                    } else {
                        format!("an integer ≥ {min}")
                    };
                    self.issue(key, format!("must be {c}"));
                    0
                }
            },
            Some(_) => {
                self.issue(key, "type mismatch: expected an integer");
                0
            }
        }
    }

    fn string(&mut self, key: &str) -> Option<&'a str> {
        match self.obj.get(key) {
            None | Some(Value::Null) => None,
            Some(Value::String(s)) => Some(s.as_str()),
            Some(_) => {
                self.issue(key, "type mismatch: expected a string");
                None
            }
        }
    }

    fn boolean(&mut self, key: &str, default: bool) -> bool {
        match self.obj.get(key) {
            None | Some(Value::Null) => default,
            Some(Value::Bool(b)) => *b,
            Some(_) => {
                self.issue(key, "type mismatch: expected true or false");
                default
            }
        }
    }

    fn object(&mut self, key: &str) -> Option<&'a Map<String, Value>> {
        match self.obj.get(key) {
            None | Some(Value::Null) => None,
            Some(Value::Object(m)) => Some(m),
            Some(_) => {
                self.issue(key, "type mismatch: expected an object");
                None
            }
        }
    }

    fn child<'b>(&'b mut self, key: &str, obj: &'b Map<String, Value>) -> Reader<'b> {
        let prefix = self.path(key);
        Reader {
            obj,
            prefix,
            issues: self.issues,
        }
    }
}

fn positive(v: f64) -> bool {
    v > 0.0
}

fn non_negative(v: f64) -> bool {
    v >= 0.0
}

fn any(_: f64) -> bool {
    true
}

fn complex_entry(v: &Value) -> Option<C<f64>> {
    match v {
        Value::Number(n) => n.as_f64().map(|re| Complex::new(re, 0.0)),
        Value::Array(pair) if pair.len() == 2 => {
            Some(Complex::new(pair[0].as_f64()?, pair[1].as_f64()?))
        }
        _ => None,
    }
}

/// Row-major nested array of `[re, im]` pairs (bare numbers are real entries).
pub fn parse_matrix(v: &Value) -> Result<DMatrix<C<f64>>, String> {
    let rows = v.as_array().ok_or("expected a nested array of rows")?;
    let d = rows.len();
    let mut out = DMatrix::zeros(d, d);
    for (i, row) in rows.iter().enumerate() {
        let row = row
            .as_array()
            .ok_or_else(|| format!("row {i} is not an array"))?;
        if row.len() != d {
            return Err(format!("row {i} has {} entries, expected {d}", row.len()));
        }
        for (j, e) in row.iter().enumerate() {
            out[(i, j)] = complex_entry(e)
                .ok_or_else(|| format!("entry ({i}, {j}) is not a number or [re, im] pair"))?;
        }
    }
    Ok(out)
}

fn builtin_operator(name: &str) -> Option<HermitianOperator<f64>> {
    Some(match name {
        "sigma_x" => HermitianOperator::sigma_x(),
        "sigma_y" => HermitianOperator::sigma_y(),
        "sigma_z" => HermitianOperator::sigma_z(),
        "zero" => HermitianOperator::zero(2),
        "identity" => HermitianOperator::identity(2),
        _ => return None,
    })
}

/// Operator given as a builtin name, a JSON file path (relative to `base`) or an inline matrix.
fn load_operator(v: &Value, base: &Path) -> Result<HermitianOperator<f64>, String> {
    let matrix = match v {
        Value::String(s) => {
            if let Some(op) = builtin_operator(s) {
                return Ok(op);
            }
            let path = base.join(s);
            let text = std::fs::read_to_string(&path)
                .map_err(|e| format!("cannot read {}: {e}", path.display()))?;
            let parsed: Value =
                serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))?;
            parse_matrix(&parsed)?
        }
        other => parse_matrix(other)?,
    };
    HermitianOperator::new(matrix).map_err(|e| match e {
        contmeas::Error::NotHermitian {
            row,
            col,
            asymmetry,
        } => {
            format!("not Hermitian: max asymmetry |M - M†| = {asymmetry:e} at entry ({row}, {col})")
        }
        other => other.to_string(),
    })
}

fn load_state(v: &Value) -> Result<StateVector<f64>, String> {
    let entries = v.as_array().ok_or("expected an array of amplitudes")?;
    let amps = entries
        .iter()
        .enumerate()
        .map(|(i, e)| {
            complex_entry(e)
                .ok_or_else(|| format!("amplitude {i} is not a number or [re, im] pair"))
        })
        .collect::<Result<Vec<_>, _>>()?;
    StateVector::new(amps).map_err(|e| e.to_string())
}

fn parse_system(r: &mut Reader<'_>, key: &str, base: &Path) -> Option<SystemSpec> {
    let Some(obj) = r.object(key) else {
        r.issue(key, "missing field");
        return None;
    };
    let mut s = r.child(key, obj);
    if let Some(grid) = s.object("grid") {
        s.unknown_keys(&["grid", "mass", "initial"]);
        let mut g = s.child("grid", grid);
        g.unknown_keys(&["points", "box"]);
        let points = g.count("points", None, 2) as usize;
        if points >= 2 && !points.is_power_of_two() {
            g.issue("points", "must be a power of two");
        }
        let box_len = g.real("box", None, positive, "positive");
        let mass = s.real("mass", Some(1.0), positive, "positive");
        let (mut mean_q, mut mean_p, mut var_q, mut cov_qp) = (0.0, 0.0, 1.0, 0.0);
        if let Some(init) = s.object("initial") {
            let mut i = s.child("initial", init);
            i.unknown_keys(&["mean_q", "mean_p", "var_q", "cov_qp"]);
            mean_q = i.real("mean_q", Some(0.0), any, "finite");
            mean_p = i.real("mean_p", Some(0.0), any, "finite");
            var_q = i.real("var_q", Some(1.0), positive, "positive");
            cov_qp = i.real("cov_qp", Some(0.0), any, "finite");
        }
        return Some(SystemSpec::Grid(GridSpec {
            points,
            box_len,
            mass,
            mean_q,
            mean_p,
            var_q,
            cov_qp,
        }));
    }

    s.unknown_keys(&["dimension", "hamiltonian", "observable", "initial_state"]);
    let dim = s.count("dimension", None, 2) as usize;
    let op = |s: &mut Reader<'_>, k: &str| -> Option<HermitianOperator<f64>> {
        match s.obj.get(k) {
            None => {
                s.issue(k, "missing field");
                None
            }
            Some(v) => match load_operator(v, base) {
                Ok(op) => Some(op),
                Err(msg) => {
                    s.issue(k, msg);
                    None
                }
            },
        }
    };
    let h = op(&mut s, "hamiltonian");
    let a = op(&mut s, "observable");
    let psi = match s.obj.get("initial_state") {
        None => {
            s.issue("initial_state", "missing field");
            None
        }
        Some(v) => load_state(v).map_err(|m| s.issue("initial_state", m)).ok(),
    };
    for (name, d) in [
        ("hamiltonian", h.as_ref().map(|o| o.dim())),
        ("observable", a.as_ref().map(|o| o.dim())),
        ("initial_state", psi.as_ref().map(|p| p.dim())),
    ] {
        if let Some(d) = d {
            if dim >= 2 && d != dim {
                s.issue(
                    name,
                    format!("dimension {d} does not match `dimension` = {dim}"),
                );
            }
        }
    }
    Some(SystemSpec::Matrix(MatrixSpec {
        hamiltonian: h?,
        observable: a?,
        initial_state: psi?,
    }))
}

/// Parses and validates a configuration document.
///
/// `base` resolves relative operator and record paths. `mode_hint` supplies the
/// mode when the document omits it; a conflicting explicit mode is an error.
pub fn parse_config_value(
    doc: &Value,
    base: &Path,
    mode_hint: Option<RunMode>,
) -> Result<SimConfig, Vec<Issue>> {
    let mut issues = Vec::new();
    let Some(obj) = doc.as_object() else {
        return Err(vec![Issue {
            path: "$".into(),
            message: "expected a JSON object".into(),
        }]);
    };
    let mut r = Reader {
        obj,
        prefix: String::new(),
        issues: &mut issues,
    };
    r.unknown_keys(TOP_KEYS);

    let mode = match (r.string("mode"), mode_hint) {
        (Some(s), hint) => match RunMode::parse(s) {
            Some(m) => {
                if let Some(h) = hint {
                    let compatible =
                        m == h || matches!((m, h), (RunMode::LinearReplay, RunMode::Nonlinear));
                    if !compatible {
                        r.issue(
                            "mode",
                            format!("`{s}` conflicts with the `{}` subcommand", h.name()),
                        );
                    }
                }
                m
            }
            None => {
                let names: Vec<_> = RunMode::ALL.iter().map(|m| m.name()).collect();
                r.issue("mode", format!("must be one of {}", names.join(", ")));
                hint.unwrap_or(RunMode::Nonlinear)
            }
        },
        (None, Some(h)) => h,
        (None, None) => {
            r.issue("mode", "missing field");
            RunMode::Nonlinear
        }
    };

    let system = parse_system(&mut r, "system", base);
    let kappa = r.real(
        "kappa",
        None,
        non_negative,
        "positive (or 0 to switch the measurement off)",
    );
    let hbar = r.real("hbar", Some(1.0), positive, "positive");
    let dt = r.real("dt", None, positive, "positive");
    let n_steps = r.count("n_steps", None, 0) as usize;
    let n_trajectories = r.count("n_trajectories", Some(1), 1) as usize;
    let master_seed = r.count("master_seed", Some(0), 0);
    let save_stride = r.count("save_stride", Some(1), 1) as usize;
    let output = PathBuf::from(r.string("output").unwrap_or("out"));

    let norm = match r.string("norm") {
        None | Some("renorm") => NormMode::Renormalize,
        Some("raw") => NormMode::Raw,
        Some(_) => {
            r.issue("norm", "must be one of renorm, raw");
            NormMode::Renormalize
        }
    };
    let scheme = match r.string("scheme") {
        None | Some("euler-maruyama") => NonlinearScheme::EulerMaruyama,
        Some("kraus-split") => NonlinearScheme::KrausSplit,
        Some(_) => {
            r.issue("scheme", "must be one of euler-maruyama, kraus-split");
            NonlinearScheme::EulerMaruyama
        }
    };
    let coefficient = match r.string("coefficient") {
        None | Some("inverse-two-sqrt-kappa") => RecordCoefficient::InverseTwoSqrtKappa,
        Some("literal-inverse-two-kappa") => RecordCoefficient::LiteralInverseTwoKappa,
        Some(_) => {
            r.issue(
                "coefficient",
                "must be one of inverse-two-sqrt-kappa, literal-inverse-two-kappa",
            );
            RecordCoefficient::InverseTwoSqrtKappa
        }
    };
    let record_file = r.string("record_file").map(|s| base.join(s));
    let lattice = match r.object("lattice") {
        Some(l) => {
            let mut lr = r.child("lattice", l);
            lr.unknown_keys(&["span_sigmas", "points"]);
            LatticeSpec {
                span_sigmas: lr.real("span_sigmas", Some(6.0), positive, "positive"),
                points: lr.count("points", Some(101), 2) as usize,
            }
        }
        None => LatticeSpec {
            span_sigmas: 6.0,
            points: 101,
        },
    };
    let write_table = r.boolean("write_table", false);
    let me_dt = match r.number("me_dt") {
        Some(Some(v)) if v > 0.0 && v.is_finite() => Some(v),
        Some(Some(_)) => {
            r.issue("me_dt", "must be positive");
            None
        }
        _ => None,
    };
    let seeds = match obj.get("seeds") {
        None | Some(Value::Null) => vec![0],
        Some(Value::Array(a)) if !a.is_empty() && a.iter().all(|v| v.as_u64().is_some()) => {
            a.iter().filter_map(Value::as_u64).collect()
        }
        Some(_) => {
            r.issue(
                "seeds",
                "must be a non-empty array of non-negative integers",
            );
            vec![0]
        }
    };

    if mode == RunMode::LinearReplay && record_file.is_none() {
        r.issue("record_file", "required for mode linear-replay");
    }
    if matches!(mode, RunMode::LinearReplay | RunMode::RpiEnumerate) && kappa == 0.0 {
        r.issue("kappa", "must be positive for this mode");
    }
    match (&system, mode) {
        (Some(SystemSpec::Grid(_)), RunMode::FreeParticle | RunMode::Nonlinear) => {}
        (Some(SystemSpec::Grid(_)), m) => r.issue(
            "system",
            format!("grid systems are not supported in mode {}", m.name()),
        ),
        (Some(SystemSpec::Matrix(_)), RunMode::FreeParticle) => {
            r.issue("system", "mode free-particle needs a grid system")
        }
        _ => {}
    }

    if !issues.is_empty() {
        return Err(issues);
    }
    Ok(SimConfig {
        mode,
        system: system.expect("validated"),
        kappa,
        hbar,
        dt,
        n_steps,
        n_trajectories,
        master_seed,
        save_stride,
        output,
        norm,
        scheme,
        coefficient,
        record_file,
        lattice,
        write_table,
        me_dt,
        seeds,
    })
}

/// Reads and validates a configuration file.
pub fn parse_config(path: &Path, mode_hint: Option<RunMode>) -> Result<SimConfig, Vec<Issue>> {
    let text = std::fs::read_to_string(path).map_err(|e| {
        vec![Issue {
            path: "$".into(),
            message: format!("cannot read {}: {e}", path.display()),
        }]
    })?;
    let doc: Value = serde_json::from_str(&text).map_err(|e| {
        vec![Issue {
            path: "$".into(),
            message: format!("malformed JSON: {e}"),
        }]
    })?;
    let base = path.parent().unwrap_or(Path::new("."));
    parse_config_value(&doc, base, mode_hint)
}

fn matrix_json(m: &DMatrix<C<f64>>) -> Value {
    Value::Array(
        (0..m.nrows())
            .map(|i| {
                Value::Array(
                    (0..m.ncols())
                        .map(|j| json!([m[(i, j)].re, m[(i, j)].im]))
                        .collect(),
                )
            })
            .collect(),
    )
}

impl SimConfig {
    /// Fully resolved configuration, operators inlined; enough to rerun.
    pub fn echo(&self) -> Value {
        let system = match &self.system {
            SystemSpec::Matrix(m) => json!({
                "dimension": m.initial_state.dim(),
                "hamiltonian": matrix_json(m.hamiltonian.matrix()),
                "observable": matrix_json(m.observable.matrix()),
                "initial_state": m.initial_state.amplitudes().iter().map(|z| json!([z.re, z.im])).collect::<Vec<_>>(),
            }),
            SystemSpec::Grid(g) => json!({
                "grid": {"points": g.points, "box": g.box_len},
                "mass": g.mass,
                "initial": {"mean_q": g.mean_q, "mean_p": g.mean_p, "var_q": g.var_q, "cov_qp": g.cov_qp},
            }),
        };
        let mut v = json!({
            "mode": self.mode.name(),
            "system": system,
            "kappa": self.kappa,
            "hbar": self.hbar,
            "dt": self.dt,
            "n_steps": self.n_steps,
            "n_trajectories": self.n_trajectories,
            "master_seed": self.master_seed,
            "save_stride": self.save_stride,
            "norm": match self.norm { NormMode::Renormalize => "renorm", NormMode::Raw => "raw" },
            "scheme": match self.scheme {
                NonlinearScheme::EulerMaruyama => "euler-maruyama",
                NonlinearScheme::KrausSplit => "kraus-split",
            },
            "coefficient": match self.coefficient {
                RecordCoefficient::InverseTwoSqrtKappa => "inverse-two-sqrt-kappa",
                RecordCoefficient::LiteralInverseTwoKappa => "literal-inverse-two-kappa",
            },
            "lattice": {"span_sigmas": self.lattice.span_sigmas, "points": self.lattice.points},
            "write_table": self.write_table,
            "seeds": self.seeds,
        });
        let m = v.as_object_mut().expect("object");
        if let Some(p) = &self.record_file {
            m.insert("record_file".into(), Value::String(p.display().to_string()));
        }
        if let Some(me) = self.me_dt {
            m.insert("me_dt".into(), json!(me));
        }
        v
    }
}
