//! Line-oriented experiment configuration: `[section]` headers,
//! `key = value` pairs, `#` comments. Vectors are comma-separated
//! numerals; matrices are `diag: ...`, `rows: r1; r2; ...`, or (for the
//! problem matrix only) `eigs: ...` paired with `rotation_seed`.
//!
//! Every parse error carries the 1-based line number it came from.

use std::collections::BTreeMap;
use std::fmt;

use nalgebra::{DMatrix, DVector};
use vrpg_core::instances::{make_quadratic_instance, make_state_noise_instance, ProblemInstance};
use vrpg_core::prox::{ConstraintSet, Regularizer};
use vrpg_core::seeding::rng_from_seed;
use vrpg_core::vrpg::Schedule;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("line {line}: {message}")]
pub struct ConfigError {
    pub line: usize,
    pub message: String,
}

fn err<T>(line: usize, message: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError {
        line,
        message: message.into(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub enum MatrixSpec {
    Diag(Vec<f64>),
    Rows(Vec<Vec<f64>>),
    /// Eigenvalues of a rotated diagonal matrix; the rotation is drawn
    /// from `rotation_seed`.
    Eigs(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub enum NoiseSpec {
    Gaussian,
    /// Gradient noise with a state-dependent multiplicative component.
    StateScaled {
        scale_dir: Option<MatrixSpec>,
        level: f64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct InstanceSpec {
    pub label: String,
    pub matrix: MatrixSpec,
    pub rotation_seed: u64,
    pub theta: Vec<f64>,
    pub sigma: MatrixSpec,
    pub noise: NoiseSpec,
}

#[derive(Debug, Clone, PartialEq)]
pub enum RegSpec {
    None,
    Orthant,
    Box { lower: Vec<f64>, upper: Vec<f64> },
    Ball2 { center: Vec<f64>, radius: f64 },
    Simplex { scale: f64 },
    L1 { weight: f64 },
}

impl RegSpec {
    /// Short identifier used in CSV rows.
    pub fn id(&self) -> &'static str {
        match self {
            Self::None => "none",
            Self::Orthant => "orthant",
            Self::Box { .. } => "box",
            Self::Ball2 { .. } => "ball2",
            Self::Simplex { .. } => "simplex",
            Self::L1 { .. } => "l1",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Vrpg,
    SgdPr,
    MEstimator,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Vrpg => "vrpg",
            Self::SgdPr => "sgd_pr",
            Self::MEstimator => "m_estimator",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ScheduleSpec {
    Constant,
    Doubling { t0: usize },
}

impl ScheduleSpec {
    pub fn to_core(&self) -> Schedule {
        match self {
            Self::Constant => Schedule::Constant,
            Self::Doubling { t0 } => Schedule::Doubling { t0: *t0 },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSpec {
    pub method: Method,
    pub n_grid: Vec<usize>,
    pub replications: usize,
    pub master_seed: u64,
    pub schedule: ScheduleSpec,
    pub log_base: Option<f64>,
    pub out: Option<String>,
    pub tol: f64,
    /// Anchor distance used by the contraction and Lipschitz verifiers.
    pub anchor_dist: f64,
    /// Replications for the benchmark term inside the end-to-end bound.
    pub benchmark_reps: usize,
    /// Step schedule for the averaged-SGD baseline: `c / k^omega`.
    pub sgd_step_c: f64,
    pub sgd_omega: f64,
    pub sgd_burn_in: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub instance: InstanceSpec,
    pub regularizer: RegSpec,
    pub run: RunSpec,
}

// ---------------------------------------------------------------- parsing

struct Section {
    header_line: usize,
    entries: Vec<(String, String, usize)>,
}

fn split_sections(text: &str) -> Result<BTreeMap<String, Section>, ConfigError> {
    let mut sections: BTreeMap<String, Section> = BTreeMap::new();
    let mut current: Option<String> = None;
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = match raw.find('#') {
            Some(pos) => &raw[..pos],
            None => raw,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        if let Some(name) = line.strip_prefix('[') {
            let Some(name) = name.strip_suffix(']') else {
                return err(line_no, format!("malformed section header `{line}`"));
            };
            let name = name.trim().to_string();
            if sections.contains_key(&name) {
                return err(line_no, format!("duplicate section `[{name}]`"));
            }
            sections.insert(
                name.clone(),
                Section {
                    header_line: line_no,
                    entries: Vec::new(),
                },
            );
            current = Some(name);
            continue;
        }
        let Some(eq) = line.find('=') else {
            return err(line_no, format!("expected `key = value`, got `{line}`"));
        };
        let key = line[..eq].trim().to_string();
        let value = line[eq + 1..].trim().to_string();
        if key.is_empty() {
            return err(line_no, "empty key");
        }
        let Some(section) = current.as_ref() else {
            return err(line_no, format!("`{key}` appears before any [section] header"));
        };
        let section = sections.get_mut(section).expect("current section exists");
        if section.entries.iter().any(|(k, _, _)| k == &key) {
            return err(line_no, format!("duplicate key `{key}`"));
        }
        section.entries.push((key, value, line_no));
    }
    Ok(sections)
}

/// Typed accessor over one section's key/value pairs; tracks which keys
/// were consumed so leftovers can be reported as unknown.
struct Keys {
    entries: Vec<(String, String, usize)>,
    used: Vec<bool>,
}

impl Keys {
    fn new(section: Section) -> Self {
        let used = vec![false; section.entries.len()];
        Keys {
            entries: section.entries,
            used,
        }
    }

    fn raw(&mut self, key: &str) -> Option<(String, usize)> {
        for (i, (k, v, line)) in self.entries.iter().enumerate() {
            if k == key {
                self.used[i] = true;
                return Some((v.clone(), *line));
            }
        }
        None
    }

    fn finish(self, section: &str) -> Result<(), ConfigError> {
        for (i, (k, _, line)) in self.entries.iter().enumerate() {
            if !self.used[i] {
                return err(*line, format!("unknown key `{k}` in [{section}]"));
            }
        }
        Ok(())
    }
}

fn parse_f64(value: &str, key: &str, line: usize) -> Result<f64, ConfigError> {
    value
        .parse::<f64>()
        .map_err(|_| ConfigError {
            line,
            message: format!("`{key}` expects a number, got `{value}`"),
        })
}

fn parse_u64(value: &str, key: &str, line: usize) -> Result<u64, ConfigError> {
    value
        .parse::<u64>()
        .map_err(|_| ConfigError {
            line,
            message: format!("`{key}` expects a nonnegative integer, got `{value}`"),
        })
}

fn parse_usize(value: &str, key: &str, line: usize) -> Result<usize, ConfigError> {
    value
        .parse::<usize>()
        .map_err(|_| ConfigError {
            line,
            message: format!("`{key}` expects a nonnegative integer, got `{value}`"),
        })
}

fn parse_vec_f64(value: &str, key: &str, line: usize) -> Result<Vec<f64>, ConfigError> {
    value
        .split(',')
        .map(|s| parse_f64(s.trim(), key, line))
        .collect()
}

fn parse_vec_usize(value: &str, key: &str, line: usize) -> Result<Vec<usize>, ConfigError> {
    value
        .split(',')
        .map(|s| parse_usize(s.trim(), key, line))
        .collect()
}

fn parse_matrix(value: &str, key: &str, line: usize, allow_eigs: bool) -> Result<MatrixSpec, ConfigError> {
    if let Some(rest) = value.strip_prefix("diag:") {
        return Ok(MatrixSpec::Diag(parse_vec_f64(rest.trim(), key, line)?));
    }
    if let Some(rest) = value.strip_prefix("rows:") {
        let rows = rest
            .split(';')
            .map(|row| parse_vec_f64(row.trim(), key, line))
            .collect::<Result<Vec<_>, _>>()?;
        let width = rows.first().map(|r| r.len()).unwrap_or(0);
        if width == 0 || rows.iter().any(|r| r.len() != width) {
            return err(line, format!("`{key}` rows must be nonempty and equal-length"));
        }
        return Ok(MatrixSpec::Rows(rows));
    }
    if allow_eigs {
        if let Some(rest) = value.strip_prefix("eigs:") {
            return Ok(MatrixSpec::Eigs(parse_vec_f64(rest.trim(), key, line)?));
        }
        return err(
            line,
            format!("`{key}` expects `diag: ...`, `rows: ...`, or `eigs: ...`, got `{value}`"),
        );
    }
    err(line, format!("`{key}` expects `diag: ...` or `rows: ...`, got `{value}`"))
}

impl MatrixSpec {
    pub fn dim(&self) -> usize {
        match self {
            Self::Diag(v) | Self::Eigs(v) => v.len(),
            Self::Rows(rows) => rows.len(),
        }
    }

    /// Concrete symmetric matrix. `Eigs` is rotated by an orthogonal
    /// matrix drawn from `rotation_seed` (QR of a seeded Gaussian draw).
    pub fn build(&self, rotation_seed: u64) -> DMatrix<f64> {
        match self {
            Self::Diag(v) => DMatrix::from_diagonal(&DVector::from_vec(v.clone())),
            Self::Rows(rows) => {
                let d = rows.len();
                DMatrix::from_fn(d, rows[0].len(), |i, j| rows[i][j])
            }
            Self::Eigs(v) => {
                let d = v.len();
                let mut rng = rng_from_seed(rotation_seed);
                let gauss = DMatrix::from_fn(d, d, |_, _| -> f64 {
                    rand_distr::Distribution::sample(&rand_distr::StandardNormal, &mut rng)
                });
                let q = gauss.qr().q();
                let lambda = DMatrix::from_diagonal(&DVector::from_vec(v.clone()));
                &q * lambda * q.transpose()
            }
        }
    }
}

fn parse_instance(section: Section) -> Result<InstanceSpec, ConfigError> {
    let header = section.header_line;
    let mut keys = Keys::new(section);
    let label = keys
        .raw("label")
        .map(|(v, _)| v)
        .unwrap_or_else(|| "instance".to_string());
    let (a_val, a_line) = keys
        .raw("a")
        .ok_or_else(|| ConfigError {
            line: header,
            message: "missing required key `a` in [instance]".into(),
        })?;
    let matrix = parse_matrix(&a_val, "a", a_line, true)?;
    let rotation_seed = match keys.raw("rotation_seed") {
        Some((v, line)) => parse_u64(&v, "rotation_seed", line)?,
        None => 0,
    };
    let (theta_val, theta_line) = keys.raw("theta").ok_or_else(|| ConfigError {
        line: header,
        message: "missing required key `theta` in [instance]".into(),
    })?;
    let theta = parse_vec_f64(&theta_val, "theta", theta_line)?;
    let (sigma_val, sigma_line) = keys.raw("sigma").ok_or_else(|| ConfigError {
        line: header,
        message: "missing required key `sigma` in [instance]".into(),
    })?;
    let sigma = parse_matrix(&sigma_val, "sigma", sigma_line, false)?;

    let noise = match keys.raw("noise") {
        None => NoiseSpec::Gaussian,
        Some((v, line)) => match v.as_str() {
            "gaussian" => NoiseSpec::Gaussian,
            "state_scaled" => {
                let scale_dir = match keys.raw("scale_dir") {
                    Some((v, line)) => Some(parse_matrix(&v, "scale_dir", line, false)?),
                    None => None,
                };
                let level = match keys.raw("scale_level") {
                    Some((v, line)) => parse_f64(&v, "scale_level", line)?,
                    None => return err(line, "`noise = state_scaled` requires `scale_level`"),
                };
                NoiseSpec::StateScaled { scale_dir, level }
            }
            other => {
                return err(line, format!("`noise` must be gaussian or state_scaled, got `{other}`"))
            }
        },
    };

    let dim = matrix.dim();
    if theta.len() != dim {
        return err(
            theta_line,
            format!("`theta` has {} entries but `a` is {dim}-dimensional", theta.len()),
        );
    }
    if sigma.dim() != dim {
        return err(
            sigma_line,
            format!("`sigma` is {}-dimensional but `a` is {dim}-dimensional", sigma.dim()),
        );
    }
    keys.finish("instance")?;
    Ok(InstanceSpec {
        label,
        matrix,
        rotation_seed,
        theta,
        sigma,
        noise,
    })
}

fn parse_regularizer(section: Section, dim: usize) -> Result<RegSpec, ConfigError> {
    let header = section.header_line;
    let mut keys = Keys::new(section);
    let (kind, kind_line) = keys.raw("kind").ok_or_else(|| ConfigError {
        line: header,
        message: "missing required key `kind` in [regularizer]".into(),
    })?;
    let require_vec = |keys: &mut Keys, key: &str| -> Result<(Vec<f64>, usize), ConfigError> {
        let (v, line) = keys.raw(key).ok_or_else(|| ConfigError {
            line: kind_line,
            message: format!("`kind = {kind}` requires `{key}`"),
        })?;
        let vec = parse_vec_f64(&v, key, line)?;
        if vec.len() != dim {
            return err(line, format!("`{key}` has {} entries, instance is {dim}-dimensional", vec.len()));
        }
        Ok((vec, line))
    };
    let spec = match kind.as_str() {
        "none" => RegSpec::None,
        "orthant" => RegSpec::Orthant,
        "box" => {
            let (lower, _) = require_vec(&mut keys, "lower")?;
            let (upper, _) = require_vec(&mut keys, "upper")?;
            RegSpec::Box { lower, upper }
        }
        "ball2" => {
            let (center, _) = require_vec(&mut keys, "center")?;
            let (v, line) = keys.raw("radius").ok_or_else(|| ConfigError {
                line: kind_line,
                message: "`kind = ball2` requires `radius`".into(),
            })?;
            let radius = parse_f64(&v, "radius", line)?;
            // Build eagerly so value errors surface at the radius line.
            if let Err(e) = ConstraintSet::ball2(DVector::from_vec(center.clone()), radius) {
                return err(line, e.to_string());
            }
            RegSpec::Ball2 { center, radius }
        }
        "simplex" => {
            let scale = match keys.raw("scale") {
                Some((v, line)) => {
                    let scale = parse_f64(&v, "scale", line)?;
                    if let Err(e) = ConstraintSet::simplex(dim, scale) {
                        return err(line, e.to_string());
                    }
                    scale
                }
                None => 1.0,
            };
            RegSpec::Simplex { scale }
        }
        "l1" => {
            let (v, line) = keys.raw("weight").ok_or_else(|| ConfigError {
                line: kind_line,
                message: "`kind = l1` requires `weight`".into(),
            })?;
            let weight = parse_f64(&v, "weight", line)?;
            if let Err(e) = Regularizer::l1(weight) {
                return err(line, e.to_string());
            }
            RegSpec::L1 { weight }
        }
        other => return err(kind_line, format!("unknown regularizer kind `{other}`")),
    };
    keys.finish("regularizer")?;
    Ok(spec)
}

fn parse_run(section: Section) -> Result<RunSpec, ConfigError> {
    let header = section.header_line;
    let mut keys = Keys::new(section);
    let method = match keys.raw("method") {
        None => Method::Vrpg,
        Some((v, line)) => match v.as_str() {
            "vrpg" => Method::Vrpg,
            "sgd_pr" => Method::SgdPr,
            "m_estimator" => Method::MEstimator,
            other => {
                return err(line, format!("`method` must be vrpg, sgd_pr, or m_estimator, got `{other}`"))
            }
        },
    };
    let (grid_val, grid_line) = keys.raw("n_grid").ok_or_else(|| ConfigError {
        line: header,
        message: "missing required key `n_grid` in [run]".into(),
    })?;
    let n_grid = parse_vec_usize(&grid_val, "n_grid", grid_line)?;
    if n_grid.is_empty() || n_grid.contains(&0) {
        return err(grid_line, "`n_grid` must be a nonempty list of positive integers");
    }
    if n_grid.windows(2).any(|w| w[0] >= w[1]) {
        return err(grid_line, "`n_grid` must be strictly ascending");
    }
    let replications = match keys.raw("replications") {
        Some((v, line)) => {
            let r = parse_usize(&v, "replications", line)?;
            if r == 0 {
                return err(line, "`replications` must be >= 1");
            }
            r
        }
        None => 200,
    };
    let master_seed = match keys.raw("master_seed") {
        Some((v, line)) => parse_u64(&v, "master_seed", line)?,
        None => 0,
    };
    let schedule = match keys.raw("schedule") {
        None => ScheduleSpec::Constant,
        Some((v, line)) => match v.as_str() {
            "constant" => ScheduleSpec::Constant,
            "doubling" => {
                let (t0_val, t0_line) = keys.raw("t0").ok_or_else(|| ConfigError {
                    line,
                    message: "`schedule = doubling` requires `t0`".into(),
                })?;
                let t0 = parse_usize(&t0_val, "t0", t0_line)?;
                if t0 == 0 {
                    return err(t0_line, "`t0` must be >= 1");
                }
                ScheduleSpec::Doubling { t0 }
            }
            other => {
                return err(line, format!("`schedule` must be constant or doubling, got `{other}`"))
            }
        },
    };
    let log_base = match keys.raw("log_base") {
        Some((v, line)) => {
            let b = parse_f64(&v, "log_base", line)?;
            if b <= 1.0 {
                return err(line, "`log_base` must exceed 1");
            }
            Some(b)
        }
        None => None,
    };
    let out = keys.raw("out").map(|(v, _)| v);
    let tol = match keys.raw("tol") {
        Some((v, line)) => {
            let t = parse_f64(&v, "tol", line)?;
            if !(t > 0.0) {
                return err(line, "`tol` must be > 0");
            }
            t
        }
        None => 1e-10,
    };
    let anchor_dist = match keys.raw("anchor_dist") {
        Some((v, line)) => parse_f64(&v, "anchor_dist", line)?,
        None => 1.0,
    };
    let benchmark_reps = match keys.raw("benchmark_reps") {
        Some((v, line)) => {
            let r = parse_usize(&v, "benchmark_reps", line)?;
            if r < 2 {
                return err(line, "`benchmark_reps` must be >= 2");
            }
            r
        }
        None => 200,
    };
    let sgd_step_c = match keys.raw("sgd_step_c") {
        Some((v, line)) => parse_f64(&v, "sgd_step_c", line)?,
        None => 1.0,
    };
    let sgd_omega = match keys.raw("sgd_omega") {
        Some((v, line)) => parse_f64(&v, "sgd_omega", line)?,
        None => 0.6,
    };
    let sgd_burn_in = match keys.raw("sgd_burn_in") {
        Some((v, line)) => parse_usize(&v, "sgd_burn_in", line)?,
        None => 0,
    };
    keys.finish("run")?;
    Ok(RunSpec {
        method,
        n_grid,
        replications,
        master_seed,
        schedule,
        log_base,
        out,
        tol,
        anchor_dist,
        benchmark_reps,
        sgd_step_c,
        sgd_omega,
        sgd_burn_in,
    })
}

pub fn parse_config(text: &str) -> Result<ExperimentConfig, ConfigError> {
    let mut sections = split_sections(text)?;
    let known = ["instance", "regularizer", "run"];
    for (name, section) in &sections {
        if !known.contains(&name.as_str()) {
            return err(section.header_line, format!("unknown section `[{name}]`"));
        }
    }
    let instance_section = sections.remove("instance").ok_or(ConfigError {
        line: 1,
        message: "missing [instance] section".into(),
    })?;
    let instance = parse_instance(instance_section)?;
    let dim = instance.matrix.dim();
    let regularizer = match sections.remove("regularizer") {
        Some(s) => parse_regularizer(s, dim)?,
        None => RegSpec::None,
    };
    let run_section = sections.remove("run").ok_or(ConfigError {
        line: 1,
        message: "missing [run] section".into(),
    })?;
    let run = parse_run(run_section)?;
    Ok(ExperimentConfig {
        instance,
        regularizer,
        run,
    })
}

// ------------------------------------------------------------ serialization

fn fmt_vec(v: &[f64]) -> String {
    v.iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

fn fmt_matrix(m: &MatrixSpec) -> String {
    match m {
        MatrixSpec::Diag(v) => format!("diag: {}", fmt_vec(v)),
        MatrixSpec::Rows(rows) => format!(
            "rows: {}",
            rows.iter().map(|r| fmt_vec(r)).collect::<Vec<_>>().join("; ")
        ),
        MatrixSpec::Eigs(v) => format!("eigs: {}", fmt_vec(v)),
    }
}

/// Canonical text form; `parse_config(serialize_config(c)) == c`.
pub fn serialize_config(c: &ExperimentConfig) -> String {
    let mut out = String::new();
    let mut push = |line: String| {
        out.push_str(&line);
        out.push('\n');
    };
    push("[instance]".into());
    push(format!("label = {}", c.instance.label));
    push(format!("a = {}", fmt_matrix(&c.instance.matrix)));
    push(format!("rotation_seed = {}", c.instance.rotation_seed));
    push(format!("theta = {}", fmt_vec(&c.instance.theta)));
    push(format!("sigma = {}", fmt_matrix(&c.instance.sigma)));
    match &c.instance.noise {
        NoiseSpec::Gaussian => push("noise = gaussian".into()),
        NoiseSpec::StateScaled { scale_dir, level } => {
            push("noise = state_scaled".into());
            if let Some(m) = scale_dir {
                push(format!("scale_dir = {}", fmt_matrix(m)));
            }
            push(format!("scale_level = {level}"));
        }
    }
    push(String::new());
    push("[regularizer]".into());
    match &c.regularizer {
        RegSpec::None => push("kind = none".into()),
        RegSpec::Orthant => push("kind = orthant".into()),
        RegSpec::Box { lower, upper } => {
            push("kind = box".into());
            push(format!("lower = {}", fmt_vec(lower)));
            push(format!("upper = {}", fmt_vec(upper)));
        }
        RegSpec::Ball2 { center, radius } => {
            push("kind = ball2".into());
            push(format!("center = {}", fmt_vec(center)));
            push(format!("radius = {radius}"));
        }
        RegSpec::Simplex { scale } => {
            push("kind = simplex".into());
            push(format!("scale = {scale}"));
        }
        RegSpec::L1 { weight } => {
            push("kind = l1".into());
            push(format!("weight = {weight}"));
        }
    }
    push(String::new());
    push("[run]".into());
    push(format!("method = {}", c.run.method));
    push(format!(
        "n_grid = {}",
        c.run.n_grid.iter().map(|n| n.to_string()).collect::<Vec<_>>().join(",")
    ));
    push(format!("replications = {}", c.run.replications));
    push(format!("master_seed = {}", c.run.master_seed));
    match &c.run.schedule {
        ScheduleSpec::Constant => push("schedule = constant".into()),
        ScheduleSpec::Doubling { t0 } => {
            push("schedule = doubling".into());
            push(format!("t0 = {t0}"));
        }
    }
    if let Some(b) = c.run.log_base {
        push(format!("log_base = {b}"));
    }
    if let Some(o) = &c.run.out {
        push(format!("out = {o}"));
    }
    push(format!("tol = {}", c.run.tol));
    push(format!("anchor_dist = {}", c.run.anchor_dist));
    push(format!("benchmark_reps = {}", c.run.benchmark_reps));
    push(format!("sgd_step_c = {}", c.run.sgd_step_c));
    push(format!("sgd_omega = {}", c.run.sgd_omega));
    push(format!("sgd_burn_in = {}", c.run.sgd_burn_in));
    out
}

// ------------------------------------------------------------ construction

/// Builds the concrete problem instance from the parsed spec.
pub fn build_instance(spec: &InstanceSpec) -> Result<ProblemInstance, String> {
    let a = spec.matrix.build(spec.rotation_seed);
    let theta = DVector::from_vec(spec.theta.clone());
    let sigma = spec.sigma.build(0);
    let inst = match &spec.noise {
        NoiseSpec::Gaussian => make_quadratic_instance(a, theta, sigma),
        NoiseSpec::StateScaled { scale_dir, level } => {
            let dir = match scale_dir {
                Some(m) => m.build(0),
                None => DMatrix::identity(theta.len(), theta.len()),
            };
            make_state_noise_instance(a, theta, sigma, dir, *level)
        }
    }
    .map_err(|e| e.to_string())?;
    Ok(inst.with_label(spec.label.clone()))
}

/// Builds the concrete regularizer from the parsed spec.
pub fn build_regularizer(spec: &RegSpec, dim: usize) -> Result<Regularizer, String> {
    let set = match spec {
        RegSpec::None => return Ok(Regularizer::Zero),
        RegSpec::L1 { weight } => {
            return Regularizer::l1(*weight).map_err(|e| e.to_string());
        }
        RegSpec::Orthant => ConstraintSet::orthant(dim),
        RegSpec::Box { lower, upper } => ConstraintSet::boxed(
            DVector::from_vec(lower.clone()),
            DVector::from_vec(upper.clone()),
        )
        .map_err(|e| e.to_string())?,
        RegSpec::Ball2 { center, radius } => {
            ConstraintSet::ball2(DVector::from_vec(center.clone()), *radius)
                .map_err(|e| e.to_string())?
        }
        RegSpec::Simplex { scale } => {
            ConstraintSet::simplex(dim, *scale).map_err(|e| e.to_string())?
        }
    };
    Ok(Regularizer::Indicator(set))
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "\
# canonical instance, orthant constraint
[instance]
a = diag: 1,1,1,1,1
theta = 0.5,-0.5,1.0,-1.0,0.25
sigma = diag: 0.01,0.01,0.01,0.01,0.01

[regularizer]
kind = orthant

[run]
method = vrpg
n_grid = 1000,10000
replications = 5
master_seed = 17
";

    #[test]
    fn minimal_config_parses() {
        let c = parse_config(MINIMAL).unwrap();
        assert_eq!(c.run.n_grid, vec![1000, 10000]);
        assert_eq!(c.regularizer, RegSpec::Orthant);
        assert_eq!(c.instance.matrix.dim(), 5);
        let inst = build_instance(&c.instance).unwrap();
        assert_eq!(inst.mu(), 1.0);
    }

    #[test]
    fn negative_radius_reports_value_error_with_line() {
        let text = MINIMAL.replace("kind = orthant", "kind = ball2\ncenter = 0,0,0,0,0\nradius = -1");
        let e = parse_config(&text).unwrap_err();
        assert!(e.message.contains("ball2.radius must be > 0"), "{e}");
        assert_eq!(e.line, 10); // the `radius = -1` line
    }

    #[test]
    fn unknown_key_reports_line() {
        let text = MINIMAL.replace("master_seed = 17", "master_seed = 17\nbogus = 3");
        let e = parse_config(&text).unwrap_err();
        assert!(e.message.contains("unknown key `bogus`"), "{e}");
        assert_eq!(e.line, 15);
    }

    #[test]
    fn type_mismatch_reports_line() {
        let text = MINIMAL.replace("replications = 5", "replications = five");
        let e = parse_config(&text).unwrap_err();
        assert!(e.message.contains("nonnegative integer"), "{e}");
        assert_eq!(e.line, 13);
    }

    #[test]
    fn duplicate_section_rejected() {
        let text = format!("{MINIMAL}\n[run]\nn_grid = 5\n");
        let e = parse_config(&text).unwrap_err();
        assert!(e.message.contains("duplicate section"), "{e}");
    }

    #[test]
    fn missing_required_key_reported() {
        let text = MINIMAL.replace("theta = 0.5,-0.5,1.0,-1.0,0.25\n", "");
        let e = parse_config(&text).unwrap_err();
        assert!(e.message.contains("missing required key `theta`"), "{e}");
    }

    #[test]
    fn unsorted_grid_rejected() {
        let text = MINIMAL.replace("n_grid = 1000,10000", "n_grid = 1000,100");
        let e = parse_config(&text).unwrap_err();
        assert!(e.message.contains("strictly ascending"), "{e}");
    }

    #[test]
    fn round_trip_identity() {
        let c = parse_config(MINIMAL).unwrap();
        let text = serialize_config(&c);
        let c2 = parse_config(&text).unwrap();
        assert_eq!(c, c2);
        assert_eq!(serialize_config(&c2), text);
    }

    #[test]
    fn eigs_matrix_is_symmetric_with_requested_spectrum() {
        let spec = MatrixSpec::Eigs(vec![1.0, 3.0]);
        let m = spec.build(5);
        assert!((m.clone() - m.transpose()).norm() < 1e-12);
        let eig = m.symmetric_eigen().eigenvalues;
        let mut e: Vec<f64> = eig.iter().copied().collect();
        e.sort_by(f64::total_cmp);
        assert!((e[0] - 1.0).abs() < 1e-10 && (e[1] - 3.0).abs() < 1e-10);
    }

    #[test]
    fn state_scaled_noise_parses() {
        let text = MINIMAL.replace(
            "sigma = diag: 0.01,0.01,0.01,0.01,0.01",
            "sigma = diag: 0.01,0.01,0.01,0.01,0.01\nnoise = state_scaled\nscale_level = 0.3",
        );
        let c = parse_config(&text).unwrap();
        let inst = build_instance(&c.instance).unwrap();
        assert!(inst.smoothness() > 1.0); // level inflates L
    }
}
