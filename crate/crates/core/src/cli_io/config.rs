//! Flat `key = value` run configuration, grouped in `[section]` blocks.
//!
//! Every key is optional and falls back to a documented default. Unknown
//! sections and keys are rejected, and every error carries the line it
//! refers to (line 0 when the offending value was a default).

use crate::chemistry::{ReactionKind, ReactionModel};
use crate::constitutive::{ConstitutiveParams, ParamError};
use crate::solver::{ApproxError, ApproxParams, InitialData};
use crate::spectral::{GridError, SpectralGrid};
use std::collections::HashMap;
use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
#[error("line {line}: {message}")]
pub struct ConfigError {
    pub line: usize,
    pub message: String,
}

fn err(line: usize, message: impl Into<String>) -> ConfigError {
    ConfigError { line, message: message.into() }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    Uniform,
    Perturbed,
    TwoBlob,
    Modes,
}

impl Preset {
    fn name(self) -> &'static str {
        match self {
            Preset::Uniform => "uniform",
            Preset::Perturbed => "perturbed",
            Preset::TwoBlob => "two_blob",
            Preset::Modes => "modes",
        }
    }
}

impl FromStr for Preset {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "uniform" => Ok(Preset::Uniform),
            "perturbed" => Ok(Preset::Perturbed),
            "two_blob" => Ok(Preset::TwoBlob),
            "modes" => Ok(Preset::Modes),
            _ => Err(format!("unknown preset {s:?}; expected uniform, perturbed, two_blob or modes")),
        }
    }
}

/// Coefficients a₀, a₁, b₁, a₂, b₂ of a₀ + a₁cos x₁ + b₁sin x₁ + a₂cos 2x₁ + b₂sin 2x₁.
pub type ModeCoeffs = [f64; 5];

fn trig(c: &ModeCoeffs, x: f64) -> f64 {
    c[0] + c[1] * x.cos() + c[2] * x.sin() + c[3] * (2.0 * x).cos() + c[4] * (2.0 * x).sin()
}

#[derive(Debug, Clone, PartialEq)]
pub struct InitialConditions {
    pub preset: Preset,
    pub rho: f64,
    pub theta: f64,
    /// Mass fractions, one per species, summing to 1.
    pub fractions: Vec<f64>,
    /// Relative size of the perturbations.
    pub amplitude: f64,
    /// Velocity scale.
    pub velocity: f64,
    pub rho_modes: ModeCoeffs,
    pub theta_modes: ModeCoeffs,
    pub u_modes: ModeCoeffs,
    /// Mass fraction of species 1 for the `modes` preset.
    pub y_modes: ModeCoeffs,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutputOptions {
    /// Diagnostics row every this many steps (the initial and final states are always logged).
    pub diag_every: usize,
    /// Snapshot every this many steps; 0 writes only the final state.
    pub snapshot_every: usize,
    pub dir: PathBuf,
    /// Weight of the Bresch–Desjardins functional, > 1.
    pub bd_r: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub dim: usize,
    pub modes: usize,
    pub approx: ApproxParams,
    pub params: ConstitutiveParams,
    pub reaction: ReactionModel,
    pub initial: InitialConditions,
    pub output: OutputOptions,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            dim: 1,
            modes: 64,
            approx: ApproxParams::default(),
            params: ConstitutiveParams::default(),
            reaction: ReactionModel { rate_constant: 1.0, ..ReactionModel::inert() },
            initial: InitialConditions {
                preset: Preset::Perturbed,
                rho: 1.0,
                theta: 1.0,
                fractions: vec![0.5, 0.5],
                amplitude: 0.1,
                velocity: 0.1,
                rho_modes: [1.0, 0.0, 0.0, 0.0, 0.0],
                theta_modes: [1.0, 0.0, 0.0, 0.0, 0.0],
                u_modes: [0.0; 5],
                y_modes: [0.5, 0.0, 0.0, 0.0, 0.0],
            },
            output: OutputOptions { diag_every: 1, snapshot_every: 0, dir: PathBuf::from("out"), bd_r: 2.0 },
        }
    }
}

const KEYS: &[(&str, &[&str])] = &[
    ("grid", &["dim", "modes"]),
    (
        "approx",
        &[
            "epsilon",
            "delta",
            "lambda",
            "s",
            "truncation",
            "dt",
            "t_end",
            "picard_tol",
            "picard_max",
            "r_min",
            "retry_budget",
        ],
    ),
    ("physics", &["masses", "gamma_minus", "gamma_plus", "c_cold", "beta", "B", "kappa0", "C0_bar"]),
    ("chemistry", &["model", "pair", "omega_bar", "kappa_r"]),
    (
        "initial",
        &[
            "preset",
            "rho",
            "theta",
            "fractions",
            "amplitude",
            "velocity",
            "rho_modes",
            "theta_modes",
            "u_modes",
            "y_modes",
        ],
    ),
    ("output", &["diag_every", "snapshot_every", "dir", "bd_r"]),
];

struct Entry {
    value: String,
    line: usize,
}

fn parse_value<T: FromStr>(key: &str, e: &Entry) -> Result<T, ConfigError> {
    e.value.parse().map_err(|_| err(e.line, format!("cannot parse {key} = {:?}", e.value)))
}

fn parse_list(key: &str, e: &Entry) -> Result<Vec<f64>, ConfigError> {
    e.value
        .split(',')
        .map(|v| v.trim().parse().map_err(|_| err(e.line, format!("cannot parse {key} entry {v:?}"))))
        .collect()
}

fn parse_modes(key: &str, e: &Entry) -> Result<ModeCoeffs, ConfigError> {
    let list = parse_list(key, e)?;
    list.try_into().map_err(|_| err(e.line, format!("{key} needs exactly 5 coefficients a0, a1, b1, a2, b2")))
}

/// Parses and fully validates a configuration.
pub fn parse_config(text: &str) -> Result<RunConfig, ConfigError> {
    let mut entries: HashMap<(String, String), Entry> = HashMap::new();
    let mut section: Option<&str> = None;
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        if let Some(name) = content.strip_prefix('[') {
            let name = name.strip_suffix(']').ok_or_else(|| err(line, "unterminated section header"))?.trim();
            let known =
                KEYS.iter().find(|(s, _)| *s == name).ok_or_else(|| err(line, format!("unknown section [{name}]")))?;
            section = Some(known.0);
            continue;
        }
        let (key, value) = content.split_once('=').ok_or_else(|| err(line, "expected `key = value`"))?;
        let (key, value) = (key.trim(), value.trim());
        let sec = section.ok_or_else(|| err(line, format!("key {key:?} outside any section")))?;
        let keys = KEYS.iter().find(|(s, _)| *s == sec).map(|(_, k)| *k).unwrap_or(&[]);
        if !keys.contains(&key) {
            return Err(err(line, format!("unknown key {key:?} in [{sec}]")));
        }
        if value.is_empty() {
            return Err(err(line, format!("missing value for {key}")));
        }
        let slot = (sec.to_string(), key.to_string());
        if let Some(prev) = entries.get(&slot) {
            return Err(err(line, format!("duplicate key {key:?} (first set on line {})", prev.line)));
        }
        entries.insert(slot, Entry { value: value.to_string(), line });
    }

    let get = |sec: &str, key: &str| entries.get(&(sec.to_string(), key.to_string()));
    let line_of = |sec: &str, key: &str| get(sec, key).map_or(0, |e| e.line);
    let mut cfg = RunConfig::default();

    macro_rules! set {
        ($sec:literal, $key:literal, $target:expr) => {
            if let Some(e) = get($sec, $key) {
                $target = parse_value($key, e)?;
            }
        };
    }

    set!("grid", "dim", cfg.dim);
    set!("grid", "modes", cfg.modes);

    let a = &mut cfg.approx;
    set!("approx", "epsilon", a.epsilon);
    set!("approx", "delta", a.delta);
    set!("approx", "lambda", a.lambda);
    set!("approx", "s", a.s);
    if let Some(e) = get("approx", "truncation") {
        a.truncation = Some(parse_value("truncation", e)?);
    }
    set!("approx", "dt", a.dt);
    set!("approx", "t_end", a.t_end);
    set!("approx", "picard_tol", a.picard_tol);
    set!("approx", "picard_max", a.picard_max);
    set!("approx", "r_min", a.r_min);
    set!("approx", "retry_budget", a.retry_budget);

    let p = &mut cfg.params;
    if let Some(e) = get("physics", "masses") {
        p.masses = parse_list("masses", e)?;
    }
    set!("physics", "gamma_minus", p.gamma_minus);
    set!("physics", "gamma_plus", p.gamma_plus);
    set!("physics", "c_cold", p.cold_amplitude);
    set!("physics", "beta", p.radiation);
    set!("physics", "B", p.conductivity_exponent);
    set!("physics", "kappa0", p.conductivity_base);
    set!("physics", "C0_bar", p.diffusion_amplitude);

    let init = &mut cfg.initial;
    if let Some(e) = get("initial", "preset") {
        init.preset = e.value.parse().map_err(|m: String| err(e.line, m))?;
    }
    set!("initial", "rho", init.rho);
    set!("initial", "theta", init.theta);
    set!("initial", "amplitude", init.amplitude);
    set!("initial", "velocity", init.velocity);
    match get("initial", "fractions") {
        Some(e) => init.fractions = parse_list("fractions", e)?,
        None => {
            let n = cfg.params.masses.len().max(1);
            init.fractions = vec![1.0 / n as f64; n];
        }
    }
    for (key, slot) in [
        ("rho_modes", &mut init.rho_modes),
        ("theta_modes", &mut init.theta_modes),
        ("u_modes", &mut init.u_modes),
        ("y_modes", &mut init.y_modes),
    ] {
        if let Some(e) = get("initial", key) {
            *slot = parse_modes(key, e)?;
        }
    }

    let o = &mut cfg.output;
    set!("output", "diag_every", o.diag_every);
    set!("output", "snapshot_every", o.snapshot_every);
    if let Some(e) = get("output", "dir") {
        o.dir = PathBuf::from(&e.value);
    }
    set!("output", "bd_r", o.bd_r);

    // validation, in dependency order
    let grid = SpectralGrid::new(cfg.dim, cfg.modes).map_err(|e| {
        let key = if matches!(e, GridError::Dimension(_)) { "dim" } else { "modes" };
        err(line_of("grid", key), e.to_string())
    })?;
    cfg.params.validate().map_err(|e| {
        let key = match e {
            ParamError::NoSpecies => "masses",
            ParamError::GammaMinus | ParamError::GammaCompatibility => "gamma_minus",
            ParamError::GammaPlus => "gamma_plus",
            ParamError::ConductivityExponent => "B",
            ParamError::NonPositive(name) => match name {
                "c_cold" | "beta" | "kappa0" | "C0_bar" => name,
                _ => "masses",
            },
        };
        err(line_of("physics", key), e.to_string())
    })?;
    cfg.approx.validate(&grid).map_err(|e| {
        let key = match e {
            ApproxError::Negative(name) => name,
            ApproxError::Order => "s",
            ApproxError::Truncation(..) => "truncation",
            ApproxError::TimeStep => "dt",
            ApproxError::EndTime => "t_end",
            ApproxError::Picard => "picard_tol",
            ApproxError::Floor => "r_min",
        };
        err(line_of("approx", key), e.to_string())
    })?;

    let rate = match get("chemistry", "kappa_r") {
        Some(e) => parse_value("kappa_r", e)?,
        None => 1.0,
    };
    let saturation = match get("chemistry", "omega_bar") {
        Some(e) => parse_value("omega_bar", e)?,
        None => 1.0,
    };
    let model = get("chemistry", "model").map_or("inert", |e| e.value.as_str());
    cfg.reaction = match model {
        "inert" => ReactionModel { rate_constant: rate, saturation, ..ReactionModel::inert() },
        "reversible_pair" => {
            let (a, b) = match get("chemistry", "pair") {
                Some(e) => {
                    let parts: Vec<&str> = e.value.split(',').map(str::trim).collect();
                    let idx: Result<Vec<usize>, _> = parts.iter().map(|v| v.parse::<usize>()).collect();
                    match idx.as_deref() {
                        Ok([a, b]) if *a >= 1 && *b >= 1 => (a - 1, b - 1),
                        _ => return Err(err(e.line, "pair must be two 1-based species indices, e.g. `1, 2`")),
                    }
                }
                None => (0, 1),
            };
            ReactionModel { kind: ReactionKind::ReversiblePair { a, b }, rate_constant: rate, saturation }
        }
        other => {
            return Err(err(
                line_of("chemistry", "model"),
                format!("unknown model {other:?}; expected inert or reversible_pair"),
            ))
        }
    };
    cfg.reaction.validate(&cfg.params).map_err(|e| {
        let key = match e {
            crate::chemistry::ReactionError::NegativeRate => "kappa_r",
            crate::chemistry::ReactionError::NonPositiveSaturation => "omega_bar",
            _ => "pair",
        };
        let line = line_of("chemistry", key).max(line_of("chemistry", "model"));
        err(line, e.to_string())
    })?;

    let init = &cfg.initial;
    let n = cfg.params.n_species();
    if init.fractions.len() != n {
        return Err(err(line_of("initial", "fractions"), format!("fractions needs {n} entries, one per species")));
    }
    let sum: f64 = init.fractions.iter().sum();
    if init.fractions.iter().any(|f| !(*f >= 0.0)) || (sum - 1.0).abs() > 1e-12 {
        return Err(err(line_of("initial", "fractions"), "fractions must be nonnegative and sum to 1"));
    }
    if !(init.rho > 0.0) {
        return Err(err(line_of("initial", "rho"), "rho > 0 required"));
    }
    if !(init.theta > 0.0) {
        return Err(err(line_of("initial", "theta"), "theta > 0 required"));
    }
    if !(init.amplitude >= 0.0 && init.amplitude < 1.0) {
        return Err(err(line_of("initial", "amplitude"), "0 ≤ amplitude < 1 required"));
    }
    if !init.velocity.is_finite() {
        return Err(err(line_of("initial", "velocity"), "velocity must be finite"));
    }

    let o = &cfg.output;
    if o.diag_every == 0 {
        return Err(err(line_of("output", "diag_every"), "diag_every ≥ 1 required"));
    }
    if !(o.bd_r > 1.0) {
        return Err(err(line_of("output", "bd_r"), "bd_r > 1 required"));
    }

    cfg.initial_data().map_err(|m| {
        let key = if cfg.initial.preset == Preset::Modes { "preset" } else { "amplitude" };
        err(line_of("initial", key), m)
    })?;
    Ok(cfg)
}

fn list(values: &[f64]) -> String {
    values.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(", ")
}

impl RunConfig {
    pub fn grid(&self) -> SpectralGrid {
        SpectralGrid::new(self.dim, self.modes).expect("validated grid")
    }

    /// Fields of the configured preset; the error names the violated invariant.
    #[allow(clippy::type_complexity)]
    pub fn initial_data(&self) -> Result<InitialData, String> {
        let grid = SpectralGrid::new(self.dim, self.modes).map_err(|e| e.to_string())?;
        let init = &self.initial;
        let n = self.params.n_species();
        let amp = init.amplitude;
        let dim = self.dim;
        let (rho, theta, velocity, fractions): (Vec<f64>, Vec<f64>, Vec<Vec<f64>>, Vec<Vec<f64>>) = match init.preset {
            Preset::Uniform => (
                vec![init.rho; grid.len()],
                vec![init.theta; grid.len()],
                (0..dim).map(|a| vec![if a == 0 { init.velocity } else { 0.0 }; grid.len()]).collect(),
                init.fractions.iter().map(|&f| vec![f; grid.len()]).collect(),
            ),
            Preset::Perturbed => {
                // phases chosen so that no reflection symmetry survives
                let rho =
                    grid.sample(|x| init.rho * (1.0 + amp * (x[0] + 0.3).cos() + 0.5 * amp * (2.0 * x[0] + 0.4).sin()));
                let theta = grid.sample(|x| init.theta * (1.0 + amp * (x[0] - 0.3).cos()));
                let velocity =
                    (0..dim).map(|a| grid.sample(|x| init.velocity * (x[a] + 0.7 + a as f64).sin())).collect();
                let weights: Vec<Vec<f64>> = (0..n)
                    .map(|k| grid.sample(|x| init.fractions[k] * (1.0 + amp * (x[0] + 1.0 + k as f64).sin())))
                    .collect();
                (rho, theta, velocity, normalise(weights))
            }
            Preset::TwoBlob => {
                let blob = |center: f64| move |x: [f64; 3]| (3.0 * (x[0] - center).cos()).exp();
                let weights: Vec<Vec<f64>> = (0..n)
                    .map(|k| {
                        let f = init.fractions[k];
                        match k {
                            0 => grid.sample(|x| f * blob(0.5 * PI)(x)),
                            1 => grid.sample(|x| f * blob(1.5 * PI)(x)),
                            _ => vec![f; grid.len()],
                        }
                    })
                    .collect();
                (
                    vec![init.rho; grid.len()],
                    vec![init.theta; grid.len()],
                    vec![vec![0.0; grid.len()]; dim],
                    normalise(weights),
                )
            }
            Preset::Modes => {
                let rho = grid.sample(|x| trig(&init.rho_modes, x[0]));
                let theta = grid.sample(|x| trig(&init.theta_modes, x[0]));
                let mut velocity = vec![vec![0.0; grid.len()]; dim];
                velocity[0] = grid.sample(|x| trig(&init.u_modes, x[0]));
                let fractions = if n == 1 {
                    vec![vec![1.0; grid.len()]]
                } else {
                    let first = grid.sample(|x| trig(&init.y_modes, x[0]));
                    let rest: f64 = init.fractions[1..].iter().sum();
                    let mut out = vec![first.clone()];
                    for k in 1..n {
                        let share = if rest > 0.0 { init.fractions[k] / rest } else { 1.0 / (n - 1) as f64 };
                        out.push(first.iter().map(|y| (1.0 - y) * share).collect());
                    }
                    out
                };
                if fractions.iter().flatten().any(|y| !(*y >= 0.0 && *y <= 1.0)) {
                    return Err("y_modes must keep the mass fraction in [0, 1]".into());
                }
                (rho, theta, velocity, fractions)
            }
        };
        if rho.iter().any(|r| !(*r > 0.0)) {
            return Err("initial density must be positive everywhere".into());
        }
        if theta.iter().any(|t| !(*t > 0.0)) {
            return Err("initial temperature must be positive everywhere".into());
        }
        let momentum = velocity.iter().map(|u| u.iter().zip(&rho).map(|(u, r)| u * r).collect()).collect();
        let rho_k = fractions.iter().map(|y| y.iter().zip(&rho).map(|(y, r)| y * r).collect()).collect();
        let data = InitialData { rho, momentum, theta, rho_k };
        data.validate(&grid).map_err(|e| e.to_string())?;
        Ok(data)
    }

    /// Canonical text form; `parse_config(&cfg.to_text())` gives back `cfg`.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let a = &self.approx;
        let p = &self.params;
        let i = &self.initial;
        let o = &self.output;
        let _ = writeln!(s, "[grid]\ndim = {}\nmodes = {}\n", self.dim, self.modes);
        let _ = writeln!(s, "[approx]");
        let _ = writeln!(s, "epsilon = {}\ndelta = {}\nlambda = {}\ns = {}", a.epsilon, a.delta, a.lambda, a.s);
        if let Some(n) = a.truncation {
            let _ = writeln!(s, "truncation = {n}");
        }
        let _ = writeln!(
            s,
            "dt = {}\nt_end = {}\npicard_tol = {}\npicard_max = {}",
            a.dt, a.t_end, a.picard_tol, a.picard_max
        );
        let _ = writeln!(s, "r_min = {}\nretry_budget = {}\n", a.r_min, a.retry_budget);
        let _ = writeln!(s, "[physics]\nmasses = {}", list(&p.masses));
        let _ = writeln!(
            s,
            "gamma_minus = {}\ngamma_plus = {}\nc_cold = {}",
            p.gamma_minus, p.gamma_plus, p.cold_amplitude
        );
        let _ = writeln!(
            s,
            "beta = {}\nB = {}\nkappa0 = {}\nC0_bar = {}\n",
            p.radiation, p.conductivity_exponent, p.conductivity_base, p.diffusion_amplitude
        );
        let _ = writeln!(s, "[chemistry]");
        match self.reaction.kind {
            ReactionKind::Inert => {
                let _ = writeln!(s, "model = inert");
            }
            ReactionKind::ReversiblePair { a, b } => {
                let _ = writeln!(s, "model = reversible_pair\npair = {}, {}", a + 1, b + 1);
            }
        }
        let _ = writeln!(s, "omega_bar = {}\nkappa_r = {}\n", self.reaction.saturation, self.reaction.rate_constant);
        let _ = writeln!(s, "[initial]\npreset = {}\nrho = {}\ntheta = {}", i.preset.name(), i.rho, i.theta);
        let _ =
            writeln!(s, "fractions = {}\namplitude = {}\nvelocity = {}", list(&i.fractions), i.amplitude, i.velocity);
        let _ = writeln!(s, "rho_modes = {}\ntheta_modes = {}", list(&i.rho_modes), list(&i.theta_modes));
        let _ = writeln!(s, "u_modes = {}\ny_modes = {}\n", list(&i.u_modes), list(&i.y_modes));
        let _ = writeln!(s, "[output]\ndiag_every = {}\nsnapshot_every = {}", o.diag_every, o.snapshot_every);
        let _ = writeln!(s, "dir = {}\nbd_r = {}", o.dir.display(), o.bd_r);
        s
    }
}

fn normalise(weights: Vec<Vec<f64>>) -> Vec<Vec<f64>> {
    let n = weights[0].len();
    let totals: Vec<f64> = (0..n).map(|p| weights.iter().map(|w| w[p]).sum()).collect();
    weights.into_iter().map(|w| w.iter().zip(&totals).map(|(a, t)| a / t).collect()).collect()
}
