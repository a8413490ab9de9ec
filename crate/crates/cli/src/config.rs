//! Experiment configuration: a sectioned `key = value` file.
//!
//! ```text
//! # comment
//! [run]
//! mode = train-static
//!
//! [ecm]
//! r0 = 25.0
//! branches = 3.5:0.1, 8.0:0.5
//! ```
//!
//! Every key belongs to a section, and unknown sections or keys are errors.

use std::fmt::{self, Write as _};
use std::path::PathBuf;
use std::str::FromStr;

use drpinn::baseline::LmConfig;
use drpinn::ecm::{ArrheniusLaw, EcmSpec, TempBranch, TempEcmSpec};
use drpinn::pinn::{LossWeights, ResidualForm, TrainConfig};
use drpinn::synth::TEndRule;

#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub line: usize,
    pub msg: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.line == 0 {
            write!(f, "config: {}", self.msg)
        } else {
            write!(f, "config line {}: {}", self.line, self.msg)
        }
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Generate,
    TrainStatic,
    TrainTemperature,
    FitBaseline,
    ReproduceTable1,
    ReproduceTable2,
}

impl Mode {
    pub const ALL: [Mode; 6] = [
        Mode::Generate,
        Mode::TrainStatic,
        Mode::TrainTemperature,
        Mode::FitBaseline,
        Mode::ReproduceTable1,
        Mode::ReproduceTable2,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Mode::Generate => "generate",
            Mode::TrainStatic => "train-static",
            Mode::TrainTemperature => "train-temperature",
            Mode::FitBaseline => "fit-baseline",
            Mode::ReproduceTable1 => "reproduce-table1",
            Mode::ReproduceTable2 => "reproduce-table2",
        }
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Mode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| format!("unknown mode `{s}`"))
    }
}

/// Which kind of circuit `generate` produces.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DataKind {
    Static,
    Temperature,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StaticCircuit {
    pub r0: f64,
    /// `(R, C)` pairs.
    pub branches: Vec<(f64, f64)>,
    pub u_dc: f64,
}

impl StaticCircuit {
    pub fn spec(&self) -> drpinn::Result<EcmSpec> {
        EcmSpec::from_pairs(self.r0, &self.branches, self.u_dc)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TempCircuit {
    /// Activation energy in eV shared by every resistance.
    pub w: f64,
    /// `R0` at `t_ref`.
    pub r0_ref: f64,
    pub t_ref: f64,
    /// `(scale, C)` pairs: `R_i(T) = scale * R0(T)`.
    pub branches: Vec<(f64, f64)>,
    pub u_dc: f64,
    pub t_min: f64,
    pub t_max: f64,
    pub count: usize,
    pub t_end_rule: TEndRule,
}

impl TempCircuit {
    pub fn spec(&self) -> drpinn::Result<TempEcmSpec> {
        let law = ArrheniusLaw::from_reference(self.r0_ref, self.t_ref, self.w)?;
        let branches = self
            .branches
            .iter()
            .map(|&(scale, c)| TempBranch {
                law: law.scaled(scale),
                capacitance: c,
            })
            .collect();
        TempEcmSpec::new(law, branches, self.u_dc)
    }

    pub fn temperatures(&self) -> Vec<f64> {
        drpinn::experiment::temperature_sweep(self.t_min, self.t_max, self.count)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    pub mode: Option<Mode>,
    pub output_dir: Option<PathBuf>,
    pub kind: DataKind,
    pub ecm: StaticCircuit,
    pub temperature: TempCircuit,
    pub n_samples: usize,
    pub n_per_temperature: usize,
    /// Noise levels; `None` means the mode's default sweep.
    pub sigmas: Option<Vec<f64>>,
    pub data_seed: u64,
    pub t_end: Option<f64>,
    pub input: Option<PathBuf>,
    pub hidden: Vec<usize>,
    pub main_hidden: Vec<usize>,
    pub sub_hidden: Vec<usize>,
    pub init_guess: f64,
    pub train: TrainConfig,
    pub baseline: LmConfig,
    pub plot_points: usize,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            mode: None,
            output_dir: None,
            kind: DataKind::Static,
            ecm: StaticCircuit {
                r0: 25.0,
                branches: vec![(3.5, 0.1), (8.0, 0.5)],
                u_dc: 20.0,
            },
            temperature: TempCircuit {
                w: 0.76,
                r0_ref: 1.0,
                t_ref: 294.0,
                branches: vec![(0.5, 0.5)],
                u_dc: 1.0,
                t_min: 294.0,
                t_max: 324.0,
                count: 10,
                t_end_rule: TEndRule::Global,
            },
            n_samples: 50,
            n_per_temperature: 20,
            sigmas: None,
            data_seed: 0,
            t_end: None,
            input: None,
            hidden: vec![15, 15],
            main_hidden: vec![15],
            sub_hidden: vec![15],
            init_guess: 1.0,
            train: TrainConfig::default(),
            baseline: LmConfig::default(),
            plot_points: 401,
        }
    }
}

fn parse_num<T: FromStr>(v: &str) -> Result<T, String> {
    v.parse::<T>().map_err(|_| format!("bad number `{v}`"))
}

fn parse_list<T: FromStr>(v: &str) -> Result<Vec<T>, String> {
    if v.trim().is_empty() {
        return Ok(vec![]);
    }
    v.split(',').map(|x| parse_num(x.trim())).collect()
}

fn parse_pairs(v: &str) -> Result<Vec<(f64, f64)>, String> {
    if v.trim().is_empty() {
        return Ok(vec![]);
    }
    v.split(',')
        .map(|item| {
            let (a, b) = item
                .trim()
                .split_once(':')
                .ok_or_else(|| format!("expected `a:b`, got `{}`", item.trim()))?;
            Ok((parse_num(a.trim())?, parse_num(b.trim())?))
        })
        .collect()
}

fn parse_range(v: &str) -> Result<(f64, f64), String> {
    let p = parse_pairs(v)?;
    match p.as_slice() {
        [(lo, hi)] => Ok((*lo, *hi)),
        _ => Err(format!("expected `lo:hi`, got `{v}`")),
    }
}

fn parse_bool(v: &str) -> Result<bool, String> {
    match v {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(format!("expected true or false, got `{v}`")),
    }
}

fn parse_t_end_rule(v: &str) -> Result<TEndRule, String> {
    match v {
        "global" => Ok(TEndRule::Global),
        "per-temperature" => Ok(TEndRule::PerTemperature),
        _ => match v.strip_prefix("fixed:") {
            Some(x) => Ok(TEndRule::Fixed(parse_num(x.trim())?)),
            None => Err(format!(
                "expected global, per-temperature or fixed:<t_end>, got `{v}`"
            )),
        },
    }
}

fn t_end_rule_text(r: TEndRule) -> String {
    match r {
        TEndRule::Global => "global".into(),
        TEndRule::PerTemperature => "per-temperature".into(),
        TEndRule::Fixed(x) => format!("fixed:{x}"),
    }
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(", ")
}

fn join_pairs(v: &[(f64, f64)]) -> String {
    v.iter()
        .map(|(a, b)| format!("{a}:{b}"))
        .collect::<Vec<_>>()
        .join(", ")
}

impl Config {
    pub fn parse(text: &str) -> Result<Config, ConfigError> {
        let mut c = Config::default();
        let mut section: Option<String> = None;
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let err = |msg: String| ConfigError { line: line_no, msg };
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[') {
                let name = name
                    .strip_suffix(']')
                    .ok_or_else(|| err(format!("unterminated section header `{line}`")))?
                    .trim();
                const SECTIONS: [&str; 7] =
                    ["run", "ecm", "temperature", "data", "net", "train", "baseline"];
                if !SECTIONS.contains(&name) {
                    return Err(err(format!("unknown section `[{name}]`")));
                }
                section = Some(name.to_string());
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err(format!("expected `key = value`, got `{line}`")))?;
            let (key, value) = (key.trim(), value.trim());
            let sec = section
                .as_deref()
                .ok_or_else(|| err(format!("key `{key}` appears before any section")))?;
            c.set(sec, key, value).map_err(err)?;
        }
        c.validate().map_err(|msg| ConfigError { line: 0, msg })?;
        Ok(c)
    }

    fn set(&mut self, sec: &str, key: &str, v: &str) -> Result<(), String> {
        let t = &mut self.train;
        match (sec, key) {
            ("run", "mode") => self.mode = Some(v.parse()?),
            ("run", "output_dir") => self.output_dir = Some(PathBuf::from(v)),
            ("run", "plot_points") => self.plot_points = parse_num(v)?,
            ("ecm", "r0") => self.ecm.r0 = parse_num(v)?,
            ("ecm", "branches") => self.ecm.branches = parse_pairs(v)?,
            ("ecm", "u_dc") => self.ecm.u_dc = parse_num(v)?,
            ("temperature", "w") => self.temperature.w = parse_num(v)?,
            ("temperature", "r0_ref") => self.temperature.r0_ref = parse_num(v)?,
            ("temperature", "t_ref") => self.temperature.t_ref = parse_num(v)?,
            ("temperature", "branches") => self.temperature.branches = parse_pairs(v)?,
            ("temperature", "u_dc") => self.temperature.u_dc = parse_num(v)?,
            ("temperature", "range") => {
                (self.temperature.t_min, self.temperature.t_max) = parse_range(v)?
            }
            ("temperature", "count") => self.temperature.count = parse_num(v)?,
            ("temperature", "t_end_rule") => self.temperature.t_end_rule = parse_t_end_rule(v)?,
            ("data", "kind") => {
                self.kind = match v {
                    "static" => DataKind::Static,
                    "temperature" => DataKind::Temperature,
                    _ => return Err(format!("expected static or temperature, got `{v}`")),
                }
            }
            ("data", "n_samples") => self.n_samples = parse_num(v)?,
            ("data", "n_per_temperature") => self.n_per_temperature = parse_num(v)?,
            ("data", "sigma") => self.sigmas = Some(parse_list(v)?),
            ("data", "seed") => self.data_seed = parse_num(v)?,
            ("data", "t_end") => self.t_end = Some(parse_num(v)?),
            ("data", "input") => self.input = Some(PathBuf::from(v)),
            ("net", "hidden") => self.hidden = parse_list(v)?,
            ("net", "main_hidden") => self.main_hidden = parse_list(v)?,
            ("net", "sub_hidden") => self.sub_hidden = parse_list(v)?,
            ("net", "init_guess") => self.init_guess = parse_num(v)?,
            ("train", "iterations") => t.iterations = parse_num(v)?,
            ("train", "lr0") => t.lr.lr0 = parse_num(v)?,
            ("train", "decay_factor") => t.lr.factor = parse_num(v)?,
            ("train", "decay_every") => t.lr.every = parse_num(v)?,
            ("train", "collocation") => t.collocation_count = parse_num(v)?,
            ("train", "seed") => t.seed = parse_num(v)?,
            ("train", "log_every") => t.log_every = parse_num(v)?,
            ("train", "beta1") => t.adam.beta1 = parse_num(v)?,
            ("train", "beta2") => t.adam.beta2 = parse_num(v)?,
            ("train", "eps") => t.adam.eps = parse_num(v)?,
            ("train", "weights") => {
                let w: Vec<f64> = parse_list(v)?;
                let [data, physics, ic] = w[..] else {
                    return Err(format!("expected three weights data, physics, ic, got `{v}`"));
                };
                t.weights = LossWeights { data, physics, ic };
            }
            ("train", "residual_form") => {
                t.residual_form = match v {
                    "rate" => ResidualForm::Rate,
                    "relaxation" => ResidualForm::Relaxation,
                    _ => return Err(format!("expected rate or relaxation, got `{v}`")),
                }
            }
            ("train", "freeze_circuit") => t.freeze_circuit = parse_bool(v)?,
            ("baseline", "max_iters") => self.baseline.max_iters = parse_num(v)?,
            ("baseline", "lambda0") => self.baseline.lambda0 = parse_num(v)?,
            ("baseline", "tol") => self.baseline.tol = parse_num(v)?,
            ("baseline", "multistart") => self.baseline.multistart = parse_num(v)?,
            ("baseline", "init_range") => self.baseline.init_range = parse_range(v)?,
            ("baseline", "seed") => self.baseline.seed = parse_num(v)?,
            ("baseline", "max_condition") => self.baseline.max_condition = parse_num(v)?,
            _ => return Err(format!("unknown key `{key}` in [{sec}]")),
        }
        Ok(())
    }

    fn validate(&self) -> Result<(), String> {
        let t = &self.train;
        if t.iterations == 0 && self.mode.is_some_and(|m| m != Mode::Generate) {
            // zero iterations is allowed: it evaluates the untrained model
        }
        if t.collocation_count == 0 {
            return Err("train.collocation must be at least 1".into());
        }
        if t.log_every == 0 {
            return Err("train.log_every must be at least 1".into());
        }
        if !(t.lr.lr0 > 0.0 && t.lr.factor > 0.0 && t.lr.every > 0.0) {
            return Err("learning-rate schedule values must be positive".into());
        }
        let w = t.weights;
        if !(w.data >= 0.0 && w.physics >= 0.0 && w.ic >= 0.0) {
            return Err("loss weights must be nonnegative".into());
        }
        if let Some(s) = &self.sigmas {
            if s.is_empty() || s.iter().any(|x| !(*x >= 0.0)) {
                return Err("data.sigma needs nonnegative values".into());
            }
        }
        if self.baseline.multistart == 0 {
            return Err("baseline.multistart must be at least 1".into());
        }
        if self.temperature.count == 0 {
            return Err("temperature.count must be at least 1".into());
        }
        Ok(())
    }

    /// Noise levels for a mode, falling back to its default sweep.
    pub fn sigmas_for(&self, mode: Mode) -> Vec<f64> {
        if let Some(s) = &self.sigmas {
            return s.clone();
        }
        match mode {
            Mode::ReproduceTable1 => vec![0.0, 0.1, 0.2],
            Mode::ReproduceTable2 => vec![0.0, 0.2, 0.4],
            _ => vec![0.0],
        }
    }

    /// Every resolved setting in canonical form; its hash identifies a run.
    pub fn to_text(&self) -> String {
        let mut o = String::new();
        let t = &self.train;
        let tc = &self.temperature;
        let _ = writeln!(o, "[run]");
        if let Some(m) = self.mode {
            let _ = writeln!(o, "mode = {}", m.name());
        }
        let _ = writeln!(o, "plot_points = {}", self.plot_points);
        let _ = writeln!(o, "\n[ecm]");
        let _ = writeln!(o, "r0 = {}", self.ecm.r0);
        let _ = writeln!(o, "branches = {}", join_pairs(&self.ecm.branches));
        let _ = writeln!(o, "u_dc = {}", self.ecm.u_dc);
        let _ = writeln!(o, "\n[temperature]");
        let _ = writeln!(o, "w = {}", tc.w);
        let _ = writeln!(o, "r0_ref = {}", tc.r0_ref);
        let _ = writeln!(o, "t_ref = {}", tc.t_ref);
        let _ = writeln!(o, "branches = {}", join_pairs(&tc.branches));
        let _ = writeln!(o, "u_dc = {}", tc.u_dc);
        let _ = writeln!(o, "range = {}:{}", tc.t_min, tc.t_max);
        let _ = writeln!(o, "count = {}", tc.count);
        let _ = writeln!(o, "t_end_rule = {}", t_end_rule_text(tc.t_end_rule));
        let _ = writeln!(o, "\n[data]");
        let kind = match self.kind {
            DataKind::Static => "static",
            DataKind::Temperature => "temperature",
        };
        let _ = writeln!(o, "kind = {kind}");
        let _ = writeln!(o, "n_samples = {}", self.n_samples);
        let _ = writeln!(o, "n_per_temperature = {}", self.n_per_temperature);
        if let Some(s) = &self.sigmas {
            let _ = writeln!(o, "sigma = {}", join(s));
        }
        let _ = writeln!(o, "seed = {}", self.data_seed);
        if let Some(x) = self.t_end {
            let _ = writeln!(o, "t_end = {x}");
        }
        if let Some(p) = &self.input {
            let _ = writeln!(o, "input = {}", p.display());
        }
        let _ = writeln!(o, "\n[net]");
        let _ = writeln!(o, "hidden = {}", join(&self.hidden));
        let _ = writeln!(o, "main_hidden = {}", join(&self.main_hidden));
        let _ = writeln!(o, "sub_hidden = {}", join(&self.sub_hidden));
        let _ = writeln!(o, "init_guess = {}", self.init_guess);
        let _ = writeln!(o, "\n[train]");
        let _ = writeln!(o, "iterations = {}", t.iterations);
        let _ = writeln!(o, "lr0 = {}", t.lr.lr0);
        let _ = writeln!(o, "decay_factor = {}", t.lr.factor);
        let _ = writeln!(o, "decay_every = {}", t.lr.every);
        let _ = writeln!(o, "collocation = {}", t.collocation_count);
        let _ = writeln!(o, "seed = {}", t.seed);
        let _ = writeln!(o, "log_every = {}", t.log_every);
        let _ = writeln!(o, "beta1 = {}", t.adam.beta1);
        let _ = writeln!(o, "beta2 = {}", t.adam.beta2);
        let _ = writeln!(o, "eps = {}", t.adam.eps);
        let _ = writeln!(
            o,
            "weights = {}, {}, {}",
            t.weights.data, t.weights.physics, t.weights.ic
        );
        let _ = writeln!(o, "residual_form = {}", t.residual_form.name());
        let _ = writeln!(o, "freeze_circuit = {}", t.freeze_circuit);
        let b = &self.baseline;
        let _ = writeln!(o, "\n[baseline]");
        let _ = writeln!(o, "max_iters = {}", b.max_iters);
        let _ = writeln!(o, "lambda0 = {}", b.lambda0);
        let _ = writeln!(o, "tol = {}", b.tol);
        let _ = writeln!(o, "multistart = {}", b.multistart);
        let _ = writeln!(o, "init_range = {}:{}", b.init_range.0, b.init_range.1);
        let _ = writeln!(o, "seed = {}", b.seed);
        let _ = writeln!(o, "max_condition = {}", b.max_condition);
        o
    }
}
