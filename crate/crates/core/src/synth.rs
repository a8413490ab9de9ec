//! Synthetic relaxation-current datasets.
//!
//! Static datasets sample the total current on a uniform time grid and add
//! i.i.d. `N(0, sigma^2)` noise. Temperature datasets repeat the measurement
//! at several fixed temperatures and add noise with standard deviation
//! `sigma / I`, where `I` is the noiseless current at that point.
//!
//! Random numbers come from ChaCha8 seeded with the dataset seed. A static
//! dataset draws from stream 0; temperature `k` (0-based, in the order given)
//! draws from stream `k + 1`, so each temperature is reproducible on its own.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::ecm::{EcmSpec, TempEcmSpec};
use crate::error::{Error, Result};

/// Multiple of the slowest time constant used when `t_end` is not given.
pub const DEFAULT_T_END_FACTOR: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sample {
    pub t: f64,
    pub temperature: Option<f64>,
    pub current: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseModel {
    /// `I + N(0, sigma^2)`
    Absolute,
    /// `I + N(0, (sigma / I)^2)`
    InverseCurrent,
}

impl NoiseModel {
    pub fn name(&self) -> &'static str {
        match self {
            NoiseModel::Absolute => "absolute",
            NoiseModel::InverseCurrent => "inverse-current",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Units {
    Physical,
    Normalized,
}

/// How the sampling window is chosen at each temperature.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TEndRule {
    /// One window for every temperature, fixed by the slowest (coldest) circuit.
    Global,
    /// Each temperature gets `5 x` its own slowest time constant.
    PerTemperature,
    /// Explicit window shared by all temperatures.
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalizationInfo {
    pub t_scale: f64,
    pub temp_offset: f64,
    pub temp_scale: f64,
    pub current_scale: f64,
}

impl NormalizationInfo {
    pub fn time(&self, t: f64) -> f64 {
        t / self.t_scale
    }

    pub fn time_inv(&self, s: f64) -> f64 {
        s * self.t_scale
    }

    pub fn temperature(&self, temp: f64) -> f64 {
        (temp - self.temp_offset) / self.temp_scale
    }

    pub fn temperature_inv(&self, x: f64) -> f64 {
        x * self.temp_scale + self.temp_offset
    }

    pub fn current(&self, i: f64) -> f64 {
        i / self.current_scale
    }

    pub fn current_inv(&self, y: f64) -> f64 {
        y * self.current_scale
    }

    /// Unit of resistance in normalized coordinates, `U_DC / current_scale`.
    pub fn resistance_scale(&self, u_dc: f64) -> f64 {
        u_dc / self.current_scale
    }

    /// Unit of capacitance, chosen so that `R C` is measured in `t_scale`.
    pub fn capacitance_scale(&self, u_dc: f64) -> f64 {
        self.t_scale / self.resistance_scale(u_dc)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub samples: Vec<Sample>,
    pub sigma: f64,
    pub seed: u64,
    pub t_end: f64,
    pub noise: NoiseModel,
    pub units: Units,
    pub norm: NormalizationInfo,
}

/// `n` points uniformly spaced on `[0, t_end]`, both endpoints included.
pub fn uniform_grid(t_end: f64, n: usize) -> Vec<f64> {
    match n {
        0 => vec![],
        1 => vec![0.0],
        _ => {
            let last = (n - 1) as f64;
            (0..n)
                .map(|i| if i == n - 1 { t_end } else { t_end * i as f64 / last })
                .collect()
        }
    }
}

fn check_sigma(sigma: f64) -> Result<()> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "sigma must be non-negative, got {sigma}"
        )));
    }
    Ok(())
}

fn check_t_end(t_end: f64) -> Result<()> {
    if !(t_end > 0.0 && t_end.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "t_end must be positive, got {t_end}"
        )));
    }
    Ok(())
}

/// Noisy samples of the total current of a static circuit.
pub fn generate_static(
    spec: &EcmSpec,
    n_samples: usize,
    sigma: f64,
    seed: u64,
    t_end: Option<f64>,
) -> Result<Dataset> {
    if n_samples < 2 {
        return Err(Error::InvalidInput(format!(
            "need at least 2 samples, got {n_samples}"
        )));
    }
    check_sigma(sigma)?;
    let t_end = match t_end {
        Some(t) => t,
        None => {
            DEFAULT_T_END_FACTOR
                * spec.max_time_constant().ok_or_else(|| {
                    Error::InvalidInput("t_end is required for a circuit without branches".into())
                })?
        }
    };
    check_t_end(t_end)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(0);
    let samples = uniform_grid(t_end, n_samples)
        .into_iter()
        .map(|t| {
            let clean = spec.total_current(t);
            let eps: f64 = StandardNormal.sample(&mut rng);
            Sample {
                t,
                temperature: None,
                current: clean + sigma * eps,
            }
        })
        .collect::<Vec<_>>();
    let mut ds = Dataset {
        samples,
        sigma,
        seed,
        t_end,
        noise: NoiseModel::Absolute,
        units: Units::Physical,
        norm: NormalizationInfo {
            t_scale: t_end,
            temp_offset: 0.0,
            temp_scale: 1.0,
            current_scale: 1.0,
        },
    };
    ds.norm = ds.normalization_info();
    Ok(ds)
}

/// Noisy samples at each temperature with `sigma / I` noise.
pub fn generate_temperature(
    tspec: &TempEcmSpec,
    temperatures: &[f64],
    n_per_temp: usize,
    sigma: f64,
    seed: u64,
    t_end_rule: TEndRule,
) -> Result<Dataset> {
    if temperatures.is_empty() {
        return Err(Error::InvalidInput("temperature list is empty".into()));
    }
    if n_per_temp < 2 {
        return Err(Error::InvalidInput(format!(
            "need at least 2 samples per temperature, got {n_per_temp}"
        )));
    }
    check_sigma(sigma)?;
    let specs = temperatures
        .iter()
        .map(|&temp| tspec.materialize(temp))
        .collect::<Result<Vec<_>>>()?;
    let slowest = |s: &EcmSpec| -> Result<f64> {
        s.max_time_constant()
            .map(|tau| DEFAULT_T_END_FACTOR * tau)
            .ok_or_else(|| {
                Error::InvalidInput("t_end is required for a circuit without branches".into())
            })
    };
    let windows: Vec<f64> = match t_end_rule {
        TEndRule::Fixed(t) => vec![t; specs.len()],
        TEndRule::Global => {
            let mut g: f64 = 0.0;
            for s in &specs {
                g = g.max(slowest(s)?);
            }
            vec![g; specs.len()]
        }
        TEndRule::PerTemperature => specs.iter().map(slowest).collect::<Result<_>>()?,
    };
    for &w in &windows {
        check_t_end(w)?;
    }
    let t_end = windows.iter().cloned().fold(0.0, f64::max);

    let mut samples = Vec::with_capacity(temperatures.len() * n_per_temp);
    for (k, ((&temp, spec), &window)) in temperatures.iter().zip(&specs).zip(&windows).enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(k as u64 + 1);
        for t in uniform_grid(window, n_per_temp) {
            let clean = spec.total_current(t);
            assert!(clean > 0.0, "noiseless current must be positive");
            let eps: f64 = StandardNormal.sample(&mut rng);
            samples.push(Sample {
                t,
                temperature: Some(temp),
                current: clean + (sigma / clean) * eps,
            });
        }
    }
    let mut ds = Dataset {
        samples,
        sigma,
        seed,
        t_end,
        noise: NoiseModel::InverseCurrent,
        units: Units::Physical,
        norm: NormalizationInfo {
            t_scale: t_end,
            temp_offset: 0.0,
            temp_scale: 1.0,
            current_scale: 1.0,
        },
    };
    ds.norm = ds.normalization_info();
    Ok(ds)
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn has_temperature(&self) -> bool {
        self.samples.first().is_some_and(|s| s.temperature.is_some())
    }

    /// Distinct temperatures in order of first appearance.
    pub fn temperatures(&self) -> Vec<f64> {
        let mut out: Vec<f64> = Vec::new();
        for s in &self.samples {
            if let Some(t) = s.temperature {
                if !out.contains(&t) {
                    out.push(t);
                }
            }
        }
        out
    }

    /// The samples at one temperature as a static dataset.
    pub fn at_temperature(&self, temperature: f64) -> Dataset {
        let mut ds = Dataset {
            samples: self
                .samples
                .iter()
                .filter(|s| s.temperature == Some(temperature))
                .map(|s| Sample {
                    temperature: None,
                    ..*s
                })
                .collect(),
            ..self.clone()
        };
        ds.norm = ds.normalization_info();
        ds
    }

    /// Scaling constants derived from the physical-unit samples.
    pub fn normalization_info(&self) -> NormalizationInfo {
        let current_scale = self
            .samples
            .iter()
            .map(|s| s.current.abs())
            .fold(0.0, f64::max);
        let current_scale = if current_scale > 0.0 { current_scale } else { 1.0 };
        let temps = self.temperatures();
        let (temp_offset, temp_scale) = if temps.is_empty() {
            (0.0, 1.0)
        } else {
            let lo = temps.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = temps.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            if hi > lo {
                (0.5 * (lo + hi), 0.5 * (hi - lo))
            } else {
                (lo, 1.0)
            }
        };
        NormalizationInfo {
            t_scale: self.t_end,
            temp_offset,
            temp_scale,
            current_scale,
        }
    }

    fn check_mixing(&self) -> Result<()> {
        let with = self.samples.iter().filter(|s| s.temperature.is_some()).count();
        if with != 0 && with != self.samples.len() {
            return Err(Error::InvalidInput(
                "dataset mixes samples with and without temperature".into(),
            ));
        }
        Ok(())
    }

    /// Map to normalized units: `t / t_end`, temperatures onto `[-1, 1]`,
    /// currents divided by the largest observed magnitude.
    pub fn normalize(&self) -> Result<(Dataset, NormalizationInfo)> {
        if self.is_empty() {
            return Err(Error::InvalidInput("cannot normalize an empty dataset".into()));
        }
        if self.units == Units::Normalized {
            return Ok((self.clone(), self.norm));
        }
        self.check_mixing()?;
        let norm = self.normalization_info();
        let samples = self
            .samples
            .iter()
            .map(|s| Sample {
                t: norm.time(s.t),
                temperature: s.temperature.map(|x| norm.temperature(x)),
                current: norm.current(s.current),
            })
            .collect();
        let ds = Dataset {
            samples,
            units: Units::Normalized,
            norm,
            ..self.clone()
        };
        Ok((ds, norm))
    }

    /// Inverse of [`Dataset::normalize`].
    pub fn denormalize(&self, norm: &NormalizationInfo) -> Dataset {
        if self.units == Units::Physical {
            return self.clone();
        }
        let samples = self
            .samples
            .iter()
            .map(|s| Sample {
                t: norm.time_inv(s.t),
                temperature: s.temperature.map(|x| norm.temperature_inv(x)),
                current: norm.current_inv(s.current),
            })
            .collect();
        Dataset {
            samples,
            units: Units::Physical,
            norm: *norm,
            ..self.clone()
        }
    }

    /// CSV with header `t,temperature,current`; the temperature column is
    /// empty for static datasets.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,temperature,current\n");
        for s in &self.samples {
            let temp = s.temperature.map(fmt_f64).unwrap_or_default();
            let _ = writeln!(out, "{},{},{}", fmt_f64(s.t), temp, fmt_f64(s.current));
        }
        out
    }

    /// Sidecar `key = value` metadata describing how the data was produced.
    pub fn metadata(&self, circuit: &str) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "circuit = {circuit}");
        let _ = writeln!(out, "noise = {}", self.noise.name());
        let _ = writeln!(out, "sigma = {}", fmt_f64(self.sigma));
        let _ = writeln!(out, "seed = {}", self.seed);
        let _ = writeln!(out, "t_end = {}", fmt_f64(self.t_end));
        let _ = writeln!(out, "n_samples = {}", self.samples.len());
        let _ = writeln!(
            out,
            "units = {}",
            match self.units {
                Units::Physical => "physical",
                Units::Normalized => "normalized",
            }
        );
        let _ = writeln!(out, "norm.t_scale = {}", fmt_f64(self.norm.t_scale));
        let _ = writeln!(out, "norm.temp_offset = {}", fmt_f64(self.norm.temp_offset));
        let _ = writeln!(out, "norm.temp_scale = {}", fmt_f64(self.norm.temp_scale));
        let _ = writeln!(out, "norm.current_scale = {}", fmt_f64(self.norm.current_scale));
        out
    }

    /// Write `<path>` (CSV) and `<path>.meta` (metadata).
    pub fn write(&self, path: &Path, circuit: &str) -> Result<()> {
        fs::write(path, self.to_csv())?;
        let mut meta = path.as_os_str().to_owned();
        meta.push(".meta");
        fs::write(meta, self.metadata(circuit))?;
        Ok(())
    }

    /// Read a dataset written by [`Dataset::write`].
    pub fn read(path: &Path) -> Result<Dataset> {
        let text = fs::read_to_string(path)?;
        let samples = parse_csv(&text)?;
        let mut meta_path = path.as_os_str().to_owned();
        meta_path.push(".meta");
        let meta = fs::read_to_string(meta_path)?;
        let mut ds = Dataset {
            samples,
            sigma: 0.0,
            seed: 0,
            t_end: 0.0,
            noise: NoiseModel::Absolute,
            units: Units::Physical,
            norm: NormalizationInfo {
                t_scale: 1.0,
                temp_offset: 0.0,
                temp_scale: 1.0,
                current_scale: 1.0,
            },
        };
        for (lineno, line) in meta.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
                line: lineno + 1,
                msg: format!("expected key = value, got {line:?}"),
            })?;
            let (k, v) = (k.trim(), v.trim());
            let num = |v: &str| -> Result<f64> {
                v.parse::<f64>().map_err(|e| Error::Parse {
                    line: lineno + 1,
                    msg: format!("{k}: {e}"),
                })
            };
            match k {
                "noise" => {
                    ds.noise = match v {
                        "absolute" => NoiseModel::Absolute,
                        "inverse-current" => NoiseModel::InverseCurrent,
                        _ => {
                            return Err(Error::Parse {
                                line: lineno + 1,
                                msg: format!("unknown noise model {v:?}"),
                            })
                        }
                    }
                }
                "sigma" => ds.sigma = num(v)?,
                "seed" => {
                    ds.seed = v.parse().map_err(|e| Error::Parse {
                        line: lineno + 1,
                        msg: format!("seed: {e}"),
                    })?
                }
                "t_end" => ds.t_end = num(v)?,
                "units" => {
                    ds.units = if v == "normalized" {
                        Units::Normalized
                    } else {
                        Units::Physical
                    }
                }
                "norm.t_scale" => ds.norm.t_scale = num(v)?,
                "norm.temp_offset" => ds.norm.temp_offset = num(v)?,
                "norm.temp_scale" => ds.norm.temp_scale = num(v)?,
                "norm.current_scale" => ds.norm.current_scale = num(v)?,
                _ => {}
            }
        }
        ds.check_mixing()?;
        Ok(ds)
    }
}

fn parse_csv(text: &str) -> Result<Vec<Sample>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == "t,temperature,current" => {}
        _ => {
            return Err(Error::Parse {
                line: 1,
                msg: "expected header t,temperature,current".into(),
            })
        }
    }
    let mut out = Vec::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let bad = |msg: String| Error::Parse { line: i + 1, msg };
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 3 {
            return Err(bad(format!("expected 3 columns, got {}", cols.len())));
        }
        let parse = |s: &str| s.trim().parse::<f64>().map_err(|e| bad(e.to_string()));
        out.push(Sample {
            t: parse(cols[0])?,
            temperature: if cols[1].trim().is_empty() {
                None
            } else {
                Some(parse(cols[1])?)
            },
            current: parse(cols[2])?,
        });
    }
    Ok(out)
}

/// 17 significant digits, enough to round-trip any `f64`.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}
