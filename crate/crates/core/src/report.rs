//! Fit reports as `key = value` text, and report-to-report comparison.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::model::NamedValue;
use crate::pinn::LossParts;
use crate::synth::fmt_f64;

/// Recovered parameters of one fit, optionally with ground truth.
///
/// `topology` identifies the parameter layout (for example `static:2` or
/// `temperature:1`); reports with different topologies are not comparable.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FitReport {
    pub method: String,
    pub topology: String,
    pub meta: Vec<(String, String)>,
    pub params: Vec<NamedValue>,
    pub truth: Vec<NamedValue>,
    pub loss: Option<LossParts>,
    /// Flat named model parameters, written as `checkpoint.<name>` lines.
    pub checkpoint: Vec<NamedValue>,
}

fn relative_difference(value: f64, reference: f64) -> f64 {
    if reference == 0.0 {
        (value - reference).abs()
    } else {
        ((value - reference) / reference).abs()
    }
}

impl FitReport {
    pub fn new(method: impl Into<String>, topology: impl Into<String>) -> Self {
        FitReport {
            method: method.into(),
            topology: topology.into(),
            ..FitReport::default()
        }
    }

    pub fn with_meta(mut self, key: impl Into<String>, value: impl ToString) -> Self {
        self.meta.push((key.into(), value.to_string()));
        self
    }

    pub fn meta_value(&self, key: &str) -> Option<&str> {
        self.meta.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn param(&self, name: &str) -> Option<f64> {
        self.params.iter().find(|p| p.name == name).map(|p| p.value)
    }

    /// `|recovered - true| / |true|` for every parameter with a known truth.
    pub fn relative_errors(&self) -> Vec<NamedValue> {
        self.params
            .iter()
            .filter_map(|p| {
                self.truth
                    .iter()
                    .find(|t| t.name == p.name)
                    .map(|t| NamedValue::new(p.name.clone(), relative_difference(p.value, t.value)))
            })
            .collect()
    }

    pub fn max_relative_error(&self) -> Option<f64> {
        self.relative_errors().iter().map(|e| e.value).reduce(f64::max)
    }

    /// A report holding the truth values as its parameters.
    pub fn truth_report(&self) -> FitReport {
        FitReport {
            method: "truth".into(),
            topology: self.topology.clone(),
            meta: vec![],
            params: self.truth.clone(),
            truth: vec![],
            loss: None,
            checkpoint: vec![],
        }
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "method = {}", self.method);
        let _ = writeln!(out, "topology = {}", self.topology);
        for (k, v) in &self.meta {
            let _ = writeln!(out, "meta.{k} = {v}");
        }
        if let Some(l) = &self.loss {
            let _ = writeln!(out, "loss.data = {}", fmt_f64(l.data));
            let _ = writeln!(out, "loss.physics = {}", fmt_f64(l.physics));
            let _ = writeln!(out, "loss.ic = {}", fmt_f64(l.ic));
        }
        for p in &self.params {
            let _ = writeln!(out, "param.{} = {}", p.name, fmt_f64(p.value));
        }
        for t in &self.truth {
            let _ = writeln!(out, "truth.{} = {}", t.name, fmt_f64(t.value));
        }
        for e in self.relative_errors() {
            let _ = writeln!(out, "rel_error.{} = {}", e.name, fmt_f64(e.value));
        }
        for c in &self.checkpoint {
            let _ = writeln!(out, "checkpoint.{} = {}", c.name, fmt_f64(c.value));
        }
        out
    }

    /// Parse [`FitReport::to_text`] output. Blank lines and `#` comments are
    /// skipped; `rel_error.*` lines are recomputed rather than stored.
    pub fn parse(text: &str) -> Result<FitReport> {
        let mut r = FitReport::default();
        let mut loss = LossParts::default();
        let mut loss_keys = 0;
        let (mut has_method, mut has_topology) = (false, false);
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |msg: String| Error::Parse { line: line_no, msg };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err(format!("expected `key = value`, got `{line}`")))?;
            let (key, value) = (key.trim(), value.trim());
            let number = || {
                value
                    .parse::<f64>()
                    .map_err(|_| err(format!("`{key}` needs a number, got `{value}`")))
            };
            if key == "method" {
                r.method = value.to_string();
                has_method = true;
            } else if key == "topology" {
                r.topology = value.to_string();
                has_topology = true;
            } else if let Some(k) = key.strip_prefix("meta.") {
                r.meta.push((k.to_string(), value.to_string()));
            } else if let Some(k) = key.strip_prefix("param.") {
                r.params.push(NamedValue::new(k, number()?));
            } else if let Some(k) = key.strip_prefix("truth.") {
                r.truth.push(NamedValue::new(k, number()?));
            } else if let Some(k) = key.strip_prefix("checkpoint.") {
                r.checkpoint.push(NamedValue::new(k, number()?));
            } else if key.starts_with("rel_error.") {
                number()?;
            } else if let Some(k) = key.strip_prefix("loss.") {
                let v = number()?;
                match k {
                    "data" => loss.data = v,
                    "physics" => loss.physics = v,
                    "ic" => loss.ic = v,
                    _ => return Err(err(format!("unknown loss component `{k}`"))),
                }
                loss_keys += 1;
            } else {
                return Err(err(format!("unknown key `{key}`")));
            }
        }
        if !has_method || !has_topology {
            return Err(Error::Parse {
                line: 0,
                msg: "report needs both `method` and `topology`".into(),
            });
        }
        if loss_keys > 0 {
            r.loss = Some(loss);
        }
        Ok(r)
    }
}

/// One row of a report comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct CompareRow {
    pub name: String,
    pub value: f64,
    pub reference: f64,
    pub rel_diff: f64,
    pub flagged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub threshold: f64,
    pub rows: Vec<CompareRow>,
}

impl Comparison {
    pub fn any_flagged(&self) -> bool {
        self.rows.iter().any(|r| r.flagged)
    }

    pub fn to_table(&self) -> String {
        let mut out = format!(
            "{:<10} {:>24} {:>24} {:>12}  flag\n",
            "param", "value", "reference", "rel_diff"
        );
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{:<10} {:>24} {:>24} {:>12.4e}  {}",
                r.name,
                fmt_f64(r.value),
                fmt_f64(r.reference),
                r.rel_diff,
                if r.flagged { "EXCEEDS" } else { "ok" }
            );
        }
        out
    }
}

/// Parameter-wise relative difference of `report` against `reference`.
///
/// Rows exceeding `threshold` (relative, e.g. `0.1`) are flagged. Reports
/// must share topology and parameter names.
pub fn compare(report: &FitReport, reference: &FitReport, threshold: f64) -> Result<Comparison> {
    if report.topology != reference.topology {
        return Err(Error::Topology(format!(
            "`{}` vs `{}`",
            report.topology, reference.topology
        )));
    }
    let names = |r: &FitReport| r.params.iter().map(|p| p.name.clone()).collect::<Vec<_>>();
    if names(report) != names(reference) {
        return Err(Error::Topology(format!(
            "parameters {:?} vs {:?}",
            names(report),
            names(reference)
        )));
    }
    let rows = report
        .params
        .iter()
        .zip(&reference.params)
        .map(|(a, b)| {
            let d = relative_difference(a.value, b.value);
            CompareRow {
                name: a.name.clone(),
                value: a.value,
                reference: b.value,
                rel_diff: d,
                flagged: d > threshold,
            }
        })
        .collect();
    Ok(Comparison { threshold, rows })
}
