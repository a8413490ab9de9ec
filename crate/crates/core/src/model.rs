//! PINN models: a surrogate network for the branch currents plus trainable
//! circuit parameters, all in normalized units.
//!
//! Normalized units follow [`NormalizationInfo`]: time in `t_scale`, current
//! in `current_scale`, resistance in `U_DC / current_scale` and capacitance in
//! `t_scale / (U_DC / current_scale)`. In these units every `R C` product is a
//! time constant measured in `t_scale`, and `U_DC / R` becomes `1 / R`.

use crate::autodiff::{Tape, Var};
use crate::ecm::{EcmSpec, RcBranch};
use crate::error::{Error, Result};
use crate::nn::{Mlp, MlpSpec, PositiveScalar, TapeMlp};
use crate::synth::{Dataset, NormalizationInfo};

/// One recovered physical quantity.
#[derive(Debug, Clone, PartialEq)]
pub struct NamedValue {
    pub name: String,
    pub value: f64,
}

impl NamedValue {
    pub fn new(name: impl Into<String>, value: f64) -> Self {
        NamedValue {
            name: name.into(),
            value,
        }
    }
}

/// Static-circuit PINN: `t -> (I01, I2, ..., In)`.
#[derive(Debug, Clone, PartialEq)]
pub struct StaticPinn {
    pub net: Mlp,
    pub r0: PositiveScalar,
    /// `(R_i, C_i)` for each polarization branch, in model order.
    pub branches: Vec<(PositiveScalar, PositiveScalar)>,
    pub u_dc: f64,
    pub norm: NormalizationInfo,
}

impl StaticPinn {
    /// Fresh model with Glorot-initialized network and every circuit scalar
    /// set to `init_guess` (normalized units).
    pub fn new(
        n_branches: usize,
        hidden: Vec<usize>,
        u_dc: f64,
        norm: NormalizationInfo,
        seed: u64,
        init_guess: f64,
    ) -> Result<Self> {
        let spec = MlpSpec::new(1, hidden, n_branches.max(1))?;
        let guess = PositiveScalar::from_value(init_guess)?;
        Ok(StaticPinn {
            net: Mlp::init(&spec, seed)?,
            r0: guess,
            branches: vec![(guess, guess); n_branches],
            u_dc,
            norm,
        })
    }

    pub fn n_branches(&self) -> usize {
        self.branches.len()
    }

    pub fn n_states(&self) -> usize {
        self.branches.len().max(1)
    }

    pub fn n_scalars(&self) -> usize {
        1 + 2 * self.branches.len()
    }

    pub fn n_params(&self) -> usize {
        self.net.n_params() + self.n_scalars()
    }

    /// Network parameters followed by `raw(R0), raw(R1), raw(C1), raw(R2), ...`.
    pub fn params(&self) -> Vec<f64> {
        let mut p = self.net.params();
        p.push(self.r0.raw);
        for (r, c) in &self.branches {
            p.push(r.raw);
            p.push(c.raw);
        }
        p
    }

    pub fn set_params(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.n_params() {
            return Err(Error::LengthMismatch {
                expected: self.n_params(),
                got: flat.len(),
            });
        }
        let nn = self.net.n_params();
        self.net.set_params(&flat[..nn])?;
        self.r0.raw = flat[nn];
        for (i, (r, c)) in self.branches.iter_mut().enumerate() {
            r.raw = flat[nn + 1 + 2 * i];
            c.raw = flat[nn + 2 + 2 * i];
        }
        Ok(())
    }

    pub fn param_names(&self) -> Vec<String> {
        let mut names = self.net.param_names("main");
        names.push("raw.r0".into());
        for i in 1..=self.branches.len() {
            names.push(format!("raw.r{i}"));
            names.push(format!("raw.c{i}"));
        }
        names
    }

    /// Surrogate branch currents in normalized units at normalized time `s`.
    pub fn currents_normalized(&self, s: f64) -> Vec<f64> {
        self.net.forward(&[s]).expect("network has one input")
    }

    /// Predicted total current in physical units.
    pub fn total_current(&self, t: f64) -> f64 {
        let y: f64 = self.currents_normalized(self.norm.time(t)).iter().sum();
        self.norm.current_inv(y)
    }

    /// Recovered circuit in physical units, model branch order.
    pub fn circuit(&self) -> Result<EcmSpec> {
        let rs = self.norm.resistance_scale(self.u_dc);
        let cs = self.norm.capacitance_scale(self.u_dc);
        let branches = self
            .branches
            .iter()
            .map(|(r, c)| RcBranch::new(r.value() * rs, c.value() * cs))
            .collect::<Result<Vec<_>>>()?;
        EcmSpec::new(self.r0.value() * rs, branches, self.u_dc)
    }

    /// Recovered parameters in physical units as `R0, C1, R1, C2, R2, ...`,
    /// with branches sorted by ascending time constant. The total current is
    /// invariant under relabeling the branches, so this is the comparable form.
    pub fn materialize_params(&self) -> Vec<NamedValue> {
        match self.circuit() {
            Ok(spec) => circuit_params(&canonical(&spec)),
            Err(_) => {
                // Only reachable with overflowed raw values; report them as-is.
                let rs = self.norm.resistance_scale(self.u_dc);
                let cs = self.norm.capacitance_scale(self.u_dc);
                let mut out = vec![NamedValue::new("R0", self.r0.value() * rs)];
                for (i, (r, c)) in self.branches.iter().enumerate() {
                    out.push(NamedValue::new(format!("C{}", i + 1), c.value() * cs));
                    out.push(NamedValue::new(format!("R{}", i + 1), r.value() * rs));
                }
                out
            }
        }
    }

    /// Register all trainables on `tape`.
    pub fn on_tape<'t>(&self, tape: &'t Tape) -> TapeStaticPinn<'t> {
        let net = self.net.on_tape(tape);
        let (r0_raw, r0) = self.r0.on_tape(tape);
        let mut raws = vec![r0_raw];
        let mut branches = Vec::new();
        for (r, c) in &self.branches {
            let (rr, rv) = r.on_tape(tape);
            let (cr, cv) = c.on_tape(tape);
            raws.push(rr);
            raws.push(cr);
            branches.push((rv, cv));
        }
        TapeStaticPinn {
            net,
            r0,
            branches,
            raws,
        }
    }
}

/// Branches sorted by ascending time constant.
pub fn canonical(spec: &EcmSpec) -> EcmSpec {
    let mut b = spec.branches().to_vec();
    b.sort_by(|x, y| x.time_constant().total_cmp(&y.time_constant()));
    EcmSpec::new(spec.r0(), b, spec.u_dc()).expect("reordering keeps a valid circuit")
}

/// `R0, C1, R1, C2, R2, ...` in stored branch order.
pub fn circuit_params(spec: &EcmSpec) -> Vec<NamedValue> {
    let mut out = vec![NamedValue::new("R0", spec.r0())];
    for (i, b) in spec.branches().iter().enumerate() {
        out.push(NamedValue::new(format!("C{}", i + 1), b.capacitance));
        out.push(NamedValue::new(format!("R{}", i + 1), b.resistance));
    }
    out
}

/// A [`StaticPinn`] whose trainables live on a tape.
pub struct TapeStaticPinn<'t> {
    pub net: TapeMlp<'t>,
    /// Materialized `R0` (normalized).
    pub r0: Var<'t>,
    /// Materialized `(R_i, C_i)` (normalized).
    pub branches: Vec<(Var<'t>, Var<'t>)>,
    raws: Vec<Var<'t>>,
}

impl<'t> TapeStaticPinn<'t> {
    /// Every trainable leaf in [`StaticPinn::params`] order.
    pub fn params(&self) -> Vec<Var<'t>> {
        let mut p = self.net.params();
        p.extend_from_slice(&self.raws);
        p
    }
}

/// Temperature PINN.
///
/// The subnetwork learns `rho(T) = ln r0(T) - rho_ref` and each branch
/// resistance is `scale_i * r0(T)`. Since every resistance shares the same
/// temperature law, the branch currents at temperature `T` are
/// `g(t / r0(T)) / r0(T)` for a temperature-independent `g`. The main network
/// therefore sees the rescaled time `u = s * exp(rho_ref - ln r0)` together
/// with `ln r0`, and its outputs are multiplied by `exp(-ln r0)`.
/// `rho_ref` is a fixed offset estimated from the data
/// ([`TempPinn::reference_log_r0`]) so that both nets start near unit scale.
#[derive(Debug, Clone, PartialEq)]
pub struct TempPinn {
    pub main_net: Mlp,
    pub sub_net: Mlp,
    pub scales: Vec<PositiveScalar>,
    pub caps: Vec<PositiveScalar>,
    pub log_r0_ref: f64,
    pub u_dc: f64,
    pub norm: NormalizationInfo,
}

impl TempPinn {
    pub fn new(
        n_branches: usize,
        main_hidden: Vec<usize>,
        sub_hidden: Vec<usize>,
        log_r0_ref: f64,
        u_dc: f64,
        norm: NormalizationInfo,
        seed: u64,
        init_guess: f64,
    ) -> Result<Self> {
        if !log_r0_ref.is_finite() {
            return Err(Error::InvalidInput(format!(
                "reference log-resistance must be finite, got {log_r0_ref}"
            )));
        }
        let main = MlpSpec::new(2, main_hidden, n_branches.max(1))?;
        let sub = MlpSpec::new(1, sub_hidden, 1)?;
        let guess = PositiveScalar::from_value(init_guess)?;
        Ok(TempPinn {
            main_net: Mlp::init(&main, seed)?,
            sub_net: Mlp::init(&sub, seed.wrapping_add(1))?,
            scales: vec![guess; n_branches],
            caps: vec![guess; n_branches],
            log_r0_ref,
            u_dc,
            norm,
        })
    }

    /// Data-driven offset for `ln r0` in normalized units: minus the log of
    /// the smallest late-time mean current over the temperature sweep (the
    /// steady current `1 / r0` of the most resistive temperature).
    pub fn reference_log_r0(normalized: &Dataset) -> Result<f64> {
        let mut smallest = f64::INFINITY;
        for temp in normalized.temperatures() {
            let mut pts: Vec<_> = normalized
                .samples
                .iter()
                .filter(|s| s.temperature == Some(temp))
                .collect();
            pts.sort_by(|a, b| a.t.total_cmp(&b.t));
            let late = &pts[pts.len() / 2..];
            let mean = late.iter().map(|s| s.current).sum::<f64>() / late.len() as f64;
            smallest = smallest.min(mean.abs());
        }
        if !(smallest.is_finite() && smallest > 0.0) {
            return Err(Error::InvalidInput(
                "cannot estimate a steady current from the data".into(),
            ));
        }
        Ok(-smallest.ln())
    }

    pub fn n_branches(&self) -> usize {
        self.caps.len()
    }

    pub fn n_states(&self) -> usize {
        self.caps.len().max(1)
    }

    pub fn n_params(&self) -> usize {
        self.main_net.n_params() + self.sub_net.n_params() + 2 * self.caps.len()
    }

    /// Main-net parameters, sub-net parameters, then
    /// `raw(scale1), raw(C1), raw(scale2), raw(C2), ...`.
    pub fn params(&self) -> Vec<f64> {
        let mut p = self.main_net.params();
        p.extend(self.sub_net.params());
        for (s, c) in self.scales.iter().zip(&self.caps) {
            p.push(s.raw);
            p.push(c.raw);
        }
        p
    }

    pub fn set_params(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.n_params() {
            return Err(Error::LengthMismatch {
                expected: self.n_params(),
                got: flat.len(),
            });
        }
        let nm = self.main_net.n_params();
        let ns = self.sub_net.n_params();
        self.main_net.set_params(&flat[..nm])?;
        self.sub_net.set_params(&flat[nm..nm + ns])?;
        let off = nm + ns;
        for (i, (s, c)) in self.scales.iter_mut().zip(self.caps.iter_mut()).enumerate() {
            s.raw = flat[off + 2 * i];
            c.raw = flat[off + 2 * i + 1];
        }
        Ok(())
    }

    pub fn param_names(&self) -> Vec<String> {
        let mut names = self.main_net.param_names("main");
        names.extend(self.sub_net.param_names("sub"));
        for i in 1..=self.caps.len() {
            names.push(format!("raw.scale{i}"));
            names.push(format!("raw.c{i}"));
        }
        names
    }

    /// `ln r0` in normalized resistance units at a normalized temperature.
    pub fn log_r0_normalized(&self, temp_norm: f64) -> f64 {
        self.log_r0_ref + self.sub_net.forward(&[temp_norm]).expect("sub-net has one input")[0]
    }

    /// Surrogate branch currents in normalized units at normalized time `s`
    /// and normalized temperature.
    pub fn currents_normalized(&self, s: f64, temp_norm: f64) -> Vec<f64> {
        let rho = self.log_r0_normalized(temp_norm);
        let u = s * (self.log_r0_ref - rho).exp();
        let b = (-rho).exp();
        let out = self.main_net.forward(&[u, rho]).expect("main net has two inputs");
        out.into_iter().map(|z| z * b).collect()
    }

    /// Predicted total current in physical units.
    pub fn total_current(&self, t: f64, temperature: f64) -> f64 {
        let y: f64 = self
            .currents_normalized(self.norm.time(t), self.norm.temperature(temperature))
            .iter()
            .sum();
        self.norm.current_inv(y)
    }

    /// Learned representative resistance `R0(T)` in physical units.
    pub fn r0_at(&self, temperature: f64) -> f64 {
        let x = self.norm.temperature(temperature);
        self.log_r0_normalized(x).exp() * self.norm.resistance_scale(self.u_dc)
    }

    /// Learned `R_i(T) = scale_i * R0(T)` for branch `i` (1-based).
    pub fn branch_resistance_at(&self, branch: usize, temperature: f64) -> f64 {
        self.scales[branch - 1].value() * self.r0_at(temperature)
    }

    /// Scalars `scale1, C1, scale2, C2, ...`; capacitances in physical units.
    pub fn materialize_params(&self) -> Vec<NamedValue> {
        let cs = self.norm.capacitance_scale(self.u_dc);
        let mut out = Vec::new();
        for (i, (s, c)) in self.scales.iter().zip(&self.caps).enumerate() {
            out.push(NamedValue::new(format!("scale{}", i + 1), s.value()));
            out.push(NamedValue::new(format!("C{}", i + 1), c.value() * cs));
        }
        out
    }

    /// Learned resistance curves on a temperature grid: rows of
    /// `(T, R0(T), R1(T), ...)`.
    pub fn resistance_curves(&self, temperatures: &[f64]) -> Vec<Vec<f64>> {
        temperatures
            .iter()
            .map(|&t| {
                let r0 = self.r0_at(t);
                let mut row = vec![t, r0];
                row.extend(self.scales.iter().map(|s| s.value() * r0));
                row
            })
            .collect()
    }

    pub fn on_tape<'t>(&self, tape: &'t Tape) -> TapeTempPinn<'t> {
        let main = self.main_net.on_tape(tape);
        let sub = self.sub_net.on_tape(tape);
        let mut raws = Vec::new();
        let mut scales = Vec::new();
        let mut caps = Vec::new();
        for (s, c) in self.scales.iter().zip(&self.caps) {
            let (sr, sv) = s.on_tape(tape);
            let (cr, cv) = c.on_tape(tape);
            raws.push(sr);
            raws.push(cr);
            scales.push(sv);
            caps.push(cv);
        }
        TapeTempPinn {
            main,
            sub,
            scales,
            caps,
            log_r0_ref: self.log_r0_ref,
            raws,
        }
    }
}

pub struct TapeTempPinn<'t> {
    pub main: TapeMlp<'t>,
    pub sub: TapeMlp<'t>,
    pub scales: Vec<Var<'t>>,
    pub caps: Vec<Var<'t>>,
    pub log_r0_ref: f64,
    raws: Vec<Var<'t>>,
}

impl<'t> TapeTempPinn<'t> {
    /// `ln r0` at a normalized temperature.
    pub fn log_r0(&self, temp: Var<'t>) -> Result<Var<'t>> {
        Ok(self.sub.forward(&[temp])?[0] + self.log_r0_ref)
    }

    /// Branch currents at normalized time `s` given `ln r0`.
    pub fn currents(&self, s: Var<'t>, log_r0: Var<'t>) -> Result<Vec<Var<'t>>> {
        let u = s * (-log_r0 + self.log_r0_ref).exp();
        let b = (-log_r0).exp();
        Ok(self.main.forward(&[u, log_r0])?.into_iter().map(|z| z * b).collect())
    }

    pub fn params(&self) -> Vec<Var<'t>> {
        let mut p = self.main.params();
        p.extend(self.sub.params());
        p.extend_from_slice(&self.raws);
        p
    }
}

/// Checkpoint text: one `name = value` line per trainable, values with
/// 17 significant digits.
pub fn checkpoint_text(names: &[String], params: &[f64]) -> String {
    use std::fmt::Write as _;
    let mut out = String::new();
    for (n, v) in names.iter().zip(params) {
        let _ = writeln!(out, "{n} = {}", crate::synth::fmt_f64(*v));
    }
    out
}

/// Parse [`checkpoint_text`] back into names and values.
pub fn parse_checkpoint(text: &str) -> Result<(Vec<String>, Vec<f64>)> {
    let mut names = Vec::new();
    let mut values = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |msg: String| Error::Parse { line: i + 1, msg };
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| err(format!("expected `name = value`, got `{line}`")))?;
        let v: f64 = v
            .trim()
            .parse()
            .map_err(|_| err(format!("bad number `{}`", v.trim())))?;
        names.push(k.trim().to_string());
        values.push(v);
    }
    Ok((names, values))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn norm() -> NormalizationInfo {
        NormalizationInfo {
            t_scale: 20.0,
            temp_offset: 0.0,
            temp_scale: 1.0,
            current_scale: 0.5,
        }
    }

    #[test]
    fn unit_raw_materializes_to_scale() {
        let m = StaticPinn::new(2, vec![15, 15], 1.0, norm(), 0, 1.0).unwrap();
        assert_eq!(m.r0.raw, 0.0);
        let spec = m.circuit().unwrap();
        // R unit = 1 / 0.5 = 2, C unit = 20 / 2 = 10
        assert_eq!(spec.r0(), 2.0);
        assert_eq!(spec.branches()[0].capacitance, 10.0);
        assert_eq!(m.net.spec().output_dim, 2);
    }

    #[test]
    fn param_round_trip() {
        let mut m = StaticPinn::new(2, vec![5], 1.0, norm(), 0, 1.0).unwrap();
        let mut p = m.params();
        assert_eq!(p.len(), m.n_params());
        assert_eq!(p.len(), m.param_names().len());
        let n = p.len();
        p[n - 1] = 0.3;
        p[n - 5] = -0.2;
        m.set_params(&p).unwrap();
        assert_eq!(m.params(), p);
        assert_eq!(m.branches[1].1.raw, 0.3);
        assert_eq!(m.r0.raw, -0.2);
    }

    #[test]
    fn materialized_params_are_sorted_by_time_constant() {
        let mut m = StaticPinn::new(2, vec![5], 1.0, norm(), 0, 1.0).unwrap();
        m.branches[0] = (
            PositiveScalar::from_value(4.0).unwrap(),
            PositiveScalar::from_value(0.05).unwrap(),
        );
        m.branches[1] = (
            PositiveScalar::from_value(1.75).unwrap(),
            PositiveScalar::from_value(0.01).unwrap(),
        );
        let p = m.materialize_params();
        let names: Vec<_> = p.iter().map(|v| v.name.as_str()).collect();
        assert_eq!(names, ["R0", "C1", "R1", "C2", "R2"]);
        assert!((p[2].value - 3.5).abs() < 1e-12);
        assert!((p[4].value - 8.0).abs() < 1e-12);
    }

    #[test]
    fn checkpoint_round_trip_is_exact() {
        let m = StaticPinn::new(2, vec![4, 3], 1.0, norm(), 5, 0.7).unwrap();
        let text = checkpoint_text(&m.param_names(), &m.params());
        let (names, values) = parse_checkpoint(&text).unwrap();
        assert_eq!(names, m.param_names());
        assert_eq!(values, m.params());
        assert!(parse_checkpoint("a = x").is_err());
    }

    #[test]
    fn pure_resistor_model_has_one_output() {
        let m = StaticPinn::new(0, vec![4], 1.0, norm(), 0, 1.0).unwrap();
        assert_eq!(m.n_states(), 1);
        assert_eq!(m.n_scalars(), 1);
    }

    #[test]
    fn temperature_model_shapes() {
        let m = TempPinn::new(1, vec![15], vec![15], 0.0, 1.0, norm(), 3, 1.0).unwrap();
        assert_eq!(m.main_net.spec().input_dim, 2);
        assert_eq!(m.sub_net.spec().output_dim, 1);
        let mut p = m.params();
        assert_eq!(p.len(), m.param_names().len());
        let n = p.len();
        p[n - 2] = (0.5f64).ln();
        let mut m2 = m.clone();
        m2.set_params(&p).unwrap();
        let mp = m2.materialize_params();
        assert!((mp[0].value - 0.5).abs() < 1e-15);
        for t in [-1.0, 0.0, 0.7] {
            let r0 = m2.r0_at(t);
            assert!(r0 > 0.0);
            assert!((m2.branch_resistance_at(1, t) / r0 - 0.5).abs() < 1e-15);
        }
    }
}
