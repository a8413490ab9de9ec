//! Parallel-RC equivalent circuit models of time-domain dielectric response.
//!
//! A circuit is a steady-state resistor `R0` in parallel with `n` series RC
//! branches, stressed by a voltage step `U_DC` at `t = 0`. The total current is
//!
//! ```text
//! I(t) = U/R0 + sum_i (U/R_i) exp(-t / (R_i C_i))
//! ```
//!
//! For the ODE form the steady-state current is folded into the first branch,
//! so the state vector is `(I01, I2, ..., In)` with
//!
//! ```text
//! dI01/dt + (I01 - U/R0) / (R1 C1) = 0
//! dIi/dt  + Ii / (Ri Ci)           = 0,   i >= 2
//! ```
//!
//! and `I(0) = U/R0 + sum_i U/R_i`.

use crate::error::{Error, Result};

/// Boltzmann constant in eV/K (CODATA 2018).
pub const BOLTZMANN_EV: f64 = 8.617_333_262e-5;

/// One series RC polarization branch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RcBranch {
    pub resistance: f64,
    pub capacitance: f64,
}

impl RcBranch {
    pub fn new(resistance: f64, capacitance: f64) -> Result<Self> {
        let b = RcBranch {
            resistance,
            capacitance,
        };
        b.validate()?;
        Ok(b)
    }

    fn validate(&self) -> Result<()> {
        if !(self.resistance > 0.0 && self.resistance.is_finite()) {
            return Err(Error::InvalidCircuit(format!(
                "branch resistance must be positive, got {}",
                self.resistance
            )));
        }
        if !(self.capacitance > 0.0 && self.capacitance.is_finite()) {
            return Err(Error::InvalidCircuit(format!(
                "branch capacitance must be positive, got {}",
                self.capacitance
            )));
        }
        let tau = self.time_constant();
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(Error::InvalidCircuit(format!(
                "branch time constant must be finite and positive, got {tau}"
            )));
        }
        Ok(())
    }

    #[inline]
    pub fn time_constant(&self) -> f64 {
        self.resistance * self.capacitance
    }
}

/// A static parallel-RC equivalent circuit.
#[derive(Debug, Clone, PartialEq)]
pub struct EcmSpec {
    r0: f64,
    branches: Vec<RcBranch>,
    u_dc: f64,
}

impl EcmSpec {
    pub fn new(r0: f64, branches: Vec<RcBranch>, u_dc: f64) -> Result<Self> {
        if !(r0 > 0.0 && r0.is_finite()) {
            return Err(Error::InvalidCircuit(format!(
                "r0 must be positive, got {r0}"
            )));
        }
        if !(u_dc > 0.0 && u_dc.is_finite()) {
            return Err(Error::InvalidCircuit(format!(
                "u_dc must be positive, got {u_dc}"
            )));
        }
        for b in &branches {
            b.validate()?;
        }
        Ok(EcmSpec { r0, branches, u_dc })
    }

    /// Convenience constructor from `(resistance, capacitance)` pairs.
    pub fn from_pairs(r0: f64, pairs: &[(f64, f64)], u_dc: f64) -> Result<Self> {
        let branches = pairs
            .iter()
            .map(|&(r, c)| RcBranch::new(r, c))
            .collect::<Result<Vec<_>>>()?;
        Self::new(r0, branches, u_dc)
    }

    pub fn r0(&self) -> f64 {
        self.r0
    }

    pub fn u_dc(&self) -> f64 {
        self.u_dc
    }

    pub fn branches(&self) -> &[RcBranch] {
        &self.branches
    }

    pub fn n_branches(&self) -> usize {
        self.branches.len()
    }

    /// Number of ODE state components, `max(n, 1)`.
    pub fn n_states(&self) -> usize {
        self.branches.len().max(1)
    }

    /// Branch time constants in stored order.
    pub fn time_constants(&self) -> Vec<f64> {
        self.branches.iter().map(RcBranch::time_constant).collect()
    }

    pub fn max_time_constant(&self) -> Option<f64> {
        self.branches
            .iter()
            .map(RcBranch::time_constant)
            .fold(None, |m, tau| Some(m.map_or(tau, |m: f64| m.max(tau))))
    }

    pub fn steady_current(&self) -> f64 {
        self.u_dc / self.r0
    }

    /// Total current at time `t >= 0`.
    pub fn total_current(&self, t: f64) -> f64 {
        let u = self.u_dc;
        let mut total = u / self.r0;
        for b in &self.branches {
            total += (u / b.resistance) * (-t / b.time_constant()).exp();
        }
        total
    }

    /// Current immediately after the voltage step, assuming no residual
    /// polarization. Same expression as `total_current(0.0)`.
    pub fn initial_current(&self) -> f64 {
        self.total_current(0.0)
    }

    /// ODE state `(I01, I2, ..., In)` at time `t`.
    pub fn branch_currents(&self, t: f64) -> Vec<f64> {
        let u = self.u_dc;
        let mut out = Vec::with_capacity(self.n_states());
        let steady = u / self.r0;
        match self.branches.split_first() {
            None => out.push(steady),
            Some((first, rest)) => {
                out.push(steady + (u / first.resistance) * (-t / first.time_constant()).exp());
                for b in rest {
                    out.push((u / b.resistance) * (-t / b.time_constant()).exp());
                }
            }
        }
        out
    }

    /// Analytical time derivatives of [`EcmSpec::branch_currents`].
    pub fn branch_current_derivatives(&self, t: f64) -> Vec<f64> {
        let u = self.u_dc;
        if self.branches.is_empty() {
            return vec![0.0];
        }
        self.branches
            .iter()
            .map(|b| {
                let tau = b.time_constant();
                -(u / b.resistance) / tau * (-t / tau).exp()
            })
            .collect()
    }

    /// Initial ODE state implied by the initial condition.
    pub fn initial_branch_currents(&self) -> Vec<f64> {
        self.branch_currents(0.0)
    }

    /// Residuals of the branch ODEs for a candidate state and its derivative.
    ///
    /// With no branches the single residual is `dI01/dt` (the state is the
    /// constant steady current).
    pub fn ode_residuals(&self, currents: &[f64], derivatives: &[f64]) -> Result<Vec<f64>> {
        let n = self.n_states();
        if currents.len() != n {
            return Err(Error::LengthMismatch {
                expected: n,
                got: currents.len(),
            });
        }
        if derivatives.len() != n {
            return Err(Error::LengthMismatch {
                expected: n,
                got: derivatives.len(),
            });
        }
        Ok(self.ode_rhs_residuals(currents, derivatives))
    }

    fn ode_rhs_residuals(&self, currents: &[f64], derivatives: &[f64]) -> Vec<f64> {
        let steady = self.steady_current();
        match self.branches.split_first() {
            None => vec![derivatives[0]],
            Some((first, rest)) => {
                let mut r = Vec::with_capacity(self.branches.len());
                r.push(derivatives[0] + (currents[0] - steady) / first.time_constant());
                for (i, b) in rest.iter().enumerate() {
                    r.push(derivatives[i + 1] + currents[i + 1] / b.time_constant());
                }
                r
            }
        }
    }

    /// Right-hand side `dI/dt = f(I)` of the branch ODE system.
    pub fn ode_rhs(&self, currents: &[f64]) -> Vec<f64> {
        let zeros = vec![0.0; currents.len()];
        self.ode_rhs_residuals(currents, &zeros)
            .into_iter()
            .map(|r| -r)
            .collect()
    }

    /// Conditioning diagnostic with default thresholds.
    pub fn check_conditioning(&self) -> ConditioningReport {
        self.check_conditioning_with(&ConditioningThresholds::default())
    }

    pub fn check_conditioning_with(&self, thr: &ConditioningThresholds) -> ConditioningReport {
        let taus = self.time_constants();
        let i0 = self.initial_current();
        let mut ratios = Vec::new();
        let mut warnings = Vec::new();
        for i in 0..taus.len() {
            for j in (i + 1)..taus.len() {
                let ratio = taus[i].max(taus[j]) / taus[i].min(taus[j]);
                if ratio < thr.min_tau_ratio {
                    warnings.push(ConditioningWarning::CloseTimeConstants {
                        first: i,
                        second: j,
                        ratio,
                    });
                }
                ratios.push(TauRatio {
                    first: i,
                    second: j,
                    ratio,
                });
            }
        }
        let fractions: Vec<f64> = self
            .branches
            .iter()
            .map(|b| (self.u_dc / b.resistance) / i0)
            .collect();
        for (i, &f) in fractions.iter().enumerate() {
            if f < thr.min_amplitude_fraction {
                warnings.push(ConditioningWarning::WeakBranch {
                    branch: i,
                    fraction: f,
                });
            }
        }
        ConditioningReport {
            time_constants: taus,
            tau_ratios: ratios,
            amplitude_fractions: fractions,
            warnings,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConditioningThresholds {
    /// Two time constants closer than this ratio are flagged.
    pub min_tau_ratio: f64,
    /// Branches contributing less than this fraction of `I(0)` are flagged.
    pub min_amplitude_fraction: f64,
}

impl Default for ConditioningThresholds {
    fn default() -> Self {
        ConditioningThresholds {
            min_tau_ratio: 3.0,
            min_amplitude_fraction: 0.02,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TauRatio {
    pub first: usize,
    pub second: usize,
    /// Larger over smaller time constant, always `>= 1`.
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ConditioningWarning {
    CloseTimeConstants {
        first: usize,
        second: usize,
        ratio: f64,
    },
    WeakBranch {
        branch: usize,
        fraction: f64,
    },
}

impl std::fmt::Display for ConditioningWarning {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ConditioningWarning::CloseTimeConstants {
                first,
                second,
                ratio,
            } => write!(
                f,
                "branches {} and {} have time constants within a factor {:.3}",
                first + 1,
                second + 1,
                ratio
            ),
            ConditioningWarning::WeakBranch { branch, fraction } => write!(
                f,
                "branch {} carries only {:.3}% of the initial current",
                branch + 1,
                fraction * 100.0
            ),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConditioningReport {
    pub time_constants: Vec<f64>,
    pub tau_ratios: Vec<TauRatio>,
    pub amplitude_fractions: Vec<f64>,
    pub warnings: Vec<ConditioningWarning>,
}

impl ConditioningReport {
    pub fn is_well_conditioned(&self) -> bool {
        self.warnings.is_empty()
    }
}

/// Thermally activated resistance `R(T) = a * exp(w / (k_B T))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArrheniusLaw {
    /// Pre-exponential scale.
    pub a: f64,
    /// Activation energy in eV.
    pub w: f64,
}

impl ArrheniusLaw {
    pub fn new(a: f64, w: f64) -> Result<Self> {
        if !(a > 0.0 && a.is_finite()) {
            return Err(Error::InvalidCircuit(format!(
                "arrhenius scale must be positive, got {a}"
            )));
        }
        if !(w >= 0.0 && w.is_finite()) {
            return Err(Error::InvalidCircuit(format!(
                "activation energy must be non-negative, got {w}"
            )));
        }
        Ok(ArrheniusLaw { a, w })
    }

    /// Law whose value at `t_ref` equals `r_ref`.
    pub fn from_reference(r_ref: f64, t_ref: f64, w: f64) -> Result<Self> {
        if !(t_ref > 0.0) {
            return Err(Error::InvalidInput(format!(
                "reference temperature must be positive, got {t_ref}"
            )));
        }
        Self::new(r_ref * (-w / (BOLTZMANN_EV * t_ref)).exp(), w)
    }

    pub fn evaluate(&self, temperature: f64) -> f64 {
        self.a * (self.w / (BOLTZMANN_EV * temperature)).exp()
    }

    pub fn scaled(&self, factor: f64) -> Self {
        ArrheniusLaw {
            a: self.a * factor,
            w: self.w,
        }
    }
}

/// One temperature-dependent branch: Arrhenius resistance, fixed capacitance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TempBranch {
    pub law: ArrheniusLaw,
    pub capacitance: f64,
}

/// Equivalent circuit whose resistances follow Arrhenius laws.
#[derive(Debug, Clone, PartialEq)]
pub struct TempEcmSpec {
    pub r0_law: ArrheniusLaw,
    pub branches: Vec<TempBranch>,
    pub u_dc: f64,
}

impl TempEcmSpec {
    pub fn new(r0_law: ArrheniusLaw, branches: Vec<TempBranch>, u_dc: f64) -> Result<Self> {
        if !(u_dc > 0.0 && u_dc.is_finite()) {
            return Err(Error::InvalidCircuit(format!(
                "u_dc must be positive, got {u_dc}"
            )));
        }
        for b in &branches {
            if !(b.capacitance > 0.0 && b.capacitance.is_finite()) {
                return Err(Error::InvalidCircuit(format!(
                    "branch capacitance must be positive, got {}",
                    b.capacitance
                )));
            }
        }
        Ok(TempEcmSpec {
            r0_law,
            branches,
            u_dc,
        })
    }

    pub fn n_branches(&self) -> usize {
        self.branches.len()
    }

    /// Static circuit at a fixed temperature (kelvin).
    pub fn materialize(&self, temperature: f64) -> Result<EcmSpec> {
        if !(temperature > 0.0 && temperature.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "temperature must be positive, got {temperature}"
            )));
        }
        let branches = self
            .branches
            .iter()
            .map(|b| RcBranch::new(b.law.evaluate(temperature), b.capacitance))
            .collect::<Result<Vec<_>>>()?;
        EcmSpec::new(self.r0_law.evaluate(temperature), branches, self.u_dc)
    }
}
