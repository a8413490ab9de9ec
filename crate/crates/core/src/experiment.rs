//! End-to-end experiments: generate data, train a PINN, and summarize the
//! recovery against ground truth.

use std::fmt::Write as _;
use std::time::{Duration, Instant};

use crate::baseline::fit_arrhenius;
use crate::ecm::{ArrheniusLaw, ConditioningReport, EcmSpec, TempBranch, TempEcmSpec};
use crate::error::{Error, Result};
use crate::model::{canonical, circuit_params, NamedValue, StaticPinn, TempPinn};
use crate::pinn::{train, StaticProblem, TempProblem, TrainConfig, TrainOutcome};
use crate::report::FitReport;
use crate::synth::{fmt_f64, generate_static, generate_temperature, uniform_grid, Dataset, TEndRule};

fn hidden_label(h: &[usize]) -> String {
    h.iter().map(|w| w.to_string()).collect::<Vec<_>>().join("x")
}

fn train_meta(mut r: FitReport, cfg: &TrainConfig) -> FitReport {
    r = r
        .with_meta("model_seed", cfg.seed)
        .with_meta("iterations", cfg.iterations)
        .with_meta("lr0", cfg.lr.lr0)
        .with_meta("lr_decay", format!("{}/{}", cfg.lr.factor, cfg.lr.every))
        .with_meta("collocation", cfg.collocation_count)
        .with_meta("residual_form", cfg.residual_form.name())
        .with_meta(
            "loss_weights",
            format!("{}/{}/{}", cfg.weights.data, cfg.weights.physics, cfg.weights.ic),
        );
    r
}

fn checkpoint(names: Vec<String>, values: Vec<f64>) -> Vec<NamedValue> {
    names.into_iter().zip(values).map(|(n, v)| NamedValue::new(n, v)).collect()
}

/// A static-circuit recovery experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct StaticExperiment {
    pub spec: EcmSpec,
    pub n_samples: usize,
    pub sigma: f64,
    pub data_seed: u64,
    pub t_end: Option<f64>,
    pub hidden: Vec<usize>,
    /// Initial value of every circuit scalar in normalized units.
    pub init_guess: f64,
    pub train: TrainConfig,
}

impl StaticExperiment {
    /// Two-branch recovery problem: `R0 = 25`, branches `(3.5, 0.1)` and
    /// `(8.0, 0.5)`, step voltage 20, 50 samples, 2x15 network.
    pub fn table1(sigma: f64) -> Self {
        StaticExperiment {
            spec: EcmSpec::from_pairs(25.0, &[(3.5, 0.1), (8.0, 0.5)], 20.0)
                .expect("valid circuit"),
            n_samples: 50,
            sigma,
            data_seed: 0,
            t_end: None,
            hidden: vec![15, 15],
            init_guess: 1.0,
            train: TrainConfig::default(),
        }
    }

    pub fn generate(&self) -> Result<Dataset> {
        generate_static(&self.spec, self.n_samples, self.sigma, self.data_seed, self.t_end)
    }

    pub fn run(&self) -> Result<StaticRun> {
        self.run_on(self.generate()?)
    }

    /// Train on an existing dataset; `self.spec` is used as ground truth.
    pub fn run_on(&self, dataset: Dataset) -> Result<StaticRun> {
        let start = Instant::now();
        let (normalized, norm) = dataset.normalize()?;
        let problem = StaticProblem::new(&normalized, self.train.collocation_count)?;
        let mut model = StaticPinn::new(
            self.spec.n_branches(),
            self.hidden.clone(),
            self.spec.u_dc(),
            norm,
            self.train.seed,
            self.init_guess,
        )?;
        let outcome = train(&mut model, &problem, &self.train)?;
        let elapsed = start.elapsed();

        let truth = circuit_params(&canonical(&self.spec));
        let mut report = FitReport::new("pinn", format!("static:{}", self.spec.n_branches()))
            .with_meta("experiment", "static")
            .with_meta("sigma", self.sigma)
            .with_meta("n_samples", dataset.len())
            .with_meta("data_seed", dataset.seed)
            .with_meta("t_end", fmt_f64(dataset.t_end))
            .with_meta("u_dc", self.spec.u_dc())
            .with_meta("hidden", hidden_label(&self.hidden));
        report = train_meta(report, &self.train);
        let conditioning = self.spec.check_conditioning();
        let mut run = StaticRun {
            truth: canonical(&self.spec),
            dataset,
            model,
            outcome,
            report,
            conditioning,
            elapsed,
        };
        let rmse = run.noiseless_rmse();
        run.report = run
            .report
            .with_meta("noiseless_rmse", fmt_f64(rmse))
            .with_meta("conditioning_warnings", run.conditioning.warnings.len());
        run.report.params = run.model.materialize_params();
        run.report.truth = truth;
        run.report.loss = Some(run.outcome.final_loss);
        run.report.checkpoint = checkpoint(run.model.param_names(), run.model.params());
        Ok(run)
    }
}

#[derive(Debug, Clone)]
pub struct StaticRun {
    /// Ground-truth circuit, branches by ascending time constant.
    pub truth: EcmSpec,
    pub dataset: Dataset,
    pub model: StaticPinn,
    pub outcome: TrainOutcome,
    pub report: FitReport,
    pub conditioning: ConditioningReport,
    /// Wall-clock time of normalization and training.
    pub elapsed: Duration,
}

impl StaticRun {
    /// RMSE between the trained model's total current and the noiseless
    /// truth at the sample times, in physical units.
    pub fn noiseless_rmse(&self) -> f64 {
        let truth = &self.truth;
        let n = self.dataset.len() as f64;
        let ss: f64 = self
            .dataset
            .samples
            .iter()
            .map(|s| (self.model.total_current(s.t) - truth.total_current(s.t)).powi(2))
            .sum();
        (ss / n).sqrt()
    }

    /// `t,observed,predicted,true` on a dense grid plus the data times;
    /// `observed` is empty on grid rows.
    pub fn prediction_csv(&self, n_grid: usize) -> String {
        prediction_csv(&self.dataset, n_grid, |t| self.model.total_current(t), &self.truth)
    }
}

/// `t,observed,predicted,true` for a static dataset: a dense grid of
/// `n_grid` times merged with the data times, `observed` empty on grid rows.
pub fn prediction_csv(dataset: &Dataset, n_grid: usize, predicted: impl Fn(f64) -> f64, truth: &EcmSpec) -> String {
    let mut out = String::from("t,observed,predicted,true\n");
    let mut rows: Vec<(f64, Option<f64>)> = uniform_grid(dataset.t_end, n_grid)
        .into_iter()
        .map(|t| (t, None))
        .collect();
    rows.extend(dataset.samples.iter().map(|s| (s.t, Some(s.current))));
    rows.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.is_some().cmp(&b.1.is_some())));
    for (t, obs) in rows {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            fmt_f64(t),
            obs.map(fmt_f64).unwrap_or_default(),
            fmt_f64(predicted(t)),
            fmt_f64(truth.total_current(t))
        );
    }
    out
}

/// A temperature-sweep recovery experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct TempExperiment {
    pub tspec: TempEcmSpec,
    pub temperatures: Vec<f64>,
    pub n_per_temp: usize,
    pub sigma: f64,
    pub data_seed: u64,
    pub t_end_rule: TEndRule,
    pub main_hidden: Vec<usize>,
    pub sub_hidden: Vec<usize>,
    pub init_guess: f64,
    pub train: TrainConfig,
}

/// `n` evenly spaced temperatures on `[lo, hi]`.
pub fn temperature_sweep(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    uniform_grid(hi - lo, n).into_iter().map(|d| lo + d).collect()
}

impl TempExperiment {
    /// One-branch temperature problem: `R0(T)` Arrhenius with `W = 0.76 eV`
    /// normalized to 1 at 294 K, `R1(T) = 0.5 R0(T)`, `C1 = 0.5`, unit step
    /// voltage, 10 temperatures on 294-324 K with 20 samples each, 1x15 nets.
    pub fn table2(sigma: f64) -> Self {
        let law = ArrheniusLaw::from_reference(1.0, 294.0, 0.76).expect("valid law");
        let tspec = TempEcmSpec::new(
            law,
            vec![TempBranch {
                law: law.scaled(0.5),
                capacitance: 0.5,
            }],
            1.0,
        )
        .expect("valid circuit");
        TempExperiment {
            tspec,
            temperatures: temperature_sweep(294.0, 324.0, 10),
            n_per_temp: 20,
            sigma,
            data_seed: 0,
            t_end_rule: TEndRule::Global,
            main_hidden: vec![15],
            sub_hidden: vec![15],
            init_guess: 1.0,
            train: TrainConfig::default(),
        }
    }

    pub fn generate(&self) -> Result<Dataset> {
        generate_temperature(
            &self.tspec,
            &self.temperatures,
            self.n_per_temp,
            self.sigma,
            self.data_seed,
            self.t_end_rule,
        )
    }

    pub fn run(&self) -> Result<TempRun> {
        self.run_on(self.generate()?)
    }

    /// Ground truth in report form: `scale<i>`, `C<i>` and `W`.
    pub fn truth(&self) -> Vec<NamedValue> {
        let r0 = &self.tspec.r0_law;
        let mut out = Vec::new();
        for (i, b) in self.tspec.branches.iter().enumerate() {
            out.push(NamedValue::new(format!("scale{}", i + 1), b.law.a / r0.a));
            out.push(NamedValue::new(format!("C{}", i + 1), b.capacitance));
        }
        out.push(NamedValue::new("W", r0.w));
        out
    }

    /// Train on an existing dataset; `self.tspec` is used as ground truth.
    pub fn run_on(&self, dataset: Dataset) -> Result<TempRun> {
        if self.tspec.branches.iter().any(|b| b.law.w != self.tspec.r0_law.w) {
            return Err(Error::InvalidInput(
                "every resistance must share the activation energy of R0".into(),
            ));
        }
        let start = Instant::now();
        let (normalized, norm) = dataset.normalize()?;
        let problem = TempProblem::new(&normalized, self.train.collocation_count, self.train.seed)?;
        let mut model = TempPinn::new(
            self.tspec.n_branches(),
            self.main_hidden.clone(),
            self.sub_hidden.clone(),
            TempPinn::reference_log_r0(&normalized)?,
            self.tspec.u_dc,
            norm,
            self.train.seed,
            self.init_guess,
        )?;
        let outcome = train(&mut model, &problem, &self.train)?;
        let elapsed = start.elapsed();

        let temps = dataset.temperatures();
        let learned: Vec<(f64, f64)> = temps.iter().map(|&t| (t, model.r0_at(t))).collect();
        let arrhenius = fit_arrhenius(&learned)?;
        let curve_error = temps
            .iter()
            .map(|&t| (model.r0_at(t) / self.tspec.r0_law.evaluate(t) - 1.0).abs())
            .fold(0.0, f64::max);

        let mut report = FitReport::new("pinn", format!("temperature:{}", self.tspec.n_branches()))
            .with_meta("experiment", "temperature")
            .with_meta("sigma", self.sigma)
            .with_meta("n_temperatures", temps.len())
            .with_meta("n_per_temperature", self.n_per_temp)
            .with_meta("data_seed", dataset.seed)
            .with_meta("t_end", fmt_f64(dataset.t_end))
            .with_meta("u_dc", self.tspec.u_dc)
            .with_meta("main_hidden", hidden_label(&self.main_hidden))
            .with_meta("sub_hidden", hidden_label(&self.sub_hidden));
        report = train_meta(report, &self.train)
            .with_meta("arrhenius_a", fmt_f64(arrhenius.a))
            .with_meta("r0_curve_max_rel_error", fmt_f64(curve_error));
        report.params = model.materialize_params();
        report.params.push(NamedValue::new("W", arrhenius.w));
        report.truth = self.truth();
        report.loss = Some(outcome.final_loss);
        report.checkpoint = checkpoint(model.param_names(), model.params());
        Ok(TempRun {
            tspec: self.tspec.clone(),
            dataset,
            model,
            outcome,
            report,
            arrhenius,
            curve_error,
            elapsed,
        })
    }
}

#[derive(Debug, Clone)]
pub struct TempRun {
    pub tspec: TempEcmSpec,
    pub dataset: Dataset,
    pub model: TempPinn,
    pub outcome: TrainOutcome,
    pub report: FitReport,
    /// Arrhenius law fitted to the learned `R0(T)` at the training temperatures.
    pub arrhenius: ArrheniusLaw,
    /// Largest relative deviation of the learned `R0(T)` from the truth.
    pub curve_error: f64,
    pub elapsed: Duration,
}

impl TempRun {
    /// `temperature,learned_r0,true_r0,learned_r1,true_r1,...` on `n_grid`
    /// temperatures spanning the sweep.
    pub fn resistance_csv(&self, n_grid: usize) -> String {
        let temps = self.dataset.temperatures();
        let lo = temps.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = temps.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let grid = if n_grid < 2 || hi == lo {
            temps.clone()
        } else {
            temperature_sweep(lo, hi, n_grid)
        };
        let mut out = String::from("temperature,learned_r0,true_r0");
        for i in 1..=self.tspec.n_branches() {
            let _ = write!(out, ",learned_r{i},true_r{i}");
        }
        out.push('\n');
        for row in self.model.resistance_curves(&grid) {
            let t = row[0];
            let _ = write!(
                out,
                "{},{},{}",
                fmt_f64(t),
                fmt_f64(row[1]),
                fmt_f64(self.tspec.r0_law.evaluate(t))
            );
            for (i, b) in self.tspec.branches.iter().enumerate() {
                let _ = write!(out, ",{},{}", fmt_f64(row[2 + i]), fmt_f64(b.law.evaluate(t)));
            }
            out.push('\n');
        }
        out
    }

    /// `temperature,t,observed,predicted,true` per training temperature.
    pub fn prediction_csv(&self, n_grid: usize) -> Result<String> {
        let mut out = String::from("temperature,t,observed,predicted,true\n");
        for temp in self.dataset.temperatures() {
            let truth = self.tspec.materialize(temp)?;
            let mut rows: Vec<(f64, Option<f64>)> = uniform_grid(self.dataset.t_end, n_grid)
                .into_iter()
                .map(|t| (t, None))
                .collect();
            rows.extend(
                self.dataset
                    .samples
                    .iter()
                    .filter(|s| s.temperature == Some(temp))
                    .map(|s| (s.t, Some(s.current))),
            );
            rows.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.is_some().cmp(&b.1.is_some())));
            for (t, obs) in rows {
                let _ = writeln!(
                    out,
                    "{},{},{},{},{}",
                    fmt_f64(temp),
                    fmt_f64(t),
                    obs.map(fmt_f64).unwrap_or_default(),
                    fmt_f64(self.model.total_current(t, temp)),
                    fmt_f64(truth.total_current(t))
                );
            }
        }
        Ok(out)
    }
}
