//! Mode execution, artifact writing and the run manifest.

use std::fmt::{self, Write as _};
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::time::Instant;

use sha2::{Digest, Sha256};

use drpinn::baseline::{fit_static, fit_temperature, LmFit, TempLmFit};
use drpinn::experiment::prediction_csv;
use drpinn::model::{canonical, circuit_params};
use drpinn::synth::{fmt_f64, TEndRule};
use drpinn::{Dataset, EcmSpec, FitReport, NamedValue, StaticExperiment, TempExperiment};

use crate::config::{Config, DataKind, Mode};

pub struct Options {
    pub out: PathBuf,
    pub quiet: bool,
}

#[derive(Debug)]
pub enum CliError {
    Config(String),
    /// A library error with a context prefix.
    Core(String, drpinn::Error),
    Io(PathBuf, io::Error),
    Threshold(f64),
    Input(String),
}

impl CliError {
    pub fn io(path: &Path, e: io::Error) -> Self {
        CliError::Io(path.to_path_buf(), e)
    }

    pub fn exit_code(&self) -> u8 {
        use drpinn::Error as E;
        match self {
            CliError::Config(_) => 2,
            CliError::Input(_) => 3,
            CliError::Core(_, E::NonFiniteLoss { .. }) => 4,
            CliError::Core(_, E::Io(_)) | CliError::Io(..) => 5,
            CliError::Threshold(_) => 6,
            CliError::Core(_, E::Topology(_)) => 7,
            CliError::Core(..) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) | CliError::Input(m) => f.write_str(m),
            CliError::Core(ctx, e) => write!(f, "{ctx}{e}"),
            CliError::Io(p, e) => write!(f, "{}: {e}", p.display()),
            CliError::Threshold(t) => write!(f, "relative difference exceeds {t}"),
        }
    }
}

impl From<drpinn::Error> for CliError {
    fn from(e: drpinn::Error) -> Self {
        CliError::Core(String::new(), e)
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Files written under one output root, with their checksums.
struct Artifacts {
    root: PathBuf,
    files: Vec<(String, String)>,
}

impl Artifacts {
    fn new(root: &Path) -> Self {
        Artifacts {
            root: root.to_path_buf(),
            files: vec![],
        }
    }

    fn write(&mut self, rel: &str, content: &str) -> Result<(), CliError> {
        let path = self.root.join(rel);
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        }
        fs::write(&path, content).map_err(|e| CliError::io(&path, e))?;
        self.files.push((rel.to_string(), sha256_hex(content.as_bytes())));
        Ok(())
    }

    fn write_dataset(&mut self, dir: &str, ds: &Dataset, circuit: &str) -> Result<(), CliError> {
        self.write(&format!("{dir}dataset.csv"), &ds.to_csv())?;
        self.write(&format!("{dir}dataset.csv.meta"), &ds.metadata(circuit))
    }
}

struct Ctx<'a> {
    cfg: &'a Config,
    quiet: bool,
    config_hash: String,
}

impl Ctx<'_> {
    fn log(&self, msg: impl fmt::Display) {
        if !self.quiet {
            eprintln!("{msg}");
        }
    }
}

fn sigma_dir(n_sigmas: usize, sigma: f64, always: bool) -> String {
    if n_sigmas > 1 || always {
        format!("sigma_{sigma}/")
    } else {
        String::new()
    }
}

fn static_circuit_text(spec: &EcmSpec) -> String {
    let branches: Vec<String> = spec
        .branches()
        .iter()
        .map(|b| format!("{}:{}", b.resistance, b.capacitance))
        .collect();
    format!(
        "static r0={} branches={} u_dc={}",
        spec.r0(),
        branches.join(","),
        spec.u_dc()
    )
}

fn temp_circuit_text(cfg: &Config) -> String {
    let t = &cfg.temperature;
    let branches: Vec<String> = t.branches.iter().map(|(s, c)| format!("{s}:{c}")).collect();
    format!(
        "temperature w={} r0_ref={} t_ref={} branches={} u_dc={}",
        t.w,
        t.r0_ref,
        t.t_ref,
        branches.join(","),
        t.u_dc
    )
}

fn static_experiment(cfg: &Config, sigma: f64) -> Result<StaticExperiment, CliError> {
    Ok(StaticExperiment {
        spec: cfg.ecm.spec()?,
        n_samples: cfg.n_samples,
        sigma,
        data_seed: cfg.data_seed,
        t_end: cfg.t_end,
        hidden: cfg.hidden.clone(),
        init_guess: cfg.init_guess,
        train: cfg.train.clone(),
    })
}

fn temp_experiment(cfg: &Config, sigma: f64) -> Result<TempExperiment, CliError> {
    let t_end_rule = match cfg.t_end {
        Some(t) => TEndRule::Fixed(t),
        None => cfg.temperature.t_end_rule,
    };
    Ok(TempExperiment {
        tspec: cfg.temperature.spec()?,
        temperatures: cfg.temperature.temperatures(),
        n_per_temp: cfg.n_per_temperature,
        sigma,
        data_seed: cfg.data_seed,
        t_end_rule,
        main_hidden: cfg.main_hidden.clone(),
        sub_hidden: cfg.sub_hidden.clone(),
        init_guess: cfg.init_guess,
        train: cfg.train.clone(),
    })
}

fn load_input(cfg: &Config, want_temperature: bool) -> Result<Option<Dataset>, CliError> {
    let Some(path) = &cfg.input else {
        return Ok(None);
    };
    let ds = Dataset::read(path).map_err(|e| CliError::Core(format!("{}: ", path.display()), e))?;
    if ds.has_temperature() != want_temperature {
        let kind = if want_temperature { "temperature" } else { "static" };
        return Err(CliError::Input(format!(
            "{}: this mode needs a {kind} dataset",
            path.display()
        )));
    }
    Ok(Some(ds))
}

fn static_dataset(ctx: &Ctx, exp: &StaticExperiment) -> Result<Dataset, CliError> {
    Ok(match load_input(ctx.cfg, false)? {
        Some(ds) => ds,
        None => exp.generate()?,
    })
}

fn temp_dataset(ctx: &Ctx, exp: &TempExperiment) -> Result<Dataset, CliError> {
    Ok(match load_input(ctx.cfg, true)? {
        Some(ds) => ds,
        None => exp.generate()?,
    })
}

fn train_static(ctx: &Ctx, sigma: f64, dir: &str, arts: &mut Artifacts) -> Result<FitReport, CliError> {
    let exp = static_experiment(ctx.cfg, sigma)?;
    let ds = static_dataset(ctx, &exp)?;
    arts.write_dataset(dir, &ds, &static_circuit_text(&exp.spec))?;
    ctx.log(format_args!(
        "training static PINN (sigma = {sigma}, {} iterations)",
        exp.train.iterations
    ));
    let run = exp.run_on(ds)?;
    for w in &run.conditioning.warnings {
        ctx.log(format_args!("warning: {w}"));
    }
    ctx.log(format_args!(
        "sigma = {sigma}: done in {:.1} s",
        run.elapsed.as_secs_f64()
    ));
    let report = run.report.clone().with_meta("config_sha256", &ctx.config_hash);
    arts.write(&format!("{dir}trace.csv"), &run.outcome.trace.to_csv())?;
    arts.write(
        &format!("{dir}prediction.csv"),
        &run.prediction_csv(ctx.cfg.plot_points),
    )?;
    arts.write(&format!("{dir}report.txt"), &report.to_text())?;
    Ok(report)
}

fn train_temperature(ctx: &Ctx, sigma: f64, dir: &str, arts: &mut Artifacts) -> Result<FitReport, CliError> {
    let exp = temp_experiment(ctx.cfg, sigma)?;
    let ds = temp_dataset(ctx, &exp)?;
    arts.write_dataset(dir, &ds, &temp_circuit_text(ctx.cfg))?;
    ctx.log(format_args!(
        "training temperature PINN (sigma = {sigma}, {} iterations)",
        exp.train.iterations
    ));
    let run = exp.run_on(ds)?;
    ctx.log(format_args!(
        "sigma = {sigma}: done in {:.1} s",
        run.elapsed.as_secs_f64()
    ));
    let report = run.report.clone().with_meta("config_sha256", &ctx.config_hash);
    arts.write(&format!("{dir}trace.csv"), &run.outcome.trace.to_csv())?;
    arts.write(
        &format!("{dir}prediction.csv"),
        &run.prediction_csv(ctx.cfg.plot_points)?,
    )?;
    arts.write(
        &format!("{dir}resistance.csv"),
        &run.resistance_csv(ctx.cfg.plot_points),
    )?;
    arts.write(&format!("{dir}report.txt"), &report.to_text())?;
    Ok(report)
}

fn lm_meta(mut r: FitReport, ctx: &Ctx, sigma: f64, ds: &Dataset) -> FitReport {
    let b = &ctx.cfg.baseline;
    r = r
        .with_meta("sigma", sigma)
        .with_meta("n_samples", ds.len())
        .with_meta("data_seed", ds.seed)
        .with_meta("t_end", fmt_f64(ds.t_end))
        .with_meta("multistart", b.multistart)
        .with_meta("lm_seed", b.seed)
        .with_meta("max_iters", b.max_iters)
        .with_meta("tol", b.tol);
    r
}

fn lm_fit_meta(r: FitReport, fit: &LmFit, prefix: &str) -> FitReport {
    r.with_meta(format!("{prefix}cost"), fmt_f64(fit.cost_physical))
        .with_meta(format!("{prefix}condition_number"), fmt_f64(fit.condition_number))
        .with_meta(format!("{prefix}ill_conditioned"), fit.ill_conditioned)
        .with_meta(format!("{prefix}best_start"), fit.start)
        .with_meta(format!("{prefix}iterations"), fit.iterations)
}

fn static_baseline(
    ctx: &Ctx,
    sigma: f64,
    ds: &Dataset,
    truth: &EcmSpec,
) -> Result<(FitReport, LmFit), CliError> {
    let fit = fit_static(ds, truth.n_branches(), truth.u_dc(), &ctx.cfg.baseline)?;
    if fit.ill_conditioned {
        ctx.log(format_args!(
            "warning: sigma = {sigma}: baseline Jacobian is ill-conditioned (condition number {:e})",
            fit.condition_number
        ));
    }
    let mut r = FitReport::new("lm", format!("static:{}", truth.n_branches())).with_meta("experiment", "static");
    r = lm_meta(r, ctx, sigma, ds).with_meta("u_dc", truth.u_dc());
    r = lm_fit_meta(r, &fit, "").with_meta("config_sha256", &ctx.config_hash);
    r.params = circuit_params(&fit.spec);
    r.truth = circuit_params(&canonical(truth));
    Ok((r, fit))
}

fn temp_baseline(ctx: &Ctx, sigma: f64, ds: &Dataset, exp: &TempExperiment) -> Result<(FitReport, TempLmFit), CliError> {
    let n = exp.tspec.n_branches();
    let fit = fit_temperature(ds, n, exp.tspec.u_dc, &ctx.cfg.baseline)?;
    let mut r = FitReport::new("lm", format!("temperature:{n}")).with_meta("experiment", "temperature");
    r = lm_meta(r, ctx, sigma, ds)
        .with_meta("u_dc", exp.tspec.u_dc)
        .with_meta("arrhenius_a", fmt_f64(fit.arrhenius.a));
    for (t, f) in &fit.per_temperature {
        if f.ill_conditioned {
            ctx.log(format_args!(
                "warning: sigma = {sigma}, T = {t}: baseline Jacobian is ill-conditioned"
            ));
        }
        r = lm_fit_meta(r, f, &format!("T{t}."));
    }
    r = r.with_meta("config_sha256", &ctx.config_hash);
    for i in 0..n {
        r.params.push(NamedValue::new(format!("scale{}", i + 1), fit.scales[i]));
        r.params.push(NamedValue::new(format!("C{}", i + 1), fit.capacitances[i]));
    }
    r.params.push(NamedValue::new("W", fit.arrhenius.w));
    r.truth = exp.truth();
    Ok((r, fit))
}

fn temp_baseline_csv(fit: &TempLmFit, exp: &TempExperiment) -> String {
    let mut out = String::from("temperature,fitted_r0,true_r0");
    let n = exp.tspec.n_branches();
    for i in 1..=n {
        let _ = write!(out, ",fitted_r{i},true_r{i},fitted_c{i}");
    }
    out.push('\n');
    for (t, f) in &fit.per_temperature {
        let _ = write!(
            out,
            "{},{},{}",
            fmt_f64(*t),
            fmt_f64(f.spec.r0()),
            fmt_f64(exp.tspec.r0_law.evaluate(*t))
        );
        for (b, tb) in f.spec.branches().iter().zip(&exp.tspec.branches) {
            let _ = write!(
                out,
                ",{},{},{}",
                fmt_f64(b.resistance),
                fmt_f64(tb.law.evaluate(*t)),
                fmt_f64(b.capacitance)
            );
        }
        out.push('\n');
    }
    out
}

fn fit_baseline(ctx: &Ctx, sigma: f64, dir: &str, arts: &mut Artifacts) -> Result<FitReport, CliError> {
    match ctx.cfg.kind {
        DataKind::Static => {
            let exp = static_experiment(ctx.cfg, sigma)?;
            let ds = static_dataset(ctx, &exp)?;
            arts.write_dataset(dir, &ds, &static_circuit_text(&exp.spec))?;
            let (report, fit) = static_baseline(ctx, sigma, &ds, &exp.spec)?;
            let csv = prediction_csv(&ds, ctx.cfg.plot_points, |t| fit.spec.total_current(t), &exp.spec);
            arts.write(&format!("{dir}prediction.csv"), &csv)?;
            arts.write(&format!("{dir}report.txt"), &report.to_text())?;
            Ok(report)
        }
        DataKind::Temperature => {
            let exp = temp_experiment(ctx.cfg, sigma)?;
            let ds = temp_dataset(ctx, &exp)?;
            arts.write_dataset(dir, &ds, &temp_circuit_text(ctx.cfg))?;
            let (report, fit) = temp_baseline(ctx, sigma, &ds, &exp)?;
            arts.write(&format!("{dir}resistance.csv"), &temp_baseline_csv(&fit, &exp))?;
            arts.write(&format!("{dir}report.txt"), &report.to_text())?;
            Ok(report)
        }
    }
}

fn generate(ctx: &Ctx, sigma: f64, dir: &str, arts: &mut Artifacts) -> Result<(), CliError> {
    match ctx.cfg.kind {
        DataKind::Static => {
            let exp = static_experiment(ctx.cfg, sigma)?;
            arts.write_dataset(dir, &exp.generate()?, &static_circuit_text(&exp.spec))
        }
        DataKind::Temperature => {
            let exp = temp_experiment(ctx.cfg, sigma)?;
            arts.write_dataset(dir, &exp.generate()?, &temp_circuit_text(ctx.cfg))
        }
    }
}

/// PINN and LM reports for one noise level of a table reproduction.
fn table_row(ctx: &Ctx, mode: Mode, sigma: f64, dir: &str, arts: &mut Artifacts) -> Result<[FitReport; 2], CliError> {
    if mode == Mode::ReproduceTable1 {
        let pinn = train_static(ctx, sigma, dir, arts)?;
        let exp = static_experiment(ctx.cfg, sigma)?;
        let ds = static_dataset(ctx, &exp)?;
        let (lm, _) = static_baseline(ctx, sigma, &ds, &exp.spec)?;
        arts.write(&format!("{dir}report_lm.txt"), &lm.to_text())?;
        Ok([pinn, lm])
    } else {
        let pinn = train_temperature(ctx, sigma, dir, arts)?;
        let exp = temp_experiment(ctx.cfg, sigma)?;
        let ds = temp_dataset(ctx, &exp)?;
        let (lm, _) = temp_baseline(ctx, sigma, &ds, &exp)?;
        arts.write(&format!("{dir}report_lm.txt"), &lm.to_text())?;
        Ok([pinn, lm])
    }
}

/// Fixed-width summary with one row per (noise level, method) and the truth
/// on top, plus the same content as CSV.
fn summary(rows: &[(f64, FitReport)]) -> (String, String) {
    let first = &rows[0].1;
    let names: Vec<&str> = first.params.iter().map(|p| p.name.as_str()).collect();
    let mut text = format!("{:<8} {:<7}", "sigma", "method");
    let mut csv = String::from("sigma,method");
    for n in &names {
        let _ = write!(text, " {n:>12}");
        let _ = write!(csv, ",{n}");
    }
    let _ = writeln!(text, " {:>14}", "max_rel_error");
    csv.push_str(",max_rel_error\n");
    let _ = write!(text, "{:<8} {:<7}", "-", "truth");
    csv.push_str(",truth");
    for t in &first.truth {
        let _ = write!(text, " {:>12.4}", t.value);
        let _ = write!(csv, ",{}", fmt_f64(t.value));
    }
    text.push('\n');
    csv.push_str(",\n");
    for (sigma, r) in rows {
        let _ = write!(text, "{:<8} {:<7}", sigma, r.method);
        let _ = write!(csv, "{},{}", sigma, r.method);
        for p in &r.params {
            let _ = write!(text, " {:>12.4}", p.value);
            let _ = write!(csv, ",{}", fmt_f64(p.value));
        }
        let err = r.max_relative_error().unwrap_or(f64::NAN);
        let _ = writeln!(text, " {:>13.2}%", 100.0 * err);
        let _ = writeln!(csv, ",{}", fmt_f64(err));
    }
    (text, csv)
}

fn reproduce(ctx: &Ctx, mode: Mode, arts: &mut Artifacts) -> Result<(), CliError> {
    let sigmas = ctx.cfg.sigmas_for(mode);
    let results: Vec<Result<([FitReport; 2], Artifacts), CliError>> = std::thread::scope(|scope| {
        let handles: Vec<_> = sigmas
            .iter()
            .map(|&sigma| {
                let root = arts.root.clone();
                scope.spawn(move || {
                    let mut local = Artifacts::new(&root);
                    let dir = sigma_dir(1, sigma, true);
                    table_row(ctx, mode, sigma, &dir, &mut local).map(|r| (r, local))
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("experiment thread panicked"))
            .collect()
    });
    let mut rows = Vec::new();
    for (sigma, res) in sigmas.iter().zip(results) {
        let ([pinn, lm], local) = res?;
        arts.files.extend(local.files);
        rows.push((*sigma, pinn));
        rows.push((*sigma, lm));
    }
    let stem = if mode == Mode::ReproduceTable1 { "table1" } else { "table2" };
    let (text, csv) = summary(&rows);
    if !ctx.quiet {
        print!("{text}");
    }
    arts.write(&format!("{stem}.txt"), &text)?;
    arts.write(&format!("{stem}.csv"), &csv)
}

fn manifest(ctx: &Ctx, mode: Mode, arts: &Artifacts) -> String {
    let cfg = ctx.cfg;
    let mut out = String::new();
    let _ = writeln!(out, "tool = drpinn {}", env!("CARGO_PKG_VERSION"));
    let _ = writeln!(out, "mode = {}", mode.name());
    let _ = writeln!(out, "config_sha256 = {}", ctx.config_hash);
    let _ = writeln!(out, "seed.data = {}", cfg.data_seed);
    let _ = writeln!(out, "seed.model = {}", cfg.train.seed);
    let _ = writeln!(out, "seed.baseline = {}", cfg.baseline.seed);
    let sigmas: Vec<String> = cfg.sigmas_for(mode).iter().map(|s| s.to_string()).collect();
    let _ = writeln!(out, "sigma = {}", sigmas.join(", "));
    if let Some(p) = &cfg.input {
        let _ = writeln!(out, "input = {}", p.display());
    }
    let mut files = arts.files.clone();
    files.sort();
    for (rel, sha) in files {
        let _ = writeln!(out, "sha256.{rel} = {sha}");
    }
    out
}

/// Execute `mode` and write every artifact under `opts.out`.
pub fn run(cfg: &Config, mode: Mode, opts: &Options) -> Result<(), CliError> {
    let start = Instant::now();
    let mut resolved = cfg.clone();
    resolved.mode = Some(mode);
    let config_text = resolved.to_text();
    let ctx = Ctx {
        cfg: &resolved,
        quiet: opts.quiet,
        config_hash: sha256_hex(config_text.as_bytes()),
    };
    let input_hash = match &cfg.input {
        Some(p) => Some(sha256_hex(&fs::read(p).map_err(|e| CliError::io(p, e))?)),
        None => None,
    };
    fs::create_dir_all(&opts.out).map_err(|e| CliError::io(&opts.out, e))?;
    let mut arts = Artifacts::new(&opts.out);
    arts.write("config.resolved.txt", &config_text)?;

    match mode {
        Mode::ReproduceTable1 | Mode::ReproduceTable2 => reproduce(&ctx, mode, &mut arts)?,
        _ => {
            let sigmas = resolved.sigmas_for(mode);
            if resolved.input.is_some() && sigmas.len() > 1 {
                return Err(CliError::Config(
                    "an input dataset allows a single sigma entry".into(),
                ));
            }
            for &sigma in &sigmas {
                let dir = sigma_dir(sigmas.len(), sigma, false);
                match mode {
                    Mode::Generate => generate(&ctx, sigma, &dir, &mut arts)?,
                    Mode::TrainStatic => {
                        train_static(&ctx, sigma, &dir, &mut arts)?;
                    }
                    Mode::TrainTemperature => {
                        train_temperature(&ctx, sigma, &dir, &mut arts)?;
                    }
                    Mode::FitBaseline => {
                        fit_baseline(&ctx, sigma, &dir, &mut arts)?;
                    }
                    Mode::ReproduceTable1 | Mode::ReproduceTable2 => unreachable!(),
                }
            }
        }
    }

    let mut text = manifest(&ctx, mode, &arts);
    if let Some(h) = input_hash {
        let _ = writeln!(text, "input_sha256 = {h}");
    }
    let path = opts.out.join("manifest.txt");
    fs::write(&path, text).map_err(|e| CliError::io(&path, e))?;
    ctx.log(format_args!(
        "{} finished in {:.1} s; artifacts in {}",
        mode.name(),
        start.elapsed().as_secs_f64(),
        opts.out.display()
    ));
    Ok(())
}
