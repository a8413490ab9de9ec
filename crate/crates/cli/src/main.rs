mod config;
mod run;
mod svg;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::{Config, Mode};
use run::{CliError, Options};

/// Physics-informed recovery of dielectric-response equivalent circuits.
#[derive(Parser, Debug)]
#[command(name = "drpinn", version)]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    /// Defaults to `run`.
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Args, Debug)]
struct GlobalArgs {
    /// Experiment config file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override every seed (data, model and baseline).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (overrides `[run] output_dir`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Suppress progress messages.
    #[arg(long, global = true)]
    quiet: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run the mode named in the config file.
    Run,
    /// Write synthetic datasets.
    Generate,
    /// Train the static-circuit PINN.
    TrainStatic,
    /// Train the temperature-dependent PINN.
    TrainTemperature,
    /// Levenberg-Marquardt fit of the closed-form current.
    FitBaseline,
    /// Static recovery over the noise sweep, with a summary table.
    ReproduceTable1,
    /// Temperature recovery over the noise sweep, with a summary table.
    ReproduceTable2,
    /// Parameter-wise relative differences between two reports.
    Compare {
        report: PathBuf,
        reference: PathBuf,
        /// Relative difference above which a parameter is flagged.
        #[arg(long, default_value_t = 0.1)]
        threshold: f64,
    },
    /// Render CSV columns as a standalone SVG line chart.
    Svg {
        csv: PathBuf,
        /// Column for the horizontal axis.
        #[arg(long)]
        x: String,
        /// Comma-separated columns to plot.
        #[arg(long, value_delimiter = ',', required = true)]
        y: Vec<String>,
        #[arg(short, long)]
        output: PathBuf,
        #[arg(long, default_value = "")]
        title: String,
        /// Logarithmic vertical axis.
        #[arg(long)]
        log_y: bool,
    },
}

fn load_config(g: &GlobalArgs) -> Result<Config, CliError> {
    let Some(path) = &g.config else {
        return Ok(Config::default());
    };
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let mut cfg = Config::parse(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    if let (Some(input), Some(base)) = (&cfg.input, path.parent()) {
        if input.is_relative() {
            cfg.input = Some(base.join(input));
        }
    }
    Ok(cfg)
}

fn experiment(g: &GlobalArgs, mode: Option<Mode>) -> Result<(), CliError> {
    let mut cfg = load_config(g)?;
    if let Some(m) = mode {
        cfg.mode = Some(m);
    }
    let mode = cfg
        .mode
        .ok_or_else(|| CliError::Config("no mode given: set `[run] mode` or pass a mode subcommand".into()))?;
    if let Some(seed) = g.seed {
        cfg.data_seed = seed;
        cfg.train.seed = seed;
        cfg.baseline.seed = seed;
    }
    let out = g
        .out
        .clone()
        .or_else(|| cfg.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("out"));
    run::run(
        &cfg,
        mode,
        &Options {
            out,
            quiet: g.quiet,
        },
    )
}

fn compare(report: &Path, reference: &Path, threshold: f64) -> Result<(), CliError> {
    if !(threshold >= 0.0) {
        return Err(CliError::Config(format!("threshold must be nonnegative, got {threshold}")));
    }
    let read = |p: &Path| -> Result<drpinn::FitReport, CliError> {
        let text = fs::read_to_string(p).map_err(|e| CliError::io(p, e))?;
        drpinn::FitReport::parse(&text).map_err(|e| CliError::Core(format!("{}: ", p.display()), e))
    };
    let a = read(report)?;
    let b = read(reference)?;
    let cmp = drpinn::report::compare(&a, &b, threshold).map_err(|e| CliError::Core(String::new(), e))?;
    print!("{}", cmp.to_table());
    if cmp.any_flagged() {
        return Err(CliError::Threshold(threshold));
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let g = &cli.global;
    let result = match cli.command.unwrap_or(Command::Run) {
        Command::Run => experiment(g, None),
        Command::Generate => experiment(g, Some(Mode::Generate)),
        Command::TrainStatic => experiment(g, Some(Mode::TrainStatic)),
        Command::TrainTemperature => experiment(g, Some(Mode::TrainTemperature)),
        Command::FitBaseline => experiment(g, Some(Mode::FitBaseline)),
        Command::ReproduceTable1 => experiment(g, Some(Mode::ReproduceTable1)),
        Command::ReproduceTable2 => experiment(g, Some(Mode::ReproduceTable2)),
        Command::Compare {
            report,
            reference,
            threshold,
        } => compare(&report, &reference, threshold),
        Command::Svg {
            csv,
            x,
            y,
            output,
            title,
            log_y,
        } => svg::render_file(&csv, &x, &y, &output, &title, log_y),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
