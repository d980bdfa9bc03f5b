//! Command-line driver: noise calibration tables, σ-versus-ε curves,
//! accountant validation against Monte Carlo, and simulated private training.

pub mod args;
pub mod commands;
pub mod config;
pub mod error;
pub mod output;

use args::{Cli, Command, ExperimentArgs, TrainArgs, ValidateArgs};
use clap::Parser;
use commands::{
    calibrate_rows, calibration_summary, curve_csv, curves, default_validation_grid, render_calibration, train_sim,
    validate_rows, validation_table, DataSource, Report, Settings, TrainSimConfig, ValidationSettings, VALIDATION_SE,
};
use config::{parse_accountants, parse_real_grid, ConfigFile, ExperimentConfig, Format};
use dpacct_core::Method;
use dpacct_rgp::TrainRunConfig;
use error::{CliError, Result};
use output::write_atomic;
use std::ffi::OsString;
use std::path::Path;

pub use error::CliError as Error;

const ALL_ACCOUNTANTS: [Method; 3] = [Method::Edgeworth, Method::Prv, Method::Rdp];

/// Default oracle sample count for `validate`.
pub const DEFAULT_VALIDATION_SAMPLES: u64 = 1_000_000;

fn load_config(path: Option<&Path>) -> Result<ConfigFile> {
    path.map(ConfigFile::load).transpose().map(Option::unwrap_or_default)
}

fn emit(out: Option<&Path>, contents: &str) -> Result<()> {
    match out {
        Some(p) => Ok(write_atomic(p, contents.as_bytes())?),
        None => {
            print!("{contents}");
            Ok(())
        }
    }
}

fn cmd_calibrate(args: &ExperimentArgs) -> Result<i32> {
    let file = load_config(args.config.as_deref())?;
    let config = ExperimentConfig::resolve(&args.overrides(), &file, Format::Json, &ALL_ACCOUNTANTS)?;
    let rows = calibrate_rows(&config)?;
    if config.out.is_some() {
        print!("{}", calibration_summary(&rows));
    }
    emit(config.out.as_deref(), &render_calibration(&config, rows))?;
    Ok(0)
}

fn cmd_curve(args: &ExperimentArgs) -> Result<i32> {
    let file = load_config(args.config.as_deref())?;
    let config = ExperimentConfig::resolve(&args.overrides(), &file, Format::Csv, &ALL_ACCOUNTANTS)?;
    let results = curves(&config)?;
    let many = results.len() > 1;
    for (curve, dataset) in results.iter().zip(&config.datasets) {
        let (ext, body) = match config.format {
            Format::Csv => ("csv", curve_csv(curve)),
            Format::Json => {
                ("json", Report::new("curve", config.clone(), Settings::new(config.order_k), curve.clone()).to_json())
            }
        };
        match &config.out {
            Some(dir) => {
                let path = dir.join(format!("{}.{ext}", dataset.slug()));
                write_atomic(&path, body.as_bytes())?;
                println!("{}", path.display());
            }
            None => {
                if many {
                    println!("# {}", dataset.name);
                }
                print!("{body}");
            }
        }
    }
    Ok(0)
}

fn cmd_validate(args: &ValidateArgs) -> Result<i32> {
    let file = load_config(args.config.as_deref())?;
    let accountants = if !args.accountant.is_empty() {
        parse_accountants(&args.accountant)?
    } else if let Some(list) = &file.accountant {
        parse_accountants(list)?
    } else {
        ALL_ACCOUNTANTS.to_vec()
    };
    let order_k = args.order_k.or(file.order_k).unwrap_or(2);
    if order_k > 2 {
        return Err(CliError::config("order-k", format!("order {order_k} not supported; use 0, 1 or 2")));
    }
    let samples = args.samples.or(file.samples).unwrap_or(DEFAULT_VALIDATION_SAMPLES);
    if samples < dpacct_core::mc::MIN_SAMPLES {
        return Err(CliError::config("samples", format!("need at least {} samples", dpacct_core::mc::MIN_SAMPLES)));
    }
    let settings = ValidationSettings {
        samples,
        berry_esseen: args.berry_esseen || file.berry_esseen.unwrap_or(false),
        standard_errors: VALIDATION_SE,
    };
    let seed = args.seed.or(file.seed).unwrap_or(0);
    let grid = default_validation_grid();
    let rows = validate_rows(&grid, &accountants, order_k, &settings, seed, args.perturb_ew_sigma)?;
    let all_pass = rows.iter().all(|r| r.pass);
    let format = args.format.or(file.format).unwrap_or(Format::Json);
    let out = args.out.clone().or(file.out);
    let body = match format {
        Format::Csv => validation_table(&rows),
        Format::Json => {
            #[derive(serde::Serialize)]
            struct ValidateConfig<'a> {
                grid: &'a [commands::ValidationCell],
                accountants: &'a [Method],
                order_k: usize,
                seed: u64,
                oracle: &'a ValidationSettings,
                ew_sigma_perturbation: Option<f64>,
            }
            let config = ValidateConfig {
                grid: &grid,
                accountants: &accountants,
                order_k,
                seed,
                oracle: &settings,
                ew_sigma_perturbation: args.perturb_ew_sigma,
            };
            Report::new("validate", config, Settings::new(order_k), &rows).to_json()
        }
    };
    if out.is_some() {
        print!("{}", validation_table(&rows));
    }
    emit(out.as_deref(), &body)?;
    if !all_pass {
        eprintln!("validation failed: at least one accountant left the oracle band");
    }
    Ok(if all_pass { 0 } else { 1 })
}

fn train_config(args: &TrainArgs, file: &ConfigFile) -> Result<TrainSimConfig> {
    let defaults = TrainRunConfig::default();
    let epsilon = match args.epsilon.clone().or_else(|| {
        file.epsilon.as_ref().map(|g| match g {
            config::GridValue::Number(x) => x.to_string(),
            config::GridValue::Text(s) => s.clone(),
        })
    }) {
        Some(s) => match parse_real_grid("epsilon", &s)?.as_slice() {
            [e] if *e > 0.0 => *e,
            _ => return Err(CliError::config("epsilon", "train-sim takes a single positive epsilon")),
        },
        None => config::DEFAULT_EPSILON,
    };
    let steps = args.m.or(file.m).ok_or_else(|| CliError::config("m", "the number of training steps is required (--m)"))?;
    let accountant = if !args.accountant.is_empty() {
        parse_accountants(&args.accountant)?[0]
    } else if let Some(list) = &file.accountant {
        parse_accountants(list)?[0]
    } else {
        Method::Edgeworth
    };
    let seed = args.seed.or(file.seed).unwrap_or(0);
    let no_accounting = args.no_accounting || file.no_accounting.unwrap_or(false);
    let sigma_override = if no_accounting { Some(0.0) } else { args.sigma_override.or(file.sigma_override) };
    let run = TrainRunConfig {
        batch_size: args.batch.or(file.batch).unwrap_or(defaults.batch_size),
        steps,
        clip_norm: args.clip.or(file.clip).unwrap_or(defaults.clip_norm),
        epsilon_target: epsilon,
        delta: args.delta.or(file.delta).unwrap_or(defaults.delta),
        rank: args.rank.or(file.rank).unwrap_or(defaults.rank),
        seed,
        history_lag: args.history_lag.or(file.history_lag).unwrap_or(defaults.history_lag),
        learning_rate: args.learning_rate.or(file.learning_rate).unwrap_or(defaults.learning_rate),
        hidden: args.hidden.or(file.hidden),
        sigma_override,
        ..defaults
    };
    let data = match args.data.clone().or_else(|| file.data.clone()) {
        Some(path) => DataSource::File { path },
        None => DataSource::Synthetic {
            n: args.n.or(file.n).unwrap_or(50_000) as usize,
            dim: args.dim.or(file.dim).unwrap_or(20),
            classes: args.classes.or(file.classes).unwrap_or(2),
            separation: args.separation.or(file.separation).unwrap_or(3.0),
            seed,
        },
    };
    let order_k = args.order_k.or(file.order_k).unwrap_or(2);
    if order_k > 2 {
        return Err(CliError::config("order-k", format!("order {order_k} not supported; use 0, 1 or 2")));
    }
    Ok(TrainSimConfig { data, run, accountant, order_k, out: args.out.clone().or_else(|| file.out.clone()) })
}

fn cmd_train_sim(args: &TrainArgs) -> Result<i32> {
    let file = load_config(args.config.as_deref())?;
    let config = train_config(args, &file)?;
    let metrics = train_sim(&config)?;
    let body = Report::new("train-sim", config.clone(), Settings::new(config.order_k), metrics).to_json();
    emit(config.out.as_deref(), &body)?;
    Ok(0)
}

/// Parses `args` (including the program name) and runs the command.
/// Returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let result = match &cli.command {
        Command::Calibrate(a) => cmd_calibrate(a),
        Command::Curve(a) => cmd_curve(a),
        Command::Validate(a) => cmd_validate(a),
        Command::TrainSim(a) => cmd_train_sim(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
