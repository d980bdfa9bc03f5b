//! The four subcommands as library functions returning serialisable results.

use crate::config::{DatasetConfig, ExperimentConfig, Format};
use crate::error::{CliError, Result};
use crate::output::sig6;
use dpacct_core::accountant::EPSILON_TOLERANCE;
use dpacct_core::edgeworth::ROUND_TRIP_TOLERANCE;
use dpacct_core::mc::mc_delta_grid;
use dpacct_core::rdp::default_orders;
use dpacct_core::{
    calibrate_sigma, AccountantResult, CalibrationOptions, EdgeworthAccountant, MechanismSpec, Method,
    PrivacyAccountant, PrvAccountant, PrvGridConfig, RdpAccountant,
};
use dpacct_rgp::{synthetic_clusters, train_nonprivate, train_private, Dataset, TrainRunConfig};
use serde::Serialize;
use std::fmt::Write as _;
use std::path::PathBuf;

/// Builds the accountant for `method`. The Berry–Esseen flag only affects the
/// reported Edgeworth envelope.
pub fn make_accountant(method: Method, order_k: usize, berry_esseen: bool) -> Result<Box<dyn PrivacyAccountant>> {
    Ok(match method {
        Method::Edgeworth => Box::new(EdgeworthAccountant { order: order_k, berry_esseen }),
        Method::Prv => Box::new(PrvAccountant::default()),
        Method::Rdp => Box::new(RdpAccountant::default()),
        Method::MonteCarlo => return Err(CliError::config("accountant", "MC is not a calibration accountant")),
    })
}

/// Evaluates the wrapped accountant at `σ·(1 + relative)`.
pub struct SigmaPerturbed<A> {
    pub inner: A,
    pub relative: f64,
}

impl<A: PrivacyAccountant> SigmaPerturbed<A> {
    fn shifted(&self, spec: &MechanismSpec) -> dpacct_core::Result<MechanismSpec> {
        spec.with_sigma(spec.sigma() * (1.0 + self.relative))
    }
}

impl<A: PrivacyAccountant> PrivacyAccountant for SigmaPerturbed<A> {
    fn method(&self) -> Method {
        self.inner.method()
    }

    fn delta(&self, spec: &MechanismSpec, m: u64, epsilon: f64) -> dpacct_core::Result<AccountantResult> {
        self.inner.delta(&self.shifted(spec)?, m, epsilon)
    }

    fn epsilon(&self, spec: &MechanismSpec, m: u64, delta: f64) -> dpacct_core::Result<AccountantResult> {
        self.inner.epsilon(&self.shifted(spec)?, m, delta)
    }
}

/// Numerical settings recorded alongside results.
#[derive(Debug, Clone, Serialize)]
pub struct Settings {
    pub calibration: CalibrationOptions,
    pub epsilon_tolerance: f64,
    pub edgeworth_order: usize,
    pub edgeworth_round_trip_tolerance: f64,
    pub prv_spacing: f64,
    pub prv_sd_multiplier: f64,
    pub rdp_orders: Vec<u32>,
}

impl Settings {
    pub fn new(order_k: usize) -> Self {
        let prv = PrvGridConfig::default();
        Self {
            calibration: CalibrationOptions::default(),
            epsilon_tolerance: EPSILON_TOLERANCE,
            edgeworth_order: order_k,
            edgeworth_round_trip_tolerance: ROUND_TRIP_TOLERANCE,
            prv_spacing: prv.spacing,
            prv_sd_multiplier: prv.sd_multiplier,
            rdp_orders: default_orders(),
        }
    }
}

/// Top-level JSON document written by every command.
#[derive(Debug, Clone, Serialize)]
pub struct Report<C: Serialize, R: Serialize> {
    pub command: &'static str,
    pub version: &'static str,
    pub timestamp: u64,
    pub config: C,
    pub settings: Settings,
    pub results: R,
}

impl<C: Serialize, R: Serialize> Report<C, R> {
    pub fn new(command: &'static str, config: C, settings: Settings, results: R) -> Self {
        Self { command, version: env!("CARGO_PKG_VERSION"), timestamp: crate::output::timestamp(), config, settings, results }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("reports serialise");
        s.push('\n');
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CalibrationRow {
    pub dataset: String,
    pub n: u64,
    pub batch: u64,
    pub q: f64,
    pub delta: f64,
    pub m: u64,
    pub epsilon_target: f64,
    pub accountant: Method,
    pub sigma: f64,
    pub epsilon: f64,
    pub evaluations: usize,
}

/// Calibrated σ for one dataset, step count, target and accountant.
pub fn calibrate_cell(
    dataset: &DatasetConfig,
    m: u64,
    epsilon_target: f64,
    accountant: &dyn PrivacyAccountant,
) -> Result<CalibrationRow> {
    let c = calibrate_sigma(accountant, epsilon_target, dataset.delta, dataset.q(), m, &CalibrationOptions::default())
        .map_err(|e| {
            CliError::accounting(
                format!("{} m={m} epsilon={epsilon_target} accountant={}", dataset.name, accountant.method()),
                e,
            )
        })?;
    Ok(CalibrationRow {
        dataset: dataset.name.clone(),
        n: dataset.n,
        batch: dataset.batch,
        q: dataset.q(),
        delta: dataset.delta,
        m,
        epsilon_target,
        accountant: accountant.method(),
        sigma: c.sigma,
        epsilon: c.epsilon,
        evaluations: c.evaluations,
    })
}

/// Every (dataset, m, ε, accountant) cell of `config`, in that nesting order.
pub fn calibrate_rows(config: &ExperimentConfig) -> Result<Vec<CalibrationRow>> {
    let accountants =
        config.accountants.iter().map(|&m| make_accountant(m, config.order_k, true)).collect::<Result<Vec<_>>>()?;
    let mut rows = Vec::new();
    for d in &config.datasets {
        for &m in &config.m_values {
            for &eps in &config.epsilons {
                for a in &accountants {
                    rows.push(calibrate_cell(d, m, eps, a.as_ref())?);
                }
            }
        }
    }
    Ok(rows)
}

pub const CALIBRATION_CSV_HEADER: &str = "dataset,n,batch,q,delta,m,epsilon_target,accountant,sigma,epsilon";

pub fn calibration_csv(rows: &[CalibrationRow]) -> String {
    let mut s = String::from(CALIBRATION_CSV_HEADER);
    s.push('\n');
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{}",
            r.dataset,
            r.n,
            r.batch,
            sig6(r.q),
            sig6(r.delta),
            r.m,
            sig6(r.epsilon_target),
            r.accountant,
            sig6(r.sigma),
            sig6(r.epsilon)
        );
    }
    s
}

/// One row of a noise-versus-ε curve; `None` for accountants not requested.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CurveRow {
    pub epsilon: f64,
    pub sigma_rdp: Option<f64>,
    pub sigma_prv: Option<f64>,
    pub sigma_ew: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Curve {
    pub dataset: String,
    pub m: u64,
    pub rows: Vec<CurveRow>,
}

pub const CURVE_CSV_HEADER: &str = "epsilon,sigma_rdp,sigma_prv,sigma_ew";

pub fn curve_for(dataset: &DatasetConfig, m: u64, epsilons: &[f64], accountants: &[Method], order_k: usize) -> Result<Curve> {
    let mut rows = Vec::with_capacity(epsilons.len());
    for &eps in epsilons {
        let mut row = CurveRow { epsilon: eps, sigma_rdp: None, sigma_prv: None, sigma_ew: None };
        for &method in accountants {
            let acct = make_accountant(method, order_k, true)?;
            let sigma = Some(calibrate_cell(dataset, m, eps, acct.as_ref())?.sigma);
            match method {
                Method::Rdp => row.sigma_rdp = sigma,
                Method::Prv => row.sigma_prv = sigma,
                _ => row.sigma_ew = sigma,
            }
        }
        rows.push(row);
    }
    Ok(Curve { dataset: dataset.name.clone(), m, rows })
}

pub fn curve_csv(curve: &Curve) -> String {
    let cell = |v: Option<f64>| v.map(sig6).unwrap_or_default();
    let mut s = String::from(CURVE_CSV_HEADER);
    s.push('\n');
    for r in &curve.rows {
        let _ = writeln!(s, "{},{},{},{}", sig6(r.epsilon), cell(r.sigma_rdp), cell(r.sigma_prv), cell(r.sigma_ew));
    }
    s
}

pub fn curves(config: &ExperimentConfig) -> Result<Vec<Curve>> {
    let [m] = config.m_values.as_slice() else {
        return Err(CliError::config("m", "curve takes a single --m"));
    };
    config.datasets.iter().map(|d| curve_for(d, *m, &config.epsilons, &config.accountants, config.order_k)).collect()
}

/// A mechanism and step count checked at several ε.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationCell {
    pub q: f64,
    pub sigma: f64,
    pub m: u64,
    pub epsilons: Vec<f64>,
}

/// Cells small enough for the sampler where every accountant is expected to
/// agree with the oracle.
pub fn default_validation_grid() -> Vec<ValidationCell> {
    let cell = |q: f64, sigma: f64, m: u64| ValidationCell { q, sigma, m, epsilons: vec![0.5, 1.0, 2.0] };
    vec![cell(1.0, 1.0, 1), cell(1.0, 4.0, 10), cell(0.9, 1.5, 10)]
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationRow {
    pub q: f64,
    pub sigma: f64,
    pub m: u64,
    pub epsilon: f64,
    pub accountant: Method,
    pub delta_method: f64,
    pub delta_mc: f64,
    pub stderr: f64,
    pub envelope: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationSettings {
    pub samples: u64,
    pub berry_esseen: bool,
    pub standard_errors: f64,
}

/// Multiple of the oracle standard error allowed on top of each envelope.
pub const VALIDATION_SE: f64 = 3.0;

/// Whether a method's δ is consistent with the oracle. RDP gives an upper
/// bound only, so it fails only when it falls below the band.
pub fn within_band(method: Method, delta_method: f64, delta_mc: f64, stderr: f64, envelope: f64) -> bool {
    let band = VALIDATION_SE * stderr + envelope;
    match method {
        Method::Rdp => delta_method >= delta_mc - band,
        _ => (delta_method - delta_mc).abs() <= band,
    }
}

/// Runs the oracle on `grid` and compares each accountant. `ew_perturbation`
/// evaluates the Edgeworth accountant at a relatively shifted σ.
pub fn validate_rows(
    grid: &[ValidationCell],
    accountants: &[Method],
    order_k: usize,
    settings: &ValidationSettings,
    seed: u64,
    ew_perturbation: Option<f64>,
) -> Result<Vec<ValidationRow>> {
    let mut rows = Vec::new();
    for (i, cell) in grid.iter().enumerate() {
        let spec = MechanismSpec::unit(cell.q, cell.sigma).map_err(|e| CliError::accounting("validation grid", e))?;
        let oracle = mc_delta_grid(&spec, cell.m, &cell.epsilons, settings.samples, seed.wrapping_add(i as u64))
            .map_err(|e| CliError::accounting("oracle", e))?;
        for &method in accountants {
            let base = make_accountant(method, order_k, settings.berry_esseen)?;
            let acct: Box<dyn PrivacyAccountant> = match (method, ew_perturbation) {
                (Method::Edgeworth, Some(r)) => Box::new(SigmaPerturbed { inner: base, relative: r }),
                _ => base,
            };
            for est in &oracle {
                let res = acct
                    .delta(&spec, cell.m, est.epsilon)
                    .map_err(|e| CliError::accounting(format!("{method} q={} sigma={}", cell.q, cell.sigma), e))?;
                let envelope = res.error_envelope.unwrap_or(0.0);
                rows.push(ValidationRow {
                    q: cell.q,
                    sigma: cell.sigma,
                    m: cell.m,
                    epsilon: est.epsilon,
                    accountant: method,
                    delta_method: res.delta,
                    delta_mc: est.delta_hat,
                    stderr: est.stderr,
                    envelope,
                    pass: within_band(method, res.delta, est.delta_hat, est.stderr, envelope),
                });
            }
        }
    }
    Ok(rows)
}

pub fn validation_table(rows: &[ValidationRow]) -> String {
    let mut s = String::from("q,sigma,m,epsilon,accountant,delta_method,delta_mc,stderr,envelope,pass\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{}",
            sig6(r.q),
            sig6(r.sigma),
            r.m,
            sig6(r.epsilon),
            r.accountant,
            sig6(r.delta_method),
            sig6(r.delta_mc),
            sig6(r.stderr),
            sig6(r.envelope),
            r.pass
        );
    }
    s
}

/// Where training data comes from.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DataSource {
    Synthetic { n: usize, dim: usize, classes: usize, separation: f64, seed: u64 },
    File { path: PathBuf },
}

impl DataSource {
    pub fn load(&self) -> Result<Dataset> {
        match self {
            DataSource::Synthetic { n, dim, classes, separation, seed } => {
                synthetic_clusters(*n, *dim, *classes, *separation, *seed).map_err(CliError::training)
            }
            DataSource::File { path } => Dataset::load(path).map_err(|e| match e {
                dpacct_rgp::RgpError::Io(io) => CliError::config("data", format!("{}: {io}", path.display())),
                other => CliError::training(other),
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainSimConfig {
    pub data: DataSource,
    pub run: TrainRunConfig,
    pub accountant: Method,
    pub order_k: usize,
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainMetrics {
    pub samples: usize,
    pub accuracy: f64,
    pub baseline_accuracy: f64,
    pub final_loss: f64,
    pub sigma: f64,
    pub sampling_rate: f64,
    pub spent_epsilon: Option<f64>,
    pub spent_delta: Option<f64>,
    pub mean_batch_size: f64,
    pub mean_clip_fraction: f64,
    pub clip_fraction: Vec<f64>,
}

pub fn train_sim(config: &TrainSimConfig) -> Result<TrainMetrics> {
    let data = config.data.load()?;
    let accountant = make_accountant(config.accountant, config.order_k, true)?;
    let run = train_private(&config.run, &data, accountant.as_ref()).map_err(CliError::training)?;
    let baseline = train_nonprivate(&config.run, &data).map_err(CliError::training)?;
    let steps = run.ledger.len().max(1) as f64;
    let clip_fraction: Vec<f64> = run.ledger.iter().map(|r| r.clip_fraction).collect();
    Ok(TrainMetrics {
        samples: data.len(),
        accuracy: run.model.accuracy(&data),
        baseline_accuracy: baseline.accuracy(&data),
        final_loss: run.model.mean_loss(&data),
        sigma: run.sigma,
        sampling_rate: run.sampling_rate,
        spent_epsilon: run.spent.as_ref().map(|s| s.epsilon),
        spent_delta: run.spent.as_ref().map(|s| s.delta),
        mean_batch_size: run.ledger.iter().map(|r| r.batch_size as f64).sum::<f64>() / steps,
        mean_clip_fraction: clip_fraction.iter().sum::<f64>() / steps,
        clip_fraction,
    })
}

/// Human-readable one-line summary per calibration row.
pub fn calibration_summary(rows: &[CalibrationRow]) -> String {
    let mut s = String::new();
    for r in rows {
        let _ = writeln!(
            s,
            "{:<6} m={:<5} eps={:<4} {:<3} sigma={} (eps {})",
            r.dataset,
            r.m,
            sig6(r.epsilon_target),
            r.accountant.to_string(),
            sig6(r.sigma),
            sig6(r.epsilon)
        );
    }
    s
}

/// Serialises calibration output in the requested format.
pub fn render_calibration(config: &ExperimentConfig, rows: Vec<CalibrationRow>) -> String {
    match config.format {
        Format::Csv => calibration_csv(&rows),
        Format::Json => Report::new("calibrate", config.clone(), Settings::new(config.order_k), rows).to_json(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mnli() -> DatasetConfig {
        crate::config::resolve_preset("MNLI").unwrap().remove(0)
    }

    #[test]
    fn perturbation_shifts_sigma() {
        let spec = MechanismSpec::unit(1.0, 1.0).unwrap();
        let plain = EdgeworthAccountant::default();
        let shifted = SigmaPerturbed { inner: EdgeworthAccountant::default(), relative: 0.05 };
        let a = shifted.delta(&spec, 1, 1.0).unwrap().delta;
        let b = plain.delta(&MechanismSpec::unit(1.0, 1.05).unwrap(), 1, 1.0).unwrap().delta;
        assert_eq!(a, b);
    }

    #[test]
    fn rdp_band_is_one_sided() {
        assert!(within_band(Method::Rdp, 0.5, 0.1, 0.001, 0.0));
        assert!(!within_band(Method::Edgeworth, 0.5, 0.1, 0.001, 0.0));
        assert!(!within_band(Method::Rdp, 0.05, 0.1, 0.001, 0.0));
        assert!(within_band(Method::Prv, 0.1029, 0.1, 0.001, 0.0));
    }

    #[test]
    fn csv_rows_use_six_digits() {
        let row = calibrate_cell(&mnli(), 1000, 8.0, &RdpAccountant::default()).unwrap();
        let csv = calibration_csv(std::slice::from_ref(&row));
        let line = csv.lines().nth(1).unwrap();
        assert!(line.starts_with("MNLI,393000,2000,0.00508906,1e-6,1000,8,RDP,"), "{line}");
    }

    #[test]
    fn curve_rows_and_header() {
        let curve = curve_for(&mnli(), 1000, &[5.0, 6.0, 7.0, 8.0], &[Method::Rdp, Method::Edgeworth], 2).unwrap();
        let csv = curve_csv(&curve);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], CURVE_CSV_HEADER);
        assert_eq!(lines.len(), 5);
        assert!(lines[1].starts_with("5,") && lines[1].contains(",,"));
        for r in &curve.rows {
            assert!(r.sigma_ew.unwrap() < r.sigma_rdp.unwrap());
        }
    }

    #[test]
    fn unreachable_target_maps_to_exit_three() {
        let tiny = DatasetConfig { name: "tiny".into(), n: 10, batch: 10, delta: 1e-6 };
        let err = calibrate_cell(&tiny, 1_000_000, 0.01, &RdpAccountant::default()).unwrap_err();
        assert_eq!(err.exit_code(), 3);
        assert!(err.to_string().contains("tiny"));
    }

    #[test]
    fn validation_rows_report_every_field() {
        let grid = vec![ValidationCell { q: 1.0, sigma: 1.0, m: 1, epsilons: vec![1.0] }];
        let settings = ValidationSettings { samples: 200_000, berry_esseen: false, standard_errors: VALIDATION_SE };
        let rows = validate_rows(&grid, &[Method::Edgeworth, Method::Rdp], 2, &settings, 1, None).unwrap();
        assert_eq!(rows.len(), 2);
        assert!(rows.iter().all(|r| r.pass), "{rows:?}");
        let exact = dpacct_core::analytic_gaussian_delta(1.0, 1.0);
        assert!((rows[0].delta_method - exact).abs() < 1e-6);
    }
}
