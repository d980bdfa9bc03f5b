//! Private training loop: Poisson-sampled batches, carriers from the
//! historical update, clipped and noised carrier gradients, plain SGD.

use crate::carriers::{decompose_carriers_with, CarrierPair, DEFAULT_POWER_ITERATIONS};
use crate::data::Dataset;
use crate::error::{Result, RgpError};
use crate::model::{Head, ToyModel};
use crate::privatize::{clip_and_noise, per_sample_carrier_gradients, reconstruct_weight_grad};
use dpacct_core::{calibrate_sigma, AccountantResult, CalibrationOptions, MechanismSpec, PrivacyAccountant};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use std::collections::VecDeque;

/// Samples in the public warm-up batch used before any history exists.
pub const WARMUP_SAMPLES: usize = 64;

const STREAM_SAMPLING: u64 = 1;
const STREAM_NOISE: u64 = 2;
const STREAM_CARRIERS: u64 = 3;
const STREAM_WARMUP: u64 = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainRunConfig {
    /// Expected batch size; the sampling rate is `batch_size / n`.
    pub batch_size: u64,
    pub steps: u64,
    pub clip_norm: f64,
    pub epsilon_target: f64,
    pub delta: f64,
    /// Carrier rank, capped per layer at the layer's smaller dimension.
    pub rank: usize,
    pub seed: u64,
    /// Steps between the two weight snapshots whose difference drives the carriers.
    pub history_lag: usize,
    pub learning_rate: f64,
    /// Hidden width; `None` trains a linear model.
    pub hidden: Option<usize>,
    pub head: Head,
    pub power_iterations: usize,
    /// Skip calibration and use this σ. Zero disables noise and accounting.
    pub sigma_override: Option<f64>,
}

impl Default for TrainRunConfig {
    fn default() -> Self {
        Self {
            batch_size: 2000,
            steps: 2000,
            clip_norm: 1.0,
            epsilon_target: 8.0,
            delta: 1e-5,
            rank: 1,
            seed: 0,
            history_lag: 1,
            learning_rate: 0.1,
            hidden: None,
            head: Head::Softmax,
            power_iterations: DEFAULT_POWER_ITERATIONS,
            sigma_override: None,
        }
    }
}

impl TrainRunConfig {
    pub fn validate(&self, n: usize) -> Result<()> {
        if n < 2 {
            return Err(RgpError::DatasetTooSmall(n));
        }
        let bad = |msg: String| Err(RgpError::InvalidConfig(msg));
        if self.batch_size == 0 || self.batch_size > n as u64 {
            return bad(format!("batch_size {} must lie in 1..={n}", self.batch_size));
        }
        if self.steps == 0 {
            return bad("steps must be at least 1".into());
        }
        if !(self.clip_norm > 0.0) {
            return bad(format!("clip_norm {} must be positive", self.clip_norm));
        }
        if self.rank == 0 {
            return bad("rank must be at least 1".into());
        }
        if self.history_lag == 0 {
            return bad("history_lag must be at least 1".into());
        }
        if !(self.learning_rate > 0.0) {
            return bad(format!("learning_rate {} must be positive", self.learning_rate));
        }
        if self.hidden == Some(0) {
            return bad("hidden width must be positive".into());
        }
        if let Some(s) = self.sigma_override {
            if !(s >= 0.0) || !s.is_finite() {
                return bad(format!("sigma_override {s} must be finite and non-negative"));
            }
        }
        Ok(())
    }

    pub fn sampling_rate(&self, n: usize) -> f64 {
        self.batch_size as f64 / n as f64
    }
}

/// One row of the training ledger.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    pub batch_size: usize,
    pub clip_fraction: f64,
    pub carrier_rank: Vec<usize>,
    pub update_norm: f64,
}

#[derive(Debug, Clone)]
pub struct PrivateModel {
    pub model: ToyModel,
    pub ledger: Vec<StepRecord>,
    pub sigma: f64,
    pub sampling_rate: f64,
    /// Guarantee of the run; `None` when noise and accounting were disabled.
    pub spent: Option<AccountantResult>,
}

fn initial_model(config: &TrainRunConfig, dim: usize, classes: usize) -> ToyModel {
    match config.hidden {
        Some(h) => ToyModel::mlp(dim, h, classes, config.head, config.seed),
        None => ToyModel::linear(dim, classes, config.head),
    }
}

fn stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn poisson_batch(n: usize, q: f64, rng: &mut ChaCha8Rng) -> Vec<usize> {
    (0..n).filter(|_| rng.random::<f64>() < q).collect()
}

/// One SGD step on standard-normal inputs with uniform random labels; the
/// returned difference stands in for the history until enough steps exist.
fn warmup_update(model: &ToyModel, learning_rate: f64, rng: &mut ChaCha8Rng) -> Vec<DMatrix<f64>> {
    let mut total: Vec<DMatrix<f64>> = model.layers().iter().map(|w| DMatrix::zeros(w.nrows(), w.ncols())).collect();
    for _ in 0..WARMUP_SAMPLES {
        let x = DVector::from_fn(model.input_dim(), |_, _| StandardNormal.sample(rng));
        let y = rng.random_range(0..model.classes());
        for (t, g) in total.iter_mut().zip(model.weight_gradients(x.column(0), y)) {
            *t += g;
        }
    }
    total.into_iter().map(|g| g * (-learning_rate / WARMUP_SAMPLES as f64)).collect()
}

fn resolve_sigma(
    config: &TrainRunConfig,
    q: f64,
    accountant: &dyn PrivacyAccountant,
) -> Result<(f64, Option<AccountantResult>)> {
    let sigma = match config.sigma_override {
        Some(s) if s == 0.0 => return Ok((0.0, None)),
        Some(s) => s,
        None => {
            calibrate_sigma(accountant, config.epsilon_target, config.delta, q, config.steps, &CalibrationOptions::default())?
                .sigma
        }
    };
    let spent = accountant.epsilon(&MechanismSpec::unit(q, sigma)?, config.steps, config.delta)?;
    if spent.epsilon > config.epsilon_target {
        return Err(RgpError::InvalidConfig(format!(
            "sigma {sigma} spends epsilon {} above the target {}",
            spent.epsilon, config.epsilon_target
        )));
    }
    Ok((sigma, Some(spent)))
}

/// The privacy guarantee a run with `config` on `n` samples would report.
/// Depends only on the configuration.
pub fn planned_budget(
    config: &TrainRunConfig,
    n: usize,
    accountant: &dyn PrivacyAccountant,
) -> Result<(f64, Option<AccountantResult>)> {
    config.validate(n)?;
    resolve_sigma(config, config.sampling_rate(n), accountant)
}

/// Runs `config.steps` private steps. The noise multiplier is calibrated
/// with `accountant` before any data is touched.
pub fn train_private(config: &TrainRunConfig, data: &Dataset, accountant: &dyn PrivacyAccountant) -> Result<PrivateModel> {
    let (sigma, spent) = planned_budget(config, data.len(), accountant)?;
    let q = config.sampling_rate(data.len());
    let mut model = initial_model(config, data.dim(), data.classes());
    let mut sampling = stream(config.seed, STREAM_SAMPLING);
    let mut noise_seeds = stream(config.seed, STREAM_NOISE);
    let mut carrier_seeds = stream(config.seed, STREAM_CARRIERS);
    let warmup = warmup_update(&model, config.learning_rate, &mut stream(config.seed, STREAM_WARMUP));
    let mut snapshots: VecDeque<Vec<DMatrix<f64>>> = VecDeque::from([model.layers().to_vec()]);
    let scale = config.learning_rate / config.batch_size as f64;
    let mut ledger = Vec::with_capacity(config.steps as usize);

    for step in 0..config.steps {
        let batch = poisson_batch(data.len(), q, &mut sampling);
        let history: Vec<DMatrix<f64>> = if snapshots.len() > config.history_lag {
            model.layers().iter().zip(&snapshots[0]).map(|(w, old)| w - old).collect()
        } else {
            warmup.clone()
        };
        let carrier_seed = carrier_seeds.next_u64();
        let carriers = history
            .iter()
            .enumerate()
            .map(|(l, h)| {
                let r = config.rank.min(h.nrows()).min(h.ncols());
                decompose_carriers_with(h, r, config.power_iterations, carrier_seed.wrapping_add(l as u64))
            })
            .collect::<Result<Vec<CarrierPair>>>()?;
        let grads = per_sample_carrier_gradients(&model, data, &batch, &carriers)?;
        let aggregate = clip_and_noise(&grads, &carriers, config.clip_norm, sigma, noise_seeds.next_u64())?;
        let mut update_sq = 0.0;
        for ((w, c), g) in model.layers_mut().iter_mut().zip(&carriers).zip(&aggregate.gradient.layers) {
            let dw = reconstruct_weight_grad(c, &g.dl, &g.dr)?;
            update_sq += dw.norm_squared() * scale * scale;
            *w -= dw * scale;
        }
        snapshots.push_back(model.layers().to_vec());
        if snapshots.len() > config.history_lag + 1 {
            snapshots.pop_front();
        }
        ledger.push(StepRecord {
            step,
            batch_size: batch.len(),
            clip_fraction: aggregate.clip_fraction(),
            carrier_rank: carriers.iter().map(CarrierPair::rank).collect(),
            update_norm: update_sq.sqrt(),
        });
    }
    Ok(PrivateModel { model, ledger, sigma, sampling_rate: q, spent })
}

/// Plain minibatch SGD on full gradients with the same initialisation and
/// batches as [`train_private`]: no carriers, clipping or noise.
pub fn train_nonprivate(config: &TrainRunConfig, data: &Dataset) -> Result<ToyModel> {
    config.validate(data.len())?;
    let q = config.sampling_rate(data.len());
    let mut model = initial_model(config, data.dim(), data.classes());
    let mut sampling = stream(config.seed, STREAM_SAMPLING);
    let scale = config.learning_rate / config.batch_size as f64;
    for _ in 0..config.steps {
        let batch = poisson_batch(data.len(), q, &mut sampling);
        let mut total: Vec<DMatrix<f64>> = model.layers().iter().map(|w| DMatrix::zeros(w.nrows(), w.ncols())).collect();
        for &i in &batch {
            for (t, g) in total.iter_mut().zip(model.weight_gradients(data.sample(i), data.label(i))) {
                *t += g;
            }
        }
        for (w, g) in model.layers_mut().iter_mut().zip(total) {
            *w -= g * scale;
        }
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synthetic_clusters;
    use dpacct_core::{EdgeworthAccountant, RdpAccountant};

    fn small_config() -> TrainRunConfig {
        TrainRunConfig { batch_size: 50, steps: 30, seed: 3, ..TrainRunConfig::default() }
    }

    #[test]
    fn rejects_tiny_datasets_and_bad_batches() {
        let one = Dataset::new(DMatrix::zeros(2, 1), vec![0], 2).unwrap();
        let acct = EdgeworthAccountant::default();
        assert!(matches!(train_private(&small_config(), &one, &acct), Err(RgpError::DatasetTooSmall(1))));
        let data = synthetic_clusters(20, 3, 2, 2.0, 0).unwrap();
        assert!(train_private(&small_config(), &data, &acct).is_err());
    }

    #[test]
    fn unreachable_target_propagates() {
        let data = synthetic_clusters(100, 3, 2, 2.0, 0).unwrap();
        let config = TrainRunConfig { batch_size: 100, steps: 1000, epsilon_target: 0.01, ..small_config() };
        let err = train_private(&config, &data, &RdpAccountant::default()).unwrap_err();
        assert!(matches!(err, RgpError::Accounting(dpacct_core::AccountingError::TargetUnreachable { .. })), "{err}");
    }

    #[test]
    fn reported_budget_is_the_accountants_value() {
        let data = synthetic_clusters(1000, 4, 2, 3.0, 1).unwrap();
        let acct = RdpAccountant::default();
        let run = train_private(&small_config(), &data, &acct).unwrap();
        let spent = run.spent.clone().unwrap();
        let direct = acct.epsilon(&MechanismSpec::unit(0.05, run.sigma).unwrap(), 30, 1e-5).unwrap();
        assert_eq!(spent, direct);
        assert!(spent.epsilon <= 8.0);
        // a different dataset of the same size yields the same accounting
        let other = synthetic_clusters(1000, 4, 2, 0.5, 99).unwrap();
        assert_eq!(train_private(&small_config(), &other, &acct).unwrap().spent, Some(spent));
    }

    #[test]
    fn clip_norms_never_exceed_bound() {
        let data = synthetic_clusters(500, 5, 3, 3.0, 2).unwrap();
        let config = TrainRunConfig { hidden: Some(4), rank: 2, sigma_override: Some(0.0), clip_norm: 0.1, ..small_config() };
        let run = train_private(&config, &data, &EdgeworthAccountant::default()).unwrap();
        assert!(run.ledger.iter().any(|r| r.clip_fraction > 0.0));
    }

    #[test]
    fn sigma_zero_disables_noise_and_is_deterministic() {
        let data = synthetic_clusters(400, 4, 2, 3.0, 5).unwrap();
        let config = TrainRunConfig { sigma_override: Some(0.0), ..small_config() };
        let acct = EdgeworthAccountant::default();
        let a = train_private(&config, &data, &acct).unwrap();
        let b = train_private(&config, &data, &acct).unwrap();
        assert_eq!(a.model, b.model);
        assert!(a.spent.is_none());
        assert_eq!(a.sigma, 0.0);
        // changing only the noise stream's consumer has no effect without noise
        let c = train_private(&TrainRunConfig { epsilon_target: 1.0, ..config }, &data, &acct).unwrap();
        assert_eq!(a.model, c.model);
    }

    #[test]
    fn over_budget_override_is_rejected() {
        let data = synthetic_clusters(1000, 4, 2, 3.0, 1).unwrap();
        let config = TrainRunConfig { sigma_override: Some(0.3), epsilon_target: 1.0, ..small_config() };
        assert!(train_private(&config, &data, &RdpAccountant::default()).is_err());
    }

    #[test]
    fn history_lag_uses_warmup_first() {
        let data = synthetic_clusters(300, 4, 2, 3.0, 5).unwrap();
        let config = TrainRunConfig { history_lag: 3, steps: 6, sigma_override: Some(0.0), ..small_config() };
        let run = train_private(&config, &data, &EdgeworthAccountant::default()).unwrap();
        assert_eq!(run.ledger.len(), 6);
        assert!(run.ledger.iter().all(|r| r.carrier_rank == vec![1]));
    }

    #[test]
    fn nonprivate_training_learns_separable_clusters() {
        let data = synthetic_clusters(2000, 5, 2, 4.0, 7).unwrap();
        let config = TrainRunConfig { batch_size: 100, steps: 200, ..small_config() };
        assert!(train_nonprivate(&config, &data).unwrap().accuracy(&data) > 0.95);
    }
}
