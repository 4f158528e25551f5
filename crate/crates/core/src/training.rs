//! Contrastive-divergence training with momentum, optional weight decay, and
//! the spectral projection after every update.
//!
//! Both phases use the conditional mean of `h` given `v` rather than a
//! sampled `h`. For leaky units `alpha_j eta_j` is exactly the derivative of
//! `F_c(eta_j)`, so `positive - negative` is an unbiased estimate of the
//! log-likelihood gradient whenever the negative chains sample the model.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::model::{HiddenKind, RbmParams};
use crate::projection::{project_spectral, spectral_norm};
use crate::rng::{derive_seed, stream};
use crate::sampler::{anneal_from_base, run_from_starts, AnnealSchedule, ChainSet, GaussianBase, Kernel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum NegativeSampler {
    /// Chains start at the mini-batch rows and run at the target leakiness.
    Cd,
    /// Leakiness annealing from the exact `c = 1` Gaussian.
    LeakyAnneal,
    /// Leakiness annealing started from the mini-batch rows.
    Mix,
}

impl NegativeSampler {
    pub fn as_str(self) -> &'static str {
        match self {
            NegativeSampler::Cd => "cd",
            NegativeSampler::LeakyAnneal => "leaky",
            NegativeSampler::Mix => "mix",
        }
    }
}

impl std::str::FromStr for NegativeSampler {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "cd" => Ok(NegativeSampler::Cd),
            "leaky" | "leaky-anneal" | "anneal" => Ok(NegativeSampler::LeakyAnneal),
            "mix" => Ok(NegativeSampler::Mix),
            other => Err(Error::InvalidParameter(format!("unknown negative sampler `{other}`"))),
        }
    }
}

/// Annealing settings for the `LeakyAnneal` and `Mix` negative phases. The
/// schedule runs from `c_start` down to the model's leakiness over
/// `cd_steps` steps; `epsilon = None` picks the step that reaches the target
/// after 90% of them. `c_start` equal to the model's leakiness makes `Mix`
/// identical to CD.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnnealSettings {
    pub c_start: f64,
    pub epsilon: Option<f64>,
    pub sweeps_per_level: usize,
}

impl Default for AnnealSettings {
    fn default() -> Self {
        AnnealSettings {
            c_start: 1.0,
            epsilon: None,
            sweeps_per_level: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub cd_steps: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub neg_sampler: NegativeSampler,
    pub anneal: AnnealSettings,
    pub weight_decay: f64,
    pub projection_enabled: bool,
    pub seed: u64,
    pub kernel: Kernel,
    /// Multiplies the learning rate after every epoch; 1 keeps it constant.
    pub lr_decay: f64,
    pub train_visible_bias: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            cd_steps: 1,
            learning_rate: 0.01,
            momentum: 0.9,
            batch_size: 100,
            epochs: 10,
            neg_sampler: NegativeSampler::Cd,
            anneal: AnnealSettings::default(),
            weight_decay: 0.0,
            projection_enabled: true,
            seed: 0,
            kernel: Kernel::default(),
            lr_decay: 1.0,
            train_visible_bias: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: &str| Err(Error::InvalidParameter(msg.to_string()));
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return fail("learning_rate must be a finite non-negative number");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return fail("momentum must lie in [0, 1)");
        }
        if self.cd_steps == 0 {
            return fail("cd_steps must be at least 1");
        }
        if self.batch_size == 0 {
            return fail("batch_size must be at least 1");
        }
        if !(self.weight_decay >= 0.0) {
            return fail("weight_decay must be non-negative");
        }
        if !(self.lr_decay > 0.0) {
            return fail("lr_decay must be positive");
        }
        Ok(())
    }

    /// Schedule used by the negative phase for a model with leakiness `c`.
    pub fn schedule(&self, c: f64) -> AnnealSchedule {
        let base = match self.neg_sampler {
            NegativeSampler::Cd => AnnealSchedule::constant(c, self.cd_steps),
            NegativeSampler::LeakyAnneal | NegativeSampler::Mix => {
                let c_start = self.anneal.c_start.clamp(c, 1.0);
                let mut s = AnnealSchedule::new(c, self.cd_steps);
                s.c_start = c_start;
                s.epsilon = match self.anneal.epsilon {
                    Some(e) => e,
                    None if c_start > c => (c_start - c) / (0.9 * self.cd_steps as f64).max(1.0),
                    None => 1.0,
                };
                s.with_sweeps_per_level(self.anneal.sweeps_per_level)
            }
        };
        base.with_kernel(self.kernel)
    }
}

/// Sufficient statistics (or their difference) for one mini-batch.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientEstimate {
    pub d_weights: DMatrix<f64>,
    pub d_visible_bias: DVector<f64>,
    pub d_hidden_bias: DVector<f64>,
}

impl GradientEstimate {
    pub fn zeros(num_visible: usize, num_hidden: usize) -> Self {
        GradientEstimate {
            d_weights: DMatrix::zeros(num_visible, num_hidden),
            d_visible_bias: DVector::zeros(num_visible),
            d_hidden_bias: DVector::zeros(num_hidden),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.d_weights
            .iter()
            .chain(self.d_visible_bias.iter())
            .chain(self.d_hidden_bias.iter())
            .all(|x| x.is_finite())
    }

    pub fn sub(&self, other: &GradientEstimate) -> GradientEstimate {
        GradientEstimate {
            d_weights: &self.d_weights - &other.d_weights,
            d_visible_bias: &self.d_visible_bias - &other.d_visible_bias,
            d_hidden_bias: &self.d_hidden_bias - &other.d_hidden_bias,
        }
    }
}

/// Batch averages of `v E[h|v]^T`, `v` and `E[h|v]`.
pub fn expected_statistics<'a, I>(params: &RbmParams, rows: I) -> Result<GradientEstimate>
where
    I: IntoIterator<Item = &'a DVector<f64>>,
{
    let mut acc = GradientEstimate::zeros(params.num_visible(), params.num_hidden());
    let mut n = 0usize;
    for v in rows {
        let mean_h = params.hidden_mean(v)?;
        acc.d_weights.ger(1.0, v, &mean_h, 1.0);
        acc.d_visible_bias += v;
        acc.d_hidden_bias += &mean_h;
        n += 1;
    }
    if n == 0 {
        return Err(Error::EmptyData);
    }
    let scale = 1.0 / n as f64;
    acc.d_weights *= scale;
    acc.d_visible_bias *= scale;
    acc.d_hidden_bias *= scale;
    Ok(acc)
}

/// Data-side statistics.
pub fn positive_phase(params: &RbmParams, batch: &[DVector<f64>]) -> Result<GradientEstimate> {
    expected_statistics(params, batch)
}

/// Runs the configured negative-phase chains, one per batch row.
pub fn negative_chains(params: &RbmParams, batch: &[DVector<f64>], config: &TrainConfig, seed: u64) -> Result<ChainSet> {
    if batch.is_empty() {
        return Err(Error::EmptyData);
    }
    let schedule = config.schedule(params.leakiness);
    match (config.neg_sampler, params.kind) {
        (NegativeSampler::LeakyAnneal, HiddenKind::LeakyRelu) => {
            let base = GaussianBase::new(params)?;
            let (chains, _) = anneal_from_base(params, &base, &schedule, batch.len(), seed, |_| (), |_, _| {})?;
            Ok(chains)
        }
        (NegativeSampler::LeakyAnneal, HiddenKind::Bernoulli) => Err(Error::InvalidParameter(
            "leakiness annealing needs leaky hidden units".into(),
        )),
        _ => run_from_starts(params, batch, &schedule, seed),
    }
}

/// Model-side statistics at the final states of the negative chains.
pub fn negative_phase(params: &RbmParams, batch: &[DVector<f64>], config: &TrainConfig, seed: u64) -> Result<GradientEstimate> {
    let chains = negative_chains(params, batch, config, seed)?;
    expected_statistics(params, chains.visible())
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean squared error of the one-step conditional-mean reconstruction.
    pub reconstruction_error: f64,
    pub log_likelihood: Option<f64>,
    pub sigma_max: f64,
    pub learning_rate: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainingLog {
    pub epochs: Vec<EpochRecord>,
    pub updates: usize,
}

/// Hooks into the training loop.
pub trait TrainMonitor {
    /// Called after every parameter update (and projection).
    fn after_update(&mut self, _update: usize, _params: &RbmParams) -> Result<()> {
        Ok(())
    }

    /// Called at the end of every epoch; a returned value is stored in the log.
    fn log_likelihood(&mut self, _epoch: usize, _params: &RbmParams) -> Result<Option<f64>> {
        Ok(None)
    }

    /// Called after each epoch's record is logged; `true` ends training.
    fn should_stop(&mut self, _record: &EpochRecord) -> bool {
        false
    }
}

impl TrainMonitor for () {}

/// `W ~ Unif(0, 0.01)`, zero biases.
pub fn init_params(num_visible: usize, num_hidden: usize, leakiness: f64, kind: HiddenKind, seed: u64) -> Result<RbmParams> {
    let mut rng = stream(seed, 0);
    let mut params = RbmParams::zeros(num_visible, num_hidden, leakiness, kind)?;
    params.weights = DMatrix::from_fn(num_visible, num_hidden, |_, _| rng.random_range(0.0..0.01));
    Ok(params)
}

pub fn reconstruction_error(params: &RbmParams, data: &[DVector<f64>]) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::EmptyData);
    }
    let mut total = 0.0;
    for v in data {
        let recon = params.visible_conditional(&params.hidden_mean(v)?)?;
        total += (v - recon).norm_squared();
    }
    Ok(total / (data.len() * params.num_visible()) as f64)
}

pub fn train(params: &RbmParams, data: &[DVector<f64>], config: &TrainConfig) -> Result<(RbmParams, TrainingLog)> {
    train_with(params, data, config, &mut ())
}

/// Mini-batch training. Update `u` draws its chains from seed
/// `derive_seed(seed, u)`; epoch `e` shuffles rows with stream `e` of
/// `derive_seed(seed, u64::MAX)`.
pub fn train_with<M: TrainMonitor + ?Sized>(
    params: &RbmParams,
    data: &[DVector<f64>],
    config: &TrainConfig,
    monitor: &mut M,
) -> Result<(RbmParams, TrainingLog)> {
    config.validate()?;
    params.validate()?;
    if data.is_empty() {
        return Err(Error::EmptyData);
    }
    if let Some(bad) = data.iter().find(|v| v.len() != params.num_visible()) {
        return Err(Error::DimensionMismatch {
            what: "training row",
            expected: params.num_visible(),
            found: bad.len(),
        });
    }
    if config.projection_enabled && !params.is_safe() {
        return Err(Error::InvalidParameter("initial weights violate I - W W^T >= 0".into()));
    }

    let mut params = params.clone();
    let mut velocity = GradientEstimate::zeros(params.num_visible(), params.num_hidden());
    let mut log = TrainingLog::default();
    let mut lr = config.learning_rate;
    let shuffle_seed = derive_seed(config.seed, u64::MAX);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut batch: Vec<DVector<f64>> = Vec::with_capacity(config.batch_size);

    for epoch in 0..config.epochs {
        order.shuffle(&mut stream(shuffle_seed, epoch as u64));
        for chunk in order.chunks(config.batch_size) {
            batch.clear();
            batch.extend(chunk.iter().map(|&r| data[r].clone()));
            let update = log.updates;
            let diverged = |detail: String| Error::TrainingDiverged { epoch, update, detail };

            let positive = positive_phase(&params, &batch)?;
            let negative = match negative_phase(&params, &batch, config, derive_seed(config.seed, update as u64)) {
                Ok(n) => n,
                Err(e) if e.is_numerical() => return Err(diverged(e.to_string())),
                Err(e) => return Err(e),
            };
            let mut grad = positive.sub(&negative);
            if config.weight_decay > 0.0 {
                grad.d_weights -= &params.weights * config.weight_decay;
            }
            if !grad.is_finite() {
                return Err(diverged("non-finite gradient".into()));
            }

            velocity.d_weights = &velocity.d_weights * config.momentum + &grad.d_weights * lr;
            velocity.d_hidden_bias = &velocity.d_hidden_bias * config.momentum + &grad.d_hidden_bias * lr;
            params.weights += &velocity.d_weights;
            params.hidden_bias += &velocity.d_hidden_bias;
            if config.train_visible_bias {
                velocity.d_visible_bias = &velocity.d_visible_bias * config.momentum + &grad.d_visible_bias * lr;
                params.visible_bias += &velocity.d_visible_bias;
            }
            if !params.is_finite() {
                return Err(diverged("non-finite parameters".into()));
            }
            if config.projection_enabled {
                params.weights = project_spectral(&params.weights)
                    .map_err(|e| diverged(e.to_string()))?
                    .0;
            }
            log.updates += 1;
            monitor.after_update(log.updates, &params)?;
        }

        let record = EpochRecord {
            epoch: epoch + 1,
            reconstruction_error: reconstruction_error(&params, data)?,
            log_likelihood: monitor.log_likelihood(epoch + 1, &params)?,
            sigma_max: spectral_norm(&params.weights)?,
            learning_rate: lr,
        };
        log::debug!(
            "epoch {}: recon {:.5} sigma_max {:.4} loglik {:?}",
            record.epoch,
            record.reconstruction_error,
            record.sigma_max,
            record.log_likelihood
        );
        let stop = monitor.should_stop(&record);
        log.epochs.push(record);
        if stop {
            break;
        }
        lr *= config.lr_decay;
    }
    Ok((params, log))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::{dmatrix, dvector};

    #[test]
    fn positive_phase_examples() {
        let p = RbmParams::zeros(2, 3, 0.2, HiddenKind::LeakyRelu).unwrap();
        let g = positive_phase(&p, &[dvector![1.0, -2.0], dvector![0.5, 0.5]]).unwrap();
        assert_eq!(g.d_weights, DMatrix::zeros(2, 3));
        assert_eq!(g.d_hidden_bias, DVector::zeros(3));
        assert_eq!(g.d_visible_bias, dvector![0.75, -0.75]);

        let p = RbmParams::leaky(dmatrix![1.0, 0.5; 0.0, 0.2], dvector![0.1, 0.3], 0.2).unwrap();
        let v = dvector![1.0, 2.0];
        let eta = p.response(&v).unwrap();
        assert!(eta.iter().all(|&e| e > 0.0));
        let g = positive_phase(&p, std::slice::from_ref(&v)).unwrap();
        assert_relative_eq!(g.d_weights, &v * eta.transpose(), epsilon = 1e-14);

        let p = RbmParams::bernoulli(DMatrix::zeros(2, 2), DVector::zeros(2)).unwrap();
        let g = positive_phase(&p, &[dvector![0.3, 0.1]]).unwrap();
        assert_eq!(g.d_hidden_bias, dvector![0.5, 0.5]);
        assert!(positive_phase(&p, &[]).is_err());
    }

    #[test]
    fn zero_learning_rate_keeps_params() {
        let p = init_params(3, 2, 0.2, HiddenKind::LeakyRelu, 1).unwrap();
        let data: Vec<DVector<f64>> = (0..20).map(|k| DVector::from_element(3, (k as f64 * 0.37).sin())).collect();
        let config = TrainConfig {
            learning_rate: 0.0,
            epochs: 2,
            batch_size: 7,
            ..TrainConfig::default()
        };
        let (out, log) = train(&p, &data, &config).unwrap();
        assert_eq!(out, p);
        assert_eq!(log.epochs.len(), 2);
        assert_eq!(log.updates, 6);
    }

    #[test]
    fn init_is_small_and_positive() {
        let p = init_params(5, 4, 0.1, HiddenKind::LeakyRelu, 3).unwrap();
        assert!(p.weights.iter().all(|&w| (0.0..0.01).contains(&w)));
        assert_eq!(p.hidden_bias, DVector::zeros(4));
    }

    #[test]
    fn degenerate_mix_schedule_is_constant() {
        let config = TrainConfig {
            neg_sampler: NegativeSampler::Mix,
            cd_steps: 5,
            anneal: AnnealSettings {
                c_start: 0.3,
                ..AnnealSettings::default()
            },
            ..TrainConfig::default()
        };
        let s = config.schedule(0.3);
        assert!((1..=5).all(|t| s.leakiness_at(t) == 0.3));
        let s = TrainConfig {
            anneal: AnnealSettings::default(),
            ..config
        }
        .schedule(0.1);
        assert_eq!(s.steps_to_target(), 5);
        assert!(s.leakiness_at(4) > 0.1);
    }
}
