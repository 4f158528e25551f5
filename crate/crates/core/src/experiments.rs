//! Canned experiments behind `lrbm experiment <name>`.
//!
//! Each experiment is a plain function returning typed rows, plus a
//! [`write_csv`] step. All randomness is derived from one seed, so the CSV
//! output only depends on the seed and the settings.

use std::path::Path;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::data::{Dataset, Normalization};
use crate::error::{Error, Result};
use crate::model::{HiddenKind, RbmParams};
use crate::partition::{
    ais_estimate, exact_log_z_bernoulli, exact_log_z_orthogonal, quadrature_log_z, AnnealingPath, LogZEstimate,
    PathKind, MAX_ENUMERATED_HIDDEN,
};
use crate::projection::{is_globally_safe, spectral_norm};
use crate::rng::{derive_seed, stream};
use crate::sampler::{anneal_leakiness_sample, run_from_starts, AnnealSchedule, Kernel};
use crate::stats::mean_sd;
use crate::training::{init_params, train_with, EpochRecord, NegativeSampler, TrainConfig, TrainMonitor};

/// Sweeps used to draw each synthetic training row from a ground-truth model.
pub const TRUTH_SAMPLE_STEPS: usize = 500;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Experiment {
    PartitionBias,
    Mixing,
    Divergence,
    LikelihoodCompare,
}

impl Experiment {
    pub const ALL: [Experiment; 4] = [
        Experiment::PartitionBias,
        Experiment::Mixing,
        Experiment::Divergence,
        Experiment::LikelihoodCompare,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Experiment::PartitionBias => "partition-bias",
            Experiment::Mixing => "mixing",
            Experiment::Divergence => "divergence",
            Experiment::LikelihoodCompare => "likelihood-compare",
        }
    }
}

impl std::str::FromStr for Experiment {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Experiment::ALL
            .into_iter()
            .find(|e| e.as_str() == s)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown experiment `{s}`")))
    }
}

/// A CSV row with a fixed header.
pub trait CsvRow {
    const HEADER: &'static [&'static str];
    fn record(&self) -> Vec<String>;
}

pub fn write_csv<R: CsvRow>(path: &Path, rows: &[R]) -> Result<()> {
    let mut w = csv::Writer::from_writer(std::fs::File::create(path).map_err(|e| Error::io(path, e))?);
    w.write_record(R::HEADER)?;
    for r in rows {
        w.write_record(r.record())?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// `I x J` weights with orthogonal columns of norm `column_norm`, zero
/// biases.
pub fn orthogonal_model(
    num_visible: usize,
    num_hidden: usize,
    column_norm: f64,
    leakiness: f64,
    seed: u64,
) -> Result<RbmParams> {
    if num_hidden > num_visible {
        return Err(Error::InvalidParameter(format!(
            "cannot fit {num_hidden} orthogonal columns in dimension {num_visible}"
        )));
    }
    let mut rng = stream(seed, 0);
    let g = DMatrix::from_fn(num_visible, num_hidden, |_, _| rng.sample::<f64, _>(StandardNormal));
    let q = g.qr().q();
    let w = q.columns(0, num_hidden) * column_norm;
    RbmParams::leaky(w.into_owned(), DVector::zeros(num_hidden), leakiness)
}

/// Gaussian weights rescaled to the given largest singular value, zero
/// biases.
pub fn random_leaky_model(
    num_visible: usize,
    num_hidden: usize,
    sigma_max: f64,
    leakiness: f64,
    seed: u64,
) -> Result<RbmParams> {
    let mut rng = stream(seed, 0);
    let g = DMatrix::from_fn(num_visible, num_hidden, |_, _| rng.sample::<f64, _>(StandardNormal));
    let s = spectral_norm(&g)?;
    RbmParams::leaky(g * (sigma_max / s), DVector::zeros(num_hidden), leakiness)
}

/// `n` independent draws from a leaky model by leakiness annealing.
pub fn sample_model(params: &RbmParams, n: usize, seed: u64) -> Result<Vec<DVector<f64>>> {
    let schedule = AnnealSchedule::new(params.leakiness, TRUTH_SAMPLE_STEPS);
    let chains = anneal_leakiness_sample(params, &schedule, n, seed)?;
    Ok(chains.states.into_iter().map(|s| s.v).collect())
}

/// Mean log-likelihood of `data` under `params` with the quadrature `log Z`
/// (`I <= 2`), and its standard error over rows. Improper models score
/// `-inf`.
pub fn oracle_log_likelihood(params: &RbmParams, data: &[DVector<f64>]) -> Result<(f64, f64)> {
    let log_z = match quadrature_log_z(params, None, 1e-9) {
        Ok(z) => z,
        Err(Error::Divergent { .. }) => return Ok((f64::NEG_INFINITY, f64::NAN)),
        Err(e) => return Err(e),
    };
    let per_row = data
        .iter()
        .map(|v| Ok(params.log_marginal(v)? - log_z))
        .collect::<Result<Vec<f64>>>()?;
    let (mean, sd) = mean_sd(&per_row);
    Ok((mean, sd / (per_row.len() as f64).sqrt()))
}

fn fmt(x: f64) -> String {
    format!("{x}")
}

// ---------------------------------------------------------------- partition bias

#[derive(Debug, Clone, PartialEq)]
pub struct PartitionBiasSettings {
    pub num_visible: usize,
    pub hidden: Vec<usize>,
    pub column_norm: f64,
    pub leakiness: f64,
    pub particles: usize,
    pub levels: usize,
    pub repeats: usize,
    pub kernel: Kernel,
    /// Record wall-clock seconds; off by default so the CSV is reproducible.
    pub timings: bool,
}

impl Default for PartitionBiasSettings {
    fn default() -> Self {
        PartitionBiasSettings {
            num_visible: 64,
            hidden: vec![2, 4, 8, 16],
            column_norm: 0.9,
            leakiness: 0.01,
            particles: 1000,
            levels: 100,
            repeats: 10,
            kernel: Kernel::default(),
            timings: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BiasRow {
    pub hidden: usize,
    pub method: PathKind,
    pub bias_mean: f64,
    pub bias_sd: f64,
    pub particles: usize,
    pub levels: usize,
    pub seconds: f64,
    pub exact_log_z: f64,
    pub biases: Vec<f64>,
}

impl BiasRow {
    pub fn method_name(&self) -> &'static str {
        match self.method {
            PathKind::Energy => "ais-energy",
            PathKind::Leaky => "ais-leaky",
            PathKind::OneSided => "ais-one-sided",
        }
    }
}

impl CsvRow for BiasRow {
    const HEADER: &'static [&'static str] = &["J", "method", "bias_mean", "bias_sd", "particles", "levels", "seconds"];

    fn record(&self) -> Vec<String> {
        vec![
            self.hidden.to_string(),
            self.method_name().to_string(),
            fmt(self.bias_mean),
            fmt(self.bias_sd),
            self.particles.to_string(),
            self.levels.to_string(),
            fmt(self.seconds),
        ]
    }
}

/// AIS bias against the exact orthogonal-column `log Z`, for the energy and
/// leaky paths at equal particles and levels.
pub fn partition_bias(settings: &PartitionBiasSettings, seed: u64) -> Result<Vec<BiasRow>> {
    let mut rows = Vec::new();
    for &j in &settings.hidden {
        let model_seed = derive_seed(seed, j as u64);
        let params = orthogonal_model(settings.num_visible, j, settings.column_norm, settings.leakiness, model_seed)?;
        let exact = exact_log_z_orthogonal(&params)?;
        for (m, kind) in [PathKind::Energy, PathKind::Leaky].into_iter().enumerate() {
            let path = AnnealingPath::uniform(kind, settings.leakiness, settings.levels).with_kernel(settings.kernel);
            let start = Instant::now();
            let biases = (0..settings.repeats)
                .map(|r| {
                    let s = derive_seed(model_seed, (m * settings.repeats + r) as u64 + 1);
                    Ok(ais_estimate(&params, &path, settings.particles, s)?.log_z - exact)
                })
                .collect::<Result<Vec<f64>>>()?;
            let seconds = if settings.timings {
                start.elapsed().as_secs_f64() / settings.repeats.max(1) as f64
            } else {
                0.0
            };
            let (bias_mean, bias_sd) = mean_sd(&biases);
            log::info!("J = {j} {}: bias {bias_mean:.4} +- {bias_sd:.4}", kind.as_str());
            rows.push(BiasRow {
                hidden: j,
                method: kind,
                bias_mean,
                bias_sd,
                particles: settings.particles,
                levels: settings.levels,
                seconds,
                exact_log_z: exact,
                biases,
            });
        }
    }
    Ok(rows)
}

// ---------------------------------------------------------------- mixing

#[derive(Debug, Clone, PartialEq)]
pub struct MixingSettings {
    pub truth_sigma_max: f64,
    pub truth_hidden: usize,
    /// Angular spread (radians) of the ground-truth weight columns.
    pub truth_spread: f64,
    pub leakiness: f64,
    pub model_hidden: usize,
    pub train_rows: usize,
    pub test_rows: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    /// Gibbs steps per negative phase, the same for every method.
    pub steps: usize,
    pub kernel: Kernel,
    /// Evaluate the log-likelihood every this many epochs (and at the end).
    pub eval_every: usize,
}

impl Default for MixingSettings {
    fn default() -> Self {
        MixingSettings {
            truth_sigma_max: 0.9,
            truth_hidden: 3,
            truth_spread: 0.5,
            leakiness: 0.1,
            model_hidden: 4,
            train_rows: 1000,
            test_rows: 1000,
            epochs: 40,
            learning_rate: 0.005,
            momentum: 0.9,
            batch_size: 100,
            steps: 20,
            kernel: Kernel::default(),
            eval_every: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MixingRow {
    pub epoch: usize,
    pub method: NegativeSampler,
    pub loglik: f64,
    pub stderr: f64,
}

impl CsvRow for MixingRow {
    const HEADER: &'static [&'static str] = &["epoch", "method", "loglik", "stderr"];

    fn record(&self) -> Vec<String> {
        vec![
            self.epoch.to_string(),
            self.method.as_str().to_string(),
            fmt(self.loglik),
            fmt(self.stderr),
        ]
    }
}

/// Two-dimensional ground truth: `truth_hidden` columns at evenly spread
/// angles, rescaled to the requested largest singular value.
pub fn planar_truth(settings: &MixingSettings) -> Result<RbmParams> {
    let jt = settings.truth_hidden;
    let w = DMatrix::from_fn(2, jt, |i, j| {
        let theta = settings.truth_spread * (j as f64 / jt as f64 - 0.5) + 0.7;
        if i == 0 {
            theta.cos()
        } else {
            theta.sin()
        }
    });
    let s = spectral_norm(&w)?;
    RbmParams::leaky(w * (settings.truth_sigma_max / s), DVector::zeros(jt), settings.leakiness)
}

struct OracleMonitor<'a> {
    test: &'a [DVector<f64>],
    every: usize,
    last_epoch: usize,
    stderr: Vec<(usize, f64, f64)>,
}

impl TrainMonitor for OracleMonitor<'_> {
    fn log_likelihood(&mut self, epoch: usize, params: &RbmParams) -> Result<Option<f64>> {
        if !epoch.is_multiple_of(self.every) && epoch != self.last_epoch {
            return Ok(None);
        }
        let (ll, se) = oracle_log_likelihood(params, self.test)?;
        self.stderr.push((epoch, ll, se));
        Ok(Some(ll))
    }
}

/// Trains CD, leaky-annealing and mix models from the same start on samples
/// of a planar leaky model and records the oracle test log-likelihood.
pub fn mixing(settings: &MixingSettings, seed: u64) -> Result<Vec<MixingRow>> {
    let truth = planar_truth(settings)?;
    let train_rows = sample_model(&truth, settings.train_rows, derive_seed(seed, 1))?;
    let test_rows = sample_model(&truth, settings.test_rows, derive_seed(seed, 2))?;
    let init = init_params(2, settings.model_hidden, settings.leakiness, HiddenKind::LeakyRelu, derive_seed(seed, 3))?;
    let mut rows = Vec::new();
    for method in [NegativeSampler::Cd, NegativeSampler::LeakyAnneal, NegativeSampler::Mix] {
        let config = TrainConfig {
            cd_steps: settings.steps,
            learning_rate: settings.learning_rate,
            momentum: settings.momentum,
            batch_size: settings.batch_size,
            epochs: settings.epochs,
            neg_sampler: method,
            kernel: settings.kernel,
            seed: derive_seed(seed, 4),
            ..TrainConfig::default()
        };
        let mut monitor = OracleMonitor {
            test: &test_rows,
            every: settings.eval_every.max(1),
            last_epoch: settings.epochs,
            stderr: Vec::new(),
        };
        train_with(&init, &train_rows, &config, &mut monitor)?;
        for (epoch, loglik, stderr) in monitor.stderr {
            rows.push(MixingRow {
                epoch,
                method,
                loglik,
                stderr,
            });
        }
        log::info!("{}: final loglik {:?}", method.as_str(), rows.last().map(|r| r.loglik));
    }
    Ok(rows)
}

// ---------------------------------------------------------------- divergence

#[derive(Debug, Clone, PartialEq)]
pub struct DivergenceSettings {
    pub num_visible: usize,
    pub factors: usize,
    pub noise: f64,
    pub rows: usize,
    pub hidden: usize,
    pub leakiness: f64,
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    /// Epochs for the projected model.
    pub epochs: usize,
    /// The unprojected model trains until its reconstruction error falls
    /// below `reconstruction_target` or `max_epochs` pass.
    pub reconstruction_target: f64,
    pub max_epochs: usize,
    pub chains: usize,
    pub steps: usize,
    pub kernel: Kernel,
}

impl Default for DivergenceSettings {
    fn default() -> Self {
        DivergenceSettings {
            num_visible: 16,
            factors: 2,
            noise: 0.1,
            rows: 2000,
            hidden: 16,
            leakiness: 0.1,
            learning_rate: 0.05,
            momentum: 0.9,
            weight_decay: 1e-4,
            batch_size: 100,
            epochs: 100,
            reconstruction_target: 1e-2,
            max_epochs: 500,
            chains: 1000,
            steps: 200,
            kernel: Kernel::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DivergenceModel {
    Projected,
    Unprojected,
}

impl DivergenceModel {
    pub fn as_str(self) -> &'static str {
        match self {
            DivergenceModel::Projected => "projected",
            DivergenceModel::Unprojected => "unprojected",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DivergenceRow {
    pub step: usize,
    /// `inf` on the terminal row of a chain set that overflowed.
    pub mean_abs_v: f64,
    pub model: DivergenceModel,
}

impl CsvRow for DivergenceRow {
    const HEADER: &'static [&'static str] = &["step", "mean_abs_v", "model"];

    fn record(&self) -> Vec<String> {
        vec![self.step.to_string(), fmt(self.mean_abs_v), self.model.as_str().to_string()]
    }
}

#[derive(Debug, Clone)]
pub struct DivergenceOutcome {
    pub rows: Vec<DivergenceRow>,
    pub projected: RbmParams,
    pub unprojected: RbmParams,
}

/// Standardized rows of `F z + noise` with `z` of dimension `factors`.
pub fn low_rank_data(settings: &DivergenceSettings, seed: u64) -> Result<Vec<DVector<f64>>> {
    let mut rng = stream(seed, 0);
    let mut normal = || rng.sample::<f64, _>(StandardNormal);
    let f = DMatrix::from_fn(settings.num_visible, settings.factors, |_, _| normal());
    let mut raw = DMatrix::zeros(settings.rows, settings.num_visible);
    for r in 0..settings.rows {
        let z = DVector::from_fn(settings.factors, |_, _| normal());
        let v = &f * z;
        for i in 0..settings.num_visible {
            raw[(r, i)] = v[i] + settings.noise * normal();
        }
    }
    let norm = Normalization::fit(&raw);
    Ok(Dataset::with_normalization(raw, norm)?.rows())
}

struct LastParams {
    params: Option<RbmParams>,
    stop_below: f64,
}

impl TrainMonitor for LastParams {
    fn after_update(&mut self, _update: usize, params: &RbmParams) -> Result<()> {
        self.params = Some(params.clone());
        Ok(())
    }

    fn should_stop(&mut self, record: &EpochRecord) -> bool {
        record.reconstruction_error < self.stop_below
    }
}

/// Trains with and without projection, then runs Gibbs chains from random
/// data rows and logs the mean absolute visible value per step.
pub fn divergence(settings: &DivergenceSettings, seed: u64) -> Result<DivergenceOutcome> {
    let data = low_rank_data(settings, derive_seed(seed, 1))?;
    let init = init_params(
        settings.num_visible,
        settings.hidden,
        settings.leakiness,
        HiddenKind::LeakyRelu,
        derive_seed(seed, 2),
    )?;
    let mut trained = Vec::new();
    for (model, projection) in [(DivergenceModel::Projected, true), (DivergenceModel::Unprojected, false)] {
        let config = TrainConfig {
            cd_steps: 1,
            learning_rate: settings.learning_rate,
            momentum: settings.momentum,
            batch_size: settings.batch_size,
            epochs: if projection { settings.epochs } else { settings.max_epochs },
            neg_sampler: NegativeSampler::Cd,
            weight_decay: settings.weight_decay,
            projection_enabled: projection,
            kernel: settings.kernel,
            seed: derive_seed(seed, 3),
            ..TrainConfig::default()
        };
        let mut last = LastParams {
            params: None,
            stop_below: if projection { f64::NEG_INFINITY } else { settings.reconstruction_target },
        };
        let params = match train_with(&init, &data, &config, &mut last) {
            Ok((p, log)) => {
                if let Some(r) = log.epochs.last() {
                    log::info!("{}: {} epochs, reconstruction error {:.4}", model.as_str(), r.epoch, r.reconstruction_error);
                }
                p
            }
            Err(Error::TrainingDiverged { epoch, update, detail }) => {
                log::warn!(
                    "{} training diverged at epoch {epoch}, update {update}: {detail}; using the last finite weights",
                    model.as_str()
                );
                last.params.unwrap_or_else(|| init.clone())
            }
            Err(e) => return Err(e),
        };
        let safety = is_globally_safe(&params.weights);
        log::info!("{}: min eig of I - WW^T {:.4}, safe {}", model.as_str(), safety.min_eigenvalue, safety.safe);
        trained.push((model, params));
    }

    let mut rows = Vec::new();
    let chain_seed = derive_seed(seed, 4);
    for (model, params) in &trained {
        let mut pick = stream(chain_seed, u64::MAX);
        let mut states: Vec<DVector<f64>> = (0..settings.chains)
            .map(|_| data[pick.random_range(0..data.len())].clone())
            .collect();
        let schedule = AnnealSchedule::constant(params.leakiness, 1).with_kernel(settings.kernel);
        for step in 1..=settings.steps {
            let chains = run_from_starts(params, &states, &schedule, derive_seed(chain_seed, step as u64))?;
            states = chains.states.into_iter().map(|s| s.v).collect();
            let total: f64 = states.iter().map(|v| v.iter().map(|x| x.abs()).sum::<f64>()).sum();
            let mean_abs_v = total / (settings.chains * settings.num_visible) as f64;
            if !mean_abs_v.is_finite() {
                log::warn!("{} chains diverged at step {step}", model.as_str());
                rows.push(DivergenceRow {
                    step,
                    mean_abs_v: f64::INFINITY,
                    model: *model,
                });
                break;
            }
            rows.push(DivergenceRow {
                step,
                mean_abs_v,
                model: *model,
            });
        }
    }
    let mut it = trained.into_iter().map(|(_, p)| p);
    Ok(DivergenceOutcome {
        rows,
        projected: it.next().unwrap(),
        unprojected: it.next().unwrap(),
    })
}

// ---------------------------------------------------------------- likelihood comparison

#[derive(Debug, Clone, PartialEq)]
pub struct LikelihoodSettings {
    pub num_visible: usize,
    pub truth_hidden: usize,
    pub truth_sigma_max: f64,
    pub leakiness: f64,
    pub model_hidden: usize,
    pub train_rows: usize,
    pub test_rows: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub cd_steps: usize,
    pub particles: usize,
    pub levels: usize,
    pub kernel: Kernel,
}

impl Default for LikelihoodSettings {
    fn default() -> Self {
        LikelihoodSettings {
            num_visible: 8,
            truth_hidden: 4,
            truth_sigma_max: 0.9,
            leakiness: 0.1,
            model_hidden: 50,
            train_rows: 2000,
            test_rows: 1000,
            epochs: 20,
            learning_rate: 0.005,
            momentum: 0.9,
            batch_size: 100,
            cd_steps: 20,
            particles: 1000,
            levels: 1000,
            kernel: Kernel::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompareRow {
    pub model: HiddenKind,
    pub loglik: f64,
    pub logz: f64,
    pub logz_stderr: f64,
}

impl CsvRow for CompareRow {
    const HEADER: &'static [&'static str] = &["model", "loglik", "logz", "logz_stderr"];

    fn record(&self) -> Vec<String> {
        let name = match self.model {
            HiddenKind::LeakyRelu => "leaky",
            HiddenKind::Bernoulli => "bernoulli-gaussian",
        };
        vec![name.to_string(), fmt(self.loglik), fmt(self.logz), fmt(self.logz_stderr)]
    }
}

#[derive(Debug, Clone)]
pub struct CompareOutcome {
    pub rows: Vec<CompareRow>,
    pub leaky: RbmParams,
    pub bernoulli: RbmParams,
    pub test: Vec<DVector<f64>>,
}

/// Training and test rows: samples of a random leaky model, or the rows of
/// `data` (already standardized) split 80/20 after a seeded shuffle.
pub fn compare_data(
    settings: &LikelihoodSettings,
    data: Option<&Dataset>,
    seed: u64,
) -> Result<(Vec<DVector<f64>>, Vec<DVector<f64>>)> {
    match data {
        None => {
            let truth = random_leaky_model(
                settings.num_visible,
                settings.truth_hidden,
                settings.truth_sigma_max,
                settings.leakiness,
                derive_seed(seed, 1),
            )?;
            Ok((
                sample_model(&truth, settings.train_rows, derive_seed(seed, 2))?,
                sample_model(&truth, settings.test_rows, derive_seed(seed, 3))?,
            ))
        }
        Some(d) => {
            use rand::seq::SliceRandom;
            let mut rows = d.rows();
            if rows.len() < 2 {
                return Err(Error::EmptyData);
            }
            rows.shuffle(&mut stream(derive_seed(seed, 1), 0));
            let cut = (rows.len() * 4 / 5).clamp(1, rows.len() - 1);
            let test = rows.split_off(cut);
            Ok((rows, test))
        }
    }
}

fn estimate_log_z(params: &RbmParams, settings: &LikelihoodSettings, seed: u64) -> Result<LogZEstimate> {
    let energy = AnnealingPath::uniform(PathKind::Energy, params.leakiness, settings.levels).with_kernel(settings.kernel);
    match params.kind {
        HiddenKind::LeakyRelu => {
            let leaky =
                AnnealingPath::uniform(PathKind::Leaky, params.leakiness, settings.levels).with_kernel(settings.kernel);
            match ais_estimate(params, &leaky, settings.particles, seed) {
                Err(Error::Divergent { .. }) => {
                    log::warn!("leaky-path base is improper (sigma_max = 1); using the energy path");
                    ais_estimate(params, &energy, settings.particles, seed)
                }
                other => other,
            }
        }
        HiddenKind::Bernoulli => {
            let est = ais_estimate(params, &energy, settings.particles, seed)?;
            if params.num_hidden() <= MAX_ENUMERATED_HIDDEN {
                let exact = exact_log_z_bernoulli(params)?;
                log::info!(
                    "bernoulli log Z: AIS {:.4} +- {:.4}, enumeration {exact:.4}",
                    est.log_z,
                    est.standard_error
                );
            }
            Ok(est)
        }
    }
}

/// Trains a leaky and a Bernoulli-Gaussian RBM with the same budget and
/// reports AIS-based mean test log-likelihoods.
pub fn likelihood_compare(settings: &LikelihoodSettings, data: Option<&Dataset>, seed: u64) -> Result<CompareOutcome> {
    let (train_rows, test_rows) = compare_data(settings, data, seed)?;
    let num_visible = train_rows[0].len();
    let mut rows = Vec::new();
    let mut models = Vec::new();
    for (k, kind) in [HiddenKind::LeakyRelu, HiddenKind::Bernoulli].into_iter().enumerate() {
        let init = init_params(num_visible, settings.model_hidden, settings.leakiness, kind, derive_seed(seed, 4))?;
        let config = TrainConfig {
            cd_steps: settings.cd_steps,
            learning_rate: settings.learning_rate,
            momentum: settings.momentum,
            batch_size: settings.batch_size,
            epochs: settings.epochs,
            neg_sampler: NegativeSampler::Cd,
            projection_enabled: kind == HiddenKind::LeakyRelu,
            kernel: settings.kernel,
            seed: derive_seed(seed, 5),
            ..TrainConfig::default()
        };
        let (params, _) = train_with(&init, &train_rows, &config, &mut ())?;
        let est = estimate_log_z(&params, settings, derive_seed(seed, 6 + k as u64))?;
        let mut total = 0.0;
        for v in &test_rows {
            total += params.log_marginal(v)?;
        }
        let loglik = total / test_rows.len() as f64 - est.log_z;
        log::info!("{}: loglik {loglik:.4}, log Z {:.4} +- {:.4}", kind.as_str(), est.log_z, est.standard_error);
        rows.push(CompareRow {
            model: kind,
            loglik,
            logz: est.log_z,
            logz_stderr: est.standard_error,
        });
        models.push(params);
    }
    let bernoulli = models.pop().unwrap();
    let leaky = models.pop().unwrap();
    Ok(CompareOutcome {
        rows,
        leaky,
        bernoulli,
        test: test_rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn orthogonal_model_has_orthogonal_columns() {
        let p = orthogonal_model(6, 3, 0.9, 0.01, 5).unwrap();
        let g = p.weights.transpose() * &p.weights;
        for a in 0..3 {
            for b in 0..3 {
                let expected = if a == b { 0.81 } else { 0.0 };
                assert!((g[(a, b)] - expected).abs() < 1e-12);
            }
        }
        assert!(orthogonal_model(2, 3, 0.9, 0.01, 5).is_err());
    }

    #[test]
    fn experiment_names_round_trip() {
        for e in Experiment::ALL {
            assert_eq!(e.as_str().parse::<Experiment>().unwrap(), e);
        }
        assert!("bogus".parse::<Experiment>().is_err());
    }

    #[test]
    fn planar_truth_hits_requested_norm() {
        let p = planar_truth(&MixingSettings::default()).unwrap();
        assert!((spectral_norm(&p.weights).unwrap() - 0.9).abs() < 1e-12);
    }

    #[test]
    fn low_rank_data_is_standardized() {
        let s = DivergenceSettings {
            rows: 500,
            ..DivergenceSettings::default()
        };
        let rows = low_rank_data(&s, 3).unwrap();
        let mean: f64 = rows.iter().map(|v| v[0]).sum::<f64>() / rows.len() as f64;
        assert!(mean.abs() < 1e-9);
    }
}
