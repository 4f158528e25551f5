use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use nalgebra::{DMatrix, DVector};

use leaky_rbm::config::{ConfigMap, OTHER_KEYS, TRAIN_KEYS};
use leaky_rbm::data::{ingest, matrix_from_rows, write_matrix, DataFormat, Dataset, Normalization};
use leaky_rbm::experiments::{
    divergence, likelihood_compare, mixing, partition_bias, write_csv, DivergenceSettings, Experiment,
    LikelihoodSettings, MixingSettings, PartitionBiasSettings,
};
use leaky_rbm::model_file::{ModelFile, Provenance};
use leaky_rbm::partition::{ais_estimate, eval_mean_log_likelihood, AnnealingPath, LogZEstimate, PathKind};
use leaky_rbm::rng::derive_seed;
use leaky_rbm::sampler::{anneal_leakiness_sample, run_from_starts, AnnealSchedule, Kernel};
use leaky_rbm::training::{init_params, train, TrainConfig};
use leaky_rbm::{parallel, Error, HiddenKind, Result};

/// Leaky-ReLU RBM toolkit: training, sampling, partition functions and
/// canned experiments.
#[derive(Debug, Parser)]
#[command(name = "lrbm", version)]
struct Cli {
    /// Root seed for every random stream.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Flat `key = value` settings file; flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Record wall-clock seconds in experiment output.
    #[arg(long, global = true)]
    timings: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train a model on a dataset and write `model.rbm`.
    Train(TrainArgs),
    /// Draw samples from a model and write `samples.csv`.
    Sample(SampleArgs),
    /// Estimate log Z by annealed importance sampling.
    EstimateZ(EstimateArgs),
    /// Mean log-likelihood of a dataset.
    EvalLl(EvalArgs),
    /// Run a canned experiment and write `<name>.csv`.
    Experiment(ExperimentArgs),
}

#[derive(Debug, Args)]
struct DataArgs {
    /// Dataset file (raw-f32 or CSV).
    #[arg(long)]
    data: PathBuf,
    /// `raw-f32` or `csv`; guessed from the extension when omitted.
    #[arg(long)]
    format: Option<DataFormat>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    leakiness: Option<f64>,
    /// `leaky` or `bernoulli`.
    #[arg(long)]
    kind: Option<HiddenKind>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    cd_steps: Option<usize>,
    /// `cd`, `leaky` or `mix`.
    #[arg(long)]
    neg_sampler: Option<String>,
}

#[derive(Debug, Args)]
struct SampleArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    chains: Option<usize>,
    #[arg(long)]
    steps: Option<usize>,
    /// `leaky` (annealed from the c = 1 Gaussian) or `gibbs` (from zero).
    #[arg(long)]
    sampler: Option<String>,
}

#[derive(Debug, Args)]
struct PathArgs {
    /// `energy`, `leaky` or `one-sided`.
    #[arg(long)]
    path: Option<PathKind>,
    #[arg(long)]
    levels: Option<usize>,
    #[arg(long)]
    particles: Option<usize>,
}

#[derive(Debug, Args)]
struct EstimateArgs {
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    path: PathArgs,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    data: DataArgs,
    /// Column statistics to apply instead of fitting new ones.
    #[arg(long)]
    normalization: Option<PathBuf>,
    /// Known log Z; estimated by AIS when omitted.
    #[arg(long, allow_hyphen_values = true)]
    log_z: Option<f64>,
    #[command(flatten)]
    path: PathArgs,
}

#[derive(Debug, Args)]
struct ExperimentArgs {
    /// partition-bias, mixing, divergence or likelihood-compare.
    name: Experiment,
    /// Dataset for likelihood-compare (synthetic when omitted).
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    format: Option<DataFormat>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numerical() { 2 } else { 1 })
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        if !parallel::set_threads(n) {
            log::warn!("could not resize the worker pool");
        }
    }
    let mut config = match &cli.config {
        Some(path) => ConfigMap::load(path)?,
        None => ConfigMap::default(),
    };
    config.check_known(&[TRAIN_KEYS, OTHER_KEYS])?;
    std::fs::create_dir_all(&cli.out).map_err(|e| Error::Io {
        path: cli.out.clone(),
        source: e,
    })?;
    match &cli.command {
        Command::Train(a) => cmd_train(&cli, &mut config, a),
        Command::Sample(a) => cmd_sample(&cli, &mut config, a),
        Command::EstimateZ(a) => cmd_estimate(&cli, &mut config, a),
        Command::EvalLl(a) => cmd_eval(&cli, &mut config, a),
        Command::Experiment(a) => cmd_experiment(&cli, &mut config, a),
    }
}

fn set<T: ToString>(config: &mut ConfigMap, key: &str, value: &Option<T>) {
    if let Some(v) = value {
        config.set(key, v.to_string());
    }
}

fn kernel(config: &ConfigMap) -> Result<Kernel> {
    config.get_or("kernel", Kernel::default())
}

fn load_data(args: &DataArgs, normalization: Option<&Path>) -> Result<Dataset> {
    let format = args.format.unwrap_or_else(|| DataFormat::from_path(&args.data));
    match normalization {
        None => ingest(&args.data, format),
        Some(path) => {
            let raw = leaky_rbm::data::read_matrix(&args.data, format)?;
            Dataset::with_normalization(raw, Normalization::load(path)?)
        }
    }
}

fn cmd_train(cli: &Cli, config: &mut ConfigMap, a: &TrainArgs) -> Result<()> {
    set(config, "hidden", &a.hidden);
    set(config, "leakiness", &a.leakiness);
    set(config, "kind", &a.kind.map(|k| k.as_str()));
    set(config, "epochs", &a.epochs);
    set(config, "learning_rate", &a.learning_rate);
    set(config, "cd_steps", &a.cd_steps);
    set(config, "neg_sampler", &a.neg_sampler);
    let data = load_data(&a.data, None)?;
    let kind: HiddenKind = config.get_or("kind", HiddenKind::LeakyRelu)?;
    let hidden: usize = config.get_or("hidden", 16)?;
    let leakiness: f64 = config.get_or("leakiness", 0.1)?;
    let mut train_config = config.train_config(TrainConfig {
        seed: cli.seed,
        ..TrainConfig::default()
    })?;
    if kind == HiddenKind::Bernoulli && !config.contains("projection") {
        train_config.projection_enabled = false;
    }
    let init = init_params(data.num_columns(), hidden, leakiness, kind, derive_seed(cli.seed, 0))?;
    let (params, log) = train(&init, &data.rows(), &train_config)?;

    let provenance = Provenance {
        config_hash: config.hash(),
        seed: cli.seed,
        epoch: log.epochs.len() as u64,
    };
    let model_path = cli.out.join("model.rbm");
    ModelFile::new(params, provenance).save(&model_path)?;
    data.normalization.save(&cli.out.join("normalization.csv"))?;
    let log_path = cli.out.join("training.csv");
    let mut w = csv_writer(&log_path)?;
    w.write_record(["epoch", "reconstruction_error", "sigma_max", "learning_rate"])?;
    for r in &log.epochs {
        w.write_record([
            r.epoch.to_string(),
            r.reconstruction_error.to_string(),
            r.sigma_max.to_string(),
            r.learning_rate.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::Io {
        path: log_path,
        source: e,
    })?;
    println!("wrote {}", model_path.display());
    Ok(())
}

fn cmd_sample(cli: &Cli, config: &mut ConfigMap, a: &SampleArgs) -> Result<()> {
    set(config, "chains", &a.chains);
    set(config, "steps", &a.steps);
    set(config, "sampler", &a.sampler);
    let model = ModelFile::load(&a.model)?;
    let p = &model.params;
    let chains: usize = config.get_or("chains", 100)?;
    let steps: usize = config.get_or("steps", 1000)?;
    let sampler: String = config.get_or("sampler", "leaky".to_string())?;
    let kernel = kernel(config)?;
    let set = match (sampler.as_str(), p.kind) {
        ("leaky", HiddenKind::LeakyRelu) => {
            let schedule = AnnealSchedule::new(p.leakiness, steps).with_kernel(kernel);
            anneal_leakiness_sample(p, &schedule, chains, cli.seed)?
        }
        ("gibbs", _) | ("leaky", HiddenKind::Bernoulli) => {
            let starts = vec![DVector::zeros(p.num_visible()); chains];
            let schedule = AnnealSchedule::constant(p.leakiness, steps).with_kernel(kernel);
            run_from_starts(p, &starts, &schedule, cli.seed)?
        }
        (other, _) => return Err(Error::InvalidParameter(format!("unknown sampler `{other}`"))),
    };
    let rows: Vec<DVector<f64>> = set.states.into_iter().map(|s| s.v).collect();
    if rows.iter().any(|v| v.iter().any(|x| !x.is_finite())) {
        return Err(Error::NonFinite("sampled visible units".into()));
    }
    let path = cli.out.join("samples.csv");
    let m = if rows.is_empty() {
        DMatrix::zeros(0, p.num_visible())
    } else {
        matrix_from_rows(&rows)
    };
    write_matrix(&path, &m, DataFormat::Csv)?;
    println!("wrote {} samples to {} (acceptance {:.3})", rows.len(), path.display(), set.acceptance_rate);
    Ok(())
}

fn estimate(cli: &Cli, config: &mut ConfigMap, a: &PathArgs, params: &leaky_rbm::RbmParams) -> Result<(PathKind, usize, usize, LogZEstimate)> {
    set(config, "path", &a.path.map(|k| k.as_str()));
    set(config, "levels", &a.levels);
    set(config, "particles", &a.particles);
    let default_path = match params.kind {
        HiddenKind::LeakyRelu => PathKind::Leaky,
        HiddenKind::Bernoulli => PathKind::Energy,
    };
    let kind: PathKind = config.get_or("path", default_path)?;
    let levels: usize = config.get_or("levels", 1000)?;
    let particles: usize = config.get_or("particles", 1000)?;
    let path = AnnealingPath::uniform(kind, params.leakiness, levels)
        .with_kernel(kernel(config)?)
        .with_sweeps_per_level(config.get_or("path.sweeps_per_level", 1)?);
    let est = ais_estimate(params, &path, particles, cli.seed)?;
    Ok((kind, levels, particles, est))
}

fn cmd_estimate(cli: &Cli, config: &mut ConfigMap, a: &EstimateArgs) -> Result<()> {
    let model = ModelFile::load(&a.model)?;
    let (kind, levels, particles, est) = estimate(cli, config, &a.path, &model.params)?;
    println!("log Z = {} +- {}", est.log_z, est.standard_error);
    let path = cli.out.join("logz.csv");
    let mut w = csv_writer(&path)?;
    w.write_record(["path", "levels", "particles", "log_z", "stderr", "ess", "dropped"])?;
    w.write_record([
        kind.as_str().to_string(),
        levels.to_string(),
        particles.to_string(),
        est.log_z.to_string(),
        est.standard_error.to_string(),
        est.effective_sample_size.to_string(),
        est.dropped.to_string(),
    ])?;
    w.flush().map_err(|e| Error::Io { path, source: e })
}

fn cmd_eval(cli: &Cli, config: &mut ConfigMap, a: &EvalArgs) -> Result<()> {
    let model = ModelFile::load(&a.model)?;
    let data = load_data(&a.data, a.normalization.as_deref())?;
    let (log_z, stderr) = match a.log_z {
        Some(z) => (z, 0.0),
        None => {
            let (_, _, _, est) = estimate(cli, config, &a.path, &model.params)?;
            (est.log_z, est.standard_error)
        }
    };
    let ll = eval_mean_log_likelihood(&model.params, &data.rows(), log_z)?;
    println!("mean log-likelihood = {ll} (log Z = {log_z} +- {stderr})");
    let path = cli.out.join("eval.csv");
    let mut w = csv_writer(&path)?;
    w.write_record(["loglik", "logz", "logz_stderr"])?;
    w.write_record([ll.to_string(), log_z.to_string(), stderr.to_string()])?;
    w.flush().map_err(|e| Error::Io { path, source: e })
}

fn cmd_experiment(cli: &Cli, config: &mut ConfigMap, a: &ExperimentArgs) -> Result<()> {
    let path = cli.out.join(format!("{}.csv", a.name.as_str()));
    match a.name {
        Experiment::PartitionBias => {
            let d = PartitionBiasSettings::default();
            let s = PartitionBiasSettings {
                particles: config.get_or("particles", d.particles)?,
                levels: config.get_or("levels", d.levels)?,
                repeats: config.get_or("repeats", d.repeats)?,
                kernel: kernel(config)?,
                timings: cli.timings,
                ..d
            };
            write_csv(&path, &partition_bias(&s, cli.seed)?)?;
        }
        Experiment::Mixing => {
            let d = MixingSettings::default();
            let s = MixingSettings {
                epochs: config.get_or("epochs", d.epochs)?,
                steps: config.get_or("cd_steps", d.steps)?,
                learning_rate: config.get_or("learning_rate", d.learning_rate)?,
                kernel: kernel(config)?,
                ..d
            };
            write_csv(&path, &mixing(&s, cli.seed)?)?;
        }
        Experiment::Divergence => {
            let d = DivergenceSettings::default();
            let s = DivergenceSettings {
                epochs: config.get_or("epochs", d.epochs)?,
                max_epochs: config.get_or("max_epochs", d.max_epochs)?,
                chains: config.get_or("chains", d.chains)?,
                steps: config.get_or("steps", d.steps)?,
                kernel: kernel(config)?,
                ..d
            };
            write_csv(&path, &divergence(&s, cli.seed)?.rows)?;
        }
        Experiment::LikelihoodCompare => {
            let d = LikelihoodSettings::default();
            let s = LikelihoodSettings {
                epochs: config.get_or("epochs", d.epochs)?,
                model_hidden: config.get_or("hidden", d.model_hidden)?,
                particles: config.get_or("particles", d.particles)?,
                levels: config.get_or("levels", d.levels)?,
                cd_steps: config.get_or("cd_steps", d.cd_steps)?,
                learning_rate: config.get_or("learning_rate", d.learning_rate)?,
                kernel: kernel(config)?,
                ..d
            };
            let data = match &a.data {
                Some(p) => Some(ingest(p, a.format.unwrap_or_else(|| DataFormat::from_path(p)))?),
                None => None,
            };
            write_csv(&path, &likelihood_compare(&s, data.as_ref(), cli.seed)?.rows)?;
        }
    }
    println!("wrote {}", path.display());
    Ok(())
}

fn csv_writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    let file = std::fs::File::create(path).map_err(|e| Error::Io { path: path.to_path_buf(), source: e })?;
    Ok(csv::Writer::from_writer(file))
}
