//! Gibbs sampling, exact sampling of the `c = 1` Gaussian, and the
//! leakiness-annealing sampler with its data-initialized variant.
//!
//! A Gibbs sweep draws `h ~ p(h | v)` then `v' ~ N(W h + a, I)`. For leaky
//! units the two conditionals do not share a joint whose visible marginal is
//! `exp(-|v|^2/2 + sum_j F_c(eta_j))`: inside a single activation region the
//! sweep is an exact Gibbs kernel for that region's Gaussian, but moves that
//! change the pattern are slightly off. [`Kernel::Corrected`] treats the
//! sweep as a Metropolis-Hastings proposal. Its density is Gaussian,
//! `N(W (alpha * eta) + a, I + W diag(alpha) W^T)`, and is evaluated through
//! a `J x J` Woodbury system; moves that keep the pattern are always accepted.
//! [`Kernel::Plain`] is the bare sweep.

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::model::{leaky_slope, sigmoid, GibbsState, HiddenKind, Level, RbmParams};
use crate::parallel::map_indexed;
use crate::projection::{spectral_norm, SAFETY_TOLERANCE};
use crate::rng::{stream, StreamRng};

/// Largest singular value the exact Gaussian sampler will factorize; weights
/// closer to the boundary are shrunk to this for the draw.
pub const BASE_SHRINK_LIMIT: f64 = 1.0 - 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Kernel {
    /// Sweep followed by a Metropolis-Hastings accept step.
    #[default]
    Corrected,
    /// Bare conditional sweep.
    Plain,
}

impl std::str::FromStr for Kernel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "corrected" | "exact" | "mh" => Ok(Kernel::Corrected),
            "plain" | "gibbs" => Ok(Kernel::Plain),
            other => Err(Error::InvalidParameter(format!("unknown kernel `{other}`"))),
        }
    }
}

impl Kernel {
    pub fn as_str(self) -> &'static str {
        match self {
            Kernel::Corrected => "corrected",
            Kernel::Plain => "plain",
        }
    }
}

fn standard_normal_vector<R: Rng + ?Sized>(n: usize, rng: &mut R) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.sample(StandardNormal))
}

/// Exact sampler for the `c = 1` model, `N(Omega^{-1} (a + W b), Omega^{-1})`
/// with `Omega = I - W W^T`.
#[derive(Debug, Clone)]
pub struct GaussianBase {
    mean: DVector<f64>,
    precision_chol: Cholesky<f64, nalgebra::Dyn>,
    log_z: f64,
    shrink: f64,
}

impl GaussianBase {
    pub fn new(params: &RbmParams) -> Result<Self> {
        if params.kind != HiddenKind::LeakyRelu {
            return Err(Error::InvalidParameter(
                "the Gaussian base exists only for leaky hidden units".into(),
            ));
        }
        let sigma = spectral_norm(&params.weights)?;
        let min_eig = 1.0 - sigma * sigma;
        if min_eig < -SAFETY_TOLERANCE {
            return Err(Error::NonPositiveDefinite {
                min_eigenvalue: min_eig,
            });
        }
        let shrink = if sigma > BASE_SHRINK_LIMIT {
            BASE_SHRINK_LIMIT / sigma
        } else {
            1.0
        };
        let w = &params.weights * shrink;
        let n = params.num_visible();
        let mut omega = DMatrix::identity(n, n);
        omega.gemm(-1.0, &w, &w.transpose(), 1.0);
        let chol = omega.cholesky().ok_or(Error::NonPositiveDefinite {
            min_eigenvalue: min_eig,
        })?;
        let mut rhs = params.visible_bias.clone();
        rhs.gemv(1.0, &w, &params.hidden_bias, 1.0);
        let mean = chol.solve(&rhs);
        let log_det: f64 = chol.l_dirty().diagonal().iter().map(|d| 2.0 * d.ln()).sum();
        let log_z = 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln() - 0.5 * log_det
            + 0.5 * rhs.dot(&mean)
            + 0.5 * params.hidden_bias.norm_squared();
        Ok(GaussianBase {
            mean,
            precision_chol: chol,
            log_z,
            shrink,
        })
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    /// Covariance `Omega^{-1}`.
    pub fn covariance(&self) -> DMatrix<f64> {
        self.precision_chol.inverse()
    }

    /// Log normalizer of the unnormalized `c = 1` marginal.
    pub fn log_z(&self) -> f64 {
        self.log_z
    }

    /// Factor applied to `W` before factorizing (1 unless near the boundary).
    pub fn shrink(&self) -> f64 {
        self.shrink
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        let z = standard_normal_vector(self.mean.len(), rng);
        // v = mu + L^{-T} z has covariance (L L^T)^{-1}.
        let x = self
            .precision_chol
            .l_dirty()
            .tr_solve_lower_triangular(&z)
            .expect("Cholesky factor has a positive diagonal");
        &self.mean + x
    }
}

/// `n` i.i.d. draws from the exact `c = 1` Gaussian; draw `k` uses stream `k`.
pub fn sample_gaussian_base(params: &RbmParams, n: usize, seed: u64) -> Result<Vec<DVector<f64>>> {
    let base = GaussianBase::new(params)?;
    Ok(map_indexed(n, |k| base.sample(&mut stream(seed, k as u64))))
}

/// One sweep of the chosen kernel for a fixed model. Keeps `W^T W` around
/// for the Metropolis-Hastings correction.
#[derive(Debug, Clone)]
pub struct Gibbs<'a> {
    params: &'a RbmParams,
    gram: DMatrix<f64>,
    kernel: Kernel,
}

impl<'a> Gibbs<'a> {
    pub fn new(params: &'a RbmParams, kernel: Kernel) -> Self {
        let gram = params.weights.transpose() * &params.weights;
        Gibbs { params, gram, kernel }
    }

    pub fn params(&self) -> &RbmParams {
        self.params
    }

    pub fn kernel(&self) -> Kernel {
        self.kernel
    }

    /// Updates `state` in place; returns whether the proposed visible vector
    /// was kept (always true for the plain kernel and Bernoulli units).
    pub fn sweep<R: Rng + ?Sized>(&self, level: Level, state: &mut GibbsState, rng: &mut R) -> bool {
        let p = self.params;
        let s = level.scale;
        let raw = p.response_unchecked(&state.v);
        let eta = &raw * s;
        let h = match p.kind {
            HiddenKind::LeakyRelu => eta.map(|e| {
                let alpha = leaky_slope(e, level.leakiness);
                let z: f64 = rng.sample(StandardNormal);
                alpha * e + alpha.sqrt() * z
            }),
            HiddenKind::Bernoulli => eta.map(|e| {
                if rng.random::<f64>() < sigmoid(e) {
                    1.0
                } else {
                    0.0
                }
            }),
        };
        let mut proposal = &p.visible_bias * level.bias_scale;
        proposal.gemv(s, &p.weights, &h, 1.0);
        proposal += standard_normal_vector(proposal.len(), rng);

        let accept = match (self.kernel, p.kind) {
            (Kernel::Corrected, HiddenKind::LeakyRelu) => {
                let raw_new = p.response_unchecked(&proposal);
                let eta_new = &raw_new * s;
                let alpha = eta.map(|e| leaky_slope(e, level.leakiness));
                let alpha_new = eta_new.map(|e| leaky_slope(e, level.leakiness));
                if alpha == alpha_new {
                    true
                } else {
                    let log_target_new = p.log_density_from_response(level, &proposal, &raw_new);
                    let log_target_old = p.log_density_from_response(level, &state.v, &raw);
                    let forward = self.log_proposal(level, &alpha, &eta, &proposal);
                    let backward = self.log_proposal(level, &alpha_new, &eta_new, &state.v);
                    let log_ratio = log_target_new - log_target_old + backward - forward;
                    let u: f64 = rng.random();
                    u.ln() < log_ratio
                }
            }
            _ => true,
        };
        state.h = h;
        if accept {
            state.v = proposal;
        }
        accept
    }

    /// Log density (up to a shared constant) of landing on `target` from a
    /// point with scaled response `eta` and slopes `alpha`:
    /// `N(s W (alpha * eta) + a', I + s^2 W diag(alpha) W^T)` with `a'` the
    /// level's visible bias.
    fn log_proposal(&self, level: Level, alpha: &DVector<f64>, eta: &DVector<f64>, target: &DVector<f64>) -> f64 {
        let p = self.params;
        let s = level.scale;
        let mut mean = &p.visible_bias * level.bias_scale;
        mean.gemv(s, &p.weights, &alpha.component_mul(eta), 1.0);
        let r = target - mean;
        let u = p.weights.tr_mul(&r) * s;
        let mut m = &self.gram * (s * s);
        for j in 0..alpha.len() {
            m[(j, j)] += 1.0 / alpha[j];
        }
        match m.cholesky() {
            Some(chol) => {
                let y = chol.solve(&u);
                let quad = r.norm_squared() - u.dot(&y);
                let log_det: f64 = alpha.iter().map(|a| a.ln()).sum::<f64>()
                    + chol.l_dirty().diagonal().iter().map(|d| 2.0 * d.ln()).sum::<f64>();
                -0.5 * quad - 0.5 * log_det
            }
            None => f64::NEG_INFINITY,
        }
    }
}

/// One sweep at the model's own leakiness using the corrected kernel.
pub fn gibbs_step<R: Rng + ?Sized>(params: &RbmParams, state: &GibbsState, rng: &mut R) -> Result<GibbsState> {
    gibbs_step_with(params, state, rng, Kernel::Corrected)
}

pub fn gibbs_step_with<R: Rng + ?Sized>(
    params: &RbmParams,
    state: &GibbsState,
    rng: &mut R,
    kernel: Kernel,
) -> Result<GibbsState> {
    if state.v.len() != params.num_visible() {
        return Err(Error::DimensionMismatch {
            what: "visible vector",
            expected: params.num_visible(),
            found: state.v.len(),
        });
    }
    let mut next = state.clone();
    Gibbs::new(params, kernel).sweep(Level::target(params), &mut next, rng);
    Ok(next)
}

/// Leakiness schedule: start at `c_start`, step down by `epsilon` per step
/// until `c_target`, then hold.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnnealSchedule {
    pub c_start: f64,
    pub c_target: f64,
    pub epsilon: f64,
    pub total_steps: usize,
    pub sweeps_per_level: usize,
    pub kernel: Kernel,
}

impl AnnealSchedule {
    /// From `c = 1` to `c_target` over the first 90% of `total_steps`.
    pub fn new(c_target: f64, total_steps: usize) -> Self {
        let ramp = (0.9 * total_steps as f64).max(1.0);
        let epsilon = if c_target < 1.0 {
            (1.0 - c_target) / ramp
        } else {
            1.0
        };
        AnnealSchedule {
            c_start: 1.0,
            c_target,
            epsilon,
            total_steps,
            sweeps_per_level: 1,
            kernel: Kernel::default(),
        }
    }

    /// Constant leakiness for every step (plain Gibbs at the target).
    pub fn constant(c: f64, total_steps: usize) -> Self {
        AnnealSchedule {
            c_start: c,
            c_target: c,
            epsilon: 1.0,
            total_steps,
            sweeps_per_level: 1,
            kernel: Kernel::default(),
        }
    }

    pub fn with_epsilon(mut self, epsilon: f64) -> Self {
        self.epsilon = epsilon;
        self
    }

    pub fn with_kernel(mut self, kernel: Kernel) -> Self {
        self.kernel = kernel;
        self
    }

    pub fn with_sweeps_per_level(mut self, sweeps: usize) -> Self {
        self.sweeps_per_level = sweeps;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.c_target > 0.0
            && self.c_target <= self.c_start
            && self.c_start <= 1.0
            && self.epsilon > 0.0
            && self.sweeps_per_level >= 1;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!("invalid anneal schedule {self:?}")))
        }
    }

    /// Leakiness used at step `t` (1-based); `t = 0` gives `c_start`.
    pub fn leakiness_at(&self, t: usize) -> f64 {
        let c = self.c_start - t as f64 * self.epsilon;
        if c <= self.c_target + 1e-12 {
            self.c_target
        } else {
            c
        }
    }

    /// First step at which the target leakiness is in use.
    pub fn steps_to_target(&self) -> usize {
        ((self.c_start - self.c_target) / self.epsilon - 1e-9).ceil().max(0.0) as usize
    }
}

#[derive(Debug, Clone)]
pub struct ChainSet {
    pub states: Vec<GibbsState>,
    pub rng_seed: u64,
    pub step_count: usize,
    /// Fraction of proposals kept across all chains and sweeps.
    pub acceptance_rate: f64,
}

impl ChainSet {
    pub fn visible(&self) -> impl Iterator<Item = &DVector<f64>> {
        self.states.iter().map(|s| &s.v)
    }
}

/// Passed to an observer before the sweeps of each annealing step.
#[derive(Debug)]
pub struct LevelEvent<'s> {
    pub chain: usize,
    pub step: usize,
    pub previous_leakiness: f64,
    pub leakiness: f64,
    pub state: &'s GibbsState,
}

struct ChainRun<S> {
    state: GibbsState,
    accepted: usize,
    extra: S,
}

fn run_chain<S, F>(
    gibbs: &Gibbs<'_>,
    schedule: &AnnealSchedule,
    chain: usize,
    mut state: GibbsState,
    rng: &mut StreamRng,
    mut extra: S,
    observe: &F,
) -> ChainRun<S>
where
    F: Fn(&mut S, &LevelEvent<'_>),
{
    let mut accepted = 0;
    let mut previous = schedule.leakiness_at(0);
    for step in 1..=schedule.total_steps {
        let leakiness = schedule.leakiness_at(step);
        observe(
            &mut extra,
            &LevelEvent {
                chain,
                step,
                previous_leakiness: previous,
                leakiness,
                state: &state,
            },
        );
        for _ in 0..schedule.sweeps_per_level {
            if gibbs.sweep(Level::with_leakiness(leakiness), &mut state, rng) {
                accepted += 1;
            }
        }
        previous = leakiness;
    }
    ChainRun { state, accepted, extra }
}

fn collect_runs<S>(runs: Vec<ChainRun<S>>, schedule: &AnnealSchedule, seed: u64) -> (ChainSet, Vec<S>) {
    let sweeps = runs.len() * schedule.total_steps * schedule.sweeps_per_level;
    let accepted: usize = runs.iter().map(|r| r.accepted).sum();
    let mut states = Vec::with_capacity(runs.len());
    let mut extras = Vec::with_capacity(runs.len());
    for r in runs {
        states.push(r.state);
        extras.push(r.extra);
    }
    let chains = ChainSet {
        states,
        rng_seed: seed,
        step_count: schedule.total_steps,
        acceptance_rate: if sweeps == 0 { 1.0 } else { accepted as f64 / sweeps as f64 },
    };
    (chains, extras)
}

/// Leakiness annealing: draw from the exact `c = 1` Gaussian, then for each
/// step lower the leakiness and run the sweeps at the new value.
pub fn anneal_leakiness_sample(
    params: &RbmParams,
    schedule: &AnnealSchedule,
    n_chains: usize,
    seed: u64,
) -> Result<ChainSet> {
    let (chains, _) = anneal_leakiness_sample_observed(params, schedule, n_chains, seed, |_| (), |_, _| {})?;
    Ok(chains)
}

/// [`anneal_leakiness_sample`] with a per-chain accumulator. `observe` sees
/// every chain's state right before the sweeps of each step, together with
/// the leakiness before and after the decrement.
pub fn anneal_leakiness_sample_observed<S, I, F>(
    params: &RbmParams,
    schedule: &AnnealSchedule,
    n_chains: usize,
    seed: u64,
    init: I,
    observe: F,
) -> Result<(ChainSet, Vec<S>)>
where
    S: Send,
    I: Fn(usize) -> S + Sync + Send,
    F: Fn(&mut S, &LevelEvent<'_>) + Sync + Send,
{
    schedule.validate()?;
    let base = GaussianBase::new(params)?;
    anneal_from_base(params, &base, schedule, n_chains, seed, init, observe)
}

/// Same as [`anneal_leakiness_sample_observed`] with a prebuilt base, so the
/// factorization can be shared while `W` is unchanged.
pub fn anneal_from_base<S, I, F>(
    params: &RbmParams,
    base: &GaussianBase,
    schedule: &AnnealSchedule,
    n_chains: usize,
    seed: u64,
    init: I,
    observe: F,
) -> Result<(ChainSet, Vec<S>)>
where
    S: Send,
    I: Fn(usize) -> S + Sync + Send,
    F: Fn(&mut S, &LevelEvent<'_>) + Sync + Send,
{
    schedule.validate()?;
    let gibbs = Gibbs::new(params, schedule.kernel);
    let j = params.num_hidden();
    let runs = map_indexed(n_chains, |k| {
        let mut rng = stream(seed, k as u64);
        let state = GibbsState::from_visible(base.sample(&mut rng), j);
        run_chain(&gibbs, schedule, k, state, &mut rng, init(k), &observe)
    });
    Ok(collect_runs(runs, schedule, seed))
}

/// Chains started from the given visible vectors (chain `k` from
/// `starts[k]`) and run through `schedule`. With a constant schedule this is
/// the contrastive-divergence negative phase.
pub fn run_from_starts(
    params: &RbmParams,
    starts: &[DVector<f64>],
    schedule: &AnnealSchedule,
    seed: u64,
) -> Result<ChainSet> {
    schedule.validate()?;
    let gibbs = Gibbs::new(params, schedule.kernel);
    let j = params.num_hidden();
    let runs = map_indexed(starts.len(), |k| {
        let mut rng = stream(seed, k as u64);
        let state = GibbsState::from_visible(starts[k].clone(), j);
        run_chain(&gibbs, schedule, k, state, &mut rng, (), &|_: &mut (), _: &LevelEvent<'_>| {})
    });
    Ok(collect_runs(runs, schedule, seed).0)
}

/// Leakiness annealing started from the empirical distribution: each chain
/// begins at a row drawn uniformly with replacement from `data`.
pub fn mix_sample(
    params: &RbmParams,
    data: &[DVector<f64>],
    schedule: &AnnealSchedule,
    n_chains: usize,
    seed: u64,
) -> Result<ChainSet> {
    if data.is_empty() {
        return Err(Error::EmptyData);
    }
    schedule.validate()?;
    let gibbs = Gibbs::new(params, schedule.kernel);
    let j = params.num_hidden();
    let runs = map_indexed(n_chains, |k| {
        let mut rng = stream(seed, k as u64);
        let row = rng.random_range(0..data.len());
        let state = GibbsState::from_visible(data[row].clone(), j);
        run_chain(&gibbs, schedule, k, state, &mut rng, (), &|_: &mut (), _: &LevelEvent<'_>| {})
    });
    Ok(collect_runs(runs, schedule, seed).0)
}
