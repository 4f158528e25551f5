//! Partition functions: exact oracles (the `c = 1` Gaussian, orthogonal
//! columns with zero biases, enumerated Bernoulli units, and brute-force
//! quadrature for one or two visible units) and annealed importance sampling
//! along three paths.
//!
//! Paths, each a grid of values from the base end to the target end:
//!
//! * `Energy`: `beta` from 1 to 0, density
//!   `-|v|^2/2 + (1 - beta) (a^T v + sum_j F_c(eta_j))` (leaky) or
//!   `-|v|^2/2 + (1 - beta) a^T v + sum_j softplus((1 - beta) eta_j)`
//!   (Bernoulli). The base is the standard normal.
//! * `Leaky`: leakiness from 1 to the model's `c`; the base is the exact
//!   `c = 1` Gaussian.
//! * `OneSided`: `beta` from 1 to 0, the geometric mixture
//!   `beta log p_1 + (1 - beta) log p_c`, which is the leaky marginal at
//!   `beta + (1 - beta) c`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::model::{leaky_potential, min_symmetric_eigenvalue, ActivationPattern, GibbsState, HiddenKind, Level, RbmParams, PD_TOLERANCE};
use crate::parallel::map_indexed;
use crate::projection::is_globally_safe;
use crate::rng::stream;
use crate::sampler::{GaussianBase, Gibbs, Kernel};
use crate::stats::{effective_sample_size, log_mean_exp, log_sum_exp};

const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// Largest hidden layer the enumeration oracles accept.
pub const MAX_ENUMERATED_HIDDEN: usize = 25;

/// Column inner products allowed by [`exact_log_z_orthogonal`].
pub const ORTHOGONALITY_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PathKind {
    Energy,
    Leaky,
    OneSided,
}

impl PathKind {
    pub fn as_str(self) -> &'static str {
        match self {
            PathKind::Energy => "energy",
            PathKind::Leaky => "leaky",
            PathKind::OneSided => "one-sided",
        }
    }
}

impl std::str::FromStr for PathKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "energy" => Ok(PathKind::Energy),
            "leaky" => Ok(PathKind::Leaky),
            "one-sided" | "onesided" | "one_sided" => Ok(PathKind::OneSided),
            other => Err(Error::InvalidParameter(format!("unknown annealing path `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnnealingPath {
    pub kind: PathKind,
    /// `beta` for energy and one-sided paths, leakiness for the leaky path.
    pub grid: Vec<f64>,
    pub sweeps_per_level: usize,
    pub kernel: Kernel,
}

impl AnnealingPath {
    /// `levels` uniform steps from the base end to the target end. A leaky
    /// path towards `c = 1` is the constant grid.
    pub fn uniform(kind: PathKind, target_leakiness: f64, levels: usize) -> Self {
        let levels = levels.max(1);
        let (start, end) = match kind {
            PathKind::Energy | PathKind::OneSided => (1.0, 0.0),
            PathKind::Leaky => (1.0, target_leakiness),
        };
        let grid = (0..=levels)
            .map(|k| {
                if k == levels {
                    end
                } else {
                    start + (end - start) * k as f64 / levels as f64
                }
            })
            .collect();
        AnnealingPath {
            kind,
            grid,
            sweeps_per_level: 1,
            kernel: Kernel::default(),
        }
    }

    pub fn with_kernel(mut self, kernel: Kernel) -> Self {
        self.kernel = kernel;
        self
    }

    pub fn with_sweeps_per_level(mut self, sweeps: usize) -> Self {
        self.sweeps_per_level = sweeps;
        self
    }

    pub fn levels(&self) -> usize {
        self.grid.len().saturating_sub(1)
    }

    pub fn validate(&self, params: &RbmParams) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParameter(msg));
        if self.grid.len() < 2 {
            return bad("annealing grid needs at least two points".into());
        }
        if self.sweeps_per_level == 0 {
            return bad("sweeps_per_level must be at least 1".into());
        }
        if self.kind != PathKind::Energy && params.kind != HiddenKind::LeakyRelu {
            return bad(format!("{} path needs leaky hidden units", self.kind.as_str()));
        }
        let (start, end) = match self.kind {
            PathKind::Energy | PathKind::OneSided => (1.0, 0.0),
            PathKind::Leaky => (1.0, params.leakiness),
        };
        let first = self.grid[0];
        let last = *self.grid.last().unwrap();
        if (first - start).abs() > 1e-12 || (last - end).abs() > 1e-12 {
            return bad(format!(
                "{} path must run from {start} to {end}, grid runs from {first} to {last}",
                self.kind.as_str()
            ));
        }
        let constant = start == end && self.grid.iter().all(|&g| g == start);
        let decreasing = self.grid.windows(2).all(|w| w[1] < w[0]);
        if !(constant || decreasing) {
            return bad("annealing grid must be strictly decreasing".into());
        }
        Ok(())
    }

    /// The rescaled model whose marginal is this path's density at `value`.
    pub fn level(&self, value: f64, params: &RbmParams) -> Level {
        match self.kind {
            PathKind::Energy => {
                let t = 1.0 - value;
                let scale = match params.kind {
                    HiddenKind::LeakyRelu => t.max(0.0).sqrt(),
                    HiddenKind::Bernoulli => t,
                };
                Level {
                    scale,
                    bias_scale: t,
                    leakiness: params.leakiness,
                }
            }
            PathKind::Leaky => Level::with_leakiness(value),
            PathKind::OneSided => Level::with_leakiness(value + (1.0 - value) * params.leakiness),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogZEstimate {
    pub log_z: f64,
    /// Finite per-particle log-weights.
    pub log_weights: Vec<f64>,
    pub log_z0: f64,
    /// Delta-method standard error of `log_z`.
    pub standard_error: f64,
    pub effective_sample_size: f64,
    /// Particles whose weight came out non-finite and were left out.
    pub dropped: usize,
    pub acceptance_rate: f64,
}

/// Unnormalized log density of the intermediate distribution at grid value
/// `level` of a path of the given kind.
pub fn intermediate_log_density(kind: PathKind, level: f64, params: &RbmParams, v: &DVector<f64>) -> f64 {
    let eta = params.response_unchecked(v);
    path_density(kind, level, params, v, &eta)
}

fn path_density(kind: PathKind, value: f64, params: &RbmParams, v: &DVector<f64>, eta: &DVector<f64>) -> f64 {
    match kind {
        PathKind::Energy => {
            let t = 1.0 - value;
            let gaussian = -0.5 * v.norm_squared();
            match params.kind {
                HiddenKind::LeakyRelu => {
                    let hidden: f64 = eta.iter().map(|&e| leaky_potential(e, params.leakiness)).sum();
                    gaussian + t * (params.visible_bias.dot(v) + hidden)
                }
                HiddenKind::Bernoulli => {
                    let hidden: f64 = eta.iter().map(|&e| crate::model::softplus(t * e)).sum();
                    gaussian + t * params.visible_bias.dot(v) + hidden
                }
            }
        }
        PathKind::Leaky => params.log_density_from_response(Level::with_leakiness(value), v, eta),
        PathKind::OneSided => {
            let one = params.log_density_from_response(Level::with_leakiness(1.0), v, eta);
            let target = params.log_density_from_response(Level::with_leakiness(params.leakiness), v, eta);
            value * one + (1.0 - value) * target
        }
    }
}

enum Base {
    Standard { log_z: f64 },
    Gaussian(GaussianBase),
}

impl Base {
    fn new(kind: PathKind, params: &RbmParams) -> Result<Self> {
        match kind {
            PathKind::Energy => {
                let i = params.num_visible() as f64;
                let hidden = match params.kind {
                    HiddenKind::LeakyRelu => 0.0,
                    HiddenKind::Bernoulli => params.num_hidden() as f64 * std::f64::consts::LN_2,
                };
                Ok(Base::Standard {
                    log_z: 0.5 * i * LN_2PI + hidden,
                })
            }
            PathKind::Leaky | PathKind::OneSided => {
                let base = GaussianBase::new(params)?;
                if base.shrink() < 1.0 {
                    return Err(Error::Divergent {
                        min_eigenvalue: is_globally_safe(&params.weights).min_eigenvalue,
                    });
                }
                Ok(Base::Gaussian(base))
            }
        }
    }

    fn log_z(&self) -> f64 {
        match self {
            Base::Standard { log_z } => *log_z,
            Base::Gaussian(g) => g.log_z(),
        }
    }

    fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> DVector<f64> {
        match self {
            Base::Standard { .. } => DVector::from_fn(n, |_, _| rng.sample(StandardNormal)),
            Base::Gaussian(g) => g.sample(rng),
        }
    }
}

/// Annealed importance sampling estimate of `log Z`. Particle `i` uses RNG
/// stream `i` of `seed`; weights are reduced in particle order.
pub fn ais_estimate(params: &RbmParams, path: &AnnealingPath, n_particles: usize, seed: u64) -> Result<LogZEstimate> {
    params.validate()?;
    path.validate(params)?;
    if n_particles == 0 {
        return Err(Error::InvalidParameter("need at least one particle".into()));
    }
    if params.kind == HiddenKind::LeakyRelu {
        let check = is_globally_safe(&params.weights);
        if !check.safe {
            return Err(Error::Divergent {
                min_eigenvalue: check.min_eigenvalue,
            });
        }
    }
    let base = Base::new(path.kind, params)?;
    let levels: Vec<Level> = path.grid.iter().map(|&x| path.level(x, params)).collect();
    let gibbs = Gibbs::new(params, path.kernel);
    let (i, j) = (params.num_visible(), params.num_hidden());
    let k_max = path.levels();

    let runs = map_indexed(n_particles, |p| {
        let mut rng = stream(seed, p as u64);
        let mut state = GibbsState::from_visible(base.sample(i, &mut rng), j);
        let mut eta = params.response_unchecked(&state.v);
        let mut previous = path_density(path.kind, path.grid[0], params, &state.v, &eta);
        let mut log_w = 0.0;
        let mut accepted = 0usize;
        for k in 1..=k_max {
            let value = path.grid[k];
            log_w += path_density(path.kind, value, params, &state.v, &eta) - previous;
            if k < k_max {
                for _ in 0..path.sweeps_per_level {
                    if gibbs.sweep(levels[k], &mut state, &mut rng) {
                        accepted += 1;
                    }
                }
                eta = params.response_unchecked(&state.v);
                previous = path_density(path.kind, value, params, &state.v, &eta);
            }
        }
        (log_w, accepted)
    });

    let sweeps = n_particles * k_max.saturating_sub(1) * path.sweeps_per_level;
    let accepted: usize = runs.iter().map(|r| r.1).sum();
    let log_weights: Vec<f64> = runs.iter().map(|r| r.0).filter(|w| w.is_finite()).collect();
    let dropped = n_particles - log_weights.len();
    if dropped > 0 {
        log::warn!("AIS: dropped {dropped} of {n_particles} particles with non-finite weights");
    }
    if log_weights.is_empty() {
        return Err(Error::NonFinite("every AIS particle weight".into()));
    }
    let log_z0 = base.log_z();
    Ok(LogZEstimate {
        log_z: log_z0 + log_mean_exp(&log_weights),
        standard_error: log_standard_error(&log_weights),
        effective_sample_size: effective_sample_size(&log_weights),
        log_weights,
        log_z0,
        dropped,
        acceptance_rate: if sweeps == 0 { 1.0 } else { accepted as f64 / sweeps as f64 },
    })
}

/// `sd(w) / (mean(w) sqrt(M))` from log-weights, shifted by the maximum.
fn log_standard_error(log_w: &[f64]) -> f64 {
    let m = log_w.len() as f64;
    if log_w.len() < 2 {
        return f64::INFINITY;
    }
    let max = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = log_w.iter().map(|x| (x - max).exp()).collect();
    let (mean, sd) = crate::stats::mean_sd(&w);
    sd / (mean * m.sqrt())
}

/// Closed-form `log Z` of the model with every leakiness set to 1:
/// `(I/2) log 2pi - log det(Omega)/2 + r^T Omega^{-1} r / 2 + |b|^2/2` with
/// `Omega = I - W W^T` and `r = a + W b`.
pub fn gaussian_log_z(params: &RbmParams) -> Result<f64> {
    params.validate()?;
    let n = params.num_visible();
    let mut omega = DMatrix::identity(n, n);
    omega.gemm(-1.0, &params.weights, &params.weights.transpose(), 1.0);
    let min_eigenvalue = min_symmetric_eigenvalue(&omega);
    if min_eigenvalue <= PD_TOLERANCE {
        return Err(Error::NonPositiveDefinite { min_eigenvalue });
    }
    let chol = omega.cholesky().ok_or(Error::NonPositiveDefinite { min_eigenvalue })?;
    let mut r = params.visible_bias.clone();
    r.gemv(1.0, &params.weights, &params.hidden_bias, 1.0);
    let log_det: f64 = chol.l_dirty().diagonal().iter().map(|d| 2.0 * d.ln()).sum();
    Ok(0.5 * n as f64 * LN_2PI - 0.5 * log_det + 0.5 * r.dot(&chol.solve(&r)) + 0.5 * params.hidden_bias.norm_squared())
}

fn check_enumerable(params: &RbmParams) -> Result<()> {
    let j = params.num_hidden();
    if j > MAX_ENUMERATED_HIDDEN {
        return Err(Error::InvalidParameter(format!(
            "enumeration needs at most {MAX_ENUMERATED_HIDDEN} hidden units, model has {j}"
        )));
    }
    Ok(())
}

/// Log-sum-exp of `term(mask)` over all `2^J` masks, in fixed-size chunks so
/// the reduction order does not depend on the worker count.
fn enumerate_lse<F>(j: usize, term: F) -> Result<f64>
where
    F: Fn(u64) -> Result<f64> + Sync + Send,
{
    const CHUNK: u64 = 1 << 12;
    let total = 1u64 << j;
    let chunks = total.div_ceil(CHUNK) as usize;
    let parts = map_indexed(chunks, |k| -> Result<f64> {
        let start = k as u64 * CHUNK;
        let end = (start + CHUNK).min(total);
        let terms = (start..end).map(&term).collect::<Result<Vec<f64>>>()?;
        Ok(log_sum_exp(&terms))
    });
    let parts = parts.into_iter().collect::<Result<Vec<f64>>>()?;
    Ok(log_sum_exp(&parts))
}

/// Exact `log Z` for zero biases and pairwise-orthogonal columns:
/// `log[2^{-J} sum_alpha (2pi)^{I/2} det(I - W diag(alpha) W^T)^{-1/2}]`.
/// Each determinant is taken in its `J x J` form
/// `det(I - A^{1/2} W^T W A^{1/2})`.
pub fn exact_log_z_orthogonal(params: &RbmParams) -> Result<f64> {
    params.validate()?;
    if params.kind != HiddenKind::LeakyRelu {
        return Err(Error::InvalidParameter("the orthogonal oracle needs leaky hidden units".into()));
    }
    check_enumerable(params)?;
    if params.hidden_bias.amax() > 0.0 || params.visible_bias.amax() > 0.0 {
        return Err(Error::InvalidParameter("the orthogonal oracle needs zero biases".into()));
    }
    let gram = params.weights.transpose() * &params.weights;
    let j = params.num_hidden();
    for a in 0..j {
        for b in (a + 1)..j {
            if gram[(a, b)].abs() > ORTHOGONALITY_TOLERANCE {
                return Err(Error::NotOrthogonal {
                    i: a,
                    j: b,
                    inner: gram[(a, b)],
                });
            }
        }
    }
    let check = is_globally_safe(&params.weights);
    if !check.safe {
        return Err(Error::Divergent {
            min_eigenvalue: check.min_eigenvalue,
        });
    }
    let c = params.leakiness;
    let gaussian = 0.5 * params.num_visible() as f64 * LN_2PI;
    let lse = enumerate_lse(j, |mask| {
        let root = DVector::from_fn(j, |k, _| if (mask >> k) & 1 == 1 { 1.0 } else { c.sqrt() });
        let mut m = -gram.component_mul(&(&root * root.transpose()));
        for k in 0..j {
            m[(k, k)] += 1.0;
        }
        let min_eigenvalue = || min_symmetric_eigenvalue(&m);
        let chol = m.clone().cholesky().ok_or_else(|| Error::NonPositiveDefinite {
            min_eigenvalue: min_eigenvalue(),
        })?;
        let log_det: f64 = chol.l_dirty().diagonal().iter().map(|d| 2.0 * d.ln()).sum();
        Ok(gaussian - 0.5 * log_det)
    })?;
    Ok(lse - j as f64 * std::f64::consts::LN_2)
}

/// Exact `log Z` of a Bernoulli-hidden model:
/// `log sum_h (2pi)^{I/2} exp(|W h + a|^2/2 + b^T h)`.
pub fn exact_log_z_bernoulli(params: &RbmParams) -> Result<f64> {
    params.validate()?;
    if params.kind != HiddenKind::Bernoulli {
        return Err(Error::InvalidParameter("the enumeration oracle needs Bernoulli hidden units".into()));
    }
    check_enumerable(params)?;
    let j = params.num_hidden();
    let gaussian = 0.5 * params.num_visible() as f64 * LN_2PI;
    enumerate_lse(j, |mask| {
        let h = DVector::from_fn(j, |k, _| ((mask >> k) & 1) as f64);
        let mut m = params.visible_bias.clone();
        m.gemv(1.0, &params.weights, &h, 1.0);
        Ok(gaussian + 0.5 * m.norm_squared() + params.hidden_bias.dot(&h))
    })
}

fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

const GL_ORDER: usize = 16;
const MAX_REFINEMENTS: u32 = 10;

struct Rule {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl Rule {
    fn new() -> Self {
        let (nodes, weights) = gauss_legendre(GL_ORDER);
        Rule { nodes, weights }
    }

    /// Composite rule on every piece between consecutive breakpoints, each
    /// piece split into `parts` equal panels.
    fn integrate<F: FnMut(f64) -> f64>(&self, breaks: &[f64], parts: usize, mut f: F) -> f64 {
        let mut total = 0.0;
        for piece in breaks.windows(2) {
            let h = (piece[1] - piece[0]) / parts as f64;
            if h <= 0.0 {
                continue;
            }
            for s in 0..parts {
                let mid = piece[0] + (s as f64 + 0.5) * h;
                let mut acc = 0.0;
                for (x, w) in self.nodes.iter().zip(self.weights.iter()) {
                    acc += w * f(mid + 0.5 * h * x);
                }
                total += 0.5 * h * acc;
            }
        }
        total
    }
}

fn sorted_breaks(mut points: Vec<f64>, lo: f64, hi: f64) -> Vec<f64> {
    points.retain(|p| p.is_finite() && *p > lo && *p < hi);
    points.push(lo);
    points.push(hi);
    points.sort_by(|a, b| a.partial_cmp(b).unwrap());
    points.dedup();
    points
}

/// Smallest decay rate of the log marginal at infinity:
/// `min_{|d| = 1} 1 - 2 sum_j F_c(W_j^T d)`, so that
/// `log p(t d) = -t^2 (rate) / 2 + O(t)`. The partition function is finite
/// exactly when this is positive. Computed exactly for one or two visible
/// units: on each arc between the lines `W_j^T d = 0` the quadratic form is
/// fixed, so its minimum sits at an arc end or at an eigenvector.
pub fn tail_margin(params: &RbmParams) -> Result<f64> {
    if params.kind == HiddenKind::Bernoulli {
        return Ok(1.0);
    }
    let w = &params.weights;
    let j = params.num_hidden();
    let c = params.leakiness;
    let rate = |d: &DVector<f64>| {
        let eta = w.tr_mul(d);
        1.0 - 2.0 * eta.iter().map(|&e| leaky_potential(e, c)).sum::<f64>()
    };
    match params.num_visible() {
        1 => Ok(rate(&DVector::from_element(1, 1.0)).min(rate(&DVector::from_element(1, -1.0)))),
        2 => {
            use std::f64::consts::PI;
            let dir = |t: f64| DVector::from_vec(vec![t.cos(), t.sin()]);
            let mut cuts: Vec<f64> = Vec::with_capacity(2 * j + 2);
            for k in 0..j {
                if w[(0, k)] != 0.0 || w[(1, k)] != 0.0 {
                    let t = (-w[(0, k)]).atan2(w[(1, k)]).rem_euclid(PI);
                    cuts.push(t);
                    cuts.push(t + PI);
                }
            }
            cuts.push(0.0);
            cuts.push(2.0 * PI);
            cuts.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let mut best = f64::INFINITY;
            for arc in cuts.windows(2) {
                let (lo, hi) = (arc[0], arc[1]);
                best = best.min(rate(&dir(lo))).min(rate(&dir(hi)));
                if hi - lo < 1e-15 {
                    continue;
                }
                let mid = dir(0.5 * (lo + hi));
                let eta = w.tr_mul(&mid);
                let alpha = eta.map(|e| crate::model::leaky_slope(e, c));
                let m = w * DMatrix::from_diagonal(&alpha) * w.transpose();
                let eig = m.symmetric_eigen();
                for k in 0..2 {
                    let v = eig.eigenvectors.column(k);
                    for sign in [1.0, -1.0] {
                        let t = (sign * v[1]).atan2(sign * v[0]).rem_euclid(2.0 * PI);
                        if t > lo && t < hi {
                            best = best.min(1.0 - eig.eigenvalues[k]);
                        }
                    }
                }
            }
            Ok(best)
        }
        n => Err(Error::InvalidParameter(format!("tail margin is computed for 1 or 2 visible units, got {n}"))),
    }
}

/// Half-width of an integration box holding all but a negligible fraction of
/// the mass, and the largest log marginal at any stationary point.
fn region_extent(params: &RbmParams, margin: f64) -> Result<(f64, f64)> {
    let j = params.num_hidden();
    let mut center: f64 = 0.0;
    let mut half_width: f64 = 0.0;
    let mut peak = f64::NEG_INFINITY;
    match params.kind {
        HiddenKind::LeakyRelu => {
            let c = params.leakiness;
            for mask in 0..(1u64 << j) {
                let alpha = DVector::from_fn(j, |k, _| if (mask >> k) & 1 == 1 { 1.0 } else { c });
                // Patterns without a PD precision only occur on bounded regions.
                let Ok(g) = params.region_precision_mean(&ActivationPattern { alpha }) else {
                    continue;
                };
                if !g.is_pd {
                    continue;
                }
                let sd = 1.0 / g.min_eigenvalue.sqrt();
                center = center.max(g.mean.amax());
                half_width = half_width.max(g.mean.amax() + 10.0 * sd);
                peak = peak.max(params.log_density_at(Level::target(params), &g.mean));
            }
        }
        HiddenKind::Bernoulli => {
            for mask in 0..(1u64 << j) {
                let h = DVector::from_fn(j, |k, _| ((mask >> k) & 1) as f64);
                let mean = params.visible_conditional(&h)?;
                center = center.max(mean.amax());
                half_width = half_width.max(mean.amax() + 10.0);
                peak = peak.max(params.log_density_at(Level::target(params), &mean));
            }
        }
    }
    half_width = half_width.max(center + 10.0 / margin.sqrt());
    Ok((half_width, peak))
}

/// Brute-force `log Z` for one or two visible units: composite
/// Gauss-Legendre over `[-L, L]^I` with breakpoints on every hyperplane
/// `eta_j = 0` (and, in two dimensions, every intersection), doubling the
/// panel count until successive estimates agree to `tolerance` relatively.
/// `L` defaults to the largest region mean plus ten of that region's
/// loosest standard deviations.
pub fn quadrature_log_z(params: &RbmParams, bounds: Option<f64>, tolerance: f64) -> Result<f64> {
    params.validate()?;
    let n = params.num_visible();
    if n == 0 || n > 2 {
        return Err(Error::InvalidParameter(format!("quadrature supports 1 or 2 visible units, model has {n}")));
    }
    if params.num_hidden() > 16 {
        return Err(Error::InvalidParameter("quadrature supports at most 16 hidden units".into()));
    }
    let margin = tail_margin(params)?;
    if margin <= PD_TOLERANCE {
        return Err(Error::Divergent { min_eigenvalue: margin });
    }
    let (extent, peak) = region_extent(params, margin)?;
    let l = bounds.unwrap_or(extent);
    if !(l > 0.0 && l.is_finite()) {
        return Err(Error::InvalidParameter(format!("invalid integration bound {l}")));
    }
    let rule = Rule::new();
    let w = &params.weights;
    let b = &params.hidden_bias;
    let j = params.num_hidden();
    let level = Level::target(params);
    let f = |v: &DVector<f64>| (params.log_density_at(level, v) - peak).exp();

    let estimate = |parts: usize| -> f64 {
        if n == 1 {
            let breaks = sorted_breaks(
                (0..j).filter(|&k| w[(0, k)] != 0.0).map(|k| -b[k] / w[(0, k)]).collect(),
                -l,
                l,
            );
            let mut v = DVector::zeros(1);
            rule.integrate(&breaks, parts, |x| {
                v[0] = x;
                f(&v)
            })
        } else {
            let mut outer_points = Vec::new();
            for k in 0..j {
                let (w0, w1) = (w[(0, k)], w[(1, k)]);
                if w0 == 0.0 {
                    continue;
                }
                if w1 == 0.0 {
                    outer_points.push(-b[k] / w0);
                } else {
                    outer_points.push((-b[k] - w1 * l) / w0);
                    outer_points.push((-b[k] + w1 * l) / w0);
                }
                for m in (k + 1)..j {
                    let det = w0 * w[(1, m)] - w1 * w[(0, m)];
                    if det != 0.0 {
                        outer_points.push((-b[k] * w[(1, m)] + b[m] * w1) / det);
                    }
                }
            }
            let outer = sorted_breaks(outer_points, -l, l);
            let mut v = DVector::zeros(2);
            rule.integrate(&outer, parts, |x| {
                let inner = sorted_breaks(
                    (0..j)
                        .filter(|&k| w[(1, k)] != 0.0)
                        .map(|k| -(b[k] + w[(0, k)] * x) / w[(1, k)])
                        .collect(),
                    -l,
                    l,
                );
                rule.integrate(&inner, parts, |y| {
                    v[0] = x;
                    v[1] = y;
                    f(&v)
                })
            })
        }
    };

    let mut previous = estimate(1);
    for r in 1..=MAX_REFINEMENTS {
        let current = estimate(1 << r);
        if (current - previous).abs() <= tolerance * current.abs() {
            return Ok(peak + current.ln());
        }
        previous = current;
    }
    log::warn!("quadrature did not reach relative tolerance {tolerance}");
    Ok(peak + previous.ln())
}

/// Mean over rows of `log p(v) = log_marginal(v) - log_z`.
pub fn eval_mean_log_likelihood(params: &RbmParams, data: &[DVector<f64>], log_z: f64) -> Result<f64> {
    if !log_z.is_finite() {
        return Err(Error::NonFinite("log partition function".into()));
    }
    if data.is_empty() {
        return Err(Error::EmptyData);
    }
    let mut total = 0.0;
    for v in data {
        total += params.log_marginal(v)?;
    }
    Ok(total / data.len() as f64 - log_z)
}
